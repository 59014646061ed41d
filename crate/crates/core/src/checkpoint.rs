//! Binary checkpoint format (`.mnbw`).
//!
//! All integers are little-endian.
//!
//! ```text
//! header      "MNBW" | u16 version (=1) | u32 entry count
//! entry       u16 name length | UTF-8 name | u8 dtype (0 = f64) | u8 rank
//!             | rank x u32 dims | row-major f64 payload
//! ```
//!
//! A parameter file is the header followed by its entries. A model file
//! writes the extractor parameters that way and then appends two blocks:
//!
//! ```text
//! classifier  u32 class count | count x u32 class ids
//!             | u32 entry count (=2) | classifier.weight | classifier.bias
//! bn-stats    u32 entry count | model.layers | bn.momentum
//!             | l<i>.running_mean, l<i>.running_var for each BN layer
//! ```
//!
//! `model.layers` is an `[L, 3]` table of `(kind, a, b)` rows: dense is
//! `(0, in, out)`, batch-norm `(1, dim, 0)`, ReLU `(2, 0, 0)`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{BnRunning, Classifier, Layer, Model, CLASSIFIER_BIAS, CLASSIFIER_WEIGHT};
use crate::tensor::{ParameterSet, Tensor};

pub const MAGIC: [u8; 4] = *b"MNBW";
pub const VERSION: u16 = 1;
const DTYPE_F64: u8 = 0;
const LAYERS_ENTRY: &str = "model.layers";
const MOMENTUM_ENTRY: &str = "bn.momentum";

/// Contents of a checkpoint file.
#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Params(ParameterSet),
    Model(Box<Model>),
}

impl Checkpoint {
    /// Every stored tensor in file order, as `(name, tensor)`.
    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        match self {
            Checkpoint::Params(p) => p.iter().map(|(n, t)| (n.to_owned(), t.clone())).collect(),
            Checkpoint::Model(m) => {
                let mut out: Vec<(String, Tensor)> = m.params.iter().map(|(n, t)| (n.to_owned(), t.clone())).collect();
                out.push((CLASSIFIER_WEIGHT.to_owned(), m.classifier.weight_tensor()));
                out.push((CLASSIFIER_BIAS.to_owned(), m.classifier.bias_tensor()));
                for stats in &m.bn {
                    out.push((running_mean_name(stats.layer), Tensor::vector(stats.mean.clone())));
                    out.push((running_var_name(stats.layer), Tensor::vector(stats.var.clone())));
                }
                out
            }
        }
    }

    /// One line per tensor: name, shape and L2 norm.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        if let Checkpoint::Model(m) = self {
            out.push_str(&format!("model: {} layers, classes {:?}\n", m.layers.len(), m.classifier.class_ids));
        }
        for (name, t) in self.tensors() {
            out.push_str(&format!("{name}\t{:?}\t{}\n", t.shape(), t.l2_norm_sq().sqrt()));
        }
        out
    }
}

fn running_mean_name(layer: usize) -> String {
    format!("l{layer}.running_mean")
}

fn running_var_name(layer: usize) -> String {
    format!("l{layer}.running_var")
}

fn write_entry(buf: &mut Vec<u8>, name: &str, t: &Tensor) -> Result<()> {
    let name_len = u16::try_from(name.len())
        .map_err(|_| Error::invalid(format!("entry name `{name}` is too long")))?;
    let rank = u8::try_from(t.shape().len())
        .map_err(|_| Error::invalid(format!("`{name}` has too many dimensions")))?;
    buf.extend_from_slice(&name_len.to_le_bytes());
    buf.extend_from_slice(name.as_bytes());
    buf.push(DTYPE_F64);
    buf.push(rank);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::invalid(format!("`{name}` dimension too large")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn write_entries(buf: &mut Vec<u8>, entries: &ParameterSet) -> Result<()> {
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries.iter() {
        write_entry(buf, name, t)?;
    }
    Ok(())
}

fn header(buf: &mut Vec<u8>) {
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
}

pub fn encode_params(params: &ParameterSet) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    header(&mut buf);
    write_entries(&mut buf, params)?;
    Ok(buf)
}

pub fn encode_model(model: &Model) -> Result<Vec<u8>> {
    let mut buf = encode_params(&model.params)?;

    let ids = &model.classifier.class_ids;
    buf.extend_from_slice(&(ids.len() as u32).to_le_bytes());
    for id in ids {
        buf.extend_from_slice(&id.to_le_bytes());
    }
    let mut cls = ParameterSet::new();
    cls.push(CLASSIFIER_WEIGHT, model.classifier.weight_tensor())?;
    cls.push(CLASSIFIER_BIAS, model.classifier.bias_tensor())?;
    write_entries(&mut buf, &cls)?;

    let mut table = Vec::with_capacity(model.layers.len() * 3);
    for layer in &model.layers {
        let row = match *layer {
            Layer::Dense { input, output } => [0.0, input as f64, output as f64],
            Layer::BatchNorm { dim } => [1.0, dim as f64, 0.0],
            Layer::Relu => [2.0, 0.0, 0.0],
        };
        table.extend_from_slice(&row);
    }
    let mut bn = ParameterSet::new();
    bn.push(LAYERS_ENTRY, Tensor::new(vec![model.layers.len(), 3], table)?)?;
    bn.push(MOMENTUM_ENTRY, Tensor::vector(vec![model.bn_momentum]))?;
    for stats in &model.bn {
        bn.push(running_mean_name(stats.layer), Tensor::vector(stats.mean.clone()))?;
        bn.push(running_var_name(stats.layer), Tensor::vector(stats.var.clone()))?;
    }
    write_entries(&mut buf, &bn)?;
    Ok(buf)
}

pub fn write_params(path: impl AsRef<Path>, params: &ParameterSet) -> Result<()> {
    fs::write(path, encode_params(params)?)?;
    Ok(())
}

pub fn write_model(path: impl AsRef<Path>, model: &Model) -> Result<()> {
    fs::write(path, encode_model(model)?)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn entry(&mut self) -> Result<(String, Tensor)> {
        let start = self.pos as u64;
        let len = self.u16("name length")? as usize;
        let name = std::str::from_utf8(self.take(len, "entry name")?)
            .map_err(|_| Error::format(start + 2, "entry name is not UTF-8"))?
            .to_owned();
        let dtype_at = self.pos as u64;
        let dtype = self.u8("dtype")?;
        if dtype != DTYPE_F64 {
            return Err(Error::format(dtype_at, format!("unsupported dtype {dtype} in `{name}`")));
        }
        let rank = self.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::format(self.pos as u64, format!("`{name}` is too large")))?;
        let payload_at = self.pos as u64;
        let raw = self.take(numel, &format!("payload of `{name}`"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(payload_at, e.to_string()))?;
        Ok((name, t))
    }

    fn entries(&mut self) -> Result<ParameterSet> {
        let n = self.u32("entry count")?;
        let mut set = ParameterSet::new();
        for _ in 0..n {
            let at = self.pos as u64;
            let (name, t) = self.entry()?;
            set.push(name, t).map_err(|e| Error::format(at, e.to_string()))?;
        }
        Ok(set)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:02x?}")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let params = r.entries()?;
    if r.at_end() {
        return Ok(Checkpoint::Params(params));
    }

    let cls_at = r.pos as u64;
    let n_ids = r.u32("class count")? as usize;
    let mut class_ids = Vec::with_capacity(n_ids.min(1 << 20));
    for _ in 0..n_ids {
        class_ids.push(r.u32("class id")?);
    }
    let cls = r.entries()?;
    let weight = cls
        .get(CLASSIFIER_WEIGHT)
        .ok_or_else(|| Error::format(cls_at, "classifier block lacks weights"))?;
    let bias = cls
        .get(CLASSIFIER_BIAS)
        .ok_or_else(|| Error::format(cls_at, "classifier block lacks bias"))?;
    if weight.shape().len() != 2 || weight.shape()[0] != n_ids || bias.len() != n_ids {
        return Err(Error::format(cls_at, "classifier shape does not match class ids"));
    }
    let classifier = Classifier {
        class_ids,
        feature_dim: weight.shape()[1],
        weight: weight.data().to_vec(),
        bias: bias.data().to_vec(),
    };

    let bn_at = r.pos as u64;
    let bn_block = r.entries()?;
    if !r.at_end() {
        return Err(Error::format(r.pos as u64, "trailing bytes after model blocks"));
    }
    let table = bn_block
        .get(LAYERS_ENTRY)
        .ok_or_else(|| Error::format(bn_at, "missing layer table"))?;
    let momentum = bn_block
        .get(MOMENTUM_ENTRY)
        .ok_or_else(|| Error::format(bn_at, "missing BN momentum"))?
        .data()
        .first()
        .copied()
        .ok_or_else(|| Error::format(bn_at, "empty BN momentum"))?;
    if table.shape().len() != 2 || table.cols() != 3 {
        return Err(Error::format(bn_at, "layer table must be [L, 3]"));
    }
    let mut layers = Vec::with_capacity(table.rows());
    let mut bn = Vec::new();
    for i in 0..table.rows() {
        let row = table.row(i);
        let layer = match row[0] as u32 {
            0 => Layer::Dense {
                input: row[1] as usize,
                output: row[2] as usize,
            },
            1 => {
                let dim = row[1] as usize;
                let mean = bn_block
                    .get(&running_mean_name(i))
                    .ok_or_else(|| Error::format(bn_at, format!("missing running mean for layer {i}")))?;
                let var = bn_block
                    .get(&running_var_name(i))
                    .ok_or_else(|| Error::format(bn_at, format!("missing running var for layer {i}")))?;
                if mean.len() != dim || var.len() != dim {
                    return Err(Error::format(bn_at, format!("running stats of layer {i} have wrong size")));
                }
                bn.push(BnRunning {
                    layer: i,
                    mean: mean.data().to_vec(),
                    var: var.data().to_vec(),
                });
                Layer::BatchNorm { dim }
            }
            2 => Layer::Relu,
            k => return Err(Error::format(bn_at, format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }
    Ok(Checkpoint::Model(Box::new(Model {
        layers,
        params,
        classifier,
        bn,
        bn_momentum: momentum,
    })))
}

pub fn read(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode(&fs::read(path)?)
}

pub fn read_model(path: impl AsRef<Path>) -> Result<Model> {
    match read(path)? {
        Checkpoint::Model(m) => Ok(*m),
        Checkpoint::Params(_) => Err(Error::invalid("file holds a parameter set, not a model")),
    }
}

pub fn read_params(path: impl AsRef<Path>) -> Result<ParameterSet> {
    match read(path)? {
        Checkpoint::Params(p) => Ok(p),
        Checkpoint::Model(m) => Ok(m.params),
    }
}
