//! Experiment configuration, full runs and parameter sweeps.
//!
//! Configs are flat `key = value` text files (`#` starts a comment). Unknown
//! keys are errors. Method presets fill in the three component switches;
//! explicit `enable_*` keys override them. [`ExperimentConfig::to_kv`]
//! writes the fully resolved config, which reproduces the run on its own.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::checkpoint;
use crate::data::{gen_blobs, load_csv, load_idx, validate_pair, Dataset, Split};
use crate::error::{Error, Result};
use crate::harness::{build_task_sequence, run_incremental, BnStrategy, ExemplarMethod, RunOutcome, RunSetup, StageConfig};
use crate::metrics::{
    average_incremental_accuracy, average_new_accuracy, class_accuracy_csv, forgetting, linear_cka, matrix_csv,
    metrics_csv, task_update_cosine_matrix,
};
use crate::rng::Seed;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CLASS_ACC_FILE: &str = "class_acc.csv";
pub const COSINE_FILE: &str = "task_cosine.csv";
pub const CONFIG_ECHO_FILE: &str = "resolved_config.txt";
pub const SWEEP_SUMMARY_FILE: &str = "sweep_summary.csv";

/// Sweepable config keys.
pub const SWEEP_AXES: [&str; 6] = ["ema_alpha", "e_a", "e_b", "B", "bn_strategy", "method"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Finetune,
    Mnb,
    MnbNoInter,
    MnbNoIntra,
    MnbNoBound,
    MnbEma,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Finetune,
        Method::Mnb,
        Method::MnbNoInter,
        Method::MnbNoIntra,
        Method::MnbNoBound,
        Method::MnbEma,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Finetune => "FINETUNE",
            Method::Mnb => "MNB",
            Method::MnbNoInter => "MNB_NO_INTER",
            Method::MnbNoIntra => "MNB_NO_INTRA",
            Method::MnbNoBound => "MNB_NO_BOUND",
            Method::MnbEma => "MNB_EMA",
        }
    }

    /// `(inter, intra, bound)` switches of the preset.
    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            Method::Finetune => (false, false, false),
            Method::Mnb | Method::MnbEma => (true, true, true),
            Method::MnbNoInter => (false, true, true),
            Method::MnbNoIntra => (true, false, true),
            Method::MnbNoBound => (true, true, false),
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.name().eq_ignore_ascii_case(s))
    }
}

fn bn_name(s: BnStrategy) -> &'static str {
    match s {
        BnStrategy::Ours => "OURS",
        BnStrategy::Reset => "RESET",
        BnStrategy::NoChange => "NOCHANGE",
    }
}

fn parse_bn(s: &str) -> Option<BnStrategy> {
    match s.to_ascii_uppercase().as_str() {
        "OURS" => Some(BnStrategy::Ours),
        "RESET" | "R" => Some(BnStrategy::Reset),
        "NOCHANGE" | "NC" => Some(BnStrategy::NoChange),
        _ => None,
    }
}

fn exemplar_name(m: ExemplarMethod) -> &'static str {
    match m {
        ExemplarMethod::Herding => "HERDING",
        ExemplarMethod::Random => "RANDOM",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Blobs {
        num_classes: usize,
        dim: usize,
        n_train: usize,
        n_test: usize,
        separation: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub method: Method,
    pub seed: u64,
    pub dataset: DatasetSpec,
    pub stages: usize,
    pub initial_fraction: f64,
    pub hidden: Vec<usize>,
    pub stage: StageConfig,
    pub out_dir: PathBuf,
    /// Write per-stage and base-model checkpoints.
    pub checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig::preset(Method::Mnb)
    }
}

/// Keys accepted in a config file, in echo order.
const KEYS: [&str; 31] = [
    "method",
    "seed",
    "dataset",
    "num_classes",
    "dim",
    "n_train",
    "n_test",
    "separation",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_csv",
    "test_csv",
    "stages",
    "initial_fraction",
    "hidden",
    "epochs",
    "batch_size",
    "lr",
    "momentum",
    "memory",
    "exemplar_method",
    "e_a",
    "e_b",
    "B",
    "bn_strategy",
    "ema_alpha",
    "enable_inter",
    "enable_intra",
    "enable_bound",
];
const EXTRA_KEYS: [&str; 2] = ["out_dir", "checkpoints"];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| Error::config(key, format!("cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::config(key, format!("expected a boolean, got `{v}`"))),
    }
}

/// Splits `key = value` lines. Blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", i + 1), format!("expected `key = value`, got `{line}`")))?;
        out.push((k.trim().to_owned(), v.trim().to_owned()));
    }
    Ok(out)
}

impl ExperimentConfig {
    /// Defaults for a method preset on the desk-scale blob benchmark.
    pub fn preset(method: Method) -> Self {
        let (enable_inter, enable_intra, enable_bound) = method.flags();
        ExperimentConfig {
            method,
            seed: 0,
            dataset: DatasetSpec::Blobs {
                num_classes: 10,
                dim: 16,
                n_train: 100,
                n_test: 50,
                separation: 6.0,
            },
            stages: 5,
            initial_fraction: 0.5,
            hidden: vec![32, 32],
            stage: StageConfig {
                enable_inter,
                enable_intra,
                enable_bound,
                ema_alpha: (method == Method::MnbEma).then_some(0.9),
                ..StageConfig::default()
            },
            out_dir: PathBuf::from("runs/default"),
            checkpoints: true,
        }
    }

    /// Builds a config from `(key, value)` pairs; later pairs win. The
    /// `method` key picks the preset regardless of where it appears.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let method = match pairs.iter().rev().find(|(k, _)| k == "method") {
            Some((_, v)) => Method::parse(v).ok_or_else(|| Error::config("method", format!("unknown method `{v}`")))?,
            None => Method::Mnb,
        };
        let mut cfg = ExperimentConfig::preset(method);
        // dataset kind first so that per-kind keys land in the right variant
        if let Some((_, v)) = pairs.iter().rev().find(|(k, _)| k == "dataset") {
            cfg.set("dataset", v)?;
        }
        for (k, v) in pairs {
            if k == "method" || k == "dataset" {
                continue;
            }
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut pairs = parse_kv(&text)?;
        pairs.extend_from_slice(overrides);
        ExperimentConfig::from_pairs(&pairs)
    }

    /// Sets one key. `method` re-applies the preset switches.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.stage;
        match key {
            "method" => {
                let m = Method::parse(v).ok_or_else(|| Error::config("method", format!("unknown method `{v}`")))?;
                self.method = m;
                let (a, b, c) = m.flags();
                s.enable_inter = a;
                s.enable_intra = b;
                s.enable_bound = c;
                s.ema_alpha = match m {
                    Method::MnbEma => Some(s.ema_alpha.unwrap_or(0.9)),
                    _ => None,
                };
            }
            "seed" => self.seed = parse_num(key, v)?,
            "dataset" => {
                self.dataset = match v.to_ascii_lowercase().as_str() {
                    "blobs" => match &self.dataset {
                        d @ DatasetSpec::Blobs { .. } => d.clone(),
                        _ => ExperimentConfig::preset(self.method).dataset,
                    },
                    "idx" => DatasetSpec::Idx {
                        train_images: PathBuf::new(),
                        train_labels: PathBuf::new(),
                        test_images: PathBuf::new(),
                        test_labels: PathBuf::new(),
                    },
                    "csv" => DatasetSpec::Csv {
                        train: PathBuf::new(),
                        test: PathBuf::new(),
                    },
                    _ => return Err(Error::config(key, format!("expected blobs, idx or csv, got `{v}`"))),
                }
            }
            "num_classes" | "dim" | "n_train" | "n_test" | "separation" => {
                let DatasetSpec::Blobs {
                    num_classes,
                    dim,
                    n_train,
                    n_test,
                    separation,
                } = &mut self.dataset
                else {
                    return Err(Error::config(key, "only valid with dataset = blobs"));
                };
                match key {
                    "num_classes" => *num_classes = parse_num(key, v)?,
                    "dim" => *dim = parse_num(key, v)?,
                    "n_train" => *n_train = parse_num(key, v)?,
                    "n_test" => *n_test = parse_num(key, v)?,
                    _ => *separation = parse_num(key, v)?,
                }
            }
            "train_images" | "train_labels" | "test_images" | "test_labels" => {
                let DatasetSpec::Idx {
                    train_images,
                    train_labels,
                    test_images,
                    test_labels,
                } = &mut self.dataset
                else {
                    return Err(Error::config(key, "only valid with dataset = idx"));
                };
                let slot = match key {
                    "train_images" => train_images,
                    "train_labels" => train_labels,
                    "test_images" => test_images,
                    _ => test_labels,
                };
                *slot = PathBuf::from(v);
            }
            "train_csv" | "test_csv" => {
                let DatasetSpec::Csv { train, test } = &mut self.dataset else {
                    return Err(Error::config(key, "only valid with dataset = csv"));
                };
                *(if key == "train_csv" { train } else { test }) = PathBuf::from(v);
            }
            "stages" => self.stages = parse_num(key, v)?,
            "initial_fraction" => self.initial_fraction = parse_num(key, v)?,
            "hidden" => {
                self.hidden = v
                    .split(',')
                    .map(|w| parse_num::<usize>(key, w.trim()))
                    .collect::<Result<_>>()?;
            }
            "epochs" => s.epochs = parse_num(key, v)?,
            "batch_size" => s.batch_size = parse_num(key, v)?,
            "lr" => s.lr = parse_num(key, v)?,
            "momentum" => s.momentum = parse_num(key, v)?,
            "memory" => s.memory_per_class = parse_num(key, v)?,
            "exemplar_method" => {
                s.exemplar_method = match v.to_ascii_uppercase().as_str() {
                    "HERDING" => ExemplarMethod::Herding,
                    "RANDOM" => ExemplarMethod::Random,
                    _ => return Err(Error::config(key, format!("expected HERDING or RANDOM, got `{v}`"))),
                }
            }
            "e_a" => s.e_a = parse_num(key, v)?,
            "e_b" => s.e_b = parse_num(key, v)?,
            "B" => s.bound = parse_num(key, v)?,
            "bn_strategy" => {
                s.bn_strategy =
                    parse_bn(v).ok_or_else(|| Error::config(key, format!("expected OURS, RESET or NOCHANGE, got `{v}`")))?
            }
            "ema_alpha" => {
                s.ema_alpha = if v.eq_ignore_ascii_case("none") {
                    None
                } else {
                    Some(parse_num(key, v)?)
                }
            }
            "enable_inter" => s.enable_inter = parse_bool(key, v)?,
            "enable_intra" => s.enable_intra = parse_bool(key, v)?,
            "enable_bound" => s.enable_bound = parse_bool(key, v)?,
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoints" => self.checkpoints = parse_bool(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.stage.validate()?;
        if self.stages == 0 {
            return Err(Error::config("stages", "must be >= 1"));
        }
        if self.stages > 1 && !(self.initial_fraction > 0.0 && self.initial_fraction < 1.0) {
            return Err(Error::config("initial_fraction", "must lie in (0, 1)"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden", "needs at least one positive width"));
        }
        if self.method == Method::MnbEma && self.stage.ema_alpha.is_none() {
            return Err(Error::config("ema_alpha", "MNB_EMA needs a smoothing factor"));
        }
        match &self.dataset {
            DatasetSpec::Blobs {
                num_classes,
                dim,
                n_train,
                n_test,
                separation,
            } => {
                if *num_classes < self.stages {
                    return Err(Error::config("num_classes", "must be >= stages"));
                }
                if *dim < 2 {
                    return Err(Error::config("dim", "must be >= 2"));
                }
                if *n_train == 0 || *n_test == 0 {
                    return Err(Error::config("n_train", "per-class counts must be positive"));
                }
                if !(*separation > 0.0) {
                    return Err(Error::config("separation", "must be > 0"));
                }
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for (k, p) in [
                    ("train_images", train_images),
                    ("train_labels", train_labels),
                    ("test_images", test_images),
                    ("test_labels", test_labels),
                ] {
                    if p.as_os_str().is_empty() {
                        return Err(Error::config(k, "path required for dataset = idx"));
                    }
                }
            }
            DatasetSpec::Csv { train, test } => {
                if train.as_os_str().is_empty() {
                    return Err(Error::config("train_csv", "path required for dataset = csv"));
                }
                if test.as_os_str().is_empty() {
                    return Err(Error::config("test_csv", "path required for dataset = csv"));
                }
            }
        }
        Ok(())
    }

    /// Value of `key` as it would appear in a config file.
    pub fn get(&self, key: &str) -> Option<String> {
        let s = &self.stage;
        let v = match key {
            "method" => self.method.name().to_owned(),
            "seed" => self.seed.to_string(),
            "dataset" => match self.dataset {
                DatasetSpec::Blobs { .. } => "blobs",
                DatasetSpec::Idx { .. } => "idx",
                DatasetSpec::Csv { .. } => "csv",
            }
            .to_owned(),
            "num_classes" | "dim" | "n_train" | "n_test" | "separation" => match &self.dataset {
                DatasetSpec::Blobs {
                    num_classes,
                    dim,
                    n_train,
                    n_test,
                    separation,
                } => match key {
                    "num_classes" => num_classes.to_string(),
                    "dim" => dim.to_string(),
                    "n_train" => n_train.to_string(),
                    "n_test" => n_test.to_string(),
                    _ => separation.to_string(),
                },
                _ => return None,
            },
            "train_images" | "train_labels" | "test_images" | "test_labels" => match &self.dataset {
                DatasetSpec::Idx {
                    train_images,
                    train_labels,
                    test_images,
                    test_labels,
                } => match key {
                    "train_images" => train_images,
                    "train_labels" => train_labels,
                    "test_images" => test_images,
                    _ => test_labels,
                }
                .display()
                .to_string(),
                _ => return None,
            },
            "train_csv" | "test_csv" => match &self.dataset {
                DatasetSpec::Csv { train, test } => if key == "train_csv" { train } else { test }.display().to_string(),
                _ => return None,
            },
            "stages" => self.stages.to_string(),
            "initial_fraction" => self.initial_fraction.to_string(),
            "hidden" => self.hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","),
            "epochs" => s.epochs.to_string(),
            "batch_size" => s.batch_size.to_string(),
            "lr" => s.lr.to_string(),
            "momentum" => s.momentum.to_string(),
            "memory" => s.memory_per_class.to_string(),
            "exemplar_method" => exemplar_name(s.exemplar_method).to_owned(),
            "e_a" => s.e_a.to_string(),
            "e_b" => s.e_b.to_string(),
            "B" => s.bound.to_string(),
            "bn_strategy" => bn_name(s.bn_strategy).to_owned(),
            "ema_alpha" => s.ema_alpha.map_or_else(|| "none".to_owned(), |a| a.to_string()),
            "enable_inter" => s.enable_inter.to_string(),
            "enable_intra" => s.enable_intra.to_string(),
            "enable_bound" => s.enable_bound.to_string(),
            "out_dir" => self.out_dir.display().to_string(),
            "checkpoints" => self.checkpoints.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Fully resolved config as `key = value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for key in KEYS.iter().chain(&EXTRA_KEYS) {
            if let Some(v) = self.get(key) {
                writeln!(out, "{key} = {v}").expect("string write");
            }
        }
        out
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match &self.dataset {
            DatasetSpec::Blobs {
                num_classes,
                dim,
                n_train,
                n_test,
                separation,
            } => gen_blobs(*num_classes, *dim, *n_train, *n_test, *separation, Seed(self.seed))?,
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let mut tr = load_idx(train_images, train_labels, Split::Train)?;
                let mut te = load_idx(test_images, test_labels, Split::Test)?;
                let n = tr.num_classes.max(te.num_classes);
                tr.num_classes = n;
                te.num_classes = n;
                (tr, te)
            }
            DatasetSpec::Csv { train, test } => {
                let mut tr = load_csv(train, Split::Train)?;
                let mut te = load_csv(test, Split::Test)?;
                let n = tr.num_classes.max(te.num_classes);
                tr.num_classes = n;
                te.num_classes = n;
                (tr, te)
            }
        };
        validate_pair(&train, &test)?;
        Ok((train, test))
    }

    /// CKA baselines: stage 1 and `ceil(K/2)`.
    pub fn cka_baselines(&self) -> Vec<usize> {
        let mut b = vec![1, self.stages.div_ceil(2)];
        b.dedup();
        b
    }
}

/// The three headline numbers of a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub avg_inc_acc: f64,
    pub forgetting: f64,
    pub avg_new_acc: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub outcome: RunOutcome,
    pub summary: Summary,
    pub task_cosine: Vec<Vec<f64>>,
    /// `(baseline stage, stage labels, CKA matrix)`.
    pub cka: Vec<(usize, Vec<usize>, Vec<Vec<f64>>)>,
}

/// Trains and evaluates a full run in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (train, test) = cfg.load_data()?;
    let task = build_task_sequence(train.num_classes, cfg.stages, Seed(cfg.seed), cfg.initial_fraction)?;
    let setup = RunSetup {
        hidden: cfg.hidden.clone(),
        seed: Seed(cfg.seed),
    };
    let outcome = run_incremental(&train, &test, &task, &cfg.stage, &setup)?;
    let summary = Summary {
        avg_inc_acc: average_incremental_accuracy(&outcome.log)?,
        forgetting: forgetting(&outcome.log),
        avg_new_acc: average_new_accuracy(&outcome.log),
    };
    let task_cosine = task_update_cosine_matrix(&outcome.log.update_vectors)?;
    let mut cka = Vec::new();
    for b in cfg.cka_baselines() {
        let idx = test.indices_in(&task.seen_up_to(b));
        let x = test.features.select_rows(&idx);
        let feats = outcome.stage_models[b - 1..]
            .iter()
            .map(|m| m.features(&x))
            .collect::<Result<Vec<_>>>()?;
        let labels: Vec<usize> = (b..=cfg.stages).collect();
        let mut m = vec![vec![0.0; feats.len()]; feats.len()];
        for i in 0..feats.len() {
            for j in i..feats.len() {
                let v = if i == j { 1.0 } else { linear_cka(&feats[i], &feats[j])? };
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        cka.push((b, labels, m));
    }
    Ok(ExperimentResult {
        outcome,
        summary,
        task_cosine,
        cka,
    })
}

/// Writes every artifact of `result` into `cfg.out_dir`.
pub fn write_artifacts(cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<()> {
    let dir = &cfg.out_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_ECHO_FILE), cfg.to_kv())?;
    fs::write(dir.join(METRICS_FILE), metrics_csv(&result.outcome.log)?)?;
    fs::write(dir.join(CLASS_ACC_FILE), class_accuracy_csv(&result.outcome.log))?;
    let stages: Vec<usize> = (1..=cfg.stages).collect();
    fs::write(dir.join(COSINE_FILE), matrix_csv(&stages, &result.task_cosine))?;
    for (b, labels, m) in &result.cka {
        fs::write(dir.join(format!("cka_{b}.csv")), matrix_csv(labels, m))?;
    }
    if cfg.checkpoints {
        for (i, model) in result.outcome.stage_models.iter().enumerate() {
            let k = i + 1;
            checkpoint::write_model(dir.join(format!("stage_{k}.mnbw")), model)?;
            if let Some(base) = &result.outcome.next_bases[i] {
                let mut m = model.clone();
                m.params = base.theta_base.clone();
                m.classifier = base.phi_base.clone();
                checkpoint::write_model(dir.join(format!("base_{}.mnbw", k + 1)), &m)?;
            }
        }
    }
    Ok(())
}

/// Runs the experiment and writes its artifacts.
pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let result = execute(cfg)?;
    write_artifacts(cfg, &result)?;
    Ok(result)
}

/// Directory name of one sweep cell.
pub fn sweep_dir_name(axis: &str, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{axis}_{clean}")
}

/// One independent run per value of `axis`, each in its own subdirectory of
/// `base.out_dir`, plus a summary table. Runs execute in parallel.
pub fn sweep(base: &ExperimentConfig, axis: &str, values: &[String]) -> Result<Vec<(String, Summary)>> {
    if !SWEEP_AXES.contains(&axis) {
        return Err(Error::config("axis", format!("unknown sweep axis `{axis}` (expected one of {SWEEP_AXES:?})")));
    }
    if values.is_empty() {
        return Err(Error::config("values", "sweep needs at least one value"));
    }
    let configs = values
        .iter()
        .map(|v| {
            let mut cfg = base.clone();
            cfg.set(axis, v)?;
            cfg.out_dir = base.out_dir.join(sweep_dir_name(axis, v));
            cfg.validate()?;
            Ok((v.clone(), cfg))
        })
        .collect::<Result<Vec<_>>>()?;
    let rows = configs
        .par_iter()
        .map(|(v, cfg)| run(cfg).map(|r| (v.clone(), r.summary)))
        .collect::<Result<Vec<_>>>()?;
    fs::create_dir_all(&base.out_dir)?;
    fs::write(base.out_dir.join(SWEEP_SUMMARY_FILE), sweep_summary_csv(axis, &rows))?;
    Ok(rows)
}

pub fn sweep_summary_csv(axis: &str, rows: &[(String, Summary)]) -> String {
    let mut out = format!("{axis},forgetting,avg_new_acc,avg_inc_acc\n");
    for (v, s) in rows {
        writeln!(out, "{v},{},{},{}", s.forgetting, s.avg_new_acc, s.avg_inc_acc).expect("string write");
    }
    out
}
