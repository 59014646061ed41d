//! Weight-space algebra for merge-and-bound training.
//!
//! * inter-task merging: running uniform mean of finalized extractors
//!   ([`uniform_merge_step`]) or its exponential variant ([`ema_merge_step`]);
//!   classifiers are stitched with [`concat_classifier`];
//! * intra-task merging: running uniform mean of checkpoints along one
//!   stage's trajectory ([`IntraMergeAccumulator`]);
//! * bounded update: projection onto the L2 ball of radius `B` around the
//!   base model over the shared parameters ([`bound_update`]).
//!
//! Every function here is pure; inputs are never modified.

use crate::error::{Error, Result};
use crate::nn::{Classifier, Model};
use crate::tensor::{ParameterSet, Tensor};

/// Names under which the old-class classifier rows appear in a shared view.
pub const SHARED_CLS_WEIGHT: &str = "classifier.weight[old]";
pub const SHARED_CLS_BIAS: &str = "classifier.bias[old]";

/// The anchor for stage `stage`: merged extractor plus concatenated
/// classifier over every class introduced before `stage`.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseModelState {
    pub theta_base: ParameterSet,
    pub phi_base: Classifier,
    pub stage: usize,
}

/// Running uniform mean of merged snapshots.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntraMergeAccumulator {
    theta_avg: Option<ParameterSet>,
    n: usize,
}

impl IntraMergeAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    /// The current mean, or `None` before the first merge.
    pub fn average(&self) -> Option<&ParameterSet> {
        self.theta_avg.as_ref()
    }
}

/// `((k-1)/k) * theta_base + (1/k) * theta_k`.
///
/// For `k = 1` the result is `theta_k` itself and `theta_base` may be empty.
pub fn uniform_merge_step(theta_base: &ParameterSet, theta_k: &ParameterSet, k: usize) -> Result<ParameterSet> {
    if k < 1 {
        return Err(Error::invalid("merge index k must be >= 1"));
    }
    if k == 1 {
        if !theta_base.is_empty() {
            theta_base.check_compatible(theta_k)?;
        }
        return Ok(theta_k.clone());
    }
    let kf = k as f64;
    let keep = (kf - 1.0) / kf;
    let add = 1.0 / kf;
    theta_base.zip_map(theta_k, |b, t| keep * b + add * t)
}

/// `(1 - alpha) * theta_base + alpha * theta_k`; `alpha` weights the newest
/// model.
pub fn ema_merge_step(theta_base: &ParameterSet, theta_k: &ParameterSet, alpha: f64) -> Result<ParameterSet> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("EMA factor must lie in (0, 1), got {alpha}")));
    }
    theta_base.zip_map(theta_k, |b, t| (1.0 - alpha) * b + alpha * t)
}

/// Folds `theta_current` into the running mean: with `n` snapshots merged so
/// far, `avg <- (n*avg + theta)/(n+1)`.
pub fn intra_merge_step(acc: &IntraMergeAccumulator, theta_current: &ParameterSet) -> Result<IntraMergeAccumulator> {
    let theta_avg = match &acc.theta_avg {
        None => theta_current.clone(),
        Some(avg) => {
            // avg + (theta - avg)/(n+1) is the same update and leaves
            // a constant sequence exactly fixed.
            let denom = (acc.n + 1) as f64;
            avg.zip_map(theta_current, |a, t| a + (t - a) / denom)?
        }
    };
    Ok(IntraMergeAccumulator {
        theta_avg: Some(theta_avg),
        n: acc.n + 1,
    })
}

/// Base rows followed by the rows of `phi_current` for `current_class_ids`,
/// in that order.
pub fn concat_classifier(phi_base: &Classifier, phi_current: &Classifier, current_class_ids: &[u32]) -> Result<Classifier> {
    if !phi_base.class_ids.is_empty() && phi_base.feature_dim != phi_current.feature_dim {
        return Err(Error::shape(format!(
            "classifier feature dims differ: {} vs {}",
            phi_base.feature_dim, phi_current.feature_dim
        )));
    }
    let mut out = phi_base.clone();
    out.feature_dim = phi_current.feature_dim;
    for (i, &c) in current_class_ids.iter().enumerate() {
        if phi_base.class_ids.contains(&c) || current_class_ids[..i].contains(&c) {
            return Err(Error::invalid(format!("class {c} appears twice in the concatenation")));
        }
        let row = phi_current
            .position(c)
            .ok_or_else(|| Error::invalid(format!("class {c} is missing from the current classifier")))?;
        out.class_ids.push(c);
        out.weight.extend_from_slice(phi_current.row(row));
        out.bias.push(phi_current.bias[row]);
    }
    Ok(out)
}

/// `theta - theta_base` over `shared_names` and its global L2 norm.
pub fn displacement(theta: &ParameterSet, theta_base: &ParameterSet, shared_names: &[String]) -> Result<(ParameterSet, f64)> {
    let cur = theta.subset(shared_names)?;
    let base = theta_base.subset(shared_names)?;
    let delta = cur.zip_map(&base, |a, b| a - b)?;
    let norm = delta.l2_norm();
    Ok((delta, norm))
}

/// Projects the shared parameters of `theta` onto the ball of radius `bound`
/// around `theta_base`. Parameters outside `shared_names` pass through.
pub fn bound_update(theta: &ParameterSet, theta_base: &ParameterSet, shared_names: &[String], bound: f64) -> Result<ParameterSet> {
    if !(bound > 0.0) {
        return Err(Error::invalid(format!("bound must be > 0, got {bound}")));
    }
    let (delta, norm) = displacement(theta, theta_base, shared_names)?;
    if norm <= bound {
        return Ok(theta.clone());
    }
    let scale = bound / norm;
    let mut out = theta.clone();
    for (name, d) in delta.iter() {
        let base = theta_base.require(name)?;
        let data = base
            .data()
            .iter()
            .zip(d.data())
            .map(|(&b, &dv)| b + scale * dv)
            .collect();
        out.set(name, Tensor::new(d.shape().to_vec(), data)?)?;
    }
    Ok(out)
}

/// Parameters the model shares with its base: the whole extractor plus the
/// classifier rows of classes the base already knows. Returns the model's
/// view and the base's view, entry-aligned.
pub fn shared_views(model: &Model, base: &BaseModelState) -> Result<(ParameterSet, ParameterSet)> {
    model.params.check_compatible(&base.theta_base)?;
    let rows = old_rows(&model.classifier, &base.phi_base)?;
    let cur_cls = model.classifier.weight_tensor().select_rows(&rows);
    let cur_bias = Tensor::vector(rows.iter().map(|&r| model.classifier.bias[r]).collect());

    let mut cur = model.params.clone();
    cur.push(SHARED_CLS_WEIGHT, cur_cls)?;
    cur.push(SHARED_CLS_BIAS, cur_bias)?;
    let mut anchor = base.theta_base.clone();
    anchor.push(SHARED_CLS_WEIGHT, base.phi_base.weight_tensor())?;
    anchor.push(SHARED_CLS_BIAS, base.phi_base.bias_tensor())?;
    Ok((cur, anchor))
}

fn old_rows(current: &Classifier, base: &Classifier) -> Result<Vec<usize>> {
    if !base.class_ids.is_empty() && base.feature_dim != current.feature_dim {
        return Err(Error::shape("base classifier feature dim differs from model"));
    }
    base.class_ids
        .iter()
        .map(|&c| {
            current
                .position(c)
                .ok_or_else(|| Error::shape(format!("model classifier lacks base class {c}")))
        })
        .collect()
}

/// Displacement norm of `model` from `base` over the shared parameters.
pub fn model_displacement_norm(model: &Model, base: &BaseModelState) -> Result<f64> {
    let (cur, anchor) = shared_views(model, base)?;
    let names: Vec<String> = cur.names().map(str::to_owned).collect();
    Ok(displacement(&cur, &anchor, &names)?.1)
}

/// [`bound_update`] applied to a model: the extractor and the old-class
/// classifier rows are projected, new-class rows stay as they are.
pub fn bound_model(model: &Model, base: &BaseModelState, bound: f64) -> Result<Model> {
    let (cur, anchor) = shared_views(model, base)?;
    let names: Vec<String> = cur.names().map(str::to_owned).collect();
    let projected = bound_update(&cur, &anchor, &names, bound)?;

    let mut out = model.clone();
    for (name, t) in out.params.iter_mut() {
        *t = projected.require(name)?.clone();
    }
    let rows = old_rows(&model.classifier, &base.phi_base)?;
    let w = projected.require(SHARED_CLS_WEIGHT)?;
    let b = projected.require(SHARED_CLS_BIAS)?.data();
    let f = out.classifier.feature_dim;
    for (i, &r) in rows.iter().enumerate() {
        out.classifier.weight[r * f..(r + 1) * f].copy_from_slice(w.row(i));
        out.classifier.bias[r] = b[i];
    }
    Ok(out)
}

/// Next-stage base model after finalizing stage `stage` with `model`.
///
/// The extractor is merged with [`uniform_merge_step`] (or
/// [`ema_merge_step`] when `ema_alpha` is set; the first stage always copies
/// through), and the classifier gains the rows of `new_classes`.
pub fn next_base(prev: Option<&BaseModelState>, model: &Model, stage: usize, new_classes: &[u32], ema_alpha: Option<f64>) -> Result<BaseModelState> {
    let empty_cls = Classifier::empty(model.feature_dim());
    let (theta_base, phi_base) = match prev {
        None => {
            if stage != 1 {
                return Err(Error::invalid(format!("stage {stage} needs a previous base model")));
            }
            (uniform_merge_step(&ParameterSet::new(), &model.params, 1)?, &empty_cls)
        }
        Some(prev) => {
            let theta = match ema_alpha {
                Some(alpha) => ema_merge_step(&prev.theta_base, &model.params, alpha)?,
                None => uniform_merge_step(&prev.theta_base, &model.params, stage)?,
            };
            (theta, &prev.phi_base)
        }
    };
    Ok(BaseModelState {
        theta_base,
        phi_base: concat_classifier(phi_base, &model.classifier, new_classes)?,
        stage: stage + 1,
    })
}
