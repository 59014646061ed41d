//! Independent reference implementations used by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use mnb_core::harness::TaskSequence;
use mnb_core::metrics::MetricsLog;
use mnb_core::nn::{beta_name, bias_name, gamma_name, weight_name, Layer, BN_EPS};
use mnb_core::{Model, ParameterSet, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// A parameter set with a fixed layout and random values.
pub fn random_params(rng: &mut ChaCha8Rng, scale: f64) -> ParameterSet {
    let mut p = ParameterSet::new();
    p.push("w", Tensor::new(vec![3, 4], random_vec(rng, 12, scale)).unwrap()).unwrap();
    p.push("b", Tensor::vector(random_vec(rng, 3, scale))).unwrap();
    p.push("g", Tensor::vector(random_vec(rng, 5, scale))).unwrap();
    p
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-300))
        .fold(0.0, f64::max)
}

pub fn max_abs_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Row-by-row forward pass written with nested vectors. `batch_stats`
/// selects batch statistics for normalization instead of running ones.
/// Returns (features, logits).
pub fn reference_forward(model: &Model, x: &[Vec<f64>], batch_stats: bool) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut h: Vec<Vec<f64>> = x.to_vec();
    let p = &model.params;
    for (i, layer) in model.layers.iter().enumerate() {
        match *layer {
            Layer::Dense { input, output } => {
                let w = p.get(&weight_name(i)).unwrap().data();
                let b = p.get(&bias_name(i)).unwrap().data();
                h = h
                    .iter()
                    .map(|row| {
                        (0..output)
                            .map(|o| {
                                let mut s = b[o];
                                for j in 0..input {
                                    s += w[o * input + j] * row[j];
                                }
                                s
                            })
                            .collect()
                    })
                    .collect();
            }
            Layer::BatchNorm { dim } => {
                let g = p.get(&gamma_name(i)).unwrap().data();
                let be = p.get(&beta_name(i)).unwrap().data();
                let (mean, var) = if batch_stats {
                    let n = h.len() as f64;
                    let mean: Vec<f64> = (0..dim).map(|j| h.iter().map(|r| r[j]).sum::<f64>() / n).collect();
                    let var: Vec<f64> = (0..dim)
                        .map(|j| h.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n)
                        .collect();
                    (mean, var)
                } else {
                    let rs = model.bn.iter().find(|s| s.layer == i).unwrap();
                    (rs.mean.clone(), rs.var.clone())
                };
                h = h
                    .iter()
                    .map(|row| {
                        (0..dim)
                            .map(|j| g[j] * (row[j] - mean[j]) / (var[j] + BN_EPS).sqrt() + be[j])
                            .collect()
                    })
                    .collect();
            }
            Layer::Relu => {
                h = h.iter().map(|row| row.iter().map(|v| if *v > 0.0 { *v } else { 0.0 }).collect()).collect();
            }
        }
    }
    let cls = &model.classifier;
    let f = cls.feature_dim;
    let logits = h
        .iter()
        .map(|row| {
            (0..cls.class_ids.len())
                .map(|k| {
                    let mut s = cls.bias[k];
                    for j in 0..f {
                        s += cls.weight[k * f + j] * row[j];
                    }
                    s
                })
                .collect()
        })
        .collect();
    (h, logits)
}

/// Greedy herding recomputing the candidate mean from scratch each time.
pub fn brute_herding(x: &[Vec<f64>], m: usize) -> Vec<usize> {
    let n = x.len();
    let f = x[0].len();
    let mu: Vec<f64> = (0..f).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut chosen: Vec<usize> = Vec::new();
    for _ in 0..m.min(n) {
        let mut best = usize::MAX;
        let mut best_d = f64::INFINITY;
        for cand in 0..n {
            if chosen.contains(&cand) {
                continue;
            }
            let mut sel = chosen.clone();
            sel.push(cand);
            let t = sel.len() as f64;
            let mut d = 0.0;
            for j in 0..f {
                let s: f64 = sel.iter().fold(0.0, |acc, &r| acc + x[r][j]);
                d += (mu[j] - s / t).powi(2);
            }
            if d < best_d {
                best_d = d;
                best = cand;
            }
        }
        chosen.push(best);
    }
    chosen
}

/// Linear CKA through Gram matrices: HSIC(K, L) / sqrt(HSIC(K, K) HSIC(L, L))
/// with `HSIC(K, L) = tr(K H L H)`.
pub fn hsic_cka(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let n = x.len();
    let gram = |a: &[Vec<f64>]| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| (0..n).map(|j| a[i].iter().zip(&a[j]).map(|(u, v)| u * v).sum()).collect())
            .collect()
    };
    let center = |k: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let nf = n as f64;
        let row: Vec<f64> = (0..n).map(|i| k[i].iter().sum::<f64>() / nf).collect();
        let all = row.iter().sum::<f64>() / nf;
        (0..n)
            .map(|i| (0..n).map(|j| k[i][j] - row[i] - row[j] + all).collect())
            .collect()
    };
    let kc = center(gram(x));
    let lc = center(gram(y));
    let hsic = |a: &Vec<Vec<f64>>, b: &Vec<Vec<f64>>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += a[i][j] * b[j][i];
            }
        }
        s
    };
    hsic(&kc, &lc) / (hsic(&kc, &kc) * hsic(&lc, &lc)).sqrt()
}

pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Headline metrics recomputed from the raw predictions in `log`:
/// (average incremental accuracy, forgetting, average new accuracy).
pub fn recompute_metrics(log: &MetricsLog, task: &TaskSequence) -> (f64, f64, f64) {
    let k_total = log.stages.len();
    let acc_on = |k: usize, classes: &[u32]| -> f64 {
        let preds = &log.stages[k - 1].predictions;
        let hits = preds.iter().filter(|(y, p)| classes.contains(y) && y == p).count();
        let total = preds.iter().filter(|(y, _)| classes.contains(y)).count();
        hits as f64 / total as f64
    };
    let mut inc = 0.0;
    let mut new = 0.0;
    for k in 1..=k_total {
        inc += acc_on(k, &task.seen_up_to(k));
        new += acc_on(k, task.classes(k));
    }
    let mut drops = Vec::new();
    for k in 1..k_total {
        for &c in task.classes(k) {
            drops.push(acc_on(k, &[c]) - acc_on(k_total, &[c]));
        }
    }
    let forgetting = if drops.is_empty() { 0.0 } else { drops.iter().sum::<f64>() / drops.len() as f64 };
    (inc / k_total as f64, forgetting, new / k_total as f64)
}

pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

/// Central-difference check of `Model::gradients` over every parameter.
/// Returns the number of entries checked and the ones outside
/// `rel` relative error (with an absolute floor `abs`).
pub fn gradient_check(model: &Model, x: &Tensor, labels: &[u32], mode: mnb_core::Mode, rel: f64, abs: f64) -> (usize, Vec<String>) {
    let (grads, _) = model.gradients(x, labels, mode).unwrap();
    let base = model.full_params();
    let h = 1e-5;
    let loss_at = |p: &ParameterSet| {
        let mut m = model.clone();
        m.load_full_params(p).unwrap();
        m.loss(x, labels, mode).unwrap()
    };
    let mut checked = 0;
    let mut bad = Vec::new();
    for (name, t) in base.iter() {
        let g = grads.require(name).unwrap().data();
        for i in 0..t.len() {
            let mut plus = base.clone();
            plus.get_mut(name).unwrap().data_mut()[i] += h;
            let mut minus = base.clone();
            minus.get_mut(name).unwrap().data_mut()[i] -= h;
            let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * h);
            let err = (fd - g[i]).abs();
            if err > rel * fd.abs().max(g[i].abs()) && err > abs {
                bad.push(format!("{name}[{i}]: analytic {} vs numeric {fd}", g[i]));
            }
            checked += 1;
        }
    }
    (checked, bad)
}
