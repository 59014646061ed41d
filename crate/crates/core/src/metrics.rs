//! Incremental-learning metrics and weight/representation diagnostics.
//!
//! Accuracies are derived from raw `(label, prediction)` pairs stored per
//! stage, so every number in the output can be recomputed from the log.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Test-set predictions after one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageEval {
    pub stage: usize,
    /// Classes introduced at this stage.
    pub new_classes: Vec<u32>,
    /// All classes seen up to and including this stage, by introduction.
    pub seen_classes: Vec<u32>,
    /// `(true label, predicted label)` for every test sample of a seen class.
    pub predictions: Vec<(u32, u32)>,
}

impl StageEval {
    /// Fraction of correct predictions among samples whose label satisfies
    /// `keep`; `None` when there are no such samples.
    fn accuracy_where(&self, keep: impl Fn(u32) -> bool) -> Option<f64> {
        let (mut hit, mut total) = (0usize, 0usize);
        for &(y, p) in &self.predictions {
            if keep(y) {
                total += 1;
                hit += usize::from(y == p);
            }
        }
        (total > 0).then(|| hit as f64 / total as f64)
    }

    pub fn overall_accuracy(&self) -> f64 {
        self.accuracy_where(|_| true).unwrap_or(0.0)
    }

    pub fn new_accuracy(&self) -> f64 {
        self.accuracy_where(|y| self.new_classes.contains(&y)).unwrap_or(0.0)
    }

    /// Accuracy on class `c`, defined only for seen classes.
    pub fn class_accuracy(&self, c: u32) -> Option<f64> {
        if !self.seen_classes.contains(&c) {
            return None;
        }
        self.accuracy_where(|y| y == c)
    }
}

/// Everything recorded across one incremental run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    /// Planned number of stages.
    pub num_stages: usize,
    pub stages: Vec<StageEval>,
    /// Flattened extractor change over each stage (end minus start).
    pub update_vectors: Vec<Vec<f64>>,
}

impl MetricsLog {
    pub fn new(num_stages: usize) -> Self {
        MetricsLog {
            num_stages,
            ..Default::default()
        }
    }

    /// Stage at which `c` was introduced (1-based).
    fn intro_stage(&self, c: u32) -> Option<usize> {
        self.stages
            .iter()
            .find(|s| s.new_classes.contains(&c))
            .map(|s| s.stage)
    }

    fn stage(&self, k: usize) -> Option<&StageEval> {
        self.stages.iter().find(|s| s.stage == k)
    }

    /// `acc[k][c]`.
    pub fn class_accuracy(&self, k: usize, c: u32) -> Option<f64> {
        self.stage(k)?.class_accuracy(c)
    }
}

/// Mean over all stages of the accuracy on every class seen so far.
pub fn average_incremental_accuracy(log: &MetricsLog) -> Result<f64> {
    if log.stages.is_empty() || log.stages.len() != log.num_stages {
        return Err(Error::invalid(format!(
            "log has {} of {} stages",
            log.stages.len(),
            log.num_stages
        )));
    }
    Ok(log.stages.iter().map(StageEval::overall_accuracy).sum::<f64>() / log.stages.len() as f64)
}

/// Mean per-class drop from the accuracy right after the class was learned
/// to the accuracy after the last recorded stage. Classes introduced in the
/// last stage are excluded; an empty set gives 0.
pub fn forgetting(log: &MetricsLog) -> f64 {
    forgetting_with(log, |log, c, intro, _| log.class_accuracy(intro, c))
}

/// Variant using the best accuracy reached before the last stage instead of
/// the accuracy at introduction.
pub fn forgetting_max(log: &MetricsLog) -> f64 {
    forgetting_with(log, |log, c, intro, last| {
        (intro..last)
            .filter_map(|k| log.class_accuracy(k, c))
            .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))
    })
}

fn forgetting_with(log: &MetricsLog, reference: impl Fn(&MetricsLog, u32, usize, usize) -> Option<f64>) -> f64 {
    let Some(last) = log.stages.last() else {
        return 0.0;
    };
    let mut drops = Vec::new();
    for &c in &last.seen_classes {
        let Some(intro) = log.intro_stage(c) else { continue };
        if intro >= last.stage {
            continue;
        }
        if let (Some(r), Some(f)) = (reference(log, c, intro, last.stage), last.class_accuracy(c)) {
            drops.push(r - f);
        }
    }
    if drops.is_empty() {
        0.0
    } else {
        drops.iter().sum::<f64>() / drops.len() as f64
    }
}

/// Mean over stages of the accuracy on that stage's new classes.
pub fn average_new_accuracy(log: &MetricsLog) -> f64 {
    if log.stages.is_empty() {
        return 0.0;
    }
    log.stages.iter().map(StageEval::new_accuracy).sum::<f64>() / log.stages.len() as f64
}

/// Pairwise cosine similarity of task-update vectors. A zero vector has
/// cosine 0 with everything else and 1 with itself.
pub fn task_update_cosine_matrix(updates: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if let Some(first) = updates.first() {
        if updates.iter().any(|u| u.len() != first.len()) {
            return Err(Error::shape("task update vectors differ in length"));
        }
    }
    let norms: Vec<f64> = updates
        .iter()
        .map(|u| u.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let k = updates.len();
    let mut s = vec![vec![0.0; k]; k];
    for i in 0..k {
        s[i][i] = 1.0;
        for j in (i + 1)..k {
            let c = if norms[i] > 0.0 && norms[j] > 0.0 {
                let dot: f64 = updates[i].iter().zip(&updates[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            } else {
                0.0
            };
            s[i][j] = c;
            s[j][i] = c;
        }
    }
    Ok(s)
}

/// Mean of the strictly upper-triangular entries (0 for fewer than 2 rows).
pub fn mean_off_diagonal(m: &[Vec<f64>]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, row) in m.iter().enumerate() {
        for v in &row[i + 1..] {
            sum += v;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn centered(x: &Tensor) -> Vec<f64> {
    let (n, f) = (x.rows(), x.cols());
    let mut out = x.data().to_vec();
    for j in 0..f {
        let mean = (0..n).map(|r| out[r * f + j]).sum::<f64>() / n as f64;
        for r in 0..n {
            out[r * f + j] -= mean;
        }
    }
    out
}

/// `||A^T B||_F^2` for row-major `[n, fa]` and `[n, fb]` buffers.
fn cross_frobenius_sq(a: &[f64], fa: usize, b: &[f64], fb: usize, n: usize) -> f64 {
    let mut total = 0.0;
    for p in 0..fa {
        for q in 0..fb {
            let s: f64 = (0..n).map(|r| a[r * fa + p] * b[r * fb + q]).sum();
            total += s * s;
        }
    }
    total
}

/// Linear centered kernel alignment between two representations of the
/// same `N` samples. All-constant input gives 0.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape().len() != 2 || y.shape().len() != 2 {
        return Err(Error::shape("CKA inputs must be 2-D"));
    }
    let n = x.rows();
    if n != y.rows() {
        return Err(Error::shape(format!("CKA inputs have {n} and {} rows", y.rows())));
    }
    if n < 2 {
        return Err(Error::invalid("CKA needs at least two samples"));
    }
    let (fx, fy) = (x.cols(), y.cols());
    let xc = centered(x);
    let yc = centered(y);
    let xx = cross_frobenius_sq(&xc, fx, &xc, fx, n).sqrt();
    let yy = cross_frobenius_sq(&yc, fy, &yc, fy, n).sqrt();
    if xx == 0.0 || yy == 0.0 {
        return Ok(0.0);
    }
    let yx = cross_frobenius_sq(&yc, fy, &xc, fx, n);
    Ok((yx / (xx * yy)).clamp(0.0, 1.0))
}

/// Per-stage table followed by the summary block.
pub fn metrics_csv(log: &MetricsLog) -> Result<String> {
    let mut out = String::from("stage,seen_classes,overall_acc,new_acc\n");
    for s in &log.stages {
        writeln!(
            out,
            "{},{},{},{}",
            s.stage,
            s.seen_classes.len(),
            s.overall_accuracy(),
            s.new_accuracy()
        )
        .expect("string write");
    }
    out.push('\n');
    out.push_str("metric,value\n");
    writeln!(out, "avg_inc_acc,{}", average_incremental_accuracy(log)?).expect("string write");
    writeln!(out, "forgetting,{}", forgetting(log)).expect("string write");
    writeln!(out, "avg_new_acc,{}", average_new_accuracy(log)).expect("string write");
    writeln!(out, "forgetting_max,{}", forgetting_max(log)).expect("string write");
    Ok(out)
}

/// Per-class accuracy table: one row per stage, one column per class in
/// order of introduction; cells for unseen classes are empty.
pub fn class_accuracy_csv(log: &MetricsLog) -> String {
    let classes: Vec<u32> = log
        .stages
        .last()
        .map(|s| s.seen_classes.clone())
        .unwrap_or_default();
    let mut out = String::from("stage");
    for c in &classes {
        write!(out, ",c{c}").expect("string write");
    }
    out.push('\n');
    for s in &log.stages {
        write!(out, "{}", s.stage).expect("string write");
        for &c in &classes {
            match s.class_accuracy(c) {
                Some(a) => write!(out, ",{a}").expect("string write"),
                None => out.push(','),
            }
        }
        out.push('\n');
    }
    out
}

/// Square matrix with stage-number row/column labels.
pub fn matrix_csv(labels: &[usize], m: &[Vec<f64>]) -> String {
    let mut out = String::from("stage");
    for l in labels {
        write!(out, ",{l}").expect("string write");
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(m) {
        write!(out, "{l}").expect("string write");
        for v in row {
            write!(out, ",{v}").expect("string write");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(stage: usize, new: &[u32], seen: &[u32], preds: &[(u32, u32)]) -> StageEval {
        StageEval {
            stage,
            new_classes: new.to_vec(),
            seen_classes: seen.to_vec(),
            predictions: preds.to_vec(),
        }
    }

    #[test]
    fn single_stage_metrics() {
        let mut log = MetricsLog::new(1);
        log.stages.push(eval(1, &[0, 1], &[0, 1], &[(0, 0), (1, 0), (1, 1), (0, 0)]));
        assert_eq!(average_incremental_accuracy(&log).unwrap(), 0.75);
        assert_eq!(forgetting(&log), 0.0);
        assert_eq!(average_new_accuracy(&log), 0.75);
    }

    #[test]
    fn two_stage_average() {
        let mut log = MetricsLog::new(2);
        log.stages.push(eval(1, &[0], &[0], &[(0, 0), (0, 0)]));
        log.stages.push(eval(2, &[1], &[0, 1], &[(0, 1), (0, 0), (1, 1), (1, 0)]));
        assert_eq!(average_incremental_accuracy(&log).unwrap(), 0.75);
        assert_eq!(forgetting(&log), 0.5);
        assert_eq!(average_new_accuracy(&log), 0.75);
    }

    #[test]
    fn forgetting_single_class() {
        let mut log = MetricsLog::new(2);
        let p1: Vec<(u32, u32)> = vec![(0, 0); 5];
        let p2: Vec<(u32, u32)> = vec![(0, 0), (0, 0), (0, 0), (0, 1), (0, 1), (1, 1)];
        log.stages.push(eval(1, &[0], &[0], &p1));
        log.stages.push(eval(2, &[1], &[0, 1], &p2));
        assert!((forgetting(&log) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn forgetting_max_uses_peak() {
        let mut log = MetricsLog::new(3);
        log.stages.push(eval(1, &[0], &[0], &[(0, 0), (0, 1)]));
        log.stages.push(eval(2, &[1], &[0, 1], &[(0, 0), (0, 0), (1, 1)]));
        log.stages.push(eval(3, &[2], &[0, 1, 2], &[(0, 1), (0, 1), (1, 1), (2, 2)]));
        // class 0: intro 0.5, peak 1.0, final 0; class 1: 1 -> 1
        assert_eq!(forgetting(&log), 0.25);
        assert_eq!(forgetting_max(&log), 0.5);
    }

    #[test]
    fn incomplete_log_errors() {
        let mut log = MetricsLog::new(3);
        log.stages.push(eval(1, &[0], &[0], &[(0, 0)]));
        assert!(average_incremental_accuracy(&log).is_err());
    }

    #[test]
    fn cosine_matrix_cases() {
        let s = task_update_cosine_matrix(&[
            vec![1.0, 2.0],
            vec![2.0, 4.0],
            vec![-1.0, -2.0],
            vec![2.0, -1.0],
            vec![0.0, 0.0],
        ])
        .unwrap();
        assert!((s[0][1] - 1.0).abs() < 1e-15);
        assert!((s[0][2] + 1.0).abs() < 1e-15);
        assert_eq!(s[0][3], 0.0);
        assert_eq!(s[4][4], 1.0);
        assert_eq!(s[4][0], 0.0);
        for (i, row) in s.iter().enumerate() {
            assert_eq!(row[i], 1.0);
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, s[j][i]);
            }
        }
        assert!(task_update_cosine_matrix(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn cka_identity_and_degenerate() {
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, -1.0], vec![0.5, 0.0]]);
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let c = Tensor::from_rows(&[vec![1.0], vec![1.0], vec![1.0]]);
        assert_eq!(linear_cka(&x, &c).unwrap(), 0.0);
        assert!(linear_cka(&Tensor::from_rows(&[vec![1.0]]), &Tensor::from_rows(&[vec![1.0]])).is_err());
    }

    #[test]
    fn csv_layout() {
        let mut log = MetricsLog::new(1);
        log.stages.push(eval(1, &[0, 1], &[0, 1], &[(0, 0), (1, 0)]));
        let csv = metrics_csv(&log).unwrap();
        assert_eq!(
            csv,
            "stage,seen_classes,overall_acc,new_acc\n1,2,0.5,0.5\n\nmetric,value\navg_inc_acc,0.5\nforgetting,0\navg_new_acc,0.5\nforgetting_max,0\n"
        );
        assert_eq!(class_accuracy_csv(&log), "stage,c0,c1\n1,1,0\n");
        assert_eq!(matrix_csv(&[1, 2], &[vec![1.0, 0.5], vec![0.5, 1.0]]), "stage,1,2\n1,1,0.5\n2,0.5,1\n");
    }
}
