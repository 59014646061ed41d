mod common;

use common::*;
use mnb_core::data::{decode_idx, encode_idx, gen_blobs, Split};
use mnb_core::experiment::{execute, ExperimentConfig, Method};
use mnb_core::harness::{
    build_task_sequence, epoch_batches, herding_select, init_stage, recompute_bn_stats, run_incremental, run_stage,
    stage_training_indices, BnStrategy, RunSetup, StageConfig, StageState, TaskSequence,
};
use mnb_core::metrics::{average_incremental_accuracy, average_new_accuracy, forgetting, linear_cka};
use mnb_core::nn::sgd_step;
use mnb_core::rng::{INIT, SHUFFLE};
use mnb_core::weightspace::{ema_merge_step, intra_merge_step, uniform_merge_step};
use mnb_core::{IntraMergeAccumulator, Mode, Model, MomentumState, ParameterSet, Seed, Tensor};
use rand::Rng;

fn bn_mlp(seed: u64) -> Model {
    Model::mlp(6, &[5, 4], &[0, 1, 2], &mut Seed(seed).stream(INIT)).unwrap()
}

fn random_batch(seed: u64, n: usize, d: usize) -> Tensor {
    let mut r = rng(seed);
    Tensor::new(vec![n, d], random_vec(&mut r, n * d, 2.0)).unwrap()
}

/// Gives the model non-trivial affine and running-stat values.
fn perturb(model: &mut Model, seed: u64) {
    let mut r = rng(seed);
    let full = model.full_params();
    let noise = ParameterSet::from_entries(
        full.iter()
            .map(|(n, t)| (n.to_owned(), Tensor::new(t.shape().to_vec(), random_vec(&mut r, t.len(), 0.3)).unwrap()))
            .collect(),
    )
    .unwrap();
    let full = full.zip_map(&noise, |a, b| a + b).unwrap();
    model.load_full_params(&full).unwrap();
    for i in 0..4 {
        model.forward(&random_batch(seed + 10 + i, 16, 6), Mode::Train).unwrap();
    }
}

#[test]
fn forward_matches_row_by_row_reference() {
    let mut model = bn_mlp(1);
    perturb(&mut model, 2);
    let x = random_batch(3, 9, 6);
    let xr = rows(&x);

    let out = model.forward_eval(&x).unwrap();
    let (feat, logits) = reference_forward(&model, &xr, false);
    assert!(max_abs_err(out.features.data(), &feat.concat()) < 1e-12);
    assert!(max_abs_err(out.logits.data(), &logits.concat()) < 1e-12);

    let (feat, logits) = reference_forward(&model, &xr, true);
    let out = model.clone().forward(&x, Mode::Train).unwrap();
    assert!(max_abs_err(out.features.data(), &feat.concat()) < 1e-12);
    assert!(max_abs_err(out.logits.data(), &logits.concat()) < 1e-12);
}

fn finite_difference_check(mode: Mode) {
    let mut model = bn_mlp(5);
    perturb(&mut model, 6);
    let x = random_batch(7, 12, 6);
    let labels: Vec<u32> = (0..12).map(|i| (i % 3) as u32).collect();
    let (checked, bad) = gradient_check(&model, &x, &labels, mode, 1e-6, 1e-8);
    assert_eq!(checked, model.full_params().numel());
    assert!(bad.is_empty(), "{mode:?}: {bad:#?}");
}

#[test]
fn gradients_match_finite_differences_with_frozen_stats() {
    finite_difference_check(Mode::Eval);
}

#[test]
fn gradients_match_finite_differences_through_batch_stats() {
    finite_difference_check(Mode::Train);
}

#[test]
fn merge_folds_equal_offline_means() {
    let mut r = rng(11);
    let snaps: Vec<ParameterSet> = (0..6).map(|_| random_params(&mut r, 3.0)).collect();
    let mean: Vec<f64> = {
        let flat: Vec<Vec<f64>> = snaps.iter().map(ParameterSet::to_flat).collect();
        (0..flat[0].len()).map(|i| flat.iter().map(|f| f[i]).sum::<f64>() / 6.0).collect()
    };

    let mut base = ParameterSet::new();
    for (k, s) in snaps.iter().enumerate() {
        base = uniform_merge_step(&base, s, k + 1).unwrap();
    }
    assert!(max_rel_err(&base.to_flat(), &mean) < 1e-12);

    let mut acc = IntraMergeAccumulator::new();
    for s in &snaps {
        acc = intra_merge_step(&acc, s).unwrap();
    }
    assert_eq!(acc.count(), 6);
    assert!(max_rel_err(&acc.average().unwrap().to_flat(), &mean) < 1e-12);
}

#[test]
fn ema_fold_matches_expansion() {
    let mut r = rng(12);
    let (a, b, c) = (random_params(&mut r, 1.0), random_params(&mut r, 1.0), random_params(&mut r, 1.0));
    let folded = ema_merge_step(&ema_merge_step(&a, &b, 0.1).unwrap(), &c, 0.1).unwrap();
    let expect: Vec<f64> = a
        .to_flat()
        .iter()
        .zip(b.to_flat())
        .zip(c.to_flat())
        .map(|((a, b), c)| 0.81 * a + 0.09 * b + 0.1 * c)
        .collect();
    assert!(max_rel_err(&folded.to_flat(), &expect) < 1e-12);
}

#[test]
fn herding_matches_brute_force() {
    let mut r = rng(13);
    for trial in 0..50 {
        let x: Vec<Vec<f64>> = (0..20).map(|_| random_vec(&mut r, 6, 1.0)).collect();
        let m = 1 + trial % 20;
        let t = Tensor::from_rows(&x);
        assert_eq!(herding_select(&t, m), brute_herding(&x, m), "trial {trial}");
    }
}

#[test]
fn cka_matches_hsic_reference() {
    let mut r = rng(14);
    for _ in 0..10 {
        let x: Vec<Vec<f64>> = (0..15).map(|_| random_vec(&mut r, 4, 1.0)).collect();
        let y: Vec<Vec<f64>> = (0..15).map(|_| random_vec(&mut r, 7, 1.0)).collect();
        let lib = linear_cka(&Tensor::from_rows(&x), &Tensor::from_rows(&y)).unwrap();
        assert!((lib - hsic_cka(&x, &y)).abs() < 1e-10);
    }
}

#[test]
fn reset_running_stats_converge_to_population() {
    use mnb_core::Layer;
    use rand_distr::{Distribution, Normal};

    let mu = [1.5, -2.0, 0.0, 4.0];
    let sd = [0.5, 2.0, 1.0, 3.0];
    let (n, batches) = (512usize, 50usize);
    let mut model = Model::from_layers(vec![Layer::BatchNorm { dim: 4 }], 4, &[0, 1], &mut rng(15)).unwrap();
    model.bn[0].mean = vec![9.0; 4];
    model.reset_bn_stats();

    let mut r = rng(16);
    let mut ema_mean = vec![0.0; 4];
    let mut ema_var = vec![1.0; 4];
    for _ in 0..batches {
        let mut data = Vec::with_capacity(n * 4);
        for _ in 0..n {
            for j in 0..4 {
                data.push(Normal::new(mu[j], sd[j]).unwrap().sample(&mut r));
            }
        }
        let x = Tensor::new(vec![n, 4], data).unwrap();
        for j in 0..4 {
            let col: Vec<f64> = (0..n).map(|i| x.at(i, j)).collect();
            let m = col.iter().sum::<f64>() / n as f64;
            let v = col.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n as f64;
            ema_mean[j] = 0.9 * ema_mean[j] + 0.1 * m;
            ema_var[j] = 0.9 * ema_var[j] + 0.1 * v;
        }
        model.forward(&x, Mode::Train).unwrap();
    }
    let rs = &model.bn[0];
    assert!(max_abs_err(&rs.mean, &ema_mean) < 1e-12);
    assert!(max_abs_err(&rs.var, &ema_var) < 1e-12);
    let shrink = (n as f64 - 1.0) / n as f64;
    for j in 0..4 {
        assert!((rs.mean[j] - mu[j]).abs() < 0.05 * sd[j], "mean {j}");
        let pop = shrink * sd[j] * sd[j];
        assert!((rs.var[j] - pop).abs() < 0.05 * pop, "var {j}");
    }

    let (train, _) = gen_blobs(4, 6, 40, 1, 3.0, Seed(15)).unwrap();
    let all: Vec<usize> = (0..train.len()).collect();
    // the harness entry point also starts from (0, 1)
    let mut m2 = bn_mlp(15);
    m2.bn[0].mean = vec![100.0; 5];
    let mut m3 = m2.clone();
    recompute_bn_stats(&mut m2, &train, &all, BnStrategy::Reset, 32, Seed(16), 0).unwrap();
    m3.reset_bn_stats();
    recompute_bn_stats(&mut m3, &train, &all, BnStrategy::Ours, 32, Seed(16), 0).unwrap();
    assert_eq!(m2.bn, m3.bn);
}

fn toy_setup(cfg: &StageConfig, seed: u64) -> (mnb_core::data::Dataset, mnb_core::data::Dataset, TaskSequence, RunSetup) {
    let (train, test) = gen_blobs(6, 5, 30, 10, 4.0, Seed(seed)).unwrap();
    let task = build_task_sequence(6, 3, Seed(seed), 0.5).unwrap();
    cfg.validate().unwrap();
    let setup = RunSetup {
        hidden: vec![8],
        seed: Seed(seed),
    };
    (train, test, task, setup)
}

fn quick_cfg() -> StageConfig {
    StageConfig {
        epochs: 4,
        batch_size: 16,
        e_b: 2,
        bound: 0.5,
        memory_per_class: 5,
        ..StageConfig::default()
    }
}

fn run_through(k_last: usize, cfg: &StageConfig, train: &mnb_core::data::Dataset, task: &TaskSequence, setup: &RunSetup) -> Vec<StageState> {
    let mut states: Vec<StageState> = Vec::new();
    for k in 1..=k_last {
        let state = init_stage(k, states.last(), task, cfg, train.dim(), setup).unwrap();
        let data = stage_training_indices(task, train, &state);
        states.push(run_stage(state, cfg, task, train, &data, setup).unwrap().0);
    }
    states
}

#[test]
fn stage_initialization_follows_merged_base() {
    let cfg = quick_cfg();
    let (train, _, task, setup) = toy_setup(&cfg, 21);
    let states = run_through(2, &cfg, &train, &task, &setup);
    let s2 = init_stage(2, Some(&states[0]), &task, &cfg, train.dim(), &setup).unwrap();
    assert_eq!(s2.model.params, states[0].model.params);
    assert_eq!(s2.base.as_ref().unwrap().theta_base, states[0].model.params);
    let cls = &states[0].model.classifier;
    assert_eq!(&s2.model.classifier.weight[..cls.weight.len()], &cls.weight[..]);

    let s3 = init_stage(3, Some(&states[1]), &task, &cfg, train.dim(), &setup).unwrap();
    let expect: Vec<f64> = states[0]
        .model
        .params
        .to_flat()
        .iter()
        .zip(states[1].model.params.to_flat())
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    assert_eq!(s3.model.params.to_flat(), expect);
    assert_eq!(s3.model.class_ids(), task.seen_up_to(3).as_slice());
}

#[test]
fn per_epoch_merge_equals_mean_of_iterates() {
    let base = StageConfig {
        epochs: 5,
        batch_size: 16,
        enable_bound: false,
        ..StageConfig::default()
    };
    let (train, _, task, setup) = toy_setup(&base, 22);
    let start = init_stage(1, None, &task, &base, train.dim(), &setup).unwrap();
    let data = stage_training_indices(&task, &train, &start);

    let iterates: Vec<Vec<f64>> = (1..=5)
        .map(|e| {
            let cfg = StageConfig {
                epochs: e,
                enable_intra: false,
                ..base.clone()
            };
            run_stage(start.clone(), &cfg, &task, &train, &data, &setup)
                .unwrap()
                .0
                .model
                .full_params()
                .to_flat()
        })
        .collect();
    let mean: Vec<f64> = (0..iterates[0].len())
        .map(|i| iterates.iter().map(|v| v[i]).sum::<f64>() / 5.0)
        .collect();

    let (merged, report) = run_stage(start, &base, &task, &train, &data, &setup).unwrap();
    assert_eq!(report.merges, 5);
    assert!(max_rel_err(&merged.model.full_params().to_flat(), &mean) < 1e-12);
}

#[test]
fn flags_off_equals_plain_finetuning() {
    let cfg = StageConfig {
        enable_inter: false,
        enable_intra: false,
        enable_bound: false,
        ..quick_cfg()
    };
    let (train, test, task, setup) = toy_setup(&cfg, 23);
    let outcome = run_incremental(&train, &test, &task, &cfg, &setup).unwrap();

    // hand-rolled fine-tuning with replay
    let mut model: Option<Model> = None;
    let mut memory: Vec<usize> = Vec::new();
    for k in 1..=task.num_stages() {
        let mut init = setup.seed.stream_at(INIT, &[k as u64]);
        let mut m = match model.take() {
            None => Model::mlp(train.dim(), &setup.hidden, task.classes(1), &mut init).unwrap(),
            Some(prev) => prev.expand_classifier(task.classes(k), &mut init).unwrap(),
        };
        let mut data = task.stage_indices(&train, k);
        data.extend(&memory);
        let mut mom = MomentumState::zeros_like(&m.full_params());
        for epoch in 1..=cfg.epochs {
            for b in epoch_batches(&data, cfg.batch_size, setup.seed, SHUFFLE, &[k as u64, epoch as u64]) {
                let (x, y) = train.gather(&b);
                let (g, _) = m.backward(&x, &y).unwrap();
                let mut p = m.full_params();
                sgd_step(&mut p, &g, &mut mom, cfg.lr, cfg.momentum).unwrap();
                m.load_full_params(&p).unwrap();
            }
        }
        for &c in task.classes(k) {
            let idx = train.indices_of(c);
            let feats = m.features(&train.gather(&idx).0).unwrap();
            memory.extend(herding_select(&feats, cfg.memory_per_class).into_iter().map(|p| idx[p]));
        }
        assert_eq!(m, outcome.stage_models[k - 1], "stage {k}");
        model = Some(m);
    }
    assert!(outcome.next_bases.iter().all(Option::is_none));
}

#[test]
fn exemplar_memory_invariants() {
    let cfg = quick_cfg();
    let (train, _, task, setup) = toy_setup(&cfg, 24);
    let states = run_through(3, &cfg, &train, &task, &setup);
    let mem = &states[2].memory;
    assert_eq!(mem.class_ids(), task.seen_up_to(3));
    for (c, idx) in &mem.classes {
        assert_eq!(idx.len(), cfg.memory_per_class);
        assert!(idx.iter().all(|&i| train.labels[i] == *c));
        let mut u = idx.clone();
        u.sort_unstable();
        u.dedup();
        assert_eq!(u.len(), idx.len());
    }
    // stage-2 training data is its own classes plus stage-1 exemplars only
    let s2 = init_stage(2, Some(&states[0]), &task, &cfg, train.dim(), &setup).unwrap();
    let data = stage_training_indices(&task, &train, &s2);
    let old: Vec<usize> = data.iter().copied().filter(|&i| task.classes(1).contains(&train.labels[i])).collect();
    assert_eq!(old.len(), task.classes(1).len() * cfg.memory_per_class);
}

#[test]
fn headline_metrics_recompute_from_predictions() {
    let mut cfg = ExperimentConfig::preset(Method::Mnb);
    for (k, v) in [("stages", "3"), ("epochs", "3"), ("num_classes", "6"), ("n_train", "30"), ("n_test", "10"), ("memory", "5")] {
        cfg.set(k, v).unwrap();
    }
    let r = execute(&cfg).unwrap();
    let (inc, fgt, new) = recompute_metrics(&r.outcome.log, &r.outcome.task);
    assert!((average_incremental_accuracy(&r.outcome.log).unwrap() - inc).abs() < 1e-12);
    assert!((forgetting(&r.outcome.log) - fgt).abs() < 1e-12);
    assert!((average_new_accuracy(&r.outcome.log) - new).abs() < 1e-12);
    assert!((r.summary.avg_inc_acc - inc).abs() < 1e-12);
}

#[test]
fn idx_round_trip() {
    let mut r = rng(25);
    let images: Vec<Vec<u8>> = (0..7).map(|_| (0..12).map(|_| r.random::<u8>()).collect()).collect();
    let labels: Vec<u8> = (0..7).map(|i| (i % 3) as u8).collect();
    let (img, lab) = encode_idx(&images, 3, 4, &labels);
    let ds = decode_idx(&img, &lab, Split::Train).unwrap();
    assert_eq!(ds.labels, labels.iter().map(|&l| u32::from(l)).collect::<Vec<_>>());
    for (i, im) in images.iter().enumerate() {
        let expect: Vec<f64> = im.iter().map(|&p| f64::from(p) / 255.0).collect();
        assert_eq!(ds.features.row(i), expect.as_slice());
    }
}
