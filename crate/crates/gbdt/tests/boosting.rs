use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roc_core::DenseMatrix;
use roc_gbdt::*;

fn random_data(rng: &mut ChaCha8Rng, n: usize, d: usize, discrete: bool) -> (DenseMatrix<f64>, Vec<f64>) {
    let x: Vec<f64> = (0..n * d)
        .map(|_| if discrete { rng.random_range(0..5) as f64 } else { rng.random_range(-3.0..3.0) })
        .collect();
    let y = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (DenseMatrix::from_vec(n, d, x), y)
}

fn sse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|a| (a - m) * (a - m)).sum()
}

/// Exhaustive search over raw thresholds: best SSE reduction, first by
/// feature then threshold on ties.
fn brute_force_split(x: &DenseMatrix<f64>, y: &[f64]) -> Option<(usize, f64, f64)> {
    let parent = sse(y);
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x.cols() {
        let mut vals = x.column(f);
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            let t = w[0] + (w[1] - w[0]) / 2.0;
            let (l, r): (Vec<_>, Vec<_>) = (0..y.len()).partition(|&i| x.get(i, f) <= t);
            let yl: Vec<f64> = l.iter().map(|&i| y[i]).collect();
            let yr: Vec<f64> = r.iter().map(|&i| y[i]).collect();
            let gain = parent - sse(&yl) - sse(&yr);
            if gain > 1e-12 && best.is_none_or(|b| gain > b.2 + 1e-9) {
                best = Some((f, t, gain));
            }
        }
    }
    best
}

fn leaf_values(m: &GbdtModel) -> Vec<Vec<f64>> {
    m.trees
        .iter()
        .map(|t| t.nodes.iter().filter_map(|n| if let Node::Leaf { value, .. } = n { Some(*value) } else { None }).collect())
        .collect()
}

fn one_tree() -> GbdtConfig {
    GbdtConfig { num_rounds: 1, num_leaves: 2, ..GbdtConfig::relaxed() }
}

#[test]
fn first_split_matches_exhaustive_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let n = rng.random_range(2..=64);
        let d = rng.random_range(1..=5);
        let (x, y) = random_data(&mut rng, n, d, case % 2 == 0);
        let oracle = brute_force_split(&x, &y);
        let model = fit(&x, &y, &one_tree()).unwrap();
        match (oracle, model.trees.first().map(|t| &t.nodes[0])) {
            (None, None) => assert_eq!(model.stop_reason, StopReason::NoSplit),
            (Some((f, t, gain)), Some(Node::Split { feature, threshold, gain: g, .. })) => {
                assert!((g - gain).abs() <= 1e-9 * gain.max(1.0), "case {case}: gain {g} vs {gain}");
                assert_eq!((*feature, *threshold), (f, t), "case {case}");
            }
            (o, m) => panic!("case {case}: oracle {o:?}, model {m:?}"),
        }
    }
}

#[test]
fn step_function_is_fit_in_one_split() {
    let x = DenseMatrix::from_vec(10, 1, (0..10).map(|i| i as f64).collect());
    let y: Vec<f64> = (0..10).map(|i| if i < 4 { -1.0 } else { 2.0 }).collect();
    let cfg = GbdtConfig { num_rounds: 1, ..GbdtConfig::relaxed() };
    let model = fit(&x, &y, &cfg).unwrap();
    assert_eq!(model.trees.len(), 1);
    let tree = &model.trees[0];
    assert_eq!(tree.num_leaves(), 2);
    match &tree.nodes[0] {
        Node::Split { feature, threshold, .. } => assert_eq!((*feature, *threshold), (0, 3.5)),
        n => panic!("{n:?}"),
    }
    let pred = model.predict(&x).unwrap();
    let mse: f64 = pred.iter().zip(&y).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / 10.0;
    assert!(mse < 1e-24, "{mse}");
}

#[test]
fn constant_target_grows_no_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, _) = random_data(&mut rng, 200, 3, false);
    let y = vec![0.25; 200];
    let model = fit(&x, &y, &GbdtConfig::default()).unwrap();
    assert!(model.trees.is_empty());
    assert_eq!(model.stop_reason, StopReason::NoSplit);
    for p in model.predict(&x).unwrap() {
        assert_eq!(p, 0.25);
    }
}

#[test]
fn training_loss_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..200 {
        let n = rng.random_range(8..=80);
        let d = rng.random_range(1..=4);
        let (x, y) = random_data(&mut rng, n, d, case % 3 == 0);
        let lr = rng.random_range(0.01..=1.0);
        let cfg = GbdtConfig { num_rounds: 15, num_leaves: rng.random_range(2..=8), learning_rate: lr, ..GbdtConfig::relaxed() };
        let model = fit(&x, &y, &cfg).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let mut prev = y.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
        for (k, &l) in model.train_loss.iter().enumerate() {
            assert!(l <= prev + 1e-12 * prev.max(1.0), "case {case} round {k}: {l} > {prev}");
            prev = l;
        }
    }
}

#[test]
fn bagging_uses_ceil_fraction_of_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (x, y) = random_data(&mut rng, 1001, 4, false);
    let cfg = GbdtConfig { num_rounds: 5, early_stopping_rounds: None, min_data_in_leaf: 5, ..GbdtConfig::default() };
    let model = fit(&x, &y, &cfg).unwrap();
    assert!(!model.trees.is_empty());
    for t in &model.trees {
        assert_eq!(t.leaf_counts().iter().sum::<usize>(), 701);
    }
    let full = GbdtConfig { bagging_fraction: 1.0, ..cfg };
    for t in &fit(&x, &y, &full).unwrap().trees {
        assert_eq!(t.leaf_counts().iter().sum::<usize>(), 1001);
    }
}

#[test]
fn default_config_respects_structure_limits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 3000;
    let x: Vec<f64> = (0..n * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = DenseMatrix::from_vec(n, 6, x);
    let y: Vec<f64> = (0..n).map(|i| x.get(i, 0).sin() + 0.5 * x.get(i, 1) * x.get(i, 2) + rng.random_range(-0.1..0.1)).collect();
    let cfg = GbdtConfig { num_rounds: 40, ..GbdtConfig::default() };
    let model = fit(&x, &y, &cfg).unwrap();
    assert!(model.trees.len() > 10);
    for t in &model.trees {
        assert!(t.num_leaves() <= 38);
        assert!(t.leaf_counts().iter().all(|&c| c >= 50));
    }
    assert!(model.train_loss.last().unwrap() < &model.train_loss[0]);
}

#[test]
fn identical_models_for_identical_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, y) = random_data(&mut rng, 600, 5, false);
    let cfg = GbdtConfig { num_rounds: 30, ..GbdtConfig::default() };
    let a = fit(&x, &y, &cfg).unwrap().to_json().unwrap();
    let b = fit(&x, &y, &cfg).unwrap().to_json().unwrap();
    assert_eq!(a, b);
    let other = GbdtConfig { bagging_seed: 12, ..cfg };
    assert_ne!(a, fit(&x, &y, &other).unwrap().to_json().unwrap());
}

#[test]
fn monotone_transform_gives_identical_trees() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (x, y) = random_data(&mut rng, 400, 3, false);
    let ex = DenseMatrix::from_vec(400, 3, x.as_slice().iter().map(|v| v.exp()).collect());
    let cfg = GbdtConfig { num_rounds: 10, early_stopping_rounds: None, ..GbdtConfig::default() };
    let a = fit(&x, &y, &cfg).unwrap();
    let b = fit(&ex, &y, &cfg).unwrap();
    let shape = |m: &GbdtModel| -> Vec<Vec<(usize, u8)>> {
        m.trees
            .iter()
            .map(|t| {
                t.nodes
                    .iter()
                    .filter_map(|n| match n {
                        Node::Split { feature, threshold_bin, .. } => Some((*feature, *threshold_bin)),
                        Node::Leaf { .. } => None,
                    })
                    .collect()
            })
            .collect()
    };
    assert_eq!(shape(&a), shape(&b));
    assert_eq!(leaf_values(&a), leaf_values(&b));
}

#[test]
fn early_stopping_truncates_to_best_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (x, y) = random_data(&mut rng, 500, 3, false);
    let cfg = GbdtConfig { num_rounds: 300, early_stopping_rounds: Some(5), min_data_in_leaf: 5, learning_rate: 0.3, ..GbdtConfig::default() };
    let model = fit(&x, &y, &cfg).unwrap();
    assert_eq!(model.stop_reason, StopReason::EarlyStopping);
    let best = model.best_iteration.unwrap();
    assert_eq!(model.trees.len(), best);
    let min = model.valid_loss.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(model.valid_loss[best - 1], min);
    assert_eq!(model.valid_loss.len(), best + 5);
}

#[test]
fn bundling_does_not_change_the_model() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 500;
    let mut x = DenseMatrix::<f64>::zeros(n, 6);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let hot = rng.random_range(0..4);
        x.set(i, hot, rng.random_range(1.0..2.0));
        x.set(i, 4, rng.random_range(-1.0..1.0));
        y[i] = hot as f64 + x.get(i, 4) + rng.random_range(-0.1..0.1);
    }
    let cfg = GbdtConfig { num_rounds: 20, early_stopping_rounds: None, min_data_in_leaf: 10, ..GbdtConfig::default() };
    let a = fit(&x, &y, &cfg).unwrap();
    let b = fit(&x, &y, &GbdtConfig { enable_bundle: false, ..cfg.clone() }).unwrap();
    assert!(a.num_bundles < b.num_bundles);
    assert_eq!(leaf_values(&a), leaf_values(&b));
    assert_eq!(a.predict(&x).unwrap(), b.predict(&x).unwrap());
}

#[test]
fn input_errors() {
    let x = DenseMatrix::from_vec(3, 1, vec![1.0, f64::NAN, 2.0]);
    assert!(matches!(fit(&x, &[0.0; 3], &GbdtConfig::relaxed()), Err(GbdtError::NonFiniteInput { row: 1, col: 0 })));
    let x = DenseMatrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]);
    assert!(matches!(fit(&x, &[0.0; 2], &GbdtConfig::relaxed()), Err(GbdtError::TargetLength { .. })));
    assert!(matches!(fit(&x, &[0.0; 3], &GbdtConfig::default()), Err(GbdtError::InsufficientData { .. })));
}

#[test]
fn save_load_predicts_identically() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (x, y) = random_data(&mut rng, 300, 3, false);
    let model = fit(&x, &y, &GbdtConfig { num_rounds: 10, min_data_in_leaf: 5, ..GbdtConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    model.save(&path).unwrap();
    let back = GbdtModel::load(&path).unwrap();
    assert_eq!(back.predict(&x).unwrap(), model.predict(&x).unwrap());
}

proptest! {
    #[test]
    fn batch_prediction_matches_rows(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, y) = random_data(&mut rng, 60, 3, seed % 2 == 0);
        let cfg = GbdtConfig { num_rounds: 5, num_leaves: 4, ..GbdtConfig::relaxed() };
        let model = fit(&x, &y, &cfg).unwrap();
        let batch = model.predict(&x).unwrap();
        for i in 0..60 {
            prop_assert_eq!(batch[i], model.predict_row(x.row(i)).unwrap());
        }
        let x32 = DenseMatrix::from_vec(60, 3, x.as_slice().iter().map(|&v| v as f32).collect());
        prop_assert_eq!(model.predict(&x32).unwrap().len(), 60);
    }
}
