use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roc_core::indicators::FeatureWindow;
use roc_core::metrics::Architecture;
use roc_core::DenseMatrix;
use roc_nn::graph::Graph;
use roc_nn::layers::Mode;
use roc_nn::models::{Model, Network, ResidualBlock, ResidualBlockConfig, ResNetConfig};
use roc_nn::{train, NnError, ParamStore, Tensor, TrainConfig, TrainedModel};

fn windows(n: usize, side: usize, seed: u64) -> Vec<FeatureWindow<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let data: Vec<f64> = (0..side * side).map(|_| rng.random_range(0.0..1.0)).collect();
            let mean = data.iter().sum::<f64>() / data.len() as f64;
            FeatureWindow { matrix: DenseMatrix::from_vec(side, side, data), end_index: i, label: Some(mean) }
        })
        .collect()
}

fn config(batch_size: usize, epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig { batch_size, epochs, seed, ..TrainConfig::default() }
}

#[test]
fn resnet_shapes_and_audit() {
    let model = Model::<f64>::resnet(ResNetConfig::default(), 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..2 * 900).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut g = Graph::new();
    let xv = g.input(Tensor::new(vec![2, 1, 30, 30], x).unwrap());
    let (f, y) = model.forward(&mut g, &mut Mode::Eval, xv).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 1]);
    assert_eq!(g.value(f).shape(), &[2, 1024]);

    assert_eq!(model.residual_blocks(), 16);
    assert_eq!(model.main_path_convs(), 49);
    assert_eq!(model.linear_layers(), 1);
    assert_eq!(model.weighted_layers(), 50);
    assert_eq!(model.projection_convs(), 4);
    let cfg = ResNetConfig::default();
    assert_eq!(cfg.total_blocks(), 16);
    assert_eq!(cfg.weighted_layers(), 50);
    assert_eq!(cfg.final_channels(), 1024);
    let Network::Resnet(net) = &model.network else { panic!("resnet expected") };
    let planes: Vec<usize> = net.blocks.iter().map(|b| b.config.planes).collect();
    assert_eq!(planes, [vec![32; 3], vec![64; 4], vec![128; 6], vec![256; 3]].concat());
    let strided: Vec<usize> = net.blocks.iter().enumerate().filter(|(_, b)| b.config.stride == 2).map(|(i, _)| i).collect();
    assert_eq!(strided, vec![3, 7, 13]);
}

#[test]
fn parameter_count_independent_of_seed() {
    let cfg = ResNetConfig::default();
    let a = Model::<f32>::resnet(cfg.clone(), 1).unwrap();
    let b = Model::<f32>::resnet(cfg, 2).unwrap();
    assert_eq!(a.store.num_scalars(), b.store.num_scalars());
    assert_ne!(a.store.params()[0].value, b.store.params()[0].value);
}

#[test]
fn invalid_resnet_config() {
    let bad_width = ResNetConfig { feature_dim: 2048, ..ResNetConfig::default() };
    assert!(matches!(Model::<f64>::resnet(bad_width, 0), Err(NnError::InvalidConfig(_))));
    let no_stage = ResNetConfig { stage_blocks: vec![], ..ResNetConfig::default() };
    assert!(matches!(no_stage.validate(), Err(NnError::InvalidConfig(_))));
    let empty_stage = ResNetConfig { stage_blocks: vec![3, 0, 6, 3], ..ResNetConfig::default() };
    assert!(matches!(empty_stage.validate(), Err(NnError::InvalidConfig(_))));
}

fn identity_block(store: &mut ParamStore<f64>, name: &str) -> ResidualBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ResidualBlockConfig { in_planes: 8, planes: 2, stride: 1 };
    assert!(!cfg.needs_projection());
    ResidualBlock::new(store, &mut rng, name, cfg)
}

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn projection_rule() {
    assert!(ResidualBlockConfig { in_planes: 32, planes: 32, stride: 1 }.needs_projection());
    assert!(ResidualBlockConfig { in_planes: 128, planes: 32, stride: 2 }.needs_projection());
    assert!(!ResidualBlockConfig { in_planes: 128, planes: 32, stride: 1 }.needs_projection());
}

#[test]
fn zeroed_branch_gives_relu_of_input() {
    let mut store = ParamStore::new();
    let block = identity_block(&mut store, "b");
    store.param_mut(block.bn3.gamma).value.fill(0.0);
    let x = random_input(&[2, 8, 4, 4], 6);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let y = block.forward(&mut g, &store, &mut Mode::train(), xv).unwrap();
    let expect: Vec<f64> = x.data().iter().map(|v| v.max(0.0)).collect();
    assert_eq!(g.value(y).data(), expect.as_slice());
}

#[test]
fn stacked_constant_branches_telescope() {
    let mut store = ParamStore::new();
    let mut b1 = identity_block(&mut store, "b1");
    let mut b2 = identity_block(&mut store, "b2");
    b1.activate_output = false;
    b2.activate_output = false;
    let x = random_input(&[2, 8, 3, 3], 7);
    let r = random_input(&[2, 8, 3, 3], 8);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let mut mode = Mode::Eval;
    let f1 = g.input(r.clone());
    let h = b1.combine(&mut g, &store, &mut mode, xv, f1).unwrap();
    let f2 = g.input(r.clone());
    let out = b2.combine(&mut g, &store, &mut mode, h, f2).unwrap();
    for ((&o, &xi), &ri) in g.value(out).data().iter().zip(x.data()).zip(r.data()) {
        assert!((o - (xi + 2.0 * ri)).abs() < 1e-12);
    }
}

#[test]
fn frozen_branch_passes_gradient_unattenuated() {
    let mut store = ParamStore::new();
    let block = identity_block(&mut store, "b");
    store.param_mut(block.bn3.gamma).value.fill(0.0);
    let x = random_input(&[2, 8, 4, 4], 9);
    let upstream = random_input(&[2, 8, 4, 4], 10);
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let y = block.forward(&mut g, &store, &mut Mode::train(), xv).unwrap();
    let loss = g.weighted_sum(y, upstream.data().to_vec()).unwrap();
    g.backward(loss, &mut store).unwrap();
    let grad = g.grad(xv).unwrap();
    for ((&gx, &u), &xi) in grad.data().iter().zip(upstream.data()).zip(x.data()) {
        assert_eq!(gx, if xi > 0.0 { u } else { 0.0 });
    }
}

#[test]
fn plain_cnn_shapes() {
    let model = Model::<f64>::plain_cnn(3);
    assert_eq!(model.architecture(), Architecture::PlainCnn);
    assert_eq!(model.residual_blocks(), 0);
    assert_eq!(model.projection_convs(), 0);
    let mut g = Graph::new();
    let xv = g.input(random_input(&[3, 1, 30, 30], 11));
    let (f, y) = model.forward(&mut g, &mut Mode::Eval, xv).unwrap();
    assert_eq!(g.value(y).shape(), &[3, 1]);
    assert_eq!(g.value(f).shape(), &[3, 1024]);
}

#[test]
fn one_epoch_runs_two_full_batches() {
    let data = windows(256, 30, 1);
    let trained = train(Model::<f32>::plain_cnn(0), &data, &config(128, 1, 0)).unwrap();
    assert_eq!(trained.steps, 2);
    assert_eq!(trained.loss_history.len(), 1);
    let more = windows(300, 30, 1);
    let trained = train(Model::<f32>::plain_cnn(0), &more, &config(128, 1, 0)).unwrap();
    assert_eq!(trained.steps, 2);
}

#[test]
fn learns_window_mean() {
    let data = windows(256, 12, 2);
    let cfg = TrainConfig { batch_size: 32, epochs: 20, seed: 4, ..TrainConfig::default() };
    let trained = train(Model::<f64>::plain_cnn_with(1, 64, 4), &data, &cfg).unwrap();
    let h = &trained.loss_history;
    assert_eq!(h.len(), 20);
    assert!(h[19] < 0.1 * h[0], "loss history {h:?}");
}

#[test]
fn training_is_deterministic() {
    let data = windows(64, 10, 3);
    let cfg = config(16, 2, 11);
    let a = train(Model::<f64>::plain_cnn_with(1, 32, 5), &data, &cfg).unwrap();
    let b = train(Model::<f64>::plain_cnn_with(1, 32, 5), &data, &cfg).unwrap();
    assert_eq!(a.loss_history, b.loss_history);
    assert_eq!(a.to_tensor_file().to_bytes(), b.to_tensor_file().to_bytes());
    let c = train(Model::<f64>::plain_cnn_with(1, 32, 5), &data, &config(16, 2, 12)).unwrap();
    assert_ne!(a.loss_history, c.loss_history);
}

fn small_trained() -> (TrainedModel<f64>, Vec<FeatureWindow<f64>>) {
    let data = windows(48, 8, 4);
    let cfg = ResNetConfig { stage_blocks: vec![1, 1], base_planes: 4, input_channels: 1, input_hw: (8, 8), feature_dim: 32 };
    let trained = train(Model::<f64>::resnet(cfg, 6).unwrap(), &data, &config(16, 2, 6)).unwrap();
    (trained, data)
}

#[test]
fn inference_contracts() {
    let (trained, data) = small_trained();
    let f1 = trained.extract_features(&data).unwrap();
    let f2 = trained.extract_features(&data).unwrap();
    assert_eq!(f1, f2);
    assert_eq!((f1.rows(), f1.cols()), (48, 32));

    let dup = vec![data[5].clone(), data[5].clone(), data[7].clone()];
    let fd = trained.extract_features(&dup).unwrap();
    assert_eq!(fd.row(0), fd.row(1));

    let pred = trained.predict(&data).unwrap();
    assert_eq!(pred.len(), data.len());
    assert!(pred.iter().all(|p| p.is_finite()));
    let composed = trained.head_apply(&f1).unwrap();
    for (a, b) in pred.iter().zip(&composed) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn save_and_load_round_trip() {
    let (trained, data) = small_trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    trained.save(&path).unwrap();
    let back = TrainedModel::<f64>::load(&path).unwrap();
    assert_eq!(back.loss_history, trained.loss_history);
    assert_eq!(back.predict(&data).unwrap(), trained.predict(&data).unwrap());
    assert_eq!(back.architecture(), Architecture::Resnet);
}

#[test]
fn training_errors() {
    let data = windows(10, 8, 5);
    let err = train(Model::<f64>::plain_cnn_with(1, 8, 0), &data, &config(16, 1, 0)).unwrap_err();
    assert!(matches!(err, NnError::InsufficientData { have: 10, need: 16 }));
    let err = train(Model::<f64>::plain_cnn_with(1, 8, 0), &data, &config(1, 1, 0)).unwrap_err();
    assert!(matches!(err, NnError::InvalidConfig(_)));

    let mut huge = windows(8, 8, 6);
    for w in &mut huge {
        for i in 0..8 {
            w.matrix.row_mut(i).fill(f64::MAX);
        }
    }
    let err = train(Model::<f64>::plain_cnn_with(1, 8, 0), &huge, &config(4, 1, 0)).unwrap_err();
    assert!(matches!(err, NnError::NonFiniteLoss { epoch: 1, batch: 1 }), "{err:?}");
}
