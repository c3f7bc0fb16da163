//! Bottleneck ResNet and a plain convolutional baseline, both ending in a
//! pooled feature vector followed by a scalar regression head.

use crate::error::{NnError, Result};
use crate::graph::{Graph, Var};
use crate::layers::{BatchNorm2dLayer, Conv2dLayer, LinearLayer, Mode};
use crate::param::ParamStore;
use crate::serialize::TensorFile;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roc_core::metrics::Architecture;
use roc_core::Scalar;

pub const EXPANSION: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResidualBlockConfig {
    pub in_planes: usize,
    pub planes: usize,
    pub stride: usize,
}

impl ResidualBlockConfig {
    pub fn out_planes(&self) -> usize {
        self.planes * EXPANSION
    }

    pub fn needs_projection(&self) -> bool {
        self.stride != 1 || self.in_planes != self.out_planes()
    }
}

/// conv1×1 → BN → ReLU → conv3×3(stride) → BN → ReLU → conv1×1 → BN, added to
/// the shortcut and passed through a final ReLU.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub config: ResidualBlockConfig,
    pub conv1: Conv2dLayer,
    pub bn1: BatchNorm2dLayer,
    pub conv2: Conv2dLayer,
    pub bn2: BatchNorm2dLayer,
    pub conv3: Conv2dLayer,
    pub bn3: BatchNorm2dLayer,
    pub projection: Option<(Conv2dLayer, BatchNorm2dLayer)>,
    /// When false the block returns `shortcut(x) + F(x)` without the
    /// output ReLU.
    pub activate_output: bool,
}

impl ResidualBlock {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, config: ResidualBlockConfig) -> Self {
        let ResidualBlockConfig { in_planes, planes, stride } = config;
        let out = config.out_planes();
        let projection = config.needs_projection().then(|| {
            (
                Conv2dLayer::new(store, rng, &format!("{name}.proj"), in_planes, out, 1, stride, 0),
                BatchNorm2dLayer::new(store, &format!("{name}.proj_bn"), out),
            )
        });
        ResidualBlock {
            config,
            conv1: Conv2dLayer::new(store, rng, &format!("{name}.conv1"), in_planes, planes, 1, 1, 0),
            bn1: BatchNorm2dLayer::new(store, &format!("{name}.bn1"), planes),
            conv2: Conv2dLayer::new(store, rng, &format!("{name}.conv2"), planes, planes, 3, stride, 1),
            bn2: BatchNorm2dLayer::new(store, &format!("{name}.bn2"), planes),
            conv3: Conv2dLayer::new(store, rng, &format!("{name}.conv3"), planes, out, 1, 1, 0),
            bn3: BatchNorm2dLayer::new(store, &format!("{name}.bn3"), out),
            projection,
            activate_output: true,
        }
    }

    /// The residual branch `F(x)`.
    pub fn branch<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mode: &mut Mode<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = self.bn1.forward(g, store, mode, h)?;
        let h = g.relu(h)?;
        let h = self.conv2.forward(g, store, h)?;
        let h = self.bn2.forward(g, store, mode, h)?;
        let h = g.relu(h)?;
        let h = self.conv3.forward(g, store, h)?;
        self.bn3.forward(g, store, mode, h)
    }

    /// `activation(shortcut(x) + f)` for an already computed branch output.
    pub fn combine<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mode: &mut Mode<T>, x: Var, f: Var) -> Result<Var> {
        let shortcut = match &self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(g, store, x)?;
                bn.forward(g, store, mode, s)?
            }
            None => x,
        };
        let sum = g.add(shortcut, f)?;
        if self.activate_output {
            g.relu(sum)
        } else {
            Ok(sum)
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mode: &mut Mode<T>, x: Var) -> Result<Var> {
        let f = self.branch(g, store, mode, x)?;
        self.combine(g, store, mode, x, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResNetConfig {
    pub stage_blocks: Vec<usize>,
    pub base_planes: usize,
    pub input_channels: usize,
    pub input_hw: (usize, usize),
    pub feature_dim: usize,
}

impl Default for ResNetConfig {
    /// 16 bottleneck blocks in stages of 3/4/6/3, base width 32, 1×30×30
    /// input, 1024 pooled features.
    fn default() -> Self {
        ResNetConfig { stage_blocks: vec![3, 4, 6, 3], base_planes: 32, input_channels: 1, input_hw: (30, 30), feature_dim: 1024 }
    }
}

impl ResNetConfig {
    /// Width of the last stage: `base · 2^(stages-1) · 4`.
    pub fn final_channels(&self) -> usize {
        self.base_planes * (1 << self.stage_blocks.len().saturating_sub(1)) * EXPANSION
    }

    pub fn total_blocks(&self) -> usize {
        self.stage_blocks.iter().sum()
    }

    /// Stem + three convs per block + linear head; projections not counted.
    pub fn weighted_layers(&self) -> usize {
        1 + 3 * self.total_blocks() + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(NnError::InvalidConfig(m));
        if self.stage_blocks.is_empty() || self.stage_blocks.contains(&0) {
            return bad(format!("every stage needs at least one block: {:?}", self.stage_blocks));
        }
        if self.base_planes == 0 || self.input_channels == 0 {
            return bad("widths must be positive".into());
        }
        if self.final_channels() != self.feature_dim {
            return bad(format!("final stage has {} channels but feature_dim is {}", self.final_channels(), self.feature_dim));
        }
        let mut hw = self.input_hw;
        for _ in 1..self.stage_blocks.len() {
            hw = (hw.0.div_ceil(2), hw.1.div_ceil(2));
        }
        if self.input_hw.0 == 0 || self.input_hw.1 == 0 || hw.0 == 0 || hw.1 == 0 {
            return bad(format!("input {:?} too small", self.input_hw));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ResNet {
    pub config: ResNetConfig,
    pub stem: Conv2dLayer,
    pub stem_bn: BatchNorm2dLayer,
    pub blocks: Vec<ResidualBlock>,
}

impl ResNet {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, config: ResNetConfig) -> Result<Self> {
        config.validate()?;
        let stem = Conv2dLayer::new(store, rng, "stem", config.input_channels, config.base_planes, 3, 1, 1);
        let stem_bn = BatchNorm2dLayer::new(store, "stem_bn", config.base_planes);
        let mut blocks = Vec::new();
        let mut in_planes = config.base_planes;
        for (s, &n) in config.stage_blocks.iter().enumerate() {
            let planes = config.base_planes << s;
            for b in 0..n {
                let stride = if s > 0 && b == 0 { 2 } else { 1 };
                let cfg = ResidualBlockConfig { in_planes, planes, stride };
                blocks.push(ResidualBlock::new(store, rng, &format!("stage{}.block{}", s + 1, b + 1), cfg));
                in_planes = cfg.out_planes();
            }
        }
        Ok(ResNet { config, stem, stem_bn, blocks })
    }

    fn features<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mode: &mut Mode<T>, x: Var) -> Result<Var> {
        let h = self.stem.forward(g, store, x)?;
        let h = self.stem_bn.forward(g, store, mode, h)?;
        let mut h = g.relu(h)?;
        for block in &self.blocks {
            h = block.forward(g, store, mode, h)?;
        }
        g.global_avg_pool(h)
    }
}

pub const PLAIN_CHANNELS: [usize; 3] = [16, 32, 64];

/// Three conv-BN-ReLU stages (the first two max-pooled), global average
/// pooling and a linear projection to the feature width. No shortcuts.
#[derive(Debug, Clone)]
pub struct PlainCnn {
    pub convs: Vec<(Conv2dLayer, BatchNorm2dLayer)>,
    pub projection: LinearLayer,
    pub input_channels: usize,
}

impl PlainCnn {
    fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, input_channels: usize, feature_dim: usize) -> Self {
        let mut convs = Vec::new();
        let mut c_in = input_channels;
        for (i, &c) in PLAIN_CHANNELS.iter().enumerate() {
            convs.push((
                Conv2dLayer::new(store, rng, &format!("conv{}", i + 1), c_in, c, 3, 1, 1),
                BatchNorm2dLayer::new(store, &format!("bn{}", i + 1), c),
            ));
            c_in = c;
        }
        let projection = LinearLayer::new(store, rng, "feature", c_in, feature_dim);
        PlainCnn { convs, projection, input_channels }
    }

    fn features<T: Scalar>(&self, g: &mut Graph<T>, store: &ParamStore<T>, mode: &mut Mode<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, (conv, bn)) in self.convs.iter().enumerate() {
            h = conv.forward(g, store, h)?;
            h = bn.forward(g, store, mode, h)?;
            h = g.relu(h)?;
            if i + 1 < self.convs.len() {
                h = g.max_pool2(h)?;
            }
        }
        let pooled = g.global_avg_pool(h)?;
        self.projection.forward(g, store, pooled)
    }
}

#[derive(Debug, Clone)]
pub enum Network {
    Resnet(ResNet),
    Plain(PlainCnn),
}

/// A feature extractor plus scalar head and the parameters they use.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub network: Network,
    pub head: LinearLayer,
    pub store: ParamStore<T>,
    pub feature_dim: usize,
    seed: u64,
}

pub const PLAIN_FEATURE_DIM: usize = 1024;

impl<T: Scalar> Model<T> {
    pub fn resnet(config: ResNetConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feature_dim = config.feature_dim;
        let net = ResNet::new(&mut store, &mut rng, config)?;
        let head = LinearLayer::new(&mut store, &mut rng, "head", feature_dim, 1);
        Ok(Model { network: Network::Resnet(net), head, store, feature_dim, seed })
    }

    pub fn plain_cnn(seed: u64) -> Self {
        Self::plain_cnn_with(1, PLAIN_FEATURE_DIM, seed)
    }

    pub fn plain_cnn_with(input_channels: usize, feature_dim: usize, seed: u64) -> Self {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = PlainCnn::new(&mut store, &mut rng, input_channels, feature_dim);
        let head = LinearLayer::new(&mut store, &mut rng, "head", feature_dim, 1);
        Model { network: Network::Plain(net), head, store, feature_dim, seed }
    }

    pub fn architecture(&self) -> Architecture {
        match self.network {
            Network::Resnet(_) => Architecture::Resnet,
            Network::Plain(_) => Architecture::PlainCnn,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn residual_blocks(&self) -> usize {
        match &self.network {
            Network::Resnet(r) => r.blocks.len(),
            Network::Plain(_) => 0,
        }
    }

    /// Convolutions outside shortcut projections.
    pub fn main_path_convs(&self) -> usize {
        match &self.network {
            Network::Resnet(r) => 1 + 3 * r.blocks.len(),
            Network::Plain(p) => p.convs.len(),
        }
    }

    pub fn projection_convs(&self) -> usize {
        match &self.network {
            Network::Resnet(r) => r.blocks.iter().filter(|b| b.projection.is_some()).count(),
            Network::Plain(_) => 0,
        }
    }

    pub fn linear_layers(&self) -> usize {
        match &self.network {
            Network::Resnet(_) => 1,
            Network::Plain(_) => 2,
        }
    }

    /// Weighted layers on the main path (projections excluded).
    pub fn weighted_layers(&self) -> usize {
        self.main_path_convs() + self.linear_layers()
    }

    /// `[N, C, H, W]` → `[N, feature_dim]`.
    pub fn features(&self, g: &mut Graph<T>, mode: &mut Mode<T>, x: Var) -> Result<Var> {
        match &self.network {
            Network::Resnet(r) => r.features(g, &self.store, mode, x),
            Network::Plain(p) => p.features(g, &self.store, mode, x),
        }
    }

    pub fn head(&self, g: &mut Graph<T>, features: Var) -> Result<Var> {
        self.head.forward(g, &self.store, features)
    }

    /// Returns `(features, head output [N, 1])`.
    pub fn forward(&self, g: &mut Graph<T>, mode: &mut Mode<T>, x: Var) -> Result<(Var, Var)> {
        let f = self.features(g, mode, x)?;
        let y = self.head(g, f)?;
        Ok((f, y))
    }

    fn arch_meta(&self, file: &mut TensorFile<T>) {
        file.set_meta("seed", self.seed.to_string());
        file.set_meta("feature_dim", self.feature_dim.to_string());
        match &self.network {
            Network::Resnet(r) => {
                let c = &r.config;
                file.set_meta("architecture", "resnet");
                let stages: Vec<String> = c.stage_blocks.iter().map(usize::to_string).collect();
                file.set_meta("stage_blocks", stages.join(","));
                file.set_meta("base_planes", c.base_planes.to_string());
                file.set_meta("input_channels", c.input_channels.to_string());
                file.set_meta("input_hw", format!("{},{}", c.input_hw.0, c.input_hw.1));
            }
            Network::Plain(p) => {
                file.set_meta("architecture", "plain_cnn");
                file.set_meta("input_channels", p.input_channels.to_string());
            }
        }
    }

    /// Architecture header plus every parameter and buffer by name.
    pub fn to_tensor_file(&self) -> TensorFile<T> {
        let mut file = TensorFile::new();
        self.arch_meta(&mut file);
        for p in self.store.params() {
            file.push(p.name.clone(), p.value.clone());
        }
        for (name, b) in self.store.buffers() {
            file.push(name.clone(), b.clone());
        }
        file
    }

    pub fn from_tensor_file(file: &TensorFile<T>) -> Result<Self> {
        let fmt = |m: &str| NnError::Format(m.to_string());
        let get = |k: &str| file.meta(k).ok_or_else(|| fmt(&format!("missing metadata {k}")));
        let num = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| fmt(&format!("bad {k}"))) };
        let seed: u64 = get("seed")?.parse().map_err(|_| fmt("bad seed"))?;
        let feature_dim = num("feature_dim")?;
        let mut model = match get("architecture")? {
            "resnet" => {
                let stage_blocks = get("stage_blocks")?
                    .split(',')
                    .map(|s| s.parse().map_err(|_| fmt("bad stage_blocks")))
                    .collect::<Result<Vec<usize>>>()?;
                let hw: Vec<usize> = get("input_hw")?.split(',').filter_map(|s| s.parse().ok()).collect();
                if hw.len() != 2 {
                    return Err(fmt("bad input_hw"));
                }
                let config = ResNetConfig {
                    stage_blocks,
                    base_planes: num("base_planes")?,
                    input_channels: num("input_channels")?,
                    input_hw: (hw[0], hw[1]),
                    feature_dim,
                };
                Model::resnet(config, seed)?
            }
            "plain_cnn" => Model::plain_cnn_with(num("input_channels")?, feature_dim, seed),
            other => return Err(fmt(&format!("unknown architecture {other}"))),
        };
        for p in model.store.params_mut() {
            let t = file.get(&p.name).ok_or_else(|| fmt(&format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(fmt(&format!("tensor {} has shape {:?}", p.name, t.shape())));
            }
            p.value = t.clone();
        }
        for (name, b) in model.store.buffers_mut() {
            let t = file.get(name).ok_or_else(|| fmt(&format!("missing tensor {name}")))?;
            if t.shape() != b.shape() {
                return Err(fmt(&format!("tensor {name} has shape {:?}", t.shape())));
            }
            *b = t.clone();
        }
        Ok(model)
    }
}
