use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormStats, Graph, NormMode, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu { slope: f64 },
}

/// Shape of an encoder–decoder network.
///
/// With `depth = 5` and `base_width = 64` this is the 8-block layout: five encoder blocks
/// (64, 128, 256, 512, 512 channels; every block after the first starts with a stride-2
/// conv), three decoder blocks that each upsample ×2 before convolving, skip concatenations
/// `[x6, x4]`, `[x7, x3]`, `[x8, x2]`, a 1×1 output conv and a final ×2 upsample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub convs_per_block: usize,
    pub input_size: usize,
    #[serde(default)]
    pub norm: NormMode,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_eps() -> f64 {
    1e-5
}

fn default_bn_momentum() -> f64 {
    0.1
}

impl UNetConfig {
    /// Full-size configuration: width 64, five levels, three convs per block, 256×256 input.
    pub fn full(in_channels: usize, out_channels: usize) -> Self {
        UNetConfig {
            in_channels,
            out_channels,
            base_width: 64,
            depth: 5,
            convs_per_block: 3,
            input_size: 256,
            norm: NormMode::Batch,
            activation: Activation::Relu,
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
        }
    }

    /// Desk-scale configuration: width 8 at 64×64, same topology.
    pub fn desk(in_channels: usize, out_channels: usize) -> Self {
        UNetConfig { base_width: 8, input_size: 64, ..Self::full(in_channels, out_channels) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if self.base_width == 0 {
            return bad("base_width must be at least 1".into());
        }
        if self.depth < 3 {
            return bad(format!("depth {} < 3 leaves no decoder", self.depth));
        }
        if self.convs_per_block == 0 {
            return bad("convs_per_block must be at least 1".into());
        }
        let div = 1usize << (self.depth - 1);
        if self.input_size == 0 || !self.input_size.is_multiple_of(div) {
            return bad(format!("input_size {} not divisible by 2^(depth-1) = {div}", self.input_size));
        }
        if !(self.bn_eps > 0.0) || !(0.0..=1.0).contains(&self.bn_momentum) {
            return bad("bn_eps must be > 0 and bn_momentum in [0, 1]".into());
        }
        Ok(())
    }

    /// Output width of encoder block `i` (0-based): doubling from `base_width`, capped at 8×.
    pub fn encoder_width(&self, i: usize) -> usize {
        self.base_width << i.min(3)
    }

    fn decoder_count(&self) -> usize {
        self.depth - 2
    }

    /// Spatial extent after each block (encoder, decoder, output), for a square input.
    pub fn block_sizes(&self) -> Vec<usize> {
        let s = self.input_size;
        let mut sizes: Vec<usize> = (0..self.depth).map(|i| s >> i).collect();
        for j in 0..self.decoder_count() {
            sizes.push(s >> (self.depth - 2 - j));
        }
        sizes.push(s);
        sizes
    }
}

#[derive(Clone, Debug, PartialEq)]
struct BnLayer {
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
}

#[derive(Clone, Debug, PartialEq)]
struct ConvLayer {
    weight: usize,
    bias: usize,
    stride: usize,
    bn: Option<BnLayer>,
}

/// Training-mode batch statistics of one normalization layer.
#[derive(Clone, Debug)]
pub struct LayerStats {
    bn: usize,
    stats: BatchNormStats,
}

pub struct UNetOutput {
    pub out: Var,
    /// One entry per block plus the head, in evaluation order.
    pub block_outputs: Vec<Var>,
    pub bn_stats: Vec<LayerStats>,
}

/// A parameterized encoder–decoder network.
#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    cfg: UNetConfig,
    params: ParamStore,
    encoder: Vec<Vec<ConvLayer>>,
    decoder: Vec<Vec<ConvLayer>>,
    head: ConvLayer,
    bns: Vec<BnLayer>,
}

impl UNet {
    /// Builds the network with Kaiming-uniform (fan-in) weights and zero biases.
    pub fn new(cfg: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::default();
        let mut bns = Vec::new();
        let mut block = |params: &mut ParamStore, rng: &mut _, name: &str, cin: usize, cout: usize, first_stride: usize| {
            (0..cfg.convs_per_block)
                .map(|i| {
                    let cin = if i == 0 { cin } else { cout };
                    let stride = if i == 0 { first_stride } else { 1 };
                    let layer = conv_layer(params, rng, &format!("{name}.conv{i}"), cin, cout, 3, stride, true);
                    bns.push(layer.bn.clone().expect("normalized layer"));
                    layer
                })
                .collect::<Vec<_>>()
        };

        let mut encoder = Vec::new();
        let mut cin = cfg.in_channels;
        for i in 0..cfg.depth {
            let cout = cfg.encoder_width(i);
            encoder.push(block(&mut params, rng, &format!("enc{}", i + 1), cin, cout, if i == 0 { 1 } else { 2 }));
            cin = cout;
        }

        let mut decoder = Vec::new();
        let nd = cfg.decoder_count();
        for j in 0..nd {
            let input = if j == 0 { cin } else { cin + cfg.encoder_width(cfg.depth - 1 - j) };
            let cout = if j + 1 == nd { cfg.out_channels } else { cfg.encoder_width(cfg.depth - 2 - j) };
            decoder.push(block(&mut params, rng, &format!("dec{}", cfg.depth + j + 1), input, cout, 1));
            cin = cout;
        }
        let head = conv_layer(&mut params, rng, "head", cin + cfg.encoder_width(1), cfg.out_channels, 1, 1, false);

        Ok(UNet { cfg, params, encoder, decoder, head, bns })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Names of the output head's weight and bias.
    pub fn head_param_names(&self) -> (&str, &str) {
        (&self.params.iter().nth(self.head.weight).unwrap().name, &self.params.iter().nth(self.head.bias).unwrap().name)
    }

    /// Sets the output conv's weights and bias to zero, making the network output zero.
    pub fn zero_head(&mut self) {
        let (w, b) = (self.head.weight, self.head.bias);
        self.params.get_mut(w).data_mut().fill(0.0);
        self.params.get_mut(b).data_mut().fill(0.0);
    }

    /// Replaces every parameter value by `other`'s, which must share this network's layout.
    pub fn load_params(&mut self, other: ParamStore) -> Result<()> {
        if other.len() != self.params.len()
            || other.iter().zip(self.params.iter()).any(|(a, b)| a.name != b.name || a.value.dims() != b.value.dims())
        {
            return Err(Error::shape("UNet::load_params", "parameter table does not match the configuration"));
        }
        self.params = other;
        Ok(())
    }

    fn conv(&self, g: &mut Graph, p: &Bound, layer: &ConvLayer, x: Var, train: bool) -> Result<(Var, Option<LayerStats>)> {
        let y = g.conv2d(x, p.var(layer.weight), p.var(layer.bias), layer.stride)?;
        let Some(bn) = &layer.bn else { return Ok((y, None)) };
        let running = (!train).then(|| (self.params.get(bn.running_mean).data(), self.params.get(bn.running_var).data()));
        let (y, stats) = g.batch_norm(y, p.var(bn.gamma), p.var(bn.beta), self.cfg.bn_eps, self.cfg.norm, running)?;
        let y = match self.cfg.activation {
            Activation::Relu => g.relu(y)?,
            Activation::LeakyRelu { slope } => g.leaky_relu(y, slope)?,
        };
        let idx = self.bns.iter().position(|b| b == bn).expect("layer registered");
        Ok((y, stats.map(|stats| LayerStats { bn: idx, stats })))
    }

    fn block(
        &self,
        g: &mut Graph,
        p: &Bound,
        layers: &[ConvLayer],
        mut x: Var,
        train: bool,
        stats: &mut Vec<LayerStats>,
    ) -> Result<Var> {
        for layer in layers {
            let (y, s) = self.conv(g, p, layer, x, train)?;
            stats.extend(s);
            x = y;
        }
        Ok(x)
    }

    /// Records the forward pass of `x` (N×C_in×S×S) on `g` using parameters bound from
    /// this network's store.
    pub fn forward(&self, g: &mut Graph, p: &Bound, x: Var, train: bool) -> Result<UNetOutput> {
        let [_, c, h, w] = g.value(x).nchw()?;
        if c != self.cfg.in_channels || h != self.cfg.input_size || w != self.cfg.input_size {
            return Err(Error::shape(
                "UNet::forward",
                format!(
                    "expected {}×{s}×{s} input, got {:?}",
                    self.cfg.in_channels,
                    g.value(x).dims(),
                    s = self.cfg.input_size
                ),
            ));
        }
        let mut stats = Vec::new();
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut cur = x;
        for layers in &self.encoder {
            cur = self.block(g, p, layers, cur, train, &mut stats)?;
            skips.push(cur);
        }
        let mut outputs = skips.clone();
        for (j, layers) in self.decoder.iter().enumerate() {
            let input = if j == 0 { cur } else { g.concat(cur, skips[self.cfg.depth - 1 - j])? };
            let up = g.upsample2x(input)?;
            cur = self.block(g, p, layers, up, train, &mut stats)?;
            outputs.push(cur);
        }
        let joined = g.concat(cur, skips[1])?;
        let (head, _) = self.conv(g, p, &self.head, joined, train)?;
        let out = g.upsample2x(head)?;
        outputs.push(out);
        Ok(UNetOutput { out, block_outputs: outputs, bn_stats: stats })
    }

    /// Folds training-mode batch statistics into the running buffers (exponential average,
    /// unbiased variance).
    pub fn update_running_stats(&mut self, stats: &[LayerStats]) {
        let m = self.cfg.bn_momentum;
        for s in stats {
            let bn = &self.bns[s.bn];
            let n = s.stats.count as f64;
            let correction = if s.stats.count > 1 { n / (n - 1.0) } else { 1.0 };
            let rm = self.params.get_mut(bn.running_mean).data_mut();
            for (r, v) in rm.iter_mut().zip(&s.stats.mean) {
                *r = (1.0 - m) * *r + m * v;
            }
            let rv = self.params.get_mut(bn.running_var).data_mut();
            for (r, v) in rv.iter_mut().zip(&s.stats.var) {
                *r = (1.0 - m) * *r + m * v * correction;
            }
        }
    }

    /// Evaluation-mode forward on concrete input, no gradients.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &p, xv, false)?.out;
        Ok(g.value(out).clone())
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_layer(
    params: &mut ParamStore,
    rng: &mut impl Rng,
    name: &str,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    normalized: bool,
) -> ConvLayer {
    let fan_in = (cin * k * k) as f64;
    // ReLU gain √2 for hidden layers, unit gain for the linear head.
    let bound = if normalized { (6.0 / fan_in).sqrt() } else { (3.0 / fan_in).sqrt() };
    let w = Tensor::from_fn(&[cout, cin, k, k], |_| rng.gen_range(-bound..bound) as f32 as f64);
    let weight = params.push(format!("{name}.weight"), w, true);
    let bias = params.push(format!("{name}.bias"), Tensor::zeros(&[cout]), true);
    let bn = normalized.then(|| BnLayer {
        gamma: params.push(format!("{name}.bn.gamma"), Tensor::full(&[cout], 1.0), true),
        beta: params.push(format!("{name}.bn.beta"), Tensor::zeros(&[cout]), true),
        running_mean: params.push(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout]), false),
        running_var: params.push(format!("{name}.bn.running_var"), Tensor::full(&[cout], 1.0), false),
    });
    ConvLayer { weight, bias, stride, bn }
}
