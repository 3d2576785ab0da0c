use rand::Rng;

use super::params::Bound;
use super::unet::{LayerStats, UNet, UNetConfig};
use crate::error::{Error, Result};
use crate::filter::{self, KernelField, Reducer};
use crate::tensor::{Graph, Tensor, Var};

/// Anything that turns a corrupted image and its hole mask into a complete image.
///
/// `img` is N×C×H×W, `mask` N×1×H×W with 1 marking missing pixels; the result has `img`'s
/// shape and finite values.
pub trait GeneratorBranch {
    fn generate(&self, img: &Tensor, mask: &Tensor) -> Result<Tensor>;

    /// Whether the branch's parameters are fixed. Parameter-free branches always are.
    fn is_frozen(&self) -> bool {
        true
    }
}

fn check_mask(img: &Tensor, mask: &Tensor, op: &'static str) -> Result<()> {
    let [n, _, h, w] = img.nchw()?;
    if mask.nchw()? != [n, 1, h, w] {
        return Err(Error::shape(op, format!("mask {:?} vs image {:?}", mask.dims(), img.dims())));
    }
    Ok(())
}

/// Predictive filtering branch: a UNet predicting one K×K kernel per pixel and color channel.
#[derive(Clone, Debug)]
pub struct PfuNet {
    pub net: UNet,
    k: usize,
    frozen: bool,
}

/// Graph handles produced by [`PfuNet::forward`].
pub struct PfuForward {
    pub filtered: Var,
    pub kernels: Var,
    pub bn_stats: Vec<LayerStats>,
}

/// Concrete outputs of the filtering branch.
#[derive(Clone, Debug)]
pub struct PfuOutput {
    pub filtered: Tensor,
    pub kernels: KernelField,
    pub uncertainty: Tensor,
}

impl PfuNet {
    pub fn new(cfg: UNetConfig, k: usize, rng: &mut impl Rng) -> Result<Self> {
        Self::from_unet(UNet::new(cfg, rng)?, k)
    }

    pub fn from_unet(net: UNet, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel size {k} must be odd")));
        }
        if !net.config().out_channels.is_multiple_of(k * k) {
            return Err(Error::shape(
                "PfuNet",
                format!("{} output channels is not a multiple of K² = {}", net.config().out_channels, k * k),
            ));
        }
        Ok(PfuNet { net, k, frozen: false })
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn color_channels(&self) -> usize {
        self.net.config().out_channels / (self.k * self.k)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.net.params().bind(g, !self.frozen)
    }

    pub fn forward(&self, g: &mut Graph, p: &Bound, img: Var, train: bool) -> Result<PfuForward> {
        let c = g.value(img).nchw()?[1];
        if c != self.color_channels() {
            return Err(Error::shape("PfuNet", format!("image has {c} channels, kernels cover {}", self.color_channels())));
        }
        let out = self.net.forward(g, p, img, train)?;
        let filtered = g.pixel_filter(img, out.out, self.k)?;
        Ok(PfuForward { filtered, kernels: out.out, bn_stats: out.bn_stats })
    }

    /// Evaluation-mode filtering result, kernel field and uncertainty map.
    pub fn run(&self, img: &Tensor, reducer: Reducer) -> Result<PfuOutput> {
        let mut g = Graph::new();
        let p = self.net.params().bind(&mut g, false);
        let x = g.constant(img.clone());
        let f = self.forward(&mut g, &p, x, false)?;
        let kernels = KernelField::new(g.value(f.kernels).clone(), self.k)?;
        let uncertainty = filter::compute_uncertainty_map(kernels.tensor(), reducer)?;
        Ok(PfuOutput { filtered: g.value(f.filtered).clone(), kernels, uncertainty })
    }
}

/// Uncertainty-aware fusion branch: a UNet predicting per-pixel fusion weights from
/// `[U, K, Î₁, Î₂]`.
#[derive(Clone, Debug)]
pub struct UafNet {
    pub net: UNet,
    k: usize,
    colors: usize,
}

pub struct UafForward {
    pub fused: Var,
    pub fusion: Var,
    pub bn_stats: Vec<LayerStats>,
}

impl UafNet {
    /// Input channels needed for `c` colors and kernel size `k`: 1 + C·K² + C + C.
    pub fn input_channels(c: usize, k: usize) -> usize {
        1 + c * k * k + 2 * c
    }

    pub fn output_channels(c: usize, k: usize) -> usize {
        2 * c * k * k
    }

    /// Fresh fusion net whose output conv starts as an even blend: weights zero, bias 0.5 on
    /// the center tap of both filters.
    pub fn new(cfg: UNetConfig, k: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut uaf = Self::from_unet(UNet::new(cfg, rng)?, k)?;
        uaf.net.zero_head();
        let bias = uaf.net.head_param_names().1.to_string();
        let idx = uaf.net.params().find(&bias).expect("head bias is registered");
        let (kk, center, colors) = (k * k, (k / 2) * k + k / 2, uaf.colors);
        let data = uaf.net.params_mut().get_mut(idx).data_mut();
        for c in 0..colors {
            data[c * kk + center] = 0.5;
            data[colors * kk + c * kk + center] = 0.5;
        }
        Ok(uaf)
    }

    pub fn from_unet(net: UNet, k: usize) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel size {k} must be odd")));
        }
        let out = net.config().out_channels;
        if !out.is_multiple_of(2 * k * k) {
            return Err(Error::shape("UafNet", format!("{out} output channels is not a multiple of 2K²")));
        }
        let colors = out / (2 * k * k);
        if net.config().in_channels != Self::input_channels(colors, k) {
            return Err(Error::shape(
                "UafNet",
                format!("{} input channels, expected {}", net.config().in_channels, Self::input_channels(colors, k)),
            ));
        }
        Ok(UafNet { net, k, colors })
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn bind(&self, g: &mut Graph, train: bool) -> Bound {
        self.net.params().bind(g, train)
    }

    /// Predicts the fusion field from `[U, K, Î₁, Î₂]` and fuses `Î₁`, `Î₂` with it.
    pub fn forward(&self, g: &mut Graph, p: &Bound, u: Var, kernels: Var, i1: Var, i2: Var, train: bool) -> Result<UafForward> {
        let c = g.value(i1).nchw()?[1];
        let ck = g.value(kernels).nchw()?[1];
        if c != self.colors || ck != self.colors * self.k * self.k || g.value(u).nchw()?[1] != 1 {
            return Err(Error::shape(
                "UafNet",
                format!(
                    "inputs U {:?}, K {:?}, Î₁ {:?} do not match {} colors at K = {}",
                    g.value(u).dims(),
                    g.value(kernels).dims(),
                    g.value(i1).dims(),
                    self.colors,
                    self.k
                ),
            ));
        }
        let x = g.concat(u, kernels)?;
        let x = g.concat(x, i1)?;
        let x = g.concat(x, i2)?;
        let out = self.net.forward(g, p, x, train)?;
        let fused = g.fusion(i1, i2, out.out, self.k)?;
        Ok(UafForward { fused, fusion: out.out, bn_stats: out.bn_stats })
    }

    /// Evaluation-mode fused image and fusion field.
    pub fn run(&self, u: &Tensor, kernels: &Tensor, i1: &Tensor, i2: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let vars = [u, kernels, i1, i2].map(|t| g.constant(t.clone()));
        let f = self.forward(&mut g, &p, vars[0], vars[1], vars[2], vars[3], false)?;
        Ok((g.value(f.fused).clone(), g.value(f.fusion).clone()))
    }
}

/// Small learned inpainter: a UNet over `[image, mask]` with a sigmoid head, composited
/// into the holes only.
#[derive(Clone, Debug)]
pub struct ToyGenerator {
    pub net: UNet,
    frozen: bool,
}

impl ToyGenerator {
    /// `cfg.in_channels` must be the color count plus one mask channel.
    pub fn new(cfg: UNetConfig, rng: &mut impl Rng) -> Result<Self> {
        Self::from_unet(UNet::new(cfg, rng)?)
    }

    pub fn from_unet(net: UNet) -> Result<Self> {
        let cfg = net.config();
        if cfg.in_channels != cfg.out_channels + 1 {
            return Err(Error::shape(
                "ToyGenerator",
                format!("needs in = out + 1 channels, got {} → {}", cfg.in_channels, cfg.out_channels),
            ));
        }
        Ok(ToyGenerator { net, frozen: false })
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.net.params().bind(g, !self.frozen)
    }

    /// Returns `(composited, raw_prediction)`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, img: Var, mask: Var, train: bool) -> Result<(Var, Var, Vec<LayerStats>)> {
        check_mask(g.value(img), g.value(mask), "ToyGenerator")?;
        let c = g.value(img).nchw()?[1];
        let x = g.concat(img, mask)?;
        let out = self.net.forward(g, p, x, train)?;
        let pred = g.sigmoid(out.out)?;
        let mask_c = broadcast_channels(g.value(mask), c)?;
        let keep = g.constant(mask_c.map(|m| 1.0 - m));
        let fill = g.constant(mask_c);
        let kept = g.mul(img, keep)?;
        let filled = g.mul(pred, fill)?;
        let comp = g.add(kept, filled)?;
        Ok((comp, pred, out.bn_stats))
    }

    pub fn raw_prediction(&self, img: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.net.params().bind(&mut g, false);
        let (x, m) = (g.constant(img.clone()), g.constant(mask.clone()));
        let (_, pred, _) = self.forward(&mut g, &p, x, m, false)?;
        Ok(g.value(pred).clone())
    }
}

impl GeneratorBranch for ToyGenerator {
    fn generate(&self, img: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.net.params().bind(&mut g, false);
        let (x, m) = (g.constant(img.clone()), g.constant(mask.clone()));
        let (comp, _, _) = self.forward(&mut g, &p, x, m, false)?;
        Ok(g.value(comp).clone())
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

/// Repeats an N×1×H×W map across `c` channels.
pub fn broadcast_channels(mask: &Tensor, c: usize) -> Result<Tensor> {
    let [n, mc, h, w] = mask.nchw()?;
    if mc != 1 {
        return Err(Error::shape("broadcast_channels", format!("expected one channel, got {mc}")));
    }
    let hw = h * w;
    let mut data = Vec::with_capacity(n * c * hw);
    for b in 0..n {
        for _ in 0..c {
            data.extend_from_slice(&mask.data()[b * hw..(b + 1) * hw]);
        }
    }
    Tensor::new(vec![n, c, h, w], data)
}

/// Training-free generator: Jacobi diffusion of the known pixels into the holes.
#[derive(Clone, Copy, Debug)]
pub struct ClassicalFill {
    pub iterations: usize,
}

impl GeneratorBranch for ClassicalFill {
    fn generate(&self, img: &Tensor, mask: &Tensor) -> Result<Tensor> {
        classical_fill(img, mask, self.iterations)
    }
}

/// Fills masked pixels by repeated 4-neighbor averaging until the largest update falls
/// below 1e-9 or `iterations` sweeps have run. Holes start at the per-channel mean of the
/// known pixels; unmasked pixels are never modified.
pub fn classical_fill(img: &Tensor, mask: &Tensor, iterations: usize) -> Result<Tensor> {
    if iterations == 0 {
        return Err(Error::InvalidArgument("classical_fill needs at least one iteration".into()));
    }
    check_mask(img, mask, "classical_fill")?;
    let [n, c, h, w] = img.nchw()?;
    let hw = h * w;
    let mut out = img.clone();
    for b in 0..n {
        let m = &mask.data()[b * hw..(b + 1) * hw];
        let holes: Vec<usize> = (0..hw).filter(|&p| m[p] > 0.5).collect();
        if holes.is_empty() {
            continue;
        }
        for ch in 0..c {
            let plane = &mut out.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let known: Vec<f64> = (0..hw).filter(|&p| m[p] <= 0.5).map(|p| plane[p]).collect();
            if !known.is_empty() {
                let mean = known.iter().sum::<f64>() / known.len() as f64;
                holes.iter().for_each(|&p| plane[p] = mean);
            }
            let mut next = plane.to_vec();
            for _ in 0..iterations {
                let mut delta: f64 = 0.0;
                for &p in &holes {
                    let (y, x) = (p / w, p % w);
                    let mut acc = 0.0;
                    let mut cnt = 0.0;
                    if y > 0 {
                        acc += plane[p - w];
                        cnt += 1.0;
                    }
                    if y + 1 < h {
                        acc += plane[p + w];
                        cnt += 1.0;
                    }
                    if x > 0 {
                        acc += plane[p - 1];
                        cnt += 1.0;
                    }
                    if x + 1 < w {
                        acc += plane[p + 1];
                        cnt += 1.0;
                    }
                    if cnt > 0.0 {
                        next[p] = acc / cnt;
                        delta = delta.max((next[p] - plane[p]).abs());
                    }
                }
                for &p in &holes {
                    plane[p] = next[p];
                }
                if delta < 1e-9 {
                    break;
                }
            }
        }
    }
    Ok(out)
}
