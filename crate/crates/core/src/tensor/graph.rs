use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{Error, Result};
use crate::filter;

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How batch normalization derives its statistics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// Per-channel batch statistics in training, running statistics in evaluation.
    #[default]
    Batch,
    /// Per-sample, per-channel statistics in both training and evaluation.
    Instance,
}

/// Per-channel batch statistics observed during a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { x: Var, w: Var, b: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64>, group: BnGroup },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: f64 },
    Sigmoid { x: Var },
    Upsample2x { x: Var },
    Concat { a: Var, b: Var },
    SliceChannels { x: Var, start: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Div { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    AddScalar { x: Var },
    Abs { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    Blur { x: Var, taps: Rc<[f64]> },
    PixelFilter { img: Var, kernels: Var, k: usize },
    Fusion { i1: Var, i2: Var, f: Var, k: usize },
}

/// Statistics group of a batch-norm node: which elements shared a mean/variance.
#[derive(Debug, Clone, Copy)]
enum BnGroup {
    /// Per channel across the batch.
    Channel,
    /// Per sample and channel.
    Instance,
    /// Frozen running statistics: the op is affine in `x`.
    Fixed,
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of recorded operations supporting reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is always topologically sorted.
/// Every op validates its operands and rejects non-finite results.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call, if any reached `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Zero-padded ("same") 2-D cross-correlation with stride 1 or 2.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let [n, cin, h, wd] = self.value(x).nchw()?;
        let wdims = self.value(w).dims().to_vec();
        let [cout, wcin, k, k2] = match *wdims.as_slice() {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(Error::shape("conv2d", format!("weight must be rank 4, got {wdims:?}"))),
        };
        if wcin != cin || k != k2 {
            return Err(Error::shape("conv2d", format!("input {:?} vs weight {wdims:?}", self.value(x).dims())));
        }
        if k % 2 == 0 {
            return Err(Error::InvalidArgument(format!("conv2d kernel size {k} must be odd")));
        }
        if self.value(b).dims() != [cout] {
            return Err(Error::shape("conv2d", format!("bias {:?} vs {cout} outputs", self.value(b).dims())));
        }
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidArgument(format!("conv2d stride {stride} not in {{1, 2}}")));
        }
        let geom = ConvGeom { n, cin, h, w: wd, cout, k, stride, pad: k / 2 };
        let (ho, wo) = geom.out_hw();
        let data = kernels::conv2d_forward(&geom, self.value(x).data(), self.value(w).data(), self.value(b).data());
        let out = Tensor::new(vec![n, cout, ho, wo], data)?;
        self.push("conv2d", out, Op::Conv2d { x, w, b, geom }, &[x, w, b])
    }

    /// Batch normalization over an N×C×H×W input.
    ///
    /// In training mode (`running == None`) returns the batch statistics so the caller can
    /// update its running buffers; with `Some((mean, var))` the frozen statistics are used.
    /// `NormMode::Instance` ignores `running` and always normalizes each sample separately.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        mode: NormMode,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchNormStats>)> {
        let [n, c, h, w] = self.value(x).nchw()?;
        if self.value(gamma).dims() != [c] || self.value(beta).dims() != [c] {
            return Err(Error::shape("batch_norm", format!("affine params must have {c} channels")));
        }
        if n * h * w == 0 {
            return Err(Error::shape("batch_norm", "zero-size channel"));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("batch_norm eps {eps} must be non-negative")));
        }
        let hw = h * w;
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();

        // mean / variance per (sample, channel) slot
        let mut mean = vec![0.0; n * c];
        let mut var = vec![0.0; n * c];
        let group;
        let mut stats = None;
        match (mode, running) {
            (NormMode::Instance, _) => {
                group = BnGroup::Instance;
                for s in 0..n * c {
                    let plane = &xd[s * hw..(s + 1) * hw];
                    let m = plane.iter().sum::<f64>() / hw as f64;
                    mean[s] = m;
                    var[s] = plane.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / hw as f64;
                }
            }
            (NormMode::Batch, None) => {
                group = BnGroup::Channel;
                let count = n * hw;
                let mut cm = vec![0.0; c];
                let mut cv = vec![0.0; c];
                for ch in 0..c {
                    let mut acc = 0.0;
                    for b in 0..n {
                        acc += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw].iter().sum::<f64>();
                    }
                    let m = acc / count as f64;
                    let mut sq = 0.0;
                    for b in 0..n {
                        sq += xd[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                            .iter()
                            .map(|v| (v - m) * (v - m))
                            .sum::<f64>();
                    }
                    cm[ch] = m;
                    cv[ch] = sq / count as f64;
                }
                for b in 0..n {
                    mean[b * c..(b + 1) * c].copy_from_slice(&cm);
                    var[b * c..(b + 1) * c].copy_from_slice(&cv);
                }
                stats = Some(BatchNormStats { mean: cm, var: cv, count });
            }
            (NormMode::Batch, Some((rm, rv))) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::shape("batch_norm", "running statistics length"));
                }
                group = BnGroup::Fixed;
                for b in 0..n {
                    mean[b * c..(b + 1) * c].copy_from_slice(rm);
                    var[b * c..(b + 1) * c].copy_from_slice(rv);
                }
            }
        }

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for s in 0..n * c {
            let ch = s % c;
            for i in s * hw..(s + 1) * hw {
                let xh = (xd[i] - mean[s]) * inv_std[s];
                xhat[i] = xh;
                out[i] = gd[ch] * xh + bd[ch];
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let v = self.push("batch_norm", value, Op::BatchNorm { x, gamma, beta, xhat, inv_std, group }, &[x, gamma, beta])?;
        Ok((v, stats))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu { x }, &[x])
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", out, Op::LeakyRelu { x, slope }, &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push("sigmoid", out, Op::Sigmoid { x }, &[x])
    }

    /// Bilinear ×2 upsampling with aligned corners.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw()?;
        if h == 0 || w == 0 {
            return Err(Error::shape("upsample2x", "empty spatial extent"));
        }
        let data = kernels::upsample2x_forward(n * c, h, w, self.value(x).data());
        let out = Tensor::new(vec![n, c, 2 * h, 2 * w], data)?;
        self.push("upsample2x", out, Op::Upsample2x { x }, &[x])
    }

    /// Channel concatenation; `a`'s channels come first.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, ca, h, w] = self.value(a).nchw()?;
        let [nb, cb, hb, wb] = self.value(b).nchw()?;
        if (n, h, w) != (nb, hb, wb) {
            return Err(Error::shape(
                "concat",
                format!("{:?} vs {:?}", self.value(a).dims(), self.value(b).dims()),
            ));
        }
        let hw = h * w;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(n * (ca + cb) * hw);
        for s in 0..n {
            data.extend_from_slice(&ad[s * ca * hw..(s + 1) * ca * hw]);
            data.extend_from_slice(&bd[s * cb * hw..(s + 1) * cb * hw]);
        }
        let out = Tensor::new(vec![n, ca + cb, h, w], data)?;
        self.push("concat", out, Op::Concat { a, b }, &[a, b])
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let out = self.value(x).slice_channels(start, len)?;
        self.push("slice_channels", out, Op::SliceChannels { x, start }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push("add", out, Op::Add { a, b }, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push("sub", out, Op::Sub { a, b }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push("mul", out, Op::Mul { a, b }, &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        self.push("div", out, Op::Div { a, b }, &[a, b])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        self.push("scale", out, Op::Scale { x, c }, &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + c);
        self.push("add_scalar", out, Op::AddScalar { x }, &[x])
    }

    /// Elementwise |x|; the subgradient at 0 is taken as 0.
    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(f64::abs);
        self.push("abs", out, Op::Abs { x }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum { x }, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        if self.value(x).is_empty() {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let out = Tensor::scalar(self.value(x).mean());
        self.push("mean", out, Op::Mean { x }, &[x])
    }

    /// Valid-mode separable blur of every plane with the symmetric 1-D window `taps`.
    pub fn blur_valid(&mut self, x: Var, taps: Rc<[f64]>) -> Result<Var> {
        let [n, c, h, w] = self.value(x).nchw()?;
        let k = taps.len();
        if k == 0 || k > h || k > w {
            return Err(Error::shape("blur_valid", format!("window {k} larger than image {h}×{w}")));
        }
        let data = kernels::blur_valid_forward(n * c, h, w, &taps, self.value(x).data());
        let out = Tensor::new(vec![n, c, h + 1 - k, w + 1 - k], data)?;
        self.push("blur_valid", out, Op::Blur { x, taps }, &[x])
    }

    /// Pixel-adaptive filtering of `img` by a per-pixel kernel field.
    pub fn pixel_filter(&mut self, img: Var, kernels: Var, k: usize) -> Result<Var> {
        let out = filter::apply_pixelwise_filter(self.value(img), self.value(kernels), k)?;
        self.push("pixel_filter", out, Op::PixelFilter { img, kernels, k }, &[img, kernels])
    }

    /// Neighborhood-weighted fusion of two candidate images by a per-pixel fusion field.
    pub fn fusion(&mut self, i1: Var, i2: Var, f: Var, k: usize) -> Result<Var> {
        let out = filter::apply_fusion(self.value(i1), self.value(i2), self.value(f), k)?;
        self.push("fusion", out, Op::Fusion { i1, i2, f, k }, &[i1, i2, f])
    }

    /// Back-propagates from a scalar `loss`, replacing any previously stored gradients.
    ///
    /// Contributions from a node used several times are summed.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(Error::NonScalarLoss(lv.dims().to_vec()));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(Error::DetachedGraph);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &gout, &mut grads);
            grads[i] = Some(gout);
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.data();
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, contrib: Vec<f64>| accumulate(grads, v, contrib);
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(geom, val(*x), val(*w), g, (wants(*x), wants(*w), wants(*b)));
                if let Some(d) = dx {
                    acc(*x, d);
                }
                if let Some(d) = dw {
                    acc(*w, d);
                }
                if let Some(d) = db {
                    acc(*b, d);
                }
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, group } => {
                let [n, c, h, w] = node.value.nchw().expect("rank checked at record time");
                let hw = h * w;
                let gd = val(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for s in 0..n * c {
                    let ch = s % c;
                    for j in s * hw..(s + 1) * hw {
                        dgamma[ch] += g[j] * xhat[j];
                        dbeta[ch] += g[j];
                    }
                }
                if wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    match group {
                        BnGroup::Fixed => {
                            for s in 0..n * c {
                                let scale = gd[s % c] * inv_std[s];
                                for j in s * hw..(s + 1) * hw {
                                    dx[j] = g[j] * scale;
                                }
                            }
                        }
                        BnGroup::Instance => {
                            for s in 0..n * c {
                                let range = s * hw..(s + 1) * hw;
                                bn_group_backward(&mut dx, g, xhat, gd[s % c], inv_std[s], &[range]);
                            }
                        }
                        BnGroup::Channel => {
                            for ch in 0..c {
                                let ranges: Vec<_> = (0..n).map(|b| (b * c + ch) * hw..(b * c + ch + 1) * hw).collect();
                                bn_group_backward(&mut dx, g, xhat, gd[ch], inv_std[ch], &ranges);
                            }
                        }
                    }
                    acc(*x, dx);
                }
                if wants(*gamma) {
                    acc(*gamma, dgamma);
                }
                if wants(*beta) {
                    acc(*beta, dbeta);
                }
            }
            Op::Relu { x } => {
                let d = val(*x).iter().zip(g).map(|(&v, &gi)| if v > 0.0 { gi } else { 0.0 }).collect();
                acc(*x, d);
            }
            Op::LeakyRelu { x, slope } => {
                let d = val(*x).iter().zip(g).map(|(&v, &gi)| if v > 0.0 { gi } else { slope * gi }).collect();
                acc(*x, d);
            }
            Op::Sigmoid { x } => {
                let d = node.value.data().iter().zip(g).map(|(&s, &gi)| gi * s * (1.0 - s)).collect();
                acc(*x, d);
            }
            Op::Upsample2x { x } => {
                let [n, c, h, w] = self.nodes[x.0].value.nchw().expect("rank checked");
                acc(*x, kernels::upsample2x_backward(n * c, h, w, g));
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = self.nodes[a.0].value.nchw().expect("rank checked");
                let cb = self.nodes[b.0].value.nchw().expect("rank checked")[1];
                let hw = h * w;
                let (mut da, mut db) = (Vec::with_capacity(n * ca * hw), Vec::with_capacity(n * cb * hw));
                for s in 0..n {
                    let base = s * (ca + cb) * hw;
                    da.extend_from_slice(&g[base..base + ca * hw]);
                    db.extend_from_slice(&g[base + ca * hw..base + (ca + cb) * hw]);
                }
                if wants(*a) {
                    acc(*a, da);
                }
                if wants(*b) {
                    acc(*b, db);
                }
            }
            Op::SliceChannels { x, start } => {
                let [n, c, h, w] = self.nodes[x.0].value.nchw().expect("rank checked");
                let len = node.value.nchw().expect("rank checked")[1];
                let hw = h * w;
                let mut dx = vec![0.0; n * c * hw];
                for s in 0..n {
                    let dst = (s * c + start) * hw;
                    dx[dst..dst + len * hw].copy_from_slice(&g[s * len * hw..(s + 1) * len * hw]);
                }
                acc(*x, dx);
            }
            Op::Add { a, b } => {
                if wants(*a) {
                    acc(*a, g.to_vec());
                }
                if wants(*b) {
                    acc(*b, g.to_vec());
                }
            }
            Op::Sub { a, b } => {
                if wants(*a) {
                    acc(*a, g.to_vec());
                }
                if wants(*b) {
                    acc(*b, g.iter().map(|v| -v).collect());
                }
            }
            Op::Mul { a, b } => {
                if wants(*a) {
                    acc(*a, g.iter().zip(val(*b)).map(|(gi, bv)| gi * bv).collect());
                }
                if wants(*b) {
                    acc(*b, g.iter().zip(val(*a)).map(|(gi, av)| gi * av).collect());
                }
            }
            Op::Div { a, b } => {
                let bv = val(*b);
                if wants(*a) {
                    acc(*a, g.iter().zip(bv).map(|(gi, bv)| gi / bv).collect());
                }
                if wants(*b) {
                    let d = g
                        .iter()
                        .zip(val(*a))
                        .zip(bv)
                        .map(|((gi, av), bv)| -gi * av / (bv * bv))
                        .collect();
                    acc(*b, d);
                }
            }
            Op::Scale { x, c } => acc(*x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar { x } => acc(*x, g.to_vec()),
            Op::Abs { x } => {
                let d = val(*x).iter().zip(g).map(|(&v, &gi)| gi * sign(v)).collect();
                acc(*x, d);
            }
            Op::Sum { x } => acc(*x, vec![g[0]; val(*x).len()]),
            Op::Mean { x } => {
                let n = val(*x).len();
                acc(*x, vec![g[0] / n as f64; n]);
            }
            Op::Blur { x, taps } => {
                let [n, c, h, w] = self.nodes[x.0].value.nchw().expect("rank checked");
                acc(*x, kernels::blur_valid_backward(n * c, h, w, taps, g));
            }
            Op::PixelFilter { img, kernels, k } => {
                let (di, dk) = filter::pixelwise_filter_backward(
                    &self.nodes[img.0].value,
                    &self.nodes[kernels.0].value,
                    *k,
                    g,
                    (wants(*img), wants(*kernels)),
                );
                if let Some(d) = di {
                    acc(*img, d);
                }
                if let Some(d) = dk {
                    acc(*kernels, d);
                }
            }
            Op::Fusion { i1, i2, f, k } => {
                let (d1, d2, df) = filter::fusion_backward(
                    &self.nodes[i1.0].value,
                    &self.nodes[i2.0].value,
                    &self.nodes[f.0].value,
                    *k,
                    g,
                    (wants(*i1), wants(*i2), wants(*f)),
                );
                if let Some(d) = d1 {
                    acc(*i1, d);
                }
                if let Some(d) = d2 {
                    acc(*i2, d);
                }
                if let Some(d) = df {
                    acc(*f, d);
                }
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contrib: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => existing.iter_mut().zip(&contrib).for_each(|(e, c)| *e += c),
        slot @ None => *slot = Some(contrib),
    }
}

/// Gradient of batch standardization for one statistics group spread over `ranges`.
fn bn_group_backward(
    dx: &mut [f64],
    g: &[f64],
    xhat: &[f64],
    gamma: f64,
    inv_std: f64,
    ranges: &[std::ops::Range<usize>],
) {
    let m: usize = ranges.iter().map(|r| r.len()).sum();
    let (mut sum_d, mut sum_dx) = (0.0, 0.0);
    for r in ranges {
        for j in r.clone() {
            let d = g[j] * gamma;
            sum_d += d;
            sum_dx += d * xhat[j];
        }
    }
    let m = m as f64;
    for r in ranges {
        for j in r.clone() {
            let d = g[j] * gamma;
            dx[j] = inv_std / m * (m * d - sum_d - xhat[j] * sum_dx);
        }
    }
}
