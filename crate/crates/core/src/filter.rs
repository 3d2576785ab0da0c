//! Pixel-adaptive filtering, uncertainty maps and the two fusion rules.
//!
//! Kernel fields are stored as N×(C·K²)×H×W tensors. Channel `c·K² + (dy+r)·K + (dx+r)`
//! holds the weight that pixel `p` gives to its neighbor `p + (dy, dx)` in color channel
//! `c`, where `r = (K−1)/2`. Fusion fields prepend a factor of two: the first `C·K²`
//! channels weight the filtering result, the next `C·K²` the generated image. Pixels outside
//! the image read as zero.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_kernel_size(k: usize) -> Result<usize> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("kernel size {k} must be odd")));
    }
    Ok(k / 2)
}

/// Adds `weights(y, x) · src(y + dy, x + dx)` into `dst` for every in-bounds pixel.
#[inline]
fn shifted_madd(dst: &mut [f64], weights: &[f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize) {
    let (ylo, yhi) = (0isize.max(-dy) as usize, (h as isize).min(h as isize - dy).max(0) as usize);
    let (xlo, xhi) = (0isize.max(-dx) as usize, (w as isize).min(w as isize - dx).max(0) as usize);
    if xlo >= xhi {
        return;
    }
    for y in ylo..yhi {
        let row = y * w;
        let srow = (y as isize + dy) as usize * w;
        let d = &mut dst[row + xlo..row + xhi];
        let wt = &weights[row + xlo..row + xhi];
        let s = &src[(srow as isize + xlo as isize + dx) as usize..(srow as isize + xhi as isize + dx) as usize];
        for ((o, a), b) in d.iter_mut().zip(wt).zip(s) {
            *o += a * b;
        }
    }
}

/// Product `g(y, x) · src(y + dy, x + dx)`, zero where the neighbor is outside.
fn shifted_product(out: &mut [f64], g: &[f64], src: &[f64], h: usize, w: usize, dy: isize, dx: isize) {
    out.fill(0.0);
    let (ylo, yhi) = (0isize.max(-dy) as usize, (h as isize).min(h as isize - dy).max(0) as usize);
    let (xlo, xhi) = (0isize.max(-dx) as usize, (w as isize).min(w as isize - dx).max(0) as usize);
    if xlo >= xhi {
        return;
    }
    for y in ylo..yhi {
        let row = y * w;
        let srow = ((y as isize + dy) as usize * w) as isize;
        for x in xlo..xhi {
            out[row + x] = g[row + x] * src[(srow + x as isize + dx) as usize];
        }
    }
}

/// Scatters `weights(y, x) · g(y, x)` back to `dst(y + dy, x + dx)`.
fn shifted_scatter(dst: &mut [f64], weights: &[f64], g: &[f64], h: usize, w: usize, dy: isize, dx: isize) {
    let (ylo, yhi) = (0isize.max(-dy) as usize, (h as isize).min(h as isize - dy).max(0) as usize);
    let (xlo, xhi) = (0isize.max(-dx) as usize, (w as isize).min(w as isize - dx).max(0) as usize);
    if xlo >= xhi {
        return;
    }
    for y in ylo..yhi {
        let row = y * w;
        let drow = ((y as isize + dy) as usize * w) as isize;
        for x in xlo..xhi {
            dst[(drow + x as isize + dx) as usize] += weights[row + x] * g[row + x];
        }
    }
}

fn field_geometry(img: &Tensor, field: &Tensor, k: usize, factor: usize, op: &'static str) -> Result<[usize; 4]> {
    check_kernel_size(k)?;
    let [n, c, h, w] = img.nchw()?;
    let [fn_, fc, fh, fw] = field.nchw()?;
    if (fn_, fh, fw) != (n, h, w) || fc != factor * c * k * k {
        return Err(Error::shape(
            op,
            format!("image {:?} needs a field of {} channels, got {:?}", img.dims(), factor * c * k * k, field.dims()),
        ));
    }
    Ok([n, c, h, w])
}

/// Accumulates the filtering of `src` (N×C×H×W) by `field` channels starting at `field_offset`.
fn filter_into(out: &mut [f64], src: &Tensor, field: &Tensor, field_offset: usize, k: usize) {
    let [n, c, h, w] = src.nchw().expect("validated");
    let fc = field.nchw().expect("validated")[1];
    let r = (k / 2) as isize;
    let hw = h * w;
    for b in 0..n {
        for ch in 0..c {
            let s = &src.data()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            let o = &mut out[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let fch = field_offset + ch * k * k + ky * k + kx;
                    let wt = &field.data()[(b * fc + fch) * hw..(b * fc + fch + 1) * hw];
                    shifted_madd(o, wt, s, h, w, ky as isize - r, kx as isize - r);
                }
            }
        }
    }
}

/// Backward of [`filter_into`]: gradients for the source image and the used field channels.
fn filter_backward_into(
    dsrc: Option<&mut [f64]>,
    dfield: Option<&mut [f64]>,
    src: &Tensor,
    field: &Tensor,
    field_offset: usize,
    k: usize,
    g: &[f64],
) {
    let [n, c, h, w] = src.nchw().expect("validated");
    let fc = field.nchw().expect("validated")[1];
    let r = (k / 2) as isize;
    let hw = h * w;
    let mut dsrc = dsrc;
    let mut dfield = dfield;
    for b in 0..n {
        for ch in 0..c {
            let plane = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            let s = &src.data()[plane.clone()];
            let gp = &g[plane.clone()];
            for ky in 0..k {
                for kx in 0..k {
                    let (dy, dx) = (ky as isize - r, kx as isize - r);
                    let fch = field_offset + ch * k * k + ky * k + kx;
                    let frange = (b * fc + fch) * hw..(b * fc + fch + 1) * hw;
                    if let Some(ds) = dsrc.as_deref_mut() {
                        shifted_scatter(&mut ds[plane.clone()], &field.data()[frange.clone()], gp, h, w, dy, dx);
                    }
                    if let Some(df) = dfield.as_deref_mut() {
                        shifted_product(&mut df[frange], gp, s, h, w, dy, dx);
                    }
                }
            }
        }
    }
}

/// Filters each pixel of `img` (N×C×H×W) with its own K×K kernel per color channel.
pub fn apply_pixelwise_filter(img: &Tensor, kernels: &Tensor, k: usize) -> Result<Tensor> {
    let [n, c, h, w] = field_geometry(img, kernels, k, 1, "apply_pixelwise_filter")?;
    let mut out = vec![0.0; n * c * h * w];
    filter_into(&mut out, img, kernels, 0, k);
    Tensor::new(img.dims().to_vec(), out)
}

pub(crate) fn pixelwise_filter_backward(
    img: &Tensor,
    kernels: &Tensor,
    k: usize,
    g: &[f64],
    want: (bool, bool),
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let mut di = want.0.then(|| vec![0.0; img.len()]);
    let mut dk = want.1.then(|| vec![0.0; kernels.len()]);
    filter_backward_into(di.as_deref_mut(), dk.as_deref_mut(), img, kernels, 0, k, g);
    (di, dk)
}

/// Fuses two candidate images with per-pixel K×K×2 weights per color channel.
pub fn apply_fusion(i1: &Tensor, i2: &Tensor, fusion: &Tensor, k: usize) -> Result<Tensor> {
    if i1.dims() != i2.dims() {
        return Err(Error::shape("apply_fusion", format!("{:?} vs {:?}", i1.dims(), i2.dims())));
    }
    let [n, c, h, w] = field_geometry(i1, fusion, k, 2, "apply_fusion")?;
    let mut out = vec![0.0; n * c * h * w];
    filter_into(&mut out, i1, fusion, 0, k);
    filter_into(&mut out, i2, fusion, c * k * k, k);
    Tensor::new(i1.dims().to_vec(), out)
}

#[allow(clippy::type_complexity)]
pub(crate) fn fusion_backward(
    i1: &Tensor,
    i2: &Tensor,
    fusion: &Tensor,
    k: usize,
    g: &[f64],
    want: (bool, bool, bool),
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let c = i1.nchw().expect("validated")[1];
    let mut d1 = want.0.then(|| vec![0.0; i1.len()]);
    let mut d2 = want.1.then(|| vec![0.0; i2.len()]);
    let mut df = want.2.then(|| vec![0.0; fusion.len()]);
    filter_backward_into(d1.as_deref_mut(), df.as_deref_mut(), i1, fusion, 0, k, g);
    filter_backward_into(d2.as_deref_mut(), df.as_deref_mut(), i2, fusion, c * k * k, k, g);
    (d1, d2, df)
}

/// Kernel field whose every kernel passes its center pixel through unchanged.
pub fn identity_kernel_field(h: usize, w: usize, c: usize, k: usize) -> Result<Tensor> {
    let r = check_kernel_size(k)?;
    let center = r * k + r;
    let mut t = Tensor::zeros(&[1, c * k * k, h, w]);
    let hw = h * w;
    for ch in 0..c {
        let idx = ch * k * k + center;
        t.data_mut()[idx * hw..(idx + 1) * hw].fill(1.0);
    }
    Ok(t)
}

/// Per-pixel reduction applied to a kernel before normalization.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Reducer {
    #[default]
    Avg,
    Max,
    L1,
    L2,
}

impl Reducer {
    pub const ALL: [Reducer; 4] = [Reducer::Avg, Reducer::Max, Reducer::L1, Reducer::L2];

    pub fn name(self) -> &'static str {
        match self {
            Reducer::Avg => "avg",
            Reducer::Max => "max",
            Reducer::L1 => "l1",
            Reducer::L2 => "l2",
        }
    }

    fn reduce(self, weights: impl Iterator<Item = f64>) -> f64 {
        match self {
            Reducer::Avg => {
                let (s, n) = weights.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
                s / n as f64
            }
            Reducer::Max => weights.fold(f64::NEG_INFINITY, f64::max),
            Reducer::L1 => weights.map(f64::abs).sum(),
            Reducer::L2 => weights.map(|v| v * v).sum::<f64>().sqrt(),
        }
    }
}

impl fmt::Display for Reducer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Reducer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avg" | "mean" => Ok(Reducer::Avg),
            "max" => Ok(Reducer::Max),
            "l1" => Ok(Reducer::L1),
            "l2" => Ok(Reducer::L2),
            other => Err(Error::InvalidArgument(format!("unknown reducer `{other}` (expected avg, max, l1 or l2)"))),
        }
    }
}

/// Raw per-pixel reducer scores, N×1×H×W, before normalization.
pub fn raw_uncertainty_scores(kernels: &Tensor, reducer: Reducer) -> Result<Tensor> {
    let [n, ck, h, w] = kernels.nchw()?;
    if ck == 0 {
        return Err(Error::shape("uncertainty", "kernel field has no channels"));
    }
    let hw = h * w;
    let d = kernels.data();
    let mut out = vec![0.0; n * hw];
    for b in 0..n {
        for p in 0..hw {
            out[b * hw + p] = reducer.reduce((0..ck).map(|ch| d[(b * ck + ch) * hw + p]));
        }
    }
    Tensor::new(vec![n, 1, h, w], out)
}

/// Uncertainty map in [0, 1]: reducer scores min-max normalized per image.
///
/// An image whose scores are all equal maps to zero everywhere.
pub fn compute_uncertainty_map(kernels: &Tensor, reducer: Reducer) -> Result<Tensor> {
    let mut t = raw_uncertainty_scores(kernels, reducer)?;
    let [n, _, h, w] = t.nchw()?;
    let hw = h * w;
    for plane in t.data_mut().chunks_mut(hw).take(n) {
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            plane.iter_mut().for_each(|v| *v = ((*v - lo) / (hi - lo)).clamp(0.0, 1.0));
        } else {
            plane.fill(0.0);
        }
    }
    Ok(t)
}

/// `(1 − U)⊙i1 + U⊙i2`, with the N×1×H×W map broadcast over channels.
pub fn naive_fuse(i1: &Tensor, i2: &Tensor, u: &Tensor) -> Result<Tensor> {
    if i1.dims() != i2.dims() {
        return Err(Error::shape("naive_fuse", format!("{:?} vs {:?}", i1.dims(), i2.dims())));
    }
    let [n, c, h, w] = i1.nchw()?;
    let [un, uc, uh, uw] = u.nchw()?;
    if (un, uc, uh, uw) != (n, 1, h, w) {
        return Err(Error::shape("naive_fuse", format!("map {:?} vs image {:?}", u.dims(), i1.dims())));
    }
    let hw = h * w;
    let mut out = vec![0.0; i1.len()];
    for b in 0..n {
        let um = &u.data()[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let base = (b * c + ch) * hw;
            for p in 0..hw {
                let t = um[p];
                out[base + p] = (1.0 - t) * i1.data()[base + p] + t * i2.data()[base + p];
            }
        }
    }
    Tensor::new(i1.dims().to_vec(), out)
}

/// Fusion field that puts weight `(1 − U, U)` on the center pixel of each channel.
pub fn center_fusion_field(u: &Tensor, c: usize, k: usize) -> Result<Tensor> {
    let r = check_kernel_size(k)?;
    let [n, uc, h, w] = u.nchw()?;
    if uc != 1 {
        return Err(Error::shape("center_fusion_field", format!("map must have one channel, got {uc}")));
    }
    let hw = h * w;
    let fc = 2 * c * k * k;
    let mut f = Tensor::zeros(&[n, fc, h, w]);
    for b in 0..n {
        let um = &u.data()[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let c1 = ch * k * k + r * k + r;
            let c2 = c * k * k + c1;
            for p in 0..hw {
                f.data_mut()[(b * fc + c1) * hw + p] = 1.0 - um[p];
                f.data_mut()[(b * fc + c2) * hw + p] = um[p];
            }
        }
    }
    Ok(f)
}

/// A validated kernel field with its kernel size.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelField {
    field: Tensor,
    k: usize,
}

impl KernelField {
    pub fn new(field: Tensor, k: usize) -> Result<Self> {
        check_kernel_size(k)?;
        let c = field.nchw()?[1];
        if c % (k * k) != 0 {
            return Err(Error::shape("KernelField", format!("{c} channels not divisible by {}", k * k)));
        }
        Ok(KernelField { field, k })
    }

    pub fn identity(h: usize, w: usize, c: usize, k: usize) -> Result<Self> {
        Ok(KernelField { field: identity_kernel_field(h, w, c, k)?, k })
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn color_channels(&self) -> usize {
        self.field.dims()[self.field.dims().len() - 3] / (self.k * self.k)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.field
    }

    pub fn into_tensor(self) -> Tensor {
        self.field
    }

    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        apply_pixelwise_filter(img, &self.field, self.k)
    }

    pub fn uncertainty(&self, reducer: Reducer) -> Result<UncertaintyMap> {
        Ok(UncertaintyMap { map: compute_uncertainty_map(&self.field, reducer)?, reducer })
    }

    /// The K×K kernel of pixel (y, x), color channel `c`, of sample `n`, row-major.
    pub fn kernel_at(&self, n: usize, c: usize, y: usize, x: usize) -> Result<Vec<f64>> {
        let [bn, fc, h, w] = self.field.nchw()?;
        if n >= bn || y >= h || x >= w || c >= fc / (self.k * self.k) {
            return Err(Error::InvalidArgument(format!("pixel ({n}, {c}, {y}, {x}) outside field")));
        }
        let kk = self.k * self.k;
        Ok((0..kk).map(|i| self.field.data()[((n * fc + c * kk + i) * h + y) * w + x]).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyMap {
    map: Tensor,
    reducer: Reducer,
}

impl UncertaintyMap {
    pub fn reducer(&self) -> Reducer {
        self.reducer
    }

    pub fn tensor(&self) -> &Tensor {
        &self.map
    }

    pub fn into_tensor(self) -> Tensor {
        self.map
    }
}

/// A validated fusion field with its kernel size.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionField {
    field: Tensor,
    k: usize,
}

impl FusionField {
    pub fn new(field: Tensor, k: usize) -> Result<Self> {
        check_kernel_size(k)?;
        let c = field.nchw()?[1];
        if c % (2 * k * k) != 0 {
            return Err(Error::shape("FusionField", format!("{c} channels not divisible by {}", 2 * k * k)));
        }
        Ok(FusionField { field, k })
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn tensor(&self) -> &Tensor {
        &self.field
    }

    pub fn apply(&self, i1: &Tensor, i2: &Tensor) -> Result<Tensor> {
        apply_fusion(i1, i2, &self.field, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(dims: &[usize]) -> Tensor {
        Tensor::from_fn(dims, |i| ((i * 7919) % 97) as f64 / 97.0)
    }

    #[test]
    fn identity_field_reproduces_image() {
        let img = ramp(&[1, 3, 5, 6]);
        let kf = identity_kernel_field(5, 6, 3, 3).unwrap();
        assert_eq!(apply_pixelwise_filter(&img, &kf, 3).unwrap(), img);
        let kf5 = identity_kernel_field(5, 6, 3, 5).unwrap();
        assert_eq!(apply_pixelwise_filter(&img, &kf5, 5).unwrap(), img);
    }

    #[test]
    fn uniform_kernel_on_constant_interior() {
        let img = Tensor::full(&[1, 1, 5, 5], 0.7);
        let kf = Tensor::full(&[1, 9, 5, 5], 1.0 / 9.0);
        let out = apply_pixelwise_filter(&img, &kf, 3).unwrap();
        for y in 1..4 {
            for x in 1..4 {
                assert!((out.data()[y * 5 + x] - 0.7).abs() < 1e-15);
            }
        }
        // corners see four of nine neighbors
        assert!((out.data()[0] - 0.7 * 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn center_pixel_of_ramp() {
        let img = Tensor::from_fn(&[1, 1, 3, 3], |i| (i + 1) as f64 / 10.0);
        let kf = Tensor::full(&[1, 9, 3, 3], 1.0 / 9.0);
        let out = apply_pixelwise_filter(&img, &kf, 3).unwrap();
        assert!((out.data()[4] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_even_kernel_and_bad_channels() {
        let img = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(
            apply_pixelwise_filter(&img, &Tensor::zeros(&[1, 4, 4, 4]), 2),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(
            apply_pixelwise_filter(&img, &Tensor::zeros(&[1, 8, 4, 4]), 3),
            Err(Error::Shape { .. })
        ));
        assert!(identity_kernel_field(2, 2, 1, 4).is_err());
    }

    #[test]
    fn identity_scores() {
        let kf = identity_kernel_field(4, 4, 1, 3).unwrap();
        let avg = raw_uncertainty_scores(&kf, Reducer::Avg).unwrap();
        assert!(avg.data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
        let l2 = raw_uncertainty_scores(&kf, Reducer::L2).unwrap();
        assert!(l2.data().iter().all(|&v| v == 1.0));
        let kf3 = identity_kernel_field(4, 4, 3, 3).unwrap();
        let avg3 = raw_uncertainty_scores(&kf3, Reducer::Avg).unwrap();
        assert!(avg3.data().iter().all(|&v| (v - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn constant_field_scores_and_degenerate_map() {
        let kf = Tensor::full(&[1, 9, 3, 3], 0.2);
        let expect = [(Reducer::Avg, 0.2), (Reducer::Max, 0.2), (Reducer::L1, 1.8), (Reducer::L2, 0.6)];
        for (r, v) in expect {
            let raw = raw_uncertainty_scores(&kf, r).unwrap();
            assert!(raw.data().iter().all(|&s| (s - v).abs() < 1e-12), "{r}");
            let u = compute_uncertainty_map(&kf, r).unwrap();
            assert!(u.data().iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn one_dead_pixel_normalizes_to_extremes() {
        let mut kf = identity_kernel_field(3, 3, 1, 3).unwrap();
        // zero out pixel (1, 1)
        for ch in 0..9 {
            kf.data_mut()[ch * 9 + 4] = 0.0;
        }
        let u = compute_uncertainty_map(&kf, Reducer::Avg).unwrap();
        for (p, &v) in u.data().iter().enumerate() {
            assert_eq!(v, if p == 4 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn naive_fuse_cases() {
        let i1 = Tensor::full(&[1, 3, 2, 2], 0.2);
        let i2 = Tensor::full(&[1, 3, 2, 2], 0.8);
        assert_eq!(naive_fuse(&i1, &i2, &Tensor::zeros(&[1, 1, 2, 2])).unwrap(), i1);
        assert_eq!(naive_fuse(&i1, &i2, &Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap(), i2);
        let mid = naive_fuse(&i1, &i2, &Tensor::full(&[1, 1, 2, 2], 0.5)).unwrap();
        assert!(mid.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        assert!(naive_fuse(&i1, &i2, &Tensor::zeros(&[1, 1, 3, 2])).is_err());
    }

    #[test]
    fn selector_fusion_returns_first_image() {
        let i1 = ramp(&[1, 3, 4, 5]);
        let i2 = Tensor::full(&[1, 3, 4, 5], 0.3);
        let f = center_fusion_field(&Tensor::zeros(&[1, 1, 4, 5]), 3, 3).unwrap();
        assert_eq!(apply_fusion(&i1, &i2, &f, 3).unwrap(), i1);
    }

    #[test]
    fn reducer_parsing() {
        assert_eq!("L2".parse::<Reducer>().unwrap(), Reducer::L2);
        assert!("median".parse::<Reducer>().is_err());
    }

    #[test]
    fn kernel_at_reads_offset_convention() {
        let kf = KernelField::identity(3, 3, 3, 3).unwrap();
        let kern = kf.kernel_at(0, 2, 1, 1).unwrap();
        assert_eq!(kern, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(kf.color_channels(), 3);
    }
}
