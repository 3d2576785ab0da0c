use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hole-area class of a mask: ratios in (0, 0.2], (0.2, 0.4] and (0.4, 0.6].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Bucket {
    B20,
    B40,
    B60,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::B20, Bucket::B40, Bucket::B60];

    pub fn name(self) -> &'static str {
        match self {
            Bucket::B20 => "B20",
            Bucket::B40 => "B40",
            Bucket::B60 => "B60",
        }
    }

    /// Exclusive lower and inclusive upper ratio bound.
    pub fn bounds(self) -> (f64, f64) {
        match self {
            Bucket::B20 => (0.0, 0.2),
            Bucket::B40 => (0.2, 0.4),
            Bucket::B60 => (0.4, 0.6),
        }
    }

    /// Bucket index 1..=3 as a fifth-of-image multiple: the upper bound is `2·idx/10`.
    fn fifths(self) -> usize {
        match self {
            Bucket::B20 => 1,
            Bucket::B40 => 2,
            Bucket::B60 => 3,
        }
    }

    /// Classifies `ones` missing pixels out of `total` with exact integer arithmetic.
    pub fn from_counts(ones: usize, total: usize) -> Option<Bucket> {
        if ones == 0 || total == 0 {
            return None;
        }
        // ratio ≤ k/5  ⇔  5·ones ≤ k·total
        Bucket::ALL.into_iter().find(|b| 5 * ones <= b.fifths() * total)
    }
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Bucket {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B20" | "20" | "0-20" => Ok(Bucket::B20),
            "B40" | "40" | "20-40" => Ok(Bucket::B40),
            "B60" | "60" | "40-60" => Ok(Bucket::B60),
            other => Err(Error::InvalidArgument(format!("unknown bucket `{other}` (expected B20, B40 or B60)"))),
        }
    }
}

/// Binary H×W hole map; 1 marks a missing pixel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    h: usize,
    w: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(h: usize, w: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != h * w {
            return Err(Error::shape("Mask::new", format!("{} bits for {h}×{w}", bits.len())));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InvalidArgument("mask bits must be 0 or 1".into()));
        }
        Ok(Mask { h, w, bits })
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Mask { h, w, bits: vec![0; h * w] }
    }

    pub fn ones(h: usize, w: usize) -> Self {
        Mask { h, w, bits: vec![1; h * w] }
    }

    /// Thresholds a 1×1×H×W (or H×W) tensor at 0.5.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [n, c, h, w] = match t.dims() {
            [h, w] => [1, 1, *h, *w],
            _ => t.nchw()?,
        };
        if n != 1 {
            return Err(Error::shape("Mask::from_tensor", format!("expected a single mask, got {:?}", t.dims())));
        }
        // multi-channel images (e.g. an RGB mask file) use their first channel
        let _ = c;
        let bits = t.data()[..h * w].iter().map(|&v| u8::from(v > 0.5)).collect();
        Ok(Mask { h, w, bits })
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.w + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, missing: bool) {
        self.bits[y * self.w + x] = u8::from(missing);
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn ratio(&self) -> f64 {
        self.count() as f64 / (self.h * self.w) as f64
    }

    pub fn bucket(&self) -> Option<Bucket> {
        Bucket::from_counts(self.count(), self.h * self.w)
    }

    /// 1×1×H×W tensor of 0.0 / 1.0.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, self.h, self.w], self.bits.iter().map(|&b| b as f64).collect()).expect("consistent")
    }

    /// Grows the hole by `r` pixels in the Chebyshev metric.
    pub fn dilate(&self, r: usize) -> Mask {
        let mut out = Mask::zeros(self.h, self.w);
        for y in 0..self.h {
            for x in 0..self.w {
                if self.get(y, x) {
                    for yy in y.saturating_sub(r)..(y + r + 1).min(self.h) {
                        for xx in x.saturating_sub(r)..(x + r + 1).min(self.w) {
                            out.set(yy, xx, true);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Bucket of a mask, or [`Error::OutOfProtocol`] for an empty mask or a ratio above 0.6.
pub fn classify_mask_ratio(mask: &Mask) -> Result<Bucket> {
    mask.bucket().ok_or(Error::OutOfProtocol(mask.ratio()))
}

const MAX_TRIES: usize = 100;

/// Random brush-stroke mask whose hole ratio falls in `bucket`.
///
/// Strokes are random walks of thick line segments (thickness 1 to size/8). Segments are
/// added until the ratio reaches a target drawn uniformly inside the bucket; overshooting
/// masks are discarded and redrawn, at most 100 times.
pub fn generate_irregular_mask(h: usize, w: usize, bucket: Bucket, rng: &mut impl Rng) -> Result<Mask> {
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("mask must have a non-zero size".into()));
    }
    let (lo, hi) = bucket.bounds();
    let total = h * w;
    for _ in 0..MAX_TRIES {
        let target = lo + (hi - lo) * rng.gen_range(0.05..1.0);
        let mut mask = Mask::zeros(h, w);
        let mut count = 0usize;
        'strokes: loop {
            let size = h.min(w);
            let max_thick = (size / 8).max(1);
            let thickness = rng.gen_range(1..=max_thick);
            let mut y = rng.gen_range(0.0..h as f64);
            let mut x = rng.gen_range(0.0..w as f64);
            let mut angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let vertices = rng.gen_range(2..10);
            for _ in 0..vertices {
                angle += rng.gen_range(-1.2..1.2);
                let len = rng.gen_range((size as f64 / 16.0).max(1.0)..(size as f64 / 4.0).max(2.0));
                let (ny, nx) = (y + len * angle.sin(), x + len * angle.cos());
                count += stamp_segment(&mut mask, (y, x), (ny, nx), thickness);
                y = ny.clamp(0.0, (h - 1) as f64);
                x = nx.clamp(0.0, (w - 1) as f64);
                if count as f64 >= target * total as f64 {
                    break 'strokes;
                }
            }
        }
        if Bucket::from_counts(count, total) == Some(bucket) {
            return Ok(mask);
        }
    }
    Err(Error::MaskExhausted { bucket: bucket.name(), tries: MAX_TRIES })
}

/// Paints a thick segment; returns the number of newly set pixels.
fn stamp_segment(mask: &mut Mask, from: (f64, f64), to: (f64, f64), thickness: usize) -> usize {
    let steps = ((to.0 - from.0).abs().max((to.1 - from.1).abs()).ceil() as usize).max(1);
    let r = thickness as f64 / 2.0;
    let mut added = 0;
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let cy = from.0 + (to.0 - from.0) * t;
        let cx = from.1 + (to.1 - from.1) * t;
        let y0 = (cy - r).floor().max(0.0) as usize;
        let x0 = (cx - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as isize).min(mask.h as isize - 1);
        let x1 = ((cx + r).ceil() as isize).min(mask.w as isize - 1);
        if y1 < 0 || x1 < 0 {
            continue;
        }
        for yy in y0..=y1 as usize {
            for xx in x0..=x1 as usize {
                let (dy, dx) = (yy as f64 + 0.5 - cy, xx as f64 + 0.5 - cx);
                if dy * dy + dx * dx <= r * r + 0.25 && !mask.get(yy, xx) {
                    mask.set(yy, xx, true);
                    added += 1;
                }
            }
        }
    }
    added
}
