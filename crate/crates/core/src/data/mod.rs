//! Images, hole masks, corrupted samples and the procedural toy dataset.

mod image_io;
mod mask;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use image_io::{decode_image, encode_image, load_image, save_image};
pub use mask::{classify_mask_ratio, generate_irregular_mask, Bucket, Mask};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value written into missing pixels of a corrupted image.
pub const FILL_VALUE: f64 = 1.0;

/// Ground truth, hole mask and the corrupted network input.
#[derive(Clone, Debug)]
pub struct Sample {
    pub truth: Tensor,
    pub mask: Mask,
    pub input: Tensor,
}

/// Blanks the masked pixels of `truth` (1×C×H×W) with [`FILL_VALUE`].
pub fn corrupt(truth: &Tensor, mask: &Mask) -> Result<Sample> {
    let input = corrupt_batch(truth, &mask.to_tensor())?;
    Ok(Sample { truth: truth.clone(), mask: mask.clone(), input })
}

/// Batched corruption: `truth` N×C×H×W, `mask` N×1×H×W of 0/1.
pub fn corrupt_batch(truth: &Tensor, mask: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = truth.nchw()?;
    if mask.nchw()? != [n, 1, h, w] {
        return Err(Error::shape("corrupt", format!("mask {:?} vs image {:?}", mask.dims(), truth.dims())));
    }
    let hw = h * w;
    let mut out = truth.clone();
    for b in 0..n {
        let m = &mask.data()[b * hw..(b + 1) * hw];
        for ch in 0..c {
            let plane = &mut out.data_mut()[(b * c + ch) * hw..(b * c + ch + 1) * hw];
            for (v, &mv) in plane.iter_mut().zip(m) {
                if mv > 0.5 {
                    *v = FILL_VALUE;
                }
            }
        }
    }
    Ok(out)
}

fn rand_color(rng: &mut impl Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// One procedural RGB image: a two-color gradient, a few soft ellipses and a faint
/// sinusoidal texture, quantized to the 8-bit grid.
pub fn toy_image(size: usize, rng: &mut impl Rng) -> Tensor {
    let s = size as f64;
    let (c0, c1) = (rand_color(rng), rand_color(rng));
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gx, gy) = (theta.cos(), theta.sin());
    let n_ellipses = rng.gen_range(2..=5);
    let ellipses: Vec<_> = (0..n_ellipses)
        .map(|_| {
            let cy = rng.gen_range(0.0..s);
            let cx = rng.gen_range(0.0..s);
            let ry = rng.gen_range(s / 10.0..s / 3.0);
            let rx = rng.gen_range(s / 10.0..s / 3.0);
            let rot: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            (cy, cx, ry, rx, rot, rand_color(rng))
        })
        .collect();
    let amp = rng.gen_range(0.02..0.08);
    let freq = rng.gen_range(2.0..8.0) * std::f64::consts::TAU / s;
    let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let tex_dir: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    let hw = size * size;
    let mut t = Tensor::zeros(&[1, 3, size, size]);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let u = (((fx - s / 2.0) * gx + (fy - s / 2.0) * gy) / s + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for ch in 0..3 {
                px[ch] = c0[ch] * (1.0 - u) + c1[ch] * u;
            }
            for &(cy, cx, ry, rx, rot, col) in &ellipses {
                let (dy, dx) = (fy - cy, fx - cx);
                let (ey, ex) = (dy * rot.cos() - dx * rot.sin(), dy * rot.sin() + dx * rot.cos());
                let d = (ey / ry).powi(2) + (ex / rx).powi(2);
                // soft edge over roughly one pixel
                let alpha = (1.0 - (d.sqrt() - 1.0) * ry.min(rx)).clamp(0.0, 1.0);
                for ch in 0..3 {
                    px[ch] = px[ch] * (1.0 - alpha) + col[ch] * alpha;
                }
            }
            let tex = amp * (freq * (fx * tex_dir.cos() + fy * tex_dir.sin()) + phase).sin();
            for ch in 0..3 {
                let v = (px[ch] + tex).clamp(0.0, 1.0);
                t.data_mut()[ch * hw + y * size + x] = (v * 255.0).round() / 255.0;
            }
        }
    }
    t
}

/// `n` toy images of `size`×`size`.
pub fn toy_dataset(n: usize, size: usize, rng: &mut impl Rng) -> Result<Vec<Tensor>> {
    if n == 0 {
        return Err(Error::InvalidArgument("toy dataset needs at least one image".into()));
    }
    if size == 0 {
        return Err(Error::InvalidArgument("toy image size must be positive".into()));
    }
    Ok((0..n).map(|_| toy_image(size, rng)).collect())
}

/// Reads a newline-separated manifest of image paths relative to the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(|l| base.join(l)).collect())
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[String]) -> Result<()> {
    let path = path.as_ref();
    let mut text = entries.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Loads every image listed by a manifest file, or by `manifest.txt` inside a directory.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let manifest = if path.is_dir() { path.join("manifest.txt") } else { path.to_path_buf() };
    let images = read_manifest(&manifest)?.iter().map(load_image).collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(images)
}

/// Visiting order of `len` items in `epoch`, a pure function of `(seed, epoch)`.
pub fn epoch_order(len: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// A training minibatch: stacked ground truth, masks and corrupted inputs.
#[derive(Clone, Debug)]
pub struct Batch {
    pub truth: Tensor,
    pub mask: Tensor,
    pub input: Tensor,
}

/// Draws minibatches in epoch order with a fresh random mask per image.
///
/// Mask buckets cycle uniformly through `buckets`. Everything drawn is a pure function of
/// the seed.
pub struct BatchSampler<'a> {
    data: &'a [Tensor],
    batch: usize,
    seed: u64,
    epoch: u64,
    pos: usize,
    order: Vec<usize>,
    rng: ChaCha8Rng,
    buckets: Vec<Bucket>,
}

impl<'a> BatchSampler<'a> {
    pub fn new(data: &'a [Tensor], batch: usize, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if batch == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        Ok(BatchSampler {
            data,
            batch,
            seed,
            epoch: 0,
            pos: 0,
            order: epoch_order(data.len(), seed, 0),
            rng,
            buckets: Bucket::ALL.to_vec(),
        })
    }

    pub fn with_buckets(mut self, buckets: &[Bucket]) -> Self {
        if !buckets.is_empty() {
            self.buckets = buckets.to_vec();
        }
        self
    }

    /// Mask generator state, for checkpointing.
    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn next_batch(&mut self) -> Result<Batch> {
        let mut truths = Vec::with_capacity(self.batch);
        let mut masks = Vec::with_capacity(self.batch);
        for _ in 0..self.batch {
            if self.pos == self.order.len() {
                self.epoch += 1;
                self.pos = 0;
                self.order = epoch_order(self.data.len(), self.seed, self.epoch);
            }
            let img = &self.data[self.order[self.pos]];
            self.pos += 1;
            let [_, _, h, w] = img.nchw()?;
            let bucket = self.buckets[self.rng.gen_range(0..self.buckets.len())];
            masks.push(generate_irregular_mask(h, w, bucket, &mut self.rng)?.to_tensor());
            truths.push(img.clone());
        }
        let truth = Tensor::stack(&truths)?;
        let mask = Tensor::stack(&masks)?;
        let input = corrupt_batch(&truth, &mask)?;
        Ok(Batch { truth, mask, input })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corruption_cases() {
        let truth = Tensor::from_fn(&[1, 3, 4, 4], |i| (i % 7) as f64 / 10.0);
        assert_eq!(corrupt(&truth, &Mask::zeros(4, 4)).unwrap().input, truth);
        let full = corrupt(&truth, &Mask::ones(4, 4)).unwrap().input;
        assert!(full.data().iter().all(|&v| v == FILL_VALUE));
        let mut one = Mask::zeros(4, 4);
        one.set(2, 1, true);
        let s = corrupt(&truth, &one).unwrap();
        let differing = (0..16)
            .filter(|&p| (0..3).any(|c| s.input.data()[c * 16 + p] != truth.data()[c * 16 + p]))
            .count();
        assert_eq!(differing, 1);
        assert!(corrupt(&truth, &Mask::zeros(4, 5)).is_err());
    }

    #[test]
    fn toy_dataset_is_seeded_and_bounded() {
        let a = toy_dataset(5, 32, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = toy_dataset(5, 32, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert!(toy_dataset(0, 32, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn epoch_order_is_a_pure_permutation() {
        let a = epoch_order(10, 1, 4);
        assert_eq!(a, epoch_order(10, 1, 4));
        assert_ne!(a, epoch_order(10, 1, 5));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sampler_rejects_empty_data() {
        assert!(matches!(BatchSampler::new(&[], 2, 0), Err(Error::EmptyDataset)));
    }
}
