//! PSNR/SSIM evaluation over mask-ratio buckets and difference maps.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{corrupt, generate_irregular_mask, Bucket, Sample};
use crate::error::{Error, Result};
use crate::filter::{naive_fuse, Reducer};
use crate::nn::{GeneratorBranch, PfuNet, UafNet};
use crate::tensor::Tensor;
use crate::train::ssim;

/// Peak signal-to-noise ratio in dB for unit dynamic range, over all pixels and channels.
///
/// Identical images give `f64::INFINITY`.
pub fn psnr(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::shape("psnr", format!("{:?} vs {:?}", x.dims(), y.dims())));
    }
    if x.is_empty() {
        return Err(Error::InvalidArgument("psnr of empty tensors".into()));
    }
    let mse = x.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Per-pixel mean absolute channel difference (N×1×H×W), raw and min-max stretched to [0, 1].
pub fn difference_map(pred: &Tensor, truth: &Tensor) -> Result<(Tensor, Tensor)> {
    if pred.dims() != truth.dims() {
        return Err(Error::shape("difference_map", format!("{:?} vs {:?}", pred.dims(), truth.dims())));
    }
    let [n, c, h, w] = pred.nchw()?;
    let hw = h * w;
    let mut raw = Tensor::zeros(&[n, 1, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for p in 0..hw {
                raw.data_mut()[b * hw + p] += (pred.data()[off + p] - truth.data()[off + p]).abs() / c as f64;
            }
        }
    }
    let mut stretched = raw.clone();
    for plane in stretched.data_mut().chunks_mut(hw) {
        let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            plane.iter_mut().for_each(|v| *v = (*v - lo) / (hi - lo));
        } else {
            plane.fill(0.0);
        }
    }
    Ok((raw, stretched))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Input,
    Filtering,
    NaiveFusion,
    SmartFusion,
    Generator,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Input, Method::Filtering, Method::NaiveFusion, Method::SmartFusion, Method::Generator];

    pub fn name(self) -> &'static str {
        match self {
            Method::Input => "input",
            Method::Filtering => "filtering",
            Method::NaiveFusion => "naive_fusion",
            Method::SmartFusion => "smart_fusion",
            Method::Generator => "generator",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One held-out sample tagged with the bucket its mask was drawn for.
#[derive(Clone, Debug)]
pub struct EvalSample {
    pub bucket: Bucket,
    pub sample: Sample,
}

/// Draws `masks_per_image` masks per image and bucket, deterministically from `seed`.
pub fn eval_samples(images: &[Tensor], masks_per_image: usize, buckets: &[Bucket], seed: u64) -> Result<Vec<EvalSample>> {
    if images.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(images.len() * masks_per_image * buckets.len());
    for &bucket in buckets {
        for img in images {
            let [_, _, h, w] = img.nchw()?;
            for _ in 0..masks_per_image {
                let mask = generate_irregular_mask(h, w, bucket, &mut rng)?;
                out.push(EvalSample { bucket, sample: corrupt(img, &mask)? });
            }
        }
    }
    Ok(out)
}

/// The three branches evaluated together.
pub struct Pipeline<'a> {
    pub pfu: &'a PfuNet,
    pub uaf: &'a UafNet,
    pub gen: &'a dyn GeneratorBranch,
    pub reducer: Reducer,
}

/// Every intermediate and final image the framework produces for one input.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub filtered: Tensor,
    pub generated: Tensor,
    pub uncertainty: Tensor,
    pub kernels: Tensor,
    pub naive: Tensor,
    pub fused: Tensor,
}

impl Pipeline<'_> {
    pub fn run(&self, input: &Tensor, mask: &Tensor) -> Result<PipelineOutput> {
        let pf = self.pfu.run(input, self.reducer)?;
        let generated = self.gen.generate(input, mask)?;
        let naive = naive_fuse(&pf.filtered, &generated, &pf.uncertainty)?;
        let (fused, _) = self.uaf.run(&pf.uncertainty, pf.kernels.tensor(), &pf.filtered, &generated)?;
        Ok(PipelineOutput {
            filtered: pf.filtered,
            generated,
            uncertainty: pf.uncertainty,
            kernels: pf.kernels.into_tensor(),
            naive,
            fused,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub method: Method,
    pub bucket: Bucket,
    /// Mean over samples with finite PSNR; `None` if every sample was exact.
    pub psnr: Option<f64>,
    pub ssim: f64,
    pub n: usize,
    /// Samples with infinite PSNR, excluded from the mean.
    pub n_inf: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    pub fn get(&self, method: Method, bucket: Bucket) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method && r.bucket == bucket)
    }

    pub fn buckets(&self) -> Vec<Bucket> {
        let mut b: Vec<_> = self.rows.iter().map(|r| r.bucket).collect();
        b.sort();
        b.dedup();
        b
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,bucket,psnr,ssim,n\n");
        for r in &self.rows {
            let psnr = r.psnr.map_or_else(|| "inf".to_string(), |p| format!("{p:.4}"));
            out.push_str(&format!("{},{},{psnr},{:.6},{}\n", r.method, r.bucket, r.ssim, r.n));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Fixed-width table with one row per method and a PSNR / SSIM column pair per bucket.
    pub fn to_table(&self) -> String {
        let buckets = self.buckets();
        let mut out = format!("{:<14}", "method");
        for b in &buckets {
            out.push_str(&format!(" | {:>8} {:>7}", format!("{b} PSNR"), "SSIM"));
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.len() - 1));
        out.push('\n');
        let mut notes = Vec::new();
        for m in Method::ALL {
            if !self.rows.iter().any(|r| r.method == m) {
                continue;
            }
            out.push_str(&format!("{:<14}", m.name()));
            for &b in &buckets {
                match self.get(m, b) {
                    Some(r) => {
                        let p = r.psnr.map_or_else(|| "inf".into(), |p| format!("{p:.3}"));
                        out.push_str(&format!(" | {p:>8} {:>7.4}", r.ssim));
                        if r.n_inf > 0 {
                            notes.push(format!("{m}/{b}: {} of {} samples exact (PSNR inf, excluded)", r.n_inf, r.n));
                        }
                    }
                    None => out.push_str(&format!(" | {:>8} {:>7}", "-", "-")),
                }
            }
            out.push('\n');
        }
        for n in notes {
            out.push_str(&n);
            out.push('\n');
        }
        out
    }
}

fn clamp01(t: &Tensor) -> Tensor {
    t.map(|v| v.clamp(0.0, 1.0))
}

/// Scores every method on every sample and averages per bucket.
///
/// Predictions are clamped to [0, 1] before scoring. Every bucket in `buckets` must have
/// at least one sample.
pub fn evaluate(pipeline: &Pipeline<'_>, samples: &[EvalSample], buckets: &[Bucket]) -> Result<EvalReport> {
    #[derive(Default, Clone, Copy)]
    struct Acc {
        psnr: f64,
        finite: usize,
        ssim: f64,
        n: usize,
    }
    if buckets.is_empty() {
        return Err(Error::InvalidArgument("no buckets to evaluate".into()));
    }
    let mut acc = vec![[Acc::default(); 5]; buckets.len()];
    for s in samples {
        let Some(bi) = buckets.iter().position(|&b| b == s.bucket) else { continue };
        let mask = s.sample.mask.to_tensor();
        let out = pipeline.run(&s.sample.input, &mask)?;
        let preds = [&s.sample.input, &out.filtered, &out.naive, &out.fused, &out.generated];
        for (mi, pred) in preds.into_iter().enumerate() {
            let pred = clamp01(pred);
            let p = psnr(&pred, &s.sample.truth)?;
            let a = &mut acc[bi][mi];
            if p.is_finite() {
                a.psnr += p;
                a.finite += 1;
            }
            a.ssim += ssim(&pred, &s.sample.truth)?;
            a.n += 1;
        }
    }
    let mut rows = Vec::with_capacity(5 * buckets.len());
    for (mi, m) in Method::ALL.into_iter().enumerate() {
        for (bi, &b) in buckets.iter().enumerate() {
            let a = acc[bi][mi];
            if a.n == 0 {
                return Err(Error::EmptyBucket(b.name()));
            }
            rows.push(EvalRow {
                method: m,
                bucket: b,
                psnr: (a.finite > 0).then(|| a.psnr / a.finite as f64),
                ssim: a.ssim / a.n as f64,
                n: a.n,
                n_inf: a.n - a.finite,
            });
        }
    }
    Ok(EvalReport { rows })
}
