use std::fs;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use super::{loss_graph, AdamConfig, AdamState, NetKind, RngState, TrainConfig};
use crate::data::{Batch, BatchSampler};
use crate::error::{Error, Result};
use crate::filter::Reducer;
use crate::nn::{Bound, GeneratorBranch, LayerStats, PfuNet, ToyGenerator, UNet, UafNet};
use crate::tensor::{Graph, Tensor, Var};

/// Consecutive non-finite steps tolerated before training gives up.
const MAX_CONSECUTIVE_SKIPS: usize = 10;

/// Per-iteration state handed to the progress callback after each step.
pub struct Progress<'a> {
    pub stage: NetKind,
    /// 1-based iteration just completed.
    pub iter: usize,
    pub loss: f64,
    pub net: &'a UNet,
    pub rng: &'a ChaCha8Rng,
}

/// Loss curve of one training stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub stage: NetKind,
    pub losses: Vec<f64>,
    /// Steps dropped because of a non-finite loss or gradient.
    pub skipped: usize,
    /// Mask generator state after the last step.
    pub rng: RngState,
}

impl StageReport {
    /// Mean of the first `window` losses.
    pub fn initial_loss(&self, window: usize) -> Option<f64> {
        let n = window.min(self.losses.len());
        (n > 0).then(|| self.losses[..n].iter().sum::<f64>() / n as f64)
    }

    /// Mean of the last `window` losses.
    pub fn final_loss(&self, window: usize) -> Option<f64> {
        let n = window.min(self.losses.len());
        (n > 0).then(|| self.losses[self.losses.len() - n..].iter().sum::<f64>() / n as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            out.push_str(&format!("{},{l}\n", i + 1));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

fn stage_seed(seed: u64, stage: NetKind) -> u64 {
    let salt = match stage {
        NetKind::Pfu => 0x5046_5500,
        NetKind::Gen => 0x4745_4e00,
        NetKind::Uaf => 0x5541_4600,
    };
    seed ^ salt
}

/// A network wrapper whose underlying UNet is optimized.
trait Wraps {
    fn unet(&self) -> &UNet;
    fn unet_mut(&mut self) -> &mut UNet;
}

macro_rules! wraps {
    ($($t:ty),*) => {$(
        impl Wraps for $t {
            fn unet(&self) -> &UNet {
                &self.net
            }
            fn unet_mut(&mut self) -> &mut UNet {
                &mut self.net
            }
        }
    )*};
}

wraps!(PfuNet, ToyGenerator, UafNet);

/// Runs `iters` Adam steps on `net`. `build` records the forward pass for one batch and
/// returns the scalar loss and the batch statistics to fold into the running buffers.
fn optimize<W: Wraps, F>(
    net: &mut W,
    data: &[Tensor],
    cfg: &TrainConfig,
    stage: NetKind,
    iters: usize,
    progress: &mut dyn FnMut(&Progress<'_>) -> Result<()>,
    mut build: F,
) -> Result<StageReport>
where
    F: FnMut(&W, &mut Graph, &Bound, &Batch) -> Result<(Var, Vec<LayerStats>)>,
{
    cfg.validate()?;
    let mut sampler = BatchSampler::new(data, cfg.batch_size, stage_seed(cfg.seed, stage))?;
    let adam = AdamConfig::with_lr(cfg.learning_rate);
    let mut state = AdamState::for_store(net.unet().params());
    let mut report = StageReport { stage, losses: Vec::with_capacity(iters), skipped: 0, rng: RngState::of(sampler.rng()) };
    let mut consecutive = 0;
    for iter in 1..=iters {
        let batch = sampler.next_batch()?;
        match step(net, &mut state, &adam, &batch, &mut build) {
            Ok(loss) => {
                consecutive = 0;
                report.losses.push(loss);
                progress(&Progress { stage, iter, loss, net: net.unet(), rng: sampler.rng() })?;
            }
            Err(Error::NonFinite { op }) => {
                eprintln!("{stage:?} iteration {iter}: non-finite value in {op}; step skipped");
                report.skipped += 1;
                consecutive += 1;
                if consecutive >= MAX_CONSECUTIVE_SKIPS {
                    return Err(Error::NonFinite { op });
                }
            }
            Err(e) => return Err(e),
        }
    }
    report.rng = RngState::of(sampler.rng());
    Ok(report)
}

fn step<W: Wraps, F>(net: &mut W, state: &mut AdamState, adam: &AdamConfig, batch: &Batch, build: &mut F) -> Result<f64>
where
    F: FnMut(&W, &mut Graph, &Bound, &Batch) -> Result<(Var, Vec<LayerStats>)>,
{
    let mut g = Graph::new();
    let p = net.unet().params().bind(&mut g, true);
    let (loss, stats) = build(net, &mut g, &p, batch)?;
    g.backward(loss)?;
    let loss_value = g.value(loss).data()[0];
    let grads: Vec<Option<&[f64]>> = p.vars().iter().map(|&v| g.grad(v)).collect();
    let net = net.unet_mut();
    super::adam_step_store(net.params_mut(), &grads, state, adam)?;
    net.update_running_stats(&stats);
    Ok(loss_value)
}

/// Trains the filtering branch on `(filtered input, ground truth)`.
pub fn train_stage1(
    pfu: &mut PfuNet,
    data: &[Tensor],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&Progress<'_>) -> Result<()>,
) -> Result<StageReport> {
    if pfu.is_frozen() {
        return Err(Error::InvalidArgument("cannot train a frozen filtering network".into()));
    }
    optimize(pfu, data, cfg, NetKind::Pfu, cfg.stage1_iters, progress, |pfu, g, p, b| {
        let x = g.constant(b.input.clone());
        let target = g.constant(b.truth.clone());
        let out = pfu.forward(g, p, x, true)?;
        Ok((loss_graph(g, out.filtered, target, cfg.lambda_ssim)?, out.bn_stats))
    })
}

/// Trains the toy generator on its hole-composited output.
pub fn train_generator(
    gen: &mut ToyGenerator,
    data: &[Tensor],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&Progress<'_>) -> Result<()>,
) -> Result<StageReport> {
    if GeneratorBranch::is_frozen(gen) {
        return Err(Error::InvalidArgument("cannot train a frozen generator".into()));
    }
    optimize(gen, data, cfg, NetKind::Gen, cfg.gen_iters, progress, |gen, g, p, b| {
        let x = g.constant(b.input.clone());
        let m = g.constant(b.mask.clone());
        let target = g.constant(b.truth.clone());
        let (comp, _, stats) = gen.forward(g, p, x, m, true)?;
        Ok((loss_graph(g, comp, target, cfg.lambda_ssim)?, stats))
    })
}

/// Trains the fusion branch with both other branches held fixed.
///
/// Their outputs enter the graph as constants, so no gradient reaches them.
pub fn train_stage2(
    uaf: &mut UafNet,
    pfu: &PfuNet,
    gen: &dyn GeneratorBranch,
    data: &[Tensor],
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&Progress<'_>) -> Result<()>,
) -> Result<StageReport> {
    if !pfu.is_frozen() {
        return Err(Error::NotFrozen("filtering network"));
    }
    if !gen.is_frozen() {
        return Err(Error::NotFrozen("generator"));
    }
    if uaf.kernel_size() != pfu.kernel_size() {
        return Err(Error::shape(
            "train_stage2",
            format!("fusion K = {} but filtering K = {}", uaf.kernel_size(), pfu.kernel_size()),
        ));
    }
    optimize(uaf, data, cfg, NetKind::Uaf, cfg.stage2_iters, progress, |uaf, g, p, b| {
        let pf = pfu.run(&b.input, Reducer::Avg)?;
        let i2 = gen.generate(&b.input, &b.mask)?;
        let vars = [&pf.uncertainty, pf.kernels.tensor(), &pf.filtered, &i2].map(|t| g.constant(t.clone()));
        let target = g.constant(b.truth.clone());
        let f = uaf.forward(g, p, vars[0], vars[1], vars[2], vars[3], true)?;
        Ok((loss_graph(g, f.fused, target, cfg.lambda_ssim)?, f.bn_stats))
    })
}
