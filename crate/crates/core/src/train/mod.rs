//! Loss, optimizer, checkpoints and the two-stage training schedule.

mod adam;
mod checkpoint;
mod ssim;
mod stages;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, adam_step_store, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, NetKind, RngState, MAGIC, VERSION};
pub use ssim::{gaussian_taps, loss_graph, loss_l1_ssim, ssim, ssim_graph, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
pub use stages::{train_generator, train_stage1, train_stage2, Progress, StageReport};

use crate::error::{Error, Result};
use crate::nn::UNetConfig;
use crate::tensor::NormMode;

/// Hyperparameters for all training stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda_ssim: f64,
    pub batch_size: usize,
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub gen_iters: usize,
    pub seed: u64,
    /// Iterations between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub image_size: usize,
    pub base_width: usize,
    pub kernel_size: usize,
    pub norm: NormMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            lambda_ssim: 0.2,
            batch_size: 4,
            stage1_iters: 2000,
            stage2_iters: 1000,
            gen_iters: 1000,
            seed: 0,
            checkpoint_every: 0,
            image_size: 64,
            base_width: 8,
            kernel_size: 3,
            norm: NormMode::Batch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidArgument(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        if !(self.lambda_ssim >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda_ssim {} must be ≥ 0", self.lambda_ssim)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be positive".into()));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("kernel_size {} must be odd", self.kernel_size)));
        }
        self.pfu_config(3).validate()
    }

    fn unet(&self, cin: usize, cout: usize) -> UNetConfig {
        UNetConfig {
            base_width: self.base_width,
            input_size: self.image_size,
            norm: self.norm,
            ..UNetConfig::full(cin, cout)
        }
    }

    /// Filtering network for `c` color channels: C → C·K².
    pub fn pfu_config(&self, c: usize) -> UNetConfig {
        self.unet(c, c * self.kernel_size * self.kernel_size)
    }

    /// Fusion network: 1 + C·K² + 2C → 2·C·K².
    pub fn uaf_config(&self, c: usize) -> UNetConfig {
        let kk = self.kernel_size * self.kernel_size;
        self.unet(1 + c * kk + 2 * c, 2 * c * kk)
    }

    /// Toy generator: image plus mask channel → C.
    pub fn gen_config(&self, c: usize) -> UNetConfig {
        self.unet(c + 1, c)
    }
}
