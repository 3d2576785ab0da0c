use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers for a list of parameter tensors.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn for_shapes(lens: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = lens.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        AdamState { m, v, step: 0 }
    }

    pub fn for_store(store: &ParamStore) -> Self {
        Self::for_shapes(store.iter().map(|p| p.value.len()))
    }
}

/// One bias-corrected Adam update of `params[i]` by `grads[i]`.
///
/// `None` gradients leave a tensor (and its moments) untouched; the step counter still
/// advances. Any non-finite gradient aborts before anything is modified.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[Option<&[f64]>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape("adam_step", "parameter, gradient and moment lists differ in length"));
    }
    for (i, g) in grads.iter().enumerate() {
        if let Some(g) = g {
            if g.len() != params[i].len() {
                return Err(Error::shape("adam_step", format!("gradient {i} has the wrong length")));
            }
            if let Some(j) = g.iter().position(|v| !v.is_finite()) {
                log_nonfinite(i, j, g[j]);
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, p) in params[i].iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *p -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

fn log_nonfinite(tensor: usize, elem: usize, value: f64) {
    eprintln!("adam_step: gradient of tensor {tensor} element {elem} is {value}; step skipped");
}

/// Applies one Adam step to the trainable entries of `store` and rounds them to `f32`.
///
/// `grads` is indexed like the store; buffers and untouched tensors pass `None`.
pub fn adam_step_store(store: &mut ParamStore, grads: &[Option<&[f64]>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let mut slices: Vec<&mut [f64]> = store.iter_mut().map(|p| p.value.data_mut()).collect();
    adam_step(&mut slices, grads, state, cfg)?;
    store.quantize_f32();
    Ok(())
}
