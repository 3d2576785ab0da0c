use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Graph, Tensor, Var};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// (0.01 · L)² with unit dynamic range.
pub const SSIM_C1: f64 = 1e-4;
/// (0.03 · L)² with unit dynamic range.
pub const SSIM_C2: f64 = 9e-4;

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Records mean SSIM of `x` against `y` (both N×C×H×W) on `g`, averaged over every valid
/// window position, channel and sample.
pub fn ssim_graph(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    if g.value(x).dims() != g.value(y).dims() {
        return Err(Error::shape("ssim", format!("{:?} vs {:?}", g.value(x).dims(), g.value(y).dims())));
    }
    let [_, _, h, w] = g.value(x).nchw()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::shape("ssim", format!("{SSIM_WINDOW}×{SSIM_WINDOW} window larger than {h}×{w} image")));
    }
    let taps: Rc<[f64]> = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA).into();
    let mu_x = g.blur_valid(x, taps.clone())?;
    let mu_y = g.blur_valid(y, taps.clone())?;
    let xx = g.mul(x, x)?;
    let yy = g.mul(y, y)?;
    let xy = g.mul(x, y)?;
    let e_xx = g.blur_valid(xx, taps.clone())?;
    let e_yy = g.blur_valid(yy, taps.clone())?;
    let e_xy = g.blur_valid(xy, taps)?;

    let mu_xx = g.mul(mu_x, mu_x)?;
    let mu_yy = g.mul(mu_y, mu_y)?;
    let mu_xy = g.mul(mu_x, mu_y)?;
    let s_xx = g.sub(e_xx, mu_xx)?;
    let s_yy = g.sub(e_yy, mu_yy)?;
    let s_xy = g.sub(e_xy, mu_xy)?;

    let a = g.scale(mu_xy, 2.0)?;
    let a = g.add_scalar(a, SSIM_C1)?;
    let b = g.scale(s_xy, 2.0)?;
    let b = g.add_scalar(b, SSIM_C2)?;
    let num = g.mul(a, b)?;

    let c = g.add(mu_xx, mu_yy)?;
    let c = g.add_scalar(c, SSIM_C1)?;
    let d = g.add(s_xx, s_yy)?;
    let d = g.add_scalar(d, SSIM_C2)?;
    let den = g.mul(c, d)?;

    let map = g.div(num, den)?;
    g.mean(map)
}

/// Mean SSIM between two images in [0, 1].
pub fn ssim(x: &Tensor, y: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let (xv, yv) = (g.constant(x.clone()), g.constant(y.clone()));
    let s = ssim_graph(&mut g, xv, yv)?;
    Ok(g.value(s).data()[0])
}

/// Records `mean|pred − target| − λ·SSIM(pred, target)`.
pub fn loss_graph(g: &mut Graph, pred: Var, target: Var, lambda: f64) -> Result<Var> {
    let diff = g.sub(pred, target)?;
    let abs = g.abs(diff)?;
    let l1 = g.mean(abs)?;
    if lambda == 0.0 {
        return Ok(l1);
    }
    let s = ssim_graph(g, pred, target)?;
    let s = g.scale(s, lambda)?;
    g.sub(l1, s)
}

/// Mean L1 minus λ·SSIM, evaluated without gradients.
pub fn loss_l1_ssim(pred: &Tensor, target: &Tensor, lambda: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (p, t) = (g.constant(pred.clone()), g.constant(target.clone()));
    let l = loss_graph(&mut g, p, t, lambda)?;
    Ok(g.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_are_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..5 {
            assert_eq!(t[i], t[10 - i]);
        }
    }

    #[test]
    fn window_larger_than_image_is_an_error() {
        let x = Tensor::zeros(&[1, 1, 10, 20]);
        assert!(matches!(ssim(&x, &x), Err(Error::Shape { .. })));
        assert!(ssim(&x, &Tensor::zeros(&[1, 1, 11, 20])).is_err());
    }

    #[test]
    fn lambda_zero_is_plain_l1() {
        let a = Tensor::full(&[1, 1, 12, 12], 0.25);
        let b = Tensor::full(&[1, 1, 12, 12], 0.75);
        assert_eq!(loss_l1_ssim(&a, &b, 0.0).unwrap(), 0.5);
    }
}
