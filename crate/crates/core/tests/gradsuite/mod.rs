//! Central finite-difference checks of every differentiable operation.
#![allow(dead_code)]

use std::rc::Rc;

use crate::common::*;
use jpgnet_core::tensor::{grad_check, NormMode};
use jpgnet_core::train::{gaussian_taps, loss_graph, ssim_graph};
use jpgnet_core::{Graph, Result, Tensor, Var};

pub const SEEDS: u64 = 20;
const TOL: f64 = 1e-4;
const H: f64 = 1e-6;

/// Reduces `y` to a scalar with fixed random weights so every output element matters.
fn weigh(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let dims = g.value(y).dims().to_vec();
    let w = g.constant(uniform(&dims, -1.0, 1.0, &mut rng(seed ^ 0xabc)));
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check(name: &str, seed: u64, x: &Tensor, tol: f64, f: impl Fn(&mut Graph, Var) -> Result<Var>) {
    let report = grad_check(f, x, H, tol).unwrap();
    assert!(report.passed(), "{name} seed {seed}: max rel error {}", report.max_rel_error);
}

pub fn conv2d_gradients() {
    for s in 0..SEEDS {
        let mut r = rng(s);
        let stride = 1 + (s % 2) as usize;
        let x = uniform(&[2, 2, 5, 4], -1.0, 1.0, &mut r);
        let w = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
        let b = uniform(&[3], -1.0, 1.0, &mut r);
        let (w2, b2) = (w.clone(), b.clone());
        check("conv2d/x", s, &x, TOL, move |g, xv| {
            let (wv, bv) = (g.constant(w2.clone()), g.constant(b2.clone()));
            let y = g.conv2d(xv, wv, bv, stride)?;
            weigh(g, y, s)
        });
        let (x2, b2) = (x.clone(), b.clone());
        check("conv2d/w", s, &w, TOL, move |g, wv| {
            let (xv, bv) = (g.constant(x2.clone()), g.constant(b2.clone()));
            let y = g.conv2d(xv, wv, bv, stride)?;
            weigh(g, y, s)
        });
        let (x2, w2) = (x.clone(), w.clone());
        check("conv2d/b", s, &b, TOL, move |g, bv| {
            let (xv, wv) = (g.constant(x2.clone()), g.constant(w2.clone()));
            let y = g.conv2d(xv, wv, bv, stride)?;
            weigh(g, y, s)
        });
    }
}

pub fn batchnorm_gradients() {
    for s in 0..SEEDS {
        let mut r = rng(100 + s);
        let mode = if s % 2 == 0 { NormMode::Batch } else { NormMode::Instance };
        let x = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
        let gamma = uniform(&[2], 0.5, 1.5, &mut r);
        let beta = uniform(&[2], -0.5, 0.5, &mut r);
        let (g2, b2) = (gamma.clone(), beta.clone());
        check("batchnorm/x", s, &x, TOL, move |g, xv| {
            let (gv, bv) = (g.constant(g2.clone()), g.constant(b2.clone()));
            let (y, _) = g.batch_norm(xv, gv, bv, 1e-5, mode, None)?;
            weigh(g, y, s)
        });
        let (x2, b2) = (x.clone(), beta.clone());
        check("batchnorm/gamma", s, &gamma, TOL, move |g, gv| {
            let (xv, bv) = (g.constant(x2.clone()), g.constant(b2.clone()));
            let (y, _) = g.batch_norm(xv, gv, bv, 1e-5, mode, None)?;
            weigh(g, y, s)
        });
        let (x2, g2) = (x.clone(), gamma.clone());
        check("batchnorm/beta", s, &beta, TOL, move |g, bv| {
            let (xv, gv) = (g.constant(x2.clone()), g.constant(g2.clone()));
            let (y, _) = g.batch_norm(xv, gv, bv, 1e-5, mode, None)?;
            weigh(g, y, s)
        });
    }
}

/// Values kept at least 0.05 away from the kink at zero.
fn away_from_zero(dims: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    Tensor::from_fn(dims, |_| {
        let v: f64 = rand::Rng::gen_range(&mut r, 0.05..1.0);
        if rand::Rng::gen_bool(&mut r, 0.5) { -v } else { v }
    })
}

pub fn activation_gradients() {
    for s in 0..SEEDS {
        let x = away_from_zero(&[2, 3, 4, 4], 200 + s);
        check("relu", s, &x, TOL, move |g, xv| {
            let y = g.relu(xv)?;
            weigh(g, y, s)
        });
        check("leaky_relu", s, &x, TOL, move |g, xv| {
            let y = g.leaky_relu(xv, 0.2)?;
            weigh(g, y, s)
        });
        check("sigmoid", s, &x, TOL, move |g, xv| {
            let y = g.sigmoid(xv)?;
            weigh(g, y, s)
        });
        check("abs", s, &x, TOL, move |g, xv| {
            let y = g.abs(xv)?;
            weigh(g, y, s)
        });
    }
}

pub fn upsample_concat_slice_gradients() {
    for s in 0..SEEDS {
        let mut r = rng(300 + s);
        let x = uniform(&[2, 2, 3, 4], -1.0, 1.0, &mut r);
        let other = uniform(&[2, 3, 3, 4], -1.0, 1.0, &mut r);
        check("upsample2x", s, &x, TOL, move |g, xv| {
            let y = g.upsample2x(xv)?;
            weigh(g, y, s)
        });
        let o2 = other.clone();
        check("concat", s, &x, TOL, move |g, xv| {
            let ov = g.constant(o2.clone());
            let a = g.concat(ov, xv)?;
            let b = g.concat(a, xv)?;
            weigh(g, b, s)
        });
        check("slice_channels", s, &other, TOL, move |g, xv| {
            let y = g.slice_channels(xv, 1, 2)?;
            weigh(g, y, s)
        });
    }
}

pub fn arithmetic_gradients() {
    for s in 0..SEEDS {
        let mut r = rng(400 + s);
        let x = uniform(&[1, 2, 3, 3], -1.0, 1.0, &mut r);
        let o = uniform(&[1, 2, 3, 3], 0.5, 1.5, &mut r);
        let o2 = o.clone();
        check("add/sub/mul/div", s, &x, TOL, move |g, xv| {
            let ov = g.constant(o2.clone());
            let a = g.add(xv, ov)?;
            let b = g.sub(a, xv)?;
            let b = g.add(b, xv)?;
            let c = g.mul(b, xv)?;
            let d = g.div(c, ov)?;
            let e = g.scale(d, -1.5)?;
            let f = g.add_scalar(e, 0.25)?;
            weigh(g, f, s)
        });
        let x2 = x.clone();
        check("div/denominator", s, &o, TOL, move |g, ov| {
            let xv = g.constant(x2.clone());
            let y = g.div(xv, ov)?;
            g.mean(y)
        });
    }
}

pub fn blur_gradients() {
    let taps: Rc<[f64]> = gaussian_taps(5, 1.0).into();
    for s in 0..SEEDS {
        let x = uniform(&[1, 2, 7, 6], 0.0, 1.0, &mut rng(500 + s));
        let t = taps.clone();
        check("blur_valid", s, &x, TOL, move |g, xv| {
            let y = g.blur_valid(xv, t.clone())?;
            weigh(g, y, s)
        });
    }
}

pub fn filtering_gradients() {
    for s in 0..SEEDS {
        let (img, ker, k) = random_filter_case(&mut rng(600 + s));
        let k2 = ker.clone();
        check("pixel_filter/img", s, &img, TOL, move |g, iv| {
            let kv = g.constant(k2.clone());
            let y = g.pixel_filter(iv, kv, k)?;
            weigh(g, y, s)
        });
        let i2 = img.clone();
        check("pixel_filter/kernels", s, &ker, TOL, move |g, kv| {
            let iv = g.constant(i2.clone());
            let y = g.pixel_filter(iv, kv, k)?;
            weigh(g, y, s)
        });
    }
}

pub fn fusion_gradients() {
    for s in 0..SEEDS {
        let (i1, i2, f, k) = random_fusion_case(&mut rng(700 + s));
        let (b, c) = (i2.clone(), f.clone());
        check("fusion/i1", s, &i1, TOL, move |g, v| {
            let (bv, cv) = (g.constant(b.clone()), g.constant(c.clone()));
            let y = g.fusion(v, bv, cv, k)?;
            weigh(g, y, s)
        });
        let (a, c) = (i1.clone(), f.clone());
        check("fusion/i2", s, &i2, TOL, move |g, v| {
            let (av, cv) = (g.constant(a.clone()), g.constant(c.clone()));
            let y = g.fusion(av, v, cv, k)?;
            weigh(g, y, s)
        });
        let (a, b) = (i1.clone(), i2.clone());
        check("fusion/field", s, &f, TOL, move |g, v| {
            let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
            let y = g.fusion(av, bv, v, k)?;
            weigh(g, y, s)
        });
    }
}

pub fn ssim_and_loss_gradients() {
    for s in 0..SEEDS {
        let mut r = rng(800 + s);
        let x = uniform(&[1, 2, 12, 12], 0.0, 1.0, &mut r);
        let y = uniform(&[1, 2, 12, 12], 0.0, 1.0, &mut r);
        let y2 = y.clone();
        check("ssim", s, &x, 1e-3, move |g, xv| {
            let yv = g.constant(y2.clone());
            ssim_graph(g, xv, yv)
        });
        let y2 = y.clone();
        check("loss", s, &x, TOL, move |g, xv| {
            let yv = g.constant(y2.clone());
            loss_graph(g, xv, yv, 0.2)
        });
    }
}

/// Every check, by name.
pub const ALL: [(&str, fn()); 9] = [
    ("conv2d_gradients", conv2d_gradients),
    ("batchnorm_gradients", batchnorm_gradients),
    ("activation_gradients", activation_gradients),
    ("upsample_concat_slice_gradients", upsample_concat_slice_gradients),
    ("arithmetic_gradients", arithmetic_gradients),
    ("blur_gradients", blur_gradients),
    ("filtering_gradients", filtering_gradients),
    ("fusion_gradients", fusion_gradients),
    ("ssim_and_loss_gradients", ssim_and_loss_gradients),
];
