//! Shared helpers: random tensors and straightforward loop references.
#![allow(dead_code)]

use jpgnet_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(dims: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(lo..hi))
}

fn at(t: &Tensor, n: usize, c: usize, y: usize, x: usize) -> f64 {
    let d = t.dims();
    t.data()[((n * d[1] + c) * d[2] + y) * d[3] + x]
}

/// Zero outside the image.
fn at_padded(t: &Tensor, n: usize, c: usize, y: isize, x: isize) -> f64 {
    let d = t.dims();
    if y < 0 || x < 0 || y >= d[2] as isize || x >= d[3] as isize {
        0.0
    } else {
        at(t, n, c, y as usize, x as usize)
    }
}

/// out[n,c,y,x] = Σ_{dy,dx} K[n, c·K² + (dy+r)·K + (dx+r), y, x] · img[n,c,y+dy,x+dx]
pub fn ref_pixelwise(img: &Tensor, kernels: &Tensor, k: usize) -> Tensor {
    let d = img.dims().to_vec();
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&d);
    for n in 0..d[0] {
        for c in 0..d[1] {
            for y in 0..d[2] {
                for x in 0..d[3] {
                    let mut acc = 0.0;
                    for dy in -r..=r {
                        for dx in -r..=r {
                            let kc = c * k * k + ((dy + r) as usize) * k + (dx + r) as usize;
                            acc += at(kernels, n, kc, y, x) * at_padded(img, n, c, y as isize + dy, x as isize + dx);
                        }
                    }
                    out.data_mut()[((n * d[1] + c) * d[2] + y) * d[3] + x] = acc;
                }
            }
        }
    }
    out
}

/// Same as [`ref_pixelwise`] over both images, with the second image's weights offset by C·K².
pub fn ref_fusion(i1: &Tensor, i2: &Tensor, f: &Tensor, k: usize) -> Tensor {
    let d = i1.dims().to_vec();
    let r = (k / 2) as isize;
    let mut out = Tensor::zeros(&d);
    for n in 0..d[0] {
        for c in 0..d[1] {
            for y in 0..d[2] {
                for x in 0..d[3] {
                    let mut acc = 0.0;
                    for (s, img) in [i1, i2].into_iter().enumerate() {
                        for dy in -r..=r {
                            for dx in -r..=r {
                                let fc = s * d[1] * k * k + c * k * k + ((dy + r) as usize) * k + (dx + r) as usize;
                                acc += at(f, n, fc, y, x) * at_padded(img, n, c, y as isize + dy, x as isize + dx);
                            }
                        }
                    }
                    out.data_mut()[((n * d[1] + c) * d[2] + y) * d[3] + x] = acc;
                }
            }
        }
    }
    out
}

/// Direct convolution with zero "same" padding (k/2) and the given stride.
pub fn ref_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    let [n, cin, h, wd] = [x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]];
    let (cout, k) = (w.dims()[0], w.dims()[2]);
    let pad = (k / 2) as isize;
    let (oh, ow) = (h.div_ceil(stride), wd.div_ceil(stride));
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    for b_ in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[co];
                    for ci in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride) as isize + ky as isize - pad;
                                let ix = (ox * stride) as isize + kx as isize - pad;
                                acc += at(w, co, ci, ky, kx) * at_padded(x, b_, ci, iy, ix);
                            }
                        }
                    }
                    out.data_mut()[((b_ * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    out
}

/// Bilinear ×2 with corner pixels aligned: source coordinate i·(n−1)/(2n−1).
pub fn ref_upsample2x(x: &Tensor) -> Tensor {
    let d = x.dims();
    let (h, w) = (d[2], d[3]);
    let (oh, ow) = (2 * h, 2 * w);
    let coord = |i: usize, n: usize, on: usize| -> (usize, usize, f64) {
        if n == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n - 1) as f64 / (on - 1) as f64;
        let i0 = (s.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Tensor::zeros(&[d[0], d[1], oh, ow]);
    for n in 0..d[0] {
        for c in 0..d[1] {
            for oy in 0..oh {
                let (y0, y1, fy) = coord(oy, h, oh);
                for ox in 0..ow {
                    let (x0, x1, fx) = coord(ox, w, ow);
                    let top = at(x, n, c, y0, x0) * (1.0 - fx) + at(x, n, c, y0, x1) * fx;
                    let bot = at(x, n, c, y1, x0) * (1.0 - fx) + at(x, n, c, y1, x1) * fx;
                    out.data_mut()[((n * d[1] + c) * oh + oy) * ow + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A random filtering instance within H, W ≤ 8, K ∈ {3, 5}, C ∈ {1, 3}.
pub fn random_filter_case(rng: &mut impl Rng) -> (Tensor, Tensor, usize) {
    let k = if rng.gen_bool(0.5) { 3 } else { 5 };
    let c = if rng.gen_bool(0.5) { 1 } else { 3 };
    let (h, w) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
    let n = rng.gen_range(1..=2);
    let img = uniform(&[n, c, h, w], 0.0, 1.0, rng);
    let ker = uniform(&[n, c * k * k, h, w], -1.0, 1.0, rng);
    (img, ker, k)
}

pub fn random_fusion_case(rng: &mut impl Rng) -> (Tensor, Tensor, Tensor, usize) {
    let (i1, _, k) = random_filter_case(rng);
    let d = i1.dims().to_vec();
    let i2 = uniform(&d, 0.0, 1.0, rng);
    let f = uniform(&[d[0], 2 * d[1] * k * k, d[2], d[3]], -1.0, 1.0, rng);
    (i1, i2, f, k)
}
