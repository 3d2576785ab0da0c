//! Raw forward/backward kernels on flat NCHW buffers. Shape validation happens in `Graph`.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_hw(&self) -> (usize, usize) {
        (
            (self.h + 2 * self.pad - self.k) / self.stride + 1,
            (self.w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *o = if ix < 0 || ix >= g.w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (ci * g.k + ky) * g.k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] = beta·c + a[m×k]·b[k×n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: callers pass buffers holding at least m·k, k·n and m·n elements laid out
    // according to the given strides; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let r = g.rows();
    let mut out = vec![0.0; g.n * g.cout * p];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![0.0; r * p] };
    for n in 0..g.n {
        let xn = &x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w];
        let on = &mut out[n * g.cout * p..(n + 1) * g.cout * p];
        for (co, row) in on.chunks_mut(p).enumerate() {
            row.fill(b[co]);
        }
        let src: &[f64] = if g.is_pointwise() {
            xn
        } else {
            im2col(g, xn, &mut cols);
            &cols
        };
        gemm(g.cout, r, p, w, (r as isize, 1), src, (p as isize, 1), 1.0, on);
    }
    out
}

/// Returns `(dx, dw, db)`; each is only computed when requested.
pub(crate) fn conv2d_backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    want: (bool, bool, bool),
) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
    let (ho, wo) = g.out_hw();
    let p = ho * wo;
    let r = g.rows();
    let plane_in = g.cin * g.h * g.w;
    let mut dx = want.0.then(|| vec![0.0; x.len()]);
    let mut dw = want.1.then(|| vec![0.0; w.len()]);
    let db = want.2.then(|| {
        let mut db = vec![0.0; g.cout];
        for n in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let off = (n * g.cout + co) * p;
                *acc += dout[off..off + p].iter().sum::<f64>();
            }
        }
        db
    });
    let mut cols = vec![0.0; r * p];
    for n in 0..g.n {
        let xn = &x[n * plane_in..(n + 1) * plane_in];
        let dn = &dout[n * g.cout * p..(n + 1) * g.cout * p];
        if let Some(dw) = dw.as_mut() {
            let src: &[f64] = if g.is_pointwise() {
                xn
            } else {
                im2col(g, xn, &mut cols);
                &cols
            };
            // dW[cout×r] += dout[cout×p] · colsᵀ[p×r]
            gemm(g.cout, p, r, dn, (p as isize, 1), src, (1, p as isize), 1.0, dw);
        }
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * plane_in..(n + 1) * plane_in];
            if g.is_pointwise() {
                gemm(r, g.cout, p, w, (1, r as isize), dn, (p as isize, 1), 1.0, dxn);
            } else {
                // dcols[r×p] = Wᵀ[r×cout] · dout[cout×p]
                gemm(r, g.cout, p, w, (1, r as isize), dn, (p as isize, 1), 0.0, &mut cols);
                col2im(g, &cols, dxn);
            }
        }
    }
    (dx, dw, db)
}

/// Per-axis sampling table for align-corners bilinear resampling.
fn bilinear_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|o| {
            if src == 1 || dst == 1 {
                return (0, 0, 0.0);
            }
            let pos = o as f64 * (src - 1) as f64 / (dst - 1) as f64;
            let i0 = (pos.floor() as usize).min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

pub(crate) fn upsample2x_forward(planes: usize, h: usize, w: usize, x: &[f64]) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let ys = bilinear_axis(h, ho);
    let xs = bilinear_axis(w, wo);
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        let dst = &mut out[pl * ho * wo..(pl + 1) * ho * wo];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[oy * wo + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

pub(crate) fn upsample2x_backward(planes: usize, h: usize, w: usize, dout: &[f64]) -> Vec<f64> {
    let (ho, wo) = (2 * h, 2 * w);
    let ys = bilinear_axis(h, ho);
    let xs = bilinear_axis(w, wo);
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        let src = &dout[pl * ho * wo..(pl + 1) * ho * wo];
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let g = src[oy * wo + ox];
                dst[y0 * w + x0] += g * (1.0 - fy) * (1.0 - fx);
                dst[y0 * w + x1] += g * (1.0 - fy) * fx;
                dst[y1 * w + x0] += g * fy * (1.0 - fx);
                dst[y1 * w + x1] += g * fy * fx;
            }
        }
    }
    dx
}

/// Valid-mode separable filtering of each plane with a 1-D `taps` along both axes.
pub(crate) fn blur_valid_forward(planes: usize, h: usize, w: usize, taps: &[f64], x: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut tmp = vec![0.0; h * wo];
    let mut out = vec![0.0; planes * ho * wo];
    for pl in 0..planes {
        let src = &x[pl * h * w..(pl + 1) * h * w];
        for y in 0..h {
            for ox in 0..wo {
                let row = &src[y * w + ox..y * w + ox + k];
                tmp[y * wo + ox] = row.iter().zip(taps).map(|(a, t)| a * t).sum();
            }
        }
        let dst = &mut out[pl * ho * wo..(pl + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut acc = 0.0;
                for (t, tap) in taps.iter().enumerate() {
                    acc += tmp[(oy + t) * wo + ox] * tap;
                }
                dst[oy * wo + ox] = acc;
            }
        }
    }
    out
}

pub(crate) fn blur_valid_backward(planes: usize, h: usize, w: usize, taps: &[f64], dout: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (ho, wo) = (h + 1 - k, w + 1 - k);
    let mut dtmp = vec![0.0; h * wo];
    let mut dx = vec![0.0; planes * h * w];
    for pl in 0..planes {
        dtmp.fill(0.0);
        let src = &dout[pl * ho * wo..(pl + 1) * ho * wo];
        for oy in 0..ho {
            for ox in 0..wo {
                let g = src[oy * wo + ox];
                for (t, tap) in taps.iter().enumerate() {
                    dtmp[(oy + t) * wo + ox] += g * tap;
                }
            }
        }
        let dst = &mut dx[pl * h * w..(pl + 1) * h * w];
        for y in 0..h {
            for ox in 0..wo {
                let g = dtmp[y * wo + ox];
                for (t, tap) in taps.iter().enumerate() {
                    dst[y * w + ox + t] += g * tap;
                }
            }
        }
    }
    dx
}
