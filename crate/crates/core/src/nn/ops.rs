//! Straight-line kernels for the supported layer kinds.
//!
//! Layouts: images are `[C, H, W]`, conv weights `[C_out, C_in, kH, kW]`,
//! dense weights `[out, in]`.

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.padding - self.kh) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.padding - self.kw) / self.stride + 1
    }
}

/// Patch matrix: row `p` (output position) holds the `c_in·kh·kw` input
/// values under the kernel, zero where the kernel overhangs the padding.
fn im2col(g: &ConvGeom, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let kk = g.c_in * g.kh * g.kw;
    let mut cols = vec![0.0; oh * ow * kk];
    for oy in 0..oh {
        for ox in 0..ow {
            let patch = &mut cols[(oy * ow + ox) * kk..(oy * ow + ox + 1) * kk];
            for ci in 0..g.c_in {
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let row = &input[(ci * g.h + iy as usize) * g.w..(ci * g.h + iy as usize + 1) * g.w];
                    let dst = &mut patch[(ci * g.kh + ky) * g.kw..(ci * g.kh + ky + 1) * g.kw];
                    for (kx, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            *d = row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add patch rows back into an image.
fn col2im(g: &ConvGeom, cols: &[f64]) -> Vec<f64> {
    let (oh, ow) = (g.out_h(), g.out_w());
    let kk = g.c_in * g.kh * g.kw;
    let mut img = vec![0.0; g.c_in * g.h * g.w];
    for oy in 0..oh {
        for ox in 0..ow {
            let patch = &cols[(oy * ow + ox) * kk..(oy * ow + ox + 1) * kk];
            for ci in 0..g.c_in {
                for ky in 0..g.kh {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = (ci * g.h + iy as usize) * g.w;
                    let src = &patch[(ci * g.kh + ky) * g.kw..(ci * g.kh + ky + 1) * g.kw];
                    for (kx, v) in src.iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            img[base + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
    img
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the loop vectorize without reassociation flags
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[co] = bias[co] + sum_{ci,ky,kx} w[co,ci,ky,kx] * in[ci, oy*s+ky-p, ox*s+kx-p]`
pub(crate) fn conv2d(g: &ConvGeom, input: &[f64], weight: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let npos = g.out_h() * g.out_w();
    let kk = g.c_in * g.kh * g.kw;
    let cols = im2col(g, input);
    let mut out = vec![0.0; g.c_out * npos];
    for co in 0..g.c_out {
        let w = &weight[co * kk..(co + 1) * kk];
        let b = bias.map_or(0.0, |b| b[co]);
        for (p, o) in out[co * npos..(co + 1) * npos].iter_mut().enumerate() {
            *o = b + dot(w, &cols[p * kk..(p + 1) * kk]);
        }
    }
    out
}

/// Vector-Jacobian product of `conv2d` with respect to its input.
pub(crate) fn conv2d_grad_input(g: &ConvGeom, grad_out: &[f64], weight: &[f64]) -> Vec<f64> {
    let npos = g.out_h() * g.out_w();
    let kk = g.c_in * g.kh * g.kw;
    let mut dcols = vec![0.0; npos * kk];
    for co in 0..g.c_out {
        let w = &weight[co * kk..(co + 1) * kk];
        for p in 0..npos {
            let gv = grad_out[co * npos + p];
            if gv != 0.0 {
                axpy(gv, w, &mut dcols[p * kk..(p + 1) * kk]);
            }
        }
    }
    col2im(g, &dcols)
}

/// Accumulates weight and bias gradients of `conv2d` into `gw` / `gb`.
pub(crate) fn conv2d_grad_params(
    g: &ConvGeom,
    grad_out: &[f64],
    input: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let npos = g.out_h() * g.out_w();
    let kk = g.c_in * g.kh * g.kw;
    let cols = im2col(g, input);
    for co in 0..g.c_out {
        let gplane = &grad_out[co * npos..(co + 1) * npos];
        gb[co] += gplane.iter().sum::<f64>();
        let gwr = &mut gw[co * kk..(co + 1) * kk];
        for (p, &gv) in gplane.iter().enumerate() {
            if gv != 0.0 {
                axpy(gv, &cols[p * kk..(p + 1) * kk], gwr);
            }
        }
    }
}

pub(crate) fn dense(input: &[f64], weight: &[f64], bias: Option<&[f64]>, n_out: usize) -> Vec<f64> {
    let n_in = input.len();
    (0..n_out)
        .map(|o| {
            let row = &weight[o * n_in..(o + 1) * n_in];
            dot(row, input) + bias.map_or(0.0, |b| b[o])
        })
        .collect()
}

pub(crate) fn dense_grad_input(grad_out: &[f64], weight: &[f64], n_in: usize) -> Vec<f64> {
    let mut gin = vec![0.0; n_in];
    for (o, &g) in grad_out.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        axpy(g, &weight[o * n_in..(o + 1) * n_in], &mut gin);
    }
    gin
}

pub(crate) fn dense_grad_params(grad_out: &[f64], input: &[f64], gw: &mut [f64], gb: &mut [f64]) {
    let n_in = input.len();
    for (o, &g) in grad_out.iter().enumerate() {
        gb[o] += g;
        axpy(g, input, &mut gw[o * n_in..(o + 1) * n_in]);
    }
}

/// Non-overlapping-or-strided average pooling without padding.
pub(crate) fn avgpool(c: usize, h: usize, w: usize, k: usize, s: usize, input: &[f64]) -> Vec<f64> {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let norm = 1.0 / (k * k) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for ky in 0..k {
                    let row = (ch * h + oy * s + ky) * w + ox * s;
                    acc += input[row..row + k].iter().sum::<f64>();
                }
                out[(ch * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    out
}

pub(crate) fn avgpool_grad(c: usize, h: usize, w: usize, k: usize, s: usize, grad_out: &[f64]) -> Vec<f64> {
    let (oh, ow) = ((h - k) / s + 1, (w - k) / s + 1);
    let norm = 1.0 / (k * k) as f64;
    let mut gin = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out[(ch * oh + oy) * ow + ox] * norm;
                for ky in 0..k {
                    let row = (ch * h + oy * s + ky) * w + ox * s;
                    gin[row..row + k].iter_mut().for_each(|v| *v += g);
                }
            }
        }
    }
    gin
}

#[inline]
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Loop with explicit bounds checks instead of precomputed ranges.
    fn naive_conv(g: &ConvGeom, input: &[f64], weight: &[f64]) -> Vec<f64> {
        let (oh, ow) = (g.out_h(), g.out_w());
        let mut out = vec![0.0; g.c_out * oh * ow];
        for co in 0..g.c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..g.c_in {
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                acc += weight[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx]
                                    * input[(ci * g.h + iy as usize) * g.w + ix as usize];
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_naive_loop_for_strides_and_padding() {
        let mut seed = 1u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 0.5
        };
        for &(stride, padding, kh) in &[(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 0, 2), (3, 2, 5), (1, 0, 1)] {
            let g = ConvGeom { c_in: 2, h: 7, w: 6, c_out: 3, kh, kw: kh, stride, padding };
            let input: Vec<f64> = (0..2 * 7 * 6).map(|_| next()).collect();
            let weight: Vec<f64> = (0..3 * 2 * kh * kh).map(|_| next()).collect();
            let fast = conv2d(&g, &input, &weight, None);
            let slow = naive_conv(&g, &input, &weight);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-12);
            }
            // <conv(x), y> == <x, conv^T(y)>
            let y: Vec<f64> = (0..fast.len()).map(|_| next()).collect();
            let lhs: f64 = fast.iter().zip(&y).map(|(a, b)| a * b).sum();
            let gx = conv2d_grad_input(&g, &y, &weight);
            let rhs: f64 = gx.iter().zip(&input).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn avgpool_adjoint() {
        let x: Vec<f64> = (0..2 * 4 * 4).map(|i| (i as f64).sin()).collect();
        let y = avgpool(2, 4, 4, 2, 2, &x);
        assert_eq!(y.len(), 8);
        let r: Vec<f64> = (0..8).map(|i| (i as f64).cos()).collect();
        let lhs: f64 = y.iter().zip(&r).map(|(a, b)| a * b).sum();
        let g = avgpool_grad(2, 4, 4, 2, 2, &r);
        let rhs: f64 = g.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
