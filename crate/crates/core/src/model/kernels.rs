//! Per-sample CPU kernels on channel-major (`[C, H, W]`) `f32` buffers.

/// `C = A·B + beta·C` with row-major operands; `a_t`/`b_t` read the stored
/// matrix transposed. `A` is `m × k`, `B` is `k × n`, `C` is `m × n` after
/// transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sgemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    a_t: bool,
    b: &[f32],
    b_t: bool,
    c: &mut [f32],
    beta: f32,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertions above guarantee every index touched by the
    // strides stays within the slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::sgemm(
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

/// Output side of a convolution.
pub(crate) fn conv_out_size(n: usize, k: usize, stride: usize, pad: usize) -> usize {
    (n + 2 * pad - k) / stride + 1
}

/// Unfolds `x` (`[c, h, w]`) into `[c·k·k, ho·wo]` columns, zero-padded.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cols: &mut [f32],
) {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let plane = ho * wo;
    debug_assert!(cols.len() >= c * k * k * plane);
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let drow = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        drow.fill(0.0);
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // valid ox range: 0 <= ox + kx - pad < w
                        let lo = pad.saturating_sub(kx).min(wo);
                        let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
                        drow[..lo].fill(0.0);
                        let s0 = lo + kx - pad;
                        drow[lo..hi].copy_from_slice(&srow[s0..s0 + (hi - lo)]);
                        drow[hi..].fill(0.0);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                srow[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx` (`[c, h, w]`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dx: &mut [f32],
) {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let plane = ho * wo;
    for ch in 0..c {
        let dst = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let srow = &src[oy * wo..(oy + 1) * wo];
                    if stride == 1 {
                        let lo = pad.saturating_sub(kx).min(wo);
                        let hi = (w + pad).saturating_sub(kx).min(wo).max(lo);
                        let s0 = lo + kx - pad;
                        for (d, s) in drow[s0..s0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                            *d += *s;
                        }
                    } else {
                        for (ox, s) in srow.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if ix >= 0 && ix < w as isize {
                                drow[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Geometry of one convolution applied to one sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvShape {
    pub fn ho(&self) -> usize {
        conv_out_size(self.h, self.k, self.stride, self.pad)
    }

    pub fn wo(&self) -> usize {
        conv_out_size(self.w, self.k, self.stride, self.pad)
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// `y[c_out, ho·wo] = filter · im2col(x) + bias`.
pub(crate) fn conv_forward(
    s: &ConvShape,
    x: &[f32],
    filter: &[f32],
    bias: &[f32],
    scratch: &mut Vec<f32>,
) -> Vec<f32> {
    let plane = s.ho() * s.wo();
    let kk = s.c_in * s.k * s.k;
    let mut y = vec![0f32; s.c_out * plane];
    for (co, row) in y.chunks_mut(plane).enumerate() {
        row.fill(bias[co]);
    }
    if s.is_pointwise() {
        sgemm(s.c_out, kk, plane, filter, false, x, false, &mut y, 1.0);
    } else {
        scratch.resize(kk * plane, 0.0);
        im2col(x, s.c_in, s.h, s.w, s.k, s.stride, s.pad, scratch);
        sgemm(s.c_out, kk, plane, filter, false, scratch, false, &mut y, 1.0);
    }
    y
}

/// Accumulates filter and bias gradients and, when requested, returns the
/// gradient w.r.t. the input.
pub(crate) fn conv_backward(
    s: &ConvShape,
    x: &[f32],
    filter: &[f32],
    dy: &[f32],
    dfilter: &mut [f32],
    dbias: &mut [f32],
    need_dx: bool,
    scratch: &mut Vec<f32>,
) -> Option<Vec<f32>> {
    let plane = s.ho() * s.wo();
    let kk = s.c_in * s.k * s.k;
    for (co, row) in dy.chunks(plane).enumerate() {
        dbias[co] += row.iter().sum::<f32>();
    }
    if s.is_pointwise() {
        sgemm(s.c_out, plane, kk, dy, false, x, true, dfilter, 1.0);
        if !need_dx {
            return None;
        }
        let mut dx = vec![0f32; kk * plane];
        sgemm(kk, s.c_out, plane, filter, true, dy, false, &mut dx, 0.0);
        return Some(dx);
    }
    scratch.resize(kk * plane, 0.0);
    im2col(x, s.c_in, s.h, s.w, s.k, s.stride, s.pad, scratch);
    sgemm(s.c_out, plane, kk, dy, false, scratch, true, dfilter, 1.0);
    if !need_dx {
        return None;
    }
    sgemm(kk, s.c_out, plane, filter, true, dy, false, scratch, 0.0);
    let mut dx = vec![0f32; s.c_in * s.h * s.w];
    col2im(scratch, s.c_in, s.h, s.w, s.k, s.stride, s.pad, &mut dx);
    Some(dx)
}

pub(crate) const GN_EPS: f32 = 1e-5;

/// Group normalization followed by a rectifier, per sample.
pub(crate) struct NormOutput {
    pub xhat: Vec<f32>,
    pub rstd: Vec<f32>,
    pub act: Vec<f32>,
}

pub(crate) fn group_norm_relu_forward(
    y: &[f32],
    channels: usize,
    plane: usize,
    groups: usize,
    scale: &[f32],
    offset: &[f32],
) -> NormOutput {
    let per = channels / groups;
    let n = (per * plane) as f64;
    let mut xhat = vec![0f32; y.len()];
    let mut act = vec![0f32; y.len()];
    let mut rstd = vec![0f32; groups];
    for g in 0..groups {
        let span = g * per * plane..(g + 1) * per * plane;
        let src = &y[span.clone()];
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = src
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let r = 1.0 / (var + GN_EPS as f64).sqrt();
        rstd[g] = r as f32;
        let (mean, r) = (mean as f32, r as f32);
        for c in 0..per {
            let ch = g * per + c;
            let base = ch * plane;
            let (sc, of) = (scale[ch], offset[ch]);
            for i in base..base + plane {
                let xh = (y[i] - mean) * r;
                xhat[i] = xh;
                let v = sc * xh + of;
                act[i] = if v > 0.0 { v } else { 0.0 };
            }
        }
    }
    NormOutput { xhat, rstd, act }
}

/// Backward of [`group_norm_relu_forward`]; `dact` is consumed as scratch.
#[allow(clippy::too_many_arguments)]
pub(crate) fn group_norm_relu_backward(
    mut dact: Vec<f32>,
    out: &NormOutput,
    channels: usize,
    plane: usize,
    groups: usize,
    scale: &[f32],
    dscale: &mut [f32],
    doffset: &mut [f32],
) -> Vec<f32> {
    let per = channels / groups;
    let n = (per * plane) as f32;
    // relu mask, then parameter gradients, then dxhat in place
    for (d, &a) in dact.iter_mut().zip(&out.act) {
        if a <= 0.0 {
            *d = 0.0;
        }
    }
    for ch in 0..channels {
        let span = ch * plane..(ch + 1) * plane;
        let mut ds = 0f64;
        let mut dof = 0f64;
        for (&d, &xh) in dact[span.clone()].iter().zip(&out.xhat[span.clone()]) {
            ds += (d * xh) as f64;
            dof += d as f64;
        }
        dscale[ch] += ds as f32;
        doffset[ch] += dof as f32;
        let sc = scale[ch];
        dact[span].iter_mut().for_each(|d| *d *= sc);
    }
    for g in 0..groups {
        let span = g * per * plane..(g + 1) * per * plane;
        let mut sum_d = 0f64;
        let mut sum_dx = 0f64;
        for (&d, &xh) in dact[span.clone()].iter().zip(&out.xhat[span.clone()]) {
            sum_d += d as f64;
            sum_dx += (d * xh) as f64;
        }
        let r = out.rstd[g];
        let (md, mdx) = ((sum_d as f32) / n, (sum_dx as f32) / n);
        for (d, &xh) in dact[span.clone()].iter_mut().zip(&out.xhat[span]) {
            *d = r * (*d - md - xh * mdx);
        }
    }
    dact
}

/// 2×2 stride-2 max pooling; returns pooled values and argmax offsets.
pub(crate) fn max_pool2_forward(x: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (ho, wo) = (h / 2, w / 2);
    let mut out = vec![0f32; c * ho * wo];
    let mut idx = vec![0u32; c * ho * wo];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = f32::NEG_INFINITY;
                let mut bi = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (2 * oy + dy) * w + 2 * ox + dx;
                        if src[i] > best {
                            best = src[i];
                            bi = i;
                        }
                    }
                }
                let o = ch * ho * wo + oy * wo + ox;
                out[o] = best;
                idx[o] = bi as u32;
            }
        }
    }
    (out, idx)
}

pub(crate) fn max_pool2_backward(dy: &[f32], idx: &[u32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let plane_out = (h / 2) * (w / 2);
    let mut dx = vec![0f32; c * h * w];
    for ch in 0..c {
        for o in 0..plane_out {
            let i = ch * plane_out + o;
            dx[ch * h * w + idx[i] as usize] += dy[i];
        }
    }
    dx
}
