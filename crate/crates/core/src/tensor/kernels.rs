//! Raw float kernels behind the tape operations.

/// Row-major `c = a · b + beta · c` where `a` is `m×k` and `b` is `k×n`.
///
/// `a_t` / `b_t` read the operand as stored transposed (`k×m` / `n×k`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, beta: f32, c: &mut [f32]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: the slices were length-checked above against the strides.
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

/// Unfolds one `[c, h, w]` image into `[c·k·k, h·w]` patch columns with
/// zero "same" padding.
pub(crate) fn im2col(input: &[f32], c: usize, h: usize, w: usize, k: usize, col: &mut [f32]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    debug_assert_eq!(col.len(), c * k * k * hw);
    for ci in 0..c {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    let out = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    // valid x range where 0 <= x + dx < w
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    out[..x0.min(w)].fill(0.0);
                    if x1 > x0 {
                        let s0 = (x0 as isize + dx) as usize;
                        out[x0..x1].copy_from_slice(&src[s0..s0 + (x1 - x0)]);
                    }
                    if x1 < w {
                        out[x1.max(x0)..].fill(0.0);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `out`.
pub(crate) fn col2im(col: &[f32], c: usize, h: usize, w: usize, k: usize, out: &mut [f32]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * hw..(row + 1) * hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let x0 = (-dx).max(0) as usize;
                    let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                    if x1 <= x0 {
                        continue;
                    }
                    let s0 = (x0 as isize + dx) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x1 - x0)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

pub(crate) struct ConvDims {
    pub n: usize,
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

pub(crate) fn conv2d_forward(x: &[f32], weight: &[f32], d: &ConvDims) -> Vec<f32> {
    let hw = d.h * d.w;
    let ck = d.cin * d.k * d.k;
    let mut out = vec![0.0f32; d.n * d.cout * hw];
    let mut col = vec![0.0f32; ck * hw];
    for b in 0..d.n {
        im2col(&x[b * d.cin * hw..(b + 1) * d.cin * hw], d.cin, d.h, d.w, d.k, &mut col);
        gemm(
            d.cout,
            ck,
            hw,
            weight,
            false,
            &col,
            false,
            0.0,
            &mut out[b * d.cout * hw..(b + 1) * d.cout * hw],
        );
    }
    out
}

/// Returns `(d input, d weight)`; either may be skipped.
pub(crate) fn conv2d_backward(
    x: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    d: &ConvDims,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f32>>, Option<Vec<f32>>) {
    let hw = d.h * d.w;
    let ck = d.cin * d.k * d.k;
    let mut gx = need_input.then(|| vec![0.0f32; d.n * d.cin * hw]);
    let mut gw = need_weight.then(|| vec![0.0f32; d.cout * ck]);
    let mut col = vec![0.0f32; ck * hw];
    for b in 0..d.n {
        let go = &grad_out[b * d.cout * hw..(b + 1) * d.cout * hw];
        if let Some(gw) = gw.as_mut() {
            im2col(&x[b * d.cin * hw..(b + 1) * d.cin * hw], d.cin, d.h, d.w, d.k, &mut col);
            gemm(d.cout, hw, ck, go, false, &col, true, 1.0, gw);
        }
        if let Some(gx) = gx.as_mut() {
            gemm(ck, d.cout, hw, weight, true, go, false, 0.0, &mut col);
            col2im(
                &col,
                d.cin,
                d.h,
                d.w,
                d.k,
                &mut gx[b * d.cin * hw..(b + 1) * d.cin * hw],
            );
        }
    }
    (gx, gw)
}

/// `eˣ` by range reduction and a degree-6 polynomial. Branch-free, so
/// loops over it vectorize; libm `expf` does not.
#[inline]
#[allow(clippy::manual_clamp, clippy::excessive_precision)]
pub(crate) fn exp_approx(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    const ROUND: f32 = 12_582_912.0; // 1.5·2²³

    // comparisons rather than `clamp` keep the loop vectorizable
    let x = if x < -87.0 {
        -87.0
    } else if x > 88.0 {
        88.0
    } else {
        x
    };
    // the low mantissa bits of `t` hold round(x·log₂e) as an integer
    let t = x * LOG2E + ROUND;
    let n = t - ROUND;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.987_569_1e-4f32;
    p = p * r + 1.398_199_9e-3;
    p = p * r + 8.333_452e-3;
    p = p * r + 4.166_579_6e-2;
    p = p * r + 1.666_666_5e-1;
    p = p * r + 5.000_000_1e-1;
    let y = p * r * r + r + 1.0;
    y * f32::from_bits(t.to_bits().wrapping_sub(0x4B40_0000 - 127) << 23)
}

#[inline]
pub(crate) fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + exp_approx(-x))
}
