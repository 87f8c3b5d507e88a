//! Convolution compute kernels: same-padding shape algebra, im2col/col2im
//! and a GEMM wrapper. Activations are [C, H, W] row-major, kernels
//! [OC, IC, KH, KW]. All entry points are deterministic: the rayon split
//! assigns disjoint output rows, each reduced in a fixed order.

use rayon::prelude::*;

/// Output extent and front padding of a same-padded strided convolution:
/// `out = ceil(in / stride)`, total padding `max(0, (out−1)·stride + k − in)`
/// split floor(front)/ceil(back).
pub fn conv_extent(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let pad_total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, pad_total / 2)
}

/// Gathers conv patches: col[K][N] with K = ic·kh·kw, N = oh·ow.
#[allow(clippy::too_many_arguments)]
pub fn im2col(
    input: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let (oh, pad_h) = conv_extent(h, kh, stride);
    let (ow, pad_w) = conv_extent(w, kw, stride);
    let n = oh * ow;
    let mut col = vec![0.0f32; ic * kh * kw * n];
    for c in 0..ic {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * n;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src_row = iy as usize * w;
                    let dst_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            col[dst_row + ox] = plane[src_row + ix as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add inverse of `im2col`.
#[allow(clippy::too_many_arguments)]
pub fn col2im(
    col: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let (oh, pad_h) = conv_extent(h, kh, stride);
    let (ow, pad_w) = conv_extent(w, kw, stride);
    let n = oh * ow;
    let mut out = vec![0.0f32; ic * h * w];
    for c in 0..ic {
        let plane = &mut out[c * h * w..(c + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((c * kh + ky) * kw + kx) * n;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad_h as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = iy as usize * w;
                    let src_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad_w as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[dst_row + ix as usize] += col[src_row + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// C[m×n] = A[m×k] · B[k×n], all row-major contiguous. Splits rows across
/// threads when the work is worth it.
pub fn gemm_rowmajor(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let flops = 2 * m * k * n;
    if flops > 2_000_000 && m >= 8 {
        let half = m / 2;
        let (c_top, c_bot) = c.split_at_mut(half * n);
        let (a_top, a_bot) = a.split_at(half * k);
        rayon::join(
            || gemm_block(half, k, n, a_top, b, c_top),
            || gemm_block(m - half, k, n, a_bot, b, c_bot),
        );
    } else {
        gemm_block(m, k, n, a, b, c);
    }
}

fn gemm_block(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    if m == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m×n] = A[m×k] · B[n×k]ᵀ.
pub fn gemm_bt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// C[m×n] = A[k×m]ᵀ · B[k×n].
pub fn gemm_at(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let flops = 2 * m * k * n;
    if flops > 2_000_000 && m >= 8 {
        // Split output rows; A columns are strided views, still disjoint.
        let half = m / 2;
        let (c_top, c_bot) = c.split_at_mut(half * n);
        rayon::join(
            || gemm_at_block(0, half, m, k, n, a, b, c_top),
            || gemm_at_block(half, m - half, m, k, n, a, b, c_bot),
        );
    } else {
        gemm_at_block(0, m, m, k, n, a, b, c);
    }
}

fn gemm_at_block(
    row0: usize,
    rows: usize,
    m_full: usize,
    k: usize,
    n: usize,
    a: &[f32],
    b: &[f32],
    c: &mut [f32],
) {
    if rows == 0 {
        return;
    }
    unsafe {
        matrixmultiply::sgemm(
            rows,
            k,
            n,
            1.0,
            a.as_ptr().add(row0),
            1,
            m_full as isize,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward convolution: out[OC][OH·OW] = kernel[OC][K] · col[K][OH·OW],
/// plus an optional per-channel bias. Returns (out, col) so the backward
/// pass can reuse the gathered patches.
#[allow(clippy::too_many_arguments)]
pub fn conv_forward(
    input: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    kernel: &[f32],
    oc: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    bias: Option<&[f32]>,
) -> (Vec<f32>, Vec<f32>) {
    let (oh, _) = conv_extent(h, kh, stride);
    let (ow, _) = conv_extent(w, kw, stride);
    let n = oh * ow;
    let kdim = ic * kh * kw;
    let col = im2col(input, ic, h, w, kh, kw, stride);
    let mut out = vec![0.0f32; oc * n];
    gemm_rowmajor(oc, kdim, n, kernel, &col, &mut out);
    if let Some(b) = bias {
        out.par_chunks_mut(n)
            .zip(b.par_iter())
            .for_each(|(chunk, bv)| {
                for v in chunk {
                    *v += bv;
                }
            });
    }
    (out, col)
}

/// Gradient w.r.t. the conv kernel: dK[OC][K] = dOut[OC][N] · colᵀ.
pub fn conv_dkernel(d_out: &[f32], col: &[f32], oc: usize, kdim: usize, n: usize) -> Vec<f32> {
    let mut dk = vec![0.0f32; oc * kdim];
    gemm_bt(oc, n, kdim, d_out, col, &mut dk);
    dk
}

/// Gradient w.r.t. the conv input: col2im(kernelᵀ · dOut).
#[allow(clippy::too_many_arguments)]
pub fn conv_dinput(
    d_out: &[f32],
    kernel: &[f32],
    ic: usize,
    h: usize,
    w: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    stride: usize,
) -> Vec<f32> {
    let (oh, _) = conv_extent(h, kh, stride);
    let (ow, _) = conv_extent(w, kw, stride);
    let n = oh * ow;
    let kdim = ic * kh * kw;
    let mut dcol = vec![0.0f32; kdim * n];
    gemm_at(kdim, oc, n, kernel, d_out, &mut dcol);
    col2im(&dcol, ic, h, w, kh, kw, stride)
}

/// Per-channel bias gradient: row sums of dOut[OC][N].
pub fn bias_grad(d_out: &[f32], oc: usize, n: usize) -> Vec<f32> {
    (0..oc)
        .map(|c| d_out[c * n..(c + 1) * n].iter().map(|v| *v as f64).sum::<f64>() as f32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_padding_extents() {
        assert_eq!(conv_extent(6, 3, 3), (2, 0));
        assert_eq!(conv_extent(6, 3, 1), (6, 1));
        assert_eq!(conv_extent(5, 3, 2), (3, 1));
        assert_eq!(conv_extent(901, 3, 3), (301, 1));
        // Three stride-3 stages on 901 cells: 901 → 301 → 101 → 34.
        assert_eq!(conv_extent(301, 3, 3).0, 101);
        assert_eq!(conv_extent(101, 3, 3).0, 34);
    }

    #[test]
    fn identity_1x1_kernel() {
        let input: Vec<f32> = (0..9).map(|i| i as f32).collect();
        let (out, _) = conv_forward(&input, 1, 3, 3, &[1.0], 1, 1, 1, 1, None);
        assert_eq!(out, input);
    }

    #[test]
    fn col2im_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random data.
        let (ic, h, w, kh, kw, s) = (2usize, 5usize, 4usize, 3usize, 3usize, 2usize);
        let x: Vec<f32> = (0..ic * h * w).map(|i| ((i * 37 % 11) as f32) - 5.0).collect();
        let col = im2col(&x, ic, h, w, kh, kw, s);
        let y: Vec<f32> = (0..col.len()).map(|i| ((i * 13 % 7) as f32) - 3.0).collect();
        let lhs: f64 = col.iter().zip(&y).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        let back = col2im(&y, ic, h, w, kh, kw, s);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| (*a as f64) * (*b as f64)).sum();
        assert!((lhs - rhs).abs() < 1e-6, "{lhs} vs {rhs}");
    }

    #[test]
    fn known_3x3_convolution() {
        // Single channel 3×3 input, 3×3 averaging-style kernel, stride 1.
        let input = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        let kernel = vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let (out, _) = conv_forward(&input, 1, 3, 3, &kernel, 1, 3, 3, 1, None);
        assert_eq!(out, input);
        // Shifted kernel: picks the east neighbor (zero at the border).
        let kernel_e = vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let (out_e, _) = conv_forward(&input, 1, 3, 3, &kernel_e, 1, 3, 3, 1, None);
        assert_eq!(out_e, vec![2.0, 3.0, 0.0, 5.0, 6.0, 0.0, 8.0, 9.0, 0.0]);
    }
}
