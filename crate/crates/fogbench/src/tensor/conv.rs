//! Convolution kernels: im2col lowering plus a GEMM core.
//!
//! The GEMM itself is `matrixmultiply::sgemm`, which packs panels and runs
//! a fixed blocked loop order, so results are deterministic run-to-run.

/// `c = a (m×k) · b (k×n) + beta·c`, all row-major. Set `ta`/`tb` to read
/// `a`/`b` transposed (their dimensions are those *after* transposition).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    ta: bool,
    b: &[f32],
    tb: bool,
    beta: f32,
    c: &mut [f32],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    unsafe {
        if m < 8 && n >= 4 * m {
            // Skinny output rows starve the microkernel; compute Cᵀ = Bᵀ·Aᵀ
            // instead and write C through swapped strides.
            matrixmultiply::sgemm(
                n,
                k,
                m,
                1.0,
                b.as_ptr(),
                csb,
                rsb,
                a.as_ptr(),
                csa,
                rsa,
                beta,
                c.as_mut_ptr(),
                1,
                n as isize,
            );
        } else {
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
}

/// Output spatial size for one dimension.
pub(crate) fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Valid output range `[lo, hi)` for one kernel column offset: the `ox`
/// values whose source index `ox·stride + kj − padding` lands inside `[0, w)`.
#[inline]
fn valid_range(w: usize, wo: usize, kj: usize, stride: usize, padding: usize) -> (usize, usize) {
    let lo = padding.saturating_sub(kj).div_ceil(stride).min(wo);
    let hi = (w + padding - kj).div_ceil(stride).min(wo).max(lo);
    (lo, hi)
}

/// Lowers one sample `[C,H,W]` into a `[C·K·K, Ho·Wo]` column matrix with
/// zero padding.
#[allow(clippy::too_many_arguments)]
pub(crate) fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    col: &mut [f32],
) {
    let ho = conv_out_dim(h, k, stride, padding);
    let wo = conv_out_dim(w, k, stride, padding);
    debug_assert_eq!(col.len(), c * k * k * ho * wo);
    let mut row = 0;
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let dst = &mut col[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                let (lo, hi) = valid_range(w, wo, kj, stride, padding);
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    let dst_row = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    dst_row[..lo].fill(0.0);
                    dst_row[hi..].fill(0.0);
                    let base = lo * stride + kj - padding;
                    if stride == 1 {
                        dst_row[lo..hi].copy_from_slice(&src_row[base..base + hi - lo]);
                    } else {
                        for (d, s) in dst_row[lo..hi]
                            .iter_mut()
                            .zip(src_row[base..].iter().step_by(stride))
                        {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters a column matrix back onto one sample,
/// accumulating where patches overlap.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im(
    col: &[f32],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    x: &mut [f32],
) {
    let ho = conv_out_dim(h, k, stride, padding);
    let wo = conv_out_dim(w, k, stride, padding);
    debug_assert_eq!(col.len(), c * k * k * ho * wo);
    debug_assert_eq!(x.len(), c * h * w);
    let mut row = 0;
    for ci in 0..c {
        let plane = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let src = &col[row * ho * wo..(row + 1) * ho * wo];
                row += 1;
                let (lo, hi) = valid_range(w, wo, kj, stride, padding);
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * wo..(oy + 1) * wo];
                    let base = lo * stride + kj - padding;
                    if stride == 1 {
                        for (d, s) in dst_row[base..base + hi - lo]
                            .iter_mut()
                            .zip(&src_row[lo..hi])
                        {
                            *d += s;
                        }
                    } else {
                        for (i, s) in src_row[lo..hi].iter().enumerate() {
                            dst_row[base + i * stride] += s;
                        }
                    }
                }
            }
        }
    }
}
