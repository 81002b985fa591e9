//! Objective image-quality metrics on 8-bit images: MSE, PSNR, and
//! windowed structural similarity.
//!
//! All arithmetic is f64 in [0, 255] units. Model-space tensors must be
//! de-normalized to images before measuring.

use crate::error::{Error, Result};
use crate::ppm::Image;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 6.5025; // (0.01 * 255)^2
const C2: f64 = 58.5225; // (0.03 * 255)^2

/// All three metrics for one image pair.
///
/// `mse = 0` exactly when `psnr` is the +∞ sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqaResult {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

pub fn evaluate(a: &Image, b: &Image) -> Result<IqaResult> {
    Ok(IqaResult {
        mse: mse(a, b)?,
        psnr: psnr(a, b)?,
        ssim: ssim(a, b)?,
    })
}

// ── pixel metrics ──

fn check_shapes(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::shape(
            op,
            format!("{}x{} vs {}x{}", a.width, a.height, b.width, b.height),
        ));
    }
    Ok(())
}

/// Mean squared difference over all pixels and channels.
pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes("mse", a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Peak signal-to-noise ratio in dB; +∞ for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

// ── structural similarity ──

/// Which planes SSIM is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SsimMode {
    /// Luma plane 0.299R + 0.587G + 0.114B.
    #[default]
    Luma,
    /// Mean of the per-channel scores.
    PerChannel,
}

/// Luma-plane SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over
/// valid window positions only.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with_mode(a, b, SsimMode::Luma)
}

pub fn ssim_with_mode(a: &Image, b: &Image, mode: SsimMode) -> Result<f64> {
    check_shapes("ssim", a, b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::contract(
            "ssim",
            format!(
                "image {}x{} smaller than the {WINDOW}x{WINDOW} window",
                a.width, a.height
            ),
        ));
    }
    match mode {
        SsimMode::Luma => Ok(ssim_plane(
            &luma_plane(a),
            &luma_plane(b),
            a.width,
            a.height,
        )),
        SsimMode::PerChannel => {
            let mut total = 0.0;
            for ch in 0..3 {
                total += ssim_plane(
                    &channel_plane(a, ch),
                    &channel_plane(b, ch),
                    a.width,
                    a.height,
                );
            }
            Ok(total / 3.0)
        }
    }
}

fn luma_plane(img: &Image) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|px| 0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2]))
        .collect()
}

fn channel_plane(img: &Image, ch: usize) -> Vec<f64> {
    img.data
        .chunks_exact(3)
        .map(|px| f64::from(px[ch]))
        .collect()
}

fn gaussian_kernel_1d() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let mid = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Valid-region Gaussian filter, separable form. Output is
/// (w − 10) × (h − 10).
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let wo = w - (WINDOW - 1);
    let ho = h - (WINDOW - 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * plane[y * w + x + i];
            }
            rows[y * wo + x] = acc;
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                acc += kv * rows[(y + i) * wo + x];
            }
            out[y * wo + x] = acc;
        }
    }
    out
}

fn ssim_plane(pa: &[f64], pb: &[f64], w: usize, h: usize) -> f64 {
    let k = gaussian_kernel_1d();
    let sq_a: Vec<f64> = pa.iter().map(|v| v * v).collect();
    let sq_b: Vec<f64> = pb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = pa.iter().zip(pb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(pa, w, h, &k);
    let mu_b = filter_valid(pb, w, h, &k);
    let e_sq_a = filter_valid(&sq_a, w, h, &k);
    let e_sq_b = filter_valid(&sq_b, w, h, &k);
    let e_ab = filter_valid(&ab, w, h, &k);

    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = e_sq_a[i] - ma * ma;
        let var_b = e_sq_b[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += (2.0 * ma * mb + C1) * (2.0 * cov + C2)
            / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2));
    }
    total / mu_a.len() as f64
}

/// Direct per-window evaluation of luma SSIM: a 2-D kernel, explicit window
/// loops, and mean-subtracted moment sums. Deliberately shares no code with
/// [`ssim`]; it exists as an independent oracle for it.
pub fn ssim_reference(a: &Image, b: &Image) -> Result<f64> {
    check_shapes("ssim", a, b)?;
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::contract(
            "ssim",
            format!(
                "image {}x{} smaller than the {WINDOW}x{WINDOW} window",
                a.width, a.height
            ),
        ));
    }
    let (w, h) = (a.width, a.height);
    let pa = luma_plane(a);
    let pb = luma_plane(b);

    let mut kernel = [[0.0f64; WINDOW]; WINDOW];
    let mid = (WINDOW / 2) as f64;
    let mut ksum = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - mid, j as f64 - mid);
            *v = (-(dy * dy + dx * dx) / (2.0 * SIGMA * SIGMA)).exp();
            ksum += *v;
        }
    }
    for row in &mut kernel {
        for v in row {
            *v /= ksum;
        }
    }

    let mut total = 0.0;
    let mut windows = 0usize;
    for wy in 0..=(h - WINDOW) {
        for wx in 0..=(w - WINDOW) {
            let mut ma = 0.0;
            let mut mb = 0.0;
            for (i, row) in kernel.iter().enumerate() {
                for (j, &kv) in row.iter().enumerate() {
                    ma += kv * pa[(wy + i) * w + wx + j];
                    mb += kv * pb[(wy + i) * w + wx + j];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for (i, row) in kernel.iter().enumerate() {
                for (j, &kv) in row.iter().enumerate() {
                    let da = pa[(wy + i) * w + wx + j] - ma;
                    let db = pb[(wy + i) * w + wx + j] - mb;
                    var_a += kv * da * da;
                    var_b += kv * db * db;
                    cov += kv * da * db;
                }
            }
            total += (2.0 * ma * mb + C1) * (2.0 * cov + C2)
                / ((ma * ma + mb * mb + C1) * (var_a + var_b + C2));
            windows += 1;
        }
    }
    Ok(total / windows as f64)
}
