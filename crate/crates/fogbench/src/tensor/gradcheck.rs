//! Central finite-difference verification of the backward pass.

use super::tape::{Tape, TapeId};
use super::Param;
use crate::error::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub h: f32,
    /// Per-parameter cap on probed coordinates; larger tensors are
    /// subsampled with the seeded RNG.
    pub max_coords: usize,
    pub seed: u64,
    /// Denominator floor: gradient norms below this are judged on absolute
    /// rather than relative error, which keeps single-precision
    /// finite-difference noise on near-zero gradients from registering as
    /// spurious relative error.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> GradCheckConfig {
        GradCheckConfig {
            h: 1e-3,
            max_coords: 24,
            seed: 0,
            floor: 1.0,
        }
    }
}

#[derive(Debug)]
pub struct GradCheckReport {
    /// One relative error per probed parameter, in input order.
    pub per_param: Vec<f64>,
    pub max_rel_err: f64,
    /// Coordinates discarded because a ±h step flipped an activation kink.
    pub skipped_coords: usize,
}

/// Compares the recorded backward pass of the scalar produced by `build`
/// against central finite differences over `probes`.
///
/// `build` is invoked on a fresh tape for every evaluation and must read the
/// probes' *current* values (bind them with [`Tape::param`]). The relative
/// error for one parameter is `‖g_ad − g_fd‖₂ / max(‖g_ad‖₂, ‖g_fd‖₂,
/// floor)` over the probed coordinates. Probe values are restored on exit.
///
/// A coordinate whose ±h evaluations land on a different side of some
/// relu/leaky_relu/abs kink is discarded and another is drawn: the
/// difference quotient across a kink does not estimate the derivative on
/// either side, so it says nothing about the backward rule under test.
/// Because a single-coordinate perturbation moves every pre-kink value
/// (piecewise) linearly, an unchanged kink signature at −h, 0, and +h
/// certifies the whole segment kink-free.
pub fn grad_check<F>(
    probes: &[Param],
    mut build: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Tape) -> Result<TapeId>,
{
    for p in probes {
        p.borrow_mut().zero_grad();
    }
    let eval = |build: &mut F| -> Result<(f64, u64)> {
        let mut tape = Tape::new();
        tape.enable_kink_tracking();
        let loss = build(&mut tape)?;
        Ok((tape.scalar(loss)? as f64, tape.kink_signature()))
    };

    // Analytic pass.
    let base_sig = {
        let mut tape = Tape::new();
        tape.enable_kink_tracking();
        let loss = build(&mut tape)?;
        let sig = tape.kink_signature();
        tape.backward(loss)?;
        sig
    };
    let analytic: Vec<Vec<f32>> = probes
        .iter()
        .map(|p| {
            let mut t = p.borrow_mut();
            t.take_grad().unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut per_param = Vec::with_capacity(probes.len());
    let mut skipped_coords = 0usize;
    for (p, ad) in probes.iter().zip(&analytic) {
        let numel = p.numel();
        let candidates: Vec<usize> = if numel <= cfg.max_coords {
            (0..numel).collect()
        } else {
            let pool = numel.min(cfg.max_coords.saturating_mul(16));
            rand::seq::index::sample(&mut rng, numel, pool).into_vec()
        };
        let mut err_sq = 0.0f64;
        let mut ad_sq = 0.0f64;
        let mut fd_sq = 0.0f64;
        let mut accepted = 0usize;
        for &i in &candidates {
            if accepted == cfg.max_coords {
                break;
            }
            let orig = p.borrow().data()[i];
            let plus = orig + cfg.h;
            let minus = orig - cfg.h;
            p.borrow_mut().data_mut()[i] = plus;
            let (lp, sig_p) = eval(&mut build)?;
            p.borrow_mut().data_mut()[i] = minus;
            let (lm, sig_m) = eval(&mut build)?;
            p.borrow_mut().data_mut()[i] = orig;
            if sig_p != base_sig || sig_m != base_sig {
                skipped_coords += 1;
                continue;
            }
            // Divide by the realized f32 perturbation, not the nominal 2h.
            let fd = (lp - lm) / (plus as f64 - minus as f64);
            let a = ad[i] as f64;
            err_sq += (a - fd) * (a - fd);
            ad_sq += a * a;
            fd_sq += fd * fd;
            accepted += 1;
        }
        let denom = ad_sq.sqrt().max(fd_sq.sqrt()).max(cfg.floor);
        per_param.push(err_sq.sqrt() / denom);
    }
    for p in probes {
        p.borrow_mut().zero_grad();
    }
    let max_rel_err = per_param.iter().cloned().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_param,
        max_rel_err,
        skipped_coords,
    })
}
