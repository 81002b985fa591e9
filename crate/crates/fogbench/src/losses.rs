//! Scalar training objectives: the deviation-forcing regression loss, the
//! cycle/identity/least-squares GAN terms, and their weighted combination.
//!
//! Every loss is built on the caller's tape and stays differentiable; the
//! scalar values in a [`GeneratorLossBreakdown`] are read off the same tape
//! nodes the total is assembled from.

use crate::error::{Error, Result};
use crate::ppm::Image;
use crate::tensor::{Tape, TapeId};

/// Objective weights. `alpha` blends the image-translation group against
/// the deviation group and must lie strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub alpha: f32,
    pub theta: f32,
    pub lambda_cycle: f32,
    pub lambda_identity: f32,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            alpha: 0.2,
            theta: 0.5,
            lambda_cycle: 10.0,
            lambda_identity: 3.0,
        }
    }
}

impl LossWeights {
    // `!(x > 0)` deliberately rejects NaN alongside out-of-range values.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::contract(
                "loss_weights",
                format!("alpha must lie strictly inside (0, 1), got {}", self.alpha),
            ));
        }
        if !(self.theta >= 0.0) {
            return Err(Error::contract(
                "loss_weights",
                format!("theta must be >= 0, got {}", self.theta),
            ));
        }
        if !(self.lambda_cycle > 0.0) {
            return Err(Error::contract(
                "loss_weights",
                format!("lambda_cycle must be > 0, got {}", self.lambda_cycle),
            ));
        }
        if !(self.lambda_identity >= 0.0) {
            return Err(Error::contract(
                "loss_weights",
                format!("lambda_identity must be >= 0, got {}", self.lambda_identity),
            ));
        }
        Ok(())
    }
}

// ── individual terms ──

fn mae(tape: &mut Tape, a: TapeId, b: TapeId) -> Result<TapeId> {
    let diff = tape.sub(a, b)?;
    let abs = tape.abs(diff);
    Ok(tape.mean(abs))
}

/// Deviation-forcing loss: `theta − mean|pred_adv − pred_clean|`.
///
/// Negative once the mean deviation exceeds `theta`; no clamping, so the
/// pull away from the clean prediction never stops.
pub fn regress_loss(
    tape: &mut Tape,
    pred_adv: TapeId,
    pred_clean: TapeId,
    theta: f32,
) -> Result<TapeId> {
    let dev = mae(tape, pred_adv, pred_clean)?;
    let neg = tape.scale(dev, -1.0);
    Ok(tape.add_scalar(neg, theta))
}

/// [`regress_loss`] clamped at zero; selected by a config flag, off by
/// default.
pub fn regress_loss_clamped(
    tape: &mut Tape,
    pred_adv: TapeId,
    pred_clean: TapeId,
    theta: f32,
) -> Result<TapeId> {
    let raw = regress_loss(tape, pred_adv, pred_clean, theta)?;
    Ok(tape.relu(raw))
}

/// Same objective pointed at the de-fogging direction: pushes the clean
/// reconstruction of a foggy image away from the foggy image's prediction.
pub fn backward_regress_loss(
    tape: &mut Tape,
    pred_of_defogged: TapeId,
    pred_of_foggy: TapeId,
    theta: f32,
) -> Result<TapeId> {
    regress_loss(tape, pred_of_defogged, pred_of_foggy, theta)
}

/// Reconstruction loss over both directions:
/// `lambda_cycle * (MAE(x, x_rec) + MAE(y, y_rec))`.
pub fn cycle_loss(
    tape: &mut Tape,
    x: TapeId,
    x_rec: TapeId,
    y: TapeId,
    y_rec: TapeId,
    lambda_cycle: f32,
) -> Result<TapeId> {
    let fwd = mae(tape, x, x_rec)?;
    let bwd = mae(tape, y, y_rec)?;
    let sum = tape.add(fwd, bwd)?;
    Ok(tape.scale(sum, lambda_cycle))
}

/// Identity-mapping loss: each generator fed its own target domain should
/// change nothing. `lambda_identity * (MAE(phi_ab_y, y) + MAE(phi_ba_x, x))`.
pub fn identity_loss(
    tape: &mut Tape,
    y: TapeId,
    phi_ab_y: TapeId,
    x: TapeId,
    phi_ba_x: TapeId,
    lambda_identity: f32,
) -> Result<TapeId> {
    let fwd = mae(tape, phi_ab_y, y)?;
    let bwd = mae(tape, phi_ba_x, x)?;
    let sum = tape.add(fwd, bwd)?;
    Ok(tape.scale(sum, lambda_identity))
}

/// Least-squares generator term: `mean((d_fake − 1)^2)`.
pub fn gan_generator_term(tape: &mut Tape, d_fake: TapeId) -> TapeId {
    let shifted = tape.add_scalar(d_fake, -1.0);
    let sq = tape.square(shifted);
    tape.mean(sq)
}

/// Least-squares discriminator term:
/// `mean((d_real − 1)^2) + mean(d_fake^2)`.
pub fn gan_discriminator_term(tape: &mut Tape, d_real: TapeId, d_fake: TapeId) -> Result<TapeId> {
    let real_shift = tape.add_scalar(d_real, -1.0);
    let real_sq = tape.square(real_shift);
    let real_term = tape.mean(real_sq);
    let fake_sq = tape.square(d_fake);
    let fake_term = tape.mean(fake_sq);
    tape.add(real_term, fake_term)
}

/// Both least-squares GAN terms as `(generator, discriminator)`.
pub fn gan_losses(tape: &mut Tape, d_real: TapeId, d_fake: TapeId) -> Result<(TapeId, TapeId)> {
    let gen = gan_generator_term(tape, d_fake);
    let disc = gan_discriminator_term(tape, d_real, d_fake)?;
    Ok((gen, disc))
}

// ── combined objective ──

/// Tape nodes for each generator-side term, assembled by the trainer.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossTerms {
    pub regress: TapeId,
    pub cycle: TapeId,
    pub identity: TapeId,
    pub gan: TapeId,
    /// Present only when the de-fogging regression ablation is enabled.
    pub bregress: Option<TapeId>,
}

/// Scalar values of the combined objective and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorLossBreakdown {
    pub regress: f32,
    pub cycle: f32,
    pub identity: f32,
    pub gan: f32,
    pub bregress: Option<f32>,
    pub total: f32,
}

/// Blends the translation group against the deviation group:
/// `total = (1 − alpha)(cycle + identity + gan) + alpha * regress`,
/// with `bregress` joining the deviation group when enabled. Returns the
/// differentiable total alongside the scalar breakdown.
pub fn total_generator_loss(
    tape: &mut Tape,
    terms: &GeneratorLossTerms,
    weights: &LossWeights,
) -> Result<(TapeId, GeneratorLossBreakdown)> {
    weights.validate()?;
    let translation = tape.add(terms.cycle, terms.identity)?;
    let translation = tape.add(translation, terms.gan)?;
    let deviation = match terms.bregress {
        Some(b) => tape.add(terms.regress, b)?,
        None => terms.regress,
    };
    let weighted_translation = tape.scale(translation, 1.0 - weights.alpha);
    let weighted_deviation = tape.scale(deviation, weights.alpha);
    let total = tape.add(weighted_translation, weighted_deviation)?;
    let breakdown = GeneratorLossBreakdown {
        regress: tape.scalar(terms.regress)?,
        cycle: tape.scalar(terms.cycle)?,
        identity: tape.scalar(terms.identity)?,
        gan: tape.scalar(terms.gan)?,
        bregress: terms.bregress.map(|b| tape.scalar(b)).transpose()?,
        total: tape.scalar(total)?,
    };
    Ok((total, breakdown))
}

// ── visual-similarity constraint ──

/// Root-mean-square pixel distance between an input and its translation,
/// in [0, 255] units, with the `distance <= epsilon` verdict.
pub fn visual_similarity_check(x: &Image, phi_x: &Image, epsilon: f64) -> Result<(bool, f64)> {
    if x.width != phi_x.width || x.height != phi_x.height {
        return Err(Error::shape(
            "visual_similarity_check",
            format!(
                "{}x{} vs {}x{}",
                x.width, x.height, phi_x.width, phi_x.height
            ),
        ));
    }
    let sum: f64 = x
        .data
        .iter()
        .zip(&phi_x.data)
        .map(|(&a, &b)| {
            let d = f64::from(a) - f64::from(b);
            d * d
        })
        .sum();
    let distance = (sum / x.data.len() as f64).sqrt();
    Ok((distance <= epsilon, distance))
}
