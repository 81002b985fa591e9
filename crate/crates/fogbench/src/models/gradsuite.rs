//! Finite-difference audit of every differentiable op and of the three
//! composed networks.
//!
//! Composed models are probed with weights redrawn at unit forward gain
//! (N(0, 2/fan_in)) rather than the training init: at σ 0.02 the
//! activations of a four-layer net are below single-precision
//! finite-difference resolution, which would make the check vacuous, and
//! any larger flat σ amplifies activations layer over layer until single
//! hidden units dominate the gradient. Kinked coordinates are re-drawn by
//! the checker itself, so depth costs probes, not accuracy.

use super::{Binding, PatchDiscriminator, SteeringPredictor, TranslationGenerator};
use crate::error::Result;
use crate::rng::substream;
use crate::tensor::{grad_check, GradCheckConfig, Param, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Worst relative error seen for one case across all probed seeds.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Values with |v| in [min_abs, 1]: finite differences stay clear of
/// relu/abs kinks.
fn kink_free(rng: &mut ChaCha8Rng, n: usize, min_abs: f32) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(min_abs..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn param(shape: Vec<usize>, data: Vec<f32>) -> Param {
    Param::new(Tensor::new(shape, data).expect("shape matches data"))
}

/// Redraws parameters at probe scale: weights N(0, 2/fan_in) so every
/// layer has roughly unit forward gain, biases U(−0.05, 0.05).
fn reinit_for_probe(params: &[Param], rng: &mut ChaCha8Rng) {
    for p in params {
        let mut t = p.borrow_mut();
        let shape = t.shape().to_vec();
        if shape.len() > 1 {
            let fan_in: usize = if shape.len() == 4 {
                shape[1] * shape[2] * shape[3]
            } else {
                shape[0]
            };
            let dist = Normal::new(0.0f32, (2.0 / fan_in as f32).sqrt()).expect("valid stddev");
            for v in t.data_mut() {
                *v = dist.sample(rng);
            }
        } else {
            for v in t.data_mut() {
                *v = rng.gen_range(-0.05..0.05);
            }
        }
    }
}

/// Runs every case over `seeds` seeds and reports the worst relative error
/// per case. The caller judges against its tolerance.
pub fn gradient_suite(seeds: u64) -> Result<Vec<SuiteCase>> {
    let mut cases: Vec<SuiteCase> = Vec::new();
    let record = |name: &'static str, err: f64, out: &mut Vec<SuiteCase>| match out
        .iter_mut()
        .find(|c| c.name == name)
    {
        Some(c) => c.max_rel_err = c.max_rel_err.max(err),
        None => out.push(SuiteCase {
            name,
            max_rel_err: err,
        }),
    };

    for seed in 0..seeds {
        // A step above the checker default: kinked coordinates are
        // re-drawn rather than crossed, so the step only has to beat the
        // single-precision noise floor of the forward pass, not kink
        // density.
        let cfg = GradCheckConfig {
            seed,
            max_coords: 6,
            h: 3e-3,
            ..GradCheckConfig::default()
        };
        let mut rng = substream(seed, "gradsuite");

        // Arithmetic ops.
        {
            let a = param(vec![2, 3], kink_free(&mut rng, 6, 0.1));
            let b = param(vec![2, 3], kink_free(&mut rng, 6, 0.1));
            let err = grad_check(
                &[a.clone(), b.clone()],
                |tape| {
                    let ai = tape.param(&a);
                    let bi = tape.param(&b);
                    let s = tape.add(ai, bi)?;
                    let d = tape.sub(s, bi)?;
                    let sc = tape.scale(d, 1.7);
                    let sh = tape.add_scalar(sc, 0.3);
                    let sq = tape.square(sh);
                    Ok(tape.sum(sq))
                },
                &cfg,
            )?
            .max_rel_err;
            record("add_sub_scale_add_scalar_square_sum", err, &mut cases);
        }

        // Elementwise nonlinearities, kink-free inputs.
        {
            let a = param(vec![8], kink_free(&mut rng, 8, 0.1));
            let err = grad_check(
                std::slice::from_ref(&a),
                |tape| {
                    let ai = tape.param(&a);
                    let r = tape.relu(ai);
                    let l = tape.leaky_relu(r, 0.2);
                    let t = tape.tanh(l);
                    let ab = tape.abs(t);
                    Ok(tape.mean(ab))
                },
                &cfg,
            )?
            .max_rel_err;
            record("relu_leaky_relu_tanh_abs_mean", err, &mut cases);
        }

        // Reshape + upsample.
        {
            let a = param(vec![1, 2, 3, 4], kink_free(&mut rng, 24, 0.05));
            let err = grad_check(
                std::slice::from_ref(&a),
                |tape| {
                    let ai = tape.param(&a);
                    let up = tape.upsample_nearest2(ai)?;
                    let flat = tape.reshape(up, vec![1, 96])?;
                    let sq = tape.square(flat);
                    Ok(tape.mean(sq))
                },
                &cfg,
            )?
            .max_rel_err;
            record("upsample_reshape", err, &mut cases);
        }

        // conv2d over input, weight, and bias; kernel alternates between
        // the two sizes the networks use.
        {
            let k = 3 + (seed % 2) as usize;
            let x = param(vec![1, 2, 5, 5], kink_free(&mut rng, 50, 0.01));
            let w = param(vec![3, 2, k, k], kink_free(&mut rng, 6 * k * k, 0.01));
            let b = param(vec![3], kink_free(&mut rng, 3, 0.01));
            let err = grad_check(
                &[x.clone(), w.clone(), b.clone()],
                |tape| {
                    let xi = tape.param(&x);
                    let wi = tape.param(&w);
                    let bi = tape.param(&b);
                    let y = tape.conv2d(xi, wi, bi, 2, 1)?;
                    let sq = tape.square(y);
                    Ok(tape.mean(sq))
                },
                &cfg,
            )?
            .max_rel_err;
            record("conv2d", err, &mut cases);
        }

        // dense over input, weight, and bias.
        {
            let x = param(vec![2, 3], kink_free(&mut rng, 6, 0.01));
            let w = param(vec![3, 2], kink_free(&mut rng, 6, 0.01));
            let b = param(vec![2], kink_free(&mut rng, 2, 0.01));
            let err = grad_check(
                &[x.clone(), w.clone(), b.clone()],
                |tape| {
                    let xi = tape.param(&x);
                    let wi = tape.param(&w);
                    let bi = tape.param(&b);
                    let y = tape.dense(xi, wi, bi)?;
                    let sq = tape.square(y);
                    Ok(tape.mean(sq))
                },
                &cfg,
            )?
            .max_rel_err;
            record("dense", err, &mut cases);
        }

        // instance_norm.
        {
            let x = param(vec![1, 2, 4, 4], kink_free(&mut rng, 32, 0.01));
            let err = grad_check(
                std::slice::from_ref(&x),
                |tape| {
                    let xi = tape.param(&x);
                    let n = tape.instance_norm(xi, 1e-5)?;
                    let t = tape.tanh(n);
                    let sq = tape.square(t);
                    Ok(tape.mean(sq))
                },
                &cfg,
            )?
            .max_rel_err;
            record("instance_norm", err, &mut cases);
        }

        // Composed steering predictor, including the input pixels.
        {
            let mut init = substream(seed, "gradsuite/predictor");
            let model = SteeringPredictor::new(&mut init, 16)?;
            reinit_for_probe(&model.params(), &mut rng);
            let input = param(vec![1, 3, 16, 16], kink_free(&mut rng, 3 * 256, 0.01));
            let mut probes = model.params();
            probes.push(input.clone());
            let err = grad_check(
                &probes,
                |tape| {
                    let x = tape.param(&input);
                    let pred = model.forward(tape, x, Binding::Trainable)?;
                    Ok(tape.mean(pred))
                },
                &cfg,
            )?
            .max_rel_err;
            record("composed_predictor", err, &mut cases);
        }

        // Composed generator.
        {
            let mut init = substream(seed, "gradsuite/generator");
            let model = TranslationGenerator::new(&mut init, 2);
            reinit_for_probe(&model.params(), &mut rng);
            let input = param(vec![1, 3, 16, 16], kink_free(&mut rng, 3 * 256, 0.01));
            let mut probes = model.params();
            probes.push(input.clone());
            let err = grad_check(
                &probes,
                |tape| {
                    let x = tape.param(&input);
                    let out = model.forward(tape, x, Binding::Trainable)?;
                    let sq = tape.square(out);
                    Ok(tape.mean(sq))
                },
                &cfg,
            )?
            .max_rel_err;
            record("composed_generator", err, &mut cases);
        }

        // Composed discriminator.
        {
            let mut init = substream(seed, "gradsuite/discriminator");
            let model = PatchDiscriminator::new(&mut init);
            reinit_for_probe(&model.params(), &mut rng);
            let input = param(vec![1, 3, 16, 16], kink_free(&mut rng, 3 * 256, 0.01));
            let mut probes = model.params();
            probes.push(input.clone());
            let err = grad_check(
                &probes,
                |tape| {
                    let x = tape.param(&input);
                    let scores = model.forward(tape, x, Binding::Trainable)?;
                    let sq = tape.square(scores);
                    Ok(tape.mean(sq))
                },
                &cfg,
            )?
            .max_rel_err;
            record("composed_discriminator", err, &mut cases);
        }
    }
    Ok(cases)
}
