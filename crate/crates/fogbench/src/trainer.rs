//! Training loops: predictor pretraining on labeled scenes, and the
//! alternating generator/discriminator attack procedure against a frozen
//! predictor.

use crate::data::{batch_to_tensor, load_dataset};
use crate::error::{Error, Result};
use crate::losses::{self, GeneratorLossBreakdown, GeneratorLossTerms, LossWeights};
use crate::models::{Binding, PatchDiscriminator, SteeringPredictor, TranslationGenerator};
use crate::ppm::Image;
use crate::rng::substream;
use crate::scenes::LabeledImage;
use crate::tensor::{Adam, AdamConfig, Param, Tape, Tensor};
use rand::seq::SliceRandom;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

// ── configuration ──

/// Predictor pretraining settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for SteeringConfig {
    fn default() -> SteeringConfig {
        SteeringConfig {
            epochs: 30,
            batch_size: 16,
            lr: 1e-3,
            seed: 42,
        }
    }
}

/// Attack training settings. The defaults are the study configuration:
/// alpha 0.2, theta 0.5 rad, lambda_cycle 10, lambda_identity 3,
/// 150 epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub alpha: f32,
    pub theta: f32,
    pub lambda_cycle: f32,
    pub lambda_identity: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
    /// Residual blocks in each generator.
    pub res_blocks: usize,
    /// Also push the de-fogging generator's reconstructions away from the
    /// foggy predictions (ablation; default off).
    pub enable_bregress: bool,
    /// Clamp the deviation loss at zero instead of letting it go negative
    /// (ablation; default off).
    pub clamp_regress: bool,
}

impl Default for AttackConfig {
    fn default() -> AttackConfig {
        AttackConfig {
            alpha: 0.2,
            theta: 0.5,
            lambda_cycle: 10.0,
            lambda_identity: 3.0,
            epochs: 150,
            batch_size: 4,
            lr: 2e-4,
            seed: 42,
            res_blocks: 3,
            enable_bregress: false,
            clamp_regress: false,
        }
    }
}

impl AttackConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            theta: self.theta,
            lambda_cycle: self.lambda_cycle,
            lambda_identity: self.lambda_identity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        if self.batch_size == 0 {
            return Err(Error::contract("attack_config", "batch_size must be >= 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::contract(
                "attack_config",
                format!("lr must be positive and finite, got {}", self.lr),
            ));
        }
        Ok(())
    }
}

// ── logging ──

/// One epoch of attack training: per-step means of every loss term, the
/// mean absolute deviation the generator achieved on its own batches, and
/// the epoch's wall time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainLogRecord {
    pub epoch: usize,
    pub regress: f64,
    pub cycle: f64,
    pub identity: f64,
    pub gan_gen: f64,
    pub disc_a: f64,
    pub disc_b: f64,
    pub total: f64,
    pub mean_deviation: f64,
    pub seconds: f64,
    pub bregress: Option<f64>,
}

const LOG_HEADER: &str =
    "epoch,regress,cycle,identity,gan_gen,disc_A,disc_B,total,mean_deviation,seconds";

fn log_header(with_bregress: bool) -> String {
    if with_bregress {
        format!("{LOG_HEADER},bregress")
    } else {
        LOG_HEADER.to_string()
    }
}

fn format_record(r: &TrainLogRecord) -> String {
    let mut line = format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.epoch,
        r.regress,
        r.cycle,
        r.identity,
        r.gan_gen,
        r.disc_a,
        r.disc_b,
        r.total,
        r.mean_deviation,
        r.seconds
    );
    if let Some(b) = r.bregress {
        line.push(',');
        line.push_str(&b.to_string());
    }
    line
}

/// Parses a training log written by [`train_attack`].
pub fn read_train_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != LOG_HEADER && header != log_header(true) {
        return Err(Error::contract(
            "read_train_log",
            format!("{}: unrecognized header {header:?}", path.display()),
        ));
    }
    let mut records = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() < 10 {
            return Err(Error::contract(
                "read_train_log",
                format!("{}: short row {line:?}", path.display()),
            ));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| {
                Error::contract(
                    "read_train_log",
                    format!("{}: unparsable field {s:?}", path.display()),
                )
            })
        };
        records.push(TrainLogRecord {
            epoch: num(f[0])? as usize,
            regress: num(f[1])?,
            cycle: num(f[2])?,
            identity: num(f[3])?,
            gan_gen: num(f[4])?,
            disc_a: num(f[5])?,
            disc_b: num(f[6])?,
            total: num(f[7])?,
            mean_deviation: num(f[8])?,
            seconds: num(f[9])?,
            bregress: f.get(10).map(|s| num(s)).transpose()?,
        });
    }
    Ok(records)
}

// ── shared helpers ──

fn image_refs(samples: &[LabeledImage], indices: &[usize]) -> Vec<Image> {
    indices.iter().map(|&i| samples[i].image.clone()).collect()
}

/// FNV-1a over the little-endian bytes of every parameter, in order.
fn params_hash(params: &[Param]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for p in params {
        for v in p.borrow().data() {
            for b in v.to_le_bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

/// Frozen-predictor forward over a set of images, batched.
pub fn predict_angles(
    predictor: &SteeringPredictor,
    images: &[&Image],
    batch_size: usize,
) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let batch = batch_to_tensor(chunk)?;
        let mut tape = Tape::new();
        let input = tape.constant(&batch);
        let pred = predictor.forward(&mut tape, input, Binding::Frozen)?;
        out.extend_from_slice(tape.data(pred));
    }
    Ok(out)
}

fn square_size(samples: &[LabeledImage], what: &'static str) -> Result<usize> {
    let first = &samples[0].image;
    if first.width != first.height {
        return Err(Error::contract(
            what,
            format!(
                "images must be square, got {}x{}",
                first.width, first.height
            ),
        ));
    }
    Ok(first.width)
}

// ── predictor pretraining ──

/// Outcome of [`train_steering`].
#[derive(Debug, Clone)]
pub struct SteeringReport {
    pub image_size: usize,
    pub n_train: usize,
    pub n_test: usize,
    /// Train-set MSE of the untouched initialization.
    pub initial_train_mse: f64,
    pub train_mse: f64,
    pub test_mse: f64,
    /// Mean batch loss per epoch, in training order.
    pub epoch_losses: Vec<f64>,
    pub checkpoint: PathBuf,
}

/// Adam/MSE fitting of a predictor on the given samples, one shuffled pass
/// per epoch. Returns the mean batch loss per epoch. Shared by pretraining
/// and the defense fine-tune.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fit_predictor(
    model: &SteeringPredictor,
    samples: &[LabeledImage],
    indices: &[usize],
    epochs: usize,
    batch_size: usize,
    lr: f32,
    seed: u64,
    stream: &str,
) -> Result<Vec<f64>> {
    let mut opt = Adam::new(
        AdamConfig {
            lr,
            beta1: 0.9,
            ..AdamConfig::default()
        },
        model.params(),
    );
    let mut order = indices.to_vec();
    let mut epoch_losses = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        order.shuffle(&mut substream(seed, &format!("{stream}/shuffle/{epoch}")));
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let images = image_refs(samples, chunk);
            let refs: Vec<&Image> = images.iter().collect();
            let batch = batch_to_tensor(&refs)?;
            let labels: Vec<f32> = chunk.iter().map(|&i| samples[i].angle).collect();
            let targets = Tensor::new(vec![chunk.len(), 1], labels)?;

            let mut tape = Tape::new();
            let input = tape.constant(&batch);
            let target = tape.constant(&targets);
            let pred = model.forward(&mut tape, input, Binding::Trainable)?;
            let diff = tape.sub(pred, target)?;
            let sq = tape.square(diff);
            let loss = tape.mean(sq);
            loss_sum += f64::from(tape.scalar(loss)?);
            batches += 1;
            tape.backward(loss)?;
            opt.step()?;
        }
        epoch_losses.push(loss_sum / batches as f64);
    }
    Ok(epoch_losses)
}

fn mse_over(
    predictor: &SteeringPredictor,
    samples: &[LabeledImage],
    indices: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let images = image_refs(samples, indices);
    let refs: Vec<&Image> = images.iter().collect();
    let preds = predict_angles(predictor, &refs, batch_size)?;
    let sum: f64 = indices
        .iter()
        .zip(&preds)
        .map(|(&i, &p)| {
            let d = f64::from(p) - f64::from(samples[i].angle);
            d * d
        })
        .sum();
    Ok(sum / indices.len() as f64)
}

/// Trains the steering predictor on a labeled dataset with an 80/20
/// seeded split, reports train/test MSE (rad²), and saves a checkpoint.
pub fn train_steering(
    dataset_dir: &Path,
    checkpoint_path: &Path,
    cfg: &SteeringConfig,
) -> Result<SteeringReport> {
    let samples = load_dataset(dataset_dir)?;
    if samples.len() < 20 {
        return Err(Error::contract(
            "train_steering",
            format!("need at least 20 samples, got {}", samples.len()),
        ));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::contract(
            "train_steering",
            "epochs and batch_size must be >= 1",
        ));
    }
    let image_size = square_size(&samples, "train_steering")?;

    let mut indices: Vec<usize> = (0..samples.len()).collect();
    indices.shuffle(&mut substream(cfg.seed, "steering/split"));
    let n_test = (samples.len() / 5).max(1);
    let test_idx: Vec<usize> = indices[..n_test].to_vec();
    let train_idx: Vec<usize> = indices[n_test..].to_vec();

    let model = SteeringPredictor::new(&mut substream(cfg.seed, "init/predictor"), image_size)?;
    let initial_train_mse = mse_over(&model, &samples, &train_idx, cfg.batch_size)?;
    let epoch_losses = fit_predictor(
        &model,
        &samples,
        &train_idx,
        cfg.epochs,
        cfg.batch_size,
        cfg.lr,
        cfg.seed,
        "steering",
    )?;

    let train_mse = mse_over(&model, &samples, &train_idx, cfg.batch_size)?;
    let test_mse = mse_over(&model, &samples, &test_idx, cfg.batch_size)?;
    if let Some(parent) = checkpoint_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    model.save(checkpoint_path)?;
    Ok(SteeringReport {
        image_size,
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        initial_train_mse,
        train_mse,
        test_mse,
        epoch_losses,
        checkpoint: checkpoint_path.to_path_buf(),
    })
}

// ── attack training ──

/// File names `train_attack` writes into its output directory.
pub const GEN_AB_FILE: &str = "gen_ab.fgb";
pub const GEN_BA_FILE: &str = "gen_ba.fgb";
pub const DISC_A_FILE: &str = "disc_a.fgb";
pub const DISC_B_FILE: &str = "disc_b.fgb";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Outcome of an attack run: the echoed configuration, every log record
/// (including history when resuming), and the artifact paths.
#[derive(Debug, Clone)]
pub struct AttackReport {
    pub config: AttackConfig,
    pub image_size: usize,
    pub records: Vec<TrainLogRecord>,
    pub run_dir: PathBuf,
}

struct AttackModels {
    gen_ab: TranslationGenerator,
    gen_ba: TranslationGenerator,
    disc_a: PatchDiscriminator,
    disc_b: PatchDiscriminator,
}

impl AttackModels {
    fn fresh(cfg: &AttackConfig) -> AttackModels {
        AttackModels {
            gen_ab: TranslationGenerator::new(
                &mut substream(cfg.seed, "init/gen_ab"),
                cfg.res_blocks,
            ),
            gen_ba: TranslationGenerator::new(
                &mut substream(cfg.seed, "init/gen_ba"),
                cfg.res_blocks,
            ),
            disc_a: PatchDiscriminator::new(&mut substream(cfg.seed, "init/disc_a")),
            disc_b: PatchDiscriminator::new(&mut substream(cfg.seed, "init/disc_b")),
        }
    }

    fn load(cfg: &AttackConfig, dir: &Path) -> Result<AttackModels> {
        let mut m = AttackModels::fresh(cfg);
        m.gen_ab.load_from(&dir.join(GEN_AB_FILE))?;
        m.gen_ba.load_from(&dir.join(GEN_BA_FILE))?;
        m.disc_a.load_from(&dir.join(DISC_A_FILE))?;
        m.disc_b.load_from(&dir.join(DISC_B_FILE))?;
        Ok(m)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        self.gen_ab.save(&dir.join(GEN_AB_FILE))?;
        self.gen_ba.save(&dir.join(GEN_BA_FILE))?;
        self.disc_a.save(&dir.join(DISC_A_FILE))?;
        self.disc_b.save(&dir.join(DISC_B_FILE))?;
        Ok(())
    }
}

struct AttackData {
    domain_a: Vec<LabeledImage>,
    domain_b: Vec<LabeledImage>,
    /// Frozen predictions on every Domain A image, in dataset order.
    clean_preds_a: Vec<f32>,
    /// Frozen predictions on every Domain B image; filled only when the
    /// backward-regression ablation needs them.
    clean_preds_b: Vec<f32>,
}

fn load_attack_data(
    domain_a_dir: &Path,
    domain_b_dir: &Path,
    predictor: &SteeringPredictor,
    cfg: &AttackConfig,
) -> Result<AttackData> {
    let domain_a = load_dataset(domain_a_dir)?;
    let domain_b = load_dataset(domain_b_dir)?;
    for (samples, name) in [(&domain_a, "Domain A"), (&domain_b, "Domain B")] {
        let size = square_size(samples, "train_attack")?;
        if size != predictor.image_size() {
            return Err(Error::contract(
                "train_attack",
                format!(
                    "{name} images are {size}x{size} but the predictor expects {0}x{0}",
                    predictor.image_size()
                ),
            ));
        }
    }
    let steps = domain_a.len().min(domain_b.len()) / cfg.batch_size;
    if steps == 0 {
        return Err(Error::contract(
            "train_attack",
            format!(
                "batch size {} exceeds the smaller domain ({} images)",
                cfg.batch_size,
                domain_a.len().min(domain_b.len())
            ),
        ));
    }
    let refs_a: Vec<&Image> = domain_a.iter().map(|s| &s.image).collect();
    let clean_preds_a = predict_angles(predictor, &refs_a, 16)?;
    let clean_preds_b = if cfg.enable_bregress {
        let refs_b: Vec<&Image> = domain_b.iter().map(|s| &s.image).collect();
        predict_angles(predictor, &refs_b, 16)?
    } else {
        Vec::new()
    };
    Ok(AttackData {
        domain_a,
        domain_b,
        clean_preds_a,
        clean_preds_b,
    })
}

/// Accumulates per-step scalars into an epoch mean.
#[derive(Default)]
struct EpochStats {
    breakdowns: Vec<GeneratorLossBreakdown>,
    disc_a: Vec<f32>,
    disc_b: Vec<f32>,
    deviations: Vec<f64>,
}

impl EpochStats {
    fn record(&self, epoch: usize, seconds: f64) -> TrainLogRecord {
        let n = self.breakdowns.len() as f64;
        let mean = |f: &dyn Fn(&GeneratorLossBreakdown) -> f64| {
            self.breakdowns.iter().map(f).sum::<f64>() / n
        };
        TrainLogRecord {
            epoch,
            regress: mean(&|b| f64::from(b.regress)),
            cycle: mean(&|b| f64::from(b.cycle)),
            identity: mean(&|b| f64::from(b.identity)),
            gan_gen: mean(&|b| f64::from(b.gan)),
            disc_a: self.disc_a.iter().map(|&v| f64::from(v)).sum::<f64>() / n,
            disc_b: self.disc_b.iter().map(|&v| f64::from(v)).sum::<f64>() / n,
            total: mean(&|b| f64::from(b.total)),
            mean_deviation: self.deviations.iter().sum::<f64>() / n,
            seconds,
            bregress: self.breakdowns[0]
                .bregress
                .map(|_| mean(&|b| f64::from(b.bregress.unwrap_or(0.0)))),
        }
    }
}

fn detach(tape: &Tape, id: crate::tensor::TapeId) -> Tensor {
    Tensor::new(tape.shape(id).to_vec(), tape.data(id).to_vec()).expect("tape node is well formed")
}

/// One generator update followed by one update of each discriminator.
#[allow(clippy::too_many_arguments)]
fn attack_step(
    models: &AttackModels,
    predictor: &SteeringPredictor,
    cfg: &AttackConfig,
    batch_a: &Tensor,
    batch_b: &Tensor,
    clean_a: &[f32],
    clean_b: &[f32],
    gen_opt: &mut Adam,
    disc_a_opt: &mut Adam,
    disc_b_opt: &mut Adam,
    stats: &mut EpochStats,
) -> Result<()> {
    let weights = cfg.weights();

    // Generator step: both cycles, both identities, frozen D and N.
    let mut tape = Tape::new();
    let x = tape.constant(batch_a);
    let y = tape.constant(batch_b);
    let fake_b = models.gen_ab.forward(&mut tape, x, Binding::Trainable)?;
    let rec_a = models
        .gen_ba
        .forward(&mut tape, fake_b, Binding::Trainable)?;
    let fake_a = models.gen_ba.forward(&mut tape, y, Binding::Trainable)?;
    let rec_b = models
        .gen_ab
        .forward(&mut tape, fake_a, Binding::Trainable)?;
    let ident_b = models.gen_ab.forward(&mut tape, y, Binding::Trainable)?;
    let ident_a = models.gen_ba.forward(&mut tape, x, Binding::Trainable)?;

    let d_fake_b = models.disc_b.forward(&mut tape, fake_b, Binding::Frozen)?;
    let d_fake_a = models.disc_a.forward(&mut tape, fake_a, Binding::Frozen)?;
    let pred_adv = predictor.forward(&mut tape, fake_b, Binding::Frozen)?;
    let pred_clean = tape.constant(&Tensor::new(vec![clean_a.len(), 1], clean_a.to_vec())?);

    let regress = if cfg.clamp_regress {
        losses::regress_loss_clamped(&mut tape, pred_adv, pred_clean, cfg.theta)?
    } else {
        losses::regress_loss(&mut tape, pred_adv, pred_clean, cfg.theta)?
    };
    let cycle = losses::cycle_loss(&mut tape, x, rec_a, y, rec_b, cfg.lambda_cycle)?;
    let identity = losses::identity_loss(&mut tape, y, ident_b, x, ident_a, cfg.lambda_identity)?;
    let gan_b = losses::gan_generator_term(&mut tape, d_fake_b);
    let gan_a = losses::gan_generator_term(&mut tape, d_fake_a);
    let gan = tape.add(gan_b, gan_a)?;
    let bregress = if cfg.enable_bregress {
        let pred_defogged = predictor.forward(&mut tape, fake_a, Binding::Frozen)?;
        let pred_foggy = tape.constant(&Tensor::new(vec![clean_b.len(), 1], clean_b.to_vec())?);
        Some(losses::backward_regress_loss(
            &mut tape,
            pred_defogged,
            pred_foggy,
            cfg.theta,
        )?)
    } else {
        None
    };
    let terms = GeneratorLossTerms {
        regress,
        cycle,
        identity,
        gan,
        bregress,
    };
    let (total, breakdown) = losses::total_generator_loss(&mut tape, &terms, &weights)?;

    let deviation = tape
        .data(pred_adv)
        .iter()
        .zip(clean_a)
        .map(|(&adv, &clean)| (f64::from(adv) - f64::from(clean)).abs())
        .sum::<f64>()
        / clean_a.len() as f64;
    let fake_b_detached = detach(&tape, fake_b);
    let fake_a_detached = detach(&tape, fake_a);

    tape.backward(total)?;
    gen_opt.step()?;

    // Discriminator steps on real batches vs the detached fakes.
    let mut tape = Tape::new();
    let real = tape.constant(batch_b);
    let fake = tape.constant(&fake_b_detached);
    let d_real = models.disc_b.forward(&mut tape, real, Binding::Trainable)?;
    let d_fake = models.disc_b.forward(&mut tape, fake, Binding::Trainable)?;
    let disc_b_loss = losses::gan_discriminator_term(&mut tape, d_real, d_fake)?;
    let disc_b_value = tape.scalar(disc_b_loss)?;
    tape.backward(disc_b_loss)?;
    disc_b_opt.step()?;

    let mut tape = Tape::new();
    let real = tape.constant(batch_a);
    let fake = tape.constant(&fake_a_detached);
    let d_real = models.disc_a.forward(&mut tape, real, Binding::Trainable)?;
    let d_fake = models.disc_a.forward(&mut tape, fake, Binding::Trainable)?;
    let disc_a_loss = losses::gan_discriminator_term(&mut tape, d_real, d_fake)?;
    let disc_a_value = tape.scalar(disc_a_loss)?;
    tape.backward(disc_a_loss)?;
    disc_a_opt.step()?;

    stats.breakdowns.push(breakdown);
    stats.disc_a.push(disc_a_value);
    stats.disc_b.push(disc_b_value);
    stats.deviations.push(deviation);
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_attack_epochs(
    models: &AttackModels,
    predictor: &SteeringPredictor,
    data: &AttackData,
    cfg: &AttackConfig,
    start_epoch: usize,
    epochs: usize,
    log: &mut std::fs::File,
    log_path: &Path,
) -> Result<Vec<TrainLogRecord>> {
    let mut gen_params = models.gen_ab.params();
    gen_params.extend(models.gen_ba.params());
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };
    let mut gen_opt = Adam::new(adam_cfg, gen_params);
    let mut disc_a_opt = Adam::new(adam_cfg, models.disc_a.params());
    let mut disc_b_opt = Adam::new(adam_cfg, models.disc_b.params());

    let steps = data.domain_a.len().min(data.domain_b.len()) / cfg.batch_size;
    let mut records = Vec::with_capacity(epochs);
    for e in 0..epochs {
        let epoch = start_epoch + e;
        let started = Instant::now();
        let mut order_a: Vec<usize> = (0..data.domain_a.len()).collect();
        let mut order_b: Vec<usize> = (0..data.domain_b.len()).collect();
        order_a.shuffle(&mut substream(
            cfg.seed,
            &format!("attack/shuffle_a/{epoch}"),
        ));
        order_b.shuffle(&mut substream(
            cfg.seed,
            &format!("attack/shuffle_b/{epoch}"),
        ));

        let mut stats = EpochStats::default();
        for step in 0..steps {
            let ia = &order_a[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let ib = &order_b[step * cfg.batch_size..(step + 1) * cfg.batch_size];
            let images_a = image_refs(&data.domain_a, ia);
            let images_b = image_refs(&data.domain_b, ib);
            let refs_a: Vec<&Image> = images_a.iter().collect();
            let refs_b: Vec<&Image> = images_b.iter().collect();
            let batch_a = batch_to_tensor(&refs_a)?;
            let batch_b = batch_to_tensor(&refs_b)?;
            let clean_a: Vec<f32> = ia.iter().map(|&i| data.clean_preds_a[i]).collect();
            let clean_b: Vec<f32> = if cfg.enable_bregress {
                ib.iter().map(|&i| data.clean_preds_b[i]).collect()
            } else {
                Vec::new()
            };
            attack_step(
                models,
                predictor,
                cfg,
                &batch_a,
                &batch_b,
                &clean_a,
                &clean_b,
                &mut gen_opt,
                &mut disc_a_opt,
                &mut disc_b_opt,
                &mut stats,
            )?;
        }
        let record = stats.record(epoch, started.elapsed().as_secs_f64());
        writeln!(log, "{}", format_record(&record)).map_err(|e| Error::io(log_path, e))?;
        log.flush().map_err(|e| Error::io(log_path, e))?;
        records.push(record);
    }
    Ok(records)
}

/// Trains the fog attack: alternating generator and discriminator updates
/// against a frozen steering predictor. Writes four model checkpoints and
/// an per-epoch CSV log into `run_dir`.
pub fn train_attack(
    domain_a_dir: &Path,
    domain_b_dir: &Path,
    predictor_path: &Path,
    run_dir: &Path,
    cfg: &AttackConfig,
) -> Result<AttackReport> {
    cfg.validate()?;
    let domain_a = load_dataset(domain_a_dir)?;
    let image_size = square_size(&domain_a, "train_attack")?;
    drop(domain_a);
    let mut predictor =
        SteeringPredictor::new(&mut substream(cfg.seed, "init/predictor"), image_size)?;
    predictor.load_from(predictor_path)?;
    let frozen_hash = params_hash(&predictor.params());

    let data = load_attack_data(domain_a_dir, domain_b_dir, &predictor, cfg)?;
    let models = AttackModels::fresh(cfg);

    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let log_path = run_dir.join(TRAIN_LOG_FILE);
    let mut log = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    writeln!(log, "{}", log_header(cfg.enable_bregress)).map_err(|e| Error::io(&log_path, e))?;

    let records = run_attack_epochs(
        &models, &predictor, &data, cfg, 1, cfg.epochs, &mut log, &log_path,
    )?;
    models.save(run_dir)?;

    if params_hash(&predictor.params()) != frozen_hash {
        return Err(Error::contract(
            "train_attack",
            "frozen predictor parameters changed during training",
        ));
    }
    Ok(AttackReport {
        config: *cfg,
        image_size,
        records,
        run_dir: run_dir.to_path_buf(),
    })
}

/// Continues a finished attack run for `extra_epochs` more epochs. The
/// optimizer state is rebuilt from scratch (moments are not checkpointed),
/// so the first resumed epochs re-warm Adam; logs continue the original
/// epoch numbering.
pub fn resume_attack(
    domain_a_dir: &Path,
    domain_b_dir: &Path,
    predictor_path: &Path,
    run_dir: &Path,
    cfg: &AttackConfig,
    extra_epochs: usize,
) -> Result<AttackReport> {
    cfg.validate()?;
    let log_path = run_dir.join(TRAIN_LOG_FILE);
    let history = read_train_log(&log_path)?;
    let start_epoch = history.last().map_or(0, |r| r.epoch) + 1;

    let domain_a = load_dataset(domain_a_dir)?;
    let image_size = square_size(&domain_a, "train_attack")?;
    drop(domain_a);
    let mut predictor =
        SteeringPredictor::new(&mut substream(cfg.seed, "init/predictor"), image_size)?;
    predictor.load_from(predictor_path)?;
    let frozen_hash = params_hash(&predictor.params());

    let data = load_attack_data(domain_a_dir, domain_b_dir, &predictor, cfg)?;
    let models = AttackModels::load(cfg, run_dir)?;

    let mut log = std::fs::OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let new_records = run_attack_epochs(
        &models,
        &predictor,
        &data,
        cfg,
        start_epoch,
        extra_epochs,
        &mut log,
        &log_path,
    )?;
    models.save(run_dir)?;

    if params_hash(&predictor.params()) != frozen_hash {
        return Err(Error::contract(
            "train_attack",
            "frozen predictor parameters changed during training",
        ));
    }
    let mut records = history;
    records.extend(new_records);
    Ok(AttackReport {
        config: *cfg,
        image_size,
        records,
        run_dir: run_dir.to_path_buf(),
    })
}
