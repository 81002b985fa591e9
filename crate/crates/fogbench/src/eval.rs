//! Quantitative artifacts: deviation reports, generator comparisons,
//! hyperparameter sweeps, the backward-regression experiment, and the
//! adversarial-training defense.
//!
//! Evaluation happens on emitted 8-bit images: generator outputs are
//! de-normalized before both the predictor and the quality metrics see
//! them, so every number in a report is reproducible from the files a run
//! leaves behind.

use crate::data::{
    batch_to_tensor, load_dataset, load_named_dataset, tensor_to_image, write_dataset,
};
use crate::error::{Error, Result};
use crate::iqa;
use crate::models::{Binding, SteeringPredictor, TranslationGenerator};
use crate::ppm::{write_ppm, Image};
use crate::rng::substream;
use crate::scenes::LabeledImage;
use crate::tensor::{Tape, Tensor};
use crate::trainer::{
    self, predict_angles, train_attack, AttackConfig, AttackReport, TrainLogRecord,
};
use std::path::{Path, PathBuf};

const EVAL_BATCH: usize = 8;

const REFERENCE_DEVIATION_LINE: &str =
    "reference (full-scale study, real data): deviation 1.09 ± 0.90 rad";
const REFERENCE_DEFENSE_LINE: &str =
    "reference (full-scale study, real data): deviation 1.81 ± 1.03 rad before defense, 0.17 ± 0.40 rad after";

// ── report structure ──

/// Mean and spread of one metric. The spread is taken over finite values
/// only, so infinite-PSNR sentinels report as `inf ± 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

fn stat_of(values: impl Iterator<Item = f64> + Clone) -> Stat {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let finite: Vec<f64> = values.filter(|v| v.is_finite()).collect();
    let std = if finite.len() < 2 {
        0.0
    } else {
        let fm = finite.iter().sum::<f64>() / finite.len() as f64;
        (finite.iter().map(|v| (v - fm).powi(2)).sum::<f64>() / finite.len() as f64).sqrt()
    };
    Stat { mean, std }
}

/// One evaluated sample: predictions in radians, IQA in [0,255] units.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub filename: String,
    pub pred_clean: f32,
    pub pred_foggy: f32,
    pub deviation: f64,
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

/// Aggregate statistics over one dataset, plus the per-sample rows they
/// are computed from.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub dataset: String,
    pub generator: String,
    pub predictor: String,
    pub n: usize,
    pub deviation: Stat,
    pub mse: Stat,
    pub psnr: Stat,
    pub ssim: Stat,
    pub rows: Vec<SampleRow>,
}

impl EvalReport {
    fn from_rows(
        dataset: String,
        generator: String,
        predictor: String,
        rows: Vec<SampleRow>,
    ) -> EvalReport {
        EvalReport {
            dataset,
            generator,
            predictor,
            n: rows.len(),
            deviation: stat_of(rows.iter().map(|r| r.deviation)),
            mse: stat_of(rows.iter().map(|r| r.mse)),
            psnr: stat_of(rows.iter().map(|r| r.psnr)),
            ssim: stat_of(rows.iter().map(|r| r.ssim)),
            rows,
        }
    }
}

fn write_report(report: &EvalReport, out_dir: &Path, reference_lines: &[&str]) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut per_sample = String::from("filename,pred_clean,pred_foggy,deviation,mse,psnr,ssim\n");
    for r in &report.rows {
        per_sample.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.filename, r.pred_clean, r.pred_foggy, r.deviation, r.mse, r.psnr, r.ssim
        ));
    }
    let path = out_dir.join("per_sample.csv");
    std::fs::write(&path, per_sample).map_err(|e| Error::io(&path, e))?;

    let mut aggregates = String::from("metric,mean,std,n\n");
    for (name, s) in [
        ("deviation", report.deviation),
        ("mse", report.mse),
        ("psnr", report.psnr),
        ("ssim", report.ssim),
    ] {
        aggregates.push_str(&format!("{name},{},{},{}\n", s.mean, s.std, report.n));
    }
    let path = out_dir.join("report.csv");
    std::fs::write(&path, aggregates).map_err(|e| Error::io(&path, e))?;

    let mut summary = format!(
        "dataset: {}\ngenerator: {}\npredictor: {}\nsamples: {}\n\
         deviation: {:.4} ± {:.4} rad\nmse: {:.4} ± {:.4}\n\
         psnr: {:.4} ± {:.4} dB\nssim: {:.4} ± {:.4}\n",
        report.dataset,
        report.generator,
        report.predictor,
        report.n,
        report.deviation.mean,
        report.deviation.std,
        report.mse.mean,
        report.mse.std,
        report.psnr.mean,
        report.psnr.std,
        report.ssim.mean,
        report.ssim.std,
    );
    for line in reference_lines {
        summary.push_str(line);
        summary.push('\n');
    }
    let path = out_dir.join("summary.txt");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))
}

// ── generator application ──

/// Which generator a report evaluates: a trained model or the built-in
/// identity (which copies inputs bit for bit).
#[derive(Clone, Copy)]
pub enum GeneratorRef<'a> {
    Identity,
    Model(&'a TranslationGenerator),
}

impl GeneratorRef<'_> {
    fn id(&self) -> &'static str {
        match self {
            GeneratorRef::Identity => "identity",
            GeneratorRef::Model(_) => TranslationGenerator::ARCH_TAG,
        }
    }
}

/// Runs images through a generator in batches and de-normalizes the
/// outputs back to 8-bit images.
pub fn translate_images(
    generator: &TranslationGenerator,
    images: &[&Image],
    batch_size: usize,
) -> Result<Vec<Image>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let batch = batch_to_tensor(chunk)?;
        let mut tape = Tape::new();
        let input = tape.constant(&batch);
        let translated = generator.forward(&mut tape, input, Binding::Frozen)?;
        let result = Tensor::new(
            tape.shape(translated).to_vec(),
            tape.data(translated).to_vec(),
        )?;
        for i in 0..chunk.len() {
            out.push(tensor_to_image(&result, i)?);
        }
    }
    Ok(out)
}

fn apply_generator(generator: GeneratorRef<'_>, images: &[&Image]) -> Result<Vec<Image>> {
    match generator {
        GeneratorRef::Identity => Ok(images.iter().map(|&i| i.clone()).collect()),
        GeneratorRef::Model(g) => translate_images(g, images, EVAL_BATCH),
    }
}

// ── deviation report ──

/// Measures, per sample, how far the generator moves the frozen
/// predictor's output — `|N(φ(x)) − N(x)|` — together with clean-vs-foggy
/// image quality. The dataset should be held out from attack training.
/// Writes `report.csv`, `per_sample.csv`, and `summary.txt` into
/// `out_dir`.
pub fn deviation_report(
    generator: GeneratorRef<'_>,
    predictor: &SteeringPredictor,
    dataset_dir: &Path,
    out_dir: &Path,
) -> Result<EvalReport> {
    let named = load_named_dataset(dataset_dir)?;
    let clean: Vec<&Image> = named.iter().map(|n| &n.sample.image).collect();
    let pred_clean = predict_angles(predictor, &clean, EVAL_BATCH)?;
    let foggy = apply_generator(generator, &clean)?;
    let foggy_refs: Vec<&Image> = foggy.iter().collect();
    let pred_foggy = predict_angles(predictor, &foggy_refs, EVAL_BATCH)?;

    let mut rows = Vec::with_capacity(named.len());
    for (i, n) in named.iter().enumerate() {
        let quality = iqa::evaluate(&n.sample.image, &foggy[i])?;
        rows.push(SampleRow {
            filename: n.filename.clone(),
            pred_clean: pred_clean[i],
            pred_foggy: pred_foggy[i],
            deviation: (f64::from(pred_foggy[i]) - f64::from(pred_clean[i])).abs(),
            mse: quality.mse,
            psnr: quality.psnr,
            ssim: quality.ssim,
        });
    }
    let report = EvalReport::from_rows(
        dataset_dir.display().to_string(),
        generator.id().to_string(),
        SteeringPredictor::ARCH_TAG.to_string(),
        rows,
    );
    write_report(&report, out_dir, &[REFERENCE_DEVIATION_LINE])?;
    Ok(report)
}

/// Contrasts two generators on the same inputs: deviation between the
/// predictor's outputs on the two translations, and IQA between the two
/// translated images. In the emitted rows `pred_clean` belongs to the
/// first generator and `pred_foggy` to the second.
pub fn compare_generators(
    gen_first: &TranslationGenerator,
    gen_second: &TranslationGenerator,
    predictor: &SteeringPredictor,
    dataset_dir: &Path,
    out_dir: &Path,
) -> Result<EvalReport> {
    let named = load_named_dataset(dataset_dir)?;
    let clean: Vec<&Image> = named.iter().map(|n| &n.sample.image).collect();
    let first = translate_images(gen_first, &clean, EVAL_BATCH)?;
    let second = translate_images(gen_second, &clean, EVAL_BATCH)?;
    let first_refs: Vec<&Image> = first.iter().collect();
    let second_refs: Vec<&Image> = second.iter().collect();
    let pred_first = predict_angles(predictor, &first_refs, EVAL_BATCH)?;
    let pred_second = predict_angles(predictor, &second_refs, EVAL_BATCH)?;

    let mut rows = Vec::with_capacity(named.len());
    for (i, n) in named.iter().enumerate() {
        let quality = iqa::evaluate(&first[i], &second[i])?;
        rows.push(SampleRow {
            filename: n.filename.clone(),
            pred_clean: pred_first[i],
            pred_foggy: pred_second[i],
            deviation: (f64::from(pred_second[i]) - f64::from(pred_first[i])).abs(),
            mse: quality.mse,
            psnr: quality.psnr,
            ssim: quality.ssim,
        });
    }
    let report = EvalReport::from_rows(
        dataset_dir.display().to_string(),
        "generator pair (first vs second)".to_string(),
        SteeringPredictor::ARCH_TAG.to_string(),
        rows,
    );
    write_report(&report, out_dir, &[])?;
    Ok(report)
}

// ── ablation sweep ──

/// Which hyperparameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    Theta,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::Theta => "theta",
        }
    }

    fn apply(self, cfg: &mut AttackConfig, value: f32) {
        match self {
            SweepParam::Alpha => cfg.alpha = value,
            SweepParam::Theta => cfg.theta = value,
        }
    }
}

/// One trained point of a sweep.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub value: f32,
    pub run_dir: PathBuf,
    pub records: Vec<TrainLogRecord>,
    /// Held-out evaluation of the trained forward generator.
    pub report: EvalReport,
    /// First epoch whose training-batch mean deviation reached the run's
    /// theta; `None` when the budget ran out first.
    pub epochs_to_threshold: Option<usize>,
}

/// Sweep outcome, entries ordered by value.
#[derive(Debug, Clone)]
pub struct SweepResult {
    pub param: &'static str,
    pub entries: Vec<SweepEntry>,
}

/// Trains one attack per value (shared seed, shared data) and evaluates
/// each trained generator on a held-out dataset. Every value is validated
/// before any training starts.
#[allow(clippy::too_many_arguments)]
pub fn ablation_sweep(
    param: SweepParam,
    values: &[f32],
    base: &AttackConfig,
    domain_a: &Path,
    domain_b: &Path,
    predictor_path: &Path,
    eval_dataset: &Path,
    out_dir: &Path,
) -> Result<SweepResult> {
    if values.is_empty() {
        return Err(Error::contract("ablation_sweep", "no values to sweep"));
    }
    let mut values = values.to_vec();
    values.sort_by(f32::total_cmp);
    values.dedup();
    for &v in &values {
        let mut cfg = *base;
        param.apply(&mut cfg, v);
        cfg.validate()?;
    }

    let eval_samples = load_named_dataset(eval_dataset)?;
    let image_size = eval_samples[0].sample.image.width;
    drop(eval_samples);
    let predictor = SteeringPredictor::load(predictor_path, image_size)?;

    let mut entries = Vec::with_capacity(values.len());
    let mut summary =
        String::from("param,value,deviation_mean,ssim_mean,final_regress,epochs_to_threshold\n");
    for &v in &values {
        let mut cfg = *base;
        param.apply(&mut cfg, v);
        let run_dir = out_dir.join(format!("{}_{}", param.name(), v));
        let trained = train_attack(domain_a, domain_b, predictor_path, &run_dir, &cfg)?;
        let generator =
            TranslationGenerator::load(&run_dir.join(trainer::GEN_AB_FILE), cfg.res_blocks)?;
        let report = deviation_report(
            GeneratorRef::Model(&generator),
            &predictor,
            eval_dataset,
            &run_dir.join("eval"),
        )?;
        let epochs_to_threshold = trained
            .records
            .iter()
            .find(|r| r.mean_deviation >= f64::from(cfg.theta))
            .map(|r| r.epoch);
        summary.push_str(&format!(
            "{},{},{},{},{},{}\n",
            param.name(),
            v,
            report.deviation.mean,
            report.ssim.mean,
            trained.records.last().map_or(f64::NAN, |r| r.regress),
            epochs_to_threshold.map_or(String::new(), |e| e.to_string()),
        ));
        entries.push(SweepEntry {
            value: v,
            run_dir,
            records: trained.records,
            report,
            epochs_to_threshold,
        });
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("sweep_summary.csv");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;
    Ok(SweepResult {
        param: param.name(),
        entries,
    })
}

// ── backward-regression experiment ──

/// Paired runs with and without the de-fogging regression term, plus the
/// qualitative image dump from the augmented run.
#[derive(Debug, Clone)]
pub struct BregressExperiment {
    pub baseline: AttackReport,
    pub bregress: AttackReport,
    /// Variance of the per-epoch total loss over the last 20% of epochs.
    pub baseline_tail_variance: f64,
    pub bregress_tail_variance: f64,
    pub pairs_dir: PathBuf,
}

fn tail_variance(records: &[TrainLogRecord]) -> f64 {
    let take = (records.len() / 5).max(1);
    let tail = &records[records.len() - take..];
    let mean = tail.iter().map(|r| r.total).sum::<f64>() / take as f64;
    tail.iter().map(|r| (r.total - mean).powi(2)).sum::<f64>() / take as f64
}

/// Trains the same configuration twice from one seed, once with
/// `enable_bregress`, and dumps `n_pairs` clean/foggy side-by-side images
/// from the augmented run's forward generator.
pub fn backward_regress_experiment(
    base: &AttackConfig,
    domain_a: &Path,
    domain_b: &Path,
    predictor_path: &Path,
    out_dir: &Path,
    n_pairs: usize,
) -> Result<BregressExperiment> {
    if base.epochs == 0 {
        return Err(Error::contract(
            "backward_regress_experiment",
            "needs at least one epoch",
        ));
    }
    let baseline_cfg = AttackConfig {
        enable_bregress: false,
        ..*base
    };
    let bregress_cfg = AttackConfig {
        enable_bregress: true,
        ..*base
    };
    let baseline = train_attack(
        domain_a,
        domain_b,
        predictor_path,
        &out_dir.join("baseline"),
        &baseline_cfg,
    )?;
    let bregress = train_attack(
        domain_a,
        domain_b,
        predictor_path,
        &out_dir.join("bregress"),
        &bregress_cfg,
    )?;

    let generator = TranslationGenerator::load(
        &out_dir.join("bregress").join(trainer::GEN_AB_FILE),
        base.res_blocks,
    )?;
    let samples = load_dataset(domain_a)?;
    let take = n_pairs.min(samples.len());
    let clean: Vec<&Image> = samples.iter().take(take).map(|s| &s.image).collect();
    let foggy = translate_images(&generator, &clean, EVAL_BATCH)?;
    let pairs_dir = out_dir.join("pairs");
    std::fs::create_dir_all(&pairs_dir).map_err(|e| Error::io(&pairs_dir, e))?;
    for (i, (c, f)) in clean.iter().zip(&foggy).enumerate() {
        write_ppm(&pairs_dir.join(format!("{i:02}_clean.ppm")), c)?;
        write_ppm(&pairs_dir.join(format!("{i:02}_foggy.ppm")), f)?;
    }

    Ok(BregressExperiment {
        baseline_tail_variance: tail_variance(&baseline.records),
        bregress_tail_variance: tail_variance(&bregress.records),
        baseline,
        bregress,
        pairs_dir,
    })
}

// ── defense ──

/// Fine-tune settings for the adversarial-training defense.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DefenseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub seed: u64,
}

impl Default for DefenseConfig {
    fn default() -> DefenseConfig {
        DefenseConfig {
            epochs: 10,
            batch_size: 16,
            lr: 1e-4,
            seed: 42,
        }
    }
}

/// Defense outcome: the original predictor's held-out deviation, the
/// fine-tuned predictor's, and a clean-retrain control that separates the
/// effect of seeing fog from the effect of extra training.
#[derive(Debug, Clone)]
pub struct DefenseOutcome {
    pub before: EvalReport,
    pub after: EvalReport,
    pub control: EvalReport,
    pub defended_checkpoint: PathBuf,
    pub control_checkpoint: PathBuf,
    pub foggy_train_dir: PathBuf,
}

fn fine_tuned_copy(
    base: &SteeringPredictor,
    samples: &[LabeledImage],
    cfg: &DefenseConfig,
) -> Result<SteeringPredictor> {
    let mut model = SteeringPredictor::new(&mut substream(0, "load"), base.image_size())?;
    model.clone_weights_from(base)?;
    let indices: Vec<usize> = (0..samples.len()).collect();
    trainer::fit_predictor(
        &model,
        samples,
        &indices,
        cfg.epochs,
        cfg.batch_size,
        cfg.lr,
        cfg.seed,
        "defense",
    )?;
    Ok(model)
}

/// Adversarial-training defense: measure the attack on the original
/// predictor, fine-tune a copy on the generator's foggy renditions of the
/// training set (keeping ground-truth labels), re-measure, and run a
/// clean-data control with the same budget.
pub fn defense(
    predictor_path: &Path,
    generator_path: &Path,
    res_blocks: usize,
    train_dataset: &Path,
    test_dataset: &Path,
    cfg: &DefenseConfig,
    out_dir: &Path,
) -> Result<DefenseOutcome> {
    let train = load_dataset(train_dataset)?;
    let image_size = train[0].image.width;
    let predictor = SteeringPredictor::load(predictor_path, image_size)?;
    let generator = TranslationGenerator::load(generator_path, res_blocks)?;

    let before = deviation_report(
        GeneratorRef::Model(&generator),
        &predictor,
        test_dataset,
        &out_dir.join("before"),
    )?;

    let clean_refs: Vec<&Image> = train.iter().map(|s| &s.image).collect();
    let foggy_images = translate_images(&generator, &clean_refs, EVAL_BATCH)?;
    let foggy_train: Vec<LabeledImage> = foggy_images
        .into_iter()
        .zip(&train)
        .map(|(image, s)| LabeledImage {
            image,
            angle: s.angle,
        })
        .collect();
    let foggy_train_dir = out_dir.join("foggy_train");
    write_dataset(&foggy_train, &foggy_train_dir)?;

    let defended = fine_tuned_copy(&predictor, &foggy_train, cfg)?;
    let defended_checkpoint = out_dir.join("defended_predictor.fgb");
    defended.save(&defended_checkpoint)?;
    let after = deviation_report(
        GeneratorRef::Model(&generator),
        &defended,
        test_dataset,
        &out_dir.join("after"),
    )?;

    let control_model = fine_tuned_copy(&predictor, &train, cfg)?;
    let control_checkpoint = out_dir.join("control_predictor.fgb");
    control_model.save(&control_checkpoint)?;
    let control = deviation_report(
        GeneratorRef::Model(&generator),
        &control_model,
        test_dataset,
        &out_dir.join("control"),
    )?;

    let summary = format!(
        "deviation before defense: {:.4} ± {:.4} rad\n\
         deviation after fine-tuning on foggy images: {:.4} ± {:.4} rad\n\
         deviation after clean-retrain control: {:.4} ± {:.4} rad\n\
         {REFERENCE_DEFENSE_LINE}\n",
        before.deviation.mean,
        before.deviation.std,
        after.deviation.mean,
        after.deviation.std,
        control.deviation.mean,
        control.deviation.std,
    );
    let path = out_dir.join("defense_summary.txt");
    std::fs::write(&path, summary).map_err(|e| Error::io(&path, e))?;

    Ok(DefenseOutcome {
        before,
        after,
        control,
        defended_checkpoint,
        control_checkpoint,
        foggy_train_dir,
    })
}
