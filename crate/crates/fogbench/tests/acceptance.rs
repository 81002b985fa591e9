//! End-to-end acceptance suite. One test per shipped guarantee; each
//! prints a single PASS/FAIL line (visible with `--nocapture`, and
//! mirrored by the harness result line).
//!
//! Criteria 4-7 share one expensive fixture (a pretrained predictor and
//! a full attack run at study defaults). Its artifacts are cached under
//! `target/tmp/acceptance_work` with recorded wall times; delete that
//! directory to force a full honest rebuild.

use fogbench::cli::run_from;
use fogbench::eval::{
    ablation_sweep, defense, deviation_report, DefenseConfig, GeneratorRef, SweepParam,
};
use fogbench::iqa;
use fogbench::losses::{
    gan_losses, regress_loss, total_generator_loss, GeneratorLossTerms, LossWeights,
};
use fogbench::models::{gradient_suite, SteeringPredictor, TranslationGenerator};
use fogbench::ppm::Image;
use fogbench::rng::substream;
use fogbench::scenes::{build_dataset, FogParams};
use fogbench::tensor::{Tape, TapeId, Tensor};
use fogbench::trainer::{
    train_attack, train_steering, AttackConfig, SteeringConfig, TrainLogRecord, GEN_AB_FILE,
};
use rand::Rng;
use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn work_root() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance_work")
}

// ── stamp files: cached metrics from previous honest runs ──

fn write_stamp(path: &Path, pairs: &[(&str, String)]) {
    let mut text = String::new();
    for (k, v) in pairs {
        text.push_str(&format!("{k}={v}\n"));
    }
    std::fs::write(path, text).expect("write stamp");
}

fn read_stamp(path: &Path) -> Option<HashMap<String, String>> {
    let text = std::fs::read_to_string(path).ok()?;
    Some(
        text.lines()
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
    )
}

fn stamp_f64(map: &HashMap<String, String>, key: &str) -> Option<f64> {
    map.get(key)?.parse().ok()
}

fn fmt_epoch(e: Option<usize>) -> String {
    e.map_or("never".to_string(), |e| e.to_string())
}

fn parse_epoch(raw: &str) -> Option<usize> {
    if raw == "never" {
        None
    } else {
        raw.parse().ok()
    }
}

// ── shared fixture: predictor pretraining + full attack run ──

struct Fixture {
    root: PathBuf,
    predictor: PathBuf,
    attack_dir: PathBuf,
    domain_a: PathBuf,
    eval_set: PathBuf,
    steering_secs: f64,
    steering_test_mse: f64,
    attack_secs: f64,
    eval_deviation: f64,
    eval_ssim: f64,
}

static FIXTURE: OnceLock<Fixture> = OnceLock::new();

fn fixture() -> &'static Fixture {
    FIXTURE.get_or_init(build_or_load_fixture)
}

fn build_or_load_fixture() -> Fixture {
    let root = work_root();
    let stamp_path = root.join("stamp_fixture.txt");
    let paths = |root: &Path| {
        (
            root.join("predictor.fgb"),
            root.join("attack"),
            root.join("domain_a"),
            root.join("eval"),
        )
    };
    if let Some(map) = read_stamp(&stamp_path) {
        let (predictor, attack_dir, domain_a, eval_set) = paths(&root);
        let cached = (map.get("scale").map(String::as_str) == Some("500/256/150"))
            .then_some(())
            .and_then(|_| {
                Some(Fixture {
                    steering_secs: stamp_f64(&map, "steering-secs")?,
                    steering_test_mse: stamp_f64(&map, "steering-test-mse")?,
                    attack_secs: stamp_f64(&map, "attack-secs")?,
                    eval_deviation: stamp_f64(&map, "eval-deviation")?,
                    eval_ssim: stamp_f64(&map, "eval-ssim")?,
                    root: root.clone(),
                    predictor,
                    attack_dir,
                    domain_a,
                    eval_set,
                })
            })
            .filter(|f| {
                f.predictor.is_file()
                    && f.attack_dir.join(GEN_AB_FILE).is_file()
                    && f.domain_a.join("manifest.csv").is_file()
                    && f.eval_set.join("manifest.csv").is_file()
            });
        if let Some(fixture) = cached {
            eprintln!("reusing cached fixture in {}", root.display());
            return fixture;
        }
    }

    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).expect("create work root");
    let (predictor, attack_dir, domain_a, eval_set) = paths(&root);

    eprintln!("fixture: rendering datasets");
    build_dataset(500, 64, &root.join("pretrain"), None, 1001).unwrap();
    build_dataset(256, 64, &domain_a, None, 2001).unwrap();
    build_dataset(
        256,
        64,
        &root.join("domain_b"),
        Some(&FogParams::default()),
        2002,
    )
    .unwrap();
    build_dataset(64, 64, &eval_set, None, 2003).unwrap();

    eprintln!("fixture: pretraining steering predictor (500 samples, 30 epochs)");
    let t0 = Instant::now();
    let steering = train_steering(
        &root.join("pretrain"),
        &predictor,
        &SteeringConfig::default(),
    )
    .expect("steering pretraining");
    let steering_secs = t0.elapsed().as_secs_f64();
    eprintln!(
        "fixture: predictor test MSE {:.4} in {steering_secs:.0}s",
        steering.test_mse
    );

    eprintln!("fixture: training attack at study defaults (256/domain, 150 epochs)");
    let t0 = Instant::now();
    train_attack(
        &domain_a,
        &root.join("domain_b"),
        &predictor,
        &attack_dir,
        &AttackConfig::default(),
    )
    .expect("attack training");
    let attack_secs = t0.elapsed().as_secs_f64();
    eprintln!("fixture: attack trained in {attack_secs:.0}s");

    let generator = TranslationGenerator::load(
        &attack_dir.join(GEN_AB_FILE),
        AttackConfig::default().res_blocks,
    )
    .unwrap();
    let model = SteeringPredictor::load(&predictor, 64).unwrap();
    let report = deviation_report(
        GeneratorRef::Model(&generator),
        &model,
        &eval_set,
        &attack_dir.join("eval"),
    )
    .expect("held-out evaluation");
    eprintln!(
        "fixture: held-out deviation {:.4} rad, ssim {:.4}",
        report.deviation.mean, report.ssim.mean
    );

    write_stamp(
        &stamp_path,
        &[
            ("scale", "500/256/150".to_string()),
            ("steering-secs", steering_secs.to_string()),
            ("steering-test-mse", steering.test_mse.to_string()),
            ("attack-secs", attack_secs.to_string()),
            ("eval-deviation", report.deviation.mean.to_string()),
            ("eval-ssim", report.ssim.mean.to_string()),
        ],
    );
    Fixture {
        root,
        predictor,
        attack_dir,
        domain_a,
        eval_set,
        steering_secs,
        steering_test_mse: steering.test_mse,
        attack_secs,
        eval_deviation: report.deviation.mean,
        eval_ssim: report.ssim.mean,
    }
}

// ── criterion 1: gradient correctness ──

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let cases = gradient_suite(100).expect("gradient suite");
    let secs = t0.elapsed().as_secs_f64();
    let worst = cases.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
    for name in [
        "composed_predictor",
        "composed_generator",
        "composed_discriminator",
    ] {
        assert!(
            cases.iter().any(|c| c.name == name),
            "suite is missing the {name} case"
        );
    }
    let ok = worst < 1e-3 && secs < 60.0;
    println!(
        "criterion 1: {} — max relative error {worst:.3e} (< 1e-3) across {} cases, \
         100 seeds, {secs:.1}s (< 60s)",
        verdict(ok),
        cases.len()
    );
    assert!(ok, "worst {worst:.3e}, {secs:.1}s");
}

// ── criterion 2: loss arithmetic ──

fn scalar_id(tape: &mut Tape, v: f32) -> TapeId {
    tape.constant(&Tensor::new(vec![1, 1], vec![v]).unwrap())
}

#[test]
fn criterion_2_loss_arithmetic() {
    let mut ok = true;
    let mut check = |label: &str, got: f64, want: f64| {
        if (got - want).abs() >= 1e-6 {
            ok = false;
            eprintln!("criterion 2: {label}: got {got}, want {want}");
        }
    };

    // Regression loss against hand arithmetic.
    {
        let mut tape = Tape::new();
        let clean = scalar_id(&mut tape, 0.3);
        for (adv, theta, want) in [(0.3, 0.5, 0.5), (0.8, 0.5, 0.0), (1.5, 0.5, -0.7)] {
            let a = scalar_id(&mut tape, adv);
            let loss = regress_loss(&mut tape, a, clean, theta).unwrap();
            check("regress", f64::from(tape.scalar(loss).unwrap()), want);
        }
    }

    // GAN least-squares terms.
    {
        let mut tape = Tape::new();
        let ones = scalar_id(&mut tape, 1.0);
        let zeros = scalar_id(&mut tape, 0.0);
        let halves = scalar_id(&mut tape, 0.5);
        let (gen, disc) = gan_losses(&mut tape, ones, zeros).unwrap();
        check(
            "gan gen, d_fake=0",
            f64::from(tape.scalar(gen).unwrap()),
            1.0,
        );
        check(
            "gan disc, perfect",
            f64::from(tape.scalar(disc).unwrap()),
            0.0,
        );
        let (fooled, _) = gan_losses(&mut tape, ones, ones).unwrap();
        check(
            "gan gen, d_fake=1",
            f64::from(tape.scalar(fooled).unwrap()),
            0.0,
        );
        let (gen_h, disc_h) = gan_losses(&mut tape, halves, halves).unwrap();
        check(
            "gan gen, halves",
            f64::from(tape.scalar(gen_h).unwrap()),
            0.25,
        );
        check(
            "gan disc, halves",
            f64::from(tape.scalar(disc_h).unwrap()),
            0.5,
        );
    }

    // Blend example at the default weights, plus the de-fogging variant.
    {
        let mut tape = Tape::new();
        let terms = GeneratorLossTerms {
            regress: scalar_id(&mut tape, 0.5),
            cycle: scalar_id(&mut tape, 0.5),
            identity: scalar_id(&mut tape, 0.3),
            gan: scalar_id(&mut tape, 0.2),
            bregress: None,
        };
        let (_, b) = total_generator_loss(&mut tape, &terms, &LossWeights::default()).unwrap();
        check("total blend", f64::from(b.total), 0.9);

        let terms = GeneratorLossTerms {
            regress: scalar_id(&mut tape, 0.2),
            cycle: scalar_id(&mut tape, 1.0),
            identity: scalar_id(&mut tape, 0.0),
            gan: scalar_id(&mut tape, 0.0),
            bregress: Some(scalar_id(&mut tape, 0.4)),
        };
        let weights = LossWeights {
            alpha: 0.5,
            ..LossWeights::default()
        };
        let (_, b) = total_generator_loss(&mut tape, &terms, &weights).unwrap();
        check("total with bregress", f64::from(b.total), 0.8);
    }

    // Linearity of the blend in its parts, random draws.
    {
        let mut rng = substream(17, "acceptance/linearity");
        for _ in 0..10 {
            let alpha = rng.gen_range(0.05f32..0.95);
            let parts: [f32; 4] = std::array::from_fn(|_| rng.gen_range(-2.0f32..2.0));
            let mut tape = Tape::new();
            let terms = GeneratorLossTerms {
                regress: scalar_id(&mut tape, parts[0]),
                cycle: scalar_id(&mut tape, parts[1]),
                identity: scalar_id(&mut tape, parts[2]),
                gan: scalar_id(&mut tape, parts[3]),
                bregress: None,
            };
            let weights = LossWeights {
                alpha,
                ..LossWeights::default()
            };
            let (_, b) = total_generator_loss(&mut tape, &terms, &weights).unwrap();
            let want = (1.0 - f64::from(alpha))
                * (f64::from(parts[1]) + f64::from(parts[2]) + f64::from(parts[3]))
                + f64::from(alpha) * f64::from(parts[0]);
            check("linearity", f64::from(b.total), want);
        }
    }

    println!(
        "criterion 2: {} — regress/GAN/blend hand examples and blend linearity to 1e-6",
        verdict(ok)
    );
    assert!(ok);
}

// ── criterion 3: image-quality oracle equivalence ──

fn random_image(rng: &mut impl Rng, side: usize) -> Image {
    let data: Vec<u8> = (0..side * side * 3).map(|_| rng.gen()).collect();
    Image::new(side, side, data).unwrap()
}

#[test]
fn criterion_3_iqa_oracle_equivalence() {
    let mut rng = substream(99, "acceptance/iqa");
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let a = random_image(&mut rng, 16);
        let b = random_image(&mut rng, 16);
        let fast = iqa::evaluate(&a, &b).unwrap();

        let naive_mse = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
            .sum::<f64>()
            / a.data.len() as f64;
        let naive_psnr = if naive_mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (255.0f64 * 255.0 / naive_mse).log10()
        };
        let naive_ssim = iqa::ssim_reference(&a, &b).unwrap();

        worst = worst
            .max((fast.mse - naive_mse).abs())
            .max((fast.psnr - naive_psnr).abs())
            .max((fast.ssim - naive_ssim).abs());
    }

    let flat_a = Image::filled(16, 16, [100, 100, 100]);
    let flat_b = Image::filled(16, 16, [110, 110, 110]);
    let constant = iqa::evaluate(&flat_a, &flat_b).unwrap();
    let constant_err = (constant.ssim - 0.99548).abs();

    let ok = worst < 1e-6 && constant_err < 1e-4;
    println!(
        "criterion 3: {} — max |fast − naive| {worst:.2e} (< 1e-6) over 50 random 16x16 \
         pairs; constant-image ssim {:.5} (0.99548 ± 1e-4)",
        verdict(ok),
        constant.ssim
    );
    assert!(ok, "worst {worst:.2e}, constant err {constant_err:.2e}");
}

// ── criterion 4: toy predictor quality ──

#[test]
fn criterion_4_predictor_quality() {
    let f = fixture();
    let ok = f.steering_test_mse < 0.05 && f.steering_secs < 300.0;
    println!(
        "criterion 4: {} — 500-sample/30-epoch predictor test MSE {:.4} rad^2 (< 0.05) \
         in {:.0}s (< 300s)",
        verdict(ok),
        f.steering_test_mse,
        f.steering_secs
    );
    assert!(ok);
}

// ── criterion 5: attack efficacy at study defaults ──

#[test]
fn criterion_5_attack_efficacy() {
    let f = fixture();
    let ok = f.eval_deviation >= 0.25 && f.eval_ssim >= 0.3 && f.attack_secs < 1800.0;
    println!(
        "criterion 5: {} — held-out deviation {:.4} rad (>= 0.25), ssim {:.4} (>= 0.3), \
         150 epochs in {:.0}s (< 1800s); full-scale study reference: 1.09 ± 0.90 rad",
        verdict(ok),
        f.eval_deviation,
        f.eval_ssim,
        f.attack_secs
    );
    assert!(ok);
}

// ── criterion 6: ablation directions ──

struct AblationMetrics {
    ssim_alpha_low: f64,
    ssim_alpha_high: f64,
    theta0_final_regress: f64,
    epoch_025: Option<usize>,
    epoch_05: Option<usize>,
    secs: f64,
}

fn first_crossing(records: &[TrainLogRecord], threshold: f64) -> Option<usize> {
    records
        .iter()
        .find(|r| r.mean_deviation >= threshold)
        .map(|r| r.epoch)
}

fn run_ablations(f: &Fixture) -> AblationMetrics {
    let stamp_path = f.root.join("stamp_c6.txt");
    if let Some(map) = read_stamp(&stamp_path) {
        let cached = (map.get("scale").map(String::as_str) == Some("96/60"))
            .then_some(())
            .and_then(|_| {
                Some(AblationMetrics {
                    ssim_alpha_low: stamp_f64(&map, "ssim-alpha-low")?,
                    ssim_alpha_high: stamp_f64(&map, "ssim-alpha-high")?,
                    theta0_final_regress: stamp_f64(&map, "theta0-final-regress")?,
                    epoch_025: parse_epoch(map.get("epoch-025")?),
                    epoch_05: parse_epoch(map.get("epoch-05")?),
                    secs: stamp_f64(&map, "secs")?,
                })
            });
        if let Some(metrics) = cached {
            eprintln!("reusing cached ablation metrics");
            return metrics;
        }
    }

    let domain_a = f.root.join("ablate_domain_a");
    let domain_b = f.root.join("ablate_domain_b");
    if !domain_a.join("manifest.csv").is_file() {
        build_dataset(96, 64, &domain_a, None, 3001).unwrap();
        build_dataset(96, 64, &domain_b, Some(&FogParams::default()), 3002).unwrap();
    }
    let base = AttackConfig {
        epochs: 60,
        ..AttackConfig::default()
    };

    let t0 = Instant::now();
    eprintln!("ablations: alpha sweep {{0.2, 0.8}} at 96 images / 60 epochs");
    let alpha = ablation_sweep(
        SweepParam::Alpha,
        &[0.2, 0.8],
        &base,
        &domain_a,
        &domain_b,
        &f.predictor,
        &f.eval_set,
        &f.root.join("ablate_alpha"),
    )
    .expect("alpha sweep");
    eprintln!("ablations: theta sweep {{0, 0.5, 1}}");
    let theta = ablation_sweep(
        SweepParam::Theta,
        &[0.0, 0.5, 1.0],
        &base,
        &domain_a,
        &domain_b,
        &f.predictor,
        &f.eval_set,
        &f.root.join("ablate_theta"),
    )
    .expect("theta sweep");
    let secs = t0.elapsed().as_secs_f64();

    assert_eq!(alpha.entries.len(), 2);
    assert_eq!(theta.entries.len(), 3);
    assert!(theta.entries.iter().all(|e| e.records.len() == base.epochs));
    let metrics = AblationMetrics {
        ssim_alpha_low: alpha.entries[0].report.ssim.mean,
        ssim_alpha_high: alpha.entries[1].report.ssim.mean,
        theta0_final_regress: theta.entries[0].records.last().unwrap().regress,
        epoch_025: first_crossing(&theta.entries[1].records, 0.25),
        epoch_05: first_crossing(&theta.entries[2].records, 0.5),
        secs,
    };
    write_stamp(
        &stamp_path,
        &[
            ("scale", "96/60".to_string()),
            ("ssim-alpha-low", metrics.ssim_alpha_low.to_string()),
            ("ssim-alpha-high", metrics.ssim_alpha_high.to_string()),
            (
                "theta0-final-regress",
                metrics.theta0_final_regress.to_string(),
            ),
            ("epoch-025", fmt_epoch(metrics.epoch_025)),
            ("epoch-05", fmt_epoch(metrics.epoch_05)),
            ("secs", metrics.secs.to_string()),
        ],
    );
    metrics
}

#[test]
fn criterion_6_ablation_directions() {
    let f = fixture();
    let m = run_ablations(f);
    let rank = |e: Option<usize>| e.unwrap_or(usize::MAX);
    let alpha_ok = m.ssim_alpha_high <= m.ssim_alpha_low;
    let theta0_ok = m.theta0_final_regress < 0.0;
    let ordering_ok = rank(m.epoch_05) >= rank(m.epoch_025);
    let ok = alpha_ok && theta0_ok && ordering_ok && m.secs < 5400.0;
    println!(
        "criterion 6: {} — ssim at alpha 0.8 {:.4} <= alpha 0.2 {:.4}; theta=0 final \
         regress {:.4} (< 0); theta=1 crosses 0.5 rad at epoch {} >= theta=0.5 crosses \
         0.25 rad at epoch {}; {:.0}s (< 5400s)",
        verdict(ok),
        m.ssim_alpha_high,
        m.ssim_alpha_low,
        m.theta0_final_regress,
        fmt_epoch(m.epoch_05),
        fmt_epoch(m.epoch_025),
        m.secs
    );
    assert!(ok);
}

// ── criterion 7: adversarial-training defense ──

#[test]
fn criterion_7_defense() {
    let f = fixture();
    let stamp_path = f.root.join("stamp_c7.txt");
    let cached = read_stamp(&stamp_path).and_then(|map| {
        Some((
            stamp_f64(&map, "before")?,
            stamp_f64(&map, "after")?,
            stamp_f64(&map, "control")?,
        ))
    });
    let (before, after, control) = match cached {
        Some(metrics) => {
            eprintln!("reusing cached defense metrics");
            metrics
        }
        None => {
            eprintln!("defense: fine-tuning on generated fog plus a clean-retrain control");
            let outcome = defense(
                &f.predictor,
                &f.attack_dir.join(GEN_AB_FILE),
                AttackConfig::default().res_blocks,
                &f.domain_a,
                &f.eval_set,
                &DefenseConfig::default(),
                &f.root.join("defense"),
            )
            .expect("defense pipeline");
            let metrics = (
                outcome.before.deviation.mean,
                outcome.after.deviation.mean,
                outcome.control.deviation.mean,
            );
            write_stamp(
                &stamp_path,
                &[
                    ("before", metrics.0.to_string()),
                    ("after", metrics.1.to_string()),
                    ("control", metrics.2.to_string()),
                ],
            );
            metrics
        }
    };

    let defended_ok = after <= 0.5 * before;
    let control_ok = (control - before).abs() < 0.2 * before;
    let ok = defended_ok && control_ok;
    println!(
        "criterion 7: {} — deviation {before:.4} rad before, {after:.4} after defense \
         (<= 50%), {control:.4} under clean-retrain control (within 20%); full-scale \
         study reference: 1.81 -> 0.17 rad",
        verdict(ok)
    );
    assert!(ok);
}

// ── criterion 8: determinism and on-disk formats ──

/// Train logs carry one wall-time column; mask it before comparing
/// re-runs, every other byte must match.
fn normalize_log(text: &str) -> String {
    let mut lines = text.lines();
    let header = lines.next().expect("log header");
    let seconds_col = header
        .split(',')
        .position(|c| c == "seconds")
        .expect("seconds column");
    let mut out = format!("{header}\n");
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        for (i, field) in fields.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(if i == seconds_col { "_" } else { field });
        }
        out.push('\n');
    }
    out
}

fn read_bytes(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn load_error<T>(result: fogbench::Result<T>) -> String {
    match result {
        Err(e) => e.to_string(),
        Ok(_) => "loaded without error".to_string(),
    }
}

#[test]
fn criterion_8_determinism_and_formats() {
    let root = work_root().join("determinism");
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();
    let arg = |p: &Path| p.display().to_string();

    let pretrain = root.join("pretrain");
    let clean = root.join("clean");
    let foggy = root.join("foggy");
    for (dir, count, seed, fog) in [
        (&pretrain, "24", "4001", None),
        (&clean, "16", "4002", None),
        (&foggy, "16", "4003", Some("0.05")),
    ] {
        let mut args = vec![
            "fogbench".to_string(),
            "gen-data".to_string(),
            "--count".to_string(),
            count.to_string(),
            "--seed".to_string(),
            seed.to_string(),
            "--image-size".to_string(),
            "32".to_string(),
            "--out".to_string(),
            arg(dir),
        ];
        if let Some(beta) = fog {
            args.push("--fog-beta".to_string());
            args.push(beta.to_string());
        }
        assert_eq!(run_from(args), 0);
    }

    // Datasets re-run byte-for-byte from their manifests.
    let clean2 = root.join("clean_rerun");
    assert_eq!(
        run_from([
            "fogbench",
            "gen-data",
            "--config",
            &arg(&clean.join("run_manifest.txt")),
            "--out",
            &arg(&clean2),
        ]),
        0
    );
    let dataset_ok = read_bytes(&clean.join("manifest.csv"))
        == read_bytes(&clean2.join("manifest.csv"))
        && (0..16).all(|i| {
            let name = format!("images/{i:06}.ppm");
            read_bytes(&clean.join(&name)) == read_bytes(&clean2.join(&name))
        });

    // A tiny attack run, then again from nothing but its manifest.
    let steer = root.join("steering");
    assert_eq!(
        run_from([
            "fogbench",
            "train-steering",
            "--dataset",
            &arg(&pretrain),
            "--out",
            &arg(&steer),
            "--epochs",
            "2",
        ]),
        0
    );
    let predictor = steer.join("predictor.fgb");
    let run1 = root.join("attack_run");
    assert_eq!(
        run_from([
            "fogbench",
            "train-attack",
            "--domain-a",
            &arg(&clean),
            "--domain-b",
            &arg(&foggy),
            "--predictor",
            &arg(&predictor),
            "--out",
            &arg(&run1),
            "--epochs",
            "3",
            "--batch-size",
            "4",
            "--res-blocks",
            "1",
        ]),
        0
    );
    let run2 = root.join("attack_rerun");
    assert_eq!(
        run_from([
            "fogbench",
            "train-attack",
            "--config",
            &arg(&run1.join("run_manifest.txt")),
            "--out",
            &arg(&run2),
        ]),
        0
    );
    let rerun_ok = ["gen_ab.fgb", "gen_ba.fgb", "disc_a.fgb", "disc_b.fgb"]
        .iter()
        .all(|name| read_bytes(&run1.join(name)) == read_bytes(&run2.join(name)))
        && normalize_log(&std::fs::read_to_string(run1.join("train_log.csv")).unwrap())
            == normalize_log(&std::fs::read_to_string(run2.join("train_log.csv")).unwrap());

    // Checkpoints round-trip bit-exactly.
    let original = run1.join("gen_ab.fgb");
    let resaved = root.join("gen_ab_resaved.fgb");
    TranslationGenerator::load(&original, 1)
        .unwrap()
        .save(&resaved)
        .unwrap();
    let pred_resaved = root.join("predictor_resaved.fgb");
    SteeringPredictor::load(&predictor, 32)
        .unwrap()
        .save(&pred_resaved)
        .unwrap();
    let roundtrip_ok = read_bytes(&original) == read_bytes(&resaved)
        && read_bytes(&predictor) == read_bytes(&pred_resaved);

    // Corrupted checkpoints are rejected with a diagnostic.
    let bytes = read_bytes(&original);
    let bad_magic = root.join("bad_magic.fgb");
    let mut flipped = bytes.clone();
    flipped[0] ^= 0xff;
    std::fs::write(&bad_magic, &flipped).unwrap();
    let magic_err = load_error(TranslationGenerator::load(&bad_magic, 1));

    let truncated = root.join("truncated.fgb");
    std::fs::write(&truncated, &bytes[..bytes.len() - 10]).unwrap();
    let truncated_err = load_error(TranslationGenerator::load(&truncated, 1));

    let tag_err = load_error(SteeringPredictor::load(&original, 32));
    let corrupt_ok = magic_err.contains("magic")
        && truncated_err.contains("truncated")
        && tag_err.contains("tag");

    let ok = dataset_ok && rerun_ok && roundtrip_ok && corrupt_ok;
    println!(
        "criterion 8: {} — manifest re-runs byte-identical (datasets exact; attack \
         checkpoints exact, log timing column excluded); checkpoint save/load \
         round-trips bit-exactly; bad magic / truncation / wrong tag rejected",
        verdict(ok)
    );
    assert!(
        ok,
        "dataset {dataset_ok}, rerun {rerun_ok}, roundtrip {roundtrip_ok}, corrupt {corrupt_ok}\n\
         magic: {magic_err}\ntruncated: {truncated_err}\ntag: {tag_err}"
    );
}
