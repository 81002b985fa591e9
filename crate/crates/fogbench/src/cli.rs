//! Command-line entry point: every pipeline stage behind one binary.
//!
//! Configuration flows flags-first: each flag falls back to the optional
//! `--config` key=value file, then to the built-in default. The fully
//! resolved configuration is written to `run_manifest.txt` in the output
//! directory before any computation starts, and that manifest is itself a
//! valid `--config` file, so a run directory is self-describing.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or validation
//! failure. Validation runs to completion before any output is created.

use crate::error::{Error, Result};
use crate::eval::{self, DefenseConfig, GeneratorRef, SweepParam};
use crate::manifest::{read_config, ConfigFile, RunManifest};
use crate::models::{gradient_suite, SteeringPredictor, TranslationGenerator};
use crate::ppm::read_ppm;
use crate::scenes::{build_dataset, FogParams};
use crate::trainer::{train_attack, train_steering, AttackConfig, SteeringConfig};
use clap::{Args, Parser, Subcommand};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

// ── exit-code plumbing ──

/// Failure tagged with its exit code class.
enum CliError {
    /// Bad flags, bad config values, missing inputs: exit 2.
    Validation(Error),
    /// Failure after validation passed: exit 1.
    Runtime(Error),
}

type CliResult = std::result::Result<(), CliError>;

fn validation(e: Error) -> CliError {
    CliError::Validation(e)
}

fn runtime(e: Error) -> CliError {
    CliError::Runtime(e)
}

fn invalid(detail: impl Into<String>) -> CliError {
    CliError::Validation(Error::Config(detail.into()))
}

/// Runs the CLI against explicit arguments and returns the process exit
/// code. `run` wires this to `std::env::args_os`.
pub fn run_from<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return u8::try_from(e.exit_code()).unwrap_or(2);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Validation(e)) => {
            eprintln!("error: {e}");
            2
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run() -> u8 {
    run_from(std::env::args_os())
}

// ── argument definitions ──

#[derive(Parser)]
#[command(
    name = "fogbench",
    version,
    about = "Weather-adversarial attacks on steering-angle regressors: \
             data synthesis, attack training, evaluation, ablations, defense",
    after_help = "Flags override --config file entries. Every run directory \
                  receives a run_manifest.txt that is reusable as --config. \
                  FOGBENCH_THREADS caps worker threads (default 1)."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic road-scene dataset (optionally fogged)
    GenData(GenDataArgs),
    /// Train the steering-angle predictor on a dataset
    TrainSteering(TrainSteeringArgs),
    /// Train the fog attack generators against a frozen predictor
    TrainAttack(TrainAttackArgs),
    /// Evaluate a generator's deviation and image quality on a dataset
    Eval(EvalArgs),
    /// Contrast two generators on the same inputs
    Compare(CompareArgs),
    /// Sweep alpha or theta, training one attack per value
    Ablate(AblateArgs),
    /// Fine-tune the predictor on generated fog and measure the defense
    Defend(DefendArgs),
    /// Check analytic gradients against central finite differences
    GradCheck(GradCheckArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of samples to render (required)
    #[arg(long)]
    count: Option<usize>,
    /// Output dataset directory (required)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scene-generation seed (required)
    #[arg(long)]
    seed: Option<u64>,
    /// Square image edge in pixels [default: 64 (study scale)]
    #[arg(long)]
    image_size: Option<usize>,
    /// Fog extinction coefficient per unit depth; enables fog
    /// [0.05 reproduces the study's foggy domain]
    #[arg(long)]
    fog_beta: Option<f32>,
    /// Fog airlight grey level, 0-255 [default: 230]
    #[arg(long)]
    fog_airlight: Option<u8>,
    /// Horizon height as a fraction of image height [default: 0.5]
    #[arg(long)]
    fog_horizon: Option<f32>,
}

#[derive(Args)]
struct TrainSteeringArgs {
    /// Key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training dataset directory (required)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Run directory for checkpoint, report, and manifest (required)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training epochs [default: 30 (study default)]
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    lr: Option<f32>,
    /// Split/init/shuffle seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainAttackArgs {
    /// Key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Clean-domain dataset directory (required)
    #[arg(long)]
    domain_a: Option<PathBuf>,
    /// Foggy-domain dataset directory (required)
    #[arg(long)]
    domain_b: Option<PathBuf>,
    /// Frozen steering-predictor checkpoint (required)
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// Run directory for logs, checkpoints, and manifest (required)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Blend weight between translation and deviation loss groups,
    /// strictly in (0,1) [default: 0.2 (study default)]
    #[arg(long)]
    alpha: Option<f32>,
    /// Minimum target deviation in radians, >= 0
    /// [default: 0.5 (study default)]
    #[arg(long)]
    theta: Option<f32>,
    /// Cycle-consistency weight [default: 10 (study default)]
    #[arg(long)]
    lambda_cycle: Option<f32>,
    /// Identity-mapping weight [default: 3 (study default)]
    #[arg(long)]
    lambda_identity: Option<f32>,
    /// Training epochs [default: 150 (study default)]
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size [default: 4]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.0002 (study default)]
    #[arg(long)]
    lr: Option<f32>,
    /// Init/shuffle seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Residual blocks per generator [default: 3]
    #[arg(long)]
    res_blocks: Option<usize>,
    /// Add the backward (de-fogging) regression term
    #[arg(long)]
    enable_bregress: bool,
    /// Clamp the regression loss at zero once theta is exceeded
    #[arg(long)]
    clamp_regress: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory to evaluate on (required)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Steering-predictor checkpoint (required)
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// Generator checkpoint, or `identity` for the built-in
    /// pass-through generator (required)
    #[arg(long)]
    generator: Option<String>,
    /// Residual blocks in the generator checkpoint [default: 3]
    #[arg(long)]
    res_blocks: Option<usize>,
    /// Output directory for the reports (required)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory to translate (required)
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Steering-predictor checkpoint (required)
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// First generator checkpoint (required)
    #[arg(long)]
    generator_a: Option<PathBuf>,
    /// Second generator checkpoint (required)
    #[arg(long)]
    generator_b: Option<PathBuf>,
    /// Residual blocks in both generator checkpoints [default: 3]
    #[arg(long)]
    res_blocks: Option<usize>,
    /// Output directory for the reports (required)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Hyperparameter to sweep: `alpha` or `theta` (required)
    #[arg(long)]
    param: Option<String>,
    /// Comma-separated values, e.g. 0.2,0.5,0.8 (required)
    #[arg(long)]
    values: Option<String>,
    /// Clean-domain dataset directory (required)
    #[arg(long)]
    domain_a: Option<PathBuf>,
    /// Foggy-domain dataset directory (required)
    #[arg(long)]
    domain_b: Option<PathBuf>,
    /// Frozen steering-predictor checkpoint (required)
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// Held-out dataset for per-value evaluation (required)
    #[arg(long)]
    eval_dataset: Option<PathBuf>,
    /// Sweep directory; one sub-run per value (required)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base alpha for runs not sweeping it [default: 0.2 (study default)]
    #[arg(long)]
    alpha: Option<f32>,
    /// Base theta for runs not sweeping it [default: 0.5 (study default)]
    #[arg(long)]
    theta: Option<f32>,
    /// Cycle-consistency weight [default: 10 (study default)]
    #[arg(long)]
    lambda_cycle: Option<f32>,
    /// Identity-mapping weight [default: 3 (study default)]
    #[arg(long)]
    lambda_identity: Option<f32>,
    /// Epochs per sub-run [default: 150 (study default)]
    #[arg(long)]
    epochs: Option<usize>,
    /// Minibatch size [default: 4]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.0002 (study default)]
    #[arg(long)]
    lr: Option<f32>,
    /// Shared seed across sub-runs [default: 42]
    #[arg(long)]
    seed: Option<u64>,
    /// Residual blocks per generator [default: 3]
    #[arg(long)]
    res_blocks: Option<usize>,
    /// Add the backward (de-fogging) regression term
    #[arg(long)]
    enable_bregress: bool,
    /// Clamp the regression loss at zero once theta is exceeded
    #[arg(long)]
    clamp_regress: bool,
}

#[derive(Args)]
struct DefendArgs {
    /// Key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Attacked steering-predictor checkpoint (required)
    #[arg(long)]
    predictor: Option<PathBuf>,
    /// Attack generator checkpoint producing the fog (required)
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Residual blocks in the generator checkpoint [default: 3]
    #[arg(long)]
    res_blocks: Option<usize>,
    /// Clean training dataset to fine-tune on (required)
    #[arg(long)]
    train_dataset: Option<PathBuf>,
    /// Held-out dataset for before/after measurement (required)
    #[arg(long)]
    test_dataset: Option<PathBuf>,
    /// Run directory for reports and checkpoints (required)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fine-tune epochs [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Fine-tune minibatch size [default: 16]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Fine-tune learning rate [default: 0.0001]
    #[arg(long)]
    lr: Option<f32>,
    /// Fine-tune shuffle seed [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GradCheckArgs {
    /// Key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seeds per case [default: 100]
    #[arg(long)]
    seeds: Option<u64>,
    /// Maximum acceptable relative error [default: 0.001]
    #[arg(long)]
    tolerance: Option<f64>,
}

// ── flag/config resolution ──

/// Merges flags over config-file entries over defaults, recording every
/// resolved value into a manifest and every consulted key for the final
/// unknown-key check.
struct Resolver {
    config: ConfigFile,
    consulted: Vec<String>,
    manifest: RunManifest,
}

impl Resolver {
    fn new(subcommand: &'static str, config_path: Option<&Path>) -> Result<Resolver> {
        let config = match config_path {
            Some(path) => {
                let config = read_config(path)?;
                if let Some(sc) = &config.subcommand {
                    if sc != subcommand {
                        return Err(Error::Config(format!(
                            "{}: written for subcommand `{sc}`, not `{subcommand}`",
                            path.display()
                        )));
                    }
                }
                config
            }
            None => ConfigFile {
                subcommand: None,
                entries: Vec::new(),
            },
        };
        Ok(Resolver {
            config,
            consulted: Vec::new(),
            manifest: RunManifest::new(subcommand),
        })
    }

    fn lookup(&mut self, key: &str) -> Option<String> {
        self.consulted.push(key.to_string());
        self.config.get(key).map(str::to_string)
    }

    fn parse_config_value<T>(key: &str, raw: &str) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| Error::Config(format!("config key {key}: cannot parse {raw:?}: {e}")))
    }

    fn value<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_config = self.lookup(key);
        let resolved = match (flag, from_config) {
            (Some(v), _) => v,
            (None, Some(raw)) => Self::parse_config_value(key, &raw)?,
            (None, None) => default,
        };
        self.manifest.entry(key, &resolved)?;
        Ok(resolved)
    }

    fn value_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let from_config = self.lookup(key);
        let resolved = match (flag, from_config) {
            (Some(v), _) => Some(v),
            (None, Some(raw)) => Some(Self::parse_config_value(key, &raw)?),
            (None, None) => None,
        };
        if let Some(v) = &resolved {
            self.manifest.entry(key, v)?;
        }
        Ok(resolved)
    }

    fn required<T>(&mut self, key: &str, flag: Option<T>) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.value_opt(key, flag)? {
            Some(v) => Ok(v),
            None => Err(Error::Config(format!("missing required --{key}"))),
        }
    }

    /// Boolean flags OR with the config file: the flag can enable but not
    /// disable a config-enabled switch.
    fn switch(&mut self, key: &str, flag: bool) -> Result<bool> {
        let from_config = self.lookup(key);
        let resolved = if flag {
            true
        } else {
            match from_config {
                Some(raw) => Self::parse_config_value(key, &raw)?,
                None => false,
            }
        };
        self.manifest.entry(key, resolved)?;
        Ok(resolved)
    }

    fn path(&mut self, key: &str, flag: Option<PathBuf>) -> Result<PathBuf> {
        let from_config = self.lookup(key);
        let resolved = match (flag, from_config) {
            (Some(p), _) => p,
            (None, Some(raw)) => PathBuf::from(raw),
            (None, None) => return Err(Error::Config(format!("missing required --{key}"))),
        };
        self.manifest.entry(key, resolved.display())?;
        Ok(resolved)
    }

    fn config_has(&self, key: &str) -> bool {
        self.config.get(key).is_some()
    }

    /// Rejects config-file keys nothing consulted: they are typos or a
    /// manifest from a different subcommand.
    fn no_unknown_keys(&self) -> Result<()> {
        for (key, _) in &self.config.entries {
            if !self.consulted.iter().any(|c| c == key) {
                return Err(Error::Config(format!(
                    "unknown config key {key:?} for this subcommand"
                )));
            }
        }
        Ok(())
    }
}

// ── shared validation helpers ──

fn require_dataset(dir: &Path, what: &str) -> Result<()> {
    if !dir.join("manifest.csv").is_file() {
        return Err(Error::Config(format!(
            "{what} {}: not a dataset directory (missing manifest.csv)",
            dir.display()
        )));
    }
    Ok(())
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Config(format!(
            "{what} {} does not exist",
            path.display()
        )));
    }
    Ok(())
}

fn require_positive(value: f32, key: &str) -> Result<()> {
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::Config(format!("--{key} must be finite and > 0")));
    }
    Ok(())
}

fn require_nonzero(value: usize, key: &str) -> Result<()> {
    if value == 0 {
        return Err(Error::Config(format!("--{key} must be >= 1")));
    }
    Ok(())
}

/// Reads the first image of a dataset to recover the model input size.
fn dataset_image_size(dir: &Path) -> Result<usize> {
    let paths = crate::data::image_paths(dir)?;
    let first = read_ppm(&paths[0])?;
    Ok(first.width)
}

fn dispatch(command: Command) -> CliResult {
    match command {
        Command::GenData(args) => cmd_gen_data(args),
        Command::TrainSteering(args) => cmd_train_steering(args),
        Command::TrainAttack(args) => cmd_train_attack(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Defend(args) => cmd_defend(args),
        Command::GradCheck(args) => cmd_grad_check(args),
    }
}

// ── subcommands ──

fn cmd_gen_data(args: GenDataArgs) -> CliResult {
    let mut r = Resolver::new("gen-data", args.config.as_deref()).map_err(validation)?;
    let count = r.required("count", args.count).map_err(validation)?;
    let out = r.path("out", args.out).map_err(validation)?;
    let seed = r.required("seed", args.seed).map_err(validation)?;
    let image_size = r
        .value("image-size", args.image_size, 64)
        .map_err(validation)?;
    let fog_beta = r.value_opt("fog-beta", args.fog_beta).map_err(validation)?;
    let fog = match fog_beta {
        Some(beta) => {
            let defaults = FogParams::default();
            let airlight = r
                .value("fog-airlight", args.fog_airlight, defaults.airlight[0])
                .map_err(validation)?;
            let horizon = r
                .value("fog-horizon", args.fog_horizon, defaults.horizon_frac)
                .map_err(validation)?;
            if !beta.is_finite() || beta < 0.0 {
                return Err(invalid("--fog-beta must be finite and >= 0"));
            }
            if !(0.0..=1.0).contains(&horizon) {
                return Err(invalid("--fog-horizon must be in [0,1]"));
            }
            Some(FogParams {
                beta,
                airlight: [airlight; 3],
                horizon_frac: horizon,
            })
        }
        None => {
            if args.fog_airlight.is_some()
                || args.fog_horizon.is_some()
                || r.config_has("fog-airlight")
                || r.config_has("fog-horizon")
            {
                return Err(invalid("--fog-airlight/--fog-horizon require --fog-beta"));
            }
            None
        }
    };
    r.no_unknown_keys().map_err(validation)?;
    require_nonzero(count, "count").map_err(validation)?;
    if image_size < 4 {
        return Err(invalid("--image-size must be >= 4"));
    }

    r.manifest.write(&out).map_err(runtime)?;
    let summary = build_dataset(count, image_size, &out, fog.as_ref(), seed).map_err(runtime)?;
    r.manifest.finish(&out).map_err(runtime)?;
    println!(
        "wrote {} samples to {}",
        summary.count,
        summary.dir.display()
    );
    Ok(())
}

fn cmd_train_steering(args: TrainSteeringArgs) -> CliResult {
    let mut r = Resolver::new("train-steering", args.config.as_deref()).map_err(validation)?;
    let dataset = r.path("dataset", args.dataset).map_err(validation)?;
    let out = r.path("out", args.out).map_err(validation)?;
    let defaults = SteeringConfig::default();
    let cfg = SteeringConfig {
        epochs: r
            .value("epochs", args.epochs, defaults.epochs)
            .map_err(validation)?,
        batch_size: r
            .value("batch-size", args.batch_size, defaults.batch_size)
            .map_err(validation)?,
        lr: r.value("lr", args.lr, defaults.lr).map_err(validation)?,
        seed: r
            .value("seed", args.seed, defaults.seed)
            .map_err(validation)?,
    };
    r.no_unknown_keys().map_err(validation)?;
    require_dataset(&dataset, "--dataset").map_err(validation)?;
    require_nonzero(cfg.epochs, "epochs").map_err(validation)?;
    require_nonzero(cfg.batch_size, "batch-size").map_err(validation)?;
    require_positive(cfg.lr, "lr").map_err(validation)?;

    r.manifest.write(&out).map_err(runtime)?;
    let report = train_steering(&dataset, &out.join("predictor.fgb"), &cfg).map_err(runtime)?;

    let mut text = format!(
        "image_size: {}\nn_train: {}\nn_test: {}\ninitial_train_mse: {}\n\
         train_mse: {}\ntest_mse: {}\ncheckpoint: {}\n",
        report.image_size,
        report.n_train,
        report.n_test,
        report.initial_train_mse,
        report.train_mse,
        report.test_mse,
        report.checkpoint.display(),
    );
    text.push_str("\nepoch,loss\n");
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        text.push_str(&format!("{},{loss}\n", i + 1));
    }
    let report_path = out.join("steering_report.txt");
    std::fs::write(&report_path, text).map_err(|e| runtime(Error::io(&report_path, e)))?;
    r.manifest.finish(&out).map_err(runtime)?;
    println!(
        "steering predictor: train MSE {:.6}, test MSE {:.6} ({} train / {} test) -> {}",
        report.train_mse,
        report.test_mse,
        report.n_train,
        report.n_test,
        report.checkpoint.display()
    );
    Ok(())
}

/// Resolves the attack-configuration flag block shared by `train-attack`
/// and `ablate`.
#[allow(clippy::too_many_arguments)]
fn resolve_attack_config(
    r: &mut Resolver,
    alpha: Option<f32>,
    theta: Option<f32>,
    lambda_cycle: Option<f32>,
    lambda_identity: Option<f32>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    lr: Option<f32>,
    seed: Option<u64>,
    res_blocks: Option<usize>,
    enable_bregress: bool,
    clamp_regress: bool,
) -> Result<AttackConfig> {
    let defaults = AttackConfig::default();
    let cfg = AttackConfig {
        alpha: r.value("alpha", alpha, defaults.alpha)?,
        theta: r.value("theta", theta, defaults.theta)?,
        lambda_cycle: r.value("lambda-cycle", lambda_cycle, defaults.lambda_cycle)?,
        lambda_identity: r.value("lambda-identity", lambda_identity, defaults.lambda_identity)?,
        epochs: r.value("epochs", epochs, defaults.epochs)?,
        batch_size: r.value("batch-size", batch_size, defaults.batch_size)?,
        lr: r.value("lr", lr, defaults.lr)?,
        seed: r.value("seed", seed, defaults.seed)?,
        res_blocks: r.value("res-blocks", res_blocks, defaults.res_blocks)?,
        enable_bregress: r.switch("enable-bregress", enable_bregress)?,
        clamp_regress: r.switch("clamp-regress", clamp_regress)?,
    };
    require_nonzero(cfg.epochs, "epochs")?;
    require_nonzero(cfg.batch_size, "batch-size")?;
    require_positive(cfg.lr, "lr")?;
    Ok(cfg)
}

fn cmd_train_attack(args: TrainAttackArgs) -> CliResult {
    let mut r = Resolver::new("train-attack", args.config.as_deref()).map_err(validation)?;
    let domain_a = r.path("domain-a", args.domain_a).map_err(validation)?;
    let domain_b = r.path("domain-b", args.domain_b).map_err(validation)?;
    let predictor = r.path("predictor", args.predictor).map_err(validation)?;
    let out = r.path("out", args.out).map_err(validation)?;
    let cfg = resolve_attack_config(
        &mut r,
        args.alpha,
        args.theta,
        args.lambda_cycle,
        args.lambda_identity,
        args.epochs,
        args.batch_size,
        args.lr,
        args.seed,
        args.res_blocks,
        args.enable_bregress,
        args.clamp_regress,
    )
    .map_err(validation)?;
    r.no_unknown_keys().map_err(validation)?;
    cfg.validate().map_err(validation)?;
    require_dataset(&domain_a, "--domain-a").map_err(validation)?;
    require_dataset(&domain_b, "--domain-b").map_err(validation)?;
    require_file(&predictor, "--predictor").map_err(validation)?;

    r.manifest.write(&out).map_err(runtime)?;
    let report = train_attack(&domain_a, &domain_b, &predictor, &out, &cfg).map_err(runtime)?;
    r.manifest.finish(&out).map_err(runtime)?;
    let last = report.records.last().expect("at least one epoch");
    println!(
        "attack training complete: {} epochs, final mean deviation {:.4} rad -> {}",
        cfg.epochs,
        last.mean_deviation,
        out.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    let mut r = Resolver::new("eval", args.config.as_deref()).map_err(validation)?;
    let dataset = r.path("dataset", args.dataset).map_err(validation)?;
    let predictor_path = r.path("predictor", args.predictor).map_err(validation)?;
    let generator: String = r
        .required("generator", args.generator)
        .map_err(validation)?;
    let res_blocks = r
        .value(
            "res-blocks",
            args.res_blocks,
            AttackConfig::default().res_blocks,
        )
        .map_err(validation)?;
    let out = r.path("out", args.out).map_err(validation)?;
    r.no_unknown_keys().map_err(validation)?;
    require_dataset(&dataset, "--dataset").map_err(validation)?;
    require_file(&predictor_path, "--predictor").map_err(validation)?;
    if generator != "identity" {
        require_file(Path::new(&generator), "--generator").map_err(validation)?;
    }

    r.manifest.write(&out).map_err(runtime)?;
    let image_size = dataset_image_size(&dataset).map_err(runtime)?;
    let predictor = SteeringPredictor::load(&predictor_path, image_size).map_err(runtime)?;
    let model;
    let generator_ref = if generator == "identity" {
        GeneratorRef::Identity
    } else {
        model = TranslationGenerator::load(Path::new(&generator), res_blocks).map_err(runtime)?;
        GeneratorRef::Model(&model)
    };
    let report =
        eval::deviation_report(generator_ref, &predictor, &dataset, &out).map_err(runtime)?;
    r.manifest.finish(&out).map_err(runtime)?;
    println!(
        "deviation {:.4} ± {:.4} rad | ssim {:.4} | psnr {:.4} dB | mse {:.4} | n={}",
        report.deviation.mean,
        report.deviation.std,
        report.ssim.mean,
        report.psnr.mean,
        report.mse.mean,
        report.n
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> CliResult {
    let mut r = Resolver::new("compare", args.config.as_deref()).map_err(validation)?;
    let dataset = r.path("dataset", args.dataset).map_err(validation)?;
    let predictor_path = r.path("predictor", args.predictor).map_err(validation)?;
    let generator_a = r
        .path("generator-a", args.generator_a)
        .map_err(validation)?;
    let generator_b = r
        .path("generator-b", args.generator_b)
        .map_err(validation)?;
    let res_blocks = r
        .value(
            "res-blocks",
            args.res_blocks,
            AttackConfig::default().res_blocks,
        )
        .map_err(validation)?;
    let out = r.path("out", args.out).map_err(validation)?;
    r.no_unknown_keys().map_err(validation)?;
    require_dataset(&dataset, "--dataset").map_err(validation)?;
    require_file(&predictor_path, "--predictor").map_err(validation)?;
    require_file(&generator_a, "--generator-a").map_err(validation)?;
    require_file(&generator_b, "--generator-b").map_err(validation)?;

    r.manifest.write(&out).map_err(runtime)?;
    let image_size = dataset_image_size(&dataset).map_err(runtime)?;
    let predictor = SteeringPredictor::load(&predictor_path, image_size).map_err(runtime)?;
    let first = TranslationGenerator::load(&generator_a, res_blocks).map_err(runtime)?;
    let second = TranslationGenerator::load(&generator_b, res_blocks).map_err(runtime)?;
    let report =
        eval::compare_generators(&first, &second, &predictor, &dataset, &out).map_err(runtime)?;
    r.manifest.finish(&out).map_err(runtime)?;
    println!(
        "generator disagreement {:.4} ± {:.4} rad | ssim between outputs {:.4} | n={}",
        report.deviation.mean, report.deviation.std, report.ssim.mean, report.n
    );
    Ok(())
}

fn parse_sweep_values(raw: &str) -> Result<Vec<f32>> {
    let values: Vec<f32> = raw
        .split(',')
        .map(|part| {
            part.trim()
                .parse::<f32>()
                .map_err(|e| Error::Config(format!("--values: cannot parse {part:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Config(
            "--values must list at least one value".into(),
        ));
    }
    Ok(values)
}

fn cmd_ablate(args: AblateArgs) -> CliResult {
    let mut r = Resolver::new("ablate", args.config.as_deref()).map_err(validation)?;
    let param: String = r.required("param", args.param).map_err(validation)?;
    let param = match param.as_str() {
        "alpha" => SweepParam::Alpha,
        "theta" => SweepParam::Theta,
        other => {
            return Err(invalid(format!(
                "--param must be `alpha` or `theta`, got {other:?}"
            )))
        }
    };
    let values_raw: String = r.required("values", args.values).map_err(validation)?;
    let values = parse_sweep_values(&values_raw).map_err(validation)?;
    let domain_a = r.path("domain-a", args.domain_a).map_err(validation)?;
    let domain_b = r.path("domain-b", args.domain_b).map_err(validation)?;
    let predictor = r.path("predictor", args.predictor).map_err(validation)?;
    let eval_dataset = r
        .path("eval-dataset", args.eval_dataset)
        .map_err(validation)?;
    let out = r.path("out", args.out).map_err(validation)?;
    let base = resolve_attack_config(
        &mut r,
        args.alpha,
        args.theta,
        args.lambda_cycle,
        args.lambda_identity,
        args.epochs,
        args.batch_size,
        args.lr,
        args.seed,
        args.res_blocks,
        args.enable_bregress,
        args.clamp_regress,
    )
    .map_err(validation)?;
    r.no_unknown_keys().map_err(validation)?;
    for &v in &values {
        let mut cfg = base;
        match param {
            SweepParam::Alpha => cfg.alpha = v,
            SweepParam::Theta => cfg.theta = v,
        }
        cfg.validate().map_err(validation)?;
    }
    require_dataset(&domain_a, "--domain-a").map_err(validation)?;
    require_dataset(&domain_b, "--domain-b").map_err(validation)?;
    require_dataset(&eval_dataset, "--eval-dataset").map_err(validation)?;
    require_file(&predictor, "--predictor").map_err(validation)?;

    r.manifest.write(&out).map_err(runtime)?;
    let sweep = eval::ablation_sweep(
        param,
        &values,
        &base,
        &domain_a,
        &domain_b,
        &predictor,
        &eval_dataset,
        &out,
    )
    .map_err(runtime)?;
    r.manifest.finish(&out).map_err(runtime)?;
    for entry in &sweep.entries {
        let reached = entry
            .epochs_to_threshold
            .map_or("never".to_string(), |e| format!("epoch {e}"));
        println!(
            "{}={}: deviation {:.4} rad, ssim {:.4}, threshold reached {}",
            sweep.param, entry.value, entry.report.deviation.mean, entry.report.ssim.mean, reached
        );
    }
    Ok(())
}

fn cmd_defend(args: DefendArgs) -> CliResult {
    let mut r = Resolver::new("defend", args.config.as_deref()).map_err(validation)?;
    let predictor = r.path("predictor", args.predictor).map_err(validation)?;
    let generator = r.path("generator", args.generator).map_err(validation)?;
    let res_blocks = r
        .value(
            "res-blocks",
            args.res_blocks,
            AttackConfig::default().res_blocks,
        )
        .map_err(validation)?;
    let train_dataset = r
        .path("train-dataset", args.train_dataset)
        .map_err(validation)?;
    let test_dataset = r
        .path("test-dataset", args.test_dataset)
        .map_err(validation)?;
    let out = r.path("out", args.out).map_err(validation)?;
    let defaults = DefenseConfig::default();
    let cfg = DefenseConfig {
        epochs: r
            .value("epochs", args.epochs, defaults.epochs)
            .map_err(validation)?,
        batch_size: r
            .value("batch-size", args.batch_size, defaults.batch_size)
            .map_err(validation)?,
        lr: r.value("lr", args.lr, defaults.lr).map_err(validation)?,
        seed: r
            .value("seed", args.seed, defaults.seed)
            .map_err(validation)?,
    };
    r.no_unknown_keys().map_err(validation)?;
    require_nonzero(cfg.epochs, "epochs").map_err(validation)?;
    require_nonzero(cfg.batch_size, "batch-size").map_err(validation)?;
    require_positive(cfg.lr, "lr").map_err(validation)?;
    require_dataset(&train_dataset, "--train-dataset").map_err(validation)?;
    require_dataset(&test_dataset, "--test-dataset").map_err(validation)?;
    require_file(&predictor, "--predictor").map_err(validation)?;
    require_file(&generator, "--generator").map_err(validation)?;

    r.manifest.write(&out).map_err(runtime)?;
    let outcome = eval::defense(
        &predictor,
        &generator,
        res_blocks,
        &train_dataset,
        &test_dataset,
        &cfg,
        &out,
    )
    .map_err(runtime)?;
    r.manifest.finish(&out).map_err(runtime)?;
    println!(
        "deviation before {:.4} rad, after defense {:.4} rad, clean-retrain control {:.4} rad",
        outcome.before.deviation.mean, outcome.after.deviation.mean, outcome.control.deviation.mean
    );
    Ok(())
}

fn cmd_grad_check(args: GradCheckArgs) -> CliResult {
    let mut r = Resolver::new("grad-check", args.config.as_deref()).map_err(validation)?;
    let seeds = r.value("seeds", args.seeds, 100).map_err(validation)?;
    let tolerance = r
        .value("tolerance", args.tolerance, 1e-3)
        .map_err(validation)?;
    r.no_unknown_keys().map_err(validation)?;
    if seeds == 0 {
        return Err(invalid("--seeds must be >= 1"));
    }
    if !(tolerance.is_finite() && tolerance > 0.0) {
        return Err(invalid("--tolerance must be finite and > 0"));
    }

    let cases = gradient_suite(seeds).map_err(runtime)?;
    let mut worst = 0.0f64;
    for case in &cases {
        println!("{}: {:.3e}", case.name, case.max_rel_err);
        worst = worst.max(case.max_rel_err);
    }
    println!("max relative error {worst:.3e} over {seeds} seeds (tolerance {tolerance:.1e})");
    if worst < tolerance {
        println!("PASS");
        Ok(())
    } else {
        Err(runtime(Error::contract(
            "grad-check",
            format!("max relative error {worst:.3e} exceeds tolerance {tolerance:.1e}"),
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::MANIFEST_FILE;
    use crate::rng::substream;

    fn arg(path: &Path) -> String {
        path.display().to_string()
    }

    #[test]
    fn gen_data_writes_dataset_and_finished_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data");
        let code = run_from([
            "fogbench",
            "gen-data",
            "--count",
            "3",
            "--seed",
            "1",
            "--image-size",
            "32",
            "--out",
            &arg(&out),
        ]);
        assert_eq!(code, 0);
        assert!(out.join("manifest.csv").is_file());
        assert!(out.join("images").join("000002.ppm").is_file());
        let manifest = RunManifest::read(&out.join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.subcommand, "gen-data");
        assert!(manifest.finished.is_some());
        assert_eq!(manifest.get("count"), Some("3"));
        assert_eq!(manifest.get("image-size"), Some("32"));
        assert_eq!(manifest.get("fog-beta"), None);
    }

    #[test]
    fn rerunning_from_a_manifest_reproduces_the_dataset_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("first");
        assert_eq!(
            run_from([
                "fogbench",
                "gen-data",
                "--count",
                "2",
                "--seed",
                "9",
                "--image-size",
                "32",
                "--fog-beta",
                "0.05",
                "--out",
                &arg(&first),
            ]),
            0
        );
        let second = dir.path().join("second");
        assert_eq!(
            run_from([
                "fogbench",
                "gen-data",
                "--config",
                &arg(&first.join(MANIFEST_FILE)),
                "--out",
                &arg(&second),
            ]),
            0
        );
        assert_eq!(
            std::fs::read(first.join("manifest.csv")).unwrap(),
            std::fs::read(second.join("manifest.csv")).unwrap()
        );
        for name in ["000000.ppm", "000001.ppm"] {
            assert_eq!(
                std::fs::read(first.join("images").join(name)).unwrap(),
                std::fs::read(second.join("images").join(name)).unwrap(),
                "{name} differs"
            );
        }
    }

    #[test]
    fn validation_failures_exit_2_before_touching_the_output() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");

        // Missing required flag.
        assert_eq!(
            run_from(["fogbench", "gen-data", "--count", "3", "--out", &arg(&out)]),
            2
        );
        // Out-of-range attack hyperparameter.
        assert_eq!(
            run_from([
                "fogbench",
                "train-attack",
                "--domain-a",
                &arg(&dir.path().join("a")),
                "--domain-b",
                &arg(&dir.path().join("b")),
                "--predictor",
                &arg(&dir.path().join("p.fgb")),
                "--alpha",
                "1.5",
                "--out",
                &arg(&out),
            ]),
            2
        );
        // Missing input dataset.
        assert_eq!(
            run_from([
                "fogbench",
                "eval",
                "--dataset",
                &arg(&dir.path().join("nope")),
                "--predictor",
                &arg(&dir.path().join("p.fgb")),
                "--generator",
                "identity",
                "--out",
                &arg(&out),
            ]),
            2
        );
        // Unknown flag is a clap usage error.
        assert_eq!(run_from(["fogbench", "gen-data", "--frobnicate"]), 2);
        assert!(!out.exists());
    }

    #[test]
    fn config_file_supplies_values_and_flags_override() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("cfg.txt");
        std::fs::write(&cfg, "count=4\nimage-size=32\nseed=5\n").unwrap();
        let out = dir.path().join("data");
        assert_eq!(
            run_from([
                "fogbench",
                "gen-data",
                "--config",
                &arg(&cfg),
                "--count",
                "5",
                "--out",
                &arg(&out),
            ]),
            0
        );
        let manifest = RunManifest::read(&out.join(MANIFEST_FILE)).unwrap();
        assert_eq!(manifest.get("count"), Some("5"));
        assert_eq!(manifest.get("image-size"), Some("32"));
        assert_eq!(manifest.get("seed"), Some("5"));

        // Typos in the config file are rejected.
        std::fs::write(&cfg, "count=4\nseeed=5\n").unwrap();
        assert_eq!(
            run_from([
                "fogbench",
                "gen-data",
                "--config",
                &arg(&cfg),
                "--seed",
                "1",
                "--out",
                &arg(&dir.path().join("x")),
            ]),
            2
        );
        // A manifest from another subcommand is rejected.
        assert_eq!(
            run_from([
                "fogbench",
                "train-steering",
                "--config",
                &arg(&out.join(MANIFEST_FILE)),
                "--dataset",
                &arg(&out),
                "--out",
                &arg(&dir.path().join("y")),
            ]),
            2
        );
    }

    #[test]
    fn eval_with_the_identity_generator_reports_zero_deviation() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        assert_eq!(
            run_from([
                "fogbench",
                "gen-data",
                "--count",
                "4",
                "--seed",
                "3",
                "--image-size",
                "32",
                "--out",
                &arg(&data),
            ]),
            0
        );
        let predictor = dir.path().join("predictor.fgb");
        SteeringPredictor::new(&mut substream(0, "init/predictor"), 32)
            .unwrap()
            .save(&predictor)
            .unwrap();
        let out = dir.path().join("eval");
        assert_eq!(
            run_from([
                "fogbench",
                "eval",
                "--dataset",
                &arg(&data),
                "--predictor",
                &arg(&predictor),
                "--generator",
                "identity",
                "--out",
                &arg(&out),
            ]),
            0
        );
        let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
        assert!(report.contains("deviation,0,0,4"), "{report}");
        assert!(out.join(MANIFEST_FILE).is_file());
    }

    #[test]
    fn grad_check_passes_quickly_on_a_few_seeds() {
        assert_eq!(run_from(["fogbench", "grad-check", "--seeds", "2"]), 0);
    }

    #[test]
    fn help_mentions_study_defaults() {
        // --help exits 0 and the flag docs carry provenance.
        assert_eq!(run_from(["fogbench", "train-attack", "--help"]), 0);
        let cmd = <Cli as clap::CommandFactory>::command();
        let attack = cmd
            .get_subcommands()
            .find(|c| c.get_name() == "train-attack")
            .unwrap();
        let alpha = attack
            .get_arguments()
            .find(|a| a.get_id() == "alpha")
            .unwrap();
        let help = alpha.get_help().unwrap().to_string();
        assert!(help.contains("study default"), "{help}");
    }
}
