//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors. Only machine-readable output goes to stdout.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adapter::{grad_check, GRAD_CHECK_FLOOR};
use crate::error::{Result, TaeaError};
use crate::featurestore::{load_manifest, synth_generate, ShiftKind, ShiftSpec, SynthSpec};
use crate::pipeline::{read_report, run_stream, sweep, sweep_csv, write_report, StreamInputs, SweepParam, TtaConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

/// Largest gradient-check error accepted by `gradcheck`.
pub const GRAD_CHECK_TOL: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "taea", version, about = "Streaming test-time adaptation over precomputed embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the adaptation stream over a dataset and write a report.
    Run(RunArgs),
    /// Generate a synthetic dataset with a controlled shift.
    Synth(SynthArgs),
    /// Compare analytic adapter gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Run once per value of one hyperparameter and print a CSV.
    Sweep(SweepArgs),
    /// Print a JSON summary of a manifest or report.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct TtaArgs {
    /// Adapter logit weight.
    #[arg(long, default_value_t = 0.6)]
    pub gamma: f32,
    /// Fraction of the stream collected before training.
    #[arg(long, default_value_t = 0.25)]
    pub lam: f64,
    /// Adapter learning rate.
    #[arg(long, default_value_t = 0.001)]
    pub lr: f32,
    /// Training epochs over the support set.
    #[arg(long, default_value_t = 3)]
    pub epochs: usize,
    /// Minibatch size.
    #[arg(long, default_value_t = 3)]
    pub batch: usize,
    /// Negative cache.
    #[arg(long, value_enum, default_value_t = Toggle::On)]
    pub neg_cache: Toggle,
    /// Seed for all randomness.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Re-adapt text features for every phase-2 sample.
    #[arg(long)]
    pub per_sample: bool,
}

impl TtaArgs {
    pub fn to_config(&self) -> TtaConfig {
        TtaConfig {
            lambda_frac: self.lam,
            gamma: self.gamma,
            lr: self.lr,
            epochs: self.epochs,
            batch: self.batch,
            use_neg_cache: self.neg_cache == Toggle::On,
            per_sample_adaptation: self.per_sample,
            seed: self.seed,
            ..TtaConfig::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Dataset manifest (JSON).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report path. The report is printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub tta: TtaArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    /// Per-coordinate standard deviation around each class prototype.
    #[arg(long, default_value_t = 0.25)]
    pub sigma: f32,
    /// Rotation angle in radians.
    #[arg(long, default_value_t = 0.0)]
    pub shift_angle: f32,
    /// Mean-drift scale.
    #[arg(long, default_value_t = 0.0)]
    pub drift: f32,
    /// Additive noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

impl SynthArgs {
    pub fn to_spec(&self) -> SynthSpec {
        let active = [self.shift_angle, self.drift, self.noise].map(|x| x != 0.0);
        let kind = match active {
            [false, false, false] => ShiftKind::None,
            [true, false, false] => ShiftKind::Rotation,
            [false, true, false] => ShiftKind::MeanDrift,
            [false, false, true] => ShiftKind::Noise,
            _ => ShiftKind::Composite,
        };
        SynthSpec {
            n_classes: self.classes,
            dim: self.dim,
            n_samples: self.samples,
            intra_class_sigma: self.sigma,
            shift: ShiftSpec {
                kind,
                angle_rad: self.shift_angle,
                drift_scale: self.drift,
                noise_sigma: self.noise,
                seed: self.seed,
            },
            seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    /// Support-set size.
    #[arg(long, default_value_t = 3)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// One of gamma, lam, lr, epochs.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub values: Vec<f64>,
    /// CSV path. The CSV is printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub tta: TtaArgs,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct InspectArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Serialize)]
struct ManifestSummary<'a> {
    dataset_name: &'a str,
    dim: usize,
    n_classes: usize,
    n_samples: usize,
    n_labeled: usize,
}

#[derive(Serialize)]
struct GradcheckSummary {
    max_rel_err: f64,
    tolerance: f64,
    floor: f64,
    pass: bool,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    EXIT_OK
                }
                _ => {
                    eprint!("{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    let mut stdout = std::io::stdout().lock();
    match execute(&cli.command, &mut stdout) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_DATA
        }
    }
}

pub fn main() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    dispatch(std::env::args_os())
}

fn execute(command: &Command, out: &mut impl Write) -> Result<i32> {
    let emit = |out: &mut dyn Write, text: &str| {
        writeln!(out, "{text}").map_err(|e| TaeaError::io("<stdout>", e))
    };
    match command {
        Command::Run(args) => {
            let config = args.tta.to_config();
            config.validate()?;
            let manifest = load_manifest(&args.manifest)?;
            let report = run_stream(&manifest, &config)?;
            match &args.report {
                Some(path) => {
                    write_report(&report, path)?;
                    emit(out, &path.display().to_string())?;
                }
                None => emit(out, &report.to_json()?)?,
            }
        }
        Command::Synth(args) => {
            let path = synth_generate(&args.to_spec(), &args.out)?;
            emit(out, &path.display().to_string())?;
        }
        Command::Gradcheck(args) => {
            let err = grad_check(args.classes, args.dim, args.samples, args.seed, args.eps)?;
            let pass = err < GRAD_CHECK_TOL;
            let summary = GradcheckSummary {
                max_rel_err: err,
                tolerance: GRAD_CHECK_TOL,
                floor: GRAD_CHECK_FLOOR,
                pass,
            };
            emit(out, &to_json(&summary)?)?;
            if !pass {
                return Ok(EXIT_DATA);
            }
        }
        Command::Sweep(args) => {
            let param: SweepParam = args.param.parse()?;
            let base = args.tta.to_config();
            base.validate()?;
            let manifest = load_manifest(&args.manifest)?;
            let inputs = StreamInputs::load(&manifest)?;
            let csv = sweep_csv(&sweep(&inputs, &base, param, &args.values)?);
            match &args.out {
                Some(path) => {
                    fs::write(path, &csv).map_err(|e| TaeaError::io(path, e))?;
                    emit(out, &path.display().to_string())?;
                }
                None => out.write_all(csv.as_bytes()).map_err(|e| TaeaError::io("<stdout>", e))?,
            }
        }
        Command::Inspect(args) => {
            if let Some(path) = &args.manifest {
                let m = load_manifest(path)?;
                let labels = m.load_labels()?;
                let summary = ManifestSummary {
                    dataset_name: &m.dataset_name,
                    dim: m.dim,
                    n_classes: m.n_classes(),
                    n_samples: m.n_samples,
                    n_labeled: (0..labels.len()).filter(|&i| labels.get(i).is_some()).count(),
                };
                emit(out, &to_json(&summary)?)?;
            } else if let Some(path) = &args.report {
                emit(out, &read_report(path)?.to_json()?)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn to_json(value: &impl Serialize) -> Result<String> {
    serde_json::to_string(value).map_err(|e| TaeaError::Numeric(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn defaults_match_config() {
        let cli = Cli::try_parse_from(["taea", "run", "--manifest", "m.json"]).unwrap();
        let Command::Run(args) = cli.command else { panic!() };
        assert_eq!(args.tta.to_config(), TtaConfig::default());
    }

    #[test]
    fn shift_kind_follows_flags() {
        let parse = |extra: &[&str]| {
            let mut argv = vec!["taea", "synth", "--out", "d"];
            argv.extend_from_slice(extra);
            let Command::Synth(args) = Cli::try_parse_from(argv).unwrap().command else { panic!() };
            args.to_spec().shift.kind
        };
        assert_eq!(parse(&[]), ShiftKind::None);
        assert_eq!(parse(&["--shift-angle", "0.5"]), ShiftKind::Rotation);
        assert_eq!(parse(&["--noise", "0.1"]), ShiftKind::Noise);
        assert_eq!(parse(&["--drift", "0.1", "--noise", "0.1"]), ShiftKind::Composite);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(dispatch(["taea", "run"]), EXIT_USAGE);
        assert_eq!(dispatch(["taea", "run", "--manifest", "m", "--bogus"]), EXIT_USAGE);
        assert_eq!(dispatch(["taea", "inspect"]), EXIT_USAGE);
    }

    #[test]
    fn missing_manifest_is_data_error() {
        assert_eq!(dispatch(["taea", "run", "--manifest", "/nonexistent/m.json"]), EXIT_DATA);
    }
}
