//! `qsn` — drive the L96 closure pipeline from the command line.
//!
//! Stages share one configuration (a JSON file or a named recipe, with
//! `--set key=value` overrides) and exchange artifacts through files:
//!
//! ```text
//!   qsn generate --recipe unimodal-lag2 --out runs/uni
//!   qsn train    --recipe unimodal-lag2 --out runs/uni
//!   qsn simulate --recipe unimodal-lag2 --out runs/uni
//!   qsn validate --recipe unimodal-lag2 --out runs/uni
//! ```
//!
//! Exit codes: 0 success / validation pass, 1 validation fail, 2 usage or
//! configuration error, 3 numeric failure. `QSN_LOG=quiet|info|debug`
//! controls stderr verbosity.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use qsn_core::artifacts::read_trajectory_csv;
use qsn_core::experiment::{
    self, generate_to_dir, load_trained, recipe, simulate_to_dir, train_to_dir, validate_to_dir,
    ExperimentConfig, RECIPE_NAMES,
};

#[derive(Parser)]
#[command(name = "qsn", version, about = "Stochastic subgrid closure pipeline for the two-layer Lorenz 96 system")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the full two-layer system and write the reference trajectory.
    Generate(StageArgs),
    /// Fit preprocessing on the training half and train the network.
    Train(TrainArgs),
    /// Run the reduced model with the trained surrogate.
    Simulate(SimulateArgs),
    /// Compare long-run statistics of a reduced run against the reference.
    Validate(ValidateArgs),
    /// List built-in recipes, or print one as JSON.
    Recipes(RecipesArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (JSON).
    #[arg(long, value_name = "FILE", conflicts_with = "recipe")]
    config: Option<PathBuf>,
    /// Built-in recipe name instead of a file.
    #[arg(long, value_name = "NAME")]
    recipe: Option<String>,
    /// Dotted-path overrides, e.g. --set training.iterations=500
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Reference trajectory CSV (default: <out>/trajectory.csv).
    #[arg(long, value_name = "FILE")]
    trajectory: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Reference trajectory CSV for the warm start
    /// (default: <out>/trajectory.csv).
    #[arg(long, value_name = "FILE")]
    trajectory: Option<PathBuf>,
    /// Directory holding network.json / scaler.json / bins.json
    /// (default: <out>).
    #[arg(long, value_name = "DIR")]
    artifacts: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Reference trajectory CSV (default: <out>/trajectory.csv).
    #[arg(long, value_name = "FILE")]
    reference: Option<PathBuf>,
    /// Reduced trajectory CSV (default: <out>/reduced_000.csv).
    #[arg(long, value_name = "FILE")]
    reduced: Option<PathBuf>,
}

#[derive(Args)]
struct RecipesArgs {
    /// Print this recipe's configuration as JSON.
    #[arg(long, value_name = "NAME")]
    show: Option<String>,
}

fn log_level() -> u8 {
    match std::env::var("QSN_LOG").as_deref() {
        Ok("quiet") | Ok("0") => 0,
        Ok("debug") | Ok("2") => 2,
        _ => 1,
    }
}

macro_rules! info {
    ($($arg:tt)*) => {
        if log_level() >= 1 {
            eprintln!("[qsn] {}", format!($($arg)*));
        }
    };
}

fn load_config(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut value: serde_json::Value = match (&args.config, &args.recipe) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, Some(name)) => serde_json::to_value(recipe(name)?)?,
        (None, None) => {
            return Err(anyhow!(
                "either --config <file> or --recipe <name> is required"
            ))
        }
        (Some(_), Some(_)) => unreachable!("clap enforces the conflict"),
    };
    for kv in &args.set {
        let (key, raw) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects key=value, got {kv:?}"))?;
        let parsed: serde_json::Value =
            serde_json::from_str(raw).unwrap_or(serde_json::Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)
            .with_context(|| format!("applying override {kv:?}"))?;
    }
    let cfg: ExperimentConfig =
        serde_json::from_value(value).context("configuration does not match the schema")?;
    cfg.validate()?;
    Ok(cfg)
}

fn set_path(root: &mut serde_json::Value, path: &str, new: serde_json::Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        let obj = cursor
            .as_object_mut()
            .ok_or_else(|| anyhow!("{} is not an object", parts[..i].join(".")))?;
        if last {
            obj.insert(part.to_string(), new);
            return Ok(());
        }
        cursor = obj
            .get_mut(*part)
            .ok_or_else(|| anyhow!("unknown configuration key {:?}", parts[..=i].join(".")))?;
    }
    Ok(())
}

fn default_path(dir: &Path, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| dir.join(name))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => {
            let cfg = load_config(&args.config)?;
            info!("generating reference trajectory for {:?}", cfg.name);
            let path = generate_to_dir(&cfg, &args.out)?;
            info!("wrote {}", path.display());
            println!("{}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(args) => {
            let cfg = load_config(&args.stage.config)?;
            let traj = default_path(
                &args.stage.out,
                &args.trajectory,
                experiment::TRAJECTORY_FILE,
            );
            info!("training {:?} on {}", cfg.name, traj.display());
            let summary = train_to_dir(&cfg, &traj, &args.stage.out)?;
            info!(
                "final loss {:.4}, mean misclassification {:.2}%",
                summary.final_loss,
                100.0 * summary.mean_misclassification
            );
            println!(
                "mean_misclassification={:.6} final_loss={:.6}",
                summary.mean_misclassification, summary.final_loss
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Simulate(args) => {
            let cfg = load_config(&args.stage.config)?;
            let artifacts_dir = args.artifacts.clone().unwrap_or_else(|| args.stage.out.clone());
            let traj_path = default_path(
                &args.stage.out,
                &args.trajectory,
                experiment::TRAJECTORY_FILE,
            );
            let trained = load_trained(&cfg, &artifacts_dir)?;
            let reference = read_trajectory_csv(&traj_path)?;
            info!(
                "simulating {} reduced member(s) of {:?}",
                cfg.simulate.ensemble, cfg.name
            );
            let paths = simulate_to_dir(&cfg, &trained, &reference, &args.stage.out)?;
            for p in &paths {
                info!("wrote {}", p.display());
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Validate(args) => {
            let cfg = load_config(&args.stage.config)?;
            let reference = read_trajectory_csv(&default_path(
                &args.stage.out,
                &args.reference,
                experiment::TRAJECTORY_FILE,
            ))?;
            let reduced = read_trajectory_csv(&default_path(
                &args.stage.out,
                &args.reduced,
                &experiment::reduced_file_name(0),
            ))?;
            let summary = validate_to_dir(&cfg, &reference, &reduced, &args.stage.out)?;
            println!(
                "hellinger_pdf_x={:.4} (max {:.4})",
                summary.hellinger_pdf_x, summary.hellinger_max
            );
            println!(
                "rel_l2_acf_x={:.4} rel_l2_ccf_x={:.4} (max {:.4})",
                summary.rel_l2_acf_x, summary.rel_l2_ccf_x, summary.rel_l2_max
            );
            println!("pass={}", summary.pass);
            if summary.pass {
                Ok(ExitCode::SUCCESS)
            } else {
                info!("validation thresholds not met");
                Ok(ExitCode::from(1))
            }
        }
        Command::Recipes(args) => {
            match args.show {
                Some(name) => {
                    let cfg = recipe(&name)?;
                    println!("{}", serde_json::to_string_pretty(&cfg)?);
                }
                None => {
                    for name in RECIPE_NAMES {
                        println!("{name}");
                    }
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn exit_code_for(err: &anyhow::Error) -> ExitCode {
    use qsn_core::Error as E;
    match err.downcast_ref::<E>() {
        Some(
            E::Config(_)
            | E::Format(_)
            | E::Io(_)
            | E::Json(_)
            | E::ArtifactMismatch(_)
            | E::InsufficientData(_),
        ) => ExitCode::from(2),
        Some(
            E::BlowUp { .. }
            | E::Numeric(_)
            | E::Diverged { .. }
            | E::CorruptState(_)
            | E::DegenerateFeature { .. }
            | E::GridMismatch(_),
        ) => ExitCode::from(3),
        None => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code_for(&err)
        }
    }
}
