//! `boom` command line: train, ablate, verify, export-plots.

mod ablate;
mod plots;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use ablate::{ablation_cells, run_ablation, AblationCell, CellResult};
pub use plots::{aggregate, render_svg, Aggregate};

use crate::error::{BoomError, Result};
use crate::theory_lab::{self, VerifyConfig};
use crate::trainer::{self, RunPaths, TrainConfig, CONFIG_KEYS};

#[derive(Debug, Parser)]
#[command(name = "boom", version, about = "Planner-aligned model-based RL")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one agent and write metrics, timing and a checkpoint.
    Train(TrainArgs),
    /// Run the alignment ablation matrix over shared seeds.
    Ablate(AblateArgs),
    /// Run the bound checks and the KL fitting demo.
    Verify(VerifyArgs),
    /// Aggregate metrics CSVs across seeds into mean/std CSV and SVG charts.
    ExportPlots(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub env: String,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Also write a per-step planner trace to plan_trace.txt.
    #[arg(long)]
    pub plan_trace: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub env: String,
    /// Comma-separated seeds shared by every cell.
    #[arg(long, value_delimiter = ',', required = true)]
    pub seeds: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub cfg: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Multiplier on every asserted bound (0.5 forces violations).
    #[arg(long, default_value_t = 1.0)]
    pub bound_scale: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Metrics CSVs, one per seed.
    #[arg(long = "in", num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Task label used in output file names.
    #[arg(long, default_value = "task")]
    pub task: String,
}

fn split_override(s: &str) -> Result<(String, String)> {
    match s.split_once('=') {
        Some((k, v)) if !k.trim().is_empty() => Ok((k.trim().to_string(), v.trim().to_string())),
        _ => Err(BoomError::Config(format!("override '{s}' is not KEY=VALUE"))),
    }
}

/// Defaults, then the config file, then `--set` overrides.
pub fn build_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    let overrides = args
        .set
        .iter()
        .map(|s| split_override(s))
        .collect::<Result<Vec<_>>>()?;
    cfg.apply_overrides(&overrides)?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let probe = dir.join(".write_probe");
    std::fs::write(&probe, b"")?;
    std::fs::remove_file(&probe)?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<i32> {
    let mut cfg = build_config(&args.cfg)?;
    cfg.set("env", &args.env)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    ensure_dir(&args.out)?;
    std::fs::write(args.out.join("config.txt"), cfg.to_text())?;
    let mut paths = RunPaths::in_dir(&args.out);
    if args.plan_trace {
        paths.plan_trace = Some(args.out.join("plan_trace.txt"));
    }
    let summary = trainer::run(cfg, &paths)?;
    println!(
        "final eval return {:.4} ({} rows) -> {}",
        summary.final_eval_return,
        summary.rows.len(),
        args.out.display()
    );
    Ok(0)
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<i32> {
    let mut base = build_config(&args.cfg)?;
    base.set("env", &args.env)?;
    base.validate()?;
    ensure_dir(&args.out)?;
    let results = run_ablation(&base, &args.seeds, &args.out, |cell, seed| {
        eprintln!("ablate: {} seed {seed}", cell.name());
    })?;
    print!("{}", ablate::summary_text(&results));
    Ok(0)
}

pub fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let cfg = VerifyConfig {
        seed: args.seed,
        bound_scale: args.bound_scale,
        ..VerifyConfig::default()
    };
    let out = theory_lab::run_all(&cfg)?;
    out.write_to_dir(&args.out)?;
    print!("{}", out.summary());
    Ok(if out.failures() == 0 { 0 } else { 1 })
}

pub fn cmd_export_plots(args: &ExportArgs) -> Result<i32> {
    let texts = args
        .inputs
        .iter()
        .map(std::fs::read_to_string)
        .collect::<std::io::Result<Vec<_>>>()?;
    let agg = aggregate(&texts)?;
    ensure_dir(&args.out)?;
    std::fs::write(args.out.join(format!("{}_aggregate.csv", args.task)), agg.to_csv())?;
    for col in plots::PLOTTED_COLUMNS {
        let svg = render_svg(&agg, col, &format!("{} {col}", args.task))?;
        std::fs::write(args.out.join(format!("{}_{col}.svg", args.task)), svg)?;
    }
    println!("{} seeds, {} steps -> {}", agg.num_runs, agg.steps.len(), args.out.display());
    Ok(0)
}

pub fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Verify(a) => cmd_verify(a),
        Command::ExportPlots(a) => cmd_export_plots(a),
    }
}

/// Long options clap defines itself; these are never treated as config keys.
const OWN_FLAGS: [&str; 7] = ["env", "seed", "seeds", "out", "config", "set", "plan-trace"];

/// For `train` and `ablate`, rewrites `--key=value` for any config key into
/// `--set key=value` (dashes in the key read as underscores). Anything else
/// passes through, so unknown flags still reach clap and fail.
fn expand_config_flags(args: Vec<OsString>) -> Vec<OsString> {
    let takes_config = args
        .get(1)
        .is_some_and(|c| c == "train" || c == "ablate");
    if !takes_config {
        return args;
    }
    let mut out = Vec::with_capacity(args.len());
    for arg in args {
        let rewritten = arg.to_str().and_then(|s| {
            let (key, value) = s.strip_prefix("--")?.split_once('=')?;
            let norm = key.replace('-', "_");
            (!OWN_FLAGS.contains(&key) && CONFIG_KEYS.contains(&norm.as_str()))
                .then(|| format!("{norm}={value}"))
        });
        match rewritten {
            Some(kv) => {
                out.push(OsString::from("--set"));
                out.push(OsString::from(kv));
            }
            None => out.push(arg),
        }
    }
    out
}

/// Parses `args` (including the program name) and runs the command.
/// Usage errors print clap's message and return its exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = expand_config_flags(args.into_iter().map(Into::into).collect());
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_split_on_first_equals() {
        assert_eq!(
            split_override(" lr = 1e-3 ").unwrap(),
            ("lr".to_string(), "1e-3".to_string())
        );
        assert!(split_override("novalue").is_err());
        assert!(split_override("=3").is_err());
    }

    #[test]
    fn config_layers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.txt");
        std::fs::write(&p, "seed=4\nbatch_size=16\n").unwrap();
        let cfg = build_config(&ConfigArgs {
            config: Some(p),
            set: vec!["batch_size=8".into()],
        })
        .unwrap();
        assert_eq!((cfg.seed, cfg.batch_size), (4, 8));
        assert!(build_config(&ConfigArgs {
            config: None,
            set: vec!["no_such_key=1".into()],
        })
        .is_err());
    }

    #[test]
    fn config_key_flags_become_overrides() {
        let args = ["boom", "train", "--batch-size=8", "--lr=0.1", "--seed=3", "--bogus=1"]
            .map(OsString::from)
            .to_vec();
        let out: Vec<String> = expand_config_flags(args)
            .into_iter()
            .map(|a| a.into_string().unwrap())
            .collect();
        assert_eq!(
            out,
            ["boom", "train", "--set", "batch_size=8", "--set", "lr=0.1", "--seed=3", "--bogus=1"]
        );
    }

    #[test]
    fn usage_errors() {
        assert_ne!(main_with_args(["boom", "train", "--out", "/tmp/x"]), 0);
        assert_ne!(main_with_args(["boom", "verify", "--out", "/tmp/x", "--bogus"]), 0);
        assert_ne!(main_with_args(["boom", "export-plots", "--out", "/tmp/x"]), 0);
        assert_ne!(main_with_args(["boom"]), 0);
    }
}
