//! Argument parsing and dispatch for the `apf` binary.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::commands::{self, InspectArgs, PreprocessArgs};
use crate::config::{self, FileConfig, Overrides, RunConfig};
use crate::error::{AppError, AppResult};

#[derive(Debug, Parser)]
#[command(name = "apf", version, about = "Adapter fine-tuning of a frozen transformer on point clouds")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Serial, bit-reproducible execution (the only mode implemented).
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[arg(long, global = true, value_enum)]
    pub profile: Option<Profile>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Profile {
    Tiny,
    Vitb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Embedding {
    Pointnet,
    Rpn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    Full,
    NoSequencer,
    NoAdapter,
    Rpn,
}

#[derive(Clone, Debug, Default, Args)]
pub struct ModelArgs {
    #[arg(long, value_enum)]
    pub embedding: Option<Embedding>,
    #[arg(long, value_enum)]
    pub sequencer: Option<Switch>,
    #[arg(long, value_enum)]
    pub adapter: Option<Switch>,
    #[arg(long, value_enum)]
    pub ablation: Option<Ablation>,
    #[arg(long)]
    pub lr_max: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize (and optionally subsample) manifest samples into APFP files.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        /// Base directory for relative manifest paths.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Farthest-point subsample size.
        #[arg(long)]
        points: Option<usize>,
        /// Process every sample even after failures.
        #[arg(long)]
        keep_going: bool,
    },
    /// Train adapters, embedding and head; evaluate; save `model.apfw`.
    Train {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Evaluate a checkpoint, or the initial model without one.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Repeated N-way K-shot episodes.
    Fewshot {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Print a checkpoint's tensor table and parameter totals.
    Inspect {
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        model: ModelArgs,
    },
}

fn overrides(cli: &Cli, m: &ModelArgs) -> Overrides {
    Overrides {
        seed: cli.seed,
        profile: cli.profile.map(|p| match p {
            Profile::Tiny => "tiny".into(),
            Profile::Vitb => "vitb".into(),
        }),
        deterministic: cli.deterministic,
        embedding: m.embedding.map(|e| match e {
            Embedding::Pointnet => "pointnet".into(),
            Embedding::Rpn => "rpn".into(),
        }),
        sequencer: m.sequencer.map(|s| s == Switch::On),
        adapters: m.adapter.map(|s| s == Switch::On),
        ablation: m.ablation.map(|a| {
            match a {
                Ablation::Full => "full",
                Ablation::NoSequencer => "no-sequencer",
                Ablation::NoAdapter => "no-adapter",
                Ablation::Rpn => "rpn",
            }
            .into()
        }),
        lr_max: m.lr_max,
        epochs: m.epochs,
    }
}

fn resolve(cli: &Cli, m: &ModelArgs) -> AppResult<RunConfig> {
    let file = match &cli.config {
        Some(p) => config::load_config(p)?,
        None => FileConfig::default(),
    };
    config::resolve(&file, &overrides(cli, m))
}

fn out_dir(cli: &Cli) -> AppResult<PathBuf> {
    cli.out.clone().ok_or_else(|| AppError::Config("--out is required".into()))
}

/// Runs a parsed command and returns the process exit code.
pub fn execute(cli: &Cli) -> AppResult<u8> {
    match &cli.command {
        Command::Preprocess { manifest, input, points, keep_going } => {
            if cli.config.is_some() || cli.profile.is_some() {
                return Err(AppError::Config("preprocess takes no model configuration".into()));
            }
            let args = PreprocessArgs { manifest: manifest.clone(), input: input.clone(), out: out_dir(cli)?, points: *points, keep_going: *keep_going };
            let report = commands::cmd_preprocess(&args)?;
            println!("wrote {} samples to {}", report.written, args.out.display());
            for (p, reason) in &report.failures {
                eprintln!("failed: {}: {reason}", p.display());
            }
            Ok(if report.failures.is_empty() { 0 } else { 2 })
        }
        Command::Train { model } => {
            let run = resolve(cli, model)?;
            let out = out_dir(cli)?;
            commands::cmd_train(&run, &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
            Ok(0)
        }
        Command::Eval { checkpoint, model } => {
            let run = resolve(cli, model)?;
            let out = out_dir(cli)?;
            commands::cmd_eval(&run, checkpoint.as_deref(), &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
            Ok(0)
        }
        Command::Fewshot { model } => {
            let run = resolve(cli, model)?;
            let out = out_dir(cli)?;
            commands::cmd_fewshot(&run, &out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
            Ok(0)
        }
        Command::Inspect { checkpoint, model } => {
            let configured = cli.config.is_some() || cli.profile.is_some();
            let run = if configured { Some(resolve(cli, model)?) } else { None };
            let report = commands::cmd_inspect(&InspectArgs { checkpoint: checkpoint.clone() }, run.as_ref())?;
            print!("{}", report.render());
            Ok(0)
        }
    }
}

/// Parses `args` (including the program name) and runs; errors are printed to stderr.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("apf: {e}");
            e.exit_code()
        }
    }
}
