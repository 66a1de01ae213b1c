mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgGroup, CommandFactory, Parser, Subcommand};

use mcsp_core::data::Domain;
use mcsp_core::error::{Error, Result};

use crate::commands::{DistillArgs, FinetuneArgs};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "mcsp",
    version,
    about = "Multi-modal cross-domain self-supervised pretraining for fMRI/EEG"
)]
struct Cli {
    /// Print per-domain sub-model parameter counts for the config and exit.
    #[arg(long, global = true)]
    param_count: bool,

    /// Run configuration (TOML); defaults apply to anything left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-modal cohort as a raw dataset.
    SynthGen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build per-domain inputs (graphs, unified series, spectra) from a raw dataset.
    BuildData {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Self-supervised pretraining; writes a checkpoint.
    Pretrain {
        #[arg(long, env = "MCSP_DATA_DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validated fine-tuning on a labelled task.
    #[command(group(ArgGroup::new("start").required(true).args(["init", "scratch"])))]
    Finetune {
        #[arg(long, env = "MCSP_DATA_DIR")]
        data: Option<PathBuf>,
        /// Pretrained checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start from randomly initialised weights.
        #[arg(long)]
        scratch: bool,
        #[arg(long)]
        task: String,
        /// Key-value metrics file to write.
        #[arg(long)]
        report: PathBuf,
        /// Also fit on every labelled subject and save the resulting checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Distil a three-domain teacher into a single-domain student.
    Distill {
        #[arg(long, env = "MCSP_DATA_DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student_domain: Domain,
        #[arg(long)]
        task: String,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the metric row of a saved report.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
    },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Option<RunConfig>> {
    let Some(p) = path else { return Ok(None) };
    let mut cfg = RunConfig::load(p)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(Some(cfg))
}

fn effective(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = load_config(path, None)?.unwrap_or_default();
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn data_dir(flag: Option<PathBuf>, cfg: Option<&RunConfig>) -> Result<PathBuf> {
    flag.or_else(|| cfg.and_then(|c| c.paths.data.clone()))
        .ok_or_else(|| {
            Error::validation("no dataset: pass --data, set MCSP_DATA_DIR or paths.data")
        })
}

fn run(cli: Cli) -> Result<String> {
    let cfg_path = cli.config.as_deref();
    if cli.param_count {
        return commands::param_count(&effective(cfg_path, cli.seed)?);
    }
    let Some(command) = cli.command else {
        unreachable!("handled before dispatch")
    };
    match command {
        Command::SynthGen { spec, out } => commands::synth_gen(&spec, &out, cli.seed),
        Command::BuildData { input, out } => {
            commands::build_data(&input, &out, &effective(cfg_path, cli.seed)?)
        }
        Command::Pretrain { data, out } => {
            let cfg = effective(cfg_path, cli.seed)?;
            commands::pretrain_cmd(&data_dir(data, Some(&cfg))?, &out, &cfg)
        }
        Command::Finetune {
            data,
            init,
            scratch: _,
            task,
            report,
            out,
        } => {
            let explicit = load_config(cfg_path, cli.seed)?;
            let dir = data_dir(data, explicit.as_ref())?;
            let args = FinetuneArgs {
                data_dir: &dir,
                init: init.as_deref(),
                task: &task,
                report: &report,
                out: out.as_deref(),
            };
            commands::finetune_cmd(&args, explicit, cli.seed)
        }
        Command::Distill {
            data,
            teacher,
            student_domain,
            task,
            report,
        } => {
            let explicit = load_config(cfg_path, cli.seed)?;
            let dir = data_dir(data, explicit.as_ref())?;
            let args = DistillArgs {
                data_dir: &dir,
                teacher: &teacher,
                student_domain,
                task: &task,
                report: &report,
            };
            commands::distill_cmd(&args, explicit, cli.seed)
        }
        Command::Evaluate { report } => commands::evaluate_cmd(&report),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.command.is_none() && !cli.param_count {
        let _ = Cli::command().print_help();
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(text) => {
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("mcsp: {}: {e}", e.category());
            ExitCode::FAILURE
        }
    }
}
