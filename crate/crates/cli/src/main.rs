use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memrw_cli::{CliError, Result, SEED_ENV};

#[derive(Parser)]
#[command(name = "memrw", version, about = "Personalized query rewriting from ASR n-bests and user memories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Run configuration (TOML). Defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set pointer.nbest_size=1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<memrw_core::RunConfig> {
        let seed = std::env::var(SEED_ENV).ok();
        memrw_cli::load_config(self.config.as_deref(), &self.overrides, seed.as_deref())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus and its user split.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write a checkpoint plus its loss trace.
    Train {
        /// retrieval, pointer or pointer_no_memory
        #[arg(long)]
        model: String,
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue training from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score the test split; writes metrics.json, prcurve.csv and runtime.json.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rewrite one n-best against one user memory.
    Rewrite {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON n-best: {"hyps": [[..]], "scores": [..]} or a list of strings.
        #[arg(long)]
        nbest: PathBuf,
        /// JSON user memory.
        #[arg(long)]
        memory: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

fn read(path: &PathBuf) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout().lock();
    match cli.command {
        Command::GenData { config, out } => {
            let cfg = config.load()?;
            let report = memrw_cli::gen_data(&cfg, &out)?;
            memrw_cli::write_line(stdout, &report)
        }
        Command::Train {
            model,
            data,
            config,
            out,
            resume,
        } => {
            let kind = memrw_cli::parse_kind(&model)?;
            let cfg = config.load()?;
            let data = memrw_cli::load_data(&data)?;
            let summary = memrw_cli::train(kind, &data, &cfg, &out, resume.as_deref())?;
            memrw_cli::write_line(stdout, &summary)
        }
        Command::Eval { checkpoint, data, out } => {
            let data = memrw_cli::load_data(&data)?;
            let report = memrw_cli::eval(&checkpoint, &data, &out)?;
            memrw_cli::write_line(stdout, &report)
        }
        Command::Rewrite {
            checkpoint,
            nbest,
            memory,
            threshold,
        } => {
            let nbest = memrw_cli::parse_nbest(&read(&nbest)?)?;
            let memory = memrw_cli::parse_memory(&read(&memory)?)?;
            let model = memrw_cli::load_model(&checkpoint)?;
            let decision = memrw_cli::rewrite(&model, &nbest, &memory, threshold)?;
            memrw_cli::write_line(stdout, &decision)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or_default().trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Input(first).line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
