use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use asc::model::Method;
use asc::orchestrator::{self, DEFAULT_ORACLE_GRID};
use asc::pipeline::Pipeline;
use asc::settings::Settings;
use asc::{io, Error, Result};

#[derive(Parser)]
#[command(
    name = "asc",
    version,
    about = "Merge consistent facts from many sampled LLM answers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample m answers per question into the cache
    Generate(Common),
    /// Run one method over cached samples and write a results file
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "asc")]
        method: Method,
    },
    /// ASC at several thresholds; writes a CSV of theta vs metrics
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated thresholds, e.g. 1,2,3
        #[arg(long, value_delimiter = ',', required = true)]
        thetas: Vec<usize>,
    },
    /// Cluster entropy curves and stagnation points; --out is a directory
    Entropy(Common),
    /// Merge and single-response ceilings at several sample counts
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        n_values: Vec<usize>,
    },
    /// Score a results file against the dataset
    Eval {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Report JSONL destination
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    dataset: PathBuf,
    /// Flat key = value settings file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Only process questions of this mode (long, list or all)
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    mock_fixtures: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    chat_model: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
}

impl Common {
    fn settings(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let flags: [(&str, Option<String>); 15] = [
            ("mode", self.mode.clone()),
            ("m", self.m.map(|v| v.to_string())),
            ("theta", self.theta.map(|v| v.to_string())),
            ("tau", self.tau.map(|v| v.to_string())),
            ("d", self.d.map(|v| v.to_string())),
            ("temperature", self.temperature.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("jobs", self.jobs.map(|v| v.to_string())),
            ("cache_dir", path(&self.cache_dir)),
            ("mock_fixtures", path(&self.mock_fixtures)),
            ("base_url", self.base_url.clone()),
            ("chat_model", self.chat_model.clone()),
            ("embed_model", self.embed_model.clone()),
            ("window", self.window.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                s.set(key, &v)?;
            }
        }
        s.finish()
    }

    fn pipeline(&self) -> Result<Pipeline> {
        Pipeline::from_settings(self.settings()?)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn emit(path: &Path, content: &str) -> Result<()> {
    io::write_text(path, content)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(common) => {
            let pipeline = common.pipeline()?;
            let summary = orchestrator::cmd_generate(&pipeline, &common.dataset)?;
            println!(
                "{} questions, {} new samples fetched, {} failed",
                summary.questions,
                summary.fetched,
                summary.failed.len()
            );
        }
        Command::Run { common, method } => {
            let pipeline = common.pipeline()?;
            let answers = orchestrator::cmd_run(&pipeline, method, &common.dataset)?;
            let out = common.out_or(&format!("results_{method}.jsonl"));
            orchestrator::write_results(&out, &answers)?;
            eprintln!("wrote {} answers to {}", answers.len(), out.display());
        }
        Command::Sweep { common, thetas } => {
            let pipeline = common.pipeline()?;
            let rows = orchestrator::cmd_sweep(&pipeline, &common.dataset, &thetas)?;
            let csv = orchestrator::sweep_csv(&rows);
            print!("{csv}");
            emit(&common.out_or("sweep.csv"), &csv)?;
        }
        Command::Entropy(common) => {
            let pipeline = common.pipeline()?;
            let report = orchestrator::cmd_entropy(&pipeline, &common.dataset)?;
            let dir = common.out_or("entropy");
            orchestrator::write_entropy(&dir, &report)?;
            println!(
                "{} questions, {:.1}% stagnated before m; curves in {}",
                report.curves.len(),
                100.0 * report.stagnated_fraction(),
                dir.display()
            );
        }
        Command::Oracle { common, n_values } => {
            let pipeline = common.pipeline()?;
            let grid: Vec<usize> = if n_values.is_empty() {
                DEFAULT_ORACLE_GRID.to_vec()
            } else {
                n_values
            };
            let rows = orchestrator::cmd_oracle(&pipeline, &common.dataset, &grid)?;
            let csv = orchestrator::oracle_csv(&rows);
            print!("{csv}");
            emit(&common.out_or("oracle.csv"), &csv)?;
        }
        Command::Eval { results, dataset, out } => {
            let evaluation = orchestrator::cmd_eval(&results, &dataset)?;
            print!("{}", evaluation.table());
            if let Some(out) = out {
                emit(&out, &evaluation.to_jsonl()?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::IncompleteCache { .. } = e {
                eprintln!("hint: run `asc generate` with the same dataset and settings");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
