use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cyclexplain_cli::commands;
use cyclexplain_cli::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "cyclexplain", version, about = "Counterfactual relevance maps for binary image classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set training.batch_size=16`.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        RunConfig::load(self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the frozen classifier and report test-split metrics.
    TrainClassifier(ConfigArgs),
    /// Train both generators and discriminators against a trained classifier.
    TrainExplainer(ConfigArgs),
    /// Write overlays, raw relevance maps and probabilities for input images.
    Explain {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Analyse rater-study responses.
    StudyReport {
        #[arg(long)]
        responses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Randomized questionnaire layouts.
    MakePlan {
        #[arg(long)]
        items: usize,
        /// Comma-separated method names.
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        #[arg(long, default_value_t = 2)]
        variants: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the synthetic lesion dataset as PNGs with a manifest.
    GenSynthetic {
        #[arg(long, default_value_t = 400)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write synthetic rater responses shaped like a small study.
    GenResponses {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::TrainClassifier(c) => commands::train_classifier_cmd(&c.resolve()?),
        Command::TrainExplainer(c) => commands::train_explainer_cmd(&c.resolve()?),
        Command::Explain { config, inputs } => commands::explain_cmd(&config.resolve()?, &inputs),
        Command::StudyReport { responses, out } => commands::study_report_cmd(&responses, &out),
        Command::MakePlan { items, methods, variants, seed, out } => {
            commands::make_plan_cmd(items, &methods, variants, seed, &out)
        }
        Command::GenSynthetic { count, size, seed, out } => commands::gen_synthetic_cmd(count, size, seed, &out),
        Command::GenResponses { seed, noise, out } => commands::gen_responses_cmd(seed, noise, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    cyclexplain::alloc::retain_freed_memory();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
