use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_efficiency_curve, cmd_eval, cmd_forecast, cmd_synth, cmd_train, load_data};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "deepfactor", version, about = "Deep factor models with random effects")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for parallel training and forecasting.
    #[arg(long, global = true, env = "DEEPFACTOR_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with ground-truth sidecar files.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Fit a model and write a checkpoint plus a training report.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Report path; defaults to the checkpoint path with a
        /// `.report.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
    },
    /// Sample forecasts for every series in the data file.
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a forecast file against actual observations.
    Eval {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        actuals: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// MAPE and training time against training-set size for the factor
    /// structure and the RNN forecaster.
    Efficiency {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Comma-separated training window lengths.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn configure_threads(threads: Option<usize>) -> CliResult<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // A pool built earlier in the same process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

fn with_data(mut config: RunConfig, data: Option<PathBuf>) -> RunConfig {
    if data.is_some() {
        config.data.path = data;
    }
    config
}

/// Execute a parsed command line. Returns the text for standard output.
pub fn run(cli: Cli) -> CliResult<String> {
    configure_threads(cli.global.threads)?;
    let mut config = RunConfig::load_or_default(cli.global.config.as_deref())?;
    if let Some(seed) = cli.global.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Synth { out_dir } => {
            config.validate()?;
            let s = cmd_synth(&config, &out_dir)?;
            Ok(format!(
                "synthesized {}: N={} T={} -> {}",
                s.kind,
                s.num_series,
                s.length,
                out_dir.display()
            ))
        }
        Command::Train {
            data,
            out,
            report,
            resume,
            epochs,
            learning_rate,
        } => {
            let mut config = with_data(config, data);
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            if let Some(lr) = learning_rate {
                config.train.learning_rate = lr;
            }
            config.validate()?;
            let dataset = load_data(&config)?;
            let report_path = report.unwrap_or_else(|| out.with_extension("report.json"));
            let r = cmd_train(&config, &dataset, &out, &report_path, resume.as_deref())?;
            let last = r.losses.last().map_or("n/a".to_string(), |l| format!("{l:.6}"));
            Ok(format!(
                "trained {} epochs (final loss {last}) -> {}",
                r.epochs_run,
                out.display()
            ))
        }
        Command::Forecast {
            model,
            data,
            horizon,
            samples,
            out,
        } => {
            let mut config = with_data(config, data);
            if let Some(h) = horizon {
                config.forecast.horizon = h;
            }
            if let Some(n) = samples {
                config.forecast.num_samples = n;
            }
            if config.forecast.horizon == 0 {
                return Err(deepfactor::Error::InvalidArgument("forecast horizon must be at least 1".into()).into());
            }
            config.validate()?;
            let dataset = load_data(&config)?;
            let results = cmd_forecast(&model, &dataset, &config, &out)?;
            Ok(format!(
                "forecast {} series x {} steps -> {}",
                results.len(),
                config.forecast.horizon,
                out.display()
            ))
        }
        Command::Eval { forecast, actuals, out } => {
            let report = cmd_eval(&forecast, &actuals, out.as_deref())?;
            Ok(serde_json::to_string_pretty(&report)?)
        }
        Command::Efficiency {
            data,
            sizes,
            repeats,
            epochs,
            out,
        } => {
            let mut config = with_data(config, data);
            if let Some(s) = sizes {
                config.efficiency.train_sizes = s;
            }
            if let Some(r) = repeats {
                config.efficiency.repeats = r;
            }
            if let Some(e) = epochs {
                config.train.epochs = e;
            }
            config.validate()?;
            let sizes = config.efficiency.train_sizes.clone();
            let rows = cmd_efficiency_curve(&config, &sizes, Some(&out))?;
            Ok(format!("{} efficiency rows -> {}", rows.len(), out.display()))
        }
    }
}

/// Parse `args` and run, mapping every failure to its diagnostic line.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("ERROR:usage:{first}");
            return 2;
        }
    };
    match run(cli) {
        Ok(out) => {
            println!("{out}");
            0
        }
        Err(e) => {
            eprintln!("{}", diagnostic(&e));
            1
        }
    }
}

/// Single-line diagnostic with the stable `ERROR:<category>:` prefix.
pub fn diagnostic(e: &CliError) -> String {
    let msg = e.to_string().replace('\n', " ");
    format!("ERROR:{}:{msg}", e.category())
}
