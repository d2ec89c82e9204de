use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use latte::cli::{
    cmd_evaluate, cmd_export_latent, cmd_forecast, cmd_gen_data, cmd_train, error_json, ForecastRequest, GenRequest,
    RunConfig, SyntheticKind,
};
use latte::dataio::CsvLayout;
use latte::flows::FlowKind;
use latte::{LatteError, Result};

#[derive(Parser)]
#[command(
    name = "latte",
    version,
    about = "Probabilistic multivariate forecasting with latent temporal flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.ckpt, loss_history.csv and config.json.
    Train(RunArgs),
    /// Sample forecast paths after the end of a context file.
    Forecast(ForecastArgs),
    /// Rolling-window CRPS-Sum and NMSE against the persistence baseline.
    Evaluate(EvaluateArgs),
    /// Write the latent code of every time step.
    ExportLatent(LatentArgs),
    /// Generate a synthetic dataset.
    GenData(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset CSV, overriding dataset.path.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    layout: Option<CsvLayout>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    context: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, value_parser = parse_flow)]
    flow: Option<FlowKind>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV whose last rows form the context window.
    #[arg(long)]
    context: PathBuf,
    #[arg(long, default_value = "wide")]
    layout: CsvLayout,
    /// Defaults to the horizon the model was trained with.
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Args)]
struct LatentArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "wide")]
    layout: CsvLayout,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    /// var, sine or two-regime
    #[arg(long, default_value = "var")]
    kind: SyntheticKind,
    #[arg(long, default_value_t = 20)]
    series: usize,
    #[arg(long, default_value_t = 2)]
    latent_dim: usize,
    #[arg(long, default_value_t = 3000)]
    len: usize,
    /// Observation noise std of the sine mixture.
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn parse_flow(s: &str) -> std::result::Result<FlowKind, String> {
    match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
        "realnvp" => Ok(FlowKind::RealNvp),
        "maf" => Ok(FlowKind::Maf),
        _ => Err(format!("unknown flow '{s}' (expected realnvp or maf)")),
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &self.data {
            c.dataset.path = Some(v.clone());
        }
        if let Some(v) = self.layout {
            c.dataset.layout = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out_dir = v.clone();
        }
        if let Some(v) = self.context {
            c.model.context_len = v;
        }
        if let Some(v) = self.horizon {
            c.model.horizon = v;
        }
        if let Some(v) = self.windows {
            c.split.windows = v;
        }
        if let Some(v) = self.samples {
            c.metrics.samples = v;
        }
        if let Some(v) = self.flow {
            c.model.flow = v;
        }
        if let Some(v) = self.latent_dim {
            c.model.latent_dim = v;
        }
        if let Some(v) = self.epochs {
            c.model.epochs = v;
        }
        Ok(c)
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("LATTE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| LatteError::config(format!("LATTE_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| LatteError::config(format!("cannot build thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Train(args) => {
            let outcome = cmd_train(&args.resolve()?)?;
            let last = outcome.history.last();
            println!(
                "{}",
                serde_json::json!({
                    "checkpoint": outcome.checkpoint,
                    "epochs": outcome.history.len(),
                    "train_end": outcome.train_end,
                    "final_combined_loss": last.map(|r| r.combined),
                })
            );
        }
        Command::Forecast(args) => {
            let ens = cmd_forecast(&ForecastRequest {
                checkpoint: args.checkpoint,
                context: args.context,
                layout: args.layout,
                horizon: args.horizon,
                samples: args.samples,
                seed: args.seed,
                out_dir: args.out.clone(),
            })?;
            println!(
                "{}",
                serde_json::json!({
                    "samples": ens.num_samples,
                    "horizon": ens.horizon,
                    "series": ens.num_series,
                    "out_dir": args.out,
                })
            );
        }
        Command::Evaluate(args) => {
            let summary = cmd_evaluate(&args.checkpoint, &args.run.resolve()?)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::ExportLatent(args) => {
            let path = cmd_export_latent(&args.checkpoint, &args.data, args.layout, &args.out)?;
            println!("{}", serde_json::json!({ "latent": path }));
        }
        Command::GenData(args) => {
            let path = cmd_gen_data(&GenRequest {
                kind: args.kind,
                num_series: args.series,
                latent_dim: args.latent_dim,
                len: args.len,
                noise: args.noise,
                seed: args.seed,
                out_dir: args.out,
            })?;
            println!("{}", serde_json::json!({ "data": path }));
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
            eprintln!("{}", error_json(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
