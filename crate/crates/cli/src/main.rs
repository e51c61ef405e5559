use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nrgs_core::pipeline::{
    run_pipeline, stage_ablate, stage_eval, stage_lift, stage_regularize, stage_synth, write_config, RunConfig,
    StageReport,
};
use nrgs_core::train::{GranularityMode, WeightingMode};
use nrgs_core::Error;

#[derive(Parser)]
#[command(name = "nrgs", version, about = "Lift 2D semantic features onto 3D Gaussians and regularize them")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene, cameras, ground truth and feature maps.
    Synth(Overrides),
    /// Lift feature maps onto the scene.
    Lift(Overrides),
    /// Train the regularizer and write regularized fields.
    Regularize(Overrides),
    /// Score raw and regularized fields on held-out views.
    Eval(Overrides),
    /// Run the three-row ablation grid on a fresh synthetic scene.
    Ablate(Overrides),
    /// synth, lift, regularize and eval in sequence.
    Pipeline(Overrides),
}

#[derive(Args, Clone)]
struct Overrides {
    /// JSON run config; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "lambda-cos")]
    lambda_cos: Option<f64>,
    #[arg(long = "noise-rate")]
    noise_rate: Option<f64>,
    #[arg(long, value_parser = ["equal", "variance"])]
    weighting: Option<String>,
    #[arg(long = "granularity-mode", value_parser = ["shared", "independent"])]
    granularity_mode: Option<String>,
    /// Run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Also write relevance and segmentation rasters during eval.
    #[arg(long)]
    rasters: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if self.seed.is_some() {
            c.seed = self.seed;
        }
        if let Some(v) = self.gamma {
            c.train.gamma = v;
        }
        if let Some(v) = self.lambda_cos {
            c.train.lambda_cos = v;
        }
        if let Some(v) = self.noise_rate {
            c.synth.noise_rate = v;
        }
        if let Some(v) = &self.weighting {
            c.train.weighting_mode = v.parse::<WeightingMode>()?;
        }
        if let Some(v) = &self.granularity_mode {
            c.train.granularity_mode = v.parse::<GranularityMode>()?;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = self.threads {
            c.threads = v;
        }
        c.rasters |= self.rasters;
        c.resolve()
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidGranularity(_) => 1,
        Error::Format(_) | Error::Shape(_) | Error::MissingView { .. } => 2,
        Error::Numerical(_) | Error::NoValidSamples(_) | Error::VisibilityUnreachable { .. } | Error::EmptyRegion => 3,
    }
}

fn run(command: &Command) -> Result<Vec<StageReport>, Error> {
    let (overrides, stage): (&Overrides, fn(&RunConfig) -> Result<Vec<StageReport>, Error>) = match command {
        Command::Synth(o) => (o, |c| Ok(vec![stage_synth(c)?])),
        Command::Lift(o) => (o, |c| Ok(vec![stage_lift(c)?])),
        Command::Regularize(o) => (o, |c| Ok(vec![stage_regularize(c)?])),
        Command::Eval(o) => (o, |c| Ok(vec![stage_eval(c)?])),
        Command::Ablate(o) => (o, |c| Ok(vec![stage_ablate(c)?])),
        Command::Pipeline(o) => (o, run_pipeline),
    };
    let config = overrides.resolve()?;
    log::info!(
        "resolved config: {}",
        serde_json::to_string(&config).expect("serializable config")
    );
    write_config(&config)?;
    let pool = config.thread_pool()?;
    pool.install(|| stage(&config))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli.command) {
        Ok(reports) => {
            for r in &reports {
                for (k, v) in &r.metrics {
                    println!("{}.{k}={v:.6}", r.stage);
                }
            }
            for r in &reports {
                println!("time.{}={:.3}s", r.stage, r.seconds);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
