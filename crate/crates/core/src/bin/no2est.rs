use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use no2est::config::{ModelKind, Rings, RunConfig};
use no2est::pipeline::{self, Command};
use no2est::predict::PredictionMode;
use no2est::synth;

#[derive(Parser)]
#[command(name = "no2est", version, about = "Daily NO2 estimation from monitors and road traffic")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with a matching config.toml
    Synth {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// table2 (independent intercepts) or table3 (spatial intercepts)
        #[arg(long, default_value = "table3")]
        preset: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute traffic exposure for every site
    Exposure(StageArgs),
    /// Interpolate daily monitor values to every site
    Interpolate(StageArgs),
    /// Fit the model on the learning sites
    Fit(StageArgs),
    /// Predict with the fit already in the output directory
    Predict(StageArgs),
    /// Predict and validate with the fit already in the output directory
    Validate(StageArgs),
    /// Run every stage
    Run(StageArgs),
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    model: Option<ModelKind>,
    /// single, multi, or comma-separated boundaries in meters
    #[arg(long)]
    rings: Option<Rings>,
    #[arg(long)]
    seed: Option<u64>,
    /// MCMC iterations per chain, burn-in included
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burnin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    /// Use REML for the longitudinal variance components
    #[arg(long)]
    reml: bool,
    #[arg(long, value_parser = parse_mode)]
    prediction: Option<PredictionMode>,
    /// Output directory (overrides the config)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<PredictionMode, String> {
    match s {
        "marginal" => Ok(PredictionMode::Marginal),
        "conditional" => Ok(PredictionMode::Conditional),
        _ => Err(format!("unknown prediction mode '{s}' (expected marginal or conditional)")),
    }
}

impl StageArgs {
    fn load(self) -> Result<RunConfig, no2est::Error> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(m) = self.model {
            cfg.model.kind = m;
        }
        if let Some(r) = self.rings {
            cfg.exposure.rings = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.iters {
            cfg.mcmc.iterations = n;
        }
        if let Some(n) = self.burnin {
            cfg.mcmc.burn_in = n;
        }
        if let Some(n) = self.chains {
            cfg.mcmc.chains = n;
        }
        if self.reml {
            cfg.model.reml = true;
        }
        if let Some(p) = self.prediction {
            cfg.model.prediction = p;
        }
        if let Some(o) = self.out {
            // Flags are relative to the working directory, not the config file.
            cfg.output_dir = std::path::absolute(&o).unwrap_or(o);
        }
        Ok(cfg)
    }
}

fn stage(args: StageArgs, command: Command) -> ExitCode {
    let cfg = match args.load() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: [config] {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match pipeline::run_command(cfg, command) {
        Ok(summary) => {
            if let Some(v) = summary.validation.as_ref().and_then(|a| a.validation.as_ref()) {
                println!(
                    "validation: {} sites, {} periods, R2 = {:.4}, RMSE = {:.4} ppb",
                    v.n_sites, v.n_obs, v.predictive_r2, v.rmse
                );
            }
            println!("artifacts written to {}", summary.out_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Synth { seed, preset, out } => {
            let result = synth::Scenario::preset(&preset, seed)
                .and_then(|sc| synth::generate(&sc))
                .and_then(|ds| synth::write_dataset(&ds, &out));
            match result {
                Ok(()) => {
                    println!("dataset written to {}", out.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: [synth] {e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Cmd::Exposure(a) => stage(a, Command::Exposure),
        Cmd::Interpolate(a) => stage(a, Command::Interpolate),
        Cmd::Fit(a) => stage(a, Command::Fit),
        Cmd::Predict(a) => stage(a, Command::Predict),
        Cmd::Validate(a) => stage(a, Command::Validate),
        Cmd::Run(a) => stage(a, Command::Run),
    }
}
