use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use covlab_cli::commands;
use covlab_cli::{CliError, CliResult, ExperimentConfig, Overrides};
use covlab_core::adapters::AdapterVariant;

#[derive(Parser)]
#[command(name = "covlab", version, about = "Covariate adapters on a token-quantized forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic benchmark datasets with checksummed manifests.
    Generate(Common),
    /// Pretrain the backbone on a covariate-free corpus.
    Pretrain(Common),
    /// Select a learning rate, train and evaluate adapter variants.
    Train(Common),
    /// Score the zero-shot backbone, or reload and rescore `--variant`.
    Evaluate(Common),
    /// Aggregate the results file into relative scores and ranks.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to one dataset id, e.g. `simple_spikes_add`.
    #[arg(long)]
    dataset: Option<String>,
    /// Restrict to one adapter variant, e.g. `IIB_OIB`.
    #[arg(long)]
    variant: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> CliResult<(ExperimentConfig, Option<AdapterVariant>)> {
        let variant = self
            .variant
            .as_deref()
            .map(str::parse::<AdapterVariant>)
            .transpose()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        let mut cfg = ExperimentConfig::load(self.config.as_deref())?;
        cfg.apply(&Overrides {
            seed: self.seed,
            dataset: self.dataset.clone(),
            variant,
            out: self.out.clone(),
        });
        cfg.validate()?;
        Ok((cfg, variant))
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, _) = c.resolve()?;
            for (id, status) in commands::generate(&cfg)? {
                println!("{id}\t{status:?}");
            }
        }
        Command::Pretrain(c) => {
            let (cfg, _) = c.resolve()?;
            let s = commands::pretrain_backbone(&cfg)?;
            println!(
                "{}\tloss {:.4} -> {:.4}",
                s.checkpoint.display(),
                s.initial_loss,
                s.final_loss
            );
        }
        Command::Train(c) => {
            let (cfg, _) = c.resolve()?;
            for r in commands::train(&cfg)? {
                println!("{}\t{}\twql {:.4}\tmase {:.4}", r.dataset_id, r.model_id, r.wql, r.mase);
            }
        }
        Command::Evaluate(c) => {
            let (cfg, variant) = c.resolve()?;
            for r in commands::evaluate(&cfg, variant)? {
                println!("{}\t{}\twql {:.4}\tmase {:.4}", r.dataset_id, r.model_id, r.wql, r.mase);
            }
        }
        Command::Report(c) => {
            let (cfg, _) = c.resolve()?;
            let p = commands::report(&cfg)?;
            println!("{}\n{}", p.aggregate.display(), p.plot_data.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
