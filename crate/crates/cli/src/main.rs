use std::path::PathBuf;

use anyhow::Result;
use clap::{Parser, Subcommand};
use sqlaug_cli::commands::{self, DomainSet};
use sqlaug_cli::config::RunConfig;
use sqlaug_core::toy::ToyConfig;

#[derive(Parser)]
#[command(name = "sqlaug", version, about = "Text-to-SQL data augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(clap::Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    s1: Option<usize>,
    #[arg(long)]
    s2: Option<usize>,
    #[arg(long)]
    generator_beam: Option<usize>,
    #[arg(long)]
    parser_beam: Option<usize>,
    #[arg(long)]
    alpha_train: Option<f64>,
    #[arg(long)]
    alpha_new: Option<f64>,
    #[arg(long)]
    timeout: Option<f64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.s1 {
            cfg.synthesis.s1 = v;
        }
        if let Some(v) = self.s2 {
            cfg.synthesis.s2 = v;
        }
        if let Some(v) = self.generator_beam {
            cfg.synthesis.generator_beam = v;
        }
        if let Some(v) = self.parser_beam {
            cfg.synthesis.parser_beam = v;
        }
        if let Some(v) = self.alpha_train {
            cfg.mixture.alpha_train = v;
        }
        if let Some(v) = self.alpha_new {
            cfg.mixture.alpha_new = v;
        }
        if let Some(v) = self.timeout {
            cfg.timeout_secs = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic toy corpus and a config for it.
    Toy {
        dir: PathBuf,
        #[arg(long, default_value_t = 100)]
        pairs_per_domain: usize,
        #[arg(long, default_value_t = 2.0)]
        zipf: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train the entity sampler, question generator and teacher parser.
    TrainComponents {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Synthesize examples for train domains, dev domains or both.
    Synthesize {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "train+dev")]
        mode: DomainSet,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train students on the mixture of real and synthesized data.
    TrainStudent {
        #[arg(long)]
        config: PathBuf,
        /// Augmented file; defaults to the run's train+dev output.
        #[arg(long)]
        augmented: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Entropy and mutual-information statistics of datasets.
    Analyze {
        #[arg(long)]
        schemas: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Exact match of a parser checkpoint.
    Evaluate {
        #[arg(long)]
        schemas: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        examples: PathBuf,
    },
}

fn load(path: &PathBuf, overrides: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    overrides.apply(&mut cfg);
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toy {
            dir,
            pairs_per_domain,
            zipf,
            seed,
        } => {
            commands::write_toy(&dir, &ToyConfig { pairs_per_domain, zipf, seed })?;
            println!("wrote {}", dir.join("config.toml").display());
        }
        Command::TrainComponents { config, overrides } => {
            let r = commands::train_components(&load(&config, &overrides)?)?;
            println!(
                "sampler loss {:.4}, generator loss {}, parser loss {:.4} ({} examples, {} skipped)",
                r.sampler.final_loss(),
                r.generator
                    .as_ref()
                    .map(|g| format!("{:.4}", g.final_loss()))
                    .unwrap_or_else(|| "external".into()),
                r.parser.log.final_loss(),
                r.parser.used,
                r.parser.skipped
            );
        }
        Command::Synthesize { config, mode, overrides } => {
            let (file, report) = commands::synthesize(&load(&config, &overrides)?, mode)?;
            print!("{}", commands::render_attrition(&report.attrition));
            println!("{} examples", file.examples.len());
        }
        Command::TrainStudent {
            config,
            augmented,
            overrides,
        } => {
            let report = commands::train_student(&load(&config, &overrides)?, augmented.as_deref())?;
            print!("{}", commands::render_student(&report));
        }
        Command::Analyze { schemas, out, inputs } => {
            let report = commands::analyze(&schemas, &inputs, out.as_deref())?;
            print!("{}", report.table());
            for (path, e) in &report.errors {
                eprintln!("error: {path}: {e}");
            }
            if report.datasets.is_empty() {
                anyhow::bail!("no dataset could be analyzed");
            }
        }
        Command::Evaluate {
            schemas,
            checkpoint,
            examples,
        } => {
            let r = commands::evaluate_checkpoint(&schemas, &checkpoint, &examples)?;
            println!("exact match {:.1} ({}/{})", 100.0 * r.accuracy, r.correct, r.n);
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
