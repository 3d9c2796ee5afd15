use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use au_graph::config::RunConfig;
use au_graph::pipeline::{self, Sweep, Variant};

/// Multi-level graph relational reasoning for facial action-unit detection.
#[derive(Parser)]
#[command(name = "augraph", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` config file; defaults are used when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, `key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted AU structure.
    Generate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Compute the co-occurrence prior from a label CSV.
    Prior {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = au_graph::prior::DEFAULT_SMOOTHING)]
        smoothing: f64,
    },
    /// Train a model, writing checkpoints and per-epoch metrics.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        force: bool,
        /// Continue from the run's checkpoint.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
    },
    /// Evaluate a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Also write the report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train ablation variants or a layer-count sweep and compare them.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Comma-separated subset of baseline,dg,dg+og,dg+cg+pg,dg+og+cg,dg+og+pg,full.
        #[arg(long, value_delimiter = ',', conflicts_with = "layers")]
        variants: Vec<String>,
        /// Comma-separated layer counts to sweep instead of variants.
        #[arg(long, value_delimiter = ',')]
        layers: Vec<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Dump learned adjacency matrices and gate statistics.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset for the probe batch and structure recovery.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        probe: usize,
    },
}

fn note(msg: impl AsRef<str>) {
    eprintln!("{}", msg.as_ref());
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out, force } => {
            let cfg = config.load()?;
            let m = pipeline::cmd_generate(&cfg, &out, force)?;
            println!("wrote {} samples to {}", m.samples.len(), out.display());
        }
        Command::Prior { labels, out, smoothing } => {
            let p = pipeline::cmd_prior(&labels, &out, smoothing)?;
            println!("wrote {}x{} prior to {}", p.n(), p.n(), out.display());
        }
        Command::Train {
            config,
            data,
            run,
            force,
            resume,
        } => {
            let cfg = config.load()?;
            let outcome = pipeline::cmd_train(&cfg, &data, &run, force, resume)?;
            for l in &outcome.logs {
                note(format!(
                    "epoch {} lr {} loss_au {:.4} avg_f1 {:.4}",
                    l.epoch, l.lr, l.loss_au, l.avg_f1
                ));
            }
            println!("{}", outcome.report);
        }
        Command::Eval { checkpoint, data, out } => {
            let report = pipeline::cmd_eval(&checkpoint, &data)?;
            if let Some(out) = out {
                std::fs::write(&out, report.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            }
            println!("{report}");
        }
        Command::Ablate {
            config,
            data,
            run,
            variants,
            layers,
            force,
        } => {
            let cfg = config.load()?;
            let sweep = if !layers.is_empty() {
                Sweep::Layers(layers)
            } else if variants.is_empty() {
                Sweep::Variants(Variant::ALL.to_vec())
            } else {
                Sweep::Variants(variants.iter().map(|v| v.parse()).collect::<au_graph::Result<_>>()?)
            };
            let table = pipeline::cmd_ablate(&cfg, &data, &run, &sweep, force)?;
            println!("{table}");
        }
        Command::Inspect {
            checkpoint,
            data,
            out,
            probe,
        } => {
            let ins = pipeline::cmd_inspect(&checkpoint, data.as_deref(), &out, probe)?;
            println!("wrote {} adjacency matrices to {}", ins.adjacency.len(), out.display());
            for g in &ins.gates {
                println!(
                    "layer {} {} gate: mean {:.4} std {:.4} range [{:.4}, {:.4}]",
                    g.layer + 1,
                    g.cell,
                    g.mean,
                    g.std,
                    g.min,
                    g.max
                );
            }
            if let Some(rho) = &ins.structure {
                for (k, r) in rho.iter().enumerate() {
                    println!("layer {} spearman vs planted: {r:.4}", k + 1);
                }
            }
        }
    }
    Ok(())
}

fn check_exists(p: &Path) -> Result<()> {
    if !p.exists() {
        bail!("{} does not exist", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let inputs: Vec<&Path> = match &cli.command {
        Command::Prior { labels, .. } => vec![labels],
        Command::Train { data, .. } | Command::Ablate { data, .. } => vec![data],
        Command::Eval { checkpoint, data, .. } => vec![checkpoint, data],
        Command::Inspect { checkpoint, .. } => vec![checkpoint],
        Command::Generate { .. } => vec![],
    };
    let checked = inputs.iter().try_for_each(|p| check_exists(p));
    match checked.and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
