use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adglab::commands;
use adglab::config::ExperimentConfig;
use adglab::losses::DgVariant;
use adglab::metrics::PredClsMode;
use adglab::trainer::Scoring;
use adglab::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "adglab", version, about = "Adversarial domain generalization for compositional predicate prediction")]
struct Cli {
    /// Experiment configuration (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output path (file or directory, depending on the subcommand).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for generation, splitting and training.
    #[arg(long, global = true, env = "ADGLAB_SEED")]
    seed: Option<u64>,
    /// Worker threads; every stage currently runs on one.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset file and its manifest.
    Gen,
    /// Split a dataset into train/trainval/testval/test.
    Split { dataset: PathBuf },
    /// Train the configured variants on a split directory.
    Train {
        splits: PathBuf,
        /// Train only this variant.
        #[arg(long)]
        variant: Option<DgVariant>,
    },
    /// Evaluate a checkpoint on one split file.
    Eval {
        checkpoint: PathBuf,
        split: PathBuf,
        #[arg(long, value_enum, default_value = "triplet")]
        scoring: ScoringArg,
    },
    /// Check the divergence identities and discriminator convergence on fixtures.
    VerifyTheorems { fixtures: PathBuf },
    /// Tabulate run summaries against the baseline.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ScoringArg {
    Triplet,
    WithoutUnion,
    Union,
}

impl From<ScoringArg> for Scoring {
    fn from(s: ScoringArg) -> Self {
        match s {
            ScoringArg::Triplet => Scoring::Triplet,
            ScoringArg::WithoutUnion => Scoring::WithoutUnion,
            ScoringArg::Union => Scoring::Union,
        }
    }
}

fn out_path(cli: &Cli) -> Result<&Path> {
    cli.out.as_deref().ok_or_else(|| Error::Validation("--out is required".into()))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        return Err(Error::Validation("--threads must be at least 1".into()));
    }
    if cli.threads > 1 {
        log::info!("--threads {} requested; stages run on one thread", cli.threads);
    }
    match &cli.command {
        Command::Gen => {
            let g = commands::cmd_gen(&load_config(cli)?, out_path(cli)?)?;
            println!("{} instances, sha256 {}", g.manifest.instances, g.manifest.sha256);
        }
        Command::Split { dataset } => {
            let m = commands::cmd_split(dataset, &load_config(cli)?, out_path(cli)?)?;
            for c in &m.counts {
                println!("{:<9} images {:>6} instances {:>6} categories {:>4}", c.split, c.images, c.instances, c.categories);
            }
        }
        Command::Train { splits, variant } => {
            for s in commands::cmd_train(&load_config(cli)?, splits, out_path(cli)?, *variant)? {
                let r1 = |n: &str| s.splits.get(n).map_or(f64::NAN, |x| x.r1);
                println!(
                    "{:<9} trainval {:.4} testval {:.4} test {:.4}",
                    s.variant.label(),
                    r1("trainval"),
                    r1("testval"),
                    r1("test")
                );
            }
        }
        Command::Eval { checkpoint, split, scoring } => {
            let mode = match &cli.config {
                Some(_) => load_config(cli)?.metrics.mode,
                None => PredClsMode::default(),
            };
            let r = commands::cmd_eval(checkpoint, split, out_path(cli)?, mode, (*scoring).into())?;
            println!("PredCls R@1 {:.4} R@5 {:.4} PredDet R@5 {:.4} R@10 {:.4}", r.predcls_r1, r.predcls_r5, r.preddet_r5, r.preddet_r10);
        }
        Command::VerifyTheorems { fixtures } => {
            let report = commands::cmd_verify_theorems(fixtures)?;
            let text = report.render();
            print!("{text}");
            if let Some(out) = &cli.out {
                adglab::io::write_atomic(out, text.as_bytes())?;
            }
            if !report.all_passed() {
                return Err(Error::Invariant("divergence identity check failed".into()));
            }
        }
        Command::Compare { runs } => {
            print!("{}", commands::cmd_compare(runs, out_path(cli)?)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
