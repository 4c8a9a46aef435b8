use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use aebound::experiment::{Experiment, ExperimentConfig};
use aebound::{Error, Result};

#[derive(Parser)]
#[command(
    name = "aebound",
    version,
    about = "Autoencoder margin-loss bounds and SSL experiments"
)]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for every stochastic stage.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Comma-separated sample fractions, e.g. 0.1,0.5,1.0.
    #[arg(long, value_delimiter = ',')]
    fractions: Option<Vec<f64>>,
    /// Single-linkage cutoff for the ssl stage.
    #[arg(long)]
    cutoff: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate or ingest data and write binarized train/test splits.
    GenData(Common),
    /// Train one autoencoder per sample fraction.
    Train(Common),
    /// Generalization and μ bounds per fraction.
    Bounds(Common),
    /// Cluster margins, Lipschitz estimates and audits.
    Geometry(Common),
    /// G_ε coverage curve.
    Geps(Common),
    /// Cluster-then-label vs k-NN comparison.
    Ssl(Common),
    /// Check outputs against the schema and write summary.json.
    Report(Common),
    /// All stages in order.
    Run(Common),
    /// Print the effective config as JSON.
    Config(Common),
}

fn experiment(c: &Common) -> Result<Experiment> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(d) = &c.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = c.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(f) = &c.fractions {
        cfg.sample_fractions = f.clone();
    }
    if c.cutoff.is_some() {
        cfg.ssl.cutoff = c.cutoff;
    }
    Experiment::new(cfg)
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(c) => {
            let m = experiment(&c)?.gen_data()?;
            eprintln!(
                "wrote {} train / {} test samples of dimension {}",
                m.n_train, m.n_test, m.dim
            );
        }
        Command::Train(c) => {
            for (frac, hist) in experiment(&c)?.train()? {
                eprintln!(
                    "fraction {frac}: surrogate loss {:.6} -> {:.6}",
                    hist[0],
                    hist[hist.len() - 1]
                );
            }
        }
        Command::Bounds(c) => {
            for r in experiment(&c)?.bounds()? {
                eprintln!(
                    "m = {}: gap/sqrt(C) = {:.6e}, mu_hat = {:.4}, mu bound = {:.4}",
                    r.m, r.delta_term_normalized, r.mu_hat, r.mu_bound_worst
                );
            }
        }
        Command::Geometry(c) => {
            let rows = experiment(&c)?.geometry()?;
            let v: u64 = rows
                .iter()
                .map(|r| r.audit.violations + r.audit.encoded_violations)
                .sum();
            eprintln!("{} geometry rows, {v} audit violations", rows.len());
        }
        Command::Geps(c) => {
            let rows = experiment(&c)?.geps()?;
            eprintln!("{} coverage rows", rows.len());
        }
        Command::Ssl(c) => {
            let s = experiment(&c)?.ssl()?;
            eprintln!(
                "ssl error {:.4} ± {:.4}, supervised error {:.4} ± {:.4}",
                s.mean_ssl_error, s.std_ssl_error, s.mean_supervised_error, s.std_supervised_error
            );
        }
        Command::Report(c) => {
            let s = experiment(&c)?.report()?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Run(c) => {
            let e = experiment(&c)?;
            e.gen_data()?;
            e.train()?;
            e.bounds()?;
            e.geometry()?;
            e.geps()?;
            if e.train_data()?.labels().is_some() {
                e.ssl()?;
            }
            println!("{}", serde_json::to_string_pretty(&e.report()?)?);
        }
        Command::Config(c) => {
            let e = experiment(&c)?;
            println!("{}", serde_json::to_string_pretty(&e.config)?);
            eprintln!("config_hash={}", e.hash);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(Error::exit_code(&e) as u8)
        }
    }
}
