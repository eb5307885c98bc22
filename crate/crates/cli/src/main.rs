use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use secret_core::embeddings::pairwise_squared_distances;
use secret_core::experiment::{
    emit_report, report_to_csv, report_to_json, run_experiment, validate_experiment,
    ExperimentInputs, ReportFormat,
};
use secret_core::ExperimentConfig;

#[derive(Parser)]
#[command(
    name = "secret",
    version,
    about = "Dual-space classification experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Override the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its report.
    Run {
        config: PathBuf,
        /// Report destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        /// json or csv.
        #[arg(long, default_value = "json")]
        format: String,
        /// Number of worker threads (folds run in parallel).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Check the data file, fold feasibility and label-vector coverage.
    Validate { config: PathBuf },
    /// Print pairwise Euclidean distances between the label vectors.
    Distances { config: PathBuf },
}

fn load(config: &PathBuf, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(config)
        .with_context(|| format!("loading config {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            jobs,
        } => {
            let cfg = load(&config, cli.seed)?;
            let format: ReportFormat = format.parse()?;
            let mut pool = rayon::ThreadPoolBuilder::new();
            if let Some(j) = jobs {
                pool = pool.num_threads(j.max(1));
            }
            let pool = pool.build()?;
            let report = pool.install(|| run_experiment(&cfg))?;
            for (name, s) in &report.summary {
                log::info!(
                    "{name}: accuracy {:.4} ± {:.4}, macro F1 {:.4} ± {:.4}",
                    s.accuracy_mean,
                    s.accuracy_std,
                    s.f1_mean,
                    s.f1_std
                );
            }
            match out {
                Some(path) => emit_report(&report, &path, format)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => {
                    let text = match format {
                        ReportFormat::Json => report_to_json(&report)?,
                        ReportFormat::Csv => report_to_csv(&report)?,
                    };
                    println!("{text}");
                }
            }
        }
        Command::Validate { config } => {
            let cfg = load(&config, cli.seed)?;
            let summary = validate_experiment(&cfg)?;
            println!("rows: {}", summary.n_rows);
            println!("features after encoding: {}", summary.n_features);
            for ((label, text), count) in summary
                .class_labels
                .iter()
                .zip(&summary.lookup_texts)
                .zip(&summary.class_counts)
            {
                println!("class '{label}' -> '{text}': {count} rows");
            }
            if let Some(d) = summary.vector_dim {
                println!("all labels resolve to {d}-dimensional vectors");
            }
            println!("ok");
        }
        Command::Distances { config } => {
            let cfg = load(&config, cli.seed)?;
            if cfg.embeddings.is_none() {
                anyhow::bail!("config has no embeddings file");
            }
            let inputs = ExperimentInputs::load(&ExperimentConfig {
                comparisons: secret_core::experiment::Comparisons {
                    secret: true,
                    ..cfg.comparisons
                },
                ..cfg.clone()
            })?;
            let vs = inputs.label_vectors(&cfg)?;
            let d = pairwise_squared_distances(&vs);
            let names: Vec<String> = vs
                .class_labels()
                .iter()
                .map(|l| cfg.remap_label(l))
                .collect();
            let width = names.iter().map(String::len).max().unwrap_or(0).max(8);
            print!("{:width$}", "");
            for n in &names {
                print!("  {n:>width$}");
            }
            println!();
            for (i, n) in names.iter().enumerate() {
                print!("{n:width$}");
                for j in 0..names.len() {
                    print!("  {:>width$.4}", d[[i, j]].sqrt());
                }
                println!();
            }
        }
    }
    Ok(())
}
