use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use headbias::experiment::{
    audit_checkpoint, dump_bias, run_experiment, sweep_beta, write_bias_csv, write_sweep_csv, Execution,
    ExperimentConfig, RowStatus,
};

#[derive(Parser)]
#[command(
    name = "headbias",
    version,
    about = "Class unlearning with classification-head bias diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train, unlearn with every configured method, and write reports.
    Run {
        config: PathBuf,
        /// Run methods concurrently (time and RTR columns are left empty).
        #[arg(long)]
        parallel: bool,
        /// Output directory, overriding `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a checkpoint's head biases against a forgotten-class set.
    Audit {
        checkpoint: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        forgotten: Vec<usize>,
    },
    /// Print head biases as CSV (class,bias,in_v).
    DumpBias {
        checkpoint: PathBuf,
        /// Forgotten classes; defaults to the labels stored in the checkpoint.
        #[arg(long, value_delimiter = ',')]
        forgotten: Option<Vec<usize>>,
    },
    /// Retain/forget accuracy of the original model as β varies, as CSV.
    SweepBeta {
        config: PathBuf,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, parallel, out } => {
            let mut cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            let execution = if parallel {
                Execution::Parallel
            } else {
                Execution::Sequential
            };
            let report = run_experiment(&cfg, execution)?;
            println!(
                "{:<14}{:>9}{:>9}{:>11}{:>10}{:>8}{:>8}{:>8}  leak",
                "method", "retain", "forget", "time_s", "rtr", "bsc", "mbg", "mbs"
            );
            for row in &report.rows {
                match (&row.status, &row.result) {
                    (RowStatus::Ok, Some(r)) => println!(
                        "{:<14}{:>9.2}{:>9.2}{:>11}{:>10}{:>8.2}{:>8.2}{:>8.2}  {}",
                        row.method,
                        r.retain_acc,
                        r.forget_acc,
                        fmt_opt(r.elapsed_seconds, 6),
                        fmt_opt(r.rtr, 4),
                        r.bias.bsc,
                        r.bias.mbg,
                        r.bias.mbs,
                        if r.bias.leakage_exact_match { "yes" } else { "no" }
                    ),
                    _ => println!(
                        "{:<14}failed: {}",
                        row.method,
                        row.error.as_deref().unwrap_or("unknown error")
                    ),
                }
            }
            println!("reports written to {}", cfg.output_dir.display());
        }
        Command::Audit { checkpoint, forgotten } => {
            let audit = audit_checkpoint(&checkpoint, &forgotten)?;
            let r = &audit.report;
            println!("forgotten   {:?}", r.forgotten);
            println!("bsc         {:.4}", r.bsc);
            println!("mbg         {:.4}", r.mbg);
            println!("mbs         {:.4}", r.mbs);
            println!(
                "leakage     {:?} (exact match: {})",
                r.leakage_prediction, r.leakage_exact_match
            );
            println!("verdict     {}", audit.verdict);
        }
        Command::DumpBias { checkpoint, forgotten } => {
            let rows = dump_bias(&checkpoint, forgotten.as_deref())?;
            write_bias_csv(&rows, std::io::stdout().lock())?;
        }
        Command::SweepBeta { config, out } => {
            let cfg = ExperimentConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let points = sweep_beta(&cfg)?;
            match out {
                Some(path) => {
                    let file = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    write_sweep_csv(&points, file)?;
                }
                None => {
                    let mut stdout = std::io::stdout().lock();
                    write_sweep_csv(&points, &mut stdout)?;
                    stdout.flush()?;
                }
            }
        }
    }
    Ok(())
}
