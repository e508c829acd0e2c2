use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gderec::data::{load, DatasetFormat};
use gderec::eval::{
    checkpoint_context, evaluate_checkpoint, export_attention, export_embeddings, load_grid, run_ablation_with,
    train_to_dir, Averaging, ExperimentConfig, MaskSeen, PreparedData, Split,
};
use gderec::model::{Checkpoint, EpochLog, ForwardPlan};
use gderec::Result;

#[derive(Parser)]
#[command(name = "gderec", version, about = "Continuous-time sequential recommendation with graph ODEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a raw interaction file and build the interval graph.
    Prepare {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_format)]
        format: DatasetFormat,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one config; writes checkpoint.json and metrics.csv under out/run_id.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Rank a held-out split with a trained checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = parse_split, default_value = "test")]
        split: Split,
        /// Overrides the mask stored with the checkpoint's config.
        #[arg(long, value_parser = parse_mask)]
        mask_seen: Option<MaskSeen>,
        /// Average metrics per user instead of per interaction.
        #[arg(long)]
        per_user: bool,
    },
    /// Train and evaluate every cell of a grid file; writes a metrics CSV.
    Ablate {
        #[arg(long)]
        grid: PathBuf,
        /// Output CSV, stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Dump embeddings or attention weights of a checkpoint as CSV.
    Export {
        #[arg(long, value_enum)]
        what: ExportKind,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportKind {
    Embeddings,
    Attention,
}

fn parse_format(s: &str) -> std::result::Result<DatasetFormat, String> {
    s.parse().map_err(|e: gderec::Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: gderec::Error| e.to_string())
}

fn parse_mask(s: &str) -> std::result::Result<MaskSeen, String> {
    s.parse().map_err(|e: gderec::Error| e.to_string())
}

fn print_epoch(prefix: &str, e: &EpochLog) {
    match e.valid {
        Some(v) => eprintln!(
            "{prefix}epoch {:>3}  loss {:.5}  valid R@5 {:.4}  R@10 {:.4}  MRR {:.4}  ({:.1}s)",
            e.epoch, e.loss, v.recall_at_5, v.recall_at_10, v.mrr, e.seconds
        ),
        None => eprintln!("{prefix}epoch {:>3}  loss {:.5}  ({:.1}s)", e.epoch, e.loss, e.seconds),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare { input, format, k, out } => {
            let log = load(&input, format)?;
            let data = PreparedData::from_log(&log, k)?;
            data.save(&out)?;
            println!(
                "{} users, {} items; train {} / valid {} / test {}; K = {}; wrote {}",
                data.system.num_users,
                data.system.num_items,
                data.system.train_edges().len(),
                data.valid.len(),
                data.test.len(),
                k,
                out.display()
            );
        }
        Command::Train { config, quiet } => {
            let cfg = ExperimentConfig::load(&config)?;
            let art = train_to_dir(&cfg, |e| {
                if !quiet {
                    print_epoch("", e)
                }
            })?;
            let o = &art.outcome;
            println!("best epoch {}", o.fit.best_epoch);
            for (name, report) in [("valid", &o.valid), ("test", &o.test)] {
                if let Some(s) = report.summary {
                    println!(
                        "{name}: R@5 {:.4}  R@10 {:.4}  MRR {:.4}  ({} ranked, {} cold, {} masked)",
                        s.recall_at_5, s.recall_at_10, s.mrr, s.evaluated, report.skipped_cold, report.skipped_masked
                    );
                }
            }
            println!("checkpoint {}", art.checkpoint.display());
            println!("metrics {}", art.metrics.display());
        }
        Command::Evaluate {
            checkpoint,
            split,
            mask_seen,
            per_user,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let averaging = per_user.then_some(Averaging::User);
            let report = evaluate_checkpoint(&ck, split, mask_seen, averaging)?;
            match report.summary {
                Some(s) => println!(
                    "{split}: recall@5 {}  recall@10 {}  mrr {}  ranked {}  skipped_cold {}  skipped_masked {}",
                    s.recall_at_5, s.recall_at_10, s.mrr, s.evaluated, report.skipped_cold, report.skipped_masked
                ),
                None => println!(
                    "{split}: nothing ranked (skipped_cold {}, skipped_masked {})",
                    report.skipped_cold, report.skipped_masked
                ),
            }
        }
        Command::Ablate { grid, out, quiet } => {
            let grid = load_grid(&grid)?;
            let progress = |i: usize, e: &EpochLog| {
                if !quiet {
                    print_epoch(&format!("[{}] ", grid[i].run_id), e)
                }
            };
            let cells = match &out {
                Some(path) => {
                    let file = File::create(path).map_err(|e| gderec::Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    run_ablation_with(&grid, &mut BufWriter::new(file), progress)?
                }
                None => run_ablation_with(&grid, &mut std::io::stdout().lock(), progress)?,
            };
            let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
            eprintln!("{} cells, {failed} failed", cells.len());
        }
        Command::Export { what, checkpoint, out } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let (_, data) = checkpoint_context(&ck)?;
            let plan = ForwardPlan::new(&data.system, ck.config.policy, ck.config.variant, ck.config.step)?;
            let file = File::create(&out).map_err(|e| gderec::Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let mut w = BufWriter::new(file);
            match what {
                ExportKind::Embeddings => export_embeddings(&plan, &ck.params, data.system.num_users, &mut w)?,
                ExportKind::Attention => export_attention(&plan, &ck.params, &mut w)?,
            }
            w.flush().map_err(|e| gderec::Error::Io { path: out, source: e })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
