//! Command-line front end: train, extract, eval, frontier, ablate, and
//! dump-preconditioner. Exit codes: 0 success, 1 config error, 2
//! numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use matta::error::{Error, Result};
use matta::extraction::{materialize, wide_narrow_wide_config, ExtractConfig};
use matta::harness::{
    self, cell_means, checkpoint, dump_preconditioner, load_config, run_ablation_grid,
    run_frontier, run_train, Side,
};
use matta::teacher_data::{evaluate, EvalMetrics};

#[derive(Parser)]
#[command(name = "matta", version, about = "Nested student/TA co-distillation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per configured seed; writes metrics CSV + checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Materialize wide-narrow-wide sub-models from a checkpoint.
    Extract {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Wide block counts; repeatable or comma-separated.
        #[arg(long = "k", required = true, num_args = 1.., value_delimiter = ',')]
        ks: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: both co-trained paths, or one extract config.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Extract config label: "student", "ta", or "wnw-k<K>".
        #[arg(long)]
        label: Option<String>,
    },
    /// Size/quality frontier over a k-grid; writes frontier.csv.
    Frontier {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        ks: Vec<usize>,
        /// Output CSV path (default: frontier.csv next to the checkpoint).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the optimizer x nesting ablation grid; writes ablation.csv.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Render a persisted Shampoo accumulator's correlation structure.
    DumpPreconditioner {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Accumulator group name, e.g. blocks.0.up.joint (see `optim.*`
        /// tensors in the checkpoint).
        #[arg(long)]
        layer: String,
        /// left or right; inferred for joint nested layers.
        #[arg(long)]
        side: Option<String>,
        /// Student/extra seam; inferred for joint nested layers.
        #[arg(long)]
        split: Option<usize>,
        /// Output directory (default: the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn metrics_line(name: &str, m: &EvalMetrics) -> String {
    let auroc = m
        .auroc
        .map(|v| format!(" auroc={v:.6} aucloss={:.6}", 1.0 - v))
        .unwrap_or_default();
    format!(
        "{name}: ce={:.6} accuracy={:.4}{auroc}",
        m.cross_entropy, m.accuracy
    )
}

fn parse_label(label: &str, n_shared: usize, n_extra: usize) -> Result<ExtractConfig> {
    match label {
        "student" => Ok(ExtractConfig::student(n_shared, n_extra)),
        "ta" => Ok(ExtractConfig::ta(n_shared + n_extra)),
        other => {
            let k: usize = other
                .strip_prefix("wnw-k")
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown label {other}; expected student, ta, or wnw-k<K>"
                    ))
                })?;
            wide_narrow_wide_config(k, n_shared + n_extra)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config } => {
            let cfg = load_config(&config)?;
            for seed in cfg.seed.all() {
                let result = run_train(&cfg, seed)?;
                println!(
                    "seed {seed}: wrote {} and {}",
                    result.metrics_path.display(),
                    result.checkpoint_path.display()
                );
                println!("  {}", metrics_line("student", &result.final_student));
                println!("  {}", metrics_line("ta", &result.final_ta));
            }
        }
        Command::Extract { checkpoint: ckpt_path, ks, out } => {
            let ckpt = checkpoint::load(&ckpt_path)?;
            let model = checkpoint::model_from_checkpoint(&ckpt)?;
            std::fs::create_dir_all(&out)?;
            for k in ks {
                let cfg = wide_narrow_wide_config(k, model.blocks.len())?;
                let sub = materialize(&model, &cfg)?;
                let path = out.join(format!("{}.matta", cfg.label));
                checkpoint::save_standalone(&path, &sub, &ckpt.config)?;
                println!(
                    "{}: {} params -> {}",
                    cfg.label,
                    sub.param_count(),
                    path.display()
                );
            }
        }
        Command::Eval { checkpoint: ckpt_path, label } => {
            let ckpt = checkpoint::load(&ckpt_path)?;
            let task = harness::task_from_checkpoint(&ckpt)?;
            let seed = ckpt.config.seed.first();
            let n_eval = ckpt.config.eval_n;
            if ckpt.extracted.is_some() {
                let sub = checkpoint::standalone_from_checkpoint(&ckpt)?;
                let m = evaluate(|x| sub.forward(x), &task, n_eval, seed)?;
                println!("{}", metrics_line(&sub.label, &m));
            } else {
                let model = checkpoint::model_from_checkpoint(&ckpt)?;
                match label {
                    Some(label) => {
                        let cfg =
                            parse_label(&label, model.dims.n_shared, model.dims.n_extra)?;
                        let sub = materialize(&model, &cfg)?;
                        let m = evaluate(|x| sub.forward(x), &task, n_eval, seed)?;
                        println!("{}", metrics_line(&label, &m));
                    }
                    None => {
                        let s = evaluate(|x| Ok(model.forward_values(x)?.0), &task, n_eval, seed)?;
                        let t = evaluate(|x| Ok(model.forward_values(x)?.1), &task, n_eval, seed)?;
                        println!("{}", metrics_line("student", &s));
                        println!("{}", metrics_line("ta", &t));
                    }
                }
            }
        }
        Command::Frontier { checkpoint: ckpt_path, ks, out } => {
            let ckpt = checkpoint::load(&ckpt_path)?;
            let out_path = out.unwrap_or_else(|| {
                ckpt_path
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .join("frontier.csv")
            });
            let path = run_frontier(&ckpt, &ks, &out_path)?;
            println!("wrote {}", path.display());
        }
        Command::Ablate { config } => {
            let cfg = load_config(&config)?;
            let (path, rows) = run_ablation_grid(&cfg)?;
            println!("wrote {}", path.display());
            println!("seed-averaged relative improvement vs baseline (negative is better):");
            for (cell, ce, aucloss) in cell_means(&rows) {
                let aucloss = aucloss
                    .map(|v| format!(" aucloss {v:+.2}%"))
                    .unwrap_or_default();
                println!("  {cell}: ce {ce:+.2}%{aucloss}");
            }
        }
        Command::DumpPreconditioner { checkpoint: ckpt_path, layer, side, split, out } => {
            let ckpt = checkpoint::load(&ckpt_path)?;
            let side = match side.as_deref() {
                None => None,
                Some("left") => Some(Side::Left),
                Some("right") => Some(Side::Right),
                Some(other) => {
                    return Err(Error::Config(format!(
                        "side must be left or right, got {other}"
                    )))
                }
            };
            let out_dir = out.unwrap_or_else(|| {
                ckpt_path
                    .parent()
                    .unwrap_or_else(|| std::path::Path::new("."))
                    .to_path_buf()
            });
            let dump = dump_preconditioner(&ckpt, &layer, side, split, &out_dir)?;
            println!("wrote {} and {}", dump.pgm_path.display(), dump.csv_path.display());
            let s = &dump.stats;
            println!(
                "{layer}: split={} within_student={:.6} within_extra={:.6} cross={:.6} ratio={:.4} zero_diag={}",
                s.split, s.within_student, s.within_extra, s.cross, s.ratio_within_cross, s.zero_diagonal
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
