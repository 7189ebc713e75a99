//! Size/quality frontier: materialize a grid of sub-models from a trained
//! checkpoint and evaluate each on the run's held-out stream.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::extraction::{enumerate_grid, materialize, ExtractConfig};
use crate::teacher_data::evaluate;

use super::checkpoint::{model_from_checkpoint, Checkpoint};
use super::train::task_from_checkpoint;

pub const FRONTIER_HEADER: &str =
    "label,k,param_count_total,param_count_nonembedding,eval_ce,eval_auroc,eval_aucloss";

#[derive(Clone, Debug)]
pub struct FrontierRow {
    pub label: String,
    pub k: Option<usize>,
    pub param_count_total: usize,
    pub param_count_nonembedding: usize,
    pub eval_ce: f64,
    pub eval_auroc: Option<f64>,
    pub eval_aucloss: Option<f64>,
}

fn k_of(cfg: &ExtractConfig) -> Option<usize> {
    cfg.label
        .strip_prefix("wnw-k")
        .and_then(|s| s.parse().ok())
}

/// One row per wide-narrow-wide config in `ks`, plus the reserved
/// "student" and "ta" rows.
pub fn frontier_rows(ckpt: &Checkpoint, ks: &[usize]) -> Result<Vec<FrontierRow>> {
    let model = model_from_checkpoint(ckpt)?;
    let task = task_from_checkpoint(ckpt)?;
    let seed = ckpt.config.seed.first();
    let grid = enumerate_grid(model.dims.n_shared, model.dims.n_extra, ks)?;
    let mut rows = Vec::with_capacity(grid.len());
    for cfg in &grid {
        let sub = materialize(&model, cfg)?;
        let metrics = evaluate(|x| sub.forward(x), &task, ckpt.config.eval_n, seed)?;
        rows.push(FrontierRow {
            label: cfg.label.clone(),
            k: k_of(cfg),
            param_count_total: sub.param_count(),
            param_count_nonembedding: sub.param_count_nonembedding(),
            eval_ce: metrics.cross_entropy,
            eval_auroc: metrics.auroc,
            eval_aucloss: metrics.aucloss,
        });
    }
    Ok(rows)
}

/// Runs the frontier sweep and writes the CSV; returns its path.
pub fn run_frontier(ckpt: &Checkpoint, ks: &[usize], out_path: &Path) -> Result<PathBuf> {
    let rows = frontier_rows(ckpt, ks)?;
    if let Some(dir) = out_path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut csv = std::io::BufWriter::new(fs::File::create(out_path)?);
    writeln!(csv, "{FRONTIER_HEADER}")?;
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.label,
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.param_count_total,
            r.param_count_nonembedding,
            r.eval_ce,
            r.eval_auroc.map(|v| v.to_string()).unwrap_or_default(),
            r.eval_aucloss.map(|v| v.to_string()).unwrap_or_default(),
        )?;
    }
    csv.flush()?;
    Ok(out_path.to_path_buf())
}
