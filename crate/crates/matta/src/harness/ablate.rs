//! Ablation grid: the 2x2 of {nested co-training on/off} x {Shampoo
//! on/off}, plus the sharing comparison, each trained per seed and
//! reported as relative improvement against the plain-student baseline.
//!
//! The first-order arm is pinned to Adagrad at the config's learning
//! rate. Improvements are per-seed against the same seed's baseline;
//! the command prints seed-averaged numbers per cell.

use std::fs;
use std::io::Write as _;
use std::path::PathBuf;

use crate::error::Result;
use crate::matlayers::Sharing;
use crate::teacher_data::EvalMetrics;

use super::config::{OptMethod, RunConfig};
use super::train::run_train;

pub const ABLATION_HEADER: &str = "cell,seed,eval_ce_s,eval_ce_ta,eval_aucloss_s,eval_aucloss_ta,\
     rel_ce_s_pct,rel_aucloss_s_pct";

pub const CELLS: [&str; 6] = [
    "baseline",
    "shampoo-only",
    "matta-without-shampoo",
    "matta-with-shampoo",
    "sharing-shared",
    "sharing-unshared-blocks",
];

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub cell: &'static str,
    pub seed: u64,
    pub student: EvalMetrics,
    pub ta: EvalMetrics,
    /// (cell - baseline) / baseline * 100 for the student head; negative is
    /// better. Zero for the baseline cell by construction.
    pub rel_ce_s_pct: f64,
    pub rel_aucloss_s_pct: Option<f64>,
}

fn cell_config(base: &RunConfig, cell: &str, seed: u64) -> RunConfig {
    let mut cfg = base.clone();
    cfg.output_dir = base.output_dir.join("ablate").join(cell).join(format!("seed{seed}"));
    cfg.seed = super::config::SeedSpec::One(seed);
    let student_alone = |cfg: &mut RunConfig| {
        cfg.model.h_ta = cfg.model.h_s;
        cfg.model.n_extra = 0;
        cfg.loss.w_s = 1.0;
        cfg.loss.w_ta = 0.0;
        cfg.loss.w_d_target = 0.0;
    };
    match cell {
        "baseline" => {
            student_alone(&mut cfg);
            cfg.optimizer.method = OptMethod::Adagrad;
        }
        "shampoo-only" => {
            student_alone(&mut cfg);
            cfg.optimizer.method = OptMethod::Shampoo;
        }
        "matta-without-shampoo" => {
            cfg.optimizer.method = OptMethod::Adagrad;
        }
        "matta-with-shampoo" => {
            cfg.optimizer.method = OptMethod::Shampoo;
        }
        "sharing-shared" => {
            cfg.optimizer.method = OptMethod::Shampoo;
            cfg.sharing = Sharing::Shared;
        }
        "sharing-unshared-blocks" => {
            cfg.optimizer.method = OptMethod::Shampoo;
            cfg.sharing = Sharing::UnsharedBlocks;
        }
        other => unreachable!("unknown ablation cell {other}"),
    }
    cfg
}

/// Runs every cell for every seed; rows come back cell-major in CELLS
/// order.
pub fn ablation_rows(base: &RunConfig) -> Result<Vec<AblationRow>> {
    let seeds = base.seed.all();
    // baseline per seed first, to compute relative improvements
    let mut baselines = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        let cfg = cell_config(base, "baseline", seed);
        let r = run_train(&cfg, seed)?;
        baselines.push((r.final_student, r.final_ta));
    }
    let mut rows = Vec::new();
    for cell in CELLS {
        for (i, &seed) in seeds.iter().enumerate() {
            let (student, ta) = if cell == "baseline" {
                baselines[i]
            } else {
                let cfg = cell_config(base, cell, seed);
                let r = run_train(&cfg, seed)?;
                (r.final_student, r.final_ta)
            };
            let base_s = &baselines[i].0;
            let rel_ce_s_pct =
                (student.cross_entropy - base_s.cross_entropy) / base_s.cross_entropy * 100.0;
            let rel_aucloss_s_pct = match (student.aucloss, base_s.aucloss) {
                (Some(cell_al), Some(base_al)) if base_al > 0.0 => {
                    Some((cell_al - base_al) / base_al * 100.0)
                }
                _ => None,
            };
            rows.push(AblationRow {
                cell,
                seed,
                student,
                ta,
                rel_ce_s_pct,
                rel_aucloss_s_pct,
            });
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the grid, writes `ablation.csv` under the config's output dir, and
/// returns (path, rows).
pub fn run_ablation_grid(base: &RunConfig) -> Result<(PathBuf, Vec<AblationRow>)> {
    base.validate()?;
    let rows = ablation_rows(base)?;
    fs::create_dir_all(&base.output_dir)?;
    let path = base.output_dir.join("ablation.csv");
    let mut csv = std::io::BufWriter::new(fs::File::create(&path)?);
    writeln!(csv, "{ABLATION_HEADER}")?;
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.cell,
            r.seed,
            r.student.cross_entropy,
            r.ta.cross_entropy,
            fmt_opt(r.student.aucloss),
            fmt_opt(r.ta.aucloss),
            r.rel_ce_s_pct,
            fmt_opt(r.rel_aucloss_s_pct),
        )?;
    }
    csv.flush()?;
    Ok((path, rows))
}

/// Seed-averaged relative improvements per cell, for display.
pub fn cell_means(rows: &[AblationRow]) -> Vec<(&'static str, f64, Option<f64>)> {
    CELLS
        .iter()
        .map(|&cell| {
            let cell_rows: Vec<&AblationRow> = rows.iter().filter(|r| r.cell == cell).collect();
            let n = cell_rows.len() as f64;
            let ce = cell_rows.iter().map(|r| r.rel_ce_s_pct).sum::<f64>() / n;
            let aucloss = if cell_rows.iter().all(|r| r.rel_aucloss_s_pct.is_some()) {
                Some(
                    cell_rows
                        .iter()
                        .map(|r| r.rel_aucloss_s_pct.unwrap())
                        .sum::<f64>()
                        / n,
                )
            } else {
                None
            };
            (cell, ce, aucloss)
        })
        .collect()
}
