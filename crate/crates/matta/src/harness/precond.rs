//! Preconditioner dump: render a persisted Shampoo accumulator's
//! correlation structure to PGM + CSV and append its block statistics.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{corr_to_csv, corr_to_pgm, preconditioner_report, BlockStats};

use super::checkpoint::Checkpoint;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

pub const STATS_HEADER: &str =
    "layer,side,split,within_student,within_extra,cross,ratio_within_cross,zero_diagonal";

pub struct PrecondDump {
    pub pgm_path: PathBuf,
    pub csv_path: PathBuf,
    pub stats_path: PathBuf,
    pub stats: BlockStats,
}

/// Accumulator group names available in a checkpoint (without the
/// `optim.` prefix or `.left`/`.right` suffix).
pub fn available_layers(ckpt: &Checkpoint) -> Vec<String> {
    ckpt.tensors
        .iter()
        .filter_map(|(n, _)| {
            n.strip_prefix("optim.")
                .and_then(|rest| rest.strip_suffix(".left"))
                .map(str::to_string)
        })
        .collect()
}

/// Infers which accumulator side indexes the nested dimension of a joint
/// layer and where the student/extra seam sits: the hidden width is the
/// output side of `up` (right accumulator) and the input side of `down`
/// (left accumulator).
fn infer_side_and_split(ckpt: &Checkpoint, layer: &str) -> Option<(Side, usize)> {
    let h_s = ckpt.config.model.h_s;
    if layer.ends_with("up.joint") {
        Some((Side::Right, h_s))
    } else if layer.ends_with("down.joint") {
        Some((Side::Left, h_s))
    } else {
        None
    }
}

/// Writes `<layer>.pgm` and `<layer>.corr.csv` under `out_dir` and appends
/// one row to `preconditioner_stats.csv`.
pub fn dump_preconditioner(
    ckpt: &Checkpoint,
    layer: &str,
    side_override: Option<Side>,
    split_override: Option<usize>,
    out_dir: &Path,
) -> Result<PrecondDump> {
    let inferred = infer_side_and_split(ckpt, layer);
    let side = side_override
        .or(inferred.map(|(s, _)| s))
        .ok_or_else(|| {
            Error::Config(format!(
                "layer {layer} is not a joint nested layer; pass an explicit side"
            ))
        })?;
    let split = split_override.or(inferred.map(|(_, s)| s)).ok_or_else(|| {
        Error::Config(format!(
            "layer {layer} is not a joint nested layer; pass an explicit split"
        ))
    })?;
    let suffix = match side {
        Side::Left => "left",
        Side::Right => "right",
    };
    let name = format!("optim.{layer}.{suffix}");
    let acc = ckpt.tensor(&name).ok_or_else(|| {
        let available = available_layers(ckpt);
        Error::Config(format!(
            "no accumulator {name} in this checkpoint; available layers: {}",
            if available.is_empty() {
                "none (trained without shampoo?)".to_string()
            } else {
                available.join(", ")
            }
        ))
    })?;
    let report = preconditioner_report(acc, split)?;

    fs::create_dir_all(out_dir)?;
    let pgm_path = out_dir.join(format!("{layer}.pgm"));
    let csv_path = out_dir.join(format!("{layer}.corr.csv"));
    fs::write(&pgm_path, corr_to_pgm(&report.corr))?;
    fs::write(&csv_path, corr_to_csv(&report.corr))?;

    let stats_path = out_dir.join("preconditioner_stats.csv");
    let new_file = !stats_path.exists();
    let mut stats_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&stats_path)?;
    if new_file {
        writeln!(stats_file, "{STATS_HEADER}")?;
    }
    let s = &report.stats;
    writeln!(
        stats_file,
        "{layer},{suffix},{},{},{},{},{},{}",
        s.split, s.within_student, s.within_extra, s.cross, s.ratio_within_cross, s.zero_diagonal
    )?;
    Ok(PrecondDump {
        pgm_path,
        csv_path,
        stats_path,
        stats: report.stats,
    })
}
