//! Policy-selection evaluation: ranking metrics, the ground-truth oracle for
//! the five instruction kinds, and selector reports.

mod metrics;
mod oracle;
mod report;

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use metrics::{ndcg_at_k, precision_at_k, recall_at_k, spearman_corr, top1_metrics, Top1};
pub use oracle::{
    ground_truth_oracle, rank_policies, GroundTruth, InstructionKind, InstructionSpec,
    GROUND_TRUTH_SIZE, NON_REGRESSION_Z, SIGMA_FLOOR,
};
pub use report::{
    evaluate_selector, format_report, write_report_csv, SelectorRanking, SelectorScores,
    REPORT_COLUMNS,
};

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Row {
            row: i + 1,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

/// Writes one compact JSON value per line.
pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, item)?;
        writer.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}
