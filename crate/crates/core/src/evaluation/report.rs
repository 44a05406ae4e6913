//! Selector scoring: macro-averaged ranking metrics per selector.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::metrics::{ndcg_at_k, precision_at_k, recall_at_k, spearman_corr, top1_metrics};
use super::oracle::GroundTruth;
use crate::error::{Error, Result};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Ranked output of one selector for one instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectorRanking {
    pub selector_name: String,
    pub experiment_id: String,
    pub instruction_idx: usize,
    pub ranked: Vec<String>,
}

/// Column labels of a selector report row.
pub const REPORT_COLUMNS: [&str; 12] = [
    "nDCG@1", "nDCG@3", "nDCG@5", "Prec@1", "Prec@3", "Prec@5", "Recall@1", "Recall@3",
    "Recall@5", "RankCorr", "Top1Acc", "Top1InGT",
];

/// Macro-averaged scores of one selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectorScores {
    pub selector_name: String,
    pub instructions: usize,
    /// Values in [`REPORT_COLUMNS`] order.
    pub values: [f64; 12],
}

impl SelectorScores {
    pub fn get(&self, column: &str) -> Option<f64> {
        REPORT_COLUMNS
            .iter()
            .position(|c| *c == column)
            .map(|i| self.values[i])
    }
}

fn score_one(ranked: &[String], gt: &GroundTruth) -> [f64; 12] {
    let t = top1_metrics(ranked, &gt.top5);
    [
        ndcg_at_k(ranked, &gt.top5, 1),
        ndcg_at_k(ranked, &gt.top5, 3),
        ndcg_at_k(ranked, &gt.top5, 5),
        precision_at_k(ranked, &gt.top5, 1),
        precision_at_k(ranked, &gt.top5, 3),
        precision_at_k(ranked, &gt.top5, 5),
        recall_at_k(ranked, &gt.top5, 1),
        recall_at_k(ranked, &gt.top5, 3),
        recall_at_k(ranked, &gt.top5, 5),
        spearman_corr(ranked, &gt.top5),
        f64::from(t.top1_acc),
        f64::from(t.top1_in_gt),
    ]
}

/// Scores every ranking against its ground truth and macro-averages per
/// selector. Selectors appear in order of first occurrence.
pub fn evaluate_selector(rankings: &[SelectorRanking], gts: &[GroundTruth]) -> Result<Vec<SelectorScores>> {
    if rankings.is_empty() {
        return Err(Error::Reference("no rankings to evaluate".into()));
    }
    let by_key: HashMap<(&str, usize), &GroundTruth> = gts
        .iter()
        .map(|g| ((g.experiment_id.as_str(), g.instruction_idx), g))
        .collect();
    let mut order: Vec<&str> = Vec::new();
    let mut sums: HashMap<&str, ([f64; 12], usize)> = HashMap::new();
    for r in rankings {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = r.ranked.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::Domain(format!(
                "selector `{}` ranks `{dup}` twice for {}#{}",
                r.selector_name, r.experiment_id, r.instruction_idx
            )));
        }
        let gt = by_key
            .get(&(r.experiment_id.as_str(), r.instruction_idx))
            .ok_or_else(|| {
                Error::Reference(format!(
                    "no ground truth for instruction {}#{} (selector `{}`)",
                    r.experiment_id, r.instruction_idx, r.selector_name
                ))
            })?;
        let row = score_one(&r.ranked, gt);
        let entry = sums.entry(r.selector_name.as_str()).or_insert_with(|| {
            order.push(r.selector_name.as_str());
            ([0.0; 12], 0)
        });
        for (acc, v) in entry.0.iter_mut().zip(row) {
            *acc += v;
        }
        entry.1 += 1;
    }
    Ok(order
        .into_iter()
        .map(|name| {
            let (total, n) = sums[name];
            SelectorScores {
                selector_name: name.to_string(),
                instructions: n,
                values: total.map(|t| t / n as f64),
            }
        })
        .collect())
}

pub fn write_report_csv<W: Write>(writer: W, rows: &[SelectorScores]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["format_version", "selector", "instructions"];
    header.extend(REPORT_COLUMNS);
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            REPORT_FORMAT_VERSION.to_string(),
            r.selector_name.clone(),
            r.instructions.to_string(),
        ];
        rec.extend(r.values.iter().map(|v| format!("{v:.6}")));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<report>", e))?;
    Ok(())
}

/// Fixed-width text table of the report.
pub fn format_report(rows: &[SelectorScores]) -> String {
    let name_width = rows
        .iter()
        .map(|r| r.selector_name.len())
        .max()
        .unwrap_or(0)
        .max("selector".len());
    let mut out = String::new();
    let _ = write!(out, "{:<name_width$}", "selector");
    for c in REPORT_COLUMNS {
        let _ = write!(out, " {c:>9}");
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<name_width$}", r.selector_name);
        for v in r.values {
            let _ = write!(out, " {v:>9.4}");
        }
        out.push('\n');
    }
    out
}
