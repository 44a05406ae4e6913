//! Instruction types and the deterministic ground-truth ranking for each.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontier::{strict_pareto_oracle, Direction};
use crate::policy::{PolicyCandidate, PolicyTable};

/// z-multiplier for "does not significantly regress".
pub const NON_REGRESSION_Z: f64 = 1.96;
/// Lower bound on sigma in z-scores.
pub const SIGMA_FLOOR: f64 = 1e-9;
/// Size of a ground-truth answer set.
pub const GROUND_TRUTH_SIZE: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionKind {
    MaximizeBoth,
    MaximizeWithConstraint,
    TradeoffAnalysis,
    EfficiencyOptimization,
    SingleMetric,
}

impl InstructionKind {
    pub const ALL: [InstructionKind; 5] = [
        InstructionKind::MaximizeBoth,
        InstructionKind::MaximizeWithConstraint,
        InstructionKind::TradeoffAnalysis,
        InstructionKind::EfficiencyOptimization,
        InstructionKind::SingleMetric,
    ];
}

/// A policy-selection task over one experiment's policy table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionSpec {
    pub experiment_id: String,
    pub instruction_idx: usize,
    pub kind: InstructionKind,
    pub primary_metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub secondary_metric: Option<String>,
}

impl InstructionSpec {
    pub fn validate(&self) -> Result<()> {
        use InstructionKind::*;
        match (self.kind, &self.secondary_metric) {
            (MaximizeBoth | MaximizeWithConstraint | TradeoffAnalysis, None) => Err(Error::Domain(
                format!("{:?} needs a secondary metric", self.kind),
            )),
            (SingleMetric, Some(_)) => Err(Error::Domain(
                "single_metric takes exactly one metric".into(),
            )),
            _ => Ok(()),
        }
    }

    fn secondary(&self) -> Result<&str> {
        self.secondary_metric
            .as_deref()
            .ok_or_else(|| Error::Domain(format!("{:?} needs a secondary metric", self.kind)))
    }
}

/// Oracle answer for one instruction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub experiment_id: String,
    pub instruction_idx: usize,
    pub top5: Vec<String>,
}

fn z(p: &PolicyCandidate, metric: &str) -> Result<f64> {
    let e = p.estimate(metric)?;
    Ok(e.mean / e.std_err.max(SIGMA_FLOOR))
}

/// Sorts by descending key, ties by ascending id.
fn by_key_desc(mut scored: Vec<(f64, &PolicyCandidate)>) -> Vec<&PolicyCandidate> {
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.policy_id.cmp(&b.1.policy_id))
    });
    scored.into_iter().map(|(_, p)| p).collect()
}

/// Picks from one Pareto layer: both single-metric extremes, then greedy
/// max-min distance in range-normalized (primary, secondary) space.
fn spread_order<'a>(layer: &[&'a PolicyCandidate], m1: &str, m2: &str) -> Result<Vec<&'a PolicyCandidate>> {
    let mut pts: Vec<(&PolicyCandidate, f64, f64)> = layer
        .iter()
        .map(|p| Ok((*p, p.mean(m1)?, p.mean(m2)?)))
        .collect::<Result<_>>()?;
    pts.sort_by(|a, b| a.0.policy_id.cmp(&b.0.policy_id));
    let range = |sel: fn(&(&PolicyCandidate, f64, f64)) -> f64| {
        let lo = pts.iter().map(sel).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(sel).fold(f64::NEG_INFINITY, f64::max);
        (lo, hi - lo)
    };
    let (lo1, r1) = range(|t| t.1);
    let (lo2, r2) = range(|t| t.2);
    let norm = |v: f64, lo: f64, r: f64| if r > 0.0 { (v - lo) / r } else { 0.0 };
    let coords: Vec<(f64, f64)> = pts
        .iter()
        .map(|t| (norm(t.1, lo1, r1), norm(t.2, lo2, r2)))
        .collect();

    let mut chosen: Vec<usize> = Vec::new();
    let argmax = |key: &dyn Fn(usize) -> f64| -> usize {
        // first index wins ties, and pts is in id order
        let mut best = 0;
        for i in 1..pts.len() {
            if key(i) > key(best) {
                best = i;
            }
        }
        best
    };
    if pts.is_empty() {
        return Ok(Vec::new());
    }
    chosen.push(argmax(&|i| pts[i].1));
    let second = argmax(&|i| pts[i].2);
    if !chosen.contains(&second) {
        chosen.push(second);
    }
    while chosen.len() < pts.len() {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..pts.len() {
            if chosen.contains(&i) {
                continue;
            }
            let d = chosen
                .iter()
                .map(|&c| {
                    let dx = coords[i].0 - coords[c].0;
                    let dy = coords[i].1 - coords[c].1;
                    (dx * dx + dy * dy).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        chosen.push(best.expect("unchosen point").0);
    }
    Ok(chosen.into_iter().map(|i| pts[i].0).collect())
}

fn tradeoff_order<'a>(policies: &[&'a PolicyCandidate], m1: &str, m2: &str, limit: usize) -> Result<Vec<&'a PolicyCandidate>> {
    let dirs: BTreeMap<String, Direction> = [
        (m1.to_string(), Direction::Maximize),
        (m2.to_string(), Direction::Maximize),
    ]
    .into_iter()
    .collect();
    let mut remaining: Vec<&PolicyCandidate> = policies.to_vec();
    let mut out = Vec::new();
    // peel successive Pareto layers until enough policies are ranked
    while out.len() < limit && !remaining.is_empty() {
        let front = strict_pareto_oracle(&remaining, &dirs)?;
        let (layer, rest): (Vec<&PolicyCandidate>, Vec<&PolicyCandidate>) =
            remaining.into_iter().partition(|p| front.contains(&p.policy_id));
        out.extend(spread_order(&layer, m1, m2)?);
        remaining = rest;
    }
    Ok(out)
}

/// Ranks `policies` for an instruction; at most `limit` ids are returned.
///
/// * `single_metric`: primary mean, descending.
/// * `maximize_with_constraint`: policies whose secondary lift satisfies
///   `mean + 1.96 * sigma >= 0`, by primary mean.
/// * `maximize_both`: policies non-negative on both metrics by the sum of
///   their z-scores, then the rest by the same score.
/// * `tradeoff_analysis`: Pareto layers on the two metrics, each ordered
///   extremes first and then by greedy max-min spread.
/// * `efficiency_optimization`: mean z-score over `metrics`.
///
/// Ties go to the smaller policy id.
pub fn rank_policies(
    instr: &InstructionSpec,
    metrics: &[String],
    policies: &[&PolicyCandidate],
    limit: usize,
) -> Result<Vec<String>> {
    instr.validate()?;
    let primary = instr.primary_metric.as_str();
    let ordered: Vec<&PolicyCandidate> = match instr.kind {
        InstructionKind::SingleMetric => by_key_desc(
            policies
                .iter()
                .map(|p| Ok((p.mean(primary)?, *p)))
                .collect::<Result<_>>()?,
        ),
        InstructionKind::MaximizeWithConstraint => {
            let guard = instr.secondary()?;
            let mut scored = Vec::new();
            for p in policies {
                let g = p.estimate(guard)?;
                if g.mean + NON_REGRESSION_Z * g.std_err >= 0.0 {
                    scored.push((p.mean(primary)?, *p));
                }
            }
            by_key_desc(scored)
        }
        InstructionKind::MaximizeBoth => {
            let secondary = instr.secondary()?;
            let mut qualified = Vec::new();
            let mut others = Vec::new();
            for p in policies {
                let score = z(p, primary)? + z(p, secondary)?;
                if p.mean(primary)? >= 0.0 && p.mean(secondary)? >= 0.0 {
                    qualified.push((score, *p));
                } else {
                    others.push((score, *p));
                }
            }
            let mut out = by_key_desc(qualified);
            out.extend(by_key_desc(others));
            out
        }
        InstructionKind::TradeoffAnalysis => {
            tradeoff_order(policies, primary, instr.secondary()?, limit)?
        }
        InstructionKind::EfficiencyOptimization => {
            if metrics.is_empty() {
                return Err(Error::Domain("efficiency ranking needs metrics".into()));
            }
            let mut scored = Vec::new();
            for p in policies {
                let total = metrics.iter().map(|m| z(p, m)).sum::<Result<f64>>()?;
                scored.push((total / metrics.len() as f64, *p));
            }
            by_key_desc(scored)
        }
    };
    Ok(ordered
        .into_iter()
        .take(limit)
        .map(|p| p.policy_id.clone())
        .collect())
}

/// Top-5 answer for `instr` over the whole policy table.
pub fn ground_truth_oracle(instr: &InstructionSpec, table: &PolicyTable) -> Result<GroundTruth> {
    let policies: Vec<&PolicyCandidate> = table.sorted();
    let top5 = rank_policies(instr, &table.metrics, &policies, GROUND_TRUTH_SIZE)?;
    Ok(GroundTruth {
        experiment_id: instr.experiment_id.clone(),
        instruction_idx: instr.instruction_idx,
        top5,
    })
}

impl PartialOrd for GroundTruth {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for GroundTruth {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.experiment_id, self.instruction_idx).cmp(&(&other.experiment_id, other.instruction_idx))
    }
}
