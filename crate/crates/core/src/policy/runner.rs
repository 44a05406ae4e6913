//! One complete search pass: cuts, policies, estimates, weighted Top-K, and
//! the tolerance frontier.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{collect_candidates, enumerate_policies, evaluate_all, sample_weights, CandidateSet, PolicyTable};
use crate::error::{Error, Result};
use crate::experiment::ExperimentDataset;
use crate::frontier::{tolerance_filter, FrontierResult, ToleranceConfig};
use crate::segmentation::{enumerate_cuts, CutEnumerationConfig, CutFamily};
use crate::stats::mix_seed;

/// Search knobs. Every metric is maximized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Quantile buckets per cut.
    #[serde(rename = "N")]
    pub bins: usize,
    pub kinds: Vec<CutFamily>,
    /// Assignment budget per cut.
    pub budget: usize,
    /// Number of random weight vectors, `W`.
    pub weight_samples: usize,
    /// Policies kept per weight vector, `K`.
    pub top_k: usize,
    pub tau: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            bins: 4,
            kinds: vec![CutFamily::Individual, CutFamily::Binary],
            budget: 64,
            weight_samples: 1000,
            top_k: 5,
            tau: 1.0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 1 {
            return Err(Error::Config("N must be at least 1".into()));
        }
        if self.budget < 1 {
            return Err(Error::Config("budget must be at least 1".into()));
        }
        if self.weight_samples < 1 {
            return Err(Error::Config("weight_samples must be at least 1".into()));
        }
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau must be finite and >= 0, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Everything a search pass produces.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutput {
    /// Every policy that could be evaluated.
    pub table: PolicyTable,
    /// Policies without arm support in some segment.
    pub dropped: Vec<String>,
    pub candidates: CandidateSet,
    pub frontier: FrontierResult,
}

impl SearchOutput {
    /// Frontier policies, ascending id.
    pub fn frontier_policies(&self) -> Vec<&super::PolicyCandidate> {
        self.frontier
            .admitted
            .iter()
            .filter_map(|id| self.table.get(id))
            .collect()
    }
}

/// Runs a search over `features`, skipping any policy id in `exclude`.
/// Enumeration and weight sampling use independent streams derived from
/// `seed`, so excluding a policy never changes which others are drawn.
pub fn run_search(
    ds: &ExperimentDataset,
    features: &[String],
    cfg: &SearchConfig,
    seed: u64,
    exclude: &BTreeSet<String>,
) -> Result<SearchOutput> {
    cfg.validate()?;
    let cuts = if features.is_empty() {
        Vec::new()
    } else {
        enumerate_cuts(
            ds,
            &CutEnumerationConfig {
                features: features.to_vec(),
                bins: cfg.bins,
                kinds: cfg.kinds.clone(),
            },
        )?
    };
    let mut policies = enumerate_policies(ds, &cuts, ds.actions(), cfg.budget, mix_seed(seed, 1))?;
    policies.retain(|p| !exclude.contains(&p.policy_id));
    let (evaluated, dropped) = evaluate_all(ds, &policies);
    let metrics = ds.metrics().to_vec();
    let weights = sample_weights(metrics.len(), cfg.weight_samples, mix_seed(seed, 2))?;
    let candidates = collect_candidates(&evaluated, &metrics, &weights, cfg.top_k)?;
    let table = PolicyTable {
        experiment_id: ds.experiment_id().to_string(),
        metrics: metrics.clone(),
        policies: evaluated,
    };
    let chosen: Vec<_> = candidates
        .policies
        .iter()
        .filter_map(|id| table.get(id))
        .collect();
    let frontier = tolerance_filter(&chosen, &ToleranceConfig::maximize(cfg.tau, &metrics)?)?;
    Ok(SearchOutput {
        table,
        dropped,
        candidates,
        frontier,
    })
}
