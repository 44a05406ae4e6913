//! The governed search loop: stability filter, search, robustness, backtest,
//! and bounded refinement on rejection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::checks::{robustness_check, run_backtest, target_metrics, temporal_slices, BacktestResult};
use super::stability::{pre_search_filter, FeatureSnapshotPair, StabilityVerdict, Thresholds};
use super::{codes, HookReport, Stage};
use crate::error::{Error, Result};
use crate::evaluation::{rank_policies, InstructionKind, InstructionSpec};
use crate::experiment::{ExperimentDataset, MetricEstimate};
use crate::policy::{run_search, PolicyCandidate, SearchConfig, SearchOutput};

pub const RECOMMENDATION_VERSION: u32 = 1;

/// Governance knobs plus the instruction the recommendation must serve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GovernConfig {
    pub kind: InstructionKind,
    pub primary_metric: String,
    #[serde(default)]
    pub secondary_metric: Option<String>,
    /// Features to consider; all dataset features when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    /// Seeds policy sampling and weight draws.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_refinements")]
    pub max_refinements: usize,
    /// Contiguous temporal slices for the robustness check.
    #[serde(default = "default_slices")]
    pub robustness_slices: usize,
}

fn default_refinements() -> usize {
    3
}

fn default_slices() -> usize {
    4
}

impl GovernConfig {
    pub fn new(kind: InstructionKind, primary: &str, secondary: Option<&str>) -> Self {
        GovernConfig {
            kind,
            primary_metric: primary.to_string(),
            secondary_metric: secondary.map(str::to_string),
            features: None,
            seed: 0,
            search: SearchConfig::default(),
            thresholds: Thresholds::default(),
            max_refinements: default_refinements(),
            robustness_slices: default_slices(),
        }
    }

    pub fn instruction(&self, experiment_id: &str) -> InstructionSpec {
        InstructionSpec {
            experiment_id: experiment_id.to_string(),
            instruction_idx: 0,
            kind: self.kind,
            primary_metric: self.primary_metric.clone(),
            secondary_metric: self.secondary_metric.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.search.validate()?;
        self.thresholds.validate()?;
        if self.robustness_slices < super::MIN_SLICES {
            return Err(Error::Config(format!(
                "robustness_slices must be at least {}, got {}",
                super::MIN_SLICES,
                self.robustness_slices
            )));
        }
        self.instruction("").validate().map_err(|e| Error::Config(e.to_string()))
    }
}

/// Data the pipeline runs on.
#[derive(Debug, Clone, Copy)]
pub struct GovernInputs<'a> {
    pub dataset: &'a ExperimentDataset,
    pub snapshots: &'a [FeatureSnapshotPair],
    /// Daily slices of the backtest window, oldest first.
    pub daily: &'a [ExperimentDataset],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentAction {
    pub segment: String,
    pub users: usize,
    pub action: String,
}

/// The policy that survived every hook.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub format_version: u32,
    pub experiment_id: String,
    pub instruction: InstructionSpec,
    pub policy_id: String,
    pub feature: Option<String>,
    pub cut: Option<String>,
    pub segments: Vec<SegmentAction>,
    pub estimates: BTreeMap<String, MetricEstimate>,
    /// Search passes used, 1 when nothing was rejected.
    pub passes: usize,
}

impl Recommendation {
    fn build(
        ds: &ExperimentDataset,
        instruction: InstructionSpec,
        policy: &PolicyCandidate,
        passes: usize,
    ) -> Result<Self> {
        let segments = policy
            .segments(ds)?
            .into_iter()
            .map(|(s, a)| SegmentAction {
                segment: s.describe(),
                users: s.len(),
                action: a.to_string(),
            })
            .collect();
        Ok(Recommendation {
            format_version: RECOMMENDATION_VERSION,
            experiment_id: ds.experiment_id().to_string(),
            instruction,
            policy_id: policy.policy_id.clone(),
            feature: policy.feature().map(str::to_string),
            cut: policy.cut.as_ref().map(|c| c.descriptor()),
            segments,
            estimates: policy.estimates.clone(),
            passes,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GovernOutcome {
    pub trail: Vec<HookReport>,
    pub verdicts: Vec<StabilityVerdict>,
    pub admitted_features: Vec<String>,
    /// The last search pass, if any ran.
    pub search: Option<SearchOutput>,
    pub backtest: Option<BacktestResult>,
    pub recommendation: Option<Recommendation>,
    /// Policies rejected by a hook, in rejection order.
    pub rejected_policies: Vec<String>,
}

impl GovernOutcome {
    pub fn search_passes(&self) -> usize {
        self.recommendation
            .as_ref()
            .map_or(self.rejected_policies.len(), |r| r.passes)
    }
}

/// Runs the governed loop. A hook rejection of the selected policy removes
/// it and searches again, at most `max_refinements` more times. Unstable
/// features are dropped before the first search; if none remain the run
/// ends there without searching.
pub fn govern_pipeline(cfg: &GovernConfig, inputs: GovernInputs<'_>) -> Result<GovernOutcome> {
    cfg.validate()?;
    let ds = inputs.dataset;
    let instruction = cfg.instruction(ds.experiment_id());
    for m in std::iter::once(&instruction.primary_metric).chain(&instruction.secondary_metric) {
        ds.metric_index(m)?;
    }
    let features: Vec<String> = cfg.features.clone().unwrap_or_else(|| ds.features().to_vec());
    let by_feature: BTreeMap<&str, &FeatureSnapshotPair> =
        inputs.snapshots.iter().map(|p| (p.feature.as_str(), p)).collect();
    let mut pairs = Vec::with_capacity(features.len());
    for f in &features {
        ds.feature_index(f)?;
        let pair = by_feature
            .get(f.as_str())
            .ok_or_else(|| Error::Config(format!("no snapshots for feature `{f}`")))?;
        pairs.push((*pair).clone());
    }
    let verdicts = StabilityVerdict::measure_all(&pairs, cfg.thresholds)?;
    let (pre, admitted) = pre_search_filter(&verdicts)?;
    let mut outcome = GovernOutcome {
        trail: vec![pre],
        verdicts,
        admitted_features: admitted,
        search: None,
        backtest: None,
        recommendation: None,
        rejected_policies: Vec::new(),
    };
    if outcome.admitted_features.is_empty() && !features.is_empty() {
        return Ok(outcome);
    }

    let targets = target_metrics(&instruction, ds.metrics());
    let mut excluded = BTreeSet::new();
    for pass in 1..=cfg.max_refinements + 1 {
        let search = run_search(ds, &outcome.admitted_features, &cfg.search, cfg.seed, &excluded)?;
        let frontier = search.frontier_policies();
        let top = rank_policies(&instruction, ds.metrics(), &frontier, 1)?;
        let Some(top) = top.into_iter().next() else {
            outcome.trail.push(HookReport::reject(
                Stage::PostSearch,
                [codes::NO_CANDIDATE],
                [ds.experiment_id().to_string()],
                format!(
                    "no frontier policy satisfies the {:?} instruction after {} rejections",
                    instruction.kind,
                    excluded.len()
                ),
            ));
            outcome.search = Some(search);
            return Ok(outcome);
        };
        let policy = search.table.get(&top).expect("ranked from the table").clone();

        let slices = temporal_slices(&policy, inputs.daily, cfg.robustness_slices);
        let robust = robustness_check(&policy, &targets, &slices)?;
        let robust_ok = robust.is_pass();
        outcome.trail.push(robust);
        if !robust_ok {
            excluded.insert(top.clone());
            outcome.rejected_policies.push(top);
            outcome.search = Some(search);
            continue;
        }

        let backtest = run_backtest(&policy, &targets, inputs.daily)?;
        let backtest_ok = backtest.report.is_pass();
        outcome.trail.push(backtest.report.clone());
        outcome.backtest = Some(backtest);
        if !backtest_ok {
            excluded.insert(top.clone());
            outcome.rejected_policies.push(top);
            outcome.search = Some(search);
            continue;
        }

        outcome.recommendation = Some(Recommendation::build(ds, instruction, &policy, pass)?);
        outcome.search = Some(search);
        return Ok(outcome);
    }
    outcome.trail.push(HookReport::reject(
        Stage::PreRecommendation,
        [codes::REFINEMENT_EXHAUSTED],
        outcome.rejected_policies.clone(),
        format!(
            "refinement budget of {} exhausted; every selected policy was rejected",
            cfg.max_refinements
        ),
    ));
    Ok(outcome)
}

