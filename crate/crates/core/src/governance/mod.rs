//! Validation hooks around the search: feature stability before it,
//! robustness after it, and a backtest before anything is recommended.
//!
//! Hooks only emit verdicts. They never touch policy estimates.

mod checks;
mod pipeline;
mod stability;

use serde::{Deserialize, Serialize};

pub use checks::{
    pool_estimates, robustness_check, run_backtest, target_metrics, temporal_slices, BacktestDay,
    BacktestResult,
    MIN_BACKTEST_DAYS, MIN_SLICES,
};
pub use pipeline::{
    govern_pipeline, GovernConfig, GovernInputs, GovernOutcome, Recommendation, SegmentAction,
};
pub use stability::{
    pre_search_filter, read_snapshots_csv, shift_ratio, stability_verdict, FeatureSnapshotPair,
    ShiftCut, StabilityStatus, StabilityVerdict, Thresholds, write_snapshots_csv,
};

pub const HOOK_REPORT_VERSION: u32 = 1;

/// Machine-readable reason codes carried by hook reports.
pub mod codes {
    pub const FEATURE_UNSTABLE: &str = "FEATURE_UNSTABLE";
    pub const NO_STABLE_FEATURES: &str = "NO_STABLE_FEATURES";
    pub const SIGN_FLIP: &str = "SIGN_FLIP";
    pub const NOT_SIGNIFICANT: &str = "NOT_SIGNIFICANT";
    pub const BACKTEST_DRIFT: &str = "BACKTEST_DRIFT";
    pub const BACKTEST_SIGN_FLIP: &str = "BACKTEST_SIGN_FLIP";
    pub const NO_CANDIDATE: &str = "NO_CANDIDATE";
    pub const REFINEMENT_EXHAUSTED: &str = "REFINEMENT_EXHAUSTED";
    /// Warning only: a daily slice could not be evaluated and was skipped.
    pub const EMPTY_SLICE: &str = "EMPTY_SLICE";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    PreSearch,
    PostSearch,
    PreRecommendation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Reject,
}

/// Outcome of one hook invocation; one line of the audit trail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HookReport {
    pub format_version: u32,
    pub stage: Stage,
    pub verdict: Verdict,
    pub reason_codes: Vec<String>,
    pub entities: Vec<String>,
    pub narrative: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl HookReport {
    pub fn pass(stage: Stage, narrative: impl Into<String>) -> Self {
        HookReport {
            format_version: HOOK_REPORT_VERSION,
            stage,
            verdict: Verdict::Pass,
            reason_codes: Vec::new(),
            entities: Vec::new(),
            narrative: narrative.into(),
            warnings: Vec::new(),
        }
    }

    /// A rejection. Codes and entities are deduplicated, first occurrence wins.
    pub fn reject(
        stage: Stage,
        codes: impl IntoIterator<Item = impl Into<String>>,
        entities: impl IntoIterator<Item = impl Into<String>>,
        narrative: impl Into<String>,
    ) -> Self {
        HookReport {
            format_version: HOOK_REPORT_VERSION,
            stage,
            verdict: Verdict::Reject,
            reason_codes: dedup(codes),
            entities: dedup(entities),
            narrative: narrative.into(),
            warnings: Vec::new(),
        }
    }

    pub fn is_pass(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn dedup(items: impl IntoIterator<Item = impl Into<String>>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        let s = s.into();
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}
