//! Candidate policies: segment-to-action maps over one cut, their lift
//! estimates, and the random-weight Top-K search over them.

mod runner;
mod search;
mod table;

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{segment_hte, ExperimentDataset, MetricEstimate};
use crate::segmentation::{materialize, CutSpec, Segment};
use crate::stats;

pub use search::{
    collect_candidates, sample_weights, scalarized_score, Admission, CandidateSet, WeightVector,
};
pub use runner::{run_search, SearchConfig, SearchOutput};
pub use table::PolicyTable;

/// A partition of users (one cut, or the whole population when `cut` is
/// `None`) with one action per segment slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCandidate {
    pub policy_id: String,
    pub cut: Option<CutSpec>,
    /// Action per segment slot; control is allowed.
    pub assignment: Vec<String>,
    /// Lift per metric id. Empty until [`evaluate_policy`] runs.
    pub estimates: BTreeMap<String, MetricEstimate>,
}

impl PolicyCandidate {
    /// Unevaluated policy with a canonical id.
    pub fn new(cut: Option<CutSpec>, assignment: Vec<String>) -> Self {
        PolicyCandidate {
            policy_id: policy_id(cut.as_ref(), &assignment),
            cut,
            assignment,
            estimates: BTreeMap::new(),
        }
    }

    /// Single-segment policy applying `action` to everyone.
    pub fn global(action: impl Into<String>) -> Self {
        Self::new(None, vec![action.into()])
    }

    pub fn is_global(&self) -> bool {
        self.cut.is_none()
    }

    /// Feature the policy segments on, if any.
    pub fn feature(&self) -> Option<&str> {
        self.cut.as_ref().map(|c| c.feature.as_str())
    }

    pub fn estimate(&self, metric: &str) -> Result<&MetricEstimate> {
        self.estimates.get(metric).ok_or_else(|| {
            Error::Domain(format!(
                "policy `{}` has no estimate for metric `{metric}`",
                self.policy_id
            ))
        })
    }

    pub fn mean(&self, metric: &str) -> Result<f64> {
        self.estimate(metric).map(|e| e.mean)
    }

    /// Segment slots and their actions, materialized on `ds`.
    pub fn segments(&self, ds: &ExperimentDataset) -> Result<Vec<(Segment, &str)>> {
        let segments = match &self.cut {
            None => vec![Segment::whole(ds)],
            Some(cut) => materialize(ds, cut)?,
        };
        if segments.len() != self.assignment.len() {
            return Err(Error::Config(format!(
                "policy `{}` assigns {} actions to {} segment slots",
                self.policy_id,
                self.assignment.len(),
                segments.len()
            )));
        }
        Ok(segments
            .into_iter()
            .zip(self.assignment.iter().map(String::as_str))
            .collect())
    }
}

/// Canonical id: `global/<action>` or `<feature>/<cut descriptor>/<a1+a2+...>`.
pub fn policy_id(cut: Option<&CutSpec>, assignment: &[String]) -> String {
    match cut {
        None => format!("global/{}", assignment.join("+")),
        Some(cut) => format!("{}/{}/{}", cut.feature, cut.descriptor(), assignment.join("+")),
    }
}

/// Candidate policies for every cut.
///
/// One global policy per action (control included) is always emitted; the
/// all-control one is the reference. Each cut then contributes its
/// non-uniform assignments, which are all of them when there are at most
/// `budget`, otherwise a seeded sample of `budget` drawn without replacement.
/// Uniform assignments are left out because the global policies cover them.
pub fn enumerate_policies(
    ds: &ExperimentDataset,
    cuts: &[CutSpec],
    actions: &[String],
    budget: usize,
    seed: u64,
) -> Result<Vec<PolicyCandidate>> {
    if budget < 1 {
        return Err(Error::Config("policy budget must be at least 1".into()));
    }
    if actions.is_empty() {
        return Err(Error::Config("at least one action is required".into()));
    }
    let mut arms: Vec<String> = vec![ds.control().to_string()];
    for a in actions {
        ds.action_code(a)?;
        if !arms.contains(a) {
            arms.push(a.clone());
        }
    }

    let mut out: Vec<PolicyCandidate> = arms.iter().map(|a| PolicyCandidate::global(a.clone())).collect();
    let mut seen = BTreeSet::new();
    for (cut_idx, cut) in cuts.iter().enumerate() {
        cut.validate()?;
        ds.feature_index(&cut.feature)?;
        if !seen.insert(cut.clone()) {
            continue;
        }
        let slots = cut.slot_count();
        let n_arms = arms.len();
        let total = u32::try_from(slots)
            .ok()
            .and_then(|s| n_arms.checked_pow(s))
            .ok_or_else(|| {
                Error::Config(format!("cut `{}` has too many assignments", cut.descriptor()))
            })?;
        let non_uniform = total - n_arms;
        let mut indices: Vec<usize> = if non_uniform <= budget {
            (0..total).filter(|&i| !is_uniform(i, n_arms, slots)).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(stats::mix_seed(seed, cut_idx as u64));
            let draw = (budget + n_arms).min(total);
            rand::seq::index::sample(&mut rng, total, draw)
                .into_iter()
                .filter(|&i| !is_uniform(i, n_arms, slots))
                .take(budget)
                .collect()
        };
        indices.sort_unstable();
        for i in indices {
            let assignment = decode(i, n_arms, slots)
                .into_iter()
                .map(|a| arms[a].clone())
                .collect();
            out.push(PolicyCandidate::new(Some(cut.clone()), assignment));
        }
    }
    Ok(out)
}

/// Base-`n_arms` digits of `index`, most significant slot first.
fn decode(mut index: usize, n_arms: usize, slots: usize) -> Vec<usize> {
    let mut digits = vec![0; slots];
    for d in digits.iter_mut().rev() {
        *d = index % n_arms;
        index /= n_arms;
    }
    digits
}

fn is_uniform(index: usize, n_arms: usize, slots: usize) -> bool {
    let digits = decode(index, n_arms, slots);
    digits.iter().all(|&d| d == digits[0])
}

/// Fills in per-metric estimates.
///
/// The policy lift is the size-weighted sum of segment lifts and its standard
/// error combines the segment errors as independent terms. Segments assigned
/// control contribute zero; empty segments carry zero weight.
pub fn evaluate_policy(ds: &ExperimentDataset, policy: &PolicyCandidate) -> Result<PolicyCandidate> {
    let slots = policy.segments(ds)?;
    let n_total = ds.len() as f64;
    let mut estimates = BTreeMap::new();
    for metric in ds.metrics() {
        let mut means = Vec::with_capacity(slots.len());
        let mut variances = Vec::with_capacity(slots.len());
        let mut n_treated = 0;
        let mut n_control = 0;
        for (slot, (segment, action)) in slots.iter().enumerate() {
            if segment.is_empty() || *action == ds.control() {
                continue;
            }
            let est = segment_hte(ds, segment, action, metric).map_err(|e| {
                Error::Estimation(format!(
                    "policy `{}` slot {slot} ({}): {e}",
                    policy.policy_id,
                    segment.describe()
                ))
            })?;
            let w = segment.len() as f64 / n_total;
            means.push(w * est.mean);
            variances.push(w * w * est.std_err * est.std_err);
            n_treated += est.n_treated;
            n_control += est.n_control;
        }
        estimates.insert(
            metric.clone(),
            MetricEstimate {
                mean: stats::sum(means),
                std_err: stats::sum(variances).sqrt(),
                n_treated,
                n_control,
            },
        );
    }
    Ok(PolicyCandidate {
        estimates,
        ..policy.clone()
    })
}

/// Evaluates policies in parallel, dropping those without arm support in
/// some segment. Returns the evaluated policies (input order) and the ids of
/// the dropped ones.
pub fn evaluate_all(
    ds: &ExperimentDataset,
    policies: &[PolicyCandidate],
) -> (Vec<PolicyCandidate>, Vec<String>) {
    let results: Vec<Result<PolicyCandidate>> =
        policies.par_iter().map(|p| evaluate_policy(ds, p)).collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut dropped = Vec::new();
    for (p, r) in policies.iter().zip(results) {
        match r {
            Ok(e) => ok.push(e),
            Err(_) => dropped.push(p.policy_id.clone()),
        }
    }
    (ok, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{compute_ate, LiftUnit, UserRecord};

    /// 8 users with x = 1..8; treated/control alternate; outcome chosen so
    /// the lower half has lift +2 and the upper half lift -2.
    fn split_effect_dataset() -> ExperimentDataset {
        let mut users = Vec::new();
        for i in 1..=8 {
            let treated = i % 2 == 0;
            let lift = if i <= 4 { 2.0 } else { -2.0 };
            users.push(UserRecord {
                user_id: format!("u{i}"),
                features: vec![i as f64],
                arm: if treated { "t1" } else { "control" }.into(),
                outcomes: vec![if treated { lift } else { 0.0 }, i as f64],
            });
        }
        ExperimentDataset::new(
            "e",
            "control",
            vec!["x".into()],
            vec!["m1".into(), "m2".into()],
            LiftUnit::Absolute,
            users,
        )
        .unwrap()
    }

    fn arms(ds: &ExperimentDataset) -> Vec<String> {
        ds.all_actions()
    }

    #[test]
    fn binary_cut_gives_four_policies() {
        let ds = split_effect_dataset();
        let cuts = vec![CutSpec::binary("x", 1, 2)];
        let ps = enumerate_policies(&ds, &cuts, &arms(&ds), 100, 1).unwrap();
        assert_eq!(ps.len(), 4);
        let ids: BTreeSet<_> = ps.iter().map(|p| p.policy_id.clone()).collect();
        assert_eq!(ids.len(), 4);
        assert!(ids.contains("global/control"));
        assert!(ids.contains("x/binary:1:2/control+t1"));
    }

    #[test]
    fn budget_clamps_and_keeps_reference() {
        let ds = split_effect_dataset();
        let cuts = vec![CutSpec::individual("x", 4)];
        let ps = enumerate_policies(&ds, &cuts, &arms(&ds), 10, 9).unwrap();
        let from_cut = ps.iter().filter(|p| p.cut.is_some()).count();
        assert_eq!(from_cut, 10);
        assert!(ps.iter().any(|p| p.policy_id == "global/control"));
        let again = enumerate_policies(&ds, &cuts, &arms(&ds), 10, 9).unwrap();
        assert_eq!(ps, again);
        let ids: BTreeSet<_> = ps.iter().map(|p| &p.policy_id).collect();
        assert_eq!(ids.len(), ps.len());
    }

    #[test]
    fn no_cuts_gives_one_global_per_action() {
        let ds = split_effect_dataset();
        let ps = enumerate_policies(&ds, &[], &arms(&ds), 5, 0).unwrap();
        assert_eq!(ps.len(), 2);
        assert!(ps.iter().all(PolicyCandidate::is_global));
    }

    #[test]
    fn zero_budget_is_config_error() {
        let ds = split_effect_dataset();
        assert!(matches!(
            enumerate_policies(&ds, &[], &arms(&ds), 0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn all_control_policy_has_zero_lift() {
        let ds = split_effect_dataset();
        let p = evaluate_policy(&ds, &PolicyCandidate::global("control")).unwrap();
        for e in p.estimates.values() {
            assert_eq!(e.mean, 0.0);
            assert_eq!(e.std_err, 0.0);
        }
    }

    #[test]
    fn global_policy_equals_ate() {
        let ds = split_effect_dataset();
        let p = evaluate_policy(&ds, &PolicyCandidate::global("t1")).unwrap();
        for m in ds.metrics() {
            let ate = compute_ate(&ds, "t1", m).unwrap();
            assert_eq!(p.estimates[m].mean, ate.mean);
            assert_eq!(p.estimates[m].std_err, ate.std_err);
        }
    }

    #[test]
    fn opposite_halves_cancel() {
        let ds = split_effect_dataset();
        let p = PolicyCandidate::new(
            Some(CutSpec::binary("x", 1, 2)),
            vec!["t1".into(), "t1".into()],
        );
        let p = evaluate_policy(&ds, &p).unwrap();
        assert_eq!(p.estimates["m1"].mean, 0.0);

        let cohort = PolicyCandidate::new(
            Some(CutSpec::binary("x", 1, 2)),
            vec!["t1".into(), "control".into()],
        );
        let cohort = evaluate_policy(&ds, &cohort).unwrap();
        // lower half: lift 2 with weight 1/2
        assert_eq!(cohort.estimates["m1"].mean, 1.0);
    }

    #[test]
    fn unsupported_segment_names_slot() {
        let ds = split_effect_dataset();
        // 8 bins: each segment holds one user, so one arm is always missing
        let p = PolicyCandidate::new(
            Some(CutSpec::individual("x", 8)),
            vec!["t1".to_string(); 8],
        );
        let err = evaluate_policy(&ds, &p).unwrap_err();
        assert!(matches!(err, Error::Estimation(ref m) if m.contains("slot 0")), "{err}");
    }

    #[test]
    fn decode_and_uniform() {
        assert_eq!(decode(5, 2, 3), vec![1, 0, 1]);
        assert!(is_uniform(0, 3, 2));
        assert!(is_uniform(8, 3, 2));
        assert!(!is_uniform(1, 3, 2));
    }
}
