//! Experiment data model and treatment-effect estimators.
//!
//! An [`ExperimentDataset`] holds one randomized experiment: every user carries
//! the same ordered feature vector and metric vector and belongs to exactly one
//! arm. Users are stored sorted by id, so estimator output never depends on
//! the order rows arrived in.

mod ingest;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segmentation::Segment;
use crate::stats;

pub use ingest::{
    ingest, ingest_jsonl, ingest_reader_csv, parse_percent_estimate, read_stored_estimates,
    write_dataset_csv, IngestConfig, InputFormat, StoredEstimate,
};

/// Whether metric outcomes (and therefore lifts) are absolute values or
/// relative percentages. The engine never converts between the two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftUnit {
    #[default]
    Absolute,
    RelativePercent,
}

/// One user of the experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRecord {
    pub user_id: String,
    /// Feature values in the dataset's feature order.
    pub features: Vec<f64>,
    /// Arm (action identifier) the user was randomized into.
    pub arm: String,
    /// Metric outcomes in the dataset's metric order.
    pub outcomes: Vec<f64>,
}

/// Estimated lift of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub n_treated: usize,
    pub n_control: usize,
}

impl MetricEstimate {
    /// Estimate with no sample counts, e.g. parsed from a stored report.
    pub fn from_summary(mean: f64, std_err: f64) -> Self {
        MetricEstimate {
            mean,
            std_err,
            n_treated: 0,
            n_control: 0,
        }
    }

    /// The all-zero estimate of comparing control with itself.
    pub(crate) fn null(n: usize) -> Self {
        MetricEstimate {
            mean: 0.0,
            std_err: 0.0,
            n_treated: n,
            n_control: n,
        }
    }

    /// `|mean| >= z * std_err`.
    pub fn is_significant(&self, z: f64) -> bool {
        self.mean.abs() >= z * self.std_err
    }
}

/// A validated, immutable randomized experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDataset {
    experiment_id: String,
    control: String,
    actions: Vec<String>,
    metrics: Vec<String>,
    features: Vec<String>,
    lift_unit: LiftUnit,
    users: Vec<UserRecord>,
    /// Per user: 0 for control, j for `actions[j - 1]`.
    arm_codes: Vec<usize>,
}

impl ExperimentDataset {
    /// Validates the records and builds a dataset.
    ///
    /// Treatment actions are the distinct non-control arms, sorted. Users are
    /// reordered by id.
    pub fn new(
        experiment_id: impl Into<String>,
        control: impl Into<String>,
        features: Vec<String>,
        metrics: Vec<String>,
        lift_unit: LiftUnit,
        mut users: Vec<UserRecord>,
    ) -> Result<Self> {
        let control = control.into();
        check_unique("feature", &features)?;
        check_unique("metric", &metrics)?;
        for (row, u) in users.iter().enumerate() {
            if u.features.len() != features.len() {
                return Err(Error::Row {
                    row: row + 1,
                    message: format!(
                        "user `{}` has {} feature values, expected {}",
                        u.user_id,
                        u.features.len(),
                        features.len()
                    ),
                });
            }
            if u.outcomes.len() != metrics.len() {
                return Err(Error::Row {
                    row: row + 1,
                    message: format!(
                        "user `{}` has {} outcomes, expected {}",
                        u.user_id,
                        u.outcomes.len(),
                        metrics.len()
                    ),
                });
            }
            if let Some(v) = u.features.iter().chain(&u.outcomes).find(|v| !v.is_finite()) {
                return Err(Error::Row {
                    row: row + 1,
                    message: format!("user `{}` has non-finite value {v}", u.user_id),
                });
            }
        }
        users.sort_by(|a, b| a.user_id.cmp(&b.user_id));
        for pair in users.windows(2) {
            if pair[0].user_id == pair[1].user_id {
                let msg = if pair[0].arm != pair[1].arm {
                    format!(
                        "user `{}` appears in arms `{}` and `{}`",
                        pair[0].user_id, pair[0].arm, pair[1].arm
                    )
                } else {
                    format!("user `{}` appears twice", pair[0].user_id)
                };
                return Err(Error::Integrity(msg));
            }
        }
        let actions: Vec<String> = users
            .iter()
            .filter(|u| u.arm != control)
            .map(|u| u.arm.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let arm_codes = users
            .iter()
            .map(|u| {
                if u.arm == control {
                    0
                } else {
                    actions.binary_search(&u.arm).map(|i| i + 1).unwrap_or(0)
                }
            })
            .collect();
        Ok(ExperimentDataset {
            experiment_id: experiment_id.into(),
            control,
            actions,
            metrics,
            features,
            lift_unit,
            users,
            arm_codes,
        })
    }

    pub fn experiment_id(&self) -> &str {
        &self.experiment_id
    }

    /// Control action identifier.
    pub fn control(&self) -> &str {
        &self.control
    }

    /// Treatment actions, excluding control.
    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    /// Control followed by every treatment action.
    pub fn all_actions(&self) -> Vec<String> {
        std::iter::once(self.control.clone())
            .chain(self.actions.iter().cloned())
            .collect()
    }

    pub fn metrics(&self) -> &[String] {
        &self.metrics
    }

    pub fn features(&self) -> &[String] {
        &self.features
    }

    pub fn lift_unit(&self) -> LiftUnit {
        self.lift_unit
    }

    /// Users in ascending id order.
    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn feature_index(&self, feature: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f == feature)
            .ok_or_else(|| Error::Domain(format!("unknown feature `{feature}`")))
    }

    pub fn metric_index(&self, metric: &str) -> Result<usize> {
        self.metrics
            .iter()
            .position(|m| m == metric)
            .ok_or_else(|| Error::Domain(format!("unknown metric `{metric}`")))
    }

    /// 0 for control, j for the j-th treatment action.
    pub fn action_code(&self, action: &str) -> Result<usize> {
        if action == self.control {
            return Ok(0);
        }
        self.actions
            .binary_search_by(|a| a.as_str().cmp(action))
            .map(|i| i + 1)
            .map_err(|_| Error::Domain(format!("unknown action `{action}`")))
    }

    /// Arm code of the user at `index` (see [`Self::action_code`]).
    pub fn arm_code(&self, index: usize) -> usize {
        self.arm_codes[index]
    }

    /// Values of one feature, in user order.
    pub fn feature_values(&self, feature_idx: usize) -> Vec<f64> {
        self.users.iter().map(|u| u.features[feature_idx]).collect()
    }

    /// Number of users per arm, control first.
    pub fn arm_sizes(&self) -> Vec<(String, usize)> {
        let mut counts = vec![0usize; self.actions.len() + 1];
        for &c in &self.arm_codes {
            counts[c] += 1;
        }
        self.all_actions().into_iter().zip(counts).collect()
    }

    /// Compares `action` with control over the users at `members`
    /// (ascending indices).
    fn estimate_over(
        &self,
        members: impl Iterator<Item = usize>,
        action: &str,
        metric: &str,
        scope: &str,
    ) -> Result<MetricEstimate> {
        let code = self.action_code(action)?;
        let m = self.metric_index(metric)?;
        let mut treated = Vec::new();
        let mut control = Vec::new();
        for i in members {
            let arm = self.arm_codes[i];
            let y = self.users[i].outcomes[m];
            if arm == 0 {
                control.push(y);
            }
            if code != 0 && arm == code {
                treated.push(y);
            }
        }
        if control.is_empty() {
            return Err(Error::Estimation(format!(
                "control arm `{}` has no users in {scope}",
                self.control
            )));
        }
        if code == 0 {
            return Ok(MetricEstimate::null(control.len()));
        }
        if treated.is_empty() {
            return Err(Error::Estimation(format!(
                "treatment arm `{action}` has no users in {scope}"
            )));
        }
        let (mt, vt) = stats::mean_var(&treated).expect("non-empty");
        let (mc, vc) = stats::mean_var(&control).expect("non-empty");
        let nt = treated.len() as f64;
        let nc = control.len() as f64;
        Ok(MetricEstimate {
            mean: mt - mc,
            std_err: (vt / nt + vc / nc).sqrt(),
            n_treated: treated.len(),
            n_control: control.len(),
        })
    }
}

fn check_unique(kind: &str, names: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(Error::Config(format!("duplicate {kind} `{n}`")));
        }
    }
    Ok(())
}

/// Average treatment effect of `action` against control on `metric`, with the
/// unpooled two-sample standard error.
pub fn compute_ate(ds: &ExperimentDataset, action: &str, metric: &str) -> Result<MetricEstimate> {
    ds.estimate_over(0..ds.len(), action, metric, "the population")
}

/// Treatment effect restricted to the members of `segment`.
pub fn segment_hte(
    ds: &ExperimentDataset,
    segment: &Segment,
    action: &str,
    metric: &str,
) -> Result<MetricEstimate> {
    if let Some(&last) = segment.members.last() {
        if last >= ds.len() {
            return Err(Error::Domain(format!(
                "segment {} was materialized against a different dataset",
                segment.describe()
            )));
        }
    }
    ds.estimate_over(
        segment.members.iter().copied(),
        action,
        metric,
        &format!("segment {}", segment.describe()),
    )
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn user(id: &str, arm: &str, x: f64, y: f64) -> UserRecord {
        UserRecord {
            user_id: id.to_string(),
            features: vec![x],
            arm: arm.to_string(),
            outcomes: vec![y],
        }
    }

    pub fn one_metric(users: Vec<UserRecord>) -> ExperimentDataset {
        ExperimentDataset::new(
            "exp",
            "control",
            vec!["x".into()],
            vec!["m".into()],
            LiftUnit::Absolute,
            users,
        )
        .unwrap()
    }

    #[test]
    fn ate_identical_distributions_is_zero() {
        let ds = one_metric(vec![
            user("a", "t1", 0.0, 1.0),
            user("b", "t1", 0.0, 3.0),
            user("c", "control", 0.0, 1.0),
            user("d", "control", 0.0, 3.0),
        ]);
        let est = compute_ate(&ds, "t1", "m").unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.n_treated, 2);
        assert_eq!(est.n_control, 2);
    }

    #[test]
    fn ate_shifted_by_one() {
        let ds = one_metric(vec![
            user("a", "t1", 0.0, 2.0),
            user("b", "t1", 0.0, 4.0),
            user("c", "control", 0.0, 1.0),
            user("d", "control", 0.0, 3.0),
        ]);
        let est = compute_ate(&ds, "t1", "m").unwrap();
        assert_eq!(est.mean, 1.0);
        // var_t = var_c = 2, n = 2 each: sqrt(1 + 1)
        assert!((est.std_err - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_arm_is_an_estimation_error() {
        let ds = one_metric(vec![user("a", "t1", 0.0, 2.0), user("b", "t1", 0.0, 4.0)]);
        let err = compute_ate(&ds, "t1", "m").unwrap_err();
        assert!(matches!(err, Error::Estimation(ref m) if m.contains("control")));
    }

    #[test]
    fn user_in_two_arms_is_rejected() {
        let err = ExperimentDataset::new(
            "exp",
            "control",
            vec!["x".into()],
            vec!["m".into()],
            LiftUnit::Absolute,
            vec![user("a", "t1", 0.0, 1.0), user("a", "control", 0.0, 1.0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let err = ExperimentDataset::new(
            "exp",
            "control",
            vec!["x".into()],
            vec!["m".into()],
            LiftUnit::Absolute,
            vec![user("a", "t1", f64::NAN, 1.0)],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Row { row: 1, .. }));
    }

    #[test]
    fn control_vs_control_is_null() {
        let ds = one_metric(vec![user("a", "t1", 0.0, 2.0), user("c", "control", 0.0, 1.0)]);
        let est = compute_ate(&ds, "control", "m").unwrap();
        assert_eq!(est.mean, 0.0);
        assert_eq!(est.std_err, 0.0);
    }

    #[test]
    fn actions_are_sorted_and_exclude_control() {
        let ds = one_metric(vec![
            user("a", "t2", 0.0, 2.0),
            user("b", "t1", 0.0, 2.0),
            user("c", "control", 0.0, 1.0),
        ]);
        assert_eq!(ds.actions(), &["t1".to_string(), "t2".to_string()]);
        assert_eq!(ds.action_code("t2").unwrap(), 2);
        assert_eq!(ds.arm_sizes()[0], ("control".to_string(), 1));
    }
}
