//! Tolerance-based Pareto filtering of collected candidates.
//!
//! `q` tolerance-dominates `p` when `q` is no worse than `p` by more than
//! `tau * sigma_m(p)` on every metric and better than `p` by more than
//! `tau * sigma_m(p)` on at least one. The margin comes from the dominated
//! policy's own uncertainty, so the relation is not symmetric. Metrics to be
//! minimized are sign-flipped before the test.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::PolicyCandidate;

pub const FRONTIER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToleranceConfig {
    pub tau: f64,
    /// Direction per metric id; every compared metric must appear here.
    pub directions: BTreeMap<String, Direction>,
}

impl ToleranceConfig {
    pub fn new(tau: f64, directions: BTreeMap<String, Direction>) -> Result<Self> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tolerance must be finite and >= 0, got {tau}")));
        }
        if directions.is_empty() {
            return Err(Error::Config("tolerance config needs at least one metric".into()));
        }
        Ok(ToleranceConfig { tau, directions })
    }

    /// Every metric maximized.
    pub fn maximize(tau: f64, metrics: &[String]) -> Result<Self> {
        Self::new(
            tau,
            metrics.iter().map(|m| (m.clone(), Direction::Maximize)).collect(),
        )
    }
}

/// Outcome of the tolerance filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierResult {
    pub format_version: u32,
    pub tau: f64,
    /// Admitted ids, ascending.
    pub admitted: Vec<String>,
    /// Rejected id -> first dominating id in ascending id order.
    pub dominated_by: BTreeMap<String, String>,
}

impl FrontierResult {
    pub fn is_admitted(&self, id: &str) -> bool {
        self.admitted.binary_search_by(|a| a.as_str().cmp(id)).is_ok()
    }
}

/// Direction-adjusted (mean, std_err) per configured metric.
fn oriented(p: &PolicyCandidate, cfg: &ToleranceConfig) -> Result<Vec<(f64, f64)>> {
    cfg.directions
        .iter()
        .map(|(m, d)| {
            let e = p.estimates.get(m).ok_or_else(|| {
                Error::Domain(format!("policy `{}` lacks mean/std_err for `{m}`", p.policy_id))
            })?;
            Ok((d.sign() * e.mean, e.std_err))
        })
        .collect()
}

fn dominates_oriented(q: &[(f64, f64)], p: &[(f64, f64)], tau: f64) -> bool {
    let mut strictly_better = false;
    for (&(mq, _), &(mp, sp)) in q.iter().zip(p) {
        let eps = tau * sp;
        if mq < mp - eps {
            return false;
        }
        if mq > mp + eps {
            strictly_better = true;
        }
    }
    strictly_better
}

/// `q ≻_τ p`.
pub fn tolerance_dominates(q: &PolicyCandidate, p: &PolicyCandidate, cfg: &ToleranceConfig) -> Result<bool> {
    Ok(dominates_oriented(&oriented(q, cfg)?, &oriented(p, cfg)?, cfg.tau))
}

/// Rejects every candidate tolerance-dominated by another candidate.
pub fn tolerance_filter(candidates: &[&PolicyCandidate], cfg: &ToleranceConfig) -> Result<FrontierResult> {
    let mut sorted: Vec<&PolicyCandidate> = candidates.to_vec();
    sorted.sort_by(|a, b| a.policy_id.cmp(&b.policy_id));
    if let Some(w) = sorted.windows(2).find(|w| w[0].policy_id == w[1].policy_id) {
        return Err(Error::Domain(format!("duplicate candidate `{}`", w[0].policy_id)));
    }
    let vectors = sorted
        .iter()
        .map(|p| oriented(p, cfg))
        .collect::<Result<Vec<_>>>()?;
    let dominators: Vec<Option<usize>> = (0..sorted.len())
        .into_par_iter()
        .map(|i| {
            (0..sorted.len()).find(|&j| j != i && dominates_oriented(&vectors[j], &vectors[i], cfg.tau))
        })
        .collect();
    let mut admitted = Vec::new();
    let mut dominated_by = BTreeMap::new();
    for (p, dom) in sorted.iter().zip(dominators) {
        match dom {
            None => admitted.push(p.policy_id.clone()),
            Some(j) => {
                dominated_by.insert(p.policy_id.clone(), sorted[j].policy_id.clone());
            }
        }
    }
    Ok(FrontierResult {
        format_version: FRONTIER_FORMAT_VERSION,
        tau: cfg.tau,
        admitted,
        dominated_by,
    })
}

/// Brute-force set of policies not Pareto-dominated (>= on every metric and
/// > on one) by any other. Reference implementation for [`tolerance_filter`].
pub fn strict_pareto_oracle(
    policies: &[&PolicyCandidate],
    directions: &BTreeMap<String, Direction>,
) -> Result<BTreeSet<String>> {
    let mut values = Vec::with_capacity(policies.len());
    for p in policies {
        let mut v = Vec::with_capacity(directions.len());
        for (m, d) in directions {
            let mean = p.mean(m)?;
            v.push(if *d == Direction::Minimize { -mean } else { mean });
        }
        values.push(v);
    }
    let mut front = BTreeSet::new();
    'outer: for (i, vi) in values.iter().enumerate() {
        for (j, vj) in values.iter().enumerate() {
            if i == j {
                continue;
            }
            let worse = vi.iter().zip(vj).filter(|(a, b)| a > b).count();
            let better = vi.iter().zip(vj).filter(|(a, b)| a < b).count();
            if worse == 0 && better > 0 {
                continue 'outer;
            }
        }
        front.insert(policies[i].policy_id.clone());
    }
    Ok(front)
}

/// Two-metric coordinate file for plotting:
/// `format_version,policy_id,mu_1,mu_2,admitted`.
pub fn write_frontier_coordinates<W: Write>(
    writer: W,
    policies: &[PolicyCandidate],
    metrics: (&str, &str),
    frontier: &FrontierResult,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["format_version", "policy_id", "mu_1", "mu_2", "admitted"])?;
    let mut sorted: Vec<&PolicyCandidate> = policies.iter().collect();
    sorted.sort_by(|a, b| a.policy_id.cmp(&b.policy_id));
    for p in sorted {
        w.write_record([
            FRONTIER_FORMAT_VERSION.to_string(),
            p.policy_id.clone(),
            p.mean(metrics.0)?.to_string(),
            p.mean(metrics.1)?.to_string(),
            frontier.is_admitted(&p.policy_id).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<frontier coordinates>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::MetricEstimate;
    use proptest::prelude::*;

    fn metrics(k: usize) -> Vec<String> {
        (1..=k).map(|i| format!("m{i}")).collect()
    }

    fn policy(id: &str, mu: &[f64], sigma: &[f64]) -> PolicyCandidate {
        PolicyCandidate {
            policy_id: id.into(),
            cut: None,
            assignment: vec!["a".into()],
            estimates: mu
                .iter()
                .zip(sigma)
                .enumerate()
                .map(|(i, (&m, &s))| (format!("m{}", i + 1), MetricEstimate::from_summary(m, s)))
                .collect(),
        }
    }

    fn cfg(tau: f64, k: usize) -> ToleranceConfig {
        ToleranceConfig::maximize(tau, &metrics(k)).unwrap()
    }

    fn triple() -> (PolicyCandidate, PolicyCandidate, PolicyCandidate) {
        (
            policy("p", &[1.0, 1.0], &[0.1, 0.1]),
            policy("q", &[1.05, 1.2], &[0.1, 0.1]),
            policy("r", &[0.85, 1.3], &[0.1, 0.1]),
        )
    }

    #[test]
    fn self_never_dominates() {
        let (p, _, _) = triple();
        for tau in [0.0, 0.5, 3.0] {
            assert!(!tolerance_dominates(&p, &p, &cfg(tau, 2)).unwrap());
        }
    }

    #[test]
    fn dominance_examples() {
        let (p, q, r) = triple();
        assert!(tolerance_dominates(&q, &p, &cfg(1.0, 2)).unwrap());
        assert!(!tolerance_dominates(&r, &p, &cfg(1.0, 2)).unwrap());
    }

    #[test]
    fn missing_sigma_is_domain_error() {
        let (p, _, _) = triple();
        let short = policy("s", &[1.0], &[0.1]);
        assert!(matches!(tolerance_dominates(&short, &p, &cfg(1.0, 2)), Err(Error::Domain(_))));
    }

    #[test]
    fn minimize_flips_sign() {
        let mut dirs = BTreeMap::new();
        dirs.insert("m1".to_string(), Direction::Minimize);
        let c = ToleranceConfig::new(0.0, dirs).unwrap();
        let low = policy("low", &[1.0], &[0.0]);
        let high = policy("high", &[2.0], &[0.0]);
        assert!(tolerance_dominates(&low, &high, &c).unwrap());
        assert!(!tolerance_dominates(&high, &low, &c).unwrap());
    }

    #[test]
    fn filter_examples() {
        let (p, q, r) = triple();
        let single = tolerance_filter(&[&p], &cfg(1.0, 2)).unwrap();
        assert_eq!(single.admitted, vec!["p"]);

        // r sits exactly on q's tolerance boundary for metric 2
        // (1.2 >= 1.3 - 0.1) while q clears metric 1 (1.05 > 0.95), so q
        // dominates r as well as p.
        let res = tolerance_filter(&[&r, &p, &q], &cfg(1.0, 2)).unwrap();
        assert_eq!(res.admitted, vec!["q"]);
        assert_eq!(res.dominated_by["p"], "q");
        assert_eq!(res.dominated_by["r"], "q");

        let r2 = policy("r", &[0.85, 1.31], &[0.1, 0.1]);
        let res = tolerance_filter(&[&r2, &p, &q], &cfg(1.0, 2)).unwrap();
        assert_eq!(res.admitted, vec!["q", "r"]);
        assert_eq!(res.dominated_by.len(), 1);

        let empty = tolerance_filter(&[], &cfg(1.0, 2)).unwrap();
        assert!(empty.admitted.is_empty() && empty.dominated_by.is_empty());
    }

    #[test]
    fn oracle_examples() {
        let same: Vec<PolicyCandidate> = (0..3).map(|i| policy(&format!("s{i}"), &[1.0, 1.0], &[0.0, 0.0])).collect();
        let refs: Vec<&PolicyCandidate> = same.iter().collect();
        assert_eq!(strict_pareto_oracle(&refs, &cfg(0.0, 2).directions).unwrap().len(), 3);

        let a = policy("a", &[1.0, 0.0], &[0.0, 0.0]);
        let b = policy("b", &[0.0, 1.0], &[0.0, 0.0]);
        let c = policy("c", &[0.4, 0.4], &[0.0, 0.0]);
        assert_eq!(strict_pareto_oracle(&[&a, &b, &c], &cfg(0.0, 2).directions).unwrap().len(), 3);

        let hi = policy("hi", &[1.0, 1.0], &[0.0, 0.0]);
        let lo = policy("lo", &[0.5, 0.5], &[0.0, 0.0]);
        let front = strict_pareto_oracle(&[&hi, &lo], &cfg(0.0, 2).directions).unwrap();
        assert_eq!(front.into_iter().collect::<Vec<_>>(), vec!["hi"]);
    }

    #[test]
    fn coordinates_file() {
        let (p, q, r) = triple();
        let res = tolerance_filter(&[&p, &q, &r], &cfg(1.0, 2)).unwrap();
        let mut buf = Vec::new();
        write_frontier_coordinates(&mut buf, &[p, q, r], ("m1", "m2"), &res).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "format_version,policy_id,mu_1,mu_2,admitted\n1,p,1,1,false\n1,q,1.05,1.2,true\n1,r,0.85,1.3,false\n"
        );
    }

    /// (means, std errors) per policy.
    type Row = (Vec<f64>, Vec<f64>);

    fn instance() -> impl Strategy<Value = (usize, Vec<Row>)> {
        (1usize..=4).prop_flat_map(|k| {
            let row = (
                prop::collection::vec((-4i32..4).prop_map(|v| f64::from(v) / 2.0), k),
                prop::collection::vec(0.0f64..0.5, k),
            );
            (Just(k), prop::collection::vec(row, 1..30))
        })
    }

    fn build(rows: &[(Vec<f64>, Vec<f64>)]) -> Vec<PolicyCandidate> {
        rows.iter()
            .enumerate()
            .map(|(i, (m, s))| policy(&format!("p{i:02}"), m, s))
            .collect()
    }

    proptest! {
        #[test]
        fn zero_tolerance_is_strict_pareto((k, rows) in instance()) {
            let ps = build(&rows);
            let refs: Vec<&PolicyCandidate> = ps.iter().collect();
            let res = tolerance_filter(&refs, &cfg(0.0, k)).unwrap();
            let oracle = strict_pareto_oracle(&refs, &cfg(0.0, k).directions).unwrap();
            prop_assert_eq!(res.admitted.iter().cloned().collect::<BTreeSet<_>>(), oracle);
        }

        #[test]
        fn partition_and_self_exclusion((k, rows) in instance(), tau in 0.0f64..3.0) {
            let ps = build(&rows);
            let refs: Vec<&PolicyCandidate> = ps.iter().collect();
            let res = tolerance_filter(&refs, &cfg(tau, k)).unwrap();
            prop_assert_eq!(res.admitted.len() + res.dominated_by.len(), ps.len());
            for (rejected, by) in &res.dominated_by {
                prop_assert_ne!(rejected, by);
                prop_assert!(!res.is_admitted(rejected));
            }
        }

        #[test]
        fn scale_covariance((k, rows) in instance(), tau in 0.0f64..3.0, factor in 0.25f64..8.0) {
            // powers of two keep the scaled comparisons exact
            let factor = factor.log2().round().exp2();
            let ps = build(&rows);
            let scaled: Vec<PolicyCandidate> = ps.iter().map(|p| {
                let mut p = p.clone();
                let e = p.estimates.get_mut("m1").unwrap();
                e.mean *= factor;
                e.std_err *= factor;
                p
            }).collect();
            let a = tolerance_filter(&ps.iter().collect::<Vec<_>>(), &cfg(tau, k)).unwrap();
            let b = tolerance_filter(&scaled.iter().collect::<Vec<_>>(), &cfg(tau, k)).unwrap();
            prop_assert_eq!(a.admitted, b.admitted);
        }

        #[test]
        fn rejection_matches_clauses((k, rows) in instance(), tau in 0.0f64..3.0) {
            let ps = build(&rows);
            let refs: Vec<&PolicyCandidate> = ps.iter().collect();
            let c = cfg(tau, k);
            let res = tolerance_filter(&refs, &c).unwrap();
            let ms = metrics(k);
            for p in &ps {
                let dominated = ps.iter().any(|q| {
                    q.policy_id != p.policy_id
                        && ms.iter().all(|m| {
                            let e = p.estimates[m];
                            q.estimates[m].mean >= e.mean - tau * e.std_err
                        })
                        && ms.iter().any(|m| {
                            let e = p.estimates[m];
                            q.estimates[m].mean > e.mean + tau * e.std_err
                        })
                });
                prop_assert_eq!(res.is_admitted(&p.policy_id), !dominated);
            }
        }
    }
}
