//! Post-search robustness and the pre-recommendation backtest.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{codes, HookReport, Stage};
use crate::error::{Error, Result};
use crate::evaluation::{InstructionKind, InstructionSpec, NON_REGRESSION_Z};
use crate::experiment::{ExperimentDataset, MetricEstimate};
use crate::policy::{evaluate_policy, PolicyCandidate};
use crate::stats;

pub const MIN_SLICES: usize = 3;
pub const MIN_BACKTEST_DAYS: usize = 7;

/// Metrics an instruction asks to improve; these are the ones robustness
/// and the backtest look at.
pub fn target_metrics(instr: &InstructionSpec, all_metrics: &[String]) -> Vec<String> {
    match instr.kind {
        InstructionKind::EfficiencyOptimization => all_metrics.to_vec(),
        InstructionKind::MaximizeBoth => {
            let mut out = vec![instr.primary_metric.clone()];
            out.extend(instr.secondary_metric.clone());
            out
        }
        InstructionKind::MaximizeWithConstraint
        | InstructionKind::TradeoffAnalysis
        | InstructionKind::SingleMetric => vec![instr.primary_metric.clone()],
    }
}

fn sum_counts(estimates: &[MetricEstimate]) -> (usize, usize) {
    estimates
        .iter()
        .fold((0, 0), |(t, c), e| (t + e.n_treated, c + e.n_control))
}

/// Inverse-variance pooling. Falls back to equal weights when any input has
/// a zero standard error, which would otherwise take all the weight.
pub fn pool_estimates(estimates: &[MetricEstimate]) -> Option<MetricEstimate> {
    if estimates.is_empty() {
        return None;
    }
    let (n_treated, n_control) = sum_counts(estimates);
    if estimates.iter().any(|e| e.std_err <= 0.0) {
        let mut pooled = pool_equal(estimates)?;
        pooled.n_treated = n_treated;
        pooled.n_control = n_control;
        return Some(pooled);
    }
    let weights: Vec<f64> = estimates.iter().map(|e| 1.0 / (e.std_err * e.std_err)).collect();
    let total = stats::sum(weights.iter().copied());
    let mean = stats::sum(estimates.iter().zip(&weights).map(|(e, w)| e.mean * w)) / total;
    Some(MetricEstimate {
        mean,
        std_err: (1.0 / total).sqrt(),
        n_treated,
        n_control,
    })
}

/// Equal-weight average of independent estimates.
fn pool_equal(estimates: &[MetricEstimate]) -> Option<MetricEstimate> {
    if estimates.is_empty() {
        return None;
    }
    let n = estimates.len() as f64;
    let (n_treated, n_control) = sum_counts(estimates);
    Some(MetricEstimate {
        mean: stats::sum(estimates.iter().map(|e| e.mean)) / n,
        std_err: stats::sum(estimates.iter().map(|e| e.std_err * e.std_err)).sqrt() / n,
        n_treated,
        n_control,
    })
}

/// Post-search hook. Each target metric must keep the pooled sign in at
/// least two thirds of the slices and the pooled lift must clear 1.96
/// standard errors.
pub fn robustness_check(
    policy: &PolicyCandidate,
    metrics: &[String],
    slices: &[BTreeMap<String, MetricEstimate>],
) -> Result<HookReport> {
    if slices.len() < MIN_SLICES {
        return Err(Error::InsufficientData(format!(
            "robustness needs at least {MIN_SLICES} temporal slices, got {}",
            slices.len()
        )));
    }
    let mut reasons = Vec::new();
    let mut notes = Vec::new();
    for metric in metrics {
        let series: Vec<MetricEstimate> = slices
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.get(metric).copied().ok_or_else(|| {
                    Error::InsufficientData(format!("slice {} has no estimate for `{metric}`", i + 1))
                })
            })
            .collect::<Result<_>>()?;
        let pooled = pool_equal(&series).expect("at least three slices");
        let sign = stats::sign(pooled.mean);
        let agreeing = series.iter().filter(|e| stats::sign(e.mean) == sign).count();
        if sign == 0 || 3 * agreeing < 2 * series.len() {
            reasons.push(codes::SIGN_FLIP);
            notes.push(format!(
                "{metric}: {agreeing}/{} slices share the pooled sign",
                series.len()
            ));
        }
        if pooled.mean.abs() < NON_REGRESSION_Z * pooled.std_err || pooled.mean == 0.0 {
            reasons.push(codes::NOT_SIGNIFICANT);
            notes.push(format!(
                "{metric}: pooled lift {:.4} within {NON_REGRESSION_Z} x {:.4}",
                pooled.mean, pooled.std_err
            ));
        }
    }
    if reasons.is_empty() {
        return Ok(HookReport::pass(
            Stage::PostSearch,
            format!(
                "{} holds across {} slices on {}",
                policy.policy_id,
                slices.len(),
                metrics.join(", ")
            ),
        ));
    }
    Ok(HookReport::reject(
        Stage::PostSearch,
        reasons,
        [policy.policy_id.clone()],
        format!("{} is not robust: {}", policy.policy_id, notes.join("; ")),
    ))
}

/// One calendar day of the backtest. Skipped days have no daily estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestDay {
    pub day: usize,
    pub experiment_id: String,
    pub daily: Option<BTreeMap<String, MetricEstimate>>,
    pub cumulative: Option<BTreeMap<String, MetricEstimate>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub policy_id: String,
    pub days: Vec<BacktestDay>,
    pub report: HookReport,
}

/// Per-day policy estimates; `None` when the day cannot be evaluated (no
/// users, or an arm missing from a segment).
pub(crate) fn daily_estimates(
    policy: &PolicyCandidate,
    daily: &[ExperimentDataset],
) -> Vec<Option<BTreeMap<String, MetricEstimate>>> {
    daily
        .par_iter()
        .map(|ds| {
            if ds.is_empty() {
                return None;
            }
            evaluate_policy(ds, policy).ok().map(|p| p.estimates)
        })
        .collect()
}

/// Pre-recommendation hook. Re-evaluates the policy on each day, pools the
/// days seen so far, and passes iff, for every target metric, the final
/// cumulative lift is within two pooled standard errors of the policy's own
/// estimate and the cumulative sign matches that estimate from day 7 on.
pub fn run_backtest(
    policy: &PolicyCandidate,
    metrics: &[String],
    daily: &[ExperimentDataset],
) -> Result<BacktestResult> {
    if daily.len() < MIN_BACKTEST_DAYS {
        return Err(Error::InsufficientData(format!(
            "backtest needs at least {MIN_BACKTEST_DAYS} daily slices, got {}",
            daily.len()
        )));
    }
    let reference: Vec<(&String, MetricEstimate)> = metrics
        .iter()
        .map(|m| policy.estimate(m).map(|e| (m, *e)))
        .collect::<Result<_>>()?;

    let per_day = daily_estimates(policy, daily);
    let mut warnings = Vec::new();
    let mut seen: BTreeMap<String, Vec<MetricEstimate>> = BTreeMap::new();
    let mut days = Vec::with_capacity(daily.len());
    let mut flipped: Vec<String> = Vec::new();
    for (i, (ds, est)) in daily.iter().zip(per_day).enumerate() {
        let day = i + 1;
        match &est {
            Some(e) => {
                for (m, v) in e {
                    seen.entry(m.clone()).or_default().push(*v);
                }
            }
            None => warnings.push(format!("{}: day {day} ({})", codes::EMPTY_SLICE, ds.experiment_id())),
        }
        let cumulative: Option<BTreeMap<String, MetricEstimate>> = if seen.is_empty() {
            None
        } else {
            Some(
                seen.iter()
                    .filter_map(|(m, v)| pool_estimates(v).map(|p| (m.clone(), p)))
                    .collect(),
            )
        };
        if day >= MIN_BACKTEST_DAYS {
            if let Some(cum) = &cumulative {
                for (m, r) in &reference {
                    let c = cum[m.as_str()];
                    if stats::sign(c.mean) != stats::sign(r.mean) && !flipped.contains(m) {
                        flipped.push((*m).clone());
                    }
                }
            }
        }
        days.push(BacktestDay {
            day,
            experiment_id: ds.experiment_id().to_string(),
            daily: est,
            cumulative,
        });
    }
    let Some(last) = days.iter().rev().find_map(|d| d.cumulative.as_ref()) else {
        return Err(Error::InsufficientData(format!(
            "policy `{}` could not be evaluated on any backtest day",
            policy.policy_id
        )));
    };

    let mut reasons = Vec::new();
    let mut notes = Vec::new();
    for (m, r) in &reference {
        let c = last[m.as_str()];
        let envelope = 2.0 * (c.std_err * c.std_err + r.std_err * r.std_err).sqrt();
        if (c.mean - r.mean).abs() > envelope {
            reasons.push(codes::BACKTEST_DRIFT);
            notes.push(format!(
                "{m}: cumulative {:.4} vs estimate {:.4} exceeds {envelope:.4}",
                c.mean, r.mean
            ));
        }
        if flipped.contains(m) {
            reasons.push(codes::BACKTEST_SIGN_FLIP);
            notes.push(format!("{m}: cumulative sign departs from the estimate after day {MIN_BACKTEST_DAYS}"));
        }
    }
    let mut report = if reasons.is_empty() {
        HookReport::pass(
            Stage::PreRecommendation,
            format!(
                "{} consistent over {} days on {}",
                policy.policy_id,
                daily.len(),
                metrics.join(", ")
            ),
        )
    } else {
        HookReport::reject(
            Stage::PreRecommendation,
            reasons,
            [policy.policy_id.clone()],
            format!("{} failed the backtest: {}", policy.policy_id, notes.join("; ")),
        )
    };
    report.warnings = warnings;
    Ok(BacktestResult {
        policy_id: policy.policy_id.clone(),
        days,
        report,
    })
}

/// Splits the daily series into `n` contiguous groups of near-equal length
/// and pools each group. Groups with no evaluable day are dropped.
pub fn temporal_slices(
    policy: &PolicyCandidate,
    daily: &[ExperimentDataset],
    n: usize,
) -> Vec<BTreeMap<String, MetricEstimate>> {
    let per_day = daily_estimates(policy, daily);
    let n = n.clamp(1, daily.len().max(1));
    let mut out = Vec::new();
    for g in 0..n {
        let start = g * daily.len() / n;
        let end = (g + 1) * daily.len() / n;
        let mut by_metric: BTreeMap<String, Vec<MetricEstimate>> = BTreeMap::new();
        for est in per_day[start..end].iter().flatten() {
            for (m, v) in est {
                by_metric.entry(m.clone()).or_default().push(*v);
            }
        }
        if by_metric.is_empty() {
            continue;
        }
        out.push(
            by_metric
                .into_iter()
                .filter_map(|(m, v)| pool_estimates(&v).map(|p| (m, p)))
                .collect(),
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{tests::user, LiftUnit};

    fn est(mean: f64, se: f64) -> MetricEstimate {
        MetricEstimate::from_summary(mean, se)
    }

    fn slices(values: &[(f64, f64)]) -> Vec<BTreeMap<String, MetricEstimate>> {
        values
            .iter()
            .map(|&(m, s)| [("m1".to_string(), est(m, s))].into())
            .collect()
    }

    fn metrics() -> Vec<String> {
        vec!["m1".to_string()]
    }

    #[test]
    fn uniform_positive_slices_pass() {
        let p = PolicyCandidate::global("a1");
        let r = robustness_check(&p, &metrics(), &slices(&[(1.0, 0.1); 4])).unwrap();
        assert!(r.is_pass(), "{r:?}");
    }

    #[test]
    fn alternating_slices_flip() {
        let p = PolicyCandidate::global("a1");
        let r = robustness_check(&p, &metrics(), &slices(&[(1.0, 0.1), (-1.0, 0.1), (1.0, 0.1), (-1.0, 0.1)]))
            .unwrap();
        assert!(!r.is_pass());
        assert!(r.reason_codes.contains(&codes::SIGN_FLIP.to_string()));
        assert_eq!(r.entities, vec!["global/a1"]);
    }

    #[test]
    fn weak_pooled_lift_is_not_significant() {
        // pooled mean 0.05; pooled se 0.2 from three slices of se 0.2*sqrt(3)
        let se = 0.2 * 3f64.sqrt();
        let r = robustness_check(
            &PolicyCandidate::global("a1"),
            &metrics(),
            &slices(&[(0.05, se), (0.05, se), (0.05, se)]),
        )
        .unwrap();
        assert_eq!(r.reason_codes, vec![codes::NOT_SIGNIFICANT]);
    }

    #[test]
    fn too_few_slices() {
        let err = robustness_check(&PolicyCandidate::global("a1"), &metrics(), &slices(&[(1.0, 0.1); 2]));
        assert!(matches!(err, Err(Error::InsufficientData(_))));
    }

    #[test]
    fn inverse_variance_pooling() {
        let p = pool_estimates(&[est(1.0, 1.0), est(3.0, 1.0)]).unwrap();
        assert_eq!(p.mean, 2.0);
        assert!((p.std_err - 0.5f64.sqrt()).abs() < 1e-15);
        let p = pool_estimates(&[est(0.0, 1.0), est(4.0, 0.5)]).unwrap();
        assert!((p.mean - 3.2).abs() < 1e-12);
        // a zero standard error switches to equal weights
        let p = pool_estimates(&[est(1.0, 0.0), est(3.0, 0.0)]).unwrap();
        assert_eq!((p.mean, p.std_err), (2.0, 0.0));
        assert!(pool_estimates(&[]).is_none());
    }

    fn day(d: usize, lift: f64) -> ExperimentDataset {
        let mut users = Vec::new();
        for i in 0..6 {
            let noise = [0.1, -0.1, 0.0][i % 3];
            users.push(user(&format!("d{d}c{i}"), "control", i as f64, 1.0 + noise));
            users.push(user(&format!("d{d}t{i}"), "a1", i as f64, 1.0 + lift + noise));
        }
        ExperimentDataset::new(
            format!("day{d}"),
            "control",
            vec!["x".into()],
            vec!["m1".into()],
            LiftUnit::Absolute,
            users,
        )
        .unwrap()
    }

    fn reference(mean: f64) -> PolicyCandidate {
        let mut p = PolicyCandidate::global("a1");
        p.estimates.insert("m1".into(), est(mean, 0.05));
        p
    }

    #[test]
    fn stationary_backtest_passes() {
        let daily: Vec<_> = (1..=10).map(|d| day(d, 0.5)).collect();
        let res = run_backtest(&reference(0.5), &metrics(), &daily).unwrap();
        assert!(res.report.is_pass(), "{:?}", res.report);
        assert_eq!(res.days.len(), 10);
        let last = res.days[9].cumulative.as_ref().unwrap()["m1"];
        assert!((last.mean - 0.5).abs() < 1e-12);
    }

    #[test]
    fn decaying_backtest_is_rejected() {
        let daily: Vec<_> = (1..=10)
            .map(|d| day(d, if d <= 3 { 0.5 } else { 0.0 }))
            .collect();
        let res = run_backtest(&reference(0.5), &metrics(), &daily).unwrap();
        assert!(!res.report.is_pass());
        assert!(res.report.reason_codes.contains(&codes::BACKTEST_DRIFT.to_string()));
    }

    #[test]
    fn late_sign_flip_is_rejected() {
        let daily: Vec<_> = (1..=10)
            .map(|d| day(d, if d <= 2 { 0.5 } else { -0.5 }))
            .collect();
        let res = run_backtest(&reference(0.5), &metrics(), &daily).unwrap();
        assert!(res.report.reason_codes.contains(&codes::BACKTEST_SIGN_FLIP.to_string()));
    }

    #[test]
    fn six_days_is_not_enough() {
        let daily: Vec<_> = (1..=6).map(|d| day(d, 0.5)).collect();
        assert!(matches!(
            run_backtest(&reference(0.5), &metrics(), &daily),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn empty_day_is_skipped_with_warning() {
        let mut daily: Vec<_> = (1..=8).map(|d| day(d, 0.5)).collect();
        daily[3] = ExperimentDataset::new(
            "day4",
            "control",
            vec!["x".into()],
            vec!["m1".into()],
            LiftUnit::Absolute,
            vec![],
        )
        .unwrap();
        let res = run_backtest(&reference(0.5), &metrics(), &daily).unwrap();
        assert!(res.report.is_pass());
        assert_eq!(res.report.warnings.len(), 1);
        assert!(res.report.warnings[0].starts_with(codes::EMPTY_SLICE));
        assert!(res.days[3].daily.is_none());
    }

    #[test]
    fn slices_group_contiguous_days() {
        let daily: Vec<_> = (1..=10).map(|d| day(d, d as f64)).collect();
        let s = temporal_slices(&PolicyCandidate::global("a1"), &daily, 3);
        assert_eq!(s.len(), 3);
        // days 1-3, 4-6, 7-10 with equal variances: plain averages
        let means: Vec<f64> = s.iter().map(|m| m["m1"].mean).collect();
        for (got, want) in means.iter().zip([2.0, 5.0, 8.5]) {
            assert!((got - want).abs() < 1e-9, "{means:?}");
        }
    }
}
