use cohort_policy::evaluation::InstructionKind;
use cohort_policy::governance::{codes, govern_pipeline, GovernConfig, GovernInputs, Stage, Verdict};
use cohort_policy::synth::{conflict_scenario, generate_experiment, DriftSpec, LiftProfile};

fn constraint_config(seed: u64) -> GovernConfig {
    let mut cfg = GovernConfig::new(InstructionKind::MaximizeWithConstraint, "m1", Some("m2"));
    cfg.seed = seed;
    cfg.search.weight_samples = 300;
    cfg
}

#[test]
fn conflict_scenario_recommends_stable_cohort_policy() {
    let exp = generate_experiment(&conflict_scenario(7, 0.5)).unwrap();
    let out = govern_pipeline(
        &constraint_config(7),
        GovernInputs {
            dataset: &exp.dataset,
            snapshots: &exp.snapshots,
            daily: &exp.daily,
        },
    )
    .unwrap();
    let rec = out.recommendation.expect("recommendation");
    assert_eq!(rec.feature.as_deref(), Some("activity"));
    assert_eq!(out.trail[0].stage, Stage::PreSearch);
    assert_eq!(out.trail[0].verdict, Verdict::Reject);
    assert_eq!(out.trail[0].entities, vec!["volatility"]);
    assert_eq!(out.admitted_features, vec!["activity", "tenure"]);
    assert_eq!(out.trail.len(), 3);
    let m1 = rec.estimates["m1"];
    let m2 = rec.estimates["m2"];
    assert!(m1.mean > 1.96 * m1.std_err);
    assert!(m2.mean.abs() <= 1.96 * m2.std_err);
}

#[test]
fn all_unstable_features_stop_before_search() {
    let mut scenario = conflict_scenario(3, 0.5);
    scenario.drift_specs = scenario
        .feature_names
        .iter()
        .map(|f| DriftSpec {
            feature: f.clone(),
            target_shift_ratio: 0.6,
        })
        .collect();
    let exp = generate_experiment(&scenario).unwrap();
    let out = govern_pipeline(
        &constraint_config(3),
        GovernInputs {
            dataset: &exp.dataset,
            snapshots: &exp.snapshots,
            daily: &exp.daily,
        },
    )
    .unwrap();
    assert!(out.recommendation.is_none());
    assert!(out.search.is_none());
    assert_eq!(out.trail.len(), 1);
    assert!(out.trail[0].reason_codes.contains(&codes::NO_STABLE_FEATURES.to_string()));
}

#[test]
fn happy_path_has_three_reports() {
    let mut scenario = conflict_scenario(5, 0.5);
    scenario.drift_specs.clear();
    let exp = generate_experiment(&scenario).unwrap();
    let out = govern_pipeline(
        &constraint_config(5),
        GovernInputs {
            dataset: &exp.dataset,
            snapshots: &exp.snapshots,
            daily: &exp.daily,
        },
    )
    .unwrap();
    assert_eq!(out.trail.len(), 3);
    assert!(out.trail.iter().all(|r| r.verdict == Verdict::Pass));
    assert_eq!(out.recommendation.unwrap().passes, 1);
}

#[test]
fn decaying_backtest_triggers_refinement() {
    let mut scenario = conflict_scenario(9, 0.5);
    scenario.drift_specs.clear();
    if let Some(w) = scenario.backtest.as_mut() {
        w.profile = LiftProfile::Decay { zero_day: 4 };
    }
    let exp = generate_experiment(&scenario).unwrap();
    let out = govern_pipeline(
        &constraint_config(9),
        GovernInputs {
            dataset: &exp.dataset,
            snapshots: &exp.snapshots,
            daily: &exp.daily,
        },
    )
    .unwrap();
    // every lifting policy decays in the backtest window, so each pass is
    // rejected until the refinement budget runs out
    assert!(out.recommendation.is_none());
    assert_eq!(out.rejected_policies.len(), 4);
    assert_eq!(out.trail.len(), 1 + 2 * 4 + 1);
    let last = out.trail.last().unwrap();
    assert_eq!(last.reason_codes, vec![codes::REFINEMENT_EXHAUSTED]);
    assert_eq!(last.entities, out.rejected_policies);
    for r in &out.trail[1..out.trail.len() - 1] {
        if r.verdict == Verdict::Reject {
            assert_eq!(r.reason_codes, vec![codes::BACKTEST_DRIFT]);
        }
    }
}
