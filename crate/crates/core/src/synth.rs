//! Seeded synthetic experiments with planted cohort effects, drifting
//! features, and the benchmark built from them.
//!
//! Features are independent uniforms on `[0, 1)`. Arms are `a0` (control)
//! plus `a1..aM`, metrics `m1..mK`, drawn uniformly per user. Outcomes are
//! `baseline + planted lifts + N(0, noise_sd)`.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{ground_truth_oracle, GroundTruth, InstructionKind, InstructionSpec};
use crate::experiment::{ExperimentDataset, LiftUnit, UserRecord};
use crate::governance::FeatureSnapshotPair;
use crate::policy::{enumerate_policies, evaluate_all, PolicyTable};
use crate::segmentation::{bucket_of, enumerate_cuts, quantile, CutEnumerationConfig, CutFamily};
use crate::stats::mix_seed;

pub const CONTROL_ARM: &str = "a0";

/// Lift added to outcomes of users under `action` whose `feature` value lies
/// in the quantile range `(range[0], range[1]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedEffect {
    pub feature: String,
    pub range: [f64; 2],
    pub action: String,
    pub metric: String,
    pub lift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub feature: String,
    pub target_shift_ratio: f64,
}

/// How planted lifts evolve over the backtest window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LiftProfile {
    Stationary,
    /// Linear decay from full strength on day 1 to zero on `zero_day`.
    Decay { zero_day: usize },
}

impl LiftProfile {
    fn multiplier(self, day: usize) -> f64 {
        match self {
            LiftProfile::Stationary => 1.0,
            LiftProfile::Decay { zero_day } => {
                if day >= zero_day {
                    0.0
                } else {
                    1.0 - (day - 1) as f64 / (zero_day - 1) as f64
                }
            }
        }
    }
}

/// A run of fresh daily cohorts after the experiment, for the backtest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BacktestWindow {
    pub days: usize,
    pub users_per_day: usize,
    #[serde(default = "stationary")]
    pub profile: LiftProfile,
}

fn stationary() -> LiftProfile {
    LiftProfile::Stationary
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_experiment_id")]
    pub experiment_id: String,
    #[serde(default)]
    pub seed: u64,
    pub n_users: usize,
    pub n_features: usize,
    pub n_metrics: usize,
    /// Treatment actions, not counting control.
    pub n_actions: usize,
    /// Feature names; `x1..xD` when empty.
    #[serde(default)]
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub planted_effects: Vec<PlantedEffect>,
    #[serde(default)]
    pub drift_specs: Vec<DriftSpec>,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub baseline: f64,
    #[serde(default)]
    pub backtest: Option<BacktestWindow>,
}

fn default_experiment_id() -> String {
    "synth".to_string()
}

impl ScenarioConfig {
    pub fn features(&self) -> Vec<String> {
        if self.feature_names.is_empty() {
            (1..=self.n_features).map(|i| format!("x{i}")).collect()
        } else {
            self.feature_names.clone()
        }
    }

    pub fn metrics(&self) -> Vec<String> {
        (1..=self.n_metrics).map(|i| format!("m{i}")).collect()
    }

    /// Control first.
    pub fn arms(&self) -> Vec<String> {
        (0..=self.n_actions).map(|i| format!("a{i}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_users", self.n_users),
            ("n_features", self.n_features),
            ("n_metrics", self.n_metrics),
            ("n_actions", self.n_actions),
        ] {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.feature_names.is_empty() && self.feature_names.len() != self.n_features {
            return Err(Error::Config(format!(
                "{} feature names given for n_features = {}",
                self.feature_names.len(),
                self.n_features
            )));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config(format!("noise_sd must be >= 0, got {}", self.noise_sd)));
        }
        if !self.baseline.is_finite() {
            return Err(Error::Config("baseline must be finite".into()));
        }
        let features = self.features();
        let metrics = self.metrics();
        let arms = self.arms();
        for e in &self.planted_effects {
            let [lo, hi] = e.range;
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::Config(format!(
                    "planted range ({lo}, {hi}] on `{}` must satisfy 0 <= lo < hi <= 1",
                    e.feature
                )));
            }
            if !features.contains(&e.feature) {
                return Err(Error::Config(format!("planted effect on unknown feature `{}`", e.feature)));
            }
            if !metrics.contains(&e.metric) {
                return Err(Error::Config(format!("planted effect on unknown metric `{}`", e.metric)));
            }
            if e.action == CONTROL_ARM || !arms.contains(&e.action) {
                return Err(Error::Config(format!(
                    "planted effect needs a treatment action, got `{}`",
                    e.action
                )));
            }
            if !e.lift.is_finite() {
                return Err(Error::Config("planted lift must be finite".into()));
            }
        }
        for (i, a) in self.planted_effects.iter().enumerate() {
            for b in &self.planted_effects[i + 1..] {
                let same = a.feature == b.feature && a.action == b.action && a.metric == b.metric;
                if same && a.range[0] < b.range[1] && b.range[0] < a.range[1] {
                    return Err(Error::Config(format!(
                        "planted ranges ({}, {}] and ({}, {}] overlap for {} / {} / {}",
                        a.range[0], a.range[1], b.range[0], b.range[1], a.feature, a.action, a.metric
                    )));
                }
            }
        }
        for d in &self.drift_specs {
            if !features.contains(&d.feature) {
                return Err(Error::Config(format!("drift on unknown feature `{}`", d.feature)));
            }
            if !(0.0..=1.0).contains(&d.target_shift_ratio) {
                return Err(Error::Config(format!(
                    "target shift ratio {} outside [0, 1]",
                    d.target_shift_ratio
                )));
            }
        }
        if let Some(w) = &self.backtest {
            if w.days < 1 || w.users_per_day < 1 {
                return Err(Error::Config("backtest window needs days and users".into()));
            }
            if let LiftProfile::Decay { zero_day } = w.profile {
                if zero_day < 2 {
                    return Err(Error::Config("decay zero_day must be at least 2".into()));
                }
            }
        }
        Ok(())
    }
}

/// A planted effect with its value thresholds and the lift actually realized
/// in the noise-free outcomes of its members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizedEffect {
    #[serde(flatten)]
    pub effect: PlantedEffect,
    pub lower_value: f64,
    pub upper_value: f64,
    pub members: usize,
    pub realized_lift: Option<f64>,
}

impl RealizedEffect {
    fn contains(&self, v: f64) -> bool {
        self.lower_value < v && v <= self.upper_value
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub experiment_id: String,
    pub effects: Vec<RealizedEffect>,
}

#[derive(Debug, Clone)]
pub struct SyntheticExperiment {
    pub dataset: ExperimentDataset,
    pub truth: PlantedTruth,
    /// One snapshot pair per feature; features without a drift spec are
    /// unchanged between snapshots.
    pub snapshots: Vec<FeatureSnapshotPair>,
    /// Backtest window, empty when none was configured.
    pub daily: Vec<ExperimentDataset>,
}

struct Sampler<'a> {
    cfg: &'a ScenarioConfig,
    effects: &'a [RealizedEffect],
    feature_idx: Vec<usize>,
    metric_idx: Vec<usize>,
    arm_idx: Vec<usize>,
    noise: Option<Normal<f64>>,
}

impl Sampler<'_> {
    /// Noise-free outcomes for a user; control never receives a lift.
    fn clean_outcomes(&self, features: &[f64], arm: usize, strength: f64) -> Vec<f64> {
        let mut y = vec![self.cfg.baseline; self.cfg.n_metrics];
        for (k, e) in self.effects.iter().enumerate() {
            if arm == self.arm_idx[k] && e.contains(features[self.feature_idx[k]]) {
                y[self.metric_idx[k]] += e.effect.lift * strength;
            }
        }
        y
    }

    fn user(&self, rng: &mut ChaCha8Rng, id: String, features: Vec<f64>, strength: f64) -> (UserRecord, Vec<f64>) {
        let arm = rng.random_range(0..=self.cfg.n_actions);
        let clean = self.clean_outcomes(&features, arm, strength);
        let outcomes = clean
            .iter()
            .map(|c| match &self.noise {
                Some(n) => c + n.sample(rng),
                None => *c,
            })
            .collect();
        let record = UserRecord {
            user_id: id,
            features,
            arm: format!("a{arm}"),
            outcomes,
        };
        (record, clean)
    }
}

fn draw_features(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.random::<f64>()).collect()
}

/// Generates the dataset, planted truth, snapshots and backtest window.
/// Fully determined by the config, seed included.
pub fn generate_experiment(cfg: &ScenarioConfig) -> Result<SyntheticExperiment> {
    cfg.validate()?;
    let features = cfg.features();
    let metrics = cfg.metrics();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 0));
    let width = (cfg.n_users - 1).to_string().len().max(5);

    let values: Vec<Vec<f64>> = (0..cfg.n_users)
        .map(|_| draw_features(&mut rng, cfg.n_features))
        .collect();

    let mut effects = Vec::with_capacity(cfg.planted_effects.len());
    for e in &cfg.planted_effects {
        let f = features.iter().position(|x| *x == e.feature).expect("validated");
        let column: Vec<f64> = values.iter().map(|v| v[f]).collect();
        effects.push(RealizedEffect {
            effect: e.clone(),
            lower_value: quantile(&column, e.range[0])?,
            upper_value: quantile(&column, e.range[1])?,
            members: 0,
            realized_lift: None,
        });
    }
    let sampler = Sampler {
        cfg,
        feature_idx: effects
            .iter()
            .map(|e| features.iter().position(|x| *x == e.effect.feature).expect("validated"))
            .collect(),
        metric_idx: effects
            .iter()
            .map(|e| metrics.iter().position(|x| *x == e.effect.metric).expect("validated"))
            .collect(),
        arm_idx: effects
            .iter()
            .map(|e| e.effect.action[1..].parse().expect("validated arm name"))
            .collect(),
        noise: (cfg.noise_sd > 0.0).then(|| Normal::new(0.0, cfg.noise_sd).expect("validated sd")),
        effects: &effects,
    };

    let mut users = Vec::with_capacity(cfg.n_users);
    let mut clean = Vec::with_capacity(cfg.n_users);
    for (i, v) in values.into_iter().enumerate() {
        let (u, c) = sampler.user(&mut rng, format!("u{i:0width$}"), v, 1.0);
        users.push(u);
        clean.push(c);
    }
    let realized: Vec<(usize, Option<f64>)> = (0..effects.len())
        .map(|k| {
            let mut treated = Vec::new();
            let mut control = Vec::new();
            for (u, c) in users.iter().zip(&clean) {
                if !effects[k].contains(u.features[sampler.feature_idx[k]]) {
                    continue;
                }
                let y = c[sampler.metric_idx[k]];
                if u.arm == CONTROL_ARM {
                    control.push(y);
                } else if u.arm == effects[k].effect.action {
                    treated.push(y);
                }
            }
            let members = users
                .iter()
                .filter(|u| effects[k].contains(u.features[sampler.feature_idx[k]]))
                .count();
            let lift = match (crate::stats::mean_var(&treated), crate::stats::mean_var(&control)) {
                (Some((t, _)), Some((c, _))) => Some(t - c),
                _ => None,
            };
            (members, lift)
        })
        .collect();

    let daily = match &cfg.backtest {
        None => Vec::new(),
        Some(w) => (1..=w.days)
            .map(|day| {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, day as u64));
                let strength = w.profile.multiplier(day);
                let users = (0..w.users_per_day)
                    .map(|i| {
                        let v = draw_features(&mut rng, cfg.n_features);
                        sampler
                            .user(&mut rng, format!("d{day:03}-u{i:0width$}"), v, strength)
                            .0
                    })
                    .collect();
                ExperimentDataset::new(
                    format!("{}/day{day:03}", cfg.experiment_id),
                    CONTROL_ARM,
                    features.clone(),
                    metrics.clone(),
                    LiftUnit::Absolute,
                    users,
                )
            })
            .collect::<Result<_>>()?,
    };
    drop(sampler);
    for (e, (members, lift)) in effects.iter_mut().zip(realized) {
        e.members = members;
        e.realized_lift = lift;
    }

    let dataset = ExperimentDataset::new(
        cfg.experiment_id.clone(),
        CONTROL_ARM,
        features.clone(),
        metrics,
        LiftUnit::Absolute,
        users,
    )?;
    let snapshots = features
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            let target = cfg
                .drift_specs
                .iter()
                .find(|d| d.feature == *f)
                .map_or(0.0, |d| d.target_shift_ratio);
            let spec = DriftSpec {
                feature: f.clone(),
                target_shift_ratio: target,
            };
            generate_snapshots(&spec, &dataset, mix_seed(cfg.seed, 1_000_000 + fi as u64))
        })
        .collect::<Result<_>>()?;
    Ok(SyntheticExperiment {
        dataset,
        truth: PlantedTruth {
            experiment_id: cfg.experiment_id.clone(),
            effects,
        },
        snapshots,
        daily,
    })
}

/// Builds `t0` from the dataset and `t1` by moving exactly
/// `round(target * n)` seeded users one quartile up (the top quartile wraps
/// to the bottom). Each moved user lands on the largest `t0` value of its
/// new quartile, so the quartile shift ratio is exactly `moved / n`.
pub fn generate_snapshots(spec: &DriftSpec, ds: &ExperimentDataset, seed: u64) -> Result<FeatureSnapshotPair> {
    if !(0.0..=1.0).contains(&spec.target_shift_ratio) {
        return Err(Error::Config(format!(
            "target shift ratio {} outside [0, 1]",
            spec.target_shift_ratio
        )));
    }
    let f = ds.feature_index(&spec.feature)?;
    let values = ds.feature_values(f);
    let n = values.len();
    let t0: BTreeMap<String, f64> = ds
        .users()
        .iter()
        .map(|u| (u.user_id.clone(), u.features[f]))
        .collect();
    let mut t1 = t0.clone();
    if n > 0 {
        let inner: Vec<f64> = (1..4).map(|i| quantile(&values, i as f64 / 4.0)).collect::<Result<_>>()?;
        let mut top_of = [None::<f64>; 4];
        for &v in &values {
            let b = bucket_of(&inner, v);
            top_of[b] = Some(top_of[b].map_or(v, |t: f64| t.max(v)));
        }
        let k = ((spec.target_shift_ratio * n as f64).round() as usize).min(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in index::sample(&mut rng, n, k) {
            let u = &ds.users()[i];
            let b = bucket_of(&inner, u.features[f]);
            let target = (1..4)
                .map(|step| (b + step) % 4)
                .find_map(|t| top_of[t]);
            if let Some(v) = target {
                t1.insert(u.user_id.clone(), v);
            }
        }
    }
    Ok(FeatureSnapshotPair::new(spec.feature.clone(), t0, t1))
}

/// Two-metric conflict scenario. Under `a1`, high-activity users gain on
/// `m1` and low-activity users lose on `m1` while gaining on `m2`; `a2`
/// mirrors this. Sending high activity to `a1` and low activity to `a2`
/// lifts `m1` with `m2` flat, which neither global action achieves.
/// `volatility` drifts heavily between snapshots.
pub fn conflict_scenario(seed: u64, lift: f64) -> ScenarioConfig {
    let effect = |range: [f64; 2], action: &str, metric: &str, l: f64| PlantedEffect {
        feature: "activity".into(),
        range,
        action: action.into(),
        metric: metric.into(),
        lift: l,
    };
    const HIGH: [f64; 2] = [0.5, 1.0];
    const LOW: [f64; 2] = [0.0, 0.5];
    ScenarioConfig {
        experiment_id: "conflict".into(),
        seed,
        n_users: 6000,
        n_features: 3,
        n_metrics: 2,
        n_actions: 2,
        feature_names: vec!["activity".into(), "tenure".into(), "volatility".into()],
        planted_effects: vec![
            effect(HIGH, "a1", "m1", lift),
            effect(LOW, "a1", "m1", -1.2 * lift),
            effect(LOW, "a1", "m2", 2.0 * lift),
            effect(HIGH, "a2", "m2", -2.0 * lift),
            effect(LOW, "a2", "m1", lift),
        ],
        drift_specs: vec![DriftSpec {
            feature: "volatility".into(),
            target_shift_ratio: 0.5,
        }],
        noise_sd: 1.0,
        baseline: 0.0,
        backtest: Some(BacktestWindow {
            days: 14,
            users_per_day: 1500,
            profile: LiftProfile::Stationary,
        }),
    }
}

/// Shape of a synthetic benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seed: u64,
    pub experiments: usize,
    pub n_users: usize,
    pub n_features: usize,
    pub n_metrics: usize,
    pub n_actions: usize,
    pub effects_per_experiment: usize,
    pub noise_sd: f64,
    #[serde(rename = "N")]
    pub bins: usize,
    pub budget: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            seed: 0,
            experiments: 20,
            n_users: 2000,
            n_features: 3,
            n_metrics: 3,
            n_actions: 2,
            effects_per_experiment: 4,
            noise_sd: 1.0,
            bins: 4,
            budget: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub scenarios: Vec<ScenarioConfig>,
    pub tables: Vec<PolicyTable>,
    pub instructions: Vec<InstructionSpec>,
    pub ground_truths: Vec<GroundTruth>,
}

/// Scenario for experiment `i`: random quartile-range effects on distinct
/// (feature, action, metric) triples.
fn benchmark_scenario(cfg: &BenchmarkConfig, i: usize) -> ScenarioConfig {
    let seed = mix_seed(cfg.seed, i as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 7));
    let mut effects: Vec<PlantedEffect> = Vec::new();
    let mut attempts = 0;
    while effects.len() < cfg.effects_per_experiment && attempts < 100 * (cfg.effects_per_experiment + 1) {
        attempts += 1;
        let q = rng.random_range(0..cfg.bins.max(1));
        let e = PlantedEffect {
            feature: format!("x{}", rng.random_range(1..=cfg.n_features)),
            range: [q as f64 / cfg.bins as f64, (q + 1) as f64 / cfg.bins as f64],
            action: format!("a{}", rng.random_range(1..=cfg.n_actions)),
            metric: format!("m{}", rng.random_range(1..=cfg.n_metrics)),
            lift: rng.random_range(-1.0..1.0),
        };
        let clash = effects
            .iter()
            .any(|o| o.feature == e.feature && o.action == e.action && o.metric == e.metric);
        if !clash {
            effects.push(e);
        }
    }
    ScenarioConfig {
        experiment_id: format!("exp{i:02}"),
        seed,
        n_users: cfg.n_users,
        n_features: cfg.n_features,
        n_metrics: cfg.n_metrics,
        n_actions: cfg.n_actions,
        feature_names: Vec::new(),
        planted_effects: effects,
        drift_specs: Vec::new(),
        noise_sd: cfg.noise_sd,
        baseline: 0.0,
        backtest: None,
    }
}

/// One instruction of each kind, metrics drawn from the experiment's seed.
fn benchmark_instructions(experiment_id: &str, metrics: &[String], seed: u64) -> Vec<InstructionSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 9));
    InstructionKind::ALL
        .iter()
        .enumerate()
        .map(|(idx, &kind)| {
            let p = rng.random_range(0..metrics.len());
            let s = (p + rng.random_range(1..metrics.len().max(2))) % metrics.len();
            let (primary, secondary) = match kind {
                InstructionKind::SingleMetric | InstructionKind::EfficiencyOptimization => (p, None),
                _ => (p, Some(s)),
            };
            InstructionSpec {
                experiment_id: experiment_id.to_string(),
                instruction_idx: idx,
                kind,
                primary_metric: metrics[primary].clone(),
                secondary_metric: secondary.map(|s| metrics[s].clone()),
            }
        })
        .collect()
}

/// Generates every experiment, evaluates its policy table, and emits one
/// instruction per kind with the oracle's answer. Experiments run in
/// parallel; output order follows the experiment index.
pub fn build_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    if cfg.experiments < 1 {
        return Err(Error::Config("benchmark needs at least one experiment".into()));
    }
    if cfg.n_metrics < 2 {
        return Err(Error::Config("benchmark instructions need at least two metrics".into()));
    }
    let per_experiment: Vec<(ScenarioConfig, PolicyTable, Vec<InstructionSpec>, Vec<GroundTruth>)> = (0
        ..cfg.experiments)
        .into_par_iter()
        .map(|i| {
            let scenario = benchmark_scenario(cfg, i);
            let exp = generate_experiment(&scenario)?;
            let ds = &exp.dataset;
            let cuts = enumerate_cuts(
                ds,
                &CutEnumerationConfig {
                    features: ds.features().to_vec(),
                    bins: cfg.bins,
                    kinds: vec![CutFamily::Individual, CutFamily::Binary],
                },
            )?;
            let policies = enumerate_policies(ds, &cuts, ds.actions(), cfg.budget, mix_seed(scenario.seed, 1))?;
            let (evaluated, _) = evaluate_all(ds, &policies);
            let table = PolicyTable {
                experiment_id: scenario.experiment_id.clone(),
                metrics: ds.metrics().to_vec(),
                policies: evaluated,
            };
            let instructions = benchmark_instructions(&scenario.experiment_id, ds.metrics(), scenario.seed);
            let gts = instructions
                .iter()
                .map(|instr| ground_truth_oracle(instr, &table))
                .collect::<Result<Vec<_>>>()?;
            Ok((scenario, table, instructions, gts))
        })
        .collect::<Result<_>>()?;
    let mut out = Benchmark {
        scenarios: Vec::new(),
        tables: Vec::new(),
        instructions: Vec::new(),
        ground_truths: Vec::new(),
    };
    for (s, t, i, g) in per_experiment {
        out.scenarios.push(s);
        out.tables.push(t);
        out.instructions.extend(i);
        out.ground_truths.extend(g);
    }
    Ok(out)
}
