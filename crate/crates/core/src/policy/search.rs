//! Random-weight scalarized Top-K candidate collection.

use std::collections::{BTreeMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PolicyCandidate;
use crate::error::{Error, Result};

/// A point on the probability simplex over the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// Checks non-negativity and that the weights sum to 1 within 1e-9.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Domain("weight vector is empty".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain(format!("negative or non-finite weight in {weights:?}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("weights sum to {total}, not 1")));
        }
        Ok(WeightVector(weights))
    }

    /// Unit vector on metric `index` of `k`.
    pub fn one_hot(k: usize, index: usize) -> Self {
        let mut w = vec![0.0; k];
        w[index] = 1.0;
        WeightVector(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `count` weight vectors drawn uniformly from the simplex over `k` metrics
/// (normalized unit-rate exponentials). The sequence depends only on `seed`.
pub fn sample_weights(k: usize, count: usize, seed: u64) -> Result<Vec<WeightVector>> {
    if k == 0 || count == 0 {
        return Err(Error::Domain("metric count and sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let draws: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total: f64 = draws.iter().sum();
        if total <= 0.0 || !total.is_finite() {
            continue;
        }
        out.push(WeightVector(draws.into_iter().map(|d| d / total).collect()));
    }
    Ok(out)
}

/// `sum_m w_m * mean_m(p)` with weights aligned to `metrics`.
pub fn scalarized_score(policy: &PolicyCandidate, metrics: &[String], w: &WeightVector) -> Result<f64> {
    if metrics.len() != w.len() {
        return Err(Error::Domain(format!(
            "{} weights for {} metrics",
            w.len(),
            metrics.len()
        )));
    }
    let mut score = 0.0;
    for (m, wm) in metrics.iter().zip(w.as_slice()) {
        score += wm * policy.mean(m)?;
    }
    Ok(score)
}

/// One Top-K admission of a policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Admission {
    /// Index of the weight vector in the sampled sequence.
    pub weight_index: usize,
    /// 1-based rank under that weight.
    pub rank: usize,
}

/// Union of per-weight Top-K sets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    /// Admitted ids, ascending.
    pub policies: Vec<String>,
    pub provenance: BTreeMap<String, Vec<Admission>>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.policies.binary_search_by(|p| p.as_str().cmp(id)).is_ok()
    }

    /// Ids ranked first under at least one weight.
    pub fn rank_one(&self) -> Vec<&str> {
        self.provenance
            .iter()
            .filter(|(_, adm)| adm.iter().any(|a| a.rank == 1))
            .map(|(id, _)| id.as_str())
            .collect()
    }
}

/// Collects the Top-`top_k` policies under every weight vector.
///
/// Ties in score go to the smaller policy id, so the result is independent
/// of input order and thread scheduling.
pub fn collect_candidates(
    policies: &[PolicyCandidate],
    metrics: &[String],
    weights: &[WeightVector],
    top_k: usize,
) -> Result<CandidateSet> {
    if top_k == 0 {
        return Err(Error::Domain("top-K must be at least 1".into()));
    }
    let mut order: Vec<&PolicyCandidate> = policies.iter().collect();
    order.sort_by(|a, b| a.policy_id.cmp(&b.policy_id));
    let mut ids = HashSet::new();
    for p in &order {
        if !ids.insert(&p.policy_id) {
            return Err(Error::Domain(format!("duplicate policy id `{}`", p.policy_id)));
        }
    }
    let means: Vec<Vec<f64>> = order
        .iter()
        .map(|p| metrics.iter().map(|m| p.mean(m)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    for w in weights {
        if w.len() != metrics.len() {
            return Err(Error::Domain(format!(
                "{} weights for {} metrics",
                w.len(),
                metrics.len()
            )));
        }
    }

    let per_weight: Vec<Vec<usize>> = weights
        .par_iter()
        .map(|w| {
            let mut scored: Vec<(f64, usize)> = means
                .iter()
                .enumerate()
                .map(|(i, mu)| (mu.iter().zip(w.as_slice()).map(|(m, w)| w * m).sum(), i))
                .collect();
            // index order is id order, so ascending index breaks ties by id
            scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            scored.into_iter().take(top_k).map(|(_, i)| i).collect()
        })
        .collect();

    let mut provenance: BTreeMap<String, Vec<Admission>> = BTreeMap::new();
    for (weight_index, top) in per_weight.iter().enumerate() {
        for (r, &i) in top.iter().enumerate() {
            provenance
                .entry(order[i].policy_id.clone())
                .or_default()
                .push(Admission {
                    weight_index,
                    rank: r + 1,
                });
        }
    }
    Ok(CandidateSet {
        policies: provenance.keys().cloned().collect(),
        provenance,
    })
}
