//! Quantile cohorts over a single feature.
//!
//! Quantiles use the nearest-rank rule with `Q(X, 0) = -inf`, and every
//! segment is the half-open interval `(lower, upper]`. Segments produced by
//! one [`CutSpec`] partition the users; empty segments are kept so slot
//! positions stay stable.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::experiment::ExperimentDataset;

/// Nearest-rank quantile. `p = 0` yields negative infinity.
pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("quantile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("quantile level {p} outside [0, 1]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Domain("quantile of a sample containing NaN".into()));
    }
    let sorted = sorted_copy(values);
    if p == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let n = sorted.len() as f64;
    let r = p * n;
    let nearest = r.round();
    // p is usually i/N; absorb representation error before taking the ceiling.
    let rank = if (r - nearest).abs() <= 1e-9 * n { nearest } else { r.ceil() };
    let rank = (rank as usize).clamp(1, sorted.len());
    Ok(sorted[rank - 1])
}

/// `Q(X, num/den)` on an already sorted sample, using exact integer ranks.
pub(crate) fn quantile_sorted_ratio(sorted: &[f64], num: usize, den: usize) -> f64 {
    debug_assert!(num <= den && den > 0 && !sorted.is_empty());
    if num == 0 {
        return f64::NEG_INFINITY;
    }
    let rank = (num * sorted.len()).div_ceil(den);
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
}

/// Cut points `Q(X, i/bins)` for `i = 0..=bins`.
pub(crate) fn cut_points(values: &[f64], bins: usize) -> Vec<f64> {
    let sorted = sorted_copy(values);
    (0..=bins)
        .map(|i| quantile_sorted_ratio(&sorted, i, bins))
        .collect()
}

/// 0-based bucket of `v` among the intervals `(t[i-1], t[i]]` defined by the
/// inner cut points. Values above the last inner point land in the top bucket.
pub(crate) fn bucket_of(inner: &[f64], v: f64) -> usize {
    inner.partition_point(|&t| t < v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutKind {
    /// `bins` quantile buckets.
    Individual { bins: usize },
    /// Two buckets split at `Q(X, threshold_index / bins)`.
    Binary { threshold_index: usize, bins: usize },
}

/// A single-feature segmentation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CutSpec {
    pub feature: String,
    pub kind: CutKind,
}

impl CutSpec {
    pub fn individual(feature: impl Into<String>, bins: usize) -> Self {
        CutSpec {
            feature: feature.into(),
            kind: CutKind::Individual { bins },
        }
    }

    pub fn binary(feature: impl Into<String>, threshold_index: usize, bins: usize) -> Self {
        CutSpec {
            feature: feature.into(),
            kind: CutKind::Binary {
                threshold_index,
                bins,
            },
        }
    }

    /// Number of segment slots this cut produces.
    pub fn slot_count(&self) -> usize {
        match self.kind {
            CutKind::Individual { bins } => bins,
            CutKind::Binary { .. } => 2,
        }
    }

    /// Compact descriptor: `individual:N` or `binary:i0:N`.
    pub fn descriptor(&self) -> String {
        match self.kind {
            CutKind::Individual { bins } => format!("individual:{bins}"),
            CutKind::Binary {
                threshold_index,
                bins,
            } => format!("binary:{threshold_index}:{bins}"),
        }
    }

    /// Inverse of [`Self::descriptor`].
    pub fn parse(feature: &str, descriptor: &str) -> Result<Self> {
        let parts: Vec<&str> = descriptor.split(':').collect();
        let num = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Config(format!("bad cut descriptor `{descriptor}`")))
        };
        let cut = match parts.as_slice() {
            ["individual", n] => CutSpec::individual(feature, num(n)?),
            ["binary", i0, n] => CutSpec::binary(feature, num(i0)?, num(n)?),
            _ => return Err(Error::Config(format!("bad cut descriptor `{descriptor}`"))),
        };
        cut.validate()?;
        Ok(cut)
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            CutKind::Individual { bins: 0 } => {
                Err(Error::Domain("bin count must be at least 1".into()))
            }
            CutKind::Binary {
                threshold_index,
                bins,
            } if threshold_index == 0 || threshold_index >= bins => Err(Error::Domain(format!(
                "threshold index {threshold_index} outside 1..={} for {bins} bins",
                bins.saturating_sub(1)
            ))),
            _ => Ok(()),
        }
    }
}

fn ser_bound<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if *v == f64::NEG_INFINITY {
        s.serialize_str("-inf")
    } else if *v == f64::INFINITY {
        s.serialize_str("+inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_bound<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Bound {
        Num(f64),
        Text(String),
    }
    match Bound::deserialize(d)? {
        Bound::Num(v) => Ok(v),
        Bound::Text(t) => match t.as_str() {
            "-inf" => Ok(f64::NEG_INFINITY),
            "+inf" | "inf" => Ok(f64::INFINITY),
            other => Err(serde::de::Error::custom(format!("bad bound `{other}`"))),
        },
    }
}

/// Users with `lower < X(u) <= upper` on one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub feature: String,
    #[serde(serialize_with = "ser_bound", deserialize_with = "de_bound")]
    pub lower: f64,
    #[serde(serialize_with = "ser_bound", deserialize_with = "de_bound")]
    pub upper: f64,
    /// Ascending user indices into the dataset the segment was built from.
    #[serde(skip)]
    pub members: Vec<usize>,
}

impl Segment {
    /// Segment over every user of `ds`, bounded by the feature's range.
    pub fn whole(ds: &ExperimentDataset) -> Self {
        Segment {
            feature: String::new(),
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
            members: (0..ds.len()).collect(),
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower < v && v <= self.upper
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    /// Human readable form, e.g. `x in (-inf, 2]`.
    pub fn describe(&self) -> String {
        let fmt = |v: f64| {
            if v.is_infinite() {
                if v < 0.0 { "-inf".to_string() } else { "+inf".to_string() }
            } else {
                format!("{v}")
            }
        };
        let name = if self.feature.is_empty() { "all" } else { &self.feature };
        format!("{name} in ({}, {}]", fmt(self.lower), fmt(self.upper))
    }
}

fn build_segments(ds: &ExperimentDataset, feature: &str, bounds: &[f64]) -> Result<Vec<Segment>> {
    let f = ds.feature_index(feature)?;
    let inner = &bounds[1..bounds.len() - 1];
    let mut segments: Vec<Segment> = bounds
        .windows(2)
        .map(|w| Segment {
            feature: feature.to_string(),
            lower: w[0],
            upper: w[1],
            members: Vec::new(),
        })
        .collect();
    let top = *bounds.last().expect("at least two bounds");
    for (i, u) in ds.users().iter().enumerate() {
        let v = u.features[f];
        // every value is <= Q(X, 1) = max, so the top bucket is closed
        debug_assert!(v <= top);
        segments[bucket_of(inner, v)].members.push(i);
    }
    Ok(segments)
}

fn check_non_empty(ds: &ExperimentDataset) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Domain("cannot segment an empty dataset".into()));
    }
    Ok(())
}

/// `bins` quantile segments `(Q((i-1)/N), Q(i/N)]`.
pub fn individual_split(ds: &ExperimentDataset, feature: &str, bins: usize) -> Result<Vec<Segment>> {
    CutSpec::individual(feature, bins).validate()?;
    let f = ds.feature_index(feature)?;
    check_non_empty(ds)?;
    let bounds = cut_points(&ds.feature_values(f), bins);
    build_segments(ds, feature, &bounds)
}

/// Split at `Q(i0/N)` into `(-inf, Q(i0/N)]` and `(Q(i0/N), Q(1)]`.
pub fn binary_split(
    ds: &ExperimentDataset,
    feature: &str,
    threshold_index: usize,
    bins: usize,
) -> Result<(Segment, Segment)> {
    CutSpec::binary(feature, threshold_index, bins).validate()?;
    let f = ds.feature_index(feature)?;
    check_non_empty(ds)?;
    let sorted = sorted_copy(&ds.feature_values(f));
    let bounds = [
        f64::NEG_INFINITY,
        quantile_sorted_ratio(&sorted, threshold_index, bins),
        quantile_sorted_ratio(&sorted, bins, bins),
    ];
    let mut segs = build_segments(ds, feature, &bounds)?;
    let second = segs.pop().expect("two segments");
    let first = segs.pop().expect("two segments");
    Ok((first, second))
}

/// Segments of `cut` on `ds`, in slot order.
pub fn materialize(ds: &ExperimentDataset, cut: &CutSpec) -> Result<Vec<Segment>> {
    match cut.kind {
        CutKind::Individual { bins } => individual_split(ds, &cut.feature, bins),
        CutKind::Binary {
            threshold_index,
            bins,
        } => {
            let (a, b) = binary_split(ds, &cut.feature, threshold_index, bins)?;
            Ok(vec![a, b])
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutFamily {
    Individual,
    Binary,
}

/// Which cuts to enumerate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutEnumerationConfig {
    pub features: Vec<String>,
    #[serde(rename = "N")]
    pub bins: usize,
    pub kinds: Vec<CutFamily>,
}

/// Every cut requested by `config`: features in declared order, the
/// individual cut before the binary cuts, binary thresholds ascending.
pub fn enumerate_cuts(ds: &ExperimentDataset, config: &CutEnumerationConfig) -> Result<Vec<CutSpec>> {
    if config.bins == 0 {
        return Err(Error::Config("N must be at least 1".into()));
    }
    let individual = config.kinds.contains(&CutFamily::Individual);
    let binary = config.kinds.contains(&CutFamily::Binary);
    let mut cuts = Vec::new();
    for feature in &config.features {
        ds.feature_index(feature)?;
        if individual {
            cuts.push(CutSpec::individual(feature.clone(), config.bins));
        }
        if binary {
            for i0 in 1..config.bins {
                cuts.push(CutSpec::binary(feature.clone(), i0, config.bins));
            }
        }
    }
    Ok(cuts)
}
