//! Feature stability: how many users migrate between cohorts over a window.

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{codes, HookReport, Stage};
use crate::error::{Error, Result};
use crate::segmentation::{bucket_of, quantile_sorted_ratio, sorted_copy};

/// Values of one feature at the start (`t0`) and end (`t1`) of a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSnapshotPair {
    pub feature: String,
    pub t0_values: BTreeMap<String, f64>,
    pub t1_values: BTreeMap<String, f64>,
    #[serde(default = "default_window")]
    pub window_days: u32,
}

fn default_window() -> u32 {
    180
}

impl FeatureSnapshotPair {
    pub fn new(
        feature: impl Into<String>,
        t0_values: BTreeMap<String, f64>,
        t1_values: BTreeMap<String, f64>,
    ) -> Self {
        FeatureSnapshotPair {
            feature: feature.into(),
            t0_values,
            t1_values,
            window_days: default_window(),
        }
    }
}

/// Cohort definition used to measure migration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftCut {
    /// Four equal-frequency buckets.
    Quantile4,
    /// Three buckets split at the 25th and 75th percentiles.
    BinaryP25P75,
}

impl ShiftCut {
    fn levels(self) -> &'static [(usize, usize)] {
        match self {
            ShiftCut::Quantile4 => &[(1, 4), (2, 4), (3, 4)],
            ShiftCut::BinaryP25P75 => &[(1, 4), (3, 4)],
        }
    }
}

/// Fraction of common users whose `t1` value falls in a different bucket
/// than their `t0` value. Cut points come from the `t0` values and stay
/// fixed, so this measures migration rather than reshaping.
pub fn shift_ratio(pair: &FeatureSnapshotPair, cut: ShiftCut) -> Result<f64> {
    let common: Vec<(f64, f64)> = pair
        .t0_values
        .iter()
        .filter_map(|(user, &v0)| pair.t1_values.get(user).map(|&v1| (v0, v1)))
        .collect();
    if common.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "feature `{}` has {} users in both snapshots, need at least 2",
            pair.feature,
            common.len()
        )));
    }
    if let Some((v0, v1)) = common.iter().find(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(Error::Domain(format!(
            "feature `{}` has a non-finite snapshot value ({v0}, {v1})",
            pair.feature
        )));
    }
    let sorted = sorted_copy(&common.iter().map(|c| c.0).collect::<Vec<_>>());
    let inner: Vec<f64> = cut
        .levels()
        .iter()
        .map(|&(num, den)| quantile_sorted_ratio(&sorted, num, den))
        .collect();
    let moved = common
        .iter()
        .filter(|(v0, v1)| bucket_of(&inner, *v0) != bucket_of(&inner, *v1))
        .count();
    Ok(moved as f64 / common.len() as f64)
}

/// Admission thresholds on the shift ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub binary_max: f64,
    pub quantile_max: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            binary_max: 0.15,
            quantile_max: 0.45,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("binary_max", self.binary_max), ("quantile_max", self.quantile_max)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("threshold {name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityStatus {
    /// Reference feature set; reported for comparison.
    Benchmark,
    Stable,
    Unstable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityVerdict {
    pub feature: String,
    pub shift_quantile: Option<f64>,
    pub shift_binary: Option<f64>,
    pub status: StabilityStatus,
    pub threshold_basis: Thresholds,
}

impl StabilityVerdict {
    /// Either measure within its threshold is enough.
    pub fn admitted(&self) -> bool {
        self.shift_binary.is_some_and(|b| b <= self.threshold_basis.binary_max)
            || self.shift_quantile.is_some_and(|q| q <= self.threshold_basis.quantile_max)
    }
}

/// Builds a verdict from measured shifts. `benchmark` marks the reference
/// feature set and only changes the reported status of a stable feature.
pub fn stability_verdict(
    feature: impl Into<String>,
    shift_quantile: Option<f64>,
    shift_binary: Option<f64>,
    thresholds: Thresholds,
    benchmark: bool,
) -> Result<StabilityVerdict> {
    let feature = feature.into();
    if shift_quantile.is_none() && shift_binary.is_none() {
        return Err(Error::Domain(format!("feature `{feature}` has no shift measure")));
    }
    for v in [shift_quantile, shift_binary].into_iter().flatten() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!(
                "feature `{feature}` has shift ratio {v} outside [0, 1]"
            )));
        }
    }
    let mut verdict = StabilityVerdict {
        feature,
        shift_quantile,
        shift_binary,
        status: StabilityStatus::Stable,
        threshold_basis: thresholds,
    };
    verdict.status = match (verdict.admitted(), benchmark) {
        (false, _) => StabilityStatus::Unstable,
        (true, true) => StabilityStatus::Benchmark,
        (true, false) => StabilityStatus::Stable,
    };
    Ok(verdict)
}

impl StabilityVerdict {
    /// Measures both cut bases on a snapshot pair.
    pub fn measure(pair: &FeatureSnapshotPair, thresholds: Thresholds) -> Result<Self> {
        stability_verdict(
            pair.feature.clone(),
            Some(shift_ratio(pair, ShiftCut::Quantile4)?),
            Some(shift_ratio(pair, ShiftCut::BinaryP25P75)?),
            thresholds,
            false,
        )
    }

    /// Measures several features concurrently; output follows input order.
    pub fn measure_all(pairs: &[FeatureSnapshotPair], thresholds: Thresholds) -> Result<Vec<Self>> {
        pairs
            .par_iter()
            .map(|p| Self::measure(p, thresholds))
            .collect()
    }
}

/// Pre-search hook. Returns the report and the admitted features in input
/// order. Any unstable feature makes the report a rejection naming it; the
/// caller continues with whatever was admitted.
pub fn pre_search_filter(verdicts: &[StabilityVerdict]) -> Result<(HookReport, Vec<String>)> {
    let mut admitted = Vec::new();
    let mut rejected = Vec::new();
    for v in verdicts {
        if v.shift_quantile.is_none() && v.shift_binary.is_none() {
            return Err(Error::Domain(format!("feature `{}` has no shift measure", v.feature)));
        }
        if v.admitted() {
            admitted.push(v.feature.clone());
        } else {
            rejected.push(v.feature.clone());
        }
    }
    if rejected.is_empty() {
        let report = HookReport::pass(
            Stage::PreSearch,
            format!("{} of {} features stable", admitted.len(), verdicts.len()),
        );
        return Ok((report, admitted));
    }
    let mut reasons = vec![codes::FEATURE_UNSTABLE];
    if admitted.is_empty() {
        reasons.push(codes::NO_STABLE_FEATURES);
    }
    let narrative = format!(
        "{} of {} features exceed the shift thresholds: {}",
        rejected.len(),
        verdicts.len(),
        rejected.join(", ")
    );
    let report = HookReport::reject(Stage::PreSearch, reasons, rejected, narrative);
    Ok((report, admitted))
}

#[derive(Debug, Deserialize)]
struct SnapshotRow {
    user_id: String,
    feature_id: String,
    value: f64,
    snapshot: String,
}

/// Reads long-format snapshots (`user_id,feature_id,value,snapshot`) with
/// `snapshot` one of `t0` / `t1`. Pairs come back ordered by feature.
pub fn read_snapshots_csv<R: Read>(reader: R) -> Result<Vec<FeatureSnapshotPair>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut by_feature: BTreeMap<String, [BTreeMap<String, f64>; 2]> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<SnapshotRow>().enumerate() {
        let row = row.map_err(|e| Error::Row {
            row: i + 1,
            message: e.to_string(),
        })?;
        let entry = by_feature.entry(row.feature_id.clone()).or_default();
        let side = match row.snapshot.as_str() {
            "t0" => &mut entry[0],
            "t1" => &mut entry[1],
            other => {
                return Err(Error::Row {
                    row: i + 1,
                    message: format!("snapshot must be t0 or t1, got `{other}`"),
                })
            }
        };
        if side.insert(row.user_id.clone(), row.value).is_some() {
            return Err(Error::Integrity(format!(
                "user `{}` has two {} values for feature `{}`",
                row.user_id, row.snapshot, row.feature_id
            )));
        }
    }
    Ok(by_feature
        .into_iter()
        .map(|(f, [t0, t1])| FeatureSnapshotPair::new(f, t0, t1))
        .collect())
}

/// Long-format writer matching [`read_snapshots_csv`].
pub fn write_snapshots_csv<W: std::io::Write>(pairs: &[FeatureSnapshotPair], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["user_id", "feature_id", "value", "snapshot"])?;
    for p in pairs {
        for (label, side) in [("t0", &p.t0_values), ("t1", &p.t1_values)] {
            for (user, v) in side {
                w.write_record([user.as_str(), p.feature.as_str(), &v.to_string(), label])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<snapshots>", e))?;
    Ok(())
}
