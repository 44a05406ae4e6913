//! Policy table CSV: one row per policy with per-metric mean / std_err.
//!
//! Columns: `format_version, policy_id, feature, cut, actions`, then
//! `<metric>_mean, <metric>_std_err` per metric. Global policies have an empty
//! feature and cut `global`; slot actions are `|`-separated.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use super::PolicyCandidate;
use crate::error::{Error, Result};
use crate::experiment::MetricEstimate;
use crate::segmentation::CutSpec;

pub const POLICY_TABLE_VERSION: u32 = 1;

/// Evaluated policies of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub experiment_id: String,
    pub metrics: Vec<String>,
    pub policies: Vec<PolicyCandidate>,
}

impl PolicyTable {
    pub fn get(&self, id: &str) -> Option<&PolicyCandidate> {
        self.policies.iter().find(|p| p.policy_id == id)
    }

    pub fn ids(&self) -> HashSet<&str> {
        self.policies.iter().map(|p| p.policy_id.as_str()).collect()
    }

    /// Policies sorted by id.
    pub fn sorted(&self) -> Vec<&PolicyCandidate> {
        let mut v: Vec<&PolicyCandidate> = self.policies.iter().collect();
        v.sort_by(|a, b| a.policy_id.cmp(&b.policy_id));
        v
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            "format_version".to_string(),
            "policy_id".into(),
            "feature".into(),
            "cut".into(),
            "actions".into(),
        ];
        for m in &self.metrics {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std_err"));
        }
        w.write_record(&header)?;
        for p in self.sorted() {
            let mut row = vec![
                POLICY_TABLE_VERSION.to_string(),
                p.policy_id.clone(),
                p.feature().unwrap_or("").to_string(),
                p.cut.as_ref().map_or_else(|| "global".to_string(), CutSpec::descriptor),
                p.assignment.join("|"),
            ];
            for m in &self.metrics {
                let e = p.estimate(m)?;
                row.push(e.mean.to_string());
                row.push(e.std_err.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<policy table>", e))?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: Read>(experiment_id: &str, reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::MissingColumn {
                    column: name.to_string(),
                })
        };
        let id_col = col("policy_id")?;
        let feature_col = col("feature")?;
        let cut_col = col("cut")?;
        let actions_col = col("actions")?;
        let metrics: Vec<String> = headers
            .iter()
            .filter_map(|h| h.strip_suffix("_mean"))
            .map(str::to_string)
            .collect();
        let metric_cols = metrics
            .iter()
            .map(|m| Ok((col(&format!("{m}_mean"))?, col(&format!("{m}_std_err"))?)))
            .collect::<Result<Vec<_>>>()?;

        let mut policies = Vec::new();
        let mut seen = HashSet::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let rec = rec?;
            let get = |c: usize| rec.get(c).unwrap_or("");
            let id = get(id_col).to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::Integrity(format!("duplicate policy id `{id}`")));
            }
            let cut = match get(cut_col) {
                "global" => None,
                d => Some(CutSpec::parse(get(feature_col), d)?),
            };
            let assignment: Vec<String> = get(actions_col).split('|').map(str::to_string).collect();
            let expected = cut.as_ref().map_or(1, CutSpec::slot_count);
            if assignment.len() != expected {
                return Err(Error::Row {
                    row,
                    message: format!("{} actions for {expected} slots", assignment.len()),
                });
            }
            let mut estimates = BTreeMap::new();
            for (m, &(mc, sc)) in metrics.iter().zip(&metric_cols) {
                let parse = |c: usize| -> Result<f64> {
                    get(c)
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Row {
                            row,
                            message: format!("bad number `{}` for metric `{m}`", get(c)),
                        })
                };
                estimates.insert(m.clone(), MetricEstimate::from_summary(parse(mc)?, parse(sc)?));
            }
            policies.push(PolicyCandidate {
                policy_id: id,
                cut,
                assignment,
                estimates,
            });
        }
        Ok(PolicyTable {
            experiment_id: experiment_id.to_string(),
            metrics,
            policies,
        })
    }

    pub fn read_csv_file(experiment_id: &str, path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::read_csv(experiment_id, file)
    }
}
