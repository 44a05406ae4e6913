//! Reading experiments from CSV / JSONL and stored estimates from JSON.

use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ExperimentDataset, LiftUnit, MetricEstimate, UserRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Csv,
    Jsonl,
}

/// Column mapping for an experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    pub experiment_id: String,
    #[serde(default = "default_user_column")]
    pub user_column: String,
    pub arm_column: String,
    pub control_arm: String,
    pub feature_columns: Vec<String>,
    pub metric_columns: Vec<String>,
    #[serde(default)]
    pub lift_unit: LiftUnit,
    /// Inferred from the file extension when absent.
    #[serde(default)]
    pub format: Option<InputFormat>,
}

fn default_user_column() -> String {
    "user_id".to_string()
}

impl IngestConfig {
    /// The mapping that reads back what [`write_dataset_csv`] writes.
    pub fn describing(ds: &ExperimentDataset) -> Self {
        IngestConfig {
            experiment_id: ds.experiment_id().to_string(),
            user_column: default_user_column(),
            arm_column: "arm".to_string(),
            control_arm: ds.control().to_string(),
            feature_columns: ds.features().to_vec(),
            metric_columns: ds.metrics().to_vec(),
            lift_unit: ds.lift_unit(),
            format: Some(InputFormat::Csv),
        }
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let file = File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

/// Writes `user_id,arm,<features>,<metrics>` rows in user order. Values use
/// the shortest representation that parses back to the same bits.
pub fn write_dataset_csv<W: Write>(ds: &ExperimentDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["user_id".to_string(), "arm".to_string()];
    header.extend(ds.features().iter().cloned());
    header.extend(ds.metrics().iter().cloned());
    w.write_record(&header)?;
    for u in ds.users() {
        let mut rec = vec![u.user_id.clone(), u.arm.clone()];
        rec.extend(u.features.iter().chain(&u.outcomes).map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io("<dataset>", e))?;
    Ok(())
}

/// Reads and validates an experiment file.
pub fn ingest(path: impl AsRef<Path>, schema: &IngestConfig) -> Result<ExperimentDataset> {
    let path = path.as_ref();
    let format = schema.format.unwrap_or_else(|| {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => InputFormat::Jsonl,
            _ => InputFormat::Csv,
        }
    });
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        InputFormat::Csv => ingest_reader_csv(file, schema),
        InputFormat::Jsonl => ingest_jsonl(BufReader::new(file), schema),
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return Err(Error::Row {
            row,
            message: format!("missing value in column `{column}`"),
        });
    }
    match trimmed.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(v) => Err(Error::Row {
            row,
            message: format!("non-finite value {v} in column `{column}`"),
        }),
        Err(_) => Err(Error::Row {
            row,
            message: format!("non-numeric value `{trimmed}` in column `{column}`"),
        }),
    }
}

fn build(schema: &IngestConfig, users: Vec<UserRecord>) -> Result<ExperimentDataset> {
    ExperimentDataset::new(
        schema.experiment_id.clone(),
        schema.control_arm.clone(),
        schema.feature_columns.clone(),
        schema.metric_columns.clone(),
        schema.lift_unit,
        users,
    )
}

/// Reads a headered CSV, one row per user. Row numbers in errors are 1-based
/// and count data rows only.
pub fn ingest_reader_csv<R: Read>(reader: R, schema: &IngestConfig) -> Result<ExperimentDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
    };
    let user_col = col(&schema.user_column)?;
    let arm_col = col(&schema.arm_column)?;
    let feature_cols = schema
        .feature_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let metric_cols = schema
        .metric_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;

    let mut users = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let get = |c: usize| record.get(c).unwrap_or("");
        let user_id = get(user_col).to_string();
        if user_id.is_empty() {
            return Err(Error::Row {
                row,
                message: "empty user id".into(),
            });
        }
        let features = feature_cols
            .iter()
            .zip(&schema.feature_columns)
            .map(|(&c, name)| parse_cell(get(c), row, name))
            .collect::<Result<Vec<_>>>()?;
        let outcomes = metric_cols
            .iter()
            .zip(&schema.metric_columns)
            .map(|(&c, name)| parse_cell(get(c), row, name))
            .collect::<Result<Vec<_>>>()?;
        users.push(UserRecord {
            user_id,
            features,
            arm: get(arm_col).to_string(),
            outcomes,
        });
    }
    build(schema, users)
}

fn json_scalar_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Reads JSONL, one object per user. Blank lines are skipped.
pub fn ingest_jsonl<R: BufRead>(reader: R, schema: &IngestConfig) -> Result<ExperimentDataset> {
    let mut users = Vec::new();
    let mut row = 0;
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<jsonl input>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        row += 1;
        let obj: Value = serde_json::from_str(&line).map_err(|e| Error::Row {
            row,
            message: format!("invalid json: {e}"),
        })?;
        let field = |name: &str| -> Result<&Value> {
            obj.get(name).ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
            })
        };
        let number = |name: &str| -> Result<f64> {
            match field(name)? {
                Value::Number(n) => n.as_f64().ok_or_else(|| Error::Row {
                    row,
                    message: format!("unrepresentable number in `{name}`"),
                }),
                Value::String(s) => parse_cell(s, row, name),
                Value::Null => Err(Error::Row {
                    row,
                    message: format!("missing value in column `{name}`"),
                }),
                other => Err(Error::Row {
                    row,
                    message: format!("non-numeric value `{other}` in column `{name}`"),
                }),
            }
        };
        let user_id = json_scalar_string(field(&schema.user_column)?).ok_or_else(|| Error::Row {
            row,
            message: "user id must be a string or number".into(),
        })?;
        let arm = json_scalar_string(field(&schema.arm_column)?).ok_or_else(|| Error::Row {
            row,
            message: "arm must be a string or number".into(),
        })?;
        let features = schema
            .feature_columns
            .iter()
            .map(|c| number(c))
            .collect::<Result<Vec<_>>>()?;
        let outcomes = schema
            .metric_columns
            .iter()
            .map(|c| number(c))
            .collect::<Result<Vec<_>>>()?;
        users.push(UserRecord {
            user_id,
            features,
            arm,
            outcomes,
        });
    }
    build(schema, users)
}

/// One entry of a stored-estimate file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StoredEstimate {
    pub policy_id: String,
    pub metric_id: String,
    pub mean: f64,
    pub std_err: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum StoredValue {
    Number(f64),
    Text(String),
}

#[derive(Deserialize)]
struct RawStoredEstimate {
    policy_id: String,
    metric_id: String,
    #[serde(default)]
    mean: Option<StoredValue>,
    #[serde(default)]
    std_err: Option<StoredValue>,
    /// Combined report text such as `+0.282% ± 0.074`.
    #[serde(default)]
    estimate: Option<String>,
}

impl RawStoredEstimate {
    fn resolve(self) -> Result<StoredEstimate> {
        let est = match (self.estimate, self.mean, self.std_err) {
            (Some(text), _, _) | (None, Some(StoredValue::Text(text)), None) => {
                parse_percent_estimate(&text)?
            }
            (None, Some(mean), Some(se)) => {
                MetricEstimate::from_summary(stored_number(mean)?, stored_number(se)?)
            }
            _ => {
                return Err(Error::Config(format!(
                    "stored estimate for `{}`/`{}` needs mean and std_err or an estimate string",
                    self.policy_id, self.metric_id
                )))
            }
        };
        Ok(StoredEstimate {
            policy_id: self.policy_id,
            metric_id: self.metric_id,
            mean: est.mean,
            std_err: est.std_err,
        })
    }
}

fn stored_number(v: StoredValue) -> Result<f64> {
    match v {
        StoredValue::Number(x) => Ok(x),
        StoredValue::Text(s) => parse_scalar(&s, false),
    }
}

/// Reads a JSON list of `{policy_id, metric_id, mean, std_err}` entries.
pub fn read_stored_estimates(path: impl AsRef<Path>) -> Result<Vec<StoredEstimate>> {
    let file = File::open(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
    let raw: Vec<RawStoredEstimate> = serde_json::from_reader(BufReader::new(file))?;
    raw.into_iter().map(RawStoredEstimate::resolve).collect()
}

fn parse_scalar(text: &str, percent_default: bool) -> Result<f64> {
    let normalized = text.trim().replace('\u{2212}', "-");
    let (body, percent) = match normalized.strip_suffix('%') {
        Some(b) => (b.trim(), true),
        None => (normalized.as_str(), percent_default),
    };
    let v: f64 = body
        .parse()
        .map_err(|_| Error::Domain(format!("cannot parse `{text}` as a number")))?;
    if !v.is_finite() {
        return Err(Error::Domain(format!("non-finite value `{text}`")));
    }
    Ok(if percent { v / 100.0 } else { v })
}

/// Parses report text like `-0.049% ± 0.043` into a fractional estimate.
///
/// When the mean carries a `%` sign the standard error is read in the same
/// percent units. Both `±` and `+/-` separators are accepted.
pub fn parse_percent_estimate(text: &str) -> Result<MetricEstimate> {
    let normalized = text.replace("+/-", "±");
    let mut parts = normalized.splitn(2, '±');
    let mean_text = parts.next().unwrap_or("");
    let se_text = parts
        .next()
        .ok_or_else(|| Error::Domain(format!("`{text}` has no ± separator")))?;
    let percent = mean_text.trim().ends_with('%');
    let mean = parse_scalar(mean_text, false)?;
    let std_err = parse_scalar(se_text, percent)?;
    if std_err < 0.0 {
        return Err(Error::Domain(format!("negative standard error in `{text}`")));
    }
    Ok(MetricEstimate::from_summary(mean, std_err))
}
