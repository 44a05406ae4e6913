//! Run configuration: where the data comes from and how to govern it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cohort_policy::experiment::{ingest, ExperimentDataset, IngestConfig};
use cohort_policy::governance::{read_snapshots_csv, FeatureSnapshotPair, GovernConfig};
use cohort_policy::synth::{generate_experiment, PlantedTruth, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    /// Generate the experiment in memory.
    Synthetic { scenario: ScenarioConfig },
    /// Read files; relative paths resolve against the config file.
    Files {
        dataset: PathBuf,
        ingest: IngestConfig,
        snapshots: PathBuf,
        #[serde(default)]
        daily: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Run directory name; a UTC timestamp when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_name: Option<String>,
    /// Parent of the run directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Worker threads; all cores when absent. Never affects outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub input: InputSpec,
    pub govern: GovernConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        if let InputSpec::Files {
            dataset,
            snapshots,
            daily,
            ..
        } = &mut cfg.input
        {
            let base = path.parent().unwrap_or(Path::new("."));
            for p in std::iter::once(dataset).chain(std::iter::once(snapshots)).chain(daily.iter_mut()) {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    /// Applies command-line overrides, then checks every knob.
    pub fn finish(mut self, seed: Option<u64>, threads: Option<usize>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if threads.is_some() {
            self.threads = threads;
        }
        self.govern.seed = self.seed;
        if self.threads == Some(0) {
            bail!("threads must be at least 1");
        }
        if let Some(name) = &self.run_name {
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                bail!("run_name `{name}` is not a plain directory name");
            }
        }
        self.govern.validate()?;
        if let InputSpec::Synthetic { scenario } = &self.input {
            scenario.validate()?;
            if scenario.backtest.is_none() {
                bail!("synthetic input needs a backtest window for governance");
            }
        }
        Ok(self)
    }
}

/// Loaded inputs for one run.
pub struct RunData {
    pub dataset: ExperimentDataset,
    pub snapshots: Vec<FeatureSnapshotPair>,
    pub daily: Vec<ExperimentDataset>,
    pub truth: Option<PlantedTruth>,
}

pub fn load_data(input: &InputSpec) -> Result<RunData> {
    match input {
        InputSpec::Synthetic { scenario } => {
            let exp = generate_experiment(scenario)?;
            Ok(RunData {
                dataset: exp.dataset,
                snapshots: exp.snapshots,
                daily: exp.daily,
                truth: Some(exp.truth),
            })
        }
        InputSpec::Files {
            dataset,
            ingest: schema,
            snapshots,
            daily,
        } => {
            let ds = ingest(dataset, schema)
                .with_context(|| format!("ingesting {}", dataset.display()))?;
            let file = std::fs::File::open(snapshots)
                .with_context(|| format!("opening {}", snapshots.display()))?;
            let pairs = read_snapshots_csv(file)
                .with_context(|| format!("reading {}", snapshots.display()))?;
            let days = daily
                .iter()
                .enumerate()
                .map(|(i, p)| {
                    let mut day_schema = schema.clone();
                    day_schema.experiment_id = format!("{}/day{:03}", schema.experiment_id, i + 1);
                    ingest(p, &day_schema).with_context(|| format!("ingesting {}", p.display()))
                })
                .collect::<Result<_>>()?;
            Ok(RunData {
                dataset: ds,
                snapshots: pairs,
                daily: days,
                truth: None,
            })
        }
    }
}
