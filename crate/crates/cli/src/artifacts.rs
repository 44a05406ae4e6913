//! Run-directory layout. Every file is versioned and free of timestamps so
//! two runs with the same config and seed are byte-identical.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cohort_policy::experiment::ExperimentDataset;
use cohort_policy::frontier::write_frontier_coordinates;
use cohort_policy::governance::{
    BacktestResult, GovernConfig, GovernOutcome, HookReport, Recommendation, StabilityVerdict,
};
use cohort_policy::policy::SearchOutput;

use crate::config::RunConfig;

pub const FORMAT_VERSION: u32 = 1;

/// Wraps a payload that carries no version of its own.
#[derive(Debug, Serialize)]
pub struct Versioned<'a, T: Serialize> {
    pub format_version: u32,
    pub data: &'a T,
}

impl<'a, T: Serialize> Versioned<'a, T> {
    pub fn new(data: &'a T) -> Self {
        Versioned {
            format_version: FORMAT_VERSION,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub command: String,
    pub experiment_id: String,
    pub seed: u64,
    pub status: String,
    pub files: Vec<String>,
}

/// Written instead of a recommendation when governance rejects everything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub format_version: u32,
    pub experiment_id: String,
    /// Codes of every rejecting hook, first occurrence order.
    pub reason_codes: Vec<String>,
    pub rejected_features: Vec<String>,
    pub rejected_policies: Vec<String>,
    pub narrative: String,
}

impl Rejection {
    pub fn from_outcome(ds: &ExperimentDataset, outcome: &GovernOutcome) -> Self {
        let mut reason_codes: Vec<String> = Vec::new();
        for r in outcome.trail.iter().filter(|r| !r.is_pass()) {
            for c in &r.reason_codes {
                if !reason_codes.contains(c) {
                    reason_codes.push(c.clone());
                }
            }
        }
        Rejection {
            format_version: FORMAT_VERSION,
            experiment_id: ds.experiment_id().to_string(),
            reason_codes,
            rejected_features: outcome
                .verdicts
                .iter()
                .filter(|v| !v.admitted())
                .map(|v| v.feature.clone())
                .collect(),
            rejected_policies: outcome.rejected_policies.clone(),
            narrative: outcome
                .trail
                .last()
                .map(|r| r.narrative.clone())
                .unwrap_or_default(),
        }
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

pub(crate) fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// A run directory being filled in.
pub struct RunDir {
    path: PathBuf,
    command: String,
    files: BTreeSet<String>,
}

impl RunDir {
    /// Creates `parent/<run_name>` and writes the resolved config. Refuses
    /// to reuse an existing directory.
    pub fn create(parent: &Path, cfg: &RunConfig, command: &str) -> Result<Self> {
        let name = match &cfg.run_name {
            Some(n) => n.clone(),
            None => chrono::Utc::now()
                .format("run-%Y%m%dT%H%M%S%.3fZ")
                .to_string(),
        };
        let path = parent.join(name);
        if path.exists() {
            bail!("run directory {} already exists", path.display());
        }
        std::fs::create_dir_all(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut dir = RunDir {
            path,
            command: command.to_string(),
            files: BTreeSet::new(),
        };
        let mut resolved = cfg.clone();
        // Neither knob changes results; keeping them out keeps runs comparable.
        resolved.threads = None;
        resolved.output_dir = None;
        dir.write_json("config.json", &resolved)?;
        Ok(dir)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn file(&mut self, name: &str) -> PathBuf {
        self.files.insert(name.to_string());
        self.path.join(name)
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.file(name);
        write_json(&p, value)
    }

    pub fn write_search(&mut self, search: &SearchOutput, govern: &GovernConfig) -> Result<()> {
        let p = self.file("policy_table.csv");
        search.table.write_csv_file(&p)?;
        self.write_json("candidates.json", &Versioned::new(&search.candidates))?;
        self.write_json("frontier.json", &search.frontier)?;

        let metrics = &search.table.metrics;
        let m1 = govern.primary_metric.as_str();
        let m2 = govern
            .secondary_metric
            .as_deref()
            .or_else(|| metrics.iter().map(String::as_str).find(|m| *m != m1))
            .unwrap_or(m1);
        let p = self.file("frontier_coordinates.csv");
        let mut w = create(&p)?;
        write_frontier_coordinates(&mut w, &search.table.policies, (m1, m2), &search.frontier)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_stability(&mut self, verdicts: &[StabilityVerdict], admitted: &[String]) -> Result<()> {
        #[derive(Serialize)]
        struct Stability<'a> {
            format_version: u32,
            admitted: &'a [String],
            verdicts: &'a [StabilityVerdict],
        }
        self.write_json(
            "stability.json",
            &Stability {
                format_version: FORMAT_VERSION,
                admitted,
                verdicts,
            },
        )
    }

    pub fn write_trail(&mut self, trail: &[HookReport]) -> Result<()> {
        let p = self.file("hook_reports.jsonl");
        let mut w = create(&p)?;
        for r in trail {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_backtest(&mut self, bt: &BacktestResult) -> Result<()> {
        self.write_json("backtest.json", &Versioned::new(bt))
    }

    /// Writes the manifest last and returns the directory.
    pub fn finish(mut self, experiment_id: &str, seed: u64, status: &str) -> Result<PathBuf> {
        self.files.insert("manifest.json".into());
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            command: self.command.clone(),
            experiment_id: experiment_id.to_string(),
            seed,
            status: status.to_string(),
            files: self.files.iter().cloned().collect(),
        };
        write_json(&self.path.join("manifest.json"), &manifest)?;
        Ok(self.path)
    }
}

fn read<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Plain-text digest of a finished run directory.
pub fn summarize(run: &Path) -> Result<String> {
    use std::fmt::Write as _;
    let manifest: Manifest = read(&run.join("manifest.json"))?;
    let mut s = String::new();
    writeln!(s, "run:        {}", run.display())?;
    writeln!(s, "command:    {}", manifest.command)?;
    writeln!(s, "experiment: {}", manifest.experiment_id)?;
    writeln!(s, "seed:       {}", manifest.seed)?;
    writeln!(s, "status:     {}", manifest.status)?;

    let trail = run.join("hook_reports.jsonl");
    if trail.exists() {
        writeln!(s, "\nhooks:")?;
        let text = std::fs::read_to_string(&trail)?;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let r: HookReport = serde_json::from_str(line)?;
            let verdict = if r.is_pass() { "pass" } else { "reject" };
            let stage = serde_json::to_value(r.stage)?;
            write!(s, "  {:<20} {:<7}", stage.as_str().unwrap_or("?"), verdict)?;
            if !r.reason_codes.is_empty() {
                write!(s, " {}", r.reason_codes.join(","))?;
            }
            writeln!(s, "  {}", r.narrative)?;
        }
    }

    let rec = run.join("recommendation.json");
    let rej = run.join("rejection.json");
    if rec.exists() {
        let r: Recommendation = read(&rec)?;
        writeln!(s, "\nrecommended policy: {}", r.policy_id)?;
        for seg in &r.segments {
            writeln!(s, "  {:<40} n={:<7} -> {}", seg.segment, seg.users, seg.action)?;
        }
        for (m, e) in &r.estimates {
            writeln!(s, "  {m}: {:+.4} (se {:.4})", e.mean, e.std_err)?;
        }
    } else if rej.exists() {
        let r: Rejection = read(&rej)?;
        writeln!(s, "\nno recommendation: {}", r.reason_codes.join(", "))?;
        if !r.rejected_policies.is_empty() {
            writeln!(s, "  rejected policies: {}", r.rejected_policies.join(", "))?;
        }
        if !r.rejected_features.is_empty() {
            writeln!(s, "  rejected features: {}", r.rejected_features.join(", "))?;
        }
    }
    Ok(s)
}
