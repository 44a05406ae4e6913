use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cohort_policy::evaluation::InstructionKind;
use cohort_policy::governance::{GovernConfig, Recommendation};
use cohort_policy::synth::{conflict_scenario, LiftProfile};
use cohort_policy_cli::config::{InputSpec, RunConfig};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cohort-policy"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn pipeline_config(dir: &Path, name: &str, decay: bool) -> PathBuf {
    let mut scenario = conflict_scenario(7, 0.5);
    if decay {
        scenario.backtest.as_mut().unwrap().profile = LiftProfile::Decay { zero_day: 4 };
    }
    let mut govern = GovernConfig::new(InstructionKind::MaximizeWithConstraint, "m1", Some("m2"));
    govern.search.weight_samples = 300;
    let cfg = RunConfig {
        seed: 7,
        run_name: Some(name.into()),
        output_dir: None,
        threads: None,
        input: InputSpec::Synthetic { scenario },
        govern,
    };
    let path = dir.join(format!("{name}.json"));
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn pipeline_recommends_and_report_summarizes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pipeline_config(dir.path(), "ok", false);
    let out = dir.path().join("runs");
    let o = bin(&["--config", s(&cfg), "--out", s(&out), "pipeline"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("ok");
    for f in [
        "manifest.json",
        "config.json",
        "policy_table.csv",
        "candidates.json",
        "frontier.json",
        "frontier_coordinates.csv",
        "hook_reports.jsonl",
        "stability.json",
        "backtest.json",
        "recommendation.json",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    assert!(!run.join("rejection.json").exists());

    let o = bin(&["report", "--run", s(&run)]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("recommended policy: activity/individual:4/a2+a2+a1+a1"), "{text}");
    assert!(text.contains("FEATURE_UNSTABLE"));
}

#[test]
fn decaying_lift_exits_two_with_rejection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pipeline_config(dir.path(), "decay", true);
    let out = dir.path().join("runs");
    let o = bin(&["--config", s(&cfg), "--out", s(&out), "pipeline"]);
    assert_eq!(o.status.code(), Some(2));
    let run = out.join("decay");
    assert!(!run.join("recommendation.json").exists());
    let rej: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("rejection.json")).unwrap()).unwrap();
    let codes: Vec<&str> = rej["reason_codes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_str().unwrap())
        .collect();
    assert!(codes.contains(&"BACKTEST_DRIFT"), "{codes:?}");
    assert!(codes.contains(&"REFINEMENT_EXHAUSTED"), "{codes:?}");
}

#[test]
fn malformed_config_exits_one_without_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"seed": 1, "input": {"source": "synthetic"}, "bogus": true}"#).unwrap();
    let out = dir.path().join("runs");
    let o = bin(&["--config", s(&cfg), "--out", s(&out), "pipeline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
    assert!(!out.exists());
}

#[test]
fn invalid_knob_exits_one_without_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pipeline_config(dir.path(), "bad_tau", false);
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cfg).unwrap()).unwrap();
    v["govern"]["search"]["tau"] = serde_json::json!(-1.0);
    std::fs::write(&cfg, v.to_string()).unwrap();
    let out = dir.path().join("runs");
    let o = bin(&["--config", s(&cfg), "--out", s(&out), "pipeline"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau"));
    assert!(!out.exists());
}

#[test]
fn existing_run_directory_is_not_reused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pipeline_config(dir.path(), "twice", false);
    let out = dir.path().join("runs");
    assert_eq!(bin(&["--config", s(&cfg), "--out", s(&out), "search"]).status.code(), Some(0));
    let o = bin(&["--config", s(&cfg), "--out", s(&out), "search"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("already exists"));
}

#[test]
fn generated_files_feed_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scenario.json");
    std::fs::write(&scen, serde_json::to_string(&conflict_scenario(7, 0.5)).unwrap()).unwrap();
    let data = dir.path().join("data");
    let o = bin(&["--config", s(&scen), "--out", s(&data), "synth", "scenario"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));

    let o = bin(&["--config", s(&data.join("ingest.json")), "ingest", "--input", s(&data.join("experiment.csv"))]);
    assert_eq!(o.status.code(), Some(0));
    let summary: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(summary["users"], 6000);

    let ingest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(data.join("ingest.json")).unwrap()).unwrap();
    let daily: Vec<String> = (1..=14).map(|d| format!("data/daily/day{d:03}.csv")).collect();
    let cfg = serde_json::json!({
        "seed": 7,
        "run_name": "files",
        "input": {
            "source": "files",
            "dataset": "data/experiment.csv",
            "ingest": ingest,
            "snapshots": "data/snapshots.csv",
            "daily": daily,
        },
        "govern": {
            "kind": "maximize_with_constraint",
            "primary_metric": "m1",
            "secondary_metric": "m2",
            "search": {"weight_samples": 300},
        },
    });
    let cfg_path = dir.path().join("files.json");
    std::fs::write(&cfg_path, cfg.to_string()).unwrap();
    let out = dir.path().join("runs");
    let o = bin(&["--config", s(&cfg_path), "--out", s(&out), "pipeline"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rec: Recommendation =
        serde_json::from_str(&std::fs::read_to_string(out.join("files/recommendation.json")).unwrap()).unwrap();
    assert_eq!(rec.policy_id, "activity/individual:4/a2+a2+a1+a1");
}

#[test]
fn filter_and_govern_subcommands() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = pipeline_config(dir.path(), "f", false);
    let out = dir.path().join("runs");
    let o = bin(&["--config", s(&cfg), "--out", s(&out), "filter"]);
    assert_eq!(o.status.code(), Some(0));
    let stab: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("f/stability.json")).unwrap()).unwrap();
    assert_eq!(stab["admitted"], serde_json::json!(["activity", "tenure"]));

    let cfg2 = pipeline_config(dir.path(), "g", false);
    let o = bin(&[
        "--config",
        s(&cfg2),
        "--out",
        s(&out),
        "govern",
        "--policy",
        "activity/individual:4/a2+a2+a1+a1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("g/backtest.json").is_file());

    let cfg3 = pipeline_config(dir.path(), "h", false);
    let o = bin(&["--config", s(&cfg3), "--out", s(&out), "govern", "--policy", "nope"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn benchmark_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bench_cfg = dir.path().join("bench.json");
    std::fs::write(&bench_cfg, r#"{"experiments": 3, "n_users": 800}"#).unwrap();
    let bench = dir.path().join("bench");
    let o = bin(&["--config", s(&bench_cfg), "--out", s(&bench), "synth", "benchmark"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_dir(bench.join("policy_tables")).unwrap().count(), 3);

    let report = dir.path().join("report");
    let args = |rankings: &Path| {
        vec![
            "--out".to_string(),
            s(&report).to_string(),
            "eval".into(),
            "--instructions".into(),
            s(&bench.join("instructions.jsonl")).into(),
            "--rankings".into(),
            s(rankings).into(),
            "--ground-truth".into(),
            s(&bench.join("ground_truth.jsonl")).into(),
        ]
    };
    let ok = args(&bench.join("oracle_rankings.jsonl"));
    let o = bin(&ok.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(report.join("report.csv")).unwrap();
    assert!(csv.starts_with("format_version,selector,instructions,nDCG@1"));
    assert!(csv.contains("oracle,15,1.000000"));

    let stray = dir.path().join("stray.jsonl");
    std::fs::write(
        &stray,
        r#"{"selector_name":"x","experiment_id":"nowhere","instruction_idx":0,"ranked":["a"]}"#,
    )
    .unwrap();
    let bad = args(&stray);
    let o = bin(&bad.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere#0"));

    let empty = dir.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let bad = args(&empty);
    assert_eq!(bin(&bad.iter().map(String::as_str).collect::<Vec<_>>()).status.code(), Some(1));
}

#[test]
fn same_seed_reproduces_synth_output() {
    let dir = tempfile::tempdir().unwrap();
    let scen = dir.path().join("scenario.json");
    std::fs::write(&scen, serde_json::to_string(&conflict_scenario(3, 0.5)).unwrap()).unwrap();
    for (name, threads) in [("a", "1"), ("b", "3")] {
        let out = dir.path().join(name);
        let o = bin(&["--config", s(&scen), "--out", s(&out), "--threads", threads, "synth", "scenario"]);
        assert_eq!(o.status.code(), Some(0));
    }
    for f in ["experiment.csv", "snapshots.csv", "planted_truth.json", "daily/day007.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join("a").join(f)).unwrap(),
            std::fs::read(dir.path().join("b").join(f)).unwrap(),
            "{f}"
        );
    }
}
