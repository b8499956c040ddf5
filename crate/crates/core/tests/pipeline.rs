use std::fs;
use std::path::Path;

use snn_mia::attack::AttackKind;
use snn_mia::config::ExperimentConfig;
use snn_mia::pipeline::{read_scores_csv, report_from_scores, run_experiment, run_sweep, Stage, SweepAxis};
use snn_mia::ModelKind;

const SMALL: &str = r#"
schema_version = 1
master_seed = 21
n_pairs = 2
attacks = ["attack_p", "attack_p_orig", "attack_r", "rmia"]
output_dir = "out"

[dataset]
kind = "blobs"
n_per_class = 30
classes = 3
dim = 6
separation = 2.0

[model]
pools = ["snn", "ann"]
hidden = [12]
latencies = [1, 2]

[train]
epochs = 4
batch_size = 8
finetune_epochs = 2

[dropout]
enabled = true
p_grid = [0.1]
n_grid = [2]
"#;

fn config(dir: &Path, text: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text, dir).unwrap();
    cfg.output_dir = dir.join("out");
    cfg
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let run = run_experiment(&cfg).unwrap();
    // 2 latencies x 2 pools x {plain, dropout}
    assert_eq!(run.report.settings.len(), 8);
    for s in &run.report.settings {
        for attack in AttackKind::ALL {
            let v = s.auc(attack).unwrap();
            assert!((0.0..=1.0).contains(&v), "{attack} auc {v}");
        }
    }
    let out = &run.output_dir;
    for f in ["scores.csv", "report.json", "labels.csv", "training.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(out.join("snn_pool_T1/confidence.csv").is_file());
    assert!(out.join("ann_pool_T2_dropout/rmia/roc.csv").is_file());
    assert!(out.join("snn_pool_T1_dropout/dropout_search.json").is_file());

    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    assert!(scores.starts_with(&format!("# {}\n", cfg.header())));
    let labels = fs::read_to_string(out.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().filter(|l| l.ends_with(",1")).count(), 45);
}

#[test]
fn checkpoints_are_reused_and_results_repeat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let first = run_experiment(&cfg).unwrap();
    let before = fs::read(first.output_dir.join("scores.csv")).unwrap();
    let ckpts: Vec<_> = fs::read_dir(cfg.checkpoint_dir()).unwrap().collect();
    assert!(!ckpts.is_empty());

    let second = run_experiment(&cfg).unwrap();
    assert_eq!(fs::read(second.output_dir.join("scores.csv")).unwrap(), before);
    assert_eq!(first.report, second.report);
}

#[test]
fn different_seed_changes_scores() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), SMALL);
    cfg.dropout.enabled = false;
    let a = run_experiment(&cfg).unwrap();
    cfg.master_seed += 1;
    cfg.output_dir = dir.path().join("out2");
    let b = run_experiment(&cfg).unwrap();
    assert_ne!(a.report.config_hash, b.report.config_hash);
    assert_ne!(a.scores, b.scores);
}

#[test]
fn report_rebuilt_from_scores_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), SMALL);
    let run = run_experiment(&cfg).unwrap();
    let rebuilt = dir.path().join("rebuilt");
    let report = report_from_scores(&run.output_dir.join("scores.csv"), Some(&rebuilt), cfg.histogram_bins).unwrap();
    assert_eq!(report, run.report);
    assert_eq!(
        fs::read(rebuilt.join("report.json")).unwrap(),
        fs::read(run.output_dir.join("report.json")).unwrap()
    );
    let (hash, seed, tables) = read_scores_csv(&run.output_dir.join("scores.csv")).unwrap();
    assert_eq!((hash, seed), (cfg.config_hash(), cfg.master_seed));
    assert_eq!(tables, run.scores);
}

#[test]
fn latency_sweep_matches_single_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), SMALL);
    cfg.dropout.enabled = false;
    cfg.model.pools = vec![ModelKind::Snn];
    let rows = run_sweep(&cfg, SweepAxis::Latency).unwrap();
    assert_eq!(rows.len(), 2 * AttackKind::ALL.len());

    let full = run_experiment(&cfg).unwrap();
    for row in &rows {
        let t: usize = row.axis_value.parse().unwrap();
        let setting = full.report.find(ModelKind::Snn, Some(t), false).unwrap();
        assert_eq!(setting.attacks[&row.attack], row.report, "T={t} {}", row.attack);
    }
    let sweep = fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 2 + rows.len());
}

#[test]
fn dropout_sweep_has_off_and_on_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), SMALL);
    cfg.model.pools = vec![ModelKind::Snn];
    let rows = run_sweep(&cfg, SweepAxis::Dropout).unwrap();
    let off = rows.iter().filter(|r| r.axis_value == "off").count();
    let on = rows.iter().filter(|r| r.axis_value == "on").count();
    assert_eq!((off, on), (AttackKind::ALL.len(), AttackKind::ALL.len()));
}

#[test]
fn ann_target_runs_without_latency() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL
        .replace("pools = [\"snn\", \"ann\"]", "target = \"ann\"\npools = [\"ann\"]")
        .replace("latencies = [1, 2]", "latencies = [1]");
    let mut cfg = config(dir.path(), &text);
    cfg.dropout.enabled = false;
    let run = run_experiment(&cfg).unwrap();
    assert_eq!(run.report.settings.len(), 1);
    assert_eq!(run.report.settings[0].latency, None);
}

#[test]
fn missing_dataset_fails_in_dataset_stage() {
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "kind = \"blobs\"\nn_per_class = 30\nclasses = 3\ndim = 6\nseparation = 2.0",
        "kind = \"csv\"\npath = \"nowhere.csv\"",
    );
    let cfg = config(dir.path(), &text);
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.stage, Stage::Dataset);
    assert!(err.to_string().starts_with("dataset stage failed"), "{err}");
}

#[test]
fn csv_dataset_round_trips_through_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = snn_mia::dataset::make_moons(20, 0.1, 5).unwrap();
    data.write_csv(&dir.path().join("moons.csv"), "moons").unwrap();
    let text = SMALL.replace(
        "kind = \"blobs\"\nn_per_class = 30\nclasses = 3\ndim = 6\nseparation = 2.0",
        "kind = \"csv\"\npath = \"moons.csv\"",
    );
    let mut cfg = config(dir.path(), &text);
    cfg.dropout.enabled = false;
    let run = run_experiment(&cfg).unwrap();
    assert_eq!(run.scores[0].len(), 40);
}
