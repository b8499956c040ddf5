//! End-to-end experiment runs: plan, train, confidences, attacks, report.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{grid_search_dropout, score_table, AttackKind, GridSearchResult, ScoreTable};
use crate::config::ExperimentConfig;
use crate::dataset::plan_splits;
use crate::error::{Error, Result};
use crate::game::{
    build_confidence_table, write_file, CheckpointStore, GameTrainer, MembershipLabels, ModelSpec,
    Role,
};
use crate::metrics::{histogram, roc, AttackReport, FPR_TARGETS};
use crate::network::{Model, ModelKind};
use crate::seeds;
use crate::train::TrainedModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Config,
    Dataset,
    Plan,
    Train,
    Confidences,
    Attacks,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Dataset => "dataset",
            Stage::Plan => "plan",
            Stage::Train => "train",
            Stage::Confidences => "confidences",
            Stage::Attacks => "attacks",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage} stage failed: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

fn at(stage: Stage) -> impl FnOnce(Error) -> StageError {
    move |source| StageError { stage, source }
}

/// Metrics of one `(pool kind, latency, dropout)` combination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub pool_kind: ModelKind,
    #[serde(rename = "T")]
    pub latency: Option<usize>,
    pub dropout_p: Option<f64>,
    #[serde(rename = "dropout_N")]
    pub dropout_n: Option<usize>,
    pub attacks: BTreeMap<AttackKind, AttackReport>,
}

impl SettingReport {
    pub fn auc(&self, attack: AttackKind) -> Option<f64> {
        self.attacks.get(&attack).map(|r| r.auc)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config_hash: String,
    pub master_seed: u64,
    pub settings: Vec<SettingReport>,
}

impl Report {
    pub fn find(
        &self,
        pool_kind: ModelKind,
        latency: Option<usize>,
        dropout: bool,
    ) -> Option<&SettingReport> {
        self.settings.iter().find(|s| {
            s.pool_kind == pool_kind && s.latency == latency && s.dropout_p.is_some() == dropout
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub name: String,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub report: Report,
    pub scores: Vec<ScoreTable>,
    pub models: Vec<ModelSummary>,
    pub searches: Vec<GridSearchResult>,
}

impl RunSummary {
    pub fn target(&self, latency: Option<usize>) -> Option<&ModelSummary> {
        let name = match latency {
            Some(t) => format!("target@T{t}"),
            None => "target".to_string(),
        };
        self.models.iter().find(|m| m.name == name)
    }
}

fn chain_tag(kind: ModelKind, chain: &[usize]) -> String {
    match kind {
        ModelKind::Ann => "ann".into(),
        ModelKind::Snn => format!(
            "snn-t{}",
            chain.iter().map(|t| t.to_string()).collect::<Vec<_>>().join("-")
        ),
    }
}

/// Trains `roles` along the latency chain; one entry per chain step (a
/// single entry for conventional models).
fn train_chain(
    trainer: &GameTrainer<'_>,
    spec: &ModelSpec,
    roles: &[Role],
    chain: &[usize],
) -> Result<Vec<Vec<TrainedModel>>> {
    let mut out = vec![trainer.train_group(spec, roles, &chain_tag(spec.kind, &chain[..1]))?];
    if spec.kind == ModelKind::Snn {
        for k in 1..chain.len() {
            let next = trainer.extend_group(&out[k - 1], roles, chain[k], &chain_tag(spec.kind, &chain[..=k]))?;
            out.push(next);
        }
    }
    Ok(out)
}

fn setting_dir(table: &ScoreTable) -> String {
    let mut name = format!("{}_pool", table.pool_kind);
    if let Some(t) = table.latency {
        name.push_str(&format!("_T{t}"));
    }
    if table.dropout.is_some() {
        name.push_str("_dropout");
    }
    name
}

fn fmt_opt<T: fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

const SCORE_COLUMNS: &str = "sample_id,member,attack_p,attack_p_orig,attack_r,rmia,dropout_p,dropout_N,pool_kind,T";

pub fn write_scores_csv(path: &Path, header: &str, tables: &[ScoreTable]) -> Result<()> {
    let mut out = format!("# {header}\n{SCORE_COLUMNS}\n");
    for table in tables {
        let (p, n) = match table.dropout {
            Some((p, n)) => (Some(p), Some(n)),
            None => (None, None),
        };
        for i in 0..table.len() {
            out.push_str(&format!("{i},{}", table.member[i] as u8));
            for attack in AttackKind::ALL {
                out.push(',');
                if let Some(s) = table.scores.get(&attack) {
                    out.push_str(&s[i].to_string());
                }
            }
            out.push_str(&format!(
                ",{},{},{},{}\n",
                fmt_opt(p),
                fmt_opt(n),
                table.pool_kind,
                fmt_opt(table.latency)
            ));
        }
    }
    write_file(path, &out)
}

/// Parsed `config_hash` and `master_seed` from a header comment.
pub fn parse_header(line: &str) -> Option<(String, u64)> {
    let body = line.strip_prefix('#')?.trim();
    let mut hash = None;
    let mut seed = None;
    for part in body.split_whitespace() {
        if let Some(v) = part.strip_prefix("config_hash=") {
            hash = Some(v.to_string());
        } else if let Some(v) = part.strip_prefix("master_seed=") {
            seed = v.parse().ok();
        }
    }
    Some((hash?, seed?))
}

/// Reads `scores.csv` back into per-setting tables, in file order.
pub fn read_scores_csv(path: &Path) -> Result<(String, u64, Vec<ScoreTable>)> {
    let bad = |reason: String| Error::Format {
        kind: "scores csv",
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or_default();
    let (hash, seed) = parse_header(first).ok_or_else(|| bad("missing header comment".into()))?;
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != SCORE_COLUMNS {
        return Err(bad(format!("unexpected columns {headers:?}")));
    }
    let mut tables: Vec<ScoreTable> = Vec::new();
    let mut keys: Vec<[String; 4]> = Vec::new();
    for record in reader.records() {
        let r = record?;
        let key = [r[6].to_string(), r[7].to_string(), r[8].to_string(), r[9].to_string()];
        let idx = match keys.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                let opt_num = |s: &str| -> Result<Option<usize>> {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse().map(Some).map_err(|_| bad(format!("bad integer '{s}'")))
                    }
                };
                let dropout = match (key[0].as_str(), opt_num(&key[1])?) {
                    ("", None) => None,
                    (p, Some(n)) => Some((p.parse().map_err(|_| bad(format!("bad dropout_p '{p}'")))?, n)),
                    _ => return Err(bad("dropout_p and dropout_N must be set together".into())),
                };
                keys.push(key.clone());
                tables.push(ScoreTable {
                    member: Vec::new(),
                    scores: BTreeMap::new(),
                    dropout,
                    pool_kind: key[2].parse().map_err(|e: Error| bad(e.to_string()))?,
                    latency: opt_num(&key[3])?,
                });
                tables.len() - 1
            }
        };
        let table = &mut tables[idx];
        let row = table.member.len();
        let id: usize = r[0].parse().map_err(|_| bad("bad sample_id".into()))?;
        if id != row {
            return Err(bad(format!("sample ids out of order at {id}")));
        }
        table.member.push(match &r[1] {
            "1" => true,
            "0" => false,
            other => return Err(bad(format!("bad member bit '{other}'"))),
        });
        for (k, attack) in AttackKind::ALL.into_iter().enumerate() {
            let cell = &r[2 + k];
            let present = table.scores.contains_key(&attack);
            if cell.is_empty() {
                if present {
                    return Err(bad(format!("missing {attack} score")));
                }
                continue;
            }
            if row > 0 && !present {
                return Err(bad(format!("{attack} appears mid-setting")));
            }
            let v: f64 = cell.parse().map_err(|_| bad(format!("bad score '{cell}'")))?;
            table.scores.entry(attack).or_default().push(v);
        }
    }
    Ok((hash, seed, tables))
}

fn setting_report(table: &ScoreTable) -> Result<SettingReport> {
    let attacks = table
        .scores
        .iter()
        .map(|(&a, s)| Ok((a, AttackReport::from_scores(s, &table.member)?)))
        .collect::<Result<_>>()?;
    Ok(SettingReport {
        pool_kind: table.pool_kind,
        latency: table.latency,
        dropout_p: table.dropout.map(|d| d.0),
        dropout_n: table.dropout.map(|d| d.1),
        attacks,
    })
}

/// Writes `report.json` plus per-setting `roc.csv` and `hist.csv` files.
pub fn write_report(
    out: &Path,
    config_hash: &str,
    master_seed: u64,
    tables: &[ScoreTable],
    bins: usize,
) -> Result<Report> {
    let header = format!("config_hash={config_hash} master_seed={master_seed}");
    let settings = tables.iter().map(setting_report).collect::<Result<Vec<_>>>()?;
    for table in tables {
        let dir = out.join(setting_dir(table));
        for (attack, scores) in &table.scores {
            let curve = roc(scores, &table.member)?;
            let mut text = format!("# {header}\nbeta,fpr,tpr\n");
            for p in &curve.points {
                text.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
            }
            write_file(&dir.join(attack.column()).join("roc.csv"), &text)?;
            let h = histogram(scores, &table.member, bins)?;
            let mut text = format!("# {header}\nbin_lo,bin_hi,member_count,nonmember_count\n");
            for k in 0..bins {
                text.push_str(&format!(
                    "{},{},{},{}\n",
                    h.edges[k],
                    h.edges[k + 1],
                    h.member_counts[k],
                    h.nonmember_counts[k]
                ));
            }
            write_file(&dir.join(attack.column()).join("hist.csv"), &text)?;
        }
    }
    let report = Report {
        config_hash: config_hash.to_string(),
        master_seed,
        settings,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    write_file(&out.join("report.json"), &json)?;
    Ok(report)
}

fn resolution_caveats(report: &Report) -> Vec<String> {
    let mut notes = Vec::new();
    if let Some(r) = report.settings.iter().flat_map(|s| s.attacks.values()).next() {
        for &t in &FPR_TARGETS {
            if r.below_resolution.contains(&t) {
                notes.push(format!(
                    "FPR target {t} is below the resolution 1/{} = {:.3e}; TPR there is a step estimate",
                    r.nonmembers, r.fpr_resolution
                ));
            }
        }
    }
    notes
}

/// Runs the whole experiment described by `cfg`.
pub fn run_experiment(cfg: &ExperimentConfig) -> std::result::Result<RunSummary, StageError> {
    cfg.validate().map_err(at(Stage::Config))?;
    let out = cfg.output_dir().to_path_buf();
    let header = cfg.header();
    let hash = cfg.config_hash();

    let data = cfg.load_dataset().map_err(at(Stage::Dataset))?;
    let layers = cfg.layer_specs(&data).map_err(at(Stage::Dataset))?;
    let plan = plan_splits(&data, cfg.n_pairs, seeds::derive(cfg.master_seed, "plan", &[]))
        .map_err(at(Stage::Plan))?;

    let chain = &cfg.model.latencies;
    let store = CheckpointStore::new(cfg.checkpoint_dir(), cfg.training_salt());
    let train_cfg = cfg.train_config();
    let finetune = cfg.finetune_config();
    let trainer = GameTrainer {
        data: &data,
        plan: &plan,
        cfg: &train_cfg,
        finetune: &finetune,
        store: Some(&store),
    };
    let spec = ModelSpec {
        kind: cfg.model.target,
        layers,
        latency: chain[0],
        neuron: cfg.neuron(),
        activation: cfg.model.ann_activation,
    };
    let targets: Vec<TrainedModel> = train_chain(&trainer, &spec, &[Role::Target], chain)
        .map_err(at(Stage::Train))?
        .into_iter()
        .map(|mut v| v.remove(0))
        .collect();
    let ref_roles = Role::references(&plan);
    let mut pools: Vec<(ModelKind, Vec<Vec<TrainedModel>>)> = Vec::new();
    for kind in cfg.pools() {
        let trained = train_chain(&trainer, &spec.with_kind(kind), &ref_roles, chain).map_err(at(Stage::Train))?;
        pools.push((kind, trained));
    }

    let mut models = Vec::new();
    for (k, t) in targets.iter().enumerate() {
        models.push(ModelSummary {
            name: match t.model.latency() {
                Some(_) => format!("target@T{}", chain[k]),
                None => "target".into(),
            },
            train_accuracy: t.train_accuracy,
            test_accuracy: t.test_accuracy,
        });
    }
    for (kind, steps) in &pools {
        for (k, group) in steps.iter().enumerate() {
            let n = group.len() as f64;
            models.push(ModelSummary {
                name: match kind {
                    ModelKind::Snn => format!("snn_pool@T{}", chain[k]),
                    ModelKind::Ann => "ann_pool".into(),
                },
                train_accuracy: group.iter().map(|m| m.train_accuracy).sum::<f64>() / n,
                test_accuracy: group.iter().map(|m| m.test_accuracy).sum::<f64>() / n,
            });
        }
    }

    let labels = MembershipLabels::from_plan(&plan);
    let dropout_seed = seeds::derive(cfg.master_seed, "dropout", &[]);
    let mut tables = Vec::new();
    let mut searches = Vec::new();
    for (k, target) in targets.iter().enumerate() {
        for (kind, steps) in &pools {
            let pool = &steps[k.min(steps.len() - 1)];
            let mut all: Vec<&Model> = vec![&target.model];
            all.extend(pool.iter().map(|m| &m.model));
            let latency = target.model.latency();
            let mut variants = vec![None];
            if cfg.dropout.enabled {
                let search = grid_search_dropout(
                    &all[1..],
                    plan.membership(),
                    &data,
                    cfg.dropout.search_attack,
                    &cfg.dropout.p_grid,
                    &cfg.dropout.n_grid,
                    dropout_seed,
                )
                .map_err(at(Stage::Confidences))?;
                variants.push(Some(search.best));
                searches.push(search);
            }
            for dropout in variants {
                let table = build_confidence_table(&all, &data, dropout.as_ref())
                    .map_err(at(Stage::Confidences))?;
                let scores = score_table(&table, Some(plan.membership()), &cfg.attacks)
                    .map_err(at(Stage::Attacks))?;
                let st = ScoreTable {
                    member: labels.member.clone(),
                    scores,
                    dropout: dropout.map(|d| (d.p, d.n)),
                    pool_kind: *kind,
                    latency,
                };
                table
                    .write_csv(&out.join(setting_dir(&st)).join("confidence.csv"), &header)
                    .map_err(at(Stage::Report))?;
                if let (Some(_), Some(search)) = (dropout, searches.last()) {
                    let json = serde_json::json!({
                        "config_hash": hash,
                        "master_seed": cfg.master_seed,
                        "search": search,
                    });
                    write_file(
                        &out.join(setting_dir(&st)).join("dropout_search.json"),
                        &format!("{}\n", serde_json::to_string_pretty(&json).map_err(|e| at(Stage::Report)(e.into()))?),
                    )
                    .map_err(at(Stage::Report))?;
                }
                tables.push(st);
            }
        }
    }

    let report_stage = || -> Result<Report> {
        labels.write_csv(&out.join("labels.csv"), &header)?;
        write_scores_csv(&out.join("scores.csv"), &header, &tables)?;
        let report = write_report(&out, &hash, cfg.master_seed, &tables, cfg.histogram_bins)?;
        let json = serde_json::json!({
            "config_hash": hash,
            "master_seed": cfg.master_seed,
            "models": models,
            "notes": resolution_caveats(&report),
        });
        write_file(&out.join("training.json"), &format!("{}\n", serde_json::to_string_pretty(&json)?))?;
        Ok(report)
    };
    let report = report_stage().map_err(at(Stage::Report))?;
    Ok(RunSummary {
        output_dir: out,
        report,
        scores: tables,
        models,
        searches,
    })
}

/// Recomputes `report.json` and the ROC/histogram files from a persisted
/// `scores.csv`. Output goes next to the scores unless `out` is given.
pub fn report_from_scores(scores: &Path, out: Option<&Path>, bins: usize) -> std::result::Result<Report, StageError> {
    let (hash, seed, tables) = read_scores_csv(scores).map_err(at(Stage::Report))?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => scores.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    write_report(&dir, &hash, seed, &tables, bins).map_err(at(Stage::Report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Latency,
    Dropout,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latency" => Ok(SweepAxis::Latency),
            "dropout" => Ok(SweepAxis::Dropout),
            other => Err(Error::invalid(format!("unknown sweep axis '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis_value: String,
    pub attack: AttackKind,
    pub report: AttackReport,
}

/// One run per axis value, sharing the checkpoint directory. Rows come from
/// the same-kind pool when it is configured, otherwise the first pool.
pub fn run_sweep(cfg: &ExperimentConfig, axis: SweepAxis) -> std::result::Result<Vec<SweepRow>, StageError> {
    cfg.validate().map_err(at(Stage::Config))?;
    let pools = cfg.pools();
    let pool_kind = if pools.contains(&cfg.model.target) {
        cfg.model.target
    } else {
        pools[0]
    };
    let mut base = cfg.clone();
    base.checkpoint_dir = Some(cfg.checkpoint_dir());
    let mut rows = Vec::new();
    let mut push = |value: String, setting: &SettingReport| {
        for (&attack, report) in &setting.attacks {
            rows.push(SweepRow {
                axis_value: value.clone(),
                attack,
                report: report.clone(),
            });
        }
    };
    let missing = || at(Stage::Report)(Error::invalid("sweep setting missing from report"));
    match axis {
        SweepAxis::Latency => {
            let chain = cfg.model.latencies.clone();
            for k in 0..chain.len() {
                let mut sub = base.clone();
                sub.model.latencies = chain[..=k].to_vec();
                sub.output_dir = cfg.output_dir.join(format!("latency_T{}", chain[k]));
                let run = run_experiment(&sub)?;
                let latency = (cfg.model.target == ModelKind::Snn).then_some(chain[k]);
                let setting = run.report.find(pool_kind, latency, false).ok_or_else(missing)?;
                push(chain[k].to_string(), setting);
            }
        }
        SweepAxis::Dropout => {
            let mut sub = base.clone();
            sub.model.latencies.truncate(1);
            sub.dropout.enabled = true;
            sub.output_dir = cfg.output_dir.join("dropout");
            let run = run_experiment(&sub)?;
            let latency = (cfg.model.target == ModelKind::Snn).then_some(sub.model.latencies[0]);
            for (value, on) in [("off", false), ("on", true)] {
                let setting = run.report.find(pool_kind, latency, on).ok_or_else(missing)?;
                push(value.to_string(), setting);
            }
        }
    }
    let mut text = format!("# {}\naxis_value,attack,auc,tpr_0.1,tpr_1\n", cfg.header());
    for r in &rows {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.axis_value, r.attack, r.report.auc, r.report.tpr_at_01pct_fpr, r.report.tpr_at_1pct_fpr
        ));
    }
    write_file(&cfg.output_dir.join("sweep.csv"), &text).map_err(at(Stage::Report))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(latency: Option<usize>, dropout: Option<(f64, usize)>) -> ScoreTable {
        let mut scores = BTreeMap::new();
        scores.insert(AttackKind::Rmia, vec![1.25, 0.1, 5e11, 0.3333333333333333]);
        scores.insert(AttackKind::AttackR, vec![1.0, 0.0, 0.5, 0.25]);
        ScoreTable {
            member: vec![true, false, true, false],
            scores,
            dropout,
            pool_kind: ModelKind::Snn,
            latency,
        }
    }

    #[test]
    fn scores_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        let tables = vec![table(Some(1), None), table(Some(1), Some((0.05, 8))), table(None, None)];
        write_scores_csv(&path, "config_hash=abc master_seed=9", &tables).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abc master_seed=9\nsample_id,member,attack_p,attack_p_orig,attack_r,rmia,dropout_p,dropout_N,pool_kind,T\n"));
        assert!(text.contains("\n0,1,,,1,1.25,,,snn,1\n"));
        assert!(text.contains("\n2,1,,,0.5,500000000000,0.05,8,snn,1\n"));
        let (hash, seed, back) = read_scores_csv(&path).unwrap();
        assert_eq!((hash.as_str(), seed), ("abc", 9));
        assert_eq!(back, tables);
    }

    #[test]
    fn report_from_scores_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let tables = vec![table(Some(2), None), table(Some(2), Some((0.1, 4)))];
        write_report(dir.path(), "abc", 9, &tables, 5).unwrap();
        write_scores_csv(&dir.path().join("scores.csv"), "config_hash=abc master_seed=9", &tables).unwrap();
        let original = fs::read(dir.path().join("report.json")).unwrap();
        let other = dir.path().join("again");
        report_from_scores(&dir.path().join("scores.csv"), Some(&other), 5).unwrap();
        assert_eq!(fs::read(other.join("report.json")).unwrap(), original);
        let roc = fs::read_to_string(dir.path().join("snn_pool_T2/rmia/roc.csv")).unwrap();
        assert!(roc.starts_with("# config_hash=abc master_seed=9\nbeta,fpr,tpr\ninf,0,0\n"));
        let hist = fs::read_to_string(dir.path().join("snn_pool_T2_dropout/attack_r/hist.csv")).unwrap();
        assert_eq!(hist.lines().count(), 2 + 5);
    }

    #[test]
    fn malformed_scores_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        fs::write(&path, format!("{SCORE_COLUMNS}\n0,1,0.5,,,,,,snn,1\n")).unwrap();
        assert!(read_scores_csv(&path).is_err());
        fs::write(&path, format!("# config_hash=a master_seed=1\n{SCORE_COLUMNS}\n0,2,0.5,,,,,,snn,1\n")).unwrap();
        assert!(read_scores_csv(&path).is_err());
        fs::write(&path, format!("# config_hash=a master_seed=1\n{SCORE_COLUMNS}\n0,1,0.5,,,,0.1,,snn,1\n")).unwrap();
        assert!(read_scores_csv(&path).is_err());
    }

    #[test]
    fn header_parsing() {
        assert_eq!(parse_header("# config_hash=ff master_seed=12"), Some(("ff".into(), 12)));
        assert_eq!(parse_header("config_hash=ff master_seed=12"), None);
        assert_eq!(parse_header("# config_hash=ff"), None);
    }
}
