//! The membership game: target and reference training from a split plan,
//! and the confidence table every attack reads.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::attack::{dropout_confidences, DropoutSpec};
use crate::checkpoint::{self, CheckpointKey};
use crate::dataset::{Dataset, SplitPlan};
use crate::error::{Error, Result};
use crate::network::{AnnNetwork, LayerSpec, Model, ModelKind, SpikingNetwork};
use crate::seeds;
use crate::snn::NeuronConfig;
use crate::tensor::Activation;
use crate::train::{accuracy, sequential_latency_train, train, train_logged, TrainConfig, TrainedModel};

/// Architecture and neuron settings of one model family.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub layers: Vec<LayerSpec>,
    /// Ignored for conventional models.
    pub latency: usize,
    pub neuron: NeuronConfig,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn build(&self, seed: u64) -> Result<Model> {
        let mut rng = seeds::rng(seed, "init", &[]);
        Ok(match self.kind {
            ModelKind::Snn => Model::Snn(SpikingNetwork::new(
                self.layers.clone(),
                self.latency,
                self.neuron,
                &mut rng,
            )?),
            ModelKind::Ann => Model::Ann(AnnNetwork::new(
                self.layers.clone(),
                self.activation,
                &mut rng,
            )?),
        })
    }

    pub fn with_kind(&self, kind: ModelKind) -> Self {
        Self {
            kind,
            ..self.clone()
        }
    }
}

/// Position in the game: index 0 is the target, `1 + j` reference `j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Target,
    Reference(usize),
}

impl Role {
    pub fn index(self) -> usize {
        match self {
            Role::Target => 0,
            Role::Reference(j) => 1 + j,
        }
    }

    pub fn name(self) -> String {
        match self {
            Role::Target => "target".into(),
            Role::Reference(j) => format!("ref{j:02}"),
        }
    }

    pub fn train_ids(self, plan: &SplitPlan) -> &[usize] {
        match self {
            Role::Target => &plan.target_train,
            Role::Reference(j) => plan.reference_train(j),
        }
    }

    pub fn test_ids(self, plan: &SplitPlan) -> &[usize] {
        match self {
            Role::Target => &plan.target_test,
            Role::Reference(j) => plan.reference_test(j),
        }
    }

    pub fn references(plan: &SplitPlan) -> Vec<Role> {
        (0..plan.n_references()).map(Role::Reference).collect()
    }
}

/// Directory of checkpoints, each stamped with a key derived from the
/// experiment salt and the model name; stale keys force retraining.
#[derive(Clone, Debug)]
pub struct CheckpointStore {
    dir: PathBuf,
    salt: Vec<u8>,
}

impl CheckpointStore {
    pub fn new(dir: impl Into<PathBuf>, salt: impl Into<Vec<u8>>) -> Self {
        Self {
            dir: dir.into(),
            salt: salt.into(),
        }
    }

    pub fn key(&self, name: &str) -> CheckpointKey {
        let mut h = Sha256::new();
        h.update(&self.salt);
        h.update([0u8]);
        h.update(name.as_bytes());
        h.finalize().into()
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.ckpt"))
    }

    pub fn log_path(&self, name: &str) -> PathBuf {
        self.dir.join(format!("{name}.train.jsonl"))
    }

    /// Loads `name` if its stored key matches, otherwise runs `fit` and
    /// saves the result. Accuracies of loaded models are recomputed; their
    /// loss trace is empty.
    pub fn load_or_train(
        &self,
        name: &str,
        data: &Dataset,
        train_ids: &[usize],
        test_ids: &[usize],
        fit: impl FnOnce(Option<&Path>) -> Result<TrainedModel>,
    ) -> Result<TrainedModel> {
        let path = self.path(name);
        let key = self.key(name);
        if checkpoint::peek_key(&path).is_ok_and(|k| k == key) {
            let (model, _) = checkpoint::load(&path)?;
            return Ok(TrainedModel {
                train_accuracy: accuracy(&model, data, train_ids)?,
                test_accuracy: accuracy(&model, data, test_ids)?,
                model,
                loss_trace: Vec::new(),
            });
        }
        let trained = fit(Some(&self.log_path(name)))?;
        checkpoint::save(&path, &trained.model, &key)?;
        Ok(trained)
    }
}

/// Trains models for the game, optionally through a checkpoint store.
#[derive(Clone, Copy)]
pub struct GameTrainer<'a> {
    pub data: &'a Dataset,
    pub plan: &'a SplitPlan,
    pub cfg: &'a TrainConfig,
    /// Used when continuing a spiking model at a longer latency.
    pub finetune: &'a TrainConfig,
    pub store: Option<&'a CheckpointStore>,
}

impl GameTrainer<'_> {
    fn role_cfg(&self, cfg: &TrainConfig, role: Role, salt: &str) -> TrainConfig {
        TrainConfig {
            seed: seeds::derive(self.cfg.seed, salt, &[role.index() as u64]),
            ..cfg.clone()
        }
    }

    fn fit(
        &self,
        name: &str,
        role: Role,
        run: impl FnOnce(Option<&Path>) -> Result<TrainedModel>,
    ) -> Result<TrainedModel> {
        let (tr, te) = (role.train_ids(self.plan), role.test_ids(self.plan));
        match self.store {
            Some(store) => store.load_or_train(name, self.data, tr, te, run),
            None => run(None),
        }
    }

    /// Trains `spec` from scratch for every role, in parallel. `tag`
    /// namespaces checkpoint names.
    pub fn train_group(&self, spec: &ModelSpec, roles: &[Role], tag: &str) -> Result<Vec<TrainedModel>> {
        roles
            .par_iter()
            .map(|&role| {
                let cfg = self.role_cfg(self.cfg, role, "train");
                let model = spec.build(seeds::derive(self.cfg.seed, "init", &[role.index() as u64]))?;
                let (tr, te) = (role.train_ids(self.plan), role.test_ids(self.plan));
                self.fit(&format!("{tag}/{}", role.name()), role, |log| match log {
                    Some(path) => train_logged(model, self.data, tr, te, &cfg, path),
                    None => train(model, self.data, tr, te, &cfg, None),
                })
                .map_err(|e| Error::Model {
                    index: role.index(),
                    source: Box::new(e),
                })
            })
            .collect()
    }

    /// Continues every spiking model of `previous` at `latency`.
    pub fn extend_group(
        &self,
        previous: &[TrainedModel],
        roles: &[Role],
        latency: usize,
        tag: &str,
    ) -> Result<Vec<TrainedModel>> {
        previous
            .par_iter()
            .zip(roles.par_iter())
            .map(|(base, &role)| {
                let cfg = self.role_cfg(self.finetune, role, &format!("finetune/{latency}"));
                let (tr, te) = (role.train_ids(self.plan), role.test_ids(self.plan));
                self.fit(&format!("{tag}/{}", role.name()), role, |_| {
                    sequential_latency_train(base, latency, self.data, tr, te, &cfg)
                })
                .map_err(|e| Error::Model {
                    index: role.index(),
                    source: Box::new(e),
                })
            })
            .collect()
    }
}

/// Per-sample membership in the target's training half.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MembershipLabels {
    pub member: Vec<bool>,
}

impl MembershipLabels {
    pub fn from_plan(plan: &SplitPlan) -> Self {
        Self {
            member: plan.target_membership().to_vec(),
        }
    }

    pub fn members(&self) -> usize {
        self.member.iter().filter(|&&m| m).count()
    }

    pub fn write_csv(&self, path: &Path, header: &str) -> Result<()> {
        let mut out = format!("# {header}\nsample_id,member\n");
        for (i, &m) in self.member.iter().enumerate() {
            out.push_str(&format!("{i},{}\n", m as u8));
        }
        write_file(path, &out)
    }
}

/// `2n` reference models with their IN/OUT bitmap.
#[derive(Clone, Debug)]
pub struct ReferencePool {
    pub models: Vec<TrainedModel>,
    /// `membership[sample][reference]`.
    pub membership: Vec<Vec<bool>>,
    pub kind: ModelKind,
}

impl ReferencePool {
    pub fn new(models: Vec<TrainedModel>, plan: &SplitPlan) -> Result<Self> {
        if models.len() != plan.n_references() {
            return Err(Error::invalid(format!(
                "{} reference models for a plan with {} references",
                models.len(),
                plan.n_references()
            )));
        }
        let kind = models[0].model.kind();
        if models.iter().any(|m| !m.model.same_architecture(&models[0].model)) {
            return Err(Error::invalid("reference pool must share one architecture"));
        }
        Ok(Self {
            models,
            membership: plan.membership().to_vec(),
            kind,
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn model_refs(&self) -> Vec<&Model> {
        self.models.iter().map(|m| &m.model).collect()
    }
}

pub struct GameOutcome {
    pub target: TrainedModel,
    pub pool: ReferencePool,
    pub labels: MembershipLabels,
}

/// Trains the target with `target_spec` and the pool with `pool_spec`; the
/// two may differ in kind.
pub fn run_game(
    trainer: &GameTrainer<'_>,
    target_spec: &ModelSpec,
    pool_spec: &ModelSpec,
) -> Result<GameOutcome> {
    let target = trainer
        .train_group(target_spec, &[Role::Target], "target")?
        .pop()
        .expect("one target");
    let refs = trainer.train_group(pool_spec, &Role::references(trainer.plan), pool_spec.kind.as_str())?;
    Ok(GameOutcome {
        target,
        pool: ReferencePool::new(refs, trainer.plan)?,
        labels: MembershipLabels::from_plan(trainer.plan),
    })
}

/// `conf[sample][model]` over the target (model 0) and its pool.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceTable {
    values: Vec<Vec<f64>>,
    dropout: Option<DropoutSpec>,
}

impl ConfidenceTable {
    pub fn new(values: Vec<Vec<f64>>, dropout: Option<DropoutSpec>) -> Result<Self> {
        let width = values.first().map_or(0, |r| r.len());
        if width == 0 || values.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("confidence table must be complete and non-empty"));
        }
        if values.iter().flatten().any(|&c| !(c > 0.0 && c <= 1.0)) {
            return Err(Error::invalid("confidences must lie in (0, 1]"));
        }
        Ok(Self { values, dropout })
    }

    pub fn samples(&self) -> usize {
        self.values.len()
    }

    pub fn models(&self) -> usize {
        self.values[0].len()
    }

    pub fn get(&self, sample: usize, model: usize) -> f64 {
        self.values[sample][model]
    }

    pub fn dropout(&self) -> Option<&DropoutSpec> {
        self.dropout.as_ref()
    }

    pub fn column(&self, model: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[model]).collect()
    }

    pub fn target(&self) -> Vec<f64> {
        self.column(0)
    }

    /// Reference confidences per sample (models `1..`).
    pub fn references(&self) -> Vec<Vec<f64>> {
        self.values.iter().map(|r| r[1..].to_vec()).collect()
    }

    /// Long format: `sample_id,model_id,conf,dropout_flag`.
    pub fn write_csv(&self, path: &Path, header: &str) -> Result<()> {
        let flag = self.dropout.is_some() as u8;
        let mut out = format!("# {header}\nsample_id,model_id,conf,dropout_flag\n");
        for (i, row) in self.values.iter().enumerate() {
            for (m, c) in row.iter().enumerate() {
                out.push_str(&format!("{i},{m},{c},{flag}\n"));
            }
        }
        write_file(path, &out)
    }
}

/// Plain or dropout-averaged confidences of every sample under every model.
pub fn build_confidence_table(
    models: &[&Model],
    data: &Dataset,
    dropout: Option<&DropoutSpec>,
) -> Result<ConfidenceTable> {
    if models.is_empty() {
        return Err(Error::invalid("no models to evaluate"));
    }
    let columns: Vec<Vec<f64>> = match dropout {
        Some(spec) => dropout_confidences(models, data, spec)?,
        None => models
            .par_iter()
            .map(|m| m.confidences(data.features(), data.labels()))
            .collect::<Result<_>>()?,
    };
    let values = (0..data.len())
        .map(|i| columns.iter().map(|c| c[i]).collect())
        .collect();
    ConfidenceTable::new(values, dropout.copied())
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{make_blobs, plan_splits};
    use crate::network::mlp;

    fn spec(kind: ModelKind) -> ModelSpec {
        ModelSpec {
            kind,
            layers: mlp(2, &[6], 2).unwrap(),
            latency: 1,
            neuron: NeuronConfig::default(),
            activation: Activation::Sigmoid,
        }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..Default::default()
        }
    }

    #[test]
    fn counts_follow_the_plan() {
        let data = make_blobs(4, 2, 2, 3.0, 1).unwrap();
        let plan = plan_splits(&data, 2, 1).unwrap();
        let cfg = small_cfg();
        let trainer = GameTrainer { data: &data, plan: &plan, cfg: &cfg, finetune: &cfg, store: None };
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), b"salt".to_vec());
        let stored = GameTrainer { store: Some(&store), ..trainer };
        let game = run_game(&stored, &spec(ModelKind::Snn), &spec(ModelKind::Snn)).unwrap();
        assert_eq!(game.pool.len(), 4);
        assert_eq!(game.labels.members(), 4);
        let ckpts = walk(dir.path()).into_iter().filter(|p| p.extension().is_some_and(|e| e == "ckpt")).count();
        assert_eq!(ckpts, 5);
        for row in &game.pool.membership {
            assert_eq!(row.iter().filter(|&&b| b).count(), 2);
        }
    }

    fn walk(dir: &Path) -> Vec<PathBuf> {
        let mut out = Vec::new();
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                out.extend(walk(&p));
            } else {
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn same_seed_same_table_and_cross_kind_is_complete() {
        let data = make_blobs(10, 2, 2, 2.0, 2).unwrap();
        let plan = plan_splits(&data, 2, 2).unwrap();
        let cfg = small_cfg();
        let trainer = GameTrainer { data: &data, plan: &plan, cfg: &cfg, finetune: &cfg, store: None };
        let table = |pool: ModelKind| {
            let g = run_game(&trainer, &spec(ModelKind::Snn), &spec(pool)).unwrap();
            let mut models = vec![&g.target.model];
            models.extend(g.pool.model_refs());
            build_confidence_table(&models, &data, None).unwrap()
        };
        let a = table(ModelKind::Snn);
        assert_eq!(a, table(ModelKind::Snn));
        let cross = table(ModelKind::Ann);
        assert_eq!((cross.samples(), cross.models()), (20, 5));
    }

    #[test]
    fn checkpoints_are_reused_only_with_matching_key() {
        let data = make_blobs(6, 2, 2, 3.0, 3).unwrap();
        let plan = plan_splits(&data, 1, 3).unwrap();
        let cfg = small_cfg();
        let dir = tempfile::tempdir().unwrap();
        let store = CheckpointStore::new(dir.path(), b"a".to_vec());
        let trainer = GameTrainer { data: &data, plan: &plan, cfg: &cfg, finetune: &cfg, store: Some(&store) };
        let first = trainer.train_group(&spec(ModelKind::Snn), &[Role::Target], "t").unwrap();
        assert!(!first[0].loss_trace.is_empty());
        let second = trainer.train_group(&spec(ModelKind::Snn), &[Role::Target], "t").unwrap();
        assert!(second[0].loss_trace.is_empty());
        assert_eq!(first[0].model, second[0].model);
        assert_eq!(first[0].train_accuracy, second[0].train_accuracy);
        let other = CheckpointStore::new(dir.path(), b"b".to_vec());
        let third = GameTrainer { store: Some(&other), ..trainer }
            .train_group(&spec(ModelKind::Snn), &[Role::Target], "t")
            .unwrap();
        assert!(!third[0].loss_trace.is_empty());
    }

    #[test]
    fn latency_extension_of_a_group() {
        let data = make_blobs(6, 2, 2, 3.0, 4).unwrap();
        let plan = plan_splits(&data, 1, 4).unwrap();
        let cfg = small_cfg();
        let trainer = GameTrainer { data: &data, plan: &plan, cfg: &cfg, finetune: &cfg, store: None };
        let roles = Role::references(&plan);
        let t1 = trainer.train_group(&spec(ModelKind::Snn), &roles, "snn").unwrap();
        let t2 = trainer.extend_group(&t1, &roles, 2, "snn-2").unwrap();
        assert!(t2.iter().all(|m| m.model.latency() == Some(2)));
        let ann = trainer.train_group(&spec(ModelKind::Ann), &roles, "ann").unwrap();
        match trainer.extend_group(&ann, &roles, 2, "x") {
            Err(Error::Model { index, .. }) => assert!(index == 1 || index == 2),
            other => panic!("expected model error, got {:?}", other.map(|v| v.len())),
        }
    }

    #[test]
    fn dropout_tables() {
        let data = make_blobs(8, 2, 2, 2.0, 5).unwrap();
        let mut rng = seeds::rng(1, "x", &[]);
        let model = Model::Ann(AnnNetwork::new(mlp(2, &[4], 2).unwrap(), Activation::Relu, &mut rng).unwrap());
        let plain = build_confidence_table(&[&model], &data, None).unwrap();
        let zero = build_confidence_table(&[&model], &data, Some(&DropoutSpec { p: 0.0, n: 3, seed: 1 })).unwrap();
        assert_eq!(plain.target(), zero.target());
        assert!(zero.dropout().is_some());
        let spec = DropoutSpec { p: 0.5, n: 1, seed: 7 };
        assert_eq!(
            build_confidence_table(&[&model], &data, Some(&spec)).unwrap(),
            build_confidence_table(&[&model], &data, Some(&spec)).unwrap()
        );
        for i in 0..data.len() {
            let (x, y) = data.sample(i);
            let direct = crate::network::confidence(&model, &crate::tensor::Tensor::new(vec![2], x.to_vec()).unwrap(), y).unwrap();
            assert_eq!(plain.get(i, 0), direct);
        }
    }

    #[test]
    fn csv_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let table = ConfidenceTable::new(vec![vec![0.5, 0.25], vec![1.0, 0.75]], None).unwrap();
        let path = dir.path().join("confidence.csv");
        table.write_csv(&path, "config_hash=ab master_seed=1").unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(
            text,
            "# config_hash=ab master_seed=1\nsample_id,model_id,conf,dropout_flag\n0,0,0.5,0\n0,1,0.25,0\n1,0,1,0\n1,1,0.75,0\n"
        );
        assert!(ConfidenceTable::new(vec![vec![0.0]], None).is_err());
        assert!(ConfidenceTable::new(vec![vec![0.5], vec![]], None).is_err());
        let labels = MembershipLabels { member: vec![true, false] };
        labels.write_csv(&dir.path().join("labels.csv"), "h").unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("labels.csv")).unwrap(), "# h\nsample_id,member\n0,1\n1,0\n");
    }
}
