//! Experiment configuration (TOML).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attack::AttackKind;
use crate::dataset::{self, Dataset};
use crate::error::{Error, Result};
use crate::network::{mlp, LayerSpec, ModelKind};
use crate::seeds;
use crate::snn::NeuronConfig;
use crate::tensor::{Activation, ConvGeometry};
use crate::train::{overfit_regime, Optimizer, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub n_pairs: usize,
    pub attacks: Vec<AttackKind>,
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/checkpoints`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    #[serde(default = "default_bins")]
    pub histogram_bins: usize,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub dropout: DropoutConfig,
    /// Directory relative dataset paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_bins() -> usize {
    20
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetConfig {
    Blobs {
        n_per_class: usize,
        classes: usize,
        dim: usize,
        separation: f32,
    },
    Moons {
        n_per_class: usize,
        noise: f32,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvConfig {
    pub out_channels: usize,
    pub kernel: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_target")]
    pub target: ModelKind,
    /// Reference pool kinds to evaluate; defaults to the target kind.
    #[serde(default)]
    pub pools: Vec<ModelKind>,
    pub hidden: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conv: Option<ConvConfig>,
    /// Strictly increasing latency chain; each step starts from the
    /// previous step's weights.
    #[serde(default = "default_latencies")]
    pub latencies: Vec<usize>,
    #[serde(default = "one")]
    pub decay: f32,
    #[serde(default = "one")]
    pub threshold: f32,
    #[serde(default)]
    pub reset: f32,
    #[serde(default = "default_activation")]
    pub ann_activation: Activation,
}

fn default_target() -> ModelKind {
    ModelKind::Snn
}

fn default_latencies() -> Vec<usize> {
    vec![1]
}

fn one() -> f32 {
    1.0
}

fn default_activation() -> Activation {
    Activation::Relu
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub optimizer: Optimizer,
    pub surrogate_width: f32,
    /// Epochs spent at each longer latency of the chain.
    pub finetune_epochs: usize,
    /// Learning rate for those epochs; defaults to `learning_rate`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub finetune_learning_rate: Option<f32>,
    /// Apply [`overfit_regime`] to the settings above.
    pub overfit: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            epochs: base.epochs,
            batch_size: base.batch_size,
            learning_rate: base.learning_rate,
            momentum: base.momentum,
            weight_decay: base.weight_decay,
            optimizer: base.optimizer,
            surrogate_width: base.surrogate_width,
            finetune_epochs: 10,
            finetune_learning_rate: None,
            overfit: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DropoutConfig {
    pub enabled: bool,
    pub p_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    /// Attack whose surrogate AUC the grid search maximises.
    pub search_attack: AttackKind,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            p_grid: vec![0.05, 0.1, 0.2],
            n_grid: vec![4, 8, 16],
            search_attack: AttackKind::Rmia,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.n_pairs == 0 {
            return bad("n_pairs must be at least 1".into());
        }
        if self.attacks.is_empty() {
            return bad("at least one attack is required".into());
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins must be positive".into());
        }
        let lat = &self.model.latencies;
        if lat.is_empty() || lat[0] == 0 || lat.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("latencies {lat:?} must be positive and strictly increasing"));
        }
        if self.model.target == ModelKind::Ann && lat.len() > 1 {
            return bad("a conventional target takes no latency chain".into());
        }
        self.neuron().validate().map_err(|e| Error::Config(e.to_string()))?;
        self.train_config()
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.dropout.enabled {
            if self.dropout.p_grid.is_empty() || self.dropout.n_grid.is_empty() {
                return bad("dropout grids must be non-empty".into());
            }
            if self.dropout.p_grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return bad("dropout p values must lie in [0, 1]".into());
            }
            if self.dropout.n_grid.contains(&0) {
                return bad("dropout pass counts must be positive".into());
            }
        }
        match &self.dataset {
            DatasetConfig::Blobs { n_per_class, classes, dim, .. } => {
                if *n_per_class == 0 || *classes == 0 || *dim == 0 {
                    return bad("blobs need positive n_per_class, classes and dim".into());
                }
            }
            DatasetConfig::Moons { n_per_class, .. } => {
                if *n_per_class == 0 {
                    return bad("moons need positive n_per_class".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Pool kinds, falling back to the target kind.
    pub fn pools(&self) -> Vec<ModelKind> {
        if self.model.pools.is_empty() {
            vec![self.model.target]
        } else {
            self.model.pools.clone()
        }
    }

    pub fn neuron(&self) -> NeuronConfig {
        NeuronConfig {
            decay: self.model.decay,
            threshold: self.model.threshold,
            reset: self.model.reset,
            surrogate_width: self.train.surrogate_width,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        let cfg = TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            seed: seeds::derive(self.master_seed, "train", &[]),
            optimizer: t.optimizer,
            surrogate_width: t.surrogate_width,
        };
        if t.overfit {
            overfit_regime(&cfg)
        } else {
            cfg
        }
    }

    pub fn finetune_config(&self) -> TrainConfig {
        let base = self.train_config();
        TrainConfig {
            epochs: self.train.finetune_epochs,
            learning_rate: self.train.finetune_learning_rate.unwrap_or(base.learning_rate),
            ..base
        }
    }

    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.checkpoint_dir
            .clone()
            .unwrap_or_else(|| self.output_dir.join("checkpoints"))
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let seed = seeds::derive(self.master_seed, "dataset", &[]);
        match &self.dataset {
            DatasetConfig::Blobs { n_per_class, classes, dim, separation } => {
                dataset::make_blobs(*n_per_class, *classes, *dim, *separation, seed)
            }
            DatasetConfig::Moons { n_per_class, noise } => dataset::make_moons(*n_per_class, *noise, seed),
            DatasetConfig::Idx { images, labels, limit } => {
                let d = dataset::load_idx(&self.resolve(images), &self.resolve(labels))?;
                Ok(match limit {
                    Some(n) => d.truncate(*n),
                    None => d,
                })
            }
            DatasetConfig::Csv { path } => Dataset::read_csv(&self.resolve(path)),
        }
    }

    pub fn layer_specs(&self, data: &Dataset) -> Result<Vec<LayerSpec>> {
        let mut specs = Vec::new();
        let mut inputs = data.dim();
        if let Some(conv) = self.model.conv {
            let [c, h, w] = data
                .image_shape()
                .ok_or_else(|| Error::Config("conv layers need an image dataset".into()))?;
            let g = ConvGeometry {
                in_channels: c,
                out_channels: conv.out_channels,
                height: h,
                width: w,
                kernel: conv.kernel,
            };
            g.validate()?;
            inputs = g.out_features();
            specs.push(LayerSpec::Conv2d(g));
        }
        specs.extend(mlp(inputs, &self.model.hidden, data.classes())?);
        Ok(specs)
    }

    fn canonical(&self) -> Self {
        Self {
            output_dir: PathBuf::new(),
            checkpoint_dir: None,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical TOML form, ignoring output locations.
    pub fn config_hash(&self) -> String {
        let text = self.canonical().to_toml().expect("config serialises");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    /// Salt for checkpoint keys: everything that shapes a trained model,
    /// but not the latency list, pools, attacks or dropout settings, so
    /// sweeps can share checkpoints.
    pub fn training_salt(&self) -> Vec<u8> {
        let m = &self.model;
        let fingerprint = serde_json::json!({
            "schema_version": self.schema_version,
            "master_seed": self.master_seed,
            "n_pairs": self.n_pairs,
            "dataset": self.dataset,
            "hidden": m.hidden,
            "conv": m.conv,
            "decay": m.decay,
            "threshold": m.threshold,
            "reset": m.reset,
            "ann_activation": m.ann_activation,
            "train": self.train,
        });
        Sha256::digest(fingerprint.to_string().as_bytes()).to_vec()
    }

    /// `# config_hash=<hex> master_seed=<n>`, without the `#`.
    pub fn header(&self) -> String {
        format!("config_hash={} master_seed={}", self.config_hash(), self.master_seed)
    }
}
