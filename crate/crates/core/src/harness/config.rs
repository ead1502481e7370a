//! Experiment configuration, read from TOML.
//!
//! ```toml
//! seed = 0
//! base_classes = 15
//! n_way = 3
//! k_shot = 5
//! sessions = 6
//!
//! [data]
//! kind = "sbm"
//! classes = 30
//! nodes_per_class = 60
//! p_in = 0.1
//! p_out = 0.002
//! feature_dim = 64
//! feature_noise = 1.0
//! seed = 0
//!
//! [base]
//! base_epochs = 200
//! ```
//!
//! Every section other than `data` is optional and falls back to defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::gat::EncoderConfig;
use crate::harness::synth::{synth_sbm, SbmSpec};
use crate::incremental::IncrementalConfig;
use crate::tmca::BaseTrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Sbm(SbmSpec),
    Files {
        edges: PathBuf,
        labels: PathBuf,
        features: PathBuf,
    },
}

impl DataSource {
    /// Loads or generates the dataset. Relative paths resolve against `root`.
    pub fn load(&self, root: &Path) -> Result<Dataset> {
        match self {
            DataSource::Sbm(spec) => synth_sbm(spec),
            DataSource::Files {
                edges,
                labels,
                features,
            } => Dataset::load(&root.join(edges), &root.join(labels), &root.join(features)),
        }
    }
}

/// Encoder settings; the input width comes from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSection {
    pub hidden_dim: usize,
    pub heads: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::new(1);
        EncoderSection {
            hidden_dim: d.hidden_dim,
            heads: d.heads,
            dropout: d.dropout,
            leaky_slope: d.leaky_slope,
        }
    }
}

impl EncoderSection {
    pub fn for_input(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim,
            hidden_dim: self.hidden_dim,
            heads: self.heads,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            projection_head: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub seed: u64,
    pub base_classes: usize,
    pub n_way: usize,
    pub k_shot: usize,
    /// Total number of sessions including the base session.
    pub sessions: usize,
    #[serde(default = "default_val_fraction")]
    pub query_val_fraction: f64,
    #[serde(default = "default_train_fraction")]
    pub base_train_fraction: f64,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default)]
    pub base: BaseTrainConfig,
    #[serde(default)]
    pub incremental: IncrementalConfig,
}

fn default_val_fraction() -> f64 {
    0.3
}

fn default_train_fraction() -> f64 {
    0.8
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.sessions == 0 || self.n_way == 0 || self.k_shot == 0 || self.base_classes == 0 {
            return Err(Error::Config(
                "sessions, n_way, k_shot and base_classes must be positive".into(),
            ));
        }
        for (name, f) in [
            ("query_val_fraction", self.query_val_fraction),
            ("base_train_fraction", self.base_train_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} = {f} outside [0,1]")));
            }
        }
        if let DataSource::Sbm(spec) = &self.data {
            let needed = self.required_classes();
            if spec.classes < needed {
                return Err(Error::Config(format!(
                    "protocol needs {needed} classes, synthetic data has {}",
                    spec.classes
                )));
            }
        }
        self.base.validate()?;
        self.incremental.validate()
    }

    /// `base_classes + n_way * (sessions - 1)`.
    pub fn required_classes(&self) -> usize {
        self.base_classes + self.n_way * (self.sessions - 1)
    }

    /// Hex SHA-256 of the JSON serialization, which has a fixed field order.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

/// Desk-scale forgetting benchmark: a 30-class stochastic block model with
/// 60 nodes per class, homophily 0.6 and 64 feature dimensions, split into
/// 15 base classes and five 3-way 5-shot sessions.
pub fn desk_config(seed: u64) -> ExperimentConfig {
    let spec = SbmSpec {
        classes: 30,
        nodes_per_class: 60,
        p_in: 0.0,
        p_out: 0.0,
        feature_dim: 64,
        feature_noise: 1.0,
        seed,
    }
    .with_homophily(0.6, 10.0);
    let mut cfg = ExperimentConfig {
        data: DataSource::Sbm(spec),
        seed,
        base_classes: 15,
        n_way: 3,
        k_shot: 5,
        sessions: 6,
        query_val_fraction: default_val_fraction(),
        base_train_fraction: default_train_fraction(),
        encoder: EncoderSection::default(),
        base: BaseTrainConfig::default(),
        incremental: IncrementalConfig::default(),
    };
    cfg.base.base_epochs = 200;
    cfg.base.tva_way = cfg.n_way;
    cfg
}
