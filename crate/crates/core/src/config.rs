//! Experiment configuration: one TOML section per module.
//!
//! ```toml
//! [data]
//! manifest = "synthetic.json"
//!
//! [graph]
//! edge_policy = "knng:k=1"
//! shift_operator = "adjacency"
//!
//! [model]
//! conv = "gin"
//! depth = 2
//! hidden = 32
//! pool = "sum"
//!
//! [augment]
//! snr_db = []
//!
//! [train]
//! epochs = 100
//! batch_size = 64
//! ```

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph_core::ShiftOperatorKind;
use crate::montage::EdgePolicy;
use crate::pipeline::DEFAULT_SNR_DB;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Gin,
    Sage,
    Poly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolKind {
    Sortpool,
    Edgepool,
    Sagpool,
    Set2set,
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortBy {
    Features,
    Wl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub conv: ConvKind,
    /// Number of graph convolution layers.
    pub depth: usize,
    /// Width of every graph convolution output (and the GIN MLP hidden layer).
    pub hidden: usize,
    /// Taps of the polynomial filter.
    pub taps: usize,
    /// Optional GraphSAGE neighbor sample size.
    pub sample: Option<usize>,
    pub pool: PoolKind,
    /// SortPool: nodes kept (integer). SagPool: kept ratio in (0, 1].
    pub rho: Option<f64>,
    /// Set2Set processing steps.
    pub steps: usize,
    pub sort_by: SortBy,
    /// Hidden width of the classifier head.
    pub head_hidden: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            conv: ConvKind::Gin,
            depth: 2,
            hidden: 32,
            taps: 2,
            sample: None,
            pool: PoolKind::Sum,
            rho: None,
            steps: 3,
            sort_by: SortBy::Features,
            head_hidden: 32,
        }
    }
}

impl ModelSpec {
    pub const DEFAULT_SORT_RHO: usize = 8;
    pub const DEFAULT_SAG_RHO: f64 = 0.5;

    pub fn sort_rho(&self) -> Result<usize> {
        let r = self.rho.unwrap_or(Self::DEFAULT_SORT_RHO as f64);
        if r < 1.0 || r.fract() != 0.0 {
            return Err(Error::Config(format!("sortpool rho must be a positive integer, got {r}")));
        }
        Ok(r as usize)
    }

    pub fn sag_rho(&self) -> Result<f64> {
        let r = self.rho.unwrap_or(Self::DEFAULT_SAG_RHO);
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Config(format!("sagpool rho must lie in (0, 1], got {r}")));
        }
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.hidden == 0 || self.head_hidden == 0 {
            return Err(Error::Config("depth, hidden and head_hidden must be positive".into()));
        }
        if self.conv == ConvKind::Poly && self.taps == 0 {
            return Err(Error::Config("poly filter needs taps ≥ 1".into()));
        }
        if self.sample == Some(0) {
            return Err(Error::Config("neighbor sample size must be positive".into()));
        }
        match self.pool {
            PoolKind::Sortpool => {
                self.sort_rho()?;
            }
            PoolKind::Sagpool => {
                self.sag_rho()?;
            }
            PoolKind::Set2set if self.steps == 0 => {
                return Err(Error::Config("set2set steps must be positive".into()));
            }
            _ => {}
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub manifest: Option<PathBuf>,
    /// Overrides the manifest's montage reference.
    pub montage: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub edge_policy: String,
    pub shift_operator: ShiftOperatorKind,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection {
            edge_policy: "knng:k=1".into(),
            shift_operator: ShiftOperatorKind::Adjacency,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompressorSection {
    pub batch_norm: bool,
}

impl Default for CompressorSection {
    fn default() -> Self {
        CompressorSection { batch_norm: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSection {
    pub snr_db: Vec<f64>,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            snr_db: DEFAULT_SNR_DB.to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_halving_period: usize,
    pub seed: u64,
    /// L1 coefficient.
    pub alpha: f64,
    /// L2 coefficient.
    pub beta: f64,
    /// Seeded repetitions behind each reported mean ± std.
    pub runs: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            batch_size: 256,
            epochs: 400,
            lr: 0.001,
            lr_halving_period: 50,
            seed: 0,
            alpha: 0.0,
            beta: 0.0,
            runs: 3,
        }
    }
}

impl TrainSection {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.lr_halving_period == 0 || self.runs == 0 {
            return Err(Error::Config("batch_size, epochs, lr_halving_period and runs must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub graph: GraphSection,
    pub model: ModelSpec,
    pub compressor: CompressorSection,
    pub augment: AugmentSection,
    pub train: TrainSection,
}

impl FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = text.parse()?;
        // Relative data paths are taken from the config file's directory.
        if let (Some(m), Some(dir)) = (cfg.data.manifest.as_mut(), path.parent()) {
            if m.is_relative() {
                *m = dir.join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn edge_policy(&self) -> Result<EdgePolicy> {
        self.graph.edge_policy.parse()
    }

    pub fn validate(&self) -> Result<()> {
        self.edge_policy()?;
        self.model.validate()?;
        self.train.validate()?;
        if let Some(s) = self.augment.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::Config(format!("SNR level {s} is not finite")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Identifies the experimental cell: everything except the seed and the
    /// data location.
    pub fn cell_hash(&self) -> String {
        let mut cell = self.clone();
        cell.train.seed = 0;
        cell.train.runs = 0;
        cell.data = DataSection::default();
        let digest = Sha256::digest(serde_json::to_vec(&cell).expect("config serializes"));
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
