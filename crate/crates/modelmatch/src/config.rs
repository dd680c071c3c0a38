//! TOML pipeline configuration. Paths are resolved relative to the config
//! file's directory and must exist at load time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distance::{DistanceMetricSpec, EmdConfig};
use crate::error::{Error, Result};
use crate::perturb::{Hyperparams, TrainConfig};
use crate::ranking::CorruptionProtocol;

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

fn default_format() -> String {
    "dense-csv".to_string()
}

fn default_qc() -> usize {
    1500
}

fn default_scale() -> f64 {
    10_000.0
}

fn default_metric() -> String {
    "l2xlog".to_string()
}

fn default_orders() -> Vec<usize> {
    vec![2, 3]
}

fn default_cells_per_condition() -> usize {
    50
}

/// One condition's source file plus its perturbation labels, used when the
/// condition doubles as training data for the perturbational model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionSource {
    pub id: String,
    pub path: PathBuf,
    #[serde(default = "default_format")]
    pub format: String,
    /// Base growth condition this sample was measured in, if labeled.
    #[serde(default)]
    pub base: Option<String>,
    /// Perturbations applied on top of the base; empty means control.
    #[serde(default)]
    pub perturbations: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DataConfig {
    pub target: ConditionSource,
    pub queries: Vec<ConditionSource>,
    /// Optional gene panel file (one gene id per line); defaults to the
    /// target's gene set.
    #[serde(default)]
    pub panel: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QcConfig {
    #[serde(default = "default_qc")]
    pub min_nonzero_genes: usize,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            min_nonzero_genes: default_qc(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NormalizeConfig {
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        NormalizeConfig {
            scale: default_scale(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricConfig {
    #[serde(default = "default_metric")]
    pub spec: String,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            spec: default_metric(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EmdSection {
    #[serde(default)]
    pub max_cells: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CorruptionSection {
    #[serde(default)]
    pub fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub max_repeats: Option<usize>,
    #[serde(default)]
    pub convergence_tol: Option<f64>,
    /// Ground-truth query order, nearest first. Defaults to the uncorrupted
    /// ranking under the configured metric.
    #[serde(default)]
    pub expected_order: Option<Vec<String>>,
}

/// Training and combination-generation settings; presence of this section
/// enables the predict stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PredictSection {
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub lr_autoencoder: Option<f64>,
    #[serde(default)]
    pub lr_adversary: Option<f64>,
    #[serde(default)]
    pub lambda_adversary: Option<f64>,
    #[serde(default)]
    pub latent_dim: Option<usize>,
    #[serde(default)]
    pub hidden_width: Option<usize>,
    #[serde(default)]
    pub depth: Option<usize>,
    /// Addon perturbations for the combination grid; defaults to every
    /// perturbation labeled in the query conditions.
    #[serde(default)]
    pub addons: Option<Vec<String>>,
    #[serde(default = "default_orders")]
    pub orders: Vec<usize>,
    /// Combination ids already tested in vitro, skipped by the grid.
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default = "default_cells_per_condition")]
    pub cells_per_condition: usize,
}

/// Presence of this section enables the recommend stage.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RecommendSection {
    pub k: usize,
    /// Condition ids treated as fixed medoids; defaults to all query
    /// conditions when predictions are enabled.
    #[serde(default)]
    pub fixed: Option<Vec<String>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub qc: QcConfig,
    #[serde(default)]
    pub normalize: NormalizeConfig,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub emd: EmdSection,
    #[serde(default)]
    pub corruption: CorruptionSection,
    #[serde(default)]
    pub predict: Option<PredictSection>,
    #[serde(default)]
    pub recommend: Option<RecommendSection>,
}

impl PipelineConfig {
    /// Parse a config file, resolve every path relative to its directory,
    /// and verify the referenced files exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.resolve_paths(dir)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) -> Result<()> {
        let resolve = |p: &mut PathBuf| -> Result<()> {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
            if !p.exists() {
                return Err(Error::Config(format!(
                    "referenced path does not exist: {}",
                    p.display()
                )));
            }
            Ok(())
        };
        resolve(&mut self.data.target.path)?;
        for q in &mut self.data.queries {
            resolve(&mut q.path)?;
        }
        if let Some(panel) = &mut self.data.panel {
            resolve(panel)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.queries.is_empty() {
            return Err(Error::Config("no query conditions configured".into()));
        }
        self.metric_spec()?;
        for q in &self.data.queries {
            q.format.parse::<crate::io::IngestFormat>()?;
        }
        self.data.target.format.parse::<crate::io::IngestFormat>()?;
        if self.normalize.scale <= 0.0 {
            return Err(Error::Config("normalization scale must be positive".into()));
        }
        self.corruption_protocol().validate()?;
        if let Some(p) = &self.predict {
            for &o in &p.orders {
                if o != 2 && o != 3 {
                    return Err(Error::Config(format!("invalid combination order {o}")));
                }
            }
            if p.cells_per_condition == 0 {
                return Err(Error::Config("cells_per_condition must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn metric_spec(&self) -> Result<DistanceMetricSpec> {
        self.metric.spec.parse()
    }

    pub fn emd_config(&self) -> EmdConfig {
        let mut emd = EmdConfig::default();
        if let Some(max_cells) = self.emd.max_cells {
            emd.max_cells = max_cells;
        }
        emd.seed = self.seed;
        emd
    }

    pub fn corruption_protocol(&self) -> CorruptionProtocol {
        let mut p = CorruptionProtocol::default();
        p.seed = self.seed;
        if let Some(f) = &self.corruption.fractions {
            p.fractions = f.clone();
        }
        if let Some(m) = self.corruption.max_repeats {
            p.max_repeats = m;
        }
        if let Some(t) = self.corruption.convergence_tol {
            p.convergence_tol = t;
        }
        p
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut cfg = TrainConfig {
            seed: self.seed,
            ..TrainConfig::default()
        };
        if let Some(p) = &self.predict {
            if let Some(v) = p.epochs {
                cfg.epochs = v;
            }
            if let Some(v) = p.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = p.lr_autoencoder {
                cfg.lr_autoencoder = v;
            }
            if let Some(v) = p.lr_adversary {
                cfg.lr_adversary = v;
            }
            if let Some(v) = p.lambda_adversary {
                cfg.lambda_adversary = v;
            }
        }
        cfg
    }

    pub fn hyperparams(&self) -> Hyperparams {
        let mut h = Hyperparams::default();
        if let Some(p) = &self.predict {
            if let Some(v) = p.latent_dim {
                h.latent_dim = v;
            }
            if let Some(v) = p.hidden_width {
                h.hidden_width = v;
            }
            if let Some(v) = p.depth {
                h.depth = v;
            }
        }
        h
    }
}
