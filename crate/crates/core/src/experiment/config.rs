use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::RemoteConfig;
use crate::error::{Error, Result};
use crate::flow::{GridGeometry, WindowSpec};
use crate::ingestion::AdjacencyScheme;
use crate::models::tape::Activation;
use crate::models::{Architecture, Hyperparameters};

use super::synth::SynthSpec;

/// Which auxiliary nodes a run attaches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "original")]
    Original,
    #[serde(rename = "city")]
    City,
    #[serde(rename = "node")]
    Node,
    #[serde(rename = "city+node")]
    CityNode,
}

impl Variant {
    pub fn id(self) -> &'static str {
        match self {
            Variant::Original => "original",
            Variant::City => "city",
            Variant::Node => "node",
            Variant::CityNode => "city+node",
        }
    }

    pub fn uses_city(self) -> bool {
        matches!(self, Variant::City | Variant::CityNode)
    }

    pub fn uses_node(self) -> bool {
        matches!(self, Variant::Node | Variant::CityNode)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Flow directory written by `ingest` or `synth`.
    #[serde(default)]
    pub flows_dir: Option<PathBuf>,
    /// Daily weather/calendar JSONL.
    #[serde(default)]
    pub weather: Option<PathBuf>,
    /// Venue event JSONL.
    #[serde(default)]
    pub events: Option<PathBuf>,
}

/// How `ingest` turns a trip CSV into a flow directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestConfig {
    #[serde(default)]
    pub grid: GridGeometry,
    #[serde(default)]
    pub adjacency: AdjacencyScheme,
    /// Offset of the CSV's local timestamps from UTC. The default is New
    /// York summer time.
    #[serde(default = "default_utc_offset")]
    pub utc_offset_minutes: i32,
    /// Whole UTC days to aggregate. Each defaults to the first or last
    /// pickup day found in the file.
    #[serde(default)]
    pub first_day: Option<NaiveDate>,
    #[serde(default)]
    pub last_day: Option<NaiveDate>,
}

fn default_utc_offset() -> i32 {
    -240
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            grid: GridGeometry::default(),
            adjacency: AdjacencyScheme::default(),
            utc_offset_minutes: default_utc_offset(),
            first_day: None,
            last_day: None,
        }
    }
}

/// Consecutive day blocks. `first_day` defaults to the first day of the series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    #[serde(default)]
    pub first_day: Option<NaiveDate>,
    pub train_days: i64,
    pub val_days: i64,
    pub test_days: i64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            first_day: None,
            train_days: 98,
            val_days: 14,
            test_days: 28,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_architectures")]
    pub architectures: Vec<Architecture>,
    #[serde(flatten)]
    pub hyperparameters: Hyperparameters,
}

fn default_architectures() -> Vec<Architecture> {
    vec![Architecture::Gcrnn]
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architectures: default_architectures(),
            hyperparameters: Hyperparameters::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

/// Adam settings and the stopping rule. These defaults were tuned on the
/// synthetic benchmark only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
    #[serde(default)]
    pub loss: LossKind,
}

fn default_lr() -> f64 {
    0.005
}

fn default_batch() -> usize {
    32
}

fn default_epochs() -> usize {
    30
}

fn default_patience() -> usize {
    5
}

fn default_clip() -> Option<f64> {
    Some(5.0)
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            grad_clip: default_clip(),
            loss: LossKind::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentationConfig {
    /// When false every variant trains without auxiliary nodes.
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_variants")]
    pub variants: Vec<Variant>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_variance")]
    pub variance_target: f64,
    /// Grids that get a node-scope auxiliary node; empty means the designated grid.
    #[serde(default)]
    pub node_targets: Vec<usize>,
}

fn yes() -> bool {
    true
}

fn default_variants() -> Vec<Variant> {
    vec![Variant::Original, Variant::City, Variant::Node, Variant::CityNode]
}

fn default_variance() -> f64 {
    crate::reduction::DEFAULT_VARIANCE_TARGET
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            enabled: true,
            variants: default_variants(),
            activation: Activation::default(),
            variance_target: default_variance(),
            node_targets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Offline,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    #[serde(default)]
    pub backend: BackendKind,
    /// Offline vector dimension.
    #[serde(default = "default_embed_dim")]
    pub dim: usize,
    /// Offline hash seed.
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default)]
    pub remote: Option<RemoteConfig>,
}

fn default_embed_dim() -> usize {
    64
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            backend: BackendKind::Offline,
            dim: default_embed_dim(),
            seed: 0,
            cache_dir: None,
            remote: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub designated_grid: usize,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    /// Used instead of `data` when a run asks for the synthetic dataset.
    #[serde(default)]
    pub synth: Option<SynthSpec>,
}

impl ExperimentConfig {
    /// The directional benchmark: synthetic 4x4 grid, 42/6/12 days, gcrnn,
    /// original versus node augmentation at the event grid.
    pub fn synthetic_benchmark(seed: u64) -> Self {
        ExperimentConfig {
            seed,
            designated_grid: 5,
            split: SplitConfig {
                first_day: None,
                train_days: 42,
                val_days: 6,
                test_days: 12,
            },
            augmentation: AugmentationConfig {
                variants: vec![Variant::Original, Variant::Node],
                ..AugmentationConfig::default()
            },
            synth: Some(SynthSpec::benchmark(seed)),
            ..ExperimentConfig::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate_static()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks that need no data.
    pub fn validate_static(&self) -> Result<()> {
        self.window.validate()?;
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) || o.batch_size == 0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        if o.grad_clip.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::Config("grad_clip must be positive".into()));
        }
        let a = &self.augmentation;
        if !(a.variance_target > 0.0 && a.variance_target <= 1.0) {
            return Err(Error::Config(format!("variance target {} outside (0, 1]", a.variance_target)));
        }
        if a.variants.is_empty() || self.model.architectures.is_empty() {
            return Err(Error::Config("need at least one model and one variant".into()));
        }
        let s = &self.split;
        if s.train_days < 1 || s.val_days < 1 || s.test_days < 1 {
            return Err(Error::Config("every split needs at least one day".into()));
        }
        if self.embedding.backend == BackendKind::Remote && self.embedding.remote.is_none() {
            return Err(Error::Config("remote backend needs an [embedding.remote] section".into()));
        }
        Ok(())
    }

    /// Checks against the graph size.
    pub fn validate_for(&self, n_grids: usize) -> Result<()> {
        if self.designated_grid >= n_grids {
            return Err(Error::Config(format!(
                "designated grid {} outside {n_grids} grids",
                self.designated_grid
            )));
        }
        if let Some(g) = self.node_targets().into_iter().find(|&g| g >= n_grids) {
            return Err(Error::Config(format!("node target {g} outside {n_grids} grids")));
        }
        Ok(())
    }

    pub fn node_targets(&self) -> Vec<usize> {
        if self.augmentation.node_targets.is_empty() {
            vec![self.designated_grid]
        } else {
            self.augmentation.node_targets.clone()
        }
    }

    /// SHA-256 of the canonical JSON form. The embedding cache location
    /// does not affect results and is left out.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.embedding.cache_dir = None;
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = ExperimentConfig::synthetic_benchmark(3);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());

        let minimal = ExperimentConfig::from_toml("seed = 4\n[model]\narchitectures = [\"stconv\"]\nhidden = 8\n").unwrap();
        assert_eq!(minimal.seed, 4);
        assert_eq!(minimal.model.hyperparameters.hidden, 8);
        assert_eq!(minimal.model.hyperparameters.kernel_size, 3);
        assert_eq!(minimal.window, WindowSpec::default());
        assert_eq!(minimal.split.train_days, 98);
    }

    #[test]
    fn unknown_keys_and_bad_values_rejected() {
        assert!(ExperimentConfig::from_toml("sed = 1").is_err());
        assert!(ExperimentConfig::from_toml("[optimizer]\nlearning_rate = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("[augmentation]\nvariance_target = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("[embedding]\nbackend = \"remote\"").is_err());
        let cfg = ExperimentConfig {
            designated_grid: 16,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate_for(16).is_err());
        assert!(cfg.validate_for(17).is_ok());
    }

    #[test]
    fn variant_ids() {
        for v in [Variant::Original, Variant::City, Variant::Node, Variant::CityNode] {
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.id()));
        }
        assert!(Variant::CityNode.uses_city() && Variant::CityNode.uses_node());
        assert!(!Variant::Original.uses_city() && !Variant::Original.uses_node());
    }

    #[test]
    fn hash_changes_with_seed() {
        assert_ne!(
            ExperimentConfig::synthetic_benchmark(1).hash(),
            ExperimentConfig::synthetic_benchmark(2).hash()
        );
    }

    #[test]
    fn hash_ignores_cache_location() {
        let a = ExperimentConfig::synthetic_benchmark(1);
        let mut b = a.clone();
        b.embedding.cache_dir = Some("elsewhere/cache".into());
        assert_eq!(a.hash(), b.hash());
    }
}
