use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;
use crate::layers::ModelConfig;
use crate::mesh::MeshKind;
use crate::repr::FeatureType;
use crate::transforms::TransformRanges;

/// Environment variable that replaces the configured seed.
pub const SEED_ENV: &str = "MESHNET_SEED";

/// Everything a command needs, read from a TOML file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eqgap: EqGapConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub transforms: TransformRanges,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub gen_mesh: GenMeshConfig,
}

/// Synthetic datasets, or mesh files.
///
/// Segmentation: every sample is a noisy copy of one jittered icosphere and
/// each vertex is labeled by its index. Classification: class 0 is a
/// jittered icosphere, class 1 a noisy grid patch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub subdivisions: u32,
    pub base_jitter: f64,
    pub sample_noise: f64,
    pub train_meshes: usize,
    pub test_meshes: usize,
    pub grid_size: usize,
    pub grid_noise: f64,
    /// Replace the synthetic set. Segmentation labels are vertex indices;
    /// classification needs one label per file.
    pub train_files: Vec<PathBuf>,
    pub train_labels: Vec<usize>,
    pub test_files: Vec<PathBuf>,
    pub test_labels: Vec<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            subdivisions: 1,
            base_jitter: 0.1,
            sample_noise: 0.01,
            train_meshes: 4,
            test_meshes: 4,
            grid_size: 7,
            grid_noise: 0.1,
            train_files: Vec::new(),
            train_labels: Vec::new(),
            test_files: Vec::new(),
            test_labels: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// Meshes averaged per Adam step; all training meshes when unset.
    pub batch_size: Option<usize>,
    /// Rescale each gradient to at most this global norm.
    pub clip_norm: Option<f64>,
    /// Where `train` writes parameters (plus a `.json` sidecar).
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            epochs: 100,
            batch_size: None,
            clip_norm: None,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EqGapConfig {
    pub meshes: usize,
    pub generator: MeshKind,
    pub jitter: f64,
    /// Use these instead of generated meshes.
    pub files: Vec<PathBuf>,
}

impl Default for EqGapConfig {
    fn default() -> Self {
        EqGapConfig {
            meshes: 20,
            generator: MeshKind::Icosphere { subdivisions: 1 },
            jitter: 0.1,
            files: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Random transformations drawn per test mesh and family.
    pub samples: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples: 1,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub repetitions: usize,
    pub warmup: usize,
    pub feature_type: FeatureType,
    pub grid_rows: usize,
    pub grid_cols: usize,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig {
            repetitions: 20,
            warmup: 3,
            feature_type: FeatureType::new(vec![0, 1, 2]).unwrap().repeat(16),
            grid_rows: 20,
            grid_cols: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenMeshConfig {
    pub generator: MeshKind,
    pub jitter: f64,
    /// OFF or OBJ, chosen by extension.
    pub output: Option<PathBuf>,
    /// Mesh file read by `features`; falls back to the generator.
    pub input: Option<PathBuf>,
}

impl Default for GenMeshConfig {
    fn default() -> Self {
        GenMeshConfig {
            generator: MeshKind::Icosphere { subdivisions: 1 },
            jitter: 0.0,
            output: None,
            input: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file and applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.apply_env()?;
        Ok(cfg)
    }

    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        if let Ok(s) = std::env::var(SEED_ENV) {
            self.seed = s
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.model.validate()?;
        self.transforms.validate()?;
        if !(self.train.learning_rate >= 0.0 && self.train.learning_rate.is_finite()) {
            return Err(HarnessError::Config(format!("learning_rate {} must be finite and >= 0", self.train.learning_rate)));
        }
        if self.train.batch_size == Some(0) {
            return Err(HarnessError::Config("train.batch_size must be positive".into()));
        }
        if self.timing.repetitions == 0 {
            return Err(HarnessError::Config("timing.repetitions must be positive".into()));
        }
        if self.eval.samples == 0 {
            return Err(HarnessError::Config("eval.samples must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_json(self)
    }
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config serializes");
    hex(&Sha256::digest(&json))
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Independent seed for a named sub-stream.
pub fn sub_seed(seed: u64, stream: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ConvKind;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.epochs, 100);
    }

    #[test]
    fn sections_and_unknown_keys() {
        let text = "seed = 3\n[model]\nconv = \"gem\"\nfeatures = \"xyz\"\n[transforms]\ntranslation = 1.0\n[eqgap.generator]\nkind = \"grid_patch\"\nrows = 4\ncols = 5\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.conv, ConvKind::Gem);
        assert_eq!(c.transforms.translation, 1.0);
        assert!(matches!(c.eqgap.generator, MeshKind::GridPatch { rows: 4, .. }));
        for bad in ["colour = 1", "[model]\nwidth = 3", "[train]\nlr = 0.1", "[nope]\n"] {
            assert!(matches!(RunConfig::parse(bad), Err(HarnessError::Config(_))), "{bad}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn sub_seeds_differ() {
        assert_ne!(sub_seed(1, "a", 0), sub_seed(1, "a", 1));
        assert_ne!(sub_seed(1, "a", 0), sub_seed(1, "b", 0));
        assert_eq!(sub_seed(5, "x", 2), sub_seed(5, "x", 2));
    }
}
