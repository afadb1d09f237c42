//! Run configuration: a JSON file merged with command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cav::{TcavVariant, DEFAULT_CONCEPT_SAMPLES, DEFAULT_N_CAVS, DEFAULT_TCAV_INPUTS};
use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::model::{ModelConfig, Optimizer, TrainConfig};
use crate::shapley::{AttributeOptions, Method, PairReading, SamplingMode, SamplingScheme, DEFAULT_EXACT_LIMIT};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Model checkpoint.
    pub model: Option<PathBuf>,
    /// JSONL dataset.
    pub data: Option<PathBuf>,
    /// Output directory. Not part of the config hash.
    pub out: Option<PathBuf>,
    /// Comma-separated method names or `all`.
    pub methods: Option<String>,
    pub seed: Option<u64>,
    pub sampling: SamplingConfig,
    pub metrics: MetricConfig,
    pub layers: Vec<usize>,
    pub class: Option<usize>,
    /// Concept sets for `cav`, `tcav` and sensitivity heatmaps.
    pub concepts: Vec<ConceptFile>,
    /// Only these concepts get CAVs; empty means all.
    pub targets: Vec<String>,
    /// Pool for random-concept baselines in `tcav`.
    pub random_pool: Option<PathBuf>,
    /// Trace dumps to attribute without a model.
    pub stacks: Vec<StackFiles>,
    pub cav: CavSettings,
    pub tcav: TcavSettings,
    pub train: TrainSettings,
    pub synth: SynthSettings,
    pub heatmap: HeatmapSettings,
    /// Cap on the number of dataset records used; none means all.
    pub limit: Option<usize>,
    /// `attribute` also dumps each input's attention and gradient stacks.
    pub dump_traces: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub n_samples: usize,
    pub dedup: bool,
    pub exact_limit: usize,
    pub pair_reading: PairReading,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: SamplingScheme::DEFAULT_SAMPLES,
            dedup: false,
            exact_limit: DEFAULT_EXACT_LIMIT,
            pair_reading: PairReading::Unordered,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptFile {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StackFiles {
    pub id: String,
    pub attention: PathBuf,
    #[serde(default)]
    pub gradients: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CavSettings {
    pub n_cavs: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
    pub holdout: f64,
}

impl Default for CavSettings {
    fn default() -> Self {
        Self {
            n_cavs: DEFAULT_N_CAVS,
            n_pos: DEFAULT_CONCEPT_SAMPLES,
            n_neg: DEFAULT_CONCEPT_SAMPLES,
            epochs: 200,
            lr: 0.5,
            l2: 0.0,
            holdout: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcavSettings {
    pub n_inputs: usize,
    pub variant: TcavVariant,
    pub only_correct: bool,
    /// Random-concept baselines drawn from `random_pool`.
    pub n_random: usize,
}

impl Default for TcavSettings {
    fn default() -> Self {
        Self { n_inputs: DEFAULT_TCAV_INPUTS, variant: TcavVariant::TTcav, only_correct: false, n_random: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    /// JSON model architecture; without one a small model is sized from the data.
    pub arch: Option<PathBuf>,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self { arch: None, epochs: t.epochs, lr: t.lr, batch_size: t.batch_size, optimizer: t.optimizer }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthTask {
    #[default]
    PlantedToken,
    PlantedConcept,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub task: SynthTask,
    pub n_train: usize,
    pub n_test: usize,
    /// Share of filler tokens masked in training examples.
    pub mask_rate: f64,
    pub concept_size: usize,
    pub pool_size: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            task: SynthTask::PlantedToken,
            n_train: 3000,
            n_test: 200,
            mask_rate: 0.3,
            concept_size: DEFAULT_CONCEPT_SAMPLES,
            pool_size: 2 * DEFAULT_CONCEPT_SAMPLES,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeatmapSource {
    /// Attention-weighted directional derivatives along one CAV.
    #[default]
    Sensitivity,
    /// Scores of the first selected method.
    Attribution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatmapSettings {
    pub source: HeatmapSource,
    pub cell_px: usize,
    /// Concept whose CAV drives sensitivity maps; defaults to the first.
    pub concept: Option<String>,
}

impl Default for HeatmapSettings {
    fn default() -> Self {
        Self { source: HeatmapSource::Sensitivity, cell_px: crate::io::heatmap::DEFAULT_CELL_PX, concept: None }
    }
}

impl RunConfig {
    pub fn model_config(&self) -> Result<Option<ModelConfig>> {
        match &self.train.arch {
            Some(p) => {
                let text = fs::read_to_string(p)?;
                let cfg: ModelConfig =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", p.display(), e)))?;
                cfg.validate().map_err(|e| Error::Config(e.to_string()))?;
                Ok(Some(cfg))
            }
            None => Ok(None),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        let list = self.methods.as_deref().unwrap_or("all");
        Method::parse_list(list).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn require_seed(&self, why: &str) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config(format!("--seed is required {}", why)))
    }

    /// Seed for attribution runs: mandatory once any method samples coalitions.
    pub fn attribution_seed(&self, methods: &[Method]) -> Result<u64> {
        match methods.iter().find(|m| m.sampling_mode() != SamplingMode::Exact) {
            Some(m) => self.require_seed(&format!("for sampled method {}", m)),
            None => Ok(self.seed.unwrap_or(0)),
        }
    }

    pub fn attribute_options(&self, seed: u64) -> AttributeOptions {
        AttributeOptions {
            n_samples: self.sampling.n_samples,
            seed,
            dedup: self.sampling.dedup,
            exact_limit: self.sampling.exact_limit,
            pair_reading: self.sampling.pair_reading,
        }
    }

    pub fn out_dir(&self) -> Result<PathBuf> {
        let dir = self.out.clone().ok_or_else(|| Error::Config("--out is required".into()))?;
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }

    pub fn model_path(&self) -> Result<&Path> {
        self.model.as_deref().ok_or_else(|| Error::Config("a model checkpoint is required (--model)".into()))
    }

    pub fn data_path(&self) -> Result<&Path> {
        self.data.as_deref().ok_or_else(|| Error::Config("a dataset is required (--data)".into()))
    }

    /// Every referenced input path must exist before any work starts.
    pub fn check_paths(&self) -> Result<()> {
        let mut paths: Vec<&Path> = Vec::new();
        paths.extend(self.model.as_deref());
        paths.extend(self.data.as_deref());
        paths.extend(self.random_pool.as_deref());
        paths.extend(self.train.arch.as_deref());
        paths.extend(self.concepts.iter().map(|c| c.path.as_path()));
        for s in &self.stacks {
            paths.push(&s.attention);
            paths.extend(s.gradients.as_deref());
        }
        match paths.into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::Config(format!("{} does not exist", p.display()))),
            None => Ok(()),
        }
    }

    /// Hash of everything that shapes the results.
    pub fn hash(&self, subcommand: &str) -> Result<String> {
        let mut c = self.clone();
        c.out = None;
        crate::io::config_hash(&(subcommand, c))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_json_gives_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c.sampling.n_samples, 100);
        assert_eq!(c.cav.n_cavs, 50);
        assert_eq!(c.cav.n_pos, 120);
        assert_eq!(c.tcav.n_inputs, 200);
        assert_eq!(c.metrics.b, 20.0);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>("{\"sed\": 1}").is_err());
    }

    #[test]
    fn sampled_methods_need_a_seed() {
        let c = RunConfig::default();
        assert!(c.attribution_seed(&[Method::ShapleyGradAttCls]).is_ok());
        assert!(matches!(c.attribution_seed(&[Method::Shap]), Err(Error::Config(_))));
    }

    #[test]
    fn out_does_not_change_the_hash() {
        let a = RunConfig { out: Some("a".into()), ..RunConfig::default() };
        let b = RunConfig { out: Some("b".into()), ..RunConfig::default() };
        assert_eq!(a.hash("x").unwrap(), b.hash("x").unwrap());
        assert_ne!(a.hash("x").unwrap(), a.hash("y").unwrap());
    }
}
