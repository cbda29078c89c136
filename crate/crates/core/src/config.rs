//! Declarative experiment configuration (TOML) and its canonical
//! fingerprint.
//!
//! Relative corpus paths resolve against the config file's directory.
//! The experiment `seed` governs every random stream in a run; the
//! retriever's own seed field is derived from it at run time.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backdoor::InjectionStrategy;
use crate::error::{Error, Result};
use crate::poisonkb::KbMode;
use crate::retriever::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusPaths {
    pub train_pairs: PathBuf,
    pub eval_pairs: PathBuf,
    pub kb: PathBuf,
    pub vuln_pool: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proxy: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackdoorSettings {
    /// Target word; auto-selected from the query corpus when absent.
    pub target: Option<String>,
    /// Trigger token; auto-selected from the vulnerable corpus when absent.
    pub trigger: Option<String>,
    pub n_targets: usize,
    pub k_triggers: usize,
    pub gamma: f64,
    pub injection: InjectionStrategy,
}

impl Default for BackdoorSettings {
    fn default() -> Self {
        BackdoorSettings {
            target: None,
            trigger: None,
            n_targets: 3,
            k_triggers: 3,
            gamma: 2.0,
            injection: InjectionStrategy::Dissimilar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrieverSettings {
    pub dim: usize,
    pub train: TrainConfig,
}

impl Default for RetrieverSettings {
    fn default() -> Self {
        RetrieverSettings {
            dim: 64,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    Cluster,
    Shortest,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoisonSettings {
    pub budget: usize,
    pub mode: KbMode,
    pub selection: SelectionStrategy,
    pub theta: f64,
    pub delta: f64,
    pub kmeans_max_iters: usize,
}

impl Default for PoisonSettings {
    fn default() -> Self {
        PoisonSettings {
            budget: 10,
            mode: KbMode::WhiteBox,
            selection: SelectionStrategy::Cluster,
            theta: 0.5,
            delta: 2.0,
            kmeans_max_iters: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    /// ASR cutoffs, ascending.
    pub k_list: Vec<usize>,
    /// Retrieval depth for MRR truncation.
    pub retrieval_depth: usize,
    /// How many retrieved snippets the mock generator sees.
    pub generator_top_k: usize,
    /// Stealthiness band: |backdoored MRR - clean MRR| must stay within.
    pub mrr_band: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            k_list: vec![1, 5, 10],
            retrieval_depth: 100,
            generator_top_k: 10,
            mrr_band: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorSettings {
    /// Spectral-signature flag count = ceil(multiplier * poison budget).
    pub ss_flag_multiplier: f64,
    pub ngram_order: usize,
    pub ngram_z_threshold: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        DetectorSettings {
            ss_flag_multiplier: 1.5,
            ngram_order: 4,
            ngram_z_threshold: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub corpora: CorpusPaths,
    #[serde(default)]
    pub backdoor: BackdoorSettings,
    #[serde(default)]
    pub retriever: RetrieverSettings,
    #[serde(default)]
    pub poison: PoisonSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    #[serde(default)]
    pub detectors: DetectorSettings,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Load from a file, resolving relative corpus paths against the
    /// config's directory, then validate.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        let mut config = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        config.resolve_paths(base);
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        resolve(&mut self.corpora.train_pairs);
        resolve(&mut self.corpora.eval_pairs);
        resolve(&mut self.corpora.kb);
        resolve(&mut self.corpora.vuln_pool);
        if let Some(proxy) = &mut self.corpora.proxy {
            resolve(proxy);
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (label, path) in [
            ("train_pairs", Some(&self.corpora.train_pairs)),
            ("eval_pairs", Some(&self.corpora.eval_pairs)),
            ("kb", Some(&self.corpora.kb)),
            ("vuln_pool", Some(&self.corpora.vuln_pool)),
            ("proxy", self.corpora.proxy.as_ref()),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "{label} path does not exist: {}",
                        path.display()
                    )));
                }
            }
        }
        if self.eval.k_list.is_empty() {
            return Err(Error::Config("k_list must be non-empty".to_string()));
        }
        let mut seen = HashSet::new();
        let mut last = 0usize;
        for &k in &self.eval.k_list {
            if k < 1 || k <= last && last != 0 || !seen.insert(k) {
                return Err(Error::Config(format!(
                    "k_list must be ascending and >= 1, got {:?}",
                    self.eval.k_list
                )));
            }
            last = k;
        }
        let max_k = *self.eval.k_list.last().unwrap();
        if self.eval.retrieval_depth < max_k
            || self.eval.retrieval_depth < self.eval.generator_top_k
        {
            return Err(Error::Config(format!(
                "retrieval_depth {} must cover max k {} and generator_top_k {}",
                self.eval.retrieval_depth, max_k, self.eval.generator_top_k
            )));
        }
        if self.poison.mode == KbMode::BlackBox && self.corpora.proxy.is_none() {
            return Err(Error::Config(
                "black_box mode requires a proxy corpus path".to_string(),
            ));
        }
        self.retriever.train.validate()?;
        if self.retriever.dim == 0 {
            return Err(Error::Config("embedding dim must be positive".to_string()));
        }
        Ok(())
    }

    /// Stable hash of the canonicalized config: the JSON rendering with
    /// sorted keys, so field order in the TOML file does not matter.
    pub fn fingerprint(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
