use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::detection::{ClassAllowlist, DEFAULT_CLASSES};
use crate::digest::sha256_hex;
use crate::gateway::RetryPolicy;
use crate::metrics::{CachedEmbedder, FixtureEmbeddings, HashedEmbedder, HttpEmbedder, RougeVariant, SentenceEmbedder};
use crate::prompt::PromptMode;
use crate::render::RenderStyle;
use crate::scenario::MAX_WINDOW;
use crate::tracker::TrackerConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub n: usize,
    pub seed: u64,
}

/// What a row's precision/recall/F1 are computed over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassificationUnit {
    #[default]
    Scenario,
    Window,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SentenceEmbedderConfig {
    /// Precomputed vectors keyed by text digest.
    Fixture { path: PathBuf },
    /// Remote service answering `POST {"text": ...}` with a float array.
    Http {
        endpoint: String,
        dimension: usize,
        #[serde(default = "default_embed_timeout")]
        timeout: f64,
    },
    /// Token-hash vectors; no model, for offline smoke runs.
    Hashed { dimension: usize },
}

fn default_embed_timeout() -> f64 {
    30.0
}

impl SentenceEmbedderConfig {
    pub fn build(&self) -> Result<Box<dyn SentenceEmbedder>, EvalError> {
        Ok(match self {
            SentenceEmbedderConfig::Fixture { path } => Box::new(CachedEmbedder::new(FixtureEmbeddings::load(path)?)),
            SentenceEmbedderConfig::Http {
                endpoint,
                dimension,
                timeout,
            } => Box::new(CachedEmbedder::new(HttpEmbedder::new(
                endpoint.clone(),
                *dimension,
                Duration::from_secs_f64(*timeout),
            )?)),
            SentenceEmbedderConfig::Hashed { dimension } => {
                if *dimension == 0 {
                    return Err(EvalError::Config("hashed embedder dimension must be positive".into()));
                }
                Box::new(HashedEmbedder::new(*dimension))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// word2vec-format text file.
    pub lexicon: PathBuf,
    pub sentence_embedder: SentenceEmbedderConfig,
    #[serde(default)]
    pub rouge: RougeVariant,
}

fn default_window() -> usize {
    MAX_WINDOW
}
fn default_parallel_scenarios() -> usize {
    4
}
fn default_modes() -> Vec<PromptMode> {
    vec![PromptMode::Base, PromptMode::Enhanced]
}
fn default_classes() -> Vec<String> {
    DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect()
}

/// Contents of `run.json`. Relative paths are resolved against the file's
/// directory by [`RunConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    /// Holds one `<scenario_id>.json` sidecar per scenario.
    pub detections_dir: PathBuf,
    /// Balanced subset; all indexed scenarios when absent.
    #[serde(default)]
    pub selection: Option<Selection>,
    pub providers_file: PathBuf,
    /// Provider names to evaluate; every provider in the file when empty.
    #[serde(default)]
    pub providers: Vec<String>,
    #[serde(default = "default_modes")]
    pub modes: Vec<PromptMode>,
    #[serde(default = "default_window")]
    pub window_size: usize,
    /// Runs go to `<output_dir>/runs/<run_id>/`.
    pub output_dir: PathBuf,
    /// Defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_parallel_scenarios")]
    pub max_parallel_scenarios: usize,
    #[serde(default)]
    pub classification_unit: ClassificationUnit,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub tracker: TrackerConfig,
    #[serde(default = "default_classes")]
    pub classes: Vec<String>,
    #[serde(default)]
    pub render: RenderStyle,
    pub metrics: MetricsConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let raw = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig =
            serde_json::from_str(&raw).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset_root);
        resolve(base, &mut self.detections_dir);
        resolve(base, &mut self.providers_file);
        resolve(base, &mut self.output_dir);
        if let Some(c) = &mut self.cache_dir {
            resolve(base, c);
        }
        resolve(base, &mut self.metrics.lexicon);
        if let SentenceEmbedderConfig::Fixture { path } = &mut self.metrics.sentence_embedder {
            resolve(base, path);
        }
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.modes.is_empty() {
            return Err(EvalError::Config("modes must not be empty".into()));
        }
        if self.window_size == 0 || self.window_size > MAX_WINDOW {
            return Err(EvalError::Config(format!("window_size must be in 1..={MAX_WINDOW}")));
        }
        if self.max_parallel_scenarios == 0 {
            return Err(EvalError::Config("max_parallel_scenarios must be >= 1".into()));
        }
        if self.retry.max_attempts == 0 || self.retry.base_delay < 0.0 || self.retry.factor < 1.0 {
            return Err(EvalError::Config("retry needs max_attempts >= 1, base_delay >= 0, factor >= 1".into()));
        }
        self.render.validate()?;
        self.allowlist()?;
        Ok(())
    }

    pub fn allowlist(&self) -> Result<ClassAllowlist, EvalError> {
        Ok(ClassAllowlist::new(self.classes.iter().cloned())?)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn sidecar_path(&self, scenario_id: &str) -> PathBuf {
        self.detections_dir.join(format!("{scenario_id}.json"))
    }

    /// Digest of the settings that influence results. Output locations and
    /// parallelism caps are excluded so moving a run does not change it.
    pub fn digest(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            for k in ["output_dir", "cache_dir", "max_parallel_scenarios", "retry"] {
                obj.remove(k);
            }
        }
        sha256_hex(serde_json::to_vec(&v).expect("config serializes"))
    }
}
