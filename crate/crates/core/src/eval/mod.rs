//! Two-pass evaluation over scenarios.
//!
//! The base pass sends every window with raw frames. The enhanced pass
//! re-sends only the windows the base pass flagged as collisions, this time
//! with rendered track overlays; all other windows keep their base verdict.
//! A scenario is predicted positive when any of its windows is.

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ClassificationUnit, MetricsConfig, RunConfig, Selection, SentenceEmbedderConfig};
pub use report::{aggregate, emit_report, render_report, EvalSummary, MeanScores, ReportFormat, SummaryRow};

use crate::detection::{parse_sidecar, ClassAllowlist, DetectionError};
use crate::gateway::{Gateway, GatewayError, ModelVerdict};
use crate::metrics::{Lexicon, MetricsError, SentenceEmbedder, SimilarityScores, TextScorer};
use crate::prompt::{build_base_prompt, build_enhanced_prompt, EncodedFrame, PromptError, PromptMode, INSTRUCTION, INSTRUCTION_VERSION};
use crate::render::{load_frame, render_enhanced, RenderError};
use crate::scenario::{load_manifest, load_scenario, select_balanced, windows, FrameWindow, Scenario, ScenarioError, ScenarioIndex};
use crate::tracker::{track_sequence, FrameTracks};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error("scenario {0}: enhanced mode needs a detection sidecar at {1}")]
    MissingSidecar(String, PathBuf),
    #[error("scenario {scenario}: sidecar image size {sidecar:?} does not match frames {frames:?}")]
    ImageSize {
        scenario: String,
        sidecar: [u32; 2],
        frames: [u32; 2],
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("scenario verdict needs at least one window")]
    EmptyWindows,
    #[error("nothing to aggregate")]
    EmptyResults,
    #[error("run directory {0} already exists")]
    RunExists(PathBuf),
}

/// Description tasks scored against the annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    SceneContext,
    Justification,
    ObjectDescription,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::SceneContext, Task::Justification, Task::ObjectDescription];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::SceneContext => "scene_context",
            Task::Justification => "justification",
            Task::ObjectDescription => "object_description",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub frame_indices: Vec<u32>,
    /// Ground truth: any frame in the window is an accident frame.
    pub label: bool,
    /// A request was issued for this window in this mode's pass.
    pub requested: bool,
    pub cached: bool,
    /// `None` when the provider failed; counts as a negative prediction.
    pub classification: Option<u8>,
    pub verdict: Option<ModelVerdict>,
    pub error: Option<String>,
    pub similarity: BTreeMap<Task, SimilarityScores>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl WindowResult {
    pub fn predicted(&self) -> bool {
        self.classification == Some(1)
    }

    pub fn scored(&self) -> bool {
        self.classification.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario_id: String,
    pub provider: String,
    pub mode: PromptMode,
    pub has_accident: bool,
    pub windows: Vec<WindowResult>,
    pub scenario_prediction: u8,
    pub requests: usize,
    pub unscored_windows: usize,
    pub elapsed_ms: u64,
}

impl ScenarioResult {
    pub fn partial(&self) -> bool {
        self.unscored_windows > 0
    }
}

/// OR over window classifications.
pub fn scenario_verdict(window_classifications: &[u8]) -> Result<u8, EvalError> {
    if window_classifications.is_empty() {
        return Err(EvalError::EmptyWindows);
    }
    Ok(u8::from(window_classifications.contains(&1)))
}

fn finish(
    scenario: &Scenario,
    provider: &str,
    mode: PromptMode,
    windows: Vec<WindowResult>,
    started: Instant,
) -> Result<ScenarioResult, EvalError> {
    let classes: Vec<u8> = windows.iter().map(|w| u8::from(w.predicted())).collect();
    Ok(ScenarioResult {
        scenario_id: scenario.id.clone(),
        provider: provider.to_string(),
        mode,
        has_accident: scenario.has_accident,
        scenario_prediction: scenario_verdict(&classes)?,
        requests: windows.iter().filter(|w| w.requested).count(),
        unscored_windows: windows.iter().filter(|w| !w.scored()).count(),
        windows,
        elapsed_ms: started.elapsed().as_millis() as u64,
    })
}

/// Runs scenarios through one gateway and scores the replies.
pub struct Evaluator<'a> {
    pub gateway: &'a Gateway,
    pub lexicon: &'a Lexicon,
    pub embedder: &'a dyn SentenceEmbedder,
    pub config: &'a RunConfig,
    allow: ClassAllowlist,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        config: &'a RunConfig,
        gateway: &'a Gateway,
        lexicon: &'a Lexicon,
        embedder: &'a dyn SentenceEmbedder,
    ) -> Result<Self, EvalError> {
        Ok(Self {
            gateway,
            lexicon,
            embedder,
            config,
            allow: config.allowlist()?,
        })
    }

    fn scorer(&self) -> TextScorer<'_> {
        TextScorer {
            lexicon: self.lexicon,
            embedder: self.embedder,
            rouge: self.config.metrics.rouge,
        }
    }

    /// Scores the verdict's text fields against the annotation of the
    /// window's last frame. Tasks with an empty reference are skipped.
    fn score(&self, scenario: &Scenario, window: &FrameWindow, v: &ModelVerdict) -> (BTreeMap<Task, SimilarityScores>, Vec<String>) {
        let mut out = BTreeMap::new();
        let mut notes = Vec::new();
        let Some(ann) = scenario.annotation(window.last_frame()) else {
            notes.push(format!("frame {} has no annotation; descriptions unscored", window.last_frame()));
            return (out, notes);
        };
        let objects = v.fields().objects_text();
        let pairs = [
            (Task::SceneContext, &ann.scene_context, v.scene_context.as_str()),
            (Task::Justification, &ann.justification, v.justification.as_str()),
            (Task::ObjectDescription, &ann.object_info, objects.as_str()),
        ];
        let scorer = self.scorer();
        for (task, reference, hypothesis) in pairs {
            if crate::metrics::tokenize(reference).is_empty() {
                continue;
            }
            match scorer.score(reference, hypothesis) {
                Ok(s) => {
                    out.insert(task, s);
                }
                Err(e) => notes.push(format!("{} unscored: {e}", task.as_str())),
            }
        }
        (out, notes)
    }

    fn send_window(&self, scenario: &Scenario, provider: &str, window: &FrameWindow, frames: Vec<EncodedFrame>, mode: PromptMode) -> Result<WindowResult, EvalError> {
        let req = match mode {
            PromptMode::Base => build_base_prompt(window, frames)?,
            PromptMode::Enhanced => build_enhanced_prompt(window, frames)?,
        };
        let mut w = WindowResult {
            frame_indices: window.frame_indices.clone(),
            label: window.label,
            requested: true,
            cached: false,
            classification: None,
            verdict: None,
            error: None,
            similarity: BTreeMap::new(),
            notes: Vec::new(),
        };
        match self.gateway.send(provider, &req) {
            Ok(out) => {
                let (sim, notes) = self.score(scenario, window, &out.verdict);
                w.cached = out.cached;
                w.classification = Some(out.verdict.classification);
                w.verdict = Some(out.verdict);
                w.similarity = sim;
                w.notes = notes;
            }
            // Configuration problems abort the run; per-request failures
            // leave the window unscored.
            Err(e @ (GatewayError::UnknownProvider(_) | GatewayError::MissingCredential { .. } | GatewayError::Config { .. } | GatewayError::Io { .. })) => {
                return Err(e.into())
            }
            Err(e) => {
                tracing::warn!(scenario = %scenario.id, provider, frames = ?window.frame_indices, error = %e, "window unscored");
                w.error = Some(e.to_string());
            }
        }
        Ok(w)
    }

    pub fn run_base(&self, scenario: &Scenario, provider: &str) -> Result<ScenarioResult, EvalError> {
        let started = Instant::now();
        let mut results = Vec::new();
        for window in windows(scenario, self.config.window_size)? {
            let frames = window
                .frame_indices
                .iter()
                .map(|&i| {
                    let rec = scenario.frame(i).expect("window indices come from the scenario");
                    EncodedFrame::raw(i, &load_frame(&rec.image_path, None)?)
                        .map_err(EvalError::from)
                })
                .collect::<Result<Vec<_>, EvalError>>()?;
            results.push(self.send_window(scenario, provider, &window, frames, PromptMode::Base)?);
        }
        finish(scenario, provider, PromptMode::Base, results, started)
    }

    /// Track states per frame, from the scenario's sidecar.
    pub fn tracks_for(&self, scenario: &Scenario) -> Result<(Vec<FrameTracks>, [u32; 2]), EvalError> {
        let path = self.config.sidecar_path(&scenario.id);
        if !path.exists() {
            return Err(EvalError::MissingSidecar(scenario.id.clone(), path));
        }
        let sidecar = parse_sidecar(&path)?;
        let tracks = track_sequence(&self.config.tracker, &self.allow, scenario.frames.len() as u32, &sidecar.detections());
        Ok((tracks, sidecar.image_size))
    }

    pub fn run_enhanced(&self, scenario: &Scenario, provider: &str, base: &ScenarioResult) -> Result<ScenarioResult, EvalError> {
        let started = Instant::now();
        let flagged = base.windows.iter().any(WindowResult::predicted);
        let tracks = if flagged { Some(self.tracks_for(scenario)?) } else { None };
        let mut results = Vec::with_capacity(base.windows.len());
        for (window, prior) in windows(scenario, self.config.window_size)?.iter().zip(&base.windows) {
            if !prior.predicted() {
                results.push(WindowResult {
                    requested: false,
                    ..prior.clone()
                });
                continue;
            }
            let (frame_tracks, size) = tracks.as_ref().expect("tracks loaded when a window is flagged");
            let mut frames = Vec::with_capacity(window.frame_indices.len());
            for &i in &window.frame_indices {
                let rec = scenario.frame(i).expect("window indices come from the scenario");
                let img = load_frame(&rec.image_path, None)?;
                if [img.width(), img.height()] != *size {
                    return Err(EvalError::ImageSize {
                        scenario: scenario.id.clone(),
                        sidecar: *size,
                        frames: [img.width(), img.height()],
                    });
                }
                let (rendered, log) = render_enhanced(&img, &frame_tracks[i as usize].tracks, &self.config.render)?;
                if !log.clamped.is_empty() {
                    tracing::debug!(scenario = %scenario.id, frame = i, clamped = log.clamped.len(), "contour vertices clamped");
                }
                frames.push(EncodedFrame::rendered(i, &rendered)?);
            }
            results.push(self.send_window(scenario, provider, window, frames, PromptMode::Enhanced)?);
        }
        finish(scenario, provider, PromptMode::Enhanced, results, started)
    }

    /// Base pass, then the enhanced pass when requested. Results are
    /// returned only for the modes asked for.
    pub fn run_scenario(&self, scenario: &Scenario, provider: &str, modes: &[PromptMode]) -> Result<Vec<ScenarioResult>, EvalError> {
        let base = self.run_base(scenario, provider)?;
        let mut out = Vec::new();
        if modes.contains(&PromptMode::Enhanced) {
            let enhanced = self.run_enhanced(scenario, provider, &base)?;
            if modes.contains(&PromptMode::Base) {
                out.push(base);
            }
            out.push(enhanced);
        } else {
            out.push(base);
        }
        Ok(out)
    }
}

/// Scenario ids the config selects, in sorted order.
pub fn selected_scenarios(config: &RunConfig, index: &ScenarioIndex) -> Result<Vec<String>, EvalError> {
    Ok(match config.selection {
        Some(Selection { n, seed }) => select_balanced(index, n, seed)?,
        None => index.entries.iter().map(|m| m.id.clone()).collect(),
    })
}

/// Provenance written to `run.json` beside the summary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub started_at: chrono::DateTime<chrono::Utc>,
    pub finished_at: chrono::DateTime<chrono::Utc>,
    pub config_digest: String,
    pub prompt_version: String,
    pub prompt_sha256: String,
    pub config: RunConfig,
    pub providers: Vec<crate::gateway::ProviderConfig>,
    pub scenarios: Vec<String>,
    pub network_calls: BTreeMap<String, usize>,
    pub cache_hits: BTreeMap<String, usize>,
    pub unscored_windows: usize,
}

#[derive(Debug)]
pub struct RunOutput {
    pub run_id: String,
    pub run_dir: PathBuf,
    pub results: Vec<ScenarioResult>,
    pub summary: EvalSummary,
    pub manifest: RunManifest,
}

impl RunOutput {
    pub fn partial(&self) -> bool {
        self.manifest.unscored_windows > 0
    }
}

pub fn new_run_id(config: &RunConfig) -> String {
    format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%S%3fZ"), &config.digest()[..8])
}

pub fn run_dir(config: &RunConfig, run_id: &str) -> PathBuf {
    config.output_dir.join("runs").join(run_id)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), EvalError> {
    let body = serde_json::to_vec_pretty(value).expect("run artifacts serialize");
    std::fs::write(path, body).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Evaluates every selected scenario with each provider registered in
/// `gateway` and writes `summary.json`, `results.json`, `run.json` and
/// `report.csv` under the run directory.
pub fn evaluate(config: &RunConfig, gateway: &Gateway, run_id: &str) -> Result<RunOutput, EvalError> {
    let started_at = chrono::Utc::now();
    let dir = run_dir(config, run_id);
    if dir.join("summary.json").exists() {
        return Err(EvalError::RunExists(dir));
    }
    let providers: Vec<String> = gateway.provider_names().map(String::from).collect();
    if providers.is_empty() {
        return Err(EvalError::Config("no providers selected".into()));
    }

    let index = load_manifest(&config.dataset_root)?;
    for f in &index.failures {
        tracing::warn!(scenario = %f.scenario_id, "skipping invalid scenario: {}", f.message);
    }
    let ids = selected_scenarios(config, &index)?;
    let scenarios = ids
        .iter()
        .map(|id| load_scenario(&index, id))
        .collect::<Result<Vec<_>, _>>()?;
    if config.modes.contains(&PromptMode::Enhanced) {
        for s in &scenarios {
            let p = config.sidecar_path(&s.id);
            if !p.exists() {
                return Err(EvalError::MissingSidecar(s.id.clone(), p));
            }
        }
    }

    let lexicon = Lexicon::from_file(&config.metrics.lexicon)?;
    let embedder = config.metrics.sentence_embedder.build()?;
    let evaluator = Evaluator::new(config, gateway, &lexicon, embedder.as_ref())?;

    let jobs: Vec<(&Scenario, &str)> = scenarios
        .iter()
        .flat_map(|s| providers.iter().map(move |p| (s, p.as_str())))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.max_parallel_scenarios)
        .build()
        .map_err(|e| EvalError::Config(e.to_string()))?;
    let nested: Vec<Vec<ScenarioResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|(s, p)| evaluator.run_scenario(s, p, &config.modes))
            .collect::<Result<_, _>>()
    })?;
    let mut results: Vec<ScenarioResult> = nested.into_iter().flatten().collect();
    results.sort_by(|a, b| (&a.provider, a.mode, &a.scenario_id).cmp(&(&b.provider, b.mode, &b.scenario_id)));

    let summary = aggregate(&results, config)?;

    std::fs::create_dir_all(&dir).map_err(|source| EvalError::Io {
        path: dir.clone(),
        source,
    })?;
    let manifest = RunManifest {
        run_id: run_id.to_string(),
        started_at,
        finished_at: chrono::Utc::now(),
        config_digest: config.digest(),
        prompt_version: INSTRUCTION_VERSION.to_string(),
        prompt_sha256: crate::digest::text_digest(INSTRUCTION),
        config: config.clone(),
        providers: providers.iter().filter_map(|p| gateway.provider(p).cloned()).collect(),
        scenarios: ids,
        network_calls: providers.iter().map(|p| (p.clone(), gateway.calls(p))).collect(),
        cache_hits: providers.iter().map(|p| (p.clone(), gateway.cache_hits(p))).collect(),
        unscored_windows: results.iter().map(|r| r.unscored_windows).sum(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("results.json"), &results)?;
    write_json(&dir.join("run.json"), &manifest)?;
    emit_report(&summary, ReportFormat::Csv, &dir.join("report.csv"))?;

    Ok(RunOutput {
        run_id: run_id.to_string(),
        run_dir: dir,
        results,
        summary,
        manifest,
    })
}
