#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crashscope_core::eval::RunConfig;
use crashscope_core::gateway::{Gateway, ProviderAdapter, ProviderConfig, ProviderKind, ResponseCache, TransportError};
use crashscope_core::prompt::{FrameSource, PromptMode, PromptRequest};
use crashscope_core::synthetic;

pub const SCENE: &str = "urban intersection in clear daylight with light traffic";
pub const CRASH_WHY: &str = "the red sedan collides with the pedestrian at the intersection";
pub const CALM_WHY: &str = "the sedan and the pedestrian keep a safe distance with no contact";

/// Replies by scenario id. `syn000`..`syn003` report collisions on windows
/// that truly contain accident frames, `syn004` never does, `syn005` raises
/// a false alarm on its first window, and the rest are quiet. Under OR
/// aggregation that is 4 tp, 1 fn, 1 fp and 4 tn.
pub struct ScriptedProvider {
    pub base_calls: AtomicUsize,
    pub enhanced_calls: AtomicUsize,
    pub base_positive: AtomicUsize,
    pub raw_in_enhanced: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new() -> Arc<Self> {
        Arc::new(Self {
            base_calls: AtomicUsize::new(0),
            enhanced_calls: AtomicUsize::new(0),
            base_positive: AtomicUsize::new(0),
            raw_in_enhanced: AtomicUsize::new(0),
        })
    }

    pub fn decide(req: &PromptRequest) -> bool {
        let n: usize = req.scenario_id.trim_start_matches("syn").parse().unwrap();
        match n {
            0..=3 => req.window.label,
            5 => req.window.frame_indices[0] == 0,
            _ => false,
        }
    }
}

impl ProviderAdapter for ScriptedProvider {
    fn complete(&self, _: &ProviderConfig, req: &PromptRequest, _: Option<&str>) -> Result<String, TransportError> {
        let hit = Self::decide(req);
        match req.mode {
            PromptMode::Base => {
                self.base_calls.fetch_add(1, Ordering::SeqCst);
                if hit {
                    self.base_positive.fetch_add(1, Ordering::SeqCst);
                }
            }
            PromptMode::Enhanced => {
                self.enhanced_calls.fetch_add(1, Ordering::SeqCst);
                if req.images.iter().any(|f| f.source != FrameSource::Rendered) {
                    self.raw_in_enhanced.fetch_add(1, Ordering::SeqCst);
                }
            }
        }
        let why = if hit { CRASH_WHY } else { CALM_WHY };
        Ok(format!(
            "Here is the assessment.\n```json\n{{\"classification\": {}, \"scene_context\": \"{SCENE}\", \"justification\": \"{why}\", \"objects\": [{{\"label\": \"car\", \"description\": \"red sedan\"}}, {{\"label\": \"person\", \"description\": \"pedestrian near the road\"}}]}}\n```",
            u8::from(hit)
        ))
    }
}

pub fn provider_config(name: &str) -> ProviderConfig {
    ProviderConfig {
        name: name.into(),
        kind: ProviderKind::OpenaiChat,
        endpoint: "http://127.0.0.1:9/unused".into(),
        model_id: "scripted".into(),
        auth_env: None,
        max_output_tokens: 512,
        temperature: 0.0,
        request_timeout: 5.0,
        max_parallel: 4,
    }
}

/// Writes 5 accident + 5 normal synthetic scenarios, their sidecars, a
/// lexicon and `providers.json`, and returns a config over them.
pub fn replay_workspace(dir: &Path) -> RunConfig {
    let plan = synthetic::plan(5, 5, 45, 2024);
    let data = dir.join("data");
    let dets = dir.join("detections");
    synthetic::write_dataset(&plan, &data, &dets).unwrap();

    let mut texts: Vec<String> = vec![SCENE.into(), CRASH_WHY.into(), CALM_WHY.into(), "car red sedan".into(), "person pedestrian near the road".into()];
    for s in &plan {
        for f in s.annotation().frames {
            texts.extend([f.scene_context, f.object_info, f.justification]);
        }
    }
    synthetic::write_lexicon(&dir.join("lexicon.txt"), texts.iter().map(String::as_str), 32).unwrap();
    std::fs::write(
        dir.join("providers.json"),
        serde_json::to_string_pretty(&vec![provider_config("scripted")]).unwrap(),
    )
    .unwrap();

    let run_json = serde_json::json!({
        "dataset_root": "data",
        "detections_dir": "detections",
        "providers_file": "providers.json",
        "output_dir": "out",
        "selection": {"n": 10, "seed": 7},
        "window_size": 3,
        "retry": {"max_attempts": 5, "base_delay": 0.0, "factor": 2.0},
        "metrics": {
            "lexicon": "lexicon.txt",
            "sentence_embedder": {"kind": "hashed", "dimension": 64},
            "rouge": "rouge-1"
        }
    });
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&run_json).unwrap()).unwrap();
    RunConfig::load(&path).unwrap()
}

pub fn scripted_gateway(cfg: &RunConfig, adapter: Arc<ScriptedProvider>) -> Gateway {
    let mut gw = Gateway::new(ResponseCache::new(cfg.cache_dir()), cfg.retry);
    gw.add_provider(provider_config("scripted"), adapter).unwrap();
    gw
}

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}
