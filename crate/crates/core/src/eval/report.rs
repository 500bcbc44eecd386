//! Aggregation of scenario results into per-(provider, mode) rows, and
//! JSON/CSV report output.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ClassificationUnit, EvalError, RunConfig, ScenarioResult, Task};
use crate::metrics::{classification_report, ClassificationReport, ConfusionCounts, RougeVariant, SimilarityScores};
use crate::prompt::{PromptMode, INSTRUCTION, INSTRUCTION_VERSION};

/// Means over scored items; `None` when nothing was scored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanScores {
    pub count: usize,
    pub bleu: Option<f64>,
    pub rouge: Option<f64>,
    pub w2v_cosine: Option<f64>,
    pub st_cosine: Option<f64>,
}

#[derive(Default)]
struct Accumulator {
    n: usize,
    sums: [f64; 4],
}

impl Accumulator {
    fn add(&mut self, s: &SimilarityScores) {
        self.n += 1;
        for (acc, v) in self.sums.iter_mut().zip([s.bleu, s.rouge, s.w2v_cosine, s.st_cosine]) {
            *acc += v;
        }
    }

    fn mean(&self) -> MeanScores {
        let m = |i: usize| (self.n > 0).then(|| self.sums[i] / self.n as f64);
        MeanScores {
            count: self.n,
            bleu: m(0),
            rouge: m(1),
            w2v_cosine: m(2),
            st_cosine: m(3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub provider: String,
    pub mode: PromptMode,
    pub scenarios: usize,
    pub windows: usize,
    pub unscored_windows: usize,
    /// Requests issued in this mode's pass (cache hits included).
    pub requests: usize,
    /// Confusion for the configured classification unit.
    pub confusion: ConfusionCounts,
    pub classification: ClassificationReport,
    pub scenario_confusion: ConfusionCounts,
    pub window_confusion: ConfusionCounts,
    pub tasks: BTreeMap<Task, MeanScores>,
    /// All three tasks pooled.
    pub pooled: MeanScores,
}

/// Timestamps live in the run manifest, not here, so that replaying a run
/// from cache reproduces this structure bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub prompt_version: String,
    pub prompt_sha256: String,
    pub config_digest: String,
    pub classification_unit: ClassificationUnit,
    pub rouge_variant: RougeVariant,
    pub rows: Vec<SummaryRow>,
}

/// Partitions results by (provider, mode). Scenario-level confusion compares
/// `scenario_prediction` with the scenario label; window-level confusion
/// compares each window's classification (unscored = 0) with its label.
pub fn aggregate(results: &[ScenarioResult], config: &RunConfig) -> Result<EvalSummary, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyResults);
    }
    let mut groups: BTreeMap<(String, PromptMode), Vec<&ScenarioResult>> = BTreeMap::new();
    for r in results {
        groups.entry((r.provider.clone(), r.mode)).or_default().push(r);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((provider, mode), mut group) in groups {
        group.sort_by(|a, b| a.scenario_id.cmp(&b.scenario_id));
        let mut scen = ConfusionCounts::default();
        let mut win = ConfusionCounts::default();
        let mut per_task: BTreeMap<Task, Accumulator> = Task::ALL.iter().map(|&t| (t, Accumulator::default())).collect();
        let mut pooled = Accumulator::default();
        let (mut windows, mut unscored, mut requests) = (0, 0, 0);
        for r in &group {
            scen.record(r.scenario_prediction == 1, r.has_accident);
            requests += r.requests;
            unscored += r.unscored_windows;
            for w in &r.windows {
                windows += 1;
                win.record(w.predicted(), w.label);
                for (task, s) in &w.similarity {
                    per_task.get_mut(task).expect("all tasks present").add(s);
                    pooled.add(s);
                }
            }
        }
        let confusion = match config.classification_unit {
            ClassificationUnit::Scenario => scen,
            ClassificationUnit::Window => win,
        };
        rows.push(SummaryRow {
            provider,
            mode,
            scenarios: group.len(),
            windows,
            unscored_windows: unscored,
            requests,
            confusion,
            classification: classification_report(&confusion)?,
            scenario_confusion: scen,
            window_confusion: win,
            tasks: per_task.into_iter().map(|(t, a)| (t, a.mean())).collect(),
            pooled: pooled.mean(),
        });
    }
    Ok(EvalSummary {
        prompt_version: INSTRUCTION_VERSION.to_string(),
        prompt_sha256: crate::digest::text_digest(INSTRUCTION),
        config_digest: config.digest(),
        classification_unit: config.classification_unit,
        rouge_variant: config.metrics.rouge,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            other => Err(format!("unknown report format {other:?} (expected json or csv)")),
        }
    }
}

const SCORE_NAMES: [&str; 4] = ["bleu", "rouge", "w2v_cosine", "st_cosine"];

/// CSV header in its fixed order.
pub fn csv_header() -> Vec<String> {
    let mut h: Vec<String> = [
        "provider", "mode", "unit", "scenarios", "windows", "unscored_windows", "requests", "tp", "fp", "fn", "tn",
        "precision", "recall", "f1", "accuracy",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    for group in Task::ALL.iter().map(|t| t.as_str()).chain(["pooled"]) {
        h.push(format!("{group}_n"));
        h.extend(SCORE_NAMES.iter().map(|m| format!("{group}_{m}")));
    }
    h
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn mean_cells(m: &MeanScores) -> Vec<String> {
    let mut cells = vec![m.count.to_string()];
    cells.extend([m.bleu, m.rouge, m.w2v_cosine, m.st_cosine].map(|v| v.map(f6).unwrap_or_default()));
    cells
}

fn unit_str(u: ClassificationUnit) -> &'static str {
    match u {
        ClassificationUnit::Scenario => "scenario",
        ClassificationUnit::Window => "window",
    }
}

pub fn render_report(summary: &EvalSummary, format: ReportFormat) -> Result<String, EvalError> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(summary).expect("summary serializes");
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let csv_err = |e: csv::Error| EvalError::Config(format!("csv: {e}"));
            w.write_record(csv_header()).map_err(csv_err)?;
            for r in &summary.rows {
                let c = &r.confusion;
                let k = &r.classification;
                let mut rec = vec![
                    r.provider.clone(),
                    r.mode.to_string(),
                    unit_str(summary.classification_unit).to_string(),
                    r.scenarios.to_string(),
                    r.windows.to_string(),
                    r.unscored_windows.to_string(),
                    r.requests.to_string(),
                    c.tp.to_string(),
                    c.fp.to_string(),
                    c.fn_.to_string(),
                    c.tn.to_string(),
                    f6(k.precision),
                    f6(k.recall),
                    f6(k.f1),
                    f6(k.accuracy),
                ];
                for t in Task::ALL {
                    rec.extend(mean_cells(r.tasks.get(&t).unwrap_or(&MeanScores::default())));
                }
                rec.extend(mean_cells(&r.pooled));
                w.write_record(&rec).map_err(csv_err)?;
            }
            let bytes = w.into_inner().map_err(|e| EvalError::Config(format!("csv: {e}")))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
    }
}

pub fn emit_report(summary: &EvalSummary, format: ReportFormat, path: &Path) -> Result<(), EvalError> {
    let body = render_report(summary, format)?;
    std::fs::write(path, body).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}
