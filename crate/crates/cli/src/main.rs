use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use crashscope_core::detection::{parse_sidecar, validate_sidecar, ClassAllowlist};
use crashscope_core::eval::{
    evaluate, new_run_id, render_report, run_dir, EvalSummary, ReportFormat, RunConfig, SentenceEmbedderConfig,
};
use crashscope_core::gateway::{load_providers, AuditLog, Gateway, HttpAdapter, ResponseCache};
use crashscope_core::metrics::{Lexicon, RougeVariant, TextScorer};
use crashscope_core::prompt::PromptMode;
use crashscope_core::render::{load_frame, render_enhanced, write_enhanced, RenderStyle};
use crashscope_core::scenario::{load_manifest, load_scenario};
use crashscope_core::synthetic;
use crashscope_core::tracker::{track_sequence, track_table, TrackerConfig};

/// Exit status for a run that finished with some windows unscored.
const EXIT_PARTIAL: u8 = 2;

#[derive(Parser)]
#[command(name = "crashscope", version, about = "Accident-detection evaluation for multimodal models")]
struct Cli {
    /// Log filter, e.g. `info` or `crashscope_core=debug`.
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Index a dataset root and write its manifest.json.
    Ingest {
        #[arg(long)]
        root: PathBuf,
    },
    /// Check detection sidecars against the schema and the dataset.
    ValidateDetections {
        #[arg(long)]
        root: PathBuf,
        /// Directory of `<scenario_id>.json` sidecars.
        #[arg(long)]
        detections: PathBuf,
    },
    /// Run the tracker over one scenario and print or dump the track table.
    Track {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        scenario: String,
        /// Write the per-frame track table as JSON instead of printing a summary.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Write enhanced (overlaid) frames for one scenario.
    Render {
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        detections: PathBuf,
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = RenderStyle::default().line_thickness)]
        thickness: u32,
        #[arg(long)]
        no_labels: bool,
    },
    /// Run the two-pass evaluation described by a run config.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated provider names; overrides the config.
        #[arg(long, value_delimiter = ',')]
        providers: Vec<String>,
        /// Comma-separated subset of `base,enhanced`; overrides the config.
        #[arg(long, value_delimiter = ',')]
        modes: Vec<PromptMode>,
        /// Explicit run id; a timestamped one is generated otherwise.
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Print a finished run's summary as CSV or JSON.
    Report {
        /// Run id under `--runs-dir`, or a path to a run directory.
        #[arg(long)]
        run: String,
        #[arg(long, default_value = "out/runs")]
        runs_dir: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score hypothesis lines against reference lines with all four metrics.
    MetricsText {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        hyp: PathBuf,
        /// word2vec text-format lexicon.
        #[arg(long)]
        lexicon: PathBuf,
        /// Precomputed sentence vectors (JSON keyed by text digest).
        #[arg(long, conflicts_with_all = ["embed_url", "hashed_dim"])]
        embeddings: Option<PathBuf>,
        /// Sentence-embedding service endpoint.
        #[arg(long, requires = "embed_dim")]
        embed_url: Option<String>,
        #[arg(long)]
        embed_dim: Option<usize>,
        /// Offline token-hash embedder of this dimension.
        #[arg(long)]
        hashed_dim: Option<usize>,
        #[arg(long, default_value = "rouge-1", value_parser = parse_rouge)]
        rouge: RougeVariant,
    },
    /// Generate a synthetic dataset with matching sidecars and a lexicon.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        accidents: usize,
        #[arg(long, default_value_t = 5)]
        normal: usize,
        #[arg(long, default_value_t = 45)]
        frames: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn parse_rouge(s: &str) -> Result<RougeVariant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase()))
        .map_err(|_| format!("unknown ROUGE variant `{s}` (rouge-1, rouge-2, rouge-l)"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| "warn".into()))
        .with_writer(std::io::stderr)
        .init();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Ingest { root } => ingest(&root),
        Command::ValidateDetections { root, detections } => validate(&root, &detections),
        Command::Track {
            root,
            detections,
            scenario,
            dump,
        } => track(&root, &detections, &scenario, dump.as_deref()),
        Command::Render {
            root,
            detections,
            scenario,
            out,
            thickness,
            no_labels,
        } => {
            let style = RenderStyle {
                line_thickness: thickness,
                id_label: !no_labels,
                ..RenderStyle::default()
            };
            render(&root, &detections, &scenario, &out, &style)
        }
        Command::Evaluate {
            config,
            providers,
            modes,
            run_id,
        } => run_evaluate(&config, providers, modes, run_id),
        Command::Report {
            run,
            runs_dir,
            format,
            out,
        } => report(&run, &runs_dir, format, out.as_deref()),
        Command::MetricsText {
            reference,
            hyp,
            lexicon,
            embeddings,
            embed_url,
            embed_dim,
            hashed_dim,
            rouge,
        } => {
            let embedder = match (embeddings, embed_url, hashed_dim) {
                (Some(path), None, None) => SentenceEmbedderConfig::Fixture { path },
                (None, Some(endpoint), None) => SentenceEmbedderConfig::Http {
                    endpoint,
                    dimension: embed_dim.unwrap_or_default(),
                    timeout: 30.0,
                },
                (None, None, Some(dimension)) => SentenceEmbedderConfig::Hashed { dimension },
                _ => bail!("choose exactly one of --embeddings, --embed-url or --hashed-dim"),
            };
            metrics_text(&reference, &hyp, &lexicon, &embedder, rouge)
        }
        Command::Synth {
            out,
            accidents,
            normal,
            frames,
            seed,
        } => synth(&out, accidents, normal, frames, seed),
    }
}

fn ingest(root: &Path) -> Result<ExitCode> {
    let index = load_manifest(root)?;
    let path = index.write_manifest()?;
    let accidents = index.entries.iter().filter(|e| e.has_accident).count();
    println!(
        "{} scenarios ({} accident, {} normal) indexed into {}",
        index.len(),
        accidents,
        index.len() - accidents,
        path.display()
    );
    for w in &index.warnings {
        println!("warning: {}: {}", w.scenario_id, w.message);
    }
    for f in &index.failures {
        println!("skipped: {}: {}", f.scenario_id, f.message);
    }
    Ok(ExitCode::SUCCESS)
}

fn validate(root: &Path, detections: &Path) -> Result<ExitCode> {
    let index = load_manifest(root)?;
    let mut bad = 0usize;
    for meta in &index.entries {
        let path = detections.join(format!("{}.json", meta.id));
        if !path.exists() {
            println!("{}: missing sidecar {}", meta.id, path.display());
            bad += 1;
            continue;
        }
        let report = validate_sidecar(&path);
        let mut issues: Vec<String> = report.issues.iter().map(ToString::to_string).collect();
        if let Ok(sc) = parse_sidecar(&path) {
            if sc.scenario_id != meta.id {
                issues.push(format!("scenario_id `{}` does not match directory", sc.scenario_id));
            }
            if let Some(f) = sc.frames.iter().find(|f| f.index as usize >= meta.frame_count) {
                issues.push(format!("frame {} beyond the scenario's {} frames", f.index, meta.frame_count));
            }
        }
        if issues.is_empty() {
            println!("{}: ok", meta.id);
        } else {
            bad += 1;
            for i in issues {
                println!("{}: {i}", meta.id);
            }
        }
    }
    if bad > 0 {
        bail!("{bad} of {} sidecars failed validation", index.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn scenario_tracks(
    root: &Path,
    detections: &Path,
    id: &str,
) -> Result<(crashscope_core::scenario::Scenario, [u32; 2], Vec<crashscope_core::tracker::FrameTracks>)> {
    let index = load_manifest(root)?;
    let scenario = load_scenario(&index, id)?;
    let sidecar_path = detections.join(format!("{id}.json"));
    let sidecar = parse_sidecar(&sidecar_path).with_context(|| format!("reading {}", sidecar_path.display()))?;
    let frames = track_sequence(
        &TrackerConfig::default(),
        &ClassAllowlist::default(),
        scenario.frames.len() as u32,
        &sidecar.detections(),
    );
    Ok((scenario, sidecar.image_size, frames))
}

fn track(root: &Path, detections: &Path, id: &str, dump: Option<&Path>) -> Result<ExitCode> {
    let (_, _, frames) = scenario_tracks(root, detections, id)?;
    let table = track_table(&frames);
    match dump {
        Some(path) => {
            std::fs::write(path, serde_json::to_vec_pretty(&table)?)
                .with_context(|| format!("writing {}", path.display()))?;
            println!("{} rows written to {}", table.len(), path.display());
        }
        None => {
            let mut ids: Vec<u64> = table.iter().filter(|r| r.confirmed).map(|r| r.track_id).collect();
            ids.sort_unstable();
            ids.dedup();
            println!("{} frames, {} confirmed tracks: {:?}", frames.len(), ids.len(), ids);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn render(root: &Path, detections: &Path, id: &str, out: &Path, style: &RenderStyle) -> Result<ExitCode> {
    let (scenario, size, frames) = scenario_tracks(root, detections, id)?;
    for (record, ft) in scenario.frames.iter().zip(&frames) {
        let image = load_frame(&record.image_path, Some(size))?;
        let (canvas, log) = render_enhanced(&image, &ft.tracks, style)?;
        for c in &log.clamped {
            tracing::warn!(frame = record.index, track = c.track_id, "contour vertex clamped to the image border");
        }
        write_enhanced(out, id, record.index, &canvas)?;
    }
    println!("{} frames written to {}", scenario.frames.len(), out.join(id).display());
    Ok(ExitCode::SUCCESS)
}

fn run_evaluate(config_path: &Path, providers: Vec<String>, modes: Vec<PromptMode>, run_id: Option<String>) -> Result<ExitCode> {
    let mut config = RunConfig::load(config_path)?;
    if !providers.is_empty() {
        config.providers = providers;
    }
    if !modes.is_empty() {
        config.modes = modes;
    }
    config.validate()?;

    let available = load_providers(&config.providers_file)?;
    let wanted: Vec<_> = if config.providers.is_empty() {
        available
    } else {
        config
            .providers
            .iter()
            .map(|name| {
                available
                    .iter()
                    .find(|p| &p.name == name)
                    .cloned()
                    .with_context(|| format!("provider `{name}` not in {}", config.providers_file.display()))
            })
            .collect::<Result<_>>()?
    };

    let run_id = run_id.unwrap_or_else(|| new_run_id(&config));
    let dir = run_dir(&config, &run_id);
    let mut gateway = Gateway::new(ResponseCache::new(config.cache_dir()), config.retry)
        .with_audit(AuditLog::new(dir.join("responses")));
    let adapter = Arc::new(HttpAdapter);
    for p in wanted {
        gateway.add_provider(p, adapter.clone())?;
    }

    let output = evaluate(&config, &gateway, &run_id)?;
    for row in &output.summary.rows {
        let k = &row.classification;
        println!(
            "{:<16} {:<8} P={:.3} R={:.3} F1={:.3} Acc={:.3} requests={} unscored={}",
            row.provider, row.mode.to_string(), k.precision, k.recall, k.f1, k.accuracy, row.requests, row.unscored_windows
        );
    }
    println!("run {} written to {}", output.run_id, output.run_dir.display());
    if output.partial() {
        eprintln!("warning: {} windows could not be scored", output.manifest.unscored_windows);
        return Ok(ExitCode::from(EXIT_PARTIAL));
    }
    Ok(ExitCode::SUCCESS)
}

fn report(run: &str, runs_dir: &Path, format: ReportFormat, out: Option<&Path>) -> Result<ExitCode> {
    let direct = PathBuf::from(run);
    let dir = if direct.join("summary.json").exists() {
        direct
    } else {
        runs_dir.join(run)
    };
    let path = dir.join("summary.json");
    let raw = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let summary: EvalSummary = serde_json::from_slice(&raw).with_context(|| format!("parsing {}", path.display()))?;
    let text = render_report(&summary, format)?;
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn non_empty_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn metrics_text(
    reference: &Path,
    hyp: &Path,
    lexicon: &Path,
    embedder: &SentenceEmbedderConfig,
    rouge: RougeVariant,
) -> Result<ExitCode> {
    let refs = non_empty_lines(reference)?;
    let hyps = non_empty_lines(hyp)?;
    if refs.len() != hyps.len() {
        bail!("{} reference lines but {} hypothesis lines", refs.len(), hyps.len());
    }
    if refs.is_empty() {
        bail!("no text to score");
    }
    let lexicon = Lexicon::from_file(lexicon)?;
    let embedder = embedder.build()?;
    let scorer = TextScorer {
        lexicon: &lexicon,
        embedder: embedder.as_ref(),
        rouge,
    };
    for (r, h) in refs.iter().zip(&hyps) {
        let scores = scorer.score(r, h)?;
        println!("{}", serde_json::to_string(&scores)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn synth(out: &Path, accidents: usize, normal: usize, frames: u32, seed: u64) -> Result<ExitCode> {
    let plan = synthetic::plan(accidents, normal, frames, seed);
    let data = out.join("data");
    let dets = out.join("detections");
    synthetic::write_dataset(&plan, &data, &dets).with_context(|| format!("writing {}", out.display()))?;
    let annotations: Vec<_> = plan.iter().map(|s| s.annotation()).collect();
    let texts = annotations
        .iter()
        .flat_map(|a| a.frames.iter())
        .flat_map(|f| [f.scene_context.as_str(), f.object_info.as_str(), f.justification.as_str()]);
    synthetic::write_lexicon(&out.join("lexicon.txt"), texts, 64)?;
    println!(
        "{} scenarios in {}, sidecars in {}, lexicon at {}",
        plan.len(),
        data.display(),
        dets.display(),
        out.join("lexicon.txt").display()
    );
    Ok(ExitCode::SUCCESS)
}
