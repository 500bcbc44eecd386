//! Acceptance checks. Runs without the libtest harness so every line is
//! printed; exits non-zero if any check fails.

mod common;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use crashscope_core::detection::{BoundingBox, Detection, Point};
use crashscope_core::eval::evaluate;
use crashscope_core::metrics::{
    classification_report, confusion, cosine, f1_score, rouge_l, tokenize, ConfusionCounts, EmbeddingVector,
    FixtureEmbeddings, Lexicon, RougeVariant, TextScorer,
};
use crashscope_core::prompt::PromptMode;
use crashscope_core::render::{encode_png, label_extent, render_enhanced, RenderStyle};
use crashscope_core::tracker::kalman::min_eigenvalue;
use crashscope_core::tracker::{solve, KalmanFilter, Track, Tracker, TrackerConfig};
use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/embeddings")
}

fn reference_sentences() -> [String; 3] {
    let raw = std::fs::read_to_string(fixtures().join("reference_sentences.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&raw).unwrap();
    ["s1", "s2", "s3"].map(|k| v[k].as_str().unwrap().to_string())
}

fn table_ordering() -> Check {
    let [s1, s2, s3] = reference_sentences();
    let lexicon = Lexicon::from_file(fixtures().join("lexicon.txt")).map_err(|e| e.to_string())?;
    let embedder = FixtureEmbeddings::load(fixtures().join("sentences.json")).map_err(|e| e.to_string())?;
    let scorer = TextScorer {
        lexicon: &lexicon,
        embedder: &embedder,
        rouge: RougeVariant::Unigram,
    };
    let a = scorer.score(&s1, &s2).map_err(|e| e.to_string())?;
    let b = scorer.score(&s1, &s3).map_err(|e| e.to_string())?;
    for (name, x, y) in [
        ("bleu", a.bleu, b.bleu),
        ("rouge", a.rouge, b.rouge),
        ("w2v", a.w2v_cosine, b.w2v_cosine),
        ("st", a.st_cosine, b.st_cosine),
    ] {
        ensure(x >= y, format!("{name}: S1S2 {x:.4} < S1S3 {y:.4}"))?;
    }
    ensure((a.bleu - 0.46).abs() <= 0.10, format!("BLEU {:.4} outside 0.46 +/- 0.10", a.bleu))?;
    ensure((a.rouge - 0.75).abs() <= 0.10, format!("ROUGE-1 {:.4} outside 0.75 +/- 0.10", a.rouge))?;
    let lcs = rouge_l(&tokenize(&s1), &tokenize(&s2));
    Ok(format!(
        "S1S2 bleu={:.4} rouge-1={:.4} w2v={:.4} st={:.4}; S1S3 bleu={:.4} rouge-1={:.4} w2v={:.4} st={:.4}; rouge-l(S1S2)={lcs:.4} for reference",
        a.bleu, a.rouge, a.w2v_cosine, a.st_cosine, b.bleu, b.rouge, b.w2v_cosine, b.st_cosine
    ))
}

fn classification_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1A55);
    for trial in 0..1000 {
        let pred: Vec<bool> = (0..50).map(|_| rng.gen()).collect();
        let act: Vec<bool> = (0..50).map(|_| rng.gen()).collect();
        let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..50 {
            match (pred[i], act[i]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
        let p = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
        let r = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        let acc = (tp + tn) as f64 / 50.0;
        let c = confusion(&pred, &act).map_err(|e| e.to_string())?;
        ensure(c == ConfusionCounts { tp, fp, fn_, tn }, format!("trial {trial}: confusion differs"))?;
        let rep = classification_report(&c).map_err(|e| e.to_string())?;
        ensure(
            rep.precision == p && rep.recall == r && rep.f1 == f && rep.accuracy == acc,
            format!("trial {trial}: {rep:?} vs p={p} r={r} f1={f} acc={acc}"),
        )?;
    }
    let f1 = f1_score(0.62, 0.83);
    ensure((f1 - 0.71).abs() <= 0.005, format!("F1(0.62, 0.83) = {f1:.4}"))?;
    Ok(format!("1000 label vectors exact; F1(0.62, 0.83) = {f1:.4}"))
}

/// Minimum over all injective row-to-column maps (rows <= cols).
fn brute_force(cost: &[Vec<f64>]) -> f64 {
    fn go(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
        if row == cost.len() {
            *best = best.min(acc);
            return;
        }
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                go(cost, row + 1, used, acc + cost[row][c], best);
                used[c] = false;
            }
        }
    }
    let (rows, cols) = (cost.len(), cost[0].len());
    if rows > cols {
        let t: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| cost[r][c]).collect()).collect();
        return brute_force(&t);
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cols], 0.0, &mut best);
    best
}

fn hungarian_optimality() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4A11);
    for trial in 0..1000 {
        let rows = rng.gen_range(1..=6);
        let cols = rng.gen_range(1..=6);
        // Integer-valued costs make the float sums exact in any order.
        let integral = trial % 2 == 0;
        let cost: Vec<Vec<f64>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| if integral { rng.gen_range(0..100) as f64 } else { rng.gen_range(0.0..1.0) })
                    .collect()
            })
            .collect();
        let pairs = solve(&cost);
        ensure(pairs.len() == rows.min(cols), format!("trial {trial}: {} pairs", pairs.len()))?;
        let mut rs: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let mut cs: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        rs.sort_unstable();
        rs.dedup();
        cs.sort_unstable();
        cs.dedup();
        ensure(rs.len() == pairs.len() && cs.len() == pairs.len(), format!("trial {trial}: repeated index"))?;
        let got: f64 = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
        let want = brute_force(&cost);
        let ok = if integral { got == want } else { (got - want).abs() <= 1e-12 };
        ensure(ok, format!("trial {trial} ({rows}x{cols}): {got} vs optimum {want}"))?;
    }
    Ok("1000 matrices up to 6x6; integer-cost half exact, real-cost half within 1e-12".into())
}

fn bx(x1: f64, y1: f64, x2: f64, y2: f64) -> BoundingBox {
    BoundingBox::new(x1, y1, x2, y2).unwrap()
}

fn det(frame: u32, b: BoundingBox) -> Detection {
    Detection {
        frame_index: frame,
        class_label: "car".into(),
        confidence: 0.9,
        bbox: b,
        contour: None,
        embedding: None,
    }
}

fn tracker_suite() -> Check {
    let kf = KalmanFilter::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7AC);

    // Covariance stays positive semi-definite through random predict/update runs.
    let mut worst = f64::INFINITY;
    for _ in 0..50 {
        let mut st = kf.init(&bx(10.0, 10.0, 30.0, 40.0));
        for _ in 0..40 {
            st = kf.predict(&st).state;
            worst = worst.min(min_eigenvalue(&st.covariance));
            if rng.gen_bool(0.7) {
                let x = rng.gen_range(0.0..200.0);
                let y = rng.gen_range(0.0..200.0);
                let z = bx(x, y, x + rng.gen_range(2.0..60.0), y + rng.gen_range(2.0..60.0));
                st = kf.update(&st, &z).map_err(|e| e.to_string())?;
                worst = worst.min(min_eigenvalue(&st.covariance));
            }
        }
    }
    ensure(worst >= -1e-9, format!("covariance eigenvalue {worst:e}"))?;

    // Constant-velocity target. First the motion model alone: from the true
    // state, k-step predictions land on the analytic centre.
    let (vx, vy) = (2.5, -1.25);
    let at = |k: u32| {
        let (cx, cy) = (50.0 + vx * k as f64, 120.0 + vy * k as f64);
        bx(cx - 10.0, cy - 15.0, cx + 10.0, cy + 15.0)
    };
    let mut pred = kf.init(&at(0));
    pred.mean[4] = vx;
    pred.mean[5] = vy;
    let mut model_err: f64 = 0.0;
    for k in 1..=50 {
        pred = kf.predict(&pred).state;
        let (ex, ey) = at(k).center();
        model_err = model_err.max((pred.mean[0] - ex).abs()).max((pred.mean[1] - ey).abs());
    }
    ensure(model_err <= 1e-6, format!("motion model off by {model_err:e}"))?;

    // Then the filter from a cold start (velocity unknown) on noise-free
    // measurements: the one-step prediction error must keep shrinking and
    // be under 1e-6 once settled.
    let mut st = kf.init(&at(0));
    let mut errs = Vec::new();
    for k in 1..=100 {
        let p = kf.predict(&st).state;
        let (ex, ey) = at(k).center();
        errs.push((p.mean[0] - ex).abs().max((p.mean[1] - ey).abs()));
        st = kf.update(&p, &at(k)).map_err(|e| e.to_string())?;
    }
    ensure(errs.windows(10).step_by(10).all(|w| w[9] < w[0]), "one-step error not decreasing")?;
    let cv_err = *errs.last().unwrap();
    ensure(cv_err <= 1e-6, format!("settled one-step prediction off by {cv_err:e}"))?;
    let first_under = errs.iter().position(|&e| e <= 1e-6).map_or(0, |i| i + 1);

    // Confirmation boundary: two hits tentative, three confirmed.
    let mut t = Tracker::new(TrackerConfig::default());
    let b = bx(10.0, 10.0, 40.0, 30.0);
    t.step(0, &[det(0, b)]);
    t.step(1, &[det(1, b.translate(1.0, 0.0))]);
    ensure(!t.tracks()[0].confirmed && t.tracks()[0].hits == 2, "confirmed after 2 hits")?;
    t.step(2, &[det(2, b.translate(2.0, 0.0))]);
    ensure(t.tracks()[0].confirmed && t.tracks()[0].hits == 3, "not confirmed after 3 hits")?;

    // Identity stability on non-overlapping scenes.
    let mut switches = 0;
    for k in 1..=5usize {
        for scene in 0..20 {
            let mut srng = ChaCha8Rng::seed_from_u64((k * 100 + scene) as u64);
            let starts: Vec<(f64, f64, f64)> = (0..k)
                .map(|i| (i as f64 * 80.0 + srng.gen_range(0.0..10.0), srng.gen_range(20.0..200.0), srng.gen_range(-1.5..1.5)))
                .collect();
            let mut tracker = Tracker::new(TrackerConfig::default());
            let mut owner: Vec<Option<u64>> = vec![None; k];
            for f in 0..30u32 {
                let dets: Vec<Detection> = starts
                    .iter()
                    .map(|&(x, y, v)| {
                        let x = x + v * f as f64;
                        det(f, bx(x, y, x + 40.0, y + 30.0))
                    })
                    .collect();
                let tracks = tracker.step(f, &dets).to_vec();
                for (obj, d) in dets.iter().enumerate() {
                    let id = tracks
                        .iter()
                        .filter(|tr| tr.confirmed && tr.history.last().map(|h| (h.0, h.1)) == Some((f, d.bbox)))
                        .map(|tr| tr.id)
                        .next();
                    if let Some(id) = id {
                        match owner[obj] {
                            None => owner[obj] = Some(id),
                            Some(prev) if prev != id => switches += 1,
                            _ => {}
                        }
                    }
                }
            }
            ensure(owner.iter().all(Option::is_some), format!("k={k} scene {scene}: object never confirmed"))?;
        }
    }
    ensure(switches == 0, format!("{switches} id switches"))?;
    Ok(format!(
        "min eigenvalue {worst:.3e}; motion model error {model_err:.1e}; cold-start filter one-step error {cv_err:.1e} at frame 100 (under 1e-6 from frame {first_under}); 2/3-hit boundary exact; 0 id switches over 100 scenes (k=1..5, 30 frames)"
    ))
}

fn track_with(id: u64, class: &str, contour: Vec<Point>) -> Track {
    let xs: Vec<f64> = contour.iter().map(|p| p[0]).collect();
    let ys: Vec<f64> = contour.iter().map(|p| p[1]).collect();
    let b = BoundingBox {
        x1: xs.iter().cloned().fold(f64::INFINITY, f64::min),
        y1: ys.iter().cloned().fold(f64::INFINITY, f64::min),
        x2: xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        y2: ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    Track {
        id,
        class_label: class.into(),
        state: KalmanFilter::default().init(&b),
        hits: 3,
        misses: 0,
        confirmed: true,
        history: vec![(0, b)],
        contour: Some(contour),
        embedding: None,
    }
}

fn seg_dist(p: (f64, f64), a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.0 - a[0]) * dx + (p.1 - a[1]) * dy) / len2).clamp(0.0, 1.0) };
    ((p.0 - a[0] - t * dx).powi(2) + (p.1 - a[1] - t * dy).powi(2)).sqrt()
}

fn renderer_contract() -> Check {
    let base = RgbImage::from_fn(96, 64, |x, y| Rgb([(x * 2) as u8, (y * 3) as u8, 40]));
    let (same, _) = render_enhanced(&base, &[], &RenderStyle::default()).map_err(|e| e.to_string())?;
    ensure(
        encode_png(&same).unwrap() == encode_png(&base).unwrap(),
        "empty track list changed the PNG bytes",
    )?;

    let gray = RgbImage::from_pixel(96, 64, Rgb([90, 90, 90]));
    let square = |x: f64, y: f64, l: f64| vec![[x, y], [x + l, y], [x + l, y + l], [x, y + l]];
    let plain = RenderStyle {
        id_label: false,
        ..RenderStyle::default()
    };
    for (class, want, other) in [("person", [0, 255, 0], [0, 0, 255]), ("truck", [0, 0, 255], [0, 255, 0])] {
        let (img, _) = render_enhanced(&gray, &[track_with(1, class, square(20.0, 20.0, 20.0))], &plain).unwrap();
        let n = img.pixels().filter(|p| p.0 == want).count();
        ensure(n > 0, format!("{class}: no pixel of {want:?}"))?;
        ensure(!img.pixels().any(|p| p.0 == other), format!("{class}: stray {other:?}"))?;
    }
    // Square outline of side L and thickness t covers exactly 4*L*t pixels.
    for t in 1..=4u32 {
        let style = RenderStyle {
            line_thickness: t,
            id_label: false,
            ..RenderStyle::default()
        };
        let (img, _) = render_enhanced(&gray, &[track_with(1, "person", square(30.0, 20.0, 20.0))], &style).unwrap();
        let n = img.pixels().filter(|p| p.0 == [0, 255, 0]).count();
        ensure(n == 4 * 20 * t as usize, format!("thickness {t}: {n} pixels, expected {}", 80 * t))?;
    }

    // Locality: nothing changes beyond stroke reach or outside label boxes.
    let mut rng = ChaCha8Rng::seed_from_u64(0x9E7);
    for case in 0..150 {
        let t = rng.gen_range(1..=5u32);
        let style = RenderStyle {
            line_thickness: t,
            id_label: rng.gen(),
            ..RenderStyle::default()
        };
        let tracks: Vec<Track> = (0..rng.gen_range(1..4u64))
            .map(|id| {
                let n = rng.gen_range(3..7);
                let poly = (0..n).map(|_| [rng.gen_range(0.0..95.0), rng.gen_range(0.0..63.0)]).collect();
                track_with(id + 1, if rng.gen() { "person" } else { "car" }, poly)
            })
            .collect();
        let (img, _) = render_enhanced(&gray, &tracks, &style).unwrap();
        let arm = ((t as f64 - 1.0) / 2.0).ceil();
        let reach = arm * std::f64::consts::SQRT_2 + 0.5 + std::f64::consts::FRAC_1_SQRT_2 + 1e-9;
        let labels: Vec<_> = if style.id_label {
            tracks
                .iter()
                .map(|tr| {
                    let b = tr.last_bbox();
                    label_extent(&tr.id.to_string(), b.x1, b.y1, 96, 64)
                })
                .collect()
        } else {
            vec![]
        };
        for (x, y, px) in img.enumerate_pixels() {
            if px == gray.get_pixel(x, y) {
                continue;
            }
            let (xi, yi) = (x as i64, y as i64);
            let in_label = labels.iter().any(|&(x0, y0, x1, y1)| (x0..=x1).contains(&xi) && (y0..=y1).contains(&yi));
            let near = tracks.iter().any(|tr| {
                let c = tr.contour.as_ref().unwrap();
                (0..c.len()).any(|i| seg_dist((x as f64, y as f64), c[i], c[(i + 1) % c.len()]) <= reach)
            });
            ensure(in_label || near, format!("case {case}: pixel ({x},{y}) changed out of reach"))?;
        }
    }
    Ok("empty list byte-identical; person (0,255,0) / other (0,0,255) exact; 4*L*t pixel count for t=1..4; 150 locality cases".into())
}

fn end_to_end_replay() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = common::replay_workspace(dir.path());
    let adapter = common::ScriptedProvider::new();
    let gw = common::scripted_gateway(&cfg, adapter.clone());
    let first = evaluate(&cfg, &gw, "first").map_err(|e| e.to_string())?;
    let base = adapter.base_calls.load(Ordering::SeqCst);
    let positives = adapter.base_positive.load(Ordering::SeqCst);
    let enhanced = adapter.enhanced_calls.load(Ordering::SeqCst);
    ensure(base == 150, format!("{base} base requests, expected 150"))?;
    ensure(enhanced == positives, format!("{enhanced} enhanced requests for {positives} base positives"))?;
    ensure(adapter.raw_in_enhanced.load(Ordering::SeqCst) == 0, "raw frame in an enhanced request")?;
    let want = ConfusionCounts { tp: 4, fp: 1, fn_: 1, tn: 4 };
    for row in &first.summary.rows {
        let k = &row.classification;
        ensure(row.confusion == want, format!("{} confusion {:?}", row.mode, row.confusion))?;
        ensure(
            [k.precision, k.recall, k.f1].iter().all(|v| (v - 0.8).abs() < 1e-12),
            format!("{} P/R/F1 {:?}", row.mode, k),
        )?;
    }
    ensure(first.summary.rows.iter().any(|r| r.mode == PromptMode::Enhanced), "no enhanced row")?;

    let replay = common::ScriptedProvider::new();
    let gw2 = common::scripted_gateway(&cfg, replay.clone());
    let second = evaluate(&cfg, &gw2, "second").map_err(|e| e.to_string())?;
    ensure(gw2.total_calls() == 0, format!("{} network calls on replay", gw2.total_calls()))?;
    for f in ["summary.json", "report.csv"] {
        let a = std::fs::read(first.run_dir.join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(second.run_dir.join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, format!("{f} differs on replay"))?;
    }
    Ok(format!(
        "150 base + {enhanced} enhanced requests ({positives} base positives); 4/1/1/4 -> P=R=F1=0.8 in both modes; replay 0 calls, bit-identical"
    ))
}

fn cosine_conformance() -> Check {
    let v = |x: Vec<f64>| EmbeddingVector::new(x).unwrap();
    let cos = |a: &EmbeddingVector, b: &EmbeddingVector| cosine(a, b).unwrap().value;
    let mut rng = ChaCha8Rng::seed_from_u64(0xC05);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let dim = rng.gen_range(1..64);
        let a = v((0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let b = v((0..dim).map(|_| rng.gen_range(-5.0..5.0)).collect());
        let (k, m) = (rng.gen_range(0.01..100.0), rng.gen_range(0.01..100.0));
        let ka = v(a.values().iter().map(|x| x * k).collect());
        let mb = v(b.values().iter().map(|x| x * m).collect());
        worst = worst.max((cos(&a, &b) - cos(&ka, &mb)).abs());
        worst = worst.max((cos(&a, &a) - 1.0).abs());
        worst = worst.max((cos(&a, &ka) - 1.0).abs());
        let neg = v(a.values().iter().map(|x| -x).collect());
        worst = worst.max((cos(&a, &neg) + 1.0).abs());
    }
    for dim in 2..32 {
        let mut e1 = vec![0.0; dim];
        let mut e2 = vec![0.0; dim];
        e1[0] = 3.0;
        e2[dim - 1] = -7.0;
        ensure(cos(&v(e1), &v(e2)) == 0.0, format!("orthogonal pair in {dim} dims not 0"))?;
    }
    ensure(worst <= 1e-12, format!("max deviation {worst:e}"))?;

    // The committed sentence-level fixtures reproduce the numpy cosines.
    let [s1, s2, s3] = reference_sentences();
    let lexicon = Lexicon::from_file(fixtures().join("lexicon.txt")).map_err(|e| e.to_string())?;
    let embedder = FixtureEmbeddings::load(fixtures().join("sentences.json")).map_err(|e| e.to_string())?;
    let scorer = TextScorer {
        lexicon: &lexicon,
        embedder: &embedder,
        rouge: RougeVariant::Unigram,
    };
    let a = scorer.score(&s1, &s2).map_err(|e| e.to_string())?;
    let b = scorer.score(&s1, &s3).map_err(|e| e.to_string())?;
    for (got, want) in [
        (a.w2v_cosine, 0.860_000_030_595_904),
        (b.w2v_cosine, 0.626_321_467_027_335),
        (a.st_cosine, 0.93),
        (b.st_cosine, 0.84),
    ] {
        ensure((got - want).abs() <= 1e-12, format!("fixture cosine {got} vs {want}"))?;
    }
    Ok(format!("scale invariance, identity, antipodes within {worst:.1e}; orthogonal exactly 0; fixture cosines within 1e-12"))
}

fn main() -> ExitCode {
    let checks: [Criterion; 7] = [
        ("table-ordering", Duration::from_secs(1), table_ordering),
        ("classification-oracle", Duration::from_secs(1), classification_oracle),
        ("hungarian-optimality", Duration::from_secs(10), hungarian_optimality),
        ("kalman-tracker-suite", Duration::from_secs(5), tracker_suite),
        ("renderer-pixel-contract", Duration::from_secs(2), renderer_contract),
        ("end-to-end-replay", Duration::from_secs(30), end_to_end_replay),
        ("cosine-conformance", Duration::from_secs(1), cosine_conformance),
    ];
    let mut failed = 0;
    for (name, budget, check) in checks {
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over the {:.0} s budget", budget.as_secs_f64())),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {name} [{:.3} s / {:.0} s] {detail}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
