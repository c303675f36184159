use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use relocbench::cache::DepthCache;
use relocbench::difficulty::FilterPreset;
use relocbench::fixture::{drop_predictions, noisy_predictions, perfect_predictions, write_fixture, FixtureOptions};
use relocbench::fusion::FusionConfig;
use relocbench::io::poses::{write_predictions, PredictionSet};
use relocbench::io::report::{
    check_same_frames, encode_curves_csv, encode_curves_svg, read_frames_csv, read_summary, Summary, CURVES_SVG_FILE,
    CURVE_ABS_FILE, CURVE_DCRE_FILE, FRAMES_FILE, SUMMARY_FILE,
};
use relocbench::io::{load_scene, read_predictions, Scene};
use relocbench::metrics::{Curve, CurveMetric, DcreConfig, EvaluationReport, FrameEvaluation, MetricsConfig};
use relocbench::pipeline::{
    evaluate, evaluate_fused, frame_keys, reaggregate, scene_changes, EvaluateOptions, MethodRun,
};
use relocbench::render::render;
use relocbench::{Error, Result};
use serde::Serialize;

use crate::table::summary_table;
use crate::{
    ChangeArgs, Cli, Command, CurvesArgs, DifficultyArgs, EvaluateArgs, FuseArgs, MetricArgs, RenderArgs, ReportArgs,
    SceneArgs, ScoringArgs, SynthArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Fuse(a) => cmd_fuse(cli, a),
        Command::Report(a) => cmd_report(cli, a),
        Command::Curves(a) => cmd_curves(cli, a),
        Command::Change(a) => cmd_change(cli, a),
        Command::Difficulty(a) => cmd_difficulty(cli, a),
        Command::Render(a) => cmd_render(a),
        Command::Synth(a) => cmd_synth(cli, a),
    }
}

fn metrics_config(a: &MetricArgs) -> Result<(MetricsConfig, FilterPreset)> {
    let mut m = MetricsConfig::default();
    if !a.abs_thresholds.is_empty() {
        m.abs_thresholds = a.abs_thresholds.clone();
    }
    if !a.dcre_thresholds.is_empty() {
        m.dcre_thresholds = a.dcre_thresholds.clone();
    }
    if let Some(e) = a.object_eps {
        m.object_eps = e;
    }
    if let Some(g) = &a.dcre_grid {
        m.dcre_grid = g.0.clone();
    }
    if let Some(g) = &a.translation_grid {
        m.translation_grid = g.0.clone();
    }
    if let Some(g) = &a.rotation_grid {
        m.rotation_grid = g.0.clone();
    }
    m.validate()?;
    Ok((m, FilterPreset::by_name(&a.preset)?))
}

fn load_scenes(a: &SceneArgs) -> Result<Vec<Scene>> {
    let scenes = a.manifests.iter().map(|p| load_scene(p)).collect::<Result<Vec<_>>>()?;
    let mut ids = BTreeSet::new();
    for s in &scenes {
        if !ids.insert(&s.id) {
            return Err(Error::InvalidArgument(format!("scene `{}` given twice", s.id)));
        }
    }
    Ok(scenes)
}

fn options(
    cli: &Cli,
    metrics: MetricsConfig,
    preset: FilterPreset,
    splits: &[relocbench::io::Split],
    s: &ScoringArgs,
) -> Result<EvaluateOptions> {
    let cache = if s.no_cache {
        None
    } else if let Some(dir) = &s.cache_dir {
        Some(DepthCache::new(dir)?)
    } else {
        DepthCache::from_env()?
    };
    Ok(EvaluateOptions {
        difficulty: s.difficulty || preset.needs_difficulty(),
        change: s.change || preset.needs_change(),
        metrics,
        dcre: DcreConfig {
            supersampling: s.supersampling,
            ..DcreConfig::default()
        },
        splits: splits.to_vec(),
        visual_mode: s.visual_mode.into(),
        preset,
        keep_going: cli.keep_going,
        cache,
    })
}

fn load_prediction_sets(scenes: &[Scene], a: &SceneArgs, paths: &[PathBuf]) -> Result<Vec<PredictionSet>> {
    let keys = frame_keys(scenes, &a.splits);
    let sets = paths
        .iter()
        .map(|p| read_predictions(p, Some(&keys)))
        .collect::<Result<Vec<_>>>()?;
    let mut names = BTreeSet::new();
    for s in &sets {
        if !names.insert(s.method.as_str()) {
            return Err(Error::InvalidArgument(format!(
                "two prediction files name the method `{}`; set `# method:` headers",
                s.method
            )));
        }
    }
    Ok(sets)
}

/// File-system friendly method name.
fn slug(method: &str) -> String {
    let s: String = method
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || "._+-".contains(c) {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        format!("method{s}")
    } else {
        s
    }
}

fn emit(cli: &Cli, summaries: &[Summary]) -> Result<()> {
    if cli.json {
        println!("{}", to_json(&summaries)?);
    } else {
        print!("{}", summary_table(summaries));
    }
    Ok(())
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Curve files with one series per method, in the given order.
fn write_curves(dir: &Path, reports: &[&EvaluationReport], svg: bool) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let pick = |metrics: &[CurveMetric]| -> Vec<(&str, &Curve)> {
        reports
            .iter()
            .flat_map(|r| {
                r.curves
                    .iter()
                    .filter(|c| metrics.contains(&c.metric))
                    .map(|c| (r.method.as_str(), c))
            })
            .collect()
    };
    write_file(
        &dir.join(CURVE_DCRE_FILE),
        encode_curves_csv(&pick(&[CurveMetric::Dcre])),
    )?;
    write_file(
        &dir.join(CURVE_ABS_FILE),
        encode_curves_csv(&pick(&[CurveMetric::Translation, CurveMetric::Rotation])),
    )?;
    if svg {
        let series: Vec<(&str, Vec<&Curve>)> = reports
            .iter()
            .map(|r| (r.method.as_str(), r.curves.iter().collect()))
            .collect();
        write_file(&dir.join(CURVES_SVG_FILE), encode_curves_svg(&series))?;
    }
    Ok(())
}

fn save_runs(out: &Path, runs: &[MethodRun], svg: bool) -> Result<Vec<Summary>> {
    let mut summaries = Vec::new();
    for r in runs {
        let dir = out.join(slug(&r.report.method));
        summaries.push(r.write(&dir, svg)?);
        log::info!("wrote {}", dir.display());
    }
    if runs.len() > 1 {
        let frames: Vec<(&str, &[FrameEvaluation])> = runs
            .iter()
            .map(|r| (r.report.method.as_str(), r.frames.as_slice()))
            .collect();
        check_same_frames(&frames)?;
        let reports: Vec<&EvaluationReport> = runs.iter().map(|r| &r.report).collect();
        write_curves(out, &reports, svg)?;
    }
    Ok(summaries)
}

fn cmd_evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let (metrics, preset) = metrics_config(&a.metrics)?;
    let opts = options(cli, metrics, preset, &a.scene.splits, &a.scoring)?;
    let scenes = load_scenes(&a.scene)?;
    let sets = load_prediction_sets(&scenes, &a.scene, &a.predictions)?;
    let runs = sets
        .iter()
        .map(|s| evaluate(&scenes, s, &opts).map_err(|e| e.context(format!("method {}", s.method))))
        .collect::<Result<Vec<_>>>()?;
    let summaries = save_runs(&a.out, &runs, !a.scoring.no_svg)?;
    emit(cli, &summaries)
}

fn cmd_fuse(cli: &Cli, a: &FuseArgs) -> Result<()> {
    let (metrics, preset) = metrics_config(&a.metrics)?;
    let opts = options(cli, metrics, preset, &a.scene.splits, &a.scoring)?;
    let fusion = FusionConfig {
        trans_thresh: a.trans_thresh,
        rot_thresh: a.rot_thresh,
    };
    fusion.validate()?;
    if a.windows.contains(&0) {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    let scenes = load_scenes(&a.scene)?;
    let sets = load_prediction_sets(&scenes, &a.scene, &a.predictions)?;
    let mut runs = Vec::new();
    for s in &sets {
        let ctx = |e: Error| e.context(format!("method {}", s.method));
        runs.push(evaluate(&scenes, s, &opts).map_err(ctx)?);
        for &w in &a.windows {
            runs.push(evaluate_fused(&scenes, s, w, &fusion, &opts).map_err(ctx)?);
        }
    }
    let summaries = save_runs(&a.out, &runs, !a.scoring.no_svg)?;
    emit(cli, &summaries)
}

/// `frames.csv` of a run and the method name recorded next to it.
fn resolve_run(path: &Path) -> Result<(PathBuf, String)> {
    let csv = if path.is_dir() {
        path.join(FRAMES_FILE)
    } else {
        path.to_path_buf()
    };
    if !csv.is_file() {
        return Err(Error::File {
            path: csv,
            message: "no per-frame results found".into(),
        });
    }
    let dir = csv.parent().unwrap_or(Path::new("."));
    let summary = dir.join(SUMMARY_FILE);
    let method = if summary.is_file() {
        read_summary(&summary)?.method
    } else {
        dir.canonicalize()
            .ok()
            .and_then(|d| d.file_name().map(|n| n.to_string_lossy().into_owned()))
            .unwrap_or_else(|| "method".into())
    };
    Ok((csv, method))
}

fn cmd_report(cli: &Cli, a: &ReportArgs) -> Result<()> {
    let (metrics, preset) = metrics_config(&a.metrics)?;
    let mut runs = Vec::new();
    for p in &a.runs {
        let (csv, method) = resolve_run(p)?;
        runs.push(
            reaggregate(&csv, &method, &preset, &metrics).map_err(|e| e.context(format!("run {}", p.display())))?,
        );
    }
    let summaries = match &a.out {
        Some(out) => save_runs(out, &runs, !a.no_svg)?,
        None => runs
            .iter()
            .map(|r| Summary::new(&r.report, &r.preset))
            .collect::<Result<Vec<_>>>()?,
    };
    emit(cli, &summaries)
}

fn cmd_curves(cli: &Cli, a: &CurvesArgs) -> Result<()> {
    let (metrics, preset) = metrics_config(&a.metrics)?;
    let mut all = Vec::new();
    for p in &a.runs {
        let (csv, method) = resolve_run(p)?;
        all.push((method, read_frames_csv(&csv)?));
    }
    let named: Vec<(&str, &[FrameEvaluation])> = all.iter().map(|(m, f)| (m.as_str(), f.as_slice())).collect();
    check_same_frames(&named)?;
    let mut reports = Vec::new();
    for (method, frames) in all {
        let passing = relocbench::difficulty::apply_filter(&frames, &preset)?;
        if passing.is_empty() {
            return Err(Error::Precondition(format!(
                "filter preset `{}` keeps no frames",
                preset.name
            )));
        }
        reports.push(EvaluationReport::from_frames(method, passing, &metrics)?);
    }
    let refs: Vec<&EvaluationReport> = reports.iter().collect();
    write_curves(&a.out, &refs, true)?;
    let summaries = reports
        .iter()
        .map(|r| Summary::new(r, &preset.name))
        .collect::<Result<Vec<_>>>()?;
    emit(cli, &summaries)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    csv::Writer::from_path(path).map_err(|e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn cmd_change(cli: &Cli, a: &ChangeArgs) -> Result<()> {
    let scenes = load_scenes(&a.scene)?;
    let (frames, stats) = scene_changes(&scenes, &a.scene.splits, a.visual_mode.into())?;
    let mut w = csv_writer(&a.out)?;
    let err = csv_err(&a.out);
    w.write_record([
        "sequence_id",
        "frame_id",
        "rho_v",
        "zeta_v",
        "zeta_s",
        "zeta_g",
        "valid_overlap",
        "flags",
    ])
    .map_err(&err)?;
    for f in &frames {
        let s = &f.scores;
        w.write_record([
            f.sequence_id.clone(),
            f.frame_id.clone(),
            s.rho_v.to_string(),
            s.zeta_v.to_string(),
            s.zeta_s.to_string(),
            s.zeta_g.to_string(),
            s.valid_overlap.to_string(),
            s.flags.to_tokens(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    if cli.json {
        println!("{}", to_json(&stats)?);
    } else {
        println!(
            "{:<16} {:<16} {:>7} {:>8} {:>8} {:>8} {:>10}",
            "scene", "sequence", "frames", "rho_v", "zeta_v", "zeta_s", "zeta_g[mm]"
        );
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        for s in &stats {
            println!(
                "{:<16} {:<16} {:>7} {:>8} {:>8} {:>8} {:>10}",
                s.scene_id,
                s.sequence_id,
                s.stats.frames,
                fmt(s.stats.rho_v),
                fmt(s.stats.zeta_v),
                fmt(s.stats.zeta_s),
                s.stats.zeta_g.map_or("-".to_string(), |v| format!("{v:.2}"))
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct PresetCount {
    preset: String,
    frames: usize,
}

fn cmd_difficulty(cli: &Cli, a: &DifficultyArgs) -> Result<()> {
    let only = a.preset.as_deref().map(FilterPreset::by_name).transpose()?;
    if let Some(p) = &only {
        if p.needs_change() {
            return Err(Error::InvalidArgument(format!(
                "preset `{}` bounds change scores; use `evaluate --preset`",
                p.name
            )));
        }
    }
    let scenes = load_scenes(&a.scene)?;
    let opts = EvaluateOptions {
        difficulty: true,
        dcre: DcreConfig {
            supersampling: a.supersampling,
            ..DcreConfig::default()
        },
        splits: a.scene.splits.clone(),
        keep_going: cli.keep_going,
        ..EvaluateOptions::default()
    };
    let none = PredictionSet {
        method: "difficulty".into(),
        ..PredictionSet::default()
    };
    let run = evaluate(&scenes, &none, &opts)?;
    let presets: Vec<FilterPreset> = FilterPreset::all().into_iter().filter(|p| !p.needs_change()).collect();
    let mut counts: Vec<usize> = vec![0; presets.len()];
    let mut w = csv_writer(&a.out)?;
    let err = csv_err(&a.out);
    w.write_record([
        "sequence_id",
        "frame_id",
        "vol",
        "context_volume",
        "context_degenerate",
        "pose_novelty",
        "nearest_train",
        "presets",
    ])
    .map_err(&err)?;
    for f in &run.frames {
        let Some(d) = &f.difficulty else {
            continue;
        };
        if let Some(p) = &only {
            if !p.passes(f)? {
                continue;
            }
        }
        let mut passing = Vec::new();
        for (i, p) in presets.iter().enumerate() {
            if p.passes(f)? {
                counts[i] += 1;
                passing.push(p.name.as_str());
            }
        }
        w.write_record([
            f.sequence_id.clone(),
            f.frame_id.clone(),
            d.vol.to_string(),
            d.context_volume.to_string(),
            d.context_degenerate.to_string(),
            d.pose_novelty.to_string(),
            d.nearest_train.clone().unwrap_or_default(),
            passing.join(" "),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(&a.out, e))?;
    let counts: Vec<PresetCount> = presets
        .iter()
        .zip(counts)
        .map(|(p, n)| PresetCount {
            preset: p.name.clone(),
            frames: n,
        })
        .collect();
    if cli.json {
        println!("{}", to_json(&counts)?);
    } else {
        println!("{:<16} {:>7}", "preset", "frames");
        for c in &counts {
            println!("{:<16} {:>7}", c.preset, c.frames);
        }
    }
    Ok(())
}

fn png_err(path: &Path) -> impl Fn(image::ImageError) -> Error + '_ {
    move |e| Error::File {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn cmd_render(a: &RenderArgs) -> Result<()> {
    let scene = load_scene(&a.manifest)?;
    let seq =
        scene.sequences.iter().find(|s| s.id == a.sequence).ok_or_else(|| {
            Error::InvalidArgument(format!("no sequence `{}` in {}", a.sequence, a.manifest.display()))
        })?;
    let pose = seq
        .frames
        .iter()
        .find(|(f, _)| *f == a.frame)
        .map(|(_, p)| *p)
        .ok_or_else(|| Error::InvalidArgument(format!("no frame `{}` in sequence `{}`", a.frame, seq.id)))?;
    let model = if a.reference { &scene.reference } else { &seq.model };
    let views = render(model, &pose, &seq.intrinsics);
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let (w, h) = (views.depth.width(), views.depth.height());

    let color: Vec<u8> = views.color.as_slice().iter().flatten().copied().collect();
    let p = a.out.join("color.png");
    image::RgbImage::from_raw(w, h, color)
        .expect("buffer matches image size")
        .save(&p)
        .map_err(png_err(&p))?;

    // Millimeters, 0 where no geometry was hit; saturates at 65.535 m.
    let depth: Vec<u16> = views
        .depth
        .as_slice()
        .iter()
        .map(|&d| {
            if d.is_finite() && d > 0.0 {
                (d * 1000.0).round().min(65535.0) as u16
            } else {
                0
            }
        })
        .collect();
    let p = a.out.join("depth.png");
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, depth)
        .expect("buffer matches image size")
        .save(&p)
        .map_err(png_err(&p))?;

    let p = a.out.join("labels.png");
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w, h, views.labels.as_slice().to_vec())
        .expect("buffer matches image size")
        .save(&p)
        .map_err(png_err(&p))?;
    println!("{}", a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct SynthOutput {
    manifest: PathBuf,
    predictions: Vec<PathBuf>,
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let opts = FixtureOptions {
        seed: a.seed,
        train_frames: a.train_frames,
        test_sequences: a.test_sequences,
        frames_per_sequence: a.frames,
        width: a.width,
        height: a.height,
        ..FixtureOptions::default()
    };
    let fx = write_fixture(&a.out, &opts)?;
    let perfect = perfect_predictions(&fx.test_frames);
    let noisy = noisy_predictions(&fx.test_frames, 0.02, 2.0, 0.2, a.seed);
    let corrupted = drop_predictions(&noisy, 0.3, a.seed + 1);
    let mut predictions = Vec::new();
    for (name, preds) in [("perfect", &perfect), ("noisy", &noisy), ("corrupted", &corrupted)] {
        let p = a.out.join(format!("{name}.txt"));
        write_predictions(&p, name, preds)?;
        predictions.push(p);
    }
    let out = SynthOutput {
        manifest: fx.manifest,
        predictions,
    };
    if cli.json {
        println!("{}", to_json(&out)?);
    } else {
        println!("{}", out.manifest.display());
        for p in &out.predictions {
            println!("{}", p.display());
        }
    }
    Ok(())
}
