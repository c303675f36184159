//! End-to-end evaluation: scenes + predictions → per-frame scores →
//! filtered aggregates → report files.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::cache::DepthCache;
use crate::change::{change_scores, frame_change, scene_change_stats, ChangeScores, SceneChangeStats, VisualMode};
use crate::difficulty::{
    apply_filter, fov_context, pose_novelty_from_depth, variance_of_laplacian, DifficultyScores, FilterPreset,
};
use crate::error::{Error, Result};
use crate::fusion::{build_windows, fused_records, FusionConfig};
use crate::geometry::Pose;
use crate::image::ColorImage;
use crate::io::manifest::{Scene, Sequence, Split};
use crate::io::poses::{qualified, FrameKeys, PredictionSet};
use crate::io::report::{read_frames_csv, write_report, Summary};
use crate::metrics::{
    score_frame, DcreConfig, EvaluationReport, FrameEvaluation, FrameRecord, GtDepth, MetricsConfig, SceneRef,
};
use crate::render::render;

#[derive(Debug, Clone)]
pub struct EvaluateOptions {
    pub metrics: MetricsConfig,
    pub dcre: DcreConfig,
    /// Sequences evaluated; training sequences only feed pose novelty.
    pub splits: Vec<Split>,
    pub difficulty: bool,
    pub change: bool,
    pub visual_mode: VisualMode,
    pub preset: FilterPreset,
    /// Record per-frame scoring failures (difficulty, change) as missing
    /// scores instead of aborting.
    pub keep_going: bool,
    pub cache: Option<DepthCache>,
}

impl Default for EvaluateOptions {
    fn default() -> Self {
        EvaluateOptions {
            metrics: MetricsConfig::default(),
            dcre: DcreConfig::default(),
            splits: vec![Split::Val, Split::Test],
            difficulty: false,
            change: false,
            visual_mode: VisualMode::default(),
            preset: FilterPreset::by_name("no-filter").expect("shipped preset"),
            keep_going: false,
            cache: None,
        }
    }
}

impl EvaluateOptions {
    pub fn validate(&self) -> Result<()> {
        self.metrics.validate()?;
        if self.dcre.supersampling == 0 {
            return Err(Error::InvalidArgument("supersampling factor must be at least 1".into()));
        }
        if !(self.dcre.behind_camera_penalty_diagonals >= 0.0) {
            return Err(Error::InvalidArgument(
                "behind-camera penalty must be non-negative".into(),
            ));
        }
        if self.preset.needs_difficulty() && !self.difficulty {
            return Err(Error::InvalidArgument(format!(
                "preset `{}` needs difficulty scores",
                self.preset.name
            )));
        }
        if self.preset.needs_change() && !self.change {
            return Err(Error::InvalidArgument(format!(
                "preset `{}` needs change scores",
                self.preset.name
            )));
        }
        Ok(())
    }
}

/// Result of evaluating one method.
#[derive(Debug, Clone)]
pub struct MethodRun {
    /// Every evaluated frame, unfiltered, in scene/sequence/frame order.
    pub frames: Vec<FrameEvaluation>,
    /// Aggregates over the frames passing the preset.
    pub report: EvaluationReport,
    pub preset: String,
}

impl MethodRun {
    pub fn write(&self, dir: &Path, svg: bool) -> Result<Summary> {
        write_report(dir, &self.report, &self.frames, &self.preset, svg)
    }
}

/// Frame keys of all evaluated sequences, for matching prediction rows.
pub fn frame_keys(scenes: &[Scene], splits: &[Split]) -> FrameKeys {
    FrameKeys::new(
        scenes
            .iter()
            .flat_map(|s| s.sequences_in(splits))
            .flat_map(|seq| seq.frames.iter().map(move |(f, _)| (seq.id.as_str(), f.as_str()))),
    )
}

struct Job<'a> {
    scene: &'a Scene,
    sequence: &'a Sequence,
    train: &'a [Pose],
    train_keys: &'a [String],
    record: FrameRecord,
}

pub fn evaluate(scenes: &[Scene], predictions: &PredictionSet, options: &EvaluateOptions) -> Result<MethodRun> {
    run_records(&predictions.method, scenes, options, |seq| {
        Ok(seq.records(|s, f| predictions.get(&qualified(s, f))))
    })
}

/// Evaluates sequence-fused predictions: every frame's prediction is
/// replaced by the consensus of the last `window` frames.
pub fn evaluate_fused(
    scenes: &[Scene],
    predictions: &PredictionSet,
    window: usize,
    fusion: &FusionConfig,
    options: &EvaluateOptions,
) -> Result<MethodRun> {
    fusion.validate()?;
    let method = format!("{}+fusion{window}", predictions.method);
    run_records(&method, scenes, options, |seq| {
        let records = seq.records(|s, f| predictions.get(&qualified(s, f)));
        if records.is_empty() {
            return Ok(records);
        }
        fused_records(&build_windows(&records, window)?, fusion)
    })
}

fn run_records(
    method: &str,
    scenes: &[Scene],
    options: &EvaluateOptions,
    records: impl Fn(&Sequence) -> Result<Vec<FrameRecord>>,
) -> Result<MethodRun> {
    options.validate()?;
    let trains: Vec<(Vec<String>, Vec<Pose>)> = scenes.iter().map(|s| s.training_poses().into_iter().unzip()).collect();
    let mut jobs = Vec::new();
    for (scene, (train_keys, train)) in scenes.iter().zip(&trains) {
        for seq in scene.sequences_in(&options.splits) {
            let recs = records(seq).map_err(|e| e.context(format!("scene {}, sequence {}", scene.id, seq.id)))?;
            for record in recs {
                jobs.push(Job {
                    scene,
                    sequence: seq,
                    train,
                    train_keys,
                    record,
                });
            }
        }
    }
    if jobs.is_empty() {
        return Err(Error::NoFrames);
    }
    let results: Vec<Result<FrameEvaluation>> = jobs.par_iter().map(|job| evaluate_job(job, options)).collect();
    let frames = results.into_iter().collect::<Result<Vec<_>>>()?;
    filtered_run(method, frames, &options.preset, &options.metrics)
}

fn filtered_run(
    method: &str,
    frames: Vec<FrameEvaluation>,
    preset: &FilterPreset,
    metrics: &MetricsConfig,
) -> Result<MethodRun> {
    let passing = apply_filter(&frames, preset)?;
    if passing.is_empty() {
        return Err(Error::Precondition(format!(
            "filter preset `{}` keeps none of the {} frames",
            preset.name,
            frames.len()
        )));
    }
    let report = EvaluationReport::from_frames(method, passing, metrics)?;
    Ok(MethodRun {
        frames,
        report,
        preset: preset.name.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameChange {
    pub sequence_id: String,
    pub frame_id: String,
    pub scores: ChangeScores,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequenceChange {
    pub scene_id: String,
    pub sequence_id: String,
    pub stats: SceneChangeStats,
}

/// Change scores of every frame of the selected sequences against the
/// scene's reference scan, and per-sequence averages.
pub fn scene_changes(
    scenes: &[Scene],
    splits: &[Split],
    mode: VisualMode,
) -> Result<(Vec<FrameChange>, Vec<SequenceChange>)> {
    let mut frames = Vec::new();
    let mut stats = Vec::new();
    for scene in scenes {
        for seq in scene.sequences_in(splits) {
            let scores: Vec<ChangeScores> = seq
                .frames
                .par_iter()
                .map(|(f, pose)| {
                    frame_change(&seq.model, &scene.reference, pose, &seq.intrinsics, mode)
                        .map_err(|e| e.context(format!("scene {}, sequence {}, frame {f}", scene.id, seq.id)))
                })
                .collect::<Result<_>>()?;
            if scores.is_empty() {
                continue;
            }
            stats.push(SequenceChange {
                scene_id: scene.id.clone(),
                sequence_id: seq.id.clone(),
                stats: scene_change_stats(&scores)?,
            });
            frames.extend(seq.frames.iter().zip(scores).map(|((f, _), scores)| FrameChange {
                sequence_id: seq.id.clone(),
                frame_id: f.clone(),
                scores,
            }));
        }
    }
    Ok((frames, stats))
}

fn evaluate_job(job: &Job, options: &EvaluateOptions) -> Result<FrameEvaluation> {
    let frame = &job.record;
    let ctx = |e: Error| {
        e.context(format!(
            "scene {}, sequence {}, frame {}",
            job.scene.id, frame.sequence_id, frame.frame_id
        ))
    };
    let seq = job.sequence;
    let scene_ref = SceneRef {
        model: &seq.model,
        transforms: &seq.object_transforms,
        cache: options.cache.as_ref().map(|c| (c, seq.model_hash.as_str())),
    };
    let k = &frame.intrinsics;
    let views = (options.difficulty || options.change).then(|| render(&seq.model, &frame.gt_pose, k));
    let depth = match &views {
        Some(v) if options.dcre.supersampling == 1 => GtDepth::from_depth(v.depth.clone(), k),
        _ => scene_ref.gt_depth(frame, options.dcre.supersampling),
    };
    let mut eval = score_frame(frame, &depth, scene_ref.transforms, &options.dcre, &options.metrics);

    if let Some(views) = &views {
        if options.difficulty {
            let scores = (|| -> Result<DifficultyScores> {
                let color = match query_image(seq, &frame.frame_id)? {
                    Some(img) => img,
                    None => views.color.clone(),
                };
                let vol = variance_of_laplacian(&color)?;
                let context = fov_context(&views.depth, k, &frame.gt_pose)?;
                let reference = SceneRef {
                    model: &job.scene.reference,
                    transforms: &[],
                    cache: options.cache.as_ref().map(|c| (c, job.scene.reference_hash.as_str())),
                };
                let ref_depth = reference.gt_depth(frame, options.dcre.supersampling);
                let novelty = pose_novelty_from_depth(&ref_depth, &frame.gt_pose, job.train, &options.dcre)?;
                Ok(DifficultyScores {
                    vol,
                    context_volume: context.volume,
                    context_degenerate: context.degenerate,
                    pose_novelty: novelty.eta,
                    nearest_train: Some(job.train_keys[novelty.nearest_index].clone()),
                })
            })();
            match scores {
                Ok(s) => eval.difficulty = Some(s),
                Err(e) if options.keep_going => log::warn!("{}", ctx(e)),
                Err(e) => return Err(ctx(e)),
            }
        }
        if options.change {
            let reference = render(&job.scene.reference, &frame.gt_pose, k);
            match change_scores(views, &reference, options.visual_mode) {
                Ok(c) => eval.change = Some(c),
                Err(e) if options.keep_going => log::warn!("{}", ctx(e)),
                Err(e) => return Err(ctx(e)),
            }
        }
    }
    Ok(eval)
}

/// The captured color image of a frame, when the sequence ships images.
fn query_image(seq: &Sequence, frame_id: &str) -> Result<Option<ColorImage>> {
    let Some(dir) = &seq.image_dir else {
        return Ok(None);
    };
    let path = dir.join(format!("{frame_id}.png"));
    if !path.exists() {
        return Ok(None);
    }
    let img = ::image::open(&path)
        .map_err(|e| Error::File {
            path: path.clone(),
            message: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    ColorImage::from_vec(w, h, data).map(Some)
}

/// Re-aggregates a saved `frames.csv` under `preset` without rendering.
pub fn reaggregate(
    frames_csv: &Path,
    method: &str,
    preset: &FilterPreset,
    metrics: &MetricsConfig,
) -> Result<MethodRun> {
    let frames = read_frames_csv(frames_csv)?;
    filtered_run(method, frames, preset, metrics)
}
