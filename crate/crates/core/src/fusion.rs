//! Sequence-based relocalization: per-frame predictions of a window of
//! consecutive frames are moved to the window's last frame through the
//! known relative poses, clustered, and the largest cluster is blended.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{angular_error, dlb_blend, translation_error, Pose};
use crate::metrics::{evaluate_frames, DcreConfig, EvaluationReport, FrameRecord, MetricsConfig, SceneRef};

/// Window lengths evaluated by default.
pub const DEFAULT_WINDOWS: [usize; 3] = [10, 30, 100];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Meters.
    pub trans_thresh: f64,
    /// Degrees.
    pub rot_thresh: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            trans_thresh: 0.10,
            rot_thresh: 10.0,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.trans_thresh > 0.0 && self.rot_thresh > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "clustering thresholds must be positive, got ({}, {})",
                self.trans_thresh, self.rot_thresh
            )))
        }
    }

    /// Whether two candidate poses are mutually similar.
    pub fn similar(&self, a: &Pose, b: &Pose) -> bool {
        translation_error(a, b) <= self.trans_thresh && angular_error(a.rotation(), b.rotation()) <= self.rot_thresh
    }
}

/// Consecutive frames ending at `frames.last()`, with every frame's pose
/// relative to the last one (`P_last⁻¹ · P_i`).
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceWindow {
    pub frames: Vec<FrameRecord>,
    pub relative_poses: Vec<Pose>,
    /// Requested length; windows at the sequence start are shorter.
    pub length: usize,
}

impl SequenceWindow {
    pub fn is_short(&self) -> bool {
        self.frames.len() < self.length
    }

    pub fn last(&self) -> &FrameRecord {
        self.frames.last().expect("windows are never empty")
    }
}

/// One window ending at each frame of `sequence`, using ground-truth
/// relative poses.
pub fn build_windows(sequence: &[FrameRecord], s_delta: usize) -> Result<Vec<SequenceWindow>> {
    if s_delta == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    if sequence.is_empty() {
        return Err(Error::NoFrames);
    }
    Ok((0..sequence.len())
        .map(|end| {
            let start = (end + 1).saturating_sub(s_delta);
            let frames = sequence[start..=end].to_vec();
            let last_inv = frames.last().unwrap().gt_pose.inverse();
            let n = frames.len();
            let relative_poses = frames
                .iter()
                .enumerate()
                .map(|(i, f)| {
                    if i + 1 == n {
                        Pose::identity()
                    } else {
                        last_inv.compose(&f.gt_pose)
                    }
                })
                .collect();
            SequenceWindow {
                frames,
                relative_poses,
                length: s_delta,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseCluster {
    /// Indices into the window's frames, ascending.
    pub members: Vec<usize>,
    /// Member the cluster was grown from; every member is within the
    /// thresholds of it.
    pub seed: usize,
    pub centroid: Pose,
}

/// Hypotheses for the last frame's pose, one per predicted frame, as
/// `(frame index, prediction · rel⁻¹)`.
pub fn window_candidates(window: &SequenceWindow) -> Vec<(usize, Pose)> {
    window
        .frames
        .iter()
        .zip(&window.relative_poses)
        .enumerate()
        .filter_map(|(i, (f, rel))| f.prediction.map(|p| (i, p.compose(&rel.inverse()))))
        .collect()
}

/// Sum of pairwise translation distances within a group of candidates.
pub fn translation_spread(poses: &[&Pose]) -> f64 {
    let mut s = 0.0;
    for (i, a) in poses.iter().enumerate() {
        for b in &poses[i + 1..] {
            s += translation_error(a, b);
        }
    }
    s
}

/// Fuses a window into one pose for its last frame, or `None` when no
/// frame in it has a prediction.
pub fn fuse_window(window: &SequenceWindow, config: &FusionConfig) -> Result<Option<PoseCluster>> {
    config.validate()?;
    let candidates = window_candidates(window);
    let n = candidates.len();
    if n == 0 {
        return Ok(None);
    }
    let adjacent: Vec<Vec<bool>> = candidates
        .iter()
        .map(|(_, a)| candidates.iter().map(|(_, b)| config.similar(a, b)).collect())
        .collect();

    // Greedy star clustering: repeatedly seed at the unassigned candidate
    // with the most unassigned neighbours (earliest on ties).
    let mut assigned = vec![false; n];
    let mut clusters: Vec<(usize, Vec<usize>)> = Vec::new();
    while assigned.iter().any(|a| !a) {
        let seed = (0..n)
            .filter(|&i| !assigned[i])
            .max_by_key(|&i| {
                let degree = (0..n).filter(|&j| !assigned[j] && adjacent[i][j]).count();
                (degree, std::cmp::Reverse(i))
            })
            .unwrap();
        let members: Vec<usize> = (0..n).filter(|&j| !assigned[j] && adjacent[seed][j]).collect();
        for &m in &members {
            assigned[m] = true;
        }
        clusters.push((seed, members));
    }

    let spread = |members: &[usize]| {
        let poses: Vec<&Pose> = members.iter().map(|&m| &candidates[m].1).collect();
        translation_spread(&poses)
    };
    let (seed, members) = clusters
        .into_iter()
        .min_by(|(_, a), (_, b)| {
            b.len()
                .cmp(&a.len())
                .then(spread(a).total_cmp(&spread(b)))
                .then(a[0].cmp(&b[0]))
        })
        .unwrap();

    let poses: Vec<Pose> = members.iter().map(|&m| candidates[m].1).collect();
    Ok(Some(PoseCluster {
        members: members.iter().map(|&m| candidates[m].0).collect(),
        seed: candidates[seed].0,
        centroid: blend_members(&poses)?,
    }))
}

/// Equal-weight DLB blend; a single pose, or identical poses, are returned
/// unchanged.
pub fn blend_members(poses: &[Pose]) -> Result<Pose> {
    match poses {
        [] => Err(Error::EmptyBlend),
        [first, rest @ ..] if rest.iter().all(|p| p == first) => Ok(*first),
        _ => dlb_blend(poses, &vec![1.0; poses.len()]),
    }
}

/// The last frame of every window, with the fused pose as its prediction.
pub fn fused_records(windows: &[SequenceWindow], config: &FusionConfig) -> Result<Vec<FrameRecord>> {
    config.validate()?;
    windows
        .par_iter()
        .map(|w| {
            let fused = fuse_window(w, config)?;
            let last = w.last();
            Ok(FrameRecord {
                prediction: fused.map(|c| c.centroid),
                ..last.clone()
            })
        })
        .collect()
}

/// Scores each window's fused pose as the prediction for its last frame.
pub fn evaluate_fused<'a, F>(
    method: &str,
    windows: &[SequenceWindow],
    fusion: &FusionConfig,
    scene_for: F,
    dcre: &DcreConfig,
    metrics: &MetricsConfig,
) -> Result<EvaluationReport>
where
    F: Fn(&FrameRecord) -> SceneRef<'a> + Sync,
{
    let records = fused_records(windows, fusion)?;
    let frames = evaluate_frames(&records, scene_for, dcre, metrics);
    EvaluationReport::from_frames(method, frames, metrics)
}
