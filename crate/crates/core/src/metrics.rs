//! Pose-error metrics: absolute recalls and outlier ratios, median errors,
//! the dense correspondence re-projection error (DCRE), cumulative curves
//! and the moved-object ambiguity check.
//!
//! Every ratio uses the total number of frames as denominator. Frames
//! without a usable prediction count as neither inlier nor outlier and are
//! reported through `na_fraction`.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::DepthCache;
use crate::change::ChangeScores;
use crate::difficulty::DifficultyScores;
use crate::error::{Error, Result};
use crate::geometry::{angular_error, translation_error, Intrinsics, Pose};
use crate::image::DepthMap;
use crate::mesh::SceneModel;
use crate::render::render_depth;

/// One query frame with its ground truth and, optionally, a prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub sequence_id: String,
    pub frame_id: String,
    pub gt_pose: Pose,
    pub intrinsics: Intrinsics,
    pub prediction: Option<Pose>,
}

impl FrameRecord {
    /// Builds a record; non-finite predictions are stored as absent.
    pub fn new(
        sequence_id: impl Into<String>,
        frame_id: impl Into<String>,
        gt_pose: Pose,
        intrinsics: Intrinsics,
        prediction: Option<Pose>,
    ) -> Self {
        FrameRecord {
            sequence_id: sequence_id.into(),
            frame_id: frame_id.into(),
            gt_pose,
            intrinsics,
            prediction: prediction.filter(Pose::is_finite),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcreStatus {
    Ok,
    NoPrediction,
    NoValidPixels,
}

impl DcreStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            DcreStatus::Ok => "ok",
            DcreStatus::NoPrediction => "no-prediction",
            DcreStatus::NoValidPixels => "no-valid-pixels",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(DcreStatus::Ok),
            "no-prediction" => Ok(DcreStatus::NoPrediction),
            "no-valid-pixels" => Ok(DcreStatus::NoValidPixels),
            other => Err(Error::InvalidArgument(format!("unknown DCRE status `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcreResult {
    /// Mean over valid pixels of `min(δ / diagonal, 1)`.
    pub mean_normalized: f64,
    /// Mean flow magnitude in pixels of the native resolution, without the
    /// clamp. Points behind the predicted camera contribute the configured
    /// penalty.
    pub mean_pixels_unclamped: f64,
    pub valid_pixel_count: usize,
    pub status: DcreStatus,
}

impl DcreResult {
    pub fn no_prediction() -> Self {
        DcreResult {
            mean_normalized: 0.0,
            mean_pixels_unclamped: 0.0,
            valid_pixel_count: 0,
            status: DcreStatus::NoPrediction,
        }
    }

    /// Normalized error used for thresholding, `None` for absent predictions.
    /// A prediction whose ground-truth view has no geometry scores 1.
    pub fn score(&self) -> Option<f64> {
        match self.status {
            DcreStatus::Ok => Some(self.mean_normalized),
            DcreStatus::NoValidPixels => Some(1.0),
            DcreStatus::NoPrediction => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcreConfig {
    /// Depth is rendered at `supersampling ×` the native resolution.
    pub supersampling: u32,
    /// Flow charged to points behind the predicted camera, in multiples of
    /// the image diagonal, for the unclamped pixel mean. The normalized
    /// error always charges the clamp value 1.
    pub behind_camera_penalty_diagonals: f64,
}

impl Default for DcreConfig {
    fn default() -> Self {
        DcreConfig {
            supersampling: 1,
            behind_camera_penalty_diagonals: 2.0,
        }
    }
}

/// Depth map rendered at the ground-truth pose, with the intrinsics it was
/// rendered with and the native ones.
#[derive(Debug, Clone)]
pub struct GtDepth {
    pub depth: DepthMap,
    pub render_intrinsics: Intrinsics,
    pub native: Intrinsics,
    pub supersampling: u32,
}

impl GtDepth {
    pub fn render(model: &SceneModel, gt: &Pose, k: &Intrinsics, supersampling: u32) -> Self {
        let s = supersampling.max(1);
        let ks = k.supersampled(s);
        GtDepth {
            depth: render_depth(model, gt, &ks),
            render_intrinsics: ks,
            native: *k,
            supersampling: s,
        }
    }

    pub fn from_depth(depth: DepthMap, k: &Intrinsics) -> Self {
        GtDepth {
            depth,
            render_intrinsics: *k,
            native: *k,
            supersampling: 1,
        }
    }
}

/// DCRE of `prediction` against `gt`, given the depth rendered at `gt`.
///
/// For each valid pixel `u` the back-projected point is moved by
/// `prediction⁻¹ · gt` and re-projected; `δ(u)` is the distance to `u`.
pub fn dcre_from_depth(gt_depth: &GtDepth, gt: &Pose, prediction: &Pose, config: &DcreConfig) -> DcreResult {
    let k = &gt_depth.render_intrinsics;
    let depth = &gt_depth.depth;
    let rel = prediction.inverse().compose(gt);
    let r = rel.rotation();
    let t = rel.translation();
    let diag = k.diagonal();
    let scale = gt_depth.supersampling as f64;
    let penalty_px = config.behind_camera_penalty_diagonals * gt_depth.native.diagonal();
    let (w, h) = (depth.width() as usize, depth.height() as usize);
    let col0 = r.column(0) / k.fx;
    let col1 = r.column(1) / k.fy;
    let base = r.column(2) - col0 * k.cx - col1 * k.cy;

    // Per-row partial sums, reduced in row order for reproducibility.
    let rows: Vec<(f64, f64, usize)> = (0..h)
        .into_par_iter()
        .map(|y| {
            let row = &depth.as_slice()[y * w..(y + 1) * w];
            let row_dir = base + col1 * y as f64;
            let (mut norm_sum, mut px_sum, mut n) = (0.0, 0.0, 0usize);
            for (x, &d) in row.iter().enumerate() {
                if !(d > 0.0) {
                    continue;
                }
                n += 1;
                let dir: Vector3<f64> = row_dir + col0 * x as f64;
                let p = dir * d + t;
                if p.z > 0.0 {
                    let du = k.fx * p.x / p.z + k.cx - x as f64;
                    let dv = k.fy * p.y / p.z + k.cy - y as f64;
                    let delta = (du * du + dv * dv).sqrt();
                    norm_sum += (delta / diag).min(1.0);
                    px_sum += delta / scale;
                } else {
                    norm_sum += 1.0;
                    px_sum += penalty_px;
                }
            }
            (norm_sum, px_sum, n)
        })
        .collect();
    let (mut norm_sum, mut px_sum, mut n) = (0.0, 0.0, 0usize);
    for (a, b, c) in rows {
        norm_sum += a;
        px_sum += b;
        n += c;
    }
    if n == 0 {
        return DcreResult {
            mean_normalized: 0.0,
            mean_pixels_unclamped: 0.0,
            valid_pixel_count: 0,
            status: DcreStatus::NoValidPixels,
        };
    }
    DcreResult {
        mean_normalized: norm_sum / n as f64,
        mean_pixels_unclamped: px_sum / n as f64,
        valid_pixel_count: n,
        status: DcreStatus::Ok,
    }
}

/// DCRE of one frame against `model`, the scan of the frame's own sequence.
pub fn dcre_frame(model: &SceneModel, frame: &FrameRecord, config: &DcreConfig) -> DcreResult {
    let Some(prediction) = frame.prediction else {
        return DcreResult::no_prediction();
    };
    let gt_depth = GtDepth::render(model, &frame.gt_pose, &frame.intrinsics, config.supersampling);
    dcre_from_depth(&gt_depth, &frame.gt_pose, &prediction, config)
}

/// Outcome of the moved-object ambiguity check for a failed frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectCheck {
    /// No object transforms, or the frame was not a failure.
    NotEvaluated,
    /// The prediction is consistent with the given instance's placement in
    /// the reference scan.
    Flagged(u16),
    NotFlagged,
}

impl ObjectCheck {
    pub fn to_token(&self) -> String {
        match self {
            ObjectCheck::NotEvaluated => String::new(),
            ObjectCheck::Flagged(id) => format!("moved:{id}"),
            ObjectCheck::NotFlagged => "none".into(),
        }
    }

    pub fn from_token(s: &str) -> Result<Self> {
        match s.trim() {
            "" => Ok(ObjectCheck::NotEvaluated),
            "none" => Ok(ObjectCheck::NotFlagged),
            other => other
                .strip_prefix("moved:")
                .and_then(|id| id.parse().ok())
                .map(ObjectCheck::Flagged)
                .ok_or_else(|| Error::InvalidArgument(format!("bad object check `{other}`"))),
        }
    }
}

/// Instance `id` moved rigidly by `transform` (world frame) between the
/// reference scan and the rescan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectTransform {
    pub instance_id: u16,
    pub transform: Pose,
}

impl ObjectTransform {
    pub fn is_moved(&self) -> bool {
        let m = self.transform.to_matrix() - Pose::identity().to_matrix();
        m.abs().max() > 1e-9
    }
}

/// Checks whether a failed prediction is explained by localizing against a
/// moved object: for each moved instance `o`, the prediction corrected by
/// `T_o` is scored again and the first instance bringing the DCRE below
/// `eps_f` is reported.
///
/// Requires the frame to be a failure (`DCRE ≥ eps_f`).
pub fn object_reloc_check(
    rescan: &SceneModel,
    transforms: &[ObjectTransform],
    frame: &FrameRecord,
    eps_f: f64,
    config: &DcreConfig,
) -> Result<ObjectCheck> {
    let Some(prediction) = frame.prediction else {
        return Err(Error::Precondition(format!(
            "frame {} has no prediction to check",
            frame.frame_id
        )));
    };
    if transforms.is_empty() {
        return Ok(ObjectCheck::NotEvaluated);
    }
    let gt_depth = GtDepth::render(rescan, &frame.gt_pose, &frame.intrinsics, config.supersampling);
    let base = dcre_from_depth(&gt_depth, &frame.gt_pose, &prediction, config);
    if base.score().is_some_and(|s| s < eps_f) {
        return Err(Error::Precondition(format!(
            "frame {} is not a failure (DCRE {} < {eps_f})",
            frame.frame_id, base.mean_normalized
        )));
    }
    Ok(object_check_from_depth(
        &gt_depth,
        &frame.gt_pose,
        &prediction,
        transforms,
        eps_f,
        config,
    ))
}

/// [`object_reloc_check`] on an already rendered ground-truth depth map,
/// without the failure precondition.
pub fn object_check_from_depth(
    gt_depth: &GtDepth,
    gt: &Pose,
    prediction: &Pose,
    transforms: &[ObjectTransform],
    eps_f: f64,
    config: &DcreConfig,
) -> ObjectCheck {
    if transforms.is_empty() {
        return ObjectCheck::NotEvaluated;
    }
    let mut sorted: Vec<&ObjectTransform> = transforms.iter().filter(|o| o.is_moved()).collect();
    sorted.sort_by_key(|o| o.instance_id);
    for o in sorted {
        let corrected = o.transform.compose(prediction);
        let r = dcre_from_depth(gt_depth, gt, &corrected, config);
        if r.score().is_some_and(|s| s < eps_f) {
            return ObjectCheck::Flagged(o.instance_id);
        }
    }
    ObjectCheck::NotFlagged
}

/// Per-frame outcome that every aggregate is computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEvaluation {
    pub sequence_id: String,
    pub frame_id: String,
    /// Translation error in meters, `None` without prediction.
    pub dt: Option<f64>,
    /// Rotation error in degrees, `None` without prediction.
    pub dtheta: Option<f64>,
    pub dcre: DcreResult,
    pub object_check: ObjectCheck,
    pub difficulty: Option<DifficultyScores>,
    pub change: Option<ChangeScores>,
}

impl FrameEvaluation {
    /// Absolute errors and DCRE for one frame; difficulty, change and the
    /// object check are filled in by the caller.
    pub fn from_frame(frame: &FrameRecord, dcre: DcreResult) -> Self {
        let (dt, dtheta) = match &frame.prediction {
            Some(p) => (
                Some(translation_error(p, &frame.gt_pose)),
                Some(angular_error(p.rotation(), frame.gt_pose.rotation())),
            ),
            None => (None, None),
        };
        FrameEvaluation {
            sequence_id: frame.sequence_id.clone(),
            frame_id: frame.frame_id.clone(),
            dt,
            dtheta,
            dcre,
            object_check: ObjectCheck::NotEvaluated,
            difficulty: None,
            change: None,
        }
    }

    pub fn has_prediction(&self) -> bool {
        self.dcre.status != DcreStatus::NoPrediction && self.dt.is_some() && self.dtheta.is_some()
    }

    fn abs_errors(&self) -> Option<(f64, f64)> {
        match (self.dt, self.dtheta) {
            (Some(t), Some(r)) if self.has_prediction() => Some((t, r)),
            _ => None,
        }
    }
}

fn non_empty(frames: &[FrameEvaluation]) -> Result<f64> {
    if frames.is_empty() {
        Err(Error::NoFrames)
    } else {
        Ok(frames.len() as f64)
    }
}

/// `E_a(ε_t, ε_θ)`: fraction of all frames with `Δt < ε_t` and `Δθ < ε_θ`.
pub fn recall_abs(frames: &[FrameEvaluation], eps_t: f64, eps_theta: f64) -> Result<f64> {
    let p = non_empty(frames)?;
    let hits = frames
        .iter()
        .filter_map(FrameEvaluation::abs_errors)
        .filter(|(t, r)| *t < eps_t && *r < eps_theta)
        .count();
    Ok(hits as f64 / p)
}

/// `Ē_a(ε_t, ε_θ)`: fraction of all frames with a prediction and
/// `Δt ≥ ε_t` or `Δθ ≥ ε_θ`.
pub fn outlier_abs(frames: &[FrameEvaluation], eps_t: f64, eps_theta: f64) -> Result<f64> {
    let p = non_empty(frames)?;
    let hits = frames
        .iter()
        .filter_map(FrameEvaluation::abs_errors)
        .filter(|(t, r)| *t >= eps_t || *r >= eps_theta)
        .count();
    Ok(hits as f64 / p)
}

/// Fraction of frames without a usable prediction.
pub fn na_fraction(frames: &[FrameEvaluation]) -> Result<f64> {
    let p = non_empty(frames)?;
    Ok(frames.iter().filter(|f| !f.has_prediction()).count() as f64 / p)
}

/// `E_f(ε)`: fraction of all frames with `DCRE < ε`.
pub fn recall_dcre(frames: &[FrameEvaluation], eps_f: f64) -> Result<f64> {
    let p = non_empty(frames)?;
    let hits = frames
        .iter()
        .filter_map(|f| f.dcre.score())
        .filter(|s| *s < eps_f)
        .count();
    Ok(hits as f64 / p)
}

/// `Ē_f(ε)`: fraction of all frames with a prediction and `DCRE ≥ ε`.
pub fn outlier_dcre(frames: &[FrameEvaluation], eps_f: f64) -> Result<f64> {
    let p = non_empty(frames)?;
    let hits = frames
        .iter()
        .filter_map(|f| f.dcre.score())
        .filter(|s| *s >= eps_f)
        .count();
    Ok(hits as f64 / p)
}

/// Lower median (element `(n-1)/2` of the sorted values).
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    Some(values[(values.len() - 1) / 2])
}

/// Independent medians of `Δt` and `Δθ` over frames with a prediction.
pub fn median_errors(frames: &[FrameEvaluation]) -> Option<(f64, f64)> {
    let (mut t, mut r): (Vec<f64>, Vec<f64>) = frames.iter().filter_map(FrameEvaluation::abs_errors).unzip();
    Some((lower_median(&mut t)?, lower_median(&mut r)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CurveMetric {
    Dcre,
    Translation,
    Rotation,
}

impl CurveMetric {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveMetric::Dcre => "dcre",
            CurveMetric::Translation => "translation",
            CurveMetric::Rotation => "rotation",
        }
    }

    fn value(&self, f: &FrameEvaluation) -> Option<f64> {
        match self {
            CurveMetric::Dcre => f.dcre.score(),
            CurveMetric::Translation => f.abs_errors().map(|e| e.0),
            CurveMetric::Rotation => f.abs_errors().map(|e| e.1),
        }
    }
}

/// Checks that `grid` is non-empty and strictly increasing.
pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    for (i, w) in grid.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err(Error::NonMonotoneGrid(i + 1));
        }
    }
    if grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidArgument("grid contains non-finite values".into()));
    }
    Ok(())
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Fraction of all frames whose metric is strictly below each grid value.
pub fn cumulative_curve(frames: &[FrameEvaluation], metric: CurveMetric, grid: &[f64]) -> Result<Vec<f64>> {
    validate_grid(grid)?;
    let p = non_empty(frames)?;
    let mut values: Vec<f64> = frames.iter().filter_map(|f| metric.value(f)).collect();
    values.sort_by(|a, b| a.total_cmp(b));
    Ok(grid
        .iter()
        .map(|eps| values.partition_point(|v| v < eps) as f64 / p)
        .collect())
}

/// Thresholds and grids of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// `(ε_t [m], ε_θ [deg])` pairs for `E_a` and `Ē_a`.
    pub abs_thresholds: Vec<(f64, f64)>,
    /// `ε_f` values for `E_f` and `Ē_f`.
    pub dcre_thresholds: Vec<f64>,
    /// Failure threshold for the moved-object check.
    pub object_eps: f64,
    pub dcre_grid: Vec<f64>,
    pub translation_grid: Vec<f64>,
    pub rotation_grid: Vec<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            abs_thresholds: vec![(0.05, 5.0), (0.5, 25.0)],
            dcre_thresholds: vec![0.05, 0.15, 0.5],
            object_eps: 0.15,
            dcre_grid: linspace(0.0, 1.0, 200),
            translation_grid: linspace(0.0, 1.0, 200),
            rotation_grid: linspace(0.0, 60.0, 200),
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        for (t, r) in &self.abs_thresholds {
            if !(*t > 0.0 && *r > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "absolute thresholds must be positive, got ({t}, {r})"
                )));
            }
        }
        if let Some(e) = self.dcre_thresholds.iter().find(|e| !(**e > 0.0)) {
            return Err(Error::InvalidArgument(format!("DCRE threshold {e} must be positive")));
        }
        if !(self.object_eps > 0.0) {
            return Err(Error::InvalidArgument("object threshold must be positive".into()));
        }
        validate_grid(&self.dcre_grid)?;
        validate_grid(&self.translation_grid)?;
        validate_grid(&self.rotation_grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsThresholdValue {
    pub eps_t: f64,
    pub eps_theta: f64,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcreThresholdValue {
    pub eps_f: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub frame_count: usize,
    pub predicted_count: usize,
    pub na_fraction: f64,
    pub recall_abs: Vec<AbsThresholdValue>,
    pub outlier_abs: Vec<AbsThresholdValue>,
    pub median_dt: Option<f64>,
    pub median_dtheta: Option<f64>,
    pub recall_dcre: Vec<DcreThresholdValue>,
    pub outlier_dcre: Vec<DcreThresholdValue>,
    /// Fraction of checked failures explained by a moved object.
    pub obj_fraction: Option<f64>,
    pub object_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub metric: CurveMetric,
    pub thresholds: Vec<f64>,
    pub fractions: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub frames: Vec<FrameEvaluation>,
    pub aggregates: Aggregates,
    pub curves: Vec<Curve>,
}

impl EvaluationReport {
    /// Aggregates per-frame results. The output depends only on the frames
    /// and their order.
    pub fn from_frames(
        method: impl Into<String>,
        frames: Vec<FrameEvaluation>,
        config: &MetricsConfig,
    ) -> Result<Self> {
        config.validate()?;
        let aggregates = aggregate(&frames, config)?;
        let curves = vec![
            Curve {
                metric: CurveMetric::Dcre,
                thresholds: config.dcre_grid.clone(),
                fractions: cumulative_curve(&frames, CurveMetric::Dcre, &config.dcre_grid)?,
            },
            Curve {
                metric: CurveMetric::Translation,
                thresholds: config.translation_grid.clone(),
                fractions: cumulative_curve(&frames, CurveMetric::Translation, &config.translation_grid)?,
            },
            Curve {
                metric: CurveMetric::Rotation,
                thresholds: config.rotation_grid.clone(),
                fractions: cumulative_curve(&frames, CurveMetric::Rotation, &config.rotation_grid)?,
            },
        ];
        Ok(EvaluationReport {
            method: method.into(),
            frames,
            aggregates,
            curves,
        })
    }

    pub fn curve(&self, metric: CurveMetric) -> Option<&Curve> {
        self.curves.iter().find(|c| c.metric == metric)
    }
}

/// Scene data a frame is scored against: the scan of its own sequence and
/// the instance moves from the reference scan to it.
#[derive(Debug, Clone, Copy)]
pub struct SceneRef<'a> {
    pub model: &'a SceneModel,
    pub transforms: &'a [ObjectTransform],
    /// Depth cache together with the model's content hash.
    pub cache: Option<(&'a DepthCache, &'a str)>,
}

impl<'a> SceneRef<'a> {
    pub fn new(model: &'a SceneModel, transforms: &'a [ObjectTransform]) -> Self {
        SceneRef {
            model,
            transforms,
            cache: None,
        }
    }

    /// Ground-truth depth for `frame`, from the cache when possible.
    pub fn gt_depth(&self, frame: &FrameRecord, supersampling: u32) -> GtDepth {
        let Some((cache, hash)) = self.cache else {
            return GtDepth::render(self.model, &frame.gt_pose, &frame.intrinsics, supersampling);
        };
        let s = supersampling.max(1);
        let key = DepthCache::key(hash, &frame.gt_pose, &frame.intrinsics, s);
        let ks = frame.intrinsics.supersampled(s);
        if let Some(depth) = cache.load(&key, ks.width, ks.height) {
            return GtDepth {
                depth,
                render_intrinsics: ks,
                native: frame.intrinsics,
                supersampling: s,
            };
        }
        let gt = GtDepth::render(self.model, &frame.gt_pose, &frame.intrinsics, s);
        if let Err(e) = cache.store(&key, &gt.depth) {
            log::warn!("depth cache write failed: {e}");
        }
        gt
    }
}

/// Absolute errors, DCRE and, for failures, the moved-object check of one
/// frame given its ground-truth depth.
pub fn score_frame(
    frame: &FrameRecord,
    depth: &GtDepth,
    transforms: &[ObjectTransform],
    dcre: &DcreConfig,
    metrics: &MetricsConfig,
) -> FrameEvaluation {
    let Some(prediction) = frame.prediction else {
        return FrameEvaluation::from_frame(frame, DcreResult::no_prediction());
    };
    let result = dcre_from_depth(depth, &frame.gt_pose, &prediction, dcre);
    let mut eval = FrameEvaluation::from_frame(frame, result);
    if result.score().is_some_and(|s| s >= metrics.object_eps) {
        eval.object_check =
            object_check_from_depth(depth, &frame.gt_pose, &prediction, transforms, metrics.object_eps, dcre);
    }
    eval
}

/// [`score_frame`] for every record. Frames are processed concurrently;
/// the output keeps input order.
pub fn evaluate_frames<'a, F>(
    records: &[FrameRecord],
    scene_for: F,
    dcre: &DcreConfig,
    metrics: &MetricsConfig,
) -> Vec<FrameEvaluation>
where
    F: Fn(&FrameRecord) -> SceneRef<'a> + Sync,
{
    records
        .par_iter()
        .map(|frame| {
            if frame.prediction.is_none() {
                return FrameEvaluation::from_frame(frame, DcreResult::no_prediction());
            }
            let scene = scene_for(frame);
            let depth = scene.gt_depth(frame, dcre.supersampling);
            score_frame(frame, &depth, scene.transforms, dcre, metrics)
        })
        .collect()
}

pub fn aggregate(frames: &[FrameEvaluation], config: &MetricsConfig) -> Result<Aggregates> {
    non_empty(frames)?;
    let medians = median_errors(frames);
    let checked: Vec<&ObjectCheck> = frames
        .iter()
        .map(|f| &f.object_check)
        .filter(|c| !matches!(c, ObjectCheck::NotEvaluated))
        .collect();
    let flagged = checked.iter().filter(|c| matches!(c, ObjectCheck::Flagged(_))).count();
    Ok(Aggregates {
        frame_count: frames.len(),
        predicted_count: frames.iter().filter(|f| f.has_prediction()).count(),
        na_fraction: na_fraction(frames)?,
        recall_abs: config
            .abs_thresholds
            .iter()
            .map(|&(eps_t, eps_theta)| {
                recall_abs(frames, eps_t, eps_theta).map(|value| AbsThresholdValue {
                    eps_t,
                    eps_theta,
                    value,
                })
            })
            .collect::<Result<_>>()?,
        outlier_abs: config
            .abs_thresholds
            .iter()
            .map(|&(eps_t, eps_theta)| {
                outlier_abs(frames, eps_t, eps_theta).map(|value| AbsThresholdValue {
                    eps_t,
                    eps_theta,
                    value,
                })
            })
            .collect::<Result<_>>()?,
        median_dt: medians.map(|m| m.0),
        median_dtheta: medians.map(|m| m.1),
        recall_dcre: config
            .dcre_thresholds
            .iter()
            .map(|&eps_f| recall_dcre(frames, eps_f).map(|value| DcreThresholdValue { eps_f, value }))
            .collect::<Result<_>>()?,
        outlier_dcre: config
            .dcre_thresholds
            .iter()
            .map(|&eps_f| outlier_dcre(frames, eps_f).map(|value| DcreThresholdValue { eps_f, value }))
            .collect::<Result<_>>()?,
        obj_fraction: (!checked.is_empty()).then(|| flagged as f64 / checked.len() as f64),
        object_eps: config.object_eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::backproject;
    use crate::geometry::project;
    use crate::synthetic;
    use nalgebra::Vector2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k_plane() -> Intrinsics {
        Intrinsics::new(640, 480, 500.0, 500.0, 319.5, 239.5).unwrap()
    }

    fn plane() -> SceneModel {
        synthetic::quad(Vector3::new(0.0, 0.0, 2.0), 50.0, 50.0, [128, 128, 128], 1)
    }

    fn eval(dt: Option<f64>, dtheta: Option<f64>, dcre: Option<f64>) -> FrameEvaluation {
        FrameEvaluation {
            sequence_id: "s".into(),
            frame_id: "f".into(),
            dt,
            dtheta,
            dcre: match dcre {
                Some(v) => DcreResult {
                    mean_normalized: v,
                    mean_pixels_unclamped: v * 800.0,
                    valid_pixel_count: 10,
                    status: DcreStatus::Ok,
                },
                None => DcreResult::no_prediction(),
            },
            object_check: ObjectCheck::NotEvaluated,
            difficulty: None,
            change: None,
        }
    }

    /// Per-pixel reference using the public projection helpers.
    fn naive_dcre(depth: &DepthMap, k: &Intrinsics, gt: &Pose, pred: &Pose) -> (f64, f64) {
        let (mut s, mut px, mut n) = (0.0, 0.0, 0);
        for y in 0..depth.height() {
            for x in 0..depth.width() {
                let d = depth.get(x, y);
                if d <= 0.0 {
                    continue;
                }
                n += 1;
                let u = Vector2::new(x as f64, y as f64);
                let world = gt.transform_point(&backproject(&u, d, k).unwrap());
                let cam = pred.inverse().transform_point(&world);
                match project(&cam, k) {
                    Some(v) => {
                        let delta = (v - u).norm();
                        s += (delta / k.diagonal()).min(1.0);
                        px += delta;
                    }
                    None => {
                        s += 1.0;
                        px += 2.0 * k.diagonal();
                    }
                }
            }
        }
        (s / n as f64, px / n as f64)
    }

    #[test]
    fn dcre_is_zero_for_ground_truth() {
        let room = synthetic::SyntheticRoom::new(1);
        let k = Intrinsics::new(64, 48, 55.0, 55.0, 31.5, 23.5).unwrap();
        for pose in room.random_poses(10, 2) {
            let f = FrameRecord::new("s", "f", pose, k, Some(pose));
            let r = dcre_frame(&room.reference, &f, &DcreConfig::default());
            assert_eq!(r.status, DcreStatus::Ok);
            assert!(r.mean_normalized <= 1e-9, "{}", r.mean_normalized);
        }
    }

    #[test]
    fn dcre_of_lateral_shift_on_plane() {
        let k = k_plane();
        let gt = Pose::identity();
        let pred = Pose::from_translation(Vector3::new(0.02, 0.0, 0.0));
        let f = FrameRecord::new("s", "f", gt, k, Some(pred));
        let r = dcre_frame(&plane(), &f, &DcreConfig::default());
        let expected = 5.0 / 800.0;
        assert!(((r.mean_normalized - expected) / expected).abs() <= 1e-3);
        assert!((r.mean_pixels_unclamped - 5.0).abs() < 1e-9);
        assert_eq!(r.valid_pixel_count, 640 * 480);
    }

    #[test]
    fn supersampling_keeps_native_pixel_units() {
        let k = Intrinsics::new(64, 48, 50.0, 50.0, 31.5, 23.5).unwrap();
        let pred = Pose::from_translation(Vector3::new(0.02, 0.0, 0.0));
        let f = FrameRecord::new("s", "f", Pose::identity(), k, Some(pred));
        let cfg = DcreConfig {
            supersampling: 3,
            ..Default::default()
        };
        let r = dcre_frame(&plane(), &f, &cfg);
        assert_eq!(r.valid_pixel_count, 64 * 48 * 9);
        assert!((r.mean_pixels_unclamped - 0.5).abs() < 1e-9);
        assert!((r.mean_normalized - 0.5 / k.diagonal()).abs() < 1e-12);
    }

    #[test]
    fn dcre_clamps_far_predictions() {
        let k = k_plane();
        let pred = Pose::from_translation(Vector3::new(100.0, 0.0, 0.0));
        let f = FrameRecord::new("s", "f", Pose::identity(), k, Some(pred));
        let r = dcre_frame(&plane(), &f, &DcreConfig::default());
        assert_eq!(r.mean_normalized, 1.0);
        // Prediction facing away: every point is behind the camera.
        let away = Pose::from_axis_angle(&Vector3::y(), std::f64::consts::PI, Vector3::zeros());
        let f = FrameRecord::new("s", "f", Pose::identity(), k, Some(away));
        let r = dcre_frame(&plane(), &f, &DcreConfig::default());
        assert_eq!(r.mean_normalized, 1.0);
        assert!((r.mean_pixels_unclamped - 1600.0).abs() < 1e-9);
    }

    #[test]
    fn dcre_statuses() {
        let k = k_plane();
        let f = FrameRecord::new("s", "f", Pose::identity(), k, None);
        assert_eq!(
            dcre_frame(&plane(), &f, &DcreConfig::default()).status,
            DcreStatus::NoPrediction
        );
        let f = FrameRecord::new("s", "f", Pose::identity(), k, Some(Pose::identity()));
        let r = dcre_frame(&SceneModel::empty(), &f, &DcreConfig::default());
        assert_eq!(r.status, DcreStatus::NoValidPixels);
        assert_eq!(r.score(), Some(1.0));
    }

    #[test]
    fn non_finite_predictions_are_absent() {
        let bad = Pose::from_translation(Vector3::new(f64::NAN, 0.0, 0.0));
        let f = FrameRecord::new("s", "f", Pose::identity(), k_plane(), Some(bad));
        assert!(f.prediction.is_none());
    }

    #[test]
    fn dcre_matches_naive_reference() {
        let room = synthetic::SyntheticRoom::new(4);
        let k = Intrinsics::new(64, 48, 52.0, 50.0, 30.0, 25.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for gt in room.random_poses(20, 5) {
            let pred = synthetic::perturb(&gt, 0.4, 30.0, &mut rng);
            let depth = GtDepth::render(&room.reference, &gt, &k, 1);
            let fast = dcre_from_depth(&depth, &gt, &pred, &DcreConfig::default());
            let (slow, slow_px) = naive_dcre(&depth.depth, &k, &gt, &pred);
            assert!((fast.mean_normalized - slow).abs() < 1e-9);
            assert!((fast.mean_pixels_unclamped - slow_px).abs() < 1e-6);
        }
    }

    #[test]
    fn dcre_gauge_invariance() {
        let room = synthetic::SyntheticRoom::new(5);
        let k = Intrinsics::new(64, 48, 52.0, 52.0, 31.5, 23.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = Pose::from_axis_angle(&Vector3::new(0.3, 1.0, -0.2), 0.7, Vector3::new(4.0, -2.0, 1.0));
        let moved = room.reference.transformed(&g);
        for gt in room.random_poses(5, 6) {
            let pred = synthetic::perturb(&gt, 0.1, 5.0, &mut rng);
            let a = dcre_frame(
                &room.reference,
                &FrameRecord::new("s", "f", gt, k, Some(pred)),
                &DcreConfig::default(),
            );
            let b = dcre_frame(
                &moved,
                &FrameRecord::new("s", "f", g * gt, k, Some(g * pred)),
                &DcreConfig::default(),
            );
            assert!((a.mean_normalized - b.mean_normalized).abs() < 1e-6);
        }
    }

    #[test]
    fn recall_examples() {
        let perfect: Vec<_> = (0..4).map(|_| eval(Some(0.0), Some(0.0), Some(0.0))).collect();
        assert_eq!(recall_abs(&perfect, 0.05, 5.0).unwrap(), 1.0);
        assert_eq!(outlier_abs(&perfect, 0.05, 5.0).unwrap(), 0.0);
        let mixed = vec![
            eval(Some(0.01), Some(1.0), Some(0.01)),
            eval(Some(0.04), Some(4.9), Some(0.02)),
            eval(Some(0.05), Some(1.0), Some(0.2)),
            eval(Some(0.01), Some(6.0), Some(0.6)),
        ];
        assert_eq!(recall_abs(&mixed, 0.05, 5.0).unwrap(), 0.5);
        assert_eq!(outlier_abs(&mixed, 0.05, 5.0).unwrap(), 0.5);
        let absent: Vec<_> = (0..3).map(|_| eval(None, None, None)).collect();
        assert_eq!(outlier_abs(&absent, 0.05, 5.0).unwrap(), 0.0);
        assert_eq!(na_fraction(&absent).unwrap(), 1.0);
        assert!(matches!(recall_abs(&[], 0.05, 5.0), Err(Error::NoFrames)));
        assert!(outlier_dcre(&[], 0.05).is_err());
    }

    #[test]
    fn dcre_recall_against_counting() {
        let values = [0.0, 0.01, 0.049, 0.05, 0.051, 0.1, 0.149, 0.15, 0.5, 1.0];
        let frames: Vec<_> = values.iter().map(|v| eval(Some(0.1), Some(1.0), Some(*v))).collect();
        for eps in [0.05, 0.15, 0.5] {
            let below = values.iter().filter(|v| **v < eps).count() as f64 / 10.0;
            assert_eq!(recall_dcre(&frames, eps).unwrap(), below);
            let above = values.iter().filter(|v| **v >= eps).count() as f64 / 10.0;
            assert_eq!(outlier_dcre(&frames, eps).unwrap(), above);
        }
        let gt: Vec<_> = (0..3).map(|_| eval(Some(0.0), Some(0.0), Some(0.0))).collect();
        assert_eq!(recall_dcre(&gt, 0.05).unwrap(), 1.0);
    }

    #[test]
    fn medians_are_independent_lower_medians() {
        let frames = vec![
            eval(Some(1.0), Some(30.0), Some(0.1)),
            eval(Some(2.0), Some(10.0), Some(0.1)),
            eval(Some(3.0), Some(20.0), Some(0.1)),
            eval(None, None, None),
        ];
        assert_eq!(median_errors(&frames), Some((2.0, 20.0)));
        // Two frames: (0.01 m, 40°) and (2 m, 1°). Lower medians pick 0.01 m
        // and 1°, a pair no single frame achieves.
        let pair = vec![
            eval(Some(0.01), Some(40.0), Some(0.1)),
            eval(Some(2.0), Some(1.0), Some(0.1)),
        ];
        assert_eq!(median_errors(&pair), Some((0.01, 1.0)));
        assert_eq!(median_errors(&[eval(None, None, None)]), None);
    }

    #[test]
    fn medians_match_sorting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for n in 1..40 {
            let frames: Vec<_> = (0..n)
                .map(|_| {
                    eval(
                        Some(rng.gen_range(0.0..3.0)),
                        Some(rng.gen_range(0.0..180.0)),
                        Some(0.1),
                    )
                })
                .collect();
            let mut t: Vec<f64> = frames.iter().map(|f| f.dt.unwrap()).collect();
            let mut r: Vec<f64> = frames.iter().map(|f| f.dtheta.unwrap()).collect();
            t.sort_by(f64::total_cmp);
            r.sort_by(f64::total_cmp);
            let idx = (n - 1) / 2;
            assert_eq!(median_errors(&frames), Some((t[idx], r[idx])));
        }
    }

    #[test]
    fn curves_and_grids() {
        let gt: Vec<_> = (0..5).map(|_| eval(Some(0.0), Some(0.0), Some(0.0))).collect();
        let grid = linspace(0.0, 1.0, 11);
        let c = cumulative_curve(&gt, CurveMetric::Dcre, &grid).unwrap();
        assert_eq!(c[0], 0.0);
        assert!(c[1..].iter().all(|v| *v == 1.0));
        assert!(matches!(
            cumulative_curve(&gt, CurveMetric::Dcre, &[]),
            Err(Error::EmptyGrid)
        ));
        assert!(matches!(
            cumulative_curve(&gt, CurveMetric::Dcre, &[0.1, 0.1]),
            Err(Error::NonMonotoneGrid(1))
        ));
    }

    #[test]
    fn moved_object_check_flags_object_relative_pose() {
        let room = synthetic::SyntheticRoom::new(2);
        let mv = Pose::from_translation(Vector3::new(-1.0, 0.0, 0.0));
        let (rescan, label, t_o) = room.rescan_with_moved_box(0, &mv);
        let k = Intrinsics::new(64, 48, 50.0, 50.0, 31.5, 23.5).unwrap();
        let target = room.box_centers[0] + Vector3::new(-1.0, 0.0, 0.0);
        let gt = synthetic::look_at(&(target + Vector3::new(-0.2, -1.4, 0.5)), &target, &Vector3::z());
        let pred = t_o.inverse() * gt;
        let transforms = [ObjectTransform {
            instance_id: label,
            transform: t_o,
        }];
        let frame = FrameRecord::new("s", "f", gt, k, Some(pred));
        let check = object_reloc_check(&rescan, &transforms, &frame, 0.05, &DcreConfig::default()).unwrap();
        assert_eq!(check, ObjectCheck::Flagged(label));
        assert_eq!(
            object_reloc_check(&rescan, &[], &frame, 0.05, &DcreConfig::default()).unwrap(),
            ObjectCheck::NotEvaluated
        );
        let ok = FrameRecord::new("s", "f", gt, k, Some(gt));
        assert!(object_reloc_check(&rescan, &transforms, &ok, 0.05, &DcreConfig::default()).is_err());
        let wild = FrameRecord::new(
            "s",
            "f",
            gt,
            k,
            Some(Pose::from_translation(Vector3::new(2.0, 1.0, 1.0)) * gt),
        );
        assert_eq!(
            object_reloc_check(&rescan, &transforms, &wild, 0.05, &DcreConfig::default()).unwrap(),
            ObjectCheck::NotFlagged
        );
    }

    proptest::proptest! {
        #[test]
        fn partition_identity_and_monotone_curves(
            entries in proptest::collection::vec(proptest::option::of((0.0f64..1.0, 0.0f64..2.0, 0.0f64..90.0)), 1..60)
        ) {
            let frames: Vec<_> = entries
                .iter()
                .map(|e| match e {
                    Some((d, t, r)) => eval(Some(*t), Some(*r), Some(*d)),
                    None => eval(None, None, None),
                })
                .collect();
            let na = na_fraction(&frames).unwrap();
            let grid = linspace(0.0, 1.0, 50);
            let curve = cumulative_curve(&frames, CurveMetric::Dcre, &grid).unwrap();
            for (eps, c) in grid.iter().zip(&curve) {
                let ef = recall_dcre(&frames, *eps).unwrap();
                proptest::prop_assert_eq!(ef, *c);
                proptest::prop_assert!((ef + outlier_dcre(&frames, *eps).unwrap() + na - 1.0).abs() < 1e-12);
            }
            proptest::prop_assert!(curve.windows(2).all(|w| w[0] <= w[1]));
            proptest::prop_assert!(*curve.last().unwrap() <= 1.0 - na + 1e-12);
            let a = recall_abs(&frames, 0.3, 20.0).unwrap();
            proptest::prop_assert!(a <= recall_abs(&frames, 0.6, 20.0).unwrap());
            proptest::prop_assert!(a <= recall_abs(&frames, 0.3, 40.0).unwrap());
        }
    }
}
