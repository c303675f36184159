//! Per-frame difficulty scores and the filter presets built on them.
//!
//! * `σ` — variance of the Laplacian of the query image (texture / blur).
//! * `ν` — volume of the convex hull of the visible points and the camera
//!   center (how much of the scene the frame covers).
//! * `η` — pose novelty: smallest DCRE, in pixels, between the query pose
//!   and any training pose.

use nalgebra::Vector2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::change::ChangeScores;
use crate::error::{Error, Result};
use crate::geometry::{backproject, Intrinsics, Pose};
use crate::hull::convex_hull;
use crate::image::{ColorImage, DepthMap};
use crate::mesh::SceneModel;
use crate::metrics::{dcre_from_depth, DcreConfig, DcreStatus, FrameEvaluation, GtDepth};

/// Pixel stride used to subsample depth before the hull computation.
pub const CONTEXT_STRIDE: u32 = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifficultyScores {
    /// σ
    pub vol: f64,
    /// ν, cubic meters.
    pub context_volume: f64,
    pub context_degenerate: bool,
    /// η, pixels.
    pub pose_novelty: f64,
    /// Frame ID of the training pose attaining η.
    pub nearest_train: Option<String>,
}

/// Variance of the 4-neighbour Laplacian response of the luma image,
/// evaluated on interior pixels only.
pub fn variance_of_laplacian(img: &ColorImage) -> Result<f64> {
    let (w, h) = (img.width(), img.height());
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall(w, h));
    }
    let g = img.to_gray();
    let g = g.as_slice();
    let w = w as usize;
    let responses: Vec<f64> = (1..h as usize - 1)
        .flat_map(|y| {
            (1..w - 1).map(move |x| {
                let c = y * w + x;
                g[c - w] + g[c + w] + g[c - 1] + g[c + 1] - 4.0 * g[c]
            })
        })
        .collect();
    let n = responses.len() as f64;
    let mean = responses.iter().sum::<f64>() / n;
    Ok(responses.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FovContext {
    pub volume: f64,
    pub degenerate: bool,
    pub point_count: usize,
}

fn stride_samples(n: u32) -> impl Iterator<Item = u32> {
    // The last row/column is always included so the sampled footprint
    // spans the full image.
    let last = n.saturating_sub(1);
    (0..n)
        .step_by(CONTEXT_STRIDE as usize)
        .chain((!last.is_multiple_of(CONTEXT_STRIDE)).then_some(last))
}

/// Volume of the convex hull of the valid depth points (world frame) and
/// the camera center.
pub fn fov_context(depth: &DepthMap, k: &Intrinsics, pose: &Pose) -> Result<FovContext> {
    if depth.width() != k.width || depth.height() != k.height {
        return Err(Error::DimensionMismatch(
            depth.width(),
            depth.height(),
            k.width,
            k.height,
        ));
    }
    let mut points = vec![*pose.translation()];
    for y in stride_samples(depth.height()) {
        for x in stride_samples(depth.width()) {
            let d = depth.get(x, y);
            if let Some(p) = backproject(&Vector2::new(x as f64, y as f64), d, k) {
                points.push(pose.transform_point(&p));
            }
        }
    }
    let point_count = points.len();
    Ok(match convex_hull(&points) {
        Some(h) => FovContext {
            volume: h.volume,
            degenerate: false,
            point_count,
        },
        None => FovContext {
            volume: 0.0,
            degenerate: true,
            point_count,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseNovelty {
    pub eta: f64,
    pub nearest_index: usize,
}

/// Pose novelty of `query_gt` against a training trajectory: the smallest
/// unclamped DCRE in pixels over training poses, with depth rendered from
/// the reference model at the query pose. The lowest index wins ties.
///
/// A query that sees no geometry is charged the behind-camera penalty.
pub fn pose_novelty(
    query_gt: &Pose,
    train_poses: &[Pose],
    model: &SceneModel,
    k: &Intrinsics,
    config: &DcreConfig,
) -> Result<PoseNovelty> {
    let depth = GtDepth::render(model, query_gt, k, config.supersampling);
    pose_novelty_from_depth(&depth, query_gt, train_poses, config)
}

pub fn pose_novelty_from_depth(
    depth: &GtDepth,
    query_gt: &Pose,
    train_poses: &[Pose],
    config: &DcreConfig,
) -> Result<PoseNovelty> {
    if train_poses.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let penalty = config.behind_camera_penalty_diagonals * depth.native.diagonal();
    let values: Vec<f64> = train_poses
        .par_iter()
        .map(|p| {
            let r = dcre_from_depth(depth, query_gt, p, config);
            match r.status {
                DcreStatus::Ok => r.mean_pixels_unclamped,
                _ => penalty,
            }
        })
        .collect();
    let mut best = PoseNovelty {
        eta: values[0],
        nearest_index: 0,
    };
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v < best.eta {
            best = PoseNovelty {
                eta: *v,
                nearest_index: i,
            };
        }
    }
    Ok(best)
}

/// One-sided or closed interval bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Gt(f64),
    Le(f64),
    Closed(f64, f64),
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::Gt(a) => v > a,
            Bound::Le(a) => v <= a,
            Bound::Closed(a, b) => a <= v && v <= b,
        }
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::Gt(a) => write!(f, "> {a}"),
            Bound::Le(a) => write!(f, "<= {a}"),
            Bound::Closed(a, b) => write!(f, "in [{a}, {b}]"),
        }
    }
}

/// Named conjunction of bounds on difficulty and change scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterPreset {
    pub name: String,
    pub vol: Option<Bound>,
    pub context_volume: Option<Bound>,
    pub pose_novelty: Option<Bound>,
    pub rho_v: Option<Bound>,
    pub zeta_s: Option<Bound>,
    pub zeta_g: Option<Bound>,
}

const DEFAULT_VOL: Bound = Bound::Gt(7.2);
const DEFAULT_CONTEXT: Bound = Bound::Closed(0.2, 8.0);
const DEFAULT_NOVELTY: Bound = Bound::Le(650.0);

impl FilterPreset {
    fn named(name: &str) -> Self {
        FilterPreset {
            name: name.into(),
            vol: None,
            context_volume: None,
            pose_novelty: None,
            rho_v: None,
            zeta_s: None,
            zeta_g: None,
        }
    }

    fn with_defaults(name: &str) -> Self {
        FilterPreset {
            vol: Some(DEFAULT_VOL),
            context_volume: Some(DEFAULT_CONTEXT),
            pose_novelty: Some(DEFAULT_NOVELTY),
            ..FilterPreset::named(name)
        }
    }

    /// The shipped presets, in table order.
    pub fn all() -> Vec<FilterPreset> {
        vec![
            FilterPreset::named("no-filter"),
            FilterPreset::with_defaults("default"),
            FilterPreset {
                vol: Some(Bound::Gt(33.0)),
                ..FilterPreset::with_defaults("well-textured")
            },
            FilterPreset {
                vol: Some(Bound::Le(33.0)),
                ..FilterPreset::with_defaults("texture-less")
            },
            FilterPreset {
                context_volume: Some(Bound::Gt(2.4)),
                ..FilterPreset::with_defaults("high-context")
            },
            FilterPreset {
                context_volume: Some(Bound::Closed(0.9, 2.4)),
                ..FilterPreset::with_defaults("medium-context")
            },
            FilterPreset {
                context_volume: Some(Bound::Le(0.9)),
                ..FilterPreset::with_defaults("low-context")
            },
            FilterPreset {
                pose_novelty: Some(Bound::Gt(500.0)),
                ..FilterPreset::with_defaults("novel")
            },
            FilterPreset {
                pose_novelty: Some(Bound::Le(150.0)),
                ..FilterPreset::with_defaults("not-novel")
            },
            FilterPreset {
                rho_v: Some(Bound::Gt(0.8)),
                zeta_s: Some(Bound::Le(0.1)),
                zeta_g: Some(Bound::Le(30.0)),
                ..FilterPreset::with_defaults("easy-changes")
            },
            FilterPreset {
                rho_v: Some(Bound::Le(0.7)),
                zeta_s: Some(Bound::Gt(0.4)),
                zeta_g: Some(Bound::Gt(30.0)),
                ..FilterPreset::with_defaults("hard-changes")
            },
        ]
    }

    pub fn by_name(name: &str) -> Result<FilterPreset> {
        FilterPreset::all()
            .into_iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownPreset(name.into()))
    }

    pub fn needs_difficulty(&self) -> bool {
        self.vol.is_some() || self.context_volume.is_some() || self.pose_novelty.is_some()
    }

    pub fn needs_change(&self) -> bool {
        self.rho_v.is_some() || self.zeta_s.is_some() || self.zeta_g.is_some()
    }

    /// Whether `frame` passes every configured bound.
    ///
    /// A change measure flagged as undefined (empty overlap, degenerate
    /// image) cannot satisfy a bound on it.
    pub fn passes(&self, frame: &FrameEvaluation) -> Result<bool> {
        let missing = |score: &'static str| Error::MissingScore {
            frame: format!("{}/{}", frame.sequence_id, frame.frame_id),
            score,
            preset: self.name.clone(),
        };
        let mut ok = true;
        if self.needs_difficulty() {
            let d = frame.difficulty.as_ref().ok_or_else(|| missing("difficulty"))?;
            ok &= check(self.vol, d.vol);
            ok &= check(self.context_volume, d.context_volume);
            ok &= check(self.pose_novelty, d.pose_novelty);
        }
        if self.needs_change() {
            let c: &ChangeScores = frame.change.as_ref().ok_or_else(|| missing("change"))?;
            ok &= self.rho_v.is_none() || (!c.flags.visual_degenerate && check(self.rho_v, c.rho_v));
            ok &= self.zeta_s.is_none() || (!c.flags.semantic_empty_overlap && check(self.zeta_s, c.zeta_s));
            ok &= self.zeta_g.is_none() || (!c.flags.geometric_empty_overlap && check(self.zeta_g, c.zeta_g));
        }
        Ok(ok)
    }
}

fn check(bound: Option<Bound>, v: f64) -> bool {
    bound.is_none_or(|b| b.holds(v))
}

/// Frames passing `preset`, in input order.
pub fn apply_filter(frames: &[FrameEvaluation], preset: &FilterPreset) -> Result<Vec<FrameEvaluation>> {
    let mut out = Vec::new();
    for f in frames {
        if preset.passes(f)? {
            out.push(f.clone());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::change::ChangeFlags;
    use crate::image::Image;
    use crate::metrics::{DcreResult, ObjectCheck};
    use crate::synthetic;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn checkerboard(n: u32) -> ColorImage {
        Image::from_fn(n, n, |x, y| if (x + y) % 2 == 0 { [255, 255, 255] } else { [0, 0, 0] })
    }

    fn naive_vol(img: &ColorImage) -> f64 {
        let g = img.to_gray();
        let mut r = Vec::new();
        for y in 1..img.height() - 1 {
            for x in 1..img.width() - 1 {
                let mut acc = 0.0;
                for (dx, dy, wgt) in [(0i32, -1i32, 1.0), (-1, 0, 1.0), (0, 0, -4.0), (1, 0, 1.0), (0, 1, 1.0)] {
                    acc += wgt * g.get((x as i32 + dx) as u32, (y as i32 + dy) as u32);
                }
                r.push(acc);
            }
        }
        let m = r.iter().sum::<f64>() / r.len() as f64;
        r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / r.len() as f64
    }

    #[test]
    fn vol_constant_and_checkerboard() {
        assert_eq!(
            variance_of_laplacian(&Image::filled(10, 7, [90, 10, 200])).unwrap(),
            0.0
        );
        let cb = checkerboard(16);
        let v = variance_of_laplacian(&cb).unwrap();
        assert!((v - naive_vol(&cb)).abs() < 1e-9);
        assert!(v > 0.0);
        assert!(matches!(
            variance_of_laplacian(&Image::filled(2, 5, [0, 0, 0])),
            Err(Error::ImageTooSmall(2, 5))
        ));
    }

    #[test]
    fn vol_matches_naive_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let img = Image::from_fn(rng.gen_range(3..30), rng.gen_range(3..30), |_, _| rng.gen());
            assert!((variance_of_laplacian(&img).unwrap() - naive_vol(&img)).abs() < 1e-9);
        }
    }

    #[test]
    fn pyramid_context_volume() {
        let k = Intrinsics::new(640, 480, 500.0, 500.0, 319.5, 239.5).unwrap();
        let d = 2.0;
        let depth = Image::filled(640, 480, d);
        let c = fov_context(&depth, &k, &Pose::identity()).unwrap();
        let expected = (640.0 / 500.0) * (480.0 / 500.0) * d * d * d / 3.0;
        assert!(!c.degenerate);
        assert!(
            ((c.volume - expected) / expected).abs() < 0.01,
            "{} vs {expected}",
            c.volume
        );
        let empty = fov_context(&Image::filled(640, 480, 0.0), &k, &Pose::identity()).unwrap();
        assert_eq!(empty.volume, 0.0);
        assert!(empty.degenerate);
    }

    #[test]
    fn context_is_pose_gauge_invariant() {
        let room = synthetic::SyntheticRoom::new(3);
        let k = Intrinsics::new(64, 48, 50.0, 50.0, 31.5, 23.5).unwrap();
        let pose = room.random_poses(1, 1)[0];
        let depth = crate::render::render_depth(&room.reference, &pose, &k);
        let a = fov_context(&depth, &k, &pose).unwrap().volume;
        let b = fov_context(&depth, &k, &Pose::identity()).unwrap().volume;
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn novelty_picks_nearest_training_pose() {
        let room = synthetic::SyntheticRoom::new(6);
        let k = Intrinsics::new(64, 48, 50.0, 50.0, 31.5, 23.5).unwrap();
        let train = room.random_poses(5, 11);
        let query = synthetic::perturb(&train[1], 0.02, 1.0, &mut ChaCha8Rng::seed_from_u64(2));
        let cfg = DcreConfig::default();
        let n = pose_novelty(&query, &train, &room.reference, &k, &cfg).unwrap();
        assert_eq!(n.nearest_index, 1);
        let single = crate::metrics::dcre_frame(
            &room.reference,
            &crate::metrics::FrameRecord::new("s", "q", query, k, Some(train[1])),
            &cfg,
        );
        assert!((n.eta - single.mean_pixels_unclamped).abs() < 1e-12);
        let exact = pose_novelty(&train[3], &train, &room.reference, &k, &cfg).unwrap();
        assert_eq!(exact.nearest_index, 3);
        assert!(exact.eta < 1e-9);
        assert!(matches!(
            pose_novelty(&query, &[], &room.reference, &k, &cfg),
            Err(Error::EmptyTrajectory)
        ));
        // Adding training poses never increases η.
        let more: Vec<Pose> = train.iter().copied().chain(room.random_poses(3, 99)).collect();
        assert!(pose_novelty(&query, &more, &room.reference, &k, &cfg).unwrap().eta <= n.eta);
    }

    fn frame(vol: f64, ctx: f64, eta: f64, change: Option<(f64, f64, f64)>) -> FrameEvaluation {
        FrameEvaluation {
            sequence_id: "s".into(),
            frame_id: "f".into(),
            dt: None,
            dtheta: None,
            dcre: DcreResult::no_prediction(),
            object_check: ObjectCheck::NotEvaluated,
            difficulty: Some(DifficultyScores {
                vol,
                context_volume: ctx,
                context_degenerate: false,
                pose_novelty: eta,
                nearest_train: None,
            }),
            change: change.map(|(rho_v, zeta_s, zeta_g)| ChangeScores {
                rho_v,
                zeta_v: 0.0,
                zeta_s,
                zeta_g,
                valid_overlap: 1.0,
                flags: ChangeFlags::default(),
            }),
        }
    }

    #[test]
    fn preset_boundaries() {
        let default = FilterPreset::by_name("default").unwrap();
        assert!(!default.passes(&frame(7.2, 1.0, 100.0, None)).unwrap());
        assert!(default.passes(&frame(7.21, 1.0, 100.0, None)).unwrap());
        assert!(default.passes(&frame(10.0, 0.2, 650.0, None)).unwrap());
        assert!(default.passes(&frame(10.0, 8.0, 100.0, None)).unwrap());
        assert!(!default.passes(&frame(10.0, 8.01, 100.0, None)).unwrap());
        assert!(!default.passes(&frame(10.0, 1.0, 650.5, None)).unwrap());
        let tl = FilterPreset::by_name("texture-less").unwrap();
        assert!(tl.passes(&frame(33.0, 1.0, 100.0, None)).unwrap());
        let easy = FilterPreset::by_name("easy-changes").unwrap();
        assert!(matches!(
            easy.passes(&frame(10.0, 1.0, 100.0, None)),
            Err(Error::MissingScore { .. })
        ));
        assert!(easy.passes(&frame(10.0, 1.0, 100.0, Some((0.81, 0.1, 30.0)))).unwrap());
        assert!(!easy.passes(&frame(10.0, 1.0, 100.0, Some((0.8, 0.1, 30.0)))).unwrap());
        assert_eq!(FilterPreset::all().len(), 11);
        assert!(matches!(FilterPreset::by_name("nope"), Err(Error::UnknownPreset(_))));
        let none = FilterPreset::by_name("no-filter").unwrap();
        let mut bare = frame(0.0, 0.0, 0.0, None);
        bare.difficulty = None;
        assert!(none.passes(&bare).unwrap());
    }

    proptest::proptest! {
        #[test]
        fn texture_presets_split_default(
            scores in proptest::collection::vec((0.0f64..80.0, 0.0f64..10.0, 0.0f64..900.0), 0..50)
        ) {
            let frames: Vec<_> = scores.iter().map(|(a, b, c)| frame(*a, *b, *c, None)).collect();
            let well = apply_filter(&frames, &FilterPreset::by_name("well-textured").unwrap()).unwrap();
            let less = apply_filter(&frames, &FilterPreset::by_name("texture-less").unwrap()).unwrap();
            let unconstrained = FilterPreset { vol: None, ..FilterPreset::by_name("default").unwrap() };
            let all = apply_filter(&frames, &unconstrained).unwrap();
            proptest::prop_assert_eq!(well.len() + less.len(), all.len());
            for p in FilterPreset::all().into_iter().filter(|p| !p.needs_change()) {
                let got = apply_filter(&frames, &p).unwrap();
                let expected: Vec<_> = frames.iter().filter(|f| {
                    let d = f.difficulty.as_ref().unwrap();
                    p.vol.is_none_or(|b| b.holds(d.vol))
                        && p.context_volume.is_none_or(|b| b.holds(d.context_volume))
                        && p.pose_novelty.is_none_or(|b| b.holds(d.pose_novelty))
                }).cloned().collect();
                proptest::prop_assert_eq!(got, expected);
            }
        }
    }
}
