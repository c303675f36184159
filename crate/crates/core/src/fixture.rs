//! A small on-disk dataset built from [`SyntheticRoom`], plus prediction
//! generators. Used by tests, the `synth` command and benchmarks.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::io::manifest::{IntrinsicsEntry, SceneManifest, SequenceEntry, Split};
use crate::io::ply::{write_ply, PlyFormat};
use crate::io::poses::{qualified, write_object_transforms, write_trajectory};
use crate::metrics::ObjectTransform;
use crate::synthetic::{perturb, SyntheticRoom};

pub const MANIFEST_FILE: &str = "scene.toml";

#[derive(Debug, Clone)]
pub struct FixtureOptions {
    pub seed: u64,
    pub scene_id: String,
    pub train_frames: usize,
    pub test_sequences: usize,
    pub frames_per_sequence: usize,
    pub width: u32,
    pub height: u32,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        FixtureOptions {
            seed: 7,
            scene_id: "synthetic".into(),
            train_frames: 12,
            test_sequences: 2,
            frames_per_sequence: 10,
            width: 64,
            height: 48,
        }
    }
}

impl FixtureOptions {
    /// Pinhole intrinsics with a ~65° horizontal field of view.
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        let f = 0.78 * self.width as f64;
        Intrinsics::new(
            self.width,
            self.height,
            f,
            f,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub manifest: PathBuf,
    /// Ground truth of the evaluated (test) frames as `(key, pose)`, keys
    /// qualified as `sequence/frame`.
    pub test_frames: Vec<(String, Pose)>,
}

/// Box `which` rotated about its vertical axis and shifted on the floor.
pub fn box_move(room: &SyntheticRoom, which: usize, angle_deg: f64, shift: Vector3<f64>) -> Pose {
    let c = room.box_centers[which];
    let r = Pose::from_axis_angle(&Vector3::z(), angle_deg.to_radians(), Vector3::zeros());
    let t = c + shift - r.rotation() * c;
    Pose::new(*r.rotation(), t).expect("rotation about z is proper")
}

pub fn write_fixture(dir: &Path, options: &FixtureOptions) -> Result<Fixture> {
    if options.train_frames == 0 || options.frames_per_sequence == 0 {
        return Err(Error::InvalidArgument(
            "fixture needs at least one frame per sequence".into(),
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let room = SyntheticRoom::new(options.seed);
    let k = options.intrinsics()?;
    let ke = IntrinsicsEntry::from(&k);
    write_ply(
        &dir.join("reference.ply"),
        &room.reference,
        PlyFormat::BinaryLittleEndian,
    )?;

    let mut sequences = Vec::new();
    let train: Vec<(String, Pose)> = room
        .trajectory(options.train_frames, 0.0)
        .into_iter()
        .enumerate()
        .map(|(i, p)| (format!("{i:06}"), p))
        .collect();
    write_trajectory(&dir.join("train01.txt"), &train)?;
    sequences.push(SequenceEntry {
        id: "train01".into(),
        split: Split::Train,
        model: "reference.ply".into(),
        trajectory: "train01.txt".into(),
        intrinsics: ke.clone(),
        object_transforms: None,
        image_dir: None,
    });

    let mut test_frames = Vec::new();
    for s in 0..options.test_sequences {
        let id = format!("test{:02}", s + 1);
        let which = s % 3;
        let moved = box_move(&room, which, 20.0 + 10.0 * s as f64, Vector3::new(0.25, -0.15, 0.0));
        let (model, label, transform) = room.rescan_with_moved_box(which, &moved);
        write_ply(&dir.join(format!("{id}.ply")), &model, PlyFormat::BinaryLittleEndian)?;
        let phase = 0.37 * (s + 1) as f64;
        let frames: Vec<(String, Pose)> = room
            .trajectory(options.frames_per_sequence, phase)
            .into_iter()
            .enumerate()
            .map(|(i, p)| (format!("{i:06}"), p))
            .collect();
        write_trajectory(&dir.join(format!("{id}.txt")), &frames)?;
        // Static instances are listed with identity transforms, as real
        // annotations do.
        let transforms: Vec<ObjectTransform> = std::iter::once(ObjectTransform {
            instance_id: label,
            transform,
        })
        .chain(
            crate::synthetic::BOX_LABELS
                .iter()
                .filter(|&&l| l != label)
                .map(|&l| ObjectTransform {
                    instance_id: l,
                    transform: Pose::identity(),
                }),
        )
        .collect();
        write_object_transforms(&dir.join(format!("{id}_objects.txt")), &transforms)?;
        test_frames.extend(frames.iter().map(|(f, p)| (qualified(&id, f), *p)));
        sequences.push(SequenceEntry {
            id: id.clone(),
            split: Split::Test,
            model: format!("{id}.ply").into(),
            trajectory: format!("{id}.txt").into(),
            intrinsics: ke.clone(),
            object_transforms: Some(format!("{id}_objects.txt").into()),
            image_dir: None,
        });
    }

    let manifest = SceneManifest {
        scene_id: options.scene_id.clone(),
        reference_model: "reference.ply".into(),
        sequences,
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.write(&path)?;
    Ok(Fixture {
        manifest: path,
        test_frames,
    })
}

pub fn perfect_predictions(gt: &[(String, Pose)]) -> Vec<(String, Option<Pose>)> {
    gt.iter().map(|(k, p)| (k.clone(), Some(*p))).collect()
}

/// Ground truth perturbed by up to `trans` meters / `rot_deg` degrees; a
/// fraction `outliers` of the frames (chosen at random, rounded to the
/// nearest count) is instead perturbed by 1–2 m and 30–90°.
pub fn noisy_predictions(
    gt: &[(String, Pose)],
    trans: f64,
    rot_deg: f64,
    outliers: f64,
    seed: u64,
) -> Vec<(String, Option<Pose>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outlier = pick(gt.len(), outliers, &mut rng);
    gt.iter()
        .zip(outlier)
        .map(|((k, p), out)| {
            let pose = if out {
                let t = rng.gen_range(1.0..2.0);
                let r = rng.gen_range(30.0..90.0);
                gross(p, t, r, &mut rng)
            } else {
                perturb(p, trans, rot_deg, &mut rng)
            };
            (k.clone(), Some(pose))
        })
        .collect()
}

/// Removes exactly `round(fraction · n)` predictions, chosen at random.
pub fn drop_predictions(
    predictions: &[(String, Option<Pose>)],
    fraction: f64,
    seed: u64,
) -> Vec<(String, Option<Pose>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let drop = pick(predictions.len(), fraction, &mut rng);
    predictions
        .iter()
        .zip(drop)
        .map(|((k, p), d)| (k.clone(), if d { None } else { *p }))
        .collect()
}

fn pick(n: usize, fraction: f64, rng: &mut impl Rng) -> Vec<bool> {
    let count = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut mask: Vec<bool> = (0..n).map(|i| i < count).collect();
    mask.shuffle(rng);
    mask
}

/// Offset by exactly `trans` meters and `rot_deg` degrees in random
/// directions.
fn gross(pose: &Pose, trans: f64, rot_deg: f64, rng: &mut impl Rng) -> Pose {
    let axis = crate::synthetic::random_unit_vector(rng);
    let dir = crate::synthetic::random_unit_vector(rng);
    let rot = Pose::from_axis_angle(&axis, rot_deg.to_radians(), Vector3::zeros());
    let moved = pose.compose(&rot);
    Pose::new(*moved.rotation(), moved.translation() + dir * trans).unwrap_or(moved)
}
