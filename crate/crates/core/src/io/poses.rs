//! Text formats for trajectories, predictions and object transforms.
//!
//! All poses are camera-to-model. Lines starting with `#` and blank lines
//! are ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{Pose, Quaternion, UnitQuaternion};
use crate::metrics::ObjectTransform;

/// Maximum deviation of `RᵀR` from identity accepted in pose files.
pub const POSE_TOLERANCE: f64 = 1e-3;
/// Maximum deviation of a prediction quaternion's norm from 1.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

const TRAJECTORY_HEADER: &str =
    "# frame_id r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz (camera-to-model, row-major 3x4)";
const PREDICTION_HEADER: &str = "# frame_id qw qx qy qz tx ty tz (camera-to-model)";
const OBJECT_HEADER: &str =
    "# instance_id r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz (reference to rescan, world frame)";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Non-comment lines as `(1-based line number, tokens)`.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.trim();
        (!l.is_empty() && !l.starts_with('#')).then(|| (i + 1, l.split_whitespace().collect()))
    })
}

fn numbers(path: &Path, line: usize, toks: &[&str]) -> Result<Vec<f64>> {
    toks.iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("`{t}` is not a number")))
        })
        .collect()
}

/// Pose from the top 3×4 of a rigid matrix, row-major.
pub fn pose_from_row_major(v: &[f64]) -> Result<Pose> {
    let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
    let t = Vector3::new(v[3], v[7], v[11]);
    Pose::from_approximate(r, t, POSE_TOLERANCE)
}

fn rigid_row(path: &Path, line: usize, toks: &[&str]) -> Result<Pose> {
    let vals = numbers(path, line, toks)?;
    pose_from_row_major(&vals).map_err(|e| match e {
        Error::ImproperRotation(det) => Error::parse(path, line, format!("improper rotation (determinant {det:.6})")),
        other => Error::parse(path, line, format!("non-rigid pose: {other}")),
    })
}

fn row_major_line(out: &mut String, id: &str, pose: &Pose) {
    out.push_str(id);
    for v in pose.to_row_major_3x4() {
        let _ = write!(out, " {v}");
    }
    out.push('\n');
}

pub fn read_trajectory(path: &Path) -> Result<Vec<(String, Pose)>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (line, toks) in records(&text) {
        if toks.len() != 13 {
            return Err(Error::parse(
                path,
                line,
                format!("expected frame_id and 12 values, found {} fields", toks.len()),
            ));
        }
        if !seen.insert(toks[0].to_string()) {
            return Err(Error::parse(path, line, format!("duplicate frame_id `{}`", toks[0])));
        }
        out.push((toks[0].to_string(), rigid_row(path, line, &toks[1..])?));
    }
    Ok(out)
}

/// Values are written in shortest round-trip form, so reading back yields
/// bit-identical poses.
pub fn write_trajectory(path: &Path, frames: &[(String, Pose)]) -> Result<()> {
    let mut out = String::from(TRAJECTORY_HEADER);
    out.push('\n');
    for (id, pose) in frames {
        row_major_line(&mut out, id, pose);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_object_transforms(path: &Path) -> Result<Vec<ObjectTransform>> {
    let text = read_text(path)?;
    let mut out: Vec<ObjectTransform> = Vec::new();
    for (line, toks) in records(&text) {
        if toks.len() != 13 {
            return Err(Error::parse(
                path,
                line,
                format!("expected instance_id and 12 values, found {} fields", toks.len()),
            ));
        }
        let instance_id: u16 = toks[0]
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad instance id `{}`", toks[0])))?;
        if instance_id == 0 {
            return Err(Error::parse(
                path,
                line,
                "instance id 0 is reserved for unlabeled vertices",
            ));
        }
        if out.iter().any(|o| o.instance_id == instance_id) {
            return Err(Error::parse(path, line, format!("duplicate instance id {instance_id}")));
        }
        out.push(ObjectTransform {
            instance_id,
            transform: rigid_row(path, line, &toks[1..])?,
        });
    }
    out.sort_by_key(|o| o.instance_id);
    Ok(out)
}

pub fn write_object_transforms(path: &Path, transforms: &[ObjectTransform]) -> Result<()> {
    let mut out = String::from(OBJECT_HEADER);
    out.push('\n');
    for o in transforms {
        row_major_line(&mut out, &o.instance_id.to_string(), &o.transform);
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Accepted spellings of frame identifiers in prediction files: the
/// qualified `sequence/frame` form, and the bare frame ID when it is unique
/// among the evaluated sequences.
#[derive(Debug, Clone, Default)]
pub struct FrameKeys {
    aliases: HashMap<String, String>,
}

impl FrameKeys {
    pub fn new<'a>(frames: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut aliases = HashMap::new();
        let mut bare: HashMap<String, Option<String>> = HashMap::new();
        for (seq, frame) in frames {
            let key = qualified(seq, frame);
            bare.entry(frame.to_string())
                .and_modify(|v| *v = None)
                .or_insert_with(|| Some(key.clone()));
            aliases.insert(key.clone(), key);
        }
        for (frame, key) in bare {
            if let Some(key) = key {
                aliases.entry(frame).or_insert(key);
            }
        }
        FrameKeys { aliases }
    }

    pub fn canonical(&self, id: &str) -> Option<&str> {
        self.aliases.get(id).map(String::as_str)
    }
}

pub fn qualified(sequence: &str, frame: &str) -> String {
    format!("{sequence}/{frame}")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionStats {
    pub lines: usize,
    pub non_finite: usize,
    pub renormalized: usize,
    pub rejected_quaternions: usize,
    pub unknown_skipped: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PredictionSet {
    pub method: String,
    /// Canonical frame key → prediction; `None` for invalid rows. Frames
    /// missing from the map are absent as well.
    pub poses: BTreeMap<String, Option<Pose>>,
    pub stats: PredictionStats,
    pub warnings: Vec<String>,
}

impl PredictionSet {
    pub fn get(&self, key: &str) -> Option<Pose> {
        self.poses.get(key).copied().flatten()
    }
}

/// Reads `frame_id qw qx qy qz tx ty tz` rows.
///
/// Non-finite values make the prediction absent. Quaternions within
/// [`QUATERNION_TOLERANCE`] of unit norm are renormalized; others are
/// rejected (absent, with a warning). With `keys`, unknown frame IDs are
/// skipped with a warning and IDs are stored in canonical form.
pub fn read_predictions(path: &Path, keys: Option<&FrameKeys>) -> Result<PredictionSet> {
    let text = read_text(path)?;
    let mut set = PredictionSet {
        method: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
        ..Default::default()
    };
    for l in text.lines() {
        if let Some(name) = l.trim().strip_prefix("# method:") {
            set.method = name.trim().to_string();
            break;
        }
    }
    let mut first_line: HashMap<String, usize> = HashMap::new();
    for (line, toks) in records(&text) {
        set.stats.lines += 1;
        if toks.len() != 8 {
            return Err(Error::parse(
                path,
                line,
                format!("expected frame_id qw qx qy qz tx ty tz, found {} fields", toks.len()),
            ));
        }
        let key = match keys {
            Some(k) => match k.canonical(toks[0]) {
                Some(c) => c.to_string(),
                None => {
                    set.stats.unknown_skipped += 1;
                    let msg = format!("{}:{line}: unknown frame `{}` skipped", path.display(), toks[0]);
                    log::warn!("{msg}");
                    set.warnings.push(msg);
                    continue;
                }
            },
            None => toks[0].to_string(),
        };
        if let Some(prev) = first_line.insert(key.clone(), line) {
            return Err(Error::parse(
                path,
                line,
                format!("duplicate frame `{}` (first on line {prev})", toks[0]),
            ));
        }
        let v = numbers(path, line, &toks[1..])?;
        let pose = if v.iter().any(|x| !x.is_finite()) {
            set.stats.non_finite += 1;
            None
        } else {
            let q = Quaternion::new(v[0], v[1], v[2], v[3]);
            let n = q.norm();
            if (n - 1.0).abs() > QUATERNION_TOLERANCE {
                set.stats.rejected_quaternions += 1;
                let msg = format!(
                    "{}:{line}: quaternion norm {n} outside 1 ± {QUATERNION_TOLERANCE}; prediction rejected",
                    path.display()
                );
                log::warn!("{msg}");
                set.warnings.push(msg);
                None
            } else {
                if n != 1.0 {
                    set.stats.renormalized += 1;
                }
                let q = UnitQuaternion::from_quaternion(q)?;
                Some(Pose::from_quaternion(&q, Vector3::new(v[4], v[5], v[6])))
            }
        };
        set.poses.insert(key, pose);
    }
    Ok(set)
}

/// Writes predictions with 9 significant digits; absent ones as `nan`.
pub fn write_predictions(path: &Path, method: &str, entries: &[(String, Option<Pose>)]) -> Result<()> {
    let mut out = format!("# method: {method}\n{PREDICTION_HEADER}\n");
    for (id, pose) in entries {
        out.push_str(id);
        match pose {
            Some(p) => {
                let q = p.quaternion().quaternion();
                let t = p.translation();
                for v in [q.w, q.x, q.y, q.z, t.x, t.y, t.z] {
                    let _ = write!(out, " {v:.8e}");
                }
            }
            None => out.push_str(" nan nan nan nan nan nan nan"),
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
