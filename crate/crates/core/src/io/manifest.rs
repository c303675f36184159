//! Scene manifests: a TOML file naming the reference scan and every
//! sequence's scan, trajectory, intrinsics and optional extras. Paths are
//! relative to the manifest.
//!
//! ```toml
//! scene_id = "scene01"
//! reference_model = "reference.ply"
//!
//! [[sequence]]
//! id = "seq01_02"
//! split = "test"                 # train | val | test
//! model = "seq01_02.ply"
//! trajectory = "seq01_02.txt"
//! intrinsics = { width = 640, height = 480, fx = 500.0, fy = 500.0, cx = 319.5, cy = 239.5 }
//! object_transforms = "seq01_02_objects.txt"   # optional
//! image_dir = "images/seq01_02"                # optional, <frame_id>.png
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::io::ply::read_ply;
use crate::io::poses::{read_object_transforms, read_trajectory};
use crate::mesh::SharedModel;
use crate::metrics::{FrameRecord, ObjectTransform};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidArgument(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntrinsicsEntry {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl From<&Intrinsics> for IntrinsicsEntry {
    fn from(k: &Intrinsics) -> Self {
        IntrinsicsEntry {
            width: k.width,
            height: k.height,
            fx: k.fx,
            fy: k.fy,
            cx: k.cx,
            cy: k.cy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub id: String,
    pub split: Split,
    pub model: PathBuf,
    pub trajectory: PathBuf,
    pub intrinsics: IntrinsicsEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_transforms: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneManifest {
    pub scene_id: String,
    pub reference_model: PathBuf,
    #[serde(default, rename = "sequence")]
    pub sequences: Vec<SequenceEntry>,
}

impl SceneManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: SceneManifest = toml::from_str(&text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            Error::parse(path, line, e.message().to_string())
        })?;
        m.sequences.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(w) = m.sequences.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::File {
                path: path.to_path_buf(),
                message: format!("duplicate sequence id `{}`", w[0].id),
            });
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self).map_err(|e| Error::File {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub id: String,
    pub split: Split,
    pub model: SharedModel,
    /// Content hash of `model`, used to key cached renderings.
    pub model_hash: String,
    pub intrinsics: Intrinsics,
    pub frames: Vec<(String, Pose)>,
    pub object_transforms: Vec<ObjectTransform>,
    pub image_dir: Option<PathBuf>,
}

impl Sequence {
    /// Frame records with predictions looked up by `predict(sequence, frame)`.
    pub fn records(&self, mut predict: impl FnMut(&str, &str) -> Option<Pose>) -> Vec<FrameRecord> {
        self.frames
            .iter()
            .map(|(id, pose)| FrameRecord::new(&self.id, id, *pose, self.intrinsics, predict(&self.id, id)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub manifest_path: PathBuf,
    pub reference: SharedModel,
    pub reference_hash: String,
    /// Sorted by sequence ID.
    pub sequences: Vec<Sequence>,
}

impl Scene {
    pub fn sequences_in<'a>(&'a self, splits: &'a [Split]) -> impl Iterator<Item = &'a Sequence> + 'a {
        self.sequences.iter().filter(move |s| splits.contains(&s.split))
    }

    /// All training poses with their qualified frame keys, in sequence order.
    pub fn training_poses(&self) -> Vec<(String, Pose)> {
        self.sequences_in(&[Split::Train])
            .flat_map(|s| {
                s.frames
                    .iter()
                    .map(move |(f, p)| (crate::io::poses::qualified(&s.id, f), *p))
            })
            .collect()
    }
}

/// Loads a manifest and everything it references. A model file referenced
/// several times is loaded once and shared.
pub fn load_scene(manifest_path: &Path) -> Result<Scene> {
    let manifest = SceneManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut models: HashMap<PathBuf, (SharedModel, String)> = HashMap::new();
    let mut load_model = |rel: &Path| -> Result<(SharedModel, String)> {
        let path = base.join(rel);
        if let Some(m) = models.get(&path) {
            return Ok(m.clone());
        }
        let model = Arc::new(read_ply(&path)?);
        let hash = model.content_hash();
        models.insert(path, (model.clone(), hash.clone()));
        Ok((model, hash))
    };
    let (reference, reference_hash) = load_model(&manifest.reference_model)?;
    let mut sequences = Vec::with_capacity(manifest.sequences.len());
    for entry in &manifest.sequences {
        let ctx = |e: Error| e.context(format!("sequence {}", entry.id));
        let (model, model_hash) = load_model(&entry.model).map_err(ctx)?;
        let k = &entry.intrinsics;
        let intrinsics = Intrinsics::new(k.width, k.height, k.fx, k.fy, k.cx, k.cy).map_err(|e| Error::File {
            path: manifest_path.to_path_buf(),
            message: format!("sequence {}: {e}", entry.id),
        })?;
        let frames = read_trajectory(&base.join(&entry.trajectory)).map_err(ctx)?;
        let object_transforms = match &entry.object_transforms {
            Some(p) => read_object_transforms(&base.join(p)).map_err(ctx)?,
            None => Vec::new(),
        };
        sequences.push(Sequence {
            id: entry.id.clone(),
            split: entry.split,
            model,
            model_hash,
            intrinsics,
            frames,
            object_transforms,
            image_dir: entry.image_dir.as_ref().map(|d| base.join(d)),
        });
    }
    Ok(Scene {
        id: manifest.scene_id,
        manifest_path: manifest_path.to_path_buf(),
        reference,
        reference_hash,
        sequences,
    })
}
