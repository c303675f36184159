//! Triangle meshes with per-vertex color and instance labels.

use std::sync::Arc;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::Pose;

/// A scanned scene: triangle mesh in the model (world) frame with one RGB
/// color and one instance ID per vertex. Instance `0` is reserved for
/// "no label".
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SceneModel {
    vertices: Vec<Vector3<f64>>,
    colors: Vec<[u8; 3]>,
    labels: Vec<u16>,
    triangles: Vec<[u32; 3]>,
}

pub type SharedModel = Arc<SceneModel>;

impl SceneModel {
    pub fn new(
        vertices: Vec<Vector3<f64>>,
        colors: Vec<[u8; 3]>,
        labels: Vec<u16>,
        triangles: Vec<[u32; 3]>,
    ) -> Result<Self> {
        if colors.len() != vertices.len() || labels.len() != vertices.len() {
            return Err(Error::InvalidMesh(format!(
                "{} vertices but {} colors and {} labels",
                vertices.len(),
                colors.len(),
                labels.len()
            )));
        }
        if let Some((i, v)) = vertices
            .iter()
            .enumerate()
            .find(|(_, v)| !v.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!(
                "vertex {i} has non-finite coordinates {v:?}"
            )));
        }
        let n = vertices.len() as u32;
        if let Some((i, t)) = triangles
            .iter()
            .enumerate()
            .find(|(_, t)| t.iter().any(|&idx| idx >= n))
        {
            return Err(Error::InvalidMesh(format!(
                "triangle {i} references vertex {:?} but only {n} vertices exist",
                t
            )));
        }
        Ok(SceneModel {
            vertices,
            colors,
            labels,
            triangles,
        })
    }

    pub fn empty() -> Self {
        SceneModel::default()
    }

    pub fn vertices(&self) -> &[Vector3<f64>] {
        &self.vertices
    }

    pub fn colors(&self) -> &[[u8; 3]] {
        &self.colors
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Copy of the model with every vertex mapped through `pose`.
    pub fn transformed(&self, pose: &Pose) -> SceneModel {
        SceneModel {
            vertices: self.vertices.iter().map(|v| pose.transform_point(v)).collect(),
            ..self.clone()
        }
    }

    /// Copy of the model where the vertices carrying `label` are mapped
    /// through `pose` (a rigid move of one object instance).
    pub fn with_instance_moved(&self, label: u16, pose: &Pose) -> SceneModel {
        let vertices = self
            .vertices
            .iter()
            .zip(&self.labels)
            .map(|(v, l)| if *l == label { pose.transform_point(v) } else { *v })
            .collect();
        SceneModel {
            vertices,
            ..self.clone()
        }
    }

    /// Appends `other`, re-indexing its triangles.
    pub fn append(&mut self, other: &SceneModel) {
        let offset = self.vertices.len() as u32;
        self.vertices.extend_from_slice(&other.vertices);
        self.colors.extend_from_slice(&other.colors);
        self.labels.extend_from_slice(&other.labels);
        self.triangles.extend(
            other
                .triangles
                .iter()
                .map(|t| [t[0] + offset, t[1] + offset, t[2] + offset]),
        );
    }

    /// Distinct instance IDs present on vertices, ascending, without 0.
    pub fn instance_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.labels.iter().copied().filter(|l| *l != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// SHA-256 over the exact vertex, color, label and index data.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v.iter() {
                h.update(c.to_bits().to_le_bytes());
            }
        }
        for c in &self.colors {
            h.update(c);
        }
        for l in &self.labels {
            h.update(l.to_le_bytes());
        }
        h.update((self.triangles.len() as u64).to_le_bytes());
        for t in &self.triangles {
            for i in t {
                h.update(i.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}
