//! Procedural scenes used by tests, the acceptance suite and the
//! `synth` subcommand: quads, cubes and a furnished room with labeled boxes.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Pose, Quaternion, UnitQuaternion};
use crate::mesh::SceneModel;

/// Fronto-parallel (constant z) quad centered at `center` with half extents
/// `half_x`, `half_y`, two triangles.
pub fn quad(center: Vector3<f64>, half_x: f64, half_y: f64, color: [u8; 3], label: u16) -> SceneModel {
    grid_quad(center, half_x, half_y, 1, color, label)
}

/// Fronto-parallel quad tessellated into `n × n` cells.
pub fn grid_quad(center: Vector3<f64>, half_x: f64, half_y: f64, n: u32, color: [u8; 3], label: u16) -> SceneModel {
    grid_patch(
        center - Vector3::new(half_x, half_y, 0.0),
        Vector3::new(2.0 * half_x, 0.0, 0.0),
        Vector3::new(0.0, 2.0 * half_y, 0.0),
        n,
        n,
        |_, _| color,
        label,
    )
}

/// Planar patch `origin + s·edge_u + t·edge_v`, `s, t ∈ [0, 1]`, tessellated
/// into `nu × nv` cells with per-vertex colors from `color(i, j)`.
pub fn grid_patch(
    origin: Vector3<f64>,
    edge_u: Vector3<f64>,
    edge_v: Vector3<f64>,
    nu: u32,
    nv: u32,
    color: impl Fn(u32, u32) -> [u8; 3],
    label: u16,
) -> SceneModel {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    for j in 0..=nv {
        for i in 0..=nu {
            let s = i as f64 / nu as f64;
            let t = j as f64 / nv as f64;
            vertices.push(origin + edge_u * s + edge_v * t);
            colors.push(color(i, j));
        }
    }
    let stride = nu + 1;
    let mut triangles = Vec::new();
    for j in 0..nv {
        for i in 0..nu {
            let a = j * stride + i;
            let b = a + 1;
            let c = a + stride;
            let d = c + 1;
            triangles.push([a, b, d]);
            triangles.push([a, d, c]);
        }
    }
    let labels = vec![label; vertices.len()];
    SceneModel::new(vertices, colors, labels, triangles).expect("grid patch is well formed")
}

/// Axis-aligned box with the given center and half extents, each face
/// tessellated into `n × n` cells.
pub fn box_mesh(
    center: Vector3<f64>,
    half: Vector3<f64>,
    n: u32,
    color: impl Fn(u32, u32, usize) -> [u8; 3],
    label: u16,
) -> SceneModel {
    let mut m = SceneModel::empty();
    let (hx, hy, hz) = (half.x, half.y, half.z);
    let faces = [
        (
            Vector3::new(-hx, -hy, -hz),
            Vector3::new(2.0 * hx, 0.0, 0.0),
            Vector3::new(0.0, 2.0 * hy, 0.0),
        ),
        (
            Vector3::new(-hx, -hy, hz),
            Vector3::new(2.0 * hx, 0.0, 0.0),
            Vector3::new(0.0, 2.0 * hy, 0.0),
        ),
        (
            Vector3::new(-hx, -hy, -hz),
            Vector3::new(2.0 * hx, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 2.0 * hz),
        ),
        (
            Vector3::new(-hx, hy, -hz),
            Vector3::new(2.0 * hx, 0.0, 0.0),
            Vector3::new(0.0, 0.0, 2.0 * hz),
        ),
        (
            Vector3::new(-hx, -hy, -hz),
            Vector3::new(0.0, 2.0 * hy, 0.0),
            Vector3::new(0.0, 0.0, 2.0 * hz),
        ),
        (
            Vector3::new(hx, -hy, -hz),
            Vector3::new(0.0, 2.0 * hy, 0.0),
            Vector3::new(0.0, 0.0, 2.0 * hz),
        ),
    ];
    for (f, (o, u, v)) in faces.iter().enumerate() {
        m.append(&grid_patch(center + o, *u, *v, n, n, |i, j| color(i, j, f), label));
    }
    m
}

/// Unit cube centered at the origin, 12 triangles.
pub fn unit_cube(color: [u8; 3], label: u16) -> SceneModel {
    box_mesh(Vector3::zeros(), Vector3::repeat(0.5), 1, |_, _, _| color, label)
}

/// Camera-to-world pose at `eye` looking at `target`, with camera y pointing
/// away from `up` (x right, y down, z forward).
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>, up: &Vector3<f64>) -> Pose {
    let z = (target - eye).normalize();
    let mut x = z.cross(up);
    if x.norm() < 1e-9 {
        x = z.cross(&Vector3::new(1.0, 0.0, 0.0));
    }
    let x = x.normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_columns(&[x, y, z]);
    Pose::new(r, *eye).unwrap_or_else(|_| Pose::from_approximate(r, *eye, 1e-6).expect("look_at basis is orthonormal"))
}

/// A rigid perturbation: uniform per-axis translation noise in
/// `[-trans, trans]` meters and a rotation about a random axis by an angle
/// uniform in `[-rot_deg, rot_deg]`, applied on the camera side.
pub fn perturb(pose: &Pose, trans: f64, rot_deg: f64, rng: &mut impl Rng) -> Pose {
    let axis = random_unit_vector(rng);
    let angle = rng.gen_range(-rot_deg..=rot_deg).to_radians();
    let dt = Vector3::new(
        rng.gen_range(-trans..=trans),
        rng.gen_range(-trans..=trans),
        rng.gen_range(-trans..=trans),
    );
    let rot = Pose::from_axis_angle(&axis, angle, Vector3::zeros());
    let moved = pose.compose(&rot);
    Pose::new(*moved.rotation(), moved.translation() + dt).unwrap_or(moved)
}

pub fn random_unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

pub fn random_rotation(rng: &mut impl Rng) -> UnitQuaternion {
    loop {
        let q = Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 1e-3 && n <= 1.0 {
            return UnitQuaternion::from_quaternion(q).expect("nonzero quaternion");
        }
    }
}

/// Label of the room shell (walls, floor, ceiling).
pub const ROOM_LABEL: u16 = 1;
/// Labels of the three furniture boxes.
pub const BOX_LABELS: [u16; 3] = [2, 3, 4];

/// Closed room of 6 × 5 × 3 m (z up) with checker-textured walls and three
/// labeled boxes, about 5k triangles.
#[derive(Debug, Clone)]
pub struct SyntheticRoom {
    pub reference: SceneModel,
    pub half_extent: Vector3<f64>,
    pub box_centers: [Vector3<f64>; 3],
    pub box_halves: [Vector3<f64>; 3],
}

impl SyntheticRoom {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let half_extent = Vector3::new(3.0, 2.5, 1.5);
        let center = Vector3::new(0.0, 0.0, 1.5);
        let jitter: Vec<u8> = (0..4096).map(|_| rng.gen_range(0..40)).collect();
        let shell_color = move |i: u32, j: u32, f: usize| {
            let n = jitter[((i * 131 + j * 17 + f as u32 * 1031) % 4096) as usize];
            let base: [u8; 3] = match f {
                0 => [150, 120, 90],
                1 => [220, 220, 210],
                2 => [180, 190, 160],
                3 => [160, 170, 200],
                4 => [200, 160, 160],
                _ => [170, 200, 190],
            };
            let dark = (i / 2 + j / 2).is_multiple_of(2);
            base.map(|c| {
                let c = if dark { c / 2 } else { c };
                c.saturating_add(n)
            })
        };
        let mut reference = box_mesh(center, half_extent, 20, shell_color, ROOM_LABEL);
        let box_centers = [
            Vector3::new(1.6, 1.1, 0.4),
            Vector3::new(-1.3, -1.0, 0.5),
            Vector3::new(0.6, -1.5, 0.3),
        ];
        let box_halves = [
            Vector3::new(0.4, 0.4, 0.4),
            Vector3::new(0.5, 0.3, 0.5),
            Vector3::new(0.3, 0.3, 0.3),
        ];
        let palettes = [[200u8, 40, 40], [40, 160, 60], [50, 70, 210]];
        for b in 0..3 {
            let pal = palettes[b];
            let colour = move |i: u32, j: u32, f: usize| {
                let k = ((i + j + f as u32) % 3) as u8;
                pal.map(|c| c.saturating_sub(k * 30))
            };
            reference.append(&box_mesh(box_centers[b], box_halves[b], 2, colour, BOX_LABELS[b]));
        }
        SyntheticRoom {
            reference,
            half_extent,
            box_centers,
            box_halves,
        }
    }

    /// Rescan in which box `which` (0..3) has been moved rigidly by
    /// `transform` (world frame). Returns the model and the object transform
    /// from the reference placement to the rescan placement.
    pub fn rescan_with_moved_box(&self, which: usize, transform: &Pose) -> (SceneModel, u16, Pose) {
        let label = BOX_LABELS[which];
        (self.reference.with_instance_moved(label, transform), label, *transform)
    }

    /// Random camera poses inside the room, looking at random points on the
    /// lower part of the walls or the furniture.
    pub fn random_poses(&self, n: usize, seed: u64) -> Vec<Pose> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.random_pose(&mut rng)).collect()
    }

    pub fn random_pose(&self, rng: &mut impl Rng) -> Pose {
        loop {
            let eye = Vector3::new(
                rng.gen_range(-2.2..2.2),
                rng.gen_range(-1.8..1.8),
                rng.gen_range(1.1..2.0),
            );
            let inside_box = self
                .box_centers
                .iter()
                .zip(&self.box_halves)
                .any(|(c, h)| (eye - c).iter().zip(h.iter()).all(|(d, hh)| d.abs() < hh + 0.3));
            if inside_box {
                continue;
            }
            let target = Vector3::new(
                rng.gen_range(-2.8..2.8),
                rng.gen_range(-2.3..2.3),
                rng.gen_range(0.0..1.5),
            );
            if (target - eye).norm() < 1.0 {
                continue;
            }
            return look_at(&eye, &target, &Vector3::new(0.0, 0.0, 1.0));
        }
    }

    /// A smooth walk through the room: `n` consecutive camera poses along a
    /// closed loop, looking roughly towards the room center.
    pub fn trajectory(&self, n: usize, phase: f64) -> Vec<Pose> {
        (0..n)
            .map(|i| {
                let a = phase + i as f64 / n as f64 * std::f64::consts::TAU;
                let eye = Vector3::new(1.9 * a.cos(), 1.4 * a.sin(), 1.5 + 0.2 * (3.0 * a).sin());
                let target = Vector3::new(-0.8 * a.cos(), -0.6 * a.sin(), 0.6);
                look_at(&eye, &target, &Vector3::new(0.0, 0.0, 1.0))
            })
            .collect()
    }
}
