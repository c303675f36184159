//! 3D convex hull (quickhull) and its volume.

use std::collections::HashMap;

use nalgebra::Vector3;

#[derive(Debug, Clone, PartialEq)]
pub struct Hull {
    /// Outward-oriented triangles indexing the input points.
    pub faces: Vec<[usize; 3]>,
    pub volume: f64,
}

#[derive(Debug)]
struct Face {
    v: [usize; 3],
    normal: Vector3<f64>,
    offset: f64,
    outside: Vec<usize>,
    alive: bool,
}

impl Face {
    fn new(v: [usize; 3], pts: &[Vector3<f64>]) -> Face {
        let n = (pts[v[1]] - pts[v[0]]).cross(&(pts[v[2]] - pts[v[0]]));
        let len = n.norm();
        let normal = if len > 0.0 { n / len } else { n };
        Face {
            v,
            normal,
            offset: normal.dot(&pts[v[0]]),
            outside: Vec::new(),
            alive: true,
        }
    }

    fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Convex hull of `points`, or `None` when they do not span a volume
/// (fewer than 4 points, or all points within tolerance of a plane).
pub fn convex_hull(points: &[Vector3<f64>]) -> Option<Hull> {
    if points.len() < 4 {
        return None;
    }
    let scale = points
        .iter()
        .flat_map(|p| p.iter().map(|c| c.abs()))
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let eps = 1e-10 * scale;

    let simplex = initial_simplex(points, eps)?;
    let mut faces: Vec<Face> = Vec::new();
    let interior = simplex.iter().map(|&i| points[i]).sum::<Vector3<f64>>() / 4.0;
    for skip in 0..4 {
        let mut v: Vec<usize> = (0..4).filter(|&i| i != skip).map(|i| simplex[i]).collect();
        let mut f = Face::new([v[0], v[1], v[2]], points);
        if f.distance(&interior) > 0.0 {
            v.swap(1, 2);
            f = Face::new([v[0], v[1], v[2]], points);
        }
        faces.push(f);
    }
    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for (fi, f) in faces.iter().enumerate() {
        add_edges(&mut edges, f.v, fi);
    }
    for (i, p) in points.iter().enumerate() {
        if simplex.contains(&i) {
            continue;
        }
        if let Some(f) = faces.iter_mut().find(|f| f.distance(p) > eps) {
            f.outside.push(i);
        }
    }

    while let Some(fi) = faces.iter().position(|f| f.alive && !f.outside.is_empty()) {
        let eye = *faces[fi]
            .outside
            .iter()
            .max_by(|&&a, &&b| {
                faces[fi]
                    .distance(&points[a])
                    .total_cmp(&faces[fi].distance(&points[b]))
                    .then(b.cmp(&a))
            })
            .unwrap();
        let eye_p = points[eye];

        // Visible region grown across edges from the seed face.
        let mut visible = vec![fi];
        let mut is_visible: HashMap<usize, bool> = HashMap::from([(fi, true)]);
        let mut horizon: Vec<(usize, usize)> = Vec::new();
        let mut stack = vec![fi];
        while let Some(f) = stack.pop() {
            let v = faces[f].v;
            for k in 0..3 {
                let (a, b) = (v[k], v[(k + 1) % 3]);
                let nb = edges[&(b, a)];
                let vis = *is_visible.entry(nb).or_insert_with(|| faces[nb].distance(&eye_p) > eps);
                if vis {
                    if !visible.contains(&nb) {
                        visible.push(nb);
                        stack.push(nb);
                    }
                } else {
                    horizon.push((a, b));
                }
            }
        }

        let mut orphans = Vec::new();
        for &f in &visible {
            faces[f].alive = false;
            orphans.append(&mut faces[f].outside);
            let v = faces[f].v;
            for k in 0..3 {
                edges.remove(&(v[k], v[(k + 1) % 3]));
            }
        }
        let first_new = faces.len();
        for (a, b) in horizon {
            let f = Face::new([a, b, eye], points);
            add_edges(&mut edges, f.v, faces.len());
            faces.push(f);
        }
        for p in orphans {
            if p == eye {
                continue;
            }
            if let Some(f) = faces[first_new..].iter_mut().find(|f| f.distance(&points[p]) > eps) {
                f.outside.push(p);
            }
        }
    }

    let faces: Vec<[usize; 3]> = faces.into_iter().filter(|f| f.alive).map(|f| f.v).collect();
    let origin = points[faces[0][0]];
    let volume = faces
        .iter()
        .map(|f| {
            let (a, b, c) = (points[f[0]] - origin, points[f[1]] - origin, points[f[2]] - origin);
            a.dot(&b.cross(&c))
        })
        .sum::<f64>()
        / 6.0;
    Some(Hull { faces, volume })
}

fn add_edges(edges: &mut HashMap<(usize, usize), usize>, v: [usize; 3], face: usize) {
    for k in 0..3 {
        edges.insert((v[k], v[(k + 1) % 3]), face);
    }
}

fn initial_simplex(points: &[Vector3<f64>], eps: f64) -> Option<[usize; 4]> {
    // Farthest pair among the axis extremes.
    let mut extremes = Vec::with_capacity(6);
    for axis in 0..3 {
        let by = |a: &&Vector3<f64>, b: &&Vector3<f64>| a[axis].total_cmp(&b[axis]);
        let (lo, _) = points.iter().enumerate().min_by(|a, b| by(&a.1, &b.1))?;
        let (hi, _) = points.iter().enumerate().max_by(|a, b| by(&a.1, &b.1))?;
        extremes.push(lo);
        extremes.push(hi);
    }
    let mut best = (0.0, 0, 0);
    for &i in &extremes {
        for &j in &extremes {
            let d = (points[i] - points[j]).norm_squared();
            if d > best.0 {
                best = (d, i, j);
            }
        }
    }
    let (d2, a, b) = best;
    if d2.sqrt() <= eps {
        return None;
    }
    let ab = (points[b] - points[a]).normalize();
    let (c, dist_c) = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p - points[a]).cross(&ab).norm()))
        .max_by(|x, y| x.1.total_cmp(&y.1))?;
    if dist_c <= eps {
        return None;
    }
    let n = (points[b] - points[a]).cross(&(points[c] - points[a])).normalize();
    let (d, dist_d) = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, n.dot(&(p - points[a])).abs()))
        .max_by(|x, y| x.1.total_cmp(&y.1))?;
    if dist_d <= eps {
        return None;
    }
    Some([a, b, c, d])
}
