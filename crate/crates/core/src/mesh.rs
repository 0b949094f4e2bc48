//! Triangle meshes, vertex symmetries and sparse correspondences.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CseError, Result};

pub type Point3 = [f64; 3];

/// Faces with area below this fraction of the squared bounding-box
/// diagonal are rejected as degenerate.
const DEGENERATE_AREA: f64 = 1e-12;

/// Grid used to quantize coordinates before hashing.
const HASH_GRID: f64 = 1e-6;

/// Content hash of a mesh: SHA-256 over vertex coordinates quantized to a
/// 1e-6 grid and the face index list, hex encoded (128 bits kept).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeshId(pub String);

impl fmt::Display for MeshId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// A validated, connected triangle mesh.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Point3>,
    faces: Vec<[usize; 3]>,
    face_areas: Vec<f64>,
    face_normals: Vec<Point3>,
    id: MeshId,
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn cross(a: Point3, b: Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm(a: Point3) -> f64 {
    dot(a, a).sqrt()
}

/// Area and unit normal of the triangle (x1, x2, x3), using the edge
/// vectors b1 = x3 - x2 and b2 = x1 - x3.
pub(crate) fn triangle_area_normal(x1: Point3, x2: Point3, x3: Point3) -> (f64, Point3) {
    let b1 = sub(x3, x2);
    let b2 = sub(x1, x3);
    let c = cross(b1, b2);
    let twice_area = norm(c);
    let area = 0.5 * twice_area;
    if twice_area > 0.0 {
        (area, [c[0] / twice_area, c[1] / twice_area, c[2] / twice_area])
    } else {
        (area, [0.0; 3])
    }
}

impl Mesh {
    /// Build a mesh, validating indices, face degeneracy and edge-graph
    /// connectivity.
    pub fn new(vertices: Vec<Point3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || faces.is_empty() {
            return Err(CseError::EmptyMesh);
        }
        if let Some((i, _)) = vertices
            .iter()
            .enumerate()
            .find(|(_, v)| v.iter().any(|c| !c.is_finite()))
        {
            return Err(CseError::NonFinite(format!("vertex {i}")));
        }
        let k = vertices.len();
        for (f, tri) in faces.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= k) {
                return Err(CseError::InvalidArgument(format!(
                    "face {f} references vertex {bad} but mesh has {k} vertices"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(CseError::DegenerateFace { face: f });
            }
        }

        let diag = bbox_diagonal(&vertices);
        let min_area = DEGENERATE_AREA * (diag * diag).max(f64::MIN_POSITIVE);
        let mut face_areas = Vec::with_capacity(faces.len());
        let mut face_normals = Vec::with_capacity(faces.len());
        for (f, tri) in faces.iter().enumerate() {
            let (area, n) =
                triangle_area_normal(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
            if !(area > min_area) {
                return Err(CseError::DegenerateFace { face: f });
            }
            face_areas.push(area);
            face_normals.push(n);
        }

        let components = count_components(k, &faces);
        if components != 1 {
            return Err(CseError::Disconnected { components });
        }

        let id = hash_mesh(&vertices, &faces);
        Ok(Self {
            vertices,
            faces,
            face_areas,
            face_normals,
            id,
        })
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_areas(&self) -> &[f64] {
        &self.face_areas
    }

    pub fn face_normals(&self) -> &[Point3] {
        &self.face_normals
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_faces(&self) -> usize {
        self.faces.len()
    }

    pub fn id(&self) -> &MeshId {
        &self.id
    }

    pub fn total_area(&self) -> f64 {
        self.face_areas.iter().sum()
    }

    /// Copy with every vertex multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(CseError::InvalidArgument(format!(
                "scale must be positive, got {s}"
            )));
        }
        let vertices = self
            .vertices
            .iter()
            .map(|v| [v[0] * s, v[1] * s, v[2] * s])
            .collect();
        Self::new(vertices, self.faces.clone())
    }

    /// Relabel vertices: vertex `i` of the result is vertex `order[i]` of
    /// `self`. Faces are carried along in the same order.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let k = self.num_vertices();
        if order.len() != k {
            return Err(CseError::LengthMismatch {
                what: "vertex permutation",
                expected: k,
                got: order.len(),
            });
        }
        let mut inverse = vec![usize::MAX; k];
        for (new, &old) in order.iter().enumerate() {
            if old >= k || inverse[old] != usize::MAX {
                return Err(CseError::InvalidArgument(
                    "vertex order is not a permutation".into(),
                ));
            }
            inverse[old] = new;
        }
        let vertices = order.iter().map(|&old| self.vertices[old]).collect();
        let faces = self
            .faces
            .iter()
            .map(|t| [inverse[t[0]], inverse[t[1]], inverse[t[2]]])
            .collect();
        Self::new(vertices, faces)
    }

    /// Copy with vertices replaced; faces are kept.
    pub fn with_vertices(&self, vertices: Vec<Point3>) -> Result<Self> {
        if vertices.len() != self.num_vertices() {
            return Err(CseError::LengthMismatch {
                what: "vertex list",
                expected: self.num_vertices(),
                got: vertices.len(),
            });
        }
        Self::new(vertices, self.faces.clone())
    }

    /// Uniformly rescale so the total surface area equals `target_area`.
    pub fn with_total_area(&self, target_area: f64) -> Result<(Self, f64)> {
        let s = (target_area / self.total_area()).sqrt();
        Ok((self.scaled(s)?, s))
    }

    /// Sorted, deduplicated undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut edges: Vec<(usize, usize)> = self
            .faces
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| if a < b { (a, b) } else { (b, a) })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges
    }

    pub fn edge_length(&self, i: usize, j: usize) -> f64 {
        norm(sub(self.vertices[i], self.vertices[j]))
    }
}

impl PartialEq for Mesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.faces == other.faces
    }
}

fn bbox_diagonal(vertices: &[Point3]) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for v in vertices {
        for c in 0..3 {
            lo[c] = lo[c].min(v[c]);
            hi[c] = hi[c].max(v[c]);
        }
    }
    norm(sub(hi, lo))
}

/// Number of connected components of the edge graph, counting vertices not
/// referenced by any face as their own components.
pub(crate) fn count_components(k: usize, faces: &[[usize; 3]]) -> usize {
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for t in faces {
        for (a, b) in [(t[0], t[1]), (t[1], t[2])] {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
    }
    (0..k).filter(|&i| find(&mut parent, i) == i).count()
}

fn hash_mesh(vertices: &[Point3], faces: &[[usize; 3]]) -> MeshId {
    let mut h = Sha256::new();
    h.update(b"csegeo-mesh-v1");
    h.update((vertices.len() as u64).to_le_bytes());
    h.update((faces.len() as u64).to_le_bytes());
    for v in vertices {
        for c in v {
            let q = (c / HASH_GRID).round() as i64;
            h.update(q.to_le_bytes());
        }
    }
    for t in faces {
        for &i in t {
            h.update((i as u64).to_le_bytes());
        }
    }
    let digest = h.finalize();
    MeshId(digest[..16].iter().map(|b| format!("{b:02x}")).collect())
}

/// Involutive vertex pairing of a mesh with its mirror image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymmetryMap {
    pairing: Vec<usize>,
    mesh: MeshId,
}

impl SymmetryMap {
    pub fn new(mesh: &Mesh, pairing: Vec<usize>) -> Result<Self> {
        let k = mesh.num_vertices();
        if pairing.len() != k {
            return Err(CseError::LengthMismatch {
                what: "symmetry pairing",
                expected: k,
                got: pairing.len(),
            });
        }
        for (i, &j) in pairing.iter().enumerate() {
            if j >= k || pairing[j] != i {
                return Err(CseError::InvalidArgument(format!(
                    "symmetry pairing is not an involution at vertex {i}"
                )));
            }
        }
        Ok(Self {
            pairing,
            mesh: mesh.id().clone(),
        })
    }

    pub fn pairing(&self) -> &[usize] {
        &self.pairing
    }

    pub fn mesh(&self) -> &MeshId {
        &self.mesh
    }

    /// JSON form shared with correspondence sets: each vertex paired with
    /// its mirror, source and destination both naming the mesh.
    pub fn to_correspondences(&self) -> CorrespondenceSet {
        CorrespondenceSet {
            src_mesh: self.mesh.clone(),
            dst_mesh: self.mesh.clone(),
            pairs: self.pairing.iter().enumerate().map(|(i, &j)| [i, j]).collect(),
        }
    }

    pub fn from_correspondences(mesh: &Mesh, set: &CorrespondenceSet) -> Result<Self> {
        if &set.src_mesh != mesh.id() || &set.dst_mesh != mesh.id() {
            return Err(CseError::Mismatch(format!(
                "symmetry map is bound to {}/{}, mesh is {}",
                set.src_mesh,
                set.dst_mesh,
                mesh.id()
            )));
        }
        let k = mesh.num_vertices();
        let mut pairing = vec![usize::MAX; k];
        for &[a, b] in &set.pairs {
            if a >= k || b >= k {
                return Err(CseError::InvalidArgument(format!(
                    "symmetry pair ({a}, {b}) out of range"
                )));
            }
            pairing[a] = b;
        }
        if pairing.contains(&usize::MAX) {
            return Err(CseError::InvalidArgument(
                "symmetry map does not cover every vertex".into(),
            ));
        }
        Self::new(mesh, pairing)
    }
}

/// Sparse `(src_vertex, dst_vertex)` correspondences between two meshes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub src_mesh: MeshId,
    pub dst_mesh: MeshId,
    pub pairs: Vec<[usize; 2]>,
}

impl CorrespondenceSet {
    pub fn new(src: &Mesh, dst: &Mesh, pairs: Vec<[usize; 2]>) -> Result<Self> {
        let set = Self {
            src_mesh: src.id().clone(),
            dst_mesh: dst.id().clone(),
            pairs,
        };
        set.validate(src, dst)?;
        Ok(set)
    }

    /// Check hashes, index ranges, and that no source vertex repeats.
    pub fn validate(&self, src: &Mesh, dst: &Mesh) -> Result<()> {
        if &self.src_mesh != src.id() || &self.dst_mesh != dst.id() {
            return Err(CseError::Mismatch(format!(
                "correspondences bound to {} -> {}, meshes are {} -> {}",
                self.src_mesh,
                self.dst_mesh,
                src.id(),
                dst.id()
            )));
        }
        let mut seen = HashSet::new();
        for &[a, b] in &self.pairs {
            if a >= src.num_vertices() || b >= dst.num_vertices() {
                return Err(CseError::InvalidArgument(format!(
                    "correspondence ({a}, {b}) out of range"
                )));
            }
            if !seen.insert(a) {
                return Err(CseError::InvalidArgument(format!(
                    "duplicate source vertex {a} in correspondences"
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
