//! Edge-graph geodesic distances and the geodesic soft-label kernel.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cseb::{self, Tensor};
use crate::error::{CseError, Result};
use crate::mesh::{Mesh, MeshId};

/// Vertex adjacency weighted by Euclidean edge length; neighbor lists are
/// sorted by index.
#[derive(Clone, Debug)]
pub struct EdgeGraph {
    neighbors: Vec<Vec<(usize, f64)>>,
}

impl EdgeGraph {
    pub fn new(mesh: &Mesh) -> Self {
        let mut neighbors = vec![Vec::new(); mesh.num_vertices()];
        for (a, b) in mesh.edges() {
            let w = mesh.edge_length(a, b);
            neighbors[a].push((b, w));
            neighbors[b].push((a, w));
        }
        for n in &mut neighbors {
            n.sort_by_key(|&(j, _)| j);
        }
        Self { neighbors }
    }

    pub fn num_vertices(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.neighbors[v]
    }

    /// Shortest-path distances from `source`; vertices farther than
    /// `radius` are left at infinity.
    pub fn distances(&self, source: usize, radius: Option<f64>) -> Result<DistanceField> {
        let k = self.num_vertices();
        if source >= k {
            return Err(CseError::InvalidArgument(format!(
                "source vertex {source} out of range ({k} vertices)"
            )));
        }
        let limit = radius.unwrap_or(f64::INFINITY);
        let mut dist = vec![f64::INFINITY; k];
        let mut done = vec![false; k];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry {
            dist: 0.0,
            vertex: source,
        });
        while let Some(Entry { dist: d, vertex: v }) = heap.pop() {
            if done[v] {
                continue;
            }
            done[v] = true;
            for &(w, len) in &self.neighbors[v] {
                let nd = d + len;
                if nd < dist[w] && nd <= limit {
                    dist[w] = nd;
                    heap.push(Entry {
                        dist: nd,
                        vertex: w,
                    });
                }
            }
        }
        Ok(DistanceField {
            source,
            distances: dist,
            truncation_radius: radius,
        })
    }

    /// Shortest-path distance between two vertices; the search stops once
    /// `target` is settled.
    pub fn distance_between(&self, source: usize, target: usize) -> Result<f64> {
        let k = self.num_vertices();
        if source >= k || target >= k {
            return Err(CseError::InvalidArgument(format!(
                "vertex pair ({source}, {target}) out of range ({k} vertices)"
            )));
        }
        let mut dist = vec![f64::INFINITY; k];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Entry {
            dist: 0.0,
            vertex: source,
        });
        while let Some(Entry { dist: d, vertex: v }) = heap.pop() {
            if v == target {
                return Ok(d);
            }
            if d > dist[v] {
                continue;
            }
            for &(w, len) in &self.neighbors[v] {
                let nd = d + len;
                if nd < dist[w] {
                    dist[w] = nd;
                    heap.push(Entry {
                        dist: nd,
                        vertex: w,
                    });
                }
            }
        }
        Ok(f64::INFINITY)
    }
}

#[derive(PartialEq)]
struct Entry {
    dist: f64,
    vertex: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by vertex index
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Geodesic distances from one source. Unreached vertices hold infinity.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub source: usize,
    pub distances: Vec<f64>,
    pub truncation_radius: Option<f64>,
}

impl DistanceField {
    pub fn is_reached(&self, v: usize) -> bool {
        self.distances[v].is_finite()
    }

    /// Largest finite distance.
    pub fn eccentricity(&self) -> f64 {
        self.distances
            .iter()
            .copied()
            .filter(|d| d.is_finite())
            .fold(0.0, f64::max)
    }

    /// Index of the farthest reached vertex, smallest index on ties.
    pub fn farthest(&self) -> usize {
        let mut best = self.source;
        for (i, &d) in self.distances.iter().enumerate() {
            if d.is_finite() && d > self.distances[best] {
                best = i;
            }
        }
        best
    }
}

/// Dijkstra over the mesh edge graph, optionally truncated at `radius`.
pub fn dijkstra(mesh: &Mesh, source: usize, radius: Option<f64>) -> Result<DistanceField> {
    EdgeGraph::new(mesh).distances(source, radius)
}

/// Distance fields for several sources, in source order.
pub fn dijkstra_many(
    graph: &EdgeGraph,
    sources: &[usize],
    radius: Option<f64>,
) -> Result<Vec<DistanceField>> {
    sources
        .par_iter()
        .map(|&s| graph.distances(s, radius))
        .collect()
}

/// Approximate geodesic diameter by farthest-point sampling: start from
/// vertex 0 and repeatedly run Dijkstra from the vertex farthest from all
/// previous seeds, keeping the largest eccentricity seen.
pub fn approximate_diameter(mesh: &Mesh, samples: usize) -> f64 {
    let graph = EdgeGraph::new(mesh);
    let k = mesh.num_vertices();
    let mut nearest = vec![f64::INFINITY; k];
    let mut seed = 0usize;
    let mut diameter = 0.0f64;
    for _ in 0..samples.max(1).min(k) {
        let field = graph
            .distances(seed, None)
            .expect("seed is a valid vertex");
        diameter = diameter.max(field.eccentricity());
        for (n, d) in nearest.iter_mut().zip(&field.distances) {
            *n = n.min(*d);
        }
        // farthest from the current seed set; it also bounds the diameter
        let next = (0..k)
            .max_by(|&a, &b| nearest[a].total_cmp(&nearest[b]).then(b.cmp(&a)))
            .unwrap_or(0);
        if nearest[next] == 0.0 {
            break;
        }
        seed = next;
    }
    diameter
}

/// Number of farthest-point seeds used to estimate the diameter.
pub const DIAMETER_SAMPLES: usize = 64;

/// Target geodesic diameter of normalized meshes.
pub const NORMALIZED_DIAMETER: f64 = 2.5;

/// Uniformly rescale so the estimated geodesic diameter equals
/// `target_diameter`; returns the mesh and the applied scale.
pub fn normalize_mesh(mesh: &Mesh, target_diameter: f64) -> Result<(Mesh, f64)> {
    if !(target_diameter > 0.0) {
        return Err(CseError::InvalidArgument(format!(
            "target diameter must be positive, got {target_diameter}"
        )));
    }
    let d = approximate_diameter(mesh, DIAMETER_SAMPLES);
    let scale = target_diameter / d;
    Ok((mesh.scaled(scale)?, scale))
}

/// Shape of the soft-label kernel as a function of geodesic distance d.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `exp(-d / 2σ²)`
    #[default]
    Linear,
    /// `exp(-d² / 2σ²)`
    Squared,
}

impl Kernel {
    fn exponent(self, d: f64, sigma: f64) -> f64 {
        match self {
            Kernel::Linear => -d / (2.0 * sigma * sigma),
            Kernel::Squared => -d * d / (2.0 * sigma * sigma),
        }
    }

    /// Distance at which the exponent reaches -40. Weights beyond it are
    /// below the rounding of the normalizer and are dropped.
    pub fn cutoff(self, sigma: f64) -> f64 {
        match self {
            Kernel::Linear => 80.0 * sigma * sigma,
            Kernel::Squared => 80f64.sqrt() * sigma,
        }
    }
}

/// Normalized geodesic proximity weights around a center vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftLabelField {
    pub center: usize,
    pub sigma: f64,
    pub kernel: Kernel,
    pub weights: Vec<f64>,
    pub mesh: MeshId,
}

/// Turn a distance field into normalized kernel weights. Unreached
/// vertices get zero weight.
pub fn soft_labels_from_distances(
    field: &DistanceField,
    sigma: f64,
    kernel: Kernel,
    mesh: MeshId,
) -> Result<SoftLabelField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CseError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let mut weights: Vec<f64> = field
        .distances
        .iter()
        .map(|&d| {
            if d.is_finite() {
                kernel.exponent(d, sigma).exp()
            } else {
                0.0
            }
        })
        .collect();
    let z = crate::linalg::pairwise_sum(&weights);
    for w in &mut weights {
        *w /= z;
    }
    Ok(SoftLabelField {
        center: field.source,
        sigma,
        kernel,
        weights,
        mesh,
    })
}

/// Soft labels `g(q; k) ∝ exp(-d(q, k) / 2σ²)` normalized over all vertices,
/// computed from Dijkstra truncated where the exponent reaches -40. The
/// center's one-ring is always kept.
pub fn soft_labels(mesh: &Mesh, center: usize, sigma: f64) -> Result<SoftLabelField> {
    soft_labels_with(&EdgeGraph::new(mesh), mesh.id(), center, sigma, Kernel::Linear)
}

pub fn soft_labels_with(
    graph: &EdgeGraph,
    mesh: &MeshId,
    center: usize,
    sigma: f64,
    kernel: Kernel,
) -> Result<SoftLabelField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CseError::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if center >= graph.num_vertices() {
        return Err(CseError::InvalidArgument(format!(
            "center vertex {center} out of range ({} vertices)",
            graph.num_vertices()
        )));
    }
    let ring = graph.neighbors(center).iter().map(|&(_, l)| l).fold(0.0, f64::max);
    let field = graph.distances(center, Some(kernel.cutoff(sigma).max(ring)))?;
    soft_labels_from_distances(&field, sigma, kernel, mesh.clone())
}

type CacheKey = (MeshId, usize, u64, Kernel);

/// Memo of soft-label fields keyed by (mesh, center, σ, kernel).
#[derive(Debug)]
pub struct SoftLabelCache {
    graph: EdgeGraph,
    mesh: MeshId,
    fields: Mutex<HashMap<CacheKey, Arc<SoftLabelField>>>,
}

impl SoftLabelCache {
    pub fn new(mesh: &Mesh) -> Self {
        Self {
            graph: EdgeGraph::new(mesh),
            mesh: mesh.id().clone(),
            fields: Mutex::new(HashMap::new()),
        }
    }

    pub fn mesh(&self) -> &MeshId {
        &self.mesh
    }

    pub fn get(&self, center: usize, sigma: f64, kernel: Kernel) -> Result<Arc<SoftLabelField>> {
        let key = (self.mesh.clone(), center, sigma.to_bits(), kernel);
        if let Some(f) = self.fields.lock().expect("cache lock").get(&key) {
            return Ok(f.clone());
        }
        let field = Arc::new(soft_labels_with(
            &self.graph,
            &self.mesh,
            center,
            sigma,
            kernel,
        )?);
        self.fields
            .lock()
            .expect("cache lock")
            .insert(key, field.clone());
        Ok(field)
    }

    /// Fields for many centers, computed in parallel and returned in the
    /// order of `centers`.
    pub fn get_many(
        &self,
        centers: &[usize],
        sigma: f64,
        kernel: Kernel,
    ) -> Result<Vec<Arc<SoftLabelField>>> {
        centers
            .par_iter()
            .map(|&c| self.get(c, sigma, kernel))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.fields.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SoftLabelManifest {
    kind: String,
    mesh: MeshId,
    sigma: f64,
    kernel: Kernel,
    vertices: Vec<usize>,
}

/// Persist fields sharing one mesh, σ and kernel as an `n × K` tensor.
pub fn save_soft_labels(path: &Path, fields: &[SoftLabelField]) -> Result<()> {
    let first = fields
        .first()
        .ok_or_else(|| CseError::InvalidArgument("no soft-label fields to save".into()))?;
    let k = first.weights.len();
    if fields.iter().any(|f| {
        f.mesh != first.mesh || f.sigma != first.sigma || f.kernel != first.kernel || f.weights.len() != k
    }) {
        return Err(CseError::Mismatch(
            "soft-label fields differ in mesh, sigma or kernel".into(),
        ));
    }
    let data = fields.iter().flat_map(|f| f.weights.iter().copied()).collect();
    let manifest = SoftLabelManifest {
        kind: "softlabels".into(),
        mesh: first.mesh.clone(),
        sigma: first.sigma,
        kernel: first.kernel,
        vertices: fields.iter().map(|f| f.center).collect(),
    };
    cseb::write_artifact(path, &[Tensor::new(vec![fields.len(), k], data)?], &manifest)
}

pub fn load_soft_labels(path: &Path) -> Result<Vec<SoftLabelField>> {
    let (tensors, manifest): (_, SoftLabelManifest) = cseb::read_artifact(path)?;
    cseb::expect_kind(&manifest.kind, "softlabels")?;
    cseb::expect_count(&tensors, 1)?;
    let t = &tensors[0];
    let (n, k) = match t.dims[..] {
        [n, k] if n == manifest.vertices.len() => (n, k),
        _ => return Err(CseError::Container("soft-label tensor shape disagrees with manifest".into())),
    };
    Ok((0..n)
        .map(|i| SoftLabelField {
            center: manifest.vertices[i],
            sigma: manifest.sigma,
            kernel: manifest.kernel,
            weights: t.data[i * k..(i + 1) * k].to_vec(),
            mesh: manifest.mesh.clone(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    #[test]
    fn source_is_zero_and_strip_is_a_ruler() {
        let m = shapes::strip(6, 1.0);
        let f = dijkstra(&m, 0, None).unwrap();
        for i in 0..=6 {
            assert_eq!(f.distances[i], i as f64);
        }
        assert!(dijkstra(&m, 99, None).is_err());
    }

    #[test]
    fn truncation_marks_unreached() {
        let m = shapes::strip(6, 1.0);
        let f = dijkstra(&m, 0, Some(2.5)).unwrap();
        assert_eq!(f.distances[2], 2.0);
        assert!(!f.is_reached(3));
        let wide = dijkstra(&m, 0, Some(100.0)).unwrap();
        let full = dijkstra(&m, 0, None).unwrap();
        assert_eq!(wide.distances, full.distances);
    }

    #[test]
    fn three_vertex_kernel_values() {
        // right isosceles triangle: center 1 at the right angle, legs of length 1
        let m = Mesh::new(
            vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let g = soft_labels(&m, 1, 0.5f64.sqrt()).unwrap();
        let e = (-1.0f64).exp();
        let z = 1.0 + 2.0 * e;
        assert!((g.weights[0] - e / z).abs() < 1e-12);
        assert!((g.weights[1] - 1.0 / z).abs() < 1e-12);
        assert!((g.weights[2] - e / z).abs() < 1e-12);
        assert!((g.weights[1] - 0.5761).abs() < 1e-4);
        assert!((g.weights[0] - 0.2119).abs() < 1e-4);
    }

    #[test]
    fn tiny_sigma_is_one_hot() {
        let m = shapes::icosphere(2, 1.0);
        let (m, _) = normalize_mesh(&m, 1.0).unwrap();
        let g = soft_labels(&m, 7, 1e-4).unwrap();
        for (i, w) in g.weights.iter().enumerate() {
            let target = if i == 7 { 1.0 } else { 0.0 };
            assert!((w - target).abs() < 1e-9);
        }
    }

    #[test]
    fn sigma_must_be_positive() {
        let m = shapes::strip(3, 1.0);
        assert!(soft_labels(&m, 0, 0.0).is_err());
        assert!(soft_labels(&m, 0, -1.0).is_err());
    }

    #[test]
    fn squared_kernel_differs() {
        let m = shapes::strip(6, 1.0);
        let graph = EdgeGraph::new(&m);
        let lin = soft_labels_with(&graph, m.id(), 0, 1.0, Kernel::Linear).unwrap();
        let sq = soft_labels_with(&graph, m.id(), 0, 1.0, Kernel::Squared).unwrap();
        assert!(sq.weights[2] < lin.weights[2]);
    }

    #[test]
    fn cache_reuses_fields() {
        let m = shapes::icosphere(1, 1.0);
        let cache = SoftLabelCache::new(&m);
        let many = cache.get_many(&[3, 1, 3], 0.3, Kernel::Linear).unwrap();
        assert_eq!(many[0].center, 3);
        assert_eq!(many[1].center, 1);
        assert_eq!(cache.len(), 2);
        assert!(Arc::ptr_eq(&many[0], &cache.get(3, 0.3, Kernel::Linear).unwrap()));
    }

    #[test]
    fn soft_label_file_round_trip() {
        let m = shapes::icosphere(1, 1.0);
        let cache = SoftLabelCache::new(&m);
        let fields: Vec<SoftLabelField> = cache
            .get_many(&[0, 5], 0.4, Kernel::Linear)
            .unwrap()
            .into_iter()
            .map(|f| (*f).clone())
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.cseb");
        save_soft_labels(&path, &fields).unwrap();
        assert_eq!(load_soft_labels(&path).unwrap(), fields);
    }
}
