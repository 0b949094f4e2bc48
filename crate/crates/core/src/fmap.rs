//! Functional maps between spectral bases, point-map decoding and the
//! multi-scale ZoomOut refinement with symmetry and cycle penalties.

use std::path::Path;

use faer::linalg::solvers::Solve;
use faer::{Mat, MatRef, Side};
use log::{debug, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cseb::{self, Tensor};
use crate::error::{CseError, Result};
use crate::lbo::{build_operators, eigenbasis, SpectralBasis};
use crate::linalg::{all_finite, frobenius, matmul_nn, matmul_nt, matmul_tn, spectral_norm};
use crate::mesh::{CorrespondenceSet, Mesh, MeshId};

/// `C` maps spectral coefficients on `src` to coefficients on `dst`:
/// `r̂′ = C r̂`. Shape is `M′ × M`.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalMap {
    pub c: Mat<f64>,
    pub src: MeshId,
    pub dst: MeshId,
}

impl FunctionalMap {
    pub fn identity(basis: &SpectralBasis, m: usize) -> Self {
        Self {
            c: Mat::identity(m, m),
            src: basis.mesh.clone(),
            dst: basis.mesh.clone(),
        }
    }

    /// `(dst order, src order)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.c.nrows(), self.c.ncols())
    }

    /// `self ∘ first`: apply `first`, then `self`.
    pub fn compose(&self, first: &FunctionalMap) -> Result<FunctionalMap> {
        if first.dst != self.src || first.c.nrows() != self.c.ncols() {
            return Err(CseError::Mismatch(
                "functional maps do not chain".into(),
            ));
        }
        Ok(FunctionalMap {
            c: matmul_nn(self.c.as_ref(), first.c.as_ref()),
            src: first.src.clone(),
            dst: self.dst.clone(),
        })
    }

    pub fn check_bases(&self, src: &SpectralBasis, dst: &SpectralBasis) -> Result<()> {
        if self.src != src.mesh || self.dst != dst.mesh {
            return Err(CseError::Mismatch(format!(
                "functional map {} -> {} applied to bases {} -> {}",
                self.src, self.dst, src.mesh, dst.mesh
            )));
        }
        if self.c.ncols() > src.order() || self.c.nrows() > dst.order() {
            return Err(CseError::Mismatch(format!(
                "functional map of shape {:?} exceeds basis orders {} -> {}",
                self.shape(),
                src.order(),
                dst.order()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = MapManifest {
            kind: "fmap".into(),
            src_mesh: self.src.clone(),
            dst_mesh: self.dst.clone(),
            rows: self.c.nrows(),
            cols: self.c.ncols(),
        };
        cseb::write_artifact(path, &[Tensor::matrix(self.c.as_ref())], &manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, manifest): (_, MapManifest) = cseb::read_artifact(path)?;
        cseb::expect_kind(&manifest.kind, "fmap")?;
        cseb::expect_count(&tensors, 1)?;
        let c = tensors[0].to_matrix()?;
        if (c.nrows(), c.ncols()) != (manifest.rows, manifest.cols) {
            return Err(CseError::Container("functional map shape disagrees with manifest".into()));
        }
        Ok(Self {
            c,
            src: manifest.src_mesh,
            dst: manifest.dst_mesh,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct MapManifest {
    kind: String,
    src_mesh: MeshId,
    dst_mesh: MeshId,
    rows: usize,
    cols: usize,
}

/// Vertex correspondence as a row selection: destination vertex `i`
/// pulls functions from source vertex `assignment[i]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointMap {
    pub src_mesh: MeshId,
    pub dst_mesh: MeshId,
    pub assignment: Vec<usize>,
}

impl PointMap {
    pub fn identity(mesh: &MeshId, k: usize) -> Self {
        Self {
            src_mesh: mesh.clone(),
            dst_mesh: mesh.clone(),
            assignment: (0..k).collect(),
        }
    }

    pub fn validate(&self, src: &SpectralBasis, dst: &SpectralBasis) -> Result<()> {
        if self.src_mesh != src.mesh || self.dst_mesh != dst.mesh {
            return Err(CseError::Mismatch(format!(
                "point map {} -> {} applied to bases {} -> {}",
                self.src_mesh, self.dst_mesh, src.mesh, dst.mesh
            )));
        }
        if self.assignment.len() != dst.num_vertices() {
            return Err(CseError::LengthMismatch {
                what: "point map",
                expected: dst.num_vertices(),
                got: self.assignment.len(),
            });
        }
        if let Some(&bad) = self.assignment.iter().find(|&&a| a >= src.num_vertices()) {
            return Err(CseError::InvalidArgument(format!(
                "point map index {bad} out of range ({} source vertices)",
                src.num_vertices()
            )));
        }
        Ok(())
    }

    /// Transport a source function: `r′_i = r[assignment[i]]`.
    pub fn pull(&self, r: &[f64]) -> Vec<f64> {
        self.assignment.iter().map(|&a| r[a]).collect()
    }

    /// Fraction of destination vertices whose assignment equals `truth`.
    pub fn agreement(&self, truth: &[usize]) -> f64 {
        assert_eq!(truth.len(), self.assignment.len());
        let hits = self
            .assignment
            .iter()
            .zip(truth)
            .filter(|(a, t)| a == t)
            .count();
        hits as f64 / truth.len().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Closed-form encoding at the given orders:
/// `C_ij = D_ij / (1 + β (λ′_i − λ_j)²)` with `D = U′ᵀ A′ Π U`.
fn encode(
    src: &SpectralBasis,
    dst: &SpectralBasis,
    assignment: &[usize],
    m_src: usize,
    m_dst: usize,
    beta: f64,
) -> Mat<f64> {
    let u = src.columns(m_src);
    let ud = dst.columns(m_dst);
    let pulled = Mat::from_fn(assignment.len(), m_src, |i, j| {
        dst.mass[i] * u[(assignment[i], j)]
    });
    let mut c = matmul_tn(ud, pulled.as_ref());
    if beta != 0.0 {
        for i in 0..m_dst {
            for j in 0..m_src {
                let d = dst.eigenvalues[i] - src.eigenvalues[j];
                c[(i, j)] /= 1.0 + beta * d * d;
            }
        }
    }
    c
}

/// Functional map induced by a point map, with the commutativity penalty
/// applied in closed form. Uses the full order of both bases.
pub fn cfrom_pointmap(
    src: &SpectralBasis,
    dst: &SpectralBasis,
    pointmap: &PointMap,
    beta: f64,
) -> Result<FunctionalMap> {
    pointmap.validate(src, dst)?;
    check_beta(beta)?;
    Ok(FunctionalMap {
        c: encode(src, dst, &pointmap.assignment, src.order(), dst.order(), beta),
        src: src.mesh.clone(),
        dst: dst.mesh.clone(),
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if beta >= 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(CseError::InvalidArgument(format!(
            "penalty weight must be nonnegative, got {beta}"
        )))
    }
}

const NEAREST_BLOCK: usize = 128;

/// For each row of `query`, the index of the nearest row of `reference`
/// in Euclidean distance, smallest index on ties. Candidates are screened
/// with a blocked product and the survivors compared exactly, so the
/// result equals a brute-force scan.
pub fn nearest_rows(query: MatRef<'_, f64>, reference: MatRef<'_, f64>) -> Vec<usize> {
    assert_eq!(query.ncols(), reference.ncols());
    let m = reference.ncols();
    let k = reference.nrows();
    if k == 0 {
        return Vec::new();
    }
    let row_sq = |a: MatRef<'_, f64>, i: usize| (0..m).map(|j| a[(i, j)] * a[(i, j)]).sum::<f64>();
    let ref_sq: Vec<f64> = (0..k).map(|i| row_sq(reference, i)).collect();
    let ref_max = ref_sq.iter().copied().fold(0.0, f64::max);
    // bound on the rounding error of |a|² + |b|² - 2⟨a,b⟩
    let slack = 4.0 * (m as f64 + 4.0) * f64::EPSILON;
    let starts: Vec<usize> = (0..query.nrows()).step_by(NEAREST_BLOCK).collect();
    starts
        .par_iter()
        .flat_map_iter(|&start| {
            let n = NEAREST_BLOCK.min(query.nrows() - start);
            let q = query.subrows(start, n);
            let dots = matmul_nt(q, reference);
            (0..n)
                .map(|r| {
                    let qsq = row_sq(q, r);
                    let approx = |c: usize| qsq + ref_sq[c] - 2.0 * dots[(r, c)];
                    let best = (0..k).map(approx).fold(f64::INFINITY, f64::min);
                    let cut = best + 2.0 * slack * (qsq + ref_max);
                    let mut winner = usize::MAX;
                    let mut winner_d = f64::INFINITY;
                    for c in 0..k {
                        if approx(c) <= cut {
                            let d: f64 = (0..m)
                                .map(|j| {
                                    let t = q[(r, j)] - reference[(c, j)];
                                    t * t
                                })
                                .sum();
                            if d < winner_d {
                                winner_d = d;
                                winner = c;
                            }
                        }
                    }
                    winner
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

fn decode(
    src: &SpectralBasis,
    dst: &SpectralBasis,
    c: MatRef<'_, f64>,
) -> Vec<usize> {
    let (m_dst, m_src) = (c.nrows(), c.ncols());
    let image = matmul_nn(dst.columns(m_dst), c);
    nearest_rows(image.as_ref(), src.columns(m_src))
}

/// Point map from a functional map: row `i` of `U′C` is matched to its
/// nearest row of `U`.
pub fn pointmap_from_c(
    src: &SpectralBasis,
    dst: &SpectralBasis,
    map: &FunctionalMap,
) -> Result<PointMap> {
    map.check_bases(src, dst)?;
    Ok(PointMap {
        src_mesh: src.mesh.clone(),
        dst_mesh: dst.mesh.clone(),
        assignment: decode(src, dst, map.c.as_ref()),
    })
}

/// Ridge weight used when seeding maps.
pub const SEED_RIDGE: f64 = 1e-9;

/// Least-squares map of order `m1 × m1` fitted to seed correspondences
/// only. Each column solves
/// `(P′ᵀP′ + diag(β δ² + ε)) c_j = P′ᵀ p_j`, where `P′`/`P` are the seed
/// rows of `U′`/`U` and `δ_i = λ′_i − λ_j`.
pub fn seed_cinit(
    src: &SpectralBasis,
    dst: &SpectralBasis,
    seeds: &CorrespondenceSet,
    m1: usize,
    beta: f64,
    ridge: f64,
) -> Result<FunctionalMap> {
    if seeds.is_empty() {
        return Err(CseError::InvalidArgument("no seed correspondences".into()));
    }
    if seeds.src_mesh != src.mesh || seeds.dst_mesh != dst.mesh {
        return Err(CseError::Mismatch(format!(
            "seeds bound to {} -> {}, bases are {} -> {}",
            seeds.src_mesh, seeds.dst_mesh, src.mesh, dst.mesh
        )));
    }
    if m1 == 0 || m1 > src.order() || m1 > dst.order() {
        return Err(CseError::InvalidArgument(format!(
            "seed order {m1} outside the available eigenpairs"
        )));
    }
    check_beta(beta)?;
    for &[a, b] in &seeds.pairs {
        if a >= src.num_vertices() || b >= dst.num_vertices() {
            return Err(CseError::InvalidArgument(format!(
                "seed ({a}, {b}) out of range"
            )));
        }
    }
    if seeds.len() < m1 {
        warn!(
            "{} seeds for a {m1}x{m1} map; relying on regularization",
            seeds.len()
        );
    }
    let q = seeds.len();
    let pd = Mat::from_fn(q, m1, |r, i| dst.eigenvectors[(seeds.pairs[r][1], i)]);
    let ps = Mat::from_fn(q, m1, |r, j| src.eigenvectors[(seeds.pairs[r][0], j)]);
    let gram = matmul_tn(pd.as_ref(), pd.as_ref());
    let rhs = matmul_tn(pd.as_ref(), ps.as_ref());
    let mut c = Mat::zeros(m1, m1);
    for j in 0..m1 {
        let mut sys = gram.clone();
        for i in 0..m1 {
            let d = dst.eigenvalues[i] - src.eigenvalues[j];
            sys[(i, i)] += beta * d * d + ridge;
        }
        let col = Mat::from_fn(m1, 1, |i, _| rhs[(i, j)]);
        let sol = sys
            .llt(Side::Lower)
            .map_err(|_| {
                CseError::InvalidArgument(
                    "seed system is singular; add seeds or regularization".into(),
                )
            })?
            .solve(&col);
        for i in 0..m1 {
            c[(i, j)] = sol[(i, 0)];
        }
    }
    Ok(FunctionalMap {
        c,
        src: src.mesh.clone(),
        dst: dst.mesh.clone(),
    })
}

/// Settings of the ZoomOut loop. Penalty weights are given per entry: each
/// term is divided by its number of entries before weighting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ZoomOutConfig {
    pub start: usize,
    pub stop: usize,
    pub step: usize,
    /// Symmetry commutation weight.
    pub alpha: f64,
    /// Laplacian commutativity weight.
    pub beta: f64,
    /// Cycle-consistency weight.
    pub gamma: f64,
    /// Gradient steps on the penalties after each re-encoding.
    pub projection_steps: usize,
}

impl Default for ZoomOutConfig {
    fn default() -> Self {
        Self {
            start: 12,
            stop: 256,
            step: 4,
            alpha: 1.0,
            beta: 1e-2,
            gamma: 1.0,
            projection_steps: 10,
        }
    }
}

impl ZoomOutConfig {
    /// Orders `start, start + step, …`, ending exactly at `stop`.
    pub fn schedule(&self) -> Result<Vec<usize>> {
        if self.start == 0 || self.step == 0 || self.start > self.stop {
            return Err(CseError::InvalidArgument(format!(
                "invalid schedule {}..{} step {}",
                self.start, self.stop, self.step
            )));
        }
        let mut s: Vec<usize> = (self.start..=self.stop).step_by(self.step).collect();
        if *s.last().unwrap() != self.stop {
            s.push(self.stop);
        }
        Ok(s)
    }

    /// Commutativity weight for the closed-form encoding at `m_dst × m_src`:
    /// the data term is an area mean per column, so `β` is rescaled by
    /// `m_src / (m_dst m_src)`.
    pub fn encode_beta(&self, m_dst: usize) -> f64 {
        self.beta / m_dst as f64
    }

    /// Commutativity weight for seeding from `q` correspondences.
    pub fn seed_beta(&self, q: usize, m1: usize) -> f64 {
        self.beta * q as f64 / m1 as f64
    }

    fn validate(&self) -> Result<()> {
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(CseError::InvalidArgument(format!(
                    "{name} must be nonnegative, got {w}"
                )));
            }
        }
        Ok(())
    }
}

/// Vertex pairings of the source and destination reflections.
#[derive(Clone, Copy, Debug)]
pub struct SymmetryPair<'a> {
    pub src: &'a [usize],
    pub dst: &'a [usize],
}

/// Diagnostics for one schedule order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub order: usize,
    /// Fraction of destination vertices whose decoded source changed since
    /// the previous level.
    pub changed: f64,
    /// `‖Γ̂′C − CΓ̂‖_F` after projection; absent without symmetry maps.
    pub symmetry_residual: Option<f64>,
    /// `‖C C′ − I‖_F` after projection.
    pub cycle_residual: f64,
    /// Exact-recovery rate of the decoded map, when ground truth is given.
    pub recovery: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct ZoomOutResult {
    pub map: FunctionalMap,
    /// Destination-to-source map refined alongside.
    pub backward: FunctionalMap,
    pub pointmap: PointMap,
    pub levels: Vec<LevelRecord>,
}

/// `Γ̂ = Uᵀ A (Γ U)` at order `m`.
fn reflection_operator(basis: &SpectralBasis, pairing: &[usize], m: usize) -> Mat<f64> {
    let u = basis.columns(m);
    let au = Mat::from_fn(u.nrows(), m, |i, j| basis.mass[i] * u[(i, j)]);
    let gu = Mat::from_fn(u.nrows(), m, |i, j| u[(pairing[i], j)]);
    matmul_tn(au.as_ref(), gu.as_ref())
}

struct Penalty<'a> {
    /// `(Γ̂ on the map's destination, Γ̂ on its source, α̃)`
    symmetry: Option<(MatRef<'a, f64>, MatRef<'a, f64>, f64)>,
    partner: MatRef<'a, f64>,
    gamma: f64,
}

impl Penalty<'_> {
    fn residuals(&self, c: MatRef<'_, f64>) -> (Option<Mat<f64>>, Mat<f64>) {
        let sym = self
            .symmetry
            .map(|(gd, gs, _)| matmul_nn(gd, c) - matmul_nn(c, gs));
        let cyc = matmul_nn(c, self.partner) - Mat::<f64>::identity(c.nrows(), self.partner.ncols());
        (sym, cyc)
    }

    fn value(&self, c: MatRef<'_, f64>) -> f64 {
        let (sym, cyc) = self.residuals(c);
        let s = match (self.symmetry, sym) {
            (Some((_, _, a)), Some(r)) => a * frobenius(r.as_ref()).powi(2),
            _ => 0.0,
        };
        s + self.gamma * frobenius(cyc.as_ref()).powi(2)
    }

    /// Gradient steps with step `1/L`, `L` the Lipschitz constant of the
    /// penalty gradient; every step is a descent step.
    fn descend(&self, c: &mut Mat<f64>, steps: usize) {
        let mut lip = 2.0 * self.gamma * spectral_norm(self.partner).powi(2);
        if let Some((gd, gs, a)) = self.symmetry {
            lip += 2.0 * a * (spectral_norm(gd) + spectral_norm(gs)).powi(2);
        }
        if steps == 0 || lip <= 0.0 {
            return;
        }
        for _ in 0..steps {
            let (sym, cyc) = self.residuals(c.as_ref());
            let mut grad = matmul_nt(cyc.as_ref(), self.partner) * (2.0 * self.gamma);
            if let (Some((gd, gs, a)), Some(r)) = (self.symmetry, sym) {
                grad += (matmul_tn(gd, r.as_ref()) - matmul_nt(r.as_ref(), gs)) * (2.0 * a);
            }
            *c -= grad * (1.0 / lip);
        }
    }
}

/// ZoomOut: at each scheduled order decode the current map, re-encode at
/// the new order, then run the penalty projection on the forward map
/// (backward map fixed) and on the backward map (forward map fixed).
///
/// Bases must hold at least `stop` eigenpairs and come from meshes
/// normalized to a common total area.
pub fn zoomout(
    src: &SpectralBasis,
    dst: &SpectralBasis,
    c0: &FunctionalMap,
    config: &ZoomOutConfig,
    symmetry: Option<SymmetryPair<'_>>,
    truth: Option<&[usize]>,
) -> Result<ZoomOutResult> {
    config.validate()?;
    let schedule = config.schedule()?;
    c0.check_bases(src, dst)?;
    if config.stop > src.order() || config.stop > dst.order() {
        return Err(CseError::InvalidArgument(format!(
            "schedule stops at {} but bases hold {} and {} eigenpairs",
            config.stop,
            src.order(),
            dst.order()
        )));
    }
    if let Some(sym) = symmetry {
        if sym.src.len() != src.num_vertices() || sym.dst.len() != dst.num_vertices() {
            return Err(CseError::Mismatch(
                "symmetry pairings do not match the bases".into(),
            ));
        }
    }
    if let Some(t) = truth {
        if t.len() != dst.num_vertices() {
            return Err(CseError::LengthMismatch {
                what: "ground-truth map",
                expected: dst.num_vertices(),
                got: t.len(),
            });
        }
    }
    let gammas = symmetry.map(|s| {
        (
            reflection_operator(src, s.src, config.stop),
            reflection_operator(dst, s.dst, config.stop),
        )
    });

    let mut c = c0.c.clone();
    let mut cb = c0.c.transpose().to_owned();
    let mut previous = decode(src, dst, c.as_ref());
    let mut levels = Vec::with_capacity(schedule.len());
    for &m in &schedule {
        let fwd = decode(src, dst, c.as_ref());
        let bwd = decode(dst, src, cb.as_ref());
        c = encode(src, dst, &fwd, m, m, config.encode_beta(m));
        cb = encode(dst, src, &bwd, m, m, config.encode_beta(m));

        let norm = 1.0 / (m * m) as f64;
        let views = gammas.as_ref().map(|(gs, gd)| {
            (
                gs.as_ref().submatrix(0, 0, m, m),
                gd.as_ref().submatrix(0, 0, m, m),
            )
        });
        let cb_snapshot = cb.clone();
        Penalty {
            symmetry: views.map(|(gs, gd)| (gd, gs, config.alpha * norm)),
            partner: cb_snapshot.as_ref(),
            gamma: config.gamma * norm,
        }
        .descend(&mut c, config.projection_steps);
        let c_snapshot = c.clone();
        Penalty {
            symmetry: views.map(|(gs, gd)| (gs, gd, config.alpha * norm)),
            partner: c_snapshot.as_ref(),
            gamma: config.gamma * norm,
        }
        .descend(&mut cb, config.projection_steps);

        if !all_finite(c.as_ref()) || !all_finite(cb.as_ref()) {
            return Err(CseError::NonFinite(format!(
                "functional map at schedule order {m}"
            )));
        }
        let decoded = decode(src, dst, c.as_ref());
        let changed = decoded
            .iter()
            .zip(&previous)
            .filter(|(a, b)| a != b)
            .count() as f64
            / decoded.len() as f64;
        let symmetry_residual = views.map(|(gs, gd)| {
            frobenius((matmul_nn(gd, c.as_ref()) - matmul_nn(c.as_ref(), gs)).as_ref())
        });
        let cycle_residual = frobenius(
            (matmul_nn(c.as_ref(), cb.as_ref()) - Mat::<f64>::identity(m, m)).as_ref(),
        );
        let recovery = truth.map(|t| {
            decoded.iter().zip(t).filter(|(a, b)| a == b).count() as f64 / t.len() as f64
        });
        debug!("zoomout order {m}: changed {changed:.4}, cycle {cycle_residual:.3e}, recovery {recovery:?}");
        levels.push(LevelRecord {
            order: m,
            changed,
            symmetry_residual,
            cycle_residual,
            recovery,
        });
        previous = decoded;
    }
    Ok(ZoomOutResult {
        map: FunctionalMap {
            c,
            src: src.mesh.clone(),
            dst: dst.mesh.clone(),
        },
        backward: FunctionalMap {
            c: cb,
            src: dst.mesh.clone(),
            dst: src.mesh.clone(),
        },
        pointmap: PointMap {
            src_mesh: src.mesh.clone(),
            dst_mesh: dst.mesh.clone(),
            assignment: previous,
        },
        levels,
    })
}

/// Value of the projection penalty, exposed for diagnostics:
/// `α‖Γ̂′C − CΓ̂‖² + γ‖CC′ − I‖²` at the orders of `c`.
pub fn penalty_value(
    c: MatRef<'_, f64>,
    partner: MatRef<'_, f64>,
    symmetry: Option<(MatRef<'_, f64>, MatRef<'_, f64>)>,
    alpha: f64,
    gamma: f64,
) -> f64 {
    Penalty {
        symmetry: symmetry.map(|(gd, gs)| (gd, gs, alpha)),
        partner,
        gamma,
    }
    .value(c)
}

/// One projection step sequence on `c`, returning the penalty after each
/// step (the first entry is the starting value).
pub fn projection_trace(
    c: &mut Mat<f64>,
    partner: MatRef<'_, f64>,
    symmetry: Option<(MatRef<'_, f64>, MatRef<'_, f64>)>,
    alpha: f64,
    gamma: f64,
    steps: usize,
) -> Vec<f64> {
    let p = Penalty {
        symmetry: symmetry.map(|(gd, gs)| (gd, gs, alpha)),
        partner,
        gamma,
    };
    let mut trace = vec![p.value(c.as_ref())];
    for _ in 0..steps {
        p.descend(c, 1);
        trace.push(p.value(c.as_ref()));
    }
    trace
}

/// `Γ̂ = Uᵀ A Γ U` for a reflection pairing, at order `m`.
pub fn spectral_reflection(basis: &SpectralBasis, pairing: &[usize], m: usize) -> Result<Mat<f64>> {
    if pairing.len() != basis.num_vertices() || m == 0 || m > basis.order() {
        return Err(CseError::Mismatch("reflection does not match the basis".into()));
    }
    Ok(reflection_operator(basis, pairing, m))
}

/// End-to-end correspondence from seeds: both meshes are rescaled to unit
/// total area, bases of order `config.stop` are computed, the seed map of
/// order `config.start` initializes ZoomOut. The returned functional maps
/// are expressed in the bases of the meshes as given.
pub struct MeshMatch {
    pub result: ZoomOutResult,
    /// Bases of the area-normalized meshes.
    pub src_basis: SpectralBasis,
    pub dst_basis: SpectralBasis,
    pub src_scale: f64,
    pub dst_scale: f64,
}

pub fn match_meshes(
    src: &Mesh,
    dst: &Mesh,
    seeds: &CorrespondenceSet,
    config: &ZoomOutConfig,
    symmetry: Option<SymmetryPair<'_>>,
    truth: Option<&[usize]>,
) -> Result<MeshMatch> {
    seeds.validate(src, dst)?;
    let (src_n, src_scale) = src.with_total_area(1.0)?;
    let (dst_n, dst_scale) = dst.with_total_area(1.0)?;
    let (src_basis, dst_basis) = rayon::join(
        || build_operators(&src_n).and_then(|o| eigenbasis(&o, config.stop)),
        || build_operators(&dst_n).and_then(|o| eigenbasis(&o, config.stop)),
    );
    let (src_basis, dst_basis) = (src_basis?, dst_basis?);
    let normalized_seeds = CorrespondenceSet {
        src_mesh: src_basis.mesh.clone(),
        dst_mesh: dst_basis.mesh.clone(),
        pairs: seeds.pairs.clone(),
    };
    let c0 = seed_cinit(
        &src_basis,
        &dst_basis,
        &normalized_seeds,
        config.start,
        config.seed_beta(seeds.len(), config.start),
        SEED_RIDGE,
    )?;
    let mut result = zoomout(&src_basis, &dst_basis, &c0, config, symmetry, truth)?;
    // U scales by 1/s under a uniform scale s, so C picks up s_src / s_dst
    let ratio = src_scale / dst_scale;
    result.map = FunctionalMap {
        c: &result.map.c * ratio,
        src: src.id().clone(),
        dst: dst.id().clone(),
    };
    result.backward = FunctionalMap {
        c: &result.backward.c / ratio,
        src: dst.id().clone(),
        dst: src.id().clone(),
    };
    result.pointmap.src_mesh = src.id().clone();
    result.pointmap.dst_mesh = dst.id().clone();
    Ok(MeshMatch {
        result,
        src_basis,
        dst_basis,
        src_scale,
        dst_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;

    fn basis_of(mesh: &Mesh, m: usize) -> SpectralBasis {
        eigenbasis(&build_operators(mesh).unwrap(), m).unwrap()
    }

    #[test]
    fn identity_pointmap_gives_identity() {
        let mesh = shapes::bumpy_torus(16, 10, 2).with_total_area(1.0).unwrap().0;
        let b = basis_of(&mesh, 20);
        let pm = PointMap::identity(&b.mesh, b.num_vertices());
        let c = cfrom_pointmap(&b, &b, &pm, 0.0).unwrap();
        let err = crate::linalg::max_abs_diff(c.c.as_ref(), Mat::<f64>::identity(20, 20).as_ref());
        assert!(err < 1e-8, "{err}");
        let back = pointmap_from_c(&b, &b, &c).unwrap();
        assert_eq!(back.assignment, pm.assignment);
    }

    #[test]
    fn zero_map_decodes_to_one_vertex() {
        let mesh = shapes::icosphere(1, 1.0);
        let b = basis_of(&mesh, 6);
        let zero = FunctionalMap {
            c: Mat::zeros(6, 6),
            src: b.mesh.clone(),
            dst: b.mesh.clone(),
        };
        let pm = pointmap_from_c(&b, &b, &zero).unwrap();
        let norms: Vec<f64> = (0..b.num_vertices())
            .map(|i| (0..6).map(|j| b.eigenvectors[(i, j)].powi(2)).sum())
            .collect();
        let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let first = norms.iter().position(|&n| n == min).unwrap();
        assert!(pm.assignment.iter().all(|&a| a == first));
    }

    #[test]
    fn nearest_rows_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let reference = Mat::from_fn(300, 7, |_, _| rng.gen_range(-1.0..1.0));
        let mut query = Mat::from_fn(260, 7, |_, _| rng.gen_range(-1.0..1.0));
        // exact duplicates exercise the tie rule
        for j in 0..7 {
            query[(0, j)] = reference[(5, j)];
        }
        let got = nearest_rows(query.as_ref(), reference.as_ref());
        for i in 0..260 {
            let mut best = (f64::INFINITY, 0);
            for c in 0..300 {
                let d: f64 = (0..7).map(|j| (query[(i, j)] - reference[(c, j)]).powi(2)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            assert_eq!(got[i], best.1);
        }
        assert_eq!(got[0], 5);
    }

    #[test]
    fn commutativity_shrinks_off_diagonal() {
        let a = shapes::bumpy_torus(14, 9, 1).with_total_area(1.0).unwrap().0;
        let b = shapes::bumpy_torus(14, 9, 2).with_total_area(1.0).unwrap().0;
        let (ba, bb) = (basis_of(&a, 10), basis_of(&b, 10));
        let pm = PointMap {
            src_mesh: ba.mesh.clone(),
            dst_mesh: bb.mesh.clone(),
            assignment: (0..bb.num_vertices()).collect(),
        };
        let mut last = f64::INFINITY;
        for beta in [0.0, 1e-4, 1e-2, 1.0] {
            let c = cfrom_pointmap(&ba, &bb, &pm, beta).unwrap();
            let v = c.c[(2, 7)].abs();
            assert!(v <= last);
            last = v;
        }
    }

    #[test]
    fn seeds_everywhere_reduce_to_identity() {
        let mesh = shapes::bumpy_torus(16, 10, 5).with_total_area(1.0).unwrap().0;
        let b = basis_of(&mesh, 12);
        let seeds = CorrespondenceSet::new(
            &mesh,
            &mesh,
            (0..mesh.num_vertices()).map(|i| [i, i]).collect(),
        )
        .unwrap();
        let c = seed_cinit(&b, &b, &seeds, 12, 0.0, 1e-14).unwrap();
        let err = crate::linalg::max_abs_diff(c.c.as_ref(), Mat::<f64>::identity(12, 12).as_ref());
        assert!(err < 1e-6, "{err}");
        let other = shapes::icosphere(1, 1.0);
        let bad = CorrespondenceSet::new(&other, &mesh, vec![[0, 0]]).unwrap();
        assert!(seed_cinit(&b, &b, &bad, 12, 0.0, 1e-9).is_err());
    }

    #[test]
    fn schedule_ends_at_stop() {
        let cfg = ZoomOutConfig {
            start: 12,
            stop: 30,
            step: 4,
            ..Default::default()
        };
        assert_eq!(cfg.schedule().unwrap(), vec![12, 16, 20, 24, 28, 30]);
        assert_eq!(ZoomOutConfig::default().schedule().unwrap().len(), 62);
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let mesh = shapes::bumpy_torus(16, 10, 7).with_total_area(1.0).unwrap().0;
        let b = basis_of(&mesh, 24);
        let cfg = ZoomOutConfig {
            start: 8,
            stop: 24,
            ..Default::default()
        };
        let out = zoomout(&b, &b, &FunctionalMap::identity(&b, 8), &cfg, None, None).unwrap();
        let err = crate::linalg::max_abs_diff(out.map.c.as_ref(), Mat::<f64>::identity(24, 24).as_ref());
        assert!(err < 1e-6, "{err}");
        assert_eq!(out.pointmap.assignment, (0..b.num_vertices()).collect::<Vec<_>>());
    }

    #[test]
    fn map_file_round_trip() {
        let mesh = shapes::icosphere(1, 1.0);
        let b = basis_of(&mesh, 4);
        let map = FunctionalMap {
            c: Mat::from_fn(4, 3, |i, j| (i * 3 + j) as f64 * 0.25),
            src: b.mesh.clone(),
            dst: b.mesh.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cseb");
        map.save(&path).unwrap();
        assert_eq!(FunctionalMap::load(&path).unwrap(), map);
    }
}
