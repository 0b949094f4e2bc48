//! Discrete Laplace-Beltrami operator and its truncated eigenbasis.
//!
//! For a face with corners (x1, x2, x3) the edge vectors opposite each
//! corner are b1 = x3 - x2, b2 = x1 - x3, b3 = x2 - x1. A function that is
//! linear on the face has the constant gradient
//!
//! ```text
//! G_f r_f = (1 / 2A_f) Σ_i (N_f × b_i) r_i
//! ```
//!
//! and its Dirichlet energy A_f |G_f r_f|² is the quadratic form of
//! W_f = (1 / 4A_f) B_fᵀ B_f, the cotangent stencil. The mass matrix lumps a
//! third of every incident face area onto each vertex. The eigenbasis solves
//! W U = A U Λ for the smallest eigenvalues, normalized so that UᵀAU = I.

use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatRef, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{CseError, Result};
use crate::mesh::{cross, dot, sub, Mesh, MeshId, Point3};
use crate::sparse::CsrMatrix;

/// Per-face gradient: column `i` is the gradient contributed by the value
/// at corner `i`; row `c` is the spatial component.
pub type FaceGradient = [[f64; 3]; 3];

/// Eigensolves above this many vertices use shift-invert Lanczos.
pub const DENSE_LIMIT: usize = 8192;

fn face_edges(mesh: &Mesh, f: usize) -> [Point3; 3] {
    let t = mesh.faces()[f];
    let x = mesh.vertices();
    [sub(x[t[2]], x[t[1]]), sub(x[t[0]], x[t[2]]), sub(x[t[1]], x[t[0]])]
}

/// Gradient operator of face `f`, `G_f = (1/2A_f) N̂_f B_f`.
pub fn face_gradient(mesh: &Mesh, f: usize) -> Result<FaceGradient> {
    if f >= mesh.num_faces() {
        return Err(CseError::InvalidArgument(format!(
            "face {f} out of range ({} faces)",
            mesh.num_faces()
        )));
    }
    let area = mesh.face_areas()[f];
    if !(area > 0.0) {
        return Err(CseError::DegenerateFace { face: f });
    }
    let n = mesh.face_normals()[f];
    let b = face_edges(mesh, f);
    let mut g = [[0.0; 3]; 3];
    for (i, bi) in b.iter().enumerate() {
        let col = cross(n, *bi);
        for c in 0..3 {
            g[c][i] = col[c] / (2.0 * area);
        }
    }
    Ok(g)
}

/// Apply a face gradient to the corner values `r`.
pub fn apply_face_gradient(g: &FaceGradient, r: [f64; 3]) -> Point3 {
    let mut out = [0.0; 3];
    for c in 0..3 {
        out[c] = g[c][0] * r[0] + g[c][1] * r[1] + g[c][2] * r[2];
    }
    out
}

/// Assembled differential operators of a mesh.
#[derive(Clone, Debug)]
pub struct Operators {
    /// K×K cotangent stiffness matrix.
    pub stiffness: CsrMatrix,
    /// Lumped vertex areas (diagonal of the mass matrix).
    pub mass: Vec<f64>,
    /// 3|F|×K, rows `3f..3f+3` hold the gradient on face `f`.
    pub gradient: CsrMatrix,
    /// K×3|F| divergence: integrated flux of a per-face vector field
    /// through the boundary of each vertex's triangle fan.
    pub divergence: CsrMatrix,
    pub face_areas: Vec<f64>,
    pub mesh: MeshId,
}

struct FaceContribution {
    stiffness: [[f64; 3]; 3],
    gradient: FaceGradient,
    divergence: [[f64; 3]; 3],
}

/// Build stiffness, mass, gradient and divergence for a validated mesh.
pub fn build_operators(mesh: &Mesh) -> Result<Operators> {
    let k = mesh.num_vertices();
    let nf = mesh.num_faces();

    // per-face work is independent; results come back in face order
    let local: Vec<FaceContribution> = (0..nf)
        .into_par_iter()
        .map(|f| {
            let area = mesh.face_areas()[f];
            let b = face_edges(mesh, f);
            let g = face_gradient(mesh, f)?;
            let mut stiffness = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    stiffness[i][j] = dot(b[i], b[j]) / (4.0 * area);
                }
            }
            // flux of a constant field X through the edge opposite corner i,
            // halved: -(1/2) <N × b_i, X> = (1/2)|b_i| <n_out, X>
            let n = mesh.face_normals()[f];
            let mut divergence = [[0.0; 3]; 3];
            for (i, bi) in b.iter().enumerate() {
                let inward = cross(n, *bi);
                for c in 0..3 {
                    divergence[i][c] = -0.5 * inward[c];
                }
            }
            Ok(FaceContribution {
                stiffness,
                gradient: g,
                divergence,
            })
        })
        .collect::<Result<_>>()?;

    let mut w_trip = Vec::with_capacity(9 * nf);
    let mut g_trip = Vec::with_capacity(9 * nf);
    let mut d_trip = Vec::with_capacity(9 * nf);
    let mut mass = vec![0.0; k];
    for (f, (tri, fc)) in mesh.faces().iter().zip(&local).enumerate() {
        let third = mesh.face_areas()[f] / 3.0;
        for i in 0..3 {
            mass[tri[i]] += third;
            for j in 0..3 {
                w_trip.push((tri[i], tri[j], fc.stiffness[i][j]));
            }
            for c in 0..3 {
                g_trip.push((3 * f + c, tri[i], fc.gradient[c][i]));
                d_trip.push((tri[i], 3 * f + c, fc.divergence[i][c]));
            }
        }
    }

    Ok(Operators {
        stiffness: CsrMatrix::from_triplets(k, k, &w_trip),
        mass,
        gradient: CsrMatrix::from_triplets(3 * nf, k, &g_trip),
        divergence: CsrMatrix::from_triplets(k, 3 * nf, &d_trip),
        face_areas: mesh.face_areas().to_vec(),
        mesh: mesh.id().clone(),
    })
}

impl Operators {
    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    /// `rᵀ W r`.
    pub fn dirichlet_energy(&self, r: &[f64]) -> f64 {
        self.stiffness.quadratic_form(r)
    }

    pub fn total_area(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Truncated generalized eigenbasis `(U, Λ)` of `(W, A)`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    /// K×M, columns ordered by ascending eigenvalue.
    pub eigenvectors: Mat<f64>,
    pub eigenvalues: Vec<f64>,
    pub mass: Vec<f64>,
    pub mesh: MeshId,
}

#[derive(Clone, Copy, Debug)]
pub struct EigenOptions {
    /// Largest K solved densely.
    pub dense_limit: usize,
    /// Cap on total Lanczos steps across restarts.
    pub max_iterations: usize,
    /// Relative residual required of every returned pair.
    pub tolerance: f64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self {
            dense_limit: DENSE_LIMIT,
            max_iterations: 20_000,
            tolerance: 1e-9,
        }
    }
}

/// The `m` smallest eigenpairs of `W u = λ A u`.
pub fn eigenbasis(ops: &Operators, m: usize) -> Result<SpectralBasis> {
    eigenbasis_with(ops, m, EigenOptions::default())
}

pub fn eigenbasis_with(ops: &Operators, m: usize, opts: EigenOptions) -> Result<SpectralBasis> {
    let k = ops.num_vertices();
    if m == 0 || m > k {
        return Err(CseError::InvalidArgument(format!(
            "eigenpair count {m} outside 1..={k}"
        )));
    }
    let (values, vectors) = if k <= opts.dense_limit {
        dense_eigenpairs(ops, m)?
    } else {
        lanczos_eigenpairs(ops, m, opts)?
    };
    let mut basis = SpectralBasis {
        eigenvectors: vectors,
        eigenvalues: values,
        mass: ops.mass.clone(),
        mesh: ops.mesh.clone(),
    };
    canonicalize(&mut basis);
    Ok(basis)
}

fn dense_eigenpairs(ops: &Operators, m: usize) -> Result<(Vec<f64>, Mat<f64>)> {
    let k = ops.num_vertices();
    let inv_sqrt: Vec<f64> = ops.mass.iter().map(|a| 1.0 / a.sqrt()).collect();
    // A^{-1/2} W A^{-1/2} is symmetric because A is diagonal
    let mut s = Mat::<f64>::zeros(k, k);
    for r in 0..k {
        for (c, v) in ops.stiffness.row(r) {
            s[(r, c)] = v * inv_sqrt[r] * inv_sqrt[c];
        }
    }
    let (eig, vecs) = crate::linalg::symmetric_eigen(s.as_ref())
        .ok_or(CseError::NoConvergence { iterations: k })?;
    let values: Vec<f64> = (0..m).map(|j| eig[j]).collect();
    let u = Mat::from_fn(k, m, |i, j| vecs[(i, j)] * inv_sqrt[i]);
    Ok((values, u))
}

/// Shift-invert Lanczos with full reorthogonalization on the symmetric
/// operator `A^{1/2} (W + sA)^{-1} A^{1/2}`, whose largest eigenvalues
/// `1/(λ + s)` belong to the smallest λ.
fn lanczos_eigenpairs(ops: &Operators, m: usize, opts: EigenOptions) -> Result<(Vec<f64>, Mat<f64>)> {
    let k = ops.num_vertices();
    let mean_ratio = (0..k)
        .map(|i| ops.stiffness.get(i, i) / ops.mass[i])
        .sum::<f64>()
        / k as f64;
    let shift = 0.1 * mean_ratio / k as f64;

    let mut trip = Vec::with_capacity(ops.stiffness.nnz());
    for (r, c, v) in ops.stiffness.triplets() {
        if r >= c {
            let v = if r == c { v + shift * ops.mass[r] } else { v };
            trip.push(Triplet::new(r, c, v));
        }
    }
    let shifted = SparseColMat::<usize, f64>::try_new_from_triplets(k, k, &trip)
        .map_err(|e| CseError::InvalidArgument(format!("sparse assembly failed: {e:?}")))?;
    let llt = shifted
        .sp_cholesky(Side::Lower)
        .map_err(|e| CseError::InvalidArgument(format!("shifted stiffness not definite: {e:?}")))?;
    let sqrt_a: Vec<f64> = ops.mass.iter().map(|a| a.sqrt()).collect();

    let apply = |x: &[f64], out: &mut [f64]| {
        use faer::linalg::solvers::Solve;
        let mut rhs = Mat::from_fn(k, 1, |i, _| x[i] * sqrt_a[i]);
        llt.solve_in_place(rhs.as_mut());
        for i in 0..k {
            out[i] = rhs[(i, 0)] * sqrt_a[i];
        }
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0x4c_424f_5f45_4947);
    let mut krylov = (2 * m + 20).max(m + 40).min(k);
    let mut spent = 0usize;
    loop {
        let steps = krylov;
        spent += steps;
        let mut q: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
        let mut alpha = Vec::with_capacity(steps);
        let mut beta: Vec<f64> = Vec::with_capacity(steps);
        let mut v: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() - 0.5).collect();
        normalize(&mut v);
        q.push(v);
        let mut w = vec![0.0; k];
        for j in 0..steps {
            apply(&q[j], &mut w);
            let a = dot_slice(&w, &q[j]);
            alpha.push(a);
            // two passes of classical Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for qi in &q {
                    let h = dot_slice(&w, qi);
                    for (wv, qv) in w.iter_mut().zip(qi) {
                        *wv -= h * qv;
                    }
                }
            }
            let b = norm_slice(&w);
            if j + 1 == steps {
                beta.push(b);
                break;
            }
            if b < 1e-13 * a.abs().max(1e-300) {
                // invariant subspace: continue from a fresh orthogonal direction
                let mut fresh: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() - 0.5).collect();
                for _ in 0..2 {
                    for qi in &q {
                        let h = dot_slice(&fresh, qi);
                        for (fv, qv) in fresh.iter_mut().zip(qi) {
                            *fv -= h * qv;
                        }
                    }
                }
                normalize(&mut fresh);
                beta.push(0.0);
                q.push(fresh);
            } else {
                beta.push(b);
                q.push(w.iter().map(|x| x / b).collect());
            }
        }

        let n = alpha.len();
        let mut t = Mat::<f64>::zeros(n, n);
        for i in 0..n {
            t[(i, i)] = alpha[i];
            if i + 1 < n {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let (theta, y) = crate::linalg::symmetric_eigen(t.as_ref())
            .ok_or(CseError::NoConvergence { iterations: spent })?;
        // largest Ritz values are at the end
        let last_beta = *beta.last().unwrap_or(&0.0);
        let converged = (0..m).all(|r| {
            let idx = n - 1 - r;
            (last_beta * y[(n - 1, idx)]).abs() <= opts.tolerance * theta[idx].abs()
        });
        if converged || (krylov == k && n == k) {
            let mut values = Vec::with_capacity(m);
            let mut u = Mat::<f64>::zeros(k, m);
            for r in 0..m {
                let idx = n - 1 - r;
                values.push(1.0 / theta[idx] - shift);
                for (jj, qj) in q.iter().take(n).enumerate() {
                    let coef = y[(jj, idx)];
                    for i in 0..k {
                        u[(i, r)] += coef * qj[i];
                    }
                }
                for i in 0..k {
                    u[(i, r)] /= sqrt_a[i];
                }
            }
            return Ok((values, u));
        }
        if spent >= opts.max_iterations {
            return Err(CseError::NoConvergence { iterations: spent });
        }
        krylov = (krylov + krylov / 2).min(k);
    }
}

fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm_slice(a: &[f64]) -> f64 {
    dot_slice(a, a).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm_slice(v);
    for x in v.iter_mut() {
        *x /= n;
    }
}

/// Fix the gauge of the raw eigenpairs: exact constant first column with
/// zero eigenvalue, nonnegative eigenvalues, largest-magnitude entry of each
/// column positive, and a deterministic order inside degenerate clusters.
fn canonicalize(basis: &mut SpectralBasis) {
    let k = basis.eigenvectors.nrows();
    let m = basis.eigenvectors.ncols();
    let total: f64 = basis.mass.iter().sum();
    let c = 1.0 / total.sqrt();
    for i in 0..k {
        basis.eigenvectors[(i, 0)] = c;
    }
    basis.eigenvalues[0] = 0.0;
    for l in basis.eigenvalues.iter_mut() {
        *l = l.max(0.0);
    }

    for j in 0..m {
        let col = basis.eigenvectors.col(j);
        let peak = (0..k).map(|i| col[i].abs()).fold(0.0, f64::max);
        let first = (0..k)
            .find(|&i| col[i].abs() >= peak * (1.0 - 1e-9))
            .unwrap_or(0);
        if col[first] < 0.0 {
            for i in 0..k {
                basis.eigenvectors[(i, j)] = -basis.eigenvectors[(i, j)];
            }
        }
    }

    let mut start = 1;
    while start < m {
        let mut end = start + 1;
        while end < m
            && basis.eigenvalues[end] - basis.eigenvalues[end - 1]
                <= 1e-8 * basis.eigenvalues[end].abs().max(1.0)
        {
            end += 1;
        }
        if end - start > 1 {
            let mut cols: Vec<Vec<f64>> = (start..end)
                .map(|j| (0..k).map(|i| basis.eigenvectors[(i, j)]).collect())
                .collect();
            cols.sort_by(|a, b| {
                a.iter()
                    .zip(b)
                    .find(|(x, y)| x != y)
                    .map(|(x, y)| x.total_cmp(y))
                    .unwrap_or(std::cmp::Ordering::Equal)
            });
            for (off, col) in cols.into_iter().enumerate() {
                for (i, &x) in col.iter().enumerate().take(k) {
                    basis.eigenvectors[(i, start + off)] = x;
                }
            }
        }
        start = end;
    }
}

impl SpectralBasis {
    /// Number of retained eigenpairs M.
    pub fn order(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.mass.len()
    }

    /// Leading `m` columns as a view.
    pub fn columns(&self, m: usize) -> MatRef<'_, f64> {
        self.eigenvectors.as_ref().subcols(0, m)
    }

    /// Copy keeping the `m` lowest eigenpairs.
    pub fn truncated(&self, m: usize) -> Result<Self> {
        if m == 0 || m > self.order() {
            return Err(CseError::InvalidArgument(format!(
                "cannot truncate a basis of order {} to {m}",
                self.order()
            )));
        }
        Ok(Self {
            eigenvectors: self.columns(m).to_owned(),
            eigenvalues: self.eigenvalues[..m].to_vec(),
            mass: self.mass.clone(),
            mesh: self.mesh.clone(),
        })
    }

    /// Fourier coefficients `r̂ = Uᵀ A r`.
    pub fn analyze(&self, r: &[f64]) -> Result<Vec<f64>> {
        let k = self.num_vertices();
        if r.len() != k {
            return Err(CseError::LengthMismatch {
                what: "mesh function",
                expected: k,
                got: r.len(),
            });
        }
        let u = &self.eigenvectors;
        Ok((0..self.order())
            .map(|j| (0..k).map(|i| u[(i, j)] * self.mass[i] * r[i]).sum())
            .collect())
    }

    /// `r = U r̂`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() != self.order() {
            return Err(CseError::LengthMismatch {
                what: "spectral coefficients",
                expected: self.order(),
                got: coeffs.len(),
            });
        }
        let u = &self.eigenvectors;
        Ok((0..self.num_vertices())
            .map(|i| (0..self.order()).map(|j| u[(i, j)] * coeffs[j]).sum())
            .collect())
    }

    /// Largest entry of `|UᵀAU - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let u = &self.eigenvectors;
        let au = Mat::from_fn(u.nrows(), u.ncols(), |i, j| self.mass[i] * u[(i, j)]);
        let g = crate::linalg::matmul_tn(u.as_ref(), au.as_ref());
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Per-column `‖W u - λ A u‖ / (max(λ, 1e-8 κ) ‖A u‖)`, where κ is the
    /// largest diagonal ratio `W_ii / A_ii`; the floor keeps the null
    /// column's residual meaningful.
    pub fn residuals(&self, ops: &Operators) -> Vec<f64> {
        let k = self.num_vertices();
        let kappa = (0..k)
            .map(|i| ops.stiffness.get(i, i) / self.mass[i])
            .fold(0.0, f64::max);
        (0..self.order())
            .map(|j| {
                let u: Vec<f64> = (0..k).map(|i| self.eigenvectors[(i, j)]).collect();
                let wu = ops.stiffness.mul_vec(&u);
                let lam = self.eigenvalues[j];
                let mut num = 0.0;
                let mut au_norm = 0.0;
                for i in 0..k {
                    let au = self.mass[i] * u[i];
                    num += (wu[i] - lam * au).powi(2);
                    au_norm += au * au;
                }
                num.sqrt() / (lam.max(1e-8 * kappa) * au_norm.sqrt()).max(1e-300)
            })
            .collect()
    }
}
