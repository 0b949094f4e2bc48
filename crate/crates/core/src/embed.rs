//! Spectral embeddings `E = UÊ`, the softmax vertex posterior and the hard
//! and geodesic-soft cross-entropy losses with analytic gradients.

use std::borrow::Borrow;
use std::path::Path;

use faer::{Mat, MatRef};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cseb::{self, Tensor};
use crate::error::{CseError, Result};
use crate::fmap::FunctionalMap;
use crate::geodesics::SoftLabelField;
use crate::lbo::SpectralBasis;
use crate::linalg::{all_finite, matmul_nn, matmul_nt, matmul_tn, pairwise_sum, scale_rows};
use crate::mesh::MeshId;

/// `-ln(1e-300)`: the largest per-vertex negative log posterior.
const MAX_NLL: f64 = 690.7755278982137;

/// Spectral coefficients `Ê` (M×D) of a per-vertex embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    pub e_hat: Mat<f64>,
    pub basis: MeshId,
}

impl EmbeddingSet {
    pub fn zeros(basis: &SpectralBasis, m: usize, d: usize) -> Self {
        Self {
            e_hat: Mat::zeros(m, d),
            basis: basis.mesh.clone(),
        }
    }

    pub fn order(&self) -> usize {
        self.e_hat.nrows()
    }

    pub fn dim(&self) -> usize {
        self.e_hat.ncols()
    }

    pub fn check_basis(&self, basis: &SpectralBasis) -> Result<()> {
        if self.basis != basis.mesh {
            return Err(CseError::Mismatch(format!(
                "embedding bound to {}, basis is {}",
                self.basis, basis.mesh
            )));
        }
        if self.order() > basis.order() {
            return Err(CseError::Mismatch(format!(
                "embedding order {} exceeds basis order {}",
                self.order(),
                basis.order()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let manifest = EmbeddingManifest {
            kind: "embedding".into(),
            basis_mesh: self.basis.clone(),
            order: self.order(),
            dim: self.dim(),
        };
        cseb::write_artifact(path, &[Tensor::matrix(self.e_hat.as_ref())], &manifest)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (tensors, manifest): (_, EmbeddingManifest) = cseb::read_artifact(path)?;
        cseb::expect_kind(&manifest.kind, "embedding")?;
        cseb::expect_count(&tensors, 1)?;
        let e_hat = tensors[0].to_matrix()?;
        if (e_hat.nrows(), e_hat.ncols()) != (manifest.order, manifest.dim) {
            return Err(CseError::Container("embedding shape disagrees with manifest".into()));
        }
        Ok(Self {
            e_hat,
            basis: manifest.basis_mesh,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EmbeddingManifest {
    kind: String,
    basis_mesh: MeshId,
    order: usize,
    dim: usize,
}

/// Per-pixel features (N×D) with their ground-truth vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelBatch {
    pub features: Mat<f64>,
    pub labels: Vec<usize>,
}

impl PixelBatch {
    pub fn new(features: Mat<f64>, labels: Vec<usize>) -> Result<Self> {
        if features.nrows() != labels.len() {
            return Err(CseError::LengthMismatch {
                what: "batch labels",
                expected: features.nrows(),
                got: labels.len(),
            });
        }
        if !all_finite(features.as_ref()) {
            return Err(CseError::NonFinite("batch features".into()));
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn check(&self, k: usize, d: usize) -> Result<()> {
        if self.is_empty() {
            return Err(CseError::InvalidArgument("empty batch".into()));
        }
        if self.features.ncols() != d {
            return Err(CseError::LengthMismatch {
                what: "feature dimension",
                expected: d,
                got: self.features.ncols(),
            });
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= k) {
            return Err(CseError::InvalidArgument(format!(
                "label {bad} out of range ({k} vertices)"
            )));
        }
        Ok(())
    }
}

/// `E = U Ê`, using the leading `M` basis columns.
pub fn expand(emb: &EmbeddingSet, basis: &SpectralBasis) -> Result<Mat<f64>> {
    emb.check_basis(basis)?;
    Ok(matmul_nn(basis.columns(emb.order()), emb.e_hat.as_ref()))
}

/// Softmax over `s` in place. Returns `(max, ln Σ exp(s − max))`, the
/// second term via `ln_1p` of the non-maximal mass so that confident
/// rows keep their small losses.
fn softmax_in_place(s: &mut [f64]) -> (f64, f64) {
    let (top, max) = s
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, x)| if x > best.1 { (i, x) } else { best });
    for x in s.iter_mut() {
        *x = (*x - max).exp();
    }
    s[top] = 0.0;
    let rest = pairwise_sum(s);
    s[top] = 1.0;
    let z = 1.0 + rest;
    for x in s.iter_mut() {
        *x /= z;
    }
    (max, rest.ln_1p())
}

/// `p_k ∝ exp(−⟨e_k, φ⟩)` over the rows of `e`.
pub fn posterior(e: MatRef<'_, f64>, phi: &[f64]) -> Result<Vec<f64>> {
    if phi.len() != e.ncols() {
        return Err(CseError::LengthMismatch {
            what: "feature dimension",
            expected: e.ncols(),
            got: phi.len(),
        });
    }
    if !all_finite(e) || phi.iter().any(|x| !x.is_finite()) {
        return Err(CseError::NonFinite("posterior input".into()));
    }
    let mut s: Vec<f64> = (0..e.nrows())
        .map(|k| -(0..e.ncols()).map(|j| e[(k, j)] * phi[j]).sum::<f64>())
        .collect();
    softmax_in_place(&mut s);
    Ok(s)
}

/// Per-row argmax of the posterior, smallest index on ties.
pub fn predict(e: MatRef<'_, f64>, features: MatRef<'_, f64>) -> Vec<usize> {
    let scores = matmul_nt(features, e);
    (0..scores.nrows())
        .into_par_iter()
        .map(|r| {
            // argmax of −⟨e_k, φ⟩
            let mut best = 0;
            for k in 1..scores.ncols() {
                if scores[(r, k)] < scores[(r, best)] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Target distribution of each batch row.
pub enum Targets<'a, S: Borrow<SoftLabelField>> {
    Hard,
    Soft(&'a [S]),
}

/// Loss and gradients with respect to `Ê` and the batch features.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    pub grad_e_hat: Mat<f64>,
    pub grad_features: Mat<f64>,
}

/// Loss with respect to a free per-vertex embedding `E` (K×D).
#[derive(Clone, Debug)]
pub struct VertexLossEval {
    pub loss: f64,
    pub grad_e: Mat<f64>,
    pub grad_features: Mat<f64>,
}

/// Mean cross-entropy of the posterior against the targets for a
/// per-vertex embedding. The logit gradient of each row is `p − g`.
pub fn loss_vertex<S: Borrow<SoftLabelField> + Sync>(
    e: MatRef<'_, f64>,
    batch: &PixelBatch,
    targets: &Targets<'_, S>,
) -> Result<VertexLossEval> {
    let (k, d) = (e.nrows(), e.ncols());
    batch.check(k, d)?;
    if let Targets::Soft(fields) = targets {
        if fields.len() != batch.len() {
            return Err(CseError::LengthMismatch {
                what: "soft-label fields",
                expected: batch.len(),
                got: fields.len(),
            });
        }
        for (f, &l) in fields.iter().zip(&batch.labels) {
            let f = f.borrow();
            if f.center != l || f.weights.len() != k {
                return Err(CseError::Mismatch(format!(
                    "soft-label field centered at {} does not match label {l}",
                    f.center
                )));
            }
        }
    }
    if !all_finite(e) {
        return Err(CseError::NonFinite("embedding".into()));
    }
    let n = batch.len();
    // logits s = −Φ Eᵀ, one row per sample
    let mut resid = matmul_nt(batch.features.as_ref(), e);
    let mut row_losses = vec![0.0; n];
    let rows: Vec<(f64, Vec<f64>)> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut s: Vec<f64> = (0..k).map(|c| -resid[(r, c)]).collect();
            let logits = s.clone();
            let (max, log_z) = softmax_in_place(&mut s);
            let nll = |q: usize| ((max - logits[q]) + log_z).min(MAX_NLL);
            let loss = match targets {
                Targets::Hard => {
                    let l = batch.labels[r];
                    s[l] -= 1.0;
                    nll(l)
                }
                Targets::Soft(fields) => {
                    let g = &fields[r].borrow().weights;
                    let mut terms = Vec::with_capacity(k);
                    for q in 0..k {
                        if g[q] != 0.0 {
                            terms.push(g[q] * nll(q));
                        }
                        s[q] -= g[q];
                    }
                    pairwise_sum(&terms)
                }
            };
            (loss, s)
        })
        .collect();
    for (r, (loss, grad)) in rows.into_iter().enumerate() {
        row_losses[r] = loss;
        for c in 0..k {
            resid[(r, c)] = grad[c];
        }
    }
    let loss = pairwise_sum(&row_losses) / n as f64;
    if !loss.is_finite() {
        return Err(CseError::NonFinite("loss".into()));
    }
    // ∂L/∂s = (p − g)/N and s = −Φ Eᵀ
    let scale = -1.0 / n as f64;
    let grad_e = matmul_tn(resid.as_ref(), batch.features.as_ref()) * scale;
    let grad_features = matmul_nn(resid.as_ref(), e) * scale;
    Ok(VertexLossEval {
        loss,
        grad_e,
        grad_features,
    })
}

fn loss_spectral<S: Borrow<SoftLabelField> + Sync>(
    emb: &EmbeddingSet,
    basis: &SpectralBasis,
    batch: &PixelBatch,
    targets: &Targets<'_, S>,
) -> Result<LossEval> {
    let u = basis.columns(emb.order());
    let e = expand(emb, basis)?;
    let v = loss_vertex(e.as_ref(), batch, targets)?;
    Ok(LossEval {
        loss: v.loss,
        grad_e_hat: matmul_tn(u, v.grad_e.as_ref()),
        grad_features: v.grad_features,
    })
}

/// Mean negative log posterior at the labeled vertices.
pub fn loss_hard(emb: &EmbeddingSet, basis: &SpectralBasis, batch: &PixelBatch) -> Result<LossEval> {
    loss_spectral::<SoftLabelField>(emb, basis, batch, &Targets::Hard)
}

/// Cross-entropy against one soft-label field per batch row.
pub fn loss_soft<S: Borrow<SoftLabelField> + Sync>(
    emb: &EmbeddingSet,
    basis: &SpectralBasis,
    batch: &PixelBatch,
    fields: &[S],
) -> Result<LossEval> {
    for f in fields {
        if f.borrow().mesh != basis.mesh {
            return Err(CseError::Mismatch(format!(
                "soft labels computed on {}, basis is {}",
                f.borrow().mesh,
                basis.mesh
            )));
        }
    }
    loss_spectral(emb, basis, batch, &Targets::Soft(fields))
}

/// `Ê′ = C Ê`.
pub fn transfer(emb: &EmbeddingSet, map: &FunctionalMap) -> Result<EmbeddingSet> {
    if map.src != emb.basis {
        return Err(CseError::Mismatch(format!(
            "map starts at {}, embedding is bound to {}",
            map.src, emb.basis
        )));
    }
    if map.c.ncols() != emb.order() {
        return Err(CseError::Mismatch(format!(
            "map has {} source coefficients, embedding has order {}",
            map.c.ncols(),
            emb.order()
        )));
    }
    Ok(EmbeddingSet {
        e_hat: matmul_nn(map.c.as_ref(), emb.e_hat.as_ref()),
        basis: map.dst.clone(),
    })
}

/// Largest entry of `|U′Ê′ − (U′ C Uᵀ A)(U Ê)|`.
pub fn verify_transfer(
    emb: &EmbeddingSet,
    map: &FunctionalMap,
    src: &SpectralBasis,
    dst: &SpectralBasis,
) -> Result<f64> {
    map.check_bases(src, dst)?;
    let moved = transfer(emb, map)?;
    let direct = expand(&moved, dst)?;
    let e = expand(emb, src)?;
    let u = src.columns(map.c.ncols());
    let coeffs = matmul_tn(u, scale_rows(e.as_ref(), &src.mass).as_ref());
    let via = matmul_nn(
        dst.columns(map.c.nrows()),
        matmul_nn(map.c.as_ref(), coeffs.as_ref()).as_ref(),
    );
    Ok(crate::linalg::max_abs_diff(direct.as_ref(), via.as_ref()))
}

/// Per-vertex RGB from the top three principal components of the rows of
/// `e`. Components are sign-fixed (largest-magnitude entry positive) and
/// min-max scaled to `0..=255`; missing or constant channels are 128.
pub fn embedding_colors(e: MatRef<'_, f64>) -> Vec<[u8; 3]> {
    let (k, d) = (e.nrows(), e.ncols());
    if k == 0 {
        return Vec::new();
    }
    let means: Vec<f64> = (0..d)
        .map(|j| pairwise_sum(&(0..k).map(|i| e[(i, j)]).collect::<Vec<_>>()) / k as f64)
        .collect();
    let centered = Mat::from_fn(k, d, |i, j| e[(i, j)] - means[j]);
    let cov = matmul_tn(centered.as_ref(), centered.as_ref());
    let axes = crate::linalg::symmetric_eigen(cov.as_ref()).map(|(_, v)| v);
    let mut channels = vec![vec![128u8; k]; 3];
    if let Some(vecs) = axes {
        for (c, channel) in channels.iter_mut().enumerate().take(d.min(3)) {
            let col = d - 1 - c;
            let mut pivot = 0;
            for i in 0..d {
                if vecs[(i, col)].abs() > vecs[(pivot, col)].abs() {
                    pivot = i;
                }
            }
            let sign = if vecs[(pivot, col)] < 0.0 { -1.0 } else { 1.0 };
            let proj: Vec<f64> = (0..k)
                .map(|i| sign * (0..d).map(|j| centered[(i, j)] * vecs[(j, col)]).sum::<f64>())
                .collect();
            let lo = proj.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = proj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi - lo > 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
                for (dst, p) in channel.iter_mut().zip(&proj) {
                    *dst = (255.0 * (p - lo) / (hi - lo)).round() as u8;
                }
            }
        }
    }
    (0..k)
        .map(|i| [channels[0][i], channels[1][i], channels[2][i]])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lbo::{build_operators, eigenbasis};
    use crate::shapes;

    #[test]
    fn zero_feature_is_uniform() {
        let e = Mat::from_fn(5, 2, |i, j| (i + j) as f64);
        let p = posterior(e.as_ref(), &[0.0, 0.0]).unwrap();
        for x in p {
            assert!((x - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn two_vertex_posterior() {
        let e = Mat::from_fn(2, 1, |i, _| i as f64);
        let p = posterior(e.as_ref(), &[1.0]).unwrap();
        let t = (-1.0f64).exp();
        assert!((p[0] - 1.0 / (1.0 + t)).abs() < 1e-15);
        assert!((p[1] - t / (1.0 + t)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        assert!(posterior(e.as_ref(), &[f64::NAN]).is_err());
    }

    #[test]
    fn half_posterior_costs_ln2() {
        let e = Mat::from_fn(2, 1, |_, _| 0.0);
        let batch = PixelBatch::new(Mat::from_fn(1, 1, |_, _| 3.0), vec![1]).unwrap();
        let v = loss_vertex::<SoftLabelField>(e.as_ref(), &batch, &Targets::Hard).unwrap();
        assert!((v.loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let e = Mat::from_fn(3, 1, |i, _| [0.0, 1e4, -1e4][i]);
        let batch = PixelBatch::new(Mat::from_fn(1, 1, |_, _| 1.0), vec![1]).unwrap();
        let v = loss_vertex::<SoftLabelField>(e.as_ref(), &batch, &Targets::Hard).unwrap();
        assert!((v.loss - MAX_NLL).abs() < 1e-9);
        assert!(all_finite(v.grad_e.as_ref()));
    }

    #[test]
    fn transfer_identity_and_mismatch() {
        let mesh = shapes::icosphere(1, 1.0);
        let b = eigenbasis(&build_operators(&mesh).unwrap(), 6).unwrap();
        let emb = EmbeddingSet {
            e_hat: Mat::from_fn(6, 3, |i, j| (i as f64) - (j as f64) * 0.5),
            basis: b.mesh.clone(),
        };
        let moved = transfer(&emb, &FunctionalMap::identity(&b, 6)).unwrap();
        assert_eq!(moved, emb);
        assert!(verify_transfer(&emb, &FunctionalMap::identity(&b, 6), &b, &b).unwrap() < 1e-10);
        let other = FunctionalMap {
            c: Mat::identity(6, 6),
            src: MeshId("elsewhere".into()),
            dst: b.mesh.clone(),
        };
        assert!(transfer(&emb, &other).is_err());
    }

    #[test]
    fn embedding_file_round_trip() {
        let emb = EmbeddingSet {
            e_hat: Mat::from_fn(4, 2, |i, j| (i * 2 + j) as f64 / 3.0),
            basis: MeshId("abc".into()),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cseb");
        emb.save(&path).unwrap();
        assert_eq!(EmbeddingSet::load(&path).unwrap(), emb);
    }

    #[test]
    fn colors_span_the_range() {
        let e = Mat::from_fn(50, 4, |i, j| ((i * (j + 1)) as f64 * 0.37).sin());
        let c = embedding_colors(e.as_ref());
        assert_eq!(c.len(), 50);
        for ch in 0..3 {
            assert_eq!(c.iter().map(|x| x[ch]).min(), Some(0));
            assert_eq!(c.iter().map(|x| x[ch]).max(), Some(255));
        }
        let flat = embedding_colors(Mat::<f64>::zeros(5, 1).as_ref());
        assert!(flat.iter().all(|x| *x == [128, 128, 128]));
    }
}
