//! Synthetic supervision and full-batch gradient descent on `Ê`.
//!
//! Features stand in for network outputs: each supervised vertex emits
//! samples equal to a teacher embedding row plus Gaussian noise.

use std::sync::Arc;

use faer::Mat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::embed::{expand, loss_hard, loss_soft, transfer, EmbeddingSet, LossEval, PixelBatch};
use crate::error::{CseError, Result};
use crate::fmap::FunctionalMap;
use crate::geodesics::{Kernel, SoftLabelCache, SoftLabelField};
use crate::lbo::SpectralBasis;
use crate::mesh::MeshId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub mesh_id: MeshId,
    pub samples_per_vertex: usize,
    pub noise_std: f64,
    /// Fraction of vertices with at least one sample.
    pub label_fraction: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(CseError::InvalidArgument(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return Err(CseError::InvalidArgument(format!(
                "label_fraction must lie in (0, 1], got {}",
                self.label_fraction
            )));
        }
        if self.samples_per_vertex == 0 {
            return Err(CseError::InvalidArgument("samples_per_vertex must be positive".into()));
        }
        Ok(())
    }
}

/// Vertices chosen for supervision, ascending.
pub fn labeled_vertices(k: usize, fraction: f64, seed: u64) -> Vec<usize> {
    let count = ((fraction * k as f64).round() as usize).clamp(1, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut picked = order[..count].to_vec();
    picked.sort_unstable();
    picked
}

/// Samples `teacher row + N(0, noise_std²)` for each supervised vertex.
pub fn make_synthetic(
    config: &SyntheticConfig,
    teacher: &EmbeddingSet,
    basis: &SpectralBasis,
) -> Result<PixelBatch> {
    config.validate()?;
    if config.mesh_id != teacher.basis {
        return Err(CseError::Mismatch(format!(
            "synthetic config names mesh {}, teacher is bound to {}",
            config.mesh_id, teacher.basis
        )));
    }
    let rows = expand(teacher, basis)?;
    let k = basis.num_vertices();
    let d = teacher.dim();
    let vertices = labeled_vertices(k, config.label_fraction, config.seed);
    // a separate stream so the label set does not depend on the noise level
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let normal = Normal::new(0.0, config.noise_std.max(f64::MIN_POSITIVE))
        .map_err(|e| CseError::InvalidArgument(e.to_string()))?;
    let n = vertices.len() * config.samples_per_vertex;
    let mut features = Mat::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    for (i, &v) in vertices.iter().enumerate() {
        for s in 0..config.samples_per_vertex {
            let r = i * config.samples_per_vertex + s;
            for j in 0..d {
                let noise = if config.noise_std > 0.0 {
                    normal.sample(&mut rng)
                } else {
                    0.0
                };
                features[(r, j)] = rows[(v, j)] + noise;
            }
            labels.push(v);
        }
    }
    PixelBatch::new(features, labels)
}

/// Random smooth teacher of dimension `dim` built from the eigenvectors
/// `1..=bandwidth`, scaled to RMS row norm `amplitude`. The last column is
/// the constant function 1, which lets a dot-product score act like a
/// negative squared distance.
pub fn make_teacher(
    basis: &SpectralBasis,
    dim: usize,
    bandwidth: usize,
    amplitude: f64,
    seed: u64,
) -> Result<EmbeddingSet> {
    if dim < 2 {
        return Err(CseError::InvalidArgument("teacher needs at least 2 dimensions".into()));
    }
    if bandwidth == 0 || bandwidth >= basis.order() {
        return Err(CseError::InvalidArgument(format!(
            "teacher bandwidth {bandwidth} needs a basis of higher order than {}",
            basis.order()
        )));
    }
    let m = bandwidth + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut e_hat = Mat::zeros(m, dim);
    for j in 0..dim - 1 {
        for i in 1..m {
            e_hat[(i, j)] = normal.sample(&mut rng);
        }
    }
    let area: f64 = basis.mass.iter().sum();
    // ∫ |t|² = Σ ê², so this sets the area-weighted mean squared norm
    let mut energy = 0.0f64;
    for j in 0..dim - 1 {
        for i in 0..m {
            energy += e_hat[(i, j)] * e_hat[(i, j)];
        }
    }
    let scale = amplitude * (area / energy).sqrt();
    for j in 0..dim - 1 {
        for i in 1..m {
            e_hat[(i, j)] *= scale;
        }
    }
    // U₀ = 1/√area
    e_hat[(0, dim - 1)] = area.sqrt();
    Ok(EmbeddingSet {
        e_hat,
        basis: basis.mesh.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LossKind {
    Hard,
    Soft {
        sigma: f64,
        #[serde(default)]
        kernel: Kernel,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Init {
    Zero,
    /// Gaussian entries; `scale` defaults to `1/√M`.
    Random {
        #[serde(default)]
        scale: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub loss: LossKind,
    pub step_size: f64,
    pub iterations: usize,
    pub init: Init,
    /// Also descend on the batch features.
    pub update_features: bool,
    /// Spectral order M; the basis order when absent.
    pub order: Option<usize>,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Hard,
            step_size: 1.0,
            iterations: 500,
            init: Init::Random { scale: None },
            update_features: false,
            order: None,
            seed: 0,
        }
    }
}

impl FitConfig {
    fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(CseError::InvalidArgument(format!(
                "step_size must be positive, got {}",
                self.step_size
            )));
        }
        if self.iterations == 0 {
            return Err(CseError::InvalidArgument("iterations must be at least 1".into()));
        }
        if let LossKind::Soft { sigma, .. } = self.loss {
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(CseError::InvalidArgument(format!(
                    "sigma must be positive, got {sigma}"
                )));
            }
        }
        Ok(())
    }

    pub fn initial(&self, basis: &SpectralBasis, dim: usize) -> Result<EmbeddingSet> {
        let m = self.order.unwrap_or(basis.order());
        if m == 0 || m > basis.order() {
            return Err(CseError::InvalidArgument(format!(
                "order {m} outside 1..={}",
                basis.order()
            )));
        }
        let mut emb = EmbeddingSet::zeros(basis, m, dim);
        if let Init::Random { scale } = self.init {
            let std = scale.unwrap_or(1.0 / (m as f64).sqrt());
            let normal = Normal::new(0.0, std).map_err(|e| CseError::InvalidArgument(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for j in 0..dim {
                for i in 0..m {
                    emb.e_hat[(i, j)] = normal.sample(&mut rng);
                }
            }
        }
        Ok(emb)
    }
}

/// A batch with the target distribution of each row.
#[derive(Clone, Debug)]
pub struct Supervision {
    pub batch: PixelBatch,
    pub soft: Option<Vec<Arc<SoftLabelField>>>,
}

impl Supervision {
    pub fn hard(batch: PixelBatch) -> Self {
        Self { batch, soft: None }
    }

    /// Attach geodesic soft labels for every row, reusing cached fields.
    pub fn soft(batch: PixelBatch, cache: &SoftLabelCache, sigma: f64, kernel: Kernel) -> Result<Self> {
        let fields = cache.get_many(&batch.labels, sigma, kernel)?;
        Ok(Self {
            batch,
            soft: Some(fields),
        })
    }

    /// Targets matching `loss`; soft labels need the cache of the mesh.
    pub fn for_loss(batch: PixelBatch, loss: LossKind, cache: Option<&SoftLabelCache>) -> Result<Self> {
        match loss {
            LossKind::Hard => Ok(Self::hard(batch)),
            LossKind::Soft { sigma, kernel } => {
                let cache = cache.ok_or_else(|| {
                    CseError::InvalidArgument("soft loss needs the mesh geometry".into())
                })?;
                Self::soft(batch, cache, sigma, kernel)
            }
        }
    }

    pub fn evaluate(&self, emb: &EmbeddingSet, basis: &SpectralBasis) -> Result<LossEval> {
        match &self.soft {
            None => loss_hard(emb, basis, &self.batch),
            Some(fields) => loss_soft(emb, basis, &self.batch, fields),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub embedding: EmbeddingSet,
    /// Features after fitting (changed only with `update_features`).
    pub features: Mat<f64>,
    /// Loss at the start of every iteration.
    pub history: Vec<f64>,
    pub final_loss: f64,
}

fn descend(
    basis: &SpectralBasis,
    sup: &mut Supervision,
    emb: &mut EmbeddingSet,
    config: &FitConfig,
    iteration: usize,
) -> Result<f64> {
    let eval = sup.evaluate(emb, basis).map_err(|e| match e {
        CseError::NonFinite(_) => CseError::Diverged { iteration },
        e => e,
    })?;
    emb.e_hat -= eval.grad_e_hat * config.step_size;
    if config.update_features {
        sup.batch.features -= eval.grad_features * config.step_size;
    }
    Ok(eval.loss)
}

/// Gradient descent from the configured initialization.
pub fn fit(basis: &SpectralBasis, sup: &Supervision, config: &FitConfig) -> Result<FitResult> {
    let init = config.initial(basis, sup.batch.features.ncols())?;
    fit_from(basis, sup, init, config)
}

/// Gradient descent from a given embedding.
pub fn fit_from(
    basis: &SpectralBasis,
    sup: &Supervision,
    init: EmbeddingSet,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    init.check_basis(basis)?;
    let mut emb = init;
    let mut sup = sup.clone();
    let mut history = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        history.push(descend(basis, &mut sup, &mut emb, config, it)?);
    }
    let final_loss = sup
        .evaluate(&emb, basis)
        .map_err(|_| CseError::Diverged {
            iteration: config.iterations,
        })?
        .loss;
    Ok(FitResult {
        embedding: emb,
        features: sup.batch.features,
        history,
        final_loss,
    })
}

/// One class of a joint fit: its basis and supervision.
pub struct ClassData<'a> {
    pub basis: &'a SpectralBasis,
    pub supervision: &'a Supervision,
}

#[derive(Clone, Debug)]
pub struct JointFit {
    pub embeddings: Vec<EmbeddingSet>,
    /// Per class, the loss at the start of every iteration; empty for
    /// classes without labels.
    pub histories: Vec<Vec<f64>>,
}

/// Initialize each class by transferring `source` through its map, then
/// fit all classes with round-robin gradient steps.
pub fn joint_fit(
    classes: &[ClassData<'_>],
    source: &EmbeddingSet,
    maps: &[FunctionalMap],
    config: &FitConfig,
) -> Result<JointFit> {
    if maps.len() != classes.len() {
        return Err(CseError::LengthMismatch {
            what: "functional maps",
            expected: classes.len(),
            got: maps.len(),
        });
    }
    let inits = classes
        .iter()
        .zip(maps)
        .map(|(class, map)| {
            let moved = transfer(source, map)?;
            moved.check_basis(class.basis)?;
            Ok(moved)
        })
        .collect::<Result<Vec<_>>>()?;
    joint_fit_from(classes, inits, config)
}

/// Round-robin fitting from explicit initial embeddings.
pub fn joint_fit_from(
    classes: &[ClassData<'_>],
    inits: Vec<EmbeddingSet>,
    config: &FitConfig,
) -> Result<JointFit> {
    config.validate()?;
    if inits.len() != classes.len() {
        return Err(CseError::LengthMismatch {
            what: "initial embeddings",
            expected: classes.len(),
            got: inits.len(),
        });
    }
    for (class, emb) in classes.iter().zip(&inits) {
        emb.check_basis(class.basis)?;
    }
    let mut embeddings = inits;
    let mut sups: Vec<Supervision> = classes.iter().map(|c| c.supervision.clone()).collect();
    let mut histories = vec![Vec::new(); classes.len()];
    for it in 0..config.iterations {
        for (c, class) in classes.iter().enumerate() {
            if sups[c].batch.is_empty() {
                continue;
            }
            let loss = descend(class.basis, &mut sups[c], &mut embeddings[c], config, it)?;
            histories[c].push(loss);
        }
    }
    Ok(JointFit {
        embeddings,
        histories,
    })
}

/// Fraction of rows whose posterior argmax equals the label.
pub fn accuracy(emb: &EmbeddingSet, basis: &SpectralBasis, batch: &PixelBatch) -> Result<f64> {
    let e = expand(emb, basis)?;
    let pred = crate::embed::predict(e.as_ref(), batch.features.as_ref());
    let hits = pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / batch.len().max(1) as f64)
}

/// First iteration whose recorded loss is at or below `threshold`.
pub fn first_below(history: &[f64], threshold: f64) -> Option<usize> {
    history.iter().position(|&l| l <= threshold)
}
