//! Continuous surface embeddings on triangle meshes.
//!
//! The crate covers the geometry side of learning dense correspondences
//! against a canonical surface:
//!
//! - [`io`]: OBJ / ASCII PLY meshes and colored exports
//! - [`lbo`]: cotangent stiffness, lumped mass, gradient and divergence
//!   operators, and the truncated Laplace-Beltrami eigenbasis
//! - [`geodesics`]: edge-graph geodesic fields and soft-label kernels
//! - [`fmap`]: functional maps, point-map decoding and multi-scale
//!   refinement from sparse seeds
//! - [`embed`]: spectral embeddings, the vertex posterior and its two
//!   cross-entropy losses, cross-mesh transfer
//! - [`fitter`]: synthetic supervision and gradient-descent fitting
//! - [`eval`]: geodesic-error evaluation
//! - [`cli`]: the `csegeo` command line

pub mod cli;
pub mod cseb;
pub mod embed;
pub mod error;
pub mod eval;
pub mod fitter;
pub mod fmap;
pub mod geodesics;
pub mod io;
pub mod lbo;
pub mod linalg;
pub mod mesh;
pub mod shapes;
pub mod sparse;

pub use error::{CseError, Result};
pub use lbo::{build_operators, eigenbasis, face_gradient, Operators, SpectralBasis};
pub use mesh::{CorrespondenceSet, Mesh, MeshId, SymmetryMap};
