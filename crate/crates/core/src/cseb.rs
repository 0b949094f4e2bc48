//! `CSEB` binary tensor container with a JSON manifest sidecar.
//!
//! Layout: magic `CSEB`, u32 version, u32 tensor count, then per tensor a
//! u8 rank, `rank` u64 dimensions and the row-major little-endian f64
//! payload. The manifest for `x.cseb` lives in `x.cseb.json`.

use std::fs;
use std::path::{Path, PathBuf};

use faer::{Mat, MatRef};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CseError, Result};
use crate::lbo::SpectralBasis;
use crate::mesh::MeshId;

pub const MAGIC: &[u8; 4] = b"CSEB";
pub const VERSION: u32 = 1;

/// Dense f64 tensor, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(CseError::LengthMismatch {
                what: "tensor payload",
                expected: n,
                got: data.len(),
            });
        }
        if dims.len() > u8::MAX as usize {
            return Err(CseError::Container(format!("rank {} too large", dims.len())));
        }
        Ok(Self { dims, data })
    }

    pub fn vector(data: &[f64]) -> Self {
        Self {
            dims: vec![data.len()],
            data: data.to_vec(),
        }
    }

    pub fn matrix(m: MatRef<'_, f64>) -> Self {
        let (r, c) = (m.nrows(), m.ncols());
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            for j in 0..c {
                data.push(m[(i, j)]);
            }
        }
        Self {
            dims: vec![r, c],
            data,
        }
    }

    pub fn to_matrix(&self) -> Result<Mat<f64>> {
        match self.dims[..] {
            [r, c] => Ok(Mat::from_fn(r, c, |i, j| self.data[i * c + j])),
            _ => Err(CseError::Container(format!(
                "expected a rank-2 tensor, found rank {}",
                self.dims.len()
            ))),
        }
    }

    pub fn to_vector(&self) -> Result<Vec<f64>> {
        match self.dims[..] {
            [_] => Ok(self.data.clone()),
            _ => Err(CseError::Container(format!(
                "expected a rank-1 tensor, found rank {}",
                self.dims.len()
            ))),
        }
    }
}

pub fn encode(tensors: &[Tensor]) -> Vec<u8> {
    let payload: usize = tensors.iter().map(|t| 9 + 8 * (t.dims.len() + t.data.len())).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &t.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CseError::Truncated(format!("container ends at byte {}", self.bytes.len())))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CseError::Container("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CseError::Container(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(64));
    for _ in 0..count {
        let rank = r.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        let mut n = 1usize;
        for _ in 0..rank {
            let d = usize::try_from(r.u64()?)
                .map_err(|_| CseError::Container("dimension overflows usize".into()))?;
            n = n
                .checked_mul(d)
                .ok_or_else(|| CseError::Container("tensor size overflows".into()))?;
            dims.push(d);
        }
        let raw = r.take(n.checked_mul(8).ok_or_else(|| {
            CseError::Container("tensor size overflows".into())
        })?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor { dims, data });
    }
    if r.pos != bytes.len() {
        return Err(CseError::Container(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(tensors)
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Write the container and its manifest side by side.
pub fn write_artifact<M: Serialize>(path: &Path, tensors: &[Tensor], manifest: &M) -> Result<()> {
    fs::write(path, encode(tensors))?;
    let mut json = serde_json::to_string_pretty(manifest)?;
    json.push('\n');
    fs::write(manifest_path(path), json)?;
    Ok(())
}

pub fn read_artifact<M: DeserializeOwned>(path: &Path) -> Result<(Vec<Tensor>, M)> {
    let tensors = decode(&fs::read(path)?)?;
    let manifest = serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?;
    Ok((tensors, manifest))
}

pub(crate) fn expect_kind(found: &str, want: &str) -> Result<()> {
    if found == want {
        Ok(())
    } else {
        Err(CseError::Container(format!("expected a {want} artifact, found {found}")))
    }
}

pub(crate) fn expect_count(tensors: &[Tensor], n: usize) -> Result<()> {
    if tensors.len() == n {
        Ok(())
    } else {
        Err(CseError::Container(format!(
            "expected {n} tensors, found {}",
            tensors.len()
        )))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisManifest {
    pub kind: String,
    pub mesh: MeshId,
    pub num_vertices: usize,
    pub order: usize,
    pub eigenvalues: Vec<f64>,
}

/// Tensors: eigenvectors (K×M), eigenvalues (M), lumped mass (K).
pub fn save_basis(path: &Path, basis: &SpectralBasis) -> Result<()> {
    let manifest = BasisManifest {
        kind: "basis".into(),
        mesh: basis.mesh.clone(),
        num_vertices: basis.num_vertices(),
        order: basis.order(),
        eigenvalues: basis.eigenvalues.clone(),
    };
    write_artifact(
        path,
        &[
            Tensor::matrix(basis.eigenvectors.as_ref()),
            Tensor::vector(&basis.eigenvalues),
            Tensor::vector(&basis.mass),
        ],
        &manifest,
    )
}

pub fn load_basis(path: &Path) -> Result<SpectralBasis> {
    let (tensors, manifest): (_, BasisManifest) = read_artifact(path)?;
    expect_kind(&manifest.kind, "basis")?;
    expect_count(&tensors, 3)?;
    let eigenvectors = tensors[0].to_matrix()?;
    let eigenvalues = tensors[1].to_vector()?;
    let mass = tensors[2].to_vector()?;
    if eigenvectors.nrows() != mass.len()
        || eigenvectors.ncols() != eigenvalues.len()
        || manifest.order != eigenvalues.len()
        || manifest.num_vertices != mass.len()
    {
        return Err(CseError::Container("basis tensor shapes disagree".into()));
    }
    Ok(SpectralBasis {
        eigenvectors,
        eigenvalues,
        mass,
        mesh: manifest.mesh,
    })
}
