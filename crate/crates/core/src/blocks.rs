//! Block-structured linear algebra on the product space X = X_1 x ... x X_K.
//!
//! Vectors of length q are partitioned into K contiguous blocks of sizes
//! p_1, ..., p_K. The canonical injection/projection pair (embed/extract),
//! the block-diagonal mask `f_map`, the off-diagonal mask `g_map`, block
//! extraction `pi_block` and the inverse PSD square root live here.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dimensions (p_1, ..., p_K) of the K component spaces and the total q.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    q: usize,
}

impl BlockStructure {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidBlocks(format!(
                "need at least 2 blocks, got {}",
                dims.len()
            )));
        }
        if dims.iter().any(|&p| p == 0) {
            return Err(Error::InvalidBlocks("every block must be nonempty".into()));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        let mut acc = 0usize;
        for &p in &dims {
            offsets.push(acc);
            acc += p;
        }
        offsets.push(acc);
        Ok(Self { dims, offsets, q: acc })
    }

    /// Number of blocks K.
    pub fn k(&self) -> usize {
        self.dims.len()
    }

    /// Total dimension q.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    /// Start offset of block `k` (0-based).
    pub fn offset(&self, k: usize) -> usize {
        self.offsets[k]
    }

    /// Dimension p_k of block `k` (0-based).
    pub fn dim(&self, k: usize) -> usize {
        self.dims[k]
    }

    pub fn check_block(&self, k: usize) -> Result<()> {
        if k >= self.k() {
            Err(Error::IndexOutOfRange { index: k, k: self.k() })
        } else {
            Ok(())
        }
    }

    /// Degrees of freedom of the non-correlation test: sum_{k>l} p_k p_l.
    pub fn cross_dof(&self) -> usize {
        let mut d = 0;
        for k in 1..self.k() {
            for l in 0..k {
                d += self.dims[k] * self.dims[l];
            }
        }
        d
    }
}

/// A symmetric q x q scatter/covariance matrix tied to a block structure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScatterMatrix {
    entries: DMatrix<f64>,
    structure: BlockStructure,
}

impl ScatterMatrix {
    /// Relative symmetry tolerance.
    const SYM_TOL: f64 = 1e-12;

    pub fn new(entries: DMatrix<f64>, structure: BlockStructure) -> Result<Self> {
        if entries.nrows() != structure.q() || entries.ncols() != structure.q() {
            return Err(Error::DimensionMismatch {
                expected: structure.q(),
                got: entries.nrows(),
            });
        }
        let scale = entries.amax().max(1.0);
        let max_asym = (&entries - entries.transpose()).amax();
        if max_asym > Self::SYM_TOL * scale {
            return Err(Error::NotSymmetric { max_asym });
        }
        Ok(Self { entries, structure })
    }

    /// Identity scatter for the given structure.
    pub fn identity(structure: BlockStructure) -> Self {
        let q = structure.q();
        Self { entries: DMatrix::identity(q, q), structure }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn structure(&self) -> &BlockStructure {
        &self.structure
    }

    /// Block V_{kl} = tau_k V tau_l^*.
    pub fn block(&self, k: usize, l: usize) -> Result<DMatrix<f64>> {
        pi_block(&self.entries, k, l, &self.structure)
    }

    /// V scaled by a positive factor.
    pub fn scaled(&self, c: f64) -> Self {
        Self { entries: &self.entries * c, structure: self.structure.clone() }
    }
}

/// tau_k^*: place a block-k vector into the full space, zeros elsewhere.
pub fn embed(k: usize, v: &DVector<f64>, bs: &BlockStructure) -> Result<DVector<f64>> {
    bs.check_block(k)?;
    if v.len() != bs.dim(k) {
        return Err(Error::DimensionMismatch { expected: bs.dim(k), got: v.len() });
    }
    let mut out = DVector::zeros(bs.q());
    out.rows_mut(bs.offset(k), bs.dim(k)).copy_from(v);
    Ok(out)
}

/// tau_k: extract block k from a full-space vector.
pub fn extract(k: usize, x: &DVector<f64>, bs: &BlockStructure) -> Result<DVector<f64>> {
    bs.check_block(k)?;
    if x.len() != bs.q() {
        return Err(Error::DimensionMismatch { expected: bs.q(), got: x.len() });
    }
    Ok(x.rows(bs.offset(k), bs.dim(k)).into_owned())
}

/// Block-diagonal part of A: f(A) = sum_k tau_k^* tau_k A tau_k^* tau_k.
pub fn f_map(a: &DMatrix<f64>, bs: &BlockStructure) -> Result<DMatrix<f64>> {
    check_square(a, bs)?;
    let mut out = DMatrix::zeros(bs.q(), bs.q());
    for k in 0..bs.k() {
        let (o, p) = (bs.offset(k), bs.dim(k));
        out.view_mut((o, o), (p, p)).copy_from(&a.view((o, o), (p, p)));
    }
    Ok(out)
}

/// Off-diagonal-block part of A; f(A) + g(A) = A.
pub fn g_map(a: &DMatrix<f64>, bs: &BlockStructure) -> Result<DMatrix<f64>> {
    Ok(a - f_map(a, bs)?)
}

/// Block (k, l) of A, i.e. tau_k A tau_l^*.
pub fn pi_block(a: &DMatrix<f64>, k: usize, l: usize, bs: &BlockStructure) -> Result<DMatrix<f64>> {
    check_square(a, bs)?;
    bs.check_block(k)?;
    bs.check_block(l)?;
    Ok(a.view((bs.offset(k), bs.offset(l)), (bs.dim(k), bs.dim(l))).into_owned())
}

fn check_square(a: &DMatrix<f64>, bs: &BlockStructure) -> Result<()> {
    if a.nrows() != bs.q() || a.ncols() != bs.q() {
        return Err(Error::DimensionMismatch { expected: bs.q(), got: a.nrows() });
    }
    Ok(())
}

/// Relative positive-definiteness tolerance for `inv_sqrt_psd`.
pub const PD_TOL: f64 = 1e-10;

/// Inverse symmetric square root of a symmetric positive definite matrix.
///
/// The input is symmetrized as (A + A^T)/2 before the eigendecomposition to
/// absorb roundoff from upstream products.
pub fn inv_sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lambda_min > PD_TOL * lambda_max.max(0.0)) {
        return Err(Error::NotPositiveDefinite { lambda_min, lambda_max });
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|w| 1.0 / w.sqrt()));
    Ok(&eig.eigenvectors * inv_sqrt * eig.eigenvectors.transpose())
}

/// Symmetric square root of a symmetric positive definite matrix.
pub fn sqrt_psd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lambda_min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lambda_min > PD_TOL * lambda_max.max(0.0)) {
        return Err(Error::NotPositiveDefinite { lambda_min, lambda_max });
    }
    let sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(&eig.eigenvectors * sqrt * eig.eigenvectors.transpose())
}

/// Spectral operator norm of a general matrix (largest singular value).
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    let ata = a.transpose() * a;
    let eig = ata.symmetric_eigen();
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
        .max(0.0)
        .sqrt()
}
