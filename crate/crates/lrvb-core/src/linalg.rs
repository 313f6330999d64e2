//! Small dense linear-algebra helpers: half-vectorization (vech) indexing and
//! block-diagonal matrices aligned with factor layouts.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of entries in the upper triangle (including diagonal) of a `p x p`
/// symmetric matrix.
pub fn vech_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Index of entry `(a, b)` with `a <= b` in row-major upper-triangle order:
/// `(0,0), (0,1), ..., (0,p-1), (1,1), ...`.
pub fn vech_index(p: usize, a: usize, b: usize) -> usize {
    debug_assert!(a <= b && b < p);
    a * p - a * (a + 1) / 2 + b
}

/// Iterator over `(a, b)` pairs in vech order.
pub fn vech_pairs(p: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..p).flat_map(move |a| (a..p).map(move |b| (a, b)))
}

/// Packs the upper triangle of a symmetric matrix into a vector in vech order.
pub fn vech_pack(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    DVector::from_iterator(vech_len(p), vech_pairs(p).map(|(a, b)| m[(a, b)]))
}

/// Expands a vech vector into a full symmetric matrix.
pub fn vech_unpack(p: usize, v: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(p, p);
    for (idx, (a, b)) in vech_pairs(p).enumerate() {
        m[(a, b)] = v[idx];
        m[(b, a)] = v[idx];
    }
    m
}

/// Block-diagonal matrix stored as a list of square blocks.
///
/// Used for the sufficient-statistic covariance `V`, whose blocks line up
/// with the factors of a [`crate::layout::BlockLayout`].
#[derive(Debug, Clone, PartialEq)]
pub struct BlockDiag {
    blocks: Vec<DMatrix<f64>>,
    offsets: Vec<usize>,
    dim: usize,
}

impl BlockDiag {
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut offsets = Vec::with_capacity(blocks.len());
        let mut dim = 0;
        for b in &blocks {
            if b.nrows() != b.ncols() {
                return Err(Error::DimensionMismatch(format!(
                    "block-diagonal blocks must be square, got {}x{}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            offsets.push(dim);
            dim += b.nrows();
        }
        Ok(Self { blocks, offsets, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &DMatrix<f64> {
        &self.blocks[i]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        }
        out
    }

    pub fn diagonal(&self) -> DVector<f64> {
        let mut d = DVector::zeros(self.dim);
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            for i in 0..b.nrows() {
                d[off + i] = b[(i, i)];
            }
        }
        d
    }

    /// Computes `self * rhs` without densifying.
    pub fn mul_dense(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if rhs.nrows() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "block-diag dim {} vs rhs rows {}",
                self.dim,
                rhs.nrows()
            )));
        }
        let mut out = DMatrix::zeros(self.dim, rhs.ncols());
        for (b, &off) in self.blocks.iter().zip(&self.offsets) {
            let rows = b.nrows();
            let prod = b * rhs.view((off, 0), (rows, rhs.ncols()));
            out.view_mut((off, 0), (rows, rhs.ncols())).copy_from(&prod);
        }
        Ok(out)
    }

    /// Splits into leading/trailing parts at `dim_head`, which must fall on a
    /// block boundary.
    pub fn split(&self, dim_head: usize) -> Result<(BlockDiag, BlockDiag)> {
        let mut head = Vec::new();
        let mut tail = Vec::new();
        let mut seen = 0;
        for b in &self.blocks {
            if seen < dim_head {
                seen += b.nrows();
                if seen > dim_head {
                    return Err(Error::LayoutMismatch(format!(
                        "split point {dim_head} is not on a block boundary"
                    )));
                }
                head.push(b.clone());
            } else {
                tail.push(b.clone());
            }
        }
        if seen < dim_head {
            return Err(Error::DimensionMismatch(format!(
                "split point {dim_head} exceeds dimension {}",
                self.dim
            )));
        }
        Ok((BlockDiag::new(head)?, BlockDiag::new(tail)?))
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.iter())
            .fold(0.0f64, |acc, &x| acc.max(x.abs()))
    }
}
