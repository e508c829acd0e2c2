use serde::{Deserialize, Serialize};

use super::dense::DenseMatrix;
use crate::error::{Error, Result};

/// Square sparse matrix in compressed sparse row layout.
///
/// Built by [`crate::data::build_adjacency`] with symmetric degree
/// normalization, but the type itself only enforces CSR well-formedness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseAdjacency {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseAdjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Assembles a CSR matrix from triplets. Duplicate coordinates are summed
    /// and column indices within a row end up sorted.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= n || c >= n {
                return Err(Error::Invalid(format!(
                    "triplet ({r}, {c}) out of range for n = {n}"
                )));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            row_offsets[r + 1] += 1;
            col_indices.push(c);
            values.push(v);
        }
        for r in 0..n {
            row_offsets[r + 1] += row_offsets[r];
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices,
            values,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `(column, value)` pairs stored in row `r`.
    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_offsets[r]..self.row_offsets[r + 1];
        self.col_indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(j, _)| j == c).map_or(0.0, |(_, v)| v)
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                out[(r, c)] = v;
            }
        }
        out
    }

    /// Rows that hold no entry.
    pub fn empty_rows(&self) -> Vec<bool> {
        (0..self.n)
            .map(|r| self.row_offsets[r] == self.row_offsets[r + 1])
            .collect()
    }

    /// `Y = A · X`.
    pub fn spmm(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::shape(
                "spmm",
                format!("A is {0}x{0}, X has {1} rows", self.n, x.rows()),
            ));
        }
        let mut out = DenseMatrix::zeros(self.n, x.cols());
        for r in 0..self.n {
            let out_row = out.row_mut(r);
            for (c, v) in self.row(r) {
                for (o, &xv) in out_row.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.n {
            triplets.extend(self.row(r).map(|(c, v)| (c, r, v)));
        }
        Self::from_triplets(self.n, &triplets).expect("indices already validated")
    }

    /// Exact structural and numerical symmetry.
    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| self.row(r).all(|(c, v)| self.get(c, r) == v))
    }

    /// `out = base + s·(A·x − x)`, row by row without temporaries.
    pub fn shifted_apply(&self, x: &DenseMatrix, base: &DenseMatrix, s: f64, out: &mut DenseMatrix) -> Result<()> {
        if x.rows() != self.n || base.shape() != x.shape() || out.shape() != x.shape() {
            return Err(Error::shape(
                "shifted_apply",
                format!(
                    "A is {0}x{0}, x {1:?}, base {2:?}, out {3:?}",
                    self.n,
                    x.shape(),
                    base.shape(),
                    out.shape()
                ),
            ));
        }
        let d = x.cols();
        let mut acc = vec![0.0; d];
        for r in 0..self.n {
            acc.fill(0.0);
            for (c, v) in self.row(r) {
                for (a, &xv) in acc.iter_mut().zip(x.row(c)) {
                    *a += v * xv;
                }
            }
            let (xr, br) = (x.row(r), base.row(r));
            for (j, o) in out.row_mut(r).iter_mut().enumerate() {
                *o = br[j] + s * (acc[j] - xr[j]);
            }
        }
        Ok(())
    }

    /// `Y = Aᵀ · X`.
    pub fn spmm_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        if x.rows() != self.n {
            return Err(Error::shape(
                "spmm_transpose",
                format!("A is {0}x{0}, X has {1} rows", self.n, x.rows()),
            ));
        }
        let mut out = DenseMatrix::zeros(self.n, x.cols());
        for r in 0..self.n {
            for (c, v) in self.row(r) {
                let src = x.row(r);
                for (o, &xv) in out.row_mut(c).iter_mut().zip(src) {
                    *o += v * xv;
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn spmm_permutation() {
        let a = SparseAdjacency::from_triplets(2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        let x = DenseMatrix::column(vec![1.0, 2.0]);
        assert_eq!(a.spmm(&x).unwrap().as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn spmm_zero_matrix() {
        let a = SparseAdjacency::empty(3);
        let x = DenseMatrix::filled(3, 2, 7.0);
        assert_eq!(a.spmm(&x).unwrap(), DenseMatrix::zeros(3, 2));
    }

    #[test]
    fn spmm_rejects_mismatch() {
        let a = SparseAdjacency::empty(3);
        assert!(a.spmm(&DenseMatrix::zeros(2, 2)).is_err());
        assert!(a.spmm_transpose(&DenseMatrix::zeros(4, 1)).is_err());
    }

    #[test]
    fn spmm_matches_dense_on_random_6x6() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut triplets = Vec::new();
        for r in 0..6 {
            for c in 0..6 {
                if rng.random::<f64>() < 0.4 {
                    triplets.push((r, c, rng.random_range(-1.0..1.0)));
                }
            }
        }
        let a = SparseAdjacency::from_triplets(6, &triplets).unwrap();
        let x = DenseMatrix::from_vec(6, 3, (0..18).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let dense = a.to_dense();
        let expect = dense.matmul(&x).unwrap();
        let got = a.spmm(&x).unwrap();
        for (g, e) in got.as_slice().iter().zip(expect.as_slice()) {
            assert!((g - e).abs() <= 1e-12);
        }
        let expect_t = dense.transpose().matmul(&x).unwrap();
        let got_t = a.spmm_transpose(&x).unwrap();
        for (g, e) in got_t.as_slice().iter().zip(expect_t.as_slice()) {
            assert!((g - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn duplicate_triplets_are_summed() {
        let a = SparseAdjacency::from_triplets(2, &[(0, 1, 0.5), (0, 1, 0.25)]).unwrap();
        assert_eq!(a.nnz(), 1);
        assert_eq!(a.get(0, 1), 0.75);
        assert!(SparseAdjacency::from_triplets(2, &[(0, 2, 1.0)]).is_err());
    }
}
