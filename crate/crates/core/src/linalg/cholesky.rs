use super::CsrMatrix;
use crate::error::{Error, Result};

/// Envelope (skyline) Cholesky factorization A = L Lᵀ.
///
/// Row `i` of `L` is stored densely from its first structural nonzero
/// `first[i]` up to the diagonal; fill is confined to the envelope, which
/// for lexicographically ordered grid operators is the grid bandwidth.
#[derive(Debug, Clone)]
pub struct SkylineCholesky {
    n: usize,
    first: Vec<usize>,
    start: Vec<usize>,
    data: Vec<f64>,
}

impl SkylineCholesky {
    pub fn factor(a: &CsrMatrix) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::invalid("Cholesky needs a square matrix"));
        }
        let n = a.nrows();
        let mut first = vec![0usize; n];
        for (i, f) in first.iter_mut().enumerate() {
            let (cols, _) = a.row(i);
            *f = cols.first().copied().unwrap_or(i).min(i);
        }
        let mut start = Vec::with_capacity(n + 1);
        start.push(0);
        for i in 0..n {
            start.push(start[i] + (i - first[i] + 1));
        }
        let mut data = vec![0.0; start[n]];
        for i in 0..n {
            let (cols, vals) = a.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                if j <= i {
                    data[start[i] + j - first[i]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let row_i = start[i];
            for j in fi..i {
                let fj = first[j];
                let lo = fi.max(fj);
                let row_j = start[j];
                let mut s = data[row_i + j - fi];
                for k in lo..j {
                    s -= data[row_i + k - fi] * data[row_j + k - fj];
                }
                data[row_i + j - fi] = s / data[row_j + j - fj];
            }
            let mut d = data[row_i + i - fi];
            for k in fi..i {
                let l = data[row_i + k - fi];
                d -= l * l;
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::FactorizationFailure { row: i, pivot: d });
            }
            data[row_i + i - fi] = d.sqrt();
        }
        Ok(SkylineCholesky { n, first, start, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of the factor, including envelope fill.
    pub fn envelope_size(&self) -> usize {
        self.data.len()
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        // L y = b
        for i in 0..self.n {
            let fi = self.first[i];
            let row = self.start[i];
            let mut s = x[i];
            for k in fi..i {
                s -= self.data[row + k - fi] * x[k];
            }
            x[i] = s / self.data[row + i - fi];
        }
        // Lᵀ x = y, column sweep over stored rows
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = self.start[i];
            x[i] /= self.data[row + i - fi];
            let xi = x[i];
            for k in fi..i {
                x[k] -= self.data[row + k - fi] * xi;
            }
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}
