use super::CsrMatrix;

/// Symmetric positive definite approximation of an inverse, applied as z = P r.
pub trait Preconditioner: Sync {
    fn apply(&self, r: &[f64], z: &mut [f64]);
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl Preconditioner for Identity {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        z.copy_from_slice(r);
    }
}

#[derive(Debug, Clone)]
pub struct Jacobi {
    inv_diag: Vec<f64>,
}

impl Jacobi {
    pub fn new(a: &CsrMatrix) -> Self {
        Jacobi {
            inv_diag: a.diagonal().iter().map(|d| 1.0 / d).collect(),
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Jacobi {
            inv_diag: diag.iter().map(|d| 1.0 / d).collect(),
        }
    }
}

impl Preconditioner for Jacobi {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        for ((zi, ri), di) in z.iter_mut().zip(r).zip(&self.inv_diag) {
            *zi = ri * di;
        }
    }
}

/// One forward and one backward Gauss–Seidel sweep: P = (D+U)⁻¹ D (D+L)⁻¹.
#[derive(Debug, Clone)]
pub struct SymmetricGaussSeidel<'a> {
    a: &'a CsrMatrix,
    diag: Vec<f64>,
}

impl<'a> SymmetricGaussSeidel<'a> {
    pub fn new(a: &'a CsrMatrix) -> Self {
        SymmetricGaussSeidel {
            a,
            diag: a.diagonal(),
        }
    }
}

impl Preconditioner for SymmetricGaussSeidel<'_> {
    fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = r.len();
        // forward: (D + L) y = r
        for i in 0..n {
            let (cols, vals) = self.a.row(i);
            let mut s = r[i];
            for (&j, &v) in cols.iter().zip(vals) {
                if j < i {
                    s -= v * z[j];
                }
            }
            z[i] = s / self.diag[i];
        }
        // scale by D, then backward: (D + U) z = D y
        for i in (0..n).rev() {
            let (cols, vals) = self.a.row(i);
            let mut s = self.diag[i] * z[i];
            for (&j, &v) in cols.iter().zip(vals) {
                if j > i {
                    s -= v * z[j];
                }
            }
            z[i] = s / self.diag[i];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PreconditionerKind {
    None,
    Jacobi,
    #[default]
    SymmetricGaussSeidel,
}

impl PreconditionerKind {
    pub fn build<'a>(self, a: &'a CsrMatrix) -> Box<dyn Preconditioner + 'a> {
        match self {
            PreconditionerKind::None => Box::new(Identity),
            PreconditionerKind::Jacobi => Box::new(Jacobi::new(a)),
            PreconditionerKind::SymmetricGaussSeidel => Box::new(SymmetricGaussSeidel::new(a)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgs_is_symmetric_positive() {
        let a = CsrMatrix::from_triplets(
            3,
            3,
            &[(0, 0, 4.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 4.0), (1, 2, -1.0), (2, 1, -1.0), (2, 2, 4.0)],
        );
        let p = SymmetricGaussSeidel::new(&a);
        let mut cols = Vec::new();
        for k in 0..3 {
            let mut e = vec![0.0; 3];
            e[k] = 1.0;
            let mut z = vec![0.0; 3];
            p.apply(&e, &mut z);
            cols.push(z);
        }
        for i in 0..3 {
            assert!(cols[i][i] > 0.0);
            for j in 0..3 {
                assert!((cols[i][j] - cols[j][i]).abs() < 1e-14);
            }
        }
    }
}
