//! Dense reference sampler: Matérn covariance, covariance-operator assembly
//! on piecewise constants, the generalized eigenproblem `C v = λ W v`, and
//! truncated Karhunen–Loève sampling. Cubic cost; meant for desk-size meshes.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{Error, Result};
use crate::mesh::{CartesianMesh, Point};
use crate::sampler::MaternParams;

/// Default cell-count limit for dense covariance matrices.
pub const DENSE_GUARD: usize = 10_000;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Modified Bessel function of the second kind K_ν(x), x > 0, ν ≥ 0.
///
/// The order is split as ν = n + μ with |μ| ≤ ½. K_μ and K_{μ+1} come from
/// Temme's series for x < 2 and from Steed's continued fraction otherwise;
/// forward recurrence then reaches order ν.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0, "bessel_k needs x > 0");
    assert!(nu >= 0.0, "bessel_k needs nu >= 0");
    const EPS: f64 = 1e-16;
    const MAXIT: usize = 10_000;
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1) = if x < 2.0 {
        let x2 = 0.5 * x;
        let pimu = std::f64::consts::PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        (sum, sum1 * xi2)
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh *= b * d - 1.0;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        let k = (std::f64::consts::PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        (k, k * (mu + x + 0.5 - h) * xi)
    };
    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    k_mu
}

/// Γ-function combinations used by Temme's series:
/// gam1 = (1/Γ(1-μ) - 1/Γ(1+μ)) / (2μ), gam2 = (1/Γ(1-μ) + 1/Γ(1+μ)) / 2,
/// and the two reciprocals themselves.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let gampl = 1.0 / gamma(1.0 + mu);
    let gammi = 1.0 / gamma(1.0 - mu);
    let gam2 = 0.5 * (gammi + gampl);
    let gam1 = if mu.abs() < 1e-3 {
        // Taylor coefficients of 1/Γ(1+z)
        const A4: f64 = -0.042_002_635_034_095_2;
        const A6: f64 = -0.021_524_167_411_495_1;
        -EULER_GAMMA - A4 * mu * mu - A6 * mu.powi(4)
    } else {
        (gammi - gampl) / (2.0 * mu)
    };
    (gam1, gam2, gampl, gammi)
}

/// Stationary isotropic Matérn covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceModel {
    pub params: MaternParams,
}

impl CovarianceModel {
    pub fn new(params: MaternParams) -> Self {
        CovarianceModel { params }
    }

    /// Covariance at distance r.
    pub fn at_distance(&self, r: f64) -> f64 {
        let MaternParams { nu, kappa, sigma2, .. } = self.params;
        let s = kappa * r;
        if s == 0.0 {
            return sigma2;
        }
        if (nu - 0.5).abs() < 1e-15 {
            return sigma2 * (-s).exp();
        }
        if (nu - 1.5).abs() < 1e-15 {
            return sigma2 * (1.0 + s) * (-s).exp();
        }
        if s > 700.0 {
            return 0.0;
        }
        let log_pref = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu);
        sigma2 * (log_pref + nu * s.ln()).exp() * bessel_k(nu, s)
    }

    pub fn covariance(&self, x: &Point, y: &Point) -> f64 {
        let r = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        self.at_distance(r)
    }
}

/// Covariance at the cell centroids: `cov(x_i, x_j)`.
pub fn centroid_covariance(mesh: &CartesianMesh, model: &CovarianceModel, guard: usize) -> Result<DMatrix<f64>> {
    let n = mesh.num_cells();
    if n > guard {
        return Err(Error::DenseGuard { size: n, limit: guard });
    }
    let centroids: Vec<Point> = (0..n).map(|c| mesh.cell_centroid(c)).collect();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| model.covariance(&centroids[i], &centroids[j])).collect())
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

/// Covariance operator on piecewise constants by centroid quadrature:
/// `C[i,j] = cov(x_i, x_j) |K_i| |K_j|`.
pub fn assemble_covariance_matrix(mesh: &CartesianMesh, model: &CovarianceModel, guard: usize) -> Result<DMatrix<f64>> {
    let vol = mesh.cell_volume();
    Ok(centroid_covariance(mesh, model, guard)? * (vol * vol))
}

/// Leading eigenpairs of `C v = λ W v` with W-orthonormal vectors.
#[derive(Debug, Clone)]
pub struct KlBasis {
    /// Nonincreasing.
    pub eigenvalues: Vec<f64>,
    /// One eigenvector per column.
    pub eigenvectors: DMatrix<f64>,
    /// Sum of all eigenvalues, trace(W⁻¹C).
    pub total_energy: f64,
}

impl KlBasis {
    pub fn truncation(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Share of trace(W⁻¹C) kept by the truncation.
    pub fn energy_ratio(&self) -> f64 {
        self.eigenvalues.iter().sum::<f64>() / self.total_energy
    }

    /// Σ λᵢ vᵢ vᵢᵀ, the covariance of the truncated field.
    pub fn field_covariance(&self) -> DMatrix<f64> {
        let lam = DVector::from_iterator(self.eigenvalues.len(), self.eigenvalues.iter().map(|l| l.max(0.0)));
        let scaled = &self.eigenvectors * DMatrix::from_diagonal(&lam);
        scaled * self.eigenvectors.transpose()
    }
}

/// Solve the generalized symmetric eigenproblem through
/// `W^{-1/2} C W^{-1/2} y = λ y`, `v = W^{-1/2} y`, keeping `truncation` pairs.
pub fn kl_decompose(c: &DMatrix<f64>, w: &[f64], truncation: usize) -> Result<KlBasis> {
    let n = c.nrows();
    if c.ncols() != n || w.len() != n {
        return Err(Error::invalid("covariance and mass sizes differ"));
    }
    if w.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("mass diagonal must be positive"));
    }
    if truncation == 0 || truncation > n {
        return Err(Error::invalid(format!("truncation must be in 1..={n}")));
    }
    let w_isqrt: Vec<f64> = w.iter().map(|v| 1.0 / v.sqrt()).collect();
    let s = DMatrix::from_fn(n, n, |i, j| {
        0.5 * (c[(i, j)] + c[(j, i)]) * w_isqrt[i] * w_isqrt[j]
    });
    if s.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericFailure("covariance matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::try_new(s, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total_energy = eig.eigenvalues.iter().sum();
    let eigenvalues: Vec<f64> = order[..truncation].iter().map(|&k| eig.eigenvalues[k]).collect();
    let eigenvectors = DMatrix::from_fn(n, truncation, |i, col| w_isqrt[i] * eig.eigenvectors[(i, order[col])]);
    Ok(KlBasis {
        eigenvalues,
        eigenvectors,
        total_energy,
    })
}

/// θ = Σᵢ ξᵢ √λᵢ vᵢ over the kept modes. Eigenvalues slightly below zero
/// (round-off, relative 1e-10 of the largest) are clamped.
pub fn kl_sample(basis: &KlBasis, xi: &[f64]) -> Result<Vec<f64>> {
    let m = basis.truncation();
    if xi.len() < m {
        return Err(Error::invalid(format!("need {m} normal draws, got {}", xi.len())));
    }
    let lmax = basis.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let tol = 1e-10 * lmax;
    let mut coeff = DVector::zeros(m);
    for (k, (&l, &x)) in basis.eigenvalues.iter().zip(xi).enumerate() {
        if l < -tol {
            return Err(Error::NumericFailure(format!("eigenvalue {k} is {l:e}, below -{tol:e}")));
        }
        coeff[k] = x * l.max(0.0).sqrt();
    }
    Ok((&basis.eigenvectors * coeff).iter().copied().collect())
}

/// Unbiased sample covariance of equally long sample vectors.
pub fn empirical_covariance(samples: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let count = samples.len();
    if count < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: count });
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("samples have different lengths"));
    }
    let mut mean = vec![0.0; n];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let x = DMatrix::from_fn(n, count, |i, k| samples[k][i] - mean[i]);
    Ok((&x * x.transpose()) / (count - 1) as f64)
}

/// ‖estimate - reference‖_F / ‖reference‖_F
pub fn relative_frobenius_error(estimate: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (estimate - reference).norm() / reference.norm()
}
