//! Sparse kernels and Krylov solvers.
//!
//! All solvers share one convergence contract: a solve is converged when the
//! true residual satisfies `‖b - Ax‖ ≤ atol` or `‖b - Ax‖ / ‖b‖ ≤ rtol`.

mod cg;
mod cholesky;
mod csr;
mod minres;
mod precond;

use std::fmt;

pub use cg::cg_solve;
pub use cholesky::SkylineCholesky;
pub use csr::CsrMatrix;
pub use minres::minres_solve;
pub use precond::{Identity, Jacobi, Preconditioner, PreconditionerKind, SymmetricGaussSeidel};

pub(crate) use csr::{axpy, dot, norm2};

pub const DEFAULT_RTOL: f64 = 1e-6;
pub const DEFAULT_ATOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            max_iter: 10_000,
        }
    }
}

impl SolverOptions {
    /// Absolute residual target for a right-hand side of norm `bnorm`.
    pub fn target(&self, bnorm: f64) -> f64 {
        self.atol.max(self.rtol * bnorm)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolveReport {
    pub iterations: usize,
    pub abs_residual: f64,
    pub rel_residual: f64,
    pub converged: bool,
    /// Per-iteration residual measure: `sqrt(rᵀ z)` for CG, the
    /// preconditioned-norm estimate for MINRES. Entry 0 is the initial residual.
    pub history: Vec<f64>,
}

impl SolveReport {
    pub(crate) fn finish(iterations: usize, abs: f64, bnorm: f64, opts: &SolverOptions, history: Vec<f64>) -> Self {
        let rel = if bnorm > 0.0 { abs / bnorm } else { f64::INFINITY };
        SolveReport {
            iterations,
            abs_residual: abs,
            rel_residual: rel,
            converged: abs <= opts.atol || rel <= opts.rtol,
            history,
        }
    }
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} after {} iterations (abs residual {:.3e}, rel residual {:.3e})",
            if self.converged { "converged" } else { "not converged" },
            self.iterations,
            self.abs_residual,
            self.rel_residual
        )
    }
}
