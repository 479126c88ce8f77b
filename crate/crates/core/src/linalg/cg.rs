use super::{axpy, dot, norm2, CsrMatrix, Preconditioner, SolveReport, SolverOptions};

/// Preconditioned conjugate gradients for SPD `a`.
///
/// `x0` is used as the initial guess when given. The recurrence residual
/// drives the iteration; on apparent convergence the true residual is
/// recomputed and the iteration restarts from it if it does not meet the
/// target. A non-converged report is returned (not an error) when
/// `max_iter` is exhausted.
pub fn cg_solve(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolverOptions,
    precond: &dyn Preconditioner,
) -> (Vec<f64>, SolveReport) {
    let n = b.len();
    assert_eq!(a.nrows(), n);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    let bnorm = norm2(b);
    let target = opts.target(bnorm);

    let mut r = residual(a, b, &x);
    let mut rnorm = norm2(&r);
    let mut z = vec![0.0; n];
    let mut q = vec![0.0; n];
    let mut history = Vec::new();
    let mut iterations = 0;

    'restart: loop {
        if rnorm <= target {
            if history.is_empty() {
                precond.apply(&r, &mut z);
                history.push(dot(&r, &z).max(0.0).sqrt());
            }
            return (x, SolveReport::finish(iterations, rnorm, bnorm, opts, history));
        }
        precond.apply(&r, &mut z);
        let mut rz = dot(&r, &z);
        if history.is_empty() {
            history.push(rz.max(0.0).sqrt());
        }
        let mut p = z.clone();
        while iterations < opts.max_iter {
            a.mul_vec_into(&p, &mut q);
            let pq = dot(&p, &q);
            if pq <= 0.0 || !pq.is_finite() {
                // loss of positivity: A or the preconditioner is not SPD here
                break 'restart;
            }
            let alpha = rz / pq;
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &q, &mut r);
            iterations += 1;

            precond.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            history.push(rz_new.max(0.0).sqrt());
            if norm2(&r) <= target {
                r = residual(a, b, &x);
                rnorm = norm2(&r);
                continue 'restart;
            }
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = zi + beta * *pi;
            }
        }
        break;
    }

    let rnorm = norm2(&residual(a, b, &x));
    (x, SolveReport::finish(iterations, rnorm, bnorm, opts, history))
}

fn residual(a: &CsrMatrix, b: &[f64], x: &[f64]) -> Vec<f64> {
    let ax = a.mul_vec(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}
