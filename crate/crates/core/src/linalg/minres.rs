use super::{dot, norm2, CsrMatrix, Preconditioner, SolveReport, SolverOptions};

/// Preconditioned MINRES (Paige–Saunders) for symmetric, possibly
/// indefinite `a` with an SPD preconditioner.
///
/// The Lanczos recurrence yields `phibar`, the residual norm measured in the
/// preconditioner's inverse norm. Once it suggests convergence the true
/// residual is evaluated against the shared contract; iteration continues
/// until that check passes or `max_iter` is reached.
pub fn minres_solve(
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

    let true_residual = |x: &[f64]| -> f64 {
        let ax = a.mul_vec(x);
        b.iter().zip(&ax).map(|(bi, ai)| (bi - ai).powi(2)).sum::<f64>().sqrt()
    };

    let mut r1: Vec<f64> = {
        let ax = a.mul_vec(&x);
        b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
    };
    let r0norm = norm2(&r1);
    if r0norm <= target {
        return (x, SolveReport::finish(0, r0norm, bnorm, opts, vec![r0norm]));
    }
    let mut y = vec![0.0; n];
    precond.apply(&r1, &mut y);
    let beta1 = dot(&r1, &y);
    if !(beta1 > 0.0) {
        // preconditioner not positive definite on this residual
        return (x, SolveReport::finish(0, r0norm, bnorm, opts, vec![r0norm]));
    }
    let beta1 = beta1.sqrt();

    let mut r2 = r1.clone();
    let mut oldb = 0.0;
    let mut beta = beta1;
    let mut dbar = 0.0;
    let mut epsln = 0.0;
    let mut phibar = beta1;
    let mut cs = -1.0;
    let mut sn = 0.0;
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut history = vec![beta1];
    // relative reduction in the preconditioned norm at which the true
    // residual is first checked; tightened when the check fails
    let mut check_ratio = opts.rtol.max(opts.atol / bnorm.max(f64::MIN_POSITIVE));
    let mut rnorm = r0norm;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        a.mul_vec_into(&v, &mut y);
        if iterations >= 2 {
            let c = beta / oldb;
            for (yi, ri) in y.iter_mut().zip(&r1) {
                *yi -= c * ri;
            }
        }
        let alfa = dot(&v, &y);
        let c = alfa / beta;
        for (yi, ri) in y.iter_mut().zip(&r2) {
            *yi -= c * ri;
        }
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        precond.apply(&r2, &mut y);
        oldb = beta;
        let bb = dot(&r2, &y);
        if bb < 0.0 || !bb.is_finite() {
            break;
        }
        beta = bb.sqrt();

        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;

        let denom = 1.0 / gamma;
        for i in 0..n {
            let w1 = w2[i];
            w2[i] = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        history.push(phibar);

        if phibar <= check_ratio * beta1 || beta == 0.0 {
            rnorm = true_residual(&x);
            if rnorm <= target || beta == 0.0 {
                break;
            }
            check_ratio *= 0.5;
        }
    }
    if rnorm > target {
        rnorm = true_residual(&x);
    }
    (x, SolveReport::finish(iterations, rnorm, bnorm, opts, history))
}
