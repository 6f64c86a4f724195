//! Preconditioned conjugate gradients on flat vectors.
//!
//! The stopping rule is an absolute max-norm bound on the true residual
//! `b - A x`. The recurrence residual drifts from the true one in floating
//! point, so convergence of the recurrence triggers a recomputation and, if
//! the true residual is still too large, a restart from it.

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Solves `A x = b` for symmetric positive (semi)definite `A`, starting
/// from the given `x`. `precond` applies an SPD approximation of `A⁻¹`.
pub fn pcg(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    mut precond: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> CgOutcome {
    let n = b.len();
    let mut r = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    let true_residual = |apply: &mut dyn FnMut(&[f64], &mut [f64]), x: &[f64], r: &mut [f64], q: &mut [f64]| {
        apply(x, q);
        for i in 0..n {
            r[i] = b[i] - q[i];
        }
        max_abs(r)
    };
    let mut res = true_residual(&mut apply, x, &mut r, &mut q);
    let mut iterations = 0;
    let mut stalls = 0;
    while res > tol && iterations < max_iter {
        precond(&r, &mut z);
        p.copy_from_slice(&z);
        let mut rz = dot(&r, &z);
        loop {
            if iterations >= max_iter || rz == 0.0 {
                break;
            }
            apply(&p, &mut q);
            let pq = dot(&p, &q);
            if pq <= 0.0 {
                break;
            }
            let alpha = rz / pq;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
            }
            iterations += 1;
            if max_abs(&r) <= 0.5 * tol {
                break;
            }
            precond(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let new_res = true_residual(&mut apply, x, &mut r, &mut q);
        if new_res >= res {
            stalls += 1;
            if stalls > 3 {
                res = new_res;
                break;
            }
        }
        res = new_res;
    }
    CgOutcome { iterations, residual: res, converged: res <= tol }
}

/// Identity preconditioner.
pub fn no_precond(r: &[f64], z: &mut [f64]) {
    z.copy_from_slice(r);
}
