//! Small dense and banded solvers shared by the cell and macro solvers.

use alloc::vec;
use alloc::vec::Vec;

/// Solves a tridiagonal system in place. `sub[k]` couples row k to k−1,
/// `sup[k]` couples row k to k+1. Returns false on a zero pivot.
pub fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64]) -> bool {
    let n = diag.len();
    if n == 0 {
        return true;
    }
    let mut c = vec![0.0; n];
    let mut beta = diag[0];
    if beta == 0.0 || !beta.is_finite() {
        return false;
    }
    rhs[0] /= beta;
    for k in 1..n {
        c[k - 1] = sup[k - 1] / beta;
        beta = diag[k] - sub[k] * c[k - 1];
        if beta == 0.0 || !beta.is_finite() {
            return false;
        }
        rhs[k] = (rhs[k] - sub[k] * rhs[k - 1]) / beta;
    }
    for k in (0..n - 1).rev() {
        rhs[k] -= c[k] * rhs[k + 1];
    }
    true
}

/// Cyclic tridiagonal solve (Sherman–Morrison). `upper[k]` couples k and
/// k+1 (mod n) symmetrically; `diag` is the diagonal.
pub fn cyclic_symmetric(diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> bool {
    let n = diag.len();
    if n < 3 {
        return false;
    }
    let corner = upper[n - 1];
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= corner * corner / gamma;
    let mut sub = vec![0.0; n];
    let mut sup = vec![0.0; n];
    for k in 0..n - 1 {
        sup[k] = upper[k];
        sub[k + 1] = upper[k];
    }
    let mut z = vec![0.0; n];
    z[0] = gamma;
    z[n - 1] = corner;
    if !thomas(&sub, &d, &sup, rhs) || !thomas(&sub, &d, &sup, &mut z) {
        return false;
    }
    let num = rhs[0] + corner * rhs[n - 1] / gamma;
    let den = 1.0 + z[0] + corner * z[n - 1] / gamma;
    if den == 0.0 {
        return false;
    }
    let f = num / den;
    for k in 0..n {
        rhs[k] -= f * z[k];
    }
    true
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn project_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// Jacobi-preconditioned conjugate gradients from x = 0. With
/// `mean_free`, residuals and search directions are kept mean-zero so
/// consistent singular systems with constant null space are solvable.
/// Returns the iteration count, or None if the tolerance was not reached.
pub fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    diag: &[f64],
    rhs: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iter: usize,
    mean_free: bool,
) -> Option<usize> {
    let n = rhs.len();
    x.iter_mut().for_each(|v| *v = 0.0);
    let mut r = rhs.to_vec();
    if mean_free {
        project_mean(&mut r);
    }
    let norm0 = libm::sqrt(dot(&r, &r));
    if norm0 == 0.0 {
        return Some(0);
    }
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(a, d)| a / d).collect();
    if mean_free {
        project_mean(&mut z);
    }
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return None;
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        if mean_free {
            project_mean(&mut r);
        }
        if libm::sqrt(dot(&r, &r)) <= rel_tol * norm0 {
            return Some(it);
        }
        for k in 0..n {
            z[k] = r[k] / diag[k];
        }
        if mean_free {
            project_mean(&mut z);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    None
}
