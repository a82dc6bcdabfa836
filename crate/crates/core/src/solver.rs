//! Conjugate gradients for the symmetric positive (semi-)definite systems of
//! the reference solver and the quadratic test oracle.

use crate::error::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` starting from `x`. Returns the iteration count.
///
/// Singular but consistent systems are fine as long as `x` starts in the
/// range of `A` (e.g. zero).
pub(crate) fn conjugate_gradient(
    mut apply: impl FnMut(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    rtol: f64,
    max_iter: usize,
    solver: &'static str,
) -> Result<usize> {
    let n = b.len();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut ax = vec![0.0; n];
    apply(x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut d = r.clone();
    let mut rr = dot(&r, &r);
    let mut q = vec![0.0; n];
    for it in 0..max_iter {
        if rr.sqrt() <= rtol * bnorm {
            return Ok(it);
        }
        apply(&d, &mut q);
        let dq = dot(&d, &q);
        if dq <= 0.0 {
            break;
        }
        let alpha = rr / dq;
        for m in 0..n {
            x[m] += alpha * d[m];
            r[m] -= alpha * q[m];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for m in 0..n {
            d[m] = r[m] + beta * d[m];
        }
    }
    if rr.sqrt() <= rtol * bnorm {
        return Ok(max_iter);
    }
    Err(Error::NoConvergence {
        solver,
        iterations: max_iter,
        residual: rr.sqrt() / bnorm,
    })
}
