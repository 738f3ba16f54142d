//! Small dense linear-algebra helpers shared by the numerical modules.
//!
//! The induced 2-norm is computed by power iteration on `A^T A` (50
//! iterations, tolerance 1e-10) so that every module measures matrices with
//! the same norm the error bounds are stated in.

use nalgebra::{DMatrix, DVector};

const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-10;

/// Induced (spectral) 2-norm of a rectangular matrix.
pub fn op_norm(a: &DMatrix<f64>) -> f64 {
    let (r, c) = a.shape();
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r == 1 && c == 1 {
        return a[(0, 0)].abs();
    }
    // Largest eigenvalue of the PSD matrix A^T A via power iteration.
    let ata = a.transpose() * a;
    let n = ata.nrows();
    let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0_f64;
    for _ in 0..POWER_ITERS {
        let w = &ata * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        let next_lambda = (&ata * &next).dot(&next);
        let done = (next_lambda - lambda).abs() <= POWER_TOL * (1.0 + next_lambda.abs());
        v = next;
        lambda = next_lambda;
        if done {
            break;
        }
    }
    lambda.max(0.0).sqrt()
}

/// Central finite-difference Jacobian of `f` at `x` with step `h`.
pub fn fd_jacobian<F>(f: F, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        let col = (f(&xp) - f(&xm)) / (2.0 * h);
        jac.set_column(j, &col);
    }
    jac
}

/// Ordinary least squares fit of `y = intercept + slope * x`.
///
/// Returns `(slope, intercept, stderr_of_slope, rms_residual)`.
pub fn ols_line(xs: &[f64], ys: &[f64]) -> (f64, f64, f64, f64) {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    assert!(n >= 2.0, "need at least two points for a line fit");
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let dof = (xs.len().saturating_sub(2)).max(1) as f64;
    let stderr = (ss_res / dof / sxx).sqrt();
    let rms = (ss_res / n).sqrt();
    (slope, intercept, stderr, rms)
}
