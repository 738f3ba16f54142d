//! Martingale concentration for weighted sums like the C-term: the
//! piecewise tail bound, Monte Carlo tail estimation with Clopper-Pearson
//! intervals, and calibration of the bound's free constant.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{Error, Result};
use crate::linalg::op_norm;
use crate::model::TrackingModel;
use crate::noise::{NoiseSpec, PerturbationSpec};
use crate::simulate::{run_sa_stream, SimConfig};
use crate::variational::c_weights;

/// Constants of the tail bound for `S_n = sum_k alpha_{k,n} X_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationParams {
    /// Exponential-moment exponent of the increments.
    pub delta: f64,
    /// Exponential-moment constant of the increments (the C of the bound).
    pub c_big: f64,
    /// Envelope on the summed weight norms.
    pub gamma1: f64,
    /// Envelope on the maximal weight norm, in units of `beta_n`.
    pub gamma2: f64,
    /// Scale sequence value; the stepsize here.
    pub beta_n: f64,
    pub d: usize,
    /// Calibrated constant of the exponents.
    pub c: f64,
}

impl ConcentrationParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta", self.delta),
            ("c_big", self.c_big),
            ("gamma1", self.gamma1),
            ("gamma2", self.gamma2),
            ("beta_n", self.beta_n),
            ("c", self.c),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!(
                    "concentration parameter {name} must be positive, got {v}"
                )));
            }
        }
        if self.d == 0 {
            return Err(Error::Config("dimension must be at least 1".into()));
        }
        Ok(())
    }

    /// Threshold between the sub-Gaussian and sub-exponential regimes.
    pub fn regime_threshold(&self) -> f64 {
        self.c_big * self.gamma1 * (self.d as f64).powf(1.5) / self.delta
    }
}

/// Piecewise tail bound `P(|S_n| > eta)`, capped at 1:
/// `2 d^2 exp(-c eta^2 / (d^3 beta_n))` below the regime threshold and
/// `2 d^2 exp(-c eta / (d^1.5 beta_n))` above it.
pub fn eval_tail_bound(p: &ConcentrationParams, eta: f64) -> Result<f64> {
    p.validate()?;
    if eta <= 0.0 {
        return Err(Error::Config(format!("eta must be positive, got {eta}")));
    }
    let d = p.d as f64;
    let raw = if eta <= p.regime_threshold() {
        2.0 * d * d * (-p.c * eta * eta / (d.powi(3) * p.beta_n)).exp()
    } else {
        2.0 * d * d * (-p.c * eta / (d.powf(1.5) * p.beta_n)).exp()
    };
    Ok(raw.min(1.0))
}

/// One-sided Clopper-Pearson upper confidence limit for a binomial
/// proportion.
pub fn clopper_pearson_upper(hits: usize, n: usize, level: f64) -> f64 {
    assert!(n > 0 && hits <= n);
    if hits == n {
        return 1.0;
    }
    Beta::new((hits + 1) as f64, (n - hits) as f64)
        .expect("valid beta parameters")
        .inverse_cdf(level)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailPoint {
    pub eta: f64,
    pub p_hat: f64,
    /// 95% one-sided upper confidence limit.
    pub ci_hi: f64,
    pub hits: usize,
    pub n_replicas: usize,
}

/// Monte Carlo tail of `|C_n|` plus the weight-envelope statistics the
/// concentration bound presumes.
#[derive(Debug, Clone, PartialEq)]
pub struct TailCurve {
    pub points: Vec<TailPoint>,
    pub n_replicas: usize,
    pub max_norm: f64,
    /// Largest observed `sum_k |alpha_{k,n}|` over replicas.
    pub max_weight_sum: f64,
    /// Largest observed single `|alpha_{k,n}|`.
    pub max_weight_norm: f64,
}

impl TailCurve {
    /// Check `gamma1 >= sum of weight norms` and
    /// `gamma2 beta_n >= max weight norm` on every observed instance.
    pub fn envelopes_ok(&self, p: &ConcentrationParams) -> bool {
        self.max_weight_sum <= p.gamma1 + 1e-12
            && self.max_weight_norm <= p.gamma2 * p.beta_n + 1e-12
    }
}

/// Raw replica statistics of the weighted martingale sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SumSample {
    pub norms: Vec<f64>,
    pub max_weight_sum: f64,
    pub max_weight_norm: f64,
}

impl SumSample {
    pub fn rms(&self) -> f64 {
        (self.norms.iter().map(|v| v * v).sum::<f64>() / self.norms.len() as f64).sqrt()
    }
}

/// Simulate replicas and collect `|C_n|`: each replica computes its own
/// quadrature weights and the weighted sum `C_n = sum_k alpha_{k,n} M_{k+1}`.
pub fn sample_weighted_sums(
    model: &dyn TrackingModel,
    noise: &NoiseSpec,
    perturbation: &PerturbationSpec,
    cfg: &SimConfig,
    n: usize,
    n_replicas: usize,
    substeps: usize,
) -> Result<SumSample> {
    if n_replicas == 0 {
        return Err(Error::Config("need at least one replica".into()));
    }
    let stats: Vec<Result<(f64, f64, f64)>> = (0..n_replicas as u64)
        .into_par_iter()
        .map(|r| {
            let traj = run_sa_stream(model, noise, perturbation, cfg, r)?;
            let weights = c_weights(model, &traj, n, substeps)?;
            let dim = model.dim();
            let mut c_n = nalgebra::DVector::zeros(dim);
            let mut weight_sum = 0.0;
            let mut weight_max = 0.0_f64;
            for (k, alpha) in weights.iter().enumerate() {
                c_n += alpha * &traj.noise[k];
                let w = op_norm(alpha);
                weight_sum += w;
                weight_max = weight_max.max(w);
            }
            Ok((c_n.norm(), weight_sum, weight_max))
        })
        .collect();
    let mut norms = Vec::with_capacity(n_replicas);
    let mut max_weight_sum = 0.0_f64;
    let mut max_weight_norm = 0.0_f64;
    for s in stats {
        let (norm, wsum, wmax) = s?;
        norms.push(norm);
        max_weight_sum = max_weight_sum.max(wsum);
        max_weight_norm = max_weight_norm.max(wmax);
    }
    Ok(SumSample {
        norms,
        max_weight_sum,
        max_weight_norm,
    })
}

/// Tally a sample into tail estimates over the grid.
pub fn tail_from_sample(sample: &SumSample, eta_grid: &[f64]) -> Result<TailCurve> {
    if eta_grid.is_empty() {
        return Err(Error::Config("eta grid must not be empty".into()));
    }
    if eta_grid.iter().any(|&e| e <= 0.0) {
        return Err(Error::Config("eta grid values must be positive".into()));
    }
    let n_replicas = sample.norms.len();
    let max_norm = sample.norms.iter().fold(0.0_f64, |m, &v| m.max(v));
    let points = eta_grid
        .iter()
        .map(|&eta| {
            let hits = sample.norms.iter().filter(|&&v| v > eta).count();
            TailPoint {
                eta,
                p_hat: hits as f64 / n_replicas as f64,
                ci_hi: clopper_pearson_upper(hits, n_replicas, 0.95),
                hits,
                n_replicas,
            }
        })
        .collect();
    Ok(TailCurve {
        points,
        n_replicas,
        max_norm,
        max_weight_sum: sample.max_weight_sum,
        max_weight_norm: sample.max_weight_norm,
    })
}

/// Monte Carlo estimate of `P(|C_n| > eta)` over the grid.
pub fn empirical_tail(
    model: &dyn TrackingModel,
    noise: &NoiseSpec,
    perturbation: &PerturbationSpec,
    cfg: &SimConfig,
    n: usize,
    eta_grid: &[f64],
    n_replicas: usize,
    substeps: usize,
) -> Result<TailCurve> {
    let sample = sample_weighted_sums(model, noise, perturbation, cfg, n, n_replicas, substeps)?;
    tail_from_sample(&sample, eta_grid)
}

/// Calibration grid for the constant `c`: log-spaced over `[1e-4, 1e4]`.
fn c_grid() -> Vec<f64> {
    let n = 321usize;
    (0..n)
        .map(|i| 10f64.powf(-4.0 + 8.0 * i as f64 / (n - 1) as f64))
        .collect()
}

/// Largest grid `c` whose bound dominates the empirical tail's 95% upper
/// confidence limit at every grid point.
///
/// A degenerate curve (no replica ever produced a positive sum) leaves `c`
/// unconstrained; the grid maximum is returned.
pub fn calibrate_c(params: &ConcentrationParams, curve: &TailCurve) -> Result<f64> {
    let grid = c_grid();
    if curve.max_norm == 0.0 {
        return Ok(*grid.last().unwrap());
    }
    let dominates = |c: f64| -> Result<bool> {
        let p = ConcentrationParams { c, ..*params };
        for point in &curve.points {
            if eval_tail_bound(&p, point.eta)? < point.ci_hi {
                return Ok(false);
            }
        }
        Ok(true)
    };
    for &c in grid.iter().rev() {
        if dominates(c)? {
            return Ok(c);
        }
    }
    Err(Error::ConcentrationCalibration)
}

/// Exact two-sided Gaussian tail `P(|Z| > eta)` for `Z ~ N(0, sd^2)`;
/// the oracle for linear-model weighted sums of Gaussian noise.
pub fn gaussian_tail_oracle(sd: f64, eta: f64) -> f64 {
    use statrs::distribution::Normal;
    if sd == 0.0 {
        return 0.0;
    }
    let n = Normal::new(0.0, sd).expect("valid normal");
    2.0 * (1.0 - n.cdf(eta))
}
