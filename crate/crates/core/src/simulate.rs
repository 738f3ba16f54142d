//! Constant-stepsize iteration against a slowly moving target.
//!
//! All dynamics run in algorithmic time `t = n a`. The target solves
//! `dy/dt = a eps gamma(y)` on that clock, the tracker performs
//! `x_{n+1} = x_n + a [h(x_n, y_n) + M_{n+1} + eps_{n+1}]`, and the ideal
//! path is `z(t) = lambda(y(t))`.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TrackingModel;
use crate::noise::{replica_rng, sample_noise, sample_perturbation, NoiseSpec, PerturbationSpec};

/// Abort threshold for the iterate norm.
const DIVERGENCE_GUARD: f64 = 1e6;

/// Fixed chunk width for the ordered ensemble reduction. Independent of the
/// thread count so parallel and serial runs produce bitwise-equal sums.
const REDUCE_CHUNK: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Stepsize, in (0, 1).
    pub a: f64,
    /// Drift rate of the target; 0 freezes it.
    pub eps: f64,
    pub horizon_n: usize,
    pub seed: u64,
    /// RK4 substeps per stepsize interval for the target and base paths.
    #[serde(default = "default_substeps")]
    pub ode_substeps: usize,
    pub x0: Vec<f64>,
    pub y0: Vec<f64>,
}

fn default_substeps() -> usize {
    10
}

impl SimConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.a > 0.0 && self.a < 1.0) {
            return Err(Error::Config(format!("stepsize a must lie in (0, 1), got {}", self.a)));
        }
        if self.eps < 0.0 {
            return Err(Error::Config(format!("eps must be nonnegative, got {}", self.eps)));
        }
        if self.horizon_n < 1 {
            return Err(Error::Config("horizon_N must be at least 1".into()));
        }
        if self.ode_substeps < 1 {
            return Err(Error::Config("ode_substeps must be at least 1".into()));
        }
        for (name, v) in [("x0", &self.x0), ("y0", &self.y0)] {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    arg: if name == "x0" { "x0" } else { "y0" },
                    expected: dim,
                    got: v.len(),
                });
            }
        }
        Ok(())
    }

    pub fn x0_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }

    pub fn y0_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.y0.clone())
    }

    pub fn t_end(&self) -> f64 {
        self.horizon_n as f64 * self.a
    }
}

// ---------------------------------------------------------------------------
// Slow target path
// ---------------------------------------------------------------------------

/// Dense RK4 solution of the target ODE on `[0, t_end]`, stored on the fine
/// grid with step `a / substeps`.
#[derive(Debug, Clone)]
pub struct SlowPath {
    values: Vec<DVector<f64>>,
    h_fine: f64,
    a: f64,
    speed: f64, // a * eps
    substeps: usize,
}

fn rk4_step<F>(f: &F, y: &DVector<f64>, h: f64) -> DVector<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let k1 = f(y);
    let k2 = f(&(y + &k1 * (h / 2.0)));
    let k3 = f(&(y + &k2 * (h / 2.0)));
    let k4 = f(&(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

impl SlowPath {
    pub fn a(&self) -> f64 {
        self.a
    }

    /// Algorithmic-time drift speed `a * eps` of the target.
    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    pub fn t_end(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.h_fine
    }

    /// Largest target norm along the stored fine grid.
    pub fn max_norm(&self) -> f64 {
        self.values.iter().map(|y| y.norm()).fold(0.0, f64::max)
    }

    /// Target value at the stepsize grid point `t_k = k a`.
    pub fn at_step(&self, k: usize) -> &DVector<f64> {
        &self.values[k * self.substeps]
    }

    /// Target value at an arbitrary time in `[0, t_end]`, one partial RK4
    /// step away from the nearest stored fine-grid node.
    pub fn value_at(&self, model: &dyn TrackingModel, t: f64) -> Result<DVector<f64>> {
        let end = self.t_end();
        if !(0.0..=end + 1e-9 * (1.0 + end)).contains(&t) {
            return Err(Error::Numerical(format!(
                "slow path queried at t = {t} outside [0, {end}]"
            )));
        }
        let t = t.min(end);
        let j = ((t / self.h_fine).floor() as usize).min(self.values.len() - 1);
        let dt = t - j as f64 * self.h_fine;
        let base = &self.values[j];
        if dt.abs() < 1e-14 {
            return Ok(base.clone());
        }
        let speed = self.speed;
        let f = |y: &DVector<f64>| model.gamma(y) * speed;
        Ok(rk4_step(&f, base, dt))
    }
}

/// Integrate the target ODE `dy/dt = a eps gamma(y)` on `[0, t_end]` with a
/// fixed-step RK4, `substeps` steps per stepsize interval.
///
/// `guard` aborts the integration when the path leaves that ball; pass
/// `10 * C_gamma` to enforce the boundedness assumption.
pub fn integrate_slow(
    model: &dyn TrackingModel,
    eps: f64,
    a: f64,
    y0: &DVector<f64>,
    t_end: f64,
    substeps: usize,
    guard: f64,
) -> Result<SlowPath> {
    if t_end < 0.0 {
        return Err(Error::Config(format!("t_end must be nonnegative, got {t_end}")));
    }
    if substeps < 1 {
        return Err(Error::Config("ode_substeps must be at least 1".into()));
    }
    let speed = a * eps;
    let h = a / substeps as f64;
    let n_fine = (t_end / h).round() as usize;
    let f = |y: &DVector<f64>| model.gamma(y) * speed;
    let mut values = Vec::with_capacity(n_fine + 1);
    values.push(y0.clone());
    for j in 0..n_fine {
        let next = rk4_step(&f, &values[j], h);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > guard {
            return Err(Error::TargetUnbounded { t: (j + 1) as f64 * h });
        }
        values.push(next);
    }
    Ok(SlowPath {
        values,
        h_fine: h,
        a,
        speed,
        substeps,
    })
}

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

/// One realized run of the tracking iteration.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub cfg: SimConfig,
    /// Iterates `x_0 .. x_N`.
    pub xs: Vec<DVector<f64>>,
    /// Target samples `y_0 .. y_N`.
    pub ys: Vec<DVector<f64>>,
    /// Ideal path `z_k = lambda(y_k)`.
    pub zs: Vec<DVector<f64>>,
    /// Noise `M_{k+1}` for `k = 0 .. N-1`.
    pub noise: Vec<DVector<f64>>,
    /// Perturbations `eps_{k+1}` for `k = 0 .. N-1`.
    pub perturbations: Vec<DVector<f64>>,
    pub slow: SlowPath,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.xs.len() - 1
    }

    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.cfg.a
    }
}

/// Single update of the stochastic approximation recursion.
#[inline]
pub(crate) fn sa_step(
    x: &DVector<f64>,
    h: &DVector<f64>,
    m: &DVector<f64>,
    e: &DVector<f64>,
    a: f64,
) -> DVector<f64> {
    x + (h + m + e) * a
}

/// Run the tracking iteration on noise stream `stream` of the config seed.
pub fn run_sa_stream(
    model: &dyn TrackingModel,
    noise_spec: &NoiseSpec,
    perturbation: &PerturbationSpec,
    cfg: &SimConfig,
    stream: u64,
) -> Result<Trajectory> {
    cfg.validate(model.dim())?;
    noise_spec.validate()?;
    perturbation.validate()?;
    let slow = integrate_slow(
        model,
        cfg.eps,
        cfg.a,
        &cfg.y0_vec(),
        cfg.t_end(),
        cfg.ode_substeps,
        f64::INFINITY,
    )?;
    let n = cfg.horizon_n;
    let mut rng = replica_rng(cfg.seed, stream);
    let mut xs = Vec::with_capacity(n + 1);
    let mut ys = Vec::with_capacity(n + 1);
    let mut zs = Vec::with_capacity(n + 1);
    let mut noise = Vec::with_capacity(n);
    let mut perturbations = Vec::with_capacity(n);
    xs.push(cfg.x0_vec());
    ys.push(slow.at_step(0).clone());
    zs.push(model.lambda(&ys[0]));
    for k in 0..n {
        let x = &xs[k];
        let y = &ys[k];
        let m = sample_noise(noise_spec, x, &mut rng);
        let e = sample_perturbation(perturbation, k, model.dim());
        let next = sa_step(x, &model.h(x, y), &m, &e, cfg.a);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > DIVERGENCE_GUARD {
            return Err(Error::Divergence { step: k + 1, norm: next.norm() });
        }
        noise.push(m);
        perturbations.push(e);
        xs.push(next);
        let y_next = slow.at_step(k + 1).clone();
        zs.push(model.lambda(&y_next));
        ys.push(y_next);
    }
    Ok(Trajectory {
        cfg: cfg.clone(),
        xs,
        ys,
        zs,
        noise,
        perturbations,
        slow,
    })
}

/// Run the tracking iteration with the configured seed on stream 0.
pub fn run_sa(
    model: &dyn TrackingModel,
    noise_spec: &NoiseSpec,
    perturbation: &PerturbationSpec,
    cfg: &SimConfig,
) -> Result<Trajectory> {
    run_sa_stream(model, noise_spec, perturbation, cfg, 0)
}

/// Linearly interpolated iterate at algorithmic time `t`.
pub fn interpolate(traj: &Trajectory, t: f64) -> Result<DVector<f64>> {
    let a = traj.cfg.a;
    let t_end = traj.horizon() as f64 * a;
    if !(0.0..=t_end + 1e-9 * (1.0 + t_end)).contains(&t) {
        return Err(Error::Numerical(format!(
            "interpolation time {t} outside trajectory range [0, {t_end}]"
        )));
    }
    let t = t.min(t_end);
    let k = ((t / a).floor() as usize).min(traj.horizon() - 1);
    let theta = (t - k as f64 * a) / a;
    Ok(&traj.xs[k] + (&traj.xs[k + 1] - &traj.xs[k]) * theta)
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

/// Per-step ensemble means accumulated over replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    /// Root of the mean squared deviation `E |x_k - z_k|^2` per step.
    pub rms: Vec<f64>,
    /// Mean `|x_k|^2` per step.
    pub x2: Vec<f64>,
    /// Mean `|x_k|^4` per step.
    pub x4: Vec<f64>,
    /// `max(sup_k E[|x_k|^2]^(1/2), sup_k E[|x_k|^4]^(1/4))`.
    pub c_star: f64,
    pub n_replicas: usize,
    pub a: f64,
}

impl EnsembleSummary {
    /// RMS over the stationary window: the last quarter of the horizon.
    pub fn stationary_rms(&self) -> f64 {
        let n = self.rms.len();
        let start = n - n / 4;
        let window = &self.rms[start..];
        let mean2 = window.iter().map(|r| r * r).sum::<f64>() / window.len() as f64;
        mean2.sqrt()
    }
}

#[derive(Default, Clone)]
struct StepSums {
    err2: Vec<f64>,
    x2: Vec<f64>,
    x4: Vec<f64>,
}

impl StepSums {
    fn new(n: usize) -> Self {
        Self {
            err2: vec![0.0; n],
            x2: vec![0.0; n],
            x4: vec![0.0; n],
        }
    }

    fn absorb(&mut self, other: &StepSums) {
        for i in 0..self.err2.len() {
            self.err2[i] += other.err2[i];
            self.x2[i] += other.x2[i];
            self.x4[i] += other.x4[i];
        }
    }
}

fn replica_sums(
    model: &dyn TrackingModel,
    noise_spec: &NoiseSpec,
    perturbation: &PerturbationSpec,
    cfg: &SimConfig,
    slow: &SlowPath,
    replica: u64,
    sums: &mut StepSums,
) -> Result<()> {
    let n = cfg.horizon_n;
    let mut rng = replica_rng(cfg.seed, replica);
    let mut x = cfg.x0_vec();
    for k in 0..=n {
        let y = slow.at_step(k);
        let z = model.lambda(y);
        let err2 = (&x - z).norm_squared();
        let x2 = x.norm_squared();
        sums.err2[k] += err2;
        sums.x2[k] += x2;
        sums.x4[k] += x2 * x2;
        if k == n {
            break;
        }
        let m = sample_noise(noise_spec, &x, &mut rng);
        let e = sample_perturbation(perturbation, k, model.dim());
        let next = sa_step(&x, &model.h(&x, y), &m, &e, cfg.a);
        if !next.iter().all(|v| v.is_finite()) || next.norm() > DIVERGENCE_GUARD {
            return Err(Error::Numerical(format!(
                "replica {replica}: divergence at step {} (|x| = {:.3e})",
                k + 1,
                next.norm()
            )));
        }
        x = next;
    }
    Ok(())
}

/// Monte Carlo ensemble of independent replicas.
///
/// Replica `r` draws from stream `r` of the master seed. Partial sums are
/// accumulated over fixed-width chunks and reduced in chunk order, so the
/// result does not depend on how rayon schedules the chunks.
pub fn run_ensemble(
    model: &dyn TrackingModel,
    noise_spec: &NoiseSpec,
    perturbation: &PerturbationSpec,
    cfg: &SimConfig,
    n_replicas: usize,
) -> Result<EnsembleSummary> {
    if n_replicas < 1 {
        return Err(Error::Config("n_replicas must be at least 1".into()));
    }
    cfg.validate(model.dim())?;
    noise_spec.validate()?;
    perturbation.validate()?;
    let slow = integrate_slow(
        model,
        cfg.eps,
        cfg.a,
        &cfg.y0_vec(),
        cfg.t_end(),
        cfg.ode_substeps,
        f64::INFINITY,
    )?;
    let n = cfg.horizon_n;
    let n_chunks = n_replicas.div_ceil(REDUCE_CHUNK);
    let partials: Vec<Result<StepSums>> = (0..n_chunks)
        .into_par_iter()
        .map(|chunk| {
            let lo = chunk * REDUCE_CHUNK;
            let hi = ((chunk + 1) * REDUCE_CHUNK).min(n_replicas);
            let mut sums = StepSums::new(n + 1);
            for r in lo..hi {
                replica_sums(model, noise_spec, perturbation, cfg, &slow, r as u64, &mut sums)?;
            }
            Ok(sums)
        })
        .collect();
    let mut total = StepSums::new(n + 1);
    for p in partials {
        total.absorb(&p?);
    }
    let inv = 1.0 / n_replicas as f64;
    let rms: Vec<f64> = total.err2.iter().map(|s| (s * inv).sqrt()).collect();
    let x2: Vec<f64> = total.x2.iter().map(|s| s * inv).collect();
    let x4: Vec<f64> = total.x4.iter().map(|s| s * inv).collect();
    let c_star = x2
        .iter()
        .map(|v| v.sqrt())
        .chain(x4.iter().map(|v| v.powf(0.25)))
        .fold(0.0_f64, f64::max);
    Ok(EnsembleSummary {
        rms,
        x2,
        x4,
        c_star,
        n_replicas,
        a: cfg.a,
    })
}
