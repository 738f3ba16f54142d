//! Equation of variation along the ideal path: fundamental matrices, the
//! exponential-stability fit (C_Phi, beta), and the exact
//! variation-of-constants decomposition of the tracking error.
//!
//! The comparison system is `dw/dt = h(w, y(t)) + c Grad lambda(y) gamma(y)`
//! with `c = a eps`, the algorithmic-time drift speed of the target; with
//! that coefficient the ideal path `z(t) = lambda(y(t))` solves the
//! comparison system exactly and the decomposition below reconstructs the
//! interpolated iterate up to integration error only.
//!
//! `Phi(t, s; x0, y0)` solves `dPhi/dt = D(w(t), y(t)) Phi`, `Phi(s,s) = I`,
//! where `(w, y)` is the comparison flow restarted from `(x0, y0)` at time
//! `s`. The combined system is autonomous, so `Phi` depends on the anchor
//! and the elapsed time only.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ols_line, op_norm};
use crate::model::TrackingModel;
use crate::simulate::Trajectory;

/// Gauss-Legendre 3-point rule on [-1, 1].
const GL3_NODES: [f64; 3] = [-0.7745966692414834, 0.0, 0.7745966692414834];
const GL3_WEIGHTS: [f64; 3] = [5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0];

// ---------------------------------------------------------------------------
// Combined flow (w, y, Phi, integrated trace)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct FlowState {
    w: DVector<f64>,
    y: DVector<f64>,
    phi: DMatrix<f64>,
    tr: f64,
}

struct FlowDeriv {
    dw: DVector<f64>,
    dy: DVector<f64>,
    dphi: DMatrix<f64>,
    dtr: f64,
}

fn flow_deriv(model: &dyn TrackingModel, speed: f64, st: &FlowState) -> FlowDeriv {
    let mut dw = model.h(&st.w, &st.y);
    let dy;
    if speed != 0.0 {
        let gam = model.gamma(&st.y);
        dw += model.grad_lambda(&st.y) * &gam * speed;
        dy = gam * speed;
    } else {
        dy = DVector::zeros(st.y.len());
    }
    let d = model.jac_d(&st.w, &st.y);
    let dtr = d.trace();
    let dphi = &d * &st.phi;
    FlowDeriv { dw, dy, dphi, dtr }
}

fn flow_add(st: &FlowState, d: &FlowDeriv, h: f64) -> FlowState {
    FlowState {
        w: &st.w + &d.dw * h,
        y: &st.y + &d.dy * h,
        phi: &st.phi + &d.dphi * h,
        tr: st.tr + d.dtr * h,
    }
}

fn rk4_flow(model: &dyn TrackingModel, speed: f64, st: &FlowState, h: f64) -> FlowState {
    let k1 = flow_deriv(model, speed, st);
    let k2 = flow_deriv(model, speed, &flow_add(st, &k1, h / 2.0));
    let k3 = flow_deriv(model, speed, &flow_add(st, &k2, h / 2.0));
    let k4 = flow_deriv(model, speed, &flow_add(st, &k3, h));
    let sixth = h / 6.0;
    FlowState {
        w: &st.w + (&k1.dw + &k2.dw * 2.0 + &k3.dw * 2.0 + &k4.dw) * sixth,
        y: &st.y + (&k1.dy + &k2.dy * 2.0 + &k3.dy * 2.0 + &k4.dy) * sixth,
        phi: &st.phi + (&k1.dphi + &k2.dphi * 2.0 + &k3.dphi * 2.0 + &k4.dphi) * sixth,
        tr: st.tr + (k1.dtr + 2.0 * k2.dtr + 2.0 * k3.dtr + k4.dtr) * sixth,
    }
}

/// Incremental solver for the combined flow, advancing in elapsed time from
/// the anchor with RK4 steps no longer than `step`.
pub struct VariationalFlow<'m> {
    model: &'m dyn TrackingModel,
    speed: f64,
    step: f64,
    elapsed: f64,
    state: FlowState,
}

impl<'m> VariationalFlow<'m> {
    pub fn new(
        model: &'m dyn TrackingModel,
        speed: f64,
        x0: &DVector<f64>,
        y0: &DVector<f64>,
        step: f64,
    ) -> Self {
        let d = model.dim();
        Self {
            model,
            speed,
            step,
            elapsed: 0.0,
            state: FlowState {
                w: x0.clone(),
                y: y0.clone(),
                phi: DMatrix::identity(d, d),
                tr: 0.0,
            },
        }
    }

    /// Advance to elapsed time `tau >= current`.
    pub fn advance_to(&mut self, tau: f64) -> Result<()> {
        let dt = tau - self.elapsed;
        if dt < -1e-12 {
            return Err(Error::Numerical(format!(
                "variational flow cannot run backwards ({} -> {tau})",
                self.elapsed
            )));
        }
        if dt <= 0.0 {
            return Ok(());
        }
        let n = (dt / self.step).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        for _ in 0..n {
            self.state = rk4_flow(self.model, self.speed, &self.state, h);
        }
        if !self.state.phi.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "fundamental matrix blew up at elapsed time {tau}"
            )));
        }
        self.elapsed = tau;
        Ok(())
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.state.phi
    }

    pub fn base_x(&self) -> &DVector<f64> {
        &self.state.w
    }

    pub fn base_y(&self) -> &DVector<f64> {
        &self.state.y
    }

    pub fn int_trace(&self) -> f64 {
        self.state.tr
    }
}

/// Fundamental matrix of the equation of variation between times `s <= t`,
/// anchored at `(x0, y0)` at time `s`.
#[derive(Debug, Clone)]
pub struct FundamentalMatrix {
    pub s: f64,
    pub t: f64,
    pub anchor_x: DVector<f64>,
    pub anchor_y: DVector<f64>,
    pub value: DMatrix<f64>,
    /// Comparison flow at time `t`, useful for cocycle composition.
    pub base_x: DVector<f64>,
    pub base_y: DVector<f64>,
    /// Integral of `trace D` along the base path (Liouville check).
    pub int_trace: f64,
}

/// Solve `dPhi/dt = D(w(t), y(t)) Phi` from `Phi(s, s) = I` with fixed-step
/// RK4 (steps no longer than `step`).
pub fn solve_fundamental(
    model: &dyn TrackingModel,
    drift_speed: f64,
    s: f64,
    x0: &DVector<f64>,
    y0: &DVector<f64>,
    t: f64,
    step: f64,
) -> Result<FundamentalMatrix> {
    if t < s {
        return Err(Error::Numerical(format!(
            "solve_fundamental needs s <= t, got s = {s}, t = {t}"
        )));
    }
    if step <= 0.0 {
        return Err(Error::Config("integration step must be positive".into()));
    }
    let mut flow = VariationalFlow::new(model, drift_speed, x0, y0, step);
    flow.advance_to(t - s)?;
    Ok(FundamentalMatrix {
        s,
        t,
        anchor_x: x0.clone(),
        anchor_y: y0.clone(),
        value: flow.state.phi,
        base_x: flow.state.w,
        base_y: flow.state.y,
        int_trace: flow.state.tr,
    })
}

// ---------------------------------------------------------------------------
// Exponential stability estimate
// ---------------------------------------------------------------------------

/// Fitted exponential envelope `|Phi(t, s)| <= C_Phi exp(-beta (t - s))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityEstimate {
    pub c_phi: f64,
    pub beta: f64,
    /// `1 / beta`.
    pub mu: f64,
    pub fit_residual: f64,
    pub n_pairs: usize,
}

/// Deterministic `(s, t)` pairs with a spread of durations on `[0, t_end]`.
pub fn stability_pairs(t_end: f64, n_durations: usize, n_offsets: usize) -> Vec<(f64, f64)> {
    let tau_min = (0.25_f64).min(t_end / 4.0);
    let tau_max = (8.0_f64).min(0.6 * t_end);
    let mut pairs = Vec::new();
    for j in 0..n_durations {
        let frac = j as f64 / (n_durations - 1).max(1) as f64;
        let tau = tau_min * (tau_max / tau_min).powf(frac);
        for i in 0..n_offsets {
            let s = (t_end - tau) * i as f64 / (n_offsets - 1).max(1) as f64;
            pairs.push((s, s + tau));
        }
    }
    pairs
}

/// Least-squares fit of `log |Phi(t,s)|` against `-(t-s)` along the ideal
/// path `(z(.), y(.))` of `slow`, then minimal inflation of `C_Phi` so the
/// envelope dominates every sample.
pub fn estimate_exp_stability(
    model: &dyn TrackingModel,
    slow: &crate::simulate::SlowPath,
    pairs: &[(f64, f64)],
    step: f64,
) -> Result<StabilityEstimate> {
    if pairs.len() < 20 {
        return Err(Error::Config(format!(
            "stability fit needs at least 20 (s, t) pairs, got {}",
            pairs.len()
        )));
    }
    let speed = slow.speed();
    let samples: Vec<Result<(f64, f64)>> = pairs
        .par_iter()
        .map(|&(s, t)| {
            let y = slow.value_at(model, s)?;
            let z = model.lambda(&y);
            let phi = solve_fundamental(model, speed, s, &z, &y, t, step)?;
            Ok((t - s, op_norm(&phi.value)))
        })
        .collect();
    let mut durations = Vec::with_capacity(pairs.len());
    let mut lognorms = Vec::with_capacity(pairs.len());
    for s in samples {
        let (tau, norm) = s?;
        if norm <= 0.0 {
            return Err(Error::Numerical(
                "zero transition-matrix norm in stability fit".into(),
            ));
        }
        durations.push(tau);
        lognorms.push(norm.ln());
    }
    let (slope, _intercept, _stderr, fit_residual) = ols_line(&durations, &lognorms);
    let beta = -slope;
    if beta <= 1e-6 {
        return Err(Error::StabilityViolated { beta });
    }
    // Smallest C_Phi that dominates all samples; never below 1 because
    // Phi(s, s) = I.
    let mut c_phi = 1.0_f64;
    for (tau, ln) in durations.iter().zip(&lognorms) {
        c_phi = c_phi.max((ln + beta * tau).exp());
    }
    Ok(StabilityEstimate {
        c_phi,
        beta,
        mu: 1.0 / beta,
        fit_residual,
        n_pairs: pairs.len(),
    })
}

// ---------------------------------------------------------------------------
// Alekseev decomposition
// ---------------------------------------------------------------------------

/// Exact error-decomposition terms at index `n`:
/// `x(t_n) = z(t_n) + rho + A + B + D - E` with `B = (B - C) + C`.
#[derive(Debug, Clone)]
pub struct DecompositionTerms {
    pub n: usize,
    pub rho: DVector<f64>,
    pub a_term: DVector<f64>,
    pub b_term: DVector<f64>,
    pub c_term: DVector<f64>,
    pub d_term: DVector<f64>,
    pub e_term: DVector<f64>,
    /// Per-node integrand samples, recorded on request.
    pub integrands: Option<Vec<IntegrandRecord>>,
}

/// The four perturbation integrands at a quadrature node.
#[derive(Debug, Clone)]
pub struct IntegrandRecord {
    pub s: f64,
    pub zeta1: DVector<f64>,
    pub zeta2: DVector<f64>,
    pub zeta3: DVector<f64>,
    pub zeta4: DVector<f64>,
}

impl IntegrandRecord {
    pub fn xi(&self) -> DVector<f64> {
        &self.zeta1 + &self.zeta2 + &self.zeta3 + &self.zeta4
    }
}

impl DecompositionTerms {
    pub fn b_minus_c(&self) -> DVector<f64> {
        &self.b_term - &self.c_term
    }

    /// Reconstruction of the interpolated iterate from the ideal value.
    pub fn reconstruct(&self, z_tn: &DVector<f64>) -> DVector<f64> {
        z_tn + &self.rho + &self.a_term + &self.b_term + &self.d_term - &self.e_term
    }
}

struct IntervalSums {
    a: DVector<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    d: DVector<f64>,
    e: DVector<f64>,
    records: Vec<IntegrandRecord>,
}

fn interval_terms(
    model: &dyn TrackingModel,
    traj: &Trajectory,
    n: usize,
    k: usize,
    substeps: usize,
    record: bool,
) -> Result<IntervalSums> {
    let a = traj.cfg.a;
    let speed = traj.slow.speed();
    let dim = model.dim();
    let step = a / substeps as f64;
    let t_n = n as f64 * a;
    let t_k = k as f64 * a;
    let x_k = &traj.xs[k];
    let y_k = &traj.ys[k];
    let m_k = &traj.noise[k];
    let eps_k = &traj.perturbations[k];
    let dx = &traj.xs[k + 1] - x_k;
    // Frozen per-interval pieces of the integrands.
    let drift_comp = model.grad_lambda(y_k) * model.gamma(y_k) * speed;
    let h_frozen = model.h(x_k, y_k) + &drift_comp;

    let mut sums = IntervalSums {
        a: DVector::zeros(dim),
        b: DVector::zeros(dim),
        c: DVector::zeros(dim),
        d: DVector::zeros(dim),
        e: DVector::zeros(dim),
        records: Vec::new(),
    };

    // C-term weight: alpha_{k,n} = int_{t_k}^{t_{k+1}} Phi(t_n, s; x_k, y_k) ds.
    // The combined flow is autonomous, so Phi depends on tau = t_n - s only
    // and one forward pass over tau serves every node of the interval.
    let mut alpha = DMatrix::zeros(dim, dim);
    {
        let mut walker = VariationalFlow::new(model, speed, x_k, y_k, step);
        walker.advance_to(t_n - (t_k + a))?;
        for j in (0..substeps).rev() {
            let u = t_k + j as f64 * step;
            let mid = u + step / 2.0;
            let half = step / 2.0;
            for (node, weight) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
                // Descending panels and negated nodes keep tau increasing.
                let s_node = mid - half * node;
                walker.advance_to(t_n - s_node)?;
                alpha += walker.phi() * (weight * half);
            }
        }
    }
    sums.c = &alpha * m_k;

    for j in 0..substeps {
        let u = t_k + j as f64 * step;
        let mid = u + step / 2.0;
        let half = step / 2.0;
        for (node, weight) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
            let s = mid + half * node;
            let w_q = weight * half;
            // Interpolated iterate and target at the node.
            let theta = (s - t_k) / a;
            let x_bar = x_k + &dx * theta;
            let y_s = traj.slow.value_at(model, s)?;
            let h_moving =
                model.h(&x_bar, &y_s) + model.grad_lambda(&y_s) * model.gamma(&y_s) * speed;
            let zeta1 = &h_frozen - &h_moving;
            let phi = solve_fundamental(model, speed, s, &x_bar, &y_s, t_n, step)?;
            sums.a += &phi.value * &zeta1 * w_q;
            sums.b += &phi.value * m_k * w_q;
            sums.d += &phi.value * eps_k * w_q;
            sums.e += &phi.value * &drift_comp * w_q;
            if record {
                sums.records.push(IntegrandRecord {
                    s,
                    zeta1,
                    zeta2: m_k.clone(),
                    zeta3: eps_k.clone(),
                    zeta4: -&drift_comp,
                });
            }
        }
    }
    Ok(sums)
}

/// Compute the exact decomposition terms at index `n` by composite
/// Gauss-Legendre quadrature (3 points per substep panel) with the
/// transition matrices solved forward from every quadrature node.
pub fn alekseev_decompose(
    model: &dyn TrackingModel,
    traj: &Trajectory,
    n: usize,
    substeps: usize,
    record_integrands: bool,
) -> Result<DecompositionTerms> {
    if n > traj.horizon() {
        return Err(Error::Numerical(format!(
            "decomposition index {n} beyond trajectory horizon {}",
            traj.horizon()
        )));
    }
    if substeps < 1 {
        return Err(Error::Config("substeps must be at least 1".into()));
    }
    let dim = model.dim();
    let a = traj.cfg.a;
    let speed = traj.slow.speed();
    let step = a / substeps as f64;
    let t_n = n as f64 * a;

    // Initial-condition term, anchored at the perturbed start.
    let y0 = &traj.ys[0];
    let z0 = &traj.zs[0];
    let x0 = &traj.xs[0];
    let rho = if n == 0 {
        x0 - z0
    } else {
        let phi0 = solve_fundamental(model, speed, 0.0, x0, y0, t_n, step)?;
        &phi0.value * (x0 - z0)
    };

    let partials: Vec<Result<IntervalSums>> = (0..n)
        .into_par_iter()
        .map(|k| interval_terms(model, traj, n, k, substeps, record_integrands))
        .collect();

    let mut a_term = DVector::zeros(dim);
    let mut b_term = DVector::zeros(dim);
    let mut c_term = DVector::zeros(dim);
    let mut d_term = DVector::zeros(dim);
    let mut e_term = DVector::zeros(dim);
    let mut records = Vec::new();
    for p in partials {
        let p = p?;
        a_term += &p.a;
        b_term += &p.b;
        c_term += &p.c;
        d_term += &p.d;
        e_term += &p.e;
        records.extend(p.records);
    }
    // E_n carries the positive sign of its defining integral; the
    // reconstruction subtracts it.
    Ok(DecompositionTerms {
        n,
        rho,
        a_term,
        b_term,
        c_term,
        d_term,
        e_term,
        integrands: record_integrands.then_some(records),
    })
}

/// Norm of the reconstruction defect
/// `x(t_n) - z(t_n) - rho - A - B - D + E`; vanishes with the integration
/// step up to floating-point noise.
pub fn reconstruct_residual(
    model: &dyn TrackingModel,
    traj: &Trajectory,
    n: usize,
    substeps: usize,
) -> Result<f64> {
    let terms = alekseev_decompose(model, traj, n, substeps, false)?;
    Ok((&traj.xs[n] - terms.reconstruct(&traj.zs[n])).norm())
}

/// Per-interval quadrature weights `alpha_{k,n}` of the C-term for a given
/// trajectory, one matrix per interval `k < n`.
pub fn c_weights(
    model: &dyn TrackingModel,
    traj: &Trajectory,
    n: usize,
    substeps: usize,
) -> Result<Vec<DMatrix<f64>>> {
    if n > traj.horizon() {
        return Err(Error::Numerical(format!(
            "weight index {n} beyond trajectory horizon {}",
            traj.horizon()
        )));
    }
    let a = traj.cfg.a;
    let speed = traj.slow.speed();
    let dim = model.dim();
    let step = a / substeps as f64;
    let t_n = n as f64 * a;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let t_k = k as f64 * a;
            let mut walker = VariationalFlow::new(model, speed, &traj.xs[k], &traj.ys[k], step);
            walker.advance_to(t_n - (t_k + a))?;
            let mut alpha = DMatrix::zeros(dim, dim);
            for j in (0..substeps).rev() {
                let u = t_k + j as f64 * step;
                let mid = u + step / 2.0;
                let half = step / 2.0;
                for (node, weight) in GL3_NODES.iter().zip(GL3_WEIGHTS) {
                    walker.advance_to(t_n - (mid - half * node))?;
                    alpha += walker.phi() * (weight * half);
                }
            }
            Ok(alpha)
        })
        .collect()
}
