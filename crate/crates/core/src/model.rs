//! Tracking problem instances: the driving vector fields, their Jacobians
//! and the analytic constants the error bounds consume.
//!
//! A model supplies the tracker drift `h(x, y)`, the target drift
//! `gamma(y)`, the equilibrium map `lambda(y)` with `h(lambda(y), y) = 0`,
//! and the Jacobians `D(x, y) = d h / d x` and `Grad lambda(y)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::op_norm;

/// A tracking problem instance. All methods must be pure; evaluation from
/// several threads at once is expected.
pub trait TrackingModel: Send + Sync {
    fn dim(&self) -> usize;
    /// Drift of the tracker.
    fn h(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;
    /// Drift of the target.
    fn gamma(&self, y: &DVector<f64>) -> DVector<f64>;
    /// Equilibrium map: `h(lambda(y), y) = 0`.
    fn lambda(&self, y: &DVector<f64>) -> DVector<f64>;
    /// Jacobian of `h` in its first argument.
    fn jac_d(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64>;
    /// Jacobian of `lambda`.
    fn grad_lambda(&self, y: &DVector<f64>) -> DMatrix<f64>;
    fn name(&self) -> &'static str;
}

/// Lipschitz / growth constants of a model, in state-norm units.
///
/// These feed the lemma bounds. They can be user supplied (config) or
/// estimated by sampling; supplied values win.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConstants {
    pub l_h_tilde: f64,
    pub g_h_tilde: f64,
    pub l_gamma: f64,
    pub l_lambda: f64,
    pub l_d: f64,
    pub c_gamma: f64,
    pub k_gamma: f64,
}

impl ModelConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("l_h_tilde", self.l_h_tilde),
            ("g_h_tilde", self.g_h_tilde),
            ("l_gamma", self.l_gamma),
            ("l_lambda", self.l_lambda),
            ("l_d", self.l_d),
            ("c_gamma", self.c_gamma),
            ("k_gamma", self.k_gamma),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "model constant {name} must be a nonnegative real, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Merge estimated constants with user-supplied overrides. Supplied
    /// values win; a warning is emitted when the estimate exceeds them.
    pub fn merge_supplied(
        estimated: &ModelConstants,
        supplied: &PartialModelConstants,
    ) -> (ModelConstants, Vec<String>) {
        let mut out = *estimated;
        let mut warnings = Vec::new();
        let mut pick = |name: &str, est: f64, sup: Option<f64>, slot: &mut f64| {
            if let Some(s) = sup {
                if est > s {
                    warnings.push(format!(
                        "estimated {name} = {est:.6} exceeds supplied value {s:.6}; keeping supplied"
                    ));
                }
                *slot = s;
            }
        };
        pick("l_h_tilde", estimated.l_h_tilde, supplied.l_h_tilde, &mut out.l_h_tilde);
        pick("g_h_tilde", estimated.g_h_tilde, supplied.g_h_tilde, &mut out.g_h_tilde);
        pick("l_gamma", estimated.l_gamma, supplied.l_gamma, &mut out.l_gamma);
        pick("l_lambda", estimated.l_lambda, supplied.l_lambda, &mut out.l_lambda);
        pick("l_d", estimated.l_d, supplied.l_d, &mut out.l_d);
        pick("c_gamma", estimated.c_gamma, supplied.c_gamma, &mut out.c_gamma);
        pick("k_gamma", estimated.k_gamma, supplied.k_gamma, &mut out.k_gamma);
        (out, warnings)
    }
}

/// Optional user-supplied overrides for [`ModelConstants`].
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialModelConstants {
    pub l_h_tilde: Option<f64>,
    pub g_h_tilde: Option<f64>,
    pub l_gamma: Option<f64>,
    pub l_lambda: Option<f64>,
    pub l_d: Option<f64>,
    pub c_gamma: Option<f64>,
    pub k_gamma: Option<f64>,
}

// ---------------------------------------------------------------------------
// Built-in models
// ---------------------------------------------------------------------------

/// `h(x, y) = -gain (x - y)`, `lambda(y) = y`, constant target drift
/// `gamma(y) = u`. The linear workhorse: admits closed-form transition
/// matrices and an Ornstein-Uhlenbeck stationary-variance oracle.
#[derive(Debug, Clone)]
pub struct LinearDrift {
    dim: usize,
    gain: f64,
    drift: DVector<f64>,
}

impl LinearDrift {
    pub fn new(dim: usize, gain: f64, drift: DVector<f64>) -> Result<Self> {
        if drift.len() != dim {
            return Err(Error::DimensionMismatch {
                arg: "drift",
                expected: dim,
                got: drift.len(),
            });
        }
        if gain <= 0.0 {
            return Err(Error::Config(format!("linear gain must be positive, got {gain}")));
        }
        Ok(Self { dim, gain, drift })
    }

    /// Unit drift along the first coordinate.
    pub fn unit(dim: usize) -> Self {
        let mut u = DVector::zeros(dim);
        u[0] = 1.0;
        Self { dim, gain: 1.0, drift: u }
    }
}

impl TrackingModel for LinearDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn h(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (y - x) * self.gain
    }
    fn gamma(&self, _y: &DVector<f64>) -> DVector<f64> {
        self.drift.clone()
    }
    fn lambda(&self, y: &DVector<f64>) -> DVector<f64> {
        y.clone()
    }
    fn jac_d(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.dim, self.dim, -self.gain)
    }
    fn grad_lambda(&self, _y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }
    fn name(&self) -> &'static str {
        "linear_drift"
    }
}

/// Linear tracker with a rotating target: `gamma(y) = R y` for the
/// skew-symmetric generator `R` built from `rate` on consecutive
/// coordinate pairs. Norm of the target is preserved by the flow.
#[derive(Debug, Clone)]
pub struct LinearRotating {
    dim: usize,
    gain: f64,
    rotation: DMatrix<f64>,
}

impl LinearRotating {
    pub fn new(dim: usize, gain: f64, rate: f64) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::Config(format!(
                "linear_rotating needs an even dimension >= 2, got {dim}"
            )));
        }
        if gain <= 0.0 {
            return Err(Error::Config(format!("linear gain must be positive, got {gain}")));
        }
        let mut r = DMatrix::zeros(dim, dim);
        for b in 0..dim / 2 {
            r[(2 * b, 2 * b + 1)] = -rate;
            r[(2 * b + 1, 2 * b)] = rate;
        }
        Ok(Self { dim, gain, rotation: r })
    }

    pub fn rotation(&self) -> &DMatrix<f64> {
        &self.rotation
    }
}

impl TrackingModel for LinearRotating {
    fn dim(&self) -> usize {
        self.dim
    }
    fn h(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        (y - x) * self.gain
    }
    fn gamma(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.rotation * y
    }
    fn lambda(&self, y: &DVector<f64>) -> DVector<f64> {
        y.clone()
    }
    fn jac_d(&self, _x: &DVector<f64>, _y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal_element(self.dim, self.dim, -self.gain)
    }
    fn grad_lambda(&self, _y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }
    fn name(&self) -> &'static str {
        "linear_rotating"
    }
}

/// Genuinely nonlinear scalar blocks: per coordinate
/// `h_i = -(x_i - y_i)^3 - (x_i - y_i)`, `lambda(y) = y`,
/// `gamma_i(y) = sin(y_i)`. Known equilibrium, bounded target drift.
#[derive(Debug, Clone)]
pub struct LogisticDrift {
    dim: usize,
}

impl LogisticDrift {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl TrackingModel for LogisticDrift {
    fn dim(&self) -> usize {
        self.dim
    }
    fn h(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim, |i, _| {
            let u = x[i] - y[i];
            -u * u * u - u
        })
    }
    fn gamma(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(f64::sin)
    }
    fn lambda(&self, y: &DVector<f64>) -> DVector<f64> {
        y.clone()
    }
    fn jac_d(&self, x: &DVector<f64>, y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_fn(self.dim, |i, _| {
            let u = x[i] - y[i];
            -3.0 * u * u - 1.0
        }))
    }
    fn grad_lambda(&self, _y: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }
    fn name(&self) -> &'static str {
        "logistic_drift"
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

fn check_dim(model: &dyn TrackingModel, arg: &'static str, v: &DVector<f64>) -> Result<()> {
    if v.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            arg,
            expected: model.dim(),
            got: v.len(),
        });
    }
    Ok(())
}

/// Drift-compensated field `h~(x, y) = h(x, y) + eps * Grad lambda(y) gamma(y)`.
///
/// `eps` is the coefficient on the compensation term; callers that need the
/// field consistent with the algorithmic-time target speed pass the
/// effective rate there.
pub fn eval_h_tilde(
    model: &dyn TrackingModel,
    x: &DVector<f64>,
    y: &DVector<f64>,
    eps: f64,
) -> Result<DVector<f64>> {
    check_dim(model, "x", x)?;
    check_dim(model, "y", y)?;
    if eps < 0.0 {
        return Err(Error::Config(format!("eps must be nonnegative, got {eps}")));
    }
    let mut out = model.h(x, y);
    if eps != 0.0 {
        out += model.grad_lambda(y) * model.gamma(y) * eps;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub max_residual: f64,
    pub worst_sample: usize,
    pub tol: f64,
    pub pass: bool,
}

/// Largest `|h(lambda(y), y)|` over the samples, compared against `tol`.
pub fn verify_equilibrium(
    model: &dyn TrackingModel,
    y_samples: &[DVector<f64>],
    tol: f64,
) -> Result<EquilibriumReport> {
    if y_samples.is_empty() {
        return Err(Error::Config("verify_equilibrium needs at least one sample".into()));
    }
    if tol <= 0.0 {
        return Err(Error::Config(format!("tolerance must be positive, got {tol}")));
    }
    let mut max_residual = 0.0_f64;
    let mut worst = 0;
    for (i, y) in y_samples.iter().enumerate() {
        check_dim(model, "y_samples", y)?;
        let r = model.h(&model.lambda(y), y).norm();
        if r > max_residual {
            max_residual = r;
            worst = i;
        }
    }
    Ok(EquilibriumReport {
        max_residual,
        worst_sample: worst,
        tol,
        pass: max_residual <= tol,
    })
}

fn sample_in_ball(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.random_range(-radius..=radius))
}

/// Empirical lower estimates of the Lipschitz/growth constants by sampling
/// `n_samples` point pairs in the ball of `domain_radius`.
///
/// Deterministic given the seed, and nondecreasing in `n_samples` for a
/// fixed seed because samples are drawn as a prefix-stable stream.
pub fn estimate_constants(
    model: &dyn TrackingModel,
    domain_radius: f64,
    n_samples: usize,
    seed: u64,
    eps: f64,
) -> Result<ModelConstants> {
    if n_samples < 2 {
        return Err(Error::Config(format!(
            "estimate_constants needs n_samples >= 2, got {n_samples}"
        )));
    }
    if domain_radius <= 0.0 {
        return Err(Error::Config(format!(
            "domain_radius must be positive, got {domain_radius}"
        )));
    }
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n_samples);
    let mut ys = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        xs.push(sample_in_ball(&mut rng, d, domain_radius));
        ys.push(sample_in_ball(&mut rng, d, domain_radius));
    }

    let h_tildes: Vec<DVector<f64>> = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| eval_h_tilde(model, x, y, eps))
        .collect::<Result<_>>()?;
    let gammas: Vec<DVector<f64>> = ys.iter().map(|y| model.gamma(y)).collect();
    let lambdas: Vec<DVector<f64>> = ys.iter().map(|y| model.lambda(y)).collect();
    let jacs: Vec<DMatrix<f64>> = xs.iter().zip(&ys).map(|(x, y)| model.jac_d(x, y)).collect();

    let mut l_h_tilde = 0.0_f64;
    let mut l_gamma = 0.0_f64;
    let mut l_lambda = 0.0_f64;
    let mut l_d = 0.0_f64;
    let mut g_h_tilde = 0.0_f64;
    let mut k_gamma = 0.0_f64;
    for i in 0..n_samples {
        g_h_tilde = g_h_tilde.max(h_tildes[i].norm() / (1.0 + xs[i].norm() + ys[i].norm()));
        k_gamma = k_gamma.max(gammas[i].norm());
        for j in 0..i {
            let dxy = (&xs[i] - &xs[j]).norm() + (&ys[i] - &ys[j]).norm();
            let dy = (&ys[i] - &ys[j]).norm();
            if dxy > 1e-12 {
                l_h_tilde = l_h_tilde.max((&h_tildes[i] - &h_tildes[j]).norm() / dxy);
                l_d = l_d.max(op_norm(&(&jacs[i] - &jacs[j])) / dxy);
            }
            if dy > 1e-12 {
                l_gamma = l_gamma.max((&gammas[i] - &gammas[j]).norm() / dy);
                l_lambda = l_lambda.max((&lambdas[i] - &lambdas[j]).norm() / dy);
            }
        }
    }
    Ok(ModelConstants {
        l_h_tilde,
        g_h_tilde,
        l_gamma,
        l_lambda,
        l_d,
        c_gamma: domain_radius,
        k_gamma,
    })
}
