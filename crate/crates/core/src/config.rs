//! The single JSON configuration document: sections for the model, noise,
//! perturbation, simulation, sweep, stability test and concentration
//! study. Unknown keys are rejected everywhere.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    LinearDrift, LinearRotating, LogisticDrift, PartialModelConstants, TrackingModel,
};
use crate::noise::{NoiseSpec, PerturbationSpec};
use crate::simulate::SimConfig;
use crate::stability::SoloParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub model: ModelSection,
    pub noise: NoiseSpec,
    pub perturbation: PerturbationSpec,
    pub sim: SimConfig,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub stability: StabilitySection,
    #[serde(default)]
    pub concentration: ConcentrationSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// One of "linear_drift", "linear_rotating", "logistic_drift".
    pub kind: String,
    pub dim: usize,
    /// Gain of the linear tracker field.
    #[serde(default = "default_gain")]
    pub gain: f64,
    /// Target drift direction for linear_drift; unit first coordinate by
    /// default.
    #[serde(default)]
    pub drift: Option<Vec<f64>>,
    /// Rotation rate for linear_rotating.
    #[serde(default)]
    pub rotation_rate: Option<f64>,
    /// User-supplied constants; they win over estimation.
    #[serde(default)]
    pub constants: Option<PartialModelConstants>,
}

fn default_gain() -> f64 {
    1.0
}

impl ModelSection {
    pub fn build(&self) -> Result<Box<dyn TrackingModel>> {
        self.build_with_dim(self.dim)
    }

    /// Build with an overridden dimension (dimension-axis sweeps).
    pub fn build_with_dim(&self, dim: usize) -> Result<Box<dyn TrackingModel>> {
        if dim == 0 {
            return Err(Error::Config("model dimension must be at least 1".into()));
        }
        match self.kind.as_str() {
            "linear_drift" => {
                let drift = match &self.drift {
                    Some(v) if dim == self.dim => nalgebra::DVector::from_vec(v.clone()),
                    _ => {
                        let mut u = nalgebra::DVector::zeros(dim);
                        u[0] = 1.0;
                        u
                    }
                };
                Ok(Box::new(LinearDrift::new(dim, self.gain, drift)?))
            }
            "linear_rotating" => {
                let rate = self.rotation_rate.unwrap_or(1.0);
                Ok(Box::new(LinearRotating::new(dim, self.gain, rate)?))
            }
            "logistic_drift" => Ok(Box::new(LogisticDrift::new(dim))),
            other => Err(Error::Config(format!(
                "unknown model kind `{other}` (expected linear_drift, linear_rotating or logistic_drift)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisName {
    A,
    Eps,
    EpsStar,
    D,
}

impl AxisName {
    pub fn label(&self) -> &'static str {
        match self {
            AxisName::A => "a",
            AxisName::Eps => "eps",
            AxisName::EpsStar => "eps_star",
            AxisName::D => "d",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub axis: AxisName,
    pub grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axes: Vec<AxisSpec>,
    pub replicas: usize,
    /// Fixed algorithmic horizon; each cell runs N = t_end / a steps.
    pub t_end: f64,
}

impl SweepSection {
    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() {
            return Err(Error::Config("sweep needs at least one axis".into()));
        }
        for ax in &self.axes {
            if ax.grid.is_empty() {
                return Err(Error::Config(format!("empty grid for axis {}", ax.axis.label())));
            }
            let mut prev = 0.0;
            for &v in &ax.grid {
                if v <= 0.0 {
                    return Err(Error::Config(format!(
                        "grid values must be positive on axis {}",
                        ax.axis.label()
                    )));
                }
                if v <= prev {
                    return Err(Error::Config(format!(
                        "grid must be strictly increasing on axis {}",
                        ax.axis.label()
                    )));
                }
                prev = v;
            }
        }
        if self.replicas == 0 {
            return Err(Error::Config("sweep replicas must be at least 1".into()));
        }
        if self.t_end <= 0.0 {
            return Err(Error::Config("sweep t_end must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilitySection {
    #[serde(default = "default_window")]
    pub window_t: f64,
    #[serde(default)]
    pub params: SoloParams,
}

fn default_window() -> f64 {
    1.0
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            window_t: default_window(),
            params: SoloParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConcentrationSection {
    /// Calibrated constant; calibrated on demand when absent.
    #[serde(default)]
    pub c: Option<f64>,
    /// Index of the weighted sum under study; the horizon by default.
    #[serde(default)]
    pub n_index: Option<usize>,
    /// Tail grid; multiples of the empirical standard deviation by default.
    #[serde(default)]
    pub eta_grid: Option<Vec<f64>>,
    #[serde(default = "default_cal_replicas")]
    pub calibration_replicas: usize,
    #[serde(default = "default_val_replicas")]
    pub validation_replicas: usize,
    #[serde(default)]
    pub substeps: Option<usize>,
}

fn default_cal_replicas() -> usize {
    400
}

fn default_val_replicas() -> usize {
    2000
}

impl Default for ConcentrationSection {
    fn default() -> Self {
        Self {
            c: None,
            n_index: None,
            eta_grid: None,
            calibration_replicas: default_cal_replicas(),
            validation_replicas: default_val_replicas(),
            substeps: None,
        }
    }
}

impl Config {
    pub fn from_str(text: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Config::from_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model.build()?;
        self.sim.validate(model.dim())?;
        self.noise.validate()?;
        self.perturbation.validate()?;
        if let Some(sweep) = &self.sweep {
            sweep.validate()?;
        }
        self.stability.params.validate()?;
        if let Some(c) = self.concentration.c {
            if c <= 0.0 {
                return Err(Error::Config("concentration constant must be positive".into()));
            }
        }
        Ok(())
    }

    /// Canonical serialized form used for hashing calibration records.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const EXAMPLE: &str = r#"{
        "model": {"kind": "linear_drift", "dim": 1},
        "noise": {
            "family": "gaussian",
            "scale": {"base": 1.0},
            "s_min": 1.0,
            "s_max": 1.0
        },
        "perturbation": {"eps_star": 0.0, "mode": "zero"},
        "sim": {
            "a": 0.1,
            "eps": 0.0,
            "horizon_n": 100,
            "seed": 7,
            "x0": [0.0],
            "y0": [0.0]
        }
    }"#;

    #[test]
    fn parses_minimal_config() {
        let cfg = Config::from_str(EXAMPLE).unwrap();
        assert_eq!(cfg.model.kind, "linear_drift");
        assert_eq!(cfg.sim.ode_substeps, 10, "default substeps");
        assert!(cfg.sweep.is_none());
        let model = cfg.model.build().unwrap();
        assert_eq!(model.dim(), 1);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = EXAMPLE.replace("\"dim\": 1", "\"dim\": 1, \"wat\": 2");
        match Config::from_str(&bad) {
            Err(Error::Json(_)) => {}
            other => panic!("expected json error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_model_kind() {
        let bad = EXAMPLE.replace("linear_drift", "cubic_drift");
        assert!(Config::from_str(&bad).is_err());
    }

    #[test]
    fn rejects_bad_stepsize() {
        let bad = EXAMPLE.replace("\"a\": 0.1", "\"a\": 1.5");
        assert!(Config::from_str(&bad).is_err());
    }

    #[test]
    fn sweep_grid_must_be_sorted() {
        let mut cfg = Config::from_str(EXAMPLE).unwrap();
        cfg.sweep = Some(SweepSection {
            axes: vec![AxisSpec {
                axis: AxisName::A,
                grid: vec![0.1, 0.01],
            }],
            replicas: 10,
            t_end: 10.0,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dimension_override_rebuilds_model() {
        let cfg = Config::from_str(EXAMPLE).unwrap();
        let m = cfg.model.build_with_dim(4).unwrap();
        assert_eq!(m.dim(), 4);
    }

    #[test]
    fn canonical_json_round_trips() {
        let cfg = Config::from_str(EXAMPLE).unwrap();
        let again = Config::from_str(&cfg.canonical_json()).unwrap();
        assert_eq!(cfg, again);
    }
}
