//! Run configuration: model resolution, grids, tolerances. Everything that
//! affects the numbers lands in the manifest for reproducibility.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};

use pwscatter_core::hetero::HeteroSettings;
use pwscatter_core::integrator::StepControl;
use pwscatter_core::melnikov::QuadSettings;
use pwscatter_core::model::{Connection, RockingBlock, RockingBlockParams};

#[derive(Debug)]
pub struct ValidationError(pub String);

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ValidationError {}

pub fn invalid(msg: impl Into<String>) -> ValidationError {
    ValidationError(msg.into())
}

/// `start:stop:count` grid or a single scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn scalar(x: f64) -> Self {
        Self {
            start: x,
            stop: x,
            count: 1,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count <= 1 {
            return vec![self.start];
        }
        let span = self.stop - self.start;
        (0..self.count)
            .map(|i| self.start + span * (i as f64) / (self.count as f64))
            .collect()
    }

    pub fn validate(&self, name: &str) -> Result<(), ValidationError> {
        if self.count == 0 {
            return Err(invalid(format!("{name}: grid count must be at least 1")));
        }
        if !self.start.is_finite() || !self.stop.is_finite() {
            return Err(invalid(format!("{name}: grid bounds must be finite")));
        }
        if self.count > 1 && self.stop <= self.start {
            return Err(invalid(format!("{name}: need stop > start for a grid")));
        }
        Ok(())
    }
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        match parts.as_slice() {
            [x] => {
                let x: f64 = x.parse().map_err(|e| format!("bad number '{x}': {e}"))?;
                Ok(GridSpec::scalar(x))
            }
            [a, b, n] => {
                let start: f64 = a.parse().map_err(|e| format!("bad start '{a}': {e}"))?;
                let stop: f64 = b.parse().map_err(|e| format!("bad stop '{b}': {e}"))?;
                let count: usize = n.parse().map_err(|e| format!("bad count '{n}': {e}"))?;
                Ok(GridSpec { start, stop, count })
            }
            _ => Err("expected 'value' or 'start:stop:count'".into()),
        }
    }
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args, Serialize)]
pub struct CommonArgs {
    /// Built-in model name.
    #[arg(long, default_value = "rocking-block")]
    pub model: String,
    /// Plain-text key-value model config (delta, k, omega, eps, v_max).
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Forcing amplitude coefficient.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Coupling stiffness coefficient.
    #[arg(long)]
    pub k: Option<f64>,
    /// Forcing frequency.
    #[arg(long)]
    pub omega: Option<f64>,
    /// Perturbation size.
    #[arg(long)]
    pub eps: Option<f64>,
    /// Reject |v| beyond this bound.
    #[arg(long)]
    pub v_max: Option<f64>,
    /// Worker threads (fallback: PWSCATTER_WORKERS, then 4).
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Integrator relative tolerance.
    #[arg(long = "tol-rel", default_value_t = 1e-12)]
    pub tol_rel: f64,
    /// Integrator absolute tolerance.
    #[arg(long = "tol-abs", default_value_t = 1e-12)]
    pub tol_abs: f64,
    /// Event residual tolerance (relative to state scale).
    #[arg(long = "tol-event", default_value_t = 1e-13)]
    pub tol_event: f64,
    /// Quadrature tolerance for Melnikov-type integrals.
    #[arg(long = "tol-quad", default_value_t = 1e-10)]
    pub tol_quad: f64,
    /// Bisection bracket tolerance on manifold ordinates.
    #[arg(long = "tol-bisect", default_value_t = 1e-12)]
    pub tol_bisect: f64,
    /// Acceptable |y_u - y_s| at a heteroclinic point.
    #[arg(long = "tol-distance", default_value_t = 1e-10)]
    pub tol_distance: f64,
}

/// Fully resolved run configuration as recorded in the manifest.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub model: String,
    pub params: ResolvedParams,
    pub tolerances: Tolerances,
    pub workers: usize,
    /// All computations are deterministic given this config.
    pub deterministic: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedParams {
    pub delta: f64,
    pub k: f64,
    pub omega: f64,
    pub eps: f64,
    pub v_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub event_tol: f64,
    pub quad_tol: f64,
    pub bisect_tol: f64,
    pub distance_tol: f64,
}

impl CommonArgs {
    pub fn validate(&self) -> Result<(), ValidationError> {
        for (name, tol) in [
            ("tol-rel", self.tol_rel),
            ("tol-abs", self.tol_abs),
            ("tol-event", self.tol_event),
            ("tol-quad", self.tol_quad),
            ("tol-bisect", self.tol_bisect),
            ("tol-distance", self.tol_distance),
        ] {
            if tol <= 0.0 || tol.is_nan() || !tol.is_finite() {
                return Err(invalid(format!("{name}: tolerance must be positive")));
            }
        }
        Ok(())
    }

    pub fn resolve_model(&self) -> Result<RockingBlock<f64>, ValidationError> {
        let mut base = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| invalid(format!("config {}: {e}", path.display())))?;
                RockingBlock::from_config_str(&text)
                    .map_err(|e| invalid(format!("config {}: {e}", path.display())))?
                    .params
            }
            None => RockingBlockParams::default(),
        };
        if let Some(x) = self.delta {
            base.delta = x;
        }
        if let Some(x) = self.k {
            base.k = x;
        }
        if let Some(x) = self.omega {
            base.omega = x;
        }
        if let Some(x) = self.eps {
            base.eps = x;
        }
        if let Some(x) = self.v_max {
            base.v_max = x;
        }
        RockingBlock::by_name(&self.model, base).map_err(|e| invalid(e.to_string()))
    }

    pub fn workers(&self) -> usize {
        self.workers
            .or_else(|| {
                std::env::var("PWSCATTER_WORKERS")
                    .ok()
                    .and_then(|v| v.parse().ok())
            })
            .unwrap_or(4)
            .max(1)
    }

    pub fn step_control(&self) -> StepControl<f64> {
        StepControl {
            rel_tol: self.tol_rel,
            abs_tol: self.tol_abs,
            event_tol: self.tol_event,
            ..StepControl::default()
        }
    }

    pub fn quad_settings(&self) -> QuadSettings<f64> {
        QuadSettings::with_tol(self.tol_quad)
    }

    pub fn hetero_settings(&self) -> HeteroSettings<f64> {
        HeteroSettings {
            step: StepControl {
                record: false,
                ..self.step_control()
            },
            quad: self.quad_settings(),
            bisect_tol: self.tol_bisect,
            distance_tol: self.tol_distance,
            workers: self.workers(),
            ..HeteroSettings::default()
        }
    }

    pub fn run_config(&self, model: &RockingBlock<f64>) -> RunConfig {
        RunConfig {
            model: self.model.clone(),
            params: ResolvedParams {
                delta: model.params.delta,
                k: model.params.k,
                omega: model.params.omega,
                eps: model.params.eps,
                v_max: model.params.v_max,
            },
            tolerances: Tolerances {
                rel_tol: self.tol_rel,
                abs_tol: self.tol_abs,
                event_tol: self.tol_event,
                quad_tol: self.tol_quad,
                bisect_tol: self.tol_bisect,
                distance_tol: self.tol_distance,
            },
            workers: self.workers(),
            deterministic: true,
        }
    }
}

pub fn parse_connection(s: &str) -> Result<Connection, String> {
    match s {
        "up" => Ok(Connection::Up),
        "down" => Ok(Connection::Down),
        other => Err(format!("connection must be 'up' or 'down', got '{other}'")),
    }
}
