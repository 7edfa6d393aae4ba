//! JSON experiment configuration shared by the checks and the CLI.
//!
//! Every section has defaults, so `{}` is a valid config. Unknown keys are
//! rejected at parse time.

use serde::{Deserialize, Serialize};

use crate::dual::AmbiguitySpec;
use crate::error::{Error, Result};
use crate::grid::{CompactWindow, Grid};
use crate::models::{ModelSpec, ReferenceModel};
use crate::operators::{self, OperatorConfig};
use crate::pde::DEFAULT_CFL_SAFETY;
use crate::validation::functions::TestFunction;
use crate::validation::{LimitSettings, Thresholds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub ambiguity: AmbiguitySpec,
    pub grid: GridConfig,
    pub numerics: Numerics,
    pub experiment: ExperimentSection,
    pub output: OutputSection,
    pub thresholds: Thresholds,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelSpec::brownian_1d(&[(0.0, 1.0)]),
            ambiguity: AmbiguitySpec { m: 0.5, p: 2.0 },
            grid: GridConfig::default(),
            numerics: Numerics::default(),
            experiment: ExperimentSection::default(),
            output: OutputSection::default(),
            thresholds: Thresholds::default(),
        }
    }
}

/// The box `[lo, hi]^dim` with `n` nodes per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub dim: usize,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Defaults to the middle half of the box.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window: Option<CompactWindow>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            dim: 1,
            lo: -8.0,
            hi: 8.0,
            n: 2049,
            window: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Numerics {
    pub quad_order: usize,
    pub dual_tol: f64,
    pub reach_factor: f64,
    pub candidates_per_side: usize,
    pub stop_tol: f64,
    pub max_level: usize,
    pub cfl_safety: f64,
}

impl Default for Numerics {
    fn default() -> Self {
        Numerics {
            quad_order: operators::DEFAULT_QUAD_ORDER,
            dual_tol: operators::DEFAULT_DUAL_TOL,
            reach_factor: operators::DEFAULT_REACH_FACTOR,
            candidates_per_side: operators::DEFAULT_CANDIDATES_PER_SIDE,
            stop_tol: 1e-3,
            max_level: 8,
            cfl_safety: DEFAULT_CFL_SAFETY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: String,
    pub parameters: ExperimentParameters,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "default".into(),
            parameters: ExperimentParameters::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentParameters {
    /// Initial datum / test function.
    pub function: TestFunction,
    pub horizon: f64,
    /// Decreasing times for the sensitivity and generator checks.
    pub t_list: Vec<f64>,
    /// `(s, t)` pairs for the semigroup check.
    pub pairs: Vec<(f64, f64)>,
    /// Random field pairs for the operator property suite.
    pub trials: usize,
    /// Random instances for the dual oracle check.
    pub oracle_trials: usize,
    /// PDE snapshot times; the horizon is always included.
    pub snapshot_times: Vec<f64>,
    pub seed: u64,
}

impl Default for ExperimentParameters {
    fn default() -> Self {
        ExperimentParameters {
            function: TestFunction::Tanh,
            horizon: 1.0,
            t_list: vec![0.2, 0.1, 0.05, 0.025],
            pairs: vec![(0.25, 0.25), (0.5, 0.25)],
            trials: 100,
            oracle_trials: 200,
            snapshot_times: vec![],
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: String,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: "out".into(),
            formats: vec![OutputFormat::Csv, OutputFormat::Json],
        }
    }
}

fn bad(key: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{key}: {msg}"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Checks every section; messages start with the offending key.
    pub fn validate(&self) -> Result<()> {
        let a = &self.ambiguity;
        if !(a.m >= 0.0) || !a.m.is_finite() {
            return Err(bad("ambiguity.m", format!("must be finite and >= 0, got {}", a.m)));
        }
        if !(a.p > 1.0) || !a.p.is_finite() {
            return Err(bad("ambiguity.p", format!("must lie in (1, inf), got {}", a.p)));
        }
        ReferenceModel::new(self.model.clone()).map_err(|e| bad("model", e))?;
        if self.model.dim != self.grid.dim {
            return Err(bad(
                "grid.dim",
                format!("{} does not match model.dim = {}", self.grid.dim, self.model.dim),
            ));
        }
        let grid = self.build_grid()?;
        self.window().validate(&grid).map_err(|e| bad("grid.window", e))?;
        let n = &self.numerics;
        if !(4..=64).contains(&n.quad_order) {
            return Err(bad("numerics.quad_order", format!("must lie in [4, 64], got {}", n.quad_order)));
        }
        if !(n.dual_tol > 0.0 && n.dual_tol < 1.0) {
            return Err(bad("numerics.dual_tol", format!("must lie in (0, 1), got {}", n.dual_tol)));
        }
        if !(n.reach_factor >= 1.0) || !n.reach_factor.is_finite() {
            return Err(bad("numerics.reach_factor", format!("must be >= 1, got {}", n.reach_factor)));
        }
        if n.candidates_per_side == 0 {
            return Err(bad("numerics.candidates_per_side", "must be positive"));
        }
        if !(n.stop_tol > 0.0) {
            return Err(bad("numerics.stop_tol", format!("must be positive, got {}", n.stop_tol)));
        }
        if n.max_level > operators::MAX_LEVEL {
            return Err(bad(
                "numerics.max_level",
                format!("must be at most {}, got {}", operators::MAX_LEVEL, n.max_level),
            ));
        }
        if !(n.cfl_safety > 0.0 && n.cfl_safety <= 1.0) {
            return Err(bad("numerics.cfl_safety", format!("must lie in (0, 1], got {}", n.cfl_safety)));
        }
        let p = &self.experiment.parameters;
        if !(p.horizon >= 0.0) || !p.horizon.is_finite() {
            return Err(bad("experiment.parameters.horizon", "must be finite and >= 0"));
        }
        if p.t_list.iter().any(|t| !(*t > 0.0)) || p.t_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("experiment.parameters.t_list", "must be positive and strictly decreasing"));
        }
        if p.pairs.iter().any(|(s, t)| !(*s >= 0.0 && *t >= 0.0 && s + t <= 1.0)) {
            return Err(bad("experiment.parameters.pairs", "need s, t >= 0 and s + t <= 1"));
        }
        if p.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= p.horizon)) {
            return Err(bad("experiment.parameters.snapshot_times", "must lie in [0, horizon]"));
        }
        self.thresholds.validate()?;
        Ok(())
    }

    fn build_grid(&self) -> Result<Grid> {
        let g = &self.grid;
        if g.dim == 0 || g.dim > 2 {
            return Err(bad("grid.dim", format!("must be 1 or 2, got {}", g.dim)));
        }
        Grid::new(vec![g.lo; g.dim], vec![g.hi; g.dim], vec![g.n; g.dim]).map_err(|e| bad("grid", e))
    }

    pub fn grid(&self) -> Result<Grid> {
        self.build_grid()
    }

    pub fn window(&self) -> CompactWindow {
        let g = &self.grid;
        g.window.clone().unwrap_or_else(|| {
            let mid = 0.5 * (g.lo + g.hi);
            let q = 0.25 * (g.hi - g.lo);
            CompactWindow::new(vec![mid - q; g.dim], vec![mid + q; g.dim])
        })
    }

    pub fn operator_config(&self) -> Result<OperatorConfig> {
        self.validate()?;
        let cfg = OperatorConfig {
            model: ReferenceModel::new(self.model.clone())?,
            ambiguity: self.ambiguity,
            grid: self.build_grid()?,
            quad_order: self.numerics.quad_order,
            dual_tol: self.numerics.dual_tol,
            reach_factor: self.numerics.reach_factor,
            candidates_per_side: self.numerics.candidates_per_side,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn limit_settings(&self) -> LimitSettings {
        LimitSettings {
            window: self.window(),
            stop_tol: self.numerics.stop_tol,
            max_level: self.numerics.max_level,
            cfl_safety: self.numerics.cfl_safety,
        }
    }
}
