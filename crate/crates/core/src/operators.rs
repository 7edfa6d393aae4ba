//! One-step operators on grid fields and their compositions over partitions.
//!
//! * `reference_step`: `T^a(t) f(x) = Σ_i w_i f(ψ_t^a(x) + y_i)`.
//! * `dro_step_single_action`: worst case over the Wasserstein ball of
//!   radius `t m` around the quadrature law, solved node-wise in the dual.
//! * `dro_step` / `best_case_step`: min / max over actions.
//! * `compose`: right-to-left composition over the gaps of a partition.
//! * `scaling_limit`: compositions over dyadic partitions of increasing
//!   level, which decrease pointwise towards the limit semigroup.
//!
//! Every one-step application is a parallel map over grid nodes; the worker
//! closures share only immutable data.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dual::{offset_lattice, AmbiguitySpec, DualTable};
use crate::error::{input, Result};
use crate::field::ScalarField;
use crate::grid::{CompactWindow, Grid, MAX_DIM};
use crate::models::{Point, ReferenceModel};

pub const DEFAULT_QUAD_ORDER: usize = 16;
pub const DEFAULT_DUAL_TOL: f64 = 1e-10;
pub const DEFAULT_REACH_FACTOR: f64 = 4.0;
pub const DEFAULT_CANDIDATES_PER_SIDE: usize = 8;
/// Largest dyadic level accepted by [`scaling_limit`].
pub const MAX_LEVEL: usize = 10;

/// Everything a one-step operator needs.
#[derive(Clone, Debug)]
pub struct OperatorConfig {
    pub model: ReferenceModel,
    pub ambiguity: AmbiguitySpec,
    pub grid: Grid,
    pub quad_order: usize,
    pub dual_tol: f64,
    /// Candidate destinations fill the ball of radius `reach_factor · t m`.
    pub reach_factor: f64,
    /// Lattice points per half-axis in that ball.
    pub candidates_per_side: usize,
}

impl OperatorConfig {
    /// Config with default numerics.
    pub fn new(model: ReferenceModel, ambiguity: AmbiguitySpec, grid: Grid) -> Result<Self> {
        let cfg = OperatorConfig {
            model,
            ambiguity,
            grid,
            quad_order: DEFAULT_QUAD_ORDER,
            dual_tol: DEFAULT_DUAL_TOL,
            reach_factor: DEFAULT_REACH_FACTOR,
            candidates_per_side: DEFAULT_CANDIDATES_PER_SIDE,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.ambiguity.validate()?;
        if self.model.dim() != self.grid.dim() {
            return input(format!(
                "model dimension {} does not match grid dimension {}",
                self.model.dim(),
                self.grid.dim()
            ));
        }
        if !(4..=64).contains(&self.quad_order) {
            return input(format!("quad_order must lie in [4, 64], got {}", self.quad_order));
        }
        if !(self.dual_tol > 0.0 && self.dual_tol < 1.0) {
            return input(format!("dual_tol must lie in (0, 1), got {}", self.dual_tol));
        }
        if !(self.reach_factor >= 1.0) || !self.reach_factor.is_finite() {
            return input(format!("reach_factor must be finite and >= 1, got {}", self.reach_factor));
        }
        if self.candidates_per_side == 0 {
            return input("candidates_per_side must be positive");
        }
        Ok(())
    }

    /// Same numerics with a different model (e.g. a single action).
    pub fn with_model(&self, model: ReferenceModel) -> Result<Self> {
        let cfg = OperatorConfig { model, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_m(&self, m: f64) -> Result<Self> {
        let cfg = OperatorConfig {
            ambiguity: AmbiguitySpec::new(m, self.ambiguity.p)?,
            ..self.clone()
        };
        Ok(cfg)
    }

    /// Doubled grid resolution, quadrature order and candidate density,
    /// halved dual tolerance.
    pub fn refined(&self) -> Result<Self> {
        let cfg = OperatorConfig {
            grid: self.grid.refined(),
            quad_order: (2 * self.quad_order).min(64),
            dual_tol: 0.5 * self.dual_tol,
            candidates_per_side: 2 * self.candidates_per_side,
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// A finite partition `0 = t_0 < t_1 < … < t_k` of `[0, t_k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    times: Vec<f64>,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return input("partition must start at 0");
        }
        if times.iter().any(|t| !t.is_finite()) {
            return input("partition times must be finite");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return input("partition times must be strictly increasing");
        }
        Ok(Partition { times })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Largest gap; zero for `{0}`.
    pub fn mesh(&self) -> f64 {
        self.gaps().fold(0.0, f64::max)
    }

    pub fn gaps(&self) -> impl DoubleEndedIterator<Item = f64> + '_ {
        self.times.windows(2).map(|w| w[1] - w[0])
    }

    /// Whether every time of `coarser` also appears in `self`.
    pub fn refines(&self, coarser: &Partition) -> bool {
        coarser.times.iter().all(|t| self.times.contains(t))
    }
}

/// The dyadic partition `π_t^n = {0, 2^-n, …, k 2^-n, t}` with
/// `k = max{k : k 2^-n < t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DyadicSchedule {
    pub horizon: f64,
    pub level: usize,
}

impl DyadicSchedule {
    pub fn new(horizon: f64, level: usize) -> Result<Self> {
        if !(horizon >= 0.0) || !horizon.is_finite() {
            return input(format!("horizon must be finite and >= 0, got {horizon}"));
        }
        if level > 60 {
            return input("dyadic level too large");
        }
        Ok(DyadicSchedule { horizon, level })
    }

    pub fn partition(&self) -> Partition {
        let t = self.horizon;
        if t == 0.0 {
            return Partition { times: vec![0.0] };
        }
        let h = (-(self.level as f64)).exp2();
        let mut times = vec![0.0];
        let mut k = 1u64;
        while (k as f64) * h < t {
            times.push(k as f64 * h);
            k += 1;
        }
        times.push(t);
        Partition { times }
    }
}

/// Sup over actions (`BestCase`) or inf over actions (`Dro`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dro,
    BestCase,
}

/// Precomputed data of one step of length `t` for one action.
struct StepPlan {
    atoms: Vec<Point>,
    weights: Vec<f64>,
    offsets: Vec<Point>,
    template: DualTable,
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return input(format!("time must be finite and nonnegative, got {t}"));
    }
    Ok(())
}

fn check_field(cfg: &OperatorConfig, f: &ScalarField) -> Result<()> {
    if f.grid() != &cfg.grid {
        return input("field grid does not match the operator grid");
    }
    Ok(())
}

fn step_plan(cfg: &OperatorConfig, a: usize, t: f64) -> Result<StepPlan> {
    let law = cfg.model.law(a, t, cfg.quad_order)?;
    let radius = cfg.ambiguity.radius(t);
    let lattice = if radius > 0.0 {
        offset_lattice(cfg.grid.dim(), cfg.reach_factor * radius, cfg.candidates_per_side)
    } else {
        vec![([0.0; MAX_DIM], 0.0)]
    };
    let p = cfg.ambiguity.p;
    let c = lattice.len();
    let mut template = DualTable {
        weights: law.weights().to_vec(),
        budget: radius.powf(p),
        ..DualTable::default()
    };
    for i in 0..law.len() {
        template.starts.push(i * c);
        for (_, d) in &lattice {
            template.costs.push(d.powf(p));
            template.dists.push(*d);
        }
    }
    template.starts.push(law.len() * c);
    template.values = vec![0.0; law.len() * c];
    Ok(StepPlan {
        atoms: law.atoms().to_vec(),
        weights: law.weights().to_vec(),
        offsets: lattice.into_iter().map(|(o, _)| o).collect(),
        template,
    })
}

#[inline]
fn expectation(f: &ScalarField, base: &Point, plan: &StepPlan) -> f64 {
    let dim = f.grid().dim();
    plan.atoms
        .iter()
        .zip(&plan.weights)
        .map(|(y, w)| {
            let v = if dim == 1 {
                f.interp1(base[0] + y[0])
            } else {
                f.interp(&[base[0] + y[0], base[1] + y[1]])
            };
            w * v
        })
        .sum()
}

/// `T^a(t) f` at every node.
pub fn reference_step(cfg: &OperatorConfig, a: usize, t: f64, f: &ScalarField) -> Result<ScalarField> {
    check_time(t)?;
    check_field(cfg, f)?;
    if a >= cfg.model.num_actions() {
        return input(format!("action index {a} out of range"));
    }
    if t == 0.0 {
        return Ok(f.clone());
    }
    let plan = step_plan(cfg, a, t)?;
    let grid = &cfg.grid;
    let dim = grid.dim();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let x = grid.node(k);
            let base = cfg.model.psi_unchecked(a, t, &x[..dim]);
            expectation(f, &base, &plan)
        })
        .collect();
    ScalarField::new(grid.clone(), values)
}

/// `min_a T^a(t) f`, the reference (non-robust) one-step value.
pub fn reference_inf_step(cfg: &OperatorConfig, t: f64, f: &ScalarField) -> Result<ScalarField> {
    let mut out = reference_step(cfg, 0, t, f)?;
    for a in 1..cfg.model.num_actions() {
        let next = reference_step(cfg, a, t, f)?;
        out = out.zip_with(&next, f64::min)?;
    }
    Ok(out)
}

/// `I^a(t) f`: node-wise worst-case expectation over the ball of radius
/// `t m` around the law of action `a`.
pub fn dro_step_single_action(
    cfg: &OperatorConfig,
    a: usize,
    t: f64,
    f: &ScalarField,
) -> Result<ScalarField> {
    check_time(t)?;
    check_field(cfg, f)?;
    if cfg.ambiguity.radius(t) == 0.0 {
        return reference_step(cfg, a, t, f);
    }
    if a >= cfg.model.num_actions() {
        return input(format!("action index {a} out of range"));
    }
    let plan = step_plan(cfg, a, t)?;
    let grid = &cfg.grid;
    let dim = grid.dim();
    let radius = cfg.ambiguity.radius(t);
    // Axis-wise slopes bound the Euclidean one up to √dim.
    let lip = f.lipschitz_estimate() * (dim as f64).sqrt();
    let lambda0 = DualTable::lambda_start(lip, radius, cfg.ambiguity.p);
    let n_off = plan.offsets.len();
    let values: Vec<f64> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || plan.template.clone(),
            |table, k| {
                let x = grid.node(k);
                let base = cfg.model.psi_unchecked(a, t, &x[..dim]);
                for (i, y) in plan.atoms.iter().enumerate() {
                    let row = &mut table.values[i * n_off..(i + 1) * n_off];
                    if dim == 1 {
                        let c = base[0] + y[0];
                        for (slot, o) in row.iter_mut().zip(&plan.offsets) {
                            *slot = f.interp1(c + o[0]);
                        }
                    } else {
                        let c = [base[0] + y[0], base[1] + y[1]];
                        for (slot, o) in row.iter_mut().zip(&plan.offsets) {
                            *slot = f.interp(&[c[0] + o[0], c[1] + o[1]]);
                        }
                    }
                }
                table.solve(cfg.dual_tol, lambda0).map(|s| s.value)
            },
        )
        .collect::<Result<_>>()?;
    ScalarField::new(grid.clone(), values)
}

fn over_actions(cfg: &OperatorConfig, t: f64, f: &ScalarField, pick: fn(f64, f64) -> f64) -> Result<ScalarField> {
    let mut out = dro_step_single_action(cfg, 0, t, f)?;
    for a in 1..cfg.model.num_actions() {
        let next = dro_step_single_action(cfg, a, t, f)?;
        out = out.zip_with(&next, pick)?;
    }
    Ok(out)
}

/// `I(t) f = min_a I^a(t) f`.
pub fn dro_step(cfg: &OperatorConfig, t: f64, f: &ScalarField) -> Result<ScalarField> {
    over_actions(cfg, t, f, f64::min)
}

/// `J(t) f = max_a I^a(t) f`.
pub fn best_case_step(cfg: &OperatorConfig, t: f64, f: &ScalarField) -> Result<ScalarField> {
    over_actions(cfg, t, f, f64::max)
}

/// `I(t_1 − t_0) ⋯ I(t_k − t_{k−1}) f` (or the same with `J`).
pub fn compose(cfg: &OperatorConfig, pi: &Partition, f: &ScalarField, mode: Mode) -> Result<ScalarField> {
    check_field(cfg, f)?;
    let mut v = f.clone();
    for gap in pi.gaps().rev() {
        v = match mode {
            Mode::Dro => dro_step(cfg, gap, &v)?,
            Mode::BestCase => best_case_step(cfg, gap, &v)?,
        };
    }
    Ok(v)
}

/// Output of [`scaling_limit`].
#[derive(Clone, Debug)]
pub struct ScalingLimit {
    pub field: ScalarField,
    /// Dyadic levels actually computed; levels whose partition coincides
    /// with the previous one are skipped.
    pub levels_used: Vec<usize>,
    /// Window sup-distance between consecutive computed levels.
    pub level_gaps: Vec<f64>,
    pub converged: bool,
}

impl ScalingLimit {
    /// Final dyadic level.
    pub fn level(&self) -> usize {
        self.levels_used.last().copied().unwrap_or(0)
    }

    /// `level,gap` CSV; the gap of row `n` compares level `n` to the
    /// previously computed one.
    pub fn gaps_csv(&self) -> String {
        let mut out = String::from("level,gap\n");
        for (lvl, gap) in self.levels_used.iter().skip(1).zip(&self.level_gaps) {
            out.push_str(&format!("{lvl},{gap}\n"));
        }
        out
    }
}

fn check_limit_args(t: f64, max_level: usize) -> Result<()> {
    check_time(t)?;
    if max_level > MAX_LEVEL {
        return input(format!("max_level must be at most {MAX_LEVEL}, got {max_level}"));
    }
    Ok(())
}

/// Approximates `S(t) f` by `𝓘(π_t^n) f` for `n = 0, 1, …`, stopping once
/// the window gap between consecutive distinct levels is at most
/// `stop_tol` or `max_level` is reached.
pub fn scaling_limit(
    cfg: &OperatorConfig,
    t: f64,
    f: &ScalarField,
    max_level: usize,
    stop_tol: f64,
    window: &CompactWindow,
) -> Result<ScalingLimit> {
    check_limit_args(t, max_level)?;
    if !(stop_tol > 0.0) {
        return input(format!("stop_tol must be positive, got {stop_tol}"));
    }
    check_field(cfg, f)?;
    window.validate(&cfg.grid)?;
    if t == 0.0 {
        return Ok(ScalingLimit {
            field: f.clone(),
            levels_used: vec![],
            level_gaps: vec![],
            converged: true,
        });
    }
    let mut prev_pi = DyadicSchedule::new(t, 0)?.partition();
    let mut field = compose(cfg, &prev_pi, f, Mode::Dro)?;
    let mut out = ScalingLimit {
        field: field.clone(),
        levels_used: vec![0],
        level_gaps: vec![],
        converged: false,
    };
    for n in 1..=max_level {
        let pi = DyadicSchedule::new(t, n)?.partition();
        if pi == prev_pi {
            continue;
        }
        let next = compose(cfg, &pi, f, Mode::Dro)?;
        let gap = next.sup_distance(&field, Some(window))?;
        field = next;
        prev_pi = pi;
        out.levels_used.push(n);
        out.level_gaps.push(gap);
        if gap <= stop_tol {
            out.converged = true;
            break;
        }
    }
    out.field = field;
    Ok(out)
}

/// `𝓘(π_t^n) f` at one fixed dyadic level.
pub fn dyadic_value(cfg: &OperatorConfig, t: f64, f: &ScalarField, level: usize, mode: Mode) -> Result<ScalarField> {
    check_limit_args(t, level)?;
    compose(cfg, &DyadicSchedule::new(t, level)?.partition(), f, mode)
}

/// `𝓙(π_t^n) f` for `n = 0..=max_level`: a lower-bound diagnostic for the
/// best-case limit, with no convergence claim.
pub fn best_case_diagnostic(
    cfg: &OperatorConfig,
    t: f64,
    f: &ScalarField,
    max_level: usize,
) -> Result<Vec<ScalarField>> {
    check_limit_args(t, max_level)?;
    check_field(cfg, f)?;
    if t == 0.0 {
        return Ok(vec![f.clone()]);
    }
    (0..=max_level)
        .map(|n| dyadic_value(cfg, t, f, n, Mode::BestCase))
        .collect()
}
