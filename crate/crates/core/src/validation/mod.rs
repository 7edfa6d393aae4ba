//! Executable checks of the quantitative claims, each producing a
//! [`CheckReport`] with measured errors and the thresholds they must meet.
//!
//! Reports are deterministic given their inputs and seed: node maps keep
//! their order and random data come from a seeded ChaCha stream.

pub mod acceptance;
pub mod functions;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dual::{brute_force_sup, wasserstein_sup, DualInstance};
use crate::error::{input, Error, Result};
use crate::field::ScalarField;
use crate::grid::{CompactWindow, Grid};
use crate::models::{DiscreteMeasure, Point};
use crate::operators::{
    best_case_step, dro_step, dyadic_value, reference_inf_step, scaling_limit, Mode, OperatorConfig,
    ScalingLimit,
};
use crate::pde::{generator_apply, solve, PdeScheme, SolveSummary};

use functions::{FourierField, TestFunction};

/// Acceptance thresholds. Defaults are the shipped acceptance values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub dual_oracle: f64,
    pub contraction: f64,
    pub monotonicity: f64,
    pub translation: f64,
    pub subadditivity: f64,
    /// Relative.
    pub homogeneity: f64,
    /// Multiplies `spacing · Lip(f)`.
    pub lipschitz_grid_factor: f64,
    pub refinement_monotonicity: f64,
    /// Allowed relative increase between consecutive errors of a
    /// convergence table.
    pub nonincrease_slack: f64,
    /// Final sensitivity error, in units of `m · sup ‖∇f‖`.
    pub sensitivity_factor: f64,
    /// Final generator error, in units of `sup |min_a 𝓛^a f| + m sup ‖∇f‖`.
    pub generator_factor: f64,
    /// Semigroup gap, in units of `stop_tol`.
    pub semigroup_factor: f64,
    pub heat: f64,
    pub monotone_data: f64,
    pub game: f64,
    pub game_dominance: f64,
    /// Certificates pass if the change is at most this fraction of the
    /// experiment's tolerance.
    pub certificate_fraction: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            dual_oracle: 1e-6,
            contraction: 1e-9,
            monotonicity: 1e-9,
            translation: 1e-12,
            subadditivity: 1e-9,
            homogeneity: 1e-12,
            lipschitz_grid_factor: 10.0,
            refinement_monotonicity: 1e-8,
            nonincrease_slack: 0.0,
            sensitivity_factor: 0.05,
            generator_factor: 0.1,
            semigroup_factor: 5.0,
            heat: 5e-3,
            monotone_data: 1e-2,
            game: 2e-2,
            game_dominance: 1e-8,
            certificate_fraction: 0.5,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let v = serde_json::to_value(self).expect("thresholds serialize");
        for (k, x) in v.as_object().expect("object") {
            let x = x.as_f64().unwrap_or(f64::NAN);
            if !(x >= 0.0) || !x.is_finite() {
                return Err(Error::Config(format!("thresholds.{k}: must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Controls of the dyadic limit and the PDE step.
#[derive(Clone, Debug, PartialEq)]
pub struct LimitSettings {
    pub window: CompactWindow,
    pub stop_tol: f64,
    pub max_level: usize,
    pub cfl_safety: f64,
}

/// A file produced alongside a report (CSV tables, fields).
#[derive(Clone, Debug, PartialEq)]
pub struct Artifact {
    pub file: String,
    pub contents: String,
}

/// Outcome of one check.
///
/// `runtime_seconds` and `artifacts` are not serialized, so the JSON form
/// is reproducible bit-for-bit.
#[derive(Clone, Debug, Serialize)]
pub struct CheckReport {
    pub name: String,
    pub parameters: Value,
    pub measured_errors: Vec<(String, f64)>,
    pub thresholds: Vec<(String, f64)>,
    /// Supporting numbers without a threshold (per-level errors, ...).
    pub diagnostics: Vec<(String, f64)>,
    pub passed: bool,
    #[serde(skip)]
    pub runtime_seconds: f64,
    #[serde(skip)]
    pub artifacts: Vec<Artifact>,
}

impl CheckReport {
    pub fn start(name: &str, parameters: Value) -> (Self, Instant) {
        (
            CheckReport {
                name: name.into(),
                parameters,
                measured_errors: vec![],
                thresholds: vec![],
                diagnostics: vec![],
                passed: false,
                runtime_seconds: 0.0,
                artifacts: vec![],
            },
            Instant::now(),
        )
    }

    pub fn measure(&mut self, label: impl Into<String>, value: f64, threshold: f64) {
        let label = label.into();
        self.measured_errors.push((label.clone(), value));
        self.thresholds.push((label, threshold));
    }

    pub fn note(&mut self, label: impl Into<String>, value: f64) {
        self.diagnostics.push((label.into(), value));
    }

    pub fn artifact(&mut self, file: impl Into<String>, contents: String) {
        self.artifacts.push(Artifact {
            file: file.into(),
            contents,
        });
    }

    pub fn finish(mut self, started: Instant) -> Self {
        // NaN compares false, so it fails.
        self.passed = self
            .measured_errors
            .iter()
            .zip(&self.thresholds)
            .all(|((_, v), (_, t))| *v <= *t);
        self.runtime_seconds = started.elapsed().as_secs_f64();
        self
    }

    /// Worst `measured / threshold` ratio label, for summaries.
    pub fn worst(&self) -> Option<(&str, f64, f64)> {
        self.measured_errors
            .iter()
            .zip(&self.thresholds)
            .max_by(|a, b| {
                let ra = ratio(a.0 .1, a.1 .1);
                let rb = ratio(b.0 .1, b.1 .1);
                ra.partial_cmp(&rb).unwrap_or(std::cmp::Ordering::Equal)
            })
            .map(|((l, v), (_, t))| (l.as_str(), *v, *t))
    }
}

fn ratio(v: f64, t: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else if t > 0.0 {
        v / t
    } else if v > t {
        f64::INFINITY
    } else {
        v - t
    }
}

/// Largest `E_{k+1} − (1 + slack) E_k` along a table; `≤ 0` means
/// nonincreasing.
fn nonincrease_excess(errors: &[f64], slack: f64) -> f64 {
    errors
        .windows(2)
        .map(|w| w[1] - (1.0 + slack) * w[0])
        .fold(f64::NEG_INFINITY, f64::max)
        .max(0.0)
}

fn t_error_csv(ts: &[f64], errors: &[f64]) -> String {
    let mut out = String::from("t,error\n");
    for (t, e) in ts.iter().zip(errors) {
        out.push_str(&format!("{t},{e}\n"));
    }
    out
}

fn window_sup(f: &ScalarField, window: &CompactWindow) -> Result<f64> {
    f.sup_norm(Some(window))
}

fn check_times(t_list: &[f64]) -> Result<()> {
    if t_list.is_empty() {
        return input("t_list must not be empty");
    }
    if t_list.iter().any(|t| !(*t > 0.0) || !t.is_finite()) || t_list.windows(2).any(|w| w[1] >= w[0]) {
        return input("t_list must be positive and strictly decreasing");
    }
    Ok(())
}

/// Sensitivity of the one-step operator to uncertainty:
/// `E(t) = sup_window |(I(t)f − T(t)f)/t − m‖∇f‖|`, with
/// `T(t) = min_a T^a(t)` and the analytic gradient of `f`.
pub fn check_sensitivity(
    cfg: &OperatorConfig,
    f: TestFunction,
    t_list: &[f64],
    window: &CompactWindow,
    th: &Thresholds,
) -> Result<CheckReport> {
    check_times(t_list)?;
    window.validate(&cfg.grid)?;
    let (mut rep, started) = CheckReport::start(
        "sensitivity",
        json!({ "function": f, "t_list": t_list, "m": cfg.ambiguity.m }),
    );
    let field = f.sample(&cfg.grid)?;
    let m = cfg.ambiguity.m;
    let target = f.sample_gradient_norm(&cfg.grid)?.map(|g| m * g)?;
    let mut errors = Vec::new();
    for &t in t_list {
        let i = dro_step(cfg, t, &field)?;
        let tt = reference_inf_step(cfg, t, &field)?;
        let q = i.zip_with(&tt, |a, b| (a - b) / t)?;
        let e = q.sup_distance(&target, Some(window))?;
        rep.note(format!("E(t={t})"), e);
        errors.push(e);
    }
    let scale = window_sup(&target, window)?;
    rep.measure(
        "nonincrease_excess",
        nonincrease_excess(&errors, th.nonincrease_slack),
        0.0,
    );
    rep.measure("final_error", *errors.last().unwrap(), th.sensitivity_factor * scale);
    rep.artifact("sensitivity.csv", t_error_csv(t_list, &errors));
    Ok(rep.finish(started))
}

/// Generator identity: `E(t) = sup_window |(S(t)f − f)/t − 𝓛f|` with the
/// central-difference generator. The dyadic limit for horizon `t` stops at
/// `stop_tol · t`, i.e. at a fixed tolerance on the difference quotient.
pub fn check_generator(
    cfg: &OperatorConfig,
    f: TestFunction,
    t_list: &[f64],
    settings: &LimitSettings,
    th: &Thresholds,
) -> Result<CheckReport> {
    check_times(t_list)?;
    let window = &settings.window;
    window.validate(&cfg.grid)?;
    let (mut rep, started) = CheckReport::start(
        "generator",
        json!({
            "function": f, "t_list": t_list, "m": cfg.ambiguity.m,
            "stop_tol": settings.stop_tol, "max_level": settings.max_level,
        }),
    );
    let field = f.sample(&cfg.grid)?;
    let gen = generator_apply(cfg, &field)?;
    let linear = generator_apply(&cfg.with_m(0.0)?, &field)?;
    let grad = f.sample_gradient_norm(&cfg.grid)?;
    let mut errors = Vec::new();
    for &t in t_list {
        let lim = scaling_limit(cfg, t, &field, settings.max_level, settings.stop_tol * t, window)?;
        let q = lim.field.zip_with(&field, |a, b| (a - b) / t)?;
        let e = q.sup_distance(&gen, Some(window))?;
        rep.note(format!("E(t={t})"), e);
        rep.note(format!("level(t={t})"), lim.level() as f64);
        errors.push(e);
    }
    let scale = window_sup(&linear, window)? + cfg.ambiguity.m * window_sup(&grad, window)?;
    rep.measure(
        "nonincrease_excess",
        nonincrease_excess(&errors, th.nonincrease_slack),
        0.0,
    );
    rep.measure("final_error", *errors.last().unwrap(), th.generator_factor * scale);
    rep.artifact("generator.csv", t_error_csv(t_list, &errors));
    Ok(rep.finish(started))
}

/// Semigroup property of the limit: `S(s+t)f` against `S(t)S(s)f`, within
/// `factor · stop_tol` plus the interpolation slack of the datum.
pub fn check_semigroup(
    cfg: &OperatorConfig,
    f: TestFunction,
    pairs: &[(f64, f64)],
    settings: &LimitSettings,
    th: &Thresholds,
) -> Result<CheckReport> {
    if pairs.iter().any(|(s, t)| !(*s >= 0.0 && *t >= 0.0 && s + t <= 1.0)) {
        return input("semigroup pairs need s, t >= 0 and s + t <= 1");
    }
    let window = &settings.window;
    let (mut rep, started) = CheckReport::start(
        "semigroup",
        json!({
            "function": f, "pairs": pairs, "m": cfg.ambiguity.m,
            "stop_tol": settings.stop_tol, "max_level": settings.max_level,
        }),
    );
    let field = f.sample(&cfg.grid)?;
    // Linear interpolation error of the datum, `h²/8 · sup |f''|`.
    let h = cfg.grid.min_spacing();
    let curvature = (0..cfg.grid.len())
        .map(|i| f.profile(TestFunction::diagonal(&cfg.grid.node(i)[..cfg.grid.dim()])).2.abs())
        .fold(0.0, f64::max);
    let slack = h * h / 8.0 * curvature;
    rep.note("interpolation_slack", slack);
    let lim = |t: f64, g: &ScalarField| scaling_limit(cfg, t, g, settings.max_level, settings.stop_tol, window);
    let mut csv = String::from("s,t,gap\n");
    for &(s, t) in pairs {
        let whole = lim(s + t, &field)?;
        let first = lim(s, &field)?;
        let second = lim(t, &first.field)?;
        let gap = whole.field.sup_distance(&second.field, Some(window))?;
        rep.note(format!("level S({})", s + t), whole.level() as f64);
        rep.note(format!("level S({s})"), first.level() as f64);
        rep.note(format!("level S({t})S({s})"), second.level() as f64);
        rep.measure(
            format!("gap(s={s},t={t})"),
            gap,
            th.semigroup_factor * settings.stop_tol + slack,
        );
        csv.push_str(&format!("{s},{t},{gap}\n"));
    }
    rep.artifact("semigroup.csv", csv);
    Ok(rep.finish(started))
}

/// Property suite of the one-step operators over seeded random Fourier
/// fields: contraction, monotonicity, translation covariance of `I(t)`;
/// the sandwich `min_a T^a ≤ I ≤ J`; subadditivity and positive
/// homogeneity of `J(t)`.
pub fn check_operator_properties(
    cfg: &OperatorConfig,
    trials: usize,
    seed: u64,
    t_list: &[f64],
    th: &Thresholds,
) -> Result<CheckReport> {
    if trials == 0 || t_list.is_empty() {
        return input("need at least one trial and one time");
    }
    let (mut rep, started) = CheckReport::start(
        "operator_properties",
        json!({ "trials": trials, "seed": seed, "t_list": t_list, "m": cfg.ambiguity.m }),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = cfg.grid.dim();
    let (mut contraction, mut monotone, mut translation) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0f64);
    let (mut subadd, mut homog, mut sandwich) = (f64::NEG_INFINITY, 0.0f64, f64::NEG_INFINITY);
    for trial in 0..trials {
        let f = FourierField::random(&mut rng, dim, 4).sample(&cfg.grid)?;
        let g = FourierField::random(&mut rng, dim, 4).sample(&cfg.grid)?;
        // Nonnegative perturbation for the ordered pair.
        let bump = FourierField::random(&mut rng, dim, 3);
        let lift = rng.gen_range(0.0..1.0);
        let h = ScalarField::from_fn(&cfg.grid, |x| {
            let b = bump.value(x) - bump.offset;
            lift * (1.0 + b)
        })?;
        let upper = f.zip_with(&h, |a, b| a + b)?;
        let c: f64 = rng.gen_range(-2.0..2.0);
        let lam: f64 = rng.gen_range(0.0..3.0);
        let t = t_list[trial % t_list.len()];

        let fi = dro_step(cfg, t, &f)?;
        let gi = dro_step(cfg, t, &g)?;
        let ui = dro_step(cfg, t, &upper)?;
        contraction = contraction.max(fi.sup_distance(&gi, None)? - f.sup_distance(&g, None)?);
        monotone = monotone.max(fi.max_excess(&ui, None)?);
        let shifted = dro_step(cfg, t, &f.map(|v| v + c)?)?;
        translation = translation.max(shifted.zip_with(&fi, |a, b| a - b - c)?.sup_norm(None)?);

        // The best-case and sandwich checks run on every fourth trial.
        if trial % 4 == 0 {
            let tinf = reference_inf_step(cfg, t, &f)?;
            let fj = best_case_step(cfg, t, &f)?;
            sandwich = sandwich.max(tinf.max_excess(&fi, None)?).max(fi.max_excess(&fj, None)?);
            let gj = best_case_step(cfg, t, &g)?;
            let sum = best_case_step(cfg, t, &f.zip_with(&g, |a, b| a + b)?)?;
            subadd = subadd.max(sum.max_excess(&fj.zip_with(&gj, |a, b| a + b)?, None)?);
            let scaled = best_case_step(cfg, t, &f.map(|v| lam * v)?)?;
            for (s, v) in scaled.values().iter().zip(fj.values()) {
                homog = homog.max((s - lam * v).abs() / (1.0 + (lam * v).abs()));
            }
        }
    }
    rep.measure("contraction_excess", contraction.max(0.0), th.contraction);
    rep.measure("monotonicity_excess", monotone.max(0.0), th.monotonicity);
    rep.measure("translation_error", translation, th.translation);
    rep.measure("sandwich_excess", sandwich.max(0.0), th.monotonicity);
    rep.measure("subadditivity_excess", subadd.max(0.0), th.subadditivity);
    rep.measure("homogeneity_rel_error", homog, th.homogeneity);
    Ok(rep.finish(started))
}

/// Lipschitz propagation for seeded random Fourier fields:
/// `est(I(t)f) ≤ est(f) + factor · spacing · Lip(f)`, where `est` is the
/// grid estimate and `Lip(f)` the analytic bound of the field.
pub fn check_lipschitz(
    cfg: &OperatorConfig,
    trials: usize,
    seed: u64,
    t_list: &[f64],
    th: &Thresholds,
) -> Result<CheckReport> {
    if trials == 0 || t_list.is_empty() {
        return input("need at least one trial and one time");
    }
    let (mut rep, started) = CheckReport::start(
        "lipschitz",
        json!({ "trials": trials, "seed": seed, "t_list": t_list, "m": cfg.ambiguity.m }),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = cfg.grid.min_spacing();
    let mut worst = f64::NEG_INFINITY;
    for trial in 0..trials {
        let ff = FourierField::random(&mut rng, cfg.grid.dim(), 4);
        let f = ff.sample(&cfg.grid)?;
        let t = t_list[trial % t_list.len()];
        let out = dro_step(cfg, t, &f)?.lipschitz_estimate();
        worst = worst.max(out - f.lipschitz_estimate() - th.lipschitz_grid_factor * h * ff.lipschitz_bound());
    }
    rep.measure("lipschitz_excess", worst.max(0.0), 0.0);
    Ok(rep.finish(started))
}

/// Dyadic values `𝓘(π_t^n)f` must decrease in `n` on the window.
pub fn check_refinement_monotonicity(
    cfg: &OperatorConfig,
    f: TestFunction,
    t: f64,
    max_level: usize,
    window: &CompactWindow,
    th: &Thresholds,
) -> Result<CheckReport> {
    window.validate(&cfg.grid)?;
    let (mut rep, started) = CheckReport::start(
        "refinement_monotonicity",
        json!({ "function": f, "t": t, "levels": max_level, "m": cfg.ambiguity.m }),
    );
    let field = f.sample(&cfg.grid)?;
    let mut prev = dyadic_value(cfg, t, &field, 0, Mode::Dro)?;
    let mut worst = f64::NEG_INFINITY;
    let mut csv = String::from("level,excess\n");
    for n in 1..=max_level {
        let next = dyadic_value(cfg, t, &field, n, Mode::Dro)?;
        let excess = next.max_excess(&prev, Some(window))?;
        rep.note(format!("excess({}->{n})", n - 1), excess);
        csv.push_str(&format!("{n},{excess}\n"));
        worst = worst.max(excess);
        prev = next;
    }
    rep.measure("max_excess", worst.max(0.0), th.refinement_monotonicity);
    rep.artifact("refinement_monotonicity.csv", csv);
    Ok(rep.finish(started))
}

fn random_dual_instance(rng: &mut ChaCha8Rng, radius: f64) -> Result<DualInstance<impl Fn(&[f64]) -> f64>> {
    let n_atoms = rng.gen_range(1..=5);
    let atoms: Vec<f64> = (0..n_atoms).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let raw: Vec<f64> = (0..n_atoms).map(|_| rng.gen_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let source = DiscreteMeasure::from_1d(&atoms, &weights)?;
    let candidates = atoms
        .iter()
        .map(|&y| {
            let k = rng.gen_range(2..=9);
            let mut c: Vec<Point> = vec![[y, 0.0]];
            while c.len() < k {
                c.push([y + rng.gen_range(-2.0..2.0), 0.0]);
            }
            c
        })
        .collect();
    let (a, w, p, s, z0) = (
        rng.gen_range(-1.0..1.0),
        rng.gen_range(0.5..4.0),
        rng.gen_range(0.0..6.3),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let integrand = move |z: &[f64]| a * (w * z[0] + p).sin() + s * (z[0] - z0).abs();
    DualInstance::new(source, candidates, integrand, radius, 2.0)
}

/// Dual solver against the vertex-enumeration oracle on random small
/// instances (at most 5 atoms, at most 9 candidates each) plus fixed cases.
pub fn check_dual_oracle(trials: usize, seed: u64, dual_tol: f64, th: &Thresholds) -> Result<CheckReport> {
    let (mut rep, started) = CheckReport::start(
        "dual_oracle",
        json!({ "trials": trials, "seed": seed, "radii": [0.0, 0.1, 0.5, 2.0], "dual_tol": dual_tol }),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let radii = [0.0, 0.1, 0.5, 2.0];
    let (mut worst, mut worst_zero, mut below) = (0.0f64, 0.0f64, 0.0f64);
    for trial in 0..trials {
        let r = radii[trial % radii.len()];
        let inst = random_dual_instance(&mut rng, r)?;
        let oracle = brute_force_sup(&inst)?;
        let dual = wasserstein_sup(&inst, dual_tol)?.value;
        let err = (dual - oracle).abs();
        if r == 0.0 {
            worst_zero = worst_zero.max(err);
        }
        worst = worst.max(err);
        // Weak duality: the dual value never undercuts the primal.
        below = below.max(oracle - dual);
    }

    // Symmetric two-atom instance with a concave peak.
    let src = DiscreteMeasure::from_1d(&[-1.0, 1.0], &[0.5, 0.5])?;
    let cands: Vec<Point> = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5].iter().map(|&x| [x, 0.0]).collect();
    let inst = DualInstance::new(src.clone(), vec![cands.clone(), cands.clone()], |z: &[f64]| -z[0].abs(), 0.5, 2.0)?;
    let fixed = (wasserstein_sup(&inst, dual_tol)?.value - brute_force_sup(&inst)?).abs();

    // Radius beyond the instance diameter: the budget is inactive.
    let big = DualInstance::new(src, vec![cands.clone(), cands.clone()], |z: &[f64]| (2.0 * z[0]).sin(), 10.0, 2.0)?;
    let per_atom: f64 = 0.5
        * 2.0
        * cands
            .iter()
            .map(|z| (2.0 * z[0]).sin())
            .fold(f64::NEG_INFINITY, f64::max);
    let inactive = (wasserstein_sup(&big, dual_tol)?.value - per_atom)
        .abs()
        .max((brute_force_sup(&big)? - per_atom).abs());

    rep.measure("max_abs_error", worst, th.dual_oracle);
    rep.measure("max_abs_error_r0", worst_zero, 1e-12);
    rep.measure("weak_duality_violation", below.max(0.0), 1e-12);
    rep.measure("two_atom_instance_error", fixed, th.dual_oracle);
    rep.measure("inactive_budget_error", inactive, th.dual_oracle);
    rep.note("oracle_resolution", 0.0);
    Ok(rep.finish(started))
}

/// Operator limit and PDE solution for one initial datum.
pub struct CrossFields {
    pub limit: ScalingLimit,
    pub pde: ScalarField,
    pub summary: SolveSummary,
}

pub fn cross_fields(
    cfg: &OperatorConfig,
    u0: TestFunction,
    horizon: f64,
    settings: &LimitSettings,
) -> Result<CrossFields> {
    let field = u0.sample(&cfg.grid)?;
    let limit = scaling_limit(cfg, horizon, &field, settings.max_level, settings.stop_tol, &settings.window)?;
    let scheme = PdeScheme::from_cfl(cfg, settings.cfl_safety)?;
    let (sol, summary) = solve(cfg, &scheme, &field, horizon, &[horizon])?;
    let pde = sol.snapshots.into_iter().next().expect("one snapshot");
    Ok(CrossFields { limit, pde, summary })
}

/// Reference solution for a cross-check.
pub type Oracle<'a> = &'a (dyn Fn(&[f64]) -> f64 + Sync);

/// Dyadic operator limit against the PDE solution at `horizon`.
///
/// With an oracle, both are compared against it at `tolerance` and their
/// mutual gap is only recorded; without one the gap is the measurement. With
/// more than one action, the min–max value must not exceed any
/// single-action robust value computed at the same dyadic level.
#[allow(clippy::too_many_arguments)]
pub fn cross_check_pde(
    name: &str,
    cfg: &OperatorConfig,
    u0: TestFunction,
    horizon: f64,
    settings: &LimitSettings,
    tolerance: f64,
    oracle: Option<Oracle>,
    th: &Thresholds,
) -> Result<CheckReport> {
    if !(0.0..=1.0).contains(&horizon) {
        return input(format!("cross-check horizon must lie in [0, 1], got {horizon}"));
    }
    let window = &settings.window;
    window.validate(&cfg.grid)?;
    let (mut rep, started) = CheckReport::start(
        name,
        json!({
            "function": u0, "horizon": horizon, "m": cfg.ambiguity.m,
            "actions": cfg.model.num_actions(), "stop_tol": settings.stop_tol,
            "max_level": settings.max_level, "cfl_safety": settings.cfl_safety,
        }),
    );
    let cf = cross_fields(cfg, u0, horizon, settings)?;
    let gap = cf.limit.field.sup_distance(&cf.pde, Some(window))?;
    if oracle.is_none() {
        rep.measure("operator_vs_pde", gap, tolerance);
    } else {
        rep.note("operator_vs_pde", gap);
    }
    if let Some(o) = oracle {
        let exact = ScalarField::from_fn(&cfg.grid, o)?;
        rep.measure("operator_vs_oracle", cf.limit.field.sup_distance(&exact, Some(window))?, tolerance);
        rep.measure("pde_vs_oracle", cf.pde.sup_distance(&exact, Some(window))?, tolerance);
    }
    if cfg.model.num_actions() > 1 {
        let field = u0.sample(&cfg.grid)?;
        let level = cf.limit.level();
        let mut worst = f64::NEG_INFINITY;
        for a in 0..cfg.model.num_actions() {
            let single = cfg.with_model(cfg.model.single_action(a))?;
            let v = dyadic_value(&single, horizon, &field, level, Mode::Dro)?;
            worst = worst.max(cf.limit.field.max_excess(&v, None)?);
        }
        rep.measure("min_max_dominance_excess", worst.max(0.0), th.game_dominance);
    }
    rep.note("level", cf.limit.level() as f64);
    rep.note("converged", if cf.limit.converged { 1.0 } else { 0.0 });
    if let Some(g) = cf.limit.level_gaps.last() {
        rep.note("last_level_gap", *g);
    }
    rep.note("pde_dt", cf.summary.dt);
    rep.note("pde_steps", cf.summary.steps as f64);
    rep.note("pde_cfl_margin", cf.summary.cfl_margin);
    rep.artifact(format!("{name}_levels.csv"), cf.limit.gaps_csv());
    rep.artifact(format!("{name}_operator.csv"), cf.limit.field.to_csv());
    rep.artifact(format!("{name}_pde.csv"), cf.pde.to_csv());
    Ok(rep.finish(started))
}

/// Restriction of a field on a refined grid to the nodes of `coarse`.
fn restrict(fine: &ScalarField, coarse: &Grid) -> Result<ScalarField> {
    ScalarField::from_fn(coarse, |x| fine.interp(x))
}

/// Re-runs a cross-check at doubled grid resolution, quadrature order and
/// candidate density and halved dual tolerance, and reports how far the
/// operator and PDE fields move on the window.
pub fn refinement_certificate(
    name: &str,
    cfg: &OperatorConfig,
    u0: TestFunction,
    horizon: f64,
    settings: &LimitSettings,
    tolerance: f64,
    th: &Thresholds,
) -> Result<CheckReport> {
    let window = &settings.window;
    let fine_cfg = cfg.refined()?;
    let (mut rep, started) = CheckReport::start(
        name,
        json!({
            "function": u0, "horizon": horizon, "m": cfg.ambiguity.m,
            "n": cfg.grid.shape(), "n_refined": fine_cfg.grid.shape(),
            "quad_order": [cfg.quad_order, fine_cfg.quad_order],
            "candidates_per_side": [cfg.candidates_per_side, fine_cfg.candidates_per_side],
            "dual_tol": [cfg.dual_tol, fine_cfg.dual_tol],
            "tolerance": tolerance,
        }),
    );
    let base = cross_fields(cfg, u0, horizon, settings)?;
    let fine = cross_fields(&fine_cfg, u0, horizon, settings)?;
    let op = restrict(&fine.limit.field, &cfg.grid)?.sup_distance(&base.limit.field, Some(window))?;
    let pde = restrict(&fine.pde, &cfg.grid)?.sup_distance(&base.pde, Some(window))?;
    rep.measure("operator_change", op, th.certificate_fraction * tolerance);
    rep.measure("pde_change", pde, th.certificate_fraction * tolerance);
    rep.note("level", base.limit.level() as f64);
    rep.note("level_refined", fine.limit.level() as f64);
    Ok(rep.finish(started))
}
