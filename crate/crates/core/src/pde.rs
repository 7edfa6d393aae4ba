//! Explicit monotone finite differences for
//!
//! ```text
//! ∂_t v = min_a [ ½ tr(σσᵀ(a) ∇²v) + ⟨b(a, x), ∇v⟩ ] + m ‖∇v‖
//! ```
//!
//! Diffusion is centered, drift is upwinded by its sign, and the gradient
//! magnitude uses the one-sided selector `max(D⁺v, −D⁻v, 0)` per axis,
//! which is nondecreasing in both neighbours. Under the CFL bound every
//! update is a nondecreasing function of the stencil values. Nodes outside
//! the box are clamped to the boundary value.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{input, Error, Result};
use crate::field::ScalarField;
use crate::grid::{Grid, MAX_DIM};
use crate::operators::OperatorConfig;

pub const DEFAULT_CFL_SAFETY: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Upwind {
    Godunov,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Clamp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeScheme {
    pub dt: f64,
    pub cfl_safety: f64,
    pub upwind: Upwind,
    pub boundary: Boundary,
}

impl PdeScheme {
    /// Largest step allowed by the CFL bound, scaled by `cfl_safety`.
    pub fn from_cfl(cfg: &OperatorConfig, cfl_safety: f64) -> Result<Self> {
        if !(cfl_safety > 0.0 && cfl_safety <= 1.0) {
            return input(format!("cfl_safety must lie in (0, 1], got {cfl_safety}"));
        }
        let rate = Stencil::new(cfg)?.rate;
        let dt = if rate > 0.0 { cfl_safety / rate } else { f64::INFINITY };
        Ok(PdeScheme {
            dt,
            cfl_safety,
            upwind: Upwind::Godunov,
            boundary: Boundary::Clamp,
        })
    }

    /// `dt · rate`, which must not exceed `cfl_safety`.
    pub fn cfl_number(&self, cfg: &OperatorConfig) -> Result<f64> {
        Ok(self.dt * Stencil::new(cfg)?.rate)
    }

    pub fn validate(&self, cfg: &OperatorConfig) -> Result<()> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return input(format!("cfl_safety must lie in (0, 1], got {}", self.cfl_safety));
        }
        if !(self.dt > 0.0) {
            return input(format!("dt must be positive, got {}", self.dt));
        }
        let c = self.cfl_number(cfg)?;
        if c > self.cfl_safety * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "CFL violated: dt·rate = {c} exceeds cfl_safety = {}",
                self.cfl_safety
            )));
        }
        Ok(())
    }
}

/// Per-action coefficients sampled on the grid.
struct Stencil {
    grid: Grid,
    // diag(σσᵀ) per action
    diffusion: Vec<[f64; MAX_DIM]>,
    // drift per action and node
    drift: Vec<Vec<[f64; MAX_DIM]>>,
    m: f64,
    rate: f64,
}

impl Stencil {
    fn new(cfg: &OperatorConfig) -> Result<Self> {
        let grid = cfg.grid.clone();
        let dim = grid.dim();
        let model = &cfg.model;
        let mut diffusion = Vec::new();
        let mut drift = Vec::new();
        for a in 0..model.num_actions() {
            let s = model.diffusion(a);
            if dim == 2 && (s[(0, 1)] != 0.0 || s[(1, 0)] != 0.0) {
                return Err(Error::Config(
                    "the finite-difference solver needs a diagonal σσᵀ in two dimensions".into(),
                ));
            }
            let mut d = [0.0; MAX_DIM];
            for (k, slot) in d.iter_mut().enumerate().take(dim) {
                *slot = s[(k, k)];
            }
            diffusion.push(d);
            drift.push(
                (0..grid.len())
                    .map(|k| model.drift_at(a, &grid.node(k)[..dim]))
                    .collect::<Vec<_>>(),
            );
        }
        let m = cfg.ambiguity.m;
        let mut rate = 0.0;
        for axis in 0..dim {
            let h = grid.spacing(axis);
            let sig = diffusion.iter().map(|d| d[axis]).fold(0.0, f64::max);
            let b = drift
                .iter()
                .flat_map(|v| v.iter().map(move |b| b[axis].abs()))
                .fold(0.0, f64::max);
            rate += sig / (h * h) + (b + m) / h;
        }
        Ok(Stencil {
            grid,
            diffusion,
            drift,
            m,
            rate,
        })
    }

    /// Upwind right-hand side at node `k`.
    #[inline]
    fn rhs(&self, v: &[f64], k: usize) -> f64 {
        let g = &self.grid;
        let dim = g.dim();
        let idx = g.unravel(k);
        let mut dp = [0.0; MAX_DIM];
        let mut dm = [0.0; MAX_DIM];
        let mut d2 = [0.0; MAX_DIM];
        for axis in 0..dim {
            let h = g.spacing(axis);
            let n = g.n(axis);
            let i = idx[axis];
            let mut j = idx;
            j[axis] = (i + 1).min(n - 1);
            let right = v[g.flat(j)];
            j[axis] = i.saturating_sub(1);
            let left = v[g.flat(j)];
            let c = v[k];
            dp[axis] = (right - c) / h;
            dm[axis] = (c - left) / h;
            d2[axis] = (right - 2.0 * c + left) / (h * h);
        }
        let mut best = f64::INFINITY;
        for (a, sig) in self.diffusion.iter().enumerate() {
            let b = &self.drift[a][k];
            let mut l = 0.0;
            for axis in 0..dim {
                let drift = if b[axis] > 0.0 {
                    b[axis] * dp[axis]
                } else {
                    b[axis] * dm[axis]
                };
                l += 0.5 * sig[axis] * d2[axis] + drift;
            }
            best = best.min(l);
        }
        if self.m > 0.0 {
            let mut g2 = 0.0;
            for axis in 0..dim {
                let s = dp[axis].max(-dm[axis]).max(0.0);
                g2 += s * s;
            }
            best += self.m * g2.sqrt();
        }
        best
    }

    fn step(&self, v: &[f64], dt: f64) -> Vec<f64> {
        (0..v.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|k| v[k] + dt * self.rhs(v, k))
            .collect()
    }
}

fn check_field(cfg: &OperatorConfig, f: &ScalarField) -> Result<()> {
    if f.grid() != &cfg.grid {
        return input("field grid does not match the operator grid");
    }
    Ok(())
}

/// Central-difference evaluation of `min_a 𝓛^a f + m ‖∇f‖`.
///
/// Meaningful only for smooth `f`; boundary nodes use one-sided
/// differences.
pub fn generator_apply(cfg: &OperatorConfig, f: &ScalarField) -> Result<ScalarField> {
    check_field(cfg, f)?;
    let g = &cfg.grid;
    let dim = g.dim();
    let grads = f.gradient_fd();
    // Second derivatives as gradients of the gradient.
    let hess: Vec<Vec<ScalarField>> = grads.iter().map(|d| d.gradient_fd()).collect();
    let second = |k: usize, i: usize, j: usize| -> f64 {
        if i == j {
            // Three-point stencil in the interior.
            let h = g.spacing(i);
            let idx = g.unravel(k);
            if idx[i] > 0 && idx[i] + 1 < g.n(i) {
                let mut l = idx;
                l[i] -= 1;
                let mut r = idx;
                r[i] += 1;
                let v = f.values();
                return (v[g.flat(r)] - 2.0 * v[k] + v[g.flat(l)]) / (h * h);
            }
        }
        0.5 * (hess[i][j].values()[k] + hess[j][i].values()[k])
    };
    let model = &cfg.model;
    let m = cfg.ambiguity.m;
    let values = (0..g.len())
        .map(|k| {
            let x = g.node(k);
            let mut best = f64::INFINITY;
            for a in 0..model.num_actions() {
                let s = model.diffusion(a);
                let b = model.drift_at(a, &x[..dim]);
                let mut l = 0.0;
                for i in 0..dim {
                    l += b[i] * grads[i].values()[k];
                    for j in 0..dim {
                        l += 0.5 * s[(i, j)] * second(k, i, j);
                    }
                }
                best = best.min(l);
            }
            let norm = grads.iter().map(|d| d.values()[k].powi(2)).sum::<f64>().sqrt();
            best + m * norm
        })
        .collect();
    ScalarField::new(g.clone(), values)
}

/// One explicit Euler step of the upwind scheme.
pub fn step_forward(cfg: &OperatorConfig, scheme: &PdeScheme, v: &ScalarField) -> Result<ScalarField> {
    check_field(cfg, v)?;
    scheme.validate(cfg)?;
    let stencil = Stencil::new(cfg)?;
    ScalarField::new(cfg.grid.clone(), stencil.step(v.values(), scheme.dt))
}

/// Snapshots `v(t_j, ·)` of a solution.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceTimeField {
    pub grid: Grid,
    pub times: Vec<f64>,
    pub snapshots: Vec<ScalarField>,
}

impl SpaceTimeField {
    /// Snapshot at exactly time `t`, if recorded.
    pub fn at(&self, t: f64) -> Option<&ScalarField> {
        self.times.iter().position(|&s| s == t).map(|i| &self.snapshots[i])
    }

    /// CSV with header `t,x,value` or `t,x,y,value`.
    pub fn to_csv(&self) -> String {
        let dim = self.grid.dim();
        let mut out = String::from(if dim == 1 { "t,x,value\n" } else { "t,x,y,value\n" });
        for (t, snap) in self.times.iter().zip(&self.snapshots) {
            for (k, v) in snap.values().iter().enumerate() {
                let p = self.grid.node(k);
                let _ = write!(out, "{t},");
                for c in &p[..dim] {
                    let _ = write!(out, "{c},");
                }
                let _ = writeln!(out, "{v}");
            }
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Solver statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub dt: f64,
    pub steps: usize,
    /// `1 − dt · rate`: distance from the monotonicity limit.
    pub cfl_margin: f64,
}

/// Integrates from `u0` at time 0 up to `horizon`, recording snapshots at
/// each requested time (hit exactly by shortening the step before it).
pub fn solve(
    cfg: &OperatorConfig,
    scheme: &PdeScheme,
    u0: &ScalarField,
    horizon: f64,
    snapshot_times: &[f64],
) -> Result<(SpaceTimeField, SolveSummary)> {
    check_field(cfg, u0)?;
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return input(format!("horizon must be finite and >= 0, got {horizon}"));
    }
    if snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= horizon)) {
        return input("snapshot times must lie in [0, horizon]");
    }
    scheme.validate(cfg)?;
    let stencil = Stencil::new(cfg)?;
    let mut targets: Vec<f64> = snapshot_times.to_vec();
    targets.sort_by(|a, b| a.partial_cmp(b).unwrap());
    targets.dedup();

    let mut out = SpaceTimeField {
        grid: cfg.grid.clone(),
        times: Vec::new(),
        snapshots: Vec::new(),
    };
    let mut v = u0.values().to_vec();
    let mut t = 0.0;
    let mut steps = 0;
    for &target in &targets {
        while t < target {
            let remaining = target - t;
            // Avoid a sliver step right before the target.
            let dt = if remaining <= scheme.dt * (1.0 + 1e-9) {
                remaining
            } else {
                scheme.dt
            };
            v = stencil.step(&v, dt);
            t = if dt == remaining { target } else { t + dt };
            steps += 1;
        }
        out.times.push(target);
        out.snapshots.push(ScalarField::new(cfg.grid.clone(), v.clone())?);
    }
    let summary = SolveSummary {
        dt: scheme.dt,
        steps,
        cfl_margin: 1.0 - scheme.dt * stencil.rate,
    };
    Ok((out, summary))
}

/// Terminal-value form: returns `v(t, ·)` for each `t` in `times`, where
/// `v(horizon, ·) = terminal` and `−∂_t v = min_a 𝓛^a v + m‖∇v‖`; solved via
/// `w(τ) = v(horizon − τ)`.
pub fn solve_terminal(
    cfg: &OperatorConfig,
    scheme: &PdeScheme,
    terminal: &ScalarField,
    horizon: f64,
    times: &[f64],
) -> Result<(SpaceTimeField, SolveSummary)> {
    if times.iter().any(|t| !(*t >= 0.0 && *t <= horizon)) {
        return input("times must lie in [0, horizon]");
    }
    let taus: Vec<f64> = times.iter().map(|t| horizon - t).collect();
    let (w, summary) = solve(cfg, scheme, terminal, horizon, &taus)?;
    let mut out = SpaceTimeField {
        grid: w.grid.clone(),
        times: Vec::new(),
        snapshots: Vec::new(),
    };
    let mut sorted: Vec<f64> = times.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    sorted.dedup();
    for t in sorted {
        let snap = w.at(horizon - t).expect("snapshot recorded").clone();
        out.times.push(t);
        out.snapshots.push(snap);
    }
    Ok((out, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual::AmbiguitySpec;
    use crate::grid::CompactWindow;
    use crate::models::{ModelSpec, ReferenceModel};
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn cfg(actions: &[(f64, f64)], m: f64, n: usize) -> OperatorConfig {
        let model = ReferenceModel::new(ModelSpec::brownian_1d(actions)).unwrap();
        OperatorConfig::new(model, AmbiguitySpec::new(m, 2.0).unwrap(), Grid::line(-8.0, 8.0, n).unwrap()).unwrap()
    }

    // Standard normal CDF by Simpson's rule on [−12, x].
    fn phi(x: f64) -> f64 {
        let lo = -12.0;
        if x <= lo {
            return 0.0;
        }
        let n = 4000;
        let h = (x - lo) / n as f64;
        let dens = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut s = dens(lo) + dens(x);
        for i in 1..n {
            let z = lo + i as f64 * h;
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * dens(z);
        }
        s * h / 3.0
    }

    #[test]
    fn generator_examples() {
        let c = cfg(&[(0.0, 1.0)], 0.5, 2049);
        let f = ScalarField::from_fn(&c.grid, |x| x[0].cos()).unwrap();
        let l = generator_apply(&c, &f).unwrap();
        assert!((l.eval(&[0.0]).unwrap() + 0.5).abs() < 1e-3);
        assert!((l.eval(&[FRAC_PI_2]).unwrap() - 0.5).abs() < 1e-3);
        let k = ScalarField::constant(&c.grid, 2.0).unwrap();
        assert!(generator_apply(&c, &k).unwrap().sup_norm(None).unwrap() == 0.0);
    }

    #[test]
    fn zero_generator_leaves_data_unchanged() {
        let c = cfg(&[(0.0, 0.0)], 0.0, 129);
        let scheme = PdeScheme::from_cfl(&c, 0.9).unwrap();
        assert!(scheme.dt.is_infinite());
        let s = PdeScheme { dt: 0.1, ..scheme };
        let f = ScalarField::from_fn(&c.grid, |x| x[0].sin()).unwrap();
        assert_eq!(step_forward(&c, &s, &f).unwrap(), f);
    }

    #[test]
    fn gradient_term_on_monotone_and_affine_data() {
        let c = cfg(&[(0.0, 0.0)], 1.0, 129);
        let s = PdeScheme::from_cfl(&c, 0.9).unwrap();
        let aff = ScalarField::from_fn(&c.grid, |x| -0.7 * x[0]).unwrap();
        let next = step_forward(&c, &s, &aff).unwrap();
        for k in 1..128 {
            let want = aff.values()[k] + s.dt * 0.7;
            assert!((next.values()[k] - want).abs() < 1e-12);
        }
        let inc = ScalarField::from_fn(&c.grid, |x| x[0].tanh()).unwrap();
        let next = step_forward(&c, &s, &inc).unwrap();
        for k in 0..128 {
            assert!(next.values()[k] >= inc.values()[k]);
        }
        assert!(next.values()[64] > inc.values()[64]);
    }

    #[test]
    fn cfl_violation_is_a_config_error() {
        let c = cfg(&[(0.0, 1.0)], 0.5, 129);
        let s = PdeScheme::from_cfl(&c, 0.9).unwrap();
        let bad = PdeScheme { dt: 2.0 * s.dt, ..s };
        let f = ScalarField::constant(&c.grid, 1.0).unwrap();
        assert!(matches!(step_forward(&c, &bad, &f), Err(Error::Config(_))));
        assert!(PdeScheme::from_cfl(&c, 1.5).is_err());
    }

    #[test]
    fn two_dimensional_cross_diffusion_is_rejected() {
        let mut spec = ModelSpec::brownian_1d(&[(0.0, 1.0)]);
        spec.dim = 2;
        spec.actions[0].drift = vec![0.0, 0.0];
        spec.actions[0].sigma = vec![vec![1.0, 0.5], vec![0.0, 1.0]];
        let model = ReferenceModel::new(spec).unwrap();
        let c = OperatorConfig::new(model, AmbiguitySpec::new(0.1, 2.0).unwrap(), Grid::square(-2.0, 2.0, 17).unwrap())
            .unwrap();
        assert!(matches!(PdeScheme::from_cfl(&c, 0.9), Err(Error::Config(_))));
    }

    #[test]
    fn heat_closed_form() {
        let c = cfg(&[(0.0, 1.0)], 0.0, 513);
        let s = PdeScheme::from_cfl(&c, 0.9).unwrap();
        let f = ScalarField::from_fn(&c.grid, |x| x[0].cos()).unwrap();
        let (sol, summary) = solve(&c, &s, &f, 0.5, &[0.25, 0.5]).unwrap();
        let exact = ScalarField::from_fn(&c.grid, |x| (-0.25f64).exp() * x[0].cos()).unwrap();
        let w = CompactWindow::centered(1, 4.0);
        assert!(sol.at(0.5).unwrap().sup_distance(&exact, Some(&w)).unwrap() <= 5e-3);
        assert_eq!(sol.times, vec![0.25, 0.5]);
        assert!(summary.cfl_margin >= 0.1 - 1e-12);
        assert!(summary.steps > 0);
        assert!(sol.to_csv().starts_with("t,x,value\n0.25,-8,"));
    }

    #[test]
    fn constants_are_preserved_for_all_times() {
        let c = cfg(&[(-0.5, 1.0), (0.5, 0.5)], 0.5, 129);
        let s = PdeScheme::from_cfl(&c, 0.9).unwrap();
        let k = ScalarField::constant(&c.grid, -1.25).unwrap();
        let (sol, _) = solve(&c, &s, &k, 0.3, &[0.0, 0.1, 0.3]).unwrap();
        for snap in &sol.snapshots {
            assert!(snap.values().iter().all(|&v| v == -1.25));
        }
    }

    #[test]
    fn normal_cdf_data_follow_the_shifted_closed_form() {
        let c = cfg(&[(0.0, 1.0)], 0.5, 1025);
        let s = PdeScheme::from_cfl(&c, 0.9).unwrap();
        let u0 = ScalarField::from_fn(&c.grid, |x| phi(x[0])).unwrap();
        let (sol, _) = solve(&c, &s, &u0, 1.0, &[1.0]).unwrap();
        let v = sol.at(1.0).unwrap();
        assert!((v.eval(&[0.0]).unwrap() - phi(0.5 / 2f64.sqrt())).abs() <= 1e-2);
        assert!((phi(0.5 / 2f64.sqrt()) - 0.6382).abs() < 1e-4);
        let w = CompactWindow::centered(1, 4.0);
        let exact = ScalarField::from_fn(&c.grid, |x| phi((x[0] + 0.5) / 2f64.sqrt())).unwrap();
        assert!(v.sup_distance(&exact, Some(&w)).unwrap() <= 1e-2);
    }

    #[test]
    fn terminal_form_is_time_reversal() {
        let c = cfg(&[(0.0, 1.0)], 0.0, 257);
        let s = PdeScheme::from_cfl(&c, 0.9).unwrap();
        let g = ScalarField::from_fn(&c.grid, |x| x[0].cos()).unwrap();
        let (v, _) = solve_terminal(&c, &s, &g, 0.5, &[0.0, 0.5]).unwrap();
        assert_eq!(v.at(0.5).unwrap(), &g);
        let (fwd, _) = solve(&c, &s, &g, 0.5, &[0.5]).unwrap();
        assert_eq!(v.at(0.0).unwrap(), fwd.at(0.5).unwrap());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn step_is_monotone(a in prop::collection::vec(-1.0..1.0f64, 3),
                            bump in prop::collection::vec(0.0..1.0f64, 65),
                            m in 0.0..1.0f64, b in -1.0..1.0f64) {
            let c = cfg(&[(b, 1.0), (-0.3, 0.5)], m, 65);
            let s = PdeScheme::from_cfl(&c, 1.0).unwrap();
            let u = ScalarField::from_fn(&c.grid, |x| a[0] * x[0].sin() + a[1] * (a[2] * x[0]).cos()).unwrap();
            let v = u.zip_with(&ScalarField::new(c.grid.clone(), bump).unwrap(), |p, q| p + q).unwrap();
            let su = step_forward(&c, &s, &u).unwrap();
            let sv = step_forward(&c, &s, &v).unwrap();
            prop_assert!(su.max_excess(&sv, None).unwrap() <= 1e-12);
        }

        #[test]
        fn linear_step_is_nonexpansive(a in prop::collection::vec(-1.0..1.0f64, 4), b in -1.0..1.0f64) {
            let c = cfg(&[(b, 1.0)], 0.0, 65);
            let s = PdeScheme::from_cfl(&c, 0.9).unwrap();
            let u = ScalarField::from_fn(&c.grid, |x| a[0] * x[0].sin() + a[1] * x[0].cos()).unwrap();
            let v = ScalarField::from_fn(&c.grid, |x| a[2] * (2.0 * x[0]).sin() + a[3]).unwrap();
            let d0 = u.sup_distance(&v, None).unwrap();
            let d1 = step_forward(&c, &s, &u).unwrap().sup_distance(&step_forward(&c, &s, &v).unwrap(), None).unwrap();
            prop_assert!(d1 <= d0 + 1e-14);
        }

        #[test]
        fn gradient_source_is_nonnegative(a in prop::collection::vec(-1.0..1.0f64, 3), m in 0.0..2.0f64) {
            let c = cfg(&[(0.0, 0.0)], m, 65);
            let s = PdeScheme::from_cfl(&c, 0.9).unwrap();
            let u = ScalarField::from_fn(&c.grid, |x| a[0] * x[0].sin() + a[1] * (a[2] * x[0]).cos()).unwrap();
            let su = step_forward(&c, &s, &u).unwrap();
            prop_assert!(u.max_excess(&su, None).unwrap() <= 0.0);
        }
    }
}
