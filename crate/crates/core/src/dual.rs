//! Worst-case expectations over Wasserstein balls.
//!
//! With finitely many transport destinations per source atom, the primal
//! problem
//!
//! ```text
//! sup { Σ_i w_i Σ_j t_ij g_ij : t_ij ≥ 0, Σ_j t_ij = 1, Σ_ij w_i t_ij c_ij ≤ r^p }
//! ```
//!
//! is a linear program with a single coupling constraint. Its dual is the
//! one-dimensional convex, piecewise-linear problem
//!
//! ```text
//! min_{λ ≥ 0}  λ r^p + Σ_i w_i max_j (g_ij − λ c_ij)
//! ```
//!
//! which [`DualTable::solve`] minimizes by bracketing and bisection on the
//! subgradient. [`brute_force_sup`] solves the primal directly by
//! enumerating the vertices of the transport polytope and serves as the
//! independent oracle.

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::grid::MAX_DIM;
use crate::models::{DiscreteMeasure, Point};

/// Wasserstein order `p` and uncertainty rate `m`: the ball at horizon `t`
/// has radius `t m`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbiguitySpec {
    pub m: f64,
    #[serde(default = "default_order")]
    pub p: f64,
}

fn default_order() -> f64 {
    2.0
}

impl AmbiguitySpec {
    pub fn new(m: f64, p: f64) -> Result<Self> {
        let spec = AmbiguitySpec { m, p };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m >= 0.0) || !self.m.is_finite() {
            return input(format!("uncertainty rate m must be finite and >= 0, got {}", self.m));
        }
        if !(self.p > 1.0) || !self.p.is_finite() {
            return input(format!("Wasserstein order p must lie in (1, inf), got {}", self.p));
        }
        Ok(())
    }

    pub fn radius(&self, t: f64) -> f64 {
        t * self.m
    }
}

/// Result of a dual solve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DualSolution {
    pub value: f64,
    /// Minimizing multiplier; infinite for the radius-zero bypass.
    pub lambda_star: f64,
}

/// Tabulated inner problem: per source atom, candidate values `g_ij`,
/// transport costs `c_ij = ‖z_ij − y_i‖^p` and distances `‖z_ij − y_i‖`.
///
/// Within each atom candidates are sorted by nondecreasing cost and the
/// first one is the zero-cost stay option, so scanning for a strict
/// improvement breaks ties toward cheaper transport.
#[derive(Clone, Debug, Default)]
pub struct DualTable {
    pub weights: Vec<f64>,
    /// `starts[i]..starts[i + 1]` indexes the candidates of atom `i`.
    pub starts: Vec<usize>,
    pub costs: Vec<f64>,
    pub dists: Vec<f64>,
    pub values: Vec<f64>,
    /// `r^p`
    pub budget: f64,
}

impl DualTable {
    pub fn num_atoms(&self) -> usize {
        self.weights.len()
    }

    fn check(&self) -> Result<()> {
        if let Some(k) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite integrand value at candidate {k}")));
        }
        Ok(())
    }

    /// Plain expectation under the source measure (stay option everywhere).
    #[inline]
    pub fn stay_value(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.values[self.starts[i]])
            .sum()
    }

    /// Dual objective and its right subgradient at `lambda`.
    #[inline]
    pub fn objective(&self, lambda: f64) -> (f64, f64) {
        let mut value = lambda * self.budget;
        let mut slope = self.budget;
        for (i, &w) in self.weights.iter().enumerate() {
            let (s, e) = (self.starts[i], self.starts[i + 1]);
            let mut best = self.values[s] - lambda * self.costs[s];
            let mut best_cost = self.costs[s];
            for j in s + 1..e {
                let v = self.values[j] - lambda * self.costs[j];
                if v > best {
                    best = v;
                    best_cost = self.costs[j];
                }
            }
            value += w * best;
            slope -= w * best_cost;
        }
        (value, slope)
    }

    /// Largest difference quotient `|g_ij − g_i0| / ‖z_ij − y_i‖`.
    pub fn lipschitz_scale(&self) -> f64 {
        let mut lip: f64 = 0.0;
        for i in 0..self.num_atoms() {
            let s = self.starts[i];
            for j in s + 1..self.starts[i + 1] {
                if self.dists[j] > 0.0 {
                    lip = lip.max((self.values[j] - self.values[s]).abs() / self.dists[j]);
                }
            }
        }
        lip
    }

    /// Initial bracket `Lip / (p max(r, ε)^{p−1}) + 1`.
    pub fn lambda_start(lipschitz: f64, radius: f64, p: f64) -> f64 {
        lipschitz / (p * radius.max(1e-12).powf(p - 1.0)) + 1.0
    }

    /// Minimizes the dual objective over `λ ≥ 0`.
    ///
    /// The bracket `[0, λ₀]` is doubled until the subgradient at the right
    /// end is nonnegative, then bisected to relative width `tol`. The
    /// returned value is the smallest dual objective seen among the bracket
    /// ends and the kink predicted by their supporting lines; every
    /// candidate is a genuine dual value, hence an upper bound on the primal.
    pub fn solve(&self, tol: f64, lambda0: f64) -> Result<DualSolution> {
        if !(tol > 0.0) {
            return input(format!("dual tolerance must be positive, got {tol}"));
        }
        if self.budget == 0.0 {
            return Ok(DualSolution {
                value: self.stay_value(),
                lambda_star: f64::INFINITY,
            });
        }
        let (v0, s0) = self.objective(0.0);
        if s0 >= 0.0 {
            return Ok(DualSolution {
                value: v0,
                lambda_star: 0.0,
            });
        }
        let (mut lo, mut vlo, mut slo) = (0.0, v0, s0);
        let mut hi = lambda0.max(f64::MIN_POSITIVE);
        let (mut vhi, mut shi) = self.objective(hi);
        let mut doublings = 0;
        while shi < 0.0 {
            lo = hi;
            vlo = vhi;
            slo = shi;
            hi *= 2.0;
            doublings += 1;
            if !hi.is_finite() || doublings > 2000 {
                return Err(Error::Data("dual bracket does not close".into()));
            }
            (vhi, shi) = self.objective(hi);
        }
        for _ in 0..200 {
            if hi - lo <= tol * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let (v, s) = self.objective(mid);
            if s < 0.0 {
                lo = mid;
                vlo = v;
                slo = s;
            } else {
                hi = mid;
                vhi = v;
                shi = s;
            }
        }
        let mut best = if vlo <= vhi {
            DualSolution { value: vlo, lambda_star: lo }
        } else {
            DualSolution { value: vhi, lambda_star: hi }
        };
        if slo < shi {
            let kink = (vhi - vlo + slo * lo - shi * hi) / (slo - shi);
            if kink > lo && kink < hi {
                let (vk, _) = self.objective(kink);
                if vk < best.value {
                    best = DualSolution { value: vk, lambda_star: kink };
                }
            }
        }
        Ok(best)
    }

    /// Table with every value negated (for best-case/worst-case symmetry).
    pub fn negated(&self) -> DualTable {
        DualTable {
            values: self.values.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

/// Offsets of a uniform lattice inside the closed ball of radius `reach`,
/// sorted by distance (zero first), with `per_side` points per half-axis.
pub fn offset_lattice(dim: usize, reach: f64, per_side: usize) -> Vec<(Point, f64)> {
    if reach <= 0.0 || per_side == 0 {
        return vec![([0.0; MAX_DIM], 0.0)];
    }
    let step = reach / per_side as f64;
    let k = per_side as i64;
    let mut out = Vec::new();
    match dim {
        1 => {
            for i in -k..=k {
                let x = i as f64 * step;
                out.push(([x, 0.0], x.abs()));
            }
        }
        _ => {
            for i in -k..=k {
                for j in -k..=k {
                    let p = [i as f64 * step, j as f64 * step];
                    let d = (p[0] * p[0] + p[1] * p[1]).sqrt();
                    if d <= reach * (1.0 + 1e-12) {
                        out.push((p, d));
                    }
                }
            }
        }
    }
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    out
}

/// Inner problem `sup_{ν ∈ B} ∫ integrand dν` with finite candidate sets.
pub struct DualInstance<F> {
    pub source: DiscreteMeasure,
    /// Candidate destinations per source atom; each contains its atom.
    pub candidates: Vec<Vec<Point>>,
    pub integrand: F,
    pub radius: f64,
    pub order: f64,
}

impl<F: Fn(&[f64]) -> f64> DualInstance<F> {
    /// Builds an instance; an atom missing from its own candidate set is
    /// added so that staying put is always feasible.
    pub fn new(
        source: DiscreteMeasure,
        mut candidates: Vec<Vec<Point>>,
        integrand: F,
        radius: f64,
        order: f64,
    ) -> Result<Self> {
        if candidates.len() != source.len() {
            return input("need one candidate set per source atom");
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return input(format!("radius must be finite and >= 0, got {radius}"));
        }
        if !(order > 1.0) || !order.is_finite() {
            return input(format!("order must lie in (1, inf), got {order}"));
        }
        for (z, y) in candidates.iter_mut().zip(source.atoms()) {
            if z.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
                return input("candidates must be finite");
            }
            if !z.contains(y) {
                z.insert(0, *y);
            }
        }
        Ok(DualInstance {
            source,
            candidates,
            integrand,
            radius,
            order,
        })
    }

    /// Candidates `y_i + δ` for a lattice of offsets filling the ball of
    /// radius `reach_factor · radius`.
    pub fn with_lattice(
        source: DiscreteMeasure,
        integrand: F,
        radius: f64,
        order: f64,
        reach_factor: f64,
        per_side: usize,
    ) -> Result<Self> {
        let lattice = offset_lattice(source.dim(), reach_factor * radius, per_side);
        let candidates = source
            .atoms()
            .iter()
            .map(|y| lattice.iter().map(|(d, _)| [y[0] + d[0], y[1] + d[1]]).collect())
            .collect();
        DualInstance::new(source, candidates, integrand, radius, order)
    }

    /// Evaluates the integrand on every candidate.
    pub fn tabulate(&self) -> Result<DualTable> {
        let dim = self.source.dim();
        let mut table = DualTable {
            weights: self.source.weights().to_vec(),
            budget: self.radius.powf(self.order),
            ..DualTable::default()
        };
        table.starts.push(0);
        for (y, zs) in self.source.atoms().iter().zip(&self.candidates) {
            let mut rows: Vec<(f64, f64, f64, bool)> = zs
                .iter()
                .map(|z| {
                    let d = (0..dim).map(|a| (z[a] - y[a]).powi(2)).sum::<f64>().sqrt();
                    (d.powf(self.order), d, (self.integrand)(&z[..dim]), z == y)
                })
                .collect();
            // Stay option first, then by cost.
            rows.sort_by(|a, b| b.3.cmp(&a.3).then(a.0.partial_cmp(&b.0).unwrap()));
            for (c, d, v, _) in rows {
                table.costs.push(c);
                table.dists.push(d);
                table.values.push(v);
            }
            table.starts.push(table.costs.len());
        }
        table.check()?;
        Ok(table)
    }
}

/// `λ r^p + Σ_i w_i max_j [integrand(z_ij) − λ ‖z_ij − y_i‖^p]`.
pub fn dual_objective<F: Fn(&[f64]) -> f64>(inst: &DualInstance<F>, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return input(format!("lambda must be >= 0, got {lambda}"));
    }
    Ok(inst.tabulate()?.objective(lambda).0)
}

/// Worst-case (largest) expectation over the Wasserstein ball.
pub fn wasserstein_sup<F: Fn(&[f64]) -> f64>(inst: &DualInstance<F>, tol: f64) -> Result<DualSolution> {
    if !(tol > 0.0) {
        return input(format!("dual tolerance must be positive, got {tol}"));
    }
    let table = inst.tabulate()?;
    let lambda0 = DualTable::lambda_start(table.lipschitz_scale(), inst.radius, inst.order);
    table.solve(tol, lambda0)
}

/// Best-case (smallest) expectation over the ball, via negation.
pub fn wasserstein_inf<F: Fn(&[f64]) -> f64>(inst: &DualInstance<F>, tol: f64) -> Result<DualSolution> {
    if !(tol > 0.0) {
        return input(format!("dual tolerance must be positive, got {tol}"));
    }
    let table = inst.tabulate()?.negated();
    let lambda0 = DualTable::lambda_start(table.lipschitz_scale(), inst.radius, inst.order);
    let sol = table.solve(tol, lambda0)?;
    Ok(DualSolution {
        value: -sol.value,
        lambda_star: sol.lambda_star,
    })
}

/// Samples of the dual objective, e.g. for plotting.
pub fn dual_trace<F: Fn(&[f64]) -> f64>(
    inst: &DualInstance<F>,
    lambdas: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let table = inst.tabulate()?;
    lambdas
        .iter()
        .map(|&l| {
            if !(l >= 0.0) {
                return input(format!("lambda must be >= 0, got {l}"));
            }
            Ok((l, table.objective(l).0))
        })
        .collect()
}

/// `lambda,objective` CSV for a trace.
pub fn trace_csv(trace: &[(f64, f64)]) -> String {
    let mut out = String::from("lambda,objective\n");
    for (l, v) in trace {
        out.push_str(&format!("{l},{v}\n"));
    }
    out
}

/// Plan-count limit for [`brute_force_sup`].
pub const ORACLE_PLAN_LIMIT: u128 = 50_000_000;

/// Exact primal value by enumerating the vertices of the transport polytope.
///
/// A basic feasible solution of the primal LP has at most one atom that
/// splits its mass, and then only between two candidates with the budget
/// constraint tight. The oracle therefore scans every deterministic plan
/// and every plan with one two-way split at the budget-saturating fraction.
/// The work is exponential in the number of atoms; instances above
/// [`ORACLE_PLAN_LIMIT`] plans are refused.
pub fn brute_force_sup<F: Fn(&[f64]) -> f64>(inst: &DualInstance<F>) -> Result<f64> {
    let table = inst.tabulate()?;
    brute_force_table(&table)
}

pub(crate) fn brute_force_table(table: &DualTable) -> Result<f64> {
    let n_atoms = table.num_atoms();
    let counts: Vec<usize> = (0..n_atoms)
        .map(|i| table.starts[i + 1] - table.starts[i])
        .collect();
    let pure: u128 = counts.iter().map(|&c| c as u128).product();
    let split: u128 = (0..n_atoms)
        .map(|s| {
            let pairs = (counts[s] * counts[s].saturating_sub(1) / 2) as u128;
            pairs * pure / counts[s] as u128
        })
        .sum();
    if pure + split > ORACLE_PLAN_LIMIT {
        return Err(Error::OracleTooLarge {
            plans: pure + split,
            limit: ORACLE_PLAN_LIMIT,
        });
    }
    let budget = table.budget;
    let slack = budget * 1e-12 + 1e-300;
    let mut best = f64::NEG_INFINITY;

    // Deterministic plans over all atoms except `skip`.
    let visit = |skip: Option<usize>, f: &mut dyn FnMut(f64, f64)| {
        let active: Vec<usize> = (0..n_atoms).filter(|&i| Some(i) != skip).collect();
        let mut choice = vec![0usize; active.len()];
        loop {
            let mut cost = 0.0;
            let mut value = 0.0;
            for (slot, &i) in active.iter().enumerate() {
                let j = table.starts[i] + choice[slot];
                cost += table.weights[i] * table.costs[j];
                value += table.weights[i] * table.values[j];
            }
            f(cost, value);
            let mut slot = 0;
            loop {
                if slot == active.len() {
                    return;
                }
                choice[slot] += 1;
                if choice[slot] < counts[active[slot]] {
                    break;
                }
                choice[slot] = 0;
                slot += 1;
            }
        }
    };

    visit(None, &mut |cost, value| {
        if cost <= budget + slack && value > best {
            best = value;
        }
    });

    for s in 0..n_atoms {
        let w = table.weights[s];
        if w == 0.0 {
            continue;
        }
        let (lo, hi) = (table.starts[s], table.starts[s + 1]);
        visit(Some(s), &mut |cost_rest, value_rest| {
            for j in lo..hi {
                for k in j + 1..hi {
                    let (cj, ck) = (table.costs[j], table.costs[k]);
                    if cj == ck {
                        continue;
                    }
                    // α c_j + (1 − α) c_k = (budget − cost_rest) / w
                    let alpha = ((budget - cost_rest) / w - ck) / (cj - ck);
                    if (0.0..=1.0).contains(&alpha) {
                        let value =
                            value_rest + w * (alpha * table.values[j] + (1.0 - alpha) * table.values[k]);
                        if value > best {
                            best = value;
                        }
                    }
                }
            }
        });
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gaussian_measure;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn pts(xs: &[f64]) -> Vec<Point> {
        xs.iter().map(|&x| [x, 0.0]).collect()
    }

    #[test]
    fn ambiguity_validation() {
        assert!(AmbiguitySpec::new(-0.1, 2.0).is_err());
        assert!(AmbiguitySpec::new(0.5, 1.0).is_err());
        assert!(AmbiguitySpec::new(0.5, f64::INFINITY).is_err());
        assert_eq!(AmbiguitySpec::new(0.5, 2.0).unwrap().radius(0.2), 0.1);
    }

    #[test]
    fn objective_by_hand() {
        let src = DiscreteMeasure::dirac(1, [0.0, 0.0]);
        let inst = DualInstance::new(src, vec![pts(&[0.0, 1.0])], |z: &[f64]| z[0], 1.0, 2.0).unwrap();
        assert_eq!(dual_objective(&inst, 0.0).unwrap(), 1.0);
        assert_eq!(dual_objective(&inst, 1.0).unwrap(), 1.0);
        assert!(dual_objective(&inst, -1.0).is_err());
    }

    #[test]
    fn objective_at_large_lambda_is_plain_expectation() {
        let src = DiscreteMeasure::from_1d(&[-1.0, 2.0], &[0.25, 0.75]).unwrap();
        let inst = DualInstance::with_lattice(src, |z: &[f64]| z[0].sin(), 0.0, 2.0, 4.0, 4).unwrap();
        let plain = 0.25 * (-1f64).sin() + 0.75 * 2f64.sin();
        assert!((dual_objective(&inst, 1e9).unwrap() - plain).abs() < 1e-12);
    }

    #[test]
    fn radius_zero_is_plain_expectation() {
        let cov = DMatrix::from_element(1, 1, 1.0);
        let src = gaussian_measure(&cov, 32).unwrap();
        let inst = DualInstance::with_lattice(src, |z: &[f64]| z[0].cos(), 0.0, 2.0, 4.0, 8).unwrap();
        let sol = wasserstein_sup(&inst, 1e-10).unwrap();
        assert!((sol.value - (-0.5f64).exp()).abs() < 1e-12);
        assert!(sol.lambda_star.is_infinite());
        let inf = wasserstein_inf(&inst, 1e-10).unwrap();
        assert!((inf.value - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn linear_integrand_shifts_by_radius() {
        let src = DiscreteMeasure::dirac(1, [0.0, 0.0]);
        let grid: Vec<f64> = (0..=400).map(|k| -2.0 + k as f64 * 0.01).collect();
        let inst = DualInstance::new(src, vec![pts(&grid)], |z: &[f64]| z[0], 0.3, 2.0).unwrap();
        let sup = wasserstein_sup(&inst, 1e-12).unwrap();
        assert!((sup.value - 0.3).abs() <= 0.01);
        let inf = wasserstein_inf(&inst, 1e-12).unwrap();
        assert!((inf.value + 0.3).abs() <= 0.01);
    }

    #[test]
    fn concave_peak_inf_moves_mass_by_radius() {
        for r in [0.1, 0.25, 0.7] {
            let src = DiscreteMeasure::dirac(1, [0.0, 0.0]);
            let inst = DualInstance::with_lattice(src, |z: &[f64]| -z[0].abs(), r, 2.0, 4.0, 16).unwrap();
            let inf = wasserstein_inf(&inst, 1e-12).unwrap();
            assert!((inf.value + r).abs() <= r / 16.0 + 1e-12, "r={r} got {}", inf.value);
        }
    }

    #[test]
    fn two_atom_instance_matches_oracle() {
        let src = DiscreteMeasure::from_1d(&[-1.0, 1.0], &[0.5, 0.5]).unwrap();
        let cands = pts(&[-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]);
        let inst =
            DualInstance::new(src, vec![cands.clone(), cands], |z: &[f64]| -z[0].abs(), 0.5, 2.0).unwrap();
        let oracle = brute_force_sup(&inst).unwrap();
        let dual = wasserstein_sup(&inst, 1e-12).unwrap().value;
        // Moving each atom to ±0.5 costs 0.25 = r²; value −0.5.
        assert!((oracle + 0.5).abs() < 1e-12);
        assert!((dual - oracle).abs() < 1e-6);
    }

    #[test]
    fn oracle_limits_and_trivial_cases() {
        let src = DiscreteMeasure::from_1d(&[-1.0, 0.0, 1.0], &[0.2, 0.3, 0.5]).unwrap();
        let c = pts(&[-2.0, -1.0, 0.0, 1.0, 2.0]);
        let f = |z: &[f64]| (2.0 * z[0]).sin();
        let huge = DualInstance::new(src.clone(), vec![c.clone(); 3], f, 100.0, 2.0).unwrap();
        let per_atom_max: f64 = [0.2, 0.3, 0.5]
            .iter()
            .map(|w| w * c.iter().map(|z| f(&z[..1])).fold(f64::NEG_INFINITY, f64::max))
            .sum();
        assert!((brute_force_sup(&huge).unwrap() - per_atom_max).abs() < 1e-12);
        assert!((wasserstein_sup(&huge, 1e-12).unwrap().value - per_atom_max).abs() < 1e-9);

        let zero = DualInstance::new(src.clone(), vec![c.clone(); 3], f, 0.0, 2.0).unwrap();
        let plain = src.expect(|z| f(z));
        assert!((brute_force_sup(&zero).unwrap() - plain).abs() < 1e-12);

        let many: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let big = DualInstance::new(src, vec![pts(&many); 3], f, 1.0, 2.0);
        let big = DualInstance {
            candidates: vec![pts(&many); 6],
            source: DiscreteMeasure::from_1d(&[0.0; 6], &[1.0 / 6.0; 6]).unwrap(),
            ..big.unwrap()
        };
        assert!(matches!(brute_force_sup(&big), Err(Error::OracleTooLarge { .. })));
    }

    #[test]
    fn non_finite_integrand_is_a_data_error() {
        let src = DiscreteMeasure::dirac(1, [0.0, 0.0]);
        let inst = DualInstance::new(src, vec![pts(&[0.0, 1.0])], |z: &[f64]| 1.0 / z[0], 0.5, 2.0).unwrap();
        assert!(matches!(wasserstein_sup(&inst, 1e-9), Err(Error::Data(_))));
        let src = DiscreteMeasure::dirac(1, [0.5, 0.0]);
        let inst = DualInstance::new(src, vec![pts(&[0.5])], |z: &[f64]| z[0], 0.5, 2.0).unwrap();
        assert!(wasserstein_sup(&inst, 0.0).is_err());
    }

    #[test]
    fn lattice_contains_stay_option_first() {
        let l = offset_lattice(1, 1.0, 4);
        assert_eq!(l.len(), 9);
        assert_eq!(l[0].1, 0.0);
        let l2 = offset_lattice(2, 1.0, 4);
        assert_eq!(l2[0].1, 0.0);
        assert!(l2.iter().all(|(_, d)| *d <= 1.0 + 1e-12));
        assert_eq!(l2.len(), 49);
        assert_eq!(offset_lattice(1, 0.0, 4).len(), 1);
    }

    #[test]
    fn trace_is_csv() {
        let src = DiscreteMeasure::dirac(1, [0.0, 0.0]);
        let inst = DualInstance::new(src, vec![pts(&[0.0, 1.0])], |z: &[f64]| z[0], 1.0, 2.0).unwrap();
        let tr = dual_trace(&inst, &[0.0, 0.5, 1.0]).unwrap();
        let csv = trace_csv(&tr);
        assert!(csv.starts_with("lambda,objective\n"));
        assert_eq!(csv.lines().count(), 4);
    }

    fn random_instance(
        seed: &[f64],
        n_atoms: usize,
        n_cand: usize,
        r: f64,
    ) -> DualInstance<impl Fn(&[f64]) -> f64> {
        let atoms: Vec<f64> = (0..n_atoms).map(|i| seed[i] * 2.0 - 1.0).collect();
        let raw: Vec<f64> = (0..n_atoms).map(|i| 0.1 + seed[5 + i]).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let src = DiscreteMeasure::from_1d(&atoms, &weights).unwrap();
        let cands = (0..n_atoms)
            .map(|i| {
                (0..n_cand)
                    .map(|j| [atoms[i] + (j as f64 - (n_cand / 2) as f64) * 0.3 * (0.5 + seed[10 + j % 5]), 0.0])
                    .collect()
            })
            .collect();
        let (a, b, c) = (seed[15] * 3.0, seed[16] * 2.0, seed[17]);
        let f = move |z: &[f64]| (a * z[0]).sin() + b * (z[0] - c).abs() * 0.3 - 0.2 * z[0];
        DualInstance::new(src, cands, f, r, 2.0).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dual_matches_oracle(seed in prop::collection::vec(0.0..1.0f64, 18),
                               n_atoms in 1usize..4, n_cand in 2usize..6, r in 0.0..1.5f64) {
            let inst = random_instance(&seed, n_atoms, n_cand, r);
            let oracle = brute_force_sup(&inst).unwrap();
            let dual = wasserstein_sup(&inst, 1e-12).unwrap().value;
            prop_assert!(dual >= oracle - 1e-9);
            prop_assert!((dual - oracle).abs() <= 1e-6, "dual {} oracle {}", dual, oracle);
        }

        #[test]
        fn monotone_in_radius_and_a_priori_bound(seed in prop::collection::vec(0.0..1.0f64, 18),
                                                 r1 in 0.0..1.0f64, dr in 0.0..1.0f64) {
            let src = DiscreteMeasure::from_1d(&[seed[0] - 0.5, seed[1] + 0.2], &[0.4, 0.6]).unwrap();
            let a = 1.0 + seed[2] * 2.0;
            let f = move |z: &[f64]| (a * z[0]).sin();
            // Fixed candidate sets: growing the radius only enlarges the ball.
            let offsets: Vec<Point> = offset_lattice(1, 4.0, 40).iter().map(|(d, _)| *d).collect();
            let cands: Vec<Vec<Point>> = src
                .atoms()
                .iter()
                .map(|y| offsets.iter().map(|d| [y[0] + d[0], 0.0]).collect())
                .collect();
            let v = |r: f64| {
                let inst = DualInstance::new(src.clone(), cands.clone(), f, r, 2.0).unwrap();
                wasserstein_sup(&inst, 1e-12).unwrap().value
            };
            let (v0, v1, v2) = (v(0.0), v(r1), v(r1 + dr));
            prop_assert!(v1 <= v2 + 1e-12);
            prop_assert!(v1 - v0 <= a * r1 + 1e-9);
        }

        #[test]
        fn translation_covariance(seed in prop::collection::vec(0.0..1.0f64, 18), c in -3.0..3.0f64,
                                  r in 0.0..1.0f64) {
            let base = random_instance(&seed, 3, 4, r);
            let t0 = base.tabulate().unwrap();
            let mut t1 = t0.clone();
            for v in &mut t1.values { *v += c; }
            let l0 = DualTable::lambda_start(t0.lipschitz_scale(), r, 2.0);
            let a = t0.solve(1e-12, l0).unwrap().value;
            let b = t1.solve(1e-12, l0).unwrap().value;
            prop_assert!((b - a - c).abs() <= 1e-12 * (1.0 + c.abs() + a.abs()));
        }

        #[test]
        fn dual_objective_is_convex(seed in prop::collection::vec(0.0..1.0f64, 18),
                                    l1 in 0.0..5.0f64, d1 in 0.0..5.0f64, d2 in 0.0..5.0f64) {
            let inst = random_instance(&seed, 3, 5, 0.4);
            let t = inst.tabulate().unwrap();
            let (a, c) = (l1, l1 + d1 + d2);
            let theta = d1 / (d1 + d2 + 1e-300);
            let b = a + theta * (c - a);
            let chord = (1.0 - theta) * t.objective(a).0 + theta * t.objective(c).0;
            prop_assert!(t.objective(b).0 <= chord + 1e-12);
        }
    }
}
