//! Controlled reference dynamics `X_t = ψ_t^a(x) + Y_t^a`.
//!
//! Two Gaussian families are built in: Brownian motion with drift
//! (`ψ_t(x) = x + b t`, `Y_t ~ N(0, σσᵀ t)`) and the Ornstein–Uhlenbeck
//! process (`ψ_t(x) = e^{-θt} x + ∫_0^t e^{-θs} κ ds`, Gaussian `Y_t` with
//! covariance `∫_0^t e^{-θu} σσᵀ e^{-θu} du`). Laws are represented by
//! tensor-product Gauss–Hermite rules, which makes expectations of smooth
//! integrands spectrally accurate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::field::ScalarField;
use crate::grid::MAX_DIM;
use crate::quadrature::gauss_hermite;

pub type Point = [f64; MAX_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    BrownianDrift,
    OrnsteinUhlenbeck,
}

/// Parameters of one action, as read from a config file.
///
/// Matrices are given row by row. `drift` is used by the Brownian family,
/// `theta` and `kappa` by the Ornstein–Uhlenbeck family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub label: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub drift: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub theta: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kappa: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub dim: usize,
    pub actions: Vec<ActionSpec>,
}

impl ModelSpec {
    /// One-dimensional Brownian model with one action per `(drift, sigma)`.
    pub fn brownian_1d(actions: &[(f64, f64)]) -> Self {
        ModelSpec {
            family: ModelFamily::BrownianDrift,
            dim: 1,
            actions: actions
                .iter()
                .enumerate()
                .map(|(i, &(b, s))| ActionSpec {
                    label: format!("a{i}"),
                    drift: vec![b],
                    sigma: vec![vec![s]],
                    theta: vec![],
                    kappa: vec![],
                })
                .collect(),
        }
    }

    /// One-dimensional Ornstein–Uhlenbeck model with one action per
    /// `(theta, kappa, sigma)`.
    pub fn ou_1d(actions: &[(f64, f64, f64)]) -> Self {
        ModelSpec {
            family: ModelFamily::OrnsteinUhlenbeck,
            dim: 1,
            actions: actions
                .iter()
                .enumerate()
                .map(|(i, &(th, k, s))| ActionSpec {
                    label: format!("a{i}"),
                    drift: vec![],
                    sigma: vec![vec![s]],
                    theta: vec![vec![th]],
                    kappa: vec![k],
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
enum Dynamics {
    Brownian {
        drift: DVector<f64>,
    },
    OrnsteinUhlenbeck {
        theta: DMatrix<f64>,
        // θ = Q diag(λ) Qᵀ
        eigvals: DVector<f64>,
        eigvecs: DMatrix<f64>,
        kappa: DVector<f64>,
    },
}

#[derive(Clone, Debug)]
struct ActionModel {
    dynamics: Dynamics,
    // σσᵀ
    diffusion: DMatrix<f64>,
}

/// A validated reference model with a finite, nonempty action set.
#[derive(Clone, Debug)]
pub struct ReferenceModel {
    spec: ModelSpec,
    actions: Vec<ActionModel>,
}

fn matrix(rows: &[Vec<f64>], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(Error::Model(format!("{what} must be a {dim}x{dim} matrix")));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Model(format!("{what} has non-finite entries")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

fn vector(v: &[f64], dim: usize, what: &str) -> Result<DVector<f64>> {
    if v.is_empty() {
        return Ok(DVector::zeros(dim));
    }
    if v.len() != dim {
        return Err(Error::Model(format!("{what} must have {dim} entries")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Model(format!("{what} has non-finite entries")));
    }
    Ok(DVector::from_column_slice(v))
}

/// `∫_0^t e^{-c u} du`, continuous at `c = 0`.
fn exp_integral(c: f64, t: f64) -> f64 {
    if c.abs() * t < 1e-12 {
        t
    } else {
        -(-c * t).exp_m1() / c
    }
}

impl ReferenceModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let dim = spec.dim;
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Model(format!("model dimension must be 1 or 2, got {dim}")));
        }
        if spec.actions.is_empty() {
            return Err(Error::Model("the action set must be nonempty".into()));
        }
        let mut actions = Vec::with_capacity(spec.actions.len());
        for a in &spec.actions {
            let sigma = matrix(&a.sigma, dim, &format!("sigma of action `{}`", a.label))?;
            let diffusion = &sigma * sigma.transpose();
            let dynamics = match spec.family {
                ModelFamily::BrownianDrift => {
                    if !a.theta.is_empty() || !a.kappa.is_empty() {
                        return Err(Error::Model(format!(
                            "action `{}`: theta/kappa only apply to ornstein_uhlenbeck",
                            a.label
                        )));
                    }
                    Dynamics::Brownian {
                        drift: vector(&a.drift, dim, &format!("drift of action `{}`", a.label))?,
                    }
                }
                ModelFamily::OrnsteinUhlenbeck => {
                    if !a.drift.is_empty() {
                        return Err(Error::Model(format!(
                            "action `{}`: drift only applies to brownian_drift",
                            a.label
                        )));
                    }
                    let theta = matrix(&a.theta, dim, &format!("theta of action `{}`", a.label))?;
                    if (&theta - theta.transpose()).abs().max() > 1e-12 {
                        return Err(Error::Model(format!(
                            "theta of action `{}` must be symmetric",
                            a.label
                        )));
                    }
                    let eig = SymmetricEigen::new(theta.clone());
                    let scale = eig.eigenvalues.abs().max().max(1.0);
                    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
                        return Err(Error::Model(format!(
                            "theta of action `{}` must be positive semi-definite",
                            a.label
                        )));
                    }
                    Dynamics::OrnsteinUhlenbeck {
                        theta,
                        eigvals: eig.eigenvalues.map(|l| l.max(0.0)),
                        eigvecs: eig.eigenvectors,
                        kappa: vector(&a.kappa, dim, &format!("kappa of action `{}`", a.label))?,
                    }
                }
            };
            actions.push(ActionModel {
                dynamics,
                diffusion,
            });
        }
        Ok(ReferenceModel { spec, actions })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn family(&self) -> ModelFamily {
        self.spec.family
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn action_label(&self, a: usize) -> &str {
        &self.spec.actions[a].label
    }

    /// Model restricted to a single action.
    pub fn single_action(&self, a: usize) -> ReferenceModel {
        ReferenceModel {
            spec: ModelSpec {
                family: self.spec.family,
                dim: self.spec.dim,
                actions: vec![self.spec.actions[a].clone()],
            },
            actions: vec![self.actions[a].clone()],
        }
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.actions.len() {
            return input(format!("action index {a} out of range"));
        }
        Ok(())
    }

    /// The drift flow `ψ_t^a(x)`.
    pub fn psi(&self, a: usize, t: f64, x: &[f64]) -> Result<Point> {
        self.check_action(a)?;
        if !(t >= 0.0) || !t.is_finite() {
            return input(format!("time must be finite and nonnegative, got {t}"));
        }
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return input("point must be finite and match the model dimension");
        }
        Ok(self.psi_unchecked(a, t, x))
    }

    pub(crate) fn psi_unchecked(&self, a: usize, t: f64, x: &[f64]) -> Point {
        let d = self.dim();
        let mut out = [0.0; MAX_DIM];
        match &self.actions[a].dynamics {
            Dynamics::Brownian { drift } => {
                for i in 0..d {
                    out[i] = x[i] + drift[i] * t;
                }
            }
            Dynamics::OrnsteinUhlenbeck {
                eigvals,
                eigvecs,
                kappa,
                ..
            } => {
                if t == 0.0 {
                    out[..d].copy_from_slice(&x[..d]);
                    return out;
                }
                // Work in the eigenbasis of θ.
                let xv = DVector::from_column_slice(&x[..d]);
                let xe = eigvecs.transpose() * xv;
                let ke = eigvecs.transpose() * kappa;
                let ye = DVector::from_fn(d, |k, _| {
                    let l = eigvals[k];
                    (-l * t).exp() * xe[k] + exp_integral(l, t) * ke[k]
                });
                let y = eigvecs * ye;
                out[..d].copy_from_slice(y.as_slice());
            }
        }
        out
    }

    /// Vector field generating the flow: `b(a)` or `-θ(a) x + κ(a)`.
    pub fn drift_at(&self, a: usize, x: &[f64]) -> Point {
        let d = self.dim();
        let mut out = [0.0; MAX_DIM];
        match &self.actions[a].dynamics {
            Dynamics::Brownian { drift } => out[..d].copy_from_slice(drift.as_slice()),
            Dynamics::OrnsteinUhlenbeck { theta, kappa, .. } => {
                let v = -(theta * DVector::from_column_slice(&x[..d])) + kappa;
                out[..d].copy_from_slice(v.as_slice());
            }
        }
        out
    }

    /// `σ(a) σ(a)ᵀ`.
    pub fn diffusion(&self, a: usize) -> &DMatrix<f64> {
        &self.actions[a].diffusion
    }

    /// Covariance of `Y_t^a`.
    pub fn covariance(&self, a: usize, t: f64) -> Result<DMatrix<f64>> {
        self.check_action(a)?;
        if !(t >= 0.0) || !t.is_finite() {
            return input(format!("time must be finite and nonnegative, got {t}"));
        }
        let act = &self.actions[a];
        Ok(match &act.dynamics {
            Dynamics::Brownian { .. } => &act.diffusion * t,
            Dynamics::OrnsteinUhlenbeck {
                eigvals, eigvecs, ..
            } => {
                let m = eigvecs.transpose() * &act.diffusion * eigvecs;
                let d = self.dim();
                let s = DMatrix::from_fn(d, d, |k, l| m[(k, l)] * exp_integral(eigvals[k] + eigvals[l], t));
                eigvecs * s * eigvecs.transpose()
            }
        })
    }

    /// Quadrature representation of the law `μ_t^a`.
    ///
    /// Tensor-product Gauss–Hermite nodes are mapped through a square root of
    /// the covariance; directions with zero variance are dropped, so a
    /// degenerate law (including `t = 0`) becomes the single atom `δ_0`.
    pub fn law(&self, a: usize, t: f64, quad_order: usize) -> Result<DiscreteMeasure> {
        if !(4..=64).contains(&quad_order) {
            return input(format!("quad_order must lie in [4, 64], got {quad_order}"));
        }
        let cov = self.covariance(a, t)?;
        gaussian_measure(&cov, quad_order)
    }

    /// The constant `C` with `‖ψ_t^a(x) − x‖ ≤ C t (1 + ‖x‖)`.
    pub fn drift_constant(&self) -> f64 {
        self.actions
            .iter()
            .map(|act| match &act.dynamics {
                Dynamics::Brownian { drift } => drift.norm(),
                Dynamics::OrnsteinUhlenbeck { theta, kappa, .. } => {
                    spectral_norm(theta).max(kappa.norm())
                }
            })
            .fold(0.0, f64::max)
    }

    /// Residual of the Chapman–Kolmogorov identity at `x`, both sides
    /// computed by quadrature against the interpolated field `f`.
    pub fn check_chapman_kolmogorov(
        &self,
        a: usize,
        s: f64,
        t: f64,
        f: &ScalarField,
        x: &[f64],
        quad_order: usize,
    ) -> Result<f64> {
        if f.grid().dim() != self.dim() {
            return input("field dimension does not match the model");
        }
        let x0 = self.psi(a, s + t, x)?;
        let joint = self.law(a, s + t, quad_order)?;
        let lhs: f64 = joint
            .iter()
            .map(|(y, w)| w * f.interp(&add(&x0, y)[..self.dim()]))
            .sum();

        let law_t = self.law(a, t, quad_order)?;
        let law_s = self.law(a, s, quad_order)?;
        let xt = self.psi(a, t, x)?;
        let mut rhs = 0.0;
        for (yt, wt) in law_t.iter() {
            let mid = add(&xt, yt);
            let base = self.psi_unchecked(a, s, &mid[..self.dim()]);
            let inner: f64 = law_s
                .iter()
                .map(|(ys, ws)| ws * f.interp(&add(&base, ys)[..self.dim()]))
                .sum();
            rhs += wt * inner;
        }
        Ok((lhs - rhs).abs())
    }

    /// Numerical check that `inf_a ‖ψ_t^a(x)‖ ≥ R` whenever `‖x‖ ≥ R'` and
    /// `t ≤ t0 = (R' − R) / (C (1 + R'))`.
    pub fn check_psi_stability(
        &self,
        r: f64,
        r_prime: f64,
        samples: usize,
        seed: u64,
    ) -> Result<PsiStability> {
        if !(r >= 0.0) || !(r_prime > r) || !r_prime.is_finite() {
            return input(format!("need R' > R >= 0, got R = {r}, R' = {r_prime}"));
        }
        let c = self.drift_constant();
        let t0 = if c > 0.0 {
            (r_prime - r) / (c * (1.0 + r_prime))
        } else {
            f64::INFINITY
        };
        let t_max = if t0.is_finite() { t0 } else { 10.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.dim();
        let mut worst = f64::INFINITY;
        for k in 0..samples {
            let radius = r_prime + rng.gen_range(0.0..=(1.0 + r_prime));
            let mut dir = [0.0; MAX_DIM];
            if d == 1 {
                dir[0] = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            } else {
                let phi = rng.gen_range(0.0..std::f64::consts::TAU);
                dir[0] = phi.cos();
                dir[1] = phi.sin();
            }
            let x: Vec<f64> = dir[..d].iter().map(|u| u * radius).collect();
            let t = match k % 3 {
                0 => t_max,
                1 => 0.0,
                _ => rng.gen_range(0.0..=t_max),
            };
            for a in 0..self.num_actions() {
                let y = self.psi_unchecked(a, t, &x);
                let norm = y[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
                worst = worst.min(norm - r);
            }
        }
        Ok(PsiStability {
            t0,
            samples,
            worst_margin: worst,
            passed: worst >= -1e-12,
        })
    }
}

/// Outcome of [`ReferenceModel::check_psi_stability`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PsiStability {
    pub t0: f64,
    pub samples: usize,
    /// `min (inf_a ‖ψ_t^a(x)‖ − R)` over the sampled `(t, x)`.
    pub worst_margin: f64,
    pub passed: bool,
}

fn add(x: &Point, y: &Point) -> Point {
    [x[0] + y[0], x[1] + y[1]]
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.singular_values().max()
}

/// Finitely supported probability measure on `R^d`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    atoms: Vec<Point>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(dim: usize, atoms: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return input("measure dimension must be 1 or 2");
        }
        if atoms.is_empty() || atoms.len() != weights.len() {
            return input("a measure needs matching, nonempty atoms and weights");
        }
        if atoms.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return input("atoms must be finite");
        }
        if weights.iter().any(|w| !(*w >= 0.0)) {
            return input("weights must be nonnegative");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return input(format!("weights must sum to 1, got {total}"));
        }
        Ok(DiscreteMeasure {
            dim,
            atoms,
            weights,
        })
    }

    pub fn dirac(dim: usize, at: Point) -> Self {
        DiscreteMeasure {
            dim,
            atoms: vec![at],
            weights: vec![1.0],
        }
    }

    /// Convenience constructor for one-dimensional measures.
    pub fn from_1d(atoms: &[f64], weights: &[f64]) -> Result<Self> {
        DiscreteMeasure::new(1, atoms.iter().map(|&x| [x, 0.0]).collect(), weights.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atoms(&self) -> &[Point] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Point, f64)> + '_ {
        self.atoms.iter().zip(self.weights.iter().copied())
    }

    pub fn expect(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        self.iter().map(|(y, w)| w * f(&y[..self.dim])).sum()
    }

    pub fn mean(&self) -> Point {
        let mut m = [0.0; MAX_DIM];
        for (y, w) in self.iter() {
            for i in 0..self.dim {
                m[i] += w * y[i];
            }
        }
        m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let m = self.mean();
        let d = self.dim;
        DMatrix::from_fn(d, d, |i, j| {
            self.iter().map(|(y, w)| w * (y[i] - m[i]) * (y[j] - m[j])).sum()
        })
    }

    /// `∫ ‖y‖^p μ(dy)`.
    pub fn moment(&self, p: f64) -> f64 {
        self.iter()
            .map(|(y, w)| w * y[..self.dim].iter().map(|v| v * v).sum::<f64>().sqrt().powf(p))
            .sum()
    }
}

/// Gauss–Hermite representation of `N(0, cov)`.
pub fn gaussian_measure(cov: &DMatrix<f64>, quad_order: usize) -> Result<DiscreteMeasure> {
    let d = cov.nrows();
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Model("covariance has non-finite entries".into()));
    }
    let sym = (cov + cov.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.abs().max();
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale.max(1e-300)) {
        return Err(Error::Model("covariance is not positive semi-definite".into()));
    }
    // Keep directions with non-negligible variance.
    let dirs: Vec<(f64, DVector<f64>)> = (0..d)
        .filter(|&k| eig.eigenvalues[k] > 1e-14 * scale && eig.eigenvalues[k] > 0.0)
        .map(|k| (eig.eigenvalues[k].sqrt(), eig.eigenvectors.column(k).into_owned()))
        .collect();
    if dirs.is_empty() {
        return Ok(DiscreteMeasure::dirac(d, [0.0; MAX_DIM]));
    }
    let (nodes, weights) = gauss_hermite(quad_order);
    let mut atoms = Vec::new();
    let mut ws = Vec::new();
    let count = nodes.len().pow(dirs.len() as u32);
    for flat in 0..count {
        let mut p = [0.0; MAX_DIM];
        let mut w = 1.0;
        let mut rem = flat;
        for (sd, v) in &dirs {
            let i = rem % nodes.len();
            rem /= nodes.len();
            w *= weights[i];
            for c in 0..d {
                p[c] += sd * nodes[i] * v[c];
            }
        }
        atoms.push(p);
        ws.push(w);
    }
    let total: f64 = ws.iter().sum();
    for w in &mut ws {
        *w /= total;
    }
    Ok(DiscreteMeasure {
        dim: d,
        atoms,
        weights: ws,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;

    fn bm(b: f64, s: f64) -> ReferenceModel {
        ReferenceModel::new(ModelSpec::brownian_1d(&[(b, s)])).unwrap()
    }

    fn ou(th: f64, k: f64, s: f64) -> ReferenceModel {
        ReferenceModel::new(ModelSpec::ou_1d(&[(th, k, s)])).unwrap()
    }

    #[test]
    fn psi_examples() {
        let m = bm(0.3, 1.0);
        assert!((m.psi(0, 2.0, &[1.0]).unwrap()[0] - 1.6).abs() < 1e-15);
        assert_eq!(m.psi(0, 0.0, &[1.7]).unwrap()[0], 1.7);
        let o = ou(1.0, 0.0, 1.0);
        assert!((o.psi(0, 2f64.ln(), &[4.0]).unwrap()[0] - 2.0).abs() < 1e-14);
        assert_eq!(o.psi(0, 0.0, &[-3.0]).unwrap()[0], -3.0);
        assert!(m.psi(0, -1.0, &[0.0]).is_err());
    }

    #[test]
    fn ou_psi_with_zero_eigenvalue_uses_linear_limit() {
        let o = ou(0.0, 0.7, 1.0);
        assert!((o.psi(0, 2.0, &[1.0]).unwrap()[0] - 2.4).abs() < 1e-14);
        // θ = 2, κ = 1: ψ = e^{-2t} x + (1 - e^{-2t})/2
        let o = ou(2.0, 1.0, 1.0);
        let t: f64 = 0.3;
        let want = (-2.0 * t).exp() * 0.5 + (1.0 - (-2.0 * t).exp()) / 2.0;
        assert!((o.psi(0, t, &[0.5]).unwrap()[0] - want).abs() < 1e-14);
    }

    #[test]
    fn law_examples() {
        let m = bm(0.0, 1.0);
        let d0 = m.law(0, 0.0, 16).unwrap();
        assert_eq!(d0.atoms(), &[[0.0, 0.0]]);
        assert_eq!(d0.weights(), &[1.0]);

        let l = m.law(0, 1.0, 16).unwrap();
        assert!(l.mean()[0].abs() < 1e-12);
        assert!((l.covariance()[(0, 0)] - 1.0).abs() < 1e-10);
        let l = m.law(0, 0.25, 16).unwrap();
        assert!((l.covariance()[(0, 0)] - 0.25).abs() < 1e-10);

        assert!(m.law(0, 1.0, 3).is_err());
        assert!(m.law(0, 1.0, 65).is_err());
    }

    #[test]
    fn degenerate_diffusion_gives_single_atom() {
        let m = bm(1.0, 0.0);
        let l = m.law(0, 0.7, 16).unwrap();
        assert_eq!(l.len(), 1);
    }

    #[test]
    fn ou_covariance_matches_closed_form() {
        // 1-d: σ² (1 − e^{−2θt}) / (2θ)
        let o = ou(1.5, 0.2, 0.8);
        let t: f64 = 0.6;
        let want = 0.64 * (1.0 - (-3.0 * t).exp()) / 3.0;
        let l = o.law(0, t, 12).unwrap();
        assert!((l.covariance()[(0, 0)] - want).abs() < 1e-12);
    }

    #[test]
    fn two_dimensional_laws_and_flows() {
        let spec = ModelSpec {
            family: ModelFamily::OrnsteinUhlenbeck,
            dim: 2,
            actions: vec![ActionSpec {
                label: "x".into(),
                drift: vec![],
                sigma: vec![vec![1.0, 0.0], vec![0.5, 0.7]],
                theta: vec![vec![1.0, 0.3], vec![0.3, 0.5]],
                kappa: vec![0.1, -0.2],
            }],
        };
        let m = ReferenceModel::new(spec).unwrap();
        let t = 0.4;
        let cov = m.covariance(0, t).unwrap();
        // Riemann-sum reference for ∫_0^t e^{-θu} σσᵀ e^{-θu} du.
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]);
        let ss = m.diffusion(0).clone();
        let n = 4000;
        let mut reference = DMatrix::zeros(2, 2);
        for k in 0..n {
            let u = (k as f64 + 0.5) * t / n as f64;
            let e = (-&theta * u).exp();
            reference += &e * &ss * e.transpose() * (t / n as f64);
        }
        assert!((&cov - reference).abs().max() < 1e-7);
        let l = m.law(0, t, 8).unwrap();
        assert_eq!(l.len(), 64);
        assert!((l.covariance() - &cov).abs().max() < 1e-12);

        let x = [0.4, -1.1];
        let y = m.psi(0, t, &x).unwrap();
        let e = (-&theta * t).exp();
        let mut want = &e * DVector::from_column_slice(&x);
        let kappa = DVector::from_column_slice(&[0.1, -0.2]);
        for k in 0..n {
            let s = (k as f64 + 0.5) * t / n as f64;
            want += (-&theta * s).exp() * &kappa * (t / n as f64);
        }
        assert!((y[0] - want[0]).abs() < 1e-7 && (y[1] - want[1]).abs() < 1e-7);
    }

    #[test]
    fn rejects_invalid_models() {
        let mut s = ModelSpec::ou_1d(&[(-1.0, 0.0, 1.0)]);
        assert!(ReferenceModel::new(s.clone()).is_err());
        s.actions.clear();
        assert!(ReferenceModel::new(s).is_err());
        let mut s = ModelSpec::brownian_1d(&[(0.0, 1.0)]);
        s.actions[0].sigma = vec![vec![1.0, 0.0]];
        assert!(ReferenceModel::new(s).is_err());
        let mut s = ModelSpec::brownian_1d(&[(0.0, 1.0)]);
        s.actions[0].drift = vec![f64::NAN];
        assert!(ReferenceModel::new(s).is_err());
    }

    #[test]
    fn chapman_kolmogorov_residuals() {
        let m = bm(0.2, 1.0);
        let g = Grid::line(-8.0, 8.0, 1025).unwrap();
        let cos = ScalarField::from_fn(&g, |x| x[0].cos()).unwrap();
        assert!(m.check_chapman_kolmogorov(0, 0.0, 0.5, &cos, &[0.3], 16).unwrap() < 1e-10);
        assert!(m.check_chapman_kolmogorov(0, 0.5, 0.0, &cos, &[0.3], 16).unwrap() < 1e-10);
        // One full period on each side keeps the interpolation error of cos
        // symmetric; on [-8, 8] the residual is ~2e-6 at this resolution.
        let tau = 2.0 * std::f64::consts::PI;
        let g2 = Grid::line(-tau, tau, 1025).unwrap();
        let cos2 = ScalarField::from_fn(&g2, |x| x[0].cos()).unwrap();
        let r = m.check_chapman_kolmogorov(0, 0.5, 0.5, &cos2, &[0.0], 32).unwrap();
        assert!(r <= 1e-6, "residual {r}");

        let o = ou(1.0, 0.3, 0.9);
        let tanh = ScalarField::from_fn(&g, |x| x[0].tanh()).unwrap();
        let r = o.check_chapman_kolmogorov(0, 0.25, 0.75, &tanh, &[0.5], 16).unwrap();
        assert!(r <= 1e-4, "residual {r}");
    }

    #[test]
    fn psi_stability_examples() {
        let m = bm(1.0, 1.0);
        let s = m.check_psi_stability(1.0, 2.0, 100, 7).unwrap();
        assert!((s.t0 - 1.0 / 3.0).abs() < 1e-15);
        assert!(s.passed);

        let m = bm(0.0, 1.0);
        let s = m.check_psi_stability(0.0, 1.0, 100, 7).unwrap();
        assert!(s.t0.is_infinite() && s.passed);

        let o = ou(1.0, 0.0, 1.0);
        let s = o.check_psi_stability(1.0, 2.0, 100, 7).unwrap();
        assert!(s.t0 > 0.0 && s.passed);

        assert!(m.check_psi_stability(2.0, 2.0, 10, 0).is_err());
    }

    #[test]
    fn small_time_moments_vanish() {
        let m = ReferenceModel::new(ModelSpec::brownian_1d(&[(0.0, 1.0), (0.5, 2.0)])).unwrap();
        let t: f64 = 1e-3;
        let p = 2.0;
        for a in 0..2 {
            let l = m.law(a, t, 16).unwrap();
            let bound = m.diffusion(a)[(0, 0)];
            assert!(l.moment(p) <= 10.0 * t.powf(p / 2.0) * bound);
        }
    }

    proptest! {
        #[test]
        fn psi_is_nonexpansive(x1 in -5.0..5.0f64, x2 in -5.0..5.0f64, t in 0.0..3.0f64,
                               th in 0.0..2.0f64, k in -1.0..1.0f64, b in -1.0..1.0f64) {
            for m in [bm(b, 1.0), ou(th, k, 1.0)] {
                let y1 = m.psi(0, t, &[x1]).unwrap()[0];
                let y2 = m.psi(0, t, &[x2]).unwrap()[0];
                prop_assert!((y1 - y2).abs() <= (x1 - x2).abs() + 1e-12);
                let c = m.drift_constant();
                prop_assert!((y1 - x1).abs() <= t * c * (1.0 + x1.abs()) + 1e-12);
            }
        }

        #[test]
        fn law_moments_match_covariance(t in 0.01..2.0f64, th in 0.0..2.0f64, s in 0.1..2.0f64,
                                        q in 8usize..32) {
            let m = ou(th, 0.0, s);
            let l = m.law(0, t, q).unwrap();
            let c = m.covariance(0, t).unwrap()[(0, 0)];
            prop_assert!(l.mean()[0].abs() < 1e-8);
            prop_assert!((l.covariance()[(0, 0)] - c).abs() < 1e-8);
        }
    }
}
