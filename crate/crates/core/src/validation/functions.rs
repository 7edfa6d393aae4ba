//! Test data with analytic derivatives: named profiles and seeded random
//! band-limited Fourier sums.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::field::ScalarField;
use crate::grid::Grid;

/// A named smooth profile `g`. In two dimensions it is applied to the
/// diagonal coordinate `s = (x + y) / √2`, so `‖∇f‖ = |g'(s)|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Sin,
    Cos,
    Tanh,
    /// Standard normal CDF `Φ`.
    NormalCdf,
    /// `exp(−s²/2)`.
    GaussianBump,
    Constant(f64),
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl TestFunction {
    /// The coordinate the profile is applied to.
    pub fn diagonal(x: &[f64]) -> f64 {
        match x.len() {
            1 => x[0],
            _ => x.iter().sum::<f64>() / (x.len() as f64).sqrt(),
        }
    }

    /// `(g, g', g'')` at `s`.
    pub fn profile(&self, s: f64) -> (f64, f64, f64) {
        match *self {
            TestFunction::Sin => (s.sin(), s.cos(), -s.sin()),
            TestFunction::Cos => (s.cos(), -s.sin(), -s.cos()),
            TestFunction::Tanh => {
                let t = s.tanh();
                let d = 1.0 - t * t;
                (t, d, -2.0 * t * d)
            }
            TestFunction::NormalCdf => (normal_cdf(s), normal_pdf(s), -s * normal_pdf(s)),
            TestFunction::GaussianBump => {
                let e = (-0.5 * s * s).exp();
                (e, -s * e, (s * s - 1.0) * e)
            }
            TestFunction::Constant(c) => (c, 0.0, 0.0),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.profile(Self::diagonal(x)).0
    }

    pub fn gradient_norm(&self, x: &[f64]) -> f64 {
        self.profile(Self::diagonal(x)).1.abs()
    }

    pub fn sample(&self, grid: &Grid) -> Result<ScalarField> {
        ScalarField::from_fn(grid, |x| self.value(x))
    }

    pub fn sample_gradient_norm(&self, grid: &Grid) -> Result<ScalarField> {
        ScalarField::from_fn(grid, |x| self.gradient_norm(x))
    }

    /// Largest `|g'|` over all reals.
    pub fn lipschitz(&self) -> f64 {
        match self {
            TestFunction::Sin | TestFunction::Cos | TestFunction::Tanh => 1.0,
            TestFunction::NormalCdf => normal_pdf(0.0),
            TestFunction::GaussianBump => (-0.5f64).exp(),
            TestFunction::Constant(_) => 0.0,
        }
    }
}

/// `f(x) = c + Σ_k a_k cos(⟨ω_k, x⟩ + φ_k)` with `|ω_k| ≤ 8` and
/// `Σ |a_k| ≤ 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierField {
    pub offset: f64,
    pub amplitudes: Vec<f64>,
    pub frequencies: Vec<[f64; 2]>,
    pub phases: Vec<f64>,
}

pub const MAX_WAVENUMBER: f64 = 8.0;

impl FourierField {
    pub fn random(rng: &mut ChaCha8Rng, dim: usize, terms: usize) -> Self {
        let raw: Vec<f64> = (0..terms).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let total: f64 = raw.iter().map(|a| a.abs()).sum::<f64>().max(1.0);
        let budget = rng.gen_range(0.2..1.0);
        let amplitudes = raw.iter().map(|a| a * budget / total).collect();
        let frequencies = (0..terms)
            .map(|_| {
                let mut w = [0.0; 2];
                loop {
                    for slot in w.iter_mut().take(dim) {
                        *slot = rng.gen_range(-MAX_WAVENUMBER..MAX_WAVENUMBER);
                    }
                    if (w[0] * w[0] + w[1] * w[1]).sqrt() <= MAX_WAVENUMBER {
                        break;
                    }
                }
                w
            })
            .collect();
        let phases = (0..terms)
            .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        FourierField {
            offset: rng.gen_range(-1.0..1.0),
            amplitudes,
            frequencies,
            phases,
        }
    }

    pub fn seeded(seed: u64, dim: usize, terms: usize) -> Self {
        FourierField::random(&mut ChaCha8Rng::seed_from_u64(seed), dim, terms)
    }

    fn phase(&self, k: usize, x: &[f64]) -> f64 {
        let w = &self.frequencies[k];
        x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.phases[k]
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.offset
            + (0..self.amplitudes.len())
                .map(|k| self.amplitudes[k] * self.phase(k, x).cos())
                .sum::<f64>()
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; 2] {
        let mut g = [0.0; 2];
        for k in 0..self.amplitudes.len() {
            let s = -self.amplitudes[k] * self.phase(k, x).sin();
            for (axis, slot) in g.iter_mut().enumerate().take(x.len()) {
                *slot += s * self.frequencies[k][axis];
            }
        }
        g
    }

    /// `Σ |a_k| |ω_k|`, a global Lipschitz bound.
    pub fn lipschitz_bound(&self) -> f64 {
        self.amplitudes
            .iter()
            .zip(&self.frequencies)
            .map(|(a, w)| a.abs() * (w[0] * w[0] + w[1] * w[1]).sqrt())
            .sum()
    }

    pub fn sample(&self, grid: &Grid) -> Result<ScalarField> {
        ScalarField::from_fn(grid, |x| self.value(x))
    }
}
