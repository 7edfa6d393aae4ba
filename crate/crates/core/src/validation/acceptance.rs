//! The numbered acceptance criteria, each a fixed experiment on top of the
//! grid and numerics of a base configuration.

use serde_json::json;

use super::functions::{normal_cdf, TestFunction};
use super::{
    check_dual_oracle, check_generator, check_lipschitz, check_operator_properties,
    check_refinement_monotonicity, check_semigroup, check_sensitivity, cross_check_pde,
    refinement_certificate, CheckReport, Oracle,
};
use crate::config::ExperimentConfig;
use crate::error::{input, Result};
use crate::models::ModelSpec;
use crate::operators::OperatorConfig;

pub const COUNT: usize = 11;

pub const NAMES: [&str; COUNT] = [
    "dual_oracle",
    "contraction_monotonicity",
    "lipschitz_propagation",
    "refinement_monotonicity",
    "sensitivity_limit",
    "generator_identity",
    "semigroup_property",
    "heat_anchor",
    "monotone_data_closed_form",
    "min_max_cross_check",
    "refinement_certificates",
];

/// Runtime budget of each criterion in seconds.
pub const BUDGET_SECONDS: [f64; COUNT] = [60.0, 120.0, 60.0, 180.0, 120.0, 300.0, 600.0, 120.0, 600.0, 900.0, 1800.0];

const PROPERTY_TIMES: [f64; 3] = [0.05, 0.1, 0.5];
const SENSITIVITY_TIMES: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn brownian(actions: &[(f64, f64)]) -> ModelSpec {
    ModelSpec::brownian_1d(actions)
}

fn two_actions() -> ModelSpec {
    brownian(&[(-0.5, 1.0), (0.5, 1.0)])
}

fn operator(base: &ExperimentConfig, model: ModelSpec, m: f64) -> Result<(ExperimentConfig, OperatorConfig)> {
    let mut c = base.clone();
    c.model = model;
    c.ambiguity.m = m;
    let op = c.operator_config()?;
    Ok((c, op))
}

fn heat_oracle(x: &[f64]) -> f64 {
    (-0.25f64).exp() * x[0].cos()
}

/// `Φ((x + m T)/√(1 + T))` for `m = 0.5`, `T = 1`.
fn monotone_oracle(x: &[f64]) -> f64 {
    normal_cdf((x[0] + 0.5) / 2f64.sqrt())
}

struct Anchor {
    name: &'static str,
    model: ModelSpec,
    m: f64,
    u0: TestFunction,
    horizon: f64,
    tolerance: f64,
    oracle: Option<Oracle<'static>>,
}

fn anchors() -> [Anchor; 3] {
    [
        Anchor {
            name: "heat_anchor",
            model: brownian(&[(0.0, 1.0)]),
            m: 0.0,
            u0: TestFunction::Cos,
            horizon: 0.5,
            tolerance: 5e-3,
            oracle: Some(&heat_oracle),
        },
        Anchor {
            name: "monotone_data_closed_form",
            model: brownian(&[(0.0, 1.0)]),
            m: 0.5,
            u0: TestFunction::NormalCdf,
            horizon: 1.0,
            tolerance: 1e-2,
            oracle: Some(&monotone_oracle),
        },
        Anchor {
            name: "min_max_cross_check",
            model: two_actions(),
            m: 0.25,
            u0: TestFunction::Tanh,
            horizon: 0.5,
            tolerance: 2e-2,
            oracle: None,
        },
    ]
}

/// Runs criterion `n` (1-based).
pub fn criterion(n: usize, base: &ExperimentConfig) -> Result<CheckReport> {
    base.validate()?;
    let th = &base.thresholds;
    let p = &base.experiment.parameters;
    let settings = base.limit_settings();
    let window = &settings.window;
    let mut report = match n {
        1 => check_dual_oracle(p.oracle_trials.max(200), p.seed, base.numerics.dual_tol, th)?,
        2 => {
            let (_, op) = operator(base, two_actions(), base.ambiguity.m)?;
            check_operator_properties(&op, p.trials.max(100), p.seed, &PROPERTY_TIMES, th)?
        }
        3 => {
            let (_, op) = operator(base, two_actions(), base.ambiguity.m)?;
            check_lipschitz(&op, p.trials.max(100), p.seed, &PROPERTY_TIMES, th)?
        }
        4 => {
            let (_, op) = operator(base, brownian(&[(0.0, 1.0)]), 0.5)?;
            check_refinement_monotonicity(&op, TestFunction::Tanh, 1.0, 6, window, th)?
        }
        5 => {
            let (_, op) = operator(base, brownian(&[(0.0, 1.0)]), 1.0)?;
            check_sensitivity(&op, TestFunction::Sin, &SENSITIVITY_TIMES, window, th)?
        }
        6 => {
            let (_, op) = operator(base, brownian(&[(0.0, 1.0)]), 0.5)?;
            check_generator(&op, TestFunction::Cos, &[0.05], &settings, th)?
        }
        7 => {
            let (_, op) = operator(base, brownian(&[(0.0, 1.0)]), 0.5)?;
            check_semigroup(&op, TestFunction::Tanh, &[(0.25, 0.25)], &settings, th)?
        }
        8..=10 => {
            let a = &anchors()[n - 8];
            let (_, op) = operator(base, a.model.clone(), a.m)?;
            cross_check_pde(a.name, &op, a.u0, a.horizon, &settings, a.tolerance, a.oracle, th)?
        }
        11 => certificates(base)?,
        _ => return input(format!("criteria are numbered 1..={COUNT}, got {n}")),
    };
    report.name = format!("{n:02}_{}", NAMES[n - 1]);
    Ok(report)
}

/// Criterion 11: every anchor re-run at doubled resolution; one report
/// with the changes of all three.
fn certificates(base: &ExperimentConfig) -> Result<CheckReport> {
    let settings = base.limit_settings();
    let mut merged: Option<CheckReport> = None;
    let mut params = serde_json::Map::new();
    for a in anchors() {
        let (_, op) = operator(base, a.model.clone(), a.m)?;
        let r = refinement_certificate(a.name, &op, a.u0, a.horizon, &settings, a.tolerance, &base.thresholds)?;
        params.insert(a.name.into(), r.parameters.clone());
        let prefix = |v: Vec<(String, f64)>| -> Vec<(String, f64)> {
            v.into_iter().map(|(l, x)| (format!("{}.{l}", a.name), x)).collect()
        };
        let r = CheckReport {
            measured_errors: prefix(r.measured_errors),
            thresholds: prefix(r.thresholds),
            diagnostics: prefix(r.diagnostics),
            ..r
        };
        merged = Some(match merged {
            None => r,
            Some(mut m) => {
                m.measured_errors.extend(r.measured_errors);
                m.thresholds.extend(r.thresholds);
                m.diagnostics.extend(r.diagnostics);
                m.runtime_seconds += r.runtime_seconds;
                m.passed &= r.passed;
                m
            }
        });
    }
    let mut m = merged.expect("three anchors");
    m.parameters = json!(params);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_at_the_origin() {
        assert!((monotone_oracle(&[0.0]) - 0.6382).abs() < 1e-4);
        assert!((heat_oracle(&[0.0]) - 0.778_800_783_071_404_9).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_criterion_is_an_input_error() {
        let c = ExperimentConfig::default();
        assert!(criterion(0, &c).is_err());
        assert!(criterion(12, &c).is_err());
    }

    #[test]
    fn cheap_criteria_on_a_coarse_grid() {
        let mut c = ExperimentConfig::default();
        c.grid.n = 129;
        c.experiment.parameters.trials = 4;
        c.experiment.parameters.oracle_trials = 8;
        for n in [1, 2, 3] {
            let r = criterion(n, &c).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.name.starts_with(&format!("{n:02}_")));
        }
    }
}
