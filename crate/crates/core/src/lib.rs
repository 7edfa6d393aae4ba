//! Multi-period Wasserstein distributionally robust evaluation on grids.
//!
//! Fields live on uniform 1-d/2-d grids ([`Grid`], [`ScalarField`]).
//! Reference dynamics ([`ReferenceModel`]) supply a deterministic flow and a
//! Gaussian noise law per action; the one-step robust operator takes the
//! worst case of the expectation over a Wasserstein ball around that law
//! ([`dual`]) and the best action. Composing steps over ever finer dyadic
//! partitions approximates the scaling limit, which is cross-checked
//! against an explicit monotone scheme for the limiting nonlinear equation
//! ([`pde`]).

// `!(x >= 0.0)` is the NaN-rejecting form used throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dual;
pub mod error;
pub mod field;
pub mod grid;
pub mod models;
pub mod operators;
pub mod pde;
pub mod quadrature;
pub mod validation;

pub use config::ExperimentConfig;
pub use dual::{AmbiguitySpec, DualInstance, DualSolution};
pub use error::{Error, Result};
pub use field::ScalarField;
pub use grid::{CompactWindow, Grid};
pub use models::{ActionSpec, DiscreteMeasure, ModelFamily, ModelSpec, ReferenceModel};
pub use operators::{DyadicSchedule, Mode, OperatorConfig, Partition, ScalingLimit};
pub use pde::{PdeScheme, SpaceTimeField};
pub use validation::functions::{FourierField, TestFunction};
pub use validation::{CheckReport, LimitSettings, Thresholds};
