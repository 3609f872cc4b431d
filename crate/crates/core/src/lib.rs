//! Vectorial Allen-Cahn simulation on the flat torus together with diagnostics for
//! multiphase mean curvature flow: geodesic surface tensions, dissipation ledgers,
//! sharp-interface certificates and discrete oriented varifolds.
//!
//! Everything numerical is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! bottom of this file fix the double precision flavour used by the command line tool.

pub mod basis;
pub mod error;
pub mod flow;
pub mod geodesic;
pub mod initial;
pub mod localization;
pub mod potential;
pub mod scenario;
pub mod scalar;
pub mod sharp;
pub mod torus;
pub mod varifold;

pub use error::{Error, Result};
pub use potential::{
    validate_assumptions, AssumptionReport, MultiwellPotential, PotentialForm, PotentialSplit,
    RadialCutoff,
};
pub use scalar::Scalar;

pub type Potential = MultiwellPotential<f64>;
pub type Split = PotentialSplit<f64>;
pub type Grid = torus::TorusGrid<f64>;
pub type Field = torus::PhaseField<f64>;
pub type FlowStepper = flow::Stepper<f64>;
pub type Geodesic = geodesic::GeodesicPath<f64>;
