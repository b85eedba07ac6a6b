//! Numerical toolkit for quasilinear equations `-div A(x, ∇u) = σ|u|^{p-2}u`
//! with distributional potentials `σ = f + div Γ`.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`], [`field`], [`quadrature`], [`cutoff`]: radial and tensor meshes,
//!   nodal/cell fields, midpoint quadrature and cutoff families.
//! - [`operators`]: the map `A(x, ξ)` with its structure constants.
//! - [`weights`]: potentials `σ`, their pairing with test functions and mollification.
//! - [`solver`]: damped Newton solves of the Schrödinger-type and Dirichlet problems.
//! - [`analysis`]: form-bound constants, capacities, BMO/doubling statistics.
//! - [`pipeline`]: the exhaustion/mollification construction with its energy diagnostics.
//! - [`decompose`]: log substitution, residual certificates, Riesz/Green potentials
//!   and the `σ = div Γ` construction.
//!
//! All numerical code is generic over a [`Real`] scalar; `f64` aliases are
//! exported at the crate root. Closed-form constants additionally have exact
//! rational versions in [`params::exact`].

pub mod analysis;
pub mod config;
pub mod cutoff;
pub mod decompose;
mod error;
pub mod field;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod mollify;
pub mod operators;
pub mod params;
pub mod pipeline;
pub mod quadrature;
pub mod solver;
pub mod weights;

use std::fmt::{Debug, Display};
use std::iter::Sum;

pub use error::{Error, Result};

/// Floating point scalar used throughout the crate: `f32` or `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::FloatConst
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

/// Converts an `f64` literal into `T`.
#[inline]
pub fn lit<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("literal representable in scalar type")
}

#[inline]
pub(crate) fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

pub type ProblemParams64 = params::ProblemParams<f64>;
pub type Mesh64 = mesh::Mesh<f64>;
pub type ScalarField64 = field::ScalarField<f64>;
pub type CellField64 = field::CellField<f64>;
pub type VectorField64 = field::VectorField<f64>;
pub type CutoffFamily64 = cutoff::CutoffFamily<f64>;
pub type OperatorSpec64 = operators::OperatorSpec<f64>;
pub type Weight64 = weights::Weight<f64>;
pub type MeasureField64 = weights::MeasureField<f64>;
pub type SolveConfig64 = solver::SolveConfig<f64>;
pub type SolveResult64 = solver::SolveResult<f64>;
pub type FormBoundReport64 = analysis::FormBoundReport<f64>;
pub type CapacityReport64 = analysis::CapacityReport<f64>;
pub type DoublingReport64 = analysis::DoublingReport<f64>;
pub type PipelineTrace64 = pipeline::PipelineTrace<f64>;
pub type DecompositionResult64 = decompose::DecompositionResult<f64>;
