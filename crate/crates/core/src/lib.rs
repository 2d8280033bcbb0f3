//! Persistent random walks and the partial differential equations they
//! generate in 1+1 dimensions.
//!
//! The crate covers the whole chain: Monte-Carlo walkers and exact lattice
//! iteration of the two-speed master equation ([`stochastic`]), explicit
//! finite-difference solvers for the linear and nonlinear limits together
//! with a residual oracle ([`solvers`]), exact Lie-algebra arithmetic and
//! group flows for the point symmetries of those equations ([`symmetry`]),
//! similarity reductions ([`similarity`]) and the flux/hodograph
//! linearization of nonlinear diffusion ([`transform`]).

pub mod error;
pub mod grid;
pub mod interp;
pub mod ode;
pub mod similarity;
pub mod solvers;
pub mod stochastic;
pub mod symmetry;
pub mod transform;

pub use error::{Error, Result};
pub use grid::{BoundaryCondition, DirichletValues, FieldHistory, NormKind, SpaceTimeGrid};
