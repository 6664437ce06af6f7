//! Coupled map lattices of piecewise linear expanding maps: simulation,
//! synchronization diagnostics, planar component geometry and lemma constants.

pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod lattice;
pub mod lemma_calc;
pub mod maps;
pub mod precision;
pub mod rng;

pub use error::{CmlError, Result};
pub use lattice::{CouplingTopology, Lattice, State, TopologyKind};
pub use maps::{MapKind, PiecewiseLinearMap};
pub use precision::PrecisionMode;
