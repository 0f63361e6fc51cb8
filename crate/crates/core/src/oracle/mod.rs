//! Closed-form velocities for empirical distributions and the checks built on
//! them.

mod exact;
mod probe;

pub use exact::{decomposition_rhs, DatasetOracle};
pub use probe::{
    capacity_atom, capacity_probe, verify_decomposition, CapacityConfig, CapacityEntry, CapacityReport,
    DecompositionConfig, DecompositionReport,
};
