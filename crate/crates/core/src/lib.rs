//! Simulation of excitation transport through a small 2D qubit metamaterial
//! whose couplings carry a tunable Peierls-like phase.
//!
//! The crate assembles the phase-twisted XY Hamiltonian on a qubit graph
//! ([`model`]), evolves quantum-jump trajectories with an input pump and
//! output detectors ([`trajectory`]), aggregates detector clicks and their
//! correlations ([`stats`]), and cross-checks the trajectory ensemble against
//! a dense Lindblad master-equation integrator ([`oracle`]). The [`cli`]
//! module wires these into parameter sweeps with deterministic output files.

pub mod cli;
pub mod dense;
pub mod error;
pub mod hilbert;
pub mod model;
pub mod oracle;
pub mod stats;
pub mod trajectory;

#[doc(hidden)]
pub mod test_util;

pub use error::{Error, Result};
