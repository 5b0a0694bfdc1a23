//! Design and verification of phonon-mediated two-qubit gates in
//! self-assembled dipolar crystals of polar molecules.
//!
//! Internal unit system: lengths in the mean spacing `a`, energies and
//! frequencies in `D/a³` (with `ħ = 1`). Consistency with the crystal
//! parameter `r_d = D m / (ħ² a)` then fixes the molecular mass at
//! `m = r_d`; see [`params::ModelParams::mass`].
//!
//! Module map:
//! - [`params`]: model parameters, physical unit bindings, tweezer window
//! - [`rotor`]: rigid-rotor Stark spectrum
//! - [`dressed`]: microwave-dressed, state-dependent dipole moments
//! - [`crystal`]: dipole-dipole potential and equilibrium geometries
//! - [`phonons`]: dynamical matrix, normal modes, local-mode detection
//! - [`coupling`]: spin-phonon couplings, effective spin model, gate metrics
//! - [`scenario`]: named scenarios, parameter sweeps and file output

pub mod coupling;
pub mod crystal;
pub mod dressed;
mod error;
pub mod output;
pub mod params;
pub mod phonons;
pub mod rotor;
pub mod scenario;

pub use error::{Error, Result};
