//! Momentum-resolved simulation of quench-charged free-fermion two-band
//! quantum batteries.
//!
//! A battery is a translation-invariant chain whose Hamiltonian splits into
//! independent `(k, −k)` sectors, each a 2×2 Bloch Hamiltonian. Charging
//! is a sudden quench `H_i → H_f`; every sector then rotates on its Bloch
//! sphere, and stored energy, power, Loschmidt amplitudes and charging
//! fluctuations follow mode by mode.
//!
//! - [`model`]: Bloch Hamiltonians, the transverse-field Ising chain, quench geometry
//! - [`dsl`]: text definitions of arbitrary two-band models
//! - [`dynamics`]: exact single-mode propagators and observables, plus an RK4 oracle
//! - [`ensemble`]: finite-N sums and thermodynamic-limit integrals
//! - [`dqpt`]: critical momenta and times, onset scans, cusp detection
//! - [`sweep`]: deterministic parallel parameter sweeps
//! - [`output`]: CSV/JSON tables and SVG line plots

pub mod dqpt;
pub mod dsl;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod output;
pub mod quadrature;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{tfim_spec, QuenchSetup, TwoBandSpec};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
