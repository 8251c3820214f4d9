//! Lattice laboratory for mean-field boson dynamics.
//!
//! The crate simulates `N` interacting bosons on a small periodic lattice and
//! compares their one-particle reduced dynamics against the corresponding
//! nonlinear one-body (Hartree) evolution. It provides:
//!
//! - [`lattice`]: periodic grids, power-law interaction samples, fields, FFT
//!   helpers and discrete Laplacians;
//! - [`hartree`]: the nonlinear one-body flow via Strang splitting;
//! - [`fock`]: a truncated occupation-number basis with ladder operators and
//!   second quantization;
//! - [`coherent`]: coherent and product states, Weyl displacement, sector
//!   statistics;
//! - [`generators`]: sparse assembly of the many-body Hamiltonian and of the
//!   time-dependent fluctuation generators around a Hartree trajectory;
//! - [`propagate`]: Krylov `exp(-iGt)` application and the time steppers;
//! - [`observe`]: reduced density matrices, trace distance, comparison
//!   functionals;
//! - [`experiments`]: convergence-rate scans and fluctuation test suites;
//! - [`config`]: TOML run configuration shared by the CLI subcommands.

pub mod coherent;
pub mod config;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod generators;
pub mod hartree;
pub mod lattice;
pub mod observe;
pub mod propagate;

pub use error::{MfError, Result};
