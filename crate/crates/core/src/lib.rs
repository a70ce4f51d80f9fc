//! Denoising-collision quantum lattice Boltzmann toolkit.
//!
//! * [`lattice`]: D1Q3/D2Q9 velocity sets, weights, symmetries.
//! * [`classical_lbm`]: BGK reference solver.
//! * [`denoise`]: Hermite basis, equilibrium amplitudes, projectors and error bounds.
//! * [`qlbm_core`]: amplitude-level emulation of the quantum algorithm.
//! * [`circuits`]: dense/structured construction and verification of the gate-level operators.
//! * [`bench`]: benchmark cases, analytic references, error metrics and run harness.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod bench;
pub mod circuits;
pub mod classical_lbm;
pub mod denoise;
pub mod dump;
pub mod error;
pub mod exec;
pub mod grid;
pub mod lattice;
pub mod qlbm_core;
pub mod verify;

pub use error::{BenchError, CircuitError, DenoiseError, LatticeError, LbmError, QlbmError};
pub use exec::Exec;
pub use grid::{BounceBack, Grid, SolidMask};
pub use lattice::{make_lattice, LatticeId, LatticeModel};
