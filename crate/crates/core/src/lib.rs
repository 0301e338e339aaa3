//! Fidelity of quantum graph states under IID Pauli noise, computed through
//! an equivalent classical spin model.
//!
//! The fidelity `F = <G| rho |G>` of a noisy graph state is a weighted count
//! of stabilizers by their X/Y/Z content. Each stabilizer corresponds to one
//! configuration of Ising spins, its letter counts to an energy, and the noise
//! probabilities to Boltzmann factors, so `F` is a partition function.
//!
//! Solvers:
//!
//! - [`pauli`]: exact enumeration of all `2^n` stabilizers, plus the closed
//!   form for complete graphs.
//! - [`mapping`]: the spin Hamiltonian, couplings and exhaustive spin sums.
//! - [`transfer`]: transfer-matrix solution of the periodic 1D cluster state.
//! - [`montecarlo`]: Metropolis sampling with thermodynamic integration.
//! - [`meanfield`]: self-consistent mean-field theory for cluster states.
//! - [`sweep`]: run configuration, p-grid sweeps and CSV output.

pub mod error;
pub mod graph;
pub mod mapping;
pub mod meanfield;
pub mod montecarlo;
pub mod numeric;
pub mod pauli;
pub mod sweep;
pub mod transfer;

pub use error::{Error, Result};
pub use graph::{build_2d_regular, build_3d_stack, build_complete, build_ring, Graph};
pub use mapping::{coupling_from_noise, CouplingParams, SpinConfig, TermCounts};
pub use pauli::{NoiseModel, PauliString, WeightHistogram, WeightTriple};
