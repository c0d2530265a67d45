//! Type II variational numerics for Hamiltonian systems.
//!
//! The crate is organized bottom-up:
//!
//! - [`problem`], [`newton`]: problem data, derivatives, the shared Newton solver.
//! - [`integrators`]: discrete Hamiltonians `H_d^+(q_k, p_{k+1})` and the maps they generate.
//! - [`bvp`]: boundary value problems of the five classical types plus the free-boundary variant.
//! - [`hamel`]: trivialized dynamics on parallelizable manifolds.
//! - [`adjoint`], [`optcontrol`]: sensitivities and Pontryagin sweeps built on the Type II sweep.
//! - [`accelopt`]: Bregman-Hamiltonian accelerated optimization.

pub mod accelopt;
pub mod adjoint;
pub mod bvp;
pub mod error;
pub mod fit;
pub mod hamel;
pub mod integrators;
pub mod newton;
pub mod optcontrol;
pub mod problem;
pub mod problems;

pub use error::{Error, Result};
pub use newton::{newton_solve, NewtonOptions, NewtonSolution};
pub use problem::{
    degeneracy_class, hamiltonian_vector_field, AutoHamiltonian, Degeneracy, DerivativeMode,
    HamiltonianProblem, PhasePoint, Scalar, Trajectory,
};
