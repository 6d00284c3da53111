//! Simulation and numerical analysis of join-shortest-of-L queueing
//! networks: exact event-driven simulation of the N-queue system in its
//! aggregated tail representation, the deterministic mean-field ODE limit,
//! the linearized spectral theory of the stationary profile, and the
//! Ornstein-Uhlenbeck fluctuation limit with its stationary covariance.
//!
//! Layout:
//! - [`model`] — shared state/norm types (parameters, tail vectors,
//!   weight sequences, weighted norms)
//! - [`meanfield`] — drift maps, finite-N corrections, fixed point,
//!   RK4 integration, decay fitting
//! - [`network_sim`] — Gillespie simulation (aggregate and per-queue),
//!   equilibrium sampling, fluctuation extraction
//! - [`linear_ops`] — truncated tridiagonal operators, potential
//!   coefficients, orthogonal-polynomial recurrence, spectral gap,
//!   linear semigroup
//! - [`ou_process`] — noise variances, Euler-Maruyama and exact OU
//!   sampling, stationary covariance via Lyapunov and quadrature
//! - [`clt_harness`] — cross-module experiments (law of large numbers,
//!   transient/equilibrium central limit checks, stability fits)
//!
//! All randomness flows from explicit 64-bit seeds through a counter-based
//! generator with one documented stream per replica, so every result is
//! reproducible bit-for-bit.

pub mod clt_harness;
pub mod error;
pub mod export;
pub mod linear_ops;
pub mod meanfield;
pub mod model;
pub mod network_sim;
pub mod ou_process;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
