//! Interbank contagion dynamics and central-bank intervention planning.
//!
//! The crate simulates the SIR model of contagion spread across a fixed pool
//! of banks, solves the intervention problem that minimizes terminal
//! infections plus quadratic assistance cost, and recovers model parameters
//! from scenario targets when they are not known directly.
//!
//! Layers, bottom up:
//!
//! - [`model`]: compartment types and the uncontrolled / controlled / Mayer
//!   vector fields.
//! - [`integrator`]: deterministic fixed-step RK4 over a uniform mesh and
//!   the contagion-free-time scan.
//! - [`ocp`]: the intervention problem with cost evaluation, a
//!   forward-backward sweep solver, a direct transcription solver with
//!   adjoint gradients, and weight sweeps.
//! - [`calibration`]: Nelder-Mead recovery of (beta, gamma) from observable
//!   targets such as the infected count at a given day.
//!
//! Everything is pure and deterministic: no global state, no randomness,
//! bit-identical reruns.

pub mod calibration;
pub mod error;
pub mod integrator;
pub mod model;
pub mod ocp;

pub use error::{Error, Result};
pub use integrator::{integrate, time_to_contagion_free, TimeGrid, Trajectory};
pub use model::{
    controlled_field, mayer_field, sir_field, ControlGrid, InitialConditions, Parameters,
    SirState,
};
pub use ocp::{
    evaluate_cost, pmp_control_candidate, solve_direct, solve_fbsm, sweep_weight, AdjointState,
    OcpSpec, SolveReport, SolverChoice,
};
