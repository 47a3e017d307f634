//! Simulation core for the microwave-dressed J-coupling gate on a two-ion
//! chain in a static magnetic-field gradient.
//!
//! All frequencies are angular (rad/s) and every Hamiltonian is expressed
//! with ħ = 1. Times are in seconds.

pub mod analytic;
pub mod config;
pub mod error;
pub mod experiments;
pub mod hamiltonian;
pub mod hilbert;
pub mod ion_physics;
pub mod mcwf;
pub mod noise;
pub mod ode;
pub mod propagate;
pub mod stats;

pub use num_complex::Complex64 as C64;

pub use analytic::{ErrorBudget, EvolutionAmplitudes};
pub use error::{Error, Result};
pub use hamiltonian::{DriveTag, Envelope, Frame, HamiltonianModel, Term};
pub use hilbert::{BasisLayout, DressedLevel, Operator, OperatorKind, SpinLevel, StateVector};
pub use ion_physics::{CouplingSet, ModeSpectrum, Sensitivities, SystemParams};
pub use mcwf::{CollapseSet, TrajectoryBatch};
pub use noise::{NoiseTrace, OUParams, PddSchedule, VoltageNoiseParams};
pub use propagate::{FidelityReport, PropagationSpec};
