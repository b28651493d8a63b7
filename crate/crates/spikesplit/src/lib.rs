//! Event-focused simulation of neuromorphic circuits by operator splitting.
//!
//! Circuits built from capacitive membranes, first-order lags and saturating
//! conductance branches are stiff, multiscale and never monotone as a whole,
//! but they decompose naturally into a difference of monotone operators:
//! `E(x) + sum_i (F_i(x) - G_i(x)) = 0`. This crate solves that zero-finding
//! problem with a consensus-based Douglas-Rachford iteration whose resolvents
//! follow the circuit topology, hopping between the frequency domain (for the
//! LTI parts) and the time domain (for the static nonlinearities).
//!
//! The crate is organized around the pipeline:
//!
//! - [`signal`]: trajectories on uniform periodic grids, inner products,
//!   transforms, band-limited resampling.
//! - [`operators`]: lags, differentiators, conductance branches, resolvents
//!   and the consensus-set machinery.
//! - [`circuit`]: neuron/synapse/network descriptions, the network operator,
//!   residual evaluation and the difference-of-monotone splitting.
//! - [`solver`]: the consensus Douglas-Rachford loop, termination,
//!   continuation sweeps, coarse-to-fine refinement and event templates.
//! - [`reference`]: a state-space reformulation with an adaptive implicit
//!   integrator, event detection and trajectory comparison metrics.
//! - [`runner`]: run-spec ingestion, orchestration and reproducible outputs.
//!
//! See the `examples/` directory for one runnable example per capability and
//! the `spikesplit` binary for the command-line frontend.

pub mod circuit;
pub mod error;
mod fft;
pub mod operators;
pub mod reference;
pub mod runner;
pub mod signal;
pub mod solver;

pub use error::{Error, Result};
pub use signal::{LiftedSignal, Signal, Spectrum, TimeGrid};
