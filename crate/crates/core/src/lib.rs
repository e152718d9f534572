//! Bohmian Monte Carlo simulation of the double-double-slit experiment with
//! entangled particle pairs.
//!
//! The two-particle state is a symmetrized sum of Gaussian products that
//! evolves in closed form ([`packets`], [`state`]). Initial positions are drawn
//! from `|Ψ₀|²` ([`sampling`]), guidance trajectories are integrated until the
//! particles reach their detector planes, collapsing the state to the
//! survivor's conditional wave function at the first detection
//! ([`dynamics`]). [`ensemble`] runs many trajectories reproducibly and
//! [`stats`] turns the detection records into the joint and marginal
//! statistics.

pub mod cli;
pub mod config;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod packets;
pub mod sampling;
pub mod state;
pub mod stats;

pub use config::{ExperimentParams, IntegratorConfig, Mode, RunMode, SamplerMode, SamplerSpec, Screens, HBAR};
pub use error::Error;
