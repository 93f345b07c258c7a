//! Discrete-time simulation of a long fibre Mach-Zehnder interferometer for
//! single photons, with active polarisation compensation in both arms and a
//! side-of-fringe phase lock.
//!
//! Layers, bottom up:
//!
//! - [`optics`]: Jones/Stokes algebra and random SU(2) drift increments.
//! - [`channel`]: the DWDM channel plan and per-arm birefringence/phase drift.
//! - [`interferometer`]: split, propagate, recombine; fibre stretcher.
//! - [`detection`]: gated photon counting and photodiode readout.
//! - [`control`]: polarisation controllers and the phase lock.
//! - [`config`], [`scenario`], [`analysis`], [`output`]: the experiment harness.

pub mod analysis;
pub mod channel;
pub mod config;
pub mod control;
pub mod detection;
pub mod error;
pub mod interferometer;
pub mod optics;
pub mod output;
pub mod scenario;

pub use analysis::{analyze_series, Histogram, VisibilityStats};
pub use config::{load_config, ScenarioConfig, ScenarioId};
pub use detection::{CountSeries, SpcmConfig};
pub use error::{Error, Result};
pub use optics::{JonesMatrix, JonesVector, StokesVector};
pub use scenario::{run_scenario, BinDiagnostics, RunResult, Simulation};
