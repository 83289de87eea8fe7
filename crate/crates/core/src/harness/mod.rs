//! Experiment orchestration: typed configs, single runs, sweeps, analysis
//! and self-checks. Everything written to disk carries the config hash and
//! tool version.

pub mod analyze;
pub mod config;
pub mod run;
pub mod selftest;
pub mod sweep;

pub use config::{ExperimentConfig, ExperimentKind, ParticleSpec, SweepSpec, ToyOdeSpec};
pub use run::Provenance;
