//! Propagation-of-chaos laboratory for shallow networks.
//!
//! A finite-width gradient-descent system is coupled to a wide reference
//! ensemble standing in for the mean-field Wasserstein gradient flow. The
//! crate measures the coupling error, the local and interaction Hessians that
//! drive it, RKHS function errors, loss-decay integrals, and runs an Eulerian
//! upwind solver for the same flow on the sphere `S^2`.

pub mod activation;
pub mod data;
pub mod diagnostics;
pub mod domain;
pub mod dynamics;
pub mod ensemble;
pub mod euler;
pub mod error;
pub mod harness;
pub mod hot;
pub mod kernel;
pub mod linalg;
pub mod operators;
pub mod par;
pub mod plot;
pub mod rng;
pub mod targets;

pub use activation::Activation;
pub use data::DataSample;
pub use domain::DomainSpec;
pub use ensemble::{sample_init, Ensemble, InitKind};
pub use error::{Error, Result};
pub use kernel::{KernelSpec, WeightedEnsemble};
pub use rng::RngSpec;
pub use dynamics::{run_coupled, FlowConfig};
pub use diagnostics::LossCurve;
