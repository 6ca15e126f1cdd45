//! Simulation and reconstruction toolkit for spatial-mode qudit tomography
//! with a deformable mirror as the measurement device.
//!
//! The four-dimensional Hilbert space is spanned by the Hermite-Gaussian
//! modes HG00, HG01, HG10 and HG11, in that order. A measurement setting is a
//! mirror shape followed by coupling into a single-mode fiber.

pub mod error;
pub mod mirror;
pub mod optics;
pub mod optim;
pub mod pipeline;
pub mod protocol;
pub mod qlin;
pub mod tomo;

pub use error::{Error, Result};
pub use mirror::{
    ActuatorLayout, InfluenceModel, MirrorModel, MirrorState, PhaseMask, TransferMatrix,
};
pub use optics::{BeamParams, Field, Grid, ModeBasis};
pub use pipeline::{run_pipeline, Experiment, ExperimentConfig, RunReport, Scenario};
pub use protocol::{build_mub_d4, MubSet};
pub use qlin::{CMatrix, DensityMatrix, HermitianOperator, PureState};
pub use tomo::{CountingModel, CountsRecord, Estimator, ProbabilityMatrix, Projector, StateCounts};
