//! Wald-type inference on varying coefficients in spatial regression models.
//!
//! The pipeline: build series approximations of the varying coefficients
//! ([`basis`]), assemble model designs and instrument menus ([`design`]),
//! estimate by two-stage least squares ([`estimator`]), estimate spatially
//! robust covariance matrices ([`shac`]), and evaluate normalized Wald
//! statistics with normal and chi-square calibrations ([`wald`]). The
//! [`dgp`] and [`harness`] modules generate the synthetic experiments and
//! drive Monte Carlo size/power tables and CSV workflows.

pub mod basis;
pub mod design;
pub mod dgp;
pub mod error;
pub mod estimator;
pub mod harness;
mod linalg;
pub mod shac;
pub mod wald;
pub mod weights;

pub use basis::{BasisFamily, BasisMatrix, BasisSpec};
pub use design::{BlockName, DesignBundle, InstrumentMenu, Selector};
pub use dgp::{Dataset, DgpConfig, DgpScaffold, ErrorDist, ErrorStructure, LambdaMode, V2Scale};
pub use error::{Error, Result};
pub use estimator::{tsls, TslsFit};
pub use harness::{ExperimentPlan, GridPoint, RejectionTable};
pub use shac::{DistanceSet, KernelSpec, ShacEstimate};
pub use wald::{run_test, TestId, TestSettings, VarianceMode, WaldReport};
pub use weights::SpatialWeights;
