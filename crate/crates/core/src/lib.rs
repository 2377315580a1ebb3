pub mod ctmc;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod freshness;
pub mod policy;
pub mod quadrature;
pub mod sim;
pub mod spectral;
pub mod uniformization;

pub use ctmc::{Ctmc, Kernel, Route, SpectrumClass};
pub use error::{Error, Result};
pub use estimators::{Estimator, MapPoints, MapScan, StagePlan, StageSequence};
