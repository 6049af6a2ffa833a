//! Control-variates estimation of average treatment effects when the binary
//! exposure is measured with error on the full sample and measured exactly
//! on a validation subsample.
//!
//! The numerical core is generic over the floating-point type; the aliases
//! below fix it to `f64`.

pub mod dgp;
pub mod estimators;
pub mod experiments;
pub mod numerics;
pub mod rng;
pub mod scalar;

pub use scalar::Scalar;

pub type Dataset = estimators::TwoPhaseDataset<f64>;
pub type Report = estimators::EstimateReport<f64>;
pub type CvReport = estimators::ControlVariateReport<f64>;
pub type Config = estimators::NuisanceConfig<f64>;
pub type Design = numerics::DesignMatrix<f64>;
pub type Fit = numerics::NuisanceFit<f64>;
