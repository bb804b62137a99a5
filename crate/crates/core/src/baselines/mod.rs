//! Reference calibration methods: genetic search on the surrogate and a
//! direct inverse network.

pub mod ga;
pub mod inverse;

pub use ga::{ga_calibrate, ga_search, GaConfig, GaOutcome};
pub use inverse::{inverse_calibrate, train_inverse, InverseNet, InverseNetConfig};
