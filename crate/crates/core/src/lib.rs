//! Surrogate-based calibration of intervertebral disc material parameters.
//!
//! A finite-element simulator maps 13 material parameters to range-of-motion
//! (RoM) tables over load cases and moments. This crate trains a neural
//! surrogate of that map, then inverts it by projected gradient descent on
//! the network inputs, with a genetic algorithm and a direct inverse network
//! as baselines.

pub mod baselines;
pub mod calibrate;
pub mod domain;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod nn;
pub mod oracle;
pub mod sampling;

pub use domain::{
    denormalize, normalize, LoadCase, LoadGrid, MaterialBounds, MaterialConfig, Normalizer, ParamBound, RomTable,
    Space, INPUT_DIM, N_PARAMS,
};
pub use error::{Error, Result};
pub use nn::{NetConfig, SurrogateNet, TrainReport};
pub use oracle::{generate_dataset, oracle_rom, oracle_table, Dataset, DatasetRecord};
