//! Dense networks, the Adam optimizer and the RoM surrogate.

pub mod adam;
pub mod fit;
pub mod linear;
pub mod mlp;
pub mod surrogate;

pub use adam::Adam;
pub use fit::{FitParams, LossKind, Plateau};
pub use linear::LinearModel;
pub use mlp::{Mlp, OutputActivation};
pub use surrogate::{split_configs, train, train_with_split, InputObjective, NetConfig, SurrogateNet, TrainReport};
