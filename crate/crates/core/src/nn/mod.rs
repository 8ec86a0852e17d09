//! Hand-differentiated network layers, the CARLE network and its trainer.

pub mod gradcheck;
pub mod layers;
pub mod net;
pub mod optim;
pub mod train;

pub use layers::Layer;
pub use net::{CarleNet, NetConfig, NetOutput, Profile, Variant};
pub use optim::RmsProp;
pub use train::{train, EpochRecord, TrainConfig, TrainReport};
