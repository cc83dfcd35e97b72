//! VAEL: a variational autoencoder whose symbolic latent code parameterises a
//! probabilistic logic program.

pub mod autodiff;
pub mod plp;
pub mod data;
pub mod model;
pub mod eval;
pub mod training;
