//! Grid tagging for opinion pair and opinion triplet extraction.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f64`, the working precision.

pub mod autodiff;
pub mod corpus;
pub mod encoders;
pub mod eval;
pub mod grid;
pub mod inference;
pub mod model;
pub mod scalar;
pub mod synthetic;
pub mod training;

pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type ParamStore = autodiff::ParamStore<f64>;
pub type Trained = training::Trained<f64>;
