//! Minimal dense neural-network engine.
//!
//! Weights of an affine layer are stored `in_dim x out_dim` and applied to
//! row-vector batches as `x W + b`.

mod matrix;
mod network;

pub use matrix::DenseMatrix;
pub use network::{
    sigmoid, Activation, AdamConfig, Architecture, Gradients, LayerSpec, NetworkState, Param, Tape,
    LAYER_NORM_EPS,
};

#[cfg(test)]
mod tests;
