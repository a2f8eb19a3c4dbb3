//! Minimal forward-only network engine.

mod activation;
mod graph;
pub mod ops;

pub use activation::ActKind;
pub use graph::{
    forward_traced, forward_traced_using, init_weights, ConvPath, ForwardTrace, GraphBuilder,
    LayerKind, LayerParams, NetworkGraph, Node, WeightSet,
};
