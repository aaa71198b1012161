//! Multi-layer convolutional sparse coding.
//!
//! Signals and representations live on a 1-D circular spatial axis with
//! channels. A model is a stack of sparse convolutional layers; the crate
//! provides sampling, pursuit and projection algorithms, dictionary
//! learning, and evaluators for the coherence-based stability bounds.

pub mod analysis;
pub mod conv;
pub mod error;
pub mod learning;
pub mod model;
pub mod pursuit;
pub mod serialize;
pub mod tensor;

pub use conv::{compose, effective_support, ConvLayer, DenseDict, Dictionary, EffectiveDict, KernelEntry};
pub use error::{Error, Result};
pub use model::{LayerStack, MlcscModel};
pub use tensor::{DenseVec, SignalGeometry, SparseVec, StripeWindow};
