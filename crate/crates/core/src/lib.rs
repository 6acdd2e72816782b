//! Aspect-level sentiment classification over dependency graphs.
//!
//! A sentence is embedded, encoded by a bidirectional LSTM and a
//! transformer block, propagated over its dependency tree by stacked
//! bidirectional graph convolutions weighted by relation frequency, and
//! pooled around the aspect span before a softmax classifier.

pub mod autodiff;
pub mod bigcn;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod head;
pub mod model;
pub mod rng;
pub mod suite;
pub mod synthetic;
pub mod syntax;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Matrix;
