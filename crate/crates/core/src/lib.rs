//! Divide-and-conquer neural architecture search at desk scale.
//!
//! Sub-networks are trained briefly on a reduced dataset while the output
//! of every searchable layer is recorded on a fixed probe set. The cosine
//! drift of those outputs against epoch 1 gives each architecture an
//! `L x eta` trajectory feature; k-means groups architectures with similar
//! convergence behaviour, early stopping picks one champion per group and
//! the champions are compared by full training.

pub mod artifacts;
pub mod compare;
pub mod config;
pub mod data;
pub mod error;
pub mod features;
pub mod kmeans;
pub mod nn;
pub mod pipeline;
pub mod search_space;
pub mod seed;
pub mod selection;
pub mod supernet;
pub mod trainer;

pub use error::{Error, Result};
