//! Character-level text generation with recurrent WGAN-GP models.
//!
//! A GRU generator and a GRU discriminator are trained adversarially on raw
//! characters, optionally under a length curriculum, variable-length batches
//! and teacher-helped prefixes. Samples are scored by the fraction of their
//! word n-grams that occur in a held-out corpus.

pub mod autodiff;
pub mod checkpoint;
pub mod curriculum;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod optim;
pub mod recnet;
pub mod textdata;
pub mod trainer;
pub mod wgan;
pub mod scalar;

pub use autodiff::{Tape, Tensor, Var};
pub use error::{CheckpointError, Error, Result};
pub use scalar::Scalar;
