//! Entropy-optimal feed-forward networks.
//!
//! A network maps an input point through a weighted codebook layer and a stack
//! of conditional-probability layers to a label distribution. Training is block
//! coordinate descent where every block has a closed-form minimizer, so the
//! loss never increases and no gradients are involved.

mod codec;
pub mod adversarial;
pub mod datagen;
pub mod error;
pub mod inference;
pub mod model;
pub mod simplex;
pub mod training;

pub use codec::{FORMAT_VERSION, MAGIC};
pub use error::{EonError, Result};
pub use model::{AMatrices, EonModel, Gamma0, Gamma0Mode, Hyperparameters, Violation};
pub use simplex::{BlockVector, ProbVector, StochasticMatrix};
