//! Exact derivatives of feedforward network outputs with respect to their
//! inputs, and exact gradients of losses built from those derivatives.
//!
//! The forward pass carries every mixed partial `D^s z` needed by a loss
//! through each layer using the multivariate chain rule (the combinatorial
//! Faà di Bruno formula). The backward pass is ordinary reverse-mode
//! accumulation over that enlarged state, and yields gradients with respect
//! to every weight and threshold. With only the zero index in play it is
//! plain backpropagation.
//!
//! Modules, bottom-up:
//!
//! - [`multiindex`]: derivative multi-indices, ordering, closure, binomial
//!   coefficients.
//! - [`faadibruno`]: symbolic expansion of `D^S σ(z)` and its partials.
//! - [`network`]: the network container, activations, model files.
//! - [`propagation`]: batched forward and backward passes, plus a hand-written
//!   two-variable second-order path used for cross-checking.
//! - [`training`]: PDE collocation losses, optimizers, verification oracles.

pub mod activation;
pub mod error;
pub mod faadibruno;
pub mod multiindex;
pub mod network;
pub mod propagation;
pub mod training;

pub use error::{Error, Result};
pub use multiindex::{IndexSet, MultiIndex};
pub use network::{Activation, Network};
