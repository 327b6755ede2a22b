//! Collocation training for differential equations.
//!
//! A [`PdeProblem`] describes the operator, right-hand side, box domain and
//! boundary data. [`loss_and_seeds`] turns network outputs into the loss and
//! the output-layer seeds consumed by the backward pass, and [`train`] runs
//! gradient descent or iRprop⁻ on top. [`oracles`] holds independent
//! reference implementations used by the tests.

pub mod functions;
pub mod loss;
pub mod optimizer;
pub mod oracles;
pub mod problem;
pub mod train;

pub use functions::{FnSpec, NamedFn, PointFn};
pub use loss::{loss_and_seeds, residuals};
pub use optimizer::{Optimizer, OptimizerConfig, OptimizerKind};
pub use oracles::{fd_weight_gradients, nested_first_order_oracle, plain_backprop};
pub use problem::{
    evaluation_grid, tensor_grid, BoundaryCondition, BoxDomain, Collocation, Face, OperatorTerm,
    PdeProblem,
};
pub use train::{
    grid_report, train, train_with_options, ErrorStats, Evaluator, TrainOptions, TrainReport,
};
