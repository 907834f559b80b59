//! Symbolic regression with built-in linear regression.
//!
//! Three engines that all produce generalized linear models over symbolic bases:
//!
//! - [`mggp`]: multi-gene genetic programming whose gene outputs are combined by
//!   ordinary least squares, with lexicographic parsimony pressure.
//! - [`ffx`]: deterministic Fast Function Extraction (exhaustive basis catalog,
//!   elastic-net path, rational-function form, Pareto front).
//! - [`efs`]: Evolutionary Feature Synthesis (a population of features combined by a
//!   pathwise regularized fit every generation).
//!
//! Supporting modules provide the benchmark datasets ([`dataset`]), the regression
//! cores ([`linreg`]), statistics and rank tables ([`stats`]) and the replication
//! harness ([`harness`]).

pub mod dataset;
pub mod efs;
pub mod error;
pub mod expr;
pub mod ffx;
pub mod harness;
pub mod linreg;
pub mod mggp;
pub mod stats;

pub use error::{Error, Result};
pub use expr::{count_nodes, evaluate, ExprTree, FunctionSet, GlmModel, Model, Op};
