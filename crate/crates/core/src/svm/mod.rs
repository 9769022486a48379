//! Linear SVM engine: the dual coordinate descent solver and one-vs-rest
//! classifier banks built on it.

mod bank;
mod solver;

pub use bank::{argmax, train_ovr, ClassifierBank, Standardizer};
pub use solver::{
    dual_objective, primal_objective, train_binary, train_binary_traced, LinearModel, TrainConfig,
    TrainTrace,
};
