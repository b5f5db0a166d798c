//! Mass-conserving perceptron networks for catchment-scale rainfall-runoff
//! modeling, with a reverse-mode autodiff engine, an LSTM benchmark, KGE
//! metrics, a deterministic data-splitting protocol, a full-batch Adam
//! trainer, and a post-training pruning harness.

pub mod autodiff;
pub mod checkpoint;
pub mod dataio;
pub mod fdcheck;
pub mod lstm;
pub mod metrics;
pub mod network;
pub mod node;
pub mod pruning;
pub mod real;
pub mod seeding;
pub mod trainer;
