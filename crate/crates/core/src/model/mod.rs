//! The assembled detector: configuration, forward passes with and without
//! the auxiliary branch, the composite loss, and the optimizer.

mod config;
mod loss;
mod net;
mod optim;

pub use config::ModelConfig;
pub use loss::{
    compute_loss, compute_loss_with, plan_grid, plan_loss, GridPlan, Loss, LossBreakdown, LossHyper, LossOptions,
    LossPlan,
};
pub use net::{Mode, Model, Predictions};
pub use optim::Sgd;
