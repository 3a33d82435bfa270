//! Loss, optimizers, schedule, training loop, evaluation and gradient checks.

mod gradcheck;
mod loss;
mod optim;
mod trainer;

pub use gradcheck::{check_component, grad_check, relative_error, GradCheckOptions, GradCheckReport, COMPONENTS};
pub use loss::{argmax_rows, cross_entropy, softmax_rows};
pub use optim::{adam_step, lr_at, sgd_step, OptimConfig, OptimKind, Optimizer};
pub use trainer::{
    eval_noise, evaluate, history_path, overfit, train, Accuracy, EpochRecord, OverfitReport, TrainConfig,
    TrainHistory, EVAL_SEED,
};
