//! Episodic meta-training of the encoder through unrolled EM adaptation,
//! and evaluation on target tasks.

mod adam;
mod eval;
mod loss;
mod train;
mod unrolled;

pub use adam::{adam_update, AdamSettings, Snapshot, TrainState};
pub use eval::{
    evaluate, evaluate_method, evaluate_task, mean_and_stderr, select_b, task_annotations, EvalReport,
    EvalSettings, Method, TaskOutcome,
};
pub use loss::{query_loss, query_loss_grad, QueryLossGrad};
pub use train::{
    episode_gradient, meta_gradient, meta_train, pseudo_hash, Ablation, EpisodeGradient, LogRow, MetaConfig,
    MetaStep, TrainOutcome, Validation,
};
pub use unrolled::UnrolledEm;
