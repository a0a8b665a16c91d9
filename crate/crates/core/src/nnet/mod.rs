//! Small fused MLP for video question answering with hand-written gradients.

pub mod checkpoint;
pub mod forward;
pub mod gradcheck;
pub mod loss;
pub mod params;

pub use checkpoint::{load_checkpoint, params_hash, save_checkpoint, Checkpoint};
pub use forward::{
    argmax, backward_mcqa, backward_oeqa, encode_question, forward_mcqa, forward_mcqa_tokens,
    forward_oeqa, McqaOutput, OeqaOutput,
};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use loss::{loss_mcqa, loss_oeqa, mcqa_loss_and_grad, oeqa_loss_and_grad, OeqaObjective};
pub use params::{ModelConfig, ModelParams, Tensors};
