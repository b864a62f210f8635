//! Tubelet-embedding video transformer with 88 sigmoid heads, weighted BCE,
//! AdamW and a warmup + cosine schedule.

mod config;
mod loss;
mod network;
mod optim;
mod params;
mod scalar;
mod schedule;

pub use config::ModelConfig;
pub use loss::{bce_logit_grad, loss_weighted_bce, EPS};
pub use network::{extract_tubelets, forward, grad, logits, sigmoid};
pub use optim::{adamw_step, AdamWConfig, AdamWState};
pub use params::{
    decode_checkpoint, encode_checkpoint, init_params, load_checkpoint, save_checkpoint,
    BlockOffsets, Gradients, InitKind, InputNorm, Layout, ModelParams, TensorSpec, INIT_STD,
};
pub use scalar::{gemm, Mat, MatMut, Scalar};
pub use schedule::{lr_schedule, warmup_steps};
