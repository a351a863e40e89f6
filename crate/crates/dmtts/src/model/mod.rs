//! Decoder-only transformer with grouped-query attention, per-layer dialect
//! cross-attention, and a dialectal mixture-of-experts feed-forward.

pub mod attention;
pub mod ckpt;
pub mod config;
pub mod cross_attention;
pub mod decode;
pub mod forward;
pub mod moe;
pub mod params;

pub use attention::{gqa_attention, gqa_forward_train, tiled_attention, SimpleKvCache};
pub use ckpt::{load_checkpoint, save_checkpoint, CkptHeader};
pub use config::ModelConfig;
pub use cross_attention::cross_attention_forward;
pub use decode::{decode_extend, greedy_decode, DecodeState};
pub use forward::{
    accumulate_grads_from_dlogits, batch_loss, build_input, forward, forward_hidden,
    loss_and_grads, masked_logits_row, ForwardTrace, TrainItem,
};
pub use moe::moe_forward;
pub use params::{init_params, ExpertParams, LayerParams, Parameters};
