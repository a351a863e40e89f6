//! Incremental autoregressive decoding over per-layer KV caches, plus a
//! greedy decoder. This is the full-precision reference path; the serving
//! engine reimplements the same loop with paged caches and quantization.

use crate::error::{Error, Result};
use crate::model::attention::{gqa_attention, SimpleKvCache};
use crate::model::config::ModelConfig;
use crate::model::cross_attention::cross_attention_forward;
use crate::model::forward::{build_input, masked_logits_row};
use crate::model::moe::moe_forward;
use crate::model::params::Parameters;
use crate::numerics::ops::{argmax, layer_norm_forward, LnCache};
use crate::numerics::tensor::Tensor;

/// Per-layer KV caches plus the running position for one decode session.
#[derive(Debug, Clone)]
pub struct DecodeState {
    dialect_id: u32,
    caches: Vec<SimpleKvCache>,
    len: usize,
}

impl DecodeState {
    pub fn new(cfg: &ModelConfig, dialect_id: u32) -> Result<DecodeState> {
        if dialect_id >= cfg.vocab.n_dialects {
            return Err(Error::Data(format!(
                "unknown dialect id {dialect_id} (n_dialects = {})",
                cfg.vocab.n_dialects
            )));
        }
        Ok(DecodeState {
            dialect_id,
            caches: vec![SimpleKvCache::default(); cfg.n_layers],
            len: 0,
        })
    }

    /// Number of positions fed so far.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Feeds `ids` as the next positions of the sequence and returns the masked
/// full-vocabulary logits at the last fed position.
pub fn decode_extend(
    params: &Parameters,
    cfg: &ModelConfig,
    state: &mut DecodeState,
    ids: &[u32],
) -> Result<Vec<f64>> {
    let t = ids.len();
    let d = cfg.d_model;
    if t == 0 {
        return Err(Error::Data("decode_extend needs at least one token".into()));
    }
    if state.len + t > cfg.max_seq_len {
        return Err(Error::Capacity(format!(
            "sequence length {} exceeds max_seq_len {}",
            state.len + t,
            cfg.max_seq_len
        )));
    }
    let v = cfg.vocab.total();
    let mut x = Tensor::zeros(&[t, d]);
    for (i, &id) in ids.iter().enumerate() {
        if id >= v {
            return Err(Error::Data(format!("token id {id} outside vocab of {v}")));
        }
        let pos = state.len + i;
        let row = x.row_mut(i);
        for ((o, &e), &p) in row
            .iter_mut()
            .zip(params.tok_emb.row(id as usize))
            .zip(params.pos_emb.row(pos))
        {
            *o = e + p;
        }
    }
    for (lp, cache) in params.layers.iter().zip(&mut state.caches) {
        let mut a = Tensor::zeros(&[t, d]);
        let mut ln1_cache = LnCache::new();
        layer_norm_forward(
            x.data(),
            lp.ln1_gain.data(),
            lp.ln1_bias.data(),
            d,
            a.data_mut(),
            &mut ln1_cache,
        );
        let attn = gqa_attention(&a, lp, cfg, Some(cache))?;
        let mut h1 = x;
        h1.axpy(1.0, &attn);
        let (h2, _) =
            cross_attention_forward(&h1, state.dialect_id, &params.dialect_tokens, lp, cfg)?;
        let mut b = Tensor::zeros(&[t, d]);
        let mut ln2_cache = LnCache::new();
        layer_norm_forward(
            h2.data(),
            lp.ln2_gain.data(),
            lp.ln2_bias.data(),
            d,
            b.data_mut(),
            &mut ln2_cache,
        );
        let (moe_out, _) = moe_forward(&b, state.dialect_id, lp, cfg)?;
        let mut h3 = h2;
        h3.axpy(1.0, &moe_out);
        x = h3;
    }
    state.len += t;
    let mut h_final = Tensor::zeros(&[t, d]);
    let mut final_cache = LnCache::new();
    layer_norm_forward(
        x.data(),
        params.final_norm_gain.data(),
        params.final_norm_bias.data(),
        d,
        h_final.data_mut(),
        &mut final_cache,
    );
    Ok(masked_logits_row(params, cfg, h_final.row(t - 1)))
}

/// Greedy speech decoding: argmax over the allowed output set until EOS,
/// `max_new` tokens, or the context window fills. Returns the sampled
/// speech stream (EOS excluded) and whether EOS terminated it.
pub fn greedy_decode(
    params: &Parameters,
    cfg: &ModelConfig,
    text: &[u32],
    prompt: Option<&[u32]>,
    dialect_id: u32,
    max_new: usize,
) -> Result<(Vec<u32>, bool)> {
    if max_new == 0 {
        return Err(Error::Config("max_new must be >= 1".into()));
    }
    let prefix = build_input(text, &[], prompt, dialect_id, &cfg.vocab, cfg.max_seq_len)?;
    let mut state = DecodeState::new(cfg, dialect_id)?;
    let mut logits = decode_extend(params, cfg, &mut state, &prefix.input)?;
    let eos = cfg.vocab.eos();
    let mut out = Vec::new();
    loop {
        let next = argmax(&logits) as u32;
        if next == eos {
            return Ok((out, true));
        }
        out.push(next);
        if out.len() == max_new || state.len() == cfg.max_seq_len {
            return Ok((out, false));
        }
        logits = decode_extend(params, cfg, &mut state, &[next])?;
    }
}
