//! Full-model forward, next-token cross-entropy, and manual backward.
//!
//! Input layout per utterance: BOS, text, SEP, then optionally the speaker
//! prompt's speech tokens followed by a second SEP, then the speech prefix.
//! Positions from the final SEP onward predict the speech stream plus a
//! closing EOS. Output logits are masked so only speech tokens, filled
//! pauses, PROLONG, and EOS are reachable.

use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use crate::model::attention::{gqa_backward, gqa_forward_train, GqaTrace};
use crate::model::config::ModelConfig;
use crate::model::cross_attention::{
    cross_attention_backward, cross_attention_forward, CrossAttnTrace,
};
use crate::model::moe::{moe_backward, moe_forward, MoeTrace};
use crate::model::params::Parameters;
use crate::numerics::ops::{
    dot, layer_norm_backward, layer_norm_forward, log_sum_exp, LnCache,
};
use crate::numerics::tensor::Tensor;

/// One training sequence with its loss-position bookkeeping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainItem {
    pub input: Vec<u32>,
    /// Index of the final SEP; positions last_sep..input.len()-1 are scored.
    pub last_sep: usize,
    /// The speech stream followed by EOS; targets[j] is predicted at
    /// position last_sep + j.
    pub targets: Vec<u32>,
    pub dialect_id: u32,
}

fn check_speech_stream(tokens: &[u32], vocab: &Vocab, what: &str) -> Result<()> {
    for &t in tokens {
        if !(vocab.is_speech(t) || vocab.is_fp(t) || t == vocab.prolong()) {
            return Err(Error::Data(format!("{what} contains non-speech-stream id {t}")));
        }
    }
    Ok(())
}

/// Assembles the token sequence and loss targets for one utterance.
pub fn build_input(
    text: &[u32],
    speech: &[u32],
    prompt: Option<&[u32]>,
    dialect_id: u32,
    vocab: &Vocab,
    max_seq_len: usize,
) -> Result<TrainItem> {
    if dialect_id >= vocab.n_dialects {
        return Err(Error::Data(format!(
            "unknown dialect id {dialect_id} (n_dialects = {})",
            vocab.n_dialects
        )));
    }
    for &t in text {
        if !vocab.is_text(t) {
            return Err(Error::Data(format!("text stream contains non-text id {t}")));
        }
    }
    check_speech_stream(speech, vocab, "speech stream")?;
    if let Some(p) = prompt {
        check_speech_stream(p, vocab, "speaker prompt")?;
    }
    let mut input = Vec::with_capacity(
        2 + text.len() + prompt.map_or(0, |p| p.len() + 1) + speech.len(),
    );
    input.push(vocab.bos());
    input.extend_from_slice(text);
    input.push(vocab.sep());
    if let Some(p) = prompt {
        input.extend_from_slice(p);
        input.push(vocab.sep());
    }
    let last_sep = input.len() - 1;
    input.extend_from_slice(speech);
    if input.len() > max_seq_len {
        return Err(Error::Capacity(format!(
            "sequence length {} exceeds max_seq_len {max_seq_len}",
            input.len()
        )));
    }
    let mut targets = speech.to_vec();
    targets.push(vocab.eos());
    Ok(TrainItem { input, last_sep, targets, dialect_id })
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub x_in: Tensor,
    pub ln1_cache: LnCache,
    pub a: Tensor,
    pub gqa: GqaTrace,
    pub h1: Tensor,
    pub ca: CrossAttnTrace,
    pub h2: Tensor,
    pub ln2_cache: LnCache,
    pub b: Tensor,
    pub moe: MoeTrace,
}

/// Everything backward needs, plus per-layer router decisions for audits.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub h_pre_final: Tensor,
    pub final_cache: LnCache,
    pub h_final: Tensor,
}

/// Runs the transformer stack over `ids`, returning all activations.
pub fn forward_hidden(
    params: &Parameters,
    cfg: &ModelConfig,
    ids: &[u32],
    dialect_id: u32,
) -> Result<ForwardTrace> {
    let t = ids.len();
    let d = cfg.d_model;
    if t == 0 {
        return Err(Error::Data("empty input sequence".into()));
    }
    if t > cfg.max_seq_len {
        return Err(Error::Capacity(format!(
            "sequence length {t} exceeds max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    let v = cfg.vocab.total();
    let mut x = Tensor::zeros(&[t, d]);
    for (pos, &id) in ids.iter().enumerate() {
        if id >= v {
            return Err(Error::Data(format!("token id {id} outside vocab of {v}")));
        }
        let row = x.row_mut(pos);
        for ((o, &e), &p) in row
            .iter_mut()
            .zip(params.tok_emb.row(id as usize))
            .zip(params.pos_emb.row(pos))
        {
            *o = e + p;
        }
    }
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lp in &params.layers {
        let x_in = x;
        let mut a = Tensor::zeros(&[t, d]);
        let mut ln1_cache = LnCache::new();
        layer_norm_forward(
            x_in.data(),
            lp.ln1_gain.data(),
            lp.ln1_bias.data(),
            d,
            a.data_mut(),
            &mut ln1_cache,
        );
        let (attn, gqa) = gqa_forward_train(&a, lp, cfg)?;
        let mut h1 = x_in.clone();
        h1.axpy(1.0, &attn);
        let (h2, ca) =
            cross_attention_forward(&h1, dialect_id, &params.dialect_tokens, lp, cfg)?;
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
        let (moe_out, moe) = moe_forward(&b, dialect_id, lp, cfg)?;
        let mut h3 = h2.clone();
        h3.axpy(1.0, &moe_out);
        layers.push(LayerTrace { x_in, ln1_cache, a, gqa, h1, ca, h2, ln2_cache, b, moe });
        x = h3;
    }
    let h_pre_final = x;
    let mut h_final = Tensor::zeros(&[t, d]);
    let mut final_cache = LnCache::new();
    layer_norm_forward(
        h_pre_final.data(),
        params.final_norm_gain.data(),
        params.final_norm_bias.data(),
        d,
        h_final.data_mut(),
        &mut final_cache,
    );
    Ok(ForwardTrace { layers, h_pre_final, final_cache, h_final })
}

/// Logits over the whole vocabulary for one hidden row, with every id
/// outside the allowed output set pinned to -inf.
pub fn masked_logits_row(params: &Parameters, cfg: &ModelConfig, h: &[f64]) -> Vec<f64> {
    let v = cfg.vocab.total() as usize;
    let mut out = vec![f64::NEG_INFINITY; v];
    for id in cfg.vocab.allowed_output_ids() {
        out[id as usize] = dot(h, params.head.row(id as usize));
    }
    out
}

/// Masked next-token logits for every speech position (the final SEP and
/// each speech-prefix token), rows aligned with `speech_prefix + [EOS]`
/// prediction slots.
pub fn forward(
    params: &Parameters,
    cfg: &ModelConfig,
    text: &[u32],
    speech_prefix: &[u32],
    dialect_id: u32,
    prompt: Option<&[u32]>,
) -> Result<Tensor> {
    let item =
        build_input(text, speech_prefix, prompt, dialect_id, &cfg.vocab, cfg.max_seq_len)?;
    let trace = forward_hidden(params, cfg, &item.input, dialect_id)?;
    let n = item.targets.len();
    let v = cfg.vocab.total() as usize;
    let mut out = Tensor::zeros(&[n, v]);
    for j in 0..n {
        let row = masked_logits_row(params, cfg, trace.h_final.row(item.last_sep + j));
        out.row_mut(j).copy_from_slice(&row);
    }
    Ok(out)
}

/// Mean next-token cross-entropy without gradients.
pub fn batch_loss(params: &Parameters, cfg: &ModelConfig, batch: &[TrainItem]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let allowed = cfg.vocab.allowed_output_ids();
    let total_pos: usize = batch.iter().map(|it| it.targets.len()).sum();
    let mut loss = 0.0;
    let mut z = vec![0.0; allowed.len()];
    for item in batch {
        let trace = forward_hidden(params, cfg, &item.input, item.dialect_id)?;
        for (j, &target) in item.targets.iter().enumerate() {
            let h = trace.h_final.row(item.last_sep + j);
            let mut z_target = None;
            for (zi, &id) in z.iter_mut().zip(&allowed) {
                *zi = dot(h, params.head.row(id as usize));
                if id == target {
                    z_target = Some(*zi);
                }
            }
            let Some(z_target) = z_target else {
                return Err(Error::Data(format!(
                    "target id {target} is not an allowed output token"
                )));
            };
            loss += log_sum_exp(&z) - z_target;
        }
    }
    let loss = loss / total_pos as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok(loss)
}

/// Mean next-token cross-entropy over every scored position in the batch,
/// with gradients for every parameter tensor.
pub fn loss_and_grads(
    params: &Parameters,
    cfg: &ModelConfig,
    batch: &[TrainItem],
) -> Result<(f64, Parameters)> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let allowed = cfg.vocab.allowed_output_ids();
    let total_pos: usize = batch.iter().map(|it| it.targets.len()).sum();
    let inv_n = 1.0 / total_pos as f64;
    let mut grads = Parameters::zeros(cfg);
    let mut loss = 0.0;
    let mut z = vec![0.0; allowed.len()];
    for item in batch {
        let trace = forward_hidden(params, cfg, &item.input, item.dialect_id)?;
        debug_assert_eq!(item.last_sep + item.targets.len(), item.input.len());
        let mut dlogits = vec![vec![0.0; allowed.len()]; item.targets.len()];
        for (j, &target) in item.targets.iter().enumerate() {
            let h = trace.h_final.row(item.last_sep + j);
            let mut z_target = None;
            for (zi, &id) in z.iter_mut().zip(&allowed) {
                *zi = dot(h, params.head.row(id as usize));
                if id == target {
                    z_target = Some(*zi);
                }
            }
            let Some(z_target) = z_target else {
                return Err(Error::Data(format!(
                    "target id {target} is not an allowed output token"
                )));
            };
            let lse = log_sum_exp(&z);
            loss += lse - z_target;
            for ((g, &zi), &id) in dlogits[j].iter_mut().zip(&z).zip(&allowed) {
                let p = (zi - lse).exp();
                *g = (p - f64::from(id == target)) * inv_n;
            }
        }
        accumulate_grads_from_dlogits(params, cfg, item, &trace, &dlogits, &mut grads)?;
    }
    loss *= inv_n;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {loss}")));
    }
    Ok((loss, grads))
}

/// Backpropagates arbitrary per-position objective gradients on the masked
/// output logits, accumulating into `grads`. Row `j` of `dlogits` aligns
/// with `allowed_output_ids()` and applies at position `item.last_sep + j`.
/// This is the shared backward entry for both cross-entropy training and
/// policy-gradient updates.
pub fn accumulate_grads_from_dlogits(
    params: &Parameters,
    cfg: &ModelConfig,
    item: &TrainItem,
    trace: &ForwardTrace,
    dlogits: &[Vec<f64>],
    grads: &mut Parameters,
) -> Result<()> {
    let d = cfg.d_model;
    let allowed = cfg.vocab.allowed_output_ids();
    let t = item.input.len();
    if item.last_sep + dlogits.len() != t {
        return Err(Error::Data(format!(
            "{} logit-gradient rows do not cover positions {}..{t}",
            dlogits.len(),
            item.last_sep
        )));
    }
    let mut dh_final = Tensor::zeros(&[t, d]);
    for (j, drow) in dlogits.iter().enumerate() {
        if drow.len() != allowed.len() {
            return Err(Error::Data(format!(
                "logit-gradient row has {} entries for {} allowed ids",
                drow.len(),
                allowed.len()
            )));
        }
        let row = item.last_sep + j;
        let h = trace.h_final.row(row);
        let dh_row = dh_final.row_mut(row);
        for (&g, &id) in drow.iter().zip(&allowed) {
            let head_row = params.head.row(id as usize);
            let ghead_row = grads.head.row_mut(id as usize);
            for c in 0..d {
                ghead_row[c] += g * h[c];
                dh_row[c] += g * head_row[c];
            }
        }
    }
    backward_item(params, cfg, item, trace, dh_final, grads)
}

fn backward_item(
    params: &Parameters,
    cfg: &ModelConfig,
    item: &TrainItem,
    trace: &ForwardTrace,
    dh_final: Tensor,
    grads: &mut Parameters,
) -> Result<()> {
    let t = item.input.len();
    let d = cfg.d_model;
    let mut dh = Tensor::zeros(&[t, d]);
    layer_norm_backward(
        dh_final.data(),
        trace.h_pre_final.data(),
        params.final_norm_gain.data(),
        d,
        &trace.final_cache,
        dh.data_mut(),
        grads.final_norm_gain.data_mut(),
        grads.final_norm_bias.data_mut(),
    );
    for (l, lt) in trace.layers.iter().enumerate().rev() {
        let lp = &params.layers[l];
        let dlp = &mut grads.layers[l];
        // h3 = h2 + moe(b); b = LN2(h2)
        let mut db = Tensor::zeros(&[t, d]);
        moe_backward(&dh, &lt.b, lp, cfg, &lt.moe, dlp, &mut db);
        let mut dh2_from_ln = Tensor::zeros(&[t, d]);
        layer_norm_backward(
            db.data(),
            lt.h2.data(),
            lp.ln2_gain.data(),
            d,
            &lt.ln2_cache,
            dh2_from_ln.data_mut(),
            dlp.ln2_gain.data_mut(),
            dlp.ln2_bias.data_mut(),
        );
        let mut dh2 = dh;
        dh2.axpy(1.0, &dh2_from_ln);
        // h2 = h1 + cross(h1)
        let dh1 = cross_attention_backward(
            &dh2,
            &lt.h1,
            item.dialect_id,
            &params.dialect_tokens,
            lp,
            cfg,
            &lt.ca,
            dlp,
            &mut grads.dialect_tokens,
        )?;
        // h1 = x_in + gqa(a); a = LN1(x_in)
        let mut da = Tensor::zeros(&[t, d]);
        gqa_backward(&dh1, &lt.a, lp, cfg, &lt.gqa, dlp, &mut da);
        let mut dx_from_ln = Tensor::zeros(&[t, d]);
        layer_norm_backward(
            da.data(),
            lt.x_in.data(),
            lp.ln1_gain.data(),
            d,
            &lt.ln1_cache,
            dx_from_ln.data_mut(),
            dlp.ln1_gain.data_mut(),
            dlp.ln1_bias.data_mut(),
        );
        let mut dx = dh1;
        dx.axpy(1.0, &dx_from_ln);
        dh = dx;
    }
    for (pos, &id) in item.input.iter().enumerate() {
        let g = dh.row(pos);
        let te = grads.tok_emb.row_mut(id as usize);
        for (o, &v) in te.iter_mut().zip(g) {
            *o += v;
        }
        let pe = grads.pos_emb.row_mut(pos);
        for (o, &v) in pe.iter_mut().zip(g) {
            *o += v;
        }
    }
    Ok(())
}
