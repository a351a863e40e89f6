//! Grouped-query self-attention: training forward/backward with stored
//! probabilities, an incremental cached variant, and the tiled
//! online-softmax kernel that never materializes a full score matrix.

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::LayerParams;
use crate::numerics::ops::{dot, matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_in_place};
use crate::numerics::tensor::Tensor;

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct GqaTrace {
    pub q: Tensor, // [T, d_model], head h in columns h*hd..(h+1)*hd
    pub k: Tensor, // [T, kv_dim]
    pub v: Tensor, // [T, kv_dim]
    /// Per query head, row-softmaxed causal attention probabilities [T, T].
    pub probs: Vec<Tensor>,
    pub concat: Tensor, // [T, d_model], before the output projection
}

/// Growable K/V store for incremental decoding over the training-precision
/// path. Rows are appended per new position.
#[derive(Debug, Clone, Default)]
pub struct SimpleKvCache {
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    pub len: usize,
}

fn project(x: &Tensor, w: &Tensor) -> Tensor {
    let (t, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[0];
    debug_assert_eq!(w.shape()[1], d_in);
    let mut out = Tensor::zeros(&[t, d_out]);
    matmul_nt_acc(out.data_mut(), x.data(), w.data(), t, d_in, d_out);
    out
}

/// Causal grouped-query attention over a full sequence, returning the
/// output-projected result and the trace needed by [`gqa_backward`].
pub fn gqa_forward_train(
    a: &Tensor,
    lp: &LayerParams,
    cfg: &ModelConfig,
) -> Result<(Tensor, GqaTrace)> {
    let t = a.shape()[0];
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    if a.shape()[1] != d {
        return Err(Error::Numeric(format!(
            "attention input width {} != d_model {d}",
            a.shape()[1]
        )));
    }
    let q = project(a, &lp.wq);
    let k = project(a, &lp.wk);
    let v = project(a, &lp.wv);
    let scale = 1.0 / (hd as f64).sqrt();
    let group = cfg.n_heads / cfg.n_kv_heads;
    let mut concat = Tensor::zeros(&[t, d]);
    let mut probs = Vec::with_capacity(cfg.n_heads);
    let mut scores = vec![0.0; t];
    for h in 0..cfg.n_heads {
        let kvh = h / group;
        let mut p = Tensor::zeros(&[t, t]);
        for i in 0..t {
            let qh = &q.row(i)[h * hd..(h + 1) * hd];
            for j in 0..=i {
                scores[j] = dot(qh, &k.row(j)[kvh * hd..(kvh + 1) * hd]) * scale;
            }
            softmax_in_place(&mut scores[..=i])?;
            let out = &mut concat.row_mut(i)[h * hd..(h + 1) * hd];
            for j in 0..=i {
                let w = scores[j];
                for (o, &vv) in out.iter_mut().zip(&v.row(j)[kvh * hd..(kvh + 1) * hd]) {
                    *o += w * vv;
                }
            }
            p.row_mut(i)[..=i].copy_from_slice(&scores[..=i]);
        }
        probs.push(p);
    }
    let out = project(&concat, &lp.wo);
    Ok((out, GqaTrace { q, k, v, probs, concat }))
}

/// Backward of [`gqa_forward_train`]. Accumulates weight gradients into
/// `dlp` and the input gradient into `da`.
pub fn gqa_backward(
    dout: &Tensor,
    a: &Tensor,
    lp: &LayerParams,
    cfg: &ModelConfig,
    trace: &GqaTrace,
    dlp: &mut LayerParams,
    da: &mut Tensor,
) {
    let t = a.shape()[0];
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let kv = cfg.kv_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let group = cfg.n_heads / cfg.n_kv_heads;

    // out = concat * Wo^T
    matmul_tn_acc(dlp.wo.data_mut(), dout.data(), trace.concat.data(), t, d, d);
    let mut dconcat = Tensor::zeros(&[t, d]);
    matmul_acc(dconcat.data_mut(), dout.data(), lp.wo.data(), t, d, d);

    let mut dq = Tensor::zeros(&[t, d]);
    let mut dk = Tensor::zeros(&[t, kv]);
    let mut dv = Tensor::zeros(&[t, kv]);
    let mut dp = vec![0.0; t];
    for h in 0..cfg.n_heads {
        let kvh = h / group;
        let p = &trace.probs[h];
        for i in 0..t {
            let doh = &dconcat.row(i)[h * hd..(h + 1) * hd];
            let pi = &p.row(i)[..=i];
            let mut sum_pdp = 0.0;
            for j in 0..=i {
                let vj = &trace.v.row(j)[kvh * hd..(kvh + 1) * hd];
                dp[j] = dot(doh, vj);
                sum_pdp += pi[j] * dp[j];
                let dvj = &mut dv.row_mut(j)[kvh * hd..(kvh + 1) * hd];
                for (dvv, &dov) in dvj.iter_mut().zip(doh) {
                    *dvv += pi[j] * dov;
                }
            }
            let qh = trace.q.row(i)[h * hd..(h + 1) * hd].to_vec();
            for j in 0..=i {
                let ds = pi[j] * (dp[j] - sum_pdp) * scale;
                let kj = &trace.k.row(j)[kvh * hd..(kvh + 1) * hd];
                let dqh = &mut dq.row_mut(i)[h * hd..(h + 1) * hd];
                for (dqv, &kv_) in dqh.iter_mut().zip(kj) {
                    *dqv += ds * kv_;
                }
                let dkj = &mut dk.row_mut(j)[kvh * hd..(kvh + 1) * hd];
                for (dkv, &qv) in dkj.iter_mut().zip(&qh) {
                    *dkv += ds * qv;
                }
            }
        }
    }
    // q = a * Wq^T and likewise for k, v.
    matmul_tn_acc(dlp.wq.data_mut(), dq.data(), a.data(), t, d, d);
    matmul_acc(da.data_mut(), dq.data(), lp.wq.data(), t, d, d);
    matmul_tn_acc(dlp.wk.data_mut(), dk.data(), a.data(), t, kv, d);
    matmul_acc(da.data_mut(), dk.data(), lp.wk.data(), t, kv, d);
    matmul_tn_acc(dlp.wv.data_mut(), dv.data(), a.data(), t, kv, d);
    matmul_acc(da.data_mut(), dv.data(), lp.wv.data(), t, kv, d);
}

/// Causal grouped-query attention for inference over the training-precision
/// path. Without a cache, `x` is the whole sequence. With a cache, `x` is
/// the new suffix only; its K/V rows are appended and each suffix position
/// attends over everything cached so far.
pub fn gqa_attention(
    x: &Tensor,
    lp: &LayerParams,
    cfg: &ModelConfig,
    cache: Option<&mut SimpleKvCache>,
) -> Result<Tensor> {
    let t = x.shape()[0];
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let kv = cfg.kv_dim();
    if x.shape()[1] != d {
        return Err(Error::Numeric(format!(
            "attention input width {} != d_model {d}",
            x.shape()[1]
        )));
    }
    let q = project(x, &lp.wq);
    let k_new = project(x, &lp.wk);
    let v_new = project(x, &lp.wv);
    let mut local = SimpleKvCache::default();
    let cache = match cache {
        Some(c) => c,
        None => &mut local,
    };
    let offset = cache.len;
    cache.k.extend_from_slice(k_new.data());
    cache.v.extend_from_slice(v_new.data());
    cache.len += t;

    let scale = 1.0 / (hd as f64).sqrt();
    let group = cfg.n_heads / cfg.n_kv_heads;
    let mut concat = Tensor::zeros(&[t, d]);
    let mut scores = vec![0.0; cache.len];
    for h in 0..cfg.n_heads {
        let kvh = h / group;
        for i in 0..t {
            let limit = offset + i + 1;
            let qh = &q.row(i)[h * hd..(h + 1) * hd];
            for (j, s) in scores[..limit].iter_mut().enumerate() {
                let kj = &cache.k[j * kv + kvh * hd..j * kv + (kvh + 1) * hd];
                *s = dot(qh, kj) * scale;
            }
            softmax_in_place(&mut scores[..limit])?;
            let out = &mut concat.row_mut(i)[h * hd..(h + 1) * hd];
            for (j, &w) in scores[..limit].iter().enumerate() {
                let vj = &cache.v[j * kv + kvh * hd..j * kv + (kvh + 1) * hd];
                for (o, &vv) in out.iter_mut().zip(vj) {
                    *o += w * vv;
                }
            }
        }
    }
    Ok(project(&concat, &lp.wo))
}

/// Single-head attention `softmax(q k^T) v` evaluated block by block over
/// the keys with an online softmax: per row it keeps a running max, an
/// unnormalized accumulator, and the partition sum, dividing once at the
/// end. Peak extra memory is one block of scores, never seq x seq.
///
/// `q` is expected pre-scaled; pass `causal` to mask j > i.
pub fn tiled_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    block_size: usize,
    causal: bool,
) -> Result<Tensor> {
    if block_size == 0 {
        return Err(Error::Config("block_size must be >= 1".into()));
    }
    let (t, hd) = (q.shape()[0], q.shape()[1]);
    let s = k.shape()[0];
    if k.shape()[1] != hd || v.shape()[0] != s || v.shape()[1] != hd {
        return Err(Error::Numeric("tiled attention shape mismatch".into()));
    }
    if causal && s != t {
        return Err(Error::Numeric("causal tiling requires square q/k lengths".into()));
    }
    let mut out = Tensor::zeros(&[t, hd]);
    let mut block_scores = vec![0.0; block_size];
    for i in 0..t {
        let qi = q.row(i);
        let mut m = f64::NEG_INFINITY;
        let mut z = 0.0;
        let mut acc = vec![0.0; hd];
        let row_limit = if causal { i + 1 } else { s };
        let mut start = 0;
        while start < row_limit {
            let end = (start + block_size).min(row_limit);
            let mut block_max = f64::NEG_INFINITY;
            for (b, j) in (start..end).enumerate() {
                let sc = dot(qi, k.row(j));
                block_scores[b] = sc;
                block_max = block_max.max(sc);
            }
            if block_max > m {
                let factor = if m == f64::NEG_INFINITY { 0.0 } else { (m - block_max).exp() };
                for a in acc.iter_mut() {
                    *a *= factor;
                }
                z *= factor;
                m = block_max;
            }
            for (b, j) in (start..end).enumerate() {
                let w = (block_scores[b] - m).exp();
                z += w;
                for (a, &vv) in acc.iter_mut().zip(v.row(j)) {
                    *a += w * vv;
                }
            }
            start = end;
        }
        if z == 0.0 {
            return Err(Error::Numeric(format!("empty attention row {i}")));
        }
        for (o, a) in out.row_mut(i).iter_mut().zip(&acc) {
            *o = a / z;
        }
    }
    Ok(out)
}
