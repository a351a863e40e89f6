//! Parameter storage, seeded initialization, and tensor traversal.
//!
//! `for_each_tensor` visits every tensor in a fixed declaration order. The
//! checkpoint format, the optimizer state layout, and the gradient checker
//! all rely on this order being stable.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::numerics::tensor::Tensor;
use crate::seeds::{derive_seed, streams};

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertParams {
    pub w1: Tensor, // [d_ff, d_model]
    pub b1: Tensor, // [d_ff]
    pub w2: Tensor, // [d_model, d_ff]
    pub b2: Tensor, // [d_model]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Tensor, // [d_model]
    pub ln1_bias: Tensor,
    pub wq: Tensor, // [d_model, d_model]
    pub wk: Tensor, // [kv_dim, d_model]
    pub wv: Tensor, // [kv_dim, d_model]
    pub wo: Tensor, // [d_model, d_model]
    pub ca_wq: Tensor, // [d_model, d_model]
    pub ca_wk: Tensor,
    pub ca_wv: Tensor,
    pub ca_wo: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub router: Tensor, // [n_experts_total, d_model]
    pub experts: Vec<ExpertParams>, // shared bank first, then each dialect's bank
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub tok_emb: Tensor, // [vocab_total, d_model]
    pub pos_emb: Tensor, // [max_seq_len, d_model]
    /// Dialect-token table, row `d * m + j` is dialect d's j-th vector.
    pub dialect_tokens: Tensor, // [n_dialects * m, d_model]
    pub layers: Vec<LayerParams>,
    pub final_norm_gain: Tensor, // [d_model]
    pub final_norm_bias: Tensor,
    pub head: Tensor, // [vocab_total, d_model]
}

impl Parameters {
    /// All-zero parameters with the shapes implied by `cfg`. Also the
    /// gradient accumulator layout.
    pub fn zeros(cfg: &ModelConfig) -> Parameters {
        let d = cfg.d_model;
        let v = cfg.vocab.total() as usize;
        let kv = cfg.kv_dim();
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams {
                ln1_gain: Tensor::zeros(&[d]),
                ln1_bias: Tensor::zeros(&[d]),
                wq: Tensor::zeros(&[d, d]),
                wk: Tensor::zeros(&[kv, d]),
                wv: Tensor::zeros(&[kv, d]),
                wo: Tensor::zeros(&[d, d]),
                ca_wq: Tensor::zeros(&[d, d]),
                ca_wk: Tensor::zeros(&[d, d]),
                ca_wv: Tensor::zeros(&[d, d]),
                ca_wo: Tensor::zeros(&[d, d]),
                ln2_gain: Tensor::zeros(&[d]),
                ln2_bias: Tensor::zeros(&[d]),
                router: Tensor::zeros(&[cfg.n_experts_total(), d]),
                experts: (0..cfg.n_experts_total())
                    .map(|_| ExpertParams {
                        w1: Tensor::zeros(&[cfg.d_ff, d]),
                        b1: Tensor::zeros(&[cfg.d_ff]),
                        w2: Tensor::zeros(&[d, cfg.d_ff]),
                        b2: Tensor::zeros(&[d]),
                    })
                    .collect(),
            })
            .collect();
        Parameters {
            tok_emb: Tensor::zeros(&[v, d]),
            pos_emb: Tensor::zeros(&[cfg.max_seq_len, d]),
            dialect_tokens: Tensor::zeros(&[
                cfg.vocab.n_dialects as usize * cfg.m_dialect_tokens,
                d,
            ]),
            layers,
            final_norm_gain: Tensor::zeros(&[d]),
            final_norm_bias: Tensor::zeros(&[d]),
            head: Tensor::zeros(&[v, d]),
        }
    }

    /// Visits every tensor with its stable name, in declaration order.
    pub fn for_each_tensor<F: FnMut(&str, &Tensor)>(&self, mut f: F) {
        f("tok_emb", &self.tok_emb);
        f("pos_emb", &self.pos_emb);
        f("dialect_tokens", &self.dialect_tokens);
        for (i, l) in self.layers.iter().enumerate() {
            let mut g = |suffix: &str, t: &Tensor| f(&format!("layer{i}.{suffix}"), t);
            g("ln1_gain", &l.ln1_gain);
            g("ln1_bias", &l.ln1_bias);
            g("wq", &l.wq);
            g("wk", &l.wk);
            g("wv", &l.wv);
            g("wo", &l.wo);
            g("ca_wq", &l.ca_wq);
            g("ca_wk", &l.ca_wk);
            g("ca_wv", &l.ca_wv);
            g("ca_wo", &l.ca_wo);
            g("ln2_gain", &l.ln2_gain);
            g("ln2_bias", &l.ln2_bias);
            g("router", &l.router);
            for (e, ex) in l.experts.iter().enumerate() {
                g(&format!("expert{e}.w1"), &ex.w1);
                g(&format!("expert{e}.b1"), &ex.b1);
                g(&format!("expert{e}.w2"), &ex.w2);
                g(&format!("expert{e}.b2"), &ex.b2);
            }
        }
        f("final_norm_gain", &self.final_norm_gain);
        f("final_norm_bias", &self.final_norm_bias);
        f("head", &self.head);
    }

    /// Mutable traversal in the same order as [`Parameters::for_each_tensor`].
    pub fn for_each_tensor_mut<F: FnMut(&str, &mut Tensor)>(&mut self, mut f: F) {
        f("tok_emb", &mut self.tok_emb);
        f("pos_emb", &mut self.pos_emb);
        f("dialect_tokens", &mut self.dialect_tokens);
        for (i, l) in self.layers.iter_mut().enumerate() {
            let mut g = |suffix: &str, t: &mut Tensor| f(&format!("layer{i}.{suffix}"), t);
            g("ln1_gain", &mut l.ln1_gain);
            g("ln1_bias", &mut l.ln1_bias);
            g("wq", &mut l.wq);
            g("wk", &mut l.wk);
            g("wv", &mut l.wv);
            g("wo", &mut l.wo);
            g("ca_wq", &mut l.ca_wq);
            g("ca_wk", &mut l.ca_wk);
            g("ca_wv", &mut l.ca_wv);
            g("ca_wo", &mut l.ca_wo);
            g("ln2_gain", &mut l.ln2_gain);
            g("ln2_bias", &mut l.ln2_bias);
            g("router", &mut l.router);
            for (e, ex) in l.experts.iter_mut().enumerate() {
                g(&format!("expert{e}.w1"), &mut ex.w1);
                g(&format!("expert{e}.b1"), &mut ex.b1);
                g(&format!("expert{e}.w2"), &mut ex.w2);
                g(&format!("expert{e}.b2"), &mut ex.b2);
            }
        }
        f("final_norm_gain", &mut self.final_norm_gain);
        f("final_norm_bias", &mut self.final_norm_bias);
        f("head", &mut self.head);
    }

    pub fn n_scalars(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, t| n += t.numel());
        n
    }

    /// Flattens every tensor into one vector, declaration order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_scalars());
        self.for_each_tensor(|_, t| out.extend_from_slice(t.data()));
        out
    }

    /// Inverse of [`Parameters::to_flat`]; panics on length mismatch.
    pub fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.for_each_tensor_mut(|_, t| {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        });
        assert_eq!(off, flat.len(), "flat parameter length mismatch");
    }

    /// In-place `self += alpha * other`, tensor by tensor.
    pub fn axpy(&mut self, alpha: f64, other: &Parameters) {
        let mut rhs = Vec::new();
        other.for_each_tensor(|_, t| rhs.push(t as *const Tensor));
        let mut i = 0;
        self.for_each_tensor_mut(|_, t| {
            // Safe: both traversals visit identical layouts in one thread.
            let o = unsafe { &*rhs[i] };
            t.axpy(alpha, o);
            i += 1;
        });
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_tensor_mut(|_, t| t.scale(s));
    }

    pub fn is_all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(|_, t| ok &= t.is_all_finite());
        ok
    }
}

/// Seeded parameter initialization: matrix entries `N(0, 1/fan_in)` with
/// fan_in = input width (embedding tables use d_model), norm gains 1,
/// biases 0.
pub fn init_params(cfg: &ModelConfig) -> Result<Parameters> {
    cfg.validate()?;
    let mut p = Parameters::zeros(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::PARAM_INIT));
    let normal = StandardNormal;
    p.for_each_tensor_mut(|name, t| {
        let base = name.rsplit('.').next().unwrap_or(name);
        if base.ends_with("_gain") {
            t.fill(1.0);
            return;
        }
        if base.ends_with("_bias") || base.starts_with('b') {
            // b1/b2 expert biases and norm biases start at zero.
            return;
        }
        let fan_in = match t.shape().len() {
            2 => t.shape()[1],
            _ => t.shape()[0],
        };
        let std = 1.0 / (fan_in as f64).sqrt();
        for v in t.data_mut() {
            let z: f64 = normal.sample(&mut rng);
            *v = z * std;
        }
    });
    Ok(p)
}
