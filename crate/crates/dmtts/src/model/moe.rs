//! Dialectal mixture-of-experts feed-forward.
//!
//! Each dialect routes over its candidate pool: the shared expert bank plus
//! the bank it owns. Per token the router picks top_k candidates by logit
//! (ties broken toward the smaller global index), renormalizes their gates
//! with a softmax over the selected logits, and mixes the expert outputs.
//! In backward the selection itself is treated as constant; gradients flow
//! through the gates and the selected experts only.

use crate::error::Result;
use crate::model::config::ModelConfig;
use crate::model::params::LayerParams;
use crate::numerics::ops::{assert_all_finite, dot, linear_row, silu, silu_prime, softmax_in_place};
use crate::numerics::tensor::Tensor;

/// Routing decision and expert intermediates for one token.
#[derive(Debug, Clone)]
pub struct MoeTokenTrace {
    /// Global expert indices, in selection order (descending logit).
    pub selected: Vec<usize>,
    /// Renormalized gates for `selected`; sums to 1.
    pub gates: Vec<f64>,
    /// Pre-activation W1 x + b1 per selected expert.
    pub pre_act: Vec<Vec<f64>>,
    /// silu(pre_act) per selected expert.
    pub act: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct MoeTrace {
    pub tokens: Vec<MoeTokenTrace>,
}

/// Expert feed-forward y = W2 silu(W1 x + b1) + b2 applied into `out`,
/// scaled by `gate`, returning the intermediates.
fn expert_apply(
    x: &[f64],
    ex: &crate::model::params::ExpertParams,
    gate: f64,
    out: &mut [f64],
) -> (Vec<f64>, Vec<f64>) {
    let d_ff = ex.b1.numel();
    let mut u = vec![0.0; d_ff];
    linear_row(&mut u, x, ex.w1.data(), Some(ex.b1.data()));
    let s: Vec<f64> = u.iter().map(|&v| silu(v)).collect();
    let mut o = vec![0.0; out.len()];
    linear_row(&mut o, &s, ex.w2.data(), Some(ex.b2.data()));
    for (dst, &v) in out.iter_mut().zip(&o) {
        *dst += gate * v;
    }
    (u, s)
}

/// MoE feed-forward over all rows of `x` (no residual). Returns the output
/// and the per-token routing trace.
pub fn moe_forward(
    x: &Tensor,
    dialect_id: u32,
    lp: &LayerParams,
    cfg: &ModelConfig,
) -> Result<(Tensor, MoeTrace)> {
    let t = x.shape()[0];
    let d = cfg.d_model;
    let cand = cfg.candidate_experts(dialect_id)?;
    let k = cfg.top_k.min(cand.len());
    let mut out = Tensor::zeros(&[t, d]);
    let mut tokens = Vec::with_capacity(t);
    for i in 0..t {
        let xi = x.row(i);
        let logits: Vec<f64> = cand
            .iter()
            .map(|&e| dot(xi, lp.router.row(e)))
            .collect();
        assert_all_finite(&logits, "router logits")?;
        let mut order: Vec<usize> = (0..cand.len()).collect();
        order.sort_by(|&a, &b| {
            logits[b].partial_cmp(&logits[a]).expect("finite").then(cand[a].cmp(&cand[b]))
        });
        let selected: Vec<usize> = order[..k].iter().map(|&c| cand[c]).collect();
        let mut gates: Vec<f64> = order[..k].iter().map(|&c| logits[c]).collect();
        softmax_in_place(&mut gates)?;
        let mut pre_act = Vec::with_capacity(k);
        let mut act = Vec::with_capacity(k);
        for (&e, &g) in selected.iter().zip(&gates) {
            let (u, s) = expert_apply(xi, &lp.experts[e], g, out.row_mut(i));
            pre_act.push(u);
            act.push(s);
        }
        tokens.push(MoeTokenTrace { selected, gates, pre_act, act });
    }
    Ok((out, MoeTrace { tokens }))
}

/// Backward of [`moe_forward`]. Accumulates router and expert gradients
/// into `dlp` and the input gradient into `dx`. Selection is constant.
pub fn moe_backward(
    dy: &Tensor,
    x: &Tensor,
    lp: &LayerParams,
    cfg: &ModelConfig,
    trace: &MoeTrace,
    dlp: &mut LayerParams,
    dx: &mut Tensor,
) {
    let t = x.shape()[0];
    let d = cfg.d_model;
    let d_ff = cfg.d_ff;
    for i in 0..t {
        let tt = &trace.tokens[i];
        let xi = x.row(i).to_vec();
        let dyi = dy.row(i).to_vec();
        let k = tt.selected.len();
        let mut dgates = vec![0.0; k];
        for (slot, &e) in tt.selected.iter().enumerate() {
            let g = tt.gates[slot];
            let ex = &lp.experts[e];
            let dex = &mut dlp.experts[e];
            // o_e = W2 s + b2; contribution g * o_e.
            let s = &tt.act[slot];
            let u = &tt.pre_act[slot];
            let mut o = vec![0.0; d];
            linear_row(&mut o, s, ex.w2.data(), Some(ex.b2.data()));
            dgates[slot] = dot(&dyi, &o);
            // d o_e = g * dy
            let mut ds = vec![0.0; d_ff];
            for r in 0..d {
                let dor = g * dyi[r];
                dex.b2.data_mut()[r] += dor;
                let w2r = &ex.w2.data()[r * d_ff..(r + 1) * d_ff];
                let dw2r = &mut dex.w2.data_mut()[r * d_ff..(r + 1) * d_ff];
                for j in 0..d_ff {
                    dw2r[j] += dor * s[j];
                    ds[j] += dor * w2r[j];
                }
            }
            let mut du = vec![0.0; d_ff];
            for j in 0..d_ff {
                du[j] = ds[j] * silu_prime(u[j]);
                dex.b1.data_mut()[j] += du[j];
            }
            for j in 0..d_ff {
                let w1j = &ex.w1.data()[j * d..(j + 1) * d];
                let dw1j = &mut dex.w1.data_mut()[j * d..(j + 1) * d];
                let dxr = dx.row_mut(i);
                for c in 0..d {
                    dw1j[c] += du[j] * xi[c];
                    dxr[c] += du[j] * w1j[c];
                }
            }
        }
        // gates = softmax(selected logits)
        let sum: f64 = tt.gates.iter().zip(&dgates).map(|(g, dg)| g * dg).sum();
        for (slot, &e) in tt.selected.iter().enumerate() {
            let dlogit = tt.gates[slot] * (dgates[slot] - sum);
            let router_row = lp.router.row(e).to_vec();
            let drouter_row = dlp.router.row_mut(e);
            let dxr = dx.row_mut(i);
            for c in 0..d {
                drouter_row[c] += dlogit * xi[c];
                dxr[c] += dlogit * router_row[c];
            }
        }
    }
}
