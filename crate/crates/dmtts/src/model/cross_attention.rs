//! Per-layer dialect injection: every position attends (as a query) over
//! its dialect's m learned dialect-token vectors, and the attended value is
//! added residually. Single head at full model width, scaled by
//! 1/sqrt(d_model).

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::LayerParams;
use crate::numerics::ops::{matmul_acc, matmul_nt_acc, matmul_tn_acc, softmax_in_place};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct CrossAttnTrace {
    pub qc: Tensor,    // [T, d]
    pub kc: Tensor,    // [m, d]
    pub vc: Tensor,    // [m, d]
    pub probs: Tensor, // [T, m]
    pub ctx: Tensor,   // [T, d]
}

fn project(x: &Tensor, w: &Tensor) -> Tensor {
    let (rows, d_in) = (x.shape()[0], x.shape()[1]);
    let d_out = w.shape()[0];
    let mut out = Tensor::zeros(&[rows, d_out]);
    matmul_nt_acc(out.data_mut(), x.data(), w.data(), rows, d_in, d_out);
    out
}

/// Rows of the shared dialect-token table belonging to `dialect_id`.
fn dialect_rows(
    dialect_tokens: &Tensor,
    dialect_id: u32,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    if dialect_id >= cfg.vocab.n_dialects {
        return Err(Error::Data(format!(
            "unknown dialect id {dialect_id} (n_dialects = {})",
            cfg.vocab.n_dialects
        )));
    }
    let m = cfg.m_dialect_tokens;
    let d = cfg.d_model;
    let start = dialect_id as usize * m;
    let mut out = Tensor::zeros(&[m, d]);
    out.data_mut()
        .copy_from_slice(&dialect_tokens.data()[start * d..(start + m) * d]);
    Ok(out)
}

/// y = x + CrossAttn(x, dialect tokens). Returns y and the backward trace.
pub fn cross_attention_forward(
    x: &Tensor,
    dialect_id: u32,
    dialect_tokens: &Tensor,
    lp: &LayerParams,
    cfg: &ModelConfig,
) -> Result<(Tensor, CrossAttnTrace)> {
    let t = x.shape()[0];
    let d = cfg.d_model;
    let m = cfg.m_dialect_tokens;
    let table = dialect_rows(dialect_tokens, dialect_id, cfg)?;
    let qc = project(x, &lp.ca_wq);
    let kc = project(&table, &lp.ca_wk);
    let vc = project(&table, &lp.ca_wv);
    let scale = 1.0 / (d as f64).sqrt();
    let mut probs = Tensor::zeros(&[t, m]);
    matmul_nt_acc(probs.data_mut(), qc.data(), kc.data(), t, d, m);
    probs.scale(scale);
    for i in 0..t {
        softmax_in_place(probs.row_mut(i))?;
    }
    let mut ctx = Tensor::zeros(&[t, d]);
    matmul_acc(ctx.data_mut(), probs.data(), vc.data(), t, m, d);
    let mut y = project(&ctx, &lp.ca_wo);
    y.axpy(1.0, x);
    Ok((y, CrossAttnTrace { qc, kc, vc, probs, ctx }))
}

/// Backward of [`cross_attention_forward`]. Returns dx; accumulates weight
/// gradients into `dlp` and table-row gradients into `d_dialect_tokens`
/// (only this dialect's rows are touched).
pub fn cross_attention_backward(
    dy: &Tensor,
    x: &Tensor,
    dialect_id: u32,
    dialect_tokens: &Tensor,
    lp: &LayerParams,
    cfg: &ModelConfig,
    trace: &CrossAttnTrace,
    dlp: &mut LayerParams,
    d_dialect_tokens: &mut Tensor,
) -> Result<Tensor> {
    let t = x.shape()[0];
    let d = cfg.d_model;
    let m = cfg.m_dialect_tokens;
    let scale = 1.0 / (d as f64).sqrt();
    let table = dialect_rows(dialect_tokens, dialect_id, cfg)?;

    // y = x + ctx * Wo^T
    let mut dx = dy.clone();
    matmul_tn_acc(dlp.ca_wo.data_mut(), dy.data(), trace.ctx.data(), t, d, d);
    let mut dctx = Tensor::zeros(&[t, d]);
    matmul_acc(dctx.data_mut(), dy.data(), lp.ca_wo.data(), t, d, d);

    // ctx = probs * vc
    let mut dprobs = Tensor::zeros(&[t, m]);
    matmul_nt_acc(dprobs.data_mut(), dctx.data(), trace.vc.data(), t, d, m);
    let mut dvc = Tensor::zeros(&[m, d]);
    matmul_tn_acc(dvc.data_mut(), trace.probs.data(), dctx.data(), t, m, d);

    // probs = softmax(scores) rows; scores = qc * kc^T * scale
    let mut dscores = Tensor::zeros(&[t, m]);
    for i in 0..t {
        let p = trace.probs.row(i);
        let dp = dprobs.row(i);
        let sum: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for (ds, (&pv, &dpv)) in dscores.row_mut(i).iter_mut().zip(p.iter().zip(dp)) {
            *ds = pv * (dpv - sum) * scale;
        }
    }
    let mut dqc = Tensor::zeros(&[t, d]);
    matmul_acc(dqc.data_mut(), dscores.data(), trace.kc.data(), t, m, d);
    let mut dkc = Tensor::zeros(&[m, d]);
    matmul_tn_acc(dkc.data_mut(), dscores.data(), trace.qc.data(), t, m, d);

    // qc = x * Wq^T; kc/vc = table * Wk^T / Wv^T
    matmul_tn_acc(dlp.ca_wq.data_mut(), dqc.data(), x.data(), t, d, d);
    matmul_acc(dx.data_mut(), dqc.data(), lp.ca_wq.data(), t, d, d);
    matmul_tn_acc(dlp.ca_wk.data_mut(), dkc.data(), table.data(), m, d, d);
    matmul_tn_acc(dlp.ca_wv.data_mut(), dvc.data(), table.data(), m, d, d);
    let mut dtable = Tensor::zeros(&[m, d]);
    matmul_acc(dtable.data_mut(), dkc.data(), lp.ca_wk.data(), m, d, d);
    matmul_acc(dtable.data_mut(), dvc.data(), lp.ca_wv.data(), m, d, d);
    let start = dialect_id as usize * m;
    for j in 0..m {
        for (g, &v) in d_dialect_tokens.row_mut(start + j).iter_mut().zip(dtable.row(j)) {
            *g += v;
        }
    }
    Ok(dx)
}
