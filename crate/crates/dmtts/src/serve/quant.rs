//! Symmetric per-output-channel int8 weight quantization.
//!
//! Every linear projection stores one f64 scale per output channel plus an
//! int8 payload; embeddings, dialect tokens, norm gains and biases stay
//! float. The matvec dequantizes on the fly: accumulate q * x in f64 across
//! the row, then multiply by the channel scale once. An all-zero channel
//! gets scale 1 (its quantized row is exactly zero) and is counted so
//! callers can surface the degenerate case.

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::Parameters;
use crate::numerics::ops::dot;
use crate::numerics::tensor::Tensor;

/// One quantized matrix: row-major int8 payload with a per-row scale.
/// Invariant: |w - scale[r] * q| <= scale[r] / 2 elementwise.
#[derive(Debug, Clone)]
pub struct Int8Matrix {
    rows: usize,
    cols: usize,
    pub q: Vec<i8>,
    pub scale: Vec<f64>,
    /// Output channels whose float row was identically zero.
    pub zero_channels: Vec<usize>,
}

impl Int8Matrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Dequantized value at (r, c).
    pub fn dequant(&self, r: usize, c: usize) -> f64 {
        self.scale[r] * f64::from(self.q[r * self.cols + c])
    }

    /// scale[r] * sum_c q[r,c] * x[c]: int8 payload, f64 accumulate, one
    /// multiply by the channel scale at the end.
    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.cols);
        let row = &self.q[r * self.cols..(r + 1) * self.cols];
        let mut acc = 0.0;
        for (&qv, &xv) in row.iter().zip(x) {
            acc += f64::from(qv) * xv;
        }
        self.scale[r] * acc
    }
}

/// Quantizes one float matrix: scale_r = max_abs(row_r) / 127,
/// q = round(w / scale_r). A zero row keeps scale 1 and is flagged.
pub fn quantize_tensor(w: &Tensor) -> Int8Matrix {
    let (rows, cols) = (w.shape()[0], w.shape()[1]);
    let mut q = Vec::with_capacity(rows * cols);
    let mut scale = Vec::with_capacity(rows);
    let mut zero_channels = Vec::new();
    for r in 0..rows {
        let row = w.row(r);
        let max_abs = row.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let s = if max_abs == 0.0 {
            zero_channels.push(r);
            1.0
        } else {
            max_abs / 127.0
        };
        for &v in row {
            q.push((v / s).round() as i8);
        }
        scale.push(s);
    }
    Int8Matrix { rows, cols, q, scale, zero_channels }
}

/// A weight matrix as the engine consumes it: float rows for the exact
/// path, int8 payload plus per-channel scales for the quantized path.
#[derive(Debug, Clone)]
pub enum MatRepr {
    Dense(Tensor),
    Int8(Int8Matrix),
}

impl MatRepr {
    pub fn rows(&self) -> usize {
        match self {
            MatRepr::Dense(t) => t.shape()[0],
            MatRepr::Int8(m) => m.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            MatRepr::Dense(t) => t.shape()[1],
            MatRepr::Int8(m) => m.cols(),
        }
    }

    pub fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        match self {
            MatRepr::Dense(t) => dot(x, t.row(r)),
            MatRepr::Int8(m) => m.row_dot(r, x),
        }
    }

    /// out[r] = sum_c W[r,c] x[c]; out is overwritten.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.rows());
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.row_dot(r, x);
        }
    }
}

/// Int8 payloads and scales for every linear projection of one layer.
#[derive(Debug, Clone)]
pub struct QuantLayer {
    pub wq: Int8Matrix,
    pub wk: Int8Matrix,
    pub wv: Int8Matrix,
    pub wo: Int8Matrix,
    pub ca_wq: Int8Matrix,
    pub ca_wk: Int8Matrix,
    pub ca_wv: Int8Matrix,
    pub ca_wo: Int8Matrix,
    pub router: Int8Matrix,
    /// Per expert: (w1, w2). Biases stay float in the engine.
    pub experts: Vec<(Int8Matrix, Int8Matrix)>,
}

/// Quantized weights for the whole model. Embeddings, dialect tokens,
/// layer norms and biases are deliberately absent: they stay float.
#[derive(Debug, Clone)]
pub struct QuantParams {
    pub layers: Vec<QuantLayer>,
    pub head: Int8Matrix,
    /// Total all-zero output channels across every quantized matrix.
    pub n_zero_channels: usize,
}

/// Quantizes every linear projection of `params`. Rejects non-finite
/// weights (a scale derived from NaN/inf poisons the payload).
pub fn quantize_weights(params: &Parameters, cfg: &ModelConfig) -> Result<QuantParams> {
    if !params.is_all_finite() {
        return Err(Error::Numeric("cannot quantize non-finite parameters".into()));
    }
    let mut n_zero = 0;
    let mut take = |t: &Tensor| {
        let m = quantize_tensor(t);
        n_zero += m.zero_channels.len();
        m
    };
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for lp in &params.layers {
        layers.push(QuantLayer {
            wq: take(&lp.wq),
            wk: take(&lp.wk),
            wv: take(&lp.wv),
            wo: take(&lp.wo),
            ca_wq: take(&lp.ca_wq),
            ca_wk: take(&lp.ca_wk),
            ca_wv: take(&lp.ca_wv),
            ca_wo: take(&lp.ca_wo),
            router: take(&lp.router),
            experts: lp.experts.iter().map(|ex| (take(&ex.w1), take(&ex.w2))).collect(),
        });
    }
    let head = take(&params.head);
    Ok(QuantParams { layers, head, n_zero_channels: n_zero })
}
