//! Core f64 kernels: matrix products, softmax, layer norm, SiLU.
//!
//! Forward and backward passes are written by hand; the backward derivations
//! are validated end to end by the finite-difference gradient checker. All
//! kernels are deterministic with a fixed summation order.

use crate::error::{Error, Result};

/// Epsilon inside layer norm's variance denominator. Kept tiny so normalized
/// rows have variance 1 to well below 1e-10 for unit-scale inputs.
pub const LN_EPS: f64 = 1e-12;

pub fn assert_all_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value in {what}")))
    }
}

/// Max-subtracted softmax over `x` in place. Errors on non-finite input.
pub fn softmax_in_place(x: &mut [f64]) -> Result<()> {
    assert_all_finite(x, "softmax input")?;
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

/// log(sum(exp(x))) with max subtraction.
pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = x.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Index of the first maximum element.
pub fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in x.iter().enumerate().skip(1) {
        if *v > x[best] {
            best = i;
        }
    }
    best
}

/// out = A (m x k) * B (k x n); `out` is overwritten.
pub fn matmul(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    matmul_acc(out, a, b, m, k, n);
}

/// out += A (m x k) * B (k x n).
pub fn matmul_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * bv;
            }
        }
    }
}

/// out += A (m x k) * B (n x k)^T, producing (m x n).
pub fn matmul_nt_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            *o += dot(a_row, b_row);
        }
    }
}

/// out += A (m x k)^T * B (m x n), producing (k x n).
pub fn matmul_tn_acc(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    for r in 0..m {
        let a_row = &a[r * k..(r + 1) * k];
        let b_row = &b[r * n..(r + 1) * n];
        for (p, &a_rp) in a_row.iter().enumerate() {
            if a_rp == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += a_rp * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// y = x * W^T + b for a single row x (in features) against W (out x in).
pub fn linear_row(out: &mut [f64], x: &[f64], w: &[f64], b: Option<&[f64]>) {
    let d_in = x.len();
    debug_assert_eq!(w.len(), out.len() * d_in);
    for (j, o) in out.iter_mut().enumerate() {
        *o = dot(x, &w[j * d_in..(j + 1) * d_in]);
    }
    if let Some(bias) = b {
        for (o, &bv) in out.iter_mut().zip(bias) {
            *o += bv;
        }
    }
}

/// Per-row layer norm cache: (mean, inv_std) for each row.
pub type LnCache = Vec<(f64, f64)>;

/// y = gain * (x - mean) / sqrt(var + eps) + bias, row by row.
pub fn layer_norm_forward(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    d: usize,
    out: &mut [f64],
    cache: &mut LnCache,
) {
    debug_assert_eq!(x.len() % d, 0);
    debug_assert_eq!(gain.len(), d);
    debug_assert_eq!(bias.len(), d);
    let rows = x.len() / d;
    cache.clear();
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let or = &mut out[r * d..(r + 1) * d];
        let mean = xr.iter().sum::<f64>() / d as f64;
        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for ((o, &xv), (&g, &b)) in or.iter_mut().zip(xr).zip(gain.iter().zip(bias)) {
            *o = (xv - mean) * inv * g + b;
        }
        cache.push((mean, inv));
    }
}

/// Backward of [`layer_norm_forward`]. Accumulates into dgain/dbias, writes dx.
pub fn layer_norm_backward(
    dy: &[f64],
    x: &[f64],
    gain: &[f64],
    d: usize,
    cache: &LnCache,
    dx: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
) {
    let rows = x.len() / d;
    debug_assert_eq!(cache.len(), rows);
    for r in 0..rows {
        let (mean, inv) = cache[r];
        let xr = &x[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let dxr = &mut dx[r * d..(r + 1) * d];
        // xhat = (x - mean) * inv; y = g * xhat + b
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            let xhat = (xr[j] - mean) * inv;
            let dxhat = dyr[j] * gain[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgain[j] += dyr[j] * xhat;
            dbias[j] += dyr[j];
        }
        let inv_d = 1.0 / d as f64;
        for j in 0..d {
            let xhat = (xr[j] - mean) * inv;
            let dxhat = dyr[j] * gain[j];
            dxr[j] = inv * (dxhat - sum_dxhat * inv_d - xhat * sum_dxhat_xhat * inv_d);
        }
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

pub fn silu_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                out[i * n + j] = s;
            }
        }
        out
    }

    #[test]
    fn softmax_uniform_pair() {
        let mut x = [0.0, 0.0];
        softmax_in_place(&mut x).unwrap();
        assert_eq!(x, [0.5, 0.5]);
    }

    #[test]
    fn softmax_extreme_is_finite() {
        let mut x = [1000.0, 0.0];
        softmax_in_place(&mut x).unwrap();
        assert!(x.iter().all(|v| v.is_finite()));
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!(x[1] >= 0.0);
    }

    #[test]
    fn softmax_matches_high_precision_reference() {
        // Reference computed with 50-digit arithmetic.
        let mut x = [1.0, 2.0, 3.0];
        softmax_in_place(&mut x).unwrap();
        let expect = [
            0.0900305731703804579980221,
            0.2447284710547976524729596,
            0.6652409557748218895290183,
        ];
        for (got, want) in x.iter().zip(&expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_sums_to_one_and_is_shift_invariant() {
        let base = [0.3, -1.2, 4.5, 0.0, 2.2];
        let mut a = base;
        softmax_in_place(&mut a).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&p| p > 0.0));
        let mut b = base.map(|v| v + 123.456);
        softmax_in_place(&mut b).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let mut x = [1.0, f64::NAN];
        assert!(softmax_in_place(&mut x).is_err());
        let mut y = [1.0, f64::INFINITY];
        assert!(softmax_in_place(&mut y).is_err());
    }

    #[test]
    fn matmul_matches_naive_triple_loop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let (m, k, n) = (7, 5, 9);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; m * n];
        matmul(&mut out, &a, &b, m, k, n);
        let want = naive_matmul(&a, &b, m, k, n);
        for (x, y) in out.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn transposed_products_match_explicit_transposes() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        let (m, k, n) = (4, 6, 3);
        let a: Vec<f64> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // A * B^T via matmul_nt_acc vs materialized transpose.
        let mut bt = vec![0.0; k * n];
        for j in 0..n {
            for p in 0..k {
                bt[p * n + j] = b[j * k + p];
            }
        }
        let mut want = vec![0.0; m * n];
        matmul(&mut want, &a, &bt, m, k, n);
        let mut got = vec![0.0; m * n];
        matmul_nt_acc(&mut got, &a, &b, m, k, n);
        for (x, y) in got.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
        // A^T * C via matmul_tn_acc.
        let c: Vec<f64> = (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for p in 0..k {
                at[p * m + i] = a[i * k + p];
            }
        }
        let mut want2 = vec![0.0; k * n];
        matmul(&mut want2, &at, &c, k, m, n);
        let mut got2 = vec![0.0; k * n];
        matmul_tn_acc(&mut got2, &a, &c, m, k, n);
        for (x, y) in got2.iter().zip(&want2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_rows_have_zero_mean_unit_variance() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let d = 16;
        let rows = 5;
        let x: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let gain = vec![1.0; d];
        let bias = vec![0.0; d];
        let mut out = vec![0.0; rows * d];
        let mut cache = LnCache::new();
        layer_norm_forward(&x, &gain, &bias, d, &mut out, &mut cache);
        for r in 0..rows {
            let row = &out[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            assert!(mean.abs() < 1e-10, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-10, "row var {var}");
        }
    }

    #[test]
    fn layer_norm_backward_matches_finite_differences() {
        use crate::numerics::gradcheck::grad_check;
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        let d = 6;
        let rows = 3;
        let x: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let gain: Vec<f64> = (0..d).map(|_| rng.gen_range(0.5..1.5)).collect();
        let bias: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        // Scalar objective: weighted sum of outputs.
        let w: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |xs: &[f64]| {
            let mut out = vec![0.0; rows * d];
            let mut cache = LnCache::new();
            layer_norm_forward(xs, &gain, &bias, d, &mut out, &mut cache);
            dot(&out, &w)
        };
        let mut out = vec![0.0; rows * d];
        let mut cache = LnCache::new();
        layer_norm_forward(&x, &gain, &bias, d, &mut out, &mut cache);
        let mut dx = vec![0.0; rows * d];
        let mut dgain = vec![0.0; d];
        let mut dbias = vec![0.0; d];
        layer_norm_backward(&w, &x, &gain, d, &cache, &mut dx, &mut dgain, &mut dbias);
        let report = grad_check(f, &x, &dx, 1e-5);
        assert!(report.max_rel_err < 1e-7, "{report:?}");
    }

    #[test]
    fn silu_derivative_matches_finite_differences() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let eps = 1e-6;
            let num = (silu(x + eps) - silu(x - eps)) / (2.0 * eps);
            assert!((num - silu_prime(x)).abs() < 1e-8);
        }
    }
}
