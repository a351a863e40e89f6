//! Central-difference gradient checking.
//!
//! The checker perturbs each coordinate by +/- eps, evaluates the scalar
//! objective, and compares the numeric derivative against the analytic
//! gradient. Relative error uses a floor tied to the gradient's own scale so
//! coordinates whose true gradient is zero are judged by absolute noise, not
//! divided by it.

/// Outcome of a gradient check over every coordinate.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub n_params: usize,
}

/// Compares `analytic` against central finite differences of `f` around `x`.
///
/// Relative error per coordinate is |a - n| / max(|a|, |n|, tau) with
/// tau = 1e-3 * max(max|a|, max|n|, 1e-12).
pub fn grad_check<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len());
    let mut xs = x.to_vec();
    let mut numeric = vec![0.0; x.len()];
    for i in 0..xs.len() {
        let orig = xs[i];
        xs[i] = orig + eps;
        let fp = f(&xs);
        xs[i] = orig - eps;
        let fm = f(&xs);
        xs[i] = orig;
        numeric[i] = (fp - fm) / (2.0 * eps);
    }
    report_against(analytic, &numeric)
}

fn report_against(analytic: &[f64], numeric: &[f64]) -> GradCheckReport {
    let scale_a = analytic.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale_n = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tau = 1e-3 * scale_a.max(scale_n).max(1e-12);
    let mut report = GradCheckReport {
        max_abs_err: 0.0,
        max_rel_err: 0.0,
        worst_index: 0,
        n_params: analytic.len(),
    };
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(tau);
        if abs > report.max_abs_err {
            report.max_abs_err = abs;
        }
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_index = i;
        }
    }
    report
}
