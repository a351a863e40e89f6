//! Stable, diff-friendly rendering of evaluation results. The table form
//! is fixed-width with four decimals; the JSON form round-trips through
//! serde. Both carry the selection hash and seed so a report is traceable
//! to the exact test set that produced it.

use super::{CompareReport, Metrics};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Json,
}

const HUMAN_METRIC_NOTE: &str =
    "MOS and CMOS are human listening metrics; this harness reports them as n/a.";

pub fn render_metrics(m: &Metrics, format: ReportFormat) -> Result<String> {
    m.validate()?;
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(m)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Table => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "mode: {}    selection: {}    seed: {}",
                m.mode.slug(),
                m.provenance.config_hash,
                m.provenance.seed
            );
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>8} {:>8} {:>6} {:>6}",
                "dialect", "n", "WER", "SIM", "MOS", "CMOS"
            );
            for d in &m.per_dialect {
                let _ = writeln!(
                    out,
                    "{:<10} {:>6} {:>8.4} {:>8.4} {:>6} {:>6}",
                    d.dialect_id, d.n, d.wer, d.sim, "n/a", "n/a"
                );
            }
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>8.4} {:>8.4} {:>6} {:>6}",
                "overall", m.n, m.wer, m.sim, "n/a", "n/a"
            );
            let _ = writeln!(out, "{HUMAN_METRIC_NOTE}");
            Ok(out)
        }
    }
}

pub fn render_compare(r: &CompareReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(r)?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Table => {
            let mut out = String::new();
            let _ = writeln!(
                out,
                "compare: {} vs {}    selection: {}    seed: {}",
                r.mode_a.slug(),
                r.mode_b.slug(),
                r.selection_hash,
                r.seed
            );
            let _ = writeln!(
                out,
                "{:<10} {:>12} {:>12}",
                "dialect", "dWER", "dSIM"
            );
            for d in &r.per_dialect {
                let _ = writeln!(
                    out,
                    "{:<10} {:>12.4} {:>12.4}",
                    d.dialect_id, d.wer_delta, d.sim_delta
                );
            }
            let _ = writeln!(
                out,
                "{:<10} {:>12.4} {:>12.4}",
                "overall", r.wer_delta, r.sim_delta
            );
            let _ = writeln!(
                out,
                "improvement (positive = better): WER {:+.4}  SIM {:+.4}",
                r.wer_improvement, r.sim_improvement
            );
            let _ = writeln!(out, "{HUMAN_METRIC_NOTE}");
            Ok(out)
        }
    }
}

/// Writes `eval_<mode>_<seed>.txt` and `.json` into `dir`, returning both
/// paths.
pub fn write_metrics_reports(dir: &Path, m: &Metrics) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(Error::Io)?;
    let stem = format!("eval_{}_{}", m.mode.slug(), m.provenance.seed);
    let txt = dir.join(format!("{stem}.txt"));
    let json = dir.join(format!("{stem}.json"));
    std::fs::write(&txt, render_metrics(m, ReportFormat::Table)?).map_err(Error::Io)?;
    std::fs::write(&json, render_metrics(m, ReportFormat::Json)?).map_err(Error::Io)?;
    Ok((txt, json))
}
