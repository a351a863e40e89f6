//! Offline-vs-streaming benchmark over a seeded workload of prompted
//! utterances.
//!
//! First-token latency for the offline path is its total synthesis time:
//! an offline synthesizer emits nothing until the whole utterance is
//! decoded. The streaming path's first token lands after prefill plus one
//! cached step. Real-time factor is decode wall time divided by nominal
//! audio duration at 50 tokens per second. Wall-clock numbers come from a
//! monotonic clock, as medians over repeated runs after warmups.
//!
//! Accuracy of the quantized streaming path is scored against the float
//! offline path with the corpus oracle: WER against the prompt's text and
//! timbre similarity against the same speaker's reference clip. Token
//! streams, metrics and hashes are seed-deterministic; the measured
//! latencies are inherently not and live in a separate `timings` block so
//! callers can keep reproducible artifacts apart from wall-clock data.

use crate::corpus::generate::{Corpus, Quality};
use crate::corpus::metrics::{sim, speaker_signature, wer};
use crate::corpus::dialect::oracle_asr;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::params::Parameters;
use crate::provenance::Provenance;
use crate::seeds::{derive_seed, streams};
use crate::serve::engine::{Engine, Precision};
use crate::serve::kv_cache::{pages_for, PoolConfig};
use crate::serve::offline::offline_decode;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::Instant;

/// Nominal audio rate: 50 speech tokens per second of synthesized audio.
pub const TOKENS_PER_SECOND: f64 = 50.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Prompted utterances in the workload.
    pub n_sessions: usize,
    /// Minimum total prefix length (BOS + text + SEP + prompt + SEP).
    pub min_prompt_len: usize,
    /// Token budget per decode.
    pub max_new: usize,
    /// Timed repetitions kept for the medians.
    pub runs: usize,
    /// Untimed repetitions before measuring.
    pub warmups: usize,
    pub page_size: usize,
    /// Page-pool size; 0 sizes the pool to the workload automatically.
    pub pool_pages: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_sessions: 3,
            min_prompt_len: 256,
            max_new: 24,
            runs: 20,
            warmups: 3,
            page_size: 16,
            pool_pages: 0,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sessions == 0 {
            return Err(Error::Config("bench workload must not be empty".into()));
        }
        if self.runs == 0 {
            return Err(Error::Config("bench needs at least one timed run".into()));
        }
        if self.max_new == 0 {
            return Err(Error::Config("max_new must be >= 1".into()));
        }
        if self.page_size == 0 {
            return Err(Error::Config("page_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One prompted utterance: the text to say, a same-speaker prompt to copy
/// timbre from, and that speaker's reference clip for similarity scoring.
#[derive(Debug, Clone)]
pub struct WorkloadItem {
    pub text: Vec<u32>,
    pub speaker_prompt: Vec<u32>,
    pub dialect_id: u32,
    pub reference_speech: Vec<u32>,
}

/// Draws a seeded workload from the corpus: fine utterances whose speaker
/// has at least one other fine clip to build the prompt from. Prompts are
/// padded by cycling those clips until the prefix reaches
/// `min_prompt_len`, and truncated so prefix + max_new fits the window.
pub fn build_workload(
    corpus: &Corpus,
    cfg: &ModelConfig,
    bcfg: &BenchConfig,
) -> Result<Vec<WorkloadItem>> {
    bcfg.validate()?;
    let all: Vec<usize> = (0..corpus.utterances.len()).collect();
    let by_speaker = corpus.fine_index(&all);
    let mut candidates: Vec<usize> = all
        .iter()
        .copied()
        .filter(|&i| {
            let u = &corpus.utterances[i];
            u.quality == Quality::Fine
                && by_speaker
                    .get(&(u.dialect_id, u.speaker_id))
                    .map(|v| v.len() >= 2)
                    .unwrap_or(false)
        })
        .collect();
    if candidates.len() < bcfg.n_sessions {
        return Err(Error::Data(format!(
            "workload needs {} promptable fine utterances, corpus has {}",
            bcfg.n_sessions,
            candidates.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(bcfg.seed, streams::BENCH));
    candidates.shuffle(&mut rng);
    let mut items = Vec::with_capacity(bcfg.n_sessions);
    for &idx in candidates.iter().take(bcfg.n_sessions) {
        let u = &corpus.utterances[idx];
        let fixed = u.text.len() + 3; // BOS + text + SEP + ... + SEP
        let needed = bcfg.min_prompt_len.saturating_sub(fixed).max(8);
        let ceiling = cfg
            .max_seq_len
            .checked_sub(bcfg.max_new + fixed)
            .filter(|&c| c >= needed)
            .ok_or_else(|| {
                Error::Config(format!(
                    "min_prompt_len {} + max_new {} does not fit max_seq_len {}",
                    bcfg.min_prompt_len, bcfg.max_new, cfg.max_seq_len
                ))
            })?;
        let _ = ceiling;
        let others = &by_speaker[&(u.dialect_id, u.speaker_id)];
        let mut prompt = Vec::with_capacity(needed);
        'fill: loop {
            for &j in others {
                if j == idx {
                    continue;
                }
                prompt.extend_from_slice(&corpus.utterances[j].speech);
                if prompt.len() >= needed {
                    break 'fill;
                }
            }
        }
        prompt.truncate(needed);
        items.push(WorkloadItem {
            text: u.text.clone(),
            speaker_prompt: prompt,
            dialect_id: u.dialect_id,
            reference_speech: u.speech.clone(),
        });
    }
    Ok(items)
}

/// Quality scores for one decode path, averaged over the workload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathQuality {
    pub wer: f64,
    pub sim: f64,
}

/// Per-session deterministic record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRecord {
    pub dialect_id: u32,
    pub prefix_len: usize,
    pub offline_tokens: usize,
    pub online_tokens: usize,
    pub offline_hash: String,
    pub online_hash: String,
    pub wer_offline: f64,
    pub wer_online: f64,
    pub sim_offline: f64,
    pub sim_online: f64,
}

/// The reproducible half of a benchmark: identical seeds give identical
/// bytes. No wall-clock values appear here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchQuality {
    pub provenance: Provenance,
    pub n_sessions: usize,
    pub page_size: usize,
    pub offline: PathQuality,
    pub online: PathQuality,
    pub sessions: Vec<SessionRecord>,
}

/// Raw run-level wall-clock measurements (post-warmup), one entry per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchTimings {
    pub runs: usize,
    pub warmups: usize,
    pub first_token_offline_s: Vec<f64>,
    pub first_token_online_s: Vec<f64>,
    pub rtf_offline: Vec<f64>,
    pub rtf_online: Vec<f64>,
}

/// Full benchmark result: medians, ratios (online/offline), per-path
/// quality, and the raw timing samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub quality: BenchQuality,
    pub first_token_offline_s: f64,
    pub first_token_online_s: f64,
    pub first_token_ratio: f64,
    pub rtf_offline: f64,
    pub rtf_online: f64,
    pub rtf_ratio: f64,
    pub n_sessions: usize,
    pub timings: BenchTimings,
}

impl BenchReport {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.first_token_offline_s,
            self.first_token_online_s,
            self.first_token_ratio,
            self.rtf_offline,
            self.rtf_online,
            self.rtf_ratio,
            self.quality.offline.wer,
            self.quality.online.wer,
            self.quality.offline.sim,
            self.quality.online.sim,
        ];
        if vals.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric("non-finite value in bench report".into()))
        }
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("sessions: {}  page_size: {}\n", self.n_sessions, self.quality.page_size));
        s.push_str("metric                 offline      online       ratio\n");
        s.push_str(&format!(
            "first-token latency  {:>9.4}s  {:>9.4}s  {:>9.3}\n",
            self.first_token_offline_s, self.first_token_online_s, self.first_token_ratio
        ));
        s.push_str(&format!(
            "real-time factor     {:>10.4}  {:>10.4}  {:>9.3}\n",
            self.rtf_offline, self.rtf_online, self.rtf_ratio
        ));
        s.push_str(&format!(
            "word error rate      {:>10.4}  {:>10.4}\n",
            self.quality.offline.wer, self.quality.online.wer
        ));
        s.push_str(&format!(
            "speaker similarity   {:>10.4}  {:>10.4}\n",
            self.quality.offline.sim, self.quality.online.sim
        ));
        s
    }
}

fn stream_hash(tokens: &[u32]) -> String {
    let mut hasher = Sha256::new();
    for t in tokens {
        hasher.update(t.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(16);
    for byte in &digest[..8] {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs the benchmark: float offline path vs int8 streaming path on the
/// same workload. The engine is built once (model load is not request
/// latency); every timed run decodes every session on both paths.
pub fn bench(
    params: &Parameters,
    cfg: &ModelConfig,
    corpus: &Corpus,
    bcfg: &BenchConfig,
) -> Result<BenchReport> {
    bench_with_precision(params, cfg, corpus, bcfg, Precision::Int8)
}

/// [`bench`] with the streaming engine's weight precision chosen by the
/// caller (the offline reference is always float).
pub fn bench_with_precision(
    params: &Parameters,
    cfg: &ModelConfig,
    corpus: &Corpus,
    bcfg: &BenchConfig,
    precision: Precision,
) -> Result<BenchReport> {
    bcfg.validate()?;
    let items = build_workload(corpus, cfg, bcfg)?;
    let planes = cfg.n_layers * cfg.n_kv_heads;
    let longest = items
        .iter()
        .map(|it| it.text.len() + it.speaker_prompt.len() + 3)
        .max()
        .expect("nonempty workload");
    let pool_pages = if bcfg.pool_pages > 0 {
        bcfg.pool_pages
    } else {
        planes * (pages_for(longest + bcfg.max_new, bcfg.page_size) + 1)
    };
    let engine = Engine::new(
        params,
        cfg,
        &PoolConfig { page_size: bcfg.page_size, n_pages: pool_pages },
        precision,
    )?;

    // Deterministic quality pass: token streams, hashes, oracle metrics.
    let mut sessions = Vec::with_capacity(items.len());
    let mut sums = [0.0; 4]; // wer_off, wer_on, sim_off, sim_on
    for it in &items {
        let spec = &corpus.specs[it.dialect_id as usize];
        let off = offline_decode(
            params,
            cfg,
            &it.text,
            Some(&it.speaker_prompt),
            it.dialect_id,
            bcfg.max_new,
        )?;
        let mut session =
            engine.new_session(&it.text, Some(&it.speaker_prompt), it.dialect_id)?;
        let on = session.run_greedy(bcfg.max_new)?;
        drop(session);

        let ref_sig = speaker_signature(&it.reference_speech, &cfg.vocab)?;
        let wer_off = wer(&it.text, &oracle_asr(&off.tokens, spec, &cfg.vocab))?;
        let wer_on = wer(&it.text, &oracle_asr(&on, spec, &cfg.vocab))?;
        let sim_off = sim(&speaker_signature(&off.tokens, &cfg.vocab)?, &ref_sig);
        let sim_on = sim(&speaker_signature(&on, &cfg.vocab)?, &ref_sig);
        sums[0] += wer_off;
        sums[1] += wer_on;
        sums[2] += sim_off;
        sums[3] += sim_on;
        sessions.push(SessionRecord {
            dialect_id: it.dialect_id,
            prefix_len: it.text.len() + it.speaker_prompt.len() + 3,
            offline_tokens: off.tokens.len(),
            online_tokens: on.len(),
            offline_hash: stream_hash(&off.tokens),
            online_hash: stream_hash(&on),
            wer_offline: wer_off,
            wer_online: wer_on,
            sim_offline: sim_off,
            sim_online: sim_on,
        });
    }
    let n = items.len() as f64;
    let quality = BenchQuality {
        provenance: Provenance::new(&(cfg, bcfg), bcfg.seed)?,
        n_sessions: items.len(),
        page_size: bcfg.page_size,
        offline: PathQuality { wer: sums[0] / n, sim: sums[2] / n },
        online: PathQuality { wer: sums[1] / n, sim: sums[3] / n },
        sessions,
    };

    // Timing pass: monotonic clock, warmups discarded, medians over runs.
    let mut t_first_off = Vec::with_capacity(bcfg.runs);
    let mut t_first_on = Vec::with_capacity(bcfg.runs);
    let mut t_rtf_off = Vec::with_capacity(bcfg.runs);
    let mut t_rtf_on = Vec::with_capacity(bcfg.runs);
    for run in 0..bcfg.warmups + bcfg.runs {
        let mut run_first_off = 0.0;
        let mut run_first_on = 0.0;
        let mut run_rtf_off = 0.0;
        let mut run_rtf_on = 0.0;
        for it in &items {
            let t0 = Instant::now();
            let off = offline_decode(
                params,
                cfg,
                &it.text,
                Some(&it.speaker_prompt),
                it.dialect_id,
                bcfg.max_new,
            )?;
            let dt_off = t0.elapsed().as_secs_f64();
            if off.tokens.is_empty() {
                return Err(Error::UndefinedMetric(
                    "offline decode emitted no tokens; latency undefined".into(),
                ));
            }

            let t0 = Instant::now();
            let mut session =
                engine.new_session(&it.text, Some(&it.speaker_prompt), it.dialect_id)?;
            let on = session.run_greedy(bcfg.max_new)?;
            let dt_on = t0.elapsed().as_secs_f64();
            let first_on = session
                .first_token_time()
                .ok_or_else(|| {
                    Error::UndefinedMetric(
                        "online decode emitted no tokens; latency undefined".into(),
                    )
                })?
                .as_secs_f64();
            drop(session);

            run_first_off += dt_off; // offline emits only after full synthesis
            run_first_on += first_on;
            run_rtf_off += dt_off / (off.tokens.len() as f64 / TOKENS_PER_SECOND);
            run_rtf_on += dt_on / (on.len() as f64 / TOKENS_PER_SECOND);
        }
        if run < bcfg.warmups {
            continue;
        }
        let n = items.len() as f64;
        t_first_off.push(run_first_off / n);
        t_first_on.push(run_first_on / n);
        t_rtf_off.push(run_rtf_off / n);
        t_rtf_on.push(run_rtf_on / n);
    }

    let first_off = median(&t_first_off);
    let first_on = median(&t_first_on);
    let rtf_off = median(&t_rtf_off);
    let rtf_on = median(&t_rtf_on);
    let report = BenchReport {
        n_sessions: quality.n_sessions,
        first_token_offline_s: first_off,
        first_token_online_s: first_on,
        first_token_ratio: first_on / first_off,
        rtf_offline: rtf_off,
        rtf_online: rtf_on,
        rtf_ratio: rtf_on / rtf_off,
        quality,
        timings: BenchTimings {
            runs: bcfg.runs,
            warmups: bcfg.warmups,
            first_token_offline_s: t_first_off,
            first_token_online_s: t_first_on,
            rtf_offline: t_rtf_off,
            rtf_online: t_rtf_on,
        },
    };
    report.validate()?;
    Ok(report)
}
