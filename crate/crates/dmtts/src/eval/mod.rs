//! Evaluation protocols: zero-shot prompted synthesis, speaker-fine-tuned
//! comparison, and unified-vs-specialist comparison, all scored with the
//! corpus oracle (exact ASR for WER, timbre signatures for SIM).
//!
//! One protocol serves every mode: for each held-out test clip, draw a
//! same-speaker prompt from that speaker's *other* held-out clips, decode
//! greedily, then score the generated stream's words against the text and
//! its timbre signature against the prompt's. The mode tag records which
//! checkpoint the numbers describe; [`compare`] refuses to mix metrics
//! from different test-set selections or seeds, but comparing modes is the
//! point. A generated stream with no decodable words scores SIM 0 (there
//! is no voice to compare) rather than failing the whole run, so untrained
//! checkpoints evaluate cleanly.
//!
//! MOS and CMOS are human listening metrics; reports carry explicit "n/a"
//! columns for them instead of fabricated proxies.

pub mod report;

pub use report::{render_compare, render_metrics, write_metrics_reports, ReportFormat};

use crate::corpus::dialect::oracle_asr;
use crate::corpus::generate::{Corpus, Quality};
use crate::corpus::metrics::{sim, speaker_signature, wer};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::decode::greedy_decode;
use crate::model::params::Parameters;
use crate::provenance::Provenance;
use crate::seeds::{derive_seed, streams};
use crate::train::stage::draw_prompt;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Which checkpoint flavor the metrics describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    ZeroShot,
    SpeakerFt,
    UnifiedVsSpecialist,
}

impl EvalMode {
    /// Stable token for artifact filenames.
    pub fn slug(self) -> &'static str {
        match self {
            EvalMode::ZeroShot => "zero_shot",
            EvalMode::SpeakerFt => "speaker_ft",
            EvalMode::UnifiedVsSpecialist => "unified_vs_specialist",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalConfig {
    pub mode: EvalMode,
    /// Dialects to test; None = every dialect.
    pub dialects: Option<Vec<u32>>,
    /// Speakers to test; None = every speaker in the pool.
    pub speakers: Option<Vec<u32>>,
    /// Test clips drawn per dialect (fewer if the pool runs short).
    pub clips_per_dialect: usize,
    pub prompt_len_min: usize,
    pub prompt_len_max: usize,
    /// Decode budget per clip.
    pub max_new: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn new(mode: EvalMode) -> EvalConfig {
        EvalConfig {
            mode,
            dialects: None,
            speakers: None,
            clips_per_dialect: 50,
            prompt_len_min: 50,
            prompt_len_max: 150,
            max_new: 64,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clips_per_dialect == 0 {
            return Err(Error::Config("clips_per_dialect must be >= 1".into()));
        }
        if self.prompt_len_min == 0 || self.prompt_len_min > self.prompt_len_max {
            return Err(Error::Config(format!(
                "prompt length range [{}, {}] is empty",
                self.prompt_len_min, self.prompt_len_max
            )));
        }
        if self.max_new == 0 {
            return Err(Error::Config("max_new must be >= 1".into()));
        }
        Ok(())
    }

    /// Provenance over everything that defines the test set: selection,
    /// prompt range, budget, seed. The mode is deliberately excluded so
    /// cross-mode comparison on the same selection is legal.
    pub fn selection_provenance(&self) -> Result<Provenance> {
        #[derive(Serialize)]
        struct Selection<'a> {
            dialects: &'a Option<Vec<u32>>,
            speakers: &'a Option<Vec<u32>>,
            clips_per_dialect: usize,
            prompt_len_min: usize,
            prompt_len_max: usize,
            max_new: usize,
        }
        Provenance::new(
            &Selection {
                dialects: &self.dialects,
                speakers: &self.speakers,
                clips_per_dialect: self.clips_per_dialect,
                prompt_len_min: self.prompt_len_min,
                prompt_len_max: self.prompt_len_max,
                max_new: self.max_new,
            },
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialectMetrics {
    pub dialect_id: u32,
    pub wer: f64,
    pub sim: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: EvalMode,
    pub provenance: Provenance,
    pub wer: f64,
    pub sim: f64,
    pub per_dialect: Vec<DialectMetrics>,
    pub n: usize,
    /// Corpus indices of every clip scored, sorted: the split audit checks
    /// this set never intersects the training split.
    pub used_clips: Vec<usize>,
}

impl Metrics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.wer >= 0.0
            && self.wer.is_finite()
            && (-1.0..=1.0).contains(&self.sim)
            && self.n > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric("metrics out of range".into()))
        }
    }
}

/// WER and SIM for one generated stream. `ref_sig` is the reference
/// signature (same-speaker prompt or clip). SIM is 0 when the stream has
/// no decodable words.
fn score_stream(
    tokens: &[u32],
    text: &[u32],
    ref_sig: &[f64],
    spec: &crate::corpus::dialect::DialectSpec,
    vocab: &crate::corpus::vocab::Vocab,
) -> Result<(f64, f64)> {
    let hyp = oracle_asr(tokens, spec, vocab);
    let w = wer(text, &hyp)?;
    let s = match speaker_signature(tokens, vocab) {
        Ok(sig) => sim(&sig, ref_sig),
        Err(Error::UndefinedMetric(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok((w, s))
}

/// Runs the prompted evaluation protocol over held-out clips.
///
/// `eval_pool` holds the corpus indices eligible as test clips and prompt
/// material; training indices must not appear in it. Clip draws, prompt
/// draws and aggregation order are all fixed by the seed.
pub fn evaluate(
    params: &Parameters,
    cfg: &ModelConfig,
    corpus: &Corpus,
    eval_pool: &[usize],
    ecfg: &EvalConfig,
) -> Result<Metrics> {
    ecfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ecfg.seed, streams::EVAL));
    let fine_index = corpus.fine_index(eval_pool);
    let mut dialects: Vec<u32> = match &ecfg.dialects {
        Some(ds) => {
            let mut ds = ds.clone();
            ds.sort_unstable();
            ds.dedup();
            ds
        }
        None => (0..cfg.vocab.n_dialects).collect(),
    };
    dialects.retain(|&d| d < cfg.vocab.n_dialects);
    if dialects.is_empty() {
        return Err(Error::Config("no valid dialects selected".into()));
    }

    let admits_speaker = |s: u32| ecfg.speakers.as_ref().map(|v| v.contains(&s)).unwrap_or(true);
    let mut per_dialect = Vec::with_capacity(dialects.len());
    let mut sum_wer = 0.0;
    let mut sum_sim = 0.0;
    let mut n_total = 0usize;
    let mut used = Vec::new();
    for &d in &dialects {
        // A test clip must leave at least one same-speaker clip in the
        // pool to serve as its prompt.
        let mut clips: Vec<usize> = eval_pool
            .iter()
            .copied()
            .filter(|&i| {
                let u = &corpus.utterances[i];
                u.quality == Quality::Fine
                    && u.dialect_id == d
                    && admits_speaker(u.speaker_id)
                    && fine_index
                        .get(&(d, u.speaker_id))
                        .map(|v| v.len() >= 2)
                        .unwrap_or(false)
            })
            .collect();
        if clips.is_empty() {
            return Err(Error::Data(format!("no held-out test clips for dialect {d}")));
        }
        clips.sort_unstable();
        clips.shuffle(&mut rng);
        clips.truncate(ecfg.clips_per_dialect);

        let mut d_wer = 0.0;
        let mut d_sim = 0.0;
        for &idx in &clips {
            let u = &corpus.utterances[idx];
            let prompt = draw_prompt(
                corpus,
                &fine_index,
                idx,
                ecfg.prompt_len_min,
                ecfg.prompt_len_max,
                &mut rng,
            )
            .ok_or_else(|| {
                Error::Data(format!(
                    "no same-speaker prompt material for dialect {d} speaker {}",
                    u.speaker_id
                ))
            })?;
            let (tokens, _) =
                greedy_decode(params, cfg, &u.text, Some(&prompt), d, ecfg.max_new)?;
            let ref_sig = speaker_signature(&prompt, &cfg.vocab)?;
            let (w, s) =
                score_stream(&tokens, &u.text, &ref_sig, &corpus.specs[d as usize], &cfg.vocab)?;
            d_wer += w;
            d_sim += s;
        }
        let n = clips.len();
        sum_wer += d_wer;
        sum_sim += d_sim;
        n_total += n;
        used.extend_from_slice(&clips);
        per_dialect.push(DialectMetrics {
            dialect_id: d,
            wer: d_wer / n as f64,
            sim: d_sim / n as f64,
            n,
        });
    }
    used.sort_unstable();
    let metrics = Metrics {
        mode: ecfg.mode,
        provenance: ecfg.selection_provenance()?,
        wer: sum_wer / n_total as f64,
        sim: sum_sim / n_total as f64,
        per_dialect,
        n: n_total,
        used_clips: used,
    };
    metrics.validate()?;
    Ok(metrics)
}

/// Teacher-forced next-token accuracy over fine clips in `pool`: the
/// fraction of target positions (speech tokens plus EOS) where the argmax
/// of the masked logits equals the ground-truth token, given the true
/// prefix.
///
/// `prompt_len` > 0 prepends a same-speaker prompt (other pool clips of
/// that speaker, sorted order, truncated), matching the prompted protocol
/// everywhere else; it also makes the first word's timbre inferable, which
/// an unprompted model cannot manage on unseen speakers. 0 scores without
/// a prompt (useful on training data a model has memorized). Clips are
/// taken in sorted pool order so the number is reproducible without an
/// RNG; prompted scoring skips clips whose speaker has no other pool clip.
pub fn teacher_forced_accuracy(
    params: &Parameters,
    cfg: &ModelConfig,
    corpus: &Corpus,
    pool: &[usize],
    max_clips: usize,
    prompt_len: usize,
) -> Result<f64> {
    use crate::model::forward::{build_input, forward_hidden, masked_logits_row};
    if max_clips == 0 {
        return Err(Error::Config("max_clips must be >= 1".into()));
    }
    let fine_index = corpus.fine_index(pool);
    let mut clips: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&i| corpus.utterances[i].quality == Quality::Fine)
        .collect();
    clips.sort_unstable();
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut scored = 0usize;
    for &i in &clips {
        if scored == max_clips {
            break;
        }
        let u = &corpus.utterances[i];
        let prompt: Option<Vec<u32>> = if prompt_len == 0 {
            None
        } else {
            let mut p = Vec::with_capacity(prompt_len);
            for &j in fine_index.get(&(u.dialect_id, u.speaker_id)).into_iter().flatten() {
                if j == i || p.len() >= prompt_len {
                    continue;
                }
                p.extend_from_slice(&corpus.utterances[j].speech);
            }
            p.truncate(prompt_len);
            if p.is_empty() {
                continue;
            }
            Some(p)
        };
        let item = build_input(
            &u.text,
            &u.speech,
            prompt.as_deref(),
            u.dialect_id,
            &cfg.vocab,
            cfg.max_seq_len,
        )?;
        let trace = forward_hidden(params, cfg, &item.input, u.dialect_id)?;
        for (j, &target) in item.targets.iter().enumerate() {
            let logits = masked_logits_row(params, cfg, trace.h_final.row(item.last_sep + j));
            let mut best = 0usize;
            for (k, &z) in logits.iter().enumerate() {
                if z > logits[best] {
                    best = k;
                }
            }
            hits += (best as u32 == target) as usize;
            total += 1;
        }
        scored += 1;
    }
    if scored == 0 {
        return Err(Error::Data("no fine clips to score".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// One speaker-discrimination trial outcome tally: in each trial the model
/// synthesizes with a same-speaker prompt, and wins when the generation is
/// closer to that prompt's signature than to a reference clip from a
/// speaker with a different timbre offset (an acoustically distinct
/// voice; equal-offset synthetic speakers are identical by construction).
pub fn discrimination_trials(
    params: &Parameters,
    cfg: &ModelConfig,
    corpus: &Corpus,
    eval_pool: &[usize],
    n_trials: usize,
    prompt_len_min: usize,
    prompt_len_max: usize,
    max_new: usize,
    seed: u64,
) -> Result<(usize, usize)> {
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, streams::EVAL ^ (1 << 32)));
    let fine_index = corpus.fine_index(eval_pool);
    let mut promptable: Vec<usize> = eval_pool
        .iter()
        .copied()
        .filter(|&i| {
            let u = &corpus.utterances[i];
            u.quality == Quality::Fine
                && fine_index
                    .get(&(u.dialect_id, u.speaker_id))
                    .map(|v| v.len() >= 2)
                    .unwrap_or(false)
        })
        .collect();
    promptable.sort_unstable();
    if promptable.is_empty() {
        return Err(Error::Data("no promptable held-out clips for trials".into()));
    }
    let fine: Vec<usize> = eval_pool
        .iter()
        .copied()
        .filter(|&i| corpus.utterances[i].quality == Quality::Fine)
        .collect();

    let mut wins = 0;
    for _ in 0..n_trials {
        let idx = promptable[rng.gen_range(0..promptable.len())];
        let u = &corpus.utterances[idx];
        let offset = corpus.speakers[u.speaker_id as usize].timbre_offset;
        let prompt = draw_prompt(corpus, &fine_index, idx, prompt_len_min, prompt_len_max, &mut rng)
            .expect("promptable clips have material");
        let others: Vec<usize> = fine
            .iter()
            .copied()
            .filter(|&j| {
                corpus.speakers[corpus.utterances[j].speaker_id as usize].timbre_offset != offset
            })
            .collect();
        if others.is_empty() {
            return Err(Error::Data(
                "no held-out clip with a different timbre offset for the negative reference"
                    .into(),
            ));
        }
        let neg = others[rng.gen_range(0..others.len())];

        let (tokens, _) =
            greedy_decode(params, cfg, &u.text, Some(&prompt), u.dialect_id, max_new)?;
        let gen_sig = match speaker_signature(&tokens, &cfg.vocab) {
            Ok(sig) => sig,
            Err(Error::UndefinedMetric(_)) => continue, // voiceless: a loss
            Err(e) => return Err(e),
        };
        let same = sim(&gen_sig, &speaker_signature(&prompt, &cfg.vocab)?);
        let diff = sim(
            &gen_sig,
            &speaker_signature(&corpus.utterances[neg].speech, &cfg.vocab)?,
        );
        if same > diff {
            wins += 1;
        }
    }
    Ok((wins, n_trials))
}

/// Per-dialect metric deltas between two runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DialectDelta {
    pub dialect_id: u32,
    pub wer_delta: f64,
    pub sim_delta: f64,
}

/// Raw deltas (a - b) plus improvement-positive scores: WER improves
/// downward, so its improvement is the negated delta; SIM improves upward.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareReport {
    pub selection_hash: String,
    pub seed: u64,
    pub mode_a: EvalMode,
    pub mode_b: EvalMode,
    pub wer_delta: f64,
    pub wer_improvement: f64,
    pub sim_delta: f64,
    pub sim_improvement: f64,
    pub per_dialect: Vec<DialectDelta>,
}

/// Compares two metric sets from the same test-set selection and seed.
pub fn compare(a: &Metrics, b: &Metrics) -> Result<CompareReport> {
    if a.provenance.config_hash != b.provenance.config_hash
        || a.provenance.seed != b.provenance.seed
    {
        return Err(Error::Config(format!(
            "metrics are not comparable: selection {}/seed {} vs selection {}/seed {}",
            a.provenance.config_hash, a.provenance.seed, b.provenance.config_hash,
            b.provenance.seed
        )));
    }
    let mut per_dialect = Vec::with_capacity(a.per_dialect.len());
    for (da, db) in a.per_dialect.iter().zip(&b.per_dialect) {
        if da.dialect_id != db.dialect_id {
            return Err(Error::Config("per-dialect breakdowns do not align".into()));
        }
        per_dialect.push(DialectDelta {
            dialect_id: da.dialect_id,
            wer_delta: da.wer - db.wer,
            sim_delta: da.sim - db.sim,
        });
    }
    Ok(CompareReport {
        selection_hash: a.provenance.config_hash.clone(),
        seed: a.provenance.seed,
        mode_a: a.mode,
        mode_b: b.mode,
        wer_delta: a.wer - b.wer,
        wer_improvement: b.wer - a.wer,
        sim_delta: a.sim - b.sim,
        sim_improvement: a.sim - b.sim,
        per_dialect,
    })
}
