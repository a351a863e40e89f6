//! Rollout sampling and the two reward signals: dialect fidelity (one
//! minus capped WER through the ASR oracle) and spontaneous expressiveness
//! (closeness of the FP/PROLONG event rate to a target rate).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::dialect::{oracle_asr, DialectSpec};
use crate::corpus::metrics::wer;
use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::decode::{decode_extend, DecodeState};
use crate::model::forward::{build_input, forward, TrainItem};
use crate::model::params::Parameters;
use crate::rlpost::policy::{policy_logprobs, ControllerParams};

/// One sampled trajectory with everything the two update levels need:
/// the raw model logits over the allowed set at every step (so the
/// controller can re-derive its sampling distribution), the anchor
/// log-probability rows (for the KL term), and both rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub text: Vec<u32>,
    pub dialect_id: u32,
    pub speaker_prompt: Option<Vec<u32>>,
    /// Sampled tokens; ends with EOS iff `terminated`.
    pub tokens: Vec<u32>,
    /// False when the length cap or context window cut sampling short.
    pub terminated: bool,
    /// Raw allowed-id logits from the sampling-time model, one row per token.
    pub policy_logit_rows: Vec<Vec<f64>>,
    /// Log-probabilities over allowed ids under the frozen anchor, per token.
    pub anchor_logprob_rows: Vec<Vec<f64>>,
    /// Log-probability of each sampled token under the sampling policy.
    pub policy_logprobs: Vec<f64>,
    /// Log-probability of each sampled token under the anchor.
    pub anchor_logprobs: Vec<f64>,
    /// Full-distribution KL(policy at sampling time, anchor), summed over steps.
    pub kl_to_anchor: f64,
    pub r_primary: f64,
    pub r_expressive: f64,
}

impl Rollout {
    /// The sampled speech stream with the terminal EOS stripped.
    pub fn speech_tokens(&self) -> &[u32] {
        if self.terminated {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }

    /// Rebuilds the model input whose scored positions are exactly the
    /// sampling positions, with `targets` equal to the sampled tokens.
    pub(crate) fn train_item(&self, cfg: &ModelConfig) -> Result<TrainItem> {
        let n = self.tokens.len();
        let mut item = build_input(
            &self.text,
            &self.tokens[..n - 1],
            self.speaker_prompt.as_deref(),
            self.dialect_id,
            &cfg.vocab,
            cfg.max_seq_len,
        )?;
        *item.targets.last_mut().unwrap() = self.tokens[n - 1];
        Ok(item)
    }
}

/// Dialect-fidelity reward: 1 - min(1, WER(text, oracle(sampled speech))).
pub fn reward_primary(r: &Rollout, spec: &DialectSpec, vocab: &Vocab) -> Result<f64> {
    let hyp = oracle_asr(r.speech_tokens(), spec, vocab);
    let w = wer(&r.text, &hyp)?;
    Ok(1.0 - w.min(1.0))
}

/// FP + PROLONG events per decoded word, the quantity the controller steers.
/// Word count mirrors the oracle's stream reduction; empty streams count as
/// one word so the rate stays finite.
pub fn spontaneous_rate(speech: &[u32], vocab: &Vocab) -> f64 {
    let mut events = 0usize;
    let mut clean: Vec<u32> = Vec::with_capacity(speech.len());
    for &tok in speech {
        if vocab.is_fp(tok) {
            events += 1;
            continue;
        }
        if tok == vocab.prolong() {
            events += 1;
            let n = clean.len();
            if n >= 2 && clean[n - 1] == clean[n - 2] && vocab.is_speech(clean[n - 1]) {
                clean.pop();
            }
            continue;
        }
        clean.push(tok);
    }
    let words = (clean.len() + 1) / 2;
    events as f64 / words.max(1) as f64
}

/// Expressiveness reward: 1 - min(1, |rate - target| / target), so the
/// reward peaks at the target rate and falls off linearly on both sides.
pub fn reward_expressive(r: &Rollout, vocab: &Vocab, target_rate: f64) -> f64 {
    let rate = spontaneous_rate(r.speech_tokens(), vocab);
    if target_rate == 0.0 {
        return if rate == 0.0 { 1.0 } else { 0.0 };
    }
    1.0 - ((rate - target_rate).abs() / target_rate).min(1.0)
}

fn sample_index(logprobs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_live = 0;
    for (i, &l) in logprobs.iter().enumerate() {
        let p = l.exp();
        if p > 0.0 {
            last_live = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_live
}

/// Samples one trajectory under (params, controller), scoring it against
/// the frozen `anchor` and both rewards. A context or length cap marks the
/// rollout truncated instead of failing.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    params: &Parameters,
    anchor: &Parameters,
    controller: &ControllerParams,
    cfg: &ModelConfig,
    spec: &DialectSpec,
    text: &[u32],
    speaker_prompt: Option<&[u32]>,
    target_rate: f64,
    max_new_tokens: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Rollout> {
    if text.is_empty() {
        return Err(Error::Data("rollout needs a non-empty text".into()));
    }
    controller.validate()?;
    if max_new_tokens == 0 {
        return Err(Error::Config("max_new_tokens must be >= 1".into()));
    }
    let vocab = &cfg.vocab;
    let dialect_id = spec.dialect_id;
    let allowed = vocab.allowed_output_ids();
    let mut slot_of = vec![usize::MAX; vocab.total() as usize];
    for (i, &id) in allowed.iter().enumerate() {
        slot_of[id as usize] = i;
    }
    let eos = vocab.eos();

    let prefix = build_input(text, &[], speaker_prompt, dialect_id, vocab, cfg.max_seq_len)?;
    let mut state = DecodeState::new(cfg, dialect_id)?;
    let mut logits = decode_extend(params, cfg, &mut state, &prefix.input)?;

    let mut tokens: Vec<u32> = Vec::new();
    let mut policy_logit_rows: Vec<Vec<f64>> = Vec::new();
    let mut policy_lps: Vec<f64> = Vec::new();
    let mut terminated = false;
    loop {
        let z: Vec<f64> = allowed.iter().map(|&id| logits[id as usize]).collect();
        let lp = policy_logprobs(&z, &allowed, vocab, controller, dialect_id);
        let pick = sample_index(&lp, rng);
        let tok = allowed[pick];
        tokens.push(tok);
        policy_lps.push(lp[pick]);
        policy_logit_rows.push(z);
        if tok == eos {
            terminated = true;
            break;
        }
        if tokens.len() == max_new_tokens || state.len() == cfg.max_seq_len {
            break;
        }
        logits = decode_extend(params, cfg, &mut state, &[tok])?;
    }

    // One anchor pass over the whole sampled sequence: row j is the masked
    // logit row at sampling position j.
    let n = tokens.len();
    let anchor_logits =
        forward(anchor, cfg, text, &tokens[..n - 1], dialect_id, speaker_prompt)?;
    let mut anchor_logprob_rows = Vec::with_capacity(n);
    let mut anchor_lps = Vec::with_capacity(n);
    let identity = ControllerParams::new(vocab.n_dialects, vocab.n_fp);
    let mut kl = 0.0;
    for (j, &tok) in tokens.iter().enumerate() {
        let zq: Vec<f64> =
            allowed.iter().map(|&id| anchor_logits.row(j)[id as usize]).collect();
        let q = policy_logprobs(&zq, &allowed, vocab, &identity, dialect_id);
        let lp = policy_logprobs(&policy_logit_rows[j], &allowed, vocab, controller, dialect_id);
        for (l, qi) in lp.iter().zip(&q) {
            let p = l.exp();
            if p > 0.0 {
                kl += p * (l - qi);
            }
        }
        anchor_lps.push(q[slot_of[tok as usize]]);
        anchor_logprob_rows.push(q);
    }
    if !kl.is_finite() {
        return Err(Error::Numeric(format!("non-finite rollout KL {kl}")));
    }

    let mut out = Rollout {
        text: text.to_vec(),
        dialect_id,
        speaker_prompt: speaker_prompt.map(<[u32]>::to_vec),
        tokens,
        terminated,
        policy_logit_rows,
        anchor_logprob_rows,
        policy_logprobs: policy_lps,
        anchor_logprobs: anchor_lps,
        kl_to_anchor: kl,
        r_primary: 0.0,
        r_expressive: 0.0,
    };
    out.r_primary = reward_primary(&out, spec, vocab)?;
    out.r_expressive = reward_expressive(&out, vocab, target_rate);
    debug_assert!(out.policy_logprobs.iter().all(|&l| l <= 0.0));
    debug_assert!(out.r_primary.is_finite() && out.r_expressive.is_finite());
    Ok(out)
}
