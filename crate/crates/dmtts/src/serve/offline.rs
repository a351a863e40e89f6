//! Offline reference decoder: recomputes the whole sequence from scratch
//! for every emitted token and produces audio only once the utterance is
//! complete. Deliberately unoptimized; the streaming engine is benchmarked
//! against it, and its first token is by definition available only at the
//! end of the full decode.

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::decode::{decode_extend, DecodeState};
use crate::model::forward::build_input;
use crate::model::params::Parameters;
use crate::numerics::ops::argmax;

/// Outcome of an offline decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineResult {
    /// Emitted speech stream, EOS excluded.
    pub tokens: Vec<u32>,
    /// True when EOS ended the stream.
    pub terminated: bool,
    /// True when the token budget or the context window cut the stream.
    pub truncated: bool,
}

/// Greedy decoding with full-sequence recomputation per step: step t runs a
/// fresh forward over prompt plus all t tokens so far. Mathematically
/// identical to cached decoding; the cost is what the streaming path is
/// measured against.
pub fn offline_decode(
    params: &Parameters,
    cfg: &ModelConfig,
    text: &[u32],
    speaker_prompt: Option<&[u32]>,
    dialect_id: u32,
    max_new: usize,
) -> Result<OfflineResult> {
    if max_new == 0 {
        return Err(Error::Config("max_new must be >= 1".into()));
    }
    let item =
        build_input(text, &[], speaker_prompt, dialect_id, &cfg.vocab, cfg.max_seq_len)?;
    let mut seq = item.input;
    let eos = cfg.vocab.eos();
    let mut tokens = Vec::new();
    loop {
        let mut state = DecodeState::new(cfg, dialect_id)?;
        let logits = decode_extend(params, cfg, &mut state, &seq)?;
        let next = argmax(&logits) as u32;
        if next == eos {
            return Ok(OfflineResult { tokens, terminated: true, truncated: false });
        }
        tokens.push(next);
        if tokens.len() == max_new || seq.len() == cfg.max_seq_len {
            return Ok(OfflineResult { tokens, terminated: false, truncated: true });
        }
        seq.push(next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocab;
    use crate::model::decode::greedy_decode;
    use crate::model::params::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 4,
            n_kv_heads: 2,
            d_ff: 16,
            experts_shared: 2,
            experts_per_dialect: 1,
            top_k: 2,
            m_dialect_tokens: 2,
            max_seq_len: 24,
            vocab: build_vocab(6, 4, 2, 2, 1).unwrap(),
            seed: 9,
        }
    }

    #[test]
    fn matches_cached_greedy_decoding() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        for (text, dialect) in [(vec![0u32, 1], 0u32), (vec![3, 2, 5], 1)] {
            let off = offline_decode(&p, &cfg, &text, None, dialect, 8).unwrap();
            let (want, terminated) = greedy_decode(&p, &cfg, &text, None, dialect, 8).unwrap();
            assert_eq!(off.tokens, want);
            assert_eq!(off.terminated, terminated);
            assert_ne!(off.terminated, off.truncated);
        }
    }

    #[test]
    fn truncation_is_flagged_at_the_context_wall() {
        let mut cfg = cfg();
        cfg.max_seq_len = 8;
        let p = init_params(&cfg).unwrap();
        let out = offline_decode(&p, &cfg, &[0, 1], None, 0, 50).unwrap();
        if !out.terminated {
            assert!(out.truncated);
            assert!(out.tokens.len() <= cfg.max_seq_len);
        }
    }

    #[test]
    fn zero_budget_is_a_config_error() {
        let cfg = cfg();
        let p = init_params(&cfg).unwrap();
        assert!(matches!(
            offline_decode(&p, &cfg, &[0], None, 0, 0),
            Err(Error::Config(_))
        ));
    }
}
