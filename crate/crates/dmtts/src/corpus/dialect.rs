//! Dialect transduction tables, speakers, the transducer, and the exact
//! inverse decoder used as the ASR oracle.
//!
//! Each dialect maps every text token to an ordered pair of speech base
//! classes through an injective table drawn by seeded shuffle. The transducer
//! realizes a word as two speech tokens whose shared timbre variant is
//! `(pair_hash(b1, b2) + speaker.timbre_offset) % G`, optionally prefixed by a
//! filled pause and suffixed by a prolongation (duplicate last token, then
//! PROLONG). Because the table is injective the mapping is exactly invertible,
//! which is what makes corpus-level WER measurable without a real recognizer.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{Vocab, UNK};
use crate::error::{Error, Result};
use crate::seeds::{derive_seed, pair_hash, streams};

/// Per-dialect transduction table plus insertion rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialectSpec {
    pub dialect_id: u32,
    pub seed: u64,
    /// Probability of prepending a filled pause before a word.
    pub p_fp: f64,
    /// Probability of appending a prolongation after a word.
    pub p_pr: f64,
    /// `table[t]` is the ordered base-class pair realizing text token `t`.
    pub table: Vec<(u32, u32)>,
}

/// A synthetic speaker: identity plus a timbre offset in [0, G).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Speaker {
    pub speaker_id: u32,
    pub timbre_offset: u32,
    pub seed: u64,
}

/// Draws the injective text-to-base-pair table for one dialect.
///
/// Regenerating with the same (dialect_id, seed) is bit-identical; the table
/// is the first `n_text` entries of a seeded shuffle of all B^2 ordered pairs.
pub fn make_dialect_spec(
    dialect_id: u32,
    seed: u64,
    p_fp: f64,
    p_pr: f64,
    vocab: &Vocab,
) -> Result<DialectSpec> {
    if dialect_id >= vocab.n_dialects {
        return Err(Error::Config(format!(
            "dialect {dialect_id} out of range (vocab has {})",
            vocab.n_dialects
        )));
    }
    for (name, p) in [("p_fp", p_fp), ("p_pr", p_pr)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
        }
    }
    let b = vocab.n_bases as u64;
    if b * b < vocab.n_text as u64 {
        return Err(Error::Capacity(format!(
            "{} base classes give {} ordered pairs, fewer than {} text tokens",
            b,
            b * b,
            vocab.n_text
        )));
    }
    let mut pairs: Vec<(u32, u32)> = Vec::with_capacity((b * b) as usize);
    for b1 in 0..vocab.n_bases {
        for b2 in 0..vocab.n_bases {
            pairs.push((b1, b2));
        }
    }
    let table_seed = derive_seed(derive_seed(seed, streams::DIALECT_TABLE), dialect_id as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(table_seed);
    pairs.shuffle(&mut rng);
    pairs.truncate(vocab.n_text as usize);
    Ok(DialectSpec { dialect_id, seed, p_fp, p_pr, table: pairs })
}

impl DialectSpec {
    /// Inverse table lookup: which text token does this base pair realize?
    pub fn decode_pair(&self, b1: u32, b2: u32) -> Option<u32> {
        self.table.iter().position(|&p| p == (b1, b2)).map(|t| t as u32)
    }
}

/// Builds a speaker whose timbre offset is deterministic in (speaker_id, seed).
pub fn make_speaker(speaker_id: u32, seed: u64, vocab: &Vocab) -> Speaker {
    let s = derive_seed(derive_seed(seed, streams::SPEAKER), speaker_id as u64);
    Speaker { speaker_id, timbre_offset: (s % vocab.n_timbres as u64) as u32, seed }
}

/// Renders text tokens as speech tokens for one speaker.
///
/// Per word the rng is consumed in a fixed order: the filled-pause decision
/// (plus the choice of which pause token), then the prolongation decision, so
/// a given rng state fully determines the insertions.
pub fn transduce(
    text: &[u32],
    spec: &DialectSpec,
    speaker: &Speaker,
    vocab: &Vocab,
    rng: &mut dyn RngCore,
) -> Result<Vec<u32>> {
    let g = vocab.n_timbres as u64;
    let mut speech = Vec::with_capacity(text.len() * 3);
    for &t in text {
        if !vocab.is_text(t) {
            return Err(Error::Data(format!("token {t} is not a text token")));
        }
        let (b1, b2) = spec.table[t as usize];
        if spec.p_fp > 0.0 && rng.gen::<f64>() < spec.p_fp {
            let which = rng.gen_range(0..vocab.n_fp);
            speech.push(vocab.fp(which));
        }
        let timbre = ((pair_hash(b1, b2) + speaker.timbre_offset as u64) % g) as u32;
        speech.push(vocab.speech_id(b1, timbre));
        speech.push(vocab.speech_id(b2, timbre));
        if spec.p_pr > 0.0 && rng.gen::<f64>() < spec.p_pr {
            speech.push(vocab.speech_id(b2, timbre));
            speech.push(vocab.prolong());
        }
    }
    Ok(speech)
}

/// Exact inverse of [`transduce`]: strips filled pauses, undoes prolongation
/// duplicates, and decodes base pairs through the inverse table.
///
/// Words whose pair is not in the table (or that contain a non-speech token)
/// decode to [`UNK`]; a trailing unpaired token decodes to one UNK.
pub fn oracle_asr(speech: &[u32], spec: &DialectSpec, vocab: &Vocab) -> Vec<u32> {
    let mut clean: Vec<u32> = Vec::with_capacity(speech.len());
    for &tok in speech {
        if vocab.is_fp(tok) {
            continue;
        }
        if tok == vocab.prolong() {
            // (x, x, PROLONG) -> (x). A prolong without a preceding duplicate
            // is dropped alone.
            let n = clean.len();
            if n >= 2 && clean[n - 1] == clean[n - 2] && vocab.is_speech(clean[n - 1]) {
                clean.pop();
            }
            continue;
        }
        clean.push(tok);
    }
    let mut text = Vec::with_capacity(clean.len() / 2 + 1);
    for chunk in clean.chunks(2) {
        if chunk.len() < 2 {
            text.push(UNK);
            break;
        }
        let decoded = match (vocab.speech_parts(chunk[0]), vocab.speech_parts(chunk[1])) {
            (Some((b1, _)), Some((b2, _))) => spec.decode_pair(b1, b2),
            _ => None,
        };
        text.push(decoded.unwrap_or(UNK));
    }
    text
}
