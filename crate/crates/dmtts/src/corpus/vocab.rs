//! Token id space shared by every component.
//!
//! Ids are contiguous and disjoint: text tokens, then speech tokens (base
//! class x timbre variant), then one id per dialect, then the four fixed
//! specials BOS/EOS/SEP/PROLONG, then the filled-pause tokens FP_1..FP_f.
//! Total size is `n_text + n_bases * n_timbres + n_dialects + 4 + n_fp`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Immutable vocabulary layout. Build with [`build_vocab`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    /// Number of text tokens (V_t).
    pub n_text: u32,
    /// Number of speech base classes (B).
    pub n_bases: u32,
    /// Number of timbre variants per base class (G).
    pub n_timbres: u32,
    /// Number of dialects (D).
    pub n_dialects: u32,
    /// Number of filled-pause tokens (f).
    pub n_fp: u32,
}

/// Sentinel returned by the oracle for undecodable words. Never a valid id.
pub const UNK: u32 = u32::MAX;

/// Validates sizes and constructs the layout.
///
/// All sizes must be >= 1 and the timbre count >= 2; the total id count must
/// fit in u32.
pub fn build_vocab(
    n_text: u32,
    n_bases: u32,
    n_timbres: u32,
    n_dialects: u32,
    n_fp: u32,
) -> Result<Vocab> {
    if n_text == 0 || n_bases == 0 || n_dialects == 0 || n_fp == 0 {
        return Err(Error::Config("vocab sizes must all be >= 1".into()));
    }
    if n_timbres < 2 {
        return Err(Error::Config("timbre variant count must be >= 2".into()));
    }
    let speech = (n_bases as u64) * (n_timbres as u64);
    let total = n_text as u64 + speech + n_dialects as u64 + 4 + n_fp as u64;
    if total > u32::MAX as u64 - 1 {
        return Err(Error::Capacity(format!("vocab of {total} ids overflows the id space")));
    }
    Ok(Vocab { n_text, n_bases, n_timbres, n_dialects, n_fp })
}

impl Vocab {
    /// Total id count: n_text + n_bases*n_timbres + n_dialects + 4 + n_fp.
    pub fn total(&self) -> u32 {
        self.n_text + self.n_speech() + self.n_dialects + 4 + self.n_fp
    }

    pub fn n_speech(&self) -> u32 {
        self.n_bases * self.n_timbres
    }

    /// First speech id; text ids occupy [0, n_text).
    pub fn speech_start(&self) -> u32 {
        self.n_text
    }

    pub fn dialect_start(&self) -> u32 {
        self.n_text + self.n_speech()
    }

    pub fn bos(&self) -> u32 {
        self.dialect_start() + self.n_dialects
    }

    pub fn eos(&self) -> u32 {
        self.bos() + 1
    }

    pub fn sep(&self) -> u32 {
        self.bos() + 2
    }

    pub fn prolong(&self) -> u32 {
        self.bos() + 3
    }

    /// The i-th filled-pause token, i in [0, n_fp).
    pub fn fp(&self, i: u32) -> u32 {
        debug_assert!(i < self.n_fp);
        self.bos() + 4 + i
    }

    pub fn is_text(&self, id: u32) -> bool {
        id < self.n_text
    }

    pub fn is_speech(&self, id: u32) -> bool {
        id >= self.speech_start() && id < self.dialect_start()
    }

    pub fn is_dialect(&self, id: u32) -> bool {
        id >= self.dialect_start() && id < self.bos()
    }

    pub fn is_fp(&self, id: u32) -> bool {
        id >= self.fp(0) && id < self.fp(0) + self.n_fp
    }

    /// Speech id for (base class, timbre variant).
    pub fn speech_id(&self, base: u32, timbre: u32) -> u32 {
        debug_assert!(base < self.n_bases && timbre < self.n_timbres);
        self.speech_start() + base * self.n_timbres + timbre
    }

    /// Decomposes a speech id into (base class, timbre variant).
    pub fn speech_parts(&self, id: u32) -> Option<(u32, u32)> {
        if !self.is_speech(id) {
            return None;
        }
        let rel = id - self.speech_start();
        Some((rel / self.n_timbres, rel % self.n_timbres))
    }

    /// Dialect-marker id for dialect `d`.
    pub fn dialect_id(&self, d: u32) -> u32 {
        debug_assert!(d < self.n_dialects);
        self.dialect_start() + d
    }

    /// Ids the model may emit at speech positions: every speech id, EOS, the
    /// filled pauses, and PROLONG.
    pub fn allowed_output_ids(&self) -> Vec<u32> {
        let mut ids = Vec::with_capacity(self.n_speech() as usize + 2 + self.n_fp as usize);
        for id in self.speech_start()..self.dialect_start() {
            ids.push(id);
        }
        ids.push(self.eos());
        ids.push(self.prolong());
        for i in 0..self.n_fp {
            ids.push(self.fp(i));
        }
        ids
    }
}
