//! Model hyperparameters and derived dimensions.

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::{build_vocab, Vocab};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Key/value head count; query head h reads K/V head `h * n_kv_heads / n_heads`.
    pub n_kv_heads: usize,
    pub d_ff: usize,
    /// Experts shared by every dialect.
    pub experts_shared: usize,
    /// Experts owned exclusively by each dialect.
    pub experts_per_dialect: usize,
    pub top_k: usize,
    /// Learned dialect-token vectors per dialect, attended by every layer.
    pub m_dialect_tokens: usize,
    pub max_seq_len: usize,
    pub vocab: Vocab,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 128,
            n_heads: 8,
            n_kv_heads: 2,
            d_ff: 256,
            experts_shared: 2,
            experts_per_dialect: 2,
            top_k: 2,
            m_dialect_tokens: 4,
            max_seq_len: 512,
            vocab: build_vocab(64, 64, 8, 4, 3).expect("default vocab is valid"),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("n_layers", self.n_layers),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_ff", self.d_ff),
            ("top_k", self.top_k),
            ("m_dialect_tokens", self.m_dialect_tokens),
            ("max_seq_len", self.max_seq_len),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::Config(format!(
                "n_kv_heads = {} must divide n_heads = {}",
                self.n_kv_heads, self.n_heads
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads = {} must divide d_model = {}",
                self.n_heads, self.d_model
            )));
        }
        if self.experts_shared + self.experts_per_dialect == 0 {
            return Err(Error::Config("at least one expert is required".into()));
        }
        if self.top_k > self.experts_shared + self.experts_per_dialect {
            return Err(Error::Config(format!(
                "top_k = {} exceeds candidate experts = {} shared + {} per dialect",
                self.top_k, self.experts_shared, self.experts_per_dialect
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Width of the K and V projections (`n_kv_heads * head_dim`).
    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    /// Total expert count across the shared bank and every dialect's bank.
    pub fn n_experts_total(&self) -> usize {
        self.experts_shared + self.vocab.n_dialects as usize * self.experts_per_dialect
    }

    /// Candidate expert pool size for any one dialect.
    pub fn n_candidates(&self) -> usize {
        self.experts_shared + self.experts_per_dialect
    }

    /// Global expert indices a dialect may route to, ascending.
    pub fn candidate_experts(&self, dialect_id: u32) -> Result<Vec<usize>> {
        if dialect_id >= self.vocab.n_dialects {
            return Err(Error::Data(format!(
                "unknown dialect id {dialect_id} (n_dialects = {})",
                self.vocab.n_dialects
            )));
        }
        let mut out: Vec<usize> = (0..self.experts_shared).collect();
        let start = self.experts_shared + dialect_id as usize * self.experts_per_dialect;
        out.extend(start..start + self.experts_per_dialect);
        Ok(out)
    }
}
