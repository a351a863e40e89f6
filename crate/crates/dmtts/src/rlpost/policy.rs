//! The two-level policy parameterization: the transformer is the primary
//! level; the high-level controller owns a per-dialect logit bias over the
//! spontaneous tokens (filled pauses and PROLONG) plus a shared sampling
//! temperature. The sampling distribution at one step is
//! softmax(logits / temperature + bias) over the allowed output set.

use serde::{Deserialize, Serialize};

use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use crate::numerics::ops::log_sum_exp;

/// High-level policy: bias[d][k] boosts FP_k for dialect d, bias[d][n_fp]
/// boosts PROLONG; one temperature scalar governs all sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerParams {
    pub bias: Vec<Vec<f64>>,
    pub temperature: f64,
}

impl ControllerParams {
    pub fn new(n_dialects: u32, n_fp: u32) -> ControllerParams {
        ControllerParams {
            bias: vec![vec![0.0; n_fp as usize + 1]; n_dialects as usize],
            temperature: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Index into a dialect's bias vector for an allowed output id, or None
    /// for non-spontaneous tokens.
    pub fn bias_slot(vocab: &Vocab, id: u32) -> Option<usize> {
        if vocab.is_fp(id) {
            Some((id - vocab.fp(0)) as usize)
        } else if id == vocab.prolong() {
            Some(vocab.n_fp as usize)
        } else {
            None
        }
    }

    pub fn bias_for(&self, vocab: &Vocab, dialect_id: u32, id: u32) -> f64 {
        match Self::bias_slot(vocab, id) {
            Some(slot) => self.bias[dialect_id as usize][slot],
            None => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlConfig {
    pub rollouts_per_step: usize,
    pub primary_steps: usize,
    pub high_level_steps: usize,
    pub rounds: usize,
    /// KL-anchor weight in the primary objective.
    pub kl_coefficient: f64,
    /// Mean per-sequence KL to the anchor above this rejects the round.
    pub kl_ceiling: f64,
    /// Target spontaneous events per decoded word.
    pub target_rate: f64,
    pub primary_lr: f64,
    pub high_level_lr: f64,
    pub prompt_prob: f64,
    pub prompt_len_min: usize,
    pub prompt_len_max: usize,
    pub max_new_tokens: usize,
    pub seed: u64,
}

impl Default for RlConfig {
    fn default() -> RlConfig {
        RlConfig {
            rollouts_per_step: 64,
            primary_steps: 2,
            high_level_steps: 4,
            rounds: 20,
            kl_coefficient: 0.05,
            kl_ceiling: 5.0,
            target_rate: 0.3,
            primary_lr: 0.02,
            high_level_lr: 0.2,
            prompt_prob: 0.5,
            prompt_len_min: 10,
            prompt_len_max: 40,
            max_new_tokens: 64,
            seed: 0,
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rollouts_per_step == 0 {
            return Err(Error::Config("rollouts_per_step must be >= 1".into()));
        }
        if self.kl_coefficient < 0.0 {
            return Err(Error::Config("kl_coefficient must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.target_rate) {
            return Err(Error::Config("target_rate outside [0, 1]".into()));
        }
        if !(self.primary_lr > 0.0) || !(self.high_level_lr > 0.0) {
            return Err(Error::Config("learning rates must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.prompt_prob) {
            return Err(Error::Config("prompt_prob outside [0, 1]".into()));
        }
        if self.prompt_len_min == 0 || self.prompt_len_min > self.prompt_len_max {
            return Err(Error::Config("bad prompt length range".into()));
        }
        if self.max_new_tokens == 0 {
            return Err(Error::Config("max_new_tokens must be >= 1".into()));
        }
        Ok(())
    }
}

/// Log-probabilities of the sampling distribution softmax(z / T + bias)
/// given raw allowed-id logits `z`. Infinite bias is honored exactly: mass
/// splits uniformly over the +inf entries.
pub fn policy_logprobs(
    z: &[f64],
    allowed: &[u32],
    vocab: &Vocab,
    controller: &ControllerParams,
    dialect_id: u32,
) -> Vec<f64> {
    let t = controller.temperature;
    let mut s: Vec<f64> = z
        .iter()
        .zip(allowed)
        .map(|(&zi, &id)| zi / t + controller.bias_for(vocab, dialect_id, id))
        .collect();
    let n_inf = s.iter().filter(|&&x| x == f64::INFINITY).count();
    if n_inf > 0 {
        let lp = -(n_inf as f64).ln();
        for x in &mut s {
            *x = if *x == f64::INFINITY { lp } else { f64::NEG_INFINITY };
        }
        return s;
    }
    let lse = log_sum_exp(&s);
    for x in &mut s {
        *x -= lse;
    }
    s
}
