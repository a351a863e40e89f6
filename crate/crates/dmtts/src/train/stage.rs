//! Staged supervised training: weak-data pretraining, fine-data
//! fine-tuning, and per-speaker fine-tuning, plus the batch sampler.
//!
//! Pretraining samples weak and fine utterances with probability
//! proportional to speech length; fine-tuning samples uniformly over fine
//! utterances; speaker fine-tuning samples uniformly over the named
//! speakers' fine utterances. Each sampled item gets a same-speaker prompt
//! with probability `prompt_prob`, assembled from that speaker's other
//! fine clips in the same pool, so held-out data never leaks in.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::distributions::WeightedIndex;
use rand::prelude::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::generate::{Corpus, Quality};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::forward::{build_input, loss_and_grads, TrainItem};
use crate::model::params::Parameters;
use crate::seeds::{derive_seed, streams};
use crate::train::optimizer::{optimizer_step, AdamConfig, OptimizerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Pretrain,
    Finetune,
    SpeakerFt,
}

impl Stage {
    fn tag(self) -> u64 {
        match self {
            Stage::Pretrain => 1,
            Stage::Finetune => 2,
            Stage::SpeakerFt => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    /// Restrict sampling to these dialects (None = all).
    pub dialects: Option<Vec<u32>>,
    /// Restrict sampling to these speakers (required for speaker_ft).
    pub speakers: Option<Vec<u32>>,
    pub prompt_prob: f64,
    pub prompt_len_min: usize,
    pub prompt_len_max: usize,
    pub seed: u64,
}

impl StageConfig {
    pub fn new(stage: Stage, steps: usize, batch_size: usize, lr: f64) -> StageConfig {
        StageConfig {
            stage,
            steps,
            batch_size,
            learning_rate: lr,
            warmup_steps: (steps / 20).max(1) as u64,
            dialects: None,
            speakers: None,
            prompt_prob: 0.5,
            prompt_len_min: 10,
            prompt_len_max: 150,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("steps must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.prompt_prob) {
            return Err(Error::Config("prompt_prob outside [0, 1]".into()));
        }
        if self.prompt_len_min == 0 || self.prompt_len_min > self.prompt_len_max {
            return Err(Error::Config("bad prompt length range".into()));
        }
        if self.stage == Stage::SpeakerFt && self.speakers.as_deref().unwrap_or(&[]).is_empty()
        {
            return Err(Error::Data("speaker_ft requires a nonempty speaker set".into()));
        }
        Ok(())
    }

    fn admits(&self, corpus: &Corpus, idx: usize) -> bool {
        let u = &corpus.utterances[idx];
        if let Some(ds) = &self.dialects {
            if !ds.contains(&u.dialect_id) {
                return false;
            }
        }
        if let Some(ss) = &self.speakers {
            if !ss.contains(&u.speaker_id) {
                return false;
            }
        }
        match self.stage {
            Stage::Pretrain => true,
            Stage::Finetune | Stage::SpeakerFt => u.quality == Quality::Fine,
        }
    }
}

/// Desk-scale training budgets per stage, shared by the CLI and the
/// pipeline harnesses. Speaker adaptation still needs its speaker set
/// filled in by the caller.
pub fn default_stage_config(stage: Stage) -> StageConfig {
    match stage {
        Stage::Pretrain => StageConfig::new(Stage::Pretrain, 1400, 12, 3e-4),
        Stage::Finetune => StageConfig::new(Stage::Finetune, 700, 12, 1.2e-4),
        Stage::SpeakerFt => StageConfig::new(Stage::SpeakerFt, 250, 8, 6e-5),
    }
}

/// Draws `batch_size` utterance indices from `pool` per the stage's
/// sampling rule. Indices may repeat (sampling with replacement).
pub fn sample_batch(
    corpus: &Corpus,
    pool: &[usize],
    sc: &StageConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    sc.validate()?;
    let eligible: Vec<usize> =
        pool.iter().copied().filter(|&i| sc.admits(corpus, i)).collect();
    if eligible.is_empty() {
        return Err(Error::Data("sampling pool is empty after filtering".into()));
    }
    let picks = match sc.stage {
        Stage::Pretrain => {
            let weights: Vec<f64> = eligible
                .iter()
                .map(|&i| corpus.utterances[i].speech.len().max(1) as f64)
                .collect();
            let dist = WeightedIndex::new(&weights)
                .map_err(|e| Error::Data(format!("bad sampling weights: {e}")))?;
            (0..sc.batch_size).map(|_| eligible[dist.sample(rng)]).collect()
        }
        Stage::Finetune | Stage::SpeakerFt => (0..sc.batch_size)
            .map(|_| eligible[rng.gen_range(0..eligible.len())])
            .collect(),
    };
    Ok(picks)
}

/// Concatenated same-(dialect, speaker) fine clips, truncated to a seeded
/// length in [len_min, len_max]. Excludes `exclude` itself. Returns None
/// when the speaker has no other fine clip in the pool.
pub(crate) fn draw_prompt(
    corpus: &Corpus,
    fine_index: &BTreeMap<(u32, u32), Vec<usize>>,
    exclude: usize,
    len_min: usize,
    len_max: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<u32>> {
    let u = &corpus.utterances[exclude];
    let candidates = fine_index.get(&(u.dialect_id, u.speaker_id))?;
    let others: Vec<usize> = candidates.iter().copied().filter(|&i| i != exclude).collect();
    if others.is_empty() {
        return None;
    }
    let target = rng.gen_range(len_min..=len_max);
    let mut prompt = Vec::with_capacity(target);
    while prompt.len() < target {
        let pick = others[rng.gen_range(0..others.len())];
        prompt.extend_from_slice(&corpus.utterances[pick].speech);
    }
    prompt.truncate(target);
    Some(prompt)
}

/// Builds the model input for one sampled utterance, drawing the optional
/// prompt from `fine_index`.
fn make_item(
    corpus: &Corpus,
    fine_index: &BTreeMap<(u32, u32), Vec<usize>>,
    idx: usize,
    sc: &StageConfig,
    mc: &ModelConfig,
    rng: &mut ChaCha8Rng,
) -> Result<TrainItem> {
    let u = &corpus.utterances[idx];
    let prompt = if rng.gen::<f64>() < sc.prompt_prob {
        draw_prompt(corpus, fine_index, idx, sc.prompt_len_min, sc.prompt_len_max, rng)
    } else {
        None
    };
    build_input(
        &u.text,
        &u.speech,
        prompt.as_deref(),
        u.dialect_id,
        &corpus.vocab,
        mc.max_seq_len,
    )
}

/// Runs one training stage in place. Returns the per-step loss curve.
pub fn train_stage(
    params: &mut Parameters,
    corpus: &Corpus,
    pool: &[usize],
    sc: &StageConfig,
    mc: &ModelConfig,
) -> Result<Vec<(u64, f64)>> {
    sc.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
        sc.seed,
        streams::TRAIN_STAGE ^ (sc.stage.tag() << 32),
    ));
    let fine_index = corpus.fine_index(pool);
    let acfg = AdamConfig::new(sc.learning_rate, sc.warmup_steps);
    let mut opt = OptimizerState::new(params.n_scalars());
    let mut curve = Vec::with_capacity(sc.steps);
    for step in 1..=sc.steps as u64 {
        let idxs = sample_batch(corpus, pool, sc, &mut rng)?;
        let items: Vec<TrainItem> = idxs
            .iter()
            .map(|&i| make_item(corpus, &fine_index, i, sc, mc, &mut rng))
            .collect::<Result<_>>()?;
        let (loss, grads) = loss_and_grads(params, mc, &items)?;
        optimizer_step(params, &grads, &mut opt, &acfg)?;
        curve.push((step, loss));
    }
    Ok(curve)
}

/// Continues training on the named speakers' fine data only, returning new
/// parameters; the input parameters are untouched.
pub fn speaker_finetune(
    base: &Parameters,
    corpus: &Corpus,
    pool: &[usize],
    speakers: &[u32],
    sc: &StageConfig,
    mc: &ModelConfig,
) -> Result<(Parameters, Vec<(u64, f64)>)> {
    if speakers.is_empty() {
        return Err(Error::Data("empty speaker set".into()));
    }
    for &s in speakers {
        if s >= corpus.cfg.n_speakers {
            return Err(Error::Data(format!(
                "unknown speaker {s} (n_speakers = {})",
                corpus.cfg.n_speakers
            )));
        }
        let has_fine = pool.iter().any(|&i| {
            let u = &corpus.utterances[i];
            u.speaker_id == s && u.quality == Quality::Fine
        });
        if !has_fine {
            return Err(Error::Data(format!(
                "speaker {s} has no fine utterance in the pool"
            )));
        }
    }
    let mut sc = sc.clone();
    sc.stage = Stage::SpeakerFt;
    sc.speakers = Some(speakers.to_vec());
    let mut tuned = base.clone();
    let curve = train_stage(&mut tuned, corpus, pool, &sc, mc)?;
    Ok((tuned, curve))
}

/// Two-column TSV (step, loss).
pub fn write_loss_curve(path: &Path, curve: &[(u64, f64)]) -> Result<()> {
    let mut out = String::with_capacity(curve.len() * 24);
    out.push_str("step\tloss\n");
    for (step, loss) in curve {
        out.push_str(&format!("{step}\t{loss:.17}\n"));
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate::{generate_corpus, CorpusConfig};
    use crate::corpus::vocab::build_vocab;
    use crate::model::params::init_params;

    fn tiny_corpus() -> Corpus {
        let cfg = CorpusConfig {
            n_text: 8,
            n_bases: 16,
            n_timbres: 4,
            n_dialects: 2,
            n_fp: 2,
            n_speakers: 6,
            n_utterances: 120,
            text_len_min: 2,
            text_len_max: 5,
            p_fp: 0.1,
            p_pr: 0.1,
            weak_fraction: 0.5,
            noise_rate: 0.2,
            n_zero_shot_speakers: 1,
            heldout_fine_fraction: 0.1,
            seed: 13,
        };
        generate_corpus(&cfg).unwrap()
    }

    fn tiny_model(corpus: &Corpus) -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            d_model: 16,
            n_heads: 2,
            n_kv_heads: 1,
            d_ff: 16,
            experts_shared: 1,
            experts_per_dialect: 1,
            top_k: 1,
            m_dialect_tokens: 1,
            max_seq_len: 96,
            vocab: corpus.vocab.clone(),
            seed: 5,
        }
    }

    #[test]
    fn finetune_sampling_is_fine_only() {
        let corpus = tiny_corpus();
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let sc = StageConfig::new(Stage::Finetune, 1, 64, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picks = sample_batch(&corpus, &pool, &sc, &mut rng).unwrap();
        for i in picks {
            assert_eq!(corpus.utterances[i].quality, Quality::Fine);
        }
    }

    #[test]
    fn pretrain_sampling_is_length_proportional() {
        // Two utterances with speech lengths 10 and 30: the longer one
        // should be drawn with frequency 0.75 +/- 0.03 over 10^4 draws.
        let v = build_vocab(4, 4, 2, 1, 1).unwrap();
        let sid = v.speech_id(0, 0);
        let mk = |len: usize| crate::corpus::generate::Utterance {
            quality: Quality::Fine,
            dialect_id: 0,
            speaker_id: 0,
            text: vec![0],
            speech: vec![sid; len],
        };
        let corpus = Corpus {
            cfg: CorpusConfig {
                n_text: 4,
                n_bases: 4,
                n_timbres: 2,
                n_dialects: 1,
                n_fp: 1,
                n_speakers: 1,
                n_utterances: 2,
                ..CorpusConfig::default()
            },
            vocab: v,
            specs: vec![],
            speakers: vec![],
            utterances: vec![mk(10), mk(30)],
        };
        let sc = StageConfig::new(Stage::Pretrain, 1, 10_000, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let picks = sample_batch(&corpus, &[0, 1], &sc, &mut rng).unwrap();
        let long = picks.iter().filter(|&&i| i == 1).count() as f64 / 10_000.0;
        assert!((long - 0.75).abs() <= 0.03, "freq {long}");
    }

    #[test]
    fn speaker_filter_is_exact() {
        let corpus = tiny_corpus();
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let mut sc = StageConfig::new(Stage::SpeakerFt, 1, 32, 0.1);
        sc.speakers = Some(vec![2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let picks = sample_batch(&corpus, &pool, &sc, &mut rng).unwrap();
        for i in picks {
            assert_eq!(corpus.utterances[i].speaker_id, 2);
            assert_eq!(corpus.utterances[i].quality, Quality::Fine);
        }
    }

    #[test]
    fn empty_pool_is_an_error() {
        let corpus = tiny_corpus();
        let mut sc = StageConfig::new(Stage::Finetune, 1, 4, 0.1);
        sc.dialects = Some(vec![99]);
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            sample_batch(&corpus, &pool, &sc, &mut rng),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn zero_steps_is_a_config_error() {
        let corpus = tiny_corpus();
        let mc = tiny_model(&corpus);
        let mut p = init_params(&mc).unwrap();
        let sc = StageConfig::new(Stage::Finetune, 0, 4, 0.1);
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        assert!(matches!(
            train_stage(&mut p, &corpus, &pool, &sc, &mc),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let corpus = tiny_corpus();
        let mc = tiny_model(&corpus);
        let pool: Vec<usize> = corpus.split().train;
        let mut sc = StageConfig::new(Stage::Pretrain, 3, 2, 1e-3);
        sc.prompt_len_min = 4;
        sc.prompt_len_max = 12;
        let run = || {
            let mut p = init_params(&mc).unwrap();
            let curve = train_stage(&mut p, &corpus, &pool, &sc, &mc).unwrap();
            (p, curve)
        };
        let (p1, c1) = run();
        let (p2, c2) = run();
        assert_eq!(c1, c2);
        assert_eq!(p1.to_flat(), p2.to_flat());
    }

    #[test]
    fn speaker_finetune_preserves_base_and_changes_copy() {
        let corpus = tiny_corpus();
        let mc = tiny_model(&corpus);
        let base = init_params(&mc).unwrap();
        let before = base.to_flat();
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let mut sc = StageConfig::new(Stage::SpeakerFt, 2, 2, 1e-3);
        sc.prompt_len_min = 4;
        sc.prompt_len_max = 12;
        let (tuned, curve) =
            speaker_finetune(&base, &corpus, &pool, &[1, 2], &sc, &mc).unwrap();
        assert_eq!(base.to_flat(), before);
        assert_ne!(tuned.to_flat(), before);
        assert_eq!(curve.len(), 2);
    }

    #[test]
    fn speaker_finetune_validates_speakers() {
        let corpus = tiny_corpus();
        let mc = tiny_model(&corpus);
        let base = init_params(&mc).unwrap();
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let sc = StageConfig::new(Stage::SpeakerFt, 1, 2, 1e-3);
        assert!(speaker_finetune(&base, &corpus, &pool, &[], &sc, &mc).is_err());
        assert!(speaker_finetune(&base, &corpus, &pool, &[99], &sc, &mc).is_err());
    }

    #[test]
    fn loss_curve_tsv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.tsv");
        write_loss_curve(&path, &[(1, 3.5), (2, 3.25)]).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        let mut lines = body.lines();
        assert_eq!(lines.next(), Some("step\tloss"));
        let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
        assert_eq!(row[0], "1");
        assert_eq!(row[1].parse::<f64>().unwrap(), 3.5);
    }
}
