//! Synthetic corpus generation, weak-label corruption, persistence, and the
//! train/eval split.
//!
//! Utterances cycle deterministically through the (dialect, speaker) grid so
//! every pair is covered once the count reaches `n_dialects * n_speakers`;
//! all remaining randomness (lengths, text, insertions, corruption) comes
//! from per-utterance seeds derived from the corpus seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::dialect::{make_dialect_spec, make_speaker, transduce, DialectSpec, Speaker};
use crate::corpus::vocab::{build_vocab, Vocab};
use crate::error::{Error, Result};
use crate::provenance::Provenance;
use crate::seeds::{derive_seed, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Weak,
    Fine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub quality: Quality,
    pub dialect_id: u32,
    pub speaker_id: u32,
    pub text: Vec<u32>,
    pub speech: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_text: u32,
    pub n_bases: u32,
    pub n_timbres: u32,
    pub n_dialects: u32,
    pub n_fp: u32,
    pub n_speakers: u32,
    pub n_utterances: u32,
    pub text_len_min: u32,
    pub text_len_max: u32,
    pub p_fp: f64,
    pub p_pr: f64,
    /// Fraction of utterances that get weak (corrupted) labels.
    pub weak_fraction: f64,
    /// Corruption rate applied to weak utterances.
    pub noise_rate: f64,
    /// How many tail speaker ids are reserved for zero-shot evaluation.
    pub n_zero_shot_speakers: u32,
    /// Fraction of fine utterances per dialect held out from training.
    pub heldout_fine_fraction: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_text: 64,
            n_bases: 64,
            n_timbres: 8,
            n_dialects: 4,
            n_fp: 3,
            n_speakers: 50,
            n_utterances: 20_000,
            text_len_min: 4,
            text_len_max: 10,
            p_fp: 0.04,
            p_pr: 0.02,
            weak_fraction: 0.5,
            noise_rate: 0.1,
            n_zero_shot_speakers: 10,
            heldout_fine_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub cfg: CorpusConfig,
    pub vocab: Vocab,
    pub specs: Vec<DialectSpec>,
    pub speakers: Vec<Speaker>,
    pub utterances: Vec<Utterance>,
}

/// Disjoint utterance-id sets for training and evaluation.
///
/// `train` and `heldout_fine` cover speakers outside the zero-shot tail;
/// `sft_train`/`sft_eval` split the zero-shot speakers' fine utterances for
/// speaker fine-tuning and its evaluation. The union is audited disjoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub heldout_fine: Vec<usize>,
    pub sft_train: Vec<usize>,
    pub sft_eval: Vec<usize>,
}

impl CorpusConfig {
    pub fn vocab(&self) -> Result<Vocab> {
        build_vocab(self.n_text, self.n_bases, self.n_timbres, self.n_dialects, self.n_fp)
    }

    fn validate(&self) -> Result<()> {
        if self.n_speakers == 0 || self.n_utterances == 0 {
            return Err(Error::Config("speaker and utterance counts must be >= 1".into()));
        }
        if self.text_len_min == 0 || self.text_len_min > self.text_len_max {
            return Err(Error::Config(format!(
                "bad text length range [{}, {}]",
                self.text_len_min, self.text_len_max
            )));
        }
        if self.n_zero_shot_speakers >= self.n_speakers {
            return Err(Error::Config(
                "zero-shot speaker count must leave at least one training speaker".into(),
            ));
        }
        for (name, p) in [
            ("weak_fraction", self.weak_fraction),
            ("noise_rate", self.noise_rate),
            ("heldout_fine_fraction", self.heldout_fine_fraction),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Replaces each speech-stream position independently with probability
/// `noise_rate` by a uniformly random speech token, and relabels weak.
pub fn corrupt(
    utt: &Utterance,
    noise_rate: f64,
    vocab: &Vocab,
    rng: &mut dyn RngCore,
) -> Result<Utterance> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Config(format!("noise_rate = {noise_rate} outside [0, 1]")));
    }
    let mut out = utt.clone();
    out.quality = Quality::Weak;
    for tok in &mut out.speech {
        if rng.gen::<f64>() < noise_rate {
            let base = rng.gen_range(0..vocab.n_bases);
            let timbre = rng.gen_range(0..vocab.n_timbres);
            *tok = vocab.speech_id(base, timbre);
        }
    }
    Ok(out)
}

/// Generates the full corpus deterministically from its config.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let vocab = cfg.vocab()?;
    let mut specs = Vec::with_capacity(cfg.n_dialects as usize);
    for d in 0..cfg.n_dialects {
        specs.push(make_dialect_spec(d, cfg.seed, cfg.p_fp, cfg.p_pr, &vocab)?);
    }
    let speakers: Vec<Speaker> =
        (0..cfg.n_speakers).map(|s| make_speaker(s, cfg.seed, &vocab)).collect();

    let mut utterances = Vec::with_capacity(cfg.n_utterances as usize);
    for i in 0..cfg.n_utterances {
        let dialect_id = i % cfg.n_dialects;
        let speaker_id = (i / cfg.n_dialects) % cfg.n_speakers;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, streams::UTTERANCE ^ (i as u64) << 8));
        let len = rng.gen_range(cfg.text_len_min..=cfg.text_len_max);
        let text: Vec<u32> = (0..len).map(|_| rng.gen_range(0..cfg.n_text)).collect();
        let weak = rng.gen::<f64>() < cfg.weak_fraction;
        let speech = transduce(
            &text,
            &specs[dialect_id as usize],
            &speakers[speaker_id as usize],
            &vocab,
            &mut rng,
        )?;
        let utt = Utterance { quality: Quality::Fine, dialect_id, speaker_id, text, speech };
        let utt = if weak { corrupt(&utt, cfg.noise_rate, &vocab, &mut rng)? } else { utt };
        utterances.push(utt);
    }
    Ok(Corpus { cfg: cfg.clone(), vocab, specs, speakers, utterances })
}

impl Corpus {
    /// Deterministic train/eval split (see [`Split`]).
    pub fn split(&self) -> Split {
        let cfg = &self.cfg;
        let zs_start = cfg.n_speakers - cfg.n_zero_shot_speakers;
        let mut train = Vec::new();
        let mut fine_by_dialect: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mut sft_by_speaker: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, utt) in self.utterances.iter().enumerate() {
            if utt.speaker_id >= zs_start {
                if utt.quality == Quality::Fine {
                    sft_by_speaker.entry(utt.speaker_id).or_default().push(i);
                }
                continue;
            }
            if utt.quality == Quality::Fine {
                fine_by_dialect.entry(utt.dialect_id).or_default().push(i);
            } else {
                train.push(i);
            }
        }
        let mut heldout_fine = Vec::new();
        for (d, mut ids) in fine_by_dialect {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                streams::SPLIT ^ ((d as u64) << 16),
            ));
            let n_held = ((ids.len() as f64) * cfg.heldout_fine_fraction).ceil() as usize;
            // Seeded partial shuffle: pick held-out ids without bias.
            for k in 0..n_held.min(ids.len()) {
                let j = rng.gen_range(k..ids.len());
                ids.swap(k, j);
            }
            heldout_fine.extend_from_slice(&ids[..n_held.min(ids.len())]);
            train.extend_from_slice(&ids[n_held.min(ids.len())..]);
        }
        let mut sft_train = Vec::new();
        let mut sft_eval = Vec::new();
        for (s, mut ids) in sft_by_speaker {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed,
                streams::SPLIT ^ 0xffff ^ ((s as u64) << 16),
            ));
            let n_eval = (ids.len() / 4).max(1).min(ids.len());
            for k in 0..n_eval {
                let j = rng.gen_range(k..ids.len());
                ids.swap(k, j);
            }
            sft_eval.extend_from_slice(&ids[..n_eval]);
            sft_train.extend_from_slice(&ids[n_eval..]);
        }
        train.sort_unstable();
        heldout_fine.sort_unstable();
        sft_train.sort_unstable();
        sft_eval.sort_unstable();
        Split { train, heldout_fine, sft_train, sft_eval }
    }

    /// Fine utterance ids grouped by (dialect, speaker), restricted to `pool`.
    pub fn fine_index(&self, pool: &[usize]) -> BTreeMap<(u32, u32), Vec<usize>> {
        let mut index: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for &i in pool {
            let u = &self.utterances[i];
            if u.quality == Quality::Fine {
                index.entry((u.dialect_id, u.speaker_id)).or_default().push(i);
            }
        }
        index
    }

    /// Writes `corpus.tsv` and `header.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let header = CorpusHeader {
            provenance: Provenance::new(&self.cfg, self.cfg.seed)?,
            config: self.cfg.clone(),
            vocab: self.vocab.clone(),
            specs: self.specs.clone(),
            speakers: self.speakers.clone(),
        };
        let mut hj = serde_json::to_vec_pretty(&header)?;
        hj.push(b'\n');
        fs::write(dir.join("header.json"), hj)?;
        let mut out = Vec::with_capacity(self.utterances.len() * 64);
        for u in &self.utterances {
            let quality = match u.quality {
                Quality::Weak => "weak",
                Quality::Fine => "fine",
            };
            let text = join_ids(&u.text);
            let speech = join_ids(&u.speech);
            writeln!(out, "{quality}\t{}\t{}\t{text}\t{speech}", u.dialect_id, u.speaker_id)?;
        }
        fs::write(dir.join("corpus.tsv"), out)?;
        Ok(())
    }

    /// Loads a corpus written by [`Corpus::save`], validating every token id.
    pub fn load(dir: &Path) -> Result<Corpus> {
        let header: CorpusHeader =
            serde_json::from_slice(&fs::read(dir.join("header.json"))?)?;
        let vocab = header.config.vocab()?;
        if vocab != header.vocab {
            return Err(Error::Data("header vocab disagrees with its config".into()));
        }
        let body = fs::read_to_string(dir.join("corpus.tsv"))?;
        let mut utterances = Vec::new();
        for (lineno, line) in body.lines().enumerate() {
            let mut fields = line.split('\t');
            let (q, d, s, t, sp) = (
                fields.next(),
                fields.next(),
                fields.next(),
                fields.next(),
                fields.next(),
            );
            let (Some(q), Some(d), Some(s), Some(t), Some(sp)) = (q, d, s, t, sp) else {
                return Err(Error::Data(format!("corpus line {} is malformed", lineno + 1)));
            };
            let quality = match q {
                "weak" => Quality::Weak,
                "fine" => Quality::Fine,
                other => {
                    return Err(Error::Data(format!(
                        "corpus line {}: unknown quality {other:?}",
                        lineno + 1
                    )))
                }
            };
            let parse_u32 = |v: &str, what: &str| {
                v.parse::<u32>()
                    .map_err(|_| Error::Data(format!("corpus line {}: bad {what}", lineno + 1)))
            };
            let dialect_id = parse_u32(d, "dialect id")?;
            let speaker_id = parse_u32(s, "speaker id")?;
            if dialect_id >= header.config.n_dialects || speaker_id >= header.config.n_speakers {
                return Err(Error::Data(format!(
                    "corpus line {}: dialect/speaker out of range",
                    lineno + 1
                )));
            }
            let text = parse_ids(t, lineno)?;
            let speech = parse_ids(sp, lineno)?;
            if text.iter().any(|&tok| !vocab.is_text(tok)) {
                return Err(Error::Data(format!(
                    "corpus line {}: non-text id in text column",
                    lineno + 1
                )));
            }
            if speech
                .iter()
                .any(|&tok| !(vocab.is_speech(tok) || vocab.is_fp(tok) || tok == vocab.prolong()))
            {
                return Err(Error::Data(format!(
                    "corpus line {}: invalid id in speech column",
                    lineno + 1
                )));
            }
            utterances.push(Utterance { quality, dialect_id, speaker_id, text, speech });
        }
        Ok(Corpus {
            cfg: header.config,
            vocab,
            specs: header.specs,
            speakers: header.speakers,
            utterances,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    provenance: Provenance,
    config: CorpusConfig,
    vocab: Vocab,
    specs: Vec<DialectSpec>,
    speakers: Vec<Speaker>,
}

fn join_ids(ids: &[u32]) -> String {
    let mut s = String::with_capacity(ids.len() * 4);
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        s.push_str(&id.to_string());
    }
    s
}

fn parse_ids(field: &str, lineno: usize) -> Result<Vec<u32>> {
    if field.is_empty() {
        return Ok(Vec::new());
    }
    field
        .split(' ')
        .map(|v| {
            v.parse::<u32>()
                .map_err(|_| Error::Data(format!("corpus line {}: bad token id", lineno + 1)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dialect::oracle_asr;

    fn small_cfg() -> CorpusConfig {
        CorpusConfig {
            n_text: 8,
            n_bases: 16,
            n_timbres: 4,
            n_dialects: 2,
            n_fp: 2,
            n_speakers: 5,
            n_utterances: 100,
            text_len_min: 2,
            text_len_max: 6,
            p_fp: 0.2,
            p_pr: 0.2,
            weak_fraction: 0.4,
            noise_rate: 0.2,
            n_zero_shot_speakers: 1,
            heldout_fine_fraction: 0.1,
            seed: 7,
        }
    }

    #[test]
    fn all_fine_when_weak_fraction_zero() {
        let mut cfg = small_cfg();
        cfg.weak_fraction = 0.0;
        let corpus = generate_corpus(&cfg).unwrap();
        for u in &corpus.utterances {
            assert_eq!(u.quality, Quality::Fine);
            let spec = &corpus.specs[u.dialect_id as usize];
            assert_eq!(oracle_asr(&u.speech, spec, &corpus.vocab), u.text);
        }
    }

    #[test]
    fn dialect_speaker_grid_is_covered() {
        let mut cfg = small_cfg();
        cfg.n_utterances = (cfg.n_dialects * cfg.n_speakers) as u32;
        let corpus = generate_corpus(&cfg).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for u in &corpus.utterances {
            seen.insert((u.dialect_id, u.speaker_id));
        }
        assert_eq!(seen.len() as u32, cfg.n_dialects * cfg.n_speakers);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = small_cfg();
        let a = generate_corpus(&cfg).unwrap();
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a.utterances, b.utterances);
        assert_eq!(a.specs, b.specs);
    }

    #[test]
    fn corrupt_zero_rate_is_identity() {
        let cfg = small_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        let u = &corpus.utterances[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = corrupt(u, 0.0, &corpus.vocab, &mut rng).unwrap();
        assert_eq!(c.speech, u.speech);
        assert_eq!(c.quality, Quality::Weak);
    }

    #[test]
    fn corrupt_full_rate_replaces_almost_everything() {
        let mut cfg = small_cfg();
        cfg.weak_fraction = 0.0;
        cfg.n_utterances = 400;
        cfg.text_len_min = 6;
        cfg.text_len_max = 10;
        let corpus = generate_corpus(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut total = 0usize;
        let mut unchanged = 0usize;
        for u in &corpus.utterances {
            let c = corrupt(u, 1.0, &corpus.vocab, &mut rng).unwrap();
            total += u.speech.len();
            unchanged += u.speech.iter().zip(&c.speech).filter(|(a, b)| a == b).count();
        }
        // Unchanged fraction should be about 1 / V_s (drawing the same token).
        let v_s = corpus.vocab.n_speech() as f64;
        let frac = unchanged as f64 / total as f64;
        assert!(frac < 3.0 / v_s + 0.01, "unchanged fraction {frac}");
    }

    #[test]
    fn corrupt_rate_is_binomial() {
        // 10k tokens at rate 0.1: replacements within 1000 +/- 3*sqrt(900).
        let v = build_vocab(8, 16, 4, 2, 2).unwrap();
        let spec = make_dialect_spec(0, 3, 0.0, 0.0, &v).unwrap();
        let speaker = make_speaker(0, 3, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let text: Vec<u32> = (0..5000).map(|_| rng.gen_range(0..v.n_text)).collect();
        let speech = transduce(&text, &spec, &speaker, &v, &mut rng).unwrap();
        let utt = Utterance {
            quality: Quality::Fine,
            dialect_id: 0,
            speaker_id: 0,
            text,
            speech,
        };
        let c = corrupt(&utt, 0.1, &v, &mut rng).unwrap();
        let changed =
            utt.speech.iter().zip(&c.speech).filter(|(a, b)| a != b).count() as f64;
        assert!(
            (changed - 1000.0).abs() <= 3.0 * 900f64.sqrt() + 1000.0 / v.n_speech() as f64,
            "changed {changed}"
        );
    }

    #[test]
    fn corrupt_rejects_bad_rate() {
        let cfg = small_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(corrupt(&corpus.utterances[0], 1.5, &corpus.vocab, &mut rng).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let cfg = small_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        corpus.save(dir.path()).unwrap();
        let loaded = Corpus::load(dir.path()).unwrap();
        assert_eq!(loaded.utterances, corpus.utterances);
        assert_eq!(loaded.specs, corpus.specs);
        assert_eq!(loaded.speakers, corpus.speakers);
        assert_eq!(loaded.vocab, corpus.vocab);
    }

    #[test]
    fn save_is_byte_deterministic() {
        let cfg = small_cfg();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_corpus(&cfg).unwrap().save(a.path()).unwrap();
        generate_corpus(&cfg).unwrap().save(b.path()).unwrap();
        for name in ["corpus.tsv", "header.json"] {
            let x = fs::read(a.path().join(name)).unwrap();
            let y = fs::read(b.path().join(name)).unwrap();
            assert_eq!(x, y, "{name} differs across identical runs");
        }
    }

    #[test]
    fn split_sets_are_disjoint_and_cover_expectations() {
        let cfg = small_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        let split = corpus.split();
        let mut all: Vec<usize> = split
            .train
            .iter()
            .chain(&split.heldout_fine)
            .chain(&split.sft_train)
            .chain(&split.sft_eval)
            .copied()
            .collect();
        let n = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), n, "split sets overlap");
        let zs_start = cfg.n_speakers - cfg.n_zero_shot_speakers;
        for &i in &split.train {
            assert!(corpus.utterances[i].speaker_id < zs_start);
        }
        for &i in split.sft_train.iter().chain(&split.sft_eval) {
            let u = &corpus.utterances[i];
            assert!(u.speaker_id >= zs_start);
            assert_eq!(u.quality, Quality::Fine);
        }
        for &i in &split.heldout_fine {
            assert_eq!(corpus.utterances[i].quality, Quality::Fine);
        }
        assert!(!split.heldout_fine.is_empty());
        assert!(!split.sft_eval.is_empty());
    }

    #[test]
    fn split_is_deterministic() {
        let cfg = small_cfg();
        let corpus = generate_corpus(&cfg).unwrap();
        assert_eq!(corpus.split(), corpus.split());
    }

    #[test]
    fn config_validation() {
        let mut cfg = small_cfg();
        cfg.n_zero_shot_speakers = cfg.n_speakers;
        assert!(generate_corpus(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.text_len_min = 0;
        assert!(generate_corpus(&cfg).is_err());
        let mut cfg = small_cfg();
        cfg.weak_fraction = 2.0;
        assert!(generate_corpus(&cfg).is_err());
    }
}
