//! Shared fixtures for the acceptance binaries. Trained models are cached
//! under the cargo-provided scratch dir, keyed by a hash of everything that
//! shaped them, so reruns skip straight to the checks. Wall-clock costs of
//! cache misses are recorded in sidecars and reported on later runs.

#![allow(dead_code)]

use std::fs;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use dmtts::corpus::generate::{generate_corpus, Corpus, CorpusConfig};
use dmtts::model::ckpt::{load_checkpoint, save_checkpoint};
use dmtts::model::config::ModelConfig;
use dmtts::model::params::{init_params, Parameters};
use dmtts::provenance::Provenance;
use dmtts::train::{default_stage_config, train_stage, Stage, StageConfig};

pub fn cache_dir() -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-cache");
    fs::create_dir_all(&dir).expect("cache dir");
    dir
}

/// One pass/fail line per criterion, then the assertion.
pub fn verdict(criterion: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{criterion:>2}] {name}: {tag} ({detail})");
    assert!(pass, "criterion {criterion} {name}: {detail}");
}

pub fn default_corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| generate_corpus(&CorpusConfig::default()).expect("default corpus"))
}

/// Desk-scale model the heavy checks train: two layers, d_model 64, grouped
/// queries, two shared plus two per-dialect experts.
pub fn desk_model_config(corpus: &Corpus) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        d_model: 64,
        n_heads: 4,
        n_kv_heads: 2,
        d_ff: 128,
        experts_shared: 2,
        experts_per_dialect: 2,
        top_k: 2,
        m_dialect_tokens: 2,
        max_seq_len: 512,
        vocab: corpus.vocab.clone(),
        seed: 0,
    }
}

fn read_seconds(path: &PathBuf) -> Option<f64> {
    fs::read_to_string(path).ok()?.trim().parse().ok()
}

/// Loads a checkpoint if its config matches, otherwise trains via `build`
/// and saves. Returns the parameters plus the (possibly recorded) training
/// wall time in seconds.
pub fn cached_model<F>(key: &str, cfg: &ModelConfig, build: F) -> (Parameters, f64)
where
    F: FnOnce() -> Parameters,
{
    let ckpt = cache_dir().join(format!("{key}.ckpt"));
    let time_sidecar = cache_dir().join(format!("{key}.seconds"));
    if let Ok((params, header)) = load_checkpoint(&ckpt) {
        if &header.config == cfg {
            let secs = read_seconds(&time_sidecar).unwrap_or(0.0);
            return (params, secs);
        }
    }
    let start = Instant::now();
    let params = build();
    let secs = start.elapsed().as_secs_f64();
    save_checkpoint(&ckpt, &params, cfg, true).expect("save fixture checkpoint");
    fs::write(&time_sidecar, format!("{secs:.3}\n")).expect("save fixture timing");
    (params, secs)
}

/// The default two-stage pipeline on the default corpus: pretrain over the
/// full training pool, then adaptation on its fine subset. This is the model
/// criteria 6 through 9 examine.
pub fn stage2_model() -> &'static (Parameters, ModelConfig, f64) {
    static MODEL: OnceLock<(Parameters, ModelConfig, f64)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let corpus = default_corpus();
        let cfg = desk_model_config(corpus);
        let pre = default_stage_config(Stage::Pretrain);
        let fine = default_stage_config(Stage::Finetune);
        let key_hash = Provenance::new(&(&cfg, &pre, &fine, &corpus.cfg), 0)
            .expect("fixture key")
            .config_hash;
        let (params, secs) = cached_model(&format!("stage2-{key_hash}"), &cfg, || {
            let split = corpus.split();
            let mut params = init_params(&cfg).expect("init");
            train_stage(&mut params, corpus, &split.train, &pre, &cfg).expect("pretrain");
            train_stage(&mut params, corpus, &split.train, &fine, &cfg).expect("finetune");
            params
        });
        (params, cfg, secs)
    })
}

/// Small trained model for mechanical checks (streaming parity): big enough
/// that greedy streams are varied, cheap enough to train in seconds.
pub fn parity_corpus() -> &'static Corpus {
    static CORPUS: OnceLock<Corpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        generate_corpus(&CorpusConfig {
            n_text: 24,
            n_bases: 16,
            n_timbres: 4,
            n_dialects: 2,
            n_fp: 2,
            n_speakers: 8,
            n_utterances: 500,
            text_len_min: 3,
            text_len_max: 7,
            p_fp: 0.04,
            p_pr: 0.02,
            weak_fraction: 0.4,
            noise_rate: 0.1,
            n_zero_shot_speakers: 2,
            heldout_fine_fraction: 0.1,
            seed: 7,
        })
        .expect("parity corpus")
    })
}

pub fn parity_model() -> &'static (Parameters, ModelConfig) {
    static MODEL: OnceLock<(Parameters, ModelConfig)> = OnceLock::new();
    MODEL.get_or_init(|| {
        let corpus = parity_corpus();
        let cfg = ModelConfig {
            n_layers: 1,
            d_model: 32,
            n_heads: 2,
            n_kv_heads: 1,
            d_ff: 48,
            experts_shared: 1,
            experts_per_dialect: 1,
            top_k: 2,
            m_dialect_tokens: 1,
            max_seq_len: 128,
            vocab: corpus.vocab.clone(),
            seed: 3,
        };
        let sc = StageConfig {
            prompt_len_min: 4,
            prompt_len_max: 16,
            ..StageConfig::new(Stage::Pretrain, 400, 8, 3e-3)
        };
        let key_hash = Provenance::new(&(&cfg, &sc, &corpus.cfg), 0)
            .expect("fixture key")
            .config_hash;
        let (params, _) = cached_model(&format!("parity-{key_hash}"), &cfg, || {
            let split = corpus.split();
            let mut params = init_params(&cfg).expect("init");
            train_stage(&mut params, corpus, &split.train, &sc, &cfg).expect("parity train");
            params
        });
        (params, cfg)
    })
}
