//! Quantizes a model to int8 per-channel weights and benchmarks the
//! streaming engine against the float offline decoder on a seeded
//! workload: first-token latency, real-time factor, and oracle quality.

use dmtts::corpus::generate::{generate_corpus, CorpusConfig};
use dmtts::corpus::vocab::build_vocab;
use dmtts::model::config::ModelConfig;
use dmtts::model::params::init_params;
use dmtts::serve::{bench, quantize_weights, BenchConfig};

fn main() -> dmtts::Result<()> {
    let ccfg = CorpusConfig {
        n_text: 16,
        n_bases: 12,
        n_timbres: 2,
        n_dialects: 2,
        n_fp: 1,
        n_speakers: 6,
        n_utterances: 200,
        text_len_min: 3,
        text_len_max: 6,
        p_fp: 0.04,
        p_pr: 0.02,
        weak_fraction: 0.3,
        noise_rate: 0.1,
        n_zero_shot_speakers: 1,
        heldout_fine_fraction: 0.2,
        seed: 19,
    };
    let corpus = generate_corpus(&ccfg)?;
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 24,
        n_heads: 2,
        n_kv_heads: 1,
        d_ff: 24,
        experts_shared: 1,
        experts_per_dialect: 1,
        top_k: 1,
        m_dialect_tokens: 1,
        max_seq_len: 96,
        vocab: build_vocab(
            ccfg.n_text,
            ccfg.n_bases,
            ccfg.n_timbres,
            ccfg.n_dialects,
            ccfg.n_fp,
        )?,
        seed: 4,
    };
    let params = init_params(&cfg)?;

    let q = quantize_weights(&params, &cfg)?;
    println!(
        "quantized {} layers; {} all-zero output channels flagged",
        q.layers.len(),
        q.n_zero_channels
    );

    let bcfg = BenchConfig {
        n_sessions: 2,
        min_prompt_len: 32,
        max_new: 12,
        runs: 5,
        warmups: 1,
        page_size: 8,
        pool_pages: 0,
        seed: 1,
    };
    let report = bench(&params, &cfg, &corpus, &bcfg)?;
    print!("{}", report.table());
    println!(
        "first-token speedup: {:.1}x (streaming emits after prefill; offline after full decode)",
        1.0 / report.first_token_ratio
    );
    Ok(())
}
