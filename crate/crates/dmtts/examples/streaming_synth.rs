//! Streams speech tokens from the paged-cache engine one decode step at a
//! time and verifies the stream matches the offline greedy decode exactly.

use dmtts::corpus::generate::{generate_corpus, CorpusConfig};
use dmtts::corpus::vocab::build_vocab;
use dmtts::model::config::ModelConfig;
use dmtts::model::decode::greedy_decode;
use dmtts::model::params::init_params;
use dmtts::serve::{pages_for, Engine, PoolConfig, Precision, StepOutcome};

fn main() -> dmtts::Result<()> {
    let ccfg = CorpusConfig {
        n_text: 12,
        n_bases: 10,
        n_timbres: 2,
        n_dialects: 2,
        n_fp: 1,
        n_speakers: 4,
        n_utterances: 60,
        text_len_min: 2,
        text_len_max: 4,
        p_fp: 0.04,
        p_pr: 0.02,
        weak_fraction: 0.3,
        noise_rate: 0.1,
        n_zero_shot_speakers: 1,
        heldout_fine_fraction: 0.1,
        seed: 31,
    };
    let corpus = generate_corpus(&ccfg)?;
    let cfg = ModelConfig {
        n_layers: 2,
        d_model: 16,
        n_heads: 2,
        n_kv_heads: 1,
        d_ff: 16,
        experts_shared: 1,
        experts_per_dialect: 1,
        top_k: 1,
        m_dialect_tokens: 1,
        max_seq_len: 64,
        vocab: build_vocab(
            ccfg.n_text,
            ccfg.n_bases,
            ccfg.n_timbres,
            ccfg.n_dialects,
            ccfg.n_fp,
        )?,
        seed: 8,
    };
    let params = init_params(&cfg)?;

    let text = [1u32, 4, 7];
    let prompt = &corpus.utterances[0].speech;
    let dialect = corpus.utterances[0].dialect_id;
    let max_new = 16;

    let page_size = 4;
    let prefix_len = text.len() + prompt.len() + 3;
    let planes = cfg.n_layers * cfg.n_kv_heads;
    let pool = PoolConfig {
        page_size,
        n_pages: planes * (pages_for(prefix_len + max_new, page_size) + 1),
    };
    let engine = Engine::new(&params, &cfg, &pool, Precision::Float)?;
    let mut session = engine.new_session(&text, Some(prompt), dialect)?;

    print!("streamed:");
    let mut streamed = Vec::new();
    for _ in 0..max_new {
        match session.decode_step()? {
            StepOutcome::Eos => break,
            StepOutcome::Token(t) => {
                print!(" {t}");
                streamed.push(t);
            }
        }
    }
    println!();
    println!(
        "first token after {:.3} ms, {} pages live",
        session.first_token_time().map(|d| d.as_secs_f64() * 1e3).unwrap_or(f64::NAN),
        session.page_ids().len()
    );

    let (offline, _) = greedy_decode(&params, &cfg, &text, Some(prompt), dialect, max_new)?;
    println!("offline: {offline:?}");
    assert_eq!(streamed, offline, "paged streaming matches offline greedy");
    println!("stream parity: exact");
    Ok(())
}
