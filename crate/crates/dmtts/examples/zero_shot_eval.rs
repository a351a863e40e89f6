//! Evaluates a model on held-out clips it has never seen, prompted with a
//! same-speaker reference: oracle WER and timbre similarity, before and
//! after a short training run.

use dmtts::corpus::generate::{generate_corpus, CorpusConfig};
use dmtts::corpus::vocab::build_vocab;
use dmtts::eval::{compare, evaluate, render_metrics, EvalConfig, EvalMode, ReportFormat};
use dmtts::model::config::ModelConfig;
use dmtts::model::params::init_params;
use dmtts::train::stage::{train_stage, Stage, StageConfig};

fn main() -> dmtts::Result<()> {
    let ccfg = CorpusConfig {
        n_text: 12,
        n_bases: 10,
        n_timbres: 2,
        n_dialects: 2,
        n_fp: 1,
        n_speakers: 6,
        n_utterances: 240,
        text_len_min: 2,
        text_len_max: 4,
        p_fp: 0.03,
        p_pr: 0.02,
        weak_fraction: 0.3,
        noise_rate: 0.1,
        n_zero_shot_speakers: 1,
        heldout_fine_fraction: 0.2,
        seed: 29,
    };
    let corpus = generate_corpus(&ccfg)?;
    let split = corpus.split();
    let cfg = ModelConfig {
        n_layers: 1,
        d_model: 24,
        n_heads: 2,
        n_kv_heads: 1,
        d_ff: 32,
        experts_shared: 1,
        experts_per_dialect: 1,
        top_k: 1,
        m_dialect_tokens: 1,
        max_seq_len: 48,
        vocab: build_vocab(
            ccfg.n_text,
            ccfg.n_bases,
            ccfg.n_timbres,
            ccfg.n_dialects,
            ccfg.n_fp,
        )?,
        seed: 6,
    };

    let ecfg = EvalConfig {
        mode: EvalMode::ZeroShot,
        dialects: None,
        speakers: None,
        clips_per_dialect: 4,
        prompt_len_min: 4,
        prompt_len_max: 10,
        max_new: 12,
        seed: 2,
    };

    let mut params = init_params(&cfg)?;
    let before = evaluate(&params, &cfg, &corpus, &split.heldout_fine, &ecfg)?;
    println!("untrained:");
    print!("{}", render_metrics(&before, ReportFormat::Table)?);

    let mut sc = StageConfig::new(Stage::Pretrain, 200, 8, 3e-3);
    sc.prompt_len_min = 4;
    sc.prompt_len_max = 10;
    train_stage(&mut params, &corpus, &split.train, &sc, &cfg)?;

    let after = evaluate(&params, &cfg, &corpus, &split.heldout_fine, &ecfg)?;
    println!("\nafter {} pretrain steps:", sc.steps);
    print!("{}", render_metrics(&after, ReportFormat::Table)?);

    let delta = compare(&after, &before)?;
    println!(
        "\nimprovement: WER {:+.4}, SIM {:+.4}",
        delta.wer_improvement, delta.sim_improvement
    );
    Ok(())
}
