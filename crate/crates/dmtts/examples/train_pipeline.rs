//! Runs the first two training stages on a miniature corpus and reports
//! the loss trajectory and held-out teacher-forced accuracy.

use dmtts::corpus::generate::{generate_corpus, CorpusConfig};
use dmtts::corpus::vocab::build_vocab;
use dmtts::eval::teacher_forced_accuracy;
use dmtts::model::config::ModelConfig;
use dmtts::model::params::init_params;
use dmtts::train::stage::{train_stage, Stage, StageConfig};

fn main() -> dmtts::Result<()> {
    let ccfg = CorpusConfig {
        n_text: 12,
        n_bases: 12,
        n_timbres: 2,
        n_dialects: 2,
        n_fp: 2,
        n_speakers: 6,
        n_utterances: 240,
        text_len_min: 2,
        text_len_max: 4,
        p_fp: 0.03,
        p_pr: 0.02,
        weak_fraction: 0.3,
        noise_rate: 0.1,
        n_zero_shot_speakers: 1,
        heldout_fine_fraction: 0.15,
        seed: 9,
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
        seed: 2,
    };
    let mut params = init_params(&cfg)?;

    let mut pretrain = StageConfig::new(Stage::Pretrain, 120, 8, 3e-3);
    pretrain.prompt_len_min = 4;
    pretrain.prompt_len_max = 10;
    pretrain.seed = 1;
    let curve = train_stage(&mut params, &corpus, &split.train, &pretrain, &cfg)?;
    println!(
        "pretrain: loss {:.3} -> {:.3} over {} steps",
        curve[0].1,
        curve.last().unwrap().1,
        curve.len()
    );

    let mut finetune = StageConfig::new(Stage::Finetune, 80, 8, 1e-3);
    finetune.prompt_len_min = 4;
    finetune.prompt_len_max = 10;
    finetune.seed = 1;
    let curve = train_stage(&mut params, &corpus, &split.train, &finetune, &cfg)?;
    println!(
        "finetune: loss {:.3} -> {:.3} over {} steps",
        curve[0].1,
        curve.last().unwrap().1,
        curve.len()
    );

    let acc = teacher_forced_accuracy(&params, &cfg, &corpus, &split.heldout_fine, 20, 12)?;
    println!("held-out teacher-forced accuracy: {acc:.3}");
    Ok(())
}
