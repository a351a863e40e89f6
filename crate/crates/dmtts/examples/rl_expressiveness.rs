//! Hierarchical RL post-training on a tiny model: the low level nudges the
//! transformer toward decodable speech under a KL anchor, the high level
//! tunes sampling temperature and spontaneous-token biases toward a target
//! filler/prolongation rate. Prints the reward trajectory.

use dmtts::corpus::generate::{generate_corpus, CorpusConfig};
use dmtts::corpus::vocab::build_vocab;
use dmtts::model::config::ModelConfig;
use dmtts::model::params::init_params;
use dmtts::rlpost::policy::RlConfig;
use dmtts::rlpost::update::hierarchical_rl;
use dmtts::train::stage::{train_stage, Stage, StageConfig};

fn main() -> dmtts::Result<()> {
    let ccfg = CorpusConfig {
        n_text: 10,
        n_bases: 10,
        n_timbres: 2,
        n_dialects: 2,
        n_fp: 2,
        n_speakers: 4,
        n_utterances: 160,
        text_len_min: 2,
        text_len_max: 4,
        p_fp: 0.05,
        p_pr: 0.03,
        weak_fraction: 0.25,
        noise_rate: 0.1,
        n_zero_shot_speakers: 1,
        heldout_fine_fraction: 0.1,
        seed: 23,
    };
    let corpus = generate_corpus(&ccfg)?;
    let split = corpus.split();
    let cfg = ModelConfig {
        n_layers: 1,
        d_model: 16,
        n_heads: 2,
        n_kv_heads: 1,
        d_ff: 16,
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
        seed: 3,
    };

    // A briefly trained base keeps the rollouts from being pure noise.
    let mut params = init_params(&cfg)?;
    let mut sc = StageConfig::new(Stage::Pretrain, 80, 8, 3e-3);
    sc.prompt_len_min = 4;
    sc.prompt_len_max = 8;
    train_stage(&mut params, &corpus, &split.train, &sc, &cfg)?;

    let rl = RlConfig {
        rollouts_per_step: 8,
        primary_steps: 1,
        high_level_steps: 2,
        rounds: 4,
        prompt_len_min: 4,
        prompt_len_max: 8,
        max_new_tokens: 16,
        ..RlConfig::default()
    };
    let outcome = hierarchical_rl(&params, &corpus, &split.train, &rl, &cfg)?;
    println!("round  r_primary  r_expressive      kl  accepted");
    for log in &outcome.curve {
        println!(
            "{:>5} {:>10.4} {:>13.4} {:>7.3}  {}",
            log.round, log.mean_r_primary, log.mean_r_expressive, log.kl, log.accepted
        );
    }
    let first = &outcome.curve[0];
    let last = outcome.curve.last().unwrap();
    println!(
        "expressive reward {:.4} -> {:.4}; controller temperature {:.3}",
        first.mean_r_expressive, last.mean_r_expressive, outcome.controller.temperature
    );
    Ok(())
}
