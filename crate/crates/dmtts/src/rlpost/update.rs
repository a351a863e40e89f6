//! The two alternating optimization levels and the round driver. The
//! primary level takes advantage-centered score-function ascent steps on
//! the transformer, regularized toward the frozen anchor by a KL penalty;
//! the high level then adjusts the controller's spontaneous-token biases
//! and temperature by the same score-function estimator, with the
//! transformer frozen. Rounds whose mean per-sequence KL to the anchor
//! exceeds the ceiling are rolled back and the primary learning rate is
//! halved.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::generate::{Corpus, Quality};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::forward::{accumulate_grads_from_dlogits, forward_hidden};
use crate::model::params::Parameters;
use crate::numerics::ops::dot;
use crate::rlpost::policy::{policy_logprobs, ControllerParams, RlConfig};
use crate::rlpost::rollout::{rollout, Rollout};
use crate::seeds::{derive_seed, streams};
use crate::train::stage::draw_prompt;

/// One ascent step on the advantage-weighted sequence log-probability minus
/// `beta` times the full-distribution KL to the anchor, applied in place.
/// Returns the objective value before the step.
pub fn primary_policy_update(
    params: &mut Parameters,
    cfg: &ModelConfig,
    controller: &ControllerParams,
    rollouts: &[Rollout],
    beta: f64,
    lr: f64,
) -> Result<f64> {
    if rollouts.is_empty() {
        return Err(Error::Data("primary update needs at least one rollout".into()));
    }
    controller.validate()?;
    if beta < 0.0 {
        return Err(Error::Config("kl coefficient must be >= 0".into()));
    }
    let vocab = &cfg.vocab;
    let allowed = vocab.allowed_output_ids();
    let mut slot_of = vec![usize::MAX; vocab.total() as usize];
    for (i, &id) in allowed.iter().enumerate() {
        slot_of[id as usize] = i;
    }
    let n = rollouts.len() as f64;
    let mean_r = rollouts.iter().map(|r| r.r_primary).sum::<f64>() / n;
    let temp = controller.temperature;
    let mut grads = Parameters::zeros(cfg);
    let mut objective = 0.0;
    for r in rollouts {
        let item = r.train_item(cfg)?;
        let trace = forward_hidden(params, cfg, &item.input, item.dialect_id)?;
        let adv = r.r_primary - mean_r;
        let mut dlogits = vec![vec![0.0; allowed.len()]; item.targets.len()];
        for (j, &tok) in item.targets.iter().enumerate() {
            let h = trace.h_final.row(item.last_sep + j);
            let z: Vec<f64> =
                allowed.iter().map(|&id| dot(h, params.head.row(id as usize))).collect();
            let lp = policy_logprobs(&z, &allowed, vocab, controller, item.dialect_id);
            let q = &r.anchor_logprob_rows[j];
            let mut kl_t = 0.0;
            for (l, qi) in lp.iter().zip(q) {
                let p = l.exp();
                if p > 0.0 {
                    kl_t += p * (l - qi);
                }
            }
            let a_idx = slot_of[tok as usize];
            objective += (adv * lp[a_idx] - beta * kl_t) / n;
            for (i, ((g, &l), &qi)) in
                dlogits[j].iter_mut().zip(&lp).zip(q).enumerate()
            {
                let p = l.exp();
                let ind = f64::from(i == a_idx);
                let dkl = p * ((l - qi) - kl_t);
                *g = (adv * (ind - p) - beta * dkl) / (temp * n);
            }
        }
        accumulate_grads_from_dlogits(params, cfg, &item, &trace, &dlogits, &mut grads)?;
    }
    if !objective.is_finite() {
        return Err(Error::Numeric(format!("non-finite policy objective {objective}")));
    }
    params.axpy(lr, &grads);
    Ok(objective)
}

/// One score-function ascent step on mean expressiveness reward with
/// respect to the controller's biases and temperature only. Returns true
/// when the temperature had to be clamped at its floor.
pub fn high_level_update(
    controller: &mut ControllerParams,
    rollouts: &[Rollout],
    cfg: &ModelConfig,
    lr: f64,
) -> Result<bool> {
    if rollouts.is_empty() {
        return Err(Error::Data("controller update needs at least one rollout".into()));
    }
    controller.validate()?;
    let vocab = &cfg.vocab;
    let allowed = vocab.allowed_output_ids();
    let mut slot_of = vec![usize::MAX; vocab.total() as usize];
    for (i, &id) in allowed.iter().enumerate() {
        slot_of[id as usize] = i;
    }
    let bias_slots: Vec<Option<usize>> =
        allowed.iter().map(|&id| ControllerParams::bias_slot(vocab, id)).collect();
    let n = rollouts.len() as f64;
    let mean_r = rollouts.iter().map(|r| r.r_expressive).sum::<f64>() / n;
    let temp = controller.temperature;
    let mut dbias = vec![vec![0.0; vocab.n_fp as usize + 1]; vocab.n_dialects as usize];
    let mut dtemp = 0.0;
    for r in rollouts {
        let adv = r.r_expressive - mean_r;
        if adv == 0.0 {
            continue;
        }
        let d = r.dialect_id as usize;
        for (j, &tok) in r.tokens.iter().enumerate() {
            let z = &r.policy_logit_rows[j];
            let lp = policy_logprobs(z, &allowed, vocab, controller, r.dialect_id);
            let a_idx = slot_of[tok as usize];
            let mut expected_z = 0.0;
            for (i, (&l, slot)) in lp.iter().zip(&bias_slots).enumerate() {
                let p = l.exp();
                expected_z += p * z[i];
                if let Some(slot) = *slot {
                    let ind = f64::from(i == a_idx);
                    dbias[d][slot] += adv * (ind - p) / n;
                }
            }
            dtemp += adv * (expected_z - z[a_idx]) / (temp * temp * n);
        }
    }
    for (row, drow) in controller.bias.iter_mut().zip(&dbias) {
        for (b, &g) in row.iter_mut().zip(drow) {
            *b += lr * g;
        }
    }
    controller.temperature += lr * dtemp;
    if !controller.temperature.is_finite()
        || controller.bias.iter().flatten().any(|b| !b.is_finite())
    {
        return Err(Error::Numeric("non-finite controller update".into()));
    }
    let clamped = controller.temperature < 1e-3;
    if clamped {
        controller.temperature = 1e-3;
    }
    Ok(clamped)
}

/// Per-round record: mean rewards and KL are measured on the rollouts
/// collected after that round's primary steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundLog {
    pub round: usize,
    pub mean_r_primary: f64,
    pub mean_r_expressive: f64,
    pub kl: f64,
    pub accepted: bool,
    pub primary_lr: f64,
    pub temperature_clamped: bool,
}

/// Post-training output: the tuned transformer, the tuned controller, and
/// the per-round reward curve.
#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub params: Parameters,
    pub controller: ControllerParams,
    pub curve: Vec<RoundLog>,
}

/// Batch means over (r_primary, r_expressive, kl_to_anchor).
pub fn mean_rewards(rollouts: &[Rollout]) -> (f64, f64, f64) {
    let n = rollouts.len().max(1) as f64;
    (
        rollouts.iter().map(|r| r.r_primary).sum::<f64>() / n,
        rollouts.iter().map(|r| r.r_expressive).sum::<f64>() / n,
        rollouts.iter().map(|r| r.kl_to_anchor).sum::<f64>() / n,
    )
}

/// Collects one batch of rollouts from seeded draws over the fine pool.
/// `phase_tag` separates the two collections inside a round (and any
/// standalone evaluation batches) in seed space.
pub fn collect_rollouts(
    params: &Parameters,
    anchor: &Parameters,
    controller: &ControllerParams,
    cfg: &ModelConfig,
    corpus: &Corpus,
    pool: &[usize],
    rl: &RlConfig,
    phase_tag: u64,
) -> Result<Vec<Rollout>> {
    rl.validate()?;
    let fine: Vec<usize> = pool
        .iter()
        .copied()
        .filter(|&i| corpus.utterances[i].quality == Quality::Fine)
        .collect();
    if fine.is_empty() {
        return Err(Error::Data("no fine utterances available for rollouts".into()));
    }
    let fine_index = corpus.fine_index(pool);
    let mut out = Vec::with_capacity(rl.rollouts_per_step);
    for i in 0..rl.rollouts_per_step {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
            rl.seed,
            streams::ROLLOUT ^ (phase_tag << 24) ^ i as u64,
        ));
        let pick = fine[rng.gen_range(0..fine.len())];
        let utt = &corpus.utterances[pick];
        let prompt = if rng.gen::<f64>() < rl.prompt_prob {
            draw_prompt(
                corpus,
                &fine_index,
                pick,
                rl.prompt_len_min,
                rl.prompt_len_max,
                &mut rng,
            )
        } else {
            None
        };
        let spec = &corpus.specs[utt.dialect_id as usize];
        out.push(rollout(
            params,
            anchor,
            controller,
            cfg,
            spec,
            &utt.text,
            prompt.as_deref(),
            rl.target_rate,
            rl.max_new_tokens,
            &mut rng,
        )?);
    }
    Ok(out)
}

/// Alternating two-level post-training. Each round collects rollouts,
/// takes the primary steps, recollects under the updated transformer,
/// enforces the KL ceiling (rolling the round back and halving the primary
/// learning rate on breach), then takes the controller steps on the fresh
/// batch. The input parameters double as the frozen KL anchor.
pub fn hierarchical_rl(
    params: &Parameters,
    corpus: &Corpus,
    pool: &[usize],
    rl: &RlConfig,
    cfg: &ModelConfig,
) -> Result<RlOutcome> {
    rl.validate()?;
    let anchor = params.clone();
    let mut cur = params.clone();
    let mut controller = ControllerParams::new(cfg.vocab.n_dialects, cfg.vocab.n_fp);
    let mut lr = rl.primary_lr;
    let mut curve = Vec::with_capacity(rl.rounds);
    for round in 1..=rl.rounds {
        let snapshot_params = cur.clone();
        let snapshot_controller = controller.clone();
        let tag_a = (round as u64) << 1;
        let batch_a =
            collect_rollouts(&cur, &anchor, &controller, cfg, corpus, pool, rl, tag_a)?;
        for _ in 0..rl.primary_steps {
            primary_policy_update(
                &mut cur,
                cfg,
                &controller,
                &batch_a,
                rl.kl_coefficient,
                lr,
            )?;
        }
        let tag_b = tag_a | 1;
        let batch_b =
            collect_rollouts(&cur, &anchor, &controller, cfg, corpus, pool, rl, tag_b)?;
        let (mean_p, mean_e, kl) = mean_rewards(&batch_b);
        if kl > rl.kl_ceiling {
            cur = snapshot_params;
            controller = snapshot_controller;
            lr /= 2.0;
            curve.push(RoundLog {
                round,
                mean_r_primary: mean_p,
                mean_r_expressive: mean_e,
                kl,
                accepted: false,
                primary_lr: lr,
                temperature_clamped: false,
            });
            continue;
        }
        let mut clamped = false;
        for _ in 0..rl.high_level_steps {
            clamped |= high_level_update(&mut controller, &batch_b, cfg, rl.high_level_lr)?;
        }
        curve.push(RoundLog {
            round,
            mean_r_primary: mean_p,
            mean_r_expressive: mean_e,
            kl,
            accepted: true,
            primary_lr: lr,
            temperature_clamped: clamped,
        });
    }
    Ok(RlOutcome { params: cur, controller, curve })
}

/// Four-column TSV (round, mean_r_primary, mean_r_expressive, kl).
pub fn write_reward_curve(path: &Path, curve: &[RoundLog]) -> Result<()> {
    let mut out = String::with_capacity(curve.len() * 64);
    out.push_str("round\tmean_r_primary\tmean_r_expressive\tkl\n");
    for log in curve {
        out.push_str(&format!(
            "{}\t{:.17}\t{:.17}\t{:.17}\n",
            log.round, log.mean_r_primary, log.mean_r_expressive, log.kl
        ));
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
    use crate::numerics::ops::log_sum_exp;

    fn tiny_corpus() -> Corpus {
        generate_corpus(&CorpusConfig {
            n_text: 8,
            n_bases: 8,
            n_timbres: 2,
            n_dialects: 2,
            n_fp: 2,
            n_speakers: 4,
            n_utterances: 40,
            text_len_min: 2,
            text_len_max: 3,
            p_fp: 0.05,
            p_pr: 0.05,
            weak_fraction: 0.3,
            noise_rate: 0.1,
            n_zero_shot_speakers: 1,
            heldout_fine_fraction: 0.1,
            seed: 21,
        })
        .unwrap()
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
            max_seq_len: 64,
            vocab: corpus.vocab.clone(),
            seed: 12,
        }
    }

    fn tiny_rl() -> RlConfig {
        RlConfig {
            rollouts_per_step: 4,
            primary_steps: 1,
            high_level_steps: 1,
            rounds: 2,
            kl_coefficient: 0.05,
            kl_ceiling: 5.0,
            target_rate: 0.3,
            primary_lr: 0.01,
            high_level_lr: 0.2,
            prompt_prob: 0.5,
            prompt_len_min: 4,
            prompt_len_max: 10,
            max_new_tokens: 16,
            seed: 5,
        }
    }

    fn batch(
        params: &Parameters,
        corpus: &Corpus,
        cfg: &ModelConfig,
        rl: &RlConfig,
        tag: u64,
    ) -> Vec<Rollout> {
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let controller = ControllerParams::new(cfg.vocab.n_dialects, cfg.vocab.n_fp);
        collect_rollouts(params, params, &controller, cfg, corpus, &pool, rl, tag).unwrap()
    }

    fn seq_logprob(
        params: &Parameters,
        cfg: &ModelConfig,
        controller: &ControllerParams,
        r: &Rollout,
    ) -> f64 {
        let allowed = cfg.vocab.allowed_output_ids();
        let item = r.train_item(cfg).unwrap();
        let trace = forward_hidden(params, cfg, &item.input, item.dialect_id).unwrap();
        let mut total = 0.0;
        for (j, &tok) in item.targets.iter().enumerate() {
            let h = trace.h_final.row(item.last_sep + j);
            let z: Vec<f64> =
                allowed.iter().map(|&id| dot(h, params.head.row(id as usize))).collect();
            let lp = policy_logprobs(&z, &allowed, &cfg.vocab, controller, item.dialect_id);
            let slot = allowed.iter().position(|&id| id == tok).unwrap();
            total += lp[slot];
        }
        total
    }

    #[test]
    fn equal_rewards_and_zero_beta_change_nothing() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let p0 = init_params(&cfg).unwrap();
        let rl = tiny_rl();
        let mut rollouts = batch(&p0, &corpus, &cfg, &rl, 1);
        for r in &mut rollouts {
            r.r_primary = 0.4;
        }
        let controller = ControllerParams::new(cfg.vocab.n_dialects, cfg.vocab.n_fp);
        let mut p = p0.clone();
        primary_policy_update(&mut p, &cfg, &controller, &rollouts, 0.0, 0.05).unwrap();
        assert_eq!(p.to_flat(), p0.to_flat());
    }

    #[test]
    fn reward_shift_leaves_the_update_invariant() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let p0 = init_params(&cfg).unwrap();
        let rl = tiny_rl();
        let rollouts = batch(&p0, &corpus, &cfg, &rl, 2);
        let controller = ControllerParams::new(cfg.vocab.n_dialects, cfg.vocab.n_fp);
        let mut shifted = rollouts.clone();
        for r in &mut shifted {
            r.r_primary += 0.7;
        }
        let mut pa = p0.clone();
        let mut pb = p0.clone();
        primary_policy_update(&mut pa, &cfg, &controller, &rollouts, 0.05, 0.05).unwrap();
        primary_policy_update(&mut pb, &cfg, &controller, &shifted, 0.05, 0.05).unwrap();
        assert_eq!(pa.to_flat(), pb.to_flat());
    }

    #[test]
    fn positive_advantage_raises_the_winning_sequence_logprob() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let p0 = init_params(&cfg).unwrap();
        let rl = tiny_rl();
        let mut rollouts = batch(&p0, &corpus, &cfg, &rl, 3);
        rollouts.truncate(2);
        rollouts[0].r_primary = 1.0;
        rollouts[1].r_primary = 0.0;
        let controller = ControllerParams::new(cfg.vocab.n_dialects, cfg.vocab.n_fp);
        let before = seq_logprob(&p0, &cfg, &controller, &rollouts[0]);
        let mut p = p0.clone();
        primary_policy_update(&mut p, &cfg, &controller, &rollouts, 0.0, 0.02).unwrap();
        let after = seq_logprob(&p, &cfg, &controller, &rollouts[0]);
        assert!(after > before, "{after} <= {before}");
    }

    #[test]
    fn stronger_kl_anchor_pulls_harder_toward_the_anchor() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let anchor = init_params(&cfg).unwrap();
        // Perturb away from the anchor, then measure the pull back.
        let mut start = anchor.clone();
        let mut flat = start.to_flat();
        for (i, x) in flat.iter_mut().enumerate() {
            *x += 0.01 * (((i % 17) as f64) - 8.0) / 8.0;
        }
        start.load_flat(&flat);
        let rl = tiny_rl();
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let controller = ControllerParams::new(cfg.vocab.n_dialects, cfg.vocab.n_fp);
        let rollouts =
            collect_rollouts(&start, &anchor, &controller, &cfg, &corpus, &pool, &rl, 4)
                .unwrap();
        let dist = |p: &Parameters| {
            p.to_flat()
                .iter()
                .zip(anchor.to_flat())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };
        let mut dists = Vec::new();
        for beta in [0.0, 5.0, 20.0] {
            let mut p = start.clone();
            primary_policy_update(&mut p, &cfg, &controller, &rollouts, beta, 0.002)
                .unwrap();
            dists.push(dist(&p));
        }
        assert!(dists[1] < dists[0], "{dists:?}");
        assert!(dists[2] < dists[1], "{dists:?}");
    }

    #[test]
    fn below_target_rate_raises_spontaneous_biases() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let v = &cfg.vocab;
        let allowed = v.allowed_output_ids();
        // Two synthetic rollouts in dialect 0: one sampled a filled pause
        // and sits nearer the target rate, the other sampled none.
        let uniform_rows = |toks: &[u32]| vec![vec![0.0; allowed.len()]; toks.len()];
        let s = v.speech_id(0, 0);
        let mk = |toks: Vec<u32>, r_exp: f64| Rollout {
            text: vec![0, 1],
            dialect_id: 0,
            speaker_prompt: None,
            policy_logit_rows: uniform_rows(&toks),
            anchor_logprob_rows: vec![],
            policy_logprobs: vec![],
            anchor_logprobs: vec![],
            tokens: toks,
            terminated: false,
            kl_to_anchor: 0.0,
            r_primary: 0.0,
            r_expressive: r_exp,
        };
        let with_fp = mk(vec![s, v.fp(0), s, s], 0.8);
        let without = mk(vec![s, s, s, s], 0.0);
        let mut controller = ControllerParams::new(v.n_dialects, v.n_fp);
        high_level_update(&mut controller, &[with_fp, without], &cfg, 0.5).unwrap();
        assert!(controller.bias[0][0] > 0.0, "{:?}", controller.bias);
        // The untouched dialect keeps a zero bias vector.
        assert!(controller.bias[1].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn equal_expressive_rewards_freeze_the_controller() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let p = init_params(&cfg).unwrap();
        let rl = tiny_rl();
        let mut rollouts = batch(&p, &corpus, &cfg, &rl, 5);
        for r in &mut rollouts {
            r.r_expressive = 0.6;
        }
        let mut controller = ControllerParams::new(cfg.vocab.n_dialects, cfg.vocab.n_fp);
        let before = controller.clone();
        high_level_update(&mut controller, &rollouts, &cfg, 0.5).unwrap();
        assert_eq!(controller, before);
    }

    #[test]
    fn temperature_floor_is_enforced_and_flagged() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let v = &cfg.vocab;
        let allowed = v.allowed_output_ids();
        // The winner repeatedly sampled the id with the dominant logit, so
        // the temperature gradient is negative; a huge step crosses zero.
        let hot = allowed.len() - 1;
        let mut row = vec![0.0; allowed.len()];
        row[hot] = 5.0;
        let mk = |r_exp: f64, pick: usize| Rollout {
            text: vec![0],
            dialect_id: 0,
            speaker_prompt: None,
            tokens: vec![allowed[pick]; 3],
            terminated: false,
            policy_logit_rows: vec![row.clone(); 3],
            anchor_logprob_rows: vec![],
            policy_logprobs: vec![],
            anchor_logprobs: vec![],
            kl_to_anchor: 0.0,
            r_primary: 0.0,
            r_expressive: r_exp,
        };
        let rollouts = vec![mk(1.0, hot), mk(0.0, 0)];
        let mut controller = ControllerParams::new(v.n_dialects, v.n_fp);
        let clamped = high_level_update(&mut controller, &rollouts, &cfg, 1e6).unwrap();
        assert!(clamped);
        assert_eq!(controller.temperature, 1e-3);
    }

    #[test]
    fn zero_rounds_is_the_identity() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let p = init_params(&cfg).unwrap();
        let mut rl = tiny_rl();
        rl.rounds = 0;
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let out = hierarchical_rl(&p, &corpus, &pool, &rl, &cfg).unwrap();
        assert_eq!(out.params.to_flat(), p.to_flat());
        assert_eq!(out.controller, ControllerParams::new(2, 2));
        assert!(out.curve.is_empty());
    }

    #[test]
    fn controller_steps_never_touch_the_transformer() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let p = init_params(&cfg).unwrap();
        let mut rl = tiny_rl();
        rl.rounds = 1;
        rl.primary_steps = 0;
        rl.high_level_steps = 2;
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let out = hierarchical_rl(&p, &corpus, &pool, &rl, &cfg).unwrap();
        assert_eq!(out.params.to_flat(), p.to_flat());
    }

    #[test]
    fn post_training_is_deterministic() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let p = init_params(&cfg).unwrap();
        let rl = tiny_rl();
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let a = hierarchical_rl(&p, &corpus, &pool, &rl, &cfg).unwrap();
        let b = hierarchical_rl(&p, &corpus, &pool, &rl, &cfg).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.params.to_flat(), b.params.to_flat());
        assert_eq!(a.controller, b.controller);
    }

    #[test]
    fn kl_breach_rolls_back_and_halves_the_rate() {
        let corpus = tiny_corpus();
        let cfg = tiny_model(&corpus);
        let p = init_params(&cfg).unwrap();
        let mut rl = tiny_rl();
        rl.rounds = 2;
        // KL is nonnegative, so a negative ceiling rejects every round.
        rl.kl_ceiling = -1.0;
        let pool: Vec<usize> = (0..corpus.utterances.len()).collect();
        let out = hierarchical_rl(&p, &corpus, &pool, &rl, &cfg).unwrap();
        assert!(out.curve.iter().all(|l| !l.accepted));
        assert_eq!(out.curve[0].primary_lr, rl.primary_lr / 2.0);
        assert_eq!(out.curve[1].primary_lr, rl.primary_lr / 4.0);
        assert_eq!(out.params.to_flat(), p.to_flat());
        assert_eq!(out.controller, ControllerParams::new(2, 2));
    }

    #[test]
    fn reward_curve_tsv_has_four_columns() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rl.tsv");
        let log = RoundLog {
            round: 1,
            mean_r_primary: 0.5,
            mean_r_expressive: 0.25,
            kl: 0.125,
            accepted: true,
            primary_lr: 0.01,
            temperature_clamped: false,
        };
        write_reward_curve(&path, &[log]).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        let mut lines = body.lines();
        assert_eq!(lines.next(), Some("round\tmean_r_primary\tmean_r_expressive\tkl"));
        let row: Vec<&str> = lines.next().unwrap().split('\t').collect();
        assert_eq!(row.len(), 4);
        assert_eq!(row[0], "1");
        assert_eq!(row[2].parse::<f64>().unwrap(), 0.25);
    }

    #[test]
    fn objective_uses_log_domain_probabilities() {
        // Sanity link between the stored logits and the log-probabilities
        // the updates consume: softmax and log_sum_exp must agree.
        let z = [0.4, -1.2, 3.0];
        let lse = log_sum_exp(&z);
        let total: f64 = z.iter().map(|x| (x - lse).exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
