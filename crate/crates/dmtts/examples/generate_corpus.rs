//! Generates a small seeded dialect corpus, prints its shape, and shows
//! the oracle round trip: text -> speech tokens -> exact ASR -> text.

use dmtts::corpus::dialect::oracle_asr;
use dmtts::corpus::generate::{generate_corpus, CorpusConfig, Quality};

fn main() -> dmtts::Result<()> {
    let cfg = CorpusConfig {
        n_text: 32,
        n_bases: 24,
        n_timbres: 4,
        n_dialects: 3,
        n_fp: 2,
        n_speakers: 10,
        n_utterances: 400,
        text_len_min: 3,
        text_len_max: 8,
        p_fp: 0.04,
        p_pr: 0.02,
        weak_fraction: 0.4,
        noise_rate: 0.1,
        n_zero_shot_speakers: 2,
        heldout_fine_fraction: 0.1,
        seed: 17,
    };
    let corpus = generate_corpus(&cfg)?;

    let fine = corpus.utterances.iter().filter(|u| u.quality == Quality::Fine).count();
    println!(
        "{} utterances ({} fine, {} weak), {} dialects, {} speakers",
        corpus.utterances.len(),
        fine,
        corpus.utterances.len() - fine,
        cfg.n_dialects,
        cfg.n_speakers
    );
    let split = corpus.split();
    println!(
        "split: {} train / {} held-out fine / {} sft-train / {} sft-eval",
        split.train.len(),
        split.heldout_fine.len(),
        split.sft_train.len(),
        split.sft_eval.len()
    );

    // Every fine utterance decodes back to its text exactly.
    let u = corpus
        .utterances
        .iter()
        .find(|u| u.quality == Quality::Fine)
        .expect("corpus has fine clips");
    let spec = &corpus.specs[u.dialect_id as usize];
    let decoded = oracle_asr(&u.speech, spec, &corpus.vocab);
    println!("text    {:?}", u.text);
    println!("speech  {:?}", &u.speech[..u.speech.len().min(12)]);
    println!("decoded {decoded:?}");
    assert_eq!(decoded, u.text, "oracle ASR inverts transduction");
    println!("oracle round trip: exact");
    Ok(())
}
