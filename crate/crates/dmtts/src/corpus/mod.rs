//! Token vocabulary, dialect transduction rules, synthetic corpus
//! generation, and the exact reference metrics built on top of them.

pub mod dialect;
pub mod generate;
pub mod metrics;
pub mod vocab;

pub use dialect::{make_dialect_spec, make_speaker, oracle_asr, transduce, DialectSpec, Speaker};
pub use generate::{corrupt, generate_corpus, Corpus, CorpusConfig, Quality, Split, Utterance};
pub use metrics::{edit_distance, sim, speaker_signature, wer};
pub use vocab::{build_vocab, Vocab, UNK};
