//! Corpus-level quality metrics: token WER and speaker similarity.
//!
//! WER is token-level Levenshtein distance divided by reference length. The
//! speaker signature is an L2-normalized histogram over per-word timbre
//! residues `(g - pair_hash(b1, b2)) % G`, which is constant for clean speech
//! by one speaker and invariant to filled pauses and prolongations; SIM is the
//! cosine of two signatures.

use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use crate::seeds::pair_hash;

/// Unit-cost Levenshtein distance between token sequences.
///
/// Two-row dynamic program, O(len(a) * len(b)) time, O(min) memory.
pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0usize; short.len() + 1];
    for (i, &lt) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &st) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lt != st);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Token error rate: edit distance / reference length.
///
/// Undefined for an empty reference.
pub fn wer(reference: &[u32], hypothesis: &[u32]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::UndefinedMetric("WER needs a non-empty reference".into()));
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

/// L2-normalized histogram over per-word timbre residues, length G.
///
/// The speech stream is first reduced exactly like the oracle (pauses
/// stripped, prolongation duplicates collapsed), then each complete base pair
/// contributes the residue of its first token. Errors when no complete pair
/// remains.
pub fn speaker_signature(speech: &[u32], vocab: &Vocab) -> Result<Vec<f64>> {
    let g = vocab.n_timbres as u64;
    let mut clean: Vec<u32> = Vec::with_capacity(speech.len());
    for &tok in speech {
        if vocab.is_fp(tok) {
            continue;
        }
        if tok == vocab.prolong() {
            let n = clean.len();
            if n >= 2 && clean[n - 1] == clean[n - 2] && vocab.is_speech(clean[n - 1]) {
                clean.pop();
            }
            continue;
        }
        clean.push(tok);
    }
    let mut hist = vec![0.0f64; g as usize];
    let mut words = 0usize;
    for chunk in clean.chunks(2) {
        if chunk.len() < 2 {
            break;
        }
        if let (Some((b1, g1)), Some((b2, _))) =
            (vocab.speech_parts(chunk[0]), vocab.speech_parts(chunk[1]))
        {
            let residue = ((g1 as u64 + g) - pair_hash(b1, b2) % g) % g;
            hist[residue as usize] += 1.0;
            words += 1;
        }
    }
    if words == 0 {
        return Err(Error::UndefinedMetric("no decodable words for a signature".into()));
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut hist {
        *v /= norm;
    }
    Ok(hist)
}

/// Cosine similarity of two signatures (both already unit length).
pub fn sim(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::dialect::{make_dialect_spec, make_speaker, transduce};
    use crate::corpus::vocab::build_vocab;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Full-matrix textbook DP, kept as an independent oracle for the
    /// two-row implementation.
    pub(crate) fn edit_distance_oracle(a: &[u32], b: &[u32]) -> usize {
        let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
        for (i, row) in d.iter_mut().enumerate() {
            row[0] = i;
        }
        for j in 0..=b.len() {
            d[0][j] = j;
        }
        for i in 1..=a.len() {
            for j in 1..=b.len() {
                let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
                d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
            }
        }
        d[a.len()][b.len()]
    }

    #[test]
    fn identical_sequences_have_zero_wer() {
        assert_eq!(wer(&[1, 2, 3], &[1, 2, 3]).unwrap(), 0.0);
    }

    #[test]
    fn single_substitution_over_three() {
        let w = wer(&[1, 2, 3], &[1, 9, 3]).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn deletion_of_everything() {
        assert_eq!(wer(&[5], &[]).unwrap(), 1.0);
    }

    #[test]
    fn empty_reference_is_undefined() {
        assert!(matches!(wer(&[], &[1]), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn matches_full_matrix_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let la = rng.gen_range(0..12);
            let lb = rng.gen_range(0..12);
            let a: Vec<u32> = (0..la).map(|_| rng.gen_range(0..5)).collect();
            let b: Vec<u32> = (0..lb).map(|_| rng.gen_range(0..5)).collect();
            assert_eq!(edit_distance(&a, &b), edit_distance_oracle(&a, &b));
        }
    }

    #[test]
    fn distance_is_symmetric_and_triangular() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let mk = |rng: &mut ChaCha8Rng| {
                let l = rng.gen_range(0..10);
                (0..l).map(|_| rng.gen_range(0..4u32)).collect::<Vec<_>>()
            };
            let (a, b, c) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
            assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
        }
    }

    #[test]
    fn same_speaker_signatures_match_exactly() {
        let v = build_vocab(8, 16, 4, 2, 2).unwrap();
        let spec = make_dialect_spec(0, 31, 0.0, 0.0, &v).unwrap();
        let speaker = make_speaker(4, 31, &v);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s1 = transduce(&[0, 1, 2, 3], &spec, &speaker, &v, &mut rng).unwrap();
        let s2 = transduce(&[4, 5, 6, 7], &spec, &speaker, &v, &mut rng).unwrap();
        let a = speaker_signature(&s1, &v).unwrap();
        let b = speaker_signature(&s2, &v).unwrap();
        assert!((sim(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn distinct_offsets_are_orthogonal() {
        let v = build_vocab(8, 16, 4, 2, 2).unwrap();
        let spec = make_dialect_spec(0, 31, 0.0, 0.0, &v).unwrap();
        let mut a = make_speaker(1, 31, &v);
        let mut b = make_speaker(2, 31, &v);
        a.timbre_offset = 0;
        b.timbre_offset = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s1 = transduce(&[0, 1, 2], &spec, &a, &v, &mut rng).unwrap();
        let s2 = transduce(&[0, 1, 2], &spec, &b, &v, &mut rng).unwrap();
        let sa = speaker_signature(&s1, &v).unwrap();
        let sb = speaker_signature(&s2, &v).unwrap();
        assert_eq!(sim(&sa, &sb), 0.0);
    }

    #[test]
    fn signature_ignores_pauses_and_prolongation() {
        let v = build_vocab(8, 16, 4, 2, 2).unwrap();
        let clean_spec = make_dialect_spec(0, 31, 0.0, 0.0, &v).unwrap();
        let noisy_spec = make_dialect_spec(0, 31, 1.0, 1.0, &v).unwrap();
        assert_eq!(clean_spec.table, noisy_spec.table);
        let speaker = make_speaker(3, 31, &v);
        let text = vec![0, 5, 2, 7];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let clean = transduce(&text, &clean_spec, &speaker, &v, &mut rng).unwrap();
        let noisy = transduce(&text, &noisy_spec, &speaker, &v, &mut rng).unwrap();
        assert!(noisy.len() > clean.len());
        let a = speaker_signature(&clean, &v).unwrap();
        let b = speaker_signature(&noisy, &v).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unusable_stream_is_undefined() {
        let v = build_vocab(8, 16, 4, 2, 2).unwrap();
        assert!(speaker_signature(&[], &v).is_err());
        assert!(speaker_signature(&[v.fp(0), v.prolong()], &v).is_err());
        assert!(speaker_signature(&[v.speech_id(0, 0)], &v).is_err());
    }
}
