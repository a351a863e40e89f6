//! Audible rendering of speech-token streams: 16 kHz, 16-bit mono RIFF.
//!
//! Each token is a 20 ms segment (320 samples). A speech token with base b
//! and timbre g is a sine at 200 + 12*b + 3*g Hz, so bases are audibly
//! distinct notes and timbre variants of the same base detune slightly. A
//! filled pause is low-amplitude noise (peak well under 0.1 of full scale),
//! seeded by segment position so renders are reproducible. PROLONG repeats
//! the previous segment verbatim, doubling its duration; with no previous
//! segment it renders silence. Segments restart phase independently.

use crate::corpus::vocab::Vocab;
use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

pub const SAMPLE_RATE: u32 = 16_000;
pub const SAMPLES_PER_TOKEN: usize = 320;

const TONE_AMPLITUDE: f64 = 0.30;
const NOISE_AMPLITUDE: f64 = 0.05;

fn tone(freq: f64) -> Vec<i16> {
    let mut seg = Vec::with_capacity(SAMPLES_PER_TOKEN);
    let w = 2.0 * std::f64::consts::PI * freq / f64::from(SAMPLE_RATE);
    for n in 0..SAMPLES_PER_TOKEN {
        let v = TONE_AMPLITUDE * (w * n as f64).sin();
        seg.push((v * f64::from(i16::MAX)).round() as i16);
    }
    seg
}

fn noise(position: usize) -> Vec<i16> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x4650_0000 ^ position as u64);
    (0..SAMPLES_PER_TOKEN)
        .map(|_| {
            let v: f64 = rng.gen_range(-NOISE_AMPLITUDE..NOISE_AMPLITUDE);
            (v * f64::from(i16::MAX)).round() as i16
        })
        .collect()
}

/// Renders a speech stream (speech ids, filled pauses, PROLONG) to PCM
/// samples. Any other id is rejected: text and control ids have no sound.
pub fn render_wav(tokens: &[u32], vocab: &Vocab) -> Result<Vec<i16>> {
    let mut out = Vec::with_capacity(tokens.len() * SAMPLES_PER_TOKEN);
    let mut prev: Option<Vec<i16>> = None;
    for (pos, &t) in tokens.iter().enumerate() {
        let seg = if let Some((base, g)) = vocab.speech_parts(t) {
            tone(200.0 + 12.0 * f64::from(base) + 3.0 * f64::from(g))
        } else if vocab.is_fp(t) {
            noise(pos)
        } else if t == vocab.prolong() {
            prev.clone().unwrap_or_else(|| vec![0; SAMPLES_PER_TOKEN])
        } else {
            return Err(Error::Data(format!("token {t} is not renderable audio")));
        };
        out.extend_from_slice(&seg);
        prev = Some(seg);
    }
    Ok(out)
}

/// Serializes samples as a canonical 16-bit mono RIFF/WAVE byte stream.
pub fn wav_bytes(samples: &[i16]) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&SAMPLE_RATE.to_le_bytes());
    out.extend_from_slice(&(SAMPLE_RATE * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn write_wav(path: &Path, samples: &[i16]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&wav_bytes(samples))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocab;

    fn vocab() -> Vocab {
        build_vocab(8, 6, 3, 2, 2).unwrap()
    }

    #[test]
    fn n_tokens_without_prolong_is_n_segments() {
        let v = vocab();
        let tokens = vec![v.speech_id(0, 0), v.fp(1), v.speech_id(5, 2)];
        let pcm = render_wav(&tokens, &v).unwrap();
        assert_eq!(pcm.len(), 3 * SAMPLES_PER_TOKEN);
    }

    #[test]
    fn prolong_repeats_the_previous_segment_exactly() {
        let v = vocab();
        let tokens = vec![v.speech_id(2, 1), v.prolong()];
        let pcm = render_wav(&tokens, &v).unwrap();
        assert_eq!(pcm.len(), 2 * SAMPLES_PER_TOKEN);
        assert_eq!(&pcm[..SAMPLES_PER_TOKEN], &pcm[SAMPLES_PER_TOKEN..]);
        // Chained PROLONGs keep repeating the same segment.
        let tokens = vec![v.fp(0), v.prolong(), v.prolong()];
        let pcm = render_wav(&tokens, &v).unwrap();
        assert_eq!(&pcm[..SAMPLES_PER_TOKEN], &pcm[2 * SAMPLES_PER_TOKEN..]);
        // A leading PROLONG has nothing to stretch: silence.
        let pcm = render_wav(&[v.prolong()], &v).unwrap();
        assert!(pcm.iter().all(|&s| s == 0));
    }

    #[test]
    fn filled_pause_stays_quiet() {
        let v = vocab();
        let pcm = render_wav(&[v.fp(0), v.fp(1)], &v).unwrap();
        let ceiling = (0.1 * f64::from(i16::MAX)) as i16;
        assert!(pcm.iter().all(|&s| s.abs() < ceiling));
        assert!(pcm.iter().any(|&s| s != 0));
    }

    #[test]
    fn tone_frequency_tracks_base_and_timbre() {
        let v = vocab();
        // Count zero crossings: a sine at f Hz crosses zero ~2f times/s,
        // so a 20 ms segment of base 10, timbre 0 (320 Hz) has ~12-13.
        let count = |pcm: &[i16]| {
            pcm.windows(2).filter(|w| (w[0] >= 0) != (w[1] >= 0)).count() as f64
        };
        let lo = render_wav(&[v.speech_id(0, 0)], &v).unwrap(); // 200 Hz
        let hi = render_wav(&[v.speech_id(5, 0)], &v).unwrap(); // 260 Hz
        let per_second = f64::from(SAMPLE_RATE) / SAMPLES_PER_TOKEN as f64;
        let f_lo = count(&lo) * per_second / 2.0;
        let f_hi = count(&hi) * per_second / 2.0;
        assert!((f_lo - 200.0).abs() < 30.0, "{f_lo}");
        assert!((f_hi - 260.0).abs() < 30.0, "{f_hi}");
        // Timbre detune changes the waveform.
        let detuned = render_wav(&[v.speech_id(0, 2)], &v).unwrap();
        assert_ne!(lo, detuned);
    }

    #[test]
    fn riff_header_is_well_formed() {
        let v = vocab();
        let pcm = render_wav(&[v.speech_id(1, 0), v.speech_id(2, 0)], &v).unwrap();
        let bytes = wav_bytes(&pcm);
        assert_eq!(&bytes[..4], b"RIFF");
        assert_eq!(&bytes[8..12], b"WAVE");
        assert_eq!(&bytes[12..16], b"fmt ");
        assert_eq!(&bytes[36..40], b"data");
        let riff_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        assert_eq!(riff_len as usize, bytes.len() - 8);
        let data_len = u32::from_le_bytes(bytes[40..44].try_into().unwrap());
        assert_eq!(data_len as usize, pcm.len() * 2);
        let rate = u32::from_le_bytes(bytes[24..28].try_into().unwrap());
        assert_eq!(rate, SAMPLE_RATE);
        let bits = u16::from_le_bytes(bytes[34..36].try_into().unwrap());
        assert_eq!(bits, 16);
    }

    #[test]
    fn non_audio_ids_are_rejected() {
        let v = vocab();
        for bad in [0u32, v.bos(), v.eos(), v.sep(), v.dialect_id(0)] {
            assert!(render_wav(&[bad], &v).is_err(), "id {bad} should not render");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let v = vocab();
        let tokens = vec![v.fp(0), v.speech_id(3, 1), v.prolong(), v.fp(1)];
        assert_eq!(render_wav(&tokens, &v).unwrap(), render_wav(&tokens, &v).unwrap());
    }

    #[test]
    fn wav_file_round_trips_through_disk() {
        let v = vocab();
        let pcm = render_wav(&[v.speech_id(0, 0)], &v).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        write_wav(&path, &pcm).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, wav_bytes(&pcm));
    }
}
