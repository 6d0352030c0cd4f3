//! Seeded synthetic two-channel corpus for demos and tests.
//!
//! Each utterance is a sequence of short segments: silence, a harmonic
//! "voiced" tone with partials up to 7 kHz, or a noise burst. Narrow-band
//! utterances are generated the same way at 16 kHz and then downsampled to
//! 8 kHz, which removes everything above 4 kHz as a telephone channel would.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{
    resample, write_wav_file, AudioBuffer, ChannelTag, NARROW_RATE_HZ, WIDE_RATE_HZ,
};
use crate::error::{Error, Result};
use crate::pipeline::{format_manifest, UtteranceRecord};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusSpec {
    pub n_wide: usize,
    pub n_narrow: usize,
    pub duration_s: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            n_wide: 25,
            n_narrow: 25,
            duration_s: 1.0,
            seed: 0,
        }
    }
}

/// One wide-band utterance at 16 kHz.
pub fn wideband_utterance(duration_s: f64, seed: u64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = (duration_s * WIDE_RATE_HZ as f64).round() as usize;
    let rate = WIDE_RATE_HZ as f64;
    let mut samples = Vec::with_capacity(total);
    while samples.len() < total {
        let len = rng.random_range(0.08..0.25) * rate;
        let len = (len as usize).min(total - samples.len());
        let kind: f64 = rng.random();
        if kind < 0.3 {
            samples.extend(std::iter::repeat_n(0.0, len));
        } else if kind < 0.8 {
            let f0 = rng.random_range(100.0..300.0);
            let harmonics = (7000.0 / f0) as usize;
            let norm: f64 = (1..=harmonics).map(|h| 1.0 / h as f64).sum();
            let gain = rng.random_range(0.4..0.8) / norm;
            let phase: Vec<f64> = (0..harmonics)
                .map(|_| rng.random_range(0.0..2.0 * PI))
                .collect();
            samples.extend((0..len).map(|i| {
                let t = i as f64 / rate;
                (1..=harmonics)
                    .map(|h| (2.0 * PI * f0 * h as f64 * t + phase[h - 1]).sin() / h as f64)
                    .sum::<f64>()
                    * gain
            }));
        } else {
            let amp = rng.random_range(0.1..0.4);
            samples.extend((0..len).map(|_| rng.random_range(-amp..amp)));
        }
    }
    AudioBuffer::new(samples, WIDE_RATE_HZ).expect("finite samples")
}

/// One narrow-band utterance at 8 kHz.
pub fn narrowband_utterance(duration_s: f64, seed: u64) -> AudioBuffer {
    let wide = wideband_utterance(duration_s, seed);
    resample(&wide, NARROW_RATE_HZ).expect("2:1 ratio")
}

/// Writes `wavs/*.wav` and `manifest.tsv` under `dir`; returns the records
/// (paths relative to `dir`).
pub fn write_corpus(dir: &Path, spec: &CorpusSpec) -> Result<Vec<UtteranceRecord>> {
    if spec.n_wide + spec.n_narrow == 0 {
        return Err(Error::EmptyInput("corpus with no utterances".into()));
    }
    let wav_dir = dir.join("wavs");
    std::fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let mut records = Vec::with_capacity(spec.n_wide + spec.n_narrow);
    let channels = std::iter::repeat_n(ChannelTag::Wide, spec.n_wide)
        .chain(std::iter::repeat_n(ChannelTag::Narrow, spec.n_narrow));
    for (i, channel) in channels.enumerate() {
        let seed = spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let audio = match channel {
            ChannelTag::Wide => wideband_utterance(spec.duration_s, seed),
            ChannelTag::Narrow => narrowband_utterance(spec.duration_s, seed),
        };
        let utt_id = format!("{}{:04}", channel, i);
        let rel = PathBuf::from("wavs").join(format!("{utt_id}.wav"));
        write_wav_file(&dir.join(&rel), &audio)?;
        records.push(UtteranceRecord {
            utt_id,
            path: rel,
            channel,
            num_frames: None,
        });
    }
    let manifest = dir.join("manifest.tsv");
    std::fs::write(&manifest, format_manifest(&records)).map_err(|e| Error::io(&manifest, e))?;
    Ok(records)
}
