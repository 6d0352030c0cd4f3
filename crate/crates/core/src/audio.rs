//! Mono PCM audio: WAV parsing and writing, 2:1 resampling and synthetic
//! test signals.
//!
//! Wide-band channels are 16 kHz and narrow-band channels are 8 kHz. The
//! resampler converts between the two with a windowed-sinc filter so that
//! narrow-band audio can be brought to the shared 16 kHz feature rate.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WIDE_RATE_HZ: u32 = 16_000;
pub const NARROW_RATE_HZ: u32 = 8_000;

/// PCM16 full scale. Dividing by 32768 maps -32768 to exactly -1.0.
const PCM16_SCALE: f64 = 32768.0;

/// A mono signal together with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    /// Multiplies every sample by `gain`.
    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// Recording channel of an utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelTag {
    Wide,
    Narrow,
}

impl ChannelTag {
    /// Native sample rate of the channel.
    pub fn native_rate_hz(self) -> u32 {
        match self {
            ChannelTag::Wide => WIDE_RATE_HZ,
            ChannelTag::Narrow => NARROW_RATE_HZ,
        }
    }

    pub fn from_rate(rate_hz: u32) -> Option<Self> {
        match rate_hz {
            WIDE_RATE_HZ => Some(ChannelTag::Wide),
            NARROW_RATE_HZ => Some(ChannelTag::Narrow),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelTag::Wide => "wide",
            ChannelTag::Narrow => "narrow",
        }
    }
}

impl fmt::Display for ChannelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ChannelTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide" => Ok(ChannelTag::Wide),
            "narrow" => Ok(ChannelTag::Narrow),
            other => Err(Error::MalformedFile(format!(
                "unknown channel tag {other:?}, expected wide or narrow"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// WAV

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn read_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn read_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Decodes a RIFF/WAVE PCM16 mono file. Chunks other than `fmt ` and
/// `data` are skipped.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedFile("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;

    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = read_u32(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| {
                Error::MalformedFile(format!(
                    "chunk {:?} declares {size} bytes past end of file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::MalformedFile(
                        "fmt chunk shorter than 16 bytes".into(),
                    ));
                }
                let mut tag = read_u16(body, 0);
                if tag == WAVE_FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::MalformedFile(
                            "truncated WAVE_FORMAT_EXTENSIBLE".into(),
                        ));
                    }
                    tag = read_u16(body, 24);
                }
                format = Some((
                    tag,
                    read_u16(body, 2),
                    read_u32(body, 4),
                    read_u16(body, 14),
                ));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // chunks are word aligned
        pos = body_end + (size & 1);
    }

    let (tag, channels, rate, bits) =
        format.ok_or_else(|| Error::MalformedFile("missing fmt chunk".into()))?;
    if tag != WAVE_FORMAT_PCM {
        return Err(Error::UnsupportedFormat(format!("codec tag {tag:#06x}")));
    }
    if channels != 1 {
        return Err(Error::UnsupportedChannels(channels));
    }
    if bits != 16 {
        return Err(Error::UnsupportedFormat(format!("{bits}-bit PCM")));
    }
    if rate == 0 {
        return Err(Error::MalformedFile("sample rate of 0".into()));
    }
    let data = data.ok_or_else(|| Error::MalformedFile("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::MalformedFile(
            "odd number of PCM16 data bytes".into(),
        ));
    }
    let samples = data
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / PCM16_SCALE)
        .collect();
    Ok(AudioBuffer {
        samples,
        sample_rate_hz: rate,
    })
}

/// Encoded WAV bytes and the number of samples that had to be clipped.
#[derive(Debug, Clone)]
pub struct WavBytes {
    pub bytes: Vec<u8>,
    pub clipped: usize,
}

/// Encodes `buf` as a canonical 44-byte-header PCM16 mono WAV.
///
/// Samples outside [-1, 1] saturate and are counted in `clipped`.
pub fn write_wav(buf: &AudioBuffer) -> WavBytes {
    let data_len = buf.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate_hz * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());

    let mut clipped = 0;
    for &s in &buf.samples {
        if !(-1.0..=1.0).contains(&s) {
            clipped += 1;
        }
        let q = (s * PCM16_SCALE)
            .round()
            .clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    WavBytes {
        bytes: out,
        clipped,
    }
}

pub fn read_wav_file(path: &std::path::Path) -> Result<AudioBuffer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes).map_err(|e| match e {
        Error::MalformedFile(m) => Error::MalformedFile(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_wav_file(path: &std::path::Path, buf: &AudioBuffer) -> Result<usize> {
    let wav = write_wav(buf);
    std::fs::write(path, &wav.bytes).map_err(|e| Error::io(path, e))?;
    Ok(wav.clipped)
}

// ---------------------------------------------------------------------------
// Resampling

/// Half-width of the resampling kernel; the kernel has `2 * HALF_TAPS + 1` taps.
pub const HALF_TAPS: usize = 64;

/// Cutoff as a fraction of the lower of the two sample rates.
pub const CUTOFF_FRACTION: f64 = 0.45;

/// Hann-windowed sinc low-pass, indexed `-HALF_TAPS..=HALF_TAPS`, with
/// `cutoff` given in cycles per sample at the high rate. Normalized to unit
/// DC gain.
fn lowpass_kernel(cutoff: f64) -> Vec<f64> {
    let half = HALF_TAPS as isize;
    let mut h: Vec<f64> = (-half..=half)
        .map(|k| {
            let k = k as f64;
            let sinc = if k == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * k).sin() / (PI * k)
            };
            let window = 0.5 + 0.5 * (PI * k / (half as f64 + 1.0)).cos();
            sinc * window
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Converts between two rates related by an exact factor of two.
///
/// Output length is `round(len * target / source)`. The signal is treated as
/// zero outside its support, so the first and last ~64 samples carry filter
/// edge effects. A 1:1 ratio returns a copy.
pub fn resample(buf: &AudioBuffer, target_rate_hz: u32) -> Result<AudioBuffer> {
    let source = buf.sample_rate_hz;
    if target_rate_hz == source {
        return Ok(buf.clone());
    }
    let low = source.min(target_rate_hz);
    let high = source.max(target_rate_hz);
    if target_rate_hz == 0 || high != 2 * low {
        return Err(Error::UnsupportedRatio {
            from: source,
            to: target_rate_hz,
        });
    }
    let cutoff = CUTOFF_FRACTION * low as f64 / high as f64;
    let kernel = lowpass_kernel(cutoff);
    let samples = if target_rate_hz < source {
        decimate2(&buf.samples, &kernel)
    } else {
        interpolate2(&buf.samples, &kernel)
    };
    Ok(AudioBuffer {
        samples,
        sample_rate_hz: target_rate_hz,
    })
}

fn decimate2(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let half = HALF_TAPS as isize;
    let n = x.len() as isize;
    let out_len = x.len().div_ceil(2);
    (0..out_len)
        .map(|m| {
            let centre = 2 * m as isize;
            let lo = (centre - half).max(0);
            let hi = (centre + half).min(n - 1);
            (lo..=hi)
                .map(|i| kernel[(centre - i + half) as usize] * x[i as usize])
                .sum()
        })
        .collect()
}

fn interpolate2(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    // Each output phase uses every other tap; scale each branch to unit DC gain.
    let half = HALF_TAPS as isize;
    let mut branches = [0.0f64; 2];
    for (idx, &h) in kernel.iter().enumerate() {
        branches[((idx as isize - half).rem_euclid(2)) as usize] += h;
    }
    let scaled: Vec<f64> = kernel
        .iter()
        .enumerate()
        .map(|(idx, &h)| h / branches[((idx as isize - half).rem_euclid(2)) as usize])
        .collect();

    let n = x.len() as isize;
    (0..2 * x.len())
        .map(|out| {
            let out = out as isize;
            // taps k = out - 2j with |k| <= half
            let j_lo = ((out - half + 1).div_euclid(2)).max(0);
            let j_hi = ((out + half).div_euclid(2)).min(n - 1);
            (j_lo..=j_hi)
                .map(|j| scaled[(out - 2 * j + half) as usize] * x[j as usize])
                .sum()
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Synthesis

/// Kind of synthetic test signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Sine,
    /// Linear sweep from 0 Hz to `freq_hz` over the duration.
    Chirp,
    /// Uniform noise in [-0.8, 0.8]; `freq_hz` is ignored.
    WhiteNoise,
}

impl FromStr for SignalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sine" => Ok(SignalKind::Sine),
            "chirp" => Ok(SignalKind::Chirp),
            "white_noise" | "white-noise" | "noise" => Ok(SignalKind::WhiteNoise),
            other => Err(Error::InvalidConfig(format!(
                "unknown signal kind {other:?}"
            ))),
        }
    }
}

pub const TONE_PEAK: f64 = 0.8;

pub fn synthesize(
    kind: SignalKind,
    freq_hz: f64,
    duration_s: f64,
    rate_hz: u32,
    seed: u64,
) -> Result<AudioBuffer> {
    if rate_hz == 0 {
        return Err(Error::InvalidConfig("sample rate must be positive".into()));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "duration must be positive, got {duration_s}"
        )));
    }
    if kind != SignalKind::WhiteNoise && !(freq_hz > 0.0 && freq_hz < rate_hz as f64 / 2.0) {
        return Err(Error::InvalidFrequency { freq_hz, rate_hz });
    }
    let n = (duration_s * rate_hz as f64).round() as usize;
    let rate = rate_hz as f64;
    let samples = match kind {
        SignalKind::Sine => (0..n)
            .map(|i| TONE_PEAK * (2.0 * PI * freq_hz * i as f64 / rate).sin())
            .collect(),
        SignalKind::Chirp => {
            let sweep = freq_hz / duration_s;
            (0..n)
                .map(|i| {
                    let t = i as f64 / rate;
                    TONE_PEAK * (PI * sweep * t * t).sin()
                })
                .collect()
        }
        SignalKind::WhiteNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| rng.random_range(-TONE_PEAK..=TONE_PEAK))
                .collect()
        }
    };
    Ok(AudioBuffer {
        samples,
        sample_rate_hz: rate_hz,
    })
}
