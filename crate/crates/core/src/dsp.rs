//! Short-time spectral analysis: framing, power spectra, log-mel features,
//! band-energy ratios and spectrogram export.

use std::f64::consts::PI;
use std::str::FromStr;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Floor added before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-10;

/// Per-frame feature rows for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Matrix,
    pub frame_hop_ms: f64,
    pub frame_window_ms: f64,
    pub source_utt_id: String,
}

impl FeatureMatrix {
    /// Wraps externally computed features (e.g. loaded from an FMX1 file).
    pub fn from_matrix(rows: Matrix, utt_id: impl Into<String>) -> Result<Self> {
        if !rows.is_finite() {
            return Err(Error::InvalidConfig(
                "feature matrix has non-finite entries".into(),
            ));
        }
        let cfg = MelFilterbankConfig::default();
        Ok(Self {
            rows,
            frame_hop_ms: cfg.hop_ms,
            frame_window_ms: cfg.window_ms,
            source_utt_id: utt_id.into(),
        })
    }

    pub fn num_frames(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn with_utt_id(mut self, utt_id: impl Into<String>) -> Self {
        self.source_utt_id = utt_id.into();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MelFilterbankConfig {
    pub n_mels: usize,
    pub fft_size: usize,
    pub f_min_hz: f64,
    pub f_max_hz: f64,
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for MelFilterbankConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            fft_size: 512,
            f_min_hz: 20.0,
            f_max_hz: 7600.0,
            window_ms: 25.0,
            hop_ms: 10.0,
        }
    }
}

impl MelFilterbankConfig {
    pub fn window_samples(&self, rate_hz: u32) -> usize {
        ms_to_samples(self.window_ms, rate_hz)
    }

    pub fn hop_samples(&self, rate_hz: u32) -> usize {
        ms_to_samples(self.hop_ms, rate_hz)
    }

    /// Checks the configuration against a sample rate.
    pub fn validate(&self, rate_hz: u32) -> Result<()> {
        check_fft_size(self.fft_size)?;
        if self.n_mels < 2 {
            return Err(Error::InvalidConfig("n_mels must be at least 2".into()));
        }
        let nyquist = rate_hz as f64 / 2.0;
        if !(self.f_min_hz >= 0.0 && self.f_min_hz < self.f_max_hz && self.f_max_hz <= nyquist) {
            return Err(Error::InvalidConfig(format!(
                "need 0 <= f_min ({}) < f_max ({}) <= Nyquist ({nyquist})",
                self.f_min_hz, self.f_max_hz
            )));
        }
        let window = self.window_samples(rate_hz);
        let hop = self.hop_samples(rate_hz);
        if window == 0 || hop == 0 {
            return Err(Error::InvalidConfig(
                "window and hop must span at least one sample".into(),
            ));
        }
        if window > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "window of {window} samples exceeds fft size {}",
                self.fft_size
            )));
        }
        Ok(())
    }
}

fn ms_to_samples(ms: f64, rate_hz: u32) -> usize {
    (ms * rate_hz as f64 / 1000.0).round() as usize
}

fn check_fft_size(fft_size: usize) -> Result<()> {
    if fft_size < 2 || !fft_size.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "fft size {fft_size} is not a power of two >= 2"
        )));
    }
    Ok(())
}

/// Number of full frames: `floor((N - W) / H) + 1`.
pub fn frame_count(n_samples: usize, window_ms: f64, hop_ms: f64, rate_hz: u32) -> Result<usize> {
    let window = ms_to_samples(window_ms, rate_hz);
    let hop = ms_to_samples(hop_ms, rate_hz);
    if window == 0 || hop == 0 {
        return Err(Error::InvalidConfig(
            "window and hop must span at least one sample".into(),
        ));
    }
    frames_in(n_samples, window, hop)
}

fn frames_in(n_samples: usize, window: usize, hop: usize) -> Result<usize> {
    if n_samples < window {
        return Err(Error::TooShort {
            samples: n_samples,
            window,
        });
    }
    Ok((n_samples - window) / hop + 1)
}

/// Analysis window applied to each frame before the transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hann,
    Rectangular,
}

/// Symmetric Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Reusable one-sided power-spectrum transform.
struct PowerSpectrum {
    fft_size: usize,
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    buffer: Vec<Complex<f64>>,
}

impl PowerSpectrum {
    fn new(fft_size: usize, frame_len: usize, window: Window) -> Result<Self> {
        check_fft_size(fft_size)?;
        if frame_len > fft_size {
            return Err(Error::InvalidConfig(format!(
                "frame of {frame_len} samples exceeds fft size {fft_size}"
            )));
        }
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let window = match window {
            Window::Hann => hann(frame_len),
            Window::Rectangular => vec![1.0; frame_len],
        };
        Ok(Self {
            fft_size,
            fft,
            window,
            buffer: vec![Complex::default(); fft_size],
        })
    }

    fn compute(&mut self, frame: &[f64], out: &mut [f64]) {
        debug_assert_eq!(frame.len(), self.window.len());
        for (i, slot) in self.buffer.iter_mut().enumerate() {
            let v = if i < frame.len() {
                frame[i] * self.window[i]
            } else {
                0.0
            };
            *slot = Complex::new(v, 0.0);
        }
        self.fft.process(&mut self.buffer);
        for (o, c) in out.iter_mut().zip(&self.buffer[..self.fft_size / 2 + 1]) {
            *o = c.norm_sqr();
        }
    }
}

/// `|FFT_k|²` for `k = 0..=fft_size/2` of the Hann-windowed, zero-padded frame.
pub fn power_spectrum(frame: &[f64], fft_size: usize) -> Result<Vec<f64>> {
    power_spectrum_with(frame, fft_size, Window::Hann)
}

pub fn power_spectrum_with(frame: &[f64], fft_size: usize, window: Window) -> Result<Vec<f64>> {
    let mut ps = PowerSpectrum::new(fft_size, frame.len(), window)?;
    let mut out = vec![0.0; fft_size / 2 + 1];
    ps.compute(frame, &mut out);
    Ok(out)
}

/// Power spectra of every full frame, `T × (fft_size/2 + 1)`.
pub fn stft_power(buf: &AudioBuffer, window: usize, hop: usize, fft_size: usize) -> Result<Matrix> {
    let frames = frames_in(buf.len(), window, hop)?;
    let mut ps = PowerSpectrum::new(fft_size, window, Window::Hann)?;
    let mut out = Matrix::zeros(frames, fft_size / 2 + 1);
    let samples = buf.samples();
    for t in 0..frames {
        ps.compute(&samples[t * hop..t * hop + window], out.row_mut(t));
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters (HTK scale) sampled at the FFT bin frequencies,
/// `n_mels × (fft_size/2 + 1)`.
pub fn mel_filterbank(cfg: &MelFilterbankConfig, rate_hz: u32) -> Result<Matrix> {
    cfg.validate(rate_hz)?;
    let bins = cfg.fft_size / 2 + 1;
    let lo = hz_to_mel(cfg.f_min_hz);
    let hi = hz_to_mel(cfg.f_max_hz);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(cfg.n_mels, bins);
    for m in 0..cfg.n_mels {
        let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * rate_hz as f64 / cfg.fft_size as f64;
            let w = if f > left && f <= centre {
                (f - left) / (centre - left)
            } else if f > centre && f < right {
                (right - f) / (right - centre)
            } else {
                0.0
            };
            fb.set(m, k, w);
        }
    }
    Ok(fb)
}

/// `ln(mel energy + 1e-10)` per frame. Narrow-band audio should be upsampled
/// to 16 kHz first so both channels share the frame rate and feature size.
pub fn logmel(buf: &AudioBuffer, cfg: &MelFilterbankConfig) -> Result<FeatureMatrix> {
    let rate = buf.sample_rate_hz();
    let fb = mel_filterbank(cfg, rate)?;
    let power = stft_power(
        buf,
        cfg.window_samples(rate),
        cfg.hop_samples(rate),
        cfg.fft_size,
    )?;
    let mut rows = Matrix::zeros(power.rows(), cfg.n_mels);
    for t in 0..power.rows() {
        let spectrum = power.row(t);
        for m in 0..cfg.n_mels {
            let energy: f64 = fb.row(m).iter().zip(spectrum).map(|(w, p)| w * p).sum();
            rows.set(t, m, (energy + LOG_FLOOR).ln());
        }
    }
    Ok(FeatureMatrix {
        rows,
        frame_hop_ms: cfg.hop_ms,
        frame_window_ms: cfg.window_ms,
        source_utt_id: String::new(),
    })
}

/// Energy split of the frame-averaged power spectrum at a cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandEnergyReport {
    pub cutoff_hz: f64,
    pub low_band_energy: f64,
    pub high_band_energy: f64,
    pub high_fraction: f64,
}

/// Splits the average power spectrum (25 ms Hann frames, 10 ms hop, 512-point
/// FFT) into bins below `cutoff_hz` and bins at or above it.
pub fn band_energy_ratio(buf: &AudioBuffer, cutoff_hz: f64) -> Result<BandEnergyReport> {
    let rate = buf.sample_rate_hz();
    let nyquist = rate as f64 / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::InvalidConfig(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {nyquist})"
        )));
    }
    let cfg = MelFilterbankConfig::default();
    let power = stft_power(
        buf,
        cfg.window_samples(rate),
        cfg.hop_samples(rate),
        cfg.fft_size,
    )?;
    let frames = power.rows() as f64;
    let (mut low, mut high) = (0.0, 0.0);
    for k in 0..power.cols() {
        let mean: f64 = (0..power.rows()).map(|t| power.get(t, k)).sum::<f64>() / frames;
        let f = k as f64 * rate as f64 / cfg.fft_size as f64;
        if f >= cutoff_hz {
            high += mean;
        } else {
            low += mean;
        }
    }
    let total = low + high;
    Ok(BandEnergyReport {
        cutoff_hz,
        low_band_energy: low,
        high_band_energy: high,
        high_fraction: if total > 0.0 { high / total } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrogramFormat {
    Csv,
    Pgm,
}

impl FromStr for SpectrogramFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "pgm" => Ok(Self::Pgm),
            other => Err(Error::InvalidConfig(format!(
                "unknown spectrogram format {other:?}"
            ))),
        }
    }
}

/// `10·log10(power + 1e-10)` grid, one row per frame, `fft_size/2 + 1` columns.
pub fn spectrogram_db(buf: &AudioBuffer, cfg: &MelFilterbankConfig) -> Result<Matrix> {
    let rate = buf.sample_rate_hz();
    let window = cfg.window_samples(rate);
    let hop = cfg.hop_samples(rate);
    if window == 0 || hop == 0 {
        return Err(Error::InvalidConfig(
            "window and hop must span at least one sample".into(),
        ));
    }
    let mut grid = stft_power(buf, window, hop, cfg.fft_size)?;
    grid.as_mut_slice()
        .iter_mut()
        .for_each(|p| *p = 10.0 * (*p + LOG_FLOOR).log10());
    Ok(grid)
}

/// Renders the dB spectrogram as CSV or as an 8-bit binary PGM scaled
/// linearly from the grid minimum (0) to its maximum (255).
pub fn export_spectrogram(
    buf: &AudioBuffer,
    cfg: &MelFilterbankConfig,
    format: SpectrogramFormat,
) -> Result<Vec<u8>> {
    let grid = spectrogram_db(buf, cfg)?;
    Ok(match format {
        SpectrogramFormat::Csv => crate::fmx::to_csv(&grid).into_bytes(),
        SpectrogramFormat::Pgm => {
            let values = grid.as_slice();
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = max - min;
            let mut out = format!("P5\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
            out.extend(values.iter().map(|&v| {
                if span > 0.0 {
                    (((v - min) / span) * 255.0).round() as u8
                } else {
                    0
                }
            }));
            out
        }
    })
}
