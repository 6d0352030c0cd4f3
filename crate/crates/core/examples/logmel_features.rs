//! Log-mel features for both channels on a shared 16 kHz grid.
//!
//!     cargo run --example logmel_features
//!
//! Narrow-band audio is upsampled before analysis, so both channels produce
//! 40-dimensional frames every 10 ms; the narrow-band frames simply carry
//! (near-)floor values in the mel bands above 4 kHz.

use bandmix::audio::{resample, synthesize, SignalKind, NARROW_RATE_HZ, WIDE_RATE_HZ};
use bandmix::dsp::{hz_to_mel, logmel, mel_to_hz, MelFilterbankConfig};

fn main() -> bandmix::Result<()> {
    let cfg = MelFilterbankConfig::default();
    cfg.validate(WIDE_RATE_HZ)?;
    println!(
        "{} mel bands, {} ms window / {} ms hop ({} / {} samples at 16 kHz), FFT {}",
        cfg.n_mels,
        cfg.window_ms,
        cfg.hop_ms,
        cfg.window_samples(WIDE_RATE_HZ),
        cfg.hop_samples(WIDE_RATE_HZ),
        cfg.fft_size
    );

    let wide = synthesize(SignalKind::Chirp, 7500.0, 1.0, WIDE_RATE_HZ, 0)?;
    let narrow = resample(&wide, NARROW_RATE_HZ)?;
    let narrow_on_grid = resample(&narrow, WIDE_RATE_HZ)?;

    let fw = logmel(&wide, &cfg)?;
    let fn_ = logmel(&narrow_on_grid, &cfg)?;
    println!("wide:   {} frames x {}", fw.num_frames(), fw.dim());
    println!("narrow: {} frames x {}", fn_.num_frames(), fn_.dim());

    // Mean log energy per band over the last quarter of the sweep (5.6-7.5 kHz).
    let tail = fw.num_frames() * 3 / 4;
    let mel_lo = hz_to_mel(cfg.f_min_hz);
    let mel_step = (hz_to_mel(cfg.f_max_hz) - mel_lo) / (cfg.n_mels + 1) as f64;
    println!("\nband centre (Hz)   wide    narrow   (mean log energy, frames {tail}..)");
    for band in (0..cfg.n_mels).step_by(5) {
        let centre = mel_to_hz(mel_lo + mel_step * (band + 1) as f64);
        let mean = |m: &bandmix::dsp::FeatureMatrix| {
            (tail..m.num_frames())
                .map(|t| m.rows.get(t, band))
                .sum::<f64>()
                / (m.num_frames() - tail) as f64
        };
        println!("{centre:>14.0} {:>8.2} {:>8.2}", mean(&fw), mean(&fn_));
    }
    Ok(())
}
