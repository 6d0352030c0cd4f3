//! WAV I/O and 16 kHz <-> 8 kHz conversion.
//!
//!     cargo run --example wav_resampling
//!
//! Shows the resampler's pass band (tones below 3.4 kHz survive unchanged),
//! its stop band (tones above 4 kHz are removed before decimation) and a
//! 16 -> 8 -> 16 kHz PCM16 round trip.

use bandmix::audio::{parse_wav, resample, synthesize, write_wav, AudioBuffer, SignalKind};

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn interior(x: &[f64]) -> &[f64] {
    &x[256..x.len() - 256]
}

fn main() -> bandmix::Result<()> {
    println!("tone (Hz)   level after 16 -> 8 kHz (dB)");
    for freq in [
        300.0, 1000.0, 2000.0, 3000.0, 3400.0, 3800.0, 4500.0, 6000.0, 7500.0,
    ] {
        let tone = synthesize(SignalKind::Sine, freq, 1.0, 16_000, 0)?;
        let down = resample(&tone, 8000)?;
        let db = 20.0 * (rms(interior(down.samples())) / rms(interior(tone.samples()))).log10();
        println!("{freq:>9.0}   {db:>8.2}");
    }

    // PCM16 round trip through the 8 kHz channel.
    let speechlike = synthesize(SignalKind::Chirp, 3000.0, 0.5, 16_000, 0)?;
    let wav = write_wav(&resample(&speechlike, 8000)?);
    println!(
        "\n8 kHz WAV: {} bytes, {} clipped samples",
        wav.bytes.len(),
        wav.clipped
    );
    let decoded: AudioBuffer = parse_wav(&wav.bytes)?;
    let back = resample(&decoded, 16_000)?;
    let err: Vec<f64> = speechlike
        .samples()
        .iter()
        .zip(back.samples())
        .map(|(a, b)| a - b)
        .collect();
    println!(
        "16 -> 8 -> 16 kHz round trip of a 0-3 kHz sweep: {} -> {} -> {} samples, interior RMS error {:.2e}",
        speechlike.len(),
        decoded.len(),
        back.len(),
        rms(interior(&err))
    );
    Ok(())
}
