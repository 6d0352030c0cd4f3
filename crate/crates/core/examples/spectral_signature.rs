//! Why narrow-band speech needs its own clusters: audio that passed through an
//! 8 kHz channel has no energy above 4 kHz, even after upsampling to 16 kHz.
//!
//!     cargo run --example spectral_signature [-- OUT_DIR]
//!
//! Writes PGM spectrograms of the native and narrow-origin versions when an
//! output directory is given.

use std::path::PathBuf;

use bandmix::audio::{resample, synthesize, SignalKind, NARROW_RATE_HZ, WIDE_RATE_HZ};
use bandmix::dsp::{band_energy_ratio, export_spectrogram, MelFilterbankConfig, SpectrogramFormat};

fn main() -> bandmix::Result<()> {
    let out_dir = std::env::args().nth(1).map(PathBuf::from);

    let signals = [
        (
            "white noise",
            synthesize(SignalKind::WhiteNoise, 0.0, 2.0, WIDE_RATE_HZ, 1)?,
        ),
        (
            "chirp 0-7 kHz",
            synthesize(SignalKind::Chirp, 7000.0, 2.0, WIDE_RATE_HZ, 0)?,
        ),
        (
            "1 kHz tone",
            synthesize(SignalKind::Sine, 1000.0, 2.0, WIDE_RATE_HZ, 0)?,
        ),
    ];

    println!(
        "{:<16} {:>14} {:>18}",
        "signal", "native >4 kHz", "via 8 kHz >4 kHz"
    );
    for (name, wide) in &signals {
        let narrow = resample(wide, NARROW_RATE_HZ)?;
        let back = resample(&narrow, WIDE_RATE_HZ)?;
        let native = band_energy_ratio(wide, 4000.0)?.high_fraction;
        let origin = band_energy_ratio(&back, 4000.0)?.high_fraction;
        println!("{name:<16} {native:>14.4} {origin:>18.2e}");

        if let Some(dir) = &out_dir {
            std::fs::create_dir_all(dir).map_err(|e| bandmix::Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            let stem = name.replace([' ', '-'], "_");
            for (tag, audio) in [("native", wide), ("narrow_origin", &back)] {
                let path = dir.join(format!("{stem}_{tag}.pgm"));
                let bytes = export_spectrogram(
                    audio,
                    &MelFilterbankConfig::default(),
                    SpectrogramFormat::Pgm,
                )?;
                std::fs::write(&path, bytes).map_err(|e| bandmix::Error::Io {
                    path: path.clone(),
                    source: e,
                })?;
                println!("  wrote {}", path.display());
            }
        }
    }
    Ok(())
}
