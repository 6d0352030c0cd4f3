//! Pooled k-means versus per-channel codebooks with a narrow-band ID offset.
//!
//!     cargo run --example channel_aware_codebooks
//!
//! A single codebook over both channels mixes them: many cluster IDs are used
//! by wide- and narrow-band frames alike. Fitting one codebook per channel and
//! shifting narrow-band IDs by the wide codebook size makes every ID identify
//! its channel, i.e. I(ID; channel) = H(channel).

use bandmix::audio::ChannelTag;
use bandmix::clustering::{
    assign, kmeans_fit, pool_codebooks, stack_features, CodebookChannel, KMeansParams, Offset,
};
use bandmix::corpus::{narrowband_utterance, wideband_utterance};
use bandmix::dsp::{logmel, FeatureMatrix, MelFilterbankConfig};
use bandmix::labeling::FrameLabelSequence;
use bandmix::pipeline::channel_info;

const K: usize = 8;

fn features(channel: ChannelTag, n: usize) -> bandmix::Result<Vec<FeatureMatrix>> {
    let cfg = MelFilterbankConfig::default();
    (0..n as u64)
        .map(|i| {
            let audio = match channel {
                ChannelTag::Wide => wideband_utterance(1.0, 100 + i),
                ChannelTag::Narrow => {
                    bandmix::audio::resample(&narrowband_utterance(1.0, 200 + i), 16_000)?
                }
            };
            Ok(logmel(&audio, &cfg)?.with_utt_id(format!("{}{i}", channel.as_str())))
        })
        .collect()
}

fn report(name: &str, labels: &[FrameLabelSequence]) -> bandmix::Result<()> {
    let info = channel_info(labels)?;
    println!(
        "{name:<14} I(ID;channel) = {:.4} of H = {:.4} bits; ids used wide {} / narrow {}, shared {}",
        info.mutual_information_bits,
        info.channel_entropy_bits,
        info.wide_distinct_ids,
        info.narrow_distinct_ids,
        info.shared_ids
    );
    Ok(())
}

fn main() -> bandmix::Result<()> {
    let wide = features(ChannelTag::Wide, 10)?;
    let narrow = features(ChannelTag::Narrow, 10)?;
    let tagged = || {
        wide.iter()
            .map(|f| (f, ChannelTag::Wide))
            .chain(narrow.iter().map(|f| (f, ChannelTag::Narrow)))
    };

    // Baseline: one codebook with 2K clusters over everything.
    let all = stack_features(wide.iter().chain(&narrow))?;
    let pooled = kmeans_fit(
        &all,
        KMeansParams {
            k: 2 * K,
            max_iters: 100,
            seed: 0,
        },
        CodebookChannel::Pooled,
    )?;
    let baseline: Vec<_> = tagged()
        .map(|(f, ch)| assign(&pooled, f, ch))
        .collect::<bandmix::Result<_>>()?;

    // Proposed: K clusters per channel, narrow IDs offset by K.
    let cb_wide = kmeans_fit(
        &stack_features(&wide)?,
        KMeansParams {
            k: K,
            max_iters: 100,
            seed: 0,
        },
        CodebookChannel::Wide,
    )?;
    let cb_narrow = kmeans_fit(
        &stack_features(&narrow)?,
        KMeansParams {
            k: K,
            max_iters: 100,
            seed: 0,
        },
        CodebookChannel::Narrow,
    )?;
    let aware = pool_codebooks(cb_wide, cb_narrow, Offset::Auto)?;
    println!(
        "pooled vocabulary {} (wide ids {:?}, narrow ids {:?}) vs baseline {}",
        aware.vocab_size(),
        aware.wide_range(),
        aware.narrow_range(),
        pooled.k()
    );
    let proposed: Vec<_> = tagged()
        .map(|(f, ch)| aware.assign_channel_aware(f, ch))
        .collect::<bandmix::Result<_>>()?;

    report("pooled k-means", &baseline)?;
    report("channel-aware", &proposed)?;
    println!(
        "\nfirst 20 frame labels of {}: {:?}",
        proposed[0].utt_id,
        &proposed[0].labels[..20]
    );
    println!(
        "first 20 frame labels of {}: {:?}",
        proposed[10].utt_id,
        &proposed[10].labels[..20]
    );
    Ok(())
}
