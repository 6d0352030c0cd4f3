//! From frame labels to training targets: run-length collapse for the decoder
//! and span masks for the encoder.
//!
//!     cargo run --example targets_and_masks

use bandmix::audio::ChannelTag;
use bandmix::labeling::{
    collapse_repeats, format_mask_line, span_mask, wrap_with_boundaries, FrameLabelSequence,
    Vocabulary, DEFAULT_SPAN_LENGTH, DEFAULT_START_PROB,
};

fn main() -> bandmix::Result<()> {
    let frames = FrameLabelSequence {
        utt_id: "demo".into(),
        labels: vec![3, 3, 3, 7, 7, 2, 2, 2, 2, 7, 9, 9, 9, 9, 9, 3],
        channel: ChannelTag::Wide,
    };
    let target = collapse_repeats(&frames);
    println!("frame labels   {:?}", frames.labels);
    println!(
        "collapsed      {:?}  (repeats merged; later recurrences of 3 and 7 kept)",
        target.tokens
    );

    let vocab = Vocabulary::new(1000);
    let wrapped = wrap_with_boundaries(&target, &vocab)?;
    println!(
        "with sos/eos   {:?}  (pad {}, sos {}, eos {}; decoder vocabulary {})",
        wrapped.tokens,
        vocab.pad_id(),
        vocab.sos_id(),
        vocab.eos_id(),
        vocab.decoder_size()
    );

    println!("\nspan masks over 100 frames (span {DEFAULT_SPAN_LENGTH}, start probability {DEFAULT_START_PROB}):");
    let mut total = 0.0;
    for seed in 0..5 {
        let plan = span_mask(100, DEFAULT_SPAN_LENGTH, DEFAULT_START_PROB, seed)?
            .with_utt_id(format!("seed{seed}"));
        println!("  {}  starts {:?}", format_mask_line(&plan), plan.starts);
        total += plan.masked_fraction();
    }
    println!("mean masked fraction {:.3}", total / 5.0);
    Ok(())
}
