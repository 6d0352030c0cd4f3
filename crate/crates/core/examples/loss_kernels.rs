//! The pretraining and finetuning objectives and the CTC kernel.
//!
//!     cargo run --example loss_kernels

use bandmix::audio::ChannelTag;
use bandmix::labeling::{FrameLabelSequence, MaskPlan, TargetSequence};
use bandmix::losses::{
    ctc_greedy_decode, ctc_loss, finite_diff_check, log_softmax_rows, masked_prediction_loss,
    sequence_loss, GradCheck, LogitMatrix, LossBreakdown, CTC_BLANK, DEFAULT_ALPHA, DEFAULT_BETA,
};
use bandmix::matrix::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect(),
    )
    .unwrap()
}

fn main() -> bandmix::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // Pretraining: encoder predicts cluster IDs at masked frames, decoder
    // predicts the collapsed ID sequence.
    let frames = 30;
    let clusters = 16;
    let labels = FrameLabelSequence {
        utt_id: "u".into(),
        labels: (0..frames)
            .map(|t| (t / 4) as u32 % clusters as u32)
            .collect(),
        channel: ChannelTag::Wide,
    };
    let mask = MaskPlan::from_starts(frames, 5, vec![2, 17])?;
    let enc = LogitMatrix::new(random(&mut rng, frames, clusters))?;
    let target = TargetSequence {
        utt_id: "u".into(),
        tokens: vec![0, 1, 2, 3, 4, 5, 6, 7],
        has_boundaries: false,
    };
    let dec = LogitMatrix::new(random(&mut rng, target.tokens.len(), clusters))?;
    let l_m = masked_prediction_loss(&enc, &labels, &mask)?;
    let l_s = sequence_loss(&dec, &target)?;
    let pre = LossBreakdown::default().with_pretrain(l_m, l_s, DEFAULT_ALPHA)?;
    println!("pretrain: {}", serde_json::to_string(&pre).unwrap());

    // Finetuning: CTC over characters plus attention cross-entropy.
    let chars = vec![3, 1, 1, 4];
    let scores = random(&mut rng, 12, 6);
    let log_probs = log_softmax_rows(&scores);
    let ctc = ctc_loss(&log_probs, &chars, CTC_BLANK)?;
    let att_target = TargetSequence {
        utt_id: "u".into(),
        tokens: chars.clone(),
        has_boundaries: false,
    };
    let att = sequence_loss(
        &LogitMatrix::new(random(&mut rng, chars.len(), 6))?,
        &att_target,
    )?;
    let fine = LossBreakdown::default().with_finetune(ctc.loss, att, DEFAULT_BETA)?;
    println!("finetune: {}", serde_json::to_string(&fine).unwrap());
    println!(
        "greedy CTC decode of the random scores: {:?}",
        ctc_greedy_decode(&log_probs, CTC_BLANK)
    );

    // Analytic gradients agree with central differences.
    let checks = [
        (
            "ctc",
            GradCheck::Ctc {
                log_probs: scores,
                target: chars,
                blank: CTC_BLANK,
            },
        ),
        (
            "masked prediction",
            GradCheck::MaskedPrediction {
                logits: enc,
                labels,
                mask,
            },
        ),
        (
            "sequence",
            GradCheck::Sequence {
                logits: dec,
                target,
            },
        ),
    ];
    for (name, check) in &checks {
        println!(
            "gradient check {name:<18} max relative error {:.2e}",
            finite_diff_check(check, 1e-6)?
        );
    }
    Ok(())
}
