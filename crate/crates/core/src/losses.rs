//! Loss kernels over logit and log-probability matrices.
//!
//! Pretraining combines a masked-prediction loss on encoder frames with a
//! sequence loss on the decoder's collapsed targets; finetuning combines CTC
//! on the encoder with an attention (decoder cross-entropy) loss. All
//! probability arithmetic happens in the log domain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::{collapse_runs, FrameLabelSequence, MaskPlan, TargetSequence};
use crate::matrix::Matrix;

/// Pretraining weight on the masked-prediction loss.
pub const DEFAULT_ALPHA: f64 = 0.5;
/// Finetuning weight on the CTC loss.
pub const DEFAULT_BETA: f64 = 0.3;
/// CTC blank index.
pub const CTC_BLANK: u32 = 0;
/// Log-domain stand-in for ln(0).
pub const LOG_ZERO: f64 = -1e30;

/// Unnormalized scores, frames × vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix(Matrix);

impl LogitMatrix {
    pub fn new(m: Matrix) -> Result<Self> {
        if m.cols() < 2 {
            return Err(Error::InvalidConfig(format!(
                "logits need at least 2 classes, got {}",
                m.cols()
            )));
        }
        if !m.is_finite() {
            return Err(Error::InvalidConfig(
                "logits contain non-finite values".into(),
            ));
        }
        Ok(Self(m))
    }

    pub fn frames(&self) -> usize {
        self.0.rows()
    }

    pub fn vocab(&self) -> usize {
        self.0.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

#[inline]
fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if hi <= LOG_ZERO {
        return LOG_ZERO;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return LOG_ZERO;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|x| x - lse).collect()
}

pub fn log_softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let ls = log_softmax(m.row(r));
        out.row_mut(r).copy_from_slice(&ls);
    }
    out
}

/// Mean cross-entropy over the selected rows, and its gradient w.r.t. the logits.
fn cross_entropy(
    logits: &Matrix,
    targets: &[u32],
    selected: &[bool],
    smoothing: f64,
) -> Result<(f64, Matrix)> {
    let vocab = logits.cols();
    if !(0.0..1.0).contains(&smoothing) {
        return Err(Error::InvalidConfig(format!(
            "label smoothing {smoothing} outside [0, 1)"
        )));
    }
    let count = selected.iter().filter(|&&s| s).count();
    if count == 0 {
        return Err(Error::NoMaskedFrames);
    }
    let mut grad = Matrix::zeros(logits.rows(), vocab);
    let mut total = 0.0;
    let scale = 1.0 / count as f64;
    for (t, (&y, _)) in targets
        .iter()
        .zip(selected)
        .enumerate()
        .filter(|(_, (_, &s))| s)
    {
        let y = y as usize;
        if y >= vocab {
            return Err(Error::LabelOutOfRange { label: y, vocab });
        }
        let lp = log_softmax(logits.row(t));
        let uniform = smoothing / vocab as f64;
        let mut row_loss = -(1.0 - smoothing) * lp[y];
        if smoothing > 0.0 {
            row_loss -= uniform * lp.iter().sum::<f64>();
        }
        total += row_loss;
        let g = grad.row_mut(t);
        for (k, gk) in g.iter_mut().enumerate() {
            let target_mass = if k == y { 1.0 - smoothing } else { 0.0 } + uniform;
            *gk = (lp[k].exp() - target_mass) * scale;
        }
    }
    Ok((total * scale, grad))
}

/// Mean `-ln softmax(logits)[t, label_t]` over masked frames.
pub fn masked_prediction_loss(
    logits: &LogitMatrix,
    labels: &FrameLabelSequence,
    mask: &MaskPlan,
) -> Result<f64> {
    masked_prediction_loss_with_grad(logits, labels, mask).map(|(l, _)| l)
}

pub fn masked_prediction_loss_with_grad(
    logits: &LogitMatrix,
    labels: &FrameLabelSequence,
    mask: &MaskPlan,
) -> Result<(f64, Matrix)> {
    let frames = logits.frames();
    for got in [labels.labels.len(), mask.masked.len()] {
        if got != frames {
            return Err(Error::LengthMismatch {
                expected: frames,
                got,
            });
        }
    }
    cross_entropy(&logits.0, &labels.labels, &mask.masked, 0.0)
}

/// Mean teacher-forced cross-entropy over target positions; one logit row
/// per target token. Also serves as the attention loss in finetuning.
pub fn sequence_loss(decoder_logits: &LogitMatrix, target: &TargetSequence) -> Result<f64> {
    sequence_loss_with_grad(decoder_logits, target, 0.0).map(|(l, _)| l)
}

pub fn sequence_loss_smoothed(
    decoder_logits: &LogitMatrix,
    target: &TargetSequence,
    label_smoothing: f64,
) -> Result<f64> {
    sequence_loss_with_grad(decoder_logits, target, label_smoothing).map(|(l, _)| l)
}

pub fn sequence_loss_with_grad(
    decoder_logits: &LogitMatrix,
    target: &TargetSequence,
    label_smoothing: f64,
) -> Result<(f64, Matrix)> {
    if decoder_logits.frames() != target.tokens.len() {
        return Err(Error::LengthMismatch {
            expected: target.tokens.len(),
            got: decoder_logits.frames(),
        });
    }
    if target.tokens.is_empty() {
        return Err(Error::EmptyInput(
            "sequence loss over an empty target".into(),
        ));
    }
    let all = vec![true; target.tokens.len()];
    cross_entropy(&decoder_logits.0, &target.tokens, &all, label_smoothing)
}

fn check_weight(name: &str, w: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidConfig(format!("{name} = {w} outside [0, 1]")));
    }
    Ok(())
}

/// `alpha * l_m + (1 - alpha) * l_s`.
pub fn pretrain_loss(l_m: f64, l_s: f64, alpha: f64) -> Result<f64> {
    check_weight("alpha", alpha)?;
    Ok(alpha * l_m + (1.0 - alpha) * l_s)
}

/// `beta * ctc + (1 - beta) * attention`.
pub fn finetune_loss(ctc: f64, attention: f64, beta: f64) -> Result<f64> {
    check_weight("beta", beta)?;
    Ok(beta * ctc + (1.0 - beta) * attention)
}

/// Loss report. Terms of the objective that was not evaluated stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_m: Option<f64>,
    pub l_s: Option<f64>,
    pub alpha: Option<f64>,
    pub total_pretrain: Option<f64>,
    pub ctc: Option<f64>,
    pub attention: Option<f64>,
    pub beta: Option<f64>,
    pub total_finetune: Option<f64>,
}

impl LossBreakdown {
    pub fn with_pretrain(mut self, l_m: f64, l_s: f64, alpha: f64) -> Result<Self> {
        self.total_pretrain = Some(pretrain_loss(l_m, l_s, alpha)?);
        self.l_m = Some(l_m);
        self.l_s = Some(l_s);
        self.alpha = Some(alpha);
        Ok(self)
    }

    pub fn with_finetune(mut self, ctc: f64, attention: f64, beta: f64) -> Result<Self> {
        self.total_finetune = Some(finetune_loss(ctc, attention, beta)?);
        self.ctc = Some(ctc);
        self.attention = Some(attention);
        self.beta = Some(beta);
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// CTC

/// CTC negative log-likelihood and its gradient w.r.t. the log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CtcOutput {
    pub loss: f64,
    pub grad: Matrix,
}

/// Frames needed to emit `target`: one per label plus a blank between repeats.
pub fn ctc_min_frames(target: &[u32]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC loss over `T × V` per-frame log-probabilities.
///
/// Rows must be normalized (probabilities summing to 1 within 1e-6); the
/// target must not contain the blank and must fit in `T` frames.
pub fn ctc_loss(log_probs: &Matrix, target: &[u32], blank: u32) -> Result<CtcOutput> {
    let vocab = log_probs.cols();
    if log_probs.rows() == 0 {
        return Err(Error::EmptyInput("CTC over zero frames".into()));
    }
    if (blank as usize) >= vocab {
        return Err(Error::LabelOutOfRange {
            label: blank as usize,
            vocab,
        });
    }
    for &y in target {
        if y == blank {
            return Err(Error::InvalidTarget(format!(
                "target contains the blank {blank}"
            )));
        }
        if y as usize >= vocab {
            return Err(Error::LabelOutOfRange {
                label: y as usize,
                vocab,
            });
        }
    }
    let required = ctc_min_frames(target);
    if log_probs.rows() < required {
        return Err(Error::TargetTooLong {
            target_len: target.len(),
            required,
            frames: log_probs.rows(),
        });
    }
    for (t, row) in log_probs.iter_rows().enumerate() {
        let mass: f64 = row.iter().map(|v| v.exp()).sum();
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN mass must be rejected too
        if !((mass - 1.0).abs() <= 1e-6) {
            return Err(Error::InvalidConfig(format!(
                "row {t} of the CTC input sums to {mass}, not 1"
            )));
        }
    }
    Ok(ctc_forward_backward(log_probs, target, blank))
}

/// Forward-backward over the blank-interleaved target. No input validation.
pub(crate) fn ctc_forward_backward(log_probs: &Matrix, target: &[u32], blank: u32) -> CtcOutput {
    let frames = log_probs.rows();
    let vocab = log_probs.cols();
    let states = 2 * target.len() + 1;
    let ext: Vec<usize> = (0..states)
        .map(|s| {
            if s % 2 == 0 {
                blank as usize
            } else {
                target[s / 2] as usize
            }
        })
        .collect();
    let lp = |t: usize, s: usize| log_probs.get(t, ext[s]).max(LOG_ZERO);
    // skipping s-2 is allowed onto a label that differs from the label two back
    let can_skip = |s: usize| s >= 2 && ext[s] != blank as usize && ext[s] != ext[s - 2];

    let mut alpha = Matrix::from_vec(frames, states, vec![LOG_ZERO; frames * states]).unwrap();
    alpha.set(0, 0, lp(0, 0));
    if states > 1 {
        alpha.set(0, 1, lp(0, 1));
    }
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha.get(t - 1, s);
            if s >= 1 {
                acc = log_add(acc, alpha.get(t - 1, s - 1));
            }
            if can_skip(s) {
                acc = log_add(acc, alpha.get(t - 1, s - 2));
            }
            alpha.set(t, s, (acc + lp(t, s)).max(LOG_ZERO));
        }
    }

    let mut beta = Matrix::from_vec(frames, states, vec![LOG_ZERO; frames * states]).unwrap();
    let last = frames - 1;
    beta.set(last, states - 1, lp(last, states - 1));
    if states > 1 {
        beta.set(last, states - 2, lp(last, states - 2));
    }
    for t in (0..last).rev() {
        for s in 0..states {
            let mut acc = beta.get(t + 1, s);
            if s + 1 < states {
                acc = log_add(acc, beta.get(t + 1, s + 1));
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = log_add(acc, beta.get(t + 1, s + 2));
            }
            beta.set(t, s, (acc + lp(t, s)).max(LOG_ZERO));
        }
    }

    let mut log_likelihood = alpha.get(last, states - 1);
    if states > 1 {
        log_likelihood = log_add(log_likelihood, alpha.get(last, states - 2));
    }

    // d(-ln p)/d lp[t,k] = -sum_{s: ext[s]=k} alpha_t(s) beta_t(s) / (y_t(k) p)
    let mut grad = Matrix::zeros(frames, vocab);
    let mut occupancy = vec![LOG_ZERO; vocab];
    for t in 0..frames {
        occupancy.iter_mut().for_each(|o| *o = LOG_ZERO);
        for (s, &k) in ext.iter().enumerate() {
            occupancy[k] = log_add(occupancy[k], alpha.get(t, s) + beta.get(t, s));
        }
        for (k, &occ) in occupancy.iter().enumerate() {
            if occ > LOG_ZERO {
                let lp_tk = log_probs.get(t, k).max(LOG_ZERO);
                grad.set(t, k, -(occ - lp_tk - log_likelihood).exp());
            }
        }
    }
    CtcOutput {
        loss: -log_likelihood,
        grad,
    }
}

/// Per-frame argmax (lowest index on ties), collapse repeats, drop blanks.
pub fn ctc_greedy_decode(log_probs: &Matrix, blank: u32) -> Vec<u32> {
    let best: Vec<u32> = log_probs
        .iter_rows()
        .map(|row| {
            let mut arg = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = k;
                }
            }
            arg as u32
        })
        .collect();
    collapse_runs(&best)
        .into_iter()
        .filter(|&k| k != blank)
        .collect()
}

// ---------------------------------------------------------------------------
// Gradient checking

/// A loss evaluation whose analytic gradient can be checked numerically.
#[derive(Debug, Clone)]
pub enum GradCheck {
    /// Gradient taken w.r.t. unnormalized scores feeding a log-softmax, so
    /// every perturbed input is re-normalized before the CTC loss.
    Ctc {
        log_probs: Matrix,
        target: Vec<u32>,
        blank: u32,
    },
    MaskedPrediction {
        logits: LogitMatrix,
        labels: FrameLabelSequence,
        mask: MaskPlan,
    },
    Sequence {
        logits: LogitMatrix,
        target: TargetSequence,
    },
}

impl GradCheck {
    fn input(&self) -> &Matrix {
        match self {
            GradCheck::Ctc { log_probs, .. } => log_probs,
            GradCheck::MaskedPrediction { logits, .. } | GradCheck::Sequence { logits, .. } => {
                &logits.0
            }
        }
    }

    fn evaluate(&self, input: &Matrix) -> Result<(f64, Matrix)> {
        match self {
            GradCheck::Ctc { target, blank, .. } => {
                let normalized = log_softmax_rows(input);
                let out = ctc_loss(&normalized, target, *blank)?;
                // chain rule through log-softmax
                let mut grad = out.grad;
                for t in 0..grad.rows() {
                    let total: f64 = grad.row(t).iter().sum();
                    for k in 0..grad.cols() {
                        let p = normalized.get(t, k).exp();
                        grad.set(t, k, grad.get(t, k) - p * total);
                    }
                }
                Ok((out.loss, grad))
            }
            GradCheck::MaskedPrediction { labels, mask, .. } => {
                masked_prediction_loss_with_grad(&LogitMatrix(input.clone()), labels, mask)
            }
            GradCheck::Sequence { target, .. } => {
                sequence_loss_with_grad(&LogitMatrix(input.clone()), target, 0.0)
            }
        }
    }
}

/// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)` over all
/// inputs, with central differences of step `epsilon`.
pub fn finite_diff_check(case: &GradCheck, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let base = case.input().clone();
    let (_, analytic) = case.evaluate(&base)?;
    let mut worst: f64 = 0.0;
    let mut probe = base.clone();
    for i in 0..base.as_slice().len() {
        let x = base.as_slice()[i];
        probe.as_mut_slice()[i] = x + epsilon;
        let (up, _) = case.evaluate(&probe)?;
        probe.as_mut_slice()[i] = x - epsilon;
        let (down, _) = case.evaluate(&probe)?;
        probe.as_mut_slice()[i] = x;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic.as_slice()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}
