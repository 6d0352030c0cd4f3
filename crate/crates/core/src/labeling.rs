//! From frame labels to training targets: run-length collapse, boundary
//! tokens, span masks, and a mutual-information diagnostic measuring how
//! much the cluster IDs reveal about the recording channel.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::ChannelTag;
use crate::error::{Error, Result};

/// One cluster ID per frame of an utterance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameLabelSequence {
    pub utt_id: String,
    pub labels: Vec<u32>,
    pub channel: ChannelTag,
}

/// Decoder target: collapsed labels, optionally wrapped in sos/eos.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetSequence {
    pub utt_id: String,
    pub tokens: Vec<u32>,
    pub has_boundaries: bool,
}

/// Cluster vocabulary plus the decoder's special tokens, which sit right
/// after the cluster IDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub base_size: u32,
}

impl Vocabulary {
    pub fn new(base_size: u32) -> Self {
        Self { base_size }
    }

    pub fn pad_id(&self) -> u32 {
        self.base_size
    }

    pub fn sos_id(&self) -> u32 {
        self.base_size + 1
    }

    pub fn eos_id(&self) -> u32 {
        self.base_size + 2
    }

    /// Decoder output size including the special tokens.
    pub fn decoder_size(&self) -> u32 {
        self.base_size + 3
    }
}

/// Merges each run of equal neighbours into one element.
pub fn collapse_runs<T: PartialEq + Clone>(xs: &[T]) -> Vec<T> {
    let mut out = xs.to_vec();
    out.dedup();
    out
}

pub fn collapse_repeats(labels: &FrameLabelSequence) -> TargetSequence {
    TargetSequence {
        utt_id: labels.utt_id.clone(),
        tokens: collapse_runs(&labels.labels),
        has_boundaries: false,
    }
}

pub fn wrap_with_boundaries(target: &TargetSequence, vocab: &Vocabulary) -> Result<TargetSequence> {
    if target.has_boundaries {
        return Err(Error::AlreadyWrapped);
    }
    let mut tokens = Vec::with_capacity(target.tokens.len() + 2);
    tokens.push(vocab.sos_id());
    tokens.extend_from_slice(&target.tokens);
    tokens.push(vocab.eos_id());
    Ok(TargetSequence {
        utt_id: target.utt_id.clone(),
        tokens,
        has_boundaries: true,
    })
}

pub const DEFAULT_SPAN_LENGTH: usize = 10;
pub const DEFAULT_START_PROB: f64 = 0.065;

/// Frames selected for the masked-prediction loss.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub utt_id: String,
    pub masked: Vec<bool>,
    pub starts: Vec<usize>,
    pub span_length: usize,
    pub start_prob: f64,
    pub seed: u64,
}

impl MaskPlan {
    /// Builds a mask from explicit span starts; spans are cut at the end.
    pub fn from_starts(num_frames: usize, span_length: usize, starts: Vec<usize>) -> Result<Self> {
        if span_length == 0 {
            return Err(Error::InvalidConfig(
                "span length must be at least 1".into(),
            ));
        }
        let mut masked = vec![false; num_frames];
        for &s in &starts {
            if s >= num_frames {
                return Err(Error::InvalidConfig(format!(
                    "span start {s} beyond {num_frames} frames"
                )));
            }
            let end = (s + span_length).min(num_frames);
            masked[s..end].iter_mut().for_each(|m| *m = true);
        }
        Ok(Self {
            utt_id: String::new(),
            masked,
            starts,
            span_length,
            start_prob: 0.0,
            seed: 0,
        })
    }

    pub fn num_masked(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn masked_fraction(&self) -> f64 {
        if self.masked.is_empty() {
            0.0
        } else {
            self.num_masked() as f64 / self.masked.len() as f64
        }
    }

    pub fn bitstring(&self) -> String {
        self.masked
            .iter()
            .map(|&m| if m { '1' } else { '0' })
            .collect()
    }

    pub fn with_utt_id(mut self, utt_id: impl Into<String>) -> Self {
        self.utt_id = utt_id.into();
        self
    }
}

/// Draws span starts independently per frame with probability `start_prob`
/// and masks `span_length` frames from each (spans may overlap).
pub fn span_mask(
    num_frames: usize,
    span_length: usize,
    start_prob: f64,
    seed: u64,
) -> Result<MaskPlan> {
    if num_frames == 0 || span_length == 0 || !(start_prob > 0.0 && start_prob < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "span mask needs num_frames >= 1, span_length >= 1, 0 < start_prob < 1 \
             (got {num_frames}, {span_length}, {start_prob})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts: Vec<usize> = (0..num_frames)
        .filter(|_| rng.random::<f64>() < start_prob)
        .collect();
    let mut plan = MaskPlan::from_starts(num_frames, span_length, starts)?;
    plan.start_prob = start_prob;
    plan.seed = seed;
    Ok(plan)
}

/// Entropy of the channel distribution in bits.
pub fn channel_entropy(labels: &[FrameLabelSequence]) -> f64 {
    let mut counts: BTreeMap<ChannelTag, u64> = BTreeMap::new();
    for seq in labels {
        *counts.entry(seq.channel).or_default() += seq.labels.len() as u64;
    }
    let total: u64 = counts.values().sum();
    if total == 0 {
        return 0.0;
    }
    counts
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .sum()
}

/// Plug-in estimate of I(cluster ID; channel) in bits from frame counts.
pub fn channel_mutual_information(labels: &[FrameLabelSequence]) -> Result<f64> {
    let mut joint: BTreeMap<(u32, ChannelTag), u64> = BTreeMap::new();
    let mut per_id: BTreeMap<u32, u64> = BTreeMap::new();
    let mut per_channel: BTreeMap<ChannelTag, u64> = BTreeMap::new();
    for seq in labels {
        for &id in &seq.labels {
            *joint.entry((id, seq.channel)).or_default() += 1;
            *per_id.entry(id).or_default() += 1;
            *per_channel.entry(seq.channel).or_default() += 1;
        }
    }
    let total: u64 = per_channel.values().sum();
    if total == 0 {
        return Err(Error::EmptyInput("no labelled frames".into()));
    }
    let n = total as f64;
    let mi = joint
        .iter()
        .map(|(&(id, ch), &c)| {
            let p_joint = c as f64 / n;
            let p_id = per_id[&id] as f64 / n;
            let p_ch = per_channel[&ch] as f64 / n;
            p_joint * (p_joint / (p_id * p_ch)).log2()
        })
        .sum::<f64>();
    Ok(mi.max(0.0))
}

// ---------------------------------------------------------------------------
// Text formats

/// `utt_id<TAB>id id id ...` per line.
pub fn format_label_line(utt_id: &str, ids: &[u32]) -> String {
    let mut line = String::with_capacity(utt_id.len() + 1 + ids.len() * 4);
    line.push_str(utt_id);
    line.push('\t');
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        let _ = write!(line, "{id}");
    }
    line
}

pub fn format_label_file<'a>(rows: impl IntoIterator<Item = (&'a str, &'a [u32])>) -> String {
    rows.into_iter()
        .map(|(u, ids)| format_label_line(u, ids) + "\n")
        .collect()
}

pub fn parse_label_file(text: &str) -> Result<Vec<(String, Vec<u32>)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (utt, ids) = line.split_once('\t').ok_or_else(|| {
                Error::MalformedFile(format!("label line {}: missing tab", i + 1))
            })?;
            let ids = ids
                .split_whitespace()
                .map(|t| {
                    t.parse::<u32>().map_err(|_| {
                        Error::MalformedFile(format!("label line {}: bad id {t:?}", i + 1))
                    })
                })
                .collect::<Result<Vec<u32>>>()?;
            Ok((utt.to_string(), ids))
        })
        .collect()
}

/// `utt_id<TAB>0110...` per line.
pub fn format_mask_line(plan: &MaskPlan) -> String {
    format!("{}\t{}", plan.utt_id, plan.bitstring())
}

pub fn parse_mask_file(text: &str) -> Result<Vec<(String, Vec<bool>)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let (utt, bits) = line
                .split_once('\t')
                .ok_or_else(|| Error::MalformedFile(format!("mask line {}: missing tab", i + 1)))?;
            let bits = bits
                .trim()
                .chars()
                .map(|c| match c {
                    '0' => Ok(false),
                    '1' => Ok(true),
                    other => Err(Error::MalformedFile(format!(
                        "mask line {}: unexpected {other:?}",
                        i + 1
                    ))),
                })
                .collect::<Result<Vec<bool>>>()?;
            Ok((utt.to_string(), bits))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn seq(labels: Vec<u32>, channel: ChannelTag) -> FrameLabelSequence {
        FrameLabelSequence {
            utt_id: "u".into(),
            labels,
            channel,
        }
    }

    #[test]
    fn collapse_examples() {
        let t = collapse_repeats(&seq(vec![7, 7, 3, 3, 3, 7], ChannelTag::Wide));
        assert_eq!(t.tokens, vec![7, 3, 7]);
        assert!(!t.has_boundaries);
        assert!(collapse_repeats(&seq(vec![], ChannelTag::Wide))
            .tokens
            .is_empty());
    }

    proptest! {
        #[test]
        fn collapse_properties(xs in proptest::collection::vec(0u32..10, 0..200)) {
            let once = collapse_runs(&xs);
            prop_assert_eq!(collapse_runs(&once), once.clone());
            prop_assert!(once.len() <= xs.len());
            prop_assert!(once.windows(2).all(|w| w[0] != w[1]));
        }

        #[test]
        fn wrapping_adds_two(xs in proptest::collection::vec(0u32..1000, 0..50)) {
            let t = TargetSequence { utt_id: "u".into(), tokens: xs.clone(), has_boundaries: false };
            let w = wrap_with_boundaries(&t, &Vocabulary::new(1000)).unwrap();
            prop_assert_eq!(w.tokens.len(), xs.len() + 2);
            prop_assert_eq!(&w.tokens[1..xs.len() + 1], &xs[..]);
        }

        #[test]
        fn masked_frames_lie_in_spans(t in 1usize..300, span in 1usize..20, p in 0.01f64..0.5, seed in any::<u64>()) {
            let plan = span_mask(t, span, p, seed).unwrap();
            prop_assert_eq!(plan.masked.len(), t);
            for (i, &m) in plan.masked.iter().enumerate() {
                let covered = plan.starts.iter().any(|&s| s <= i && i < s + span);
                prop_assert_eq!(m, covered);
            }
        }
    }

    #[test]
    fn wrap_examples() {
        let vocab = Vocabulary::new(1000);
        let t = TargetSequence {
            utt_id: "u".into(),
            tokens: vec![7, 3],
            has_boundaries: false,
        };
        let w = wrap_with_boundaries(&t, &vocab).unwrap();
        assert_eq!(w.tokens, vec![1001, 7, 3, 1002]);
        let empty = TargetSequence {
            utt_id: "u".into(),
            tokens: vec![],
            has_boundaries: false,
        };
        assert_eq!(
            wrap_with_boundaries(&empty, &vocab).unwrap().tokens,
            vec![1001, 1002]
        );
        assert!(matches!(
            wrap_with_boundaries(&w, &vocab),
            Err(Error::AlreadyWrapped)
        ));
        assert_eq!(vocab.pad_id(), 1000);
    }

    #[test]
    fn span_mask_edge_cases() {
        let none = span_mask(50, 10, 1e-12, 0).unwrap();
        assert!(none.masked.iter().all(|&m| !m));

        let cut = MaskPlan::from_starts(5, 10, vec![3]).unwrap();
        assert_eq!(cut.masked, vec![false, false, false, true, true]);

        assert!(span_mask(0, 10, 0.1, 0).is_err());
        assert!(span_mask(10, 0, 0.1, 0).is_err());
        assert!(span_mask(10, 5, 1.0, 0).is_err());
        assert_eq!(
            span_mask(100, 10, 0.1, 4).unwrap(),
            span_mask(100, 10, 0.1, 4).unwrap()
        );
    }

    #[test]
    fn span_mask_coverage() {
        // coverage 1 - (1 - p)^span = 0.489 for p = 0.065, span = 10
        for seed in 0..100 {
            let f = span_mask(10_000, 10, 0.065, seed)
                .unwrap()
                .masked_fraction();
            assert!((0.33..=0.60).contains(&f), "seed {seed}: {f}");
        }
    }

    #[test]
    fn mutual_information_bounds() {
        let aware = vec![
            seq(vec![0, 1, 2, 1], ChannelTag::Wide),
            seq(vec![5, 5, 6, 7], ChannelTag::Narrow),
        ];
        assert!((channel_mutual_information(&aware).unwrap() - 1.0).abs() < 1e-9);
        assert!((channel_entropy(&aware) - 1.0).abs() < 1e-12);

        let shared = vec![
            seq(vec![0, 1, 2, 2], ChannelTag::Wide),
            seq(vec![2, 1, 2, 0], ChannelTag::Narrow),
        ];
        assert!(channel_mutual_information(&shared).unwrap().abs() < 1e-9);

        assert!(matches!(
            channel_mutual_information(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn label_and_mask_files() {
        let text = format_label_file([("a", &[1u32, 2, 3][..]), ("b", &[][..])]);
        assert_eq!(text, "a\t1 2 3\nb\t\n");
        let parsed = parse_label_file(&text).unwrap();
        assert_eq!(parsed[0], ("a".to_string(), vec![1, 2, 3]));
        assert_eq!(parsed[1], ("b".to_string(), vec![]));
        assert!(parse_label_file("a 1 2").is_err());
        assert!(parse_label_file("a\t1 x").is_err());

        let plan = MaskPlan::from_starts(4, 2, vec![1])
            .unwrap()
            .with_utt_id("z");
        let line = format_mask_line(&plan);
        assert_eq!(line, "z\t0110");
        assert_eq!(parse_mask_file(&line).unwrap()[0].1, plan.masked);
        assert!(parse_mask_file("z\t012").is_err());
    }
}
