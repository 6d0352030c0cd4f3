//! End-to-end labeling: manifest in, codebooks, frame labels, decoder
//! targets, span masks and a channel-information report out.
//!
//! Per-utterance work fans out over a thread pool; everything written to
//! disk is produced in manifest order, so a run is byte-reproducible for a
//! given configuration and seed.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{read_wav_file, resample, ChannelTag, WIDE_RATE_HZ};
use crate::clustering::{
    assign, kmeans_fit, pool_codebooks, stack_features, Codebook, CodebookChannel, KMeansParams,
    Offset, PooledCodebook, Standardizer,
};
use crate::dsp::{logmel, FeatureMatrix, MelFilterbankConfig};
use crate::error::{Error, Result};
use crate::fmx;
use crate::labeling::{
    channel_entropy, channel_mutual_information, collapse_repeats, format_label_file,
    format_mask_line, span_mask, wrap_with_boundaries, FrameLabelSequence, MaskPlan,
    TargetSequence, Vocabulary, DEFAULT_SPAN_LENGTH, DEFAULT_START_PROB,
};
use crate::losses::{DEFAULT_ALPHA, DEFAULT_BETA};

pub const MANIFEST_HEADER: &str = "utt_id\tpath\tchannel\tnum_frames";

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub path: PathBuf,
    pub channel: ChannelTag,
    /// Filled in once features have been extracted.
    pub num_frames: Option<usize>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<UtteranceRecord>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, header)) if header.trim_end() == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(Error::MalformedFile(format!(
                "manifest header {header:?}, expected {MANIFEST_HEADER:?}"
            )))
        }
        None => return Ok(Vec::new()),
    }
    let mut seen = HashSet::new();
    lines
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 3 || cols.len() > 4 {
                return Err(Error::MalformedFile(format!(
                    "manifest line {}: expected 4 tab-separated columns",
                    i + 1
                )));
            }
            if !seen.insert(cols[0].to_string()) {
                return Err(Error::MalformedFile(format!(
                    "manifest line {}: duplicate utt_id {:?}",
                    i + 1,
                    cols[0]
                )));
            }
            let num_frames = match cols.get(3).map(|s| s.trim()) {
                None | Some("") | Some("-") => None,
                Some(n) => Some(n.parse().map_err(|_| {
                    Error::MalformedFile(format!("manifest line {}: bad num_frames {n:?}", i + 1))
                })?),
            };
            Ok(UtteranceRecord {
                utt_id: cols[0].to_string(),
                path: PathBuf::from(cols[1]),
                channel: cols[2].parse()?,
                num_frames,
            })
        })
        .collect()
}

pub fn format_manifest(records: &[UtteranceRecord]) -> String {
    let mut out = String::from(MANIFEST_HEADER);
    out.push('\n');
    for r in records {
        let frames = r.num_frames.map(|n| n.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            r.utt_id,
            r.path.display(),
            r.channel,
            frames
        ));
    }
    out
}

/// Reads a manifest; relative audio paths are resolved against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<UtteranceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = parse_manifest(&text)?;
    for r in &mut records {
        if r.path.is_relative() {
            r.path = base.join(&r.path);
        }
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One codebook over both channels.
    PooledBaseline,
    /// One codebook per channel, narrow IDs offset past the wide ones.
    ChannelAware,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled_baseline" | "pooled" => Ok(Mode::PooledBaseline),
            "channel_aware" | "channel-aware" => Ok(Mode::ChannelAware),
            other => Err(Error::InvalidConfig(format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::PooledBaseline => "pooled_baseline",
            Mode::ChannelAware => "channel_aware",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub span_length: usize,
    pub start_prob: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            span_length: DEFAULT_SPAN_LENGTH,
            start_prob: DEFAULT_START_PROB,
        }
    }
}

/// Everything that determines a labeling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub k_wide: Option<usize>,
    pub k_narrow: Option<usize>,
    pub k_pooled: Option<usize>,
    pub offset: Offset,
    pub max_iters: usize,
    pub seed: u64,
    /// Z-score features with statistics from all training frames.
    pub standardize: bool,
    /// Surround decoder targets with sos/eos.
    pub wrap_targets: bool,
    pub alpha: f64,
    pub beta: f64,
    pub features: MelFilterbankConfig,
    pub mask: MaskConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::ChannelAware,
            k_wide: Some(500),
            k_narrow: Some(500),
            k_pooled: Some(1000),
            offset: Offset::Auto,
            max_iters: 100,
            seed: 0,
            standardize: false,
            wrap_targets: false,
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            features: MelFilterbankConfig::default(),
            mask: MaskConfig::default(),
        }
    }
}

fn require_k(name: &str, k: Option<usize>) -> Result<usize> {
    match k {
        Some(k) if k > 0 => Ok(k),
        _ => Err(Error::InvalidConfig(format!(
            "{name} must be a positive integer"
        ))),
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            Mode::ChannelAware => {
                let wide = require_k("k_wide", self.k_wide)?;
                require_k("k_narrow", self.k_narrow)?;
                if let Offset::Fixed(o) = self.offset {
                    if (o as usize) < wide {
                        return Err(Error::OffsetTooSmall {
                            offset: o,
                            wide_k: wide as u32,
                        });
                    }
                }
            }
            Mode::PooledBaseline => {
                require_k("k_pooled", self.k_pooled)?;
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        for (name, w) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::InvalidConfig(format!("{name} = {w} outside [0, 1]")));
            }
        }
        if self.mask.span_length == 0 || !(self.mask.start_prob > 0.0 && self.mask.start_prob < 1.0)
        {
            return Err(Error::InvalidConfig(
                "mask needs span_length >= 1 and 0 < start_prob < 1".into(),
            ));
        }
        self.features.validate(WIDE_RATE_HZ)
    }

    /// Size of the cluster-ID vocabulary this configuration produces.
    pub fn vocab_size(&self) -> Result<usize> {
        self.validate()?;
        Ok(match self.mode {
            Mode::PooledBaseline => self.k_pooled.unwrap_or_default(),
            Mode::ChannelAware => {
                let offset = match self.offset {
                    Offset::Auto => self.k_wide.unwrap_or_default(),
                    Offset::Fixed(o) => o as usize,
                };
                offset + self.k_narrow.unwrap_or_default()
            }
        })
    }
}

/// Loads one utterance, checks its rate against the channel tag, brings
/// narrow-band audio to 16 kHz and computes log-mel features.
pub fn extract_features(
    record: &UtteranceRecord,
    cfg: &MelFilterbankConfig,
) -> Result<FeatureMatrix> {
    let audio = read_wav_file(&record.path)?;
    if audio.sample_rate_hz() != record.channel.native_rate_hz() {
        return Err(Error::ChannelMismatch {
            utt_id: record.utt_id.clone(),
            rate_hz: audio.sample_rate_hz(),
            channel: record.channel.to_string(),
        });
    }
    let audio = resample(&audio, WIDE_RATE_HZ)?;
    Ok(logmel(&audio, cfg)?.with_utt_id(record.utt_id.clone()))
}

/// Features for every record, in manifest order. The first failing record
/// (in manifest order) determines the error.
pub fn extract_all(
    records: &[UtteranceRecord],
    cfg: &MelFilterbankConfig,
) -> Result<Vec<FeatureMatrix>> {
    let results: Vec<Result<FeatureMatrix>> = records
        .par_iter()
        .map(|r| extract_features(r, cfg))
        .collect();
    results.into_iter().collect()
}

/// Per-utterance mask seed, independent of scheduling.
pub fn utterance_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How much the labels reveal about the channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelInfoReport {
    pub mutual_information_bits: f64,
    pub channel_entropy_bits: f64,
    pub wide_distinct_ids: usize,
    pub narrow_distinct_ids: usize,
    pub shared_ids: usize,
}

pub fn channel_info(labels: &[FrameLabelSequence]) -> Result<ChannelInfoReport> {
    let ids = |ch: ChannelTag| -> BTreeSet<u32> {
        labels
            .iter()
            .filter(|s| s.channel == ch)
            .flat_map(|s| s.labels.iter().copied())
            .collect()
    };
    let wide = ids(ChannelTag::Wide);
    let narrow = ids(ChannelTag::Narrow);
    Ok(ChannelInfoReport {
        mutual_information_bits: channel_mutual_information(labels)?,
        channel_entropy_bits: channel_entropy(labels),
        wide_distinct_ids: wide.len(),
        narrow_distinct_ids: narrow.len(),
        shared_ids: wide.intersection(&narrow).count(),
    })
}

/// In-memory outputs of a labeling run.
#[derive(Debug, Clone)]
pub struct LabelingOutput {
    pub records: Vec<UtteranceRecord>,
    pub codebooks: Codebooks,
    pub standardizer: Option<Standardizer>,
    pub labels: Vec<FrameLabelSequence>,
    pub targets: Vec<TargetSequence>,
    pub masks: Vec<MaskPlan>,
    pub channel_info: ChannelInfoReport,
    pub vocab_size: usize,
}

#[derive(Debug, Clone)]
pub enum Codebooks {
    Pooled(Codebook),
    ChannelAware(PooledCodebook),
}

/// Summary written to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub mode: Mode,
    pub utterances: usize,
    pub frames: usize,
    pub vocab_size: usize,
    pub offset: Option<u32>,
    pub channel_info: ChannelInfoReport,
    pub artifacts: Vec<String>,
}

/// Runs feature extraction, clustering, labeling, collapse and masking
/// without touching the output directory.
pub fn label_corpus(
    config: &PipelineConfig,
    records: &[UtteranceRecord],
) -> Result<LabelingOutput> {
    config.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyInput("manifest has no utterances".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = records.iter().find(|r| !seen.insert(r.utt_id.as_str())) {
        return Err(Error::MalformedFile(format!(
            "duplicate utt_id {:?}",
            dup.utt_id
        )));
    }

    let mut features = extract_all(records, &config.features)?;
    let standardizer = if config.standardize {
        let st = Standardizer::fit(&stack_features(&features)?)?;
        for f in &mut features {
            st.apply(&mut f.rows)?;
        }
        Some(st)
    } else {
        None
    };

    let of_channel = |ch: ChannelTag| -> Result<crate::matrix::Matrix> {
        stack_features(
            records
                .iter()
                .zip(&features)
                .filter(|(r, _)| r.channel == ch)
                .map(|(_, f)| f),
        )
    };

    let (codebooks, labels, vocab_size) = match config.mode {
        Mode::PooledBaseline => {
            let params = KMeansParams {
                k: config.k_pooled.unwrap_or_default(),
                max_iters: config.max_iters,
                seed: config.seed,
            };
            let mut cb = kmeans_fit(&stack_features(&features)?, params, CodebookChannel::Pooled)?;
            cb.quantize_to_text_precision();
            let labels = records
                .par_iter()
                .zip(&features)
                .map(|(r, f)| assign(&cb, f, r.channel))
                .collect::<Result<Vec<_>>>()?;
            let vocab = cb.k();
            (Codebooks::Pooled(cb), labels, vocab)
        }
        Mode::ChannelAware => {
            let fit = |ch: ChannelTag, k: usize| -> Result<Codebook> {
                let points = of_channel(ch)?;
                let params = KMeansParams {
                    k,
                    max_iters: config.max_iters,
                    seed: config.seed,
                };
                let mut cb = kmeans_fit(&points, params, ch.into())?;
                cb.quantize_to_text_precision();
                Ok(cb)
            };
            let wide = fit(ChannelTag::Wide, config.k_wide.unwrap_or_default())?;
            let narrow = fit(ChannelTag::Narrow, config.k_narrow.unwrap_or_default())?;
            let pooled = pool_codebooks(wide, narrow, config.offset)?;
            let labels = records
                .par_iter()
                .zip(&features)
                .map(|(r, f)| pooled.assign_channel_aware(f, r.channel))
                .collect::<Result<Vec<_>>>()?;
            let vocab = pooled.vocab_size();
            (Codebooks::ChannelAware(pooled), labels, vocab)
        }
    };

    let vocab = Vocabulary::new(vocab_size as u32);
    let targets = labels
        .iter()
        .map(|l| {
            let t = collapse_repeats(l);
            if config.wrap_targets {
                wrap_with_boundaries(&t, &vocab)
            } else {
                Ok(t)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let masks = labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            span_mask(
                l.labels.len(),
                config.mask.span_length,
                config.mask.start_prob,
                utterance_seed(config.seed, i),
            )
            .map(|m| m.with_utt_id(l.utt_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let channel_info = channel_info(&labels)?;
    let records = records
        .iter()
        .zip(&features)
        .map(|(r, f)| UtteranceRecord {
            num_frames: Some(f.num_frames()),
            ..r.clone()
        })
        .collect();

    let out = LabelingOutput {
        records,
        codebooks,
        standardizer,
        labels,
        targets,
        masks,
        channel_info,
        vocab_size,
    };
    check_channel_aware_invariants(&out)?;
    Ok(out)
}

/// ID ranges must be disjoint and the IDs must determine the channel.
fn check_channel_aware_invariants(out: &LabelingOutput) -> Result<()> {
    let Codebooks::ChannelAware(pooled) = &out.codebooks else {
        return Ok(());
    };
    for seq in &out.labels {
        if let Some(&bad) = seq
            .labels
            .iter()
            .find(|&&id| pooled.channel_of(id) != Some(seq.channel))
        {
            return Err(Error::Invariant(format!(
                "{}: id {bad} is outside the {} range",
                seq.utt_id, seq.channel
            )));
        }
    }
    let info = &out.channel_info;
    if info.shared_ids != 0
        || (info.mutual_information_bits - info.channel_entropy_bits).abs() > 1e-9
    {
        return Err(Error::Invariant(format!(
            "channel-aware labels share {} ids, I = {} bits vs H = {} bits",
            info.shared_ids, info.mutual_information_bits, info.channel_entropy_bits
        )));
    }
    Ok(())
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes every artifact of `out` under `out_dir` and returns the report.
pub fn write_artifacts(
    config: &PipelineConfig,
    out: &LabelingOutput,
    out_dir: &Path,
) -> Result<PipelineReport> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut artifacts = Vec::new();
    let mut emit = |name: &str, bytes: Vec<u8>| -> Result<()> {
        write(&out_dir.join(name), bytes)?;
        artifacts.push(name.to_string());
        Ok(())
    };

    emit("config.toml", config.to_toml().into_bytes())?;
    let offset = match &out.codebooks {
        Codebooks::Pooled(cb) => {
            emit("codebook.json", cb.to_json().into_bytes())?;
            emit("codebook.fmx", fmx::encode(&cb.centroids))?;
            None
        }
        Codebooks::ChannelAware(pooled) => {
            emit("codebook.json", pooled.to_json().into_bytes())?;
            emit("codebook_wide.json", pooled.wide().to_json().into_bytes())?;
            emit(
                "codebook_narrow.json",
                pooled.narrow().to_json().into_bytes(),
            )?;
            emit("codebook_wide.fmx", fmx::encode(&pooled.wide().centroids))?;
            emit(
                "codebook_narrow.fmx",
                fmx::encode(&pooled.narrow().centroids),
            )?;
            Some(pooled.offset())
        }
    };
    if let Some(st) = &out.standardizer {
        emit(
            "standardizer.json",
            serde_json::to_vec_pretty(st).expect("serializable"),
        )?;
    }
    emit(
        "labels.txt",
        format_label_file(
            out.labels
                .iter()
                .map(|l| (l.utt_id.as_str(), l.labels.as_slice())),
        )
        .into_bytes(),
    )?;
    emit(
        "targets.txt",
        format_label_file(
            out.targets
                .iter()
                .map(|t| (t.utt_id.as_str(), t.tokens.as_slice())),
        )
        .into_bytes(),
    )?;
    let masks: String = out
        .masks
        .iter()
        .map(|m| format_mask_line(m) + "\n")
        .collect();
    emit("masks.txt", masks.into_bytes())?;
    emit("manifest.tsv", format_manifest(&out.records).into_bytes())?;
    emit(
        "mi.json",
        serde_json::to_vec_pretty(&out.channel_info).expect("serializable"),
    )?;

    let report = PipelineReport {
        mode: config.mode,
        utterances: out.records.len(),
        frames: out.labels.iter().map(|l| l.labels.len()).sum(),
        vocab_size: out.vocab_size,
        offset,
        channel_info: out.channel_info.clone(),
        artifacts: {
            let mut a = artifacts.clone();
            a.push("report.json".into());
            a
        },
    };
    write(
        &out_dir.join("report.json"),
        serde_json::to_vec_pretty(&report).expect("serializable"),
    )?;
    Ok(report)
}

/// Full labeling run: [`label_corpus`] followed by [`write_artifacts`].
pub fn run_label_pipeline(
    config: &PipelineConfig,
    records: &[UtteranceRecord],
    out_dir: &Path,
) -> Result<PipelineReport> {
    let out = label_corpus(config, records)?;
    write_artifacts(config, &out, out_dir)
}
