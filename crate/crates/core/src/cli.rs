//! Command-line front end. The `bandmix` binary only parses arguments and
//! calls [`run`]; reports go to stdout as one JSON object per line.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::audio::{
    read_wav_file, resample, synthesize, write_wav_file, ChannelTag, SignalKind, WIDE_RATE_HZ,
};
use crate::clustering::{
    assign_rows, kmeans_fit, pool_codebooks, Codebook, CodebookChannel, KMeansParams, Offset,
    PooledCodebook,
};
use crate::corpus::{write_corpus, CorpusSpec};
use crate::dsp::{
    band_energy_ratio, export_spectrogram, logmel, BandEnergyReport, MelFilterbankConfig,
    SpectrogramFormat,
};
use crate::error::{Error, Result};
use crate::fmx;
use crate::labeling::{
    collapse_runs, format_label_file, format_mask_line, parse_label_file, parse_mask_file,
    span_mask, FrameLabelSequence, MaskPlan, TargetSequence, Vocabulary,
};
use crate::losses::{
    ctc_loss, log_softmax_rows, masked_prediction_loss, sequence_loss, LogitMatrix, LossBreakdown,
    CTC_BLANK, DEFAULT_ALPHA, DEFAULT_BETA,
};
use crate::pipeline::{
    channel_info, extract_all, read_manifest, run_label_pipeline, utterance_seed, Mode,
    PipelineConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "bandmix",
    version,
    about = "Channel-aware pseudo-labels for mixed-bandwidth speech"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate test signals or a two-channel corpus.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Convert a WAV between 16 kHz and 8 kHz.
    Resample {
        input: PathBuf,
        #[arg(long)]
        rate: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-mel features of one WAV (8 kHz input is upsampled to 16 kHz).
    Features {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = MatrixFormat::Fmx)]
        format: MatrixFormat,
    },
    /// Band-energy report and optional spectrogram of one WAV.
    Spectrum(SpectrumArgs),
    /// Fit a k-means codebook to FMX1 feature files.
    Kmeans {
        #[arg(long = "features", required = true, num_args = 1..)]
        features: Vec<PathBuf>,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "pooled")]
        channel: CodebookChannel,
        #[arg(long)]
        out: PathBuf,
        /// Also write the centroids as an FMX1 matrix.
        #[arg(long)]
        binary: Option<PathBuf>,
    },
    /// Combine wide and narrow codebooks with a narrow-band ID offset.
    PoolCodebooks {
        #[arg(long)]
        wide: PathBuf,
        #[arg(long)]
        narrow: PathBuf,
        #[arg(long, default_value = "auto")]
        offset: Offset,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every utterance of a manifest with a (pooled or per-channel) codebook.
    Label {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run-length collapse a label file into decoder targets.
    Collapse {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Wrap targets in sos/eos placed after a cluster vocabulary of this size.
        #[arg(long)]
        wrap_base_size: Option<u32>,
    },
    /// Span masks for every utterance of a label file.
    Mask {
        /// Label file whose sequence lengths give the frame counts.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = crate::labeling::DEFAULT_SPAN_LENGTH)]
        span: usize,
        #[arg(long, default_value_t = crate::labeling::DEFAULT_START_PROB)]
        prob: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the pretraining or finetuning loss from matrix and target files.
    #[command(subcommand)]
    Loss(LossCommand),
    /// Mutual information between cluster IDs and channel.
    DiagMi {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Full labeling pipeline over a manifest.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MatrixFormat {
    Fmx,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// A single sine, chirp or white-noise signal.
    Signal {
        #[arg(long, default_value = "sine")]
        kind: SignalKind,
        #[arg(long, default_value_t = 1000.0)]
        freq: f64,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value_t = WIDE_RATE_HZ)]
        rate: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// WAVs plus manifest.tsv for a synthetic wide/narrow corpus.
    Corpus {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 25)]
        wide: usize,
        #[arg(long, default_value_t = 25)]
        narrow: usize,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    pub input: PathBuf,
    #[arg(long, default_value_t = 4000.0)]
    pub cutoff: f64,
    /// Resample before analysis (e.g. 16000 to view 8 kHz audio on the wide-band grid).
    #[arg(long)]
    pub resample_to: Option<u32>,
    #[arg(long)]
    pub spectrogram: Option<PathBuf>,
    #[arg(long, default_value = "pgm")]
    pub format: SpectrogramFormat,
}

#[derive(Debug, Subcommand)]
pub enum LossCommand {
    /// alpha * masked prediction + (1 - alpha) * sequence loss.
    Pretrain {
        /// Encoder logits, frames × cluster vocabulary (FMX1).
        #[arg(long)]
        logits: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Decoder logits, target positions × decoder vocabulary (FMX1).
        #[arg(long)]
        decoder_logits: PathBuf,
        #[arg(long)]
        targets: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Utterance to evaluate; defaults to the first line of each file.
        #[arg(long)]
        utt: Option<String>,
    },
    /// beta * CTC + (1 - beta) * attention loss.
    Finetune {
        /// Encoder log-probabilities, frames × alphabet (FMX1).
        #[arg(long)]
        log_probs: PathBuf,
        /// Treat --log-probs as unnormalized logits and log-softmax each row.
        #[arg(long)]
        from_logits: bool,
        #[arg(long)]
        ctc_targets: PathBuf,
        #[arg(long)]
        decoder_logits: PathBuf,
        #[arg(long)]
        attention_targets: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BETA)]
        beta: f64,
        #[arg(long, default_value_t = CTC_BLANK)]
        blank: u32,
        #[arg(long)]
        utt: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// TOML configuration; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub k_wide: Option<usize>,
    #[arg(long)]
    pub k_narrow: Option<usize>,
    #[arg(long)]
    pub k_pooled: Option<usize>,
    #[arg(long)]
    pub offset: Option<Offset>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub wrap_targets: bool,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
}

impl PipelineArgs {
    /// Config file (or defaults) with every given flag applied on top.
    pub fn effective_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if self.k_wide.is_some() {
            cfg.k_wide = self.k_wide;
        }
        if self.k_narrow.is_some() {
            cfg.k_narrow = self.k_narrow;
        }
        if self.k_pooled.is_some() {
            cfg.k_pooled = self.k_pooled;
        }
        if let Some(o) = self.offset {
            cfg.offset = o;
        }
        if let Some(n) = self.max_iters {
            cfg.max_iters = n;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.standardize |= self.standardize;
        cfg.wrap_targets |= self.wrap_targets;
        if let Some(a) = self.alpha {
            cfg.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.beta = b;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let line = serde_json::to_string(value).expect("report serializes");
    writeln!(out, "{line}").map_err(|e| Error::io("<stdout>", e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Picks one utterance's row from a parsed line-per-utterance file.
fn pick<T: Clone>(rows: &[(String, T)], utt: Option<&str>, path: &Path) -> Result<(String, T)> {
    match utt {
        Some(u) => {
            rows.iter().find(|(id, _)| id == u).cloned().ok_or_else(|| {
                Error::MalformedFile(format!("{}: no utterance {u:?}", path.display()))
            })
        }
        None => rows
            .first()
            .cloned()
            .ok_or_else(|| Error::MalformedFile(format!("{}: no utterances", path.display()))),
    }
}

/// Band-energy report of a WAV, optionally writing its spectrogram.
pub fn cmd_spectrum(args: &SpectrumArgs) -> Result<SpectrumReport> {
    let mut audio = read_wav_file(&args.input)?;
    if let Some(rate) = args.resample_to {
        audio = resample(&audio, rate)?;
    }
    let report = band_energy_ratio(&audio, args.cutoff)?;
    if let Some(path) = &args.spectrogram {
        let bytes = export_spectrogram(&audio, &MelFilterbankConfig::default(), args.format)?;
        write_file(path, bytes)?;
    }
    Ok(SpectrumReport {
        input: args.input.display().to_string(),
        sample_rate_hz: audio.sample_rate_hz(),
        band: report,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub input: String,
    pub sample_rate_hz: u32,
    #[serde(flatten)]
    pub band: BandEnergyReport,
}

/// Evaluates one of the two composite losses from files.
pub fn cmd_loss_eval(cmd: &LossCommand) -> Result<LossBreakdown> {
    match cmd {
        LossCommand::Pretrain {
            logits,
            labels,
            mask,
            decoder_logits,
            targets,
            alpha,
            utt,
        } => {
            let enc = LogitMatrix::new(fmx::read_file(logits)?)?;
            let dec = LogitMatrix::new(fmx::read_file(decoder_logits)?)?;
            let (utt_id, ids) = pick(
                &parse_label_file(&read_text(labels)?)?,
                utt.as_deref(),
                labels,
            )?;
            let (_, bits) = pick(&parse_mask_file(&read_text(mask)?)?, Some(&utt_id), mask)?;
            let (_, tokens) = pick(
                &parse_label_file(&read_text(targets)?)?,
                Some(&utt_id),
                targets,
            )?;
            let frame_labels = FrameLabelSequence {
                utt_id: utt_id.clone(),
                labels: ids,
                channel: ChannelTag::Wide,
            };
            let plan = MaskPlan::from_starts(
                bits.len(),
                1,
                bits.iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(i, _)| i)
                    .collect(),
            )?;
            let l_m = masked_prediction_loss(&enc, &frame_labels, &plan)?;
            let target = TargetSequence {
                utt_id,
                tokens,
                has_boundaries: false,
            };
            let l_s = sequence_loss(&dec, &target)?;
            LossBreakdown::default().with_pretrain(l_m, l_s, *alpha)
        }
        LossCommand::Finetune {
            log_probs,
            from_logits,
            ctc_targets,
            decoder_logits,
            attention_targets,
            beta,
            blank,
            utt,
        } => {
            let mut lp = fmx::read_file(log_probs)?;
            if *from_logits {
                lp = log_softmax_rows(&lp);
            }
            let dec = LogitMatrix::new(fmx::read_file(decoder_logits)?)?;
            let (utt_id, chars) = pick(
                &parse_label_file(&read_text(ctc_targets)?)?,
                utt.as_deref(),
                ctc_targets,
            )?;
            let (_, att) = pick(
                &parse_label_file(&read_text(attention_targets)?)?,
                Some(&utt_id),
                attention_targets,
            )?;
            let ctc = ctc_loss(&lp, &chars, *blank)?.loss;
            let attention = sequence_loss(
                &dec,
                &TargetSequence {
                    utt_id,
                    tokens: att,
                    has_boundaries: false,
                },
            )?;
            LossBreakdown::default().with_finetune(ctc, attention, *beta)
        }
    }
}

/// Runs the labeling pipeline with the effective configuration.
pub fn cmd_label_pipeline(args: &PipelineArgs) -> Result<crate::pipeline::PipelineReport> {
    let config = args.effective_config()?;
    let records = read_manifest(&args.manifest)?;
    run_label_pipeline(&config, &records, &args.out_dir)
}

#[derive(Serialize)]
struct Written<'a> {
    out: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    clipped: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cols: Option<usize>,
}

fn written(out: &Path) -> Written<'_> {
    Written {
        out: out.to_str().unwrap_or("<non-utf8 path>"),
        clipped: None,
        rows: None,
        cols: None,
    }
}

/// Executes one parsed command, writing its report lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Synth(SynthCommand::Signal {
            kind,
            freq,
            duration,
            rate,
            seed,
            out: path,
        }) => {
            let audio = synthesize(kind, freq, duration, rate, seed)?;
            let clipped = write_wav_file(&path, &audio)?;
            emit(
                out,
                &Written {
                    clipped: Some(clipped),
                    ..written(&path)
                },
            )
        }
        Command::Synth(SynthCommand::Corpus {
            out_dir,
            wide,
            narrow,
            duration,
            seed,
        }) => {
            let records = write_corpus(
                &out_dir,
                &CorpusSpec {
                    n_wide: wide,
                    n_narrow: narrow,
                    duration_s: duration,
                    seed,
                },
            )?;
            let manifest = out_dir.join("manifest.tsv");
            emit(
                out,
                &Written {
                    rows: Some(records.len()),
                    ..written(&manifest)
                },
            )
        }
        Command::Resample {
            input,
            rate,
            out: path,
        } => {
            let audio = resample(&read_wav_file(&input)?, rate)?;
            let clipped = write_wav_file(&path, &audio)?;
            emit(
                out,
                &Written {
                    clipped: Some(clipped),
                    ..written(&path)
                },
            )
        }
        Command::Features {
            input,
            out: path,
            format,
        } => {
            let audio = resample(&read_wav_file(&input)?, WIDE_RATE_HZ)?;
            let feats = logmel(&audio, &MelFilterbankConfig::default())?;
            match format {
                MatrixFormat::Fmx => fmx::write_file(&path, &feats.rows)?,
                MatrixFormat::Csv => write_file(&path, fmx::to_csv(&feats.rows))?,
            }
            emit(
                out,
                &Written {
                    rows: Some(feats.num_frames()),
                    cols: Some(feats.dim()),
                    ..written(&path)
                },
            )
        }
        Command::Spectrum(args) => emit(out, &cmd_spectrum(&args)?),
        Command::Kmeans {
            features,
            k,
            max_iters,
            seed,
            channel,
            out: path,
            binary,
        } => {
            let mut points = crate::matrix::Matrix::zeros(0, 0);
            for f in &features {
                points.append_rows(&fmx::read_file(f)?)?;
            }
            let mut cb = kmeans_fit(&points, KMeansParams { k, max_iters, seed }, channel)?;
            cb.quantize_to_text_precision();
            cb.save(&path)?;
            if let Some(bin) = binary {
                fmx::write_file(&bin, &cb.centroids)?;
            }
            #[derive(Serialize)]
            struct Fit<'a> {
                out: &'a str,
                k: usize,
                points: usize,
                iterations: usize,
                inertia: f64,
                empty_reseeds: usize,
            }
            emit(
                out,
                &Fit {
                    out: path.to_str().unwrap_or_default(),
                    k: cb.k(),
                    points: points.rows(),
                    iterations: cb.inertia_history.len(),
                    inertia: cb.inertia_history.last().copied().unwrap_or_default(),
                    empty_reseeds: cb.empty_reseeds,
                },
            )
        }
        Command::PoolCodebooks {
            wide,
            narrow,
            offset,
            out: path,
        } => {
            let pooled = pool_codebooks(Codebook::load(&wide)?, Codebook::load(&narrow)?, offset)?;
            pooled.save(&path)?;
            #[derive(Serialize)]
            struct Pooled<'a> {
                out: &'a str,
                offset: u32,
                vocab_size: usize,
                wide_ids: [u32; 2],
                narrow_ids: [u32; 2],
            }
            emit(
                out,
                &Pooled {
                    out: path.to_str().unwrap_or_default(),
                    offset: pooled.offset(),
                    vocab_size: pooled.vocab_size(),
                    wide_ids: [pooled.wide_range().start, pooled.wide_range().end],
                    narrow_ids: [pooled.narrow_range().start, pooled.narrow_range().end],
                },
            )
        }
        Command::Label {
            codebook,
            manifest,
            out: path,
        } => {
            let records = read_manifest(&manifest)?;
            if records.is_empty() {
                return Err(Error::EmptyInput("manifest has no utterances".into()));
            }
            let text = read_text(&codebook)?;
            let features = extract_all(&records, &MelFilterbankConfig::default())?;
            let labels: Vec<FrameLabelSequence> = if text.contains("\"offset\"") {
                let pooled = PooledCodebook::from_json(&text)?;
                records
                    .iter()
                    .zip(&features)
                    .map(|(r, f)| pooled.assign_channel_aware(f, r.channel))
                    .collect::<Result<_>>()?
            } else {
                let cb = Codebook::from_json(&text)?;
                records
                    .iter()
                    .zip(&features)
                    .map(|(r, f)| {
                        Ok(FrameLabelSequence {
                            utt_id: r.utt_id.clone(),
                            labels: assign_rows(&cb, &f.rows)?,
                            channel: r.channel,
                        })
                    })
                    .collect::<Result<_>>()?
            };
            write_file(
                &path,
                format_label_file(
                    labels
                        .iter()
                        .map(|l| (l.utt_id.as_str(), l.labels.as_slice())),
                ),
            )?;
            emit(
                out,
                &Written {
                    rows: Some(labels.len()),
                    ..written(&path)
                },
            )
        }
        Command::Collapse {
            input,
            out: path,
            wrap_base_size,
        } => {
            let rows = parse_label_file(&read_text(&input)?)?;
            let collapsed: Vec<(String, Vec<u32>)> = rows
                .into_iter()
                .map(|(u, ids)| {
                    let mut tokens = collapse_runs(&ids);
                    if let Some(base) = wrap_base_size {
                        let v = Vocabulary::new(base);
                        tokens.insert(0, v.sos_id());
                        tokens.push(v.eos_id());
                    }
                    (u, tokens)
                })
                .collect();
            write_file(
                &path,
                format_label_file(collapsed.iter().map(|(u, t)| (u.as_str(), t.as_slice()))),
            )?;
            emit(
                out,
                &Written {
                    rows: Some(collapsed.len()),
                    ..written(&path)
                },
            )
        }
        Command::Mask {
            labels,
            span,
            prob,
            seed,
            out: path,
        } => {
            let rows = parse_label_file(&read_text(&labels)?)?;
            let mut text = String::new();
            for (i, (utt, ids)) in rows.iter().enumerate() {
                let plan = span_mask(ids.len(), span, prob, utterance_seed(seed, i))?
                    .with_utt_id(utt.clone());
                text.push_str(&format_mask_line(&plan));
                text.push('\n');
            }
            write_file(&path, text)?;
            emit(
                out,
                &Written {
                    rows: Some(rows.len()),
                    ..written(&path)
                },
            )
        }
        Command::Loss(cmd) => emit(out, &cmd_loss_eval(&cmd)?),
        Command::DiagMi { labels, manifest } => {
            let records = read_manifest(&manifest)?;
            let rows = parse_label_file(&read_text(&labels)?)?;
            let seqs = rows
                .into_iter()
                .map(|(utt, ids)| {
                    let channel = records
                        .iter()
                        .find(|r| r.utt_id == utt)
                        .map(|r| r.channel)
                        .ok_or_else(|| {
                            Error::MalformedFile(format!("{utt:?} is not in the manifest"))
                        })?;
                    Ok(FrameLabelSequence {
                        utt_id: utt,
                        labels: ids,
                        channel,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            emit(out, &channel_info(&seqs)?)
        }
        Command::Pipeline(args) => emit(out, &cmd_label_pipeline(&args)?),
    }
}

/// Parses `std::env::args`, runs, and returns the process exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match run(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
