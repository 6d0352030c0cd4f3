//! Acceptance suite: one PASS/FAIL line per criterion, each with its runtime
//! budget. Runs as a plain binary so the lines are always printed.

// `ensure!` negates its condition so that NaN measurements fail the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use bandmix::audio::{resample, synthesize, ChannelTag, SignalKind};
use bandmix::clustering::{
    assign_rows, kmeans_fit, pool_codebooks, Codebook, CodebookChannel, KMeansParams, Offset,
};
use bandmix::corpus::{write_corpus, CorpusSpec};
use bandmix::dsp::{band_energy_ratio, power_spectrum_with, FeatureMatrix, Window};
use bandmix::labeling::{collapse_runs, FrameLabelSequence};
use bandmix::losses::{
    ctc_loss, finetune_loss, finite_diff_check, log_softmax_rows, pretrain_loss, GradCheck,
};
use bandmix::matrix::Matrix;
use bandmix::pipeline::{label_corpus, read_manifest, run_label_pipeline, Mode, PipelineConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

type Check = std::result::Result<String, String>;

/// Name, runtime budget in seconds, and the check itself.
type Criterion<'a> = (&'a str, u64, Box<dyn Fn() -> Check>);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ok<T, E: std::fmt::Display>(r: std::result::Result<T, E>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-scale..scale))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

// 1 ------------------------------------------------------------------------

struct StoredCodebooks {
    _dir: tempfile::TempDir,
    wide: std::path::PathBuf,
    narrow: std::path::PathBuf,
    pooled: std::path::PathBuf,
}

fn store_codebooks() -> StoredCodebooks {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut save = |name: &str, k: usize, channel: CodebookChannel| {
        let mut cb = Codebook::new(random_matrix(&mut rng, k, 40, 10.0), channel).unwrap();
        cb.quantize_to_text_precision();
        let path = dir.path().join(name);
        cb.save(&path).unwrap();
        path
    };
    let wide = save("wide.json", 500, CodebookChannel::Wide);
    let narrow = save("narrow.json", 500, CodebookChannel::Narrow);
    let pooled = save("pooled.json", 1000, CodebookChannel::Pooled);
    StoredCodebooks {
        _dir: dir,
        wide,
        narrow,
        pooled,
    }
}

fn offset_parity(stored: &StoredCodebooks) -> Check {
    let wide = ok(Codebook::load(&stored.wide))?;
    let narrow = ok(Codebook::load(&stored.narrow))?;
    let pooled_cb = ok(Codebook::load(&stored.pooled))?;
    let pooled = ok(pool_codebooks(wide, narrow, Offset::Auto))?;
    ensure!(
        pooled.vocab_size() == 1000,
        "channel-aware vocab {}",
        pooled.vocab_size()
    );
    ensure!(
        pooled.wide_range() == (0..500),
        "wide range {:?}",
        pooled.wide_range()
    );
    ensure!(
        pooled.narrow_range() == (500..1000),
        "narrow range {:?}",
        pooled.narrow_range()
    );
    ensure!(
        pooled_cb.k() == 1000,
        "pooled baseline vocab {}",
        pooled_cb.k()
    );

    // Emitted IDs: label random frames through each channel and scan.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let frames =
        FeatureMatrix::from_matrix(random_matrix(&mut rng, 2000, 40, 10.0), "probe").unwrap();
    let w = ok(pooled.assign_channel_aware(&frames, ChannelTag::Wide))?;
    let n = ok(pooled.assign_channel_aware(&frames, ChannelTag::Narrow))?;
    ensure!(
        w.labels.iter().all(|&id| id < 500),
        "wide label outside [0,500)"
    );
    ensure!(
        n.labels.iter().all(|&id| (500..1000).contains(&id)),
        "narrow label outside [500,1000)"
    );

    let aware = PipelineConfig {
        mode: Mode::ChannelAware,
        k_wide: Some(500),
        k_narrow: Some(500),
        ..PipelineConfig::default()
    };
    let baseline = PipelineConfig {
        mode: Mode::PooledBaseline,
        k_pooled: Some(1000),
        ..PipelineConfig::default()
    };
    let (va, vb) = (ok(aware.vocab_size())?, ok(baseline.vocab_size())?);
    ensure!(va == 1000 && vb == 1000, "config vocab sizes {va} / {vb}");
    Ok(format!(
        "vocab 1000 = 1000, ranges [0,500) [500,1000), {} + {} frames scanned",
        w.labels.len(),
        n.labels.len()
    ))
}

// 2 ------------------------------------------------------------------------

fn combiners() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let (a, b, w) = (
            rng.random_range(0.0..20.0),
            rng.random_range(0.0..20.0),
            rng.random_range(0.0..=1.0),
        );
        let p = ok(pretrain_loss(a, b, w))?;
        let f = ok(finetune_loss(a, b, w))?;
        let direct = w * a + (1.0 - w) * b;
        worst = worst.max((p - direct).abs()).max((f - direct).abs());
    }
    ensure!(worst <= 1e-12, "max deviation {worst:e}");
    for &(a, b) in &[(2.0, 4.0), (0.1, 7.25), (13.0, 0.0), (0.0, 0.0)] {
        ensure!(
            ok(pretrain_loss(a, b, 1.0))?.to_bits() == f64::to_bits(a),
            "alpha=1 not bit-exact"
        );
        ensure!(
            ok(pretrain_loss(a, b, 0.0))?.to_bits() == f64::to_bits(b),
            "alpha=0 not bit-exact"
        );
        ensure!(
            ok(finetune_loss(a, b, 1.0))?.to_bits() == f64::to_bits(a),
            "beta=1 not bit-exact"
        );
        ensure!(
            ok(finetune_loss(a, b, 0.0))?.to_bits() == f64::to_bits(b),
            "beta=0 not bit-exact"
        );
    }
    ensure!(
        ok(pretrain_loss(2.0, 4.0, 0.5))? == 3.0,
        "pretrain(2,4,0.5) != 3"
    );
    ensure!(
        (ok(finetune_loss(1.0, 2.0, 0.3))? - 1.7).abs() < 1e-12,
        "finetune(1,2,0.3) != 1.7"
    );
    Ok(format!(
        "2000 combinations, max deviation {worst:e}; boundaries bit-exact"
    ))
}

// 3 ------------------------------------------------------------------------

/// Sum of path probabilities over every frame-level path whose collapse
/// (merge repeats, drop blanks) equals `target`.
fn ctc_enumerate(log_probs: &Matrix, target: &[u32], blank: u32) -> f64 {
    let (frames, vocab) = (log_probs.rows(), log_probs.cols());
    let mut total = 0.0;
    for code in 0..vocab.pow(frames as u32) {
        let mut c = code;
        let mut path = Vec::with_capacity(frames);
        let mut logp = 0.0;
        for t in 0..frames {
            let k = c % vocab;
            c /= vocab;
            logp += log_probs.get(t, k);
            path.push(k as u32);
        }
        let mut emitted = Vec::new();
        let mut prev = None;
        for &k in &path {
            if Some(k) != prev && k != blank {
                emitted.push(k);
            }
            prev = Some(k);
        }
        if emitted == target {
            total += logp.exp();
        }
    }
    total
}

fn all_sequences(alphabet: &[u32], max_len: usize) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for &a in alphabet {
                let mut t: Vec<u32> = s.clone();
                t.push(a);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

fn ctc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_loss, mut worst_sum, mut worst_fd) = (0.0f64, 0.0f64, 0.0f64);
    let mut instances = 0;
    while instances < 200 {
        let frames = rng.random_range(1..=4);
        let vocab = rng.random_range(2..=3);
        let blank = rng.random_range(0..vocab) as u32;
        let alphabet: Vec<u32> = (0..vocab as u32).filter(|&k| k != blank).collect();
        let len = rng.random_range(0..=2usize);
        let target: Vec<u32> = (0..len)
            .map(|_| alphabet[rng.random_range(0..alphabet.len())])
            .collect();
        let logits = random_matrix(&mut rng, frames, vocab, 3.0);
        let lp = log_softmax_rows(&logits);
        let Ok(out) = ctc_loss(&lp, &target, blank) else {
            // target cannot fit in the frames; the enumeration must agree it is impossible
            ensure!(
                ctc_enumerate(&lp, &target, blank) == 0.0,
                "rejected target has paths"
            );
            continue;
        };
        instances += 1;
        let brute = ctc_enumerate(&lp, &target, blank);
        worst_loss = worst_loss.max((out.loss - (-brute.ln())).abs());

        // Completeness: over every emittable target, probabilities sum to one.
        let total: f64 = all_sequences(&alphabet, frames)
            .iter()
            .filter_map(|t| ctc_loss(&lp, t, blank).ok())
            .map(|o| (-o.loss).exp())
            .sum();
        worst_sum = worst_sum.max((total - 1.0).abs());

        let fd = ok(finite_diff_check(
            &GradCheck::Ctc {
                log_probs: logits,
                target,
                blank,
            },
            1e-6,
        ))?;
        worst_fd = worst_fd.max(fd);
    }
    ensure!(worst_loss <= 1e-9, "loss vs enumeration {worst_loss:e}");
    ensure!(worst_sum <= 1e-9, "completeness {worst_sum:e}");
    ensure!(worst_fd <= 1e-4, "gradient relative error {worst_fd:e}");
    Ok(format!(
        "200 instances: |Δloss| {worst_loss:.1e}, |Σp-1| {worst_sum:.1e}, grad rel {worst_fd:.1e}"
    ))
}

// 4 ------------------------------------------------------------------------

fn collapse_rule() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..10_000 {
        let len = rng.random_range(0..200);
        let alphabet = rng.random_range(1..12u32);
        // Long runs are the interesting case: repeat each draw a random number of times.
        let mut xs = Vec::with_capacity(len);
        while xs.len() < len {
            let v = rng.random_range(0..alphabet);
            let run = rng.random_range(1..8);
            xs.extend(std::iter::repeat_n(v, run.min(len - xs.len())));
        }
        let c = collapse_runs(&xs);
        ensure!(collapse_runs(&c) == c, "sequence {i}: not idempotent");
        ensure!(
            c.windows(2).all(|w| w[0] != w[1]),
            "sequence {i}: adjacent duplicates"
        );
        ensure!(c.len() <= xs.len(), "sequence {i}: grew");
        ensure!(
            xs.is_empty() == c.is_empty(),
            "sequence {i}: emptiness changed"
        );
        // Independent oracle: keep an element iff it differs from its predecessor.
        let expect: Vec<u32> = xs
            .iter()
            .enumerate()
            .filter(|&(j, v)| j == 0 || xs[j - 1] != *v)
            .map(|(_, &v)| v)
            .collect();
        ensure!(c == expect, "sequence {i}: differs from oracle");
    }
    Ok("10000 sequences idempotent, duplicate-free, non-growing".into())
}

// 5 ------------------------------------------------------------------------

fn kmeans_properties() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatches = 0;
    for fit in 0..100u64 {
        // Blobs around random centres plus uniform background.
        let centres = random_matrix(&mut rng, 8, 4, 5.0);
        let mut data = Vec::with_capacity(4000);
        for i in 0..1000 {
            let c = centres.row(i % 8);
            for &v in c {
                data.push(v + rng.random_range(-1.5..1.5));
            }
        }
        let points = Matrix::from_vec(1000, 4, data).unwrap();
        let cb = ok(kmeans_fit(
            &points,
            KMeansParams {
                k: 8,
                max_iters: 100,
                seed: fit,
            },
            CodebookChannel::Pooled,
        ))?;
        ensure!(
            cb.inertia_history.windows(2).all(|w| w[1] <= w[0]),
            "fit {fit}: inertia increased {:?}",
            cb.inertia_history
        );
        let labels = ok(assign_rows(&cb, &points))?;
        for (i, &got) in labels.iter().enumerate() {
            let p = points.row(i);
            let mut best = (0usize, f64::INFINITY);
            for j in 0..cb.k() {
                let d: f64 = p
                    .iter()
                    .zip(cb.centroids.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.1 {
                    best = (j, d);
                }
            }
            if got as usize != best.0 {
                mismatches += 1;
            }
        }
    }
    ensure!(
        mismatches == 0,
        "{mismatches} assignments differ from exhaustive scan"
    );
    Ok("100 fits: inertia non-increasing, 100000 assignments match exhaustive scan".into())
}

// 6 ------------------------------------------------------------------------

fn spectral_observation() -> Check {
    let mut line = String::new();
    for seed in 0..3 {
        let noise = ok(synthesize(SignalKind::WhiteNoise, 0.0, 2.0, 16_000, seed))?;
        let native = ok(band_energy_ratio(&noise, 4000.0))?.high_fraction;
        let narrowed = ok(resample(&ok(resample(&noise, 8000))?, 16_000))?;
        let round_trip = ok(band_energy_ratio(&narrowed, 4000.0))?.high_fraction;
        ensure!(
            (0.45..=0.55).contains(&native),
            "seed {seed}: native high fraction {native}"
        );
        ensure!(
            round_trip < 0.01,
            "seed {seed}: narrow-origin high fraction {round_trip}"
        );
        if seed == 0 {
            line = format!("native {native:.4}, via 8 kHz {round_trip:.2e}");
        }
    }
    Ok(line)
}

// 7 ------------------------------------------------------------------------

/// Plug-in I(ID; channel) in bits from joint counts.
fn mutual_information(labels: &[FrameLabelSequence]) -> (f64, f64) {
    let mut joint: BTreeMap<(u32, &str), f64> = BTreeMap::new();
    let mut ids: BTreeMap<u32, f64> = BTreeMap::new();
    let mut chans: BTreeMap<&str, f64> = BTreeMap::new();
    let mut n = 0.0;
    for seq in labels {
        for &id in &seq.labels {
            *joint.entry((id, seq.channel.as_str())).or_default() += 1.0;
            *ids.entry(id).or_default() += 1.0;
            *chans.entry(seq.channel.as_str()).or_default() += 1.0;
            n += 1.0;
        }
    }
    let mi = joint
        .iter()
        .map(|(&(id, ch), &c)| (c / n) * ((c * n) / (ids[&id] * chans[ch])).log2())
        .sum();
    let h = chans.values().map(|&c| -(c / n) * (c / n).log2()).sum();
    (mi, h)
}

fn id_sets(labels: &[FrameLabelSequence]) -> (BTreeSet<u32>, BTreeSet<u32>) {
    let mut wide = BTreeSet::new();
    let mut narrow = BTreeSet::new();
    for seq in labels {
        let set = if seq.channel == ChannelTag::Wide {
            &mut wide
        } else {
            &mut narrow
        };
        set.extend(seq.labels.iter().copied());
    }
    (wide, narrow)
}

fn small_config(mode: Mode) -> PipelineConfig {
    PipelineConfig {
        mode,
        k_wide: Some(8),
        k_narrow: Some(8),
        k_pooled: Some(16),
        seed: 7,
        ..PipelineConfig::default()
    }
}

fn channel_determinism() -> Check {
    let dir = tempfile::tempdir().unwrap();
    ok(write_corpus(
        dir.path(),
        &CorpusSpec {
            n_wide: 25,
            n_narrow: 25,
            duration_s: 1.0,
            seed: 11,
        },
    ))?;
    let records = ok(read_manifest(&dir.path().join("manifest.tsv")))?;
    ensure!(
        records.len() == 50,
        "corpus has {} utterances",
        records.len()
    );

    let aware = ok(label_corpus(&small_config(Mode::ChannelAware), &records))?;
    let (mi, h) = mutual_information(&aware.labels);
    ensure!((mi - h).abs() <= 1e-9, "channel-aware I = {mi}, H = {h}");
    ensure!(
        (aware.channel_info.mutual_information_bits - mi).abs() <= 1e-9,
        "library MI disagrees with oracle"
    );
    let (w, n) = id_sets(&aware.labels);
    ensure!(w.is_disjoint(&n), "channel-aware ID sets overlap");
    ensure!(
        w.iter().all(|&id| id < 8) && n.iter().all(|&id| (8..16).contains(&id)),
        "IDs outside their ranges"
    );

    let pooled = ok(label_corpus(&small_config(Mode::PooledBaseline), &records))?;
    let (pw, pn) = id_sets(&pooled.labels);
    let shared = pw.intersection(&pn).count();
    let (pmi, _) = mutual_information(&pooled.labels);
    ensure!(shared > 0, "pooled baseline ID sets are disjoint");
    Ok(format!(
        "aware I = H = {h:.6} bits, disjoint; pooled I = {pmi:.4} bits, {shared} shared IDs"
    ))
}

// 8 ------------------------------------------------------------------------

fn hash_dir(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let bytes = std::fs::read(&path).unwrap();
        out.insert(
            path.file_name().unwrap().to_string_lossy().into_owned(),
            hex::encode(Sha256::digest(&bytes)),
        );
    }
    out
}

fn determinism() -> Check {
    let corpus = tempfile::tempdir().unwrap();
    ok(write_corpus(
        corpus.path(),
        &CorpusSpec {
            n_wide: 25,
            n_narrow: 25,
            duration_s: 1.0,
            seed: 3,
        },
    ))?;
    let records = ok(read_manifest(&corpus.path().join("manifest.tsv")))?;
    let mut files = 0;
    for mode in [Mode::ChannelAware, Mode::PooledBaseline] {
        let mut config = small_config(mode);
        config.wrap_targets = true;
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        ok(run_label_pipeline(&config, &records, a.path()))?;
        ok(run_label_pipeline(&config, &records, b.path()))?;
        let (ha, hb) = (hash_dir(a.path()), hash_dir(b.path()));
        ensure!(ha.len() > 5, "{mode:?}: only {} artifacts", ha.len());
        for (name, h) in &ha {
            ensure!(
                hb.get(name) == Some(h),
                "{mode:?}: {name} differs between runs"
            );
        }
        ensure!(ha.len() == hb.len(), "{mode:?}: artifact sets differ");
        files += ha.len();
    }
    Ok(format!(
        "{files} artifacts byte-identical across runs (SHA-256)"
    ))
}

// 9 ------------------------------------------------------------------------

fn dsp_checks() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let n = [64usize, 128, 256, 400, 512][i % 5];
        let fft = n.next_power_of_two();
        let frame: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let half = ok(power_spectrum_with(&frame, fft, Window::Rectangular))?;
        let spectral = half[0] + half[fft / 2] + 2.0 * half[1..fft / 2].iter().sum::<f64>();
        let time: f64 = frame.iter().map(|x| x * x).sum();
        worst = worst.max((spectral / fft as f64 - time).abs() / time);
    }
    ensure!(worst <= 1e-6, "Parseval relative error {worst:e}");

    let energy = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let interior = |x: &[f64]| x[200..x.len() - 200].to_vec();

    let tone = ok(synthesize(SignalKind::Sine, 1000.0, 1.0, 16_000, 0))?;
    let down = ok(resample(&tone, 8000))?;
    ensure!(down.len() == 8000, "16 kHz → 8 kHz length {}", down.len());
    let loss_db =
        10.0 * (energy(&interior(tone.samples())) / energy(&interior(down.samples()))).log10();
    ensure!(loss_db.abs() < 0.5, "1 kHz amplitude change {loss_db} dB");
    let seg = &down.samples()[2000..6096];
    let spec = ok(power_spectrum_with(seg, 4096, Window::Hann))?;
    let peak = spec
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > spec[b] { i } else { b });
    let expected = (1000.0 * 4096.0 / 8000.0_f64).round() as usize;
    ensure!(
        peak.abs_diff(expected) <= 1,
        "peak bin {peak}, expected {expected}"
    );

    let high = ok(synthesize(SignalKind::Sine, 6000.0, 1.0, 16_000, 0))?;
    let residue = ok(resample(&high, 8000))?;
    let rejection_db =
        10.0 * (energy(high.samples()) / energy(residue.samples()).max(1e-300)).log10();
    ensure!(
        rejection_db >= 40.0,
        "6 kHz rejection only {rejection_db} dB"
    );
    Ok(format!(
        "Parseval {worst:.1e}; 1 kHz change {loss_db:+.3} dB at bin {peak}; 6 kHz rejected by {rejection_db:.1} dB"
    ))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let stored = store_codebooks();
    let criteria: Vec<Criterion> = vec![
        (
            "offset-scheme vocabulary parity",
            1,
            Box::new(move || offset_parity(&stored)),
        ),
        ("pretrain/finetune combiners", 1, Box::new(combiners)),
        ("CTC vs alignment enumeration", 30, Box::new(ctc_oracle)),
        ("run-length collapse", 5, Box::new(collapse_rule)),
        (
            "k-means monotonicity and assignment",
            60,
            Box::new(kmeans_properties),
        ),
        (
            "narrow-band spectral signature",
            5,
            Box::new(spectral_observation),
        ),
        (
            "channel determinism of labels",
            60,
            Box::new(channel_determinism),
        ),
        ("byte-identical pipeline reruns", 120, Box::new(determinism)),
        ("Parseval and resampler", 10, Box::new(dsp_checks)),
    ];
    let mut failed = 0;
    for (i, (name, budget_s, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let over_budget = elapsed > Duration::from_secs(*budget_s);
        let (status, detail) = match (&outcome, over_budget) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; exceeded {budget_s} s budget")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!(
            "{status} [{}] {name} ({:.2} s / {budget_s} s): {detail}",
            i + 1,
            elapsed.as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
