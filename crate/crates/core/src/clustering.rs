//! Lloyd's k-means with k-means++ seeding, nearest-centroid labeling, and
//! the two ways of building a cluster-ID vocabulary from two channels:
//!
//! * pooled: one codebook fitted on every channel's frames together;
//! * channel-aware: one codebook per channel, with the narrow-band IDs
//!   shifted by an offset of at least the wide codebook size so the two
//!   ID ranges never overlap.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::ChannelTag;
use crate::dsp::FeatureMatrix;
use crate::error::{Error, Result};
use crate::labeling::FrameLabelSequence;
use crate::matrix::{squared_distance, Matrix};

/// Points per reduction chunk. Chunk partial sums are combined in index order.
pub const CHUNK_POINTS: usize = 4096;

/// Relative inertia improvement below which a fit stops.
pub const CONVERGENCE_TOL: f64 = 1e-7;

/// Which data a codebook was fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookChannel {
    Wide,
    Narrow,
    Pooled,
}

impl From<ChannelTag> for CodebookChannel {
    fn from(tag: ChannelTag) -> Self {
        match tag {
            ChannelTag::Wide => CodebookChannel::Wide,
            ChannelTag::Narrow => CodebookChannel::Narrow,
        }
    }
}

impl fmt::Display for CodebookChannel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodebookChannel::Wide => "wide",
            CodebookChannel::Narrow => "narrow",
            CodebookChannel::Pooled => "pooled",
        })
    }
}

impl FromStr for CodebookChannel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wide" => Ok(Self::Wide),
            "narrow" => Ok(Self::Narrow),
            "pooled" => Ok(Self::Pooled),
            other => Err(Error::InvalidConfig(format!(
                "unknown codebook channel {other:?}"
            ))),
        }
    }
}

/// Fitted k-means centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Matrix,
    pub channel: CodebookChannel,
    pub seed: u64,
    /// Inertia after every assignment pass, non-increasing.
    pub inertia_history: Vec<f64>,
    /// How many times an empty cluster was re-seeded.
    pub empty_reseeds: usize,
}

impl Codebook {
    pub fn new(centroids: Matrix, channel: CodebookChannel) -> Result<Self> {
        if centroids.rows() == 0 || centroids.cols() == 0 {
            return Err(Error::EmptyInput(
                "codebook needs at least one centroid".into(),
            ));
        }
        if !centroids.is_finite() {
            return Err(Error::InvalidConfig(
                "codebook has non-finite centroids".into(),
            ));
        }
        Ok(Self {
            centroids,
            channel,
            seed: 0,
            inertia_history: Vec::new(),
            empty_reseeds: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.centroids.cols()
    }

    /// Index and squared distance of the closest centroid; ties go to the
    /// lowest index.
    pub fn nearest(&self, point: &[f64]) -> (usize, f64) {
        nearest(&self.centroids, point)
    }

    fn check_dim(&self, features: &Matrix) -> Result<()> {
        if features.rows() > 0 && features.cols() != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim(),
                got: features.cols(),
            });
        }
        Ok(())
    }

    /// Rounds centroids to the nine significant digits used by the text file,
    /// so an in-memory codebook labels exactly like its reloaded copy.
    pub fn quantize_to_text_precision(&mut self) {
        for v in self.centroids.as_mut_slice() {
            *v = format_sig9(*v).parse().expect("formatted float parses");
        }
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        self.write_json_fields(&mut out, "  ");
        out.push_str("}\n");
        out
    }

    fn write_json_fields(&self, out: &mut String, indent: &str) {
        use std::fmt::Write;
        let _ = writeln!(out, "{indent}\"feature_dim\": {},", self.feature_dim());
        let _ = writeln!(out, "{indent}\"k\": {},", self.k());
        let _ = writeln!(out, "{indent}\"channel\": \"{}\",", self.channel);
        let _ = writeln!(out, "{indent}\"seed\": {},", self.seed);
        let _ = writeln!(out, "{indent}\"empty_reseeds\": {},", self.empty_reseeds);
        let history: Vec<String> = self
            .inertia_history
            .iter()
            .map(|&v| format_sig9(v))
            .collect();
        let _ = writeln!(
            out,
            "{indent}\"inertia_history\": [{}],",
            history.join(", ")
        );
        let _ = writeln!(out, "{indent}\"centroids\": [");
        for (i, row) in self.centroids.iter_rows().enumerate() {
            let cells: Vec<String> = row.iter().map(|&v| format_sig9(v)).collect();
            let sep = if i + 1 < self.k() { "," } else { "" };
            let _ = writeln!(out, "{indent}  [{}]{sep}", cells.join(", "));
        }
        let _ = writeln!(out, "{indent}]");
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: CodebookFile = serde_json::from_str(text)
            .map_err(|e| Error::MalformedFile(format!("codebook: {e}")))?;
        file.into_codebook()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Deserialize)]
struct CodebookFile {
    feature_dim: usize,
    k: usize,
    channel: CodebookChannel,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    empty_reseeds: usize,
    #[serde(default)]
    inertia_history: Vec<f64>,
    centroids: Vec<Vec<f64>>,
}

impl CodebookFile {
    fn into_codebook(self) -> Result<Codebook> {
        if self.centroids.len() != self.k {
            return Err(Error::MalformedFile(format!(
                "codebook declares k={} but lists {} centroids",
                self.k,
                self.centroids.len()
            )));
        }
        if self.centroids.iter().any(|c| c.len() != self.feature_dim) {
            return Err(Error::MalformedFile(format!(
                "codebook centroid width differs from feature_dim={}",
                self.feature_dim
            )));
        }
        let mut cb = Codebook::new(Matrix::from_rows(&self.centroids)?, self.channel)?;
        cb.seed = self.seed;
        cb.empty_reseeds = self.empty_reseeds;
        cb.inertia_history = self.inertia_history;
        Ok(cb)
    }
}

/// Nine significant digits, plain decimal where reasonable.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..16).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let rounded: f64 = sci.parse().expect("scientific float parses");
        trim(format!("{rounded:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa.to_string()))
    }
}

fn nearest(centroids: &Matrix, point: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter_rows().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Stacks utterance features into one point matrix, in the given order.
pub fn stack_features<'a>(features: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Matrix> {
    let mut all = Matrix::zeros(0, 0);
    for f in features {
        all.append_rows(&f.rows)?;
    }
    Ok(all)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub seed: u64,
}

/// Result of one chunked assignment pass.
struct Pass {
    labels: Vec<u32>,
    distances: Vec<f64>,
    inertia: f64,
    sums: Vec<f64>,
    counts: Vec<usize>,
}

fn assignment_pass(points: &Matrix, centroids: &Matrix) -> Pass {
    let k = centroids.rows();
    let dim = centroids.cols();
    struct Partial {
        labels: Vec<u32>,
        distances: Vec<f64>,
        inertia: f64,
        sums: Vec<f64>,
        counts: Vec<usize>,
    }
    let partials: Vec<Partial> = points
        .as_slice()
        .par_chunks(CHUNK_POINTS * dim)
        .map(|chunk| {
            let n = chunk.len() / dim;
            let mut p = Partial {
                labels: Vec::with_capacity(n),
                distances: Vec::with_capacity(n),
                inertia: 0.0,
                sums: vec![0.0; k * dim],
                counts: vec![0; k],
            };
            for point in chunk.chunks_exact(dim) {
                let (j, d) = nearest(centroids, point);
                p.labels.push(j as u32);
                p.distances.push(d);
                p.inertia += d;
                p.counts[j] += 1;
                for (s, x) in p.sums[j * dim..(j + 1) * dim].iter_mut().zip(point) {
                    *s += x;
                }
            }
            p
        })
        .collect();

    let mut pass = Pass {
        labels: Vec::with_capacity(points.rows()),
        distances: Vec::with_capacity(points.rows()),
        inertia: 0.0,
        sums: vec![0.0; k * dim],
        counts: vec![0; k],
    };
    for p in partials {
        pass.labels.extend(p.labels);
        pass.distances.extend(p.distances);
        pass.inertia += p.inertia;
        pass.sums.iter_mut().zip(&p.sums).for_each(|(a, b)| *a += b);
        pass.counts
            .iter_mut()
            .zip(&p.counts)
            .for_each(|(a, b)| *a += b);
    }
    pass
}

/// k-means++ seeding.
fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    let mut taken = vec![false; n];
    let first = rng.random_range(0..n);
    chosen.push(first);
    taken[first] = true;
    let mut d2: Vec<f64> = points
        .iter_rows()
        .map(|p| squared_distance(p, points.row(first)))
        .collect();

    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave target just past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every point coincides with a centre; take unused indices in order
            taken.iter().position(|&t| !t).unwrap()
        };
        chosen.push(next);
        taken[next] = true;
        let c = points.row(next);
        for (i, p) in points.iter_rows().enumerate() {
            let d = squared_distance(p, c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut centroids = Matrix::zeros(k, points.cols());
    for (j, &i) in chosen.iter().enumerate() {
        centroids.row_mut(j).copy_from_slice(points.row(i));
    }
    centroids
}

/// Fits `params.k` centroids to the rows of `points` with Lloyd's algorithm.
///
/// Stops after `max_iters` assignment passes, when the relative inertia
/// improvement drops below [`CONVERGENCE_TOL`], or when no label changes.
/// Clusters that lose every point are moved onto the points farthest from
/// their current centroid.
pub fn kmeans_fit(
    points: &Matrix,
    params: KMeansParams,
    channel: CodebookChannel,
) -> Result<Codebook> {
    let KMeansParams { k, max_iters, seed } = params;
    if k == 0 || max_iters == 0 {
        return Err(Error::InvalidConfig(
            "k and max_iters must be positive".into(),
        ));
    }
    if points.rows() < k {
        return Err(Error::InsufficientData {
            points: points.rows(),
            k,
        });
    }
    if points.cols() == 0 {
        return Err(Error::InvalidConfig("points have zero dimensions".into()));
    }
    if !points.is_finite() {
        return Err(Error::InvalidConfig(
            "points contain non-finite values".into(),
        ));
    }

    let dim = points.cols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut history = Vec::new();
    let mut empty_reseeds = 0;
    let mut previous_labels: Option<Vec<u32>> = None;

    for iter in 0..max_iters {
        let pass = assignment_pass(points, &centroids);
        let converged = match (history.last(), &previous_labels) {
            (Some(&prev), Some(labels)) => {
                *labels == pass.labels || prev - pass.inertia <= CONVERGENCE_TOL * prev
            }
            _ => false,
        };
        history.push(pass.inertia);
        if converged || pass.inertia == 0.0 || iter + 1 == max_iters {
            break;
        }

        for j in 0..k {
            if pass.counts[j] > 0 {
                let inv = 1.0 / pass.counts[j] as f64;
                for (c, s) in centroids.row_mut(j).iter_mut().zip(&pass.sums[j * dim..]) {
                    *c = s * inv;
                }
            }
        }
        let empties: Vec<usize> = (0..k).filter(|&j| pass.counts[j] == 0).collect();
        if !empties.is_empty() {
            let mut by_distance: Vec<usize> = (0..points.rows()).collect();
            by_distance.sort_by(|&a, &b| {
                pass.distances[b]
                    .total_cmp(&pass.distances[a])
                    .then(a.cmp(&b))
            });
            for (&j, &i) in empties.iter().zip(&by_distance) {
                centroids.row_mut(j).copy_from_slice(points.row(i));
                empty_reseeds += 1;
            }
        }
        previous_labels = Some(pass.labels);
    }

    Ok(Codebook {
        centroids,
        channel,
        seed,
        inertia_history: history,
        empty_reseeds,
    })
}

/// Nearest-centroid label for every row.
pub fn assign_rows(codebook: &Codebook, features: &Matrix) -> Result<Vec<u32>> {
    codebook.check_dim(features)?;
    Ok(features
        .iter_rows()
        .map(|p| codebook.nearest(p).0 as u32)
        .collect())
}

/// Labels each frame with its nearest centroid, IDs in `[0, k)`.
pub fn assign(
    codebook: &Codebook,
    features: &FeatureMatrix,
    channel: ChannelTag,
) -> Result<FrameLabelSequence> {
    Ok(FrameLabelSequence {
        utt_id: features.source_utt_id.clone(),
        labels: assign_rows(codebook, &features.rows)?,
        channel,
    })
}

/// Sum of squared distances from each row to its nearest centroid.
pub fn inertia(codebook: &Codebook, features: &Matrix) -> Result<f64> {
    codebook.check_dim(features)?;
    Ok(features.iter_rows().map(|p| codebook.nearest(p).1).sum())
}

/// Narrow-band ID offset: either the wide codebook size or an explicit value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Offset {
    #[default]
    Auto,
    Fixed(u32),
}

impl FromStr for Offset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Offset::Auto);
        }
        s.parse().map(Offset::Fixed).map_err(|_| {
            Error::InvalidConfig(format!("offset must be \"auto\" or an integer, got {s:?}"))
        })
    }
}

impl fmt::Display for Offset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Offset::Auto => f.write_str("auto"),
            Offset::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Offset {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Offset::Auto => s.serialize_str("auto"),
            Offset::Fixed(n) => s.serialize_u32(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Offset {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(n) => Ok(Offset::Fixed(n)),
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Wide and narrow codebooks sharing one ID space. Wide IDs are `[0, wide.k)`,
/// narrow IDs are `[offset, offset + narrow.k)`; anything in between is
/// reserved and never emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledCodebook {
    wide: Codebook,
    narrow: Codebook,
    offset: u32,
}

impl PooledCodebook {
    pub fn wide(&self) -> &Codebook {
        &self.wide
    }

    pub fn narrow(&self) -> &Codebook {
        &self.narrow
    }

    pub fn offset(&self) -> u32 {
        self.offset
    }

    pub fn vocab_size(&self) -> usize {
        self.offset as usize + self.narrow.k()
    }

    pub fn wide_range(&self) -> std::ops::Range<u32> {
        0..self.wide.k() as u32
    }

    pub fn narrow_range(&self) -> std::ops::Range<u32> {
        self.offset..self.offset + self.narrow.k() as u32
    }

    /// The channel an ID belongs to, or `None` for reserved and out-of-range IDs.
    pub fn channel_of(&self, id: u32) -> Option<ChannelTag> {
        if self.wide_range().contains(&id) {
            Some(ChannelTag::Wide)
        } else if self.narrow_range().contains(&id) {
            Some(ChannelTag::Narrow)
        } else {
            None
        }
    }

    /// Labels frames against the codebook of their own channel; narrow IDs
    /// are shifted by the offset.
    pub fn assign_channel_aware(
        &self,
        features: &FeatureMatrix,
        channel: ChannelTag,
    ) -> Result<FrameLabelSequence> {
        let (codebook, shift) = match channel {
            ChannelTag::Wide => (&self.wide, 0),
            ChannelTag::Narrow => (&self.narrow, self.offset),
        };
        let mut seq = assign(codebook, features, channel)?;
        seq.labels.iter_mut().for_each(|id| *id += shift);
        Ok(seq)
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        out.push_str(&format!("  \"offset\": {},\n", self.offset));
        out.push_str(&format!("  \"vocab_size\": {},\n", self.vocab_size()));
        out.push_str("  \"wide\": {\n");
        self.wide.write_json_fields(&mut out, "    ");
        out.push_str("  },\n  \"narrow\": {\n");
        self.narrow.write_json_fields(&mut out, "    ");
        out.push_str("  }\n}\n");
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct PooledFile {
            offset: u32,
            vocab_size: Option<usize>,
            wide: CodebookFile,
            narrow: CodebookFile,
        }
        let file: PooledFile = serde_json::from_str(text)
            .map_err(|e| Error::MalformedFile(format!("pooled codebook: {e}")))?;
        let pooled = pool_codebooks(
            file.wide.into_codebook()?,
            file.narrow.into_codebook()?,
            Offset::Fixed(file.offset),
        )?;
        if let Some(v) = file.vocab_size {
            if v != pooled.vocab_size() {
                return Err(Error::MalformedFile(format!(
                    "vocab_size {v} disagrees with offset + narrow.k = {}",
                    pooled.vocab_size()
                )));
            }
        }
        Ok(pooled)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Combines a wide and a narrow codebook into one ID space.
pub fn pool_codebooks(wide: Codebook, narrow: Codebook, offset: Offset) -> Result<PooledCodebook> {
    if wide.feature_dim() != narrow.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: wide.feature_dim(),
            got: narrow.feature_dim(),
        });
    }
    if wide.channel != CodebookChannel::Wide || narrow.channel != CodebookChannel::Narrow {
        return Err(Error::InvalidConfig(format!(
            "expected wide and narrow codebooks, got {} and {}",
            wide.channel, narrow.channel
        )));
    }
    let wide_k = wide.k() as u32;
    let offset = match offset {
        Offset::Auto => wide_k,
        Offset::Fixed(o) if o < wide_k => return Err(Error::OffsetTooSmall { offset: o, wide_k }),
        Offset::Fixed(o) => o,
    };
    if (offset as u64) + narrow.k() as u64 > u32::MAX as u64 {
        return Err(Error::InvalidConfig(
            "offset + narrow.k overflows the ID type".into(),
        ));
    }
    Ok(PooledCodebook {
        wide,
        narrow,
        offset,
    })
}

/// Per-dimension z-scoring with statistics from training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &Matrix) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::EmptyInput("no points to standardize".into()));
        }
        let n = points.rows() as f64;
        let dim = points.cols();
        let mut mean = vec![0.0; dim];
        for row in points.iter_rows() {
            mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for row in points.iter_rows() {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = (v / n).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, points: &mut Matrix) -> Result<()> {
        if points.rows() > 0 && points.cols() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                got: points.cols(),
            });
        }
        for r in 0..points.rows() {
            for ((x, m), s) in points.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / s;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn random_points(n: usize, dim: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * dim)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Matrix::from_vec(n, dim, data).unwrap()
    }

    fn params(k: usize, seed: u64) -> KMeansParams {
        KMeansParams {
            k,
            max_iters: 100,
            seed,
        }
    }

    fn fm(rows: Matrix) -> FeatureMatrix {
        FeatureMatrix::from_matrix(rows, "u").unwrap()
    }

    #[test]
    fn two_obvious_clusters() {
        let pts = Matrix::from_rows(&[[0.0], [0.2], [10.0], [10.2]]).unwrap();
        let cb = kmeans_fit(&pts, params(2, 7), CodebookChannel::Pooled).unwrap();
        let mut c: Vec<f64> = cb.centroids.as_slice().to_vec();
        c.sort_by(f64::total_cmp);
        assert!((c[0] - 0.1).abs() < 1e-12 && (c[1] - 10.1).abs() < 1e-12);
        assert!((cb.inertia_history.last().unwrap() - 0.04).abs() < 1e-12);
        assert!((inertia(&cb, &pts).unwrap() - 0.04).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let pts = random_points(12, 3, 1);
        let cb = kmeans_fit(&pts, params(12, 3), CodebookChannel::Wide).unwrap();
        assert_eq!(inertia(&cb, &pts).unwrap(), 0.0);
    }

    #[test]
    fn too_few_points() {
        let pts = random_points(3, 2, 1);
        assert!(matches!(
            kmeans_fit(&pts, params(4, 0), CodebookChannel::Wide),
            Err(Error::InsufficientData { points: 3, k: 4 })
        ));
    }

    #[test]
    fn duplicate_points_reseed_and_still_fit() {
        // five copies of one point plus two distinct ones, k = 4
        let pts = Matrix::from_rows(&[[1.0], [1.0], [1.0], [1.0], [1.0], [5.0], [9.0]]).unwrap();
        let cb = kmeans_fit(&pts, params(4, 0), CodebookChannel::Pooled).unwrap();
        assert_eq!(cb.k(), 4);
        assert!(cb.centroids.is_finite());
        assert_eq!(*cb.inertia_history.last().unwrap(), 0.0);
    }

    #[test]
    fn inertia_history_is_monotone() {
        let pts = random_points(1000, 2, 42);
        for seed in [1, 2] {
            let cb = kmeans_fit(&pts, params(8, seed), CodebookChannel::Pooled).unwrap();
            for w in cb.inertia_history.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
        }
    }

    #[test]
    fn fit_is_deterministic_across_chunks() {
        let pts = random_points(3 * CHUNK_POINTS + 17, 3, 5);
        let a = kmeans_fit(
            &pts,
            KMeansParams {
                k: 6,
                max_iters: 10,
                seed: 9,
            },
            CodebookChannel::Wide,
        )
        .unwrap();
        let b = kmeans_fit(
            &pts,
            KMeansParams {
                k: 6,
                max_iters: 10,
                seed: 9,
            },
            CodebookChannel::Wide,
        )
        .unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn assignment_tie_break_and_identity() {
        let centroids =
            Matrix::from_rows(&[[0.0, 0.0], [1.0, 0.0], [5.0, 5.0], [2.0, 2.0], [-1.0, 0.0]])
                .unwrap();
        let cb = Codebook::new(centroids, CodebookChannel::Wide).unwrap();
        let pts = Matrix::from_rows(&[[2.0, 2.0], [0.0, 0.0]]).unwrap();
        assert_eq!(assign_rows(&cb, &pts).unwrap(), vec![3, 0]);
        // equidistant from centroids 1 and 4
        let centroids = Matrix::from_rows(&[[9.0], [1.0], [7.0], [8.0], [-1.0]]).unwrap();
        let cb = Codebook::new(centroids, CodebookChannel::Wide).unwrap();
        assert_eq!(
            assign_rows(&cb, &Matrix::from_rows(&[[0.0]]).unwrap()).unwrap(),
            vec![1]
        );
    }

    #[test]
    fn assignment_matches_exhaustive_scan() {
        let cb = Codebook::new(random_points(9, 5, 2), CodebookChannel::Wide).unwrap();
        let pts = random_points(100, 5, 3);
        let labels = assign_rows(&cb, &pts).unwrap();
        let mut oracle_inertia = 0.0;
        for (i, p) in pts.iter_rows().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for j in 0..9 {
                let d: f64 = (0..5)
                    .map(|c| (p[c] - cb.centroids.get(j, c)).powi(2))
                    .sum();
                if d < best_d {
                    best = j;
                    best_d = d;
                }
            }
            assert_eq!(labels[i] as usize, best);
            oracle_inertia += best_d;
        }
        let got = inertia(&cb, &pts).unwrap();
        assert!((got - oracle_inertia).abs() <= 1e-9 * oracle_inertia);
    }

    #[test]
    fn inertia_examples_and_mismatch() {
        let centroids = Matrix::from_rows(&[[0.0, 0.0], [3.0, 4.0]]).unwrap();
        let cb = Codebook::new(centroids.clone(), CodebookChannel::Wide).unwrap();
        assert_eq!(inertia(&cb, &centroids).unwrap(), 0.0);
        assert_eq!(
            inertia(&cb, &Matrix::from_rows(&[[0.0, 2.0]]).unwrap()).unwrap(),
            4.0
        );
        assert!(matches!(
            inertia(&cb, &Matrix::from_rows(&[[0.0]]).unwrap()),
            Err(Error::DimensionMismatch {
                expected: 2,
                got: 1
            })
        ));
    }

    fn codebook(k: usize, dim: usize, channel: CodebookChannel, seed: u64) -> Codebook {
        Codebook::new(random_points(k, dim, seed), channel).unwrap()
    }

    #[test]
    fn pooling_offsets() {
        let pooled = pool_codebooks(
            codebook(500, 2, CodebookChannel::Wide, 1),
            codebook(500, 2, CodebookChannel::Narrow, 2),
            Offset::Auto,
        )
        .unwrap();
        assert_eq!(pooled.offset(), 500);
        assert_eq!(pooled.vocab_size(), 1000);
        assert_eq!(pooled.wide_range(), 0..500);
        assert_eq!(pooled.narrow_range(), 500..1000);

        assert!(matches!(
            pool_codebooks(
                codebook(500, 2, CodebookChannel::Wide, 1),
                codebook(500, 2, CodebookChannel::Narrow, 2),
                Offset::Fixed(499),
            ),
            Err(Error::OffsetTooSmall {
                offset: 499,
                wide_k: 500
            })
        ));

        let gapped = pool_codebooks(
            codebook(3, 2, CodebookChannel::Wide, 1),
            codebook(2, 2, CodebookChannel::Narrow, 2),
            Offset::Fixed(10),
        )
        .unwrap();
        assert_eq!(gapped.narrow_range().collect::<Vec<_>>(), vec![10, 11]);
        assert_eq!(gapped.vocab_size(), 12);
        assert_eq!(gapped.channel_of(5), None);
        assert_eq!(gapped.channel_of(11), Some(ChannelTag::Narrow));

        assert!(matches!(
            pool_codebooks(
                codebook(3, 2, CodebookChannel::Wide, 1),
                codebook(2, 3, CodebookChannel::Narrow, 2),
                Offset::Auto,
            ),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn channel_aware_labels() {
        let wide = codebook(10, 3, CodebookChannel::Wide, 1);
        let narrow = codebook(10, 3, CodebookChannel::Narrow, 2);
        let seventh = narrow.centroids.row(7).to_vec();
        let wide_seventh = wide.centroids.row(7).to_vec();
        let pooled = pool_codebooks(wide, narrow, Offset::Fixed(500)).unwrap();
        let f = fm(Matrix::from_rows(&[seventh]).unwrap());
        assert_eq!(
            pooled
                .assign_channel_aware(&f, ChannelTag::Narrow)
                .unwrap()
                .labels,
            vec![507]
        );
        let f = fm(Matrix::from_rows(&[wide_seventh]).unwrap());
        assert_eq!(
            pooled
                .assign_channel_aware(&f, ChannelTag::Wide)
                .unwrap()
                .labels,
            vec![7]
        );

        let f = fm(random_points(200, 3, 8));
        let w = pooled.assign_channel_aware(&f, ChannelTag::Wide).unwrap();
        let n = pooled.assign_channel_aware(&f, ChannelTag::Narrow).unwrap();
        assert!(w.labels.iter().all(|id| !n.labels.contains(id)));
    }

    #[test]
    fn codebook_json_round_trip() {
        let pts = random_points(50, 3, 4);
        let mut cb = kmeans_fit(&pts, params(4, 11), CodebookChannel::Narrow).unwrap();
        cb.quantize_to_text_precision();
        let text = cb.to_json();
        let back = Codebook::from_json(&text).unwrap();
        assert_eq!(back.centroids, cb.centroids);
        assert_eq!(back.channel, CodebookChannel::Narrow);
        assert_eq!(back.seed, 11);
        assert_eq!(back.to_json(), text);

        assert!(Codebook::from_json(
            "{\"feature_dim\": 2, \"k\": 2, \"channel\": \"wide\", \"centroids\": [[1, 2]]}"
        )
        .is_err());
    }

    #[test]
    fn pooled_json_round_trip() {
        let pooled = pool_codebooks(
            codebook(3, 2, CodebookChannel::Wide, 1),
            codebook(2, 2, CodebookChannel::Narrow, 2),
            Offset::Fixed(10),
        )
        .unwrap();
        let back = PooledCodebook::from_json(&pooled.to_json()).unwrap();
        assert_eq!(back.offset(), 10);
        assert_eq!(back.vocab_size(), 12);
        assert_eq!(back.to_json(), pooled.to_json());
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.1), "0.1");
        assert_eq!(format_sig9(-10.1), "-10.1");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789012.0), "123456789000");
        assert_eq!(format_sig9(2.5e-9), "2.5e-9");
        assert_eq!(format_sig9(0.0), "0");
    }

    #[test]
    fn offsets_parse() {
        assert_eq!("auto".parse::<Offset>().unwrap(), Offset::Auto);
        assert_eq!("500".parse::<Offset>().unwrap(), Offset::Fixed(500));
        assert!("-1".parse::<Offset>().is_err());
    }

    #[test]
    fn standardizer_zero_mean_unit_variance() {
        let mut pts = random_points(300, 4, 6);
        pts.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = 3.0 * *v + 7.0);
        let st = Standardizer::fit(&pts).unwrap();
        st.apply(&mut pts).unwrap();
        let again = Standardizer::fit(&pts).unwrap();
        for (m, s) in again.mean.iter().zip(&again.std) {
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
    }
}
