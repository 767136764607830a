//! Labeled multichannel time-series datasets: loading, windowing,
//! normalization, splitting, batching, and synthesis.
//!
//! All dataset storage is `f32`, matching the on-disk formats and the
//! production training path.

mod binary;
mod csvio;
mod synth;

pub use binary::{load_binary, write_binary};
pub use csvio::{load_csv, write_csv, CsvSchema};
pub use synth::{synth_generate, SynthSpec};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class assignment of one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Label {
    /// Multi-class: index in `[0, num_classes)`.
    Class(usize),
    /// Multi-label: one 0/1 flag per label.
    Multi(Vec<u8>),
}

impl Label {
    fn arity_tag(&self) -> u8 {
        match self {
            Label::Class(_) => 1,
            Label::Multi(_) => 2,
        }
    }

    /// Grouping key for stratification and error messages.
    fn class_key(&self) -> String {
        match self {
            Label::Class(c) => c.to_string(),
            Label::Multi(bits) => bits.iter().map(|b| (b + b'0') as char).collect(),
        }
    }
}

/// One labeled multichannel segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesRecord {
    pub record_id: String,
    /// Rank-2 `[channels, time]` samples.
    pub samples: Tensor<f32>,
    pub label: Label,
}

#[allow(clippy::len_without_is_empty)] // records hold at least one step
impl SeriesRecord {
    pub fn channels(&self) -> usize {
        self.samples.shape()[0]
    }

    /// Time steps; at least 1 by the tensor extent invariant.
    pub fn len(&self) -> usize {
        self.samples.shape()[1]
    }

    fn channel(&self, c: usize) -> &[f32] {
        let t = self.len();
        &self.samples.data()[c * t..(c + 1) * t]
    }
}

/// Per-channel z-score statistics fitted on training data.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    /// Floored at `STD_FLOOR`.
    pub std: Vec<f32>,
}

/// Smallest admissible per-channel standard deviation.
pub const STD_FLOOR: f32 = 1e-8;

/// A collection of records with uniform channel count and label arity.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<SeriesRecord>,
    pub num_classes: usize,
    /// Statistics the records were normalized with, when any.
    pub norm: Option<NormStats>,
}

impl Dataset {
    /// Builds a dataset, enforcing uniform channels, uniform label arity,
    /// in-range classes, and finite samples.
    pub fn new(records: Vec<SeriesRecord>, num_classes: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Schema("dataset has no records".into()));
        }
        if num_classes == 0 {
            return Err(Error::Schema("num_classes must be >= 1".into()));
        }
        let channels = records[0].channels();
        let arity = records[0].label.arity_tag();
        for r in &records {
            if r.channels() != channels {
                return Err(Error::Schema(format!(
                    "record `{}` has {} channels, dataset has {channels}",
                    r.record_id,
                    r.channels()
                )));
            }
            if r.label.arity_tag() != arity {
                return Err(Error::Schema(format!(
                    "record `{}` mixes label kinds within the dataset",
                    r.record_id
                )));
            }
            match &r.label {
                Label::Class(c) if *c >= num_classes => {
                    return Err(Error::Schema(format!(
                        "record `{}` has class {c}, dataset has {num_classes} classes",
                        r.record_id
                    )));
                }
                Label::Multi(bits) if bits.len() != num_classes => {
                    return Err(Error::Schema(format!(
                        "record `{}` has {} label flags, dataset has {num_classes}",
                        r.record_id,
                        bits.len()
                    )));
                }
                Label::Multi(bits) if bits.iter().any(|&b| b > 1) => {
                    return Err(Error::Schema(format!(
                        "record `{}` has a non-binary label flag",
                        r.record_id
                    )));
                }
                _ => {}
            }
            if !r.samples.is_finite() {
                return Err(Error::Schema(format!(
                    "record `{}` contains non-finite samples",
                    r.record_id
                )));
            }
        }
        Ok(Dataset { records, num_classes, norm: None })
    }

    pub fn channels(&self) -> usize {
        self.records[0].channels()
    }

    pub fn is_multi_label(&self) -> bool {
        matches!(self.records[0].label, Label::Multi(_))
    }

    /// The common record length, or a batching error when records are ragged.
    pub fn uniform_len(&self) -> Result<usize> {
        let t = self.records[0].len();
        for r in &self.records {
            if r.len() != t {
                return Err(Error::Batching(format!(
                    "record `{}` has length {}, expected {t}; window the dataset first",
                    r.record_id,
                    r.len()
                )));
            }
        }
        Ok(t)
    }
}

// ---- windowing ----------------------------------------------------------

/// Fixed-length segments of one record at offsets `0, stride, ...`; a tail
/// shorter than the window is dropped, and a record shorter than the window
/// yields no segments (callers count those via [`window_dataset`]).
pub fn window_segments(
    record: &SeriesRecord,
    window_len: usize,
    stride: usize,
) -> Result<Vec<SeriesRecord>> {
    if window_len == 0 || stride == 0 {
        return Err(Error::InvalidArgument(
            "window_segments: window_len and stride must be >= 1".into(),
        ));
    }
    let t = record.len();
    let c = record.channels();
    if window_len > t {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    let mut offset = 0;
    while offset + window_len <= t {
        let mut data = Vec::with_capacity(c * window_len);
        for ci in 0..c {
            data.extend_from_slice(&record.channel(ci)[offset..offset + window_len]);
        }
        out.push(SeriesRecord {
            record_id: format!("{}@{offset}", record.record_id),
            samples: Tensor::from_vec(&[c, window_len], data)?,
            label: record.label.clone(),
        });
        offset += stride;
    }
    Ok(out)
}

/// Windows every record; returns the new dataset and the number of records
/// that were too short to produce any segment.
pub fn window_dataset(
    dataset: &Dataset,
    window_len: usize,
    stride: usize,
) -> Result<(Dataset, usize)> {
    let mut records = Vec::new();
    let mut skipped = 0;
    for r in &dataset.records {
        let segments = window_segments(r, window_len, stride)?;
        if segments.is_empty() {
            skipped += 1;
        }
        records.extend(segments);
    }
    if records.is_empty() {
        return Err(Error::Schema(format!(
            "windowing with window_len {window_len} left no records"
        )));
    }
    let mut out = Dataset::new(records, dataset.num_classes)?;
    out.norm = dataset.norm.clone();
    Ok((out, skipped))
}

// ---- normalization -------------------------------------------------------

/// Per-channel mean and standard deviation over all records and time steps.
pub fn fit_norm(dataset: &Dataset) -> NormStats {
    let c = dataset.channels();
    let mut sums = vec![0.0f64; c];
    let mut count = 0usize;
    for r in &dataset.records {
        count += r.len();
        for (ci, sum) in sums.iter_mut().enumerate() {
            *sum += r.channel(ci).iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    let mean: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0f64; c];
    for r in &dataset.records {
        for (ci, acc) in sq.iter_mut().enumerate() {
            *acc += r
                .channel(ci)
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean[ci];
                    d * d
                })
                .sum::<f64>();

        }
    }
    NormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std: sq
            .iter()
            .map(|&s| ((s / count as f64).sqrt() as f32).max(STD_FLOOR))
            .collect(),
    }
}

/// Applies the given statistics (never refits); the returned dataset records
/// which statistics were used.
pub fn apply_norm(dataset: &Dataset, stats: &NormStats) -> Result<Dataset> {
    let c = dataset.channels();
    if stats.mean.len() != c || stats.std.len() != c {
        return Err(Error::Shape(format!(
            "normalization stats cover {} channels, dataset has {c}",
            stats.mean.len()
        )));
    }
    let mut out = dataset.clone();
    for r in &mut out.records {
        let t = r.len();
        let data = r.samples.data_mut();
        for ci in 0..c {
            let inv = 1.0 / stats.std[ci];
            let mu = stats.mean[ci];
            for v in &mut data[ci * t..(ci + 1) * t] {
                *v = (*v - mu) * inv;
            }
        }
    }
    out.norm = Some(stats.clone());
    Ok(out)
}

// ---- splitting -----------------------------------------------------------

/// Per-class proportional split, deterministic in `seed`; no record appears
/// in both halves. Classes with fewer than two records are rejected.
pub fn stratified_split(
    dataset: &Dataset,
    val_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(val_fraction > 0.0 && val_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "val_fraction must be in (0, 1), got {val_fraction}"
        )));
    }
    let mut groups: std::collections::BTreeMap<String, Vec<usize>> = Default::default();
    for (i, r) in dataset.records.iter().enumerate() {
        groups.entry(r.label.class_key()).or_default().push(i);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut val_idx = Vec::new();
    for (key, mut idx) in groups {
        if idx.len() < 2 {
            return Err(Error::Split { class: key, count: idx.len() });
        }
        let n_val = ((idx.len() as f64 * val_fraction).round() as usize)
            .clamp(1, idx.len() - 1);
        idx.shuffle(&mut rng);
        val_idx.extend_from_slice(&idx[..n_val]);
    }
    let in_val: std::collections::HashSet<usize> = val_idx.iter().copied().collect();
    let mut train_records = Vec::new();
    let mut val_records = Vec::new();
    for (i, r) in dataset.records.iter().enumerate() {
        if in_val.contains(&i) {
            val_records.push(r.clone());
        } else {
            train_records.push(r.clone());
        }
    }
    let mut train = Dataset::new(train_records, dataset.num_classes)?;
    let mut val = Dataset::new(val_records, dataset.num_classes)?;
    train.norm = dataset.norm.clone();
    val.norm = dataset.norm.clone();
    Ok((train, val))
}

// ---- batching --------------------------------------------------------------

/// One stacked training batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, C, T]` inputs, record order preserved within the batch.
    pub x: Tensor<f32>,
    pub labels: Vec<Label>,
}

/// Batches in a permutation derived from `(seed, epoch)`; the final partial
/// batch is emitted. Requires uniform record length.
pub fn batch_iter(
    dataset: &Dataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let t = dataset.uniform_len()?;
    let c = dataset.channels();
    let mut order: Vec<usize> = (0..dataset.records.len()).collect();
    if shuffle {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(epoch.wrapping_add(1));
        order.shuffle(&mut rng);
    }
    let mut batches = Vec::with_capacity(order.len().div_ceil(batch_size));
    for chunk in order.chunks(batch_size) {
        let n = chunk.len();
        let mut data = Vec::with_capacity(n * c * t);
        let mut labels = Vec::with_capacity(n);
        for &i in chunk {
            let r = &dataset.records[i];
            data.extend_from_slice(r.samples.data());
            labels.push(r.label.clone());
        }
        batches.push(Batch { x: Tensor::from_vec(&[n, c, t], data)?, labels });
    }
    Ok(batches)
}

// ---- class weights ---------------------------------------------------------

/// Inverse-frequency class weights `w[c] = N / (K * count[c])`, renormalized
/// so that `sum w[c] * count[c] == N`. Absent classes get weight 0 and a
/// warning.
pub fn class_weights(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0usize; num_classes];
    for &y in labels {
        counts[y] += 1;
    }
    let n = labels.len() as f64;
    let k = num_classes as f64;
    let mut weights: Vec<f64> = counts
        .iter()
        .enumerate()
        .map(|(c, &count)| {
            if count == 0 {
                log::warn!("class {c} has no records; its weight is 0");
                0.0
            } else {
                n / (k * count as f64)
            }
        })
        .collect();
    let weighted_total: f64 =
        weights.iter().zip(&counts).map(|(w, &c)| w * c as f64).sum();
    if weighted_total > 0.0 {
        let factor = n / weighted_total;
        for w in &mut weights {
            *w *= factor;
        }
    }
    weights
}
