//! Datasets, label-distribution resampling and minibatch sampling.

mod container;
mod idx;
mod synthetic;
mod usps;

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use container::{read_container, write_container, CONTAINER_MAGIC};
pub use idx::{load_idx, read_idx_images, read_idx_labels, write_idx_images, write_idx_labels};
pub use synthetic::{make_synthetic_pair, SyntheticPair, SyntheticSpec};
pub use usps::{convert_usps, parse_usps_libsvm, resize_bilinear};

/// Sampler state. Every sampler in this crate draws from a ChaCha8 stream so
/// runs are reproducible across platforms.
pub type SamplerRng = ChaCha8Rng;

pub fn sampler_rng(seed: u64) -> SamplerRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A labeled or unlabeled collection of equally-shaped instances.
///
/// Instances are stored row-major, one flattened instance per row, as `f32`
/// to keep digit-scale datasets small; networks widen to `f64` per batch.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainDataset {
    instances: Array2<f32>,
    shape: Vec<usize>,
    labels: Option<Vec<usize>>,
    label_domain_size: usize,
    name: String,
}

impl DomainDataset {
    pub fn new(
        name: impl Into<String>,
        instances: Array2<f32>,
        shape: Vec<usize>,
        labels: Option<Vec<usize>>,
        label_domain_size: usize,
    ) -> Result<Self> {
        let flat: usize = shape.iter().product();
        if shape.is_empty() || flat != instances.ncols() {
            return Err(Error::Shape(format!(
                "instance shape {:?} does not match row width {}",
                shape,
                instances.ncols()
            )));
        }
        if label_domain_size == 0 {
            return Err(Error::invalid("label_domain_size must be positive"));
        }
        if let Some(labels) = &labels {
            if labels.len() != instances.nrows() {
                return Err(Error::Shape(format!(
                    "label count mismatch: {} labels for {} instances",
                    labels.len(),
                    instances.nrows()
                )));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= label_domain_size) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    classes: label_domain_size,
                });
            }
        }
        Ok(Self {
            instances,
            shape,
            labels,
            label_domain_size,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.instances.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Flattened width of one instance.
    pub fn dim(&self) -> usize {
        self.instances.ncols()
    }

    pub fn instances(&self) -> &Array2<f32> {
        &self.instances
    }

    pub fn instance(&self, i: usize) -> ArrayView1<'_, f32> {
        self.instances.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn label_domain_size(&self) -> usize {
        self.label_domain_size
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Drops labels, as for the unlabeled side of an adaptation run.
    pub fn unlabeled(&self) -> Self {
        Self {
            labels: None,
            ..self.clone()
        }
    }

    pub(crate) fn require_labels(&self) -> Result<&[usize]> {
        self.labels
            .as_deref()
            .ok_or_else(|| Error::Unlabeled(self.name.clone()))
    }

    /// Instance count per class.
    pub fn class_counts(&self) -> Result<Vec<usize>> {
        let labels = self.require_labels()?;
        let mut counts = vec![0; self.label_domain_size];
        for &l in labels {
            counts[l] += 1;
        }
        Ok(counts)
    }

    /// Rows `indices` as a new dataset, keeping labels and metadata.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            instances: self.instances.select(Axis(0), indices),
            shape: self.shape.clone(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            label_domain_size: self.label_domain_size,
            name: self.name.clone(),
        }
    }

    /// Widened rows for feeding a network.
    pub fn rows_f64(&self, indices: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((indices.len(), self.dim()));
        for (mut dst, &i) in out.outer_iter_mut().zip(indices) {
            dst.zip_mut_with(&self.instances.row(i), |d, &s| *d = s as f64);
        }
        out
    }

    pub fn all_rows_f64(&self) -> Array2<f64> {
        self.instances.mapv(|v| v as f64)
    }

    fn class_pools(&self) -> Result<Vec<Vec<usize>>> {
        let labels = self.require_labels()?;
        let mut pools = vec![Vec::new(); self.label_domain_size];
        for (i, &l) in labels.iter().enumerate() {
            pools[l].push(i);
        }
        Ok(pools)
    }
}

/// One batch of network inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub inputs: Array2<f64>,
    pub labels: Option<Vec<usize>>,
    /// `true` for rows drawn from the source pool (partial-mode augmentation).
    pub origin_mask: Vec<bool>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn source_rows(&self) -> usize {
        self.origin_mask.iter().filter(|&&m| m).count()
    }
}

/// Number of rows an `m`-row batch draws from the source pool at
/// `mix_ratio`, rounding half up.
pub fn source_share(m: usize, mix_ratio: f64) -> usize {
    ((m as f64 * mix_ratio) + 0.5).floor() as usize
}

/// Downsamples classes so class `k` keeps `floor(n_k * r_k)` instances with
/// `r_k` linear from `start_ratio` (class 0) to `end_ratio` (class K-1).
///
/// Sampling is without replacement. Output keeps the original row order.
pub fn resample_linear_decay(
    ds: &DomainDataset,
    start_ratio: f64,
    end_ratio: f64,
    seed: u64,
) -> Result<DomainDataset> {
    if !(end_ratio > 0.0 && end_ratio <= start_ratio && start_ratio <= 1.0) {
        return Err(Error::invalid(format!(
            "ratios must satisfy 0 < end <= start <= 1, got start={start_ratio} end={end_ratio}"
        )));
    }
    let pools = ds.class_pools()?;
    let k = ds.label_domain_size();
    let mut rng = sampler_rng(seed);
    let mut keep = Vec::new();
    for (class, pool) in pools.iter().enumerate() {
        let ratio = decay_ratio(class, k, start_ratio, end_ratio);
        // The small slack absorbs representation error such as 100 * 0.3.
        let count = ((pool.len() as f64) * ratio + 1e-9).floor() as usize;
        let mut pool = pool.clone();
        pool.shuffle(&mut rng);
        keep.extend_from_slice(&pool[..count.min(pool.len())]);
    }
    keep.sort_unstable();
    Ok(ds.select(&keep))
}

pub(crate) fn decay_ratio(class: usize, k: usize, start: f64, end: f64) -> f64 {
    if k < 2 {
        return start;
    }
    start + (end - start) * class as f64 / (k - 1) as f64
}

/// Keeps only instances whose label is in `keep_classes`. Labels are not
/// re-indexed, so the label domain stays that of the source.
pub fn subset_partial(ds: &DomainDataset, keep_classes: &BTreeSet<usize>) -> Result<DomainDataset> {
    if keep_classes.is_empty() {
        return Err(Error::invalid("keep_classes is empty"));
    }
    let k = ds.label_domain_size();
    if let Some(&bad) = keep_classes.iter().find(|&&c| c >= k) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            classes: k,
        });
    }
    let labels = ds.require_labels()?;
    let keep: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, l)| keep_classes.contains(l))
        .map(|(i, _)| i)
        .collect();
    Ok(ds.select(&keep))
}

/// Oversamples minority classes with replacement until every class present
/// matches the largest class count. Classes with no instances stay empty.
pub fn balance_source(ds: &DomainDataset, seed: u64) -> Result<DomainDataset> {
    let pools = ds.class_pools()?;
    let target = pools.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = sampler_rng(seed);
    let mut rows: Vec<usize> = (0..ds.len()).collect();
    for pool in pools.iter().filter(|p| !p.is_empty()) {
        for _ in pool.len()..target {
            rows.push(pool[rng.random_range(0..pool.len())]);
        }
    }
    Ok(ds.select(&rows))
}

/// Draws an `m`-row batch: `source_share(m, mix_ratio)` rows from `source`
/// (labels discarded, `origin_mask` set) and the rest from `target`, then
/// shuffles rows. Draws are uniform with replacement.
pub fn sample_minibatch(
    target: &DomainDataset,
    source: &DomainDataset,
    m: usize,
    mix_ratio: f64,
    rng: &mut SamplerRng,
) -> Result<Minibatch> {
    if m == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    if !(0.0..=1.0).contains(&mix_ratio) {
        return Err(Error::invalid(format!("mix_ratio {mix_ratio} outside [0, 1]")));
    }
    let from_source = source_share(m, mix_ratio);
    let from_target = m - from_source;
    if from_source > 0 && source.is_empty() {
        return Err(Error::invalid("source pool is empty but its share is nonzero"));
    }
    if from_target > 0 && target.is_empty() {
        return Err(Error::invalid("target pool is empty but its share is nonzero"));
    }
    if from_source > 0 && source.dim() != target.dim() {
        return Err(Error::Shape("source and target instance widths differ".into()));
    }
    let mut picks: Vec<(bool, usize)> = Vec::with_capacity(m);
    picks.extend((0..from_source).map(|_| (true, rng.random_range(0..source.len()))));
    picks.extend((0..from_target).map(|_| (false, rng.random_range(0..target.len()))));
    picks.shuffle(rng);

    let dim = if from_target > 0 { target.dim() } else { source.dim() };
    let mut inputs = Array2::zeros((m, dim));
    for (mut row, &(is_source, i)) in inputs.outer_iter_mut().zip(&picks) {
        let src = if is_source { source.instance(i) } else { target.instance(i) };
        row.zip_mut_with(&src, |d, &s| *d = s as f64);
    }
    Ok(Minibatch {
        inputs,
        labels: None,
        origin_mask: picks.iter().map(|&(s, _)| s).collect(),
    })
}

/// Labeled batch of `m` rows drawn uniformly with replacement from `ds`.
pub fn sample_labeled(ds: &DomainDataset, m: usize, rng: &mut SamplerRng) -> Result<Minibatch> {
    if ds.is_empty() || m == 0 {
        return Err(Error::invalid("cannot sample from an empty dataset"));
    }
    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..ds.len())).collect();
    Ok(Minibatch {
        inputs: ds.rows_f64(&idx),
        labels: ds.labels().map(|l| idx.iter().map(|&i| l[i]).collect()),
        origin_mask: vec![true; m],
    })
}
