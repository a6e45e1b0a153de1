//! Target-domain accuracy, clustering accuracy and embedding export.

use std::path::Path;

use ndarray::{s, Array2};
use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};
use crate::losses::soft_assign;
use crate::nets::{argmax_rows, classify, encode, ModelBundle, Which};

/// Rows per forward pass when running a whole dataset through a network.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub iter: usize,
    pub overall_acc: f64,
    /// Recall per class; `None` for classes absent from the labels.
    pub per_class_acc: Vec<Option<f64>>,
    pub cluster_acc: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

impl MetricsReport {
    /// Builds the report from predictions and labels in `[0, k)`.
    pub fn from_predictions(labels: &[usize], predictions: &[usize], k: usize, clusters: &[usize]) -> Result<Self> {
        if labels.len() != predictions.len() || labels.len() != clusters.len() {
            return Err(Error::Shape("labels, predictions and clusters differ in length".into()));
        }
        let mut confusion = vec![vec![0u64; k]; k];
        for (&y, &p) in labels.iter().zip(predictions) {
            if y >= k || p >= k {
                return Err(Error::LabelOutOfRange {
                    label: y.max(p),
                    classes: k,
                });
            }
            confusion[y][p] += 1;
        }
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..k).map(|c| confusion[c][c]).sum();
        let per_class_acc = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            iter: 0,
            overall_acc: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            per_class_acc,
            cluster_acc: if labels.is_empty() {
                0.0
            } else {
                cluster_accuracy(clusters, labels)?
            },
            confusion,
        })
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Features for every instance of `ds`, computed in chunks.
pub fn encode_dataset(bundle: &ModelBundle, which: Which, ds: &DomainDataset) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((ds.len(), bundle.feature_dim()));
    let idx: Vec<usize> = (0..ds.len()).collect();
    for (n, chunk) in idx.chunks(CHUNK).enumerate() {
        let z = encode(bundle, which, &ds.rows_f64(chunk))?;
        let start = n * CHUNK;
        out.slice_mut(s![start..start + chunk.len(), ..]).assign(&z);
    }
    Ok(out)
}

/// Argmax class of `C(E_t(x))` per instance; ties go to the lower index.
pub fn predict(bundle: &ModelBundle, ds: &DomainDataset) -> Result<Vec<usize>> {
    let z = encode_dataset(bundle, Which::Target, ds)?;
    Ok(argmax_rows(&classify(bundle, &z)?))
}

/// Accuracy of the target encoder and classifier on a labeled dataset.
///
/// With `centroids`, clustering accuracy scores the nearest-cluster
/// assignments (argmax of the soft assignment); otherwise it scores the
/// class predictions themselves.
pub fn evaluate(bundle: &ModelBundle, target: &DomainDataset, centroids: Option<&Array2<f64>>) -> Result<MetricsReport> {
    let labels = target.require_labels()?;
    let z = encode_dataset(bundle, Which::Target, target)?;
    let predictions = argmax_rows(&classify(bundle, &z)?);
    let clusters = match centroids {
        Some(c) if !target.is_empty() => argmax_rows(&soft_assign(&z, c, 1.0)?.q),
        _ => predictions.clone(),
    };
    MetricsReport::from_predictions(labels, &predictions, bundle.num_classes(), &clusters)
}

/// Best one-to-one matching of clusters to classes, as a fraction of
/// instances, via optimal assignment on the contingency table.
pub fn cluster_accuracy(assignments: &[usize], labels: &[usize]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} assignments for {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Ok(0.0);
    }
    let k = assignments.iter().chain(labels).max().unwrap() + 1;
    let mut table = Matrix::new(k, k, 0i64);
    for (&a, &y) in assignments.iter().zip(labels) {
        table[(a, y)] += 1;
    }
    let (matched, _) = kuhn_munkres(&table);
    Ok(matched as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

/// Writes `domain_tag,label,f0..f{F-1}` rows: source rows through `E_s`,
/// target rows through `E_t`, then one `centroid` row per centroid with
/// label -1. Unlabeled instances also get label -1.
pub fn export_embeddings(
    bundle: &ModelBundle,
    datasets: &[(DomainTag, &DomainDataset)],
    centroids: Option<&Array2<f64>>,
    path: &Path,
) -> Result<()> {
    let f = bundle.feature_dim();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["domain_tag".to_string(), "label".to_string()];
    header.extend((0..f).map(|j| format!("f{j}")));
    w.write_record(&header)?;
    for &(tag, ds) in datasets {
        let which = match tag {
            DomainTag::Source => Which::Source,
            DomainTag::Target => Which::Target,
        };
        let z = encode_dataset(bundle, which, ds)?;
        for (i, row) in z.outer_iter().enumerate() {
            let label = ds.labels().map_or(-1, |l| l[i] as i64);
            let mut rec = vec![tag.as_str().to_string(), label.to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    if let Some(c) = centroids {
        for row in c.outer_iter() {
            let mut rec = vec!["centroid".to_string(), "-1".to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1];
        let r = MetricsReport::from_predictions(&y, &y, 4, &y).unwrap();
        assert_eq!(r.overall_acc, 1.0);
        assert_eq!(r.per_class_acc, vec![Some(1.0), Some(1.0), Some(1.0), None]);
        assert_eq!(r.cluster_acc, 1.0);
    }

    #[test]
    fn hand_counted_example() {
        let r = MetricsReport::from_predictions(&[0, 0, 1], &[0, 1, 1], 2, &[0, 1, 1]).unwrap();
        assert!((r.overall_acc - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.per_class_acc, vec![Some(0.5), Some(1.0)]);
        assert_eq!(r.confusion, vec![vec![1, 1], vec![0, 1]]);
    }

    #[test]
    fn cluster_accuracy_values() {
        assert_eq!(cluster_accuracy(&[2, 2, 0, 1], &[0, 0, 1, 2]).unwrap(), 1.0);
        assert!((cluster_accuracy(&[0, 1, 1], &[0, 0, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(cluster_accuracy(&[0], &[0, 1]).is_err());
    }
}
