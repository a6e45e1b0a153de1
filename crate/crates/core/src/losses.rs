//! The adaptation objectives and their gradients with respect to their
//! immediate inputs (probabilities, discriminator outputs, features,
//! centroids). Chaining into network parameters happens in
//! [`crate::adapt::objectives`].
//!
//! Every logarithm sees its argument clamped at [`EPS`]; where the clamp is
//! active the derivative is zero.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{Error, Result};

pub const EPS: f64 = 1e-8;

fn mean_or_zero(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn check_labels(probs: &Array2<f64>, labels: &[usize]) -> Result<()> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows for {} labels",
            probs.nrows(),
            labels.len()
        )));
    }
    let k = probs.ncols();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    Ok(())
}

/// Mean log-probability of the true class (to maximize; always <= 0).
pub fn classification_loss(probs: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    let sum: f64 = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| probs[[i, y]].clamp(EPS, 1.0).ln())
        .sum();
    Ok(mean_or_zero(sum, labels.len()))
}

/// Gradient of [`classification_loss`] with respect to the softmax logits
/// that produced `probs`.
pub fn classification_grad_logits(probs: &Array2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    check_labels(probs, labels)?;
    let m = labels.len() as f64;
    let mut g = Array2::zeros(probs.raw_dim());
    for (i, &y) in labels.iter().enumerate() {
        if probs[[i, y]] < EPS {
            continue;
        }
        for j in 0..probs.ncols() {
            let delta = if j == y { 1.0 } else { 0.0 };
            g[[i, j]] = (delta - probs[[i, j]]) / m;
        }
    }
    Ok(g)
}

fn clamp_open(d: f64) -> f64 {
    d.clamp(EPS, 1.0 - EPS)
}

fn inside(d: f64) -> bool {
    (EPS..=1.0 - EPS).contains(&d)
}

/// `mean log D(source) + mean log(1 - D(target))` (to maximize).
pub fn discriminator_loss(d_source: ArrayView1<f64>, d_target: ArrayView1<f64>) -> f64 {
    let s: f64 = d_source.iter().map(|&d| clamp_open(d).ln()).sum();
    let t: f64 = d_target.iter().map(|&d| (1.0 - clamp_open(d)).ln()).sum();
    mean_or_zero(s, d_source.len()) + mean_or_zero(t, d_target.len())
}

/// Derivatives of [`discriminator_loss`] with respect to each `D` value.
pub fn discriminator_loss_grad(
    d_source: ArrayView1<f64>,
    d_target: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let (ms, mt) = (d_source.len() as f64, d_target.len() as f64);
    let gs = d_source.mapv(|d| if inside(d) { 1.0 / (ms * d) } else { 0.0 });
    let gt = d_target.mapv(|d| if inside(d) { -1.0 / (mt * (1.0 - d)) } else { 0.0 });
    (gs, gt)
}

/// `mean log D(target)` with inverted labels (to maximize).
pub fn encoder_loss(d_target: ArrayView1<f64>) -> f64 {
    let t: f64 = d_target.iter().map(|&d| clamp_open(d).ln()).sum();
    mean_or_zero(t, d_target.len())
}

pub fn encoder_loss_grad(d_target: ArrayView1<f64>) -> Array1<f64> {
    let mt = d_target.len() as f64;
    d_target.mapv(|d| if inside(d) { 1.0 / (mt * d) } else { 0.0 })
}

/// Student-t soft assignments `q_ic` of instances to centroids.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment {
    pub q: Array2<f64>,
    pub alpha: f64,
}

/// Sharpened targets `p_ic` and soft cluster frequencies `f_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryDistribution {
    pub p: Array2<f64>,
    pub f: Array1<f64>,
}

/// `A`, whose column `c` holds the class prediction for centroid `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidPredictionMatrix {
    pub a: Array2<f64>,
}

impl CentroidPredictionMatrix {
    /// From classifier output rows (one row per centroid).
    pub fn from_prediction_rows(rows: &Array2<f64>) -> Self {
        Self {
            a: rows.t().to_owned(),
        }
    }
}

fn squared_distances(features: &Array2<f64>, centroids: &Array2<f64>) -> Array2<f64> {
    let mut d = Array2::zeros((features.nrows(), centroids.nrows()));
    for (i, z) in features.outer_iter().enumerate() {
        for (c, mu) in centroids.outer_iter().enumerate() {
            d[[i, c]] = z.iter().zip(mu.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    d
}

/// `q_ic` proportional to `(1 + |z_i - mu_c|^2 / alpha)^(-(alpha + 1) / 2)`.
pub fn soft_assign(features: &Array2<f64>, centroids: &Array2<f64>, alpha: f64) -> Result<SoftAssignment> {
    if centroids.nrows() < 2 {
        return Err(Error::invalid("soft assignment needs at least 2 centroids"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid(format!("alpha must be positive, got {alpha}")));
    }
    if features.ncols() != centroids.ncols() {
        return Err(Error::Shape(format!(
            "features have width {}, centroids {}",
            features.ncols(),
            centroids.ncols()
        )));
    }
    let power = -(alpha + 1.0) / 2.0;
    let mut q = squared_distances(features, centroids).mapv(|d| (1.0 + d / alpha).powf(power));
    for mut row in q.outer_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(SoftAssignment { q, alpha })
}

/// `p_ic = (q_ic^2 / f_c) / sum_c' (q_ic'^2 / f_c')` with `f_c = sum_i q_ic`.
pub fn auxiliary_dist(q: &SoftAssignment) -> Result<AuxiliaryDistribution> {
    let f = q.q.sum_axis(Axis(0));
    if let Some(c) = f.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::invalid(format!("soft frequency of cluster {c} is zero")));
    }
    let mut p = q.q.mapv(|v| v * v);
    p /= &f;
    for mut row in p.outer_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    Ok(AuxiliaryDistribution { p, f })
}

/// `KL(P || Q)` summed over instances (to minimize).
pub fn clustering_loss(p: &AuxiliaryDistribution, q: &SoftAssignment) -> Result<f64> {
    if p.p.dim() != q.q.dim() {
        return Err(Error::Shape(format!(
            "P is {:?} but Q is {:?}",
            p.p.dim(),
            q.q.dim()
        )));
    }
    Ok(p.p
        .iter()
        .zip(q.q.iter())
        .filter(|(&pv, _)| pv > 0.0)
        .map(|(&pv, &qv)| pv * (pv.ln() - qv.max(EPS).ln()))
        .sum())
}

/// Gradients of [`clustering_loss`] with `P` held constant, with respect
/// to the features and the centroids that produced `q`.
pub fn clustering_loss_grad(
    features: &Array2<f64>,
    centroids: &Array2<f64>,
    p: &AuxiliaryDistribution,
    q: &SoftAssignment,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if p.p.dim() != q.q.dim() || q.q.dim() != (features.nrows(), centroids.nrows()) {
        return Err(Error::Shape("P, Q, features and centroids disagree".into()));
    }
    let alpha = q.alpha;
    let scale = (alpha + 1.0) / alpha;
    let dist = squared_distances(features, centroids);
    let mut g_feat = Array2::zeros(features.raw_dim());
    let mut g_cent = Array2::zeros(centroids.raw_dim());
    for i in 0..features.nrows() {
        // dL/dlog q_ic = -g_ic; zero where the clamp is active or p is zero
        let g: Vec<f64> = (0..centroids.nrows())
            .map(|c| if q.q[[i, c]] >= EPS { p.p[[i, c]] } else { 0.0 })
            .collect();
        let total: f64 = g.iter().sum();
        for c in 0..centroids.nrows() {
            // coefficient on d log w_ic
            let coef = total * q.q[[i, c]] - g[c];
            if coef == 0.0 {
                continue;
            }
            let k = coef * scale / (1.0 + dist[[i, c]] / alpha);
            for j in 0..features.ncols() {
                let diff = features[[i, j]] - centroids[[c, j]];
                g_feat[[i, j]] -= k * diff;
                g_cent[[c, j]] += k * diff;
            }
        }
    }
    Ok((g_feat, g_cent))
}

/// Off-diagonal Frobenius norm of `A^T A` (to minimize).
pub fn dissimilarity_loss(a: &CentroidPredictionMatrix) -> f64 {
    let gram = a.a.t().dot(&a.a);
    let mut s = 0.0;
    for ((c, j), &v) in gram.indexed_iter() {
        if c != j {
            s += v * v;
        }
    }
    s.sqrt()
}

/// Gradient of [`dissimilarity_loss`] with respect to the entries of `A`.
/// Zero at the (non-differentiable) minimum.
pub fn dissimilarity_loss_grad(a: &CentroidPredictionMatrix) -> Array2<f64> {
    let mut gram = a.a.t().dot(&a.a);
    let k = gram.nrows();
    for c in 0..k {
        gram[[c, c]] = 0.0;
    }
    let norm = gram.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Array2::zeros(a.a.raw_dim());
    }
    a.a.dot(&gram) * (2.0 / norm)
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use ndarray::{array, Array1};

    const TOL: f64 = 1e-6;

    #[test]
    fn classification_values() {
        let onehot = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(classification_loss(&onehot, &[0, 1]).unwrap().abs() < TOL);
        let uniform = Array2::from_elem((3, 10), 0.1);
        let v = classification_loss(&uniform, &[0, 4, 9]).unwrap();
        assert!((v - (-2.302585)).abs() < TOL);
        let v = classification_loss(&array![[0.8, 0.2]], &[0]).unwrap();
        assert!((v - (-0.22314)).abs() < 1e-5);
        assert!(matches!(
            classification_loss(&onehot, &[0, 2]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn adversarial_values() {
        let half = Array1::from_elem(4, 0.5);
        assert!((discriminator_loss(half.view(), half.view()) - (-1.386294)).abs() < TOL);
        let v = discriminator_loss(Array1::from_elem(3, 0.9).view(), Array1::from_elem(5, 0.1).view());
        assert!((v - (-0.210721)).abs() < TOL);
        let v = discriminator_loss(Array1::ones(2).view(), Array1::zeros(2).view());
        assert!(v.abs() < 1e-7 && v.is_finite());

        assert!((encoder_loss(half.view()) - (-0.693147)).abs() < TOL);
        assert!(encoder_loss(Array1::from_elem(2, 1.0 - EPS).view()).abs() < 1e-7);
        assert!((encoder_loss(Array1::from_elem(2, 0.25).view()) - (-1.386294)).abs() < TOL);
        assert!(encoder_loss(Array1::zeros(3).view()).is_finite());
    }

    #[test]
    fn soft_assignment_values() {
        let z = array![[0.0, 0.0]];
        let q = soft_assign(&z, &array![[1.0, 0.0], [-1.0, 0.0]], 1.0).unwrap();
        assert!((q.q[[0, 0]] - 0.5).abs() < TOL);
        // squared distances 1 and 4 under alpha = 1
        let q = soft_assign(&z, &array![[1.0, 0.0], [0.0, 2.0]], 1.0).unwrap();
        assert!((q.q[[0, 0]] - 0.714286).abs() < TOL);
        assert!((q.q[[0, 1]] - 0.285714).abs() < TOL);
        let q = soft_assign(&z, &array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 1.0).unwrap();
        assert!(q.q[[0, 0]] > q.q[[0, 1]] && q.q[[0, 0]] > q.q[[0, 2]]);
        assert!(soft_assign(&z, &array![[0.0, 0.0]], 1.0).is_err());
        assert!(soft_assign(&z, &array![[0.0, 0.0], [1.0, 1.0]], 0.0).is_err());
    }

    #[test]
    fn auxiliary_values() {
        let q = SoftAssignment {
            q: array![[0.5, 0.5]],
            alpha: 1.0,
        };
        assert!((auxiliary_dist(&q).unwrap().p[[0, 0]] - 0.5).abs() < TOL);
        let q = SoftAssignment {
            q: array![[1.0, 0.0], [0.0, 1.0]],
            alpha: 1.0,
        };
        assert_eq!(auxiliary_dist(&q).unwrap().p, q.q);
        let q = SoftAssignment {
            q: array![[0.8, 0.2], [0.4, 0.6]],
            alpha: 1.0,
        };
        let p = auxiliary_dist(&q).unwrap();
        assert!((p.f[0] - 1.2).abs() < TOL && (p.f[1] - 0.8).abs() < TOL);
        assert!((p.p[[0, 0]] - 0.914286).abs() < TOL);
        assert!((p.p[[0, 1]] - 0.085714).abs() < TOL);
        let zero = SoftAssignment {
            q: array![[1.0, 0.0]],
            alpha: 1.0,
        };
        assert!(auxiliary_dist(&zero).is_err());
    }

    #[test]
    fn clustering_values() {
        let q = SoftAssignment {
            q: array![[0.3, 0.7], [0.6, 0.4]],
            alpha: 1.0,
        };
        let same = AuxiliaryDistribution {
            p: q.q.clone(),
            f: q.q.sum_axis(Axis(0)),
        };
        assert!(clustering_loss(&same, &q).unwrap().abs() < TOL);
        let q = SoftAssignment {
            q: array![[0.5, 0.5]],
            alpha: 1.0,
        };
        let p = AuxiliaryDistribution {
            p: array![[1.0, 0.0]],
            f: array![0.5, 0.5],
        };
        assert!((clustering_loss(&p, &q).unwrap() - 0.693147).abs() < TOL);
        let bad = AuxiliaryDistribution {
            p: array![[1.0, 0.0], [0.0, 1.0]],
            f: array![1.0, 1.0],
        };
        assert!(clustering_loss(&bad, &q).is_err());
    }

    #[test]
    fn dissimilarity_values() {
        let id = CentroidPredictionMatrix { a: Array2::eye(3) };
        assert!(dissimilarity_loss(&id).abs() < TOL);
        let same = CentroidPredictionMatrix {
            a: array![[1.0, 1.0], [0.0, 0.0]],
        };
        assert!((dissimilarity_loss(&same) - 1.414214).abs() < TOL);
        let half = CentroidPredictionMatrix {
            a: Array2::from_elem((2, 2), 0.5),
        };
        assert!((dissimilarity_loss(&half) - 0.707107).abs() < TOL);
        assert_eq!(dissimilarity_loss_grad(&id), Array2::<f64>::zeros((3, 3)));
    }
}
