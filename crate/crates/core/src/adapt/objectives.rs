//! Each objective evaluated on a batch together with its gradient with
//! respect to exactly the parameter groups it updates.
//!
//! Gradients are of the objective as written: `cla`, `adv` and `enc` are
//! maximized, `dec` and `dis` minimized. Callers choose the sign.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::losses::{
    auxiliary_dist, classification_grad_logits, classification_loss, clustering_loss,
    clustering_loss_grad, discriminator_loss, discriminator_loss_grad, dissimilarity_loss,
    dissimilarity_loss_grad, encoder_loss, encoder_loss_grad, soft_assign, CentroidPredictionMatrix,
};
use crate::nets::{softmax_rows, Component, ModelBundle, Network};

#[derive(Debug, Clone)]
pub struct ClassificationGrads {
    pub loss: f64,
    pub source_encoder: Vec<f64>,
    pub classifier: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorGrads {
    pub loss: f64,
    pub discriminator: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub loss: f64,
    pub target_encoder: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ClusteringGrads {
    pub loss: f64,
    pub target_encoder: Vec<f64>,
    pub centroids: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct DissimilarityGrads {
    pub loss: f64,
    pub centroids: Array2<f64>,
}

fn finite(v: f64, name: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(format!("loss {name}")))
    }
}

fn finite_vec(g: &[f64], name: &str) -> Result<()> {
    if g.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("gradient of {name}")))
    }
}

/// Backprop through a row softmax.
pub(crate) fn softmax_backward(probs: &Array2<f64>, grad_probs: &Array2<f64>) -> Array2<f64> {
    let dot = (probs * grad_probs).sum_axis(Axis(1)).insert_axis(Axis(1));
    probs * &(grad_probs - &dot)
}

/// Logit gradient for a two-way softmax given d(objective)/d(P(source)).
fn source_prob_backward(d: &Array1<f64>, grad_d: &Array1<f64>) -> Array2<f64> {
    let mut g = Array2::zeros((d.len(), 2));
    for i in 0..d.len() {
        let s = grad_d[i] * d[i] * (1.0 - d[i]);
        g[[i, 0]] = s;
        g[[i, 1]] = -s;
    }
    g
}

fn source_prob(disc: &Network, z: &Array2<f64>) -> (Array1<f64>, crate::nets::Tape) {
    let (logits, tape) = disc.forward_tape(z);
    let p = softmax_rows(&logits);
    (p.index_axis(Axis(1), 0).to_owned(), tape)
}

/// Source classification objective, for `E_s` and `C`.
pub fn classification(bundle: &ModelBundle, inputs: &Array2<f64>, labels: &[usize]) -> Result<ClassificationGrads> {
    let enc = bundle.network(Component::SourceEncoder);
    let cls = bundle.network(Component::Classifier);
    let (z, enc_tape) = enc.forward_tape(inputs);
    let (logits, cls_tape) = cls.forward_tape(&z);
    let probs = softmax_rows(&logits);
    let loss = finite(classification_loss(&probs, labels)?, "L_cla")?;
    let g_logits = classification_grad_logits(&probs, labels)?;
    let (g_z, g_cls) = cls.backward(&cls_tape, &g_logits, true);
    let (_, g_enc) = enc.backward(&enc_tape, &g_z, true);
    let (source_encoder, classifier) = (g_enc.unwrap(), g_cls.unwrap());
    finite_vec(&source_encoder, "L_cla")?;
    finite_vec(&classifier, "L_cla")?;
    Ok(ClassificationGrads {
        loss,
        source_encoder,
        classifier,
    })
}

/// Discriminator objective on `E_s(source)` vs `E_t(target)`, for `D`.
pub fn adversarial(
    bundle: &ModelBundle,
    source_inputs: &Array2<f64>,
    target_inputs: &Array2<f64>,
) -> Result<DiscriminatorGrads> {
    let disc = bundle.network(Component::Discriminator);
    let zs = bundle.network(Component::SourceEncoder).forward(source_inputs);
    let zt = bundle.network(Component::TargetEncoder).forward(target_inputs);
    let (ds, tape_s) = source_prob(disc, &zs);
    let (dt, tape_t) = source_prob(disc, &zt);
    let loss = finite(discriminator_loss(ds.view(), dt.view()), "L_adv")?;
    let (gs, gt) = discriminator_loss_grad(ds.view(), dt.view());
    let (_, g1) = disc.backward(&tape_s, &source_prob_backward(&ds, &gs), true);
    let (_, g2) = disc.backward(&tape_t, &source_prob_backward(&dt, &gt), true);
    let mut discriminator = g1.unwrap();
    for (a, b) in discriminator.iter_mut().zip(g2.unwrap()) {
        *a += b;
    }
    finite_vec(&discriminator, "L_adv")?;
    Ok(DiscriminatorGrads { loss, discriminator })
}

/// Inverted-label generator objective, for `E_t`.
pub fn encoder(bundle: &ModelBundle, target_inputs: &Array2<f64>) -> Result<EncoderGrads> {
    let enc = bundle.network(Component::TargetEncoder);
    let disc = bundle.network(Component::Discriminator);
    let (zt, enc_tape) = enc.forward_tape(target_inputs);
    let (dt, disc_tape) = source_prob(disc, &zt);
    let loss = finite(encoder_loss(dt.view()), "L_enc")?;
    let g_d = encoder_loss_grad(dt.view());
    let (g_z, _) = disc.backward(&disc_tape, &source_prob_backward(&dt, &g_d), false);
    let (_, g_enc) = enc.backward(&enc_tape, &g_z, true);
    let target_encoder = g_enc.unwrap();
    finite_vec(&target_encoder, "L_enc")?;
    Ok(EncoderGrads { loss, target_encoder })
}

/// KL clustering objective on `E_t(target)`, for `E_t` and the centroids.
/// The auxiliary distribution is recomputed here and held constant.
pub fn clustering(
    bundle: &ModelBundle,
    centroids: &Array2<f64>,
    target_inputs: &Array2<f64>,
    alpha: f64,
) -> Result<ClusteringGrads> {
    let enc = bundle.network(Component::TargetEncoder);
    let (z, tape) = enc.forward_tape(target_inputs);
    let q = soft_assign(&z, centroids, alpha)?;
    let p = auxiliary_dist(&q)?;
    let loss = finite(clustering_loss(&p, &q)?, "L_dec")?;
    let (g_z, g_cent) = clustering_loss_grad(&z, centroids, &p, &q)?;
    let (_, g_enc) = enc.backward(&tape, &g_z, true);
    let target_encoder = g_enc.unwrap();
    finite_vec(&target_encoder, "L_dec")?;
    finite_vec(g_cent.as_slice().unwrap(), "L_dec")?;
    Ok(ClusteringGrads {
        loss,
        target_encoder,
        centroids: g_cent,
    })
}

/// Cluster dissimilarity objective, for the centroids only. Gradients flow
/// through the classifier's forward pass but not into its parameters.
pub fn dissimilarity(bundle: &ModelBundle, centroids: &Array2<f64>) -> Result<DissimilarityGrads> {
    let cls = bundle.network(Component::Classifier);
    let (logits, tape) = cls.forward_tape(centroids);
    let probs = softmax_rows(&logits);
    let a = CentroidPredictionMatrix::from_prediction_rows(&probs);
    let loss = finite(dissimilarity_loss(&a), "L_dis")?;
    let g_rows = dissimilarity_loss_grad(&a).reversed_axes();
    let g_logits = softmax_backward(&probs, &g_rows);
    let (g_cent, _) = cls.backward(&tape, &g_logits, false);
    finite_vec(g_cent.as_slice().unwrap(), "L_dis")?;
    Ok(DissimilarityGrads {
        loss,
        centroids: g_cent,
    })
}
