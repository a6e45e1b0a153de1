//! The five objectives evaluated by hand on tiny inputs.

use ndarray::array;

use rudx::losses::{
    auxiliary_dist, classification_loss, clustering_loss, discriminator_loss, dissimilarity_loss, encoder_loss,
    soft_assign, CentroidPredictionMatrix,
};

fn main() -> rudx::error::Result<()> {
    // classifier probabilities for two instances of classes 0 and 1
    let probs = array![[0.8, 0.2], [0.3, 0.7]];
    println!("classification  {:.5}", classification_loss(&probs, &[0, 1])?);

    let d_source = array![0.9, 0.6];
    let d_target = array![0.2, 0.4];
    println!("discriminator   {:.5}", discriminator_loss(d_source.view(), d_target.view()));
    println!("encoder         {:.5}", encoder_loss(d_target.view()));

    let features = array![[0.0, 0.0], [0.2, 0.1], [2.0, 2.1], [1.0, 1.0]];
    let centroids = array![[0.0, 0.0], [2.0, 2.0]];
    let q = soft_assign(&features, &centroids, 1.0)?;
    let p = auxiliary_dist(&q)?;
    println!("soft assignment\n{:.4}", q.q);
    println!("sharpened targets\n{:.4}", p.p);
    println!("clustering      {:.5}", clustering_loss(&p, &q)?);

    // centroids predicting distinct classes cost nothing; shared mass costs
    let disjoint = CentroidPredictionMatrix::from_prediction_rows(&array![[1.0, 0.0], [0.0, 1.0]]);
    let shared = CentroidPredictionMatrix::from_prediction_rows(&array![[0.9, 0.1], [0.6, 0.4]]);
    println!("dissimilarity   {:.5} vs {:.5}", dissimilarity_loss(&disjoint), dissimilarity_loss(&shared));
    Ok(())
}
