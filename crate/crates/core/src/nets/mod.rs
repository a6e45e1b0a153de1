//! Encoders, classifier and domain discriminator.
//!
//! Every network is a [`Network`]: a layer list plus one flat `f64`
//! parameter vector. Optimizers, checksums and checkpoints all work on
//! that vector directly.

mod checkpoint;
mod layers;

use std::fmt;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use layers::Layer;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    ConvLenet,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub kind: EncoderKind,
    pub input_shape: Vec<usize>,
    pub feature_dim: usize,
    /// Hidden widths, mlp only.
    pub hidden_sizes: Vec<usize>,
}

impl EncoderSpec {
    pub fn lenet(feature_dim: usize) -> Self {
        Self {
            kind: EncoderKind::ConvLenet,
            input_shape: vec![1, 28, 28],
            feature_dim,
            hidden_sizes: Vec::new(),
        }
    }

    pub fn mlp(input_dim: usize, hidden_sizes: Vec<usize>, feature_dim: usize) -> Self {
        Self {
            kind: EncoderKind::Mlp,
            input_shape: vec![input_dim],
            feature_dim,
            hidden_sizes,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    fn layers(&self) -> Result<Vec<Layer>> {
        if self.feature_dim < 2 {
            return Err(Error::invalid("feature_dim must be at least 2"));
        }
        match self.kind {
            EncoderKind::ConvLenet => {
                if self.input_shape != [1, 28, 28] {
                    return Err(Error::Shape(format!(
                        "conv_lenet needs input shape [1, 28, 28], got {:?}",
                        self.input_shape
                    )));
                }
                Ok(vec![
                    Layer::Conv {
                        in_channels: 1,
                        out_channels: 20,
                        kernel: 5,
                        height: 28,
                        width: 28,
                    },
                    Layer::MaxPool2 {
                        channels: 20,
                        height: 24,
                        width: 24,
                    },
                    Layer::Relu,
                    Layer::Conv {
                        in_channels: 20,
                        out_channels: 50,
                        kernel: 5,
                        height: 12,
                        width: 12,
                    },
                    Layer::MaxPool2 {
                        channels: 50,
                        height: 8,
                        width: 8,
                    },
                    Layer::Relu,
                    Layer::Dense {
                        input: 50 * 4 * 4,
                        output: self.feature_dim,
                    },
                    Layer::Relu,
                ])
            }
            EncoderKind::Mlp => {
                if self.input_dim() == 0 {
                    return Err(Error::Shape("mlp input dimension is zero".into()));
                }
                Ok(mlp_layers(self.input_dim(), &self.hidden_sizes, self.feature_dim))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub feature_dim: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
}

impl DiscriminatorSpec {
    /// Two hidden layers of 500 units and a 2-way output.
    pub fn standard(feature_dim: usize) -> Self {
        Self {
            feature_dim,
            hidden: vec![500, 500],
        }
    }
}

/// Dense layers with ReLU between them and a linear output.
fn mlp_layers(input: usize, hidden: &[usize], output: usize) -> Vec<Layer> {
    let mut layers = Vec::new();
    let mut width = input;
    for &h in hidden {
        layers.push(Layer::Dense { input: width, output: h });
        layers.push(Layer::Relu);
        width = h;
    }
    layers.push(Layer::Dense { input: width, output });
    layers
}

/// Intermediate activations kept for backprop.
#[derive(Debug)]
pub struct Tape {
    inputs: Vec<Array2<f64>>,
    pool_args: Vec<Option<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    layers: Vec<Layer>,
    params: Vec<f64>,
}

impl Network {
    pub fn new(layers: Vec<Layer>, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut width: Option<usize> = None;
        for layer in &layers {
            if let (Some(w), Some(i)) = (width, layer.input_width()) {
                if w != i {
                    return Err(Error::Shape(format!("layer {layer:?} expects width {i}, got {w}")));
                }
            }
            if let Some(o) = layer.output_width() {
                width = Some(o);
            }
        }
        let mut params = vec![0.0; layers.iter().map(Layer::param_count).sum()];
        let mut off = 0;
        for layer in &layers {
            let n = layer.param_count();
            layer.init(&mut params[off..off + n], rng);
            off += n;
        }
        Ok(Self { layers, params })
    }

    /// Same architecture with every parameter zero.
    pub fn zeroed(&self) -> Self {
        Self {
            layers: self.layers.clone(),
            params: vec![0.0; self.params.len()],
        }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.layers.iter().find_map(Layer::input_width).unwrap_or(0)
    }

    pub fn output_width(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(Layer::output_width)
            .unwrap_or(0)
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut off = 0;
        let mut h = x.clone();
        for layer in &self.layers {
            let n = layer.param_count();
            h = layer.forward(&self.params[off..off + n], &h).0;
            off += n;
        }
        h
    }

    pub fn forward_tape(&self, x: &Array2<f64>) -> (Array2<f64>, Tape) {
        let mut off = 0;
        let mut h = x.clone();
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pool_args: Vec::with_capacity(self.layers.len()),
        };
        for layer in &self.layers {
            let n = layer.param_count();
            let (out, arg) = layer.forward(&self.params[off..off + n], &h);
            tape.inputs.push(std::mem::replace(&mut h, out));
            tape.pool_args.push(arg);
            off += n;
        }
        (h, tape)
    }

    /// Backpropagates `grad_out` (gradient of a scalar w.r.t. the output).
    /// Returns the input gradient and, if requested, the parameter gradient.
    pub fn backward(
        &self,
        tape: &Tape,
        grad_out: &Array2<f64>,
        want_params: bool,
    ) -> (Array2<f64>, Option<Vec<f64>>) {
        let mut grads = want_params.then(|| vec![0.0; self.params.len()]);
        let mut off = self.params.len();
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let n = layer.param_count();
            off -= n;
            let gp = grads.as_mut().map(|v| &mut v[off..off + n]);
            g = layer.backward(
                &self.params[off..off + n],
                &tape.inputs[i],
                tape.pool_args[i].as_deref(),
                &g,
                gp,
            );
        }
        (g, grads)
    }
}

/// Hex SHA-256 of the parameter bit patterns.
pub fn checksum(params: &[f64]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Row-wise softmax, shifted by the row max.
pub fn softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.outer_iter_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Index of the first maximum in each row (ties go to the lower index).
pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.outer_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    SourceEncoder,
    TargetEncoder,
    Classifier,
    Discriminator,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Component::SourceEncoder,
        Component::TargetEncoder,
        Component::Classifier,
        Component::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Component::SourceEncoder => "E_s",
            Component::TargetEncoder => "E_t",
            Component::Classifier => "C",
            Component::Discriminator => "D",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Source,
    Target,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrozenFlags {
    pub source_encoder: bool,
    pub target_encoder: bool,
    pub classifier: bool,
    pub discriminator: bool,
}

impl FrozenFlags {
    pub fn get(&self, c: Component) -> bool {
        match c {
            Component::SourceEncoder => self.source_encoder,
            Component::TargetEncoder => self.target_encoder,
            Component::Classifier => self.classifier,
            Component::Discriminator => self.discriminator,
        }
    }

    pub fn set(&mut self, c: Component, frozen: bool) {
        match c {
            Component::SourceEncoder => self.source_encoder = frozen,
            Component::TargetEncoder => self.target_encoder = frozen,
            Component::Classifier => self.classifier = frozen,
            Component::Discriminator => self.discriminator = frozen,
        }
    }
}

/// The four networks of an adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub encoder_spec: EncoderSpec,
    pub classifier_spec: ClassifierSpec,
    pub discriminator_spec: DiscriminatorSpec,
    source_encoder: Network,
    target_encoder: Network,
    classifier: Network,
    discriminator: Network,
    frozen: FrozenFlags,
}

/// Builds all four networks from `seed`; the target encoder starts as a
/// copy of the source encoder.
pub fn build_models(
    enc: &EncoderSpec,
    cls: &ClassifierSpec,
    disc: &DiscriminatorSpec,
    seed: u64,
) -> Result<ModelBundle> {
    if enc.feature_dim != cls.feature_dim || enc.feature_dim != disc.feature_dim {
        return Err(Error::Shape(format!(
            "feature_dim disagrees: encoder {}, classifier {}, discriminator {}",
            enc.feature_dim, cls.feature_dim, disc.feature_dim
        )));
    }
    if cls.num_classes < 2 {
        return Err(Error::invalid("classifier needs at least 2 classes"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source_encoder = Network::new(enc.layers()?, &mut rng)?;
    let classifier = Network::new(
        vec![Layer::Dense {
            input: cls.feature_dim,
            output: cls.num_classes,
        }],
        &mut rng,
    )?;
    let discriminator = Network::new(mlp_layers(disc.feature_dim, &disc.hidden, 2), &mut rng)?;
    Ok(ModelBundle {
        encoder_spec: enc.clone(),
        classifier_spec: cls.clone(),
        discriminator_spec: disc.clone(),
        target_encoder: source_encoder.clone(),
        source_encoder,
        classifier,
        discriminator,
        frozen: FrozenFlags::default(),
    })
}

impl ModelBundle {
    pub fn network(&self, c: Component) -> &Network {
        match c {
            Component::SourceEncoder => &self.source_encoder,
            Component::TargetEncoder => &self.target_encoder,
            Component::Classifier => &self.classifier,
            Component::Discriminator => &self.discriminator,
        }
    }

    /// Mutable access to a parameter vector; refuses frozen components.
    pub fn params_mut(&mut self, c: Component) -> Result<&mut [f64]> {
        if self.frozen.get(c) {
            return Err(Error::Frozen(c.name()));
        }
        Ok(self.network_mut(c).params_mut())
    }

    fn network_mut(&mut self, c: Component) -> &mut Network {
        match c {
            Component::SourceEncoder => &mut self.source_encoder,
            Component::TargetEncoder => &mut self.target_encoder,
            Component::Classifier => &mut self.classifier,
            Component::Discriminator => &mut self.discriminator,
        }
    }

    /// Replaces a network wholesale, ignoring frozen flags. For tests and
    /// tooling that construct bundles by hand.
    pub fn set_network(&mut self, c: Component, net: Network) -> Result<()> {
        if net.layers() != self.network(c).layers() {
            return Err(Error::Shape(format!("architecture mismatch for {c}")));
        }
        *self.network_mut(c) = net;
        Ok(())
    }

    pub fn frozen(&self) -> FrozenFlags {
        self.frozen
    }

    pub fn set_frozen(&mut self, c: Component, frozen: bool) {
        self.frozen.set(c, frozen);
    }

    /// Copies source-encoder parameters into the target encoder.
    pub fn sync_target_to_source(&mut self) {
        self.target_encoder = self.source_encoder.clone();
    }

    pub fn checksum(&self, c: Component) -> String {
        checksum(self.network(c).params())
    }

    pub fn num_classes(&self) -> usize {
        self.classifier_spec.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.encoder_spec.feature_dim
    }

    pub fn encoder(&self, which: Which) -> &Network {
        match which {
            Which::Source => &self.source_encoder,
            Which::Target => &self.target_encoder,
        }
    }
}

fn ensure_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Features of `inputs` under the chosen encoder.
pub fn encode(bundle: &ModelBundle, which: Which, inputs: &Array2<f64>) -> Result<Array2<f64>> {
    let net = bundle.encoder(which);
    if inputs.ncols() != net.input_width() {
        return Err(Error::Shape(format!(
            "encoder expects width {}, got {}",
            net.input_width(),
            inputs.ncols()
        )));
    }
    let z = net.forward(inputs);
    ensure_finite(&z, "encoder output")?;
    Ok(z)
}

/// Class probabilities, one softmax row per feature row.
pub fn classify(bundle: &ModelBundle, features: &Array2<f64>) -> Result<Array2<f64>> {
    ensure_finite(features, "classifier input")?;
    check_feature_width(bundle, features)?;
    Ok(softmax_rows(&bundle.classifier.forward(features)))
}

/// Probability that each feature row came from the source domain.
pub fn discriminate(bundle: &ModelBundle, features: &Array2<f64>) -> Result<Array1<f64>> {
    ensure_finite(features, "discriminator input")?;
    check_feature_width(bundle, features)?;
    let p = softmax_rows(&bundle.discriminator.forward(features));
    Ok(p.index_axis(Axis(1), 0).to_owned())
}

fn check_feature_width(bundle: &ModelBundle, features: &Array2<f64>) -> Result<()> {
    if features.ncols() != bundle.feature_dim() {
        return Err(Error::Shape(format!(
            "expected {} features, got {}",
            bundle.feature_dim(),
            features.ncols()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelBundle {
        build_models(
            &EncoderSpec::mlp(2, vec![16], 8),
            &ClassifierSpec {
                feature_dim: 8,
                num_classes: 3,
            },
            &DiscriminatorSpec {
                feature_dim: 8,
                hidden: vec![12, 12],
            },
            5,
        )
        .unwrap()
    }

    #[test]
    fn equal_seeds_give_identical_params() {
        assert_eq!(small(), small());
        let b = small();
        assert_eq!(
            b.checksum(Component::SourceEncoder),
            b.checksum(Component::TargetEncoder)
        );
    }

    #[test]
    fn lenet_shape_contract() {
        let b = build_models(
            &EncoderSpec::lenet(500),
            &ClassifierSpec {
                feature_dim: 500,
                num_classes: 10,
            },
            &DiscriminatorSpec::standard(500),
            0,
        )
        .unwrap();
        let x = Array2::from_shape_fn((4, 784), |(i, j)| ((i + j) % 7) as f64 / 7.0);
        assert_eq!(encode(&b, Which::Source, &x).unwrap().dim(), (4, 500));
    }

    #[test]
    fn mismatched_feature_dims_rejected() {
        let err = build_models(
            &EncoderSpec::lenet(500),
            &ClassifierSpec {
                feature_dim: 256,
                num_classes: 10,
            },
            &DiscriminatorSpec::standard(500),
            0,
        );
        assert!(matches!(err, Err(Error::Shape(_))));
    }

    #[test]
    fn lenet_requires_28x28() {
        let mut spec = EncoderSpec::lenet(500);
        spec.input_shape = vec![1, 16, 16];
        assert!(spec.layers().is_err());
    }

    #[test]
    fn shapes_for_various_batch_sizes() {
        let b = small();
        for m in [1, 2, 64] {
            let x = Array2::from_elem((m, 2), 0.3);
            let z = encode(&b, Which::Target, &x).unwrap();
            assert_eq!(z.dim(), (m, 8));
            assert_eq!(classify(&b, &z).unwrap().dim(), (m, 3));
            assert_eq!(discriminate(&b, &z).unwrap().len(), m);
        }
    }

    #[test]
    fn zero_linear_mlp_maps_zero_to_zero() {
        let mut b = build_models(
            &EncoderSpec::mlp(3, vec![], 4),
            &ClassifierSpec {
                feature_dim: 4,
                num_classes: 2,
            },
            &DiscriminatorSpec::standard(4),
            1,
        )
        .unwrap();
        let zero = b.network(Component::SourceEncoder).zeroed();
        b.set_network(Component::SourceEncoder, zero).unwrap();
        let z = encode(&b, Which::Source, &Array2::zeros((2, 3))).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn classifier_rows_are_distributions() {
        let b = small();
        let z = Array2::from_shape_fn((10, 8), |(i, j)| (i as f64 - j as f64) * 0.7);
        let p = classify(&b, &z).unwrap();
        for row in p.outer_iter() {
            assert!((row.sum() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v > 0.0));
        }
        // equal logits give the uniform row
        let mut flat = b.clone();
        flat.set_network(Component::Classifier, b.network(Component::Classifier).zeroed())
            .unwrap();
        let p = classify(&flat, &z).unwrap();
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn discriminator_is_half_at_zero_features() {
        let b = small();
        let d = discriminate(&b, &Array2::zeros((3, 8))).unwrap();
        assert!(d.iter().all(|&v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn frozen_params_are_not_handed_out() {
        let mut b = small();
        b.set_frozen(Component::Classifier, true);
        assert!(matches!(
            b.params_mut(Component::Classifier),
            Err(Error::Frozen("C"))
        ));
        assert!(b.params_mut(Component::Discriminator).is_ok());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let b = small();
        let mut z = Array2::zeros((1, 8));
        z[[0, 3]] = f64::NAN;
        assert!(matches!(classify(&b, &z), Err(Error::NonFinite(_))));
    }
}
