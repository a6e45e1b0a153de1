//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use rudx::adapt::{pretrain_source, run_adaptation, AdaptationConfig, PretrainConfig, RunOutcome};
use rudx::data::DomainDataset;
use rudx::eval::{evaluate, MetricsReport};
use rudx::manifest::{parse_manifest_with, ExperimentManifest, Overrides};
use rudx::nets::{build_models, ClassifierSpec, Component, DiscriminatorSpec, EncoderSpec, Layer, ModelBundle, Network};

pub const FD_STEP: f64 = 1e-4;

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let orig = probe[j];
            probe[j] = orig + FD_STEP;
            let up = f(&probe);
            probe[j] = orig - FD_STEP;
            let down = f(&probe);
            probe[j] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

/// `|a - n| / max(|a|, |n|)` over whole vectors; 0 when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| {
        let z: f64 = StandardNormal.sample(rng);
        sd * z
    })
}

/// A small bundle with random widths inside the gradient-check limits.
pub struct SmallProblem {
    pub bundle: ModelBundle,
    pub input_dim: usize,
    pub feature_dim: usize,
    pub classes: usize,
}

pub fn small_problem(rng: &mut ChaCha8Rng) -> SmallProblem {
    let input_dim = rng.random_range(2..=5);
    let feature_dim = rng.random_range(2..=8);
    let classes = rng.random_range(2..=4);
    let hidden = rng.random_range(3..=7);
    let enc = EncoderSpec::mlp(input_dim, vec![hidden], feature_dim);
    let cls = ClassifierSpec {
        feature_dim,
        num_classes: classes,
    };
    let disc = DiscriminatorSpec {
        feature_dim,
        hidden: vec![rng.random_range(3..=7)],
    };
    let mut bundle = build_models(&enc, &cls, &disc, rng.random()).unwrap();
    // zero biases put pre-activations exactly on ReLU kinks, where central
    // differences straddle the corner; jitter every parameter, which also
    // makes E_t differ from E_s
    for c in [Component::SourceEncoder, Component::TargetEncoder, Component::Classifier, Component::Discriminator] {
        for v in bundle.params_mut(c).unwrap().iter_mut() {
            *v += 0.1 * rng.random_range(-1.0..1.0);
        }
    }
    SmallProblem {
        bundle,
        input_dim,
        feature_dim,
        classes,
    }
}

/// Best accuracy over every relabeling of clusters to classes, by
/// enumerating all injective maps.
pub fn brute_force_cluster_accuracy(assign: &[usize], labels: &[usize]) -> f64 {
    let k = assign.iter().chain(labels).max().map_or(0, |m| m + 1);
    let mut best = 0usize;
    let mut used = vec![false; k];
    let mut map = vec![0usize; k];
    fn go(c: usize, k: usize, used: &mut [bool], map: &mut [usize], assign: &[usize], labels: &[usize], best: &mut usize) {
        if c == k {
            let hits = assign.iter().zip(labels).filter(|(a, l)| map[**a] == **l).count();
            *best = (*best).max(hits);
            return;
        }
        for target in 0..k {
            if !used[target] {
                used[target] = true;
                map[c] = target;
                go(c + 1, k, used, map, assign, labels, best);
                used[target] = false;
            }
        }
    }
    go(0, k, &mut used, &mut map, assign, labels, &mut best);
    if labels.is_empty() {
        0.0
    } else {
        best as f64 / labels.len() as f64
    }
}

pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/configs").join(name)
}

pub fn manifest(name: &str, overrides: &Overrides) -> ExperimentManifest {
    parse_manifest_with(&config_path(name), overrides).unwrap()
}

/// Domains and the frozen source model of a manifest.
pub struct Prepared {
    pub source: DomainDataset,
    pub target: DomainDataset,
    pub bundle: ModelBundle,
    pub source_only: MetricsReport,
}

pub fn prepare(m: &ExperimentManifest) -> Prepared {
    let (source, target) = m.load_domains().unwrap();
    let bundle = pretrain_source(m.build_bundle(&source).unwrap(), &source, &m.pretrain).unwrap();
    let source_only = evaluate(&bundle, &target, None).unwrap();
    Prepared {
        source,
        target,
        bundle,
        source_only,
    }
}

pub fn adapt(p: &Prepared, cfg: &AdaptationConfig) -> RunOutcome {
    run_adaptation(p.bundle.clone(), &p.target, &p.source, cfg).unwrap()
}

pub fn quick_pretrain() -> PretrainConfig {
    PretrainConfig {
        epochs: 20,
        lr: 1e-2,
        batch_size: 32,
        seed: 0,
    }
}

/// Smallest `|pre-activation|` entering any ReLU of `net` on inputs `x`.
pub fn relu_margin(net: &Network, x: &Array2<f64>) -> f64 {
    let layers = net.layers();
    let mut margin = f64::INFINITY;
    let mut offset = 0;
    for (i, layer) in layers.iter().enumerate() {
        if matches!(layer, Layer::Relu) {
            let mut prefix = Network::new(layers[..i].to_vec(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            prefix.params_mut().copy_from_slice(&net.params()[..offset]);
            margin = margin.min(prefix.forward(x).iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        }
        offset += layer.param_count();
    }
    margin
}

/// Distance below which a finite-difference probe may cross a ReLU corner.
pub const KINK_MARGIN: f64 = 1e-3;
