//! Experiment manifests: a TOML file that fully determines a run.
//!
//! Every key is optional. Unknown keys are rejected. Sections:
//!
//! ```toml
//! description = "mnist to usps, imbalanced"
//! output_dir = "runs/m2u"
//!
//! [data]
//! kind = "idx"                 # synthetic | idx | container
//! source_images = "mnist/train-images-idx3-ubyte"
//! source_labels = "mnist/train-labels-idx1-ubyte"
//! target_images = "usps/usps-images-idx3-ubyte"
//! target_labels = "usps/usps-labels-idx1-ubyte"
//! source_limit = 5000          # seeded subsample
//! target_limit = 1800
//! imbalance_end = 0.3          # imbalanced mode: class ratio 1 -> 0.3
//! partial_classes = [0, 1, 2, 3, 4, 5]
//!
//! [data.synthetic]             # kind = "synthetic"
//! num_classes = 5
//!
//! [model]
//! encoder = "conv_lenet"       # or "mlp"
//! feature_dim = 500
//!
//! [pretrain]
//! epochs = 10
//!
//! [adapt]
//! gamma_dec = 1e-4             # gamma_dis defaults to 2 * gamma_dec
//! mode = "imbalanced"
//! ```
//!
//! Relative dataset paths resolve against `$RUDX_DATA_DIR` when set.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adapt::{Ablation, AdaptationConfig, Mode, PretrainConfig};
use crate::data::{
    balance_source, load_idx, make_synthetic_pair, read_container, resample_linear_decay, sampler_rng,
    subset_partial, DomainDataset, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::nets::{build_models, ClassifierSpec, DiscriminatorSpec, EncoderKind, EncoderSpec, ModelBundle};
use crate::optim::OptimizerKind;

pub const DATA_DIR_ENV: &str = "RUDX_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx {
        source_images: PathBuf,
        source_labels: PathBuf,
        target_images: PathBuf,
        target_labels: PathBuf,
    },
    Container { source: PathBuf, target: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSpec {
    pub source: DataSource,
    pub source_limit: Option<usize>,
    pub target_limit: Option<usize>,
    pub balance_source: bool,
    pub imbalance_end: f64,
    pub partial_classes: Vec<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub encoder: EncoderKind,
    pub feature_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub seed: u64,
}

/// A fully resolved experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentManifest {
    pub description: String,
    pub output_dir: PathBuf,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptationConfig,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    description: Option<String>,
    output_dir: Option<PathBuf>,
    data: Option<RawData>,
    model: Option<RawModel>,
    pretrain: Option<PretrainConfig>,
    adapt: Option<RawAdapt>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    kind: Option<String>,
    synthetic: Option<SyntheticSpec>,
    source_images: Option<PathBuf>,
    source_labels: Option<PathBuf>,
    target_images: Option<PathBuf>,
    target_labels: Option<PathBuf>,
    source: Option<PathBuf>,
    target: Option<PathBuf>,
    source_limit: Option<usize>,
    target_limit: Option<usize>,
    balance_source: Option<bool>,
    imbalance_end: Option<f64>,
    partial_classes: Option<Vec<usize>>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    encoder: Option<EncoderKind>,
    feature_dim: Option<usize>,
    hidden_sizes: Option<Vec<usize>>,
    disc_hidden: Option<Vec<usize>>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdapt {
    gamma_adv: Option<f64>,
    gamma_enc: Option<f64>,
    gamma_dec: Option<f64>,
    gamma_dis: Option<f64>,
    warmup_iters: Option<usize>,
    batch_size: Option<usize>,
    max_iters: Option<usize>,
    mode: Option<Mode>,
    mix_ratio: Option<f64>,
    ablation: Option<Ablation>,
    seed: Option<u64>,
    optimizer: Option<OptimizerKind>,
    alpha: Option<f64>,
    eval_every: Option<usize>,
    early_stop: Option<bool>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub mix_ratio: Option<f64>,
    pub ablation: Option<Ablation>,
    pub seed: Option<u64>,
    pub max_iters: Option<usize>,
    pub gamma_dec: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

/// Maps a TOML error to the key it names, when it names one.
fn toml_error(e: toml::de::Error) -> Error {
    let msg = e.message().to_string();
    let key = msg
        .split('`')
        .nth(1)
        .filter(|_| msg.starts_with("unknown field"))
        .map(str::to_string)
        .or_else(|| e.span().map(|s| format!("at byte {}", s.start)))
        .unwrap_or_else(|| "<document>".into());
    Error::config(key, msg)
}

/// Reads and resolves a manifest file.
pub fn parse_manifest(path: &Path) -> Result<ExperimentManifest> {
    parse_manifest_with(path, &Overrides::default())
}

pub fn parse_manifest_with(path: &Path, overrides: &Overrides) -> Result<ExperimentManifest> {
    let text = std::fs::read_to_string(path)?;
    parse_manifest_str(&text, overrides)
}

pub fn parse_manifest_str(text: &str, overrides: &Overrides) -> Result<ExperimentManifest> {
    let raw: RawManifest = toml::from_str(text).map_err(toml_error)?;
    resolve(raw, overrides)
}

fn resolve(raw: RawManifest, ov: &Overrides) -> Result<ExperimentManifest> {
    let a = raw.adapt.unwrap_or_default();
    let mode = ov.mode.or(a.mode).unwrap_or(Mode::Balanced);
    let base = AdaptationConfig::for_mode(mode);
    let gamma_dec = ov.gamma_dec.or(a.gamma_dec).unwrap_or(base.gamma_dec);
    let gamma_dis = match (ov.gamma_dec, a.gamma_dis) {
        // a command-line gamma_dec re-ties gamma_dis
        (Some(_), _) | (None, None) => 2.0 * gamma_dec,
        (None, Some(v)) => v,
    };
    let adapt = AdaptationConfig {
        gamma_adv: a.gamma_adv.unwrap_or(base.gamma_adv),
        gamma_enc: a.gamma_enc.unwrap_or(base.gamma_enc),
        gamma_dec,
        gamma_dis,
        warmup_iters: a.warmup_iters.unwrap_or(base.warmup_iters),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        max_iters: ov.max_iters.or(a.max_iters).unwrap_or(base.max_iters),
        mode,
        mix_ratio: ov.mix_ratio.or(a.mix_ratio).unwrap_or(base.mix_ratio),
        ablation: ov.ablation.or(a.ablation).unwrap_or(base.ablation),
        seed: ov.seed.or(a.seed).unwrap_or(base.seed),
        optimizer: a.optimizer.unwrap_or(base.optimizer),
        alpha: a.alpha.unwrap_or(base.alpha),
        eval_every: a.eval_every.unwrap_or(base.eval_every),
        early_stop: a.early_stop.unwrap_or(base.early_stop),
    };
    adapt.validate()?;

    let pretrain = raw.pretrain.unwrap_or_default();
    if !(pretrain.lr > 0.0 && pretrain.lr.is_finite()) {
        return Err(Error::config("pretrain.lr", "must be positive and finite"));
    }
    if pretrain.batch_size == 0 {
        return Err(Error::config("pretrain.batch_size", "must be at least 1"));
    }

    let d = raw.data.unwrap_or_default();
    let need = |v: Option<PathBuf>, key: &str| v.ok_or_else(|| Error::config(format!("data.{key}"), "required for this data kind"));
    let source = match d.kind.as_deref().unwrap_or("synthetic") {
        "synthetic" => DataSource::Synthetic(d.synthetic.unwrap_or_default()),
        "idx" => DataSource::Idx {
            source_images: need(d.source_images, "source_images")?,
            source_labels: need(d.source_labels, "source_labels")?,
            target_images: need(d.target_images, "target_images")?,
            target_labels: need(d.target_labels, "target_labels")?,
        },
        "container" => DataSource::Container {
            source: need(d.source, "source")?,
            target: need(d.target, "target")?,
        },
        other => return Err(Error::config("data.kind", format!("unknown data kind `{other}`"))),
    };
    let imbalance_end = d.imbalance_end.unwrap_or(0.3);
    if !(imbalance_end > 0.0 && imbalance_end <= 1.0) {
        return Err(Error::config("data.imbalance_end", "must lie in (0, 1]"));
    }
    let partial_classes = d.partial_classes.unwrap_or_else(|| (0..6).collect());
    if partial_classes.is_empty() {
        return Err(Error::config("data.partial_classes", "must not be empty"));
    }
    let data = DataSpec {
        source,
        source_limit: d.source_limit,
        target_limit: d.target_limit,
        balance_source: d.balance_source.unwrap_or(true),
        imbalance_end,
        partial_classes,
        seed: d.seed.unwrap_or(0),
    };

    let m = raw.model.unwrap_or_default();
    let encoder = m.encoder.unwrap_or(EncoderKind::Mlp);
    let model = ModelSpec {
        encoder,
        feature_dim: m.feature_dim.unwrap_or(500),
        hidden_sizes: m.hidden_sizes.unwrap_or_else(|| match encoder {
            EncoderKind::Mlp => vec![64, 64],
            EncoderKind::ConvLenet => Vec::new(),
        }),
        disc_hidden: m.disc_hidden.unwrap_or_else(|| vec![500, 500]),
        seed: m.seed.unwrap_or(0),
    };
    if model.feature_dim < 2 {
        return Err(Error::config("model.feature_dim", "must be at least 2"));
    }

    Ok(ExperimentManifest {
        description: raw.description.unwrap_or_default(),
        output_dir: ov
            .output_dir
            .clone()
            .or(raw.output_dir)
            .unwrap_or_else(|| PathBuf::from("runs/default")),
        data,
        model,
        pretrain,
        adapt,
    })
}

impl ExperimentManifest {
    /// Canonical TOML with every value spelled out.
    pub fn to_toml_string(&self) -> Result<String> {
        let a = &self.adapt;
        let d = &self.data;
        let mut data = RawData {
            source_limit: d.source_limit,
            target_limit: d.target_limit,
            balance_source: Some(d.balance_source),
            imbalance_end: Some(d.imbalance_end),
            partial_classes: Some(d.partial_classes.clone()),
            seed: Some(d.seed),
            ..Default::default()
        };
        match &d.source {
            DataSource::Synthetic(s) => {
                data.kind = Some("synthetic".into());
                data.synthetic = Some(s.clone());
            }
            DataSource::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
            } => {
                data.kind = Some("idx".into());
                data.source_images = Some(source_images.clone());
                data.source_labels = Some(source_labels.clone());
                data.target_images = Some(target_images.clone());
                data.target_labels = Some(target_labels.clone());
            }
            DataSource::Container { source, target } => {
                data.kind = Some("container".into());
                data.source = Some(source.clone());
                data.target = Some(target.clone());
            }
        }
        let raw = RawManifest {
            description: Some(self.description.clone()),
            output_dir: Some(self.output_dir.clone()),
            data: Some(data),
            model: Some(RawModel {
                encoder: Some(self.model.encoder),
                feature_dim: Some(self.model.feature_dim),
                hidden_sizes: Some(self.model.hidden_sizes.clone()),
                disc_hidden: Some(self.model.disc_hidden.clone()),
                seed: Some(self.model.seed),
            }),
            pretrain: Some(self.pretrain.clone()),
            adapt: Some(RawAdapt {
                gamma_adv: Some(a.gamma_adv),
                gamma_enc: Some(a.gamma_enc),
                gamma_dec: Some(a.gamma_dec),
                gamma_dis: Some(a.gamma_dis),
                warmup_iters: Some(a.warmup_iters),
                batch_size: Some(a.batch_size),
                max_iters: Some(a.max_iters),
                mode: Some(a.mode),
                mix_ratio: Some(a.mix_ratio),
                ablation: Some(a.ablation),
                seed: Some(a.seed),
                optimizer: Some(a.optimizer),
                alpha: Some(a.alpha),
                eval_every: Some(a.eval_every),
                early_stop: Some(a.early_stop),
            }),
        };
        toml::to_string(&raw).map_err(|e| Error::config("<document>", e.to_string()))
    }

    /// Writes the resolved manifest as `manifest.toml` in the output dir.
    pub fn write_provenance(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir)?;
        let path = self.output_dir.join("manifest.toml");
        std::fs::write(&path, self.to_toml_string()?)?;
        Ok(path)
    }

    /// Source and target domains after limits, source balancing and the
    /// mode's target transform (decay resampling or class subsetting).
    /// The target keeps its labels for evaluation.
    pub fn load_domains(&self) -> Result<(DomainDataset, DomainDataset)> {
        let d = &self.data;
        let (source, target) = match &d.source {
            DataSource::Synthetic(spec) => {
                let pair = make_synthetic_pair(spec)?;
                (pair.source, pair.target)
            }
            DataSource::Idx {
                source_images,
                source_labels,
                target_images,
                target_labels,
            } => (
                load_idx(&data_path(source_images), &data_path(source_labels))?,
                load_idx(&data_path(target_images), &data_path(target_labels))?,
            ),
            DataSource::Container { source, target } => {
                (read_container(&data_path(source))?, read_container(&data_path(target))?)
            }
        };
        let source = limit(source, d.source_limit, d.seed);
        let target = limit(target, d.target_limit, d.seed.wrapping_add(1));
        let source = if d.balance_source && source.labels().is_some() {
            balance_source(&source, d.seed)?
        } else {
            source
        };
        let target = match self.adapt.mode {
            Mode::Balanced => target,
            Mode::Imbalanced => resample_linear_decay(&target, 1.0, d.imbalance_end, d.seed)?,
            Mode::Partial => {
                let keep: BTreeSet<usize> = d.partial_classes.iter().copied().collect();
                subset_partial(&target, &keep).map_err(|e| Error::config("data.partial_classes", e.to_string()))?
            }
        };
        Ok((source, target))
    }

    /// Untrained networks sized for `source`.
    pub fn build_bundle(&self, source: &DomainDataset) -> Result<ModelBundle> {
        let f = self.model.feature_dim;
        let enc = match self.model.encoder {
            EncoderKind::ConvLenet => EncoderSpec::lenet(f),
            EncoderKind::Mlp => EncoderSpec::mlp(source.dim(), self.model.hidden_sizes.clone(), f),
        };
        build_models(
            &enc,
            &ClassifierSpec {
                feature_dim: f,
                num_classes: source.label_domain_size(),
            },
            &DiscriminatorSpec {
                feature_dim: f,
                hidden: self.model.disc_hidden.clone(),
            },
            self.model.seed,
        )
    }
}

fn data_path(p: &Path) -> PathBuf {
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) if p.is_relative() => Path::new(&dir).join(p),
        _ => p.to_path_buf(),
    }
}

/// Seeded subsample of at most `n` rows, original order kept.
fn limit(ds: DomainDataset, n: Option<usize>, seed: u64) -> DomainDataset {
    match n {
        Some(n) if n < ds.len() => {
            let mut idx: Vec<usize> = (0..ds.len()).collect();
            idx.shuffle(&mut sampler_rng(seed));
            idx.truncate(n);
            idx.sort_unstable();
            ds.select(&idx)
        }
        _ => ds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<ExperimentManifest> {
        parse_manifest_str(s, &Overrides::default())
    }

    #[test]
    fn empty_file_is_all_defaults() {
        let m = parse("").unwrap();
        assert_eq!(m.adapt, AdaptationConfig::default());
        assert!(matches!(m.data.source, DataSource::Synthetic(_)));
    }

    #[test]
    fn gamma_dis_resolves_to_twice_gamma_dec() {
        let m = parse("[adapt]\ngamma_dec = 1e-4\n").unwrap();
        assert!((m.adapt.gamma_dis - 2e-4).abs() < 1e-18);
        let m = parse("[adapt]\ngamma_dec = 1e-4\ngamma_dis = 5e-4\n").unwrap();
        assert_eq!(m.adapt.gamma_dis, 5e-4);
    }

    #[test]
    fn errors_name_the_key() {
        let e = parse("[adapt]\ngamma_adv = -1.0\n").unwrap_err();
        assert!(e.to_string().contains("gamma_adv"), "{e}");
        let e = parse("[adapt]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(e.to_string().contains("learning_rate"), "{e}");
        let e = parse("[adapt]\nbatch_size = \"big\"\n").unwrap_err();
        assert!(e.is_validation());
        let e = parse("[data]\nkind = \"idx\"\n").unwrap_err();
        assert!(e.to_string().contains("data.source_images"), "{e}");
    }

    #[test]
    fn partial_mode_defaults() {
        let m = parse("[adapt]\nmode = \"partial\"\n").unwrap();
        assert_eq!(m.adapt.warmup_iters, 0);
        assert_eq!(m.adapt.mix_ratio, 0.5);
        let ov = Overrides {
            mode: Some(Mode::Partial),
            mix_ratio: Some(0.0),
            ..Default::default()
        };
        let e = parse_manifest_str("", &ov).unwrap_err();
        assert!(e.to_string().contains("mix_ratio"));
    }

    #[test]
    fn round_trip() {
        let m = parse(
            "description = \"x\"\n[adapt]\nmode = \"imbalanced\"\ngamma_dec = 3e-3\n[model]\nfeature_dim = 8\n[data]\ntarget_limit = 40\n",
        )
        .unwrap();
        let again = parse(&m.to_toml_string().unwrap()).unwrap();
        assert_eq!(again, m);
    }
}
