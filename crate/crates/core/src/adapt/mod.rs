//! Source pretraining, centroid initialization and the adaptation loop.

pub mod objectives;
mod sweep;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{sample_labeled, sample_minibatch, sampler_rng, DomainDataset, Minibatch, SamplerRng};
use crate::error::{Error, Result};
use crate::eval::{encode_dataset, evaluate, predict, MetricsReport};
use crate::nets::{argmax_rows, classify, Checkpoint, Component, ModelBundle, Which};
use crate::optim::{sgd_step, Adam, AdamConfig, Optimizer, OptimizerKind};

pub use sweep::{lr_sweep, write_sweep_csv, SweepRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Balanced,
    Imbalanced,
    Partial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Adversarial, clustering and dissimilarity objectives.
    Full,
    /// Without the dissimilarity objective.
    NoDis,
    /// Adversarial objectives only; no target augmentation.
    AddaOnly,
    /// Adversarial objectives only, with target augmentation.
    AddaMix,
}

impl Ablation {
    pub fn clusters(self) -> bool {
        matches!(self, Ablation::Full | Ablation::NoDis)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoDis => "no_dis",
            Ablation::AddaOnly => "adda_only",
            Ablation::AddaMix => "adda_mix",
        })
    }
}

/// Learning rates, schedule and mode of one adaptation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptationConfig {
    pub gamma_adv: f64,
    pub gamma_enc: f64,
    pub gamma_dec: f64,
    pub gamma_dis: f64,
    /// Iterations of adversarial-only training before clustering starts.
    pub warmup_iters: usize,
    pub batch_size: usize,
    pub max_iters: usize,
    pub mode: Mode,
    /// Fraction of each target batch drawn from the source pool.
    pub mix_ratio: f64,
    pub ablation: Ablation,
    pub seed: u64,
    /// Update rule for the discriminator and the adversarial encoder step.
    pub optimizer: OptimizerKind,
    /// Student-t degrees of freedom.
    pub alpha: f64,
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    pub eval_every: usize,
    /// Stop once pseudo-label churn settles (see [`ChurnMonitor`]).
    pub early_stop: bool,
}

impl Default for AdaptationConfig {
    fn default() -> Self {
        Self {
            gamma_adv: 1e-3,
            gamma_enc: 1e-5,
            gamma_dec: 1e-4,
            gamma_dis: 2e-4,
            warmup_iters: 100,
            batch_size: 64,
            max_iters: 2000,
            mode: Mode::Balanced,
            mix_ratio: 0.0,
            ablation: Ablation::Full,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            alpha: 1.0,
            eval_every: 100,
            early_stop: false,
        }
    }
}

impl AdaptationConfig {
    /// Defaults for `mode`: partial runs mix 1:1 and skip warmup.
    pub fn for_mode(mode: Mode) -> Self {
        let mut cfg = Self {
            mode,
            ..Self::default()
        };
        if mode == Mode::Partial {
            cfg.mix_ratio = 0.5;
            cfg.warmup_iters = 0;
        }
        cfg
    }

    /// Sets the clustering rate and ties the dissimilarity rate to twice it.
    pub fn with_gamma_dec(mut self, gamma_dec: f64) -> Self {
        self.gamma_dec = gamma_dec;
        self.gamma_dis = 2.0 * gamma_dec;
        self
    }

    /// Mixing actually applied: ADDA without augmentation never mixes.
    pub fn effective_mix_ratio(&self) -> f64 {
        if self.ablation == Ablation::AddaOnly {
            0.0
        } else {
            self.mix_ratio
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("gamma_adv", self.gamma_adv),
            ("gamma_enc", self.gamma_enc),
            ("gamma_dec", self.gamma_dec),
            ("gamma_dis", self.gamma_dis),
            ("alpha", self.alpha),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("must be positive and finite, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        if self.max_iters > 0 && self.warmup_iters >= self.max_iters {
            return Err(Error::config(
                "warmup_iters",
                format!("must be below max_iters ({})", self.max_iters),
            ));
        }
        if !(0.0..=1.0).contains(&self.mix_ratio) {
            return Err(Error::config("mix_ratio", "must lie in [0, 1]"));
        }
        match self.mode {
            Mode::Partial if self.mix_ratio == 0.0 => {
                return Err(Error::config("mix_ratio", "partial mode needs a nonzero mix ratio"))
            }
            Mode::Balanced | Mode::Imbalanced if self.mix_ratio != 0.0 => {
                return Err(Error::config("mix_ratio", "must be 0 unless mode is partial"))
            }
            _ => {}
        }
        if self.ablation == Ablation::AddaMix && self.mode != Mode::Partial {
            return Err(Error::config("ablation", "adda_mix requires partial mode"));
        }
        Ok(())
    }
}

/// Source-model training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            lr: 1e-3,
            batch_size: 64,
            seed: 0,
        }
    }
}

/// Trains `E_s` and `C` by maximizing the source classification
/// objective with Adam, then freezes both and re-syncs `E_t` to `E_s`.
pub fn pretrain_source(mut bundle: ModelBundle, source: &DomainDataset, cfg: &PretrainConfig) -> Result<ModelBundle> {
    let labels = source.require_labels()?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::invalid("pretraining needs batch_size >= 1 and lr > 0"));
    }
    let mut opt_enc = Adam::new(bundle.network(Component::SourceEncoder).params().len(), AdamConfig::default());
    let mut opt_cls = Adam::new(bundle.network(Component::Classifier).params().len(), AdamConfig::default());
    let mut rng = sampler_rng(cfg.seed);
    let mut order: Vec<usize> = (0..source.len()).collect();
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = source.rows_f64(chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let g = objectives::classification(&bundle, &x, &y).map_err(|e| match e {
                Error::NonFinite(what) => Error::NonFinite(format!("{what} during pretraining epoch {epoch}")),
                other => other,
            })?;
            let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
            opt_enc.step(bundle.params_mut(Component::SourceEncoder)?, &neg(&g.source_encoder), cfg.lr);
            opt_cls.step(bundle.params_mut(Component::Classifier)?, &neg(&g.classifier), cfg.lr);
        }
        log::debug!("pretrain epoch {epoch} done");
    }
    bundle.set_frozen(Component::SourceEncoder, true);
    bundle.set_frozen(Component::Classifier, true);
    bundle.sync_target_to_source();
    Ok(bundle)
}

/// Trainable cluster centers, one row per source class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids(pub Array2<f64>);

impl Centroids {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }
}

fn class_means(z: &Array2<f64>, labels: &[usize], k: usize) -> Vec<Option<ndarray::Array1<f64>>> {
    (0..k)
        .map(|c| {
            let rows: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == c).map(|(i, _)| i).collect();
            (!rows.is_empty()).then(|| z.select(Axis(0), &rows).mean_axis(Axis(0)).unwrap())
        })
        .collect()
}

/// Initial centroids.
///
/// Balanced and imbalanced modes use the mean target feature of each
/// predicted class; partial mode uses the mean source feature of each
/// labeled class. An empty class falls back to its source class mean, and
/// failing that to the global mean plus a small deterministic offset.
pub fn init_centroids(bundle: &ModelBundle, target: &DomainDataset, source: &DomainDataset, mode: Mode) -> Result<Centroids> {
    let k = bundle.num_classes();
    let f = bundle.feature_dim();
    let source_means = match source.labels() {
        Some(labels) if !source.is_empty() => {
            class_means(&encode_dataset(bundle, Which::Source, source)?, labels, k)
        }
        _ => vec![None; k],
    };
    let (primary, global) = match mode {
        Mode::Partial => {
            let zs = encode_dataset(bundle, Which::Source, source)?;
            (source_means.clone(), zs.mean_axis(Axis(0)))
        }
        Mode::Balanced | Mode::Imbalanced => {
            let zt = encode_dataset(bundle, Which::Target, target)?;
            let predicted = if target.is_empty() {
                Vec::new()
            } else {
                argmax_rows(&classify(bundle, &zt)?)
            };
            (class_means(&zt, &predicted, k), zt.mean_axis(Axis(0)))
        }
    };
    let global = global.unwrap_or_else(|| ndarray::Array1::zeros(f));
    let mut out = Array2::zeros((k, f));
    for c in 0..k {
        let row = match (&primary[c], &source_means[c]) {
            (Some(m), _) | (None, Some(m)) => m.clone(),
            (None, None) => {
                let mut m = global.clone();
                m[c % f] += 1e-3 * (c + 1) as f64;
                m
            }
        };
        out.row_mut(c).assign(&row);
    }
    Ok(Centroids(out))
}

/// A parameter-group update, in the order an adaptation step applies them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Touch {
    DecEncoder,
    DecCentroids,
    DisCentroids,
    AdvDiscriminator,
    EncEncoder,
}

impl fmt::Display for Touch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Touch::DecEncoder => "dec:θ_Et",
            Touch::DecCentroids => "dec:Z_c",
            Touch::DisCentroids => "dis:Z_c",
            Touch::AdvDiscriminator => "adv:θ_D",
            Touch::EncEncoder => "enc:θ_Et",
        })
    }
}

/// Objective values at one iteration; clustering terms are absent while
/// they are skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iter: usize,
    pub adv: f64,
    pub enc: f64,
    pub dec: Option<f64>,
    pub dis: Option<f64>,
}

impl LossRecord {
    pub fn is_finite(&self) -> bool {
        self.adv.is_finite()
            && self.enc.is_finite()
            && self.dec.is_none_or(f64::is_finite)
            && self.dis.is_none_or(f64::is_finite)
    }
}

pub struct TrainState {
    pub bundle: ModelBundle,
    pub centroids: Centroids,
    pub iter: usize,
    pub traces: Vec<LossRecord>,
    pub rng: SamplerRng,
    disc_opt: Optimizer,
    enc_opt: Optimizer,
    touches: Option<Vec<Touch>>,
}

impl TrainState {
    pub fn new(bundle: ModelBundle, centroids: Centroids, cfg: &AdaptationConfig) -> Result<Self> {
        if centroids.len() != bundle.num_classes() || centroids.0.ncols() != bundle.feature_dim() {
            return Err(Error::Shape(format!(
                "centroids are {:?}, expected ({}, {})",
                centroids.0.dim(),
                bundle.num_classes(),
                bundle.feature_dim()
            )));
        }
        let adam = AdamConfig::adversarial();
        Ok(Self {
            disc_opt: Optimizer::new(cfg.optimizer, bundle.network(Component::Discriminator).params().len(), adam),
            enc_opt: Optimizer::new(cfg.optimizer, bundle.network(Component::TargetEncoder).params().len(), adam),
            bundle,
            centroids,
            iter: 0,
            traces: Vec::new(),
            rng: sampler_rng(cfg.seed),
            touches: None,
        })
    }

    /// Records every parameter-group update from now on.
    pub fn instrument(&mut self) {
        self.touches = Some(Vec::new());
    }

    /// Updates recorded since [`TrainState::instrument`], drained.
    pub fn take_touches(&mut self) -> Vec<Touch> {
        self.touches.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn touch(&mut self, t: Touch) {
        if let Some(log) = &mut self.touches {
            log.push(t);
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.bundle.clone(), Some(self.centroids.0.clone()), self.iter)
    }
}

fn negated(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

/// One iteration of the adaptation loop, in this order:
///
/// 1. past the warmup and when clustering is enabled: descend the
///    clustering objective for `E_t` and the centroids (one gradient
///    evaluation, both applied), then, for the full method, descend the
///    dissimilarity objective for the centroids;
/// 2. ascend the discriminator objective for `D`;
/// 3. ascend the inverted-label objective for `E_t`.
pub fn adaptation_step(
    state: &mut TrainState,
    target_batch: &Minibatch,
    source_batch: &Minibatch,
    cfg: &AdaptationConfig,
) -> Result<()> {
    let mut record = LossRecord {
        iter: state.iter,
        adv: 0.0,
        enc: 0.0,
        dec: None,
        dis: None,
    };
    if state.iter > cfg.warmup_iters && cfg.ablation.clusters() {
        let dec = objectives::clustering(&state.bundle, &state.centroids.0, &target_batch.inputs, cfg.alpha)?;
        sgd_step(state.bundle.params_mut(Component::TargetEncoder)?, &dec.target_encoder, cfg.gamma_dec);
        state.touch(Touch::DecEncoder);
        sgd_step(state.centroids.0.as_slice_mut().unwrap(), dec.centroids.as_slice().unwrap(), cfg.gamma_dec);
        state.touch(Touch::DecCentroids);
        record.dec = Some(dec.loss);

        if cfg.ablation == Ablation::Full {
            let dis = objectives::dissimilarity(&state.bundle, &state.centroids.0)?;
            sgd_step(state.centroids.0.as_slice_mut().unwrap(), dis.centroids.as_slice().unwrap(), cfg.gamma_dis);
            state.touch(Touch::DisCentroids);
            record.dis = Some(dis.loss);
        }
    }

    let adv = objectives::adversarial(&state.bundle, &source_batch.inputs, &target_batch.inputs)?;
    state
        .disc_opt
        .step(state.bundle.params_mut(Component::Discriminator)?, &negated(&adv.discriminator), cfg.gamma_adv);
    state.touch(Touch::AdvDiscriminator);
    record.adv = adv.loss;

    let enc = objectives::encoder(&state.bundle, &target_batch.inputs)?;
    state
        .enc_opt
        .step(state.bundle.params_mut(Component::TargetEncoder)?, &negated(&enc.target_encoder), cfg.gamma_enc);
    state.touch(Touch::EncEncoder);
    record.enc = enc.loss;

    if state.centroids.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("centroids".into()));
    }
    state.traces.push(record);
    state.iter += 1;
    Ok(())
}

/// Pseudo-label churn tracker for early stopping: fraction of target
/// instances whose predicted class changed between consecutive checks,
/// averaged over the checks inside a trailing window of iterations.
#[derive(Debug, Clone)]
pub struct ChurnMonitor {
    window: usize,
    threshold: f64,
    last: Option<Vec<usize>>,
    history: Vec<(usize, f64)>,
}

impl ChurnMonitor {
    pub fn new(window: usize, threshold: f64) -> Self {
        Self {
            window,
            threshold,
            last: None,
            history: Vec::new(),
        }
    }

    /// Feeds predictions at `iter`; returns true once the moving average
    /// over a full window is below the threshold.
    pub fn observe(&mut self, iter: usize, predictions: Vec<usize>) -> bool {
        if let Some(prev) = &self.last {
            let changed = prev.iter().zip(&predictions).filter(|(a, b)| a != b).count();
            let frac = changed as f64 / predictions.len().max(1) as f64;
            self.history.push((iter, frac));
        }
        self.last = Some(predictions);
        let first_iter = match self.history.first() {
            Some(&(i, _)) => i,
            None => return false,
        };
        if iter < first_iter + self.window {
            return false;
        }
        let recent: Vec<f64> = self
            .history
            .iter()
            .filter(|(i, _)| i + self.window > iter)
            .map(|&(_, c)| c)
            .collect();
        !recent.is_empty() && recent.iter().sum::<f64>() / (recent.len() as f64) < self.threshold
    }
}

/// Everything a finished run produced.
pub struct RunOutcome {
    pub state: TrainState,
    /// Final metrics; `None` when the target carries no labels.
    pub report: Option<MetricsReport>,
    /// Metrics at each evaluation interval.
    pub history: Vec<MetricsReport>,
    pub stopped_early: bool,
}

impl RunOutcome {
    pub fn loss_trace_csv(&self) -> String {
        let mut out = String::from("iter,L_adv,L_enc,L_dec,L_dis\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.state.traces {
            out.push_str(&format!("{},{},{},{},{}\n", r.iter, r.adv, r.enc, opt(r.dec), opt(r.dis)));
        }
        out
    }

    /// Writes `losses.csv`, `metrics.jsonl` and `checkpoint.json` into `dir`.
    pub fn write_artifacts(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("losses.csv"), self.loss_trace_csv())?;
        let mut metrics = fs::File::create(dir.join("metrics.jsonl"))?;
        for r in &self.history {
            writeln!(metrics, "{}", r.to_json_line()?)?;
        }
        self.state.checkpoint().save(&dir.join("checkpoint.json"))
    }
}

const CHURN_WINDOW: usize = 200;
const CHURN_THRESHOLD: f64 = 1e-3;

/// Runs adaptation from a pretrained bundle; see [`run_adaptation_with`].
pub fn run_adaptation(
    bundle: ModelBundle,
    target: &DomainDataset,
    source: &DomainDataset,
    cfg: &AdaptationConfig,
) -> Result<RunOutcome> {
    run_adaptation_with(bundle, target, source, cfg, |_| {})
}

/// Initializes centroids, then alternates batch sampling and
/// [`adaptation_step`] for `cfg.max_iters` iterations, or until
/// pseudo-label churn settles when `cfg.early_stop` is set.
///
/// After a nonzero warmup the centroids are initialized again from the
/// warmed-up target encoder, right before the first clustering update.
///
/// Target labels, when present, are used only for the metrics passed to
/// `on_eval` and returned in the outcome.
pub fn run_adaptation_with(
    bundle: ModelBundle,
    target: &DomainDataset,
    source: &DomainDataset,
    cfg: &AdaptationConfig,
    mut on_eval: impl FnMut(&MetricsReport),
) -> Result<RunOutcome> {
    cfg.validate()?;
    let frozen = bundle.frozen();
    if !(frozen.source_encoder && frozen.classifier) {
        return Err(Error::invalid("bundle is not pretrained: E_s and C must be frozen"));
    }
    let centroids = init_centroids(&bundle, target, source, cfg.mode)?;
    let mut state = TrainState::new(bundle, centroids, cfg)?;
    let unlabeled_target = target.unlabeled();
    let mix = cfg.effective_mix_ratio();
    let mut history = Vec::new();
    let mut churn = ChurnMonitor::new(CHURN_WINDOW, CHURN_THRESHOLD);
    let mut stopped_early = false;

    let mut eval = |state: &TrainState, history: &mut Vec<MetricsReport>| -> Result<()> {
        if target.labels().is_some() {
            let mut r = evaluate(&state.bundle, target, Some(&state.centroids.0))?;
            r.iter = state.iter;
            on_eval(&r);
            history.push(r);
        }
        Ok(())
    };

    while state.iter < cfg.max_iters {
        if cfg.ablation.clusters() && cfg.warmup_iters > 0 && state.iter == cfg.warmup_iters + 1 {
            state.centroids = init_centroids(&state.bundle, target, source, cfg.mode)?;
        }
        let tb = sample_minibatch(&unlabeled_target, source, cfg.batch_size, mix, &mut state.rng)?;
        let sb = sample_labeled(source, cfg.batch_size, &mut state.rng)?;
        adaptation_step(&mut state, &tb, &sb, cfg)?;
        if cfg.eval_every > 0 && state.iter % cfg.eval_every == 0 {
            eval(&state, &mut history)?;
            if cfg.early_stop && churn.observe(state.iter, predict(&state.bundle, target)?) {
                stopped_early = true;
                break;
            }
        }
    }
    if history.last().is_none_or(|r| r.iter != state.iter) {
        eval(&state, &mut history)?;
    }
    Ok(RunOutcome {
        report: history.last().cloned(),
        state,
        history,
        stopped_early,
    })
}
