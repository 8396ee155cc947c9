//! Streaming test-time adaptation.
//!
//! Samples are processed one at a time in file order. For the first
//! `⌊λ · N⌋` samples the prediction is `argmax(P_clip + P_neg)` while
//! low-entropy samples are collected per pseudo-class. After the last of
//! those samples the adapter is trained once on the collected support set,
//! and every later sample is classified by `argmax(P_clip + P_adapter + P_neg)`.
//! The negative cache keeps updating throughout.
//!
//! Ground-truth labels only ever reach [`Metrics`]; the engine has no access
//! to them.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::adapter::{adapt_text, adapter_logits, fit, AdapterWeights, FitConfig, FitSummary, SupportSet};
use crate::error::{Result, TaeaError};
use crate::featurestore::{Labels, Manifest};
use crate::negcache::{CacheStats, NegCacheConfig, NegativeCache};
use crate::numerics::{argmax, AdamWParams, Matrix};
use crate::zeroshot::{predict, Prediction, TextBank, DEFAULT_LOGIT_SCALE};

/// Every tunable of a run. Defaults follow the reference setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TtaConfig {
    /// Fraction of the stream collected before the adapter is trained.
    pub lambda_frac: f64,
    /// Weight of the adapter logits in the fusion.
    pub gamma: f32,
    pub lr: f32,
    pub epochs: usize,
    pub batch: usize,
    pub logit_scale: f32,
    /// Support samples kept per pseudo-class.
    pub support_cap_per_class: usize,
    pub weight_decay: f32,
    pub neg_cache: NegCacheConfig,
    pub use_neg_cache: bool,
    /// Recompute adapted text features for each phase-2 sample.
    pub per_sample_adaptation: bool,
    pub seed: u64,
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            lambda_frac: 0.25,
            gamma: 0.6,
            lr: 0.001,
            epochs: 3,
            batch: 3,
            logit_scale: DEFAULT_LOGIT_SCALE,
            support_cap_per_class: 3,
            weight_decay: AdamWParams::default().weight_decay,
            neg_cache: NegCacheConfig::default(),
            use_neg_cache: true,
            per_sample_adaptation: false,
            seed: 0,
        }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TaeaError::Parameter(msg));
        if !(self.lambda_frac > 0.0 && self.lambda_frac <= 1.0) {
            return bad(format!("lambda_frac must be in (0, 1], got {}", self.lambda_frac));
        }
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.logit_scale > 0.0) || !self.logit_scale.is_finite() {
            return bad(format!("logit_scale must be > 0, got {}", self.logit_scale));
        }
        if self.support_cap_per_class == 0 {
            return bad("support_cap_per_class must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        let nc = &self.neg_cache;
        if !(0.0 <= nc.entropy_lo && nc.entropy_lo <= nc.entropy_hi && nc.entropy_hi.is_finite()) {
            return bad(format!(
                "negative-cache entropy window [{}, {}] is invalid",
                nc.entropy_lo, nc.entropy_hi
            ));
        }
        if !(nc.mask_threshold > 0.0 && nc.mask_threshold < 1.0) {
            return bad(format!("mask threshold {} not in (0, 1)", nc.mask_threshold));
        }
        if !(nc.alpha >= 0.0 && nc.alpha.is_finite() && nc.beta >= 0.0 && nc.beta.is_finite()) {
            return bad("negative-cache alpha and beta must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Stream index after which the adapter is trained: `⌊λ · n⌋`.
    pub fn switch_index(&self, n_samples: usize) -> usize {
        ((self.lambda_frac * n_samples as f64).floor() as usize).min(n_samples)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            logit_scale: self.logit_scale,
            adamw: AdamWParams {
                weight_decay: self.weight_decay,
                ..AdamWParams::default()
            },
            seed: self.seed,
        }
    }
}

/// Keeps the `k` lowest-entropy samples seen so far for each pseudo-class.
#[derive(Debug, Clone)]
pub struct SupportCollector {
    k: usize,
    dim: usize,
    buckets: Vec<Vec<(f32, Vec<f32>)>>,
}

impl SupportCollector {
    pub fn new(n_classes: usize, dim: usize, k: usize) -> Self {
        Self {
            k,
            dim,
            buckets: vec![Vec::new(); n_classes],
        }
    }

    /// Offers a sample; a full bucket evicts its highest-entropy member only
    /// for a strictly lower entropy. Returns whether the sample was kept.
    pub fn offer(&mut self, f_test: &[f32], pred: &Prediction) -> bool {
        let Some(bucket) = self.buckets.get_mut(pred.pseudo_class) else {
            return false;
        };
        let h = pred.entropy_nats;
        if bucket.len() >= self.k {
            match bucket.last() {
                Some((worst, _)) if h < *worst => {
                    bucket.pop();
                }
                _ => return false,
            }
        }
        let at = bucket.partition_point(|(e, _)| *e <= h);
        bucket.insert(at, (h, f_test.to_vec()));
        true
    }

    pub fn len(&self) -> usize {
        self.buckets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Retained entropies per class, ascending.
    pub fn bucket_entropies(&self) -> Vec<Vec<f32>> {
        self.buckets
            .iter()
            .map(|b| b.iter().map(|(h, _)| *h).collect())
            .collect()
    }

    /// Support set ordered by class, then entropy.
    pub fn to_support_set(&self) -> Result<SupportSet> {
        let mut features = Matrix::empty(self.dim);
        let mut labels = Vec::new();
        let mut entropies = Vec::new();
        for (c, bucket) in self.buckets.iter().enumerate() {
            for (h, f) in bucket {
                features.push_row(f)?;
                labels.push(c);
                entropies.push(*h);
            }
        }
        SupportSet::new(features, labels, entropies)
    }
}

/// Elementwise sum of the present logit terms.
pub fn fuse_logits(p_clip: &[f32], p_adapter: Option<&[f32]>, p_neg: Option<&[f32]>) -> Result<Vec<f32>> {
    let mut out = p_clip.to_vec();
    for term in [p_adapter, p_neg].into_iter().flatten() {
        if term.len() != out.len() {
            return Err(TaeaError::Shape(format!(
                "cannot fuse a length-{} term into {} classes",
                term.len(),
                out.len()
            )));
        }
        for (o, t) in out.iter_mut().zip(term) {
            *o += t;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Collect,
    Adapted,
}

/// What happened to one stream sample.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub index: usize,
    pub phase: Phase,
    pub predicted: usize,
    pub zero_shot: usize,
    pub fused_logits: Vec<f32>,
}

#[derive(Debug, Clone)]
struct AdaptedState {
    weights: AdapterWeights,
    omega_hat: Matrix,
    support_features: Matrix,
}

/// Online adaptation state machine. Feed features with [`StreamEngine::step`].
#[derive(Debug)]
pub struct StreamEngine<'a> {
    bank: &'a TextBank,
    config: TtaConfig,
    switch_at: usize,
    processed: usize,
    cache: Option<NegativeCache>,
    collector: SupportCollector,
    adapted: Option<AdaptedState>,
    support_size: usize,
    fit_summary: Option<FitSummary>,
    training_ms: f64,
    warnings: Vec<String>,
}

impl<'a> StreamEngine<'a> {
    pub fn new(bank: &'a TextBank, config: TtaConfig, n_samples: usize) -> Result<Self> {
        config.validate()?;
        let n_classes = bank.n_classes();
        let mut engine = Self {
            bank,
            config,
            switch_at: config.switch_index(n_samples),
            processed: 0,
            cache: config
                .use_neg_cache
                .then(|| NegativeCache::new(n_classes, config.neg_cache)),
            collector: SupportCollector::new(n_classes, bank.dim(), config.support_cap_per_class),
            adapted: None,
            support_size: 0,
            fit_summary: None,
            training_ms: 0.0,
            warnings: Vec::new(),
        };
        if engine.switch_at == 0 {
            engine.train()?;
        }
        Ok(engine)
    }

    pub fn switch_index(&self) -> usize {
        self.switch_at
    }

    pub fn processed(&self) -> usize {
        self.processed
    }

    pub fn is_adapted(&self) -> bool {
        self.adapted.is_some()
    }

    pub fn collector(&self) -> &SupportCollector {
        &self.collector
    }

    pub fn cache(&self) -> Option<&NegativeCache> {
        self.cache.as_ref()
    }

    /// Adapted text features once training has happened.
    pub fn omega_hat(&self) -> Option<&Matrix> {
        self.adapted.as_ref().map(|a| &a.omega_hat)
    }

    pub fn step(&mut self, f_test: &[f32]) -> Result<StepRecord> {
        let pred = predict(f_test, self.bank, self.config.logit_scale)?;
        let p_neg = self.cache.as_ref().map(|c| c.negative_logits(f_test));
        let index = self.processed;

        let (phase, fused) = match &self.adapted {
            None => {
                let fused = fuse_logits(&pred.logits, None, p_neg.as_deref())?;
                self.collector.offer(f_test, &pred);
                (Phase::Collect, fused)
            }
            Some(state) => {
                let p_adapter = if self.config.per_sample_adaptation {
                    let mut keys = state.support_features.clone();
                    keys.push_row(f_test)?;
                    let omega_hat = adapt_text(self.bank.omega(), &keys, &state.weights)?;
                    adapter_logits(f_test, &omega_hat, self.config.gamma)?
                } else {
                    adapter_logits(f_test, &state.omega_hat, self.config.gamma)?
                };
                let fused = fuse_logits(&pred.logits, Some(&p_adapter), p_neg.as_deref())?;
                (Phase::Adapted, fused)
            }
        };
        if let Some(cache) = self.cache.as_mut() {
            cache.consider_insert(f_test, &pred);
        }
        self.processed += 1;
        if self.processed == self.switch_at {
            self.train()?;
        }
        Ok(StepRecord {
            index,
            phase,
            predicted: argmax(&fused),
            zero_shot: pred.pseudo_class,
            fused_logits: fused,
        })
    }

    fn train(&mut self) -> Result<()> {
        debug_assert!(self.adapted.is_none(), "adapter is trained once");
        let started = Instant::now();
        let support = self.collector.to_support_set()?;
        let outcome = fit(&support, self.bank.omega(), &self.config.fit_config())?;
        if outcome.disabled {
            let msg = format!(
                "no support samples collected in the first {} samples; adapter disabled",
                self.switch_at
            );
            warn!("{msg}");
            self.warnings.push(msg);
        }
        self.support_size = support.len();
        self.fit_summary = Some(FitSummary::from(&outcome));
        self.adapted = Some(AdaptedState {
            weights: outcome.weights,
            omega_hat: outcome.omega_hat,
            support_features: support.features().clone(),
        });
        self.training_ms = started.elapsed().as_secs_f64() * 1e3;
        Ok(())
    }
}

/// Top-1 bookkeeping. The only consumer of ground-truth labels.
#[derive(Debug)]
pub struct Metrics<'l> {
    labels: &'l Labels,
    n_classes: usize,
    correct: [usize; 2],
    labeled: [usize; 2],
    samples: [usize; 2],
    zero_shot_correct: usize,
    class_correct: Vec<usize>,
    class_total: Vec<usize>,
}

impl<'l> Metrics<'l> {
    pub fn new(labels: &'l Labels, n_classes: usize) -> Self {
        Self {
            labels,
            n_classes,
            correct: [0; 2],
            labeled: [0; 2],
            samples: [0; 2],
            zero_shot_correct: 0,
            class_correct: vec![0; n_classes],
            class_total: vec![0; n_classes],
        }
    }

    pub fn record(&mut self, step: &StepRecord) {
        let p = match step.phase {
            Phase::Collect => 0,
            Phase::Adapted => 1,
        };
        self.samples[p] += 1;
        let Some(truth) = self.labels.get(step.index) else {
            return;
        };
        let hit = step.predicted == truth;
        self.labeled[p] += 1;
        self.correct[p] += hit as usize;
        self.zero_shot_correct += (step.zero_shot == truth) as usize;
        if truth < self.n_classes {
            self.class_total[truth] += 1;
            self.class_correct[truth] += hit as usize;
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// `f64` that serializes with exactly six decimals.
struct Fixed6(f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::Error;
        if !self.0.is_finite() {
            return Err(S::Error::custom(format!("cannot serialize {}", self.0)));
        }
        RawValue::from_string(format!("{:.6}", self.0))
            .map_err(S::Error::custom)?
            .serialize(s)
    }
}

fn fixed6<S: Serializer>(x: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    Fixed6(*x).serialize(s)
}

fn fixed6_opt<S: Serializer>(x: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    x.map(Fixed6).serialize(s)
}

fn fixed6_vec<S: Serializer>(x: &[Option<f64>], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(x.iter().map(|v| v.map(Fixed6)))
}

/// Outcome of one streamed run. Accuracies are fractions in `[0, 1]`, `null`
/// when no labeled sample contributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunReport {
    pub dataset_name: String,
    pub n_samples: usize,
    pub n_classes: usize,
    /// Samples processed before training (`⌊λ · n_samples⌋`).
    pub phase1_samples: usize,
    pub phase2_samples: usize,
    pub phase1_labeled: usize,
    pub phase2_labeled: usize,
    #[serde(serialize_with = "fixed6_opt")]
    pub overall_top1: Option<f64>,
    #[serde(serialize_with = "fixed6_opt")]
    pub phase1_top1: Option<f64>,
    #[serde(serialize_with = "fixed6_opt")]
    pub phase2_top1: Option<f64>,
    /// Frozen zero-shot accuracy over the same stream.
    #[serde(serialize_with = "fixed6_opt")]
    pub zero_shot_top1: Option<f64>,
    #[serde(serialize_with = "fixed6_vec")]
    pub per_class_top1: Vec<Option<f64>>,
    pub support_set_size: usize,
    pub fit: Option<FitSummary>,
    pub cache_stats: Option<CacheStats>,
    #[serde(serialize_with = "fixed6")]
    pub wall_ms_total: f64,
    #[serde(serialize_with = "fixed6")]
    pub wall_ms_training: f64,
    pub warnings: Vec<String>,
    pub config: TtaConfig,
    pub seed: u64,
}

impl RunReport {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| TaeaError::Numeric(format!("report serialization failed: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| TaeaError::Schema {
            path: "<report>".into(),
            msg: e.to_string(),
        })
    }

    /// Copy with wall-clock fields zeroed, for comparing runs byte-for-byte.
    pub fn without_timings(&self) -> Self {
        Self {
            wall_ms_total: 0.0,
            wall_ms_training: 0.0,
            ..self.clone()
        }
    }
}

pub fn write_report(report: &RunReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report.to_json()?).map_err(|e| TaeaError::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| TaeaError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| TaeaError::Schema {
        path: path.into(),
        msg: e.to_string(),
    })
}

/// Loaded, validated inputs of a run.
#[derive(Debug, Clone)]
pub struct StreamInputs {
    pub dataset_name: String,
    pub images: Matrix,
    pub bank: TextBank,
    pub labels: Labels,
}

impl StreamInputs {
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let images = manifest.load_images()?;
        let text = manifest.load_text()?;
        let bank = TextBank::new(text, manifest.classes.clone())?;
        let labels = manifest.load_labels()?;
        Ok(Self {
            dataset_name: manifest.dataset_name.clone(),
            images,
            bank,
            labels,
        })
    }
}

pub fn run_stream(manifest: &Manifest, config: &TtaConfig) -> Result<RunReport> {
    let inputs = StreamInputs::load(manifest)?;
    run_stream_on(&inputs, config).map(|(report, _)| report)
}

pub const MIN_STREAM_SAMPLES: usize = 4;

/// Runs the stream over in-memory inputs and returns the per-sample records too.
pub fn run_stream_on(inputs: &StreamInputs, config: &TtaConfig) -> Result<(RunReport, Vec<StepRecord>)> {
    let started = Instant::now();
    let n = inputs.images.rows();
    if n < MIN_STREAM_SAMPLES {
        return Err(TaeaError::Parameter(format!(
            "a stream needs at least {MIN_STREAM_SAMPLES} samples, got {n}"
        )));
    }
    if inputs.labels.len() != n {
        return Err(TaeaError::Consistency(format!(
            "{} labels for {n} samples",
            inputs.labels.len()
        )));
    }
    if inputs.images.cols() != inputs.bank.dim() {
        return Err(TaeaError::Consistency(format!(
            "image dim {} vs text dim {}",
            inputs.images.cols(),
            inputs.bank.dim()
        )));
    }

    let mut engine = StreamEngine::new(&inputs.bank, *config, n)?;
    let mut metrics = Metrics::new(&inputs.labels, inputs.bank.n_classes());
    let mut records = Vec::with_capacity(n);
    for f in inputs.images.row_iter() {
        let rec = engine.step(f)?;
        metrics.record(&rec);
        records.push(rec);
    }

    let m = &metrics;
    let labeled_total = m.labeled[0] + m.labeled[1];
    let report = RunReport {
        dataset_name: inputs.dataset_name.clone(),
        n_samples: n,
        n_classes: inputs.bank.n_classes(),
        phase1_samples: m.samples[0],
        phase2_samples: m.samples[1],
        phase1_labeled: m.labeled[0],
        phase2_labeled: m.labeled[1],
        overall_top1: ratio(m.correct[0] + m.correct[1], labeled_total),
        phase1_top1: ratio(m.correct[0], m.labeled[0]),
        phase2_top1: ratio(m.correct[1], m.labeled[1]),
        zero_shot_top1: ratio(m.zero_shot_correct, labeled_total),
        per_class_top1: m
            .class_correct
            .iter()
            .zip(&m.class_total)
            .map(|(&c, &t)| ratio(c, t))
            .collect(),
        support_set_size: engine.support_size,
        fit: engine.fit_summary.clone(),
        cache_stats: engine.cache.as_ref().map(NegativeCache::stats),
        wall_ms_total: started.elapsed().as_secs_f64() * 1e3,
        wall_ms_training: engine.training_ms,
        warnings: engine.warnings.clone(),
        config: *config,
        seed: config.seed,
    };
    Ok((report, records))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Gamma,
    LambdaFrac,
    Lr,
    Epochs,
}

impl FromStr for SweepParam {
    type Err = TaeaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "lambda_frac" | "lam" | "lambda" => Ok(Self::LambdaFrac),
            "lr" => Ok(Self::Lr),
            "epochs" => Ok(Self::Epochs),
            other => Err(TaeaError::Parameter(format!(
                "unknown sweep parameter {other:?}; expected gamma, lambda_frac, lr or epochs"
            ))),
        }
    }
}

impl SweepParam {
    pub fn apply(self, base: &TtaConfig, value: f64) -> Result<TtaConfig> {
        let mut c = *base;
        match self {
            Self::Gamma => c.gamma = value as f32,
            Self::LambdaFrac => c.lambda_frac = value,
            Self::Lr => c.lr = value as f32,
            Self::Epochs => {
                if !(value >= 0.0) || value.fract() != 0.0 {
                    return Err(TaeaError::Parameter(format!(
                        "epochs must be a non-negative integer, got {value}"
                    )));
                }
                c.epochs = value as usize;
            }
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub report: RunReport,
}

/// One independent run per value, same seed, results in value order.
/// Runs execute on separate threads.
pub fn sweep(inputs: &StreamInputs, base: &TtaConfig, param: SweepParam, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(TaeaError::Parameter("sweep needs at least one value".into()));
    }
    let configs = values
        .iter()
        .map(|&v| param.apply(base, v))
        .collect::<Result<Vec<_>>>()?;
    let reports: Vec<Result<RunReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .iter()
            .map(|cfg| scope.spawn(move || run_stream_on(inputs, cfg).map(|(r, _)| r)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect()
    });
    values
        .iter()
        .zip(reports)
        .map(|(&value, report)| Ok(SweepRow { value, report: report? }))
        .collect()
}

pub const SWEEP_CSV_HEADER: &str = "value,overall_top1,phase1_top1,phase2_top1,zero_shot_top1,wall_ms_total";

/// CSV with header; missing accuracies are empty fields.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.6}")).unwrap_or_default();
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{:.6}",
            row.value,
            cell(r.overall_top1),
            cell(r.phase1_top1),
            cell(r.phase2_top1),
            cell(r.zero_shot_top1),
            r.wall_ms_total
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn pred(class: usize, entropy: f32) -> Prediction {
        Prediction {
            logits: vec![],
            probs: vec![],
            pseudo_class: class,
            entropy_nats: entropy,
        }
    }

    #[test]
    fn defaults_match_reference_setup() {
        let c = TtaConfig::default();
        assert_eq!(c.lambda_frac, 0.25);
        assert_eq!(c.gamma, 0.6);
        assert_eq!(c.lr, 0.001);
        assert_eq!((c.epochs, c.batch), (3, 3));
        assert_eq!(c.logit_scale, 100.0);
        assert_eq!(c.support_cap_per_class, 3);
        assert!(c.use_neg_cache && !c.per_sample_adaptation);
        assert_eq!(c.seed, 0);
        c.validate().unwrap();
    }

    #[test]
    fn switch_point_uses_floor() {
        let c = TtaConfig::default();
        assert_eq!(c.switch_index(100), 25);
        assert_eq!(c.switch_index(103), 25);
        assert_eq!(c.switch_index(2000), 500);
        let c = TtaConfig { lambda_frac: 0.7, ..c };
        assert_eq!(c.switch_index(100), 70);
        assert_eq!(TtaConfig { lambda_frac: 1.0, ..c }.switch_index(9), 9);
    }

    #[test]
    fn invalid_configs_rejected() {
        let base = TtaConfig::default();
        for bad in [
            TtaConfig { lambda_frac: 0.0, ..base },
            TtaConfig { lambda_frac: 1.5, ..base },
            TtaConfig { gamma: -0.1, ..base },
            TtaConfig { batch: 0, ..base },
            TtaConfig { logit_scale: 0.0, ..base },
            TtaConfig { support_cap_per_class: 0, ..base },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn collector_keeps_lowest_entropy() {
        let mut c = SupportCollector::new(2, 2, 1);
        c.offer(&[1.0, 0.0], &pred(0, 0.9));
        c.offer(&[0.0, 1.0], &pred(0, 0.3));
        assert_eq!(c.bucket_entropies(), vec![vec![0.3], vec![]]);
        let s = c.to_support_set().unwrap();
        assert_eq!(s.features().row(0), &[0.0, 1.0]);
    }

    #[test]
    fn collector_capacity() {
        let mut c = SupportCollector::new(5, 2, 3);
        let mut rng = Rng::new(0);
        for i in 0..200 {
            c.offer(&[1.0, 0.0], &pred(i % 5, rng.uniform()));
        }
        assert!(c.len() <= 15);
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fuse_logits(&[0.3, 0.1], None, None).unwrap(), vec![0.3, 0.1]);
        let f = fuse_logits(&[1.0, 0.0], Some(&[0.0, 0.6]), Some(&[0.0, -0.2])).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-7 && (f[1] - 0.4).abs() < 1e-7);
        let f = fuse_logits(&[0.5, 0.49], Some(&[0.0, 0.0]), Some(&[-0.3, 0.0])).unwrap();
        assert_eq!(argmax(&[0.5, 0.49]), 0);
        assert_eq!(argmax(&f), 1);
        assert!(matches!(
            fuse_logits(&[0.5, 0.49], Some(&[0.0]), None),
            Err(TaeaError::Shape(_))
        ));
    }

    #[test]
    fn sweep_param_parsing() {
        assert_eq!("gamma".parse::<SweepParam>().unwrap(), SweepParam::Gamma);
        assert_eq!("lambda_frac".parse::<SweepParam>().unwrap(), SweepParam::LambdaFrac);
        assert!(matches!("beta".parse::<SweepParam>(), Err(TaeaError::Parameter(_))));
        assert!(SweepParam::Epochs.apply(&TtaConfig::default(), 1.5).is_err());
        assert_eq!(SweepParam::Epochs.apply(&TtaConfig::default(), 5.0).unwrap().epochs, 5);
    }

    #[test]
    fn fixed_six_decimals() {
        let json = serde_json::to_string(&Fixed6(0.5)).unwrap();
        assert_eq!(json, "0.500000");
        let json = serde_json::to_string(&vec![Some(Fixed6(1.0 / 3.0)), None]).unwrap();
        assert_eq!(json, "[0.333333,null]");
    }
}
