//! Alternating minimax training and evaluation.
//!
//! Each step first updates the discriminator on its own batch with the
//! extractor's output held constant (ascent on the regularizer), then updates
//! the extractor and heads on the main batch (descent on the branch losses
//! plus `lambda` times the regularizer) with the discriminator untouched.
//! Main and discriminator batches come from separate random streams, so the
//! main trajectory does not depend on how many discriminator steps run.

use std::fmt::Write as _;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::divergence::{ConditionalFamily, DiscreteDomainFamily};
use crate::error::{Error, Result};
use crate::losses::{bce_over_selection, regularizer, sample_classes, DgVariant, DomainLabel, LossReport, RegularizerWeights};
use crate::metrics::{MetricsReport, PredClsMode, RankedPrediction};
use crate::models::{BatchInputs, DiscriminatorKind, Model, ModelConfig, PredictionScores, TapPoint};
use crate::numeric::{Direction, Graph, Sgd, SgdConfig, Tensor};
use crate::split::SplitResult;
use crate::stats::DomainStatistics;

const MAIN_STREAM: u64 = 1;
const DISCRIMINATOR_STREAM: u64 = 2;
const SAMPLING_STREAM: u64 = 3;
const EVAL_CHUNK: usize = 512;

/// Step decay: the learning rate is multiplied by `gamma` every `interval`
/// steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LrSchedule {
    pub interval: usize,
    pub gamma: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { interval: 5_000, gamma: 0.96 }
    }
}

impl LrSchedule {
    pub fn factor(&self, step: usize) -> f64 {
        self.gamma.powi((step / self.interval) as i32)
    }
}

/// Architecture knobs that are not implied by the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub discriminator_hidden: Option<usize>,
    pub tap: TapPoint,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { hidden_dim: 64, feature_dim: 64, discriminator_hidden: Some(64), tap: TapPoint::PreHead }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub variant: DgVariant,
    /// Defaults to the variant's standard weight.
    pub lambda: Option<f64>,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    pub adversarial: SgdConfig,
    pub lr_schedule: LrSchedule,
    /// Discriminator updates per main update.
    pub discriminator_steps: usize,
    pub negative_ratio: usize,
    pub validation_interval: usize,
    pub network: NetworkConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: DgVariant::None,
            lambda: None,
            steps: 3_000,
            batch_size: 64,
            optimizer: SgdConfig { learning_rate: 0.01, ..SgdConfig::default() },
            adversarial: SgdConfig { learning_rate: 0.1, ..SgdConfig::default() },
            lr_schedule: LrSchedule::default(),
            discriminator_steps: 1,
            negative_ratio: 6,
            validation_interval: 500,
            network: NetworkConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn lambda(&self) -> f64 {
        self.lambda.unwrap_or_else(|| self.variant.default_lambda())
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        self.adversarial.validate()?;
        let checks = [
            (self.steps > 0, "steps must be positive"),
            (self.batch_size > 0, "batch_size must be positive"),
            (self.discriminator_steps >= 1, "discriminator_steps must be at least 1"),
            (self.validation_interval > 0, "validation_interval must be positive"),
            (self.lr_schedule.interval > 0, "lr_schedule.interval must be positive"),
            (self.lr_schedule.gamma > 0.0 && self.lr_schedule.gamma <= 1.0, "lr_schedule.gamma must be in (0, 1]"),
            (self.lambda() >= 0.0 && self.lambda().is_finite(), "lambda must be finite and nonnegative"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::Validation(msg.to_string())),
            None => Ok(()),
        }
    }
}

/// Label space of a dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub num_predicates: usize,
    pub num_objects: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub report: LossReport,
    /// Combined trainval+testval PredCls R@1, on validation steps.
    pub validation_r1: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub entries: Vec<LogEntry>,
    pub best_step: Option<usize>,
    pub best_validation_r1: Option<f64>,
}

impl RunLog {
    pub const CSV_HEADER: &'static str = "step,L_H,L_sp,L_U,L_DG,D_obj,L_total,lambda,val_r1";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for e in &self.entries {
            let r = &e.report;
            let val = e.validation_r1.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{},{}",
                e.step, r.l_h, r.l_sp, r.l_u, r.l_dg, r.discriminator_objective, r.l_total, r.lambda, val
            );
        }
        out
    }
}

pub struct TrainOutcome {
    /// Parameters at the best validation step.
    pub best: Model,
    /// Parameters after the last step.
    pub last: Model,
    pub log: RunLog,
    pub stats: DomainStatistics,
}

fn batch_labels(instances: &[&Instance]) -> Vec<DomainLabel> {
    instances.iter().map(|i| DomainLabel { object: i.object_label, predicates: i.predicate_labels.clone() }).collect()
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence { step, message: format!("{what} is {v}") })
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Builds the model for `cfg` with dimensions taken from `sample`.
pub fn build_model(cfg: &TrainConfig, sample: &Instance, labels: LabelSpace) -> Result<Model> {
    let n = cfg.network;
    Model::new(
        ModelConfig {
            human_dim: sample.features.human.len(),
            union_dim: sample.features.union.len(),
            spatial_dim: sample.features.spatial.len(),
            num_predicates: labels.num_predicates,
            num_objects: labels.num_objects,
            hidden_dim: n.hidden_dim,
            feature_dim: n.feature_dim,
            discriminator: cfg.variant.discriminator(),
            discriminator_hidden: n.discriminator_hidden,
            tap: n.tap,
        },
        cfg.seed,
    )
}

/// One discriminator ascent step; returns the regularizer value before it.
fn discriminator_step(
    model: &mut Model,
    sgd: &mut Sgd,
    variant: DgVariant,
    batch: &[&Instance],
    weights: &RegularizerWeights,
) -> Result<f64> {
    let inputs = BatchInputs::stack(batch.iter().map(|i| &i.features))?;
    let mut g = Graph::new();
    let fw = model.forward(&mut g, &inputs)?;
    let frozen = g.constant(g.value(fw.tap).clone())?;
    let Some(obj) = regularizer(&mut g, model, variant, frozen, &batch_labels(batch), weights)? else {
        return Ok(0.0);
    };
    let value = g.value(obj).item()?;
    let grads = g.backward(obj)?;
    let params = model.discriminator_params();
    sgd.step(model.store_mut(), &grads, &params, Direction::Ascend)?;
    Ok(value)
}

/// One main descent step; returns `(L_H, L_sp, L_U, L_DG)`.
#[allow(clippy::too_many_arguments)]
fn main_step(
    model: &mut Model,
    sgd: &mut Sgd,
    variant: DgVariant,
    lambda: f64,
    batch: &[&Instance],
    weights: &RegularizerWeights,
    neg_ratio: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, f64, f64)> {
    let k = model.config().num_predicates;
    let positives: Vec<Vec<usize>> = batch.iter().map(|i| i.predicate_labels.clone()).collect();
    let selections =
        positives.iter().map(|p| sample_classes(p, k, neg_ratio, &mut *rng)).collect::<Result<Vec<_>>>()?;
    let inputs = BatchInputs::stack(batch.iter().map(|i| &i.features))?;
    let mut g = Graph::new();
    let fw = model.forward(&mut g, &inputs)?;
    let lh = bce_over_selection(&mut g, fw.human_logits, &positives, &selections)?;
    let lsp = bce_over_selection(&mut g, fw.spatial_logits, &positives, &selections)?;
    let lu = bce_over_selection(&mut g, fw.union_logits, &positives, &selections)?;
    let base = g.add(lh, lsp)?;
    let mut total = g.add(base, lu)?;
    let labels = batch_labels(batch);
    let l_dg = if lambda > 0.0 {
        match regularizer(&mut g, model, variant, fw.tap, &labels, weights)? {
            Some(reg) => {
                let scaled = g.scale(reg, lambda)?;
                total = g.add(total, scaled)?;
                g.value(reg).item()?
            }
            None => 0.0,
        }
    } else {
        // logged only; kept off the gradient path
        let frozen = g.constant(g.value(fw.tap).clone())?;
        match regularizer(&mut g, model, variant, frozen, &labels, weights)? {
            Some(reg) => g.value(reg).item()?,
            None => 0.0,
        }
    };
    let values = (g.value(lh).item()?, g.value(lsp).item()?, g.value(lu).item()?, l_dg);
    let grads = g.backward(total)?;
    let params = model.main_params();
    sgd.step(model.store_mut(), &grads, &params, Direction::Descend)?;
    Ok(values)
}

/// Trains on `splits.train`, selecting the checkpoint with the best PredCls
/// R@1 on trainval and testval combined (ties keep the earlier step).
pub fn train(cfg: &TrainConfig, splits: &SplitResult, labels: LabelSpace) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = &splits.train;
    let first = train_set.first().ok_or_else(|| Error::Validation("training split is empty".into()))?;
    let stats = DomainStatistics::compute(train_set, labels.num_objects, labels.num_predicates)?;
    let weights = RegularizerWeights::new(stats.clone());
    let mut model = build_model(cfg, first, labels)?;
    let mut main_sgd = Sgd::new(cfg.optimizer)?;
    let mut disc_sgd = Sgd::new(cfg.adversarial)?;
    let mut main_rng = stream(cfg.seed, MAIN_STREAM);
    let mut disc_rng = stream(cfg.seed, DISCRIMINATOR_STREAM);
    let mut sample_rng = stream(cfg.seed, SAMPLING_STREAM);
    let lambda = cfg.lambda();
    let validation: Vec<Instance> = splits.trainval.iter().chain(&splits.testval).cloned().collect();

    let mut log = RunLog::default();
    let mut best = model.clone();
    let draw = |rng: &mut ChaCha8Rng| -> Vec<&Instance> {
        (0..cfg.batch_size).map(|_| &train_set[rng.random_range(0..train_set.len())]).collect()
    };
    for step in 1..=cfg.steps {
        let factor = cfg.lr_schedule.factor(step - 1);
        main_sgd.set_learning_rate(cfg.optimizer.learning_rate * factor);
        disc_sgd.set_learning_rate(cfg.adversarial.learning_rate * factor);

        let mut d_obj = 0.0;
        if cfg.variant != DgVariant::None {
            for j in 0..cfg.discriminator_steps {
                let batch = draw(&mut disc_rng);
                let v = discriminator_step(&mut model, &mut disc_sgd, cfg.variant, &batch, &weights)?;
                check_finite(step, "discriminator objective", v)?;
                if j == 0 {
                    d_obj = v;
                }
            }
        }
        let batch = draw(&mut main_rng);
        let (lh, lsp, lu, ldg) =
            main_step(&mut model, &mut main_sgd, cfg.variant, lambda, &batch, &weights, cfg.negative_ratio, &mut sample_rng)?;
        let report = LossReport::new(lh, lsp, lu, ldg, lambda, d_obj);
        check_finite(step, "total loss", report.l_total)?;

        let mut validation_r1 = None;
        if !validation.is_empty() && (step % cfg.validation_interval == 0 || step == cfg.steps) {
            let r1 = predcls_r1(&model, &validation, Scoring::Triplet)?;
            info!("step {step}: L_total {:.4} val R@1 {r1:.4}", report.l_total);
            if log.best_validation_r1.is_none_or(|b| r1 > b) {
                log.best_validation_r1 = Some(r1);
                log.best_step = Some(step);
                best = model.clone();
            }
            validation_r1 = Some(r1);
        }
        log.entries.push(LogEntry { step, report, validation_r1 });
    }
    if validation.is_empty() {
        best = model.clone();
        log.best_step = Some(cfg.steps);
    }
    Ok(TrainOutcome { best, last: model, log, stats })
}

/// Which score ranks predicates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scoring {
    /// `(s_h + s_u) * s_sp`.
    #[default]
    Triplet,
    /// `s_h * s_sp`.
    WithoutUnion,
    /// `s_u` alone.
    Union,
}

impl Scoring {
    pub fn apply(self, s: &PredictionScores) -> Vec<f64> {
        match self {
            Scoring::Triplet => s.triplet(),
            Scoring::WithoutUnion => s.without_union(),
            Scoring::Union => s.union.clone(),
        }
    }
}

pub fn predictions(model: &Model, instances: &[Instance], scoring: Scoring) -> Result<Vec<RankedPrediction>> {
    let mut out = Vec::with_capacity(instances.len());
    for chunk in instances.chunks(EVAL_CHUNK) {
        let batch = BatchInputs::stack(chunk.iter().map(|i| &i.features))?;
        for (inst, s) in chunk.iter().zip(model.predict_batch(&batch)?) {
            out.push(RankedPrediction::for_instance(inst, scoring.apply(&s)));
        }
    }
    Ok(out)
}

pub fn predcls_r1(model: &Model, instances: &[Instance], scoring: Scoring) -> Result<f64> {
    crate::metrics::predcls_recall(&predictions(model, instances, scoring)?, 1, PredClsMode::PerPair)
}

pub fn evaluate(model: &Model, instances: &[Instance], scoring: Scoring, mode: PredClsMode) -> Result<MetricsReport> {
    MetricsReport::compute(&predictions(model, instances, scoring)?, model.config().num_predicates, mode)
}

/// Settings for fitting a discriminator to a fixed discrete distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularFitConfig {
    pub steps: usize,
    pub optimizer: SgdConfig,
    pub discriminator_hidden: Option<usize>,
    pub seed: u64,
}

impl TabularFitConfig {
    /// Linear softmax head over one-hot bins (already fully expressive).
    pub fn softmax() -> Self {
        Self {
            steps: 3_000,
            optimizer: SgdConfig { learning_rate: 0.5, momentum: 0.9, weight_decay: 0.0, gradient_clip: 10.0 },
            discriminator_hidden: None,
            seed: 0,
        }
    }

    /// Binary head with one hidden layer, needed because a linear map of
    /// `bin ⊕ e_obj ⊕ e_pred` is additive across its inputs.
    pub fn binary() -> Self {
        Self {
            steps: 4_000,
            optimizer: SgdConfig { learning_rate: 0.1, momentum: 0.9, weight_decay: 0.0, gradient_clip: 10.0 },
            discriminator_hidden: Some(64),
            seed: 0,
        }
    }
}

/// Result of a tabular fit. `discriminator` reads one-hot bin vectors as
/// its representation input.
#[derive(Clone, Debug)]
pub struct TabularFit {
    pub objective: f64,
    pub optimum: f64,
    pub discriminator: Model,
}

impl TabularFit {
    pub fn gap(&self) -> f64 {
        (self.optimum - self.objective).abs()
    }
}

fn one_hot_rows(bins: usize, ids: &[usize]) -> Tensor {
    let mut t = Tensor::zeros(ids.len(), bins);
    for (r, &f) in ids.iter().enumerate() {
        t.set(r, f, 1.0);
    }
    t
}

fn tabular_model(kind: DiscriminatorKind, bins: usize, objects: usize, predicates: usize, cfg: &TabularFitConfig) -> Result<Model> {
    Model::new(
        ModelConfig {
            human_dim: 1,
            union_dim: 1,
            spatial_dim: 1,
            num_predicates: predicates,
            num_objects: objects,
            hidden_dim: 1,
            feature_dim: bins,
            discriminator: kind,
            discriminator_hidden: cfg.discriminator_hidden,
            tap: TapPoint::PreHead,
        },
        cfg.seed,
    )
}

/// Trains the softmax domain discriminator by full-batch ascent on the exact
/// objective `sum_i alpha_i E_{P(f|obj_i)} ln D_i(f)` with the bins one-hot
/// encoded as the frozen representation.
pub fn fit_tabular_adg(family: &DiscreteDomainFamily, cfg: &TabularFitConfig) -> Result<TabularFit> {
    let (m, b) = (family.domains(), family.bins());
    let mut model = tabular_model(DiscriminatorKind::Adg, b, m, 1, cfg)?;
    let (mut bins, mut domains, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (row, &a)) in family.rows().iter().zip(family.weights()).enumerate() {
        for (f, &p) in row.iter().enumerate() {
            if a * p > 0.0 {
                bins.push(f);
                domains.push(i);
                w.push(a * p);
            }
        }
    }
    let input = one_hot_rows(b, &bins);
    let weights = Tensor::column(w);
    let mut sgd = Sgd::new(cfg.optimizer)?;
    let params = model.discriminator_params();
    let mut objective = f64::NEG_INFINITY;
    for step in 0..=cfg.steps {
        let mut g = Graph::new();
        let x = g.constant(input.clone())?;
        let logits = model.adg_logits(&mut g, x)?;
        let lsm = g.log_softmax(logits)?;
        let picked = g.pick(lsm, &domains)?;
        let wv = g.constant(weights.clone())?;
        let prod = g.mul(picked, wv)?;
        let obj = g.sum(prod)?;
        objective = g.value(obj).item()?;
        if step == cfg.steps {
            break;
        }
        let grads = g.backward(obj)?;
        sgd.step(model.store_mut(), &grads, &params, Direction::Ascend)?;
    }
    Ok(TabularFit { objective, optimum: family.kl_identity_value(), discriminator: model })
}

/// Trains the binary conditional discriminator by full-batch ascent on the
/// exact objective
/// `sum_k alpha^(k) sum_i alpha_i^(k) [E_{P_ik} ln D + E_{P_k} ln(1 - D)]`.
pub fn fit_tabular_jsd(cfam: &ConditionalFamily, cfg: &TabularFitConfig) -> Result<TabularFit> {
    let classes = cfam.classes();
    let b = classes[0].family.bins();
    let m = classes[0].family.domains();
    if classes.iter().any(|c| c.family.domains() != m) {
        return Err(Error::Validation("every class must cover the same domains".into()));
    }
    let mut model = tabular_model(DiscriminatorKind::CadgJsd, b, m, classes.len(), cfg)?;
    let (mut bins, mut objs, mut preds, mut pos_w, mut neg_w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (k, c) in classes.iter().enumerate() {
        let pooled = c.family.pooled();
        for (i, (row, &a)) in c.family.rows().iter().zip(c.family.weights()).enumerate() {
            if a == 0.0 {
                continue;
            }
            for f in 0..b {
                if row[f] + pooled[f] > 0.0 {
                    bins.push(f);
                    objs.push(i);
                    preds.push(k);
                    pos_w.push(c.weight * a * row[f]);
                    neg_w.push(c.weight * a * pooled[f]);
                }
            }
        }
    }
    let input = one_hot_rows(b, &bins);
    let (pw, nw) = (Tensor::column(pos_w), Tensor::column(neg_w));
    let mut sgd = Sgd::new(cfg.optimizer)?;
    let params = model.discriminator_params();
    let mut objective = f64::NEG_INFINITY;
    for step in 0..=cfg.steps {
        let mut g = Graph::new();
        let x = g.constant(input.clone())?;
        let logits = model.cadg_jsd_logits(&mut g, x, &objs, &preds)?;
        let log_d = g.log_sigmoid(logits)?;
        let flipped = g.scale(logits, -1.0)?;
        let log_not_d = g.log_sigmoid(flipped)?;
        let pwv = g.constant(pw.clone())?;
        let nwv = g.constant(nw.clone())?;
        let a = g.mul(log_d, pwv)?;
        let c = g.mul(log_not_d, nwv)?;
        let both = g.add(a, c)?;
        let obj = g.sum(both)?;
        objective = g.value(obj).item()?;
        if step == cfg.steps {
            break;
        }
        let grads = g.backward(obj)?;
        sgd.step(model.store_mut(), &grads, &params, Direction::Ascend)?;
    }
    Ok(TabularFit { objective, optimum: cfam.jsd_identity_value(), discriminator: model })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_decays_stepwise() {
        let s = LrSchedule { interval: 10, gamma: 0.5 };
        assert_eq!(s.factor(9), 1.0);
        assert_eq!(s.factor(10), 0.5);
        assert_eq!(s.factor(25), 0.25);
    }

    #[test]
    fn invalid_config_rejected() {
        for cfg in [
            TrainConfig { steps: 0, ..TrainConfig::default() },
            TrainConfig { discriminator_steps: 0, ..TrainConfig::default() },
            TrainConfig { lambda: Some(-1.0), ..TrainConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn variant_lambda_defaults() {
        let cfg = TrainConfig { variant: DgVariant::CadgJsd, ..TrainConfig::default() };
        assert_eq!(cfg.lambda(), 100.0);
        let cfg = TrainConfig { variant: DgVariant::AdgKld, ..TrainConfig::default() };
        assert_eq!(cfg.lambda(), 1.0);
    }
}
