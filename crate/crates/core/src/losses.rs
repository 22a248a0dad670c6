//! Branch BCE losses with negative sampling and the adversarial
//! regularizers.
//!
//! Every regularizer is a batch mean of per-instance terms. The
//! discriminator ascends that mean; the extractor descends `lambda` times it.
//! Conditional terms are summed over the instance's positive predicates, so
//! the dataset mean reproduces the count-weighted population objectives.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DiscriminatorKind, Model};
use crate::numeric::{Graph, Tensor, Var};
use crate::stats::DomainStatistics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DgVariant {
    None,
    AdgKld,
    CadgKld,
    CadgJsd,
    /// CADG-KLD with `alpha^(k) = alpha_i^(k) = 1`.
    #[serde(rename = "deepc")]
    DeepC,
}

impl DgVariant {
    pub const ALL: [DgVariant; 5] =
        [DgVariant::None, DgVariant::AdgKld, DgVariant::CadgKld, DgVariant::CadgJsd, DgVariant::DeepC];

    pub fn discriminator(self) -> DiscriminatorKind {
        match self {
            DgVariant::None => DiscriminatorKind::None,
            DgVariant::AdgKld => DiscriminatorKind::Adg,
            DgVariant::CadgKld | DgVariant::DeepC => DiscriminatorKind::CadgKld,
            DgVariant::CadgJsd => DiscriminatorKind::CadgJsd,
        }
    }

    pub fn default_lambda(self) -> f64 {
        match self {
            DgVariant::None => 0.0,
            DgVariant::AdgKld => 1.0,
            _ => 100.0,
        }
    }

    pub fn is_conditional(self) -> bool {
        matches!(self, DgVariant::CadgKld | DgVariant::CadgJsd | DgVariant::DeepC)
    }

    pub fn label(self) -> &'static str {
        match self {
            DgVariant::None => "baseline",
            DgVariant::AdgKld => "adg-kld",
            DgVariant::CadgKld => "cadg-kld",
            DgVariant::CadgJsd => "cadg-jsd",
            DgVariant::DeepC => "deepc",
        }
    }
}

impl std::str::FromStr for DgVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DgVariant::ALL
            .into_iter()
            .find(|v| v.label() == s || (s == "none" && *v == DgVariant::None))
            .ok_or_else(|| Error::Validation(format!("unknown variant {s:?}")))
    }
}

/// Per-step loss values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_h: f64,
    pub l_sp: f64,
    pub l_u: f64,
    pub l_dg: f64,
    pub lambda: f64,
    pub l_total: f64,
    /// Regularizer value on the discriminator's batch, before its update.
    pub discriminator_objective: f64,
}

impl LossReport {
    pub fn new(l_h: f64, l_sp: f64, l_u: f64, l_dg: f64, lambda: f64, discriminator_objective: f64) -> Self {
        let l_total = l_h + l_sp + l_u + lambda * l_dg;
        Self { l_h, l_sp, l_u, l_dg, lambda, l_total, discriminator_objective }
    }

    pub fn residual(&self) -> f64 {
        self.l_total - (self.l_h + self.l_sp + self.l_u + self.lambda * self.l_dg)
    }

    pub fn is_finite(&self) -> bool {
        [self.l_h, self.l_sp, self.l_u, self.l_dg, self.l_total, self.discriminator_objective]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Binary cross-entropy of probability `p` against a 0/1 target.
pub fn bce(p: f64, target: bool) -> f64 {
    if target {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Classes entering one instance's BCE terms: every positive plus
/// `neg_ratio * |positives|` negatives drawn without replacement (all
/// negatives if fewer exist). Sorted ascending.
pub fn sample_classes<R: Rng + ?Sized>(
    positives: &[usize],
    num_classes: usize,
    neg_ratio: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if positives.is_empty() {
        return Err(Error::Validation("instance has no positive predicate".into()));
    }
    if let Some(&k) = positives.iter().find(|&&k| k >= num_classes) {
        return Err(Error::Validation(format!("predicate {k} outside [0, {num_classes})")));
    }
    let negatives: Vec<usize> = (0..num_classes).filter(|k| !positives.contains(k)).collect();
    let take = (neg_ratio * positives.len()).min(negatives.len());
    let mut chosen: Vec<usize> = positives.to_vec();
    chosen.extend(sample(rng, negatives.len(), take).into_iter().map(|j| negatives[j]));
    chosen.sort_unstable();
    chosen.dedup();
    Ok(chosen)
}

/// Mean over the batch of each instance's mean BCE over its selected classes.
pub fn bce_over_selection(
    g: &mut Graph,
    logits: Var,
    positives: &[Vec<usize>],
    selections: &[Vec<usize>],
) -> Result<Var> {
    let [rows, cols] = g.shape(logits);
    if positives.len() != rows || selections.len() != rows {
        return Err(Error::Validation(format!("{rows} logit rows for {} labelled instances", positives.len())));
    }
    let mut pos_w = Tensor::zeros(rows, cols);
    let mut neg_w = Tensor::zeros(rows, cols);
    for (r, (pos, sel)) in positives.iter().zip(selections).enumerate() {
        let w = 1.0 / (rows as f64 * sel.len() as f64);
        for &k in sel {
            if pos.contains(&k) {
                pos_w.set(r, k, -w);
            } else {
                neg_w.set(r, k, -w);
            }
        }
    }
    let log_p = g.log_sigmoid(logits)?;
    let neg_logits = g.scale(logits, -1.0)?;
    let log_q = g.log_sigmoid(neg_logits)?;
    let pw = g.constant(pos_w)?;
    let nw = g.constant(neg_w)?;
    let a = g.mul(log_p, pw)?;
    let b = g.mul(log_q, nw)?;
    let ab = g.add(a, b)?;
    Ok(g.sum(ab)?)
}

/// Labels of one batch row as seen by the regularizers.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainLabel {
    pub object: usize,
    pub predicates: Vec<usize>,
}

/// Per-sample regularizer weights.
#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerWeights {
    stats: DomainStatistics,
    deepc_scale: f64,
}

impl RegularizerWeights {
    pub fn new(stats: DomainStatistics) -> Self {
        let cells = stats.joint_counts.iter().flatten().filter(|&&n| n > 0).count();
        let pairs: usize = stats.class_counts.iter().sum();
        let deepc_scale = if cells == 0 { 1.0 } else { pairs as f64 / cells as f64 };
        Self { stats, deepc_scale }
    }

    pub fn stats(&self) -> &DomainStatistics {
        &self.stats
    }

    /// Raw DeepC weight `1 / N_ik`, relative to the unit CADG-KLD weight.
    pub fn deepc_raw(&self, object: usize, predicate: usize) -> f64 {
        match self.stats.joint_counts[object][predicate] {
            0 => 0.0,
            n => 1.0 / n as f64,
        }
    }

    /// DeepC weight rescaled by one global constant so it averages 1 over
    /// training (instance, predicate) pairs.
    pub fn deepc(&self, object: usize, predicate: usize) -> f64 {
        self.deepc_scale * self.deepc_raw(object, predicate)
    }
}

/// `ln D_obj` from a domain distribution.
pub fn adg_kld_term(probs: &[f64], domain: usize) -> Result<f64> {
    probs
        .get(domain)
        .map(|p| p.ln())
        .ok_or_else(|| Error::Validation(format!("domain {domain} outside [0, {})", probs.len())))
}

/// `ln D_obj(. ; k)` from a class-conditional domain distribution.
pub fn cadg_kld_term(probs: &[f64], domain: usize) -> Result<f64> {
    adg_kld_term(probs, domain)
}

/// `ln D(f, obj; k) + sum_i alpha_i^(k) ln(1 - D(f, i; k))`, the sum over
/// domains seen with class `k`. `disc(i)` is the binary output for domain `i`.
pub fn cadg_jsd_term(
    disc: impl Fn(usize) -> f64,
    domain: usize,
    predicate: usize,
    stats: &DomainStatistics,
) -> Result<f64> {
    if !stats.class_present(predicate) {
        return Err(Error::Validation(format!("class {predicate} has no training instances")));
    }
    if domain >= stats.num_domains {
        return Err(Error::Validation(format!("domain {domain} outside [0, {})", stats.num_domains)));
    }
    let own = disc(domain).ln();
    let pooled: f64 = stats.seen_domains(predicate).map(|(i, w)| w * (1.0 - disc(i)).ln()).sum();
    Ok(own + pooled)
}

/// Batch mean of the variant's per-instance regularizer, as a graph node.
/// `tap` holds one representation row per entry of `labels`. Returns `None`
/// for the baseline or when no row contributes.
pub fn regularizer(
    g: &mut Graph,
    model: &Model,
    variant: DgVariant,
    tap: Var,
    labels: &[DomainLabel],
    weights: &RegularizerWeights,
) -> Result<Option<Var>> {
    let b = labels.len();
    if g.shape(tap)[0] != b {
        return Err(Error::Validation(format!("{} representation rows for {b} labels", g.shape(tap)[0])));
    }
    let stats = weights.stats();
    let present = |k: usize| stats.class_present(k);
    match variant {
        DgVariant::None => Ok(None),
        DgVariant::AdgKld => {
            let logits = model.adg_logits(g, tap)?;
            let lsm = g.log_softmax(logits)?;
            let objects: Vec<usize> = labels.iter().map(|l| l.object).collect();
            let picked = g.pick(lsm, &objects)?;
            Ok(Some(g.mean(picked)?))
        }
        DgVariant::CadgKld | DgVariant::DeepC => {
            let (mut rows, mut preds, mut objs, mut w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (r, l) in labels.iter().enumerate() {
                for &k in l.predicates.iter().filter(|&&k| present(k)) {
                    rows.push(r);
                    preds.push(k);
                    objs.push(l.object);
                    w.push(if variant == DgVariant::DeepC { weights.deepc(l.object, k) } else { 1.0 });
                }
            }
            if rows.is_empty() {
                return Ok(None);
            }
            let f = g.gather(tap, &rows)?;
            let logits = model.cadg_kld_logits(g, f, &preds)?;
            let lsm = g.log_softmax(logits)?;
            let picked = g.pick(lsm, &objs)?;
            let wv = g.constant(Tensor::column(w.iter().map(|x| x / b as f64).collect()))?;
            let weighted = g.mul(picked, wv)?;
            Ok(Some(g.sum(weighted)?))
        }
        DgVariant::CadgJsd => {
            // one positive row per (instance, class), then one negative row
            // per (instance, class, seen domain)
            let (mut rows, mut objs, mut preds, mut pos_w, mut neg_w) =
                (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (r, l) in labels.iter().enumerate() {
                for &k in l.predicates.iter().filter(|&&k| present(k)) {
                    rows.push(r);
                    objs.push(l.object);
                    preds.push(k);
                    pos_w.push(1.0);
                    neg_w.push(0.0);
                    for (i, a_ik) in stats.seen_domains(k) {
                        rows.push(r);
                        objs.push(i);
                        preds.push(k);
                        pos_w.push(0.0);
                        neg_w.push(a_ik);
                    }
                }
            }
            if rows.is_empty() {
                return Ok(None);
            }
            let scale = 1.0 / b as f64;
            let f = g.gather(tap, &rows)?;
            let logits = model.cadg_jsd_logits(g, f, &objs, &preds)?;
            let log_d = g.log_sigmoid(logits)?;
            let flipped = g.scale(logits, -1.0)?;
            let log_not_d = g.log_sigmoid(flipped)?;
            let pw = g.constant(Tensor::column(pos_w.iter().map(|x| x * scale).collect()))?;
            let nw = g.constant(Tensor::column(neg_w.iter().map(|x| x * scale).collect()))?;
            let a = g.mul(log_d, pw)?;
            let c = g.mul(log_not_d, nw)?;
            let both = g.add(a, c)?;
            Ok(Some(g.sum(both)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn bce_at_half_is_ln2() {
        assert!((bce(0.5, true) - LN_2).abs() < 1e-15);
        assert!((bce(0.5, false) - LN_2).abs() < 1e-15);
    }

    #[test]
    fn sampling_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_classes(&[2], 10, 6, &mut rng).unwrap();
        assert_eq!(s.len(), 7);
        assert!(s.contains(&2));
        let s = sample_classes(&[0, 1], 5, 6, &mut rng).unwrap();
        assert_eq!(s, vec![0, 1, 2, 3, 4]);
        assert!(sample_classes(&[], 5, 6, &mut rng).is_err());
    }

    #[test]
    fn perfect_scores_give_near_zero_loss() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::row(vec![40.0, -40.0, -40.0])).unwrap();
        let l = bce_over_selection(&mut g, logits, &[vec![0]], &[vec![0, 1, 2]]).unwrap();
        assert!(g.value(l).item().unwrap() < 1e-15);
    }

    #[test]
    fn uniform_scores_give_ln2() {
        let mut g = Graph::new();
        let logits = g.constant(Tensor::zeros(2, 4)).unwrap();
        let l = bce_over_selection(&mut g, logits, &[vec![0], vec![1]], &[vec![0, 3], vec![1, 2]]).unwrap();
        assert!((g.value(l).item().unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn adg_term_values() {
        assert!((adg_kld_term(&[0.25; 4], 2).unwrap() + 4f64.ln()).abs() < 1e-15);
        assert_eq!(adg_kld_term(&[0.0, 1.0], 1).unwrap(), 0.0);
        assert!(adg_kld_term(&[0.5, 0.5], 2).is_err());
        assert!((cadg_kld_term(&[1.0 / 3.0; 3], 0).unwrap() + 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn report_identity() {
        let r = LossReport::new(0.3, 0.2, 0.1, -1.4, 100.0, -1.3);
        assert_eq!(r.residual(), 0.0);
    }

    #[test]
    fn variant_names_roundtrip() {
        for v in DgVariant::ALL {
            assert_eq!(v.label().parse::<DgVariant>().unwrap(), v);
        }
        assert!("gan".parse::<DgVariant>().is_err());
    }
}
