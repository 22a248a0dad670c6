//! Recall@K metrics for predicate classification and per-image detection,
//! and the frequency-prior predictor.
//!
//! Rankings sort scores in descending order and break ties by ascending
//! predicate id, so results never depend on input order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::stats::FrequencyTable;

/// Predicate scores of one instance with its ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "PredictionRecord")]
pub struct RankedPrediction {
    pub instance_id: u64,
    pub image_id: u64,
    pub scores: Vec<f64>,
    pub truth: Vec<usize>,
    #[serde(skip)]
    ranking: Vec<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionRecord {
    instance_id: u64,
    image_id: u64,
    scores: Vec<f64>,
    truth: Vec<usize>,
}

impl From<PredictionRecord> for RankedPrediction {
    fn from(r: PredictionRecord) -> Self {
        Self::new(r.instance_id, r.image_id, r.scores, r.truth)
    }
}

impl RankedPrediction {
    pub fn new(instance_id: u64, image_id: u64, scores: Vec<f64>, truth: Vec<usize>) -> Self {
        let ranking = rank(&scores);
        Self { instance_id, image_id, scores, truth, ranking }
    }

    pub fn for_instance(inst: &Instance, scores: Vec<f64>) -> Self {
        Self::new(inst.id, inst.image_id, scores, inst.predicate_labels.clone())
    }

    /// A prediction that ranks nothing, so it never counts as a hit.
    pub fn abstain(inst: &Instance) -> Self {
        Self::new(inst.id, inst.image_id, Vec::new(), inst.predicate_labels.clone())
    }

    /// Predicate ids by descending score, ties by ascending id.
    pub fn ranking(&self) -> &[usize] {
        &self.ranking
    }

    /// Zero-based rank of `predicate`.
    pub fn rank_of(&self, predicate: usize) -> Option<usize> {
        self.ranking.iter().position(|&p| p == predicate)
    }
}

pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// How multi-label instances count toward PredCls recall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredClsMode {
    /// One opportunity per (instance, ground-truth predicate) pair.
    #[default]
    PerPair,
    /// One opportunity per instance, hit if any ground truth is in the top k.
    AnyHit,
}

/// Fraction of ground-truth opportunities found in the top `k`.
pub fn predcls_recall(preds: &[RankedPrediction], k: usize, mode: PredClsMode) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Validation("no predictions to evaluate".into()));
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for p in preds {
        if p.truth.is_empty() {
            return Err(Error::Validation(format!("instance {} has no ground truth", p.instance_id)));
        }
        let top = &p.ranking[..k.min(p.ranking.len())];
        match mode {
            PredClsMode::PerPair => {
                total += p.truth.len();
                hits += p.truth.iter().filter(|t| top.contains(t)).count();
            }
            PredClsMode::AnyHit => {
                total += 1;
                hits += usize::from(p.truth.iter().any(|t| top.contains(t)));
            }
        }
    }
    Ok(hits as f64 / total as f64)
}

/// Micro-averaged per-image recall: within each image all (pair, predicate)
/// candidates are ranked jointly by score, and hits in the top `k` are
/// summed over images and divided by the total number of ground-truth
/// triplets. Ties break by instance id, then predicate id.
pub fn preddet_recall(preds: &[RankedPrediction], k: usize) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Validation("no predictions to evaluate".into()));
    }
    let mut images: BTreeMap<u64, Vec<&RankedPrediction>> = BTreeMap::new();
    for p in preds {
        images.entry(p.image_id).or_default().push(p);
    }
    let (mut hits, mut total) = (0usize, 0usize);
    for (image, members) in images {
        let gt: usize = members.iter().map(|p| p.truth.len()).sum();
        if gt == 0 {
            warn!("image {image} has no ground-truth triplets; skipped");
            continue;
        }
        let mut cands: Vec<(f64, u64, usize, bool)> = Vec::new();
        for p in &members {
            for (pred, &s) in p.scores.iter().enumerate() {
                cands.push((s, p.instance_id, pred, p.truth.contains(&pred)));
            }
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        hits += cands.iter().take(k).filter(|c| c.3).count();
        total += gt;
    }
    if total == 0 {
        return Err(Error::Validation("no image has ground-truth triplets".into()));
    }
    Ok(hits as f64 / total as f64)
}

/// Per-predicate R@1 over (instance, ground truth) pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassReport {
    /// `None` for predicates without test opportunities.
    pub per_class_r1: Vec<Option<f64>>,
    pub counts: Vec<usize>,
    /// Unweighted mean over predicates with at least one opportunity.
    pub mean_r1: f64,
    pub overall_r1: f64,
}

pub fn per_class_report(preds: &[RankedPrediction], num_predicates: usize) -> Result<PerClassReport> {
    let mut hits = vec![0usize; num_predicates];
    let mut counts = vec![0usize; num_predicates];
    for p in preds {
        let top = p.ranking.first().copied();
        for &t in &p.truth {
            if t >= num_predicates {
                return Err(Error::Validation(format!("ground truth {t} outside [0, {num_predicates})")));
            }
            counts[t] += 1;
            hits[t] += usize::from(top == Some(t));
        }
    }
    let per_class_r1: Vec<Option<f64>> =
        hits.iter().zip(&counts).map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64)).collect();
    let present: Vec<f64> = per_class_r1.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Validation("no predictions to evaluate".into()));
    }
    let mean_r1 = present.iter().sum::<f64>() / present.len() as f64;
    let overall_r1 = predcls_recall(preds, 1, PredClsMode::PerPair)?;
    Ok(PerClassReport { per_class_r1, counts, mean_r1, overall_r1 })
}

/// Frequency-prior predictions: ranks predicates by how often they occur
/// with the instance's object in `table`, abstaining for objects the table
/// has never seen.
pub fn frequency_predictions(table: &FrequencyTable, instances: &[Instance]) -> Vec<RankedPrediction> {
    instances
        .iter()
        .map(|inst| {
            let scores = frequency_baseline(table, inst.object_label);
            if scores.iter().all(|&s| s == 0.0) {
                RankedPrediction::abstain(inst)
            } else {
                RankedPrediction::for_instance(inst, scores)
            }
        })
        .collect()
}

/// `count(k, object) / sum_k count(k, object)`; all zeros for an object
/// never seen in training.
pub fn frequency_baseline(table: &FrequencyTable, object: usize) -> Vec<f64> {
    let k = table.num_predicates();
    if table.counts.first().is_none_or(|row| object >= row.len()) {
        return vec![0.0; k];
    }
    let total: usize = (0..k).map(|p| table.count(p, object)).sum();
    if total == 0 {
        return vec![0.0; k];
    }
    (0..k).map(|p| table.count(p, object) as f64 / total as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub instances: usize,
    pub predcls_r1: f64,
    pub predcls_r5: f64,
    pub preddet_r5: f64,
    pub preddet_r10: f64,
    pub mean_r1: f64,
    pub per_class_r1: Vec<Option<f64>>,
    pub class_counts: Vec<usize>,
}

impl MetricsReport {
    pub fn compute(preds: &[RankedPrediction], num_predicates: usize, mode: PredClsMode) -> Result<Self> {
        let pc = per_class_report(preds, num_predicates)?;
        Ok(Self {
            instances: preds.len(),
            predcls_r1: predcls_recall(preds, 1, mode)?,
            predcls_r5: predcls_recall(preds, 5, mode)?,
            preddet_r5: preddet_recall(preds, 5)?,
            preddet_r10: preddet_recall(preds, 10)?,
            mean_r1: pc.mean_r1,
            per_class_r1: pc.per_class_r1,
            class_counts: pc.counts,
        })
    }

    /// One row per predicate: `predicate,count,r1` (empty r1 when absent).
    pub fn per_class_csv(&self) -> String {
        let mut out = String::from("predicate,count,r1\n");
        for (k, (r, c)) in self.per_class_r1.iter().zip(&self.class_counts).enumerate() {
            let r = r.map(|v| format!("{v:.6}")).unwrap_or_default();
            let _ = writeln!(out, "{k},{c},{r}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: u64, image: u64, scores: &[f64], truth: &[usize]) -> RankedPrediction {
        RankedPrediction::new(id, image, scores.to_vec(), truth.to_vec())
    }

    #[test]
    fn ties_break_by_predicate_id() {
        assert_eq!(rank(&[0.5, 0.9, 0.5, 0.1]), vec![1, 0, 2, 3]);
    }

    #[test]
    fn perfect_ranker() {
        let p: Vec<_> = (0..5).map(|k| pred(k as u64, 0, &one_hot(k, 7), &[k])).collect();
        assert_eq!(predcls_recall(&p, 1, PredClsMode::PerPair).unwrap(), 1.0);
        assert_eq!(predcls_recall(&p, 5, PredClsMode::PerPair).unwrap(), 1.0);
    }

    fn one_hot(k: usize, n: usize) -> Vec<f64> {
        (0..n).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn preddet_capacity_bound() {
        // 12 single-label pairs in one image, each ranked first within its own row
        let p: Vec<_> = (0..12).map(|j| pred(j, 7, &one_hot(j as usize % 3, 3), &[j as usize % 3])).collect();
        assert!((preddet_recall(&p, 5).unwrap() - 5.0 / 12.0).abs() < 1e-15);
        assert!((preddet_recall(&p, 10).unwrap() - 10.0 / 12.0).abs() < 1e-15);
        let single = [pred(0, 1, &[0.9, 0.1], &[0])];
        assert_eq!(preddet_recall(&single, 5).unwrap(), 1.0);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(predcls_recall(&[], 1, PredClsMode::PerPair).is_err());
        assert!(preddet_recall(&[], 5).is_err());
    }

    #[test]
    fn frequency_scores() {
        let table = FrequencyTable { counts: vec![vec![3, 0], vec![1, 0]] };
        assert_eq!(frequency_baseline(&table, 0), vec![0.75, 0.25]);
        assert_eq!(frequency_baseline(&table, 1), vec![0.0, 0.0]);
        assert_eq!(frequency_baseline(&table, 9), vec![0.0, 0.0]);
    }

    #[test]
    fn single_class_mean_equals_overall() {
        let p = [pred(0, 0, &[0.9, 0.1], &[0]), pred(1, 0, &[0.2, 0.8], &[0])];
        let r = per_class_report(&p, 2).unwrap();
        assert_eq!(r.mean_r1, r.overall_r1);
        assert_eq!(r.per_class_r1[1], None);
    }

    #[test]
    fn unseen_object_abstains() {
        use crate::data::{BoundingBox, BranchInputs};
        let b = BoundingBox::new(0.0, 0.0, 1.0, 1.0);
        let inst = |id: u64, object: usize| Instance {
            id,
            image_id: id,
            human_box: b,
            object_box: b,
            subject_label: 0,
            object_label: object,
            predicate_labels: vec![0],
            features: BranchInputs::default(),
        };
        let table = FrequencyTable { counts: vec![vec![2, 0], vec![0, 0]] };
        let p = frequency_predictions(&table, &[inst(0, 0), inst(1, 1)]);
        assert!(p[1].ranking().is_empty());
        assert_eq!(predcls_recall(&p, 1, PredClsMode::PerPair).unwrap(), 0.5);
        assert_eq!(preddet_recall(&p, 5).unwrap(), 0.5);
        assert_eq!(per_class_report(&p, 2).unwrap().overall_r1, 0.5);
    }

    #[test]
    fn any_hit_mode() {
        let p = [pred(0, 0, &[0.9, 0.5, 0.1], &[0, 2])];
        assert_eq!(predcls_recall(&p, 1, PredClsMode::PerPair).unwrap(), 0.5);
        assert_eq!(predcls_recall(&p, 1, PredClsMode::AnyHit).unwrap(), 1.0);
    }
}
