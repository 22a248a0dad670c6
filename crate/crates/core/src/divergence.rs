//! Exact divergences and optimal discriminators over discrete feature
//! alphabets.
//!
//! A [`DiscreteDomainFamily`] holds `M` distributions `P(f | obj_i)` over `B`
//! bins together with domain weights `alpha_i`; a [`ConditionalFamily`] holds
//! one such family per predicate class plus class weights `alpha^(k)`.
//! Natural logarithms throughout, with `0 ln 0 = 0`; bins carrying no mass
//! never contribute.

use std::f64::consts::LN_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};
use crate::stats::DomainStatistics;

const ROW_TOLERANCE: f64 = 1e-12;

/// `x ln y` with the convention that a zero coefficient yields zero.
fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * (p / q).ln() }).sum()
}

/// Jensen–Shannon divergence with the ½/½ mixture.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * kl(p, &m) + 0.5 * kl(q, &m)
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|&v| !v.is_finite() || v < 0.0) {
        return Err(Error::Validation(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::Validation(format!("{what} sums to {total}, expected 1")));
    }
    Ok(())
}

/// Domain-conditional distributions `P(f | obj_i)` with weights `alpha_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilyRepr", into = "FamilyRepr")]
pub struct DiscreteDomainFamily {
    rows: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyRepr {
    domains: usize,
    bins: usize,
    rows: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl TryFrom<FamilyRepr> for DiscreteDomainFamily {
    type Error = Error;

    fn try_from(r: FamilyRepr) -> Result<Self> {
        if r.rows.len() != r.domains || r.rows.iter().any(|row| row.len() != r.bins) {
            return Err(Error::Validation(format!("family rows do not form a {}x{} table", r.domains, r.bins)));
        }
        Self::new(r.rows, r.weights)
    }
}

impl From<DiscreteDomainFamily> for FamilyRepr {
    fn from(f: DiscreteDomainFamily) -> Self {
        FamilyRepr { domains: f.domains(), bins: f.bins(), rows: f.rows, weights: f.weights }
    }
}

impl DiscreteDomainFamily {
    pub fn new(rows: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::Validation("family needs at least one domain and one bin".into()));
        }
        if weights.len() != rows.len() {
            return Err(Error::Validation(format!("{} weights for {} domains", weights.len(), rows.len())));
        }
        let bins = rows[0].len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != bins {
                return Err(Error::Validation(format!("row {i} has {} bins, expected {bins}", row.len())));
            }
            check_distribution(row, &format!("row {i}"))?;
        }
        check_distribution(&weights, "domain weights")?;
        Ok(Self { rows, weights })
    }

    /// Random family with roughly a quarter of the entries exactly zero, so
    /// partial supports and zero-mass bins are exercised.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, domains: usize, bins: usize) -> Self {
        let rows = (0..domains).map(|_| random_distribution(rng, bins, 0.25)).collect();
        let weights = random_distribution(rng, domains, 0.0);
        Self::new(rows, weights).expect("generated family is valid")
    }

    pub fn domains(&self) -> usize {
        self.rows.len()
    }

    pub fn bins(&self) -> usize {
        self.rows[0].len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `P(f) = sum_i alpha_i P(f | obj_i)`.
    pub fn pooled(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.bins()];
        for (row, &a) in self.rows.iter().zip(&self.weights) {
            for (o, &p) in out.iter_mut().zip(row) {
                *o += a * p;
            }
        }
        out
    }

    /// `sum_i alpha_i KL(P(f | obj_i) || P(f))`.
    pub fn kld(&self) -> f64 {
        let pooled = self.pooled();
        self.rows.iter().zip(&self.weights).filter(|(_, &a)| a > 0.0).map(|(row, &a)| a * kl(row, &pooled)).sum()
    }

    /// `sum_i alpha_i ln alpha_i`.
    pub fn weight_entropy_term(&self) -> f64 {
        self.weights.iter().map(|&a| xlny(a, a)).sum()
    }

    /// Closed-form maximiser of the unconditional objective:
    /// `D_i*(f) = alpha_i P(f | obj_i) / P(f)`.
    pub fn optimal_discriminator(&self) -> OptimalDiscriminator {
        let pooled = self.pooled();
        let support: Vec<bool> = pooled.iter().map(|&p| p > 0.0).collect();
        let values = self
            .rows
            .iter()
            .zip(&self.weights)
            .map(|(row, &a)| {
                row.iter().zip(&pooled).map(|(&p, &q)| if q > 0.0 { a * p / q } else { 0.0 }).collect()
            })
            .collect();
        OptimalDiscriminator { values, support }
    }

    /// `sum_i alpha_i E_{f ~ P(.|obj_i)} ln D_i(f)` for a discriminator given
    /// as an `M x B` table.
    pub fn adg_objective(&self, disc: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (i, (row, &a)) in self.rows.iter().zip(&self.weights).enumerate() {
            for (f, &p) in row.iter().enumerate() {
                total += xlny(a * p, disc[i][f]);
            }
        }
        total
    }

    /// Value of the unconditional objective at its optimum:
    /// `kld + sum_i alpha_i ln alpha_i`.
    pub fn kl_identity_value(&self) -> f64 {
        self.kld() + self.weight_entropy_term()
    }
}

fn random_distribution<R: Rng + ?Sized>(rng: &mut R, n: usize, zero_rate: f64) -> Vec<f64> {
    loop {
        let raw: Vec<f64> =
            (0..n).map(|_| if rng.random::<f64>() < zero_rate { 0.0 } else { rng.random::<f64>() + 1e-3 }).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            let mut out: Vec<f64> = raw.iter().map(|v| v / total).collect();
            // push the rounding residue onto the largest entry
            let residue = 1.0 - out.iter().sum::<f64>();
            let j = (0..n).max_by(|&a, &b| out[a].total_cmp(&out[b])).unwrap();
            out[j] += residue;
            return out;
        }
    }
}

/// A per-domain discriminator table together with the bins it is defined on.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimalDiscriminator {
    /// `values[i][f]`; zero on bins outside the support.
    pub values: Vec<Vec<f64>>,
    /// Bins with positive pooled mass.
    pub support: Vec<bool>,
}

/// One predicate class: its weight `alpha^(k)` and the family
/// `P(f | obj_i, pred_k)` weighted by `alpha_i^(k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassFamily {
    pub weight: f64,
    pub family: DiscreteDomainFamily,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ClassFamily>", into = "Vec<ClassFamily>")]
pub struct ConditionalFamily {
    classes: Vec<ClassFamily>,
}

impl TryFrom<Vec<ClassFamily>> for ConditionalFamily {
    type Error = Error;

    fn try_from(classes: Vec<ClassFamily>) -> Result<Self> {
        Self::new(classes)
    }
}

impl From<ConditionalFamily> for Vec<ClassFamily> {
    fn from(c: ConditionalFamily) -> Self {
        c.classes
    }
}

impl ConditionalFamily {
    /// Class weights must be nonnegative; they need not sum to one, since
    /// count-based weights of multi-label data sum to `sum_k N_k / N >= 1`.
    pub fn new(classes: Vec<ClassFamily>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::Validation("conditional family has no classes".into()));
        }
        let bins = classes[0].family.bins();
        for (k, c) in classes.iter().enumerate() {
            if !c.weight.is_finite() || c.weight < 0.0 {
                return Err(Error::Validation(format!("class {k} weight {} is invalid", c.weight)));
            }
            if c.family.bins() != bins {
                return Err(Error::Validation(format!("class {k} has {} bins, expected {bins}", c.family.bins())));
            }
        }
        Ok(Self { classes })
    }

    /// Random family with class weights summing to one.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, classes: usize, domains: usize, bins: usize) -> Self {
        let weights = random_distribution(rng, classes, 0.0);
        let classes = weights
            .into_iter()
            .map(|weight| ClassFamily { weight, family: DiscreteDomainFamily::random(rng, domains, bins) })
            .collect();
        Self { classes }
    }

    pub fn classes(&self) -> &[ClassFamily] {
        &self.classes
    }

    pub fn total_class_weight(&self) -> f64 {
        self.classes.iter().map(|c| c.weight).sum()
    }

    /// `sum_k alpha^(k) sum_i alpha_i^(k) KL(P(f|obj_i,pred_k) || P(f|pred_k))`.
    pub fn ckld(&self) -> f64 {
        self.classes.iter().map(|c| c.weight * c.family.kld()).sum()
    }

    /// `sum_k alpha^(k) sum_i alpha_i^(k) JSD(P(f|obj_i,pred_k) || P(f|pred_k))`.
    pub fn cjsd(&self) -> f64 {
        self.classes
            .iter()
            .map(|c| {
                let pooled = c.family.pooled();
                let inner: f64 = c
                    .family
                    .rows()
                    .iter()
                    .zip(c.family.weights())
                    .filter(|(_, &a)| a > 0.0)
                    .map(|(row, &a)| a * jsd(row, &pooled))
                    .sum();
                c.weight * inner
            })
            .sum()
    }

    /// Per-class optimal softmax discriminators for the conditional KL game.
    pub fn optimal_kld_discriminators(&self) -> Vec<OptimalDiscriminator> {
        self.classes.iter().map(|c| c.family.optimal_discriminator()).collect()
    }

    /// `sum_k alpha^(k) sum_i alpha_i^(k) E_{P(f|obj_i,pred_k)} ln D_i(f; k)`.
    pub fn cadg_kld_objective(&self, disc: &[Vec<Vec<f64>>]) -> f64 {
        self.classes.iter().zip(disc).map(|(c, d)| c.weight * c.family.adg_objective(d)).sum()
    }

    /// Optimum of the conditional KL game:
    /// `ckld + sum_k alpha^(k) sum_i alpha_i^(k) ln alpha_i^(k)`.
    pub fn conditional_kl_identity_value(&self) -> f64 {
        self.classes.iter().map(|c| c.weight * c.family.kl_identity_value()).sum()
    }

    /// `D*(f, i; k) = P(f|obj_i,pred_k) / (P(f|obj_i,pred_k) + P(f|pred_k))`,
    /// indexed `[k][i][f]`. Bins where both vanish carry no mass and get 0.5.
    pub fn optimal_jsd_discriminator(&self) -> Vec<Vec<Vec<f64>>> {
        self.classes
            .iter()
            .map(|c| {
                let pooled = c.family.pooled();
                c.family
                    .rows()
                    .iter()
                    .map(|row| {
                        row.iter()
                            .zip(&pooled)
                            .map(|(&p, &q)| if p + q > 0.0 { p / (p + q) } else { 0.5 })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    }

    /// `sum_k alpha^(k) sum_i alpha_i^(k) [E_{P_ik} ln D + E_{P_k} ln(1 - D)]`
    /// for a binary discriminator table indexed `[k][i][f]`.
    pub fn cadg_jsd_objective(&self, disc: &[Vec<Vec<f64>>]) -> f64 {
        let mut total = 0.0;
        for (c, dk) in self.classes.iter().zip(disc) {
            let pooled = c.family.pooled();
            for (i, (row, &a)) in c.family.rows().iter().zip(c.family.weights()).enumerate() {
                if a == 0.0 {
                    continue;
                }
                let mut inner = 0.0;
                for f in 0..row.len() {
                    inner += xlny(row[f], dk[i][f]) + xlny(pooled[f], 1.0 - dk[i][f]);
                }
                total += c.weight * a * inner;
            }
        }
        total
    }

    /// `2 CJSD - ln 4 * sum_k alpha^(k)`.
    pub fn jsd_identity_value(&self) -> f64 {
        2.0 * self.cjsd() - 2.0 * LN_2 * self.total_class_weight()
    }
}

/// Direct per-cell summations of the sample-based objectives over a finite
/// set of instances, with weights taken from `stats`.
pub mod empirical {
    use super::*;

    /// `sum_i alpha_i (1/N_i) sum_{x in domain i} ln D_i(x)`; `disc(j)` is the
    /// softmax output for instance `j`.
    pub fn adg_kld(instances: &[Instance], stats: &DomainStatistics, disc: impl Fn(usize) -> Vec<f64>) -> f64 {
        let mut sums = vec![0.0; stats.num_domains];
        for (j, inst) in instances.iter().enumerate() {
            sums[inst.object_label] += disc(j)[inst.object_label].ln();
        }
        (0..stats.num_domains)
            .filter(|&i| stats.domain_counts[i] > 0)
            .map(|i| stats.domain_weight(i) * sums[i] / stats.domain_counts[i] as f64)
            .sum()
    }

    /// `sum_k alpha^(k) sum_i alpha_i^(k) (1/N_ik) sum_{x in (i,k)} ln D_i(x; k)`;
    /// `disc(j, k)` is the softmax output for instance `j` under class `k`.
    pub fn cadg_kld(instances: &[Instance], stats: &DomainStatistics, disc: impl Fn(usize, usize) -> Vec<f64>) -> f64 {
        let mut cell = vec![vec![0.0; stats.num_classes]; stats.num_domains];
        for (j, inst) in instances.iter().enumerate() {
            for &k in &inst.predicate_labels {
                cell[inst.object_label][k] += disc(j, k)[inst.object_label].ln();
            }
        }
        let mut total = 0.0;
        for k in (0..stats.num_classes).filter(|&k| stats.class_present(k)) {
            for (i, a_ik) in stats.seen_domains(k) {
                total += stats.class_weight(k) * a_ik * cell[i][k] / stats.joint_counts[i][k] as f64;
            }
        }
        total
    }

    /// `sum_k alpha^(k) sum_i alpha_i^(k) [(1/N_ik) sum_{x in (i,k)} ln D(x, i; k)
    ///   + (1/N_k) sum_{x in k} ln(1 - D(x, i; k))]`; `disc(j, i, k)` is the
    /// binary output for instance `j` paired with domain `i` under class `k`.
    pub fn cadg_jsd(
        instances: &[Instance],
        stats: &DomainStatistics,
        disc: impl Fn(usize, usize, usize) -> f64,
    ) -> f64 {
        let mut total = 0.0;
        for k in (0..stats.num_classes).filter(|&k| stats.class_present(k)) {
            let members: Vec<usize> = (0..instances.len()).filter(|&j| instances[j].has_predicate(k)).collect();
            for (i, a_ik) in stats.seen_domains(k) {
                let own: f64 = members
                    .iter()
                    .filter(|&&j| instances[j].object_label == i)
                    .map(|&j| disc(j, i, k).ln())
                    .sum::<f64>()
                    / stats.joint_counts[i][k] as f64;
                let pooled: f64 =
                    members.iter().map(|&j| (1.0 - disc(j, i, k)).ln()).sum::<f64>() / stats.class_counts[k] as f64;
                total += stats.class_weight(k) * a_ik * (own + pooled);
            }
        }
        total
    }
}
