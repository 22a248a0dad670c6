//! Domain/class counts and the weights derived from them.
//!
//! Each instance contributes one to `N` and to its domain's `N_i`; each
//! (instance, positive predicate) pair contributes one to `N_k` and `N_ik`.

use serde::{Deserialize, Serialize};

use crate::data::Instance;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainStatistics {
    pub num_domains: usize,
    pub num_classes: usize,
    pub total: usize,
    pub domain_counts: Vec<usize>,
    pub class_counts: Vec<usize>,
    /// `joint_counts[i][k]` for domain `i`, class `k`.
    pub joint_counts: Vec<Vec<usize>>,
}

impl DomainStatistics {
    pub fn compute(instances: &[Instance], num_domains: usize, num_classes: usize) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::Validation("cannot compute statistics of an empty set".into()));
        }
        let mut stats = Self {
            num_domains,
            num_classes,
            total: 0,
            domain_counts: vec![0; num_domains],
            class_counts: vec![0; num_classes],
            joint_counts: vec![vec![0; num_classes]; num_domains],
        };
        for inst in instances {
            let i = inst.object_label;
            if i >= num_domains {
                return Err(Error::Validation(format!("object label {i} outside [0, {num_domains})")));
            }
            stats.total += 1;
            stats.domain_counts[i] += 1;
            for &k in &inst.predicate_labels {
                if k >= num_classes {
                    return Err(Error::Validation(format!("predicate label {k} outside [0, {num_classes})")));
                }
                stats.class_counts[k] += 1;
                stats.joint_counts[i][k] += 1;
            }
        }
        Ok(stats)
    }

    /// `alpha_i = N_i / N`.
    pub fn domain_weight(&self, i: usize) -> f64 {
        self.domain_counts[i] as f64 / self.total as f64
    }

    /// `alpha^(k) = N_k / N`.
    pub fn class_weight(&self, k: usize) -> f64 {
        self.class_counts[k] as f64 / self.total as f64
    }

    /// `alpha_i^(k) = N_ik / N_k`, zero for an empty class.
    pub fn cell_weight(&self, i: usize, k: usize) -> f64 {
        match self.class_counts[k] {
            0 => 0.0,
            nk => self.joint_counts[i][k] as f64 / nk as f64,
        }
    }

    /// Domains with `N_ik > 0` for class `k`, with their weights.
    pub fn seen_domains(&self, k: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.num_domains).filter(move |&i| self.joint_counts[i][k] > 0).map(move |i| (i, self.cell_weight(i, k)))
    }

    pub fn class_present(&self, k: usize) -> bool {
        k < self.num_classes && self.class_counts[k] > 0
    }
}

/// `(predicate, object)` co-occurrence counts, indexed `[predicate][object]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub counts: Vec<Vec<usize>>,
}

impl FrequencyTable {
    pub fn from_instances(instances: &[Instance], num_predicates: usize, num_objects: usize) -> Self {
        let mut counts = vec![vec![0; num_objects]; num_predicates];
        for inst in instances {
            for &k in &inst.predicate_labels {
                counts[k][inst.object_label] += 1;
            }
        }
        Self { counts }
    }

    pub fn count(&self, predicate: usize, object: usize) -> usize {
        self.counts[predicate][object]
    }

    pub fn num_predicates(&self) -> usize {
        self.counts.len()
    }
}
