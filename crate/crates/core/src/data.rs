//! Annotated human–object pairs and their branch inputs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Axis-aligned box `(x1, y1, x2, y2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    /// Positive width and height.
    pub fn is_proper(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    /// Smallest box covering both.
    pub fn union(&self, other: &BoundingBox) -> BoundingBox {
        BoundingBox {
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
            x2: self.x2.max(other.x2),
            y2: self.y2.max(other.y2),
        }
    }
}

/// Feature vectors for the human, union and spatial branches.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BranchInputs {
    pub human: Vec<f64>,
    pub union: Vec<f64>,
    pub spatial: Vec<f64>,
}

/// A `(predicate, object)` triplet category.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Category {
    pub predicate: usize,
    pub object: usize,
}

impl Category {
    pub fn new(predicate: usize, object: usize) -> Self {
        Self { predicate, object }
    }
}

/// One annotated human–object pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: u64,
    pub image_id: u64,
    pub human_box: BoundingBox,
    pub object_box: BoundingBox,
    /// 0 is "human".
    pub subject_label: usize,
    pub object_label: usize,
    /// Sorted, deduplicated, nonempty.
    pub predicate_labels: Vec<usize>,
    pub features: BranchInputs,
}

impl Instance {
    pub fn categories(&self) -> impl Iterator<Item = Category> + '_ {
        self.predicate_labels.iter().map(move |&p| Category::new(p, self.object_label))
    }

    pub fn has_predicate(&self, predicate: usize) -> bool {
        self.predicate_labels.binary_search(&predicate).is_ok()
    }
}

/// Distinct categories over a set of instances.
pub fn category_set<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> BTreeSet<Category> {
    instances.into_iter().flat_map(|i| i.categories().collect::<Vec<_>>()).collect()
}

/// Distinct image ids over a set of instances.
pub fn image_set<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> BTreeSet<u64> {
    instances.into_iter().map(|i| i.image_id).collect()
}
