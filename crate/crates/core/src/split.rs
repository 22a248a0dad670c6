//! Duplicate-pair merging and the category-disjoint novel split.
//!
//! `novel_split` partitions each predicate's objects into a seen side and a
//! held-out side, then repairs the assignment until categories and images
//! are disjoint. `validation_carveout` applies the same procedure to the seen
//! pool to obtain testval, and splits the rest i.i.d. into train/trainval.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{category_set, image_set, BoundingBox, Category, Instance};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.7;

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Merges annotations of the same human–object pair: within an image, two
/// instances with equal object labels whose human boxes and object boxes
/// both overlap with IoU at least `threshold` are linked, and each connected
/// component becomes one instance carrying the union of the predicates. The
/// merged instance keeps every other field from the component's first member,
/// and components are emitted in order of their first member.
pub fn merge_pairs(annotations: &[Instance], threshold: f64) -> Result<Vec<Instance>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Validation(format!("IoU threshold {threshold} outside (0, 1]")));
    }
    if let Some(bad) = annotations.iter().find(|i| !i.human_box.is_proper() || !i.object_box.is_proper()) {
        return Err(Error::Validation(format!("instance {} has a degenerate box", bad.id)));
    }
    let mut parent: Vec<usize> = (0..annotations.len()).collect();
    let mut by_image: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (j, inst) in annotations.iter().enumerate() {
        by_image.entry(inst.image_id).or_default().push(j);
    }
    for members in by_image.values() {
        for (x, &a) in members.iter().enumerate() {
            for &b in &members[x + 1..] {
                let (p, q) = (&annotations[a], &annotations[b]);
                if p.object_label == q.object_label
                    && iou(&p.human_box, &q.human_box) >= threshold
                    && iou(&p.object_box, &q.object_box) >= threshold
                {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    let mut out: Vec<Instance> = Vec::new();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    for j in 0..annotations.len() {
        let root = find(&mut parent, j);
        match slot.get(&root) {
            Some(&s) => {
                let merged = &mut out[s];
                merged.predicate_labels.extend(&annotations[j].predicate_labels);
                merged.predicate_labels.sort_unstable();
                merged.predicate_labels.dedup();
            }
            None => {
                slot.insert(root, out.len());
                out.push(annotations[j].clone());
            }
        }
    }
    Ok(out)
}

/// An instance removed from every split, with the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: u64,
    pub image_id: u64,
    pub reason: String,
}

/// Outcome of a category-disjoint partition.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Partition {
    pub kept: Vec<Instance>,
    pub held_out: Vec<Instance>,
    pub dropped: Vec<Dropped>,
    pub warnings: Vec<String>,
}

/// Chooses the held-out objects of one predicate: the nonempty proper subset
/// whose instance count is nearest `target`.
/// Subsets are enumerated over a seeded shuffle of the objects and the first
/// best one wins; past `EXACT_SUBSET_LIMIT` objects a greedy pass over the
/// same order is used instead.
fn held_out_objects(counts: &BTreeMap<usize, usize>, target: f64, rng: &mut ChaCha8Rng) -> BTreeSet<usize> {
    let mut order: Vec<usize> = counts.keys().copied().collect();
    order.shuffle(rng);
    let n = order.len();
    if n <= EXACT_SUBSET_LIMIT {
        let mut best = (f64::INFINITY, 0usize);
        for mask in 1..(1usize << n) - 1 {
            let sum: usize = (0..n).filter(|b| mask >> b & 1 == 1).map(|b| counts[&order[b]]).sum();
            let gap = (sum as f64 - target).abs();
            if gap < best.0 {
                best = (gap, mask);
            }
        }
        return (0..n).filter(|b| best.1 >> b & 1 == 1).map(|b| order[b]).collect();
    }
    let mut chosen = BTreeSet::new();
    let mut sum = 0usize;
    for &o in &order {
        if chosen.len() + 1 >= n {
            break;
        }
        let with = sum + counts[&o];
        if (with as f64 - target).abs() < (sum as f64 - target).abs() {
            chosen.insert(o);
            sum = with;
        }
    }
    if chosen.is_empty() {
        let best = order
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = (counts[&a] as f64 - target).abs();
                let db = (counts[&b] as f64 - target).abs();
                da.total_cmp(&db)
            })
            .expect("at least two objects");
        chosen.insert(best);
    }
    chosen
}

const EXACT_SUBSET_LIMIT: usize = 16;

/// Category-disjoint and image-disjoint partition of `instances` into a kept
/// side and a held-out side of roughly `fraction` of each predicate.
///
/// An instance is held out only if all of its categories are. Mixed
/// instances stay on the kept side and pull their held-out categories along.
/// An image holding both sides goes to its majority side (ties to the kept
/// side); kept instances of a held-out-majority image are dropped because
/// moving them would leak their categories.
pub fn category_disjoint_partition(instances: &[Instance], fraction: f64, seed: u64) -> Result<Partition> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Validation(format!("split fraction {fraction} outside (0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_predicate: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for inst in instances {
        for c in inst.categories() {
            *per_predicate.entry(c.predicate).or_default().entry(c.object).or_default() += 1;
        }
    }
    let mut warnings = Vec::new();
    let mut held: BTreeSet<Category> = BTreeSet::new();
    // overshoot of earlier predicates is subtracted from later targets so
    // the overall held-out share tracks `fraction`
    let mut carry = 0.0;
    for (&k, counts) in &per_predicate {
        if counts.len() < 2 {
            let msg = format!("predicate {k} co-occurs with a single object; kept entirely on the seen side");
            warn!("{msg}");
            warnings.push(msg);
            continue;
        }
        let total: usize = counts.values().sum();
        let target = (fraction * total as f64 - carry).max(0.0);
        let chosen = held_out_objects(counts, target, &mut rng);
        carry += chosen.iter().map(|o| counts[o]).sum::<usize>() as f64 - fraction * total as f64;
        for o in chosen {
            held.insert(Category::new(k, o));
        }
    }

    let n = instances.len();
    let mut alive = vec![true; n];
    let mut dropped = Vec::new();
    let mut side = vec![false; n];
    loop {
        // category repair to a fixpoint
        loop {
            let mut changed = false;
            for j in (0..n).filter(|&j| alive[j]) {
                let cats: Vec<Category> = instances[j].categories().collect();
                let all_held = cats.iter().all(|c| held.contains(c));
                side[j] = all_held;
                if !all_held {
                    for c in cats {
                        changed |= held.remove(&c);
                    }
                }
            }
            if !changed {
                break;
            }
        }
        // image repair
        let mut images: BTreeMap<u64, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
        for j in (0..n).filter(|&j| alive[j]) {
            let e = images.entry(instances[j].image_id).or_default();
            if side[j] {
                e.1.push(j);
            } else {
                e.0.push(j);
            }
        }
        let mut changed = false;
        for (image, (kept, out)) in images {
            if kept.is_empty() || out.is_empty() {
                continue;
            }
            changed = true;
            if out.len() > kept.len() {
                for j in kept {
                    alive[j] = false;
                    dropped.push(Dropped {
                        id: instances[j].id,
                        image_id: image,
                        reason: "seen-side instance in an image assigned to the held-out side".into(),
                    });
                }
            } else {
                for j in out {
                    for c in instances[j].categories() {
                        held.remove(&c);
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut part = Partition { warnings, dropped, ..Partition::default() };
    for j in (0..n).filter(|&j| alive[j]) {
        if side[j] {
            part.held_out.push(instances[j].clone());
        } else {
            part.kept.push(instances[j].clone());
        }
    }
    Ok(part)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    /// Fraction of each predicate held out as novel test.
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    /// Fraction of the seen pool carved out as testval.
    #[serde(default = "default_testval_fraction")]
    pub testval_fraction: f64,
    /// Fraction of the remainder assigned to trainval.
    #[serde(default = "default_trainval_fraction")]
    pub trainval_fraction: f64,
    #[serde(default = "default_iou")]
    pub iou_threshold: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_test_fraction() -> f64 {
    0.1
}
fn default_testval_fraction() -> f64 {
    1.0 / 9.0
}
fn default_trainval_fraction() -> f64 {
    1.0 / 8.0
}
fn default_iou() -> f64 {
    DEFAULT_IOU_THRESHOLD
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            test_fraction: default_test_fraction(),
            testval_fraction: default_testval_fraction(),
            trainval_fraction: default_trainval_fraction(),
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::Validation(format!("{name} {v} outside (0, 1)")))
            }
        };
        open("test_fraction", self.test_fraction)?;
        open("testval_fraction", self.testval_fraction)?;
        open("trainval_fraction", self.trainval_fraction)?;
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::Validation(format!("iou_threshold {} outside (0, 1]", self.iou_threshold)));
        }
        Ok(())
    }
}

/// The four partitions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SplitResult {
    pub train: Vec<Instance>,
    pub trainval: Vec<Instance>,
    pub testval: Vec<Instance>,
    pub test: Vec<Instance>,
    pub dropped: Vec<Dropped>,
    pub warnings: Vec<String>,
}

pub const SPLIT_NAMES: [&str; 4] = ["train", "trainval", "testval", "test"];

impl SplitResult {
    pub fn parts(&self) -> [&[Instance]; 4] {
        [&self.train, &self.trainval, &self.testval, &self.test]
    }

    pub fn by_name(&self, name: &str) -> Option<&[Instance]> {
        SPLIT_NAMES.iter().position(|n| *n == name).map(|j| self.parts()[j])
    }

    pub fn category_sets(&self) -> [BTreeSet<Category>; 4] {
        self.parts().map(category_set)
    }

    /// Checks category disjointness, image disjointness and the shared
    /// train/trainval category set.
    pub fn check_invariants(&self) -> Result<()> {
        let [tr, tv, vv, te] = self.category_sets();
        let seen: BTreeSet<Category> = tr.union(&tv).copied().collect();
        if let Some(c) = seen.intersection(&vv).next() {
            return Err(Error::Invariant(format!("category {c:?} in both train/trainval and testval")));
        }
        let all_seen: BTreeSet<Category> = seen.union(&vv).copied().collect();
        if let Some(c) = all_seen.intersection(&te).next() {
            return Err(Error::Invariant(format!("category {c:?} in both seen splits and test")));
        }
        if tr != tv {
            let diff: Vec<_> = tr.symmetric_difference(&tv).take(3).collect();
            return Err(Error::Invariant(format!("train and trainval categories differ, e.g. {diff:?}")));
        }
        let [itr, itv, ivv, ite] = self.parts().map(image_set);
        let seen_images: BTreeSet<u64> = itr.union(&itv).copied().collect();
        if let Some(i) = seen_images.intersection(&ivv).next() {
            return Err(Error::Invariant(format!("image {i} in both train/trainval and testval")));
        }
        let all_seen_images: BTreeSet<u64> = seen_images.union(&ivv).copied().collect();
        if let Some(i) = all_seen_images.intersection(&ite).next() {
            return Err(Error::Invariant(format!("image {i} in both seen splits and test")));
        }
        Ok(())
    }

    /// Per-split counts shaped like a dataset statistics table.
    pub fn counts(&self) -> Vec<SplitCounts> {
        SPLIT_NAMES
            .iter()
            .zip(self.parts())
            .map(|(name, part)| {
                let cats = category_set(part);
                SplitCounts {
                    split: name.to_string(),
                    images: image_set(part).len(),
                    instances: part.len(),
                    categories: cats.len(),
                    predicates: cats.iter().map(|c| c.predicate).collect::<BTreeSet<_>>().len(),
                    objects: cats.iter().map(|c| c.object).collect::<BTreeSet<_>>().len(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub split: String,
    pub images: usize,
    pub instances: usize,
    pub categories: usize,
    pub predicates: usize,
    pub objects: usize,
}

/// Splits the seen pool into train, trainval and testval.
pub fn validation_carveout(seen_pool: &[Instance], cfg: &SplitConfig) -> Result<SplitResult> {
    let mut out = SplitResult::default();
    let pool_cats = category_set(seen_pool);
    let remainder = if pool_cats.len() < 2 {
        let msg = "seen pool has fewer than two categories; testval is empty".to_string();
        warn!("{msg}");
        out.warnings.push(msg);
        seen_pool.to_vec()
    } else {
        let part = category_disjoint_partition(seen_pool, cfg.testval_fraction, cfg.seed.wrapping_add(1))?;
        out.testval = part.held_out;
        out.dropped.extend(part.dropped);
        out.warnings.extend(part.warnings);
        part.kept
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut order: Vec<usize> = (0..remainder.len()).collect();
    order.shuffle(&mut rng);
    let n_tv = (cfg.trainval_fraction * remainder.len() as f64).round() as usize;
    let mut in_tv = vec![false; remainder.len()];
    for &j in &order[..n_tv] {
        in_tv[j] = true;
    }
    let mut alive = vec![true; remainder.len()];
    loop {
        let mut changed = false;
        let count = |flag: bool, alive: &[bool], in_tv: &[bool]| {
            let mut m: BTreeMap<Category, Vec<usize>> = BTreeMap::new();
            for j in (0..remainder.len()).filter(|&j| alive[j] && in_tv[j] == flag) {
                for c in remainder[j].categories() {
                    m.entry(c).or_default().push(j);
                }
            }
            m
        };
        // trainval categories absent from train pull their instances into train
        let train_cats = count(false, &alive, &in_tv);
        let tv_members: Vec<usize> = (0..remainder.len()).filter(|&j| alive[j] && in_tv[j]).collect();
        for j in tv_members {
            if remainder[j].categories().any(|c| !train_cats.contains_key(&c)) {
                in_tv[j] = false;
                changed = true;
            }
        }
        if changed {
            continue;
        }
        // train categories absent from trainval borrow one train instance
        let train_cats = count(false, &alive, &in_tv);
        let tv_cats = count(true, &alive, &in_tv);
        for (c, members) in &train_cats {
            if tv_cats.contains_key(c) {
                continue;
            }
            let movable = members.iter().copied().find(|&j| {
                remainder[j].categories().all(|d| train_cats.get(&d).is_some_and(|m| m.len() >= 2))
            });
            match movable {
                Some(j) => in_tv[j] = true,
                None => {
                    for &j in members {
                        alive[j] = false;
                        out.dropped.push(Dropped {
                            id: remainder[j].id,
                            image_id: remainder[j].image_id,
                            reason: format!("category {c:?} cannot be shared by train and trainval"),
                        });
                    }
                }
            }
            changed = true;
            break;
        }
        if !changed {
            break;
        }
    }
    for (j, inst) in remainder.into_iter().enumerate() {
        if !alive[j] {
            continue;
        }
        if in_tv[j] {
            out.trainval.push(inst);
        } else {
            out.train.push(inst);
        }
    }
    Ok(out)
}

/// Merges duplicate annotations and separates the novel test categories
/// from the seen pool.
pub fn novel_split(instances: &[Instance], cfg: &SplitConfig) -> Result<Partition> {
    let merged = merge_pairs(instances, cfg.iou_threshold)?;
    category_disjoint_partition(&merged, cfg.test_fraction, cfg.seed)
}

/// Full pipeline: merge duplicates, hold out novel categories, carve out
/// validation splits, then verify every invariant.
pub fn build_splits(instances: &[Instance], cfg: &SplitConfig) -> Result<SplitResult> {
    cfg.validate()?;
    let novel = novel_split(instances, cfg)?;
    let mut result = validation_carveout(&novel.kept, cfg)?;
    result.test = novel.held_out;
    result.dropped.splice(0..0, novel.dropped);
    result.warnings.splice(0..0, novel.warnings);
    result.check_invariants()?;
    Ok(result)
}

/// Label-subset filter used to express the UnRel-style splits: keeps
/// instances whose object is allowed, restricts their predicates to the
/// allowed set, and discards instances left without a predicate.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelFilter {
    #[serde(default)]
    pub predicates: Option<BTreeSet<usize>>,
    #[serde(default)]
    pub objects: Option<BTreeSet<usize>>,
}

impl LabelFilter {
    pub fn is_identity(&self) -> bool {
        self.predicates.is_none() && self.objects.is_none()
    }

    pub fn apply(&self, instances: &[Instance]) -> Vec<Instance> {
        instances
            .iter()
            .filter(|i| self.objects.as_ref().is_none_or(|o| o.contains(&i.object_label)))
            .filter_map(|i| {
                let mut i = i.clone();
                if let Some(p) = &self.predicates {
                    i.predicate_labels.retain(|k| p.contains(k));
                }
                (!i.predicate_labels.is_empty()).then_some(i)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::BranchInputs;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, x + w, y + h)
    }

    fn inst(id: u64, image: u64, hb: BoundingBox, ob: BoundingBox, object: usize, preds: &[usize]) -> Instance {
        Instance {
            id,
            image_id: image,
            human_box: hb,
            object_box: ob,
            subject_label: 0,
            object_label: object,
            predicate_labels: preds.to_vec(),
            features: BranchInputs { human: vec![], union: vec![], spatial: vec![] },
        }
    }

    #[test]
    fn iou_cases() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(2.0, 2.0, 1.0, 1.0)), 0.0);
        assert!((iou(&a, &bx(0.5, 0.0, 1.0, 1.0)) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn duplicate_pair_merges_predicates() {
        let b = bx(0.0, 0.0, 2.0, 2.0);
        let out = merge_pairs(&[inst(1, 0, b, b, 3, &[4]), inst(2, 0, b, b, 3, &[1])], 0.7).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].predicate_labels, vec![1, 4]);
        assert_eq!(out[0].id, 1);
    }

    #[test]
    fn disjoint_boxes_do_not_merge() {
        let a = bx(0.0, 0.0, 1.0, 1.0);
        let b = bx(5.0, 5.0, 1.0, 1.0);
        let out = merge_pairs(&[inst(1, 0, a, a, 0, &[0]), inst(2, 0, b, b, 0, &[1])], 0.7).unwrap();
        assert_eq!(out.len(), 2);
    }

    #[test]
    fn chained_duplicates_merge_transitively() {
        // consecutive shifts of 0.1 keep IoU(A,B), IoU(B,C) above 0.7 but not IoU(A,C)
        let a = bx(0.0, 0.0, 1.0, 1.0);
        let b = bx(0.12, 0.0, 1.0, 1.0);
        let c = bx(0.24, 0.0, 1.0, 1.0);
        assert!(iou(&a, &b) >= 0.7 && iou(&b, &c) >= 0.7 && iou(&a, &c) < 0.7);
        let out = merge_pairs(&[inst(1, 0, a, a, 0, &[0]), inst(2, 0, b, b, 0, &[1]), inst(3, 0, c, c, 0, &[2])], 0.7)
            .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].predicate_labels, vec![0, 1, 2]);
    }

    #[test]
    fn degenerate_box_rejected() {
        let a = bx(0.0, 0.0, 0.0, 1.0);
        assert!(merge_pairs(&[inst(1, 0, a, a, 0, &[0])], 0.7).is_err());
    }

    #[test]
    fn ten_uniform_objects_hold_out_one() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let data: Vec<Instance> = (0..100).map(|j| inst(j, j, b, b, (j % 10) as usize, &[0])).collect();
        let part = category_disjoint_partition(&data, 0.1, 5).unwrap();
        let held: BTreeSet<usize> = part.held_out.iter().map(|i| i.object_label).collect();
        assert_eq!(held.len(), 1);
        assert_eq!(part.held_out.len(), 10);
    }

    #[test]
    fn single_object_predicate_stays_seen() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let data: Vec<Instance> = (0..20).map(|j| inst(j, j, b, b, 0, &[0])).collect();
        let part = category_disjoint_partition(&data, 0.1, 0).unwrap();
        assert!(part.held_out.is_empty());
        assert_eq!(part.warnings.len(), 1);
    }

    #[test]
    fn one_category_pool_has_empty_testval() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let data: Vec<Instance> = (0..20).map(|j| inst(j, j, b, b, 0, &[0])).collect();
        let r = validation_carveout(&data, &SplitConfig::default()).unwrap();
        assert!(r.testval.is_empty());
        assert!(!r.warnings.is_empty());
    }

    #[test]
    fn filter_restricts_labels() {
        let b = bx(0.0, 0.0, 1.0, 1.0);
        let data = vec![inst(1, 0, b, b, 0, &[0, 1]), inst(2, 1, b, b, 1, &[0]), inst(3, 2, b, b, 0, &[2])];
        let f = LabelFilter { predicates: Some([0, 1].into()), objects: Some([0].into()) };
        let out = f.apply(&data);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].predicate_labels, vec![0, 1]);
    }
}
