mod common;

use adglab::data::{BoundingBox, BranchInputs, Instance};
use adglab::datagen::{generate, GeneratorConfig};
use adglab::split::{build_splits, merge_pairs, SplitConfig};
use proptest::prelude::*;

fn fraction(part: usize, whole: usize) -> f64 {
    part as f64 / whole as f64
}

#[test]
fn fifty_seeded_datasets_satisfy_every_invariant() {
    for seed in 0..50 {
        let g = generate(&GeneratorConfig { seed, ..GeneratorConfig::default() }).unwrap();
        let cfg = SplitConfig { seed, ..SplitConfig::default() };
        let s = build_splits(&g.instances, &cfg).unwrap();
        s.check_invariants().unwrap();
        let [tr, tv, vv, te] = s.category_sets();
        assert_eq!(tr, tv);
        assert!(tr.is_disjoint(&vv) && tr.is_disjoint(&te) && vv.is_disjoint(&te));
        assert!(!s.test.is_empty() && !s.testval.is_empty());

        let seen = s.train.len() + s.trainval.len() + s.testval.len();
        let total = seen + s.test.len();
        let test = fraction(s.test.len(), total);
        assert!((test - 0.1).abs() <= 0.05, "seed {seed}: test fraction {test}");
        for (name, got, want) in [
            ("train", fraction(s.train.len(), seen), 7.0 / 9.0),
            ("trainval", fraction(s.trainval.len(), seen), 1.0 / 9.0),
            ("testval", fraction(s.testval.len(), seen), 1.0 / 9.0),
        ] {
            assert!((got - want).abs() <= 0.05, "seed {seed}: {name} fraction {got} vs {want}");
        }
        let ratio = s.trainval.len() as f64 / s.train.len() as f64;
        assert!((ratio - 1.0 / 7.0).abs() <= 0.05, "seed {seed}: trainval/train {ratio}");
    }
}

#[test]
fn merging_generated_data_is_idempotent() {
    for seed in 0..50 {
        let g = generate(&GeneratorConfig { seed, total_instances: 1_000, ..GeneratorConfig::default() }).unwrap();
        let once = merge_pairs(&g.instances, 0.7).unwrap();
        assert!(once.len() <= g.instances.len());
        assert_eq!(merge_pairs(&once, 0.7).unwrap(), once);
    }
}

#[test]
fn splitting_is_deterministic_under_seed() {
    let g = generate(&GeneratorConfig::default()).unwrap();
    let cfg = SplitConfig { seed: 3, ..SplitConfig::default() };
    assert_eq!(build_splits(&g.instances, &cfg).unwrap(), build_splits(&g.instances, &cfg).unwrap());
}

fn instance(id: u64, image: u64, object: usize, predicate: usize, b: [f64; 4], o: [f64; 4]) -> Instance {
    Instance {
        id,
        image_id: image,
        human_box: BoundingBox::new(b[0], b[1], b[0] + b[2], b[1] + b[3]),
        object_box: BoundingBox::new(o[0], o[1], o[0] + o[2], o[1] + o[3]),
        subject_label: 0,
        object_label: object,
        predicate_labels: vec![predicate],
        features: BranchInputs::default(),
    }
}

fn arb_box() -> impl Strategy<Value = [f64; 4]> {
    (0u8..4, 0u8..4, 1u8..4, 1u8..4).prop_map(|(x, y, w, h)| [x as f64 * 0.1, y as f64 * 0.1, w as f64 * 0.2, h as f64 * 0.2])
}

proptest! {
    #[test]
    fn merge_pairs_is_idempotent(
        rows in prop::collection::vec((0u64..3, 0usize..2, 0usize..4, arb_box(), arb_box()), 1..20),
        threshold in 0.3f64..1.0,
    ) {
        let data: Vec<Instance> = rows
            .iter()
            .enumerate()
            .map(|(j, &(img, obj, pred, b, o))| instance(j as u64, img, obj, pred, b, o))
            .collect();
        let once = merge_pairs(&data, threshold).unwrap();
        let twice = merge_pairs(&once, threshold).unwrap();
        prop_assert_eq!(&twice, &once);
        let before: usize = data.len();
        prop_assert!(once.len() <= before);
        let labels_before: std::collections::BTreeSet<(u64, usize, usize)> =
            data.iter().flat_map(|x| x.predicate_labels.iter().map(move |&p| (x.image_id, x.object_label, p))).collect();
        let labels_after: std::collections::BTreeSet<(u64, usize, usize)> =
            once.iter().flat_map(|x| x.predicate_labels.iter().map(move |&p| (x.image_id, x.object_label, p))).collect();
        prop_assert_eq!(labels_before, labels_after);
    }
}
