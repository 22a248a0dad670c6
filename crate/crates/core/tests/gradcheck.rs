mod common;

use adglab::numeric::{Graph, ParamStore};
use common::random_graph::{build, random_case};
use common::{max_gradient_error, random_tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn hundred_random_graphs_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let (mut store, ids, p, prog) = random_case(&mut rng);
        let err = max_gradient_error(&mut store, &ids, |g, s| build(g, s, &p, &prog));
        assert!(err < 1e-4, "case {case} {prog:?}: relative error {err:e}");
        worst = worst.max(err);
    }
    assert!(worst < 1e-4);
}

#[test]
fn two_layer_relu_net_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let x = store.add("x", random_tensor(&mut rng, 3, 4, 1.0));
    let w1 = store.add("w1", random_tensor(&mut rng, 4, 6, 1.0));
    let b1 = store.add("b1", random_tensor(&mut rng, 1, 6, 1.0));
    let w2 = store.add("w2", random_tensor(&mut rng, 6, 1, 1.0));
    let build = |g: &mut Graph, s: &ParamStore| {
        let (xv, w1v, b1v, w2v) = (g.param(s, x).unwrap(), g.param(s, w1).unwrap(), g.param(s, b1).unwrap(), g.param(s, w2).unwrap());
        let pre = g.linear(xv, w1v, b1v).unwrap();
        let h = g.relu(pre).unwrap();
        let o = g.matmul(h, w2v).unwrap();
        let l = g.log_sigmoid(o).unwrap();
        g.mean(l).unwrap()
    };
    let mut g = Graph::new();
    let _ = build(&mut g, &store);
    let xv = g.param(&store, x).unwrap();
    let (w1v, b1v) = (g.param(&store, w1).unwrap(), g.param(&store, b1).unwrap());
    let pre = g.linear(xv, w1v, b1v).unwrap();
    assert!(g.value(pre).data().iter().all(|v| v.abs() > 1e-3), "fixture sits on a relu kink");
    let err = max_gradient_error(&mut store, &[x, w1, b1, w2], build);
    assert!(err < 1e-4, "relative error {err:e}");
}

mod model_losses {
    use super::common::{dataset, rel_err};
    use adglab::datagen::SPATIAL_DIM;
    use adglab::losses::{bce_over_selection, regularizer, DgVariant, DomainLabel, RegularizerWeights};
    use adglab::models::{BatchInputs, Model, ModelConfig};
    use adglab::numeric::Graph;
    use adglab::stats::DomainStatistics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loss(model: &Model, batch: &BatchInputs, labels: &[DomainLabel], weights: &RegularizerWeights, variant: DgVariant) -> f64 {
        let mut g = Graph::new();
        let l = build(&mut g, model, batch, labels, weights, variant);
        g.value(l).item().unwrap()
    }

    fn build(
        g: &mut Graph,
        model: &Model,
        batch: &BatchInputs,
        labels: &[DomainLabel],
        weights: &RegularizerWeights,
        variant: DgVariant,
    ) -> adglab::numeric::Var {
        let fw = model.forward(g, batch).unwrap();
        let positives: Vec<Vec<usize>> = labels.iter().map(|l| l.predicates.clone()).collect();
        let selections: Vec<Vec<usize>> = (0..labels.len()).map(|_| (0..model.config().num_predicates).collect()).collect();
        let task = bce_over_selection(g, fw.union_logits, &positives, &selections).unwrap();
        match regularizer(g, model, variant, fw.tap, labels, weights).unwrap() {
            Some(r) => {
                let r = g.scale(r, 0.7).unwrap();
                g.add(task, r).unwrap()
            }
            None => task,
        }
    }

    #[test]
    fn every_variant_loss_matches_central_differences() {
        let instances: Vec<_> = dataset(3, 300).into_iter().take(6).collect();
        let stats = DomainStatistics::compute(&instances, 12, 10).unwrap();
        let weights = RegularizerWeights::new(stats);
        let labels: Vec<DomainLabel> = instances
            .iter()
            .map(|i| DomainLabel { object: i.object_label, predicates: i.predicate_labels.clone() })
            .collect();
        let batch = BatchInputs::stack(instances.iter().map(|i| &i.features)).unwrap();
        for variant in DgVariant::ALL {
            let cfg = ModelConfig {
                human_dim: instances[0].features.human.len(),
                union_dim: instances[0].features.union.len(),
                spatial_dim: SPATIAL_DIM,
                num_predicates: 10,
                num_objects: 12,
                hidden_dim: 5,
                feature_dim: 4,
                discriminator: variant.discriminator(),
                discriminator_hidden: Some(3),
                tap: Default::default(),
            };
            let mut model = Model::new(cfg, 11).unwrap();
            // zero-initialised biases put relu inputs exactly on the kink
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for id in model.store().ids().collect::<Vec<_>>() {
                for v in model.store_mut().get_mut(id).data_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
            let mut g = Graph::new();
            let l = build(&mut g, &model, &batch, &labels, &weights, variant);
            let grads = g.backward(l).unwrap();
            let ids: Vec<_> = model.store().ids().collect();
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for id in ids {
                let analytic = grads.param(id).cloned();
                for j in 0..model.store().get(id).len() {
                    let x0 = model.store().get(id).data()[j];
                    model.store_mut().get_mut(id).data_mut()[j] = x0 + h;
                    let up = loss(&model, &batch, &labels, &weights, variant);
                    model.store_mut().get_mut(id).data_mut()[j] = x0 - h;
                    let down = loss(&model, &batch, &labels, &weights, variant);
                    model.store_mut().get_mut(id).data_mut()[j] = x0;
                    let a = analytic.as_ref().map_or(0.0, |t| t.data()[j]);
                    worst = worst.max(rel_err(a, (up - down) / (2.0 * h)));
                }
            }
            assert!(worst < 1e-4, "{}: relative error {worst:e}", variant.label());
        }
    }
}
