#![allow(dead_code)]

pub mod random_graph;

use adglab::data::Instance;
use adglab::datagen::{generate, GeneratorConfig};
use adglab::numeric::{Graph, ParamId, ParamStore, Tensor, Var};
use rand::Rng;

pub fn generator(seed: u64, total_instances: usize) -> GeneratorConfig {
    GeneratorConfig { seed, total_instances, ..GeneratorConfig::default() }
}

pub fn dataset(seed: u64, total_instances: usize) -> Vec<Instance> {
    generate(&generator(seed, total_instances)).unwrap().instances
}

pub fn random_tensor<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

/// Relative error with a small floor on the denominator.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Largest relative error between reverse-mode gradients and central
/// differences over every scalar of `params`.
pub fn max_gradient_error(
    store: &mut ParamStore,
    params: &[ParamId],
    build: impl Fn(&mut Graph, &ParamStore) -> Var,
) -> f64 {
    let h = 1e-5;
    let mut g = Graph::new();
    let loss = build(&mut g, store);
    let grads = g.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for &id in params {
        let shape = store.get(id).shape();
        let analytic = grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(shape[0], shape[1]));
        for j in 0..store.get(id).len() {
            let x0 = store.get(id).data()[j];
            let mut eval = |x: f64| {
                store.get_mut(id).data_mut()[j] = x;
                let mut g = Graph::new();
                let l = build(&mut g, store);
                g.value(l).item().unwrap()
            };
            let numeric = (eval(x0 + h) - eval(x0 - h)) / (2.0 * h);
            store.get_mut(id).data_mut()[j] = x0;
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}
