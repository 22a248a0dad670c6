//! Compares reverse-mode gradients of a small two-layer network against
//! central finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use adglab::numeric::{Graph, ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape")
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let x = store.add("x", random(&mut rng, 4, 3));
    let w1 = store.add("w1", random(&mut rng, 3, 5));
    let b1 = store.add("b1", random(&mut rng, 1, 5));
    let w2 = store.add("w2", random(&mut rng, 5, 4));
    let targets = [0, 3, 1, 2];
    let loss = |store: &ParamStore| {
        let mut g = Graph::new();
        let (xv, w1v, b1v, w2v) = (
            g.param(store, x).unwrap(),
            g.param(store, w1).unwrap(),
            g.param(store, b1).unwrap(),
            g.param(store, w2).unwrap(),
        );
        let h = g.linear(xv, w1v, b1v).unwrap();
        let h = g.tanh(h).unwrap();
        let logits = g.matmul(h, w2v).unwrap();
        let lsm = g.log_softmax(logits).unwrap();
        let picked = g.pick(lsm, &targets).unwrap();
        let l = g.mean(picked).unwrap();
        (g, l)
    };
    let (g, l) = loss(&store);
    let grads = g.backward(l).unwrap();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for id in store.ids().collect::<Vec<_>>() {
        let analytic = grads.param(id).cloned().unwrap();
        for j in 0..store.get(id).len() {
            let x0 = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = x0 + eps;
            let (g, l) = loss(&store);
            let up = g.value(l).item().unwrap();
            store.get_mut(id).data_mut()[j] = x0 - eps;
            let (g, l) = loss(&store);
            let down = g.value(l).item().unwrap();
            store.get_mut(id).data_mut()[j] = x0;
            let numeric = (up - down) / (2.0 * eps);
            let err = (analytic.data()[j] - numeric).abs() / analytic.data()[j].abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
        println!("{:<3} {} scalars checked", store.name(id), store.get(id).len());
    }
    println!("max relative error {worst:.2e}");
}
