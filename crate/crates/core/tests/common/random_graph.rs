//! Random small computation graphs for gradient checking.

use super::random_tensor;
use adglab::numeric::{Graph, ParamId, ParamStore, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug)]
pub enum Activation {
    Sigmoid,
    Tanh,
    LogSigmoid,
    Exp,
    Square,
}

#[derive(Clone, Copy, Debug)]
pub enum Head {
    LogSoftmaxPick,
    SoftmaxLnPick,
    SigmoidMean,
    RowSums,
}

#[derive(Clone, Debug)]
pub struct Program {
    act: Activation,
    head: Head,
    embed: bool,
    concat: bool,
    ids: Vec<usize>,
    picks: Vec<usize>,
}

pub struct Params {
    x: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    table: ParamId,
}

fn activate(g: &mut Graph, act: Activation, v: Var) -> Var {
    match act {
        Activation::Sigmoid => g.sigmoid(v).unwrap(),
        Activation::Tanh => g.tanh(v).unwrap(),
        Activation::LogSigmoid => g.log_sigmoid(v).unwrap(),
        Activation::Exp => {
            let s = g.scale(v, 0.3).unwrap();
            g.exp(s).unwrap()
        }
        Activation::Square => g.mul(v, v).unwrap(),
    }
}

pub fn build(g: &mut Graph, store: &ParamStore, p: &Params, prog: &Program) -> Var {
    let x = g.param(store, p.x).unwrap();
    let w1 = g.param(store, p.w1).unwrap();
    let b1 = g.param(store, p.b1).unwrap();
    let w2 = g.param(store, p.w2).unwrap();
    let b2 = g.param(store, p.b2).unwrap();
    let pre = g.linear(x, w1, b1).unwrap();
    let mut h = activate(g, prog.act, pre);
    let w2_eff = if prog.concat {
        let t = g.tanh(pre).unwrap();
        h = g.concat_cols(&[h, t]).unwrap();
        let rows = g.shape(w2)[0];
        let ids: Vec<usize> = (0..rows).chain(0..rows).collect();
        g.gather(w2, &ids).unwrap()
    } else {
        w2
    };
    let mut out = g.linear(h, w2_eff, b2).unwrap();
    if prog.embed {
        let table = g.param(store, p.table).unwrap();
        let e = g.gather(table, &prog.ids).unwrap();
        let prod = g.mul(out, e).unwrap();
        out = g.add(out, prod).unwrap();
    }
    match prog.head {
        Head::LogSoftmaxPick => {
            let l = g.log_softmax(out).unwrap();
            let p = g.pick(l, &prog.picks).unwrap();
            g.mean(p).unwrap()
        }
        Head::SoftmaxLnPick => {
            let s = g.softmax(out).unwrap();
            let l = g.ln(s).unwrap();
            let p = g.pick(l, &prog.picks).unwrap();
            g.sum(p).unwrap()
        }
        Head::SigmoidMean => {
            let s = g.sigmoid(out).unwrap();
            let sq = g.mul(s, s).unwrap();
            g.mean(sq).unwrap()
        }
        Head::RowSums => {
            let r = g.sum_cols(out).unwrap();
            let t = g.tanh(r).unwrap();
            let diff = g.sub(t, r).unwrap();
            g.sum(diff).unwrap()
        }
    }
}

pub fn random_case(rng: &mut ChaCha8Rng) -> (ParamStore, Vec<ParamId>, Params, Program) {
    let n = rng.random_range(1..=4);
    let d = rng.random_range(1..=4);
    let hdim = rng.random_range(1..=5);
    let k = rng.random_range(2..=4);
    let m = rng.random_range(1..=3);
    let mut store = ParamStore::new();
    let p = Params {
        x: store.add("x", random_tensor(rng, n, d, 1.0)),
        w1: store.add("w1", random_tensor(rng, d, hdim, 1.0)),
        b1: store.add("b1", random_tensor(rng, 1, hdim, 0.5)),
        w2: store.add("w2", random_tensor(rng, hdim, k, 1.0)),
        b2: store.add("b2", random_tensor(rng, 1, k, 0.5)),
        table: store.add("table", random_tensor(rng, m, k, 1.0)),
    };
    let acts = [Activation::Sigmoid, Activation::Tanh, Activation::LogSigmoid, Activation::Exp, Activation::Square];
    let heads = [Head::LogSoftmaxPick, Head::SoftmaxLnPick, Head::SigmoidMean, Head::RowSums];
    let prog = Program {
        act: acts[rng.random_range(0..acts.len())],
        head: heads[rng.random_range(0..heads.len())],
        embed: rng.random_bool(0.5),
        concat: rng.random_bool(0.5),
        ids: (0..n).map(|_| rng.random_range(0..m)).collect(),
        picks: (0..n).map(|_| rng.random_range(0..k)).collect(),
    };
    let ids = store.ids().collect();
    (store, ids, p, prog)
}
