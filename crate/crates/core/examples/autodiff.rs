//! The reverse-mode tape on a small graph attention layer, checked against
//! central finite differences.

use socialkd::student::{Activation, GatLayer, SkeletonGraph};
use socialkd::tensor::{ParamStore, Tape};

fn loss(layer: &GatLayer, store: &ParamStore<f64>, graph: &SkeletonGraph, x: &[f64]) -> f64 {
    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let x = tape.constant(&[1, 17, 3], x.to_vec()).unwrap();
    let (h, _) = layer.forward(&mut tape, &p, x, graph).unwrap();
    let sq = tape.mul(h, h).unwrap();
    let l = tape.sum(sq).unwrap();
    tape.value(l).unwrap()[0]
}

fn main() {
    let graph = SkeletonGraph::coco();
    let mut store = ParamStore::<f64>::new();
    let mut rng = socialkd::seed::rng(0, &[]);
    let layer = GatLayer::new(&mut store, "gat", 3, 4, Activation::Elu, &mut rng);
    let x: Vec<f64> = (0..51).map(|i| ((i * 37 % 11) as f64 - 5.0) / 5.0).collect();

    let mut tape = Tape::new();
    let p = store.bind(&mut tape);
    let xv = tape.constant(&[1, 17, 3], x.clone()).unwrap();
    let (h, _) = layer.forward(&mut tape, &p, xv, &graph).unwrap();
    let sq = tape.mul(h, h).unwrap();
    let l = tape.sum(sq).unwrap();
    let grads = tape.backward(l).unwrap();

    let id = store.find("gat.weight").unwrap();
    let analytic = grads.get(p[id]).unwrap().to_vec();
    let h_step = 1e-5;
    for i in [0, 5, 11] {
        let bump = |d: f64| {
            let mut s = store.clone();
            let mut w = s.get(id).data().to_vec();
            w[i] += d;
            s.set_data(id, w).unwrap();
            loss(&layer, &s, &graph, &x)
        };
        let numeric = (bump(h_step) - bump(-h_step)) / (2.0 * h_step);
        println!("d loss / d weight[{:>2}]: analytic {:+.8}  numeric {:+.8}", i, analytic[i], numeric);
    }
}
