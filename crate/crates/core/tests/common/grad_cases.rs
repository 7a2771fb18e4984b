//! Gradient-oracle cases. Each draws its shapes from `seed` and returns the
//! worst relative error it observed; past tolerance it panics.

use rand::Rng;
use socialkd::distill::{cosine_matrix, infonce_loss, soft_label_loss};
use socialkd::heads::{classification_loss, cross_entropy, ChainHeads};
use socialkd::pose::{LabelTriple, Taxonomy};
use socialkd::student::{
    Activation, BiLstm, GatLayer, LstmDirection, SkeletonGraph, SpatialKind, Student, StudentConfig, TemporalKind,
};
use socialkd::teacher::{Teacher, TeacherConfig};
use socialkd::tensor::{ParamStore, Tensor};

use super::{random_vec, rng, GradCheck};

pub type Case = fn(u64) -> f64;

pub const CASES: [(&str, Case); 12] = [
    ("GAT layer", gat_layer),
    ("LSTM cell", lstm_cell),
    ("stacked Bi-LSTM", bilstm),
    ("conv3d", conv3d),
    ("lateral sum", lateral_sum),
    ("teacher end to end", teacher),
    ("chain heads", chain_heads),
    ("cross-entropy", cross_entropy_case),
    ("cosine similarity", cosine),
    ("InfoNCE", infonce),
    ("soft-label KD", soft_label),
    ("student end to end", students),
];

fn input(shape: &[usize], seed: u64, scale: f64) -> (Vec<usize>, Vec<f64>) {
    let n = shape.iter().product();
    (shape.to_vec(), random_vec(&mut rng(seed), n, scale))
}

fn dims(seed: u64, ranges: &[(usize, usize)]) -> Vec<usize> {
    let mut r = rng(seed ^ 0xd1);
    ranges.iter().map(|&(lo, hi)| r.random_range(lo..=hi)).collect()
}

fn single(name: &str, shape: &[usize], seed: u64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    let n = shape.iter().product();
    store.add(name, Tensor::new(shape.to_vec(), random_vec(&mut rng(seed), n, 0.5)).unwrap());
    store
}

/// A connected five-node graph with a cycle.
fn ring_graph() -> SkeletonGraph {
    SkeletonGraph::new(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 4)]).unwrap()
}

pub fn gat_layer(seed: u64) -> f64 {
    let d = dims(seed, &[(1, 3), (2, 4), (2, 5)]);
    let graph = ring_graph();
    let mut worst: f64 = 0.0;
    for act in [Activation::Elu, Activation::Identity] {
        let mut store = ParamStore::new();
        let layer = GatLayer::new(&mut store, "gat", d[1], d[2], act, &mut rng(seed));
        let check = GradCheck::new(store, vec![input(&[d[0], 5, d[1]], seed + 1, 1.0)], seed);
        worst = worst.max(check.run(&|t, p, x| Ok(layer.forward(t, p, x[0], &graph)?.0)));
        worst = worst.max(check.run(&|t, p, x| Ok(layer.forward(t, p, x[0], &graph)?.1)));
    }
    worst
}

pub fn lstm_cell(seed: u64) -> f64 {
    let d = dims(seed, &[(1, 3), (1, 5), (2, 4), (2, 5)]);
    let mut store = ParamStore::new();
    let cell = LstmDirection::new(&mut store, "lstm", d[2], d[3], &mut rng(seed));
    let check = GradCheck::new(store, vec![input(&[d[0], d[1], d[2]], seed + 1, 1.0)], seed);
    let mut worst: f64 = 0.0;
    for reverse in [false, true] {
        worst = worst.max(check.run(&|t, p, x| {
            let hs = cell.run(t, p, x[0], reverse)?;
            Ok(t.concat(&hs, 1)?)
        }));
    }
    worst
}

pub fn bilstm(seed: u64) -> f64 {
    let d = dims(seed, &[(1, 2), (2, 4), (2, 3), (2, 3), (1, 2)]);
    let mut store = ParamStore::new();
    let lstm = BiLstm::new(&mut store, "bilstm", d[2], d[3], d[4], &mut rng(seed));
    let check = GradCheck::new(store, vec![input(&[d[0], d[1], d[2]], seed + 1, 1.0)], seed);
    check.run(&|t, p, x| lstm.forward(t, p, x[0]))
}

pub fn conv3d(seed: u64) -> f64 {
    let d = dims(seed, &[(1, 2), (1, 3), (1, 3), (3, 5), (3, 5), (4, 6), (1, 2)]);
    let (b, cin, cout, t, h, w, s) = (d[0], d[1], d[2], d[3], d[4], d[5], d[6]);
    let cases: [(&[usize], [usize; 3], [usize; 3]); 3] = [
        (&[cout, cin, 3, 3, 3], [1, s, s], [1, 1, 1]),
        (&[cout, cin, 3, 1, 1], [1, 1, 1], [1, 0, 0]),
        (&[cout, cin, 1, 1, 1], [1, 1, 1], [0, 0, 0]),
    ];
    let mut worst: f64 = 0.0;
    for (k, (ws, stride, pad)) in cases.into_iter().enumerate() {
        let check = GradCheck::new(single("w", ws, seed + k as u64), vec![input(&[b, cin, t, h, w], seed + 10, 1.0)], seed);
        let id = check.store.find("w").unwrap();
        worst = worst.max(check.run(&|tp, p, x| Ok(tp.conv3d(x[0], p[id], stride, pad)?)));
    }
    worst
}

pub fn lateral_sum(seed: u64) -> f64 {
    let d = dims(seed, &[(1, 2), (1, 3), (1, 3), (2, 3), (2, 4)]);
    let (b, c_to, c_from, t, g) = (d[0], d[1], d[2], d[3], d[4]);
    let check = GradCheck::new(
        single("lat", &[c_to, c_from, 1, 1, 1], seed),
        vec![input(&[b, c_to, t, g, g], seed + 1, 1.0), input(&[b, c_from, t, g, g], seed + 2, 1.0)],
        seed,
    );
    let w = check.store.find("lat").unwrap();
    check.run(&|tp, p, x| {
        let proj = tp.conv3d(x[1], p[w], [1, 1, 1], [0, 0, 0])?;
        Ok(tp.add(x[0], proj)?)
    })
}

pub fn teacher(seed: u64) -> f64 {
    let d = dims(seed, &[(3, 5), (2, 3), (2, 3)]);
    let grid = d[0];
    let cfg = TeacherConfig { grid, stage1_channels: d[1], stage2_channels: d[2], repr_dim: 3, ..Default::default() };
    let teacher = Teacher::<f64>::new(cfg, 4, seed).unwrap();
    let inputs = teacher
        .pathways
        .iter()
        .enumerate()
        .map(|(i, pw)| input(&[1, pw.modality.channels(), 3, grid, grid], seed + i as u64, 1.0))
        .collect();
    let check = GradCheck::new(teacher.params.clone(), inputs, seed);
    check.run(&|t, p, x| {
        let (_, logits) = teacher.forward_full(t, p, x)?;
        Ok(t.concat(&logits.tasks(), 1)?)
    })
}

pub fn chain_heads(seed: u64) -> f64 {
    let d = dims(seed, &[(2, 4), (2, 5), (4, 10)]);
    let mut store = ParamStore::new();
    let heads = ChainHeads::new(&mut store, "heads", d[1], d[2], &mut rng(seed));
    let check = GradCheck::new(store, vec![input(&[d[0], d[1]], seed + 1, 1.0)], seed);
    let mut worst = check.run(&|t, p, x| {
        let l = heads.forward(t, p, x[0])?;
        Ok(t.concat(&l.tasks(), 1)?)
    });
    let mut store = ParamStore::new();
    let heads = ChainHeads::new(&mut store, "heads", d[1], 10, &mut rng(seed));
    let mut r = rng(seed + 2);
    let labels: Vec<LabelTriple> =
        (0..d[0]).map(|_| LabelTriple::from_action(Taxonomy::Jpl, r.random_range(0..10)).unwrap()).collect();
    let check = GradCheck::new(store, vec![input(&[d[0], d[1]], seed + 3, 1.0)], seed);
    worst = worst.max(check.run(&|t, p, x| {
        let l = heads.forward(t, p, x[0])?;
        classification_loss(t, &l, &labels)
    }));
    worst
}

pub fn cross_entropy_case(seed: u64) -> f64 {
    let d = dims(seed, &[(1, 6), (2, 8)]);
    let mut r = rng(seed);
    let targets: Vec<usize> = (0..d[0]).map(|_| r.random_range(0..d[1])).collect();
    let check = GradCheck::new(ParamStore::new(), vec![input(&[d[0], d[1]], seed + 1, 3.0)], seed);
    check.run(&|t, _, x| cross_entropy(t, x[0], &targets))
}

pub fn cosine(seed: u64) -> f64 {
    let d = dims(seed, &[(1, 4), (1, 4), (2, 6)]);
    let check = GradCheck::new(ParamStore::new(), vec![input(&[d[0], d[2]], seed, 1.0), input(&[d[1], d[2]], seed + 1, 1.0)], seed);
    check.run(&|t, _, x| cosine_matrix(t, x[0], x[1]))
}

pub fn infonce(seed: u64) -> f64 {
    let d = dims(seed, &[(2, 6), (2, 6)]);
    let mut worst: f64 = 0.0;
    for (symmetric, tau) in [(false, 0.1), (true, 0.5)] {
        let check =
            GradCheck::new(ParamStore::new(), vec![input(&[d[0], d[1]], seed, 1.0), input(&[d[0], d[1]], seed + 1, 1.0)], seed);
        worst = worst.max(check.run(&|t, _, x| infonce_loss(t, x[0], x[1], tau, symmetric)));
    }
    worst
}

pub fn soft_label(seed: u64) -> f64 {
    let d = dims(seed, &[(1, 3), (2, 4)]);
    let mut store = ParamStore::new();
    let heads = ChainHeads::new(&mut store, "heads", d[1], 4, &mut rng(seed));
    let check = GradCheck::new(store, vec![input(&[d[0], d[1]], seed + 1, 1.0), input(&[d[0], d[1]], seed + 2, 1.0)], seed);
    check.run(&|t, p, x| {
        let teacher = heads.forward(t, p, x[0])?;
        let student = heads.forward(t, p, x[1])?;
        soft_label_loss(t, &teacher, &student, 4.0)
    })
}

pub fn students(seed: u64) -> f64 {
    let variants = [
        (SpatialKind::Gat, TemporalKind::Bilstm),
        (SpatialKind::Gcn, TemporalKind::Tcn),
        (SpatialKind::Gat, TemporalKind::Attention),
    ];
    let d = dims(seed, &[(1, 2), (2, 4), (1, 3), (2, 3)]);
    let mut worst: f64 = 0.0;
    for (k, (spatial, temporal)) in variants.into_iter().enumerate() {
        let cfg = StudentConfig {
            spatial,
            temporal,
            spatial_layers: d[2],
            graph_hidden: 2,
            lstm_hidden: d[3],
            repr_dim: 3,
            frames: d[1],
            ..Default::default()
        };
        let student = Student::<f64>::new(cfg, 4, seed + k as u64).unwrap();
        let check = GradCheck::new(student.params.clone(), vec![input(&[d[0], d[1], 17, 3], seed + 7, 1.0)], seed);
        worst = worst.max(check.run(&|t, p, x| student.forward(t, p, x[0])));
    }
    worst
}
