//! Shared test helpers: a central finite-difference gradient oracle and
//! small synthetic datasets.

#![allow(dead_code)]

pub mod grad_cases;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socialkd::tensor::{Bound, ParamStore, Tape, Var};

pub const STEP: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
pub const FLOOR: f64 = 1e-2;
/// Coordinates probed per tensor; small tensors are probed exhaustively.
pub const MAX_PROBES: usize = 48;

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A differentiable function of bound parameters and input variables.
pub type Model<'a> = dyn Fn(&mut Tape<f64>, &Bound, &[Var]) -> socialkd::Result<Var> + 'a;

pub struct GradCheck {
    pub store: ParamStore<f64>,
    pub inputs: Vec<(Vec<usize>, Vec<f64>)>,
    seed: u64,
}

struct Probe {
    analytic: f64,
    numeric: f64,
    /// Central difference at a step 100x smaller, taken when the one-sided
    /// slopes at `STEP` disagree, which means a ReLU kink lies inside the
    /// stencil.
    kink: Option<f64>,
    label: String,
}

impl GradCheck {
    pub fn new(store: ParamStore<f64>, inputs: Vec<(Vec<usize>, Vec<f64>)>, seed: u64) -> Self {
        GradCheck { store, inputs, seed }
    }

    /// Contracts the output with fixed random weights so every element of a
    /// non-scalar output contributes to the checked scalar.
    fn scalar(&self, tape: &mut Tape<f64>, out: Var) -> Var {
        let shape = tape.shape(out).unwrap().to_vec();
        let n: usize = shape.iter().product();
        let w = random_vec(&mut rng(self.seed ^ 0x5eed), n, 1.0);
        let w = tape.constant(&shape, w).unwrap();
        let prod = tape.mul(out, w).unwrap();
        tape.sum(prod).unwrap()
    }

    fn value(&self, store: &ParamStore<f64>, inputs: &[(Vec<usize>, Vec<f64>)], f: &Model) -> f64 {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let xs: Vec<Var> = inputs.iter().map(|(s, d)| tape.constant(s, d.clone()).unwrap()).collect();
        let out = f(&mut tape, &p, &xs).unwrap();
        let loss = self.scalar(&mut tape, out);
        tape.value(loss).unwrap()[0]
    }

    fn probes(&self, n: usize, salt: u64) -> Vec<usize> {
        if n <= MAX_PROBES {
            return (0..n).collect();
        }
        let mut r = rng(self.seed ^ salt);
        let mut idx: Vec<usize> = (0..MAX_PROBES - 2).map(|_| r.random_range(0..n)).collect();
        idx.extend([0, n - 1]);
        idx
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
    }

    /// Central difference at `STEP`, plus a fine-step estimate when the
    /// stencil straddles a kink.
    fn central(&self, mut bump: impl FnMut(f64) -> f64) -> (f64, Option<f64>) {
        let (up, mid, down) = (bump(STEP), bump(0.0), bump(-STEP));
        let numeric = (up - down) / (2.0 * STEP);
        let kinked = Self::rel((up - mid) / STEP, (mid - down) / STEP) > REL_TOL;
        let fine = kinked.then(|| (bump(STEP / 100.0) - bump(-STEP / 100.0)) / (2.0 * STEP / 100.0));
        (numeric, fine)
    }

    /// Largest relative error over all probed coordinates of every parameter
    /// and input. Panics with the offending coordinate past tolerance.
    pub fn run(&self, f: &Model) -> f64 {
        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let xs: Vec<Var> = self.inputs.iter().map(|(s, d)| tape.variable(s, d.clone()).unwrap()).collect();
        let out = f(&mut tape, &p, &xs).unwrap();
        let loss = self.scalar(&mut tape, out);
        let grads = tape.backward(loss).unwrap();

        let mut probes = Vec::new();
        for (k, id) in self.store.ids().enumerate() {
            let n = self.store.get(id).numel();
            let g = grads.get(p[id]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            for i in self.probes(n, k as u64 + 1) {
                let (numeric, kink) = self.central(|h| {
                    let mut s = self.store.clone();
                    let mut d = s.get(id).data().to_vec();
                    d[i] += h;
                    s.set_data(id, d).unwrap();
                    self.value(&s, &self.inputs, f)
                });
                probes.push(Probe { analytic: g[i], numeric, kink, label: format!("{}[{}]", self.store.name(id), i) });
            }
        }
        for (k, &x) in xs.iter().enumerate() {
            let n = self.inputs[k].1.len();
            let g = grads.get(x).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
            for i in self.probes(n, 1000 + k as u64) {
                let (numeric, kink) = self.central(|h| {
                    let mut inputs = self.inputs.clone();
                    inputs[k].1[i] += h;
                    self.value(&self.store, &inputs, f)
                });
                probes.push(Probe { analytic: g[i], numeric, kink, label: format!("input{}[{}]", k, i) });
            }
        }
        let mut worst = 0.0f64;
        for pr in &probes {
            let err = match pr.kink {
                Some(fine) => Self::rel(pr.analytic, pr.numeric).min(Self::rel(pr.analytic, fine)),
                None => Self::rel(pr.analytic, pr.numeric),
            };
            assert!(
                err <= REL_TOL,
                "{}: analytic {:.9e} vs numeric {:.9e} (rel err {:.3e})",
                pr.label,
                pr.analytic,
                pr.numeric,
                err
            );
            worst = worst.max(err);
        }
        worst
    }
}

/// Small synthetic train/val/test splits.
pub fn tiny_splits(n_per_class: usize, seed: u64) -> [socialkd::pose::Dataset; 3] {
    use socialkd::pose::{generate_synthetic, split_dataset, SyntheticConfig, Taxonomy};
    let ds = generate_synthetic(&SyntheticConfig::new(Taxonomy::Jpl, n_per_class, seed)).unwrap();
    split_dataset(&ds, [0.7, 0.15, 0.15], seed).unwrap()
}
