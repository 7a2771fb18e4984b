//! Parameter initialization and small shared layers.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::tensor::{Bound, ParamId, ParamStore, Real, Tape, Tensor, Var};

/// Tensor with entries drawn uniformly from `[-bound, bound]`.
pub fn uniform<R: Real, G: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut G) -> Tensor<R> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Tensor::from_fn(shape, |_| R::from_f64_lossy(dist.sample(rng)))
}

/// Glorot/Xavier uniform initialization.
pub fn glorot<R: Real, G: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut G) -> Tensor<R> {
    uniform(shape, (6.0 / (fan_in + fan_out) as f64).sqrt(), rng)
}

/// Affine map over the last axis: `x @ W + b` with `W: [input, output]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut G,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), glorot(&[input, output], input, output, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros(&[output])));
        Linear { weight, bias, input, output }
    }

    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, x: Var) -> crate::tensor::Result<Var> {
        let y = tape.matmul(x, p[self.weight])?;
        match self.bias {
            Some(b) => tape.add(y, p[b]),
            None => Ok(y),
        }
    }

    pub fn num_params(&self) -> usize {
        self.input * self.output + if self.bias.is_some() { self.output } else { 0 }
    }
}

/// Row-wise argmax of a `[rows, cols]` buffer.
pub fn argmax_rows<R: Real>(values: &[R], cols: usize) -> Vec<usize> {
    values
        .chunks(cols)
        .map(|row| {
            row.iter().enumerate().fold(0, |best, (i, v)| if *v > row[best] { i } else { best })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    #[test]
    fn linear_applies_weight_and_bias() {
        let mut store = ParamStore::<f64>::new();
        let lin = Linear::new(&mut store, "l", 2, 1, true, &mut seed::rng(0, &[]));
        store.set_data(lin.weight, vec![2.0, -1.0]).unwrap();
        store.set_data(lin.bias.unwrap(), vec![0.5]).unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let x = tape.constant(&[1, 2], vec![3.0, 4.0]).unwrap();
        let y = lin.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(y).unwrap(), &[2.5]);
        assert_eq!(lin.num_params(), 3);
    }

    #[test]
    fn argmax_takes_first_maximum() {
        assert_eq!(argmax_rows(&[1.0f32, 3.0, 3.0, 0.0, -1.0, -2.0], 3), vec![1, 0]);
    }
}
