//! Chained intent → attitude → action classifier and its loss.
//!
//! Each head sees the representation concatenated with the raw logits of
//! every earlier head.

use rand::Rng;

use crate::nn::{argmax_rows, Linear};
use crate::pose::LabelTriple;
use crate::tensor::{Bound, ParamStore, Real, Tape, Var};
use crate::{Error, Result};

pub const INTENT_CLASSES: usize = 3;
pub const ATTITUDE_CLASSES: usize = 2;

#[derive(Clone, Debug)]
pub struct ChainHeads {
    pub intent: Linear,
    pub attitude: Linear,
    pub action: Linear,
    pub num_actions: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct ChainLogits {
    /// `[B, 3]`
    pub intent: Var,
    /// `[B, 2]`
    pub attitude: Var,
    /// `[B, K]`
    pub action: Var,
}

impl ChainLogits {
    pub fn tasks(&self) -> [Var; 3] {
        [self.intent, self.attitude, self.action]
    }
}

impl ChainHeads {
    pub fn new<R: Real, G: Rng + ?Sized>(
        store: &mut ParamStore<R>,
        prefix: &str,
        repr_dim: usize,
        num_actions: usize,
        rng: &mut G,
    ) -> Self {
        let intent = Linear::new(store, &format!("{prefix}.intent"), repr_dim, INTENT_CLASSES, true, rng);
        let attitude =
            Linear::new(store, &format!("{prefix}.attitude"), repr_dim + INTENT_CLASSES, ATTITUDE_CLASSES, true, rng);
        let action = Linear::new(
            store,
            &format!("{prefix}.action"),
            repr_dim + INTENT_CLASSES + ATTITUDE_CLASSES,
            num_actions,
            true,
            rng,
        );
        ChainHeads { intent, attitude, action, num_actions }
    }

    /// `r` is `[B, repr_dim]`.
    pub fn forward<R: Real>(&self, tape: &mut Tape<R>, p: &Bound, r: Var) -> Result<ChainLogits> {
        let intent = self.intent.forward(tape, p, r)?;
        let ri = tape.concat(&[r, intent], 1)?;
        let attitude = self.attitude.forward(tape, p, ri)?;
        let ria = tape.concat(&[r, intent, attitude], 1)?;
        let action = self.action.forward(tape, p, ria)?;
        Ok(ChainLogits { intent, attitude, action })
    }

    pub fn num_params(&self) -> usize {
        self.intent.num_params() + self.attitude.num_params() + self.action.num_params()
    }

    pub fn class_counts(&self) -> [usize; 3] {
        [INTENT_CLASSES, ATTITUDE_CLASSES, self.num_actions]
    }
}

/// Mean cross-entropy of one task; `targets[b]` indexes the true class.
pub fn cross_entropy<R: Real>(tape: &mut Tape<R>, logits: Var, targets: &[usize]) -> Result<Var> {
    let shape = tape.shape(logits)?.to_vec();
    if shape.len() != 2 || shape[0] != targets.len() {
        return Err(Error::Contract(format!("logits {:?} do not match {} targets", shape, targets.len())));
    }
    let classes = shape[1];
    let mut onehot = vec![R::zero(); targets.len() * classes];
    for (b, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(Error::Taxonomy(format!("label {} out of range for {} classes", t, classes)));
        }
        onehot[b * classes + t] = R::one();
    }
    let mask = tape.constant(&shape, onehot)?;
    let logp = tape.log_softmax(logits, 1)?;
    let picked = tape.mul(logp, mask)?;
    let total = tape.sum(picked)?;
    Ok(tape.scale(total, R::from_f64_lossy(-1.0 / targets.len() as f64))?)
}

/// Mean over the batch of the average of the three per-task cross-entropies.
pub fn classification_loss<R: Real>(tape: &mut Tape<R>, logits: &ChainLogits, labels: &[LabelTriple]) -> Result<Var> {
    let mut parts = Vec::with_capacity(3);
    for (task, var) in logits.tasks().into_iter().enumerate() {
        let targets: Vec<usize> = labels.iter().map(|l| l.indices()[task]).collect();
        parts.push(cross_entropy(tape, var, &targets)?);
    }
    let s = tape.add(parts[0], parts[1])?;
    let s = tape.add(s, parts[2])?;
    Ok(tape.scale(s, R::from_f64_lossy(1.0 / 3.0))?)
}

/// Predicted class per task for every batch row.
pub fn predict<R: Real>(tape: &Tape<R>, logits: &ChainLogits) -> Result<Vec<[usize; 3]>> {
    let mut per_task = Vec::with_capacity(3);
    for var in logits.tasks() {
        let cols = *tape.shape(var)?.last().expect("rank-2 logits");
        per_task.push(argmax_rows(tape.value(var)?, cols));
    }
    Ok((0..per_task[0].len()).map(|b| [per_task[0][b], per_task[1][b], per_task[2][b]]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::Taxonomy;
    use crate::seed;

    fn heads(store: &mut ParamStore<f64>, k: usize) -> ChainHeads {
        ChainHeads::new(store, "heads", 16, k, &mut seed::rng(1, &[]))
    }

    #[test]
    fn shapes_and_param_count() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 10);
        assert_eq!(h.num_params(), 16 * 3 + 3 + 19 * 2 + 2 + 21 * 10 + 10);
        assert_eq!(store.numel(), h.num_params());
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let r = tape.constant(&[4, 16], vec![0.1; 64]).unwrap();
        let out = h.forward(&mut tape, &p, r).unwrap();
        assert_eq!(tape.shape(out.intent).unwrap(), &[4, 3]);
        assert_eq!(tape.shape(out.attitude).unwrap(), &[4, 2]);
        assert_eq!(tape.shape(out.action).unwrap(), &[4, 10]);
    }

    #[test]
    fn zero_heads_give_uniform_loss() {
        let mut store = ParamStore::new();
        let h = heads(&mut store, 10);
        for id in store.ids().collect::<Vec<_>>() {
            let n = store.get(id).numel();
            store.set_data(id, vec![0.0; n]).unwrap();
        }
        let mut tape = Tape::new();
        let p = store.bind(&mut tape);
        let r = tape.constant(&[2, 16], (0..32).map(|i| i as f64 * 0.1).collect()).unwrap();
        let out = h.forward(&mut tape, &p, r).unwrap();
        assert!(tape.value(out.action).unwrap().iter().all(|&v| v == 0.0));
        let labels = [LabelTriple::from_action(Taxonomy::Jpl, 0).unwrap(), LabelTriple::from_action(Taxonomy::Jpl, 9).unwrap()];
        let loss = classification_loss(&mut tape, &out, &labels).unwrap();
        let expected = (3f64.ln() + 2f64.ln() + 10f64.ln()) / 3.0;
        assert!((tape.value(loss).unwrap()[0] - expected).abs() < 1e-12);
        assert!((expected - 1.365).abs() < 1e-3);
    }

    #[test]
    fn out_of_range_label_is_taxonomy_error() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(&[1, 3], vec![0.0; 3]).unwrap();
        assert!(matches!(cross_entropy(&mut tape, logits, &[3]), Err(Error::Taxonomy(_))));
    }

    #[test]
    fn confident_correct_logits_have_small_loss() {
        let mut tape = Tape::<f64>::new();
        let logits = tape.constant(&[1, 3], vec![50.0, 0.0, 0.0]).unwrap();
        let l = cross_entropy(&mut tape, logits, &[0]).unwrap();
        assert!(tape.value(l).unwrap()[0] < 1e-20);
    }
}
