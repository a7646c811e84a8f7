//! Permutation invariant mask loss and the depth-weighted aggregate.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::masks::MaskStack;
use crate::model::Separator;
use crate::tensor::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Assignment of predicted speaker streams to reference speaker streams:
/// prediction stream `i` is compared against reference stream `self.0[i]`.
/// The trailing noise stream is never permuted.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Permutation(pub Vec<usize>);

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation((0..n).collect())
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &j)| i == j)
    }

    /// Full stream order including the fixed noise stream.
    pub fn with_noise(&self) -> Vec<usize> {
        let mut v = self.0.clone();
        v.push(self.0.len());
        v
    }
}

/// All permutations of `0..n` in lexicographic order, identity first.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut cur: Vec<usize> = (0..n).collect();
    let mut out = vec![cur.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

/// Squared-error cost between prediction stream `i` and reference stream `j`
/// for every pair, plus the noise-to-noise cost.
fn pair_costs(pred: &MaskStack, reference: &MaskStack) -> (Vec<Vec<f64>>, f64) {
    let k = pred.speakers();
    let s = pred.streams;
    let mut cost = vec![vec![0.0; k]; k];
    let mut noise = 0.0;
    for (p, r) in pred.data.chunks_exact(s).zip(reference.data.chunks_exact(s)) {
        for i in 0..k {
            for j in 0..k {
                let d = p[i] - r[j];
                cost[i][j] += d * d;
            }
        }
        let d = p[k] - r[k];
        noise += d * d;
    }
    (cost, noise)
}

fn best_assignment(cost: &[Vec<f64>]) -> (Permutation, f64) {
    let mut best = (Permutation::identity(cost.len()), f64::INFINITY);
    for p in permutations(cost.len()) {
        let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        if c < best.1 {
            best = (Permutation(p), c);
        }
    }
    best
}

/// Minimum over speaker permutations of the mean squared error over every
/// `(t, f, stream)` entry, with noise always matched to noise.
pub fn pit_loss(pred: &MaskStack, reference: &MaskStack) -> Result<(f64, Permutation)> {
    if pred.streams != reference.streams {
        return Err(Error::Contract(format!(
            "{} predicted streams vs {} reference streams",
            pred.streams, reference.streams
        )));
    }
    if pred.streams < 2 {
        return Err(Error::Contract("PIT needs at least one speaker stream plus noise".into()));
    }
    pred.check_same_shape(reference, "pit_loss")?;
    let (cost, noise) = pair_costs(pred, reference);
    let (perm, c) = best_assignment(&cost);
    Ok(((c + noise) / pred.data.len() as f64, perm))
}

/// Weight of layer `i` (1-based) among `layers`: `i / Σⱼ j`.
pub fn layer_weight(i: usize, layers: usize) -> f64 {
    i as f64 / (layers * (layers + 1) / 2) as f64
}

/// `Σ i·Lᵢ / Σ i` over 1-based layer indices.
pub fn weighted_loss(per_layer: &[f64]) -> Result<f64> {
    if per_layer.is_empty() {
        return Err(Error::Contract("weighted loss over zero layers".into()));
    }
    let num: f64 = per_layer.iter().enumerate().map(|(i, l)| (i + 1) as f64 * l).sum();
    let den = (per_layer.len() * (per_layer.len() + 1) / 2) as f64;
    Ok(num / den)
}

/// Per-layer PIT losses, their weighted total and each layer's permutation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub per_layer: Vec<f64>,
    pub total: f64,
    pub permutations: Vec<Permutation>,
}

/// Records the training loss of one chunk on `graph`: every layer's
/// estimator is scored by PIT against `target` under its own best
/// permutation, and the layers are combined with weights `i / Σ j`.
/// Gradients flow only through each layer's chosen assignment.
pub fn chunk_loss(graph: &mut Graph<'_>, model: &Separator, features: &Tensor, target: &MaskStack) -> Result<(Var, LossReport)> {
    let x = graph.constant(features.clone());
    let act = model.forward_all(graph, &x)?;
    let layers = act.masks.len();
    let mut terms = Vec::with_capacity(layers);
    let mut per_layer = Vec::with_capacity(layers);
    let mut permutations = Vec::with_capacity(layers);
    for (i, &m) in act.masks.iter().enumerate() {
        let pred = model.to_masks(graph.value(m))?;
        let (_, perm) = pit_loss(&pred, target)?;
        let aligned = target.permute_streams(&perm.with_noise());
        let l = graph.mse_to(m, &aligned.data)?;
        per_layer.push(graph.value(l).item());
        permutations.push(perm);
        terms.push((l, layer_weight(i + 1, layers)));
    }
    let total = graph.lin_comb(&terms)?;
    let report = LossReport {
        total: graph.value(total).item(),
        per_layer,
        permutations,
    };
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn permutations_enumerate_all() {
        assert_eq!(permutations(1), vec![vec![0]]);
        assert_eq!(permutations(2), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(4).len(), 24);
    }

    #[test]
    fn swapped_speakers_cost_nothing() {
        let mut r = MaskStack::zeros(3, 4, 3);
        for (i, v) in r.data.iter_mut().enumerate() {
            *v = (i as f64 * 0.37).sin().abs();
        }
        let p = r.permute_streams(&[1, 0, 2]);
        let (l, perm) = pit_loss(&p, &r).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(perm, Permutation(vec![1, 0]));
    }

    #[test]
    fn stream_count_mismatch_is_an_error() {
        let a = MaskStack::zeros(2, 2, 3);
        let b = MaskStack::zeros(2, 2, 4);
        assert!(matches!(pit_loss(&a, &b), Err(Error::Contract(_))));
    }

    #[test]
    fn weighted_loss_arithmetic() {
        // 0.3 has no exact binary form; the result is the correctly rounded
        // value of the exact quotient of the stored input.
        assert_eq!(weighted_loss(&[0.3, 0.0]).unwrap(), 0.3 / 3.0);
        assert!((weighted_loss(&[0.3, 0.0]).unwrap() - 0.1).abs() <= f64::EPSILON * 0.1);
        assert_eq!(weighted_loss(&[0.75, 0.0, 0.5]).unwrap(), 0.375);
        assert_eq!(weighted_loss(&[0.25; 5]).unwrap(), 0.25);
        assert_eq!(layer_weight(16, 16), 16.0 / 136.0);
        assert!(weighted_loss(&[]).is_err());
    }

    #[test]
    fn weights_increase_and_sum_to_one() {
        for n in 1..=32 {
            let w: Vec<f64> = (1..=n).map(|i| layer_weight(i, n)).collect();
            assert!(w.windows(2).all(|p| p[0] < p[1]));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
