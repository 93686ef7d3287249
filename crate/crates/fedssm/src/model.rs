//! Multilayer perceptron with softmax cross-entropy loss and manual
//! backpropagation. Parameters live in one flat vector so optimizers and
//! sparsifiers can treat the model as an opaque point in R^d.
//!
//! Layout per layer: the in×out weight block (row-major over inputs),
//! then the out biases. Hidden activations are ReLU, the output layer is
//! identity into softmax.

use rand::Rng;

use crate::datasets::Dataset;
use crate::numerics::DenseTensor;
use crate::streams::{stream, Purpose};
use crate::{Error, Result};

/// Layer widths [d_in, h_1, ..., C].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub widths: Vec<usize>,
}

impl Topology {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::InvalidArgument {
                what: "topology",
                why: format!("need ≥ 2 layers, got {widths:?}"),
            });
        }
        if widths.contains(&0) {
            return Err(Error::InvalidArgument {
                what: "topology",
                why: format!("zero-width layer in {widths:?}"),
            });
        }
        Ok(Topology { widths })
    }

    pub fn d_in(&self) -> usize {
        self.widths[0]
    }

    pub fn classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Total parameter count d = Σ (in·out + out).
    pub fn param_count(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.widths.windows(2).map(|w| (w[0], w[1]))
    }

    fn widest(&self) -> usize {
        *self.widths.iter().max().unwrap()
    }
}

/// Weights uniform in [−1/√fan_in, +1/√fan_in], biases zero.
pub fn init_params(topology: &Topology, seed: u64) -> DenseTensor {
    let mut rng = stream(seed, Purpose::Init, 0, 0);
    let mut params = Vec::with_capacity(topology.param_count());
    for (fan_in, fan_out) in topology.layers() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            params.push(rng.random_range(-bound..bound));
        }
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    params
}

fn check_params(params: &[f64], topology: &Topology) -> Result<()> {
    let d = topology.param_count();
    if params.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: params.len(),
        });
    }
    Ok(())
}

/// Forward pass for one sample; returns logits. `scratch` must hold two
/// rows of the widest layer.
fn forward(params: &[f64], topology: &Topology, x: &[f64], scratch: &mut [f64]) -> Vec<f64> {
    let widest = topology.widest();
    let (cur_buf, next_buf) = scratch.split_at_mut(widest);
    cur_buf[..x.len()].copy_from_slice(x);
    let mut cur_len = x.len();
    let mut offset = 0;
    let n_layers = topology.widths.len() - 1;
    for (li, (fan_in, fan_out)) in topology.layers().enumerate() {
        let weights = &params[offset..offset + fan_in * fan_out];
        let biases = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        for j in 0..fan_out {
            let mut z = biases[j];
            for i in 0..fan_in {
                z += cur_buf[i] * weights[i * fan_out + j];
            }
            next_buf[j] = if li + 1 < n_layers { z.max(0.0) } else { z };
        }
        cur_buf[..fan_out].copy_from_slice(&next_buf[..fan_out]);
        cur_len = fan_out;
        offset += fan_in * fan_out + fan_out;
    }
    cur_buf[..cur_len].to_vec()
}

/// Softmax probabilities with max subtraction for stability.
fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Mean softmax cross-entropy over the batch and its analytic gradient.
pub fn loss_and_grad(
    params: &[f64],
    topology: &Topology,
    batch: &Dataset,
) -> Result<(f64, DenseTensor)> {
    check_params(params, topology)?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("loss_and_grad batch"));
    }
    if batch.d_in != topology.d_in() {
        return Err(Error::DimensionMismatch {
            expected: topology.d_in(),
            got: batch.d_in,
        });
    }
    let n_layers = topology.widths.len() - 1;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    // per-layer activations kept for the backward pass
    let mut acts: Vec<Vec<f64>> = topology.widths.iter().map(|&w| vec![0.0; w]).collect();
    let mut delta = vec![0.0; topology.widest()];
    let mut delta_prev = vec![0.0; topology.widest()];
    // layer parameter offsets
    let mut offsets = Vec::with_capacity(n_layers);
    {
        let mut off = 0;
        for (fan_in, fan_out) in topology.layers() {
            offsets.push(off);
            off += fan_in * fan_out + fan_out;
        }
    }
    for s in 0..batch.len() {
        acts[0].copy_from_slice(batch.row(s));
        for (li, (fan_in, fan_out)) in topology.layers().enumerate() {
            let off = offsets[li];
            let weights = &params[off..off + fan_in * fan_out];
            let biases = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let (before, after) = acts.split_at_mut(li + 1);
            let input = &before[li];
            let out = &mut after[0];
            for j in 0..fan_out {
                let mut z = biases[j];
                for i in 0..fan_in {
                    z += input[i] * weights[i * fan_out + j];
                }
                out[j] = if li + 1 < n_layers { z.max(0.0) } else { z };
            }
        }
        let logits = &acts[n_layers];
        let probs = softmax(logits);
        let y = batch.labels[s];
        if y >= topology.classes() {
            return Err(Error::InvalidArgument {
                what: "labels",
                why: format!("label {y} out of range for {} classes", topology.classes()),
            });
        }
        loss += -(probs[y].max(f64::MIN_POSITIVE)).ln();
        // output-layer error, then walk layers backwards
        delta[..probs.len()].copy_from_slice(&probs);
        delta[y] -= 1.0;
        for li in (0..n_layers).rev() {
            let (fan_in, fan_out) = (topology.widths[li], topology.widths[li + 1]);
            let off = offsets[li];
            let input = &acts[li];
            {
                let gw = &mut grad[off..off + fan_in * fan_out];
                for i in 0..fan_in {
                    let ai = input[i];
                    for j in 0..fan_out {
                        gw[i * fan_out + j] += ai * delta[j];
                    }
                }
            }
            {
                let gb = &mut grad[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
                for j in 0..fan_out {
                    gb[j] += delta[j];
                }
            }
            if li > 0 {
                let weights = &params[off..off + fan_in * fan_out];
                for i in 0..fan_in {
                    let mut acc = 0.0;
                    for j in 0..fan_out {
                        acc += weights[i * fan_out + j] * delta[j];
                    }
                    // ReLU subgradient, 0 at 0
                    delta_prev[i] = if input[i] > 0.0 { acc } else { 0.0 };
                }
                delta[..fan_in].copy_from_slice(&delta_prev[..fan_in]);
            }
        }
    }
    let inv = 1.0 / batch.len() as f64;
    loss *= inv;
    for g in &mut grad {
        *g *= inv;
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss_and_grad output"));
    }
    Ok((loss, grad))
}

/// Max absolute gap between the analytic gradient and central finite
/// differences with step h, over every parameter. Verification helper.
pub fn finite_difference_gap(
    params: &[f64],
    topology: &Topology,
    dataset: &Dataset,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument {
            what: "h",
            why: format!("must be > 0, got {h}"),
        });
    }
    let (_, grad) = loss_and_grad(params, topology, dataset)?;
    let mut shifted = params.to_vec();
    let mut max_err: f64 = 0.0;
    for p in 0..params.len() {
        let orig = shifted[p];
        shifted[p] = orig + h;
        let (lp, _) = loss_and_grad(&shifted, topology, dataset)?;
        shifted[p] = orig - h;
        let (lm, _) = loss_and_grad(&shifted, topology, dataset)?;
        shifted[p] = orig;
        max_err = max_err.max((grad[p] - (lp - lm) / (2.0 * h)).abs());
    }
    Ok(max_err)
}

/// Per-coordinate clamp to [−G, +G]. G = ∞ disables clipping.
pub fn clip_gradient(grad: &[f64], g_bound: f64) -> Result<DenseTensor> {
    if !(g_bound > 0.0) {
        return Err(Error::InvalidArgument {
            what: "G",
            why: format!("must be > 0, got {g_bound}"),
        });
    }
    Ok(grad.iter().map(|&g| g.clamp(-g_bound, g_bound)).collect())
}

/// Mean loss and argmax accuracy over a dataset. Ties go to the lower
/// class index.
pub fn evaluate(params: &[f64], topology: &Topology, dataset: &Dataset) -> Result<(f64, f64)> {
    check_params(params, topology)?;
    if dataset.is_empty() {
        return Err(Error::EmptyInput("evaluate dataset"));
    }
    let mut scratch = vec![0.0; 2 * topology.widest()];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for s in 0..dataset.len() {
        let logits = forward(params, topology, dataset.row(s), &mut scratch);
        let probs = softmax(&logits);
        let y = dataset.labels[s];
        loss += -(probs[y].max(f64::MIN_POSITIVE)).ln();
        let mut best = 0;
        for (j, &z) in logits.iter().enumerate() {
            if z > logits[best] {
                best = j;
            }
        }
        correct += usize::from(best == y);
    }
    Ok((
        loss / dataset.len() as f64,
        correct as f64 / dataset.len() as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::generate_synthetic;
    use crate::numerics::assert_close;

    fn toy_batch(n: usize, d_in: usize, classes: usize, seed: u64) -> Dataset {
        generate_synthetic(n, d_in, classes, 2.0, seed).unwrap()
    }

    #[test]
    fn param_count_and_init() {
        let topo = Topology::new(vec![2, 3, 2]).unwrap();
        assert_eq!(topo.param_count(), 17);
        let a = init_params(&topo, 42);
        assert_eq!(a.len(), 17);
        assert_eq!(a, init_params(&topo, 42));
        assert_ne!(a, init_params(&topo, 43));
        // bias slots: after the 6 layer-0 weights come 3 zero biases,
        // after 6 layer-1 weights come 2 more
        assert_eq!(&a[6..9], &[0.0; 3]);
        assert_eq!(&a[15..17], &[0.0; 2]);
        let bound = 1.0 / (2f64).sqrt();
        assert!(a[..6].iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn topology_guards() {
        assert!(Topology::new(vec![4]).is_err());
        assert!(Topology::new(vec![4, 0, 2]).is_err());
    }

    #[test]
    fn uniform_logits_loss_is_ln_c() {
        for classes in [2usize, 5] {
            let topo = Topology::new(vec![3, classes]).unwrap();
            let params = vec![0.0; topo.param_count()];
            let batch = toy_batch(classes, 3, classes, 1);
            let (loss, _) = loss_and_grad(&params, &topo, &batch).unwrap();
            assert_close(loss, (classes as f64).ln(), 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let topo = Topology::new(vec![2, 4, 2]).unwrap();
        let params = init_params(&topo, 5);
        let batch = toy_batch(8, 2, 2, 6);
        let max_err = finite_difference_gap(&params, &topo, &batch, 1e-5).unwrap();
        assert!(max_err < 1e-6, "max finite-difference error {max_err}");
        assert!(finite_difference_gap(&params, &topo, &batch, 0.0).is_err());
    }

    #[test]
    fn batch_mean_invariances() {
        let topo = Topology::new(vec![2, 3, 2]).unwrap();
        let params = init_params(&topo, 7);
        let batch = toy_batch(6, 2, 2, 8);
        let (loss, grad) = loss_and_grad(&params, &topo, &batch).unwrap();
        // duplicating every sample leaves the mean unchanged
        let idxs: Vec<usize> = (0..6).chain(0..6).collect();
        let doubled = batch.select(&idxs);
        let (l2, g2) = loss_and_grad(&params, &topo, &doubled).unwrap();
        assert_close(l2, loss, 1e-12);
        for (a, b) in grad.iter().zip(&g2) {
            assert_close(*a, *b, 1e-12);
        }
        // permutation leaves it unchanged too
        let perm: Vec<usize> = vec![5, 2, 0, 4, 1, 3];
        let shuffled = batch.select(&perm);
        let (l3, g3) = loss_and_grad(&params, &topo, &shuffled).unwrap();
        assert_close(l3, loss, 1e-12);
        for (a, b) in grad.iter().zip(&g3) {
            assert_close(*a, *b, 1e-12);
        }
    }

    #[test]
    fn clip_basics() {
        assert_eq!(clip_gradient(&[0.5, -2.0], 1.0).unwrap(), vec![0.5, -1.0]);
        let g = vec![3.0, -7.5, 0.25];
        assert_eq!(clip_gradient(&g, f64::INFINITY).unwrap(), g);
        assert!(clip_gradient(&g, 0.0).is_err());
        let batch = toy_batch(32, 2, 2, 9);
        let topo = Topology::new(vec![2, 4, 2]).unwrap();
        let (_, grad) = loss_and_grad(&init_params(&topo, 1), &topo, &batch).unwrap();
        let clipped = clip_gradient(&grad, 0.01).unwrap();
        assert!(clipped.iter().all(|g| g.abs() <= 0.01));
    }

    #[test]
    fn evaluate_consistency_and_ties() {
        let topo = Topology::new(vec![2, 3, 2]).unwrap();
        let params = init_params(&topo, 11);
        let ds = toy_batch(50, 2, 2, 12);
        let (eval_loss, acc) = evaluate(&params, &topo, &ds).unwrap();
        let (lg_loss, _) = loss_and_grad(&params, &topo, &ds).unwrap();
        assert_close(eval_loss, lg_loss, 1e-12);
        assert!((0.0..=1.0).contains(&acc));
        // all-zero params → tied logits → always predicts class 0
        let zeros = vec![0.0; topo.param_count()];
        let (_, acc0) = evaluate(&zeros, &topo, &ds).unwrap();
        let frac0 =
            ds.labels.iter().filter(|&&y| y == 0).count() as f64 / ds.len() as f64;
        assert_close(acc0, frac0, 1e-12);
        // a single correctly classified sample
        let one = ds.select(&[0]);
        let (_, acc1) = evaluate(&zeros, &topo, &one).unwrap();
        assert_eq!(acc1, if one.labels[0] == 0 { 1.0 } else { 0.0 });
    }

    #[test]
    fn fresh_init_accuracy_near_chance_on_average() {
        // any single random init can cut the two blobs well or badly, but
        // the sign symmetry of the init makes the mean over seeds ≈ 1/2
        let topo = Topology::new(vec![2, 4, 2]).unwrap();
        let ds = toy_batch(400, 2, 2, 20);
        let mut total = 0.0;
        for seed in 0..50 {
            let (_, acc) = evaluate(&init_params(&topo, seed), &topo, &ds).unwrap();
            total += acc;
        }
        let mean = total / 50.0;
        assert!((0.35..=0.65).contains(&mean), "mean accuracy {mean}");
    }
}
