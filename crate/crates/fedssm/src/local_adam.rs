//! Client-side optimizers. Adam here deliberately skips bias correction
//! and keeps epsilon inside the square root,
//!
//!   m' = β1 m + (1−β1) g
//!   v' = β2 v + (1−β2) g²
//!   w' = w − η m' / √(v' + ε)
//!
//! because the server aggregates raw (w, m, v) deltas and the moment
//! recursions must stay affine in the uploaded quantities.

use crate::datasets::{sample_minibatch, Dataset, Partition};
use crate::model::{clip_gradient, loss_and_grad, Topology};
use crate::numerics::DenseTensor;
use crate::streams::{stream, Purpose};
use crate::{Error, Result};

/// Adam step sizes and decay rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn new(eta: f64, beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        let check = |what: &'static str, ok: bool, why: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidArgument { what, why })
            }
        };
        check("eta", eta.is_finite() && eta > 0.0, format!("got {eta}"))?;
        check("beta1", (0.0..1.0).contains(&beta1), format!("got {beta1}"))?;
        check("beta2", (0.0..1.0).contains(&beta2), format!("got {beta2}"))?;
        check("eps", eps.is_finite() && eps > 0.0, format!("got {eps}"))?;
        Ok(AdamHyper {
            eta,
            beta1,
            beta2,
            eps,
        })
    }
}

/// A point in optimizer state space: weights plus first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentState {
    pub w: DenseTensor,
    pub m: DenseTensor,
    pub v: DenseTensor,
}

impl MomentState {
    /// Fresh state: given weights, zero moments.
    pub fn fresh(w: DenseTensor) -> Self {
        let d = w.len();
        MomentState {
            w,
            m: vec![0.0; d],
            v: vec![0.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn check(&self) -> Result<()> {
        if self.m.len() != self.w.len() || self.v.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                got: self.m.len().max(self.v.len()),
            });
        }
        Ok(())
    }
}

/// One Adam update. Returns the new state, leaving the input untouched.
pub fn adam_step(state: &MomentState, grad: &[f64], hp: &AdamHyper) -> Result<MomentState> {
    state.check()?;
    if grad.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: grad.len(),
        });
    }
    let d = state.dim();
    let mut next = MomentState {
        w: vec![0.0; d],
        m: vec![0.0; d],
        v: vec![0.0; d],
    };
    for (j, &g) in grad.iter().enumerate() {
        let m = hp.beta1 * state.m[j] + (1.0 - hp.beta1) * g;
        let v = hp.beta2 * state.v[j] + (1.0 - hp.beta2) * g * g;
        next.m[j] = m;
        next.v[j] = v;
        next.w[j] = state.w[j] - hp.eta * m / (v + hp.eps).sqrt();
    }
    if next.w.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("adam_step weights"));
    }
    Ok(next)
}

/// Minibatch indices for one local step. The batch size is capped at the
/// client's partition size; indices come back in ascending dataset order.
pub fn step_batch(
    partition: &Partition,
    client: usize,
    batch_size: usize,
    seed: u64,
    round: u64,
    local_step: u64,
) -> Result<Vec<usize>> {
    let capped = batch_size.min(partition.client(client).len());
    // pack (round, step) into the second stream coordinate
    let mut rng = stream(
        seed,
        Purpose::Batch,
        client as u64,
        (round << 32) | local_step,
    );
    sample_minibatch(partition, client, capped, &mut rng)
}

/// `steps` local Adam updates from the broadcast state, one fresh
/// minibatch per step. `clip` is the per-coordinate gradient bound
/// (None = unclipped).
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    start: &MomentState,
    data: &Dataset,
    partition: &Partition,
    client: usize,
    topology: &Topology,
    hp: &AdamHyper,
    steps: usize,
    batch_size: usize,
    clip: Option<f64>,
    seed: u64,
    round: u64,
) -> Result<MomentState> {
    let mut state = start.clone();
    for l in 0..steps {
        let idxs = step_batch(partition, client, batch_size, seed, round, l as u64)?;
        let batch = data.select(&idxs);
        let (_, mut grad) = loss_and_grad(&state.w, topology, &batch)?;
        if let Some(g_bound) = clip {
            grad = clip_gradient(&grad, g_bound)?;
        }
        state = adam_step(&state, &grad, hp)?;
    }
    Ok(state)
}

/// Plain SGD variant of [`local_train`]: w ← w − η g, no moments.
#[allow(clippy::too_many_arguments)]
pub fn sgd_local_train(
    start_w: &[f64],
    data: &Dataset,
    partition: &Partition,
    client: usize,
    topology: &Topology,
    eta: f64,
    steps: usize,
    batch_size: usize,
    clip: Option<f64>,
    seed: u64,
    round: u64,
) -> Result<DenseTensor> {
    let mut w = start_w.to_vec();
    for l in 0..steps {
        let idxs = step_batch(partition, client, batch_size, seed, round, l as u64)?;
        let batch = data.select(&idxs);
        let (_, mut grad) = loss_and_grad(&w, topology, &batch)?;
        if let Some(g_bound) = clip {
            grad = clip_gradient(&grad, g_bound)?;
        }
        for j in 0..w.len() {
            w[j] -= eta * grad[j];
        }
    }
    Ok(w)
}

/// Full-batch Adam trajectory on one dataset: `steps + 1` states with the
/// start state first. The reference path the federated run is measured
/// against.
pub fn centralized_adam_trajectory(
    start: &MomentState,
    data: &Dataset,
    topology: &Topology,
    hp: &AdamHyper,
    steps: usize,
    clip: Option<f64>,
) -> Result<Vec<MomentState>> {
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(start.clone());
    for _ in 0..steps {
        let cur = traj.last().unwrap();
        let (_, mut grad) = loss_and_grad(&cur.w, topology, data)?;
        if let Some(g_bound) = clip {
            grad = clip_gradient(&grad, g_bound)?;
        }
        traj.push(adam_step(cur, &grad, hp)?);
    }
    Ok(traj)
}
