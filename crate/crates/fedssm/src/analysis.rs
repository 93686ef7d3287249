//! Closed-form diagnostics: deviation-bound constants, the coefficient
//! ordering behind the shared-mask design, uplink bit totals, moment
//! bound monitoring, and delta-magnitude summaries.
//!
//! The constants implement the solution of the two-term linear
//! recurrence x_{l+1} = ψ x_l + φ x_{l-1} + χ that the per-step
//! deviation of local Adam from its centralized twin satisfies. Keeping
//! the arithmetic in the exact published order matters: tests pin the
//! resulting values to the last digit.

use crate::federation::AlgorithmKind;
use crate::local_adam::MomentState;
use crate::numerics::DenseTensor;
use crate::sparsification::{best_single_mode, best_wire_mode};
use crate::{Error, Result};

/// Problem parameters the deviation bound depends on.
#[derive(Debug, Clone, Copy)]
pub struct ConstantInputs {
    pub beta1: f64,
    pub beta2: f64,
    /// Gradient bound G (from clipping).
    pub g_bound: f64,
    /// Smoothness constant of the loss gradient.
    pub rho: f64,
    /// Parameter dimension.
    pub d: usize,
    pub eta: f64,
    pub eps: f64,
    /// Local stochastic-gradient noise bound.
    pub sigma_l: f64,
    /// Client-drift (heterogeneity) bound.
    pub sigma_g: f64,
    pub batch: usize,
}

impl ConstantInputs {
    fn validate(&self) -> Result<()> {
        let checks: [(&'static str, bool); 8] = [
            ("beta1", self.beta1 > 0.0 && self.beta1 < 1.0),
            ("beta2", self.beta2 > 0.0 && self.beta2 < 1.0),
            ("g_bound", self.g_bound >= 0.0 && self.g_bound.is_finite()),
            ("rho", self.rho >= 0.0 && self.rho.is_finite()),
            ("d", self.d >= 1),
            ("eta", self.eta > 0.0 && self.eta.is_finite()),
            ("eps", self.eps > 0.0 && self.eps.is_finite()),
            (
                "noise",
                self.sigma_l >= 0.0 && self.sigma_g >= 0.0 && self.batch >= 1,
            ),
        ];
        for (what, ok) in checks {
            if !ok {
                return Err(Error::InvalidArgument {
                    what,
                    why: "outside the admissible range for the deviation bound".into(),
                });
            }
        }
        Ok(())
    }

    /// Combined noise level σ_l/√B + σ_g.
    pub fn sigma(&self) -> f64 {
        self.sigma_l / (self.batch as f64).sqrt() + self.sigma_g
    }
}

/// Coefficients of the deviation bound at local depth l:
///   ‖w_l − w̆_l‖ ≤ γ·‖ΔW‖ + θ·‖ΔM‖ + λ·‖ΔV‖ + additive.
#[derive(Debug, Clone, Copy)]
pub struct BoundConstants {
    pub phi: f64,
    pub psi: f64,
    pub chi: f64,
    /// √(ψ² + 4φ), the root gap of the characteristic polynomial.
    pub discriminant: f64,
    pub root_plus: f64,
    pub root_minus: f64,
    /// Weight-gap coefficient.
    pub gamma: f64,
    /// First-moment-gap coefficient.
    pub theta: f64,
    /// Second-moment-gap coefficient.
    pub lambda: f64,
    /// Noise floor (zero when σ_l = σ_g = 0).
    pub additive: f64,
}

impl BoundConstants {
    /// Evaluate the bound for measured state gaps.
    pub fn bound(&self, w_gap: f64, m_gap: f64, v_gap: f64) -> f64 {
        self.gamma * w_gap + self.theta * m_gap + self.lambda * v_gap + self.additive
    }
}

/// Growth-rate pair (ψ, φ) and additive drive χ, then the closed-form
/// solution of the recurrence after l local steps. Errors when a
/// coefficient overflows: the bound is vacuous at that depth.
pub fn deviation_constants(inp: &ConstantInputs, l: usize) -> Result<BoundConstants> {
    inp.validate()?;
    let (b1, b2) = (inp.beta1, inp.beta2);
    let (g, rho, eta, eps) = (inp.g_bound, inp.rho, inp.eta, inp.eps);
    let d = inp.d as f64;
    let sig = inp.sigma();

    let phi = b1 / b2.sqrt();
    let psi = 1.0
        + b1 / b2.sqrt()
        + (eta * rho * (1.0 - b1) / eps.sqrt()) * (1.0 + (1.0 - b2) * d * g * g / eps);
    let chi = d * g * eta
        * ((2.0 * b1 * (1.0 - b2.sqrt()) / (eps * (eps * b2).sqrt())) * (g * g + eps)
            + ((1.0 - b1) * b2 / (eps * eps.sqrt())) * g * g)
        + ((1.0 - b1) * eta * sig / eps.sqrt()) * (1.0 + (1.0 - b2) * d * g * g / eps);
    let disc = (psi * psi + 4.0 * phi).sqrt();
    let rp = (psi + disc) / 2.0;
    let rm = (psi - disc) / 2.0;
    let lf = l as f64;
    let rp_l = rp.powf(lf);
    let rm_l = rm.powf(lf);
    let s = rp_l - rm_l;
    let c = b1 * (1.0 - b2) * d * g * g * eta * rho / (eps * eps.sqrt());
    let gamma = ((rp - phi + c) * rp_l + (phi - rm - c) * rm_l) / disc;
    let theta = eta * b1 * s / (eps.sqrt() * disc);
    let lambda = d.sqrt() * g * eta * b2 * s / (2.0 * eps * eps.sqrt() * disc);
    let additive = (sig / disc)
        * (eta * (1.0 - b1) / eps.sqrt() + d * g * g * eta * (1.0 - b2) / (eps * eps.sqrt()))
        * s
        + (chi / (1.0 - psi - phi)) * (((1.0 - rp) * rm_l - (1.0 - rm) * rp_l) / disc + 1.0);

    for (value, name) in [
        (gamma, "gamma: overflow, bound vacuous at this depth"),
        (theta, "theta: overflow, bound vacuous at this depth"),
        (lambda, "lambda: overflow, bound vacuous at this depth"),
        (additive, "additive term: overflow, bound vacuous at this depth"),
    ] {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
    }

    Ok(BoundConstants {
        phi,
        psi,
        chi,
        discriminant: disc,
        root_plus: rp,
        root_minus: rm,
        gamma,
        theta,
        lambda,
        additive,
    })
}

/// The two sufficient conditions under which the bound coefficients
/// order as γ > θ > λ, which is what makes the weight delta the right
/// tensor to rank coordinates by.
#[derive(Debug, Clone, Copy)]
pub struct OrderingCheck {
    /// β2 must stay below 1 − 1/(1 + 2Gρ√d).
    pub beta2_threshold: f64,
    pub beta2_ok: bool,
    /// β1 must exceed √d·G·β2/(2ε).
    pub beta1_threshold: f64,
    pub beta1_ok: bool,
    /// Whether γ > θ > λ actually holds at the requested depth.
    pub ordered: bool,
}

pub fn coefficient_ordering(inp: &ConstantInputs, l: usize) -> Result<OrderingCheck> {
    let c = deviation_constants(inp, l)?;
    let d = inp.d as f64;
    let beta2_threshold = 1.0 - 1.0 / (1.0 + 2.0 * inp.g_bound * inp.rho * d.sqrt());
    let beta1_threshold = d.sqrt() * inp.g_bound * inp.beta2 / (2.0 * inp.eps);
    Ok(OrderingCheck {
        beta2_threshold,
        beta2_ok: inp.beta2 < beta2_threshold,
        beta1_threshold,
        beta1_ok: inp.beta1 > beta1_threshold,
        ordered: c.gamma > c.theta && c.theta > c.lambda,
    })
}

/// Outcome of checking every recorded deviation against its closed-form
/// bound.
#[derive(Debug, Clone, Copy)]
pub struct BoundAudit {
    pub points: usize,
    /// Points where the measurement exceeded the bound.
    pub violations: usize,
    /// Points where the coefficients overflowed (bound vacuous there).
    pub vacuous: usize,
    /// Largest measured/bound ratio over non-vacuous points.
    pub max_ratio: f64,
}

/// Checks a probe trace against the deviation bound. Noise levels
/// (σ_l, σ_g) and smoothness ρ come from the trace itself; the bound is
/// evaluated per client with that client's effective batch size.
pub fn deviation_bound_audit(
    trace: &crate::federation::ProbeTrace,
    beta1: f64,
    beta2: f64,
    eta: f64,
    eps: f64,
    d: usize,
    g_bound: f64,
) -> Result<BoundAudit> {
    if trace.points.is_empty() {
        return Err(Error::EmptyInput("probe trace"));
    }
    let mut audit = BoundAudit {
        points: 0,
        violations: 0,
        vacuous: 0,
        max_ratio: 0.0,
    };
    for p in &trace.points {
        let gaps = trace
            .agg_err
            .iter()
            .find(|(t, ..)| *t == p.t)
            .ok_or(Error::EmptyInput("aggregate gaps for probe round"))?;
        let batch = *trace
            .weights
            .get(p.client)
            .ok_or(Error::EmptyInput("client weight in probe trace"))?;
        let inputs = ConstantInputs {
            beta1,
            beta2,
            g_bound,
            rho: trace.rho,
            d,
            eta,
            eps,
            sigma_l: trace.sigma_l,
            sigma_g: trace.sigma_g,
            batch: batch.round() as usize,
        };
        audit.points += 1;
        match deviation_constants(&inputs, p.l) {
            Err(Error::NonFinite(_)) => audit.vacuous += 1,
            Err(e) => return Err(e),
            Ok(c) => {
                let bound = c.bound(gaps.1, gaps.2, gaps.3);
                if p.deviation > bound * (1.0 + 1e-9) {
                    audit.violations += 1;
                }
                if bound > 0.0 {
                    audit.max_ratio = audit.max_ratio.max(p.deviation / bound);
                }
            }
        }
    }
    Ok(audit)
}

/// Total uplink bits one round costs, N clients, with each sparse kind
/// free to pick the cheaper of its two wire forms.
pub fn uplink_round_total(kind: AlgorithmKind, n_clients: u64, d: u64, k: u64, q: u64) -> u64 {
    match kind {
        AlgorithmKind::VanillaFedAdam => 3 * n_clients * d * q,
        AlgorithmKind::FedSgd => n_clients * d * q,
        AlgorithmKind::FedAdamSsm(_) => n_clients * best_wire_mode(d, k, q).1,
        AlgorithmKind::FedAdamTop => 3 * n_clients * best_single_mode(d, k, q).1,
        AlgorithmKind::SparseFedSgd => n_clients * best_single_mode(d, k, q).1,
    }
}

/// Moment-bound audit over per-round aggregated states. With gradients
/// clipped to G, after s = L(t+1) local steps every coordinate must obey
/// |m| ≤ G(1 − β1^s) and 0 ≤ v ≤ G²(1 − β2^s); sparsification and
/// weighted averaging both preserve these envelopes.
#[derive(Debug, Clone, Copy)]
pub struct MomentBoundReport {
    pub rounds_checked: usize,
    pub violations: usize,
    /// Worst |m| − bound_m over all rounds and coordinates (≤ 0 is good).
    pub worst_m_slack: f64,
    pub worst_v_slack: f64,
}

pub fn moment_bounds_check(
    states: &[MomentState],
    beta1: f64,
    beta2: f64,
    g_bound: Option<f64>,
    local_steps: usize,
) -> Result<MomentBoundReport> {
    let g = g_bound.ok_or(Error::InvalidArgument {
        what: "g_bound",
        why: "moment bounds assume clipped gradients; run with clipping enabled".into(),
    })?;
    if !(g > 0.0) || local_steps == 0 {
        return Err(Error::InvalidArgument {
            what: "g_bound",
            why: "need a positive bound and at least one local step".into(),
        });
    }
    const TOL: f64 = 1e-12;
    let mut report = MomentBoundReport {
        rounds_checked: states.len(),
        violations: 0,
        worst_m_slack: f64::NEG_INFINITY,
        worst_v_slack: f64::NEG_INFINITY,
    };
    for (t, state) in states.iter().enumerate() {
        let s = (local_steps * (t + 1)) as f64;
        let bound_m = g * (1.0 - beta1.powf(s));
        let bound_v = g * g * (1.0 - beta2.powf(s));
        for j in 0..state.m.len() {
            let m_slack = state.m[j].abs() - bound_m;
            let v_slack = state.v[j].max(-state.v[j]) - bound_v;
            report.worst_m_slack = report.worst_m_slack.max(m_slack);
            report.worst_v_slack = report.worst_v_slack.max(state.v[j] - bound_v);
            if m_slack > TOL || v_slack > TOL || state.v[j] < -TOL {
                report.violations += 1;
            }
        }
    }
    Ok(report)
}

/// log10-magnitude summary of delta triples pooled over clients. Exact
/// zeros are excluded (a masked coordinate has no magnitude).
#[derive(Debug, Clone)]
pub struct MagnitudeSummary {
    /// bins+1 edges in log10 space, spanning all three tensors.
    pub edges: Vec<f64>,
    pub count_w: Vec<u64>,
    pub count_m: Vec<u64>,
    pub count_v: Vec<u64>,
    /// Median log10|x| over nonzero entries (None if all zero).
    pub median_w: Option<f64>,
    pub median_m: Option<f64>,
    pub median_v: Option<f64>,
}

fn median(sorted: &[f64]) -> Option<f64> {
    match sorted.len() {
        0 => None,
        n if n % 2 == 1 => Some(sorted[n / 2]),
        n => Some((sorted[n / 2 - 1] + sorted[n / 2]) / 2.0),
    }
}

pub fn magnitude_summary(
    deltas: &[(DenseTensor, DenseTensor, DenseTensor)],
    bins: usize,
) -> Result<MagnitudeSummary> {
    if deltas.is_empty() || bins == 0 {
        return Err(Error::EmptyInput("magnitude summary input"));
    }
    let collect = |pick: fn(&(DenseTensor, DenseTensor, DenseTensor)) -> &DenseTensor| {
        let mut logs: Vec<f64> = deltas
            .iter()
            .flat_map(|d| pick(d).iter())
            .filter(|x| **x != 0.0)
            .map(|x| x.abs().log10())
            .collect();
        logs.sort_by(f64::total_cmp);
        logs
    };
    let w = collect(|d| &d.0);
    let m = collect(|d| &d.1);
    let v = collect(|d| &d.2);

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for series in [&w, &m, &v] {
        if let (Some(first), Some(last)) = (series.first(), series.last()) {
            lo = lo.min(*first);
            hi = hi.max(*last);
        }
    }
    if !lo.is_finite() {
        return Err(Error::EmptyInput("all delta entries are zero"));
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let histogram = |series: &[f64]| {
        let mut counts = vec![0u64; bins];
        for &x in series {
            let mut bin = ((x - lo) / width) as usize;
            if bin >= bins {
                bin = bins - 1;
            }
            counts[bin] += 1;
        }
        counts
    };

    Ok(MagnitudeSummary {
        count_w: histogram(&w),
        count_m: histogram(&m),
        count_v: histogram(&v),
        median_w: median(&w),
        median_m: median(&m),
        median_v: median(&v),
        edges,
    })
}
