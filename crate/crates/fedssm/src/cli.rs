//! Command-line surface: `run` one experiment, `sweep` a grid, `verify`
//! the property suite, `analyze` an existing run directory. Every output
//! file is byte-deterministic for a given config and seed.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    coefficient_ordering, deviation_bound_audit, magnitude_summary, moment_bounds_check,
    ConstantInputs, MagnitudeSummary,
};
use crate::config::{RunConfig, SweepSpec, HISTOGRAM_ROUND};
use crate::datasets::generate_synthetic;
use crate::federation::{run_experiment, AlgorithmKind, RoundMetrics, RunOutput};
use crate::model::{finite_difference_gap, init_params, Topology};
use crate::numerics::DenseTensor;
use crate::sparsification::{all_masks, apply_mask, topk_mask, SparseMask};
use crate::streams::{stream, Purpose};
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "fedssm",
    version,
    about = "Deterministic federated Adam simulator with shared-sparse-mask compression"
)]
pub struct Cli {
    /// Thread count for client training and sweep points (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Execute one experiment and write metrics, manifest, and model.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: config `out_dir`, else run-<hash>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace the config's master seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Execute every grid point of a sweep spec and write a summary.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run the property suite; one line per property, nonzero exit on failure.
    Verify {
        /// Optional run config supplying the clipped run for the moment
        /// and deviation probes.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Post-hoc diagnostics on an existing run directory.
    Analyze {
        /// A directory previously written by `run`.
        #[arg(long)]
        out: PathBuf,
    },
}

/// Entry point. Returns the process exit code.
pub fn execute(cli: Cli) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument {
            what: "workers",
            why: e.to_string(),
        })?;
    pool.install(|| match cli.command {
        Command::Run {
            config,
            out,
            seed_override,
        } => run_command(&config, out.as_deref(), seed_override),
        Command::Sweep {
            config,
            out,
            seed_override,
        } => sweep_command(&config, out.as_deref(), seed_override),
        Command::Verify { config } => verify_command(config.as_deref()),
        Command::Analyze { out } => analyze_command(&out),
    })
}

// ------------------------------------------------------------------ outputs

/// CSV with one row per round; floats print in shortest round-trip form,
/// absent values as empty cells.
pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut out = String::from(
        "t,algorithm,train_loss,test_loss,test_acc,uplink_bits_round,uplink_bits_cum,\
         downlink_bits_round,wire_mode,v_clamped,dev_w,dev_m,dev_v\n",
    );
    let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.t,
            r.algorithm,
            r.train_loss,
            opt(r.test_loss),
            opt(r.test_acc),
            r.uplink_bits_round,
            r.uplink_bits_cum,
            r.downlink_bits_round,
            r.wire_mode,
            r.v_clamped,
            opt(r.dev_w),
            opt(r.dev_m),
            opt(r.dev_v),
        ));
    }
    out
}

pub fn metrics_jsonl(rows: &[RoundMetrics]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Config {
            field: "metrics".into(),
            why: e.to_string(),
        })?);
        out.push('\n');
    }
    Ok(out)
}

/// Weight vector serialization: length as 8-byte little-endian count,
/// then one 64-bit little-endian real per coordinate.
pub fn model_bytes(w: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * w.len());
    out.extend_from_slice(&(w.len() as u64).to_le_bytes());
    for x in w {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<DenseTensor> {
    if bytes.len() < 8 {
        return Err(Error::Decode("model file shorter than its header".into()));
    }
    let d = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 8 * d {
        return Err(Error::Decode(format!(
            "model file length {} does not match d = {d}",
            bytes.len()
        )));
    }
    Ok((0..d)
        .map(|i| f64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()))
        .collect())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub algorithm: String,
    pub seed: u64,
    pub d: usize,
    pub k: usize,
    pub rounds: usize,
    /// SHA-256 of `config_toml`.
    pub config_sha256: String,
    /// The fully resolved config this run used.
    pub config_toml: String,
}

pub fn sha256_hex(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    hex::encode(hasher.finalize())
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(dir.join(name))?;
    f.write_all(bytes)?;
    Ok(())
}

fn histogram_csv(s: &MagnitudeSummary) -> String {
    let mut out = String::from("bin_left,bin_right,count_W,count_M,count_V\n");
    for i in 0..s.count_w.len() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.edges[i],
            s.edges[i + 1],
            s.count_w[i],
            s.count_m[i],
            s.count_v[i]
        ));
    }
    out
}

/// Everything `run` leaves on disk for one experiment.
fn write_run_outputs(dir: &Path, config: &RunConfig, output: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let config_toml = config.to_toml()?;
    let d = Topology::new(config.topology.clone())?.param_count();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        algorithm: config.algorithm.clone(),
        seed: config.seed,
        d,
        k: resolve_k(config, d),
        rounds: output.metrics.len(),
        config_sha256: sha256_hex(&config_toml),
        config_toml,
    };
    write_file(dir, "metrics.csv", metrics_csv(&output.metrics).as_bytes())?;
    write_file(dir, "metrics.jsonl", metrics_jsonl(&output.metrics)?.as_bytes())?;
    write_file(
        dir,
        "manifest.json",
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| Error::Config {
                field: "manifest".into(),
                why: e.to_string(),
            })?
            .as_bytes(),
    )?;
    write_file(dir, "model.bin", &model_bytes(&output.state.w))?;

    if let Some(trace) = &output.probe {
        let agg_err: Vec<serde_json::Value> = trace
            .agg_err
            .iter()
            .map(|(t, w, m, v)| serde_json::json!({"t": t, "dev_w": w, "dev_m": m, "dev_v": v}))
            .collect();
        let max_dev = trace
            .points
            .iter()
            .map(|p| p.deviation)
            .fold(0.0f64, f64::max);
        let probe = serde_json::json!({
            "sigma_l": trace.sigma_l,
            "sigma_g": trace.sigma_g,
            "rho": trace.rho,
            "weights": trace.weights,
            "grad_norm": trace.grad_norm,
            "agg_err": agg_err,
            "points": trace.points.len(),
            "max_deviation": max_dev,
        });
        write_file(dir, "probe.json", probe.to_string().as_bytes())?;
    }
    if let Some(deltas) = &output.captured_deltas {
        let summary = magnitude_summary(deltas, 16)?;
        write_file(dir, "histogram.csv", histogram_csv(&summary).as_bytes())?;
    }
    Ok(())
}

fn resolve_k(config: &RunConfig, d: usize) -> usize {
    match (config.k, config.alpha) {
        (Some(k), _) => k,
        (None, Some(alpha)) => crate::sparsification::k_from_alpha(alpha, d).unwrap_or(0),
        (None, None) => crate::sparsification::k_from_alpha(0.05, d).unwrap_or(0),
    }
}

fn report_problems(problems: &[(String, String)]) -> i32 {
    for (field, why) in problems {
        eprintln!("config error: {field}: {why}");
    }
    2
}

// --------------------------------------------------------------------- run

fn run_command(
    config_path: &Path,
    out: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<i32> {
    let mut config = RunConfig::from_file(config_path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    let problems = config.problems();
    if !problems.is_empty() {
        return Ok(report_problems(&problems));
    }
    let setup = config.resolve()?;
    let output = run_experiment(&setup)?;
    let dir = match (out, &config.out_dir) {
        (Some(path), _) => path.to_path_buf(),
        (None, Some(dir)) => PathBuf::from(dir),
        (None, None) => {
            let hash = sha256_hex(&config.to_toml()?);
            PathBuf::from(format!("run-{}", &hash[..8]))
        }
    };
    write_run_outputs(&dir, &config, &output)?;
    let last = output.metrics.last();
    println!(
        "wrote {}: {} rounds, final train loss {}, cumulative uplink bits {}",
        dir.display(),
        output.metrics.len(),
        last.map(|r| r.train_loss.to_string()).unwrap_or_else(|| "-".into()),
        last.map(|r| r.uplink_bits_cum).unwrap_or(0),
    );
    Ok(0)
}

// ------------------------------------------------------------------- sweep

struct PointSummary {
    label: String,
    algorithm: String,
    final_acc: Option<f64>,
    rounds_to_target: Option<usize>,
    bits_to_target: Option<u64>,
    total_bits: u64,
    error: Option<String>,
}

fn run_point(
    dir: &Path,
    label: &str,
    config: &RunConfig,
    target_acc: f64,
) -> std::result::Result<PointSummary, String> {
    let problems = config.problems();
    if !problems.is_empty() {
        let msg: Vec<String> = problems
            .iter()
            .map(|(f, w)| format!("{f}: {w}"))
            .collect();
        return Err(msg.join("; "));
    }
    let setup = config.resolve().map_err(|e| e.to_string())?;
    let output = run_experiment(&setup).map_err(|e| e.to_string())?;
    write_run_outputs(&dir.join(label), config, &output).map_err(|e| e.to_string())?;

    let reached = output
        .metrics
        .iter()
        .find(|r| r.test_acc.is_some_and(|a| a >= target_acc));
    let final_acc = match output.metrics.iter().rev().find_map(|r| r.test_acc) {
        Some(acc) => Some(acc),
        None => crate::model::evaluate(&output.state.w, &setup.topology, &setup.train)
            .ok()
            .map(|(_, acc)| acc),
    };
    Ok(PointSummary {
        label: label.to_string(),
        algorithm: config.algorithm.clone(),
        final_acc,
        rounds_to_target: reached.map(|r| r.t + 1),
        bits_to_target: reached.map(|r| r.uplink_bits_cum),
        total_bits: output.metrics.last().map(|r| r.uplink_bits_cum).unwrap_or(0),
        error: None,
    })
}

/// Summary table: one row per grid point; unreached targets print the
/// literal "inf".
fn summary_csv(rows: &[PointSummary]) -> String {
    let mut out =
        String::from("label,algorithm,final_acc,rounds_to_target,bits_to_target,total_uplink_bits,status\n");
    let inf = |x: Option<String>| x.unwrap_or_else(|| "inf".into());
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.label,
            r.algorithm,
            r.final_acc.map(|a| a.to_string()).unwrap_or_default(),
            inf(r.rounds_to_target.map(|t| t.to_string())),
            inf(r.bits_to_target.map(|b| b.to_string())),
            r.total_bits,
            r.error
                .as_ref()
                .map(|e| format!("error: {e}"))
                .unwrap_or_else(|| "ok".into()),
        ));
    }
    out
}

fn sweep_command(
    config_path: &Path,
    out: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<i32> {
    let mut spec = SweepSpec::from_file(config_path)?;
    if let Some(seed) = seed_override {
        spec.base.seed = seed;
    }
    let points = spec.grid()?;
    let dir = match (out, &spec.base.out_dir) {
        (Some(path), _) => path.to_path_buf(),
        (None, Some(d)) => PathBuf::from(d),
        (None, None) => {
            let hash = sha256_hex(&spec.base.to_toml()?);
            PathBuf::from(format!("sweep-{}", &hash[..8]))
        }
    };
    std::fs::create_dir_all(&dir)?;

    let target = spec.axes.target_acc;
    let summaries: Vec<PointSummary> = points
        .par_iter()
        .map(|point| {
            run_point(&dir, &point.label, &point.config, target).unwrap_or_else(|msg| {
                PointSummary {
                    label: point.label.clone(),
                    algorithm: point.config.algorithm.clone(),
                    final_acc: None,
                    rounds_to_target: None,
                    bits_to_target: None,
                    total_bits: 0,
                    error: Some(msg),
                }
            })
        })
        .collect();

    write_file(&dir, "summary.csv", summary_csv(&summaries).as_bytes())?;
    let failed = summaries.iter().filter(|s| s.error.is_some()).count();
    println!(
        "wrote {}: {} points, {} failed",
        dir.display(),
        summaries.len(),
        failed
    );
    for s in summaries.iter().filter(|s| s.error.is_some()) {
        eprintln!("point {} failed: {}", s.label, s.error.as_ref().unwrap());
    }
    Ok(if failed == 0 { 0 } else { 1 })
}

// ----------------------------------------------------------------- analyze

fn analyze_command(run_dir: &Path) -> Result<i32> {
    let manifest_text = std::fs::read_to_string(run_dir.join("manifest.json"))?;
    let manifest: Manifest =
        serde_json::from_str(&manifest_text).map_err(|e| Error::Decode(e.to_string()))?;
    if sha256_hex(&manifest.config_toml) != manifest.config_sha256 {
        return Err(Error::Decode(
            "manifest config hash does not match its embedded config".into(),
        ));
    }
    let config = RunConfig::parse(&manifest.config_toml)?;
    let mut setup = config.resolve()?;
    // deterministic re-run with the capture hooks the diagnostics need
    setup.track_states = config.clip.is_some();
    if setup.rounds > 0 {
        setup.capture_deltas_at = Some(HISTOGRAM_ROUND.min(setup.rounds) - 1);
    }
    let output = run_experiment(&setup)?;

    let mut diagnostics = serde_json::Map::new();
    if let Some(deltas) = &output.captured_deltas {
        let s = magnitude_summary(deltas, 16)?;
        write_file(run_dir, "histogram.csv", histogram_csv(&s).as_bytes())?;
        diagnostics.insert(
            "delta_magnitudes".into(),
            serde_json::json!({
                "round": setup.capture_deltas_at.unwrap() + 1,
                "median_log10_w": s.median_w,
                "median_log10_m": s.median_m,
                "median_log10_v": s.median_v,
            }),
        );
    }
    let moments = match (&output.states, config.clip) {
        (Some(states), Some(g)) => {
            let report =
                moment_bounds_check(states, config.beta1, config.beta2, Some(g), setup.local_steps)?;
            serde_json::json!({
                "status": if report.violations == 0 { "ok" } else { "violated" },
                "rounds_checked": report.rounds_checked,
                "violations": report.violations,
                "worst_m_slack": report.worst_m_slack,
                "worst_v_slack": report.worst_v_slack,
            })
        }
        _ => serde_json::json!({"status": "premise unmet: clipping disabled"}),
    };
    diagnostics.insert("moment_bounds".into(), moments);

    let run_id = run_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| manifest.config_sha256[..8].to_string());
    let report = serde_json::json!({
        "run_id": run_id,
        "config_sha256": manifest.config_sha256,
        "diagnostics": serde_json::Value::Object(diagnostics),
    });
    write_file(
        run_dir,
        "analysis.json",
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::Decode(e.to_string()))?
            .as_bytes(),
    )?;
    println!("analysis written to {}", run_dir.join("analysis.json").display());
    Ok(0)
}

// ------------------------------------------------------------------ verify

enum Status {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn property_gradient() -> Status {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let topo = Topology::new(vec![2, 4, 2]).unwrap();
        let params = init_params(&topo, seed);
        let batch = match generate_synthetic(8, 2, 2, 3.0, seed) {
            Ok(b) => b,
            Err(e) => return Status::Fail(e.to_string()),
        };
        match finite_difference_gap(&params, &topo, &batch, 1e-5) {
            Ok(gap) => worst = worst.max(gap),
            Err(e) => return Status::Fail(e.to_string()),
        }
    }
    if worst < 1e-6 {
        Status::Pass(format!("max gap {worst:.2e} over 5 nets"))
    } else {
        Status::Fail(format!("max finite-difference gap {worst:.2e}"))
    }
}

fn property_contraction() -> Status {
    let mut rng = stream(13, Purpose::RandMask, 100, 0);
    for trial in 0..200 {
        let d = 3 + (trial % 30);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let norm2: f64 = x.iter().map(|v| v * v).sum();
        for k in 1..=d {
            let kept = apply_mask(&x, &topk_mask(&x, k).unwrap()).unwrap();
            let residual2: f64 = x
                .iter()
                .zip(&kept)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let factor = 1.0 - k as f64 / d as f64;
            if residual2 > factor * norm2 * (1.0 + 1e-12) + 1e-300 {
                return Status::Fail(format!("d={d} k={k}: {residual2} > {factor} · {norm2}"));
            }
        }
    }
    Status::Pass("residual² ≤ (1 − k/d)·norm² on 200 tensors, every k".into())
}

fn property_mask_optimality() -> Status {
    let mut rng = stream(14, Purpose::RandMask, 101, 0);
    let d = 8;
    let residual = |x: &[f64], m: &SparseMask| -> f64 {
        x.iter()
            .enumerate()
            .filter(|(j, _)| !m.is_set(*j))
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    };
    for _ in 0..10 {
        let dw: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dm: Vec<f64> = (0..d).map(|_| rng.random_range(-0.1..0.1)).collect();
        let dv: Vec<f64> = (0..d).map(|_| rng.random_range(-0.01..0.01)).collect();
        let weights = (
            rng.random_range(0.1..5.0),
            rng.random_range(0.1..5.0),
            rng.random_range(0.1..5.0),
        );
        for k in 1..d {
            let masks = all_masks(d, k).unwrap();
            let rw: Vec<f64> = masks.iter().map(|m| residual(&dw, m)).collect();
            let rm: Vec<f64> = masks.iter().map(|m| residual(&dm, m)).collect();
            let rv: Vec<f64> = masks.iter().map(|m| residual(&dv, m)).collect();
            // shared mask: Top-k of the weight delta minimizes its residual
            let best = residual(&dw, &topk_mask(&dw, k).unwrap());
            for r in &rw {
                if best > r * (1.0 + 1e-12) + 1e-300 {
                    return Status::Fail(format!("top-k not optimal at d={d} k={k}"));
                }
            }
            // separate masks: per-tensor Top-k minimizes any positively
            // weighted sum of residuals
            let sep = weights.0 * best
                + weights.1 * residual(&dm, &topk_mask(&dm, k).unwrap())
                + weights.2 * residual(&dv, &topk_mask(&dv, k).unwrap());
            for a in &rw {
                for b in &rm {
                    for c in &rv {
                        let sum = weights.0 * a + weights.1 * b + weights.2 * c;
                        if sep > sum * (1.0 + 1e-12) + 1e-300 {
                            return Status::Fail(format!(
                                "separate top-k not optimal at d={d} k={k}"
                            ));
                        }
                    }
                }
            }
        }
    }
    Status::Pass("exhaustive over C(8,k) masks, 10 random triples".into())
}

fn property_full_mask_equivalence() -> Status {
    use crate::datasets::stratified_iid;
    use crate::federation::ExperimentSetup;
    use crate::local_adam::AdamHyper;
    use crate::sparsification::SsmVariant;

    let train = match generate_synthetic(64, 2, 2, 4.0, 11) {
        Ok(t) => t,
        Err(e) => return Status::Fail(e.to_string()),
    };
    let partition = match stratified_iid(&train.labels, 4) {
        Ok(p) => p,
        Err(e) => return Status::Fail(e.to_string()),
    };
    let topology = Topology::new(vec![2, 8, 2]).unwrap();
    let d = topology.param_count();
    let mut finals = Vec::new();
    for algorithm in [
        AlgorithmKind::FedAdamSsm(SsmVariant::Ssm),
        AlgorithmKind::FedAdamTop,
        AlgorithmKind::VanillaFedAdam,
    ] {
        let setup = ExperimentSetup {
            algorithm,
            topology: topology.clone(),
            train: train.clone(),
            test: None,
            partition: partition.clone(),
            hp: AdamHyper::new(1e-3, 0.9, 0.999, 1e-6).unwrap(),
            local_steps: 2,
            rounds: 5,
            batch_size: 8,
            clip: None,
            k: d,
            q: 32,
            seed: 11,
            eval_interval: 1,
            probe: false,
            track_states: false,
            capture_deltas_at: None,
        };
        match run_experiment(&setup) {
            Ok(out) => finals.push(out.state),
            Err(e) => return Status::Fail(e.to_string()),
        }
    }
    let mut max_gap: f64 = 0.0;
    for other in &finals[1..] {
        for (field_a, field_b) in [
            (&finals[0].w, &other.w),
            (&finals[0].m, &other.m),
            (&finals[0].v, &other.v),
        ] {
            for (a, b) in field_a.iter().zip(field_b) {
                max_gap = max_gap.max((a - b).abs());
            }
        }
    }
    if max_gap <= 1e-12 {
        Status::Pass(format!("three update rules agree, max gap {max_gap:.1e}"))
    } else {
        Status::Fail(format!("full-mask trajectories diverge by {max_gap:.2e}"))
    }
}

/// Clipped run powering the moment and deviation probes. Small builtin
/// default; a user config (capped to 10 rounds) replaces it.
fn probe_setup(config: Option<&RunConfig>) -> Result<Option<crate::federation::ExperimentSetup>> {
    match config {
        None => {
            let text = r#"
algorithm = "fedadam-ssm"
topology = [2, 6, 2]
synthetic_samples = 200
synthetic_separation = 4.0
n_clients = 2
eta = 0.001
eps = 0.1
local_steps = 3
rounds = 5
alpha = 0.1
batch_size = 16
clip = 1.0
seed = 5
"#;
            Ok(Some(RunConfig::parse(text)?.resolve()?))
        }
        Some(config) => {
            if config.clip.is_none() {
                return Ok(None);
            }
            let mut setup = config.resolve()?;
            setup.rounds = setup.rounds.min(10);
            Ok(Some(setup))
        }
    }
}

fn property_moment_bounds(config: Option<&RunConfig>) -> Status {
    let mut setup = match probe_setup(config) {
        Ok(Some(setup)) => setup,
        Ok(None) => return Status::Skip("premise unmet: clipping disabled".into()),
        Err(e) => return Status::Fail(e.to_string()),
    };
    setup.probe = false;
    setup.track_states = true;
    let (beta1, beta2) = (setup.hp.beta1, setup.hp.beta2);
    let g = setup.clip;
    let steps = setup.local_steps;
    match run_experiment(&setup) {
        Err(e) => Status::Fail(e.to_string()),
        Ok(out) => match moment_bounds_check(&out.states.unwrap(), beta1, beta2, g, steps) {
            Err(e) => Status::Fail(e.to_string()),
            Ok(report) if report.violations == 0 => Status::Pass(format!(
                "0 violations over {} rounds, worst slack {:.1e}",
                report.rounds_checked, report.worst_m_slack
            )),
            Ok(report) => Status::Fail(format!(
                "{} coordinates outside the moment envelopes",
                report.violations
            )),
        },
    }
}

fn property_deviation_bound(config: Option<&RunConfig>) -> Status {
    let mut setup = match probe_setup(config) {
        Ok(Some(setup)) => setup,
        Ok(None) => return Status::Skip("premise unmet: clipping disabled".into()),
        Err(e) => return Status::Fail(e.to_string()),
    };
    setup.probe = true;
    let d = setup.topology.param_count();
    let (beta1, beta2) = (setup.hp.beta1, setup.hp.beta2);
    let (eta, eps) = (setup.hp.eta, setup.hp.eps);
    let g = setup.clip.unwrap();
    match run_experiment(&setup) {
        Err(e) => Status::Fail(e.to_string()),
        Ok(out) => {
            let trace = out.probe.unwrap();
            match deviation_bound_audit(&trace, beta1, beta2, eta, eps, d, g) {
                Err(e) => Status::Fail(e.to_string()),
                Ok(audit) if audit.points == audit.vacuous => {
                    Status::Skip("bound vacuous (overflow) at every probe point".into())
                }
                Ok(audit) if audit.violations == 0 => Status::Pass(format!(
                    "{} points within bound ({} vacuous), max ratio {:.3}",
                    audit.points - audit.vacuous,
                    audit.vacuous,
                    audit.max_ratio
                )),
                Ok(audit) => Status::Fail(format!(
                    "{} of {} probe points exceed the bound",
                    audit.violations, audit.points
                )),
            }
        }
    }
}

fn property_coefficient_ordering() -> Status {
    let mut rng = stream(42, Purpose::Init, 102, 0);
    let mut tried = 0;
    while tried < 100 {
        let d = rng.random_range(1..=16usize);
        let g = rng.random_range(0.05..2.0);
        let rho = rng.random_range(0.05..3.0);
        let eps = rng.random_range(0.2..4.0);
        let eta = rng.random_range(1e-4..0.2);
        let l = rng.random_range(1..=8usize);
        let thr = 1.0 - 1.0 / (1.0 + 2.0 * g * rho * (d as f64).sqrt());
        let beta2 = rng.random_range(0.01..0.999);
        if beta2 >= thr {
            continue;
        }
        let side = (d as f64).sqrt() * g * beta2 / (2.0 * eps);
        if side >= 1.0 {
            continue;
        }
        let beta1 = rng.random_range(side..1.0);
        if beta1 <= side || beta1 >= 1.0 {
            continue;
        }
        tried += 1;
        let inputs = ConstantInputs {
            beta1,
            beta2,
            g_bound: g,
            rho,
            d,
            eta,
            eps,
            sigma_l: 0.0,
            sigma_g: 0.0,
            batch: 32,
        };
        match coefficient_ordering(&inputs, l) {
            Err(e) => return Status::Fail(e.to_string()),
            Ok(check) if !check.ordered => {
                return Status::Fail(format!("ordering failed at {inputs:?}, depth {l}"))
            }
            Ok(_) => {}
        }
    }
    Status::Pass("γ > θ > λ on 100 draws satisfying both conditions".into())
}

fn property_config_round_trip(config: Option<&RunConfig>) -> Status {
    let subject = match config {
        Some(c) => c.clone(),
        None => {
            let text = r#"
algorithm = "fedadam-ssm"
topology = [2, 16, 2]
synthetic_samples = 2000
rounds = 100
alpha = 0.1
seed = 1
"#;
            match RunConfig::parse(text) {
                Ok(c) => c,
                Err(e) => return Status::Fail(e.to_string()),
            }
        }
    };
    match subject.to_toml().and_then(|s| RunConfig::parse(&s)) {
        Err(e) => Status::Fail(e.to_string()),
        Ok(reparsed) if reparsed == subject => {
            Status::Pass("serialize(parse(text)) is a fixed point".into())
        }
        Ok(_) => Status::Fail("round-tripped config differs from the original".into()),
    }
}

fn verify_command(config_path: Option<&Path>) -> Result<i32> {
    let config = match config_path {
        Some(path) => Some(RunConfig::from_file(path)?),
        None => None,
    };
    let properties: Vec<(&str, Status)> = vec![
        ("gradient-finite-difference", property_gradient()),
        ("topk-contraction", property_contraction()),
        ("mask-optimality", property_mask_optimality()),
        ("full-mask-equivalence", property_full_mask_equivalence()),
        ("moment-bounds", property_moment_bounds(config.as_ref())),
        ("deviation-bound", property_deviation_bound(config.as_ref())),
        ("coefficient-ordering", property_coefficient_ordering()),
        ("config-round-trip", property_config_round_trip(config.as_ref())),
    ];
    let mut failures = 0;
    for (name, status) in &properties {
        match status {
            Status::Pass(detail) => println!("[PASS] {name}: {detail}"),
            Status::Skip(detail) => println!("[SKIP] {name}: {detail}"),
            Status::Fail(detail) => {
                failures += 1;
                println!("[FAIL] {name}: {detail}");
            }
        }
    }
    Ok(if failures == 0 { 0 } else { 1 })
}
