//! Why ranking by the weight delta works: after a few rounds the raw
//! client updates separate by orders of magnitude — |ΔW| ≫ |ΔM| ≫ |ΔV| —
//! so one W-chosen mask loses almost nothing on M and V.
//!
//!     cargo run --example update_magnitudes

use fedssm::analysis::{magnitude_summary, moment_bounds_check};
use fedssm::datasets::{generate_synthetic, stratified_iid};
use fedssm::federation::{run_experiment, AlgorithmKind, ExperimentSetup};
use fedssm::local_adam::AdamHyper;
use fedssm::model::Topology;
use fedssm::sparsification::SsmVariant;

fn bar(count: u64, max: u64) -> String {
    let width = (40 * count + max / 2) / max.max(1);
    "#".repeat(width as usize)
}

fn main() -> fedssm::Result<()> {
    let train = generate_synthetic(2000, 2, 2, 4.0, 1)?;
    let partition = stratified_iid(&train.labels, 8)?;
    let setup = ExperimentSetup {
        algorithm: AlgorithmKind::FedAdamSsm(SsmVariant::Ssm),
        topology: Topology::new(vec![2, 16, 2])?,
        train,
        test: None,
        partition,
        hp: AdamHyper::new(1e-3, 0.9, 0.999, 1e-6)?,
        local_steps: 5,
        rounds: 10,
        batch_size: 32,
        clip: Some(1.0),
        k: 8,
        q: 32,
        seed: 1,
        eval_interval: 1,
        probe: false,
        track_states: true,
        capture_deltas_at: Some(9), // keep every client's raw triple at round 10
    };
    let out = run_experiment(&setup)?;

    let deltas = out.captured_deltas.as_ref().unwrap();
    let summary = magnitude_summary(deltas, 12)?;
    println!("round-10 raw update magnitudes, pooled over 8 clients (log10 bins):");
    println!("{:>16} {:>8} {:>8} {:>8}", "bin", "ΔW", "ΔM", "ΔV");
    let max = summary
        .count_w
        .iter()
        .chain(&summary.count_m)
        .chain(&summary.count_v)
        .copied()
        .max()
        .unwrap_or(1);
    for i in 0..summary.count_w.len() {
        println!(
            "[{:>6.2},{:>6.2}) {:>8} {:>8} {:>8}  {}",
            summary.edges[i],
            summary.edges[i + 1],
            summary.count_w[i],
            summary.count_m[i],
            summary.count_v[i],
            bar(summary.count_w[i], max)
        );
    }
    println!(
        "medians: log10|ΔW| = {:.2}, log10|ΔM| = {:.2}, log10|ΔV| = {:.2}",
        summary.median_w.unwrap(),
        summary.median_m.unwrap(),
        summary.median_v.unwrap()
    );

    let report = moment_bounds_check(out.states.as_ref().unwrap(), 0.9, 0.999, Some(1.0), 5)?;
    println!(
        "\nmoment envelopes under clipping (G=1): {} violations over {} rounds; worst slack m {:+.2e}, v {:+.2e}",
        report.violations, report.rounds_checked, report.worst_m_slack, report.worst_v_slack
    );
    Ok(())
}
