//! A federated run under the microscope: per-round losses, uplink cost,
//! and the aggregated-V clamp counter for the shared-sparse-mask method.
//!
//!     cargo run --example ssm_round_by_round

use fedssm::datasets::{generate_synthetic, stratified_iid};
use fedssm::federation::{run_experiment, AlgorithmKind, ExperimentSetup};
use fedssm::local_adam::AdamHyper;
use fedssm::model::Topology;
use fedssm::sparsification::SsmVariant;

fn main() -> fedssm::Result<()> {
    let train = generate_synthetic(400, 2, 2, 4.0, 11)?;
    let test = generate_synthetic(400, 2, 2, 4.0, 11 + 7777)?;
    let partition = stratified_iid(&train.labels, 4)?;
    let topology = Topology::new(vec![2, 8, 2])?;
    let d = topology.param_count();
    println!(
        "4 clients × {} samples each, {d} parameters, keeping k = 5 per round\n",
        train.len() / 4
    );

    let setup = ExperimentSetup {
        algorithm: AlgorithmKind::FedAdamSsm(SsmVariant::Ssm),
        topology,
        train,
        test: Some(test),
        partition,
        hp: AdamHyper::new(1e-3, 0.9, 0.999, 1e-6)?,
        local_steps: 5,
        rounds: 10,
        batch_size: 32,
        clip: None,
        k: 5,
        q: 32,
        seed: 11,
        eval_interval: 1,
        probe: false,
        track_states: false,
        capture_deltas_at: None,
    };
    let out = run_experiment(&setup)?;

    println!(
        "{:>3} {:>11} {:>10} {:>10} {:>12} {:>7} {:>9}",
        "t", "train loss", "test loss", "test acc", "uplink cum", "wire", "V clamps"
    );
    for m in &out.metrics {
        println!(
            "{:>3} {:>11.4} {:>10.4} {:>10.3} {:>12} {:>7} {:>9}",
            m.t,
            m.train_loss,
            m.test_loss.unwrap_or(f64::NAN),
            m.test_acc.unwrap_or(f64::NAN),
            m.uplink_bits_cum,
            m.wire_mode,
            m.v_clamped
        );
    }

    let nnz = out.state.delta_w.iter().filter(|x| **x != 0.0).count();
    println!(
        "\nlast broadcast delta: {nnz} of {d} coordinates nonzero (mask union over 4 clients)",
    );
    Ok(())
}
