//! All algorithms on one task: accuracy against cumulative uplink bits.
//! The shared-mask family uploads one mask where the separate-mask
//! baseline uploads three; dense baselines upload everything.
//!
//!     cargo run --example algorithm_comparison

use fedssm::datasets::{generate_synthetic, stratified_iid};
use fedssm::federation::{run_experiment, AlgorithmKind, ExperimentSetup};
use fedssm::local_adam::AdamHyper;
use fedssm::model::Topology;
use fedssm::sparsification::SsmVariant;

fn main() -> fedssm::Result<()> {
    let algorithms = [
        AlgorithmKind::FedAdamSsm(SsmVariant::Ssm),
        AlgorithmKind::FedAdamSsm(SsmVariant::SsmM),
        AlgorithmKind::FedAdamSsm(SsmVariant::SsmV),
        AlgorithmKind::FedAdamSsm(SsmVariant::FairnessTop),
        AlgorithmKind::FedAdamSsm(SsmVariant::RandK),
        AlgorithmKind::FedAdamTop,
        AlgorithmKind::VanillaFedAdam,
        AlgorithmKind::FedSgd,
        AlgorithmKind::SparseFedSgd,
    ];

    println!("2000-sample blobs, MLP [2,16,2] (82 params), N=8, 30 rounds, k=8 where sparse\n");
    println!(
        "{:<20} {:>10} {:>9} {:>14} {:>12}",
        "algorithm", "train loss", "test acc", "uplink bits", "vs dense"
    );
    let dense_bits = 30u64 * 3 * 8 * 82 * 32;
    for algorithm in algorithms {
        let train = generate_synthetic(2000, 2, 2, 4.0, 1)?;
        let test = generate_synthetic(2000, 2, 2, 4.0, 1 + 7777)?;
        let partition = stratified_iid(&train.labels, 8)?;
        let setup = ExperimentSetup {
            algorithm,
            topology: Topology::new(vec![2, 16, 2])?,
            train,
            test: Some(test),
            partition,
            hp: AdamHyper::new(1e-3, 0.9, 0.999, 1e-6)?,
            local_steps: 5,
            rounds: 30,
            batch_size: 32,
            clip: None,
            k: 8,
            q: 32,
            seed: 1,
            eval_interval: 30,
            probe: false,
            track_states: false,
            capture_deltas_at: None,
        };
        let out = run_experiment(&setup)?;
        let last = out.metrics.last().unwrap();
        println!(
            "{:<20} {:>10.4} {:>9.3} {:>14} {:>11.1}%",
            algorithm.label(),
            last.train_loss,
            last.test_acc.unwrap(),
            last.uplink_bits_cum,
            100.0 * last.uplink_bits_cum as f64 / dense_bits as f64
        );
    }
    Ok(())
}
