//! Datasets from IDX files (the MNIST container format): serialize,
//! parse back, and feed a federated run — the same path file-based
//! configs take.
//!
//!     cargo run --example idx_round_trip

use fedssm::datasets::{dataset_from_idx, parse_idx, serialize_idx, stratified_iid};
use fedssm::federation::{run_experiment, AlgorithmKind, ExperimentSetup};
use fedssm::local_adam::AdamHyper;
use fedssm::model::Topology;
use fedssm::sparsification::SsmVariant;

fn main() -> fedssm::Result<()> {
    // 120 tiny 2×2 "images": class 0 bright on the left, class 1 on the right
    let n = 120usize;
    let mut pixels = Vec::with_capacity(n * 4);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % 2;
        let jitter = ((i * 37) % 64) as u8;
        let (hot, cold) = (191 + jitter / 2, jitter);
        let row: [u8; 4] = if class == 0 {
            [hot, cold, hot, cold]
        } else {
            [cold, hot, cold, hot]
        };
        pixels.extend_from_slice(&row);
        labels.push(class as u8);
    }

    let images_idx = serialize_idx(&[n, 2, 2], &pixels)?;
    let labels_idx = serialize_idx(&[n], &labels)?;
    println!(
        "serialized: images {} bytes (dims [n,2,2]), labels {} bytes",
        images_idx.len(),
        labels_idx.len()
    );

    let (dims, payload) = parse_idx(&images_idx)?;
    assert_eq!(dims, vec![n, 2, 2]);
    assert_eq!(payload, pixels);
    println!("parsed back: dims {dims:?}, payload intact");

    let truncated = &images_idx[..images_idx.len() - 3];
    println!("truncated file rejected: {}", parse_idx(truncated).unwrap_err());

    let train = dataset_from_idx(&images_idx, &labels_idx)?;
    println!(
        "\ndataset: {} samples, {} features (pixels scaled to [0,1]), {} classes",
        train.len(),
        train.d_in,
        train.classes
    );

    let partition = stratified_iid(&train.labels, 4)?;
    let setup = ExperimentSetup {
        algorithm: AlgorithmKind::FedAdamSsm(SsmVariant::Ssm),
        topology: Topology::new(vec![4, 6, 2])?,
        train,
        test: None,
        partition,
        hp: AdamHyper::new(0.01, 0.9, 0.999, 1e-6)?,
        local_steps: 5,
        rounds: 8,
        batch_size: 16,
        clip: None,
        k: 4,
        q: 32,
        seed: 3,
        eval_interval: 1,
        probe: false,
        track_states: false,
        capture_deltas_at: None,
    };
    let out = run_experiment(&setup)?;
    println!("federated run on the IDX data, train loss by round:");
    for m in &out.metrics {
        println!("  t={} loss {:.4}", m.t, m.train_loss);
    }
    Ok(())
}
