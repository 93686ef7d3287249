//! A sweep spec expanded to its grid and executed in-process: how the
//! keep-fraction α trades uplink bits for accuracy, over three seeds.
//!
//!     cargo run --example alpha_sweep

use fedssm::config::SweepSpec;
use fedssm::federation::run_experiment;

const SPEC: &str = r#"
[base]
algorithm = "fedadam-ssm"
topology = [2, 16, 4]
synthetic_samples = 2000
synthetic_separation = 3.0
synthetic_test_samples = 2000
n_clients = 8
rounds = 10
local_steps = 5
batch_size = 32
eval_interval = 10
seed = 1

[axes]
alpha = [0.5, 0.1, 0.02]
seeds = [1, 2, 3]
"#;

fn main() -> fedssm::Result<()> {
    let spec = SweepSpec::parse(SPEC)?;
    let grid = spec.grid()?;
    println!("sweep grid: {} points (3 α × 3 seeds)\n", grid.len());
    println!(
        "{:<20} {:>4} {:>10} {:>14}",
        "point", "k", "test acc", "uplink bits"
    );
    for point in &grid {
        let setup = point.config.resolve()?;
        let out = run_experiment(&setup)?;
        let last = out.metrics.last().unwrap();
        println!(
            "{:<20} {:>4} {:>10.3} {:>14}",
            point.label,
            setup.k,
            last.test_acc.unwrap(),
            last.uplink_bits_cum
        );
    }
    println!("\nsame budget story, read per α: a 2-coordinate mask uploads");
    println!("~28× fewer bits than a 58-coordinate one, and pays in accuracy.");
    Ok(())
}
