//! Single-node building blocks: manual MLP gradients checked against
//! finite differences, then a centralized Adam run on synthetic blobs.
//!
//!     cargo run --example local_adam_training

use fedssm::datasets::generate_synthetic;
use fedssm::local_adam::{centralized_adam_trajectory, AdamHyper, MomentState};
use fedssm::model::{evaluate, finite_difference_gap, init_params, Topology};

fn main() -> fedssm::Result<()> {
    let topology = Topology::new(vec![2, 8, 2])?;
    let data = generate_synthetic(300, 2, 2, 4.0, 7)?;
    println!(
        "task: {} samples, {} features, {} classes; MLP {:?} with {} parameters",
        data.len(),
        data.d_in,
        data.classes,
        [2, 8, 2],
        topology.param_count()
    );

    let w0 = init_params(&topology, 7);
    let gap = finite_difference_gap(&w0, &topology, &data, 1e-5)?;
    println!("gradient check: max |analytic - central difference| = {gap:.3e}\n");

    let hp = AdamHyper::new(0.01, 0.9, 0.999, 1e-6)?;
    let traj = centralized_adam_trajectory(&MomentState::fresh(w0), &data, &topology, &hp, 200, None)?;

    println!("full-batch Adam (no bias correction), 200 steps:");
    println!("{:>6} {:>10} {:>10} {:>12} {:>12}", "step", "loss", "accuracy", "max |m|", "max v");
    for (i, state) in traj.iter().enumerate() {
        if i % 25 != 0 && i != traj.len() - 1 {
            continue;
        }
        let (loss, acc) = evaluate(&state.w, &topology, &data)?;
        let m_max = state.m.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
        let v_max = state.v.iter().fold(0.0f64, |a, &x| a.max(x));
        println!("{i:>6} {loss:>10.4} {acc:>10.3} {m_max:>12.4e} {v_max:>12.4e}");
    }
    Ok(())
}
