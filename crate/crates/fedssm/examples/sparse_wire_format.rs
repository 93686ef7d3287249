//! The sparse uplink wire format: one shared Top-k mask, three value
//! lists, and the cheaper of two encodings (k-hot mask vs index list).
//!
//!     cargo run --example sparse_wire_format

use fedssm::sparsification::{
    best_wire_mode, encode_update, topk_mask, wire_bits, SparseUpdate, WireMode,
};

fn main() -> fedssm::Result<()> {
    // a hand-sized update triple: weight deltas dominate, as in real runs
    let dw = vec![0.8, -0.05, 0.02, -1.4, 0.3, 0.01, -0.6, 0.09, 2.1, -0.004, 0.5, -0.07];
    let dm: Vec<f64> = dw.iter().map(|x| 0.1 * x).collect();
    let dv: Vec<f64> = dw.iter().map(|x| 0.01 * x * x).collect();
    let d = dw.len();
    let k = 4;

    let mask = topk_mask(&dw, k)?;
    println!("d = {d}, k = {k}: shared mask keeps coordinates {:?}", mask.indices());

    let update: SparseUpdate = encode_update(&dw, &dm, &dv, &mask)?;
    for mode in [WireMode::MaskForm, WireMode::IndexForm] {
        let bytes = update.to_bytes(mode)?;
        let (decoded, tagged) = SparseUpdate::from_bytes(&bytes)?;
        assert_eq!(decoded, update);
        assert_eq!(tagged, mode);
        println!(
            "  {:<5} encoding: {:>3} bytes on the wire (round-trips losslessly)",
            mode.label(),
            bytes.len()
        );
    }

    println!("\nbit cost per client at q = 32, d = 100 (whichever encoding is cheaper wins):");
    println!("{:>6} {:>12} {:>12} {:>8}", "k", "mask-form", "index-form", "chosen");
    for k in [1u64, 3, 5, 10, 25, 50, 100] {
        let mask_bits = wire_bits(WireMode::MaskForm, 100, k, 32);
        let index_bits = wire_bits(WireMode::IndexForm, 100, k, 32);
        let (best, bits) = best_wire_mode(100, k, 32);
        println!(
            "{k:>6} {mask_bits:>12} {index_bits:>12} {:>8}",
            format!("{} ({bits})", best.label())
        );
    }
    Ok(())
}
