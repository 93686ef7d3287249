//! Flat-tensor kernels.
//!
//! Model weights, moment estimates, gradients and update deltas are all
//! plain length-d vectors of f64, so the optimizer and sparsifier layers
//! never need to know about network structure. Sums run strictly left to
//! right: reproducibility beats vectorization at the scales handled here.

use crate::{Error, Result};

/// Flat real vector of fixed dimension d ≥ 1. All entries stay finite;
/// operations that would produce NaN or infinity are errors.
pub type DenseTensor = Vec<f64>;

fn check_same_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Elementwise product a ⊙ b.
pub fn hadamard(a: &[f64], b: &[f64]) -> Result<DenseTensor> {
    check_same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

/// Euclidean norm sqrt(Σ x_j²).
pub fn l2_norm(x: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &v in x {
        if !v.is_finite() {
            return Err(Error::NonFinite("l2_norm input"));
        }
        sum += v * v;
    }
    Ok(sum.sqrt())
}

/// Weighted average Σ w_n x_n / Σ w_n over equally sized tensors.
pub fn weighted_mean(tensors: &[DenseTensor], weights: &[f64]) -> Result<DenseTensor> {
    if tensors.is_empty() {
        return Err(Error::EmptyInput("weighted_mean tensors"));
    }
    if tensors.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            expected: tensors.len(),
            got: weights.len(),
        });
    }
    let d = tensors[0].len();
    let mut total = 0.0;
    for &w in weights {
        if !(w >= 0.0) {
            return Err(Error::InvalidArgument {
                what: "weights",
                why: format!("negative or non-finite weight {w}"),
            });
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::InvalidArgument {
            what: "weights",
            why: "weights sum to zero".into(),
        });
    }
    let mut out = vec![0.0; d];
    for (t, &w) in tensors.iter().zip(weights) {
        check_same_len(&tensors[0], t)?;
        let c = w / total;
        for (o, &x) in out.iter_mut().zip(t) {
            *o += c * x;
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weighted_mean output"));
    }
    Ok(out)
}

/// Adam's per-coordinate step direction m_j / sqrt(v_j + ε).
pub fn adam_direction(m: &[f64], v: &[f64], eps: f64) -> Result<DenseTensor> {
    check_same_len(m, v)?;
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument {
            what: "eps",
            why: format!("must be > 0, got {eps}"),
        });
    }
    let mut out = Vec::with_capacity(m.len());
    for (&mj, &vj) in m.iter().zip(v) {
        if vj < 0.0 {
            return Err(Error::InvalidArgument {
                what: "v",
                why: format!("negative second-moment entry {vj}"),
            });
        }
        let o = mj / (vj + eps).sqrt();
        if !o.is_finite() {
            return Err(Error::NonFinite("adam_direction output"));
        }
        out.push(o);
    }
    Ok(out)
}

/// a + b.
pub fn add(a: &[f64], b: &[f64]) -> Result<DenseTensor> {
    check_same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x + y).collect())
}

/// a − b.
pub fn sub(a: &[f64], b: &[f64]) -> Result<DenseTensor> {
    check_same_len(a, b)?;
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// c · x.
pub fn scale(x: &[f64], c: f64) -> DenseTensor {
    x.iter().map(|v| c * v).collect()
}

#[cfg(test)]
pub(crate) fn assert_close(got: f64, want: f64, tol: f64) {
    let scale = want.abs().max(1.0);
    assert!(
        (got - want).abs() <= tol * scale,
        "got {got}, want {want} (tol {tol})"
    );
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{stream, Purpose};
    use rand::Rng;

    #[test]
    fn hadamard_basics() {
        assert_eq!(
            hadamard(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]).unwrap(),
            vec![0.0, 2.0, 6.0]
        );
        let x = vec![0.5, -2.0, 7.0];
        assert_eq!(hadamard(&x, &[1.0, 1.0, 1.0]).unwrap(), x);
        assert_eq!(hadamard(&x, &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(hadamard(&x, &[1.0]).is_err());
    }

    #[test]
    fn hadamard_commutes() {
        let mut rng = stream(1, Purpose::Data, 0, 0);
        for _ in 0..100 {
            let a: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            let b: Vec<f64> = (0..16).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert_eq!(hadamard(&a, &b).unwrap(), hadamard(&b, &a).unwrap());
        }
    }

    #[test]
    fn l2_norm_basics() {
        assert_eq!(l2_norm(&[3.0, 4.0]).unwrap(), 5.0);
        assert_eq!(l2_norm(&[0.0; 8]).unwrap(), 0.0);
        assert_eq!(l2_norm(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 2.0);
        assert!(l2_norm(&[f64::NAN]).is_err());
    }

    #[test]
    fn l2_norm_triangle_inequality() {
        let mut rng = stream(2, Purpose::Data, 0, 0);
        for _ in 0..1000 {
            let a: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..12).map(|_| rng.random_range(-5.0..5.0)).collect();
            let lhs = l2_norm(&add(&a, &b).unwrap()).unwrap();
            let rhs = l2_norm(&a).unwrap() + l2_norm(&b).unwrap();
            assert!(lhs <= rhs * (1.0 + 1e-12), "{lhs} > {rhs}");
        }
    }

    #[test]
    fn weighted_mean_basics() {
        let out = weighted_mean(&[vec![2.0], vec![-2.0]], &[1.0, 3.0]).unwrap();
        assert_eq!(out, vec![-1.0]);
        let single = weighted_mean(&[vec![4.0, 5.0]], &[0.7]).unwrap();
        assert_eq!(single, vec![4.0, 5.0]);
        let same = weighted_mean(&[vec![1.5; 3], vec![1.5; 3]], &[0.2, 9.0]).unwrap();
        for v in same {
            assert_close(v, 1.5, 1e-15);
        }
    }

    #[test]
    fn weighted_mean_guards() {
        assert!(weighted_mean(&[], &[]).is_err());
        assert!(weighted_mean(&[vec![1.0]], &[0.0]).is_err());
        assert!(weighted_mean(&[vec![1.0], vec![1.0, 2.0]], &[1.0, 1.0]).is_err());
        assert!(weighted_mean(&[vec![1.0]], &[-1.0]).is_err());
    }

    #[test]
    fn weighted_mean_scale_invariant() {
        let mut rng = stream(3, Purpose::Data, 0, 0);
        for _ in 0..200 {
            let ts: Vec<DenseTensor> = (0..4)
                .map(|_| (0..6).map(|_| rng.random_range(-2.0..2.0)).collect())
                .collect();
            let ws: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..5.0)).collect();
            let c: f64 = rng.random_range(0.5..100.0);
            let scaled: Vec<f64> = ws.iter().map(|w| c * w).collect();
            let a = weighted_mean(&ts, &ws).unwrap();
            let b = weighted_mean(&ts, &scaled).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert_close(*x, *y, 1e-12);
            }
        }
    }

    #[test]
    fn adam_direction_hand_value() {
        let out = adam_direction(&[0.1], &[0.001], 1e-6).unwrap();
        assert_close(out[0], 3.1606977062050703, 1e-14);
        assert_eq!(adam_direction(&[0.0; 4], &[0.5; 4], 1e-6).unwrap(), vec![0.0; 4]);
        let unit = adam_direction(&[1.0], &[0.0], 1.0).unwrap();
        assert_eq!(unit, vec![1.0]);
    }

    #[test]
    fn adam_direction_guards_and_sign() {
        assert!(adam_direction(&[1.0], &[1.0], 0.0).is_err());
        assert!(adam_direction(&[1.0], &[-0.1], 1e-6).is_err());
        let mut rng = stream(4, Purpose::Data, 0, 0);
        for _ in 0..200 {
            let m: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
            let out = adam_direction(&m, &v, 1e-6).unwrap();
            for (o, mj) in out.iter().zip(&m) {
                assert!(o.signum() * mj.signum() >= 0.0);
                if *mj == 0.0 {
                    assert_eq!(*o, 0.0);
                }
            }
        }
    }
}
