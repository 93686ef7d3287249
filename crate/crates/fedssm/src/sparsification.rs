//! Mask construction (Top-k, Rand-k and the shared-mask variants), mask
//! application, the sparse wire unit, and the bit arithmetic that decides
//! between sending a d-bit mask and sending k explicit indices.

use rand_chacha::ChaCha8Rng;

use crate::numerics::DenseTensor;
use crate::{Error, Result};

/// A bit vector with at least one set bit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseMask {
    bits: Vec<bool>,
    k: usize,
}

impl SparseMask {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        let k = bits.iter().filter(|&&b| b).count();
        if k == 0 {
            return Err(Error::InvalidArgument {
                what: "mask",
                why: "population count must be ≥ 1".into(),
            });
        }
        Ok(SparseMask { bits, k })
    }

    pub fn from_indices(d: usize, idxs: &[usize]) -> Result<Self> {
        let mut bits = vec![false; d];
        for &i in idxs {
            if i >= d {
                return Err(Error::InvalidArgument {
                    what: "mask index",
                    why: format!("{i} out of range for dimension {d}"),
                });
            }
            if bits[i] {
                return Err(Error::InvalidArgument {
                    what: "mask index",
                    why: format!("duplicate index {i}"),
                });
            }
            bits[i] = true;
        }
        SparseMask::new(bits)
    }

    pub fn dim(&self) -> usize {
        self.bits.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn is_set(&self, j: usize) -> bool {
        self.bits[j]
    }

    /// Set coordinates in ascending order.
    pub fn indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&j| self.bits[j]).collect()
    }

    /// Flipped mask. Errors when every bit is set (the complement would
    /// be empty).
    pub fn complement(&self) -> Result<SparseMask> {
        SparseMask::new(self.bits.iter().map(|&b| !b).collect())
    }
}

/// Which of the three sparsifier families picks the shared mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsmVariant {
    /// Top-k of the weight delta (the default).
    Ssm,
    /// Top-k of the first-moment delta.
    SsmM,
    /// Top-k of the second-moment delta.
    SsmV,
    /// Top-k of per-tensor max-normalized magnitude scores.
    FairnessTop,
    /// k uniform coordinates.
    RandK,
}

fn check_k(k: usize, d: usize) -> Result<()> {
    if k < 1 || k > d {
        return Err(Error::InvalidArgument {
            what: "k",
            why: format!("need 1 ≤ k ≤ {d}, got {k}"),
        });
    }
    Ok(())
}

/// Mask of the k largest-magnitude coordinates. Ties go to the lower
/// index, making the selection a deterministic function of the input.
pub fn topk_mask(x: &[f64], k: usize) -> Result<SparseMask> {
    check_k(k, x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("topk_mask input"));
    }
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b)));
    SparseMask::from_indices(x.len(), &order[..k])
}

/// Zero out everything the mask does not cover.
pub fn apply_mask(x: &[f64], mask: &SparseMask) -> Result<DenseTensor> {
    if x.len() != mask.dim() {
        return Err(Error::DimensionMismatch {
            expected: mask.dim(),
            got: x.len(),
        });
    }
    Ok(x.iter()
        .enumerate()
        .map(|(j, &v)| if mask.is_set(j) { v } else { 0.0 })
        .collect())
}

/// Every k-of-d mask, for brute-force optimality checks. Guarded to
/// small d; C(d, k) explodes quickly.
pub fn all_masks(d: usize, k: usize) -> Result<Vec<SparseMask>> {
    check_k(k, d)?;
    if d > 20 {
        return Err(Error::InvalidArgument {
            what: "d",
            why: format!("exhaustive enumeration capped at d = 20, got {d}"),
        });
    }
    let mut out = Vec::new();
    let mut idxs: Vec<usize> = (0..k).collect();
    loop {
        out.push(SparseMask::from_indices(d, &idxs)?);
        // next combination in lexicographic order
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if idxs[i] != i + d - k {
                break;
            }
        }
        idxs[i] += 1;
        for j in i + 1..k {
            idxs[j] = idxs[j - 1] + 1;
        }
    }
}

/// The single mask shared by all three delta tensors, per variant.
pub fn ssm_select(
    dw: &[f64],
    dm: &[f64],
    dv: &[f64],
    k: usize,
    variant: SsmVariant,
    rng: &mut ChaCha8Rng,
) -> Result<SparseMask> {
    if dm.len() != dw.len() || dv.len() != dw.len() {
        return Err(Error::DimensionMismatch {
            expected: dw.len(),
            got: dm.len().max(dv.len()),
        });
    }
    match variant {
        SsmVariant::Ssm => topk_mask(dw, k),
        SsmVariant::SsmM => topk_mask(dm, k),
        SsmVariant::SsmV => topk_mask(dv, k),
        SsmVariant::FairnessTop => {
            // normalize each tensor by its own max magnitude so the much
            // smaller moment deltas still get a vote; an all-zero tensor
            // contributes nothing
            let score_of = |x: &[f64]| -> Result<Vec<f64>> {
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("ssm_select input"));
                }
                let top = x.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                let inv = if top > 0.0 { 1.0 / top } else { 0.0 };
                Ok(x.iter().map(|&v| v.abs() * inv).collect())
            };
            let (sw, sm, sv) = (score_of(dw)?, score_of(dm)?, score_of(dv)?);
            let scores: Vec<f64> = (0..dw.len())
                .map(|j| sw[j].max(sm[j]).max(sv[j]))
                .collect();
            topk_mask(&scores, k)
        }
        SsmVariant::RandK => {
            check_k(k, dw.len())?;
            let picks = rand::seq::index::sample(rng, dw.len(), k);
            SparseMask::from_indices(dw.len(), &picks.iter().collect::<Vec<_>>())
        }
    }
}

/// The wire unit: one mask, three value lists in ascending coordinate
/// order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseUpdate {
    pub mask: SparseMask,
    pub values_w: Vec<f64>,
    pub values_m: Vec<f64>,
    pub values_v: Vec<f64>,
}

pub fn encode_update(
    dw: &[f64],
    dm: &[f64],
    dv: &[f64],
    mask: &SparseMask,
) -> Result<SparseUpdate> {
    if dw.len() != mask.dim() || dm.len() != mask.dim() || dv.len() != mask.dim() {
        return Err(Error::DimensionMismatch {
            expected: mask.dim(),
            got: dw.len().max(dm.len()).max(dv.len()),
        });
    }
    let gather = |x: &[f64]| mask.indices().iter().map(|&j| x[j]).collect();
    Ok(SparseUpdate {
        mask: mask.clone(),
        values_w: gather(dw),
        values_m: gather(dm),
        values_v: gather(dv),
    })
}

pub fn decode_update(
    update: &SparseUpdate,
    d: usize,
) -> Result<(DenseTensor, DenseTensor, DenseTensor)> {
    if update.mask.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: update.mask.dim(),
        });
    }
    let k = update.mask.k();
    for vals in [&update.values_w, &update.values_m, &update.values_v] {
        if vals.len() != k {
            return Err(Error::Decode(format!(
                "value list length {} does not match mask population {k}",
                vals.len()
            )));
        }
    }
    let scatter = |vals: &[f64]| {
        let mut out = vec![0.0; d];
        for (&j, &v) in update.mask.indices().iter().zip(vals) {
            out[j] = v;
        }
        out
    };
    Ok((
        scatter(&update.values_w),
        scatter(&update.values_m),
        scatter(&update.values_v),
    ))
}

/// One sparse tensor with its own mask, for algorithms that do not share
/// masks across tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    pub mask: SparseMask,
    pub values: Vec<f64>,
}

impl SparseTensor {
    pub fn encode(x: &[f64], mask: &SparseMask) -> Result<Self> {
        if x.len() != mask.dim() {
            return Err(Error::DimensionMismatch {
                expected: mask.dim(),
                got: x.len(),
            });
        }
        Ok(SparseTensor {
            mask: mask.clone(),
            values: mask.indices().iter().map(|&j| x[j]).collect(),
        })
    }

    pub fn decode(&self, d: usize) -> Result<DenseTensor> {
        if self.mask.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.mask.dim(),
            });
        }
        if self.values.len() != self.mask.k() {
            return Err(Error::Decode(format!(
                "value list length {} does not match mask population {}",
                self.values.len(),
                self.mask.k()
            )));
        }
        let mut out = vec![0.0; d];
        for (&j, &v) in self.mask.indices().iter().zip(&self.values) {
            out[j] = v;
        }
        Ok(out)
    }
}

/// How the mask itself goes over the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireMode {
    /// d raw bits.
    MaskForm,
    /// k explicit coordinate indices, ⌈log2 d⌉ bits each.
    IndexForm,
}

impl WireMode {
    pub fn label(self) -> &'static str {
        match self {
            WireMode::MaskForm => "mask",
            WireMode::IndexForm => "index",
        }
    }
}

/// Bits to address one of d coordinates; by convention 0 when d = 1.
pub fn ceil_log2(d: u64) -> u64 {
    if d.is_power_of_two() {
        d.trailing_zeros() as u64
    } else {
        d.ilog2() as u64 + 1
    }
}

/// Uplink bits for one client sending the shared-mask triple: three
/// q-bit value lists plus the mask in the given form.
pub fn wire_bits(mode: WireMode, d: u64, k: u64, q: u64) -> u64 {
    match mode {
        WireMode::MaskForm => 3 * k * q + d,
        WireMode::IndexForm => k * (3 * q + ceil_log2(d)),
    }
}

/// Cheapest mode for the triple; ties go to the mask form.
pub fn best_wire_mode(d: u64, k: u64, q: u64) -> (WireMode, u64) {
    let mask = wire_bits(WireMode::MaskForm, d, k, q);
    let index = wire_bits(WireMode::IndexForm, d, k, q);
    if mask <= index {
        (WireMode::MaskForm, mask)
    } else {
        (WireMode::IndexForm, index)
    }
}

/// Uplink bits for one client sending a single sparse tensor.
pub fn single_tensor_bits(mode: WireMode, d: u64, k: u64, q: u64) -> u64 {
    match mode {
        WireMode::MaskForm => k * q + d,
        WireMode::IndexForm => k * (q + ceil_log2(d)),
    }
}

/// Cheapest mode for a single sparse tensor; ties go to the mask form.
pub fn best_single_mode(d: u64, k: u64, q: u64) -> (WireMode, u64) {
    let mask = single_tensor_bits(WireMode::MaskForm, d, k, q);
    let index = single_tensor_bits(WireMode::IndexForm, d, k, q);
    if mask <= index {
        (WireMode::MaskForm, mask)
    } else {
        (WireMode::IndexForm, index)
    }
}

/// Sparsification ratio α to a concrete k: round(α·d), floored at 1.
pub fn k_from_alpha(alpha: f64, d: usize) -> Result<usize> {
    if !(alpha.is_finite() && alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::InvalidArgument {
            what: "alpha",
            why: format!("need 0 < α ≤ 1, got {alpha}"),
        });
    }
    Ok(((alpha * d as f64 + 0.5).floor() as usize).clamp(1, d))
}

const TAG_MASK_FORM: u8 = 0x00;
const TAG_INDEX_FORM: u8 = 0x01;

impl SparseUpdate {
    /// Canonical bytes: d and k as 8-byte little-endian counts, a 1-byte
    /// mode tag, the mask as packed bits (coordinate j at bit j%8 of
    /// byte j/8) or ascending 4-byte indices, then the W, M, V value
    /// lists as little-endian 64-bit reals.
    pub fn to_bytes(&self, mode: WireMode) -> Result<Vec<u8>> {
        let d = self.mask.dim();
        let k = self.mask.k();
        let mut out = Vec::new();
        out.extend_from_slice(&(d as u64).to_le_bytes());
        out.extend_from_slice(&(k as u64).to_le_bytes());
        match mode {
            WireMode::MaskForm => {
                out.push(TAG_MASK_FORM);
                let mut packed = vec![0u8; d.div_ceil(8)];
                for j in self.mask.indices() {
                    packed[j / 8] |= 1 << (j % 8);
                }
                out.extend_from_slice(&packed);
            }
            WireMode::IndexForm => {
                out.push(TAG_INDEX_FORM);
                if d > u32::MAX as usize {
                    return Err(Error::InvalidArgument {
                        what: "dimension",
                        why: format!("{d} exceeds 4-byte index range"),
                    });
                }
                for j in self.mask.indices() {
                    out.extend_from_slice(&(j as u32).to_le_bytes());
                }
            }
        }
        for vals in [&self.values_w, &self.values_m, &self.values_v] {
            for &v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(SparseUpdate, WireMode)> {
        let take = |buf: &[u8], at: usize, n: usize| -> Result<Vec<u8>> {
            buf.get(at..at + n)
                .map(<[u8]>::to_vec)
                .ok_or_else(|| Error::Decode("truncated update".into()))
        };
        let d = u64::from_le_bytes(take(bytes, 0, 8)?.try_into().unwrap()) as usize;
        let k = u64::from_le_bytes(take(bytes, 8, 8)?.try_into().unwrap()) as usize;
        if k < 1 || k > d {
            return Err(Error::Decode(format!("bad population count {k} for d={d}")));
        }
        let tag = *bytes.get(16).ok_or_else(|| Error::Decode("truncated update".into()))?;
        let mut at = 17;
        let (mode, mask) = match tag {
            TAG_MASK_FORM => {
                let packed = take(bytes, at, d.div_ceil(8))?;
                at += packed.len();
                let bits: Vec<bool> =
                    (0..d).map(|j| packed[j / 8] & (1 << (j % 8)) != 0).collect();
                let mask = SparseMask::new(bits)
                    .map_err(|_| Error::Decode("empty mask".into()))?;
                if mask.k() != k {
                    return Err(Error::Decode(format!(
                        "mask population {} does not match declared k={k}",
                        mask.k()
                    )));
                }
                (WireMode::MaskForm, mask)
            }
            TAG_INDEX_FORM => {
                let mut idxs = Vec::with_capacity(k);
                for _ in 0..k {
                    let raw = take(bytes, at, 4)?;
                    at += 4;
                    idxs.push(u32::from_le_bytes(raw.try_into().unwrap()) as usize);
                }
                if !idxs.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::Decode("indices not strictly ascending".into()));
                }
                let mask = SparseMask::from_indices(d, &idxs)
                    .map_err(|e| Error::Decode(e.to_string()))?;
                (WireMode::IndexForm, mask)
            }
            other => return Err(Error::Decode(format!("unknown mode tag {other:#04x}"))),
        };
        let mut lists = Vec::with_capacity(3);
        for _ in 0..3 {
            let mut vals = Vec::with_capacity(k);
            for _ in 0..k {
                let raw = take(bytes, at, 8)?;
                at += 8;
                vals.push(f64::from_le_bytes(raw.try_into().unwrap()));
            }
            lists.push(vals);
        }
        if at != bytes.len() {
            return Err(Error::Decode(format!(
                "{} trailing bytes after update",
                bytes.len() - at
            )));
        }
        let values_v = lists.pop().unwrap();
        let values_m = lists.pop().unwrap();
        let values_w = lists.pop().unwrap();
        Ok((
            SparseUpdate {
                mask,
                values_w,
                values_m,
                values_v,
            },
            mode,
        ))
    }
}
