//! Training data: synthetic Gaussian blobs, the IDX binary image format,
//! Dirichlet non-IID client partitioning, and mini-batch sampling.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::streams::{stream, Purpose};
use crate::{Error, Result};

/// A labelled dataset. Features are row-major n × d_in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub d_in: usize,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.d_in..(i + 1) * self.d_in]
    }

    /// Subset view materialized as an owned dataset, in the given index order.
    pub fn select(&self, idxs: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(idxs.len() * self.d_in);
        let mut labels = Vec::with_capacity(idxs.len());
        for &i in idxs {
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Dataset {
            features,
            d_in: self.d_in,
            labels,
            classes: self.classes,
        }
    }
}

/// Which samples each client owns. Assignment lists are sorted, pairwise
/// disjoint, cover 0..n exactly, and are never empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub assignments: Vec<Vec<usize>>,
}

impl Partition {
    pub fn n_clients(&self) -> usize {
        self.assignments.len()
    }

    pub fn client(&self, n: usize) -> &[usize] {
        &self.assignments[n]
    }

    /// Everything on one client.
    pub fn single(n: usize) -> Self {
        Partition {
            assignments: vec![(0..n).collect()],
        }
    }
}

/// Balanced IID split: within each class, samples are dealt to clients
/// round-robin, so every client sees (almost) the global label mix.
pub fn stratified_iid(labels: &[usize], n_clients: usize) -> Result<Partition> {
    if n_clients == 0 {
        return Err(Error::InvalidArgument {
            what: "n_clients",
            why: "must be ≥ 1".into(),
        });
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("stratified_iid labels"));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let mut assignments = vec![Vec::new(); n_clients];
    for c in 0..classes {
        for (j, i) in (0..labels.len()).filter(|&i| labels[i] == c).enumerate() {
            assignments[j % n_clients].push(i);
        }
    }
    if assignments.iter().any(|a| a.is_empty()) {
        return Err(Error::InvalidArgument {
            what: "n_clients",
            why: format!("{n_clients} clients for only {} samples", labels.len()),
        });
    }
    for a in &mut assignments {
        a.sort_unstable();
    }
    Ok(Partition { assignments })
}

/// Sample indices for one local epoch; all belong to one client's partition.
pub type Minibatch = Vec<usize>;

/// Gaussian blobs with unit isotropic noise, one blob per class, class
/// labels dealt round-robin. Class means sit on a circle in the first two
/// feature dimensions with radius chosen so adjacent means are exactly
/// `separation` apart (a line with spacing `separation` when d_in = 1).
pub fn generate_synthetic(
    n: usize,
    d_in: usize,
    classes: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 || n < classes {
        return Err(Error::InvalidArgument {
            what: "n/classes",
            why: format!("need n ≥ classes ≥ 2, got n={n}, classes={classes}"),
        });
    }
    if d_in < 1 {
        return Err(Error::InvalidArgument {
            what: "d_in",
            why: "must be ≥ 1".into(),
        });
    }
    if !(separation > 0.0) {
        return Err(Error::InvalidArgument {
            what: "separation",
            why: format!("must be > 0, got {separation}"),
        });
    }
    let mut means = vec![vec![0.0; d_in]; classes];
    if d_in == 1 {
        for (c, m) in means.iter_mut().enumerate() {
            m[0] = c as f64 * separation;
        }
    } else {
        let radius = separation / (2.0 * (std::f64::consts::PI / classes as f64).sin());
        for (c, m) in means.iter_mut().enumerate() {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / classes as f64;
            m[0] = radius * angle.cos();
            m[1] = radius * angle.sin();
        }
    }
    let mut rng = stream(seed, Purpose::Data, 0, 0);
    let mut features = Vec::with_capacity(n * d_in);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        for &mean in &means[c] {
            let noise: f64 = StandardNormal.sample(&mut rng);
            features.push(mean + noise);
        }
        labels.push(c);
    }
    Ok(Dataset {
        features,
        d_in,
        labels,
        classes,
    })
}

/// Parses an IDX-format byte buffer holding unsigned bytes. Returns the
/// declared dimensions and the payload.
pub fn parse_idx(bytes: &[u8]) -> Result<(Vec<usize>, Vec<u8>)> {
    if bytes.len() < 4 {
        return Err(Error::Idx(format!("header needs 4 bytes, got {}", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx(format!(
            "bad magic {:02x} {:02x}, expected 00 00",
            bytes[0], bytes[1]
        )));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Idx(format!(
            "unsupported element type 0x{:02x}, only 0x08 (unsigned byte)",
            bytes[2]
        )));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Idx("zero dimensions".into()));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Idx(format!(
            "truncated dimension table: need {header} bytes, got {}",
            bytes.len()
        )));
    }
    let mut dims = Vec::with_capacity(ndims);
    let mut total = 1usize;
    for i in 0..ndims {
        let off = 4 + 4 * i;
        let dim = u32::from_be_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        total = total.checked_mul(dim).ok_or_else(|| {
            Error::Idx("dimension product overflows".into())
        })?;
        dims.push(dim);
    }
    let payload = &bytes[header..];
    if payload.len() != total {
        return Err(Error::Idx(format!(
            "payload length {} does not match declared {} elements",
            payload.len(),
            total
        )));
    }
    Ok((dims, payload.to_vec()))
}

/// Serializes dimensions and unsigned-byte payload into IDX bytes.
/// Inverse of [`parse_idx`].
pub fn serialize_idx(dims: &[usize], data: &[u8]) -> Result<Vec<u8>> {
    if dims.is_empty() || dims.len() > 255 {
        return Err(Error::Idx(format!("dimension count {} out of range", dims.len())));
    }
    let total: usize = dims.iter().product();
    if total != data.len() {
        return Err(Error::Idx(format!(
            "data length {} does not match dims product {total}",
            data.len()
        )));
    }
    let mut out = vec![0u8, 0u8, 0x08, dims.len() as u8];
    for &d in dims {
        let d32 = u32::try_from(d)
            .map_err(|_| Error::Idx(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d32.to_be_bytes());
    }
    out.extend_from_slice(data);
    Ok(out)
}

/// Builds a dataset from IDX image and label buffers. Image dims must be
/// [n, ...] with the trailing dims flattened to the feature width; byte
/// values are scaled to [0, 1].
pub fn dataset_from_idx(images: &[u8], labels: &[u8]) -> Result<Dataset> {
    let (img_dims, img_data) = parse_idx(images)?;
    let (lab_dims, lab_data) = parse_idx(labels)?;
    if lab_dims.len() != 1 {
        return Err(Error::Idx(format!(
            "label file must be 1-dimensional, got {} dims",
            lab_dims.len()
        )));
    }
    let n = lab_dims[0];
    if img_dims.is_empty() || img_dims[0] != n {
        return Err(Error::Idx(format!(
            "image count {:?} does not match label count {n}",
            img_dims.first()
        )));
    }
    let d_in: usize = img_dims[1..].iter().product::<usize>().max(1);
    let features = img_data.iter().map(|&b| b as f64 / 255.0).collect();
    let labels: Vec<usize> = lab_data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().unwrap_or(0) + 1;
    Ok(Dataset {
        features,
        d_in,
        labels,
        classes,
    })
}

/// Splits samples across clients with one Dirichlet(θ) proportion draw per
/// class. Smaller θ concentrates each class on fewer clients. If a draw
/// leaves any client empty the whole partition is redrawn with seed+1, up
/// to 100 attempts.
pub fn dirichlet_partition(
    labels: &[usize],
    n_clients: usize,
    theta: f64,
    seed: u64,
) -> Result<Partition> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("dirichlet_partition labels"));
    }
    if n_clients < 1 {
        return Err(Error::InvalidArgument {
            what: "n_clients",
            why: "must be ≥ 1".into(),
        });
    }
    if !(theta > 0.0) {
        return Err(Error::InvalidArgument {
            what: "theta",
            why: format!("must be > 0, got {theta}"),
        });
    }
    let classes = labels.iter().copied().max().unwrap() + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &c) in labels.iter().enumerate() {
        by_class[c].push(i);
    }
    for attempt in 0..100u64 {
        let mut rng = stream(seed.wrapping_add(attempt), Purpose::Partition, 0, 0);
        let mut assignments: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        for idxs in &by_class {
            if idxs.is_empty() {
                continue;
            }
            let props = dirichlet_draw(&mut rng, theta, n_clients);
            // round cumulative proportions to whole samples so counts add
            // up to the class total exactly
            let count = idxs.len() as f64;
            let mut cum = 0.0;
            let mut prev = 0usize;
            for (client, p) in props.iter().enumerate() {
                cum += p;
                let upto = if client + 1 == n_clients {
                    idxs.len()
                } else {
                    ((cum * count + 0.5).floor() as usize).min(idxs.len())
                };
                assignments[client].extend_from_slice(&idxs[prev..upto.max(prev)]);
                prev = prev.max(upto);
            }
        }
        if assignments.iter().all(|a| !a.is_empty()) {
            for a in &mut assignments {
                a.sort_unstable();
            }
            return Ok(Partition { assignments });
        }
    }
    Err(Error::InvalidArgument {
        what: "dirichlet_partition",
        why: format!(
            "no draw in 100 attempts gave every one of {n_clients} clients a sample"
        ),
    })
}

fn dirichlet_draw(rng: &mut ChaCha8Rng, theta: f64, n: usize) -> Vec<f64> {
    // normalized Gamma(θ, 1) draws; rand_distr's Dirichlet needs the
    // dimension at compile time, so use its own underlying construction
    let gamma = Gamma::new(theta, 1.0).expect("theta validated positive");
    loop {
        let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        let total: f64 = draws.iter().sum();
        if total > 0.0 && total.is_finite() {
            return draws.iter().map(|g| g / total).collect();
        }
        // all-zero underflow is possible for tiny θ; redraw
    }
}

/// Draws `batch_size` of the client's sample indices uniformly without
/// replacement.
pub fn sample_minibatch(
    partition: &Partition,
    client: usize,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Minibatch> {
    let own = partition.client(client);
    if batch_size > own.len() {
        return Err(Error::InvalidArgument {
            what: "batch_size",
            why: format!("{batch_size} exceeds client partition size {}", own.len()),
        });
    }
    let chosen = rand::seq::index::sample(rng, own.len(), batch_size);
    let mut picks: Vec<usize> = chosen.iter().map(|i| own[i]).collect();
    picks.sort_unstable();
    Ok(picks)
}
