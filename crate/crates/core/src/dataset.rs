//! Image datasets: IDX parsing, synthetic oracle data and client partitions.
//!
//! Pixels stay as raw `u8` gray levels here. Scaling to `[0, 1]` happens only
//! at the classifier input in [`crate::fedsim`].

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const IDX_DTYPE_U8: u8 = 0x08;

/// A parsed IDX tensor of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn new(dims: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "dims {dims:?} imply {expected} values, got {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::invalid("IDX supports at most 255 dimensions"));
        }
        Ok(Self { dims, data })
    }

    /// Serialize back to the IDX byte layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len());
        out.extend_from_slice(&[0, 0, IDX_DTYPE_U8, self.dims.len() as u8]);
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.data);
        out
    }
}

/// Parse an IDX byte stream. Only the unsigned-byte dtype is accepted.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let err = |offset: usize, reason: String| Error::Idx { offset, reason };
    if bytes.len() < 4 {
        return Err(err(
            bytes.len(),
            format!("need 4 magic bytes, stream has {}", bytes.len()),
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(err(
            0,
            format!(
                "magic must start with 0x00 0x00, found 0x{:02X} 0x{:02X}",
                bytes[0], bytes[1]
            ),
        ));
    }
    if bytes[2] != IDX_DTYPE_U8 {
        return Err(err(
            2,
            format!("unsupported dtype 0x{:02X} (only 0x08 unsigned byte)", bytes[2]),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(err(3, "zero dimensions".into()));
    }
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(err(
            bytes.len(),
            format!("header declares {ndims} dimensions but is truncated"),
        ));
    }
    let mut dims = Vec::with_capacity(ndims);
    let mut total: usize = 1;
    for i in 0..ndims {
        let at = 4 + 4 * i;
        let d = u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize;
        total = total
            .checked_mul(d)
            .ok_or_else(|| err(at, "dimension product overflows".into()))?;
        dims.push(d);
    }
    let payload = &bytes[header_len..];
    if payload.len() < total {
        return Err(err(
            bytes.len(),
            format!(
                "payload truncated: dims {dims:?} need {total} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > total {
        return Err(err(
            header_len + total,
            format!("{} trailing bytes after payload", payload.len() - total),
        ));
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

/// `N_s` grayscale images stored row-major as flat feature rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageDataset {
    pixels: Vec<u8>,
    labels: Vec<u32>,
    n_classes: usize,
    width: usize,
    height: usize,
}

impl ImageDataset {
    pub fn new(
        pixels: Vec<u8>,
        labels: Vec<u32>,
        n_classes: usize,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let n_features = width * height;
        if n_features == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if labels.is_empty() {
            return Err(Error::invalid("dataset needs at least one sample"));
        }
        if pixels.len() != labels.len() * n_features {
            return Err(Error::DimensionMismatch(format!(
                "{} labels of {n_features} features need {} pixels, got {}",
                labels.len(),
                labels.len() * n_features,
                pixels.len()
            )));
        }
        if n_classes == 0 {
            return Err(Error::invalid("n_classes must be positive"));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= n_classes)
        {
            return Err(Error::invalid(format!(
                "label {l} at sample {i} is outside 0..{n_classes}"
            )));
        }
        Ok(Self {
            pixels,
            labels,
            n_classes,
            width,
            height,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.width * self.height
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let d = self.n_features();
        &self.pixels[i * d..(i + 1) * d]
    }

    pub fn images(&self) -> impl ExactSizeIterator<Item = &[u8]> + '_ {
        self.pixels.chunks_exact(self.n_features())
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let d = self.n_features();
        let mut pixels = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n_samples() {
                return Err(Error::invalid(format!(
                    "sample index {i} out of range for {} samples",
                    self.n_samples()
                )));
            }
            pixels.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        Self::new(pixels, labels, self.n_classes, self.width, self.height)
    }

    /// A seeded uniform subsample without replacement. Returns a clone when
    /// `n >= n_samples`.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if n >= self.n_samples() {
            return Ok(self.clone());
        }
        let idx = sample_indices(self.n_samples(), n, seed);
        self.select(&idx)
    }

    /// Per-class sample counts.
    pub fn label_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.n_classes];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

/// `n` distinct indices from `0..population`, sorted ascending.
pub(crate) fn sample_indices(population: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng::seeded(seed);
    let mut idx = rand::seq::index::sample(&mut rng, population, n.min(population)).into_vec();
    idx.sort_unstable();
    idx
}

/// Build a dataset from parsed image and label tensors.
///
/// The image tensor must be `[N, rows, cols]` or `[N, features]`. `N_C`
/// defaults to `1 + max(label)`.
pub fn dataset_from_tensors(
    images: &IdxTensor,
    labels: &IdxTensor,
    n_classes: Option<usize>,
) -> Result<ImageDataset> {
    if labels.dims.len() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "labels must be 1-D, got dims {:?}",
            labels.dims
        )));
    }
    let (height, width) = match images.dims.as_slice() {
        [_, h, w] => (*h, *w),
        [_, d] => (1, *d),
        other => {
            return Err(Error::DimensionMismatch(format!(
                "images must be [N, rows, cols] or [N, features], got {other:?}"
            )))
        }
    };
    if images.dims[0] != labels.dims[0] {
        return Err(Error::DimensionMismatch(format!(
            "{} images but {} labels",
            images.dims[0], labels.dims[0]
        )));
    }
    let labels: Vec<u32> = labels.data.iter().map(|&l| l as u32).collect();
    let max_label = labels.iter().copied().max().unwrap_or(0) as usize;
    let n_classes = n_classes.unwrap_or(max_label + 1);
    ImageDataset::new(images.data.clone(), labels, n_classes, width, height)
}

/// Load an image/label IDX pair from disk.
pub fn load_dataset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    n_classes: Option<usize>,
) -> Result<ImageDataset> {
    let read = |p: &Path| -> Result<IdxTensor> {
        let bytes = std::fs::read(p).map_err(|e| Error::file(p, e))?;
        parse_idx(&bytes).map_err(|e| match e {
            Error::Idx { offset, reason } => Error::Idx {
                offset,
                reason: format!("{}: {reason}", p.display()),
            },
            other => other,
        })
    };
    let images = read(images_path.as_ref())?;
    let labels = read(labels_path.as_ref())?;
    dataset_from_tensors(&images, &labels, n_classes)
}

/// How samples are split across federated clients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PartitionScheme {
    /// Shuffled equal split; sizes differ by at most one.
    IidEqual,
    /// Sort by label, cut into `n_clients * shards_per_client` contiguous
    /// shards and deal them round-robin.
    LabelShard { shards_per_client: usize },
    /// Per-class client proportions drawn from `Dirichlet(alpha)`.
    Dirichlet { alpha: f64 },
}

impl Default for PartitionScheme {
    fn default() -> Self {
        PartitionScheme::Dirichlet { alpha: 0.5 }
    }
}

impl fmt::Display for PartitionScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartitionScheme::IidEqual => write!(f, "iid"),
            PartitionScheme::LabelShard { shards_per_client } => {
                write!(f, "label-shard:{shards_per_client}")
            }
            PartitionScheme::Dirichlet { alpha } => write!(f, "dirichlet:{alpha}"),
        }
    }
}

impl FromStr for PartitionScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let bad = |why: &str| Error::invalid(format!("partition scheme `{s}`: {why}"));
        match (name, arg) {
            ("iid" | "iid-equal", None) => Ok(PartitionScheme::IidEqual),
            ("label-shard", arg) => {
                let shards_per_client = match arg {
                    Some(a) => a.parse().map_err(|_| bad("shard count must be an integer"))?,
                    None => 1,
                };
                if shards_per_client == 0 {
                    return Err(bad("shard count must be positive"));
                }
                Ok(PartitionScheme::LabelShard { shards_per_client })
            }
            ("dirichlet", Some(a)) => {
                let alpha: f64 = a.parse().map_err(|_| bad("alpha must be a number"))?;
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(bad("alpha must be positive"));
                }
                Ok(PartitionScheme::Dirichlet { alpha })
            }
            ("dirichlet", None) => Ok(PartitionScheme::default()),
            _ => Err(bad("expected iid, label-shard[:s] or dirichlet[:alpha]")),
        }
    }
}

impl TryFrom<String> for PartitionScheme {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PartitionScheme> for String {
    fn from(s: PartitionScheme) -> String {
        s.to_string()
    }
}

/// One dataset per client id, plus how it was produced.
#[derive(Debug, Clone)]
pub struct ClientPartition {
    pub clients: Vec<ImageDataset>,
    /// Source sample indices held by each client.
    pub assignments: Vec<Vec<usize>>,
    pub scheme: PartitionScheme,
    pub seed: u64,
}

impl ClientPartition {
    pub fn n_clients(&self) -> usize {
        self.clients.len()
    }
}

/// Split `ds` across `n_clients`. Deterministic for a fixed `(scheme, seed)`.
pub fn partition_clients(
    ds: &ImageDataset,
    n_clients: usize,
    scheme: PartitionScheme,
    seed: u64,
) -> Result<ClientPartition> {
    let n = ds.n_samples();
    if n_clients == 0 {
        return Err(Error::invalid("n_clients must be at least 1"));
    }
    if n_clients > n {
        return Err(Error::invalid(format!(
            "{n_clients} clients requested but only {n} samples"
        )));
    }
    let assignments = match scheme {
        PartitionScheme::IidEqual => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng::seeded(seed));
            split_contiguous(&idx, n_clients)
        }
        PartitionScheme::LabelShard { shards_per_client } => {
            if shards_per_client == 0 {
                return Err(Error::invalid("shards_per_client must be positive"));
            }
            let n_shards = n_clients * shards_per_client;
            if n_shards > n {
                return Err(Error::invalid(format!(
                    "{n_shards} shards requested but only {n} samples"
                )));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by_key(|&i| (ds.labels[i], i));
            let shards = split_contiguous(&idx, n_shards);
            let mut out = vec![Vec::new(); n_clients];
            for (s, shard) in shards.into_iter().enumerate() {
                out[s % n_clients].extend(shard);
            }
            out
        }
        PartitionScheme::Dirichlet { alpha } => dirichlet_split(ds, n_clients, alpha, seed)?,
    };
    let clients = assignments
        .iter()
        .map(|a| ds.select(a))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClientPartition {
        clients,
        assignments,
        scheme,
        seed,
    })
}

/// Split into `parts` contiguous runs; the first `len % parts` runs get one extra.
fn split_contiguous(items: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let base = items.len() / parts;
    let extra = items.len() % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(items[start..start + len].to_vec());
        start += len;
    }
    out
}

fn dirichlet_split(
    ds: &ImageDataset,
    n_clients: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    const MAX_ATTEMPTS: usize = 1000;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid(format!("dirichlet alpha must be positive, got {alpha}")));
    }
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.n_classes()];
    for (i, &l) in ds.labels.iter().enumerate() {
        by_class[l as usize].push(i);
    }
    let mut rng = rng::seeded(seed);
    for _ in 0..MAX_ATTEMPTS {
        let mut out = vec![Vec::new(); n_clients];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut members = members.clone();
            members.shuffle(&mut rng);
            let mut weights: Vec<f64> = (0..n_clients).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = weights.iter().sum();
            if total <= 0.0 {
                // every draw underflowed; fall back to a single random owner
                weights.iter_mut().for_each(|w| *w = 0.0);
                weights[rng.random_range(0..n_clients)] = 1.0;
            }
            let total: f64 = weights.iter().sum();
            let m = members.len();
            let mut start = 0;
            let mut acc = 0.0;
            for (c, w) in weights.iter().enumerate() {
                acc += w / total;
                let end = if c + 1 == n_clients {
                    m
                } else {
                    ((acc * m as f64).round() as usize).clamp(start, m)
                };
                out[c].extend_from_slice(&members[start..end]);
                start = end;
            }
        }
        if out.iter().all(|c| !c.is_empty()) {
            for c in &mut out {
                c.sort_unstable();
            }
            return Ok(out);
        }
    }
    Err(Error::invalid(format!(
        "dirichlet(alpha={alpha}) left a client empty after {MAX_ATTEMPTS} draws"
    )))
}

/// Synthetic generators with known ground truth, for validating estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    /// Uniform points in a `dim`-dimensional axis-aligned cube spanning
    /// 0..=255 on the first `dim` features; all other features are zero.
    UniformCube { dim: usize },
    /// Points in an exactly `rank`-dimensional linear subspace.
    RankR { rank: usize },
    /// Every pixel of every image has `value`.
    Constant { value: u8 },
    /// Each image holds exactly two gray levels (0 and 255) in equal halves.
    TwoLevel,
}

/// Generate `n` single-row images of `n_features` pixels, all labelled 0.
pub fn make_synthetic(
    kind: SyntheticKind,
    n: usize,
    n_features: usize,
    seed: u64,
) -> Result<ImageDataset> {
    if n == 0 || n_features == 0 {
        return Err(Error::invalid("n and n_features must be positive"));
    }
    let mut rng = rng::seeded(seed);
    let mut pixels = vec![0u8; n * n_features];
    match kind {
        SyntheticKind::UniformCube { dim } => {
            if dim == 0 || dim > n_features {
                return Err(Error::invalid(format!(
                    "cube dimension {dim} must be in 1..={n_features}"
                )));
            }
            for row in pixels.chunks_exact_mut(n_features) {
                for p in &mut row[..dim] {
                    *p = rng.random();
                }
            }
        }
        SyntheticKind::RankR { rank } => {
            if rank == 0 || rank > n_features {
                return Err(Error::invalid(format!(
                    "rank {rank} must be in 1..={n_features}"
                )));
            }
            // Basis vector k is 1 at feature k plus random bits beyond the
            // first `rank` features, so the basis is independent by construction.
            let basis: Vec<Vec<u8>> = (0..rank)
                .map(|k| {
                    (0..n_features)
                        .map(|j| u8::from(j == k || (j >= rank && rng.random_bool(0.5))))
                        .collect()
                })
                .collect();
            let cmax = (255 / rank) as u8;
            for (i, row) in pixels.chunks_exact_mut(n_features).enumerate() {
                // row 0 is the origin and row k+1 the scaled k-th basis vector,
                // which pins the centered rank to `rank` once n > rank
                let coeffs: Vec<u8> = (0..rank)
                    .map(|k| match i {
                        0 => 0,
                        i if i <= rank => {
                            if k + 1 == i {
                                cmax
                            } else {
                                0
                            }
                        }
                        _ => rng.random_range(0..=cmax),
                    })
                    .collect();
                for (j, p) in row.iter_mut().enumerate() {
                    *p = coeffs
                        .iter()
                        .zip(&basis)
                        .map(|(&c, b)| c * b[j])
                        .sum();
                }
            }
        }
        SyntheticKind::Constant { value } => pixels.fill(value),
        SyntheticKind::TwoLevel => {
            if !n_features.is_multiple_of(2) {
                return Err(Error::invalid(
                    "two-level images need an even number of features",
                ));
            }
            let mut template: Vec<u8> = (0..n_features)
                .map(|j| if j < n_features / 2 { 0 } else { 255 })
                .collect();
            for row in pixels.chunks_exact_mut(n_features) {
                template.shuffle(&mut rng);
                row.copy_from_slice(&template);
            }
        }
    }
    ImageDataset::new(pixels, vec![0; n], 1, n_features, 1)
}
