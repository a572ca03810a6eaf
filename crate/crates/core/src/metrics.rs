//! Classifier-agnostic complexity measures of an image dataset.
//!
//! | measure | function |
//! |---|---|
//! | heterogeneity | [`mean_image_entropy`] (bits, per image, averaged) |
//! | environment complexity | [`variance_filtered_features`], [`ec_upper`] |
//! | sparsity | [`pca_sparsity`] (`N_d - c` at an explained-variance ratio) |
//! | intrinsic dimensionality | [`intrinsic_dimension_mle`] |
//! | manifold diagnostic | [`isomap_residual`] |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::ImageDataset;
use crate::error::{Error, Result};
use crate::kernels::{self, covariance_spectrum, knn, pairwise_sum, Points, Spectrum};

pub const GRAY_LEVELS: usize = 256;

/// Shannon entropy (bits) of one image's gray-level histogram.
pub fn image_entropy(image: &[u8], bins: usize) -> f64 {
    let mut hist = [0usize; GRAY_LEVELS];
    for &p in image {
        hist[p as usize * bins / GRAY_LEVELS] += 1;
    }
    entropy_bits(&hist[..bins], image.len())
}

fn entropy_bits(hist: &[usize], total: usize) -> f64 {
    let total = total as f64;
    -hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / total;
            p * p.log2()
        })
        .sum::<f64>()
}

fn check_bins(bins: usize) -> Result<()> {
    if bins == 0 || bins > GRAY_LEVELS {
        return Err(Error::invalid(format!("entropy bins must be in 1..=256, got {bins}")));
    }
    Ok(())
}

/// Mean over images of the per-image gray-level entropy, 256 bins.
pub fn mean_image_entropy(ds: &ImageDataset) -> f64 {
    mean_image_entropy_binned(ds, GRAY_LEVELS).expect("256 bins is valid")
}

pub fn mean_image_entropy_binned(ds: &ImageDataset, bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let per_image: Vec<f64> = ds
        .pixels()
        .par_chunks_exact(ds.n_features())
        .map(|img| image_entropy(img, bins))
        .collect();
    Ok(pairwise_sum(&per_image) / per_image.len() as f64)
}

/// Entropy of the gray-level histogram pooled over every pixel of the dataset.
pub fn pooled_entropy(ds: &ImageDataset) -> f64 {
    let mut hist = [0usize; GRAY_LEVELS];
    for &p in ds.pixels() {
        hist[p as usize] += 1;
    }
    entropy_bits(&hist, ds.pixels().len())
}

/// Exact per-feature first and second moments on integer pixels.
struct FeatureMoments {
    n: u128,
    sum: Vec<u128>,
    sum_sq: Vec<u128>,
}

impl FeatureMoments {
    fn of(ds: &ImageDataset) -> Self {
        let d = ds.n_features();
        let mut sum = vec![0u64; d];
        let mut sum_sq = vec![0u64; d];
        for img in ds.images() {
            for (j, &p) in img.iter().enumerate() {
                sum[j] += p as u64;
                sum_sq[j] += (p as u64) * (p as u64);
            }
        }
        Self {
            n: ds.n_samples() as u128,
            sum: sum.into_iter().map(u128::from).collect(),
            sum_sq: sum_sq.into_iter().map(u128::from).collect(),
        }
    }

    /// `n * (n - 1) * var_j`, an exact integer.
    fn scaled_variance(&self, j: usize) -> u128 {
        self.n * self.sum_sq[j] - self.sum[j] * self.sum[j]
    }

    fn variance(&self, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        self.scaled_variance(j) as f64 / (self.n * (self.n - 1)) as f64
    }

    fn exceeds(&self, j: usize, v_theta: f64) -> bool {
        if self.n < 2 {
            return false;
        }
        self.scaled_variance(j) as f64 > v_theta * (self.n * (self.n - 1)) as f64
    }
}

/// Sample variance (divisor `n - 1`) of every pixel; zeros for a single sample.
pub fn feature_variances(ds: &ImageDataset) -> Vec<f64> {
    let m = FeatureMoments::of(ds);
    (0..ds.n_features()).map(|j| m.variance(j)).collect()
}

fn check_threshold(v_theta: f64) -> Result<()> {
    if !(v_theta >= 0.0 && v_theta.is_finite()) {
        return Err(Error::invalid(format!(
            "variance threshold must be finite and >= 0, got {v_theta}"
        )));
    }
    Ok(())
}

/// `N_d^r`: features whose sample variance strictly exceeds `v_theta`
/// (raw 0-255 scale). Comparison is exact on integer moments.
pub fn variance_filtered_features(ds: &ImageDataset, v_theta: f64) -> Result<usize> {
    check_threshold(v_theta)?;
    let m = FeatureMoments::of(ds);
    Ok((0..ds.n_features()).filter(|&j| m.exceeds(j, v_theta)).count())
}

/// `N_s * N_d^r + N_C`.
pub fn ec_upper_from_counts(n_samples: usize, retained_features: usize, n_classes: usize) -> u64 {
    n_samples as u64 * retained_features as u64 + n_classes as u64
}

pub fn ec_upper(ds: &ImageDataset, v_theta: f64) -> Result<u64> {
    let retained = variance_filtered_features(ds, v_theta)?;
    Ok(ec_upper_from_counts(ds.n_samples(), retained, ds.n_classes()))
}

/// PCA sparsity at one explained-variance ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparsityEntry {
    pub ratio: f64,
    /// Components needed to reach `ratio`.
    pub components: usize,
    /// `N_d - components`.
    pub discarded: usize,
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!(
            "explained-variance ratio must be in (0, 1), got {ratio}"
        )));
    }
    Ok(())
}

pub fn sparsity_from_spectrum(
    spectrum: &Spectrum,
    n_features: usize,
    ratio: f64,
) -> Result<SparsityEntry> {
    check_ratio(ratio)?;
    let components = spectrum.components_for(ratio);
    Ok(SparsityEntry {
        ratio,
        components,
        discarded: n_features - components,
    })
}

fn dataset_spectrum(ds: &ImageDataset, subsample: Option<usize>, seed: u64) -> Result<Spectrum> {
    let sub;
    let ds = match subsample {
        Some(n) if n < ds.n_samples() => {
            sub = ds.subsample(n, seed)?;
            &sub
        }
        _ => ds,
    };
    if ds.n_samples() < 2 {
        return Ok(Spectrum {
            eigenvalues: vec![0.0; ds.n_features()],
            total_variance: 0.0,
        });
    }
    covariance_spectrum(ds)
}

/// Dimensions discardable while keeping `ratio` of the variance.
pub fn pca_sparsity(
    ds: &ImageDataset,
    ratio: f64,
    subsample: Option<usize>,
    seed: u64,
) -> Result<SparsityEntry> {
    check_ratio(ratio)?;
    let spectrum = dataset_spectrum(ds, subsample, seed)?;
    sparsity_from_spectrum(&spectrum, ds.n_features(), ratio)
}

/// Parameters of the nearest-neighbor MLE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdParams {
    pub k_min: usize,
    pub k_max: usize,
    /// Points drawn per estimate (capped at the dataset size).
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IdParams {
    fn default() -> Self {
        Self {
            k_min: 10,
            k_max: 20,
            subsample: 5000,
            seed: 0,
        }
    }
}

/// MLE result with the per-k breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct MleEstimate {
    pub dimension: f64,
    pub per_k: Vec<(usize, f64)>,
    /// `log(T_k / T_j)` terms dropped because `T_j = 0`.
    pub skipped_terms: usize,
    /// (point, k) pairs dropped because no finite estimate was possible.
    pub skipped_points: usize,
}

/// Nearest-neighbor MLE of intrinsic dimension, averaged over points and then
/// over `k in k_min..=k_max`.
///
/// For point `x`: `m_k(x) = [ (1/(k-1)) * sum_{j<k} log(T_k(x) / T_j(x)) ]^-1`.
/// Duplicate neighbors (`T_j = 0`) drop out of the sum; a point whose `T_k`
/// is zero, or whose sum is zero, is skipped for that `k`.
pub fn mle_intrinsic_dimension(points: &Points, k_min: usize, k_max: usize) -> Result<MleEstimate> {
    if k_min < 2 || k_max < k_min {
        return Err(Error::invalid(format!(
            "need 2 <= k_min <= k_max, got k_min={k_min} k_max={k_max}"
        )));
    }
    if k_max >= points.len() {
        return Err(Error::invalid(format!(
            "k_max={k_max} must be below the point count {}",
            points.len()
        )));
    }
    let table = knn(points, k_max)?;
    let n = table.len();
    let mut per_k = Vec::new();
    let mut skipped_terms = 0;
    let mut skipped_points = 0;
    for k in k_min..=k_max {
        let mut estimates = Vec::with_capacity(n);
        for i in 0..n {
            let t = table.distances(i);
            let tk = t[k - 1];
            if tk <= 0.0 {
                skipped_points += 1;
                continue;
            }
            let mut sum = 0.0;
            let mut count = 0usize;
            for &tj in &t[..k - 1] {
                if tj > 0.0 {
                    sum += (tk / tj).ln();
                    count += 1;
                } else {
                    skipped_terms += 1;
                }
            }
            if count == 0 || sum <= 0.0 {
                skipped_points += 1;
                continue;
            }
            estimates.push(count as f64 / sum);
        }
        if !estimates.is_empty() {
            per_k.push((k, pairwise_sum(&estimates) / estimates.len() as f64));
        }
    }
    if per_k.is_empty() {
        return Err(Error::UndefinedEstimate(
            "every neighbor distance is zero (all points identical?)".into(),
        ));
    }
    if skipped_terms > 0 || skipped_points > 0 {
        log::warn!(
            "MLE skipped {skipped_terms} zero-distance terms and {skipped_points} point estimates"
        );
    }
    let values: Vec<f64> = per_k.iter().map(|&(_, m)| m).collect();
    Ok(MleEstimate {
        dimension: pairwise_sum(&values) / values.len() as f64,
        per_k,
        skipped_terms,
        skipped_points,
    })
}

pub fn intrinsic_dimension_mle(ds: &ImageDataset, params: &IdParams) -> Result<f64> {
    let sub = ds.subsample(params.subsample, params.seed)?;
    let points = Points::from_dataset(&sub);
    Ok(mle_intrinsic_dimension(&points, params.k_min, params.k_max)?.dimension)
}

/// Isomap residual variance at one embedding dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsomapResidual {
    pub dim: usize,
    pub residual: f64,
}

/// Isomap: k-NN geodesics, classical MDS, and `1 - r^2` between geodesic
/// and embedded distances for each requested dimension.
pub fn isomap_residuals(points: &Points, k: usize, dims: &[usize]) -> Result<Vec<IsomapResidual>> {
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::invalid("target dimensions must be a non-empty list of positive sizes"));
    }
    let table = knn(points, k)?;
    let geo = kernels::graph_geodesics(&table, true)?;
    let n = geo.nrows();
    let sq = geo.map(|v| v * v);
    let row_mean: Vec<f64> = (0..n).map(|i| sq.row(i).sum() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (sq[(i, j)] - row_mean[i] - row_mean[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));

    let max_dim = *dims.iter().max().expect("non-empty");
    let mut pairs_geo = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            pairs_geo.push(geo[(i, j)]);
        }
    }
    let mut emb_sq = vec![0.0; pairs_geo.len()];
    let mut by_dim = BTreeMap::new();
    for (p, &col) in order.iter().take(max_dim).enumerate() {
        let lambda = eig.eigenvalues[col];
        if lambda > 0.0 {
            let scale = lambda.sqrt();
            let y: Vec<f64> = (0..n).map(|i| eig.eigenvectors[(i, col)] * scale).collect();
            let mut t = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = y[i] - y[j];
                    emb_sq[t] += d * d;
                    t += 1;
                }
            }
        }
        if dims.contains(&(p + 1)) {
            let emb: Vec<f64> = emb_sq.iter().map(|v| v.sqrt()).collect();
            let r2 = kernels::linfit(&pairs_geo, &emb).map(|f| f.r_squared).unwrap_or(0.0);
            by_dim.insert(p + 1, 1.0 - r2);
        }
    }
    // dimensions beyond n reuse the full embedding
    let last = by_dim.values().last().copied().unwrap_or(1.0);
    Ok(dims
        .iter()
        .map(|&dim| IsomapResidual {
            dim,
            residual: by_dim.get(&dim).copied().unwrap_or(last),
        })
        .collect())
}

pub fn isomap_residual(
    ds: &ImageDataset,
    k: usize,
    dims: &[usize],
    subsample: usize,
    seed: u64,
) -> Result<Vec<IsomapResidual>> {
    let sub = ds.subsample(subsample, seed)?;
    isomap_residuals(&Points::from_dataset(&sub), k, dims)
}

/// Isomap settings for [`profile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IsomapParams {
    pub k: usize,
    pub dims: Vec<usize>,
    pub subsample: usize,
    pub seed: u64,
}

impl Default for IsomapParams {
    fn default() -> Self {
        Self {
            k: 10,
            dims: (1..=15).collect(),
            subsample: 1000,
            seed: 0,
        }
    }
}

/// Everything [`profile`] needs; every field is echoed into the profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    pub entropy_bins: usize,
    pub sparsity_ratios: Vec<f64>,
    pub variance_thresholds: Vec<f64>,
    /// `None` runs PCA on every sample.
    pub pca_subsample: Option<usize>,
    pub pca_seed: u64,
    pub id_k_min: usize,
    pub id_k_max: usize,
    pub id_subsample: usize,
    /// One MLE per seed; the profile reports their mean.
    pub id_seeds: Vec<u64>,
    pub isomap: Option<IsomapParams>,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            entropy_bins: GRAY_LEVELS,
            sparsity_ratios: vec![0.80, 0.95],
            variance_thresholds: vec![0.0, 90.0],
            pca_subsample: None,
            pca_seed: 0,
            id_k_min: 10,
            id_k_max: 20,
            id_subsample: 5000,
            id_seeds: vec![0, 1, 2],
            isomap: None,
        }
    }
}

impl ProfileConfig {
    pub fn validate(&self) -> Result<()> {
        check_bins(self.entropy_bins)?;
        self.sparsity_ratios.iter().try_for_each(|&r| check_ratio(r))?;
        self.variance_thresholds.iter().try_for_each(|&v| check_threshold(v))?;
        if self.id_k_min < 2 || self.id_k_max < self.id_k_min {
            return Err(Error::invalid("need 2 <= id_k_min <= id_k_max"));
        }
        if self.id_seeds.is_empty() {
            return Err(Error::invalid("id_seeds must not be empty"));
        }
        Ok(())
    }

    fn id_params(&self, seed: u64) -> IdParams {
        IdParams {
            k_min: self.id_k_min,
            k_max: self.id_k_max,
            subsample: self.id_subsample,
            seed,
        }
    }
}

/// Retained-feature count and `EC_upper` at one variance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcEntry {
    pub v_theta: f64,
    pub features: usize,
    pub ec_upper: u64,
}

/// The complexity profile of one dataset.
///
/// Serializes to a flat key-value JSON object; see [`ComplexityProfile::to_flat`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "BTreeMap<String, Value>", try_from = "BTreeMap<String, Value>")]
pub struct ComplexityProfile {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub heterogeneity_bits: f64,
    pub sparsity: Vec<SparsityEntry>,
    pub ec: Vec<EcEntry>,
    pub intrinsic_dim: f64,
    pub intrinsic_dim_per_seed: Vec<f64>,
    pub isomap: Option<Vec<IsomapResidual>>,
    pub params: ProfileConfig,
}

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

impl ComplexityProfile {
    pub fn sparsity_at(&self, ratio: f64) -> Option<&SparsityEntry> {
        self.sparsity.iter().find(|s| same(s.ratio, ratio))
    }

    pub fn ec_at(&self, v_theta: f64) -> Option<&EcEntry> {
        self.ec.iter().find(|e| same(e.v_theta, v_theta))
    }

    pub fn measure(&self, m: &Measure) -> Option<f64> {
        match *m {
            Measure::Heterogeneity => Some(self.heterogeneity_bits),
            Measure::Sparsity(r) => self.sparsity_at(r).map(|s| s.discarded as f64),
            Measure::EcFeatures(v) => self.ec_at(v).map(|e| e.features as f64),
            Measure::IntrinsicDim => Some(self.intrinsic_dim),
        }
    }

    /// Flat key-value form. Keys:
    ///
    /// `n_samples`, `n_features`, `n_classes`, `heterogeneity_bits`,
    /// `sparsity_components@<r>`, `sparsity_discarded@<r>`,
    /// `ec_features@<v>`, `ec_upper@<v>`, `intrinsic_dim`,
    /// `intrinsic_dim_seed@<seed>`, `isomap_residual@<dim>` and
    /// `param.<field>` for every [`ProfileConfig`] field.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        m.insert("n_samples".into(), self.n_samples.into());
        m.insert("n_features".into(), self.n_features.into());
        m.insert("n_classes".into(), self.n_classes.into());
        m.insert("heterogeneity_bits".into(), self.heterogeneity_bits.into());
        for s in &self.sparsity {
            m.insert(format!("sparsity_components@{}", s.ratio), s.components.into());
            m.insert(format!("sparsity_discarded@{}", s.ratio), s.discarded.into());
        }
        for e in &self.ec {
            m.insert(format!("ec_features@{}", e.v_theta), e.features.into());
            m.insert(format!("ec_upper@{}", e.v_theta), e.ec_upper.into());
        }
        m.insert("intrinsic_dim".into(), self.intrinsic_dim.into());
        for (seed, v) in self.params.id_seeds.iter().zip(&self.intrinsic_dim_per_seed) {
            m.insert(format!("intrinsic_dim_seed@{seed}"), (*v).into());
        }
        if let Some(iso) = &self.isomap {
            for r in iso {
                m.insert(format!("isomap_residual@{}", r.dim), r.residual.into());
            }
        }
        if let Ok(Value::Object(params)) = serde_json::to_value(&self.params) {
            for (k, v) in params {
                match (k.as_str(), v) {
                    ("isomap", Value::Object(iso)) => {
                        for (ik, iv) in iso {
                            m.insert(format!("param.isomap_{ik}"), iv);
                        }
                    }
                    ("isomap", Value::Null) => {}
                    (_, v) => {
                        m.insert(format!("param.{k}"), v);
                    }
                }
            }
        }
        m
    }

    pub fn from_flat(map: &BTreeMap<String, Value>) -> Result<Self> {
        let bad = |k: &str| Error::invalid(format!("profile key `{k}` missing or malformed"));
        let uint = |k: &str| map.get(k).and_then(Value::as_u64).ok_or_else(|| bad(k));
        let real = |k: &str| map.get(k).and_then(Value::as_f64).ok_or_else(|| bad(k));

        let mut params = serde_json::Map::new();
        let mut iso = serde_json::Map::new();
        for (k, v) in map {
            if let Some(p) = k.strip_prefix("param.") {
                match p.strip_prefix("isomap_") {
                    Some(ik) => iso.insert(ik.to_string(), v.clone()),
                    None => params.insert(p.to_string(), v.clone()),
                };
            }
        }
        params.insert(
            "isomap".into(),
            if iso.is_empty() { Value::Null } else { Value::Object(iso) },
        );
        let params: ProfileConfig = serde_json::from_value(Value::Object(params))?;

        let n_features = uint("n_features")? as usize;
        let mut sparsity = Vec::new();
        let mut ec = Vec::new();
        let mut isomap = Vec::new();
        for k in map.keys() {
            if let Some(r) = k.strip_prefix("sparsity_discarded@") {
                let ratio: f64 = r.parse().map_err(|_| bad(k))?;
                sparsity.push(SparsityEntry {
                    ratio,
                    discarded: uint(k)? as usize,
                    components: uint(&format!("sparsity_components@{r}"))? as usize,
                });
            } else if let Some(v) = k.strip_prefix("ec_features@") {
                ec.push(EcEntry {
                    v_theta: v.parse().map_err(|_| bad(k))?,
                    features: uint(k)? as usize,
                    ec_upper: uint(&format!("ec_upper@{v}"))?,
                });
            } else if let Some(d) = k.strip_prefix("isomap_residual@") {
                isomap.push(IsomapResidual {
                    dim: d.parse().map_err(|_| bad(k))?,
                    residual: real(k)?,
                });
            }
        }
        sparsity.sort_by(|a, b| a.ratio.total_cmp(&b.ratio));
        ec.sort_by(|a, b| a.v_theta.total_cmp(&b.v_theta));
        isomap.sort_by_key(|r| r.dim);
        let intrinsic_dim_per_seed = params
            .id_seeds
            .iter()
            .map(|s| real(&format!("intrinsic_dim_seed@{s}")))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_samples: uint("n_samples")? as usize,
            n_features,
            n_classes: uint("n_classes")? as usize,
            heterogeneity_bits: real("heterogeneity_bits")?,
            sparsity,
            ec,
            intrinsic_dim: real("intrinsic_dim")?,
            intrinsic_dim_per_seed,
            isomap: if isomap.is_empty() { None } else { Some(isomap) },
            params,
        })
    }
}

impl From<ComplexityProfile> for BTreeMap<String, Value> {
    fn from(p: ComplexityProfile) -> Self {
        p.to_flat()
    }
}

impl TryFrom<BTreeMap<String, Value>> for ComplexityProfile {
    type Error = Error;
    fn try_from(m: BTreeMap<String, Value>) -> Result<Self> {
        ComplexityProfile::from_flat(&m)
    }
}

/// Compute every measure in `config` for `ds`.
pub fn profile(ds: &ImageDataset, config: &ProfileConfig) -> Result<ComplexityProfile> {
    config.validate()?;
    let heterogeneity_bits = mean_image_entropy_binned(ds, config.entropy_bins)?;

    let moments = FeatureMoments::of(ds);
    let ec = config
        .variance_thresholds
        .iter()
        .map(|&v| {
            let features = (0..ds.n_features()).filter(|&j| moments.exceeds(j, v)).count();
            EcEntry {
                v_theta: v,
                features,
                ec_upper: ec_upper_from_counts(ds.n_samples(), features, ds.n_classes()),
            }
        })
        .collect();

    let spectrum = dataset_spectrum(ds, config.pca_subsample, config.pca_seed)?;
    let sparsity = config
        .sparsity_ratios
        .iter()
        .map(|&r| sparsity_from_spectrum(&spectrum, ds.n_features(), r))
        .collect::<Result<Vec<_>>>()?;

    let intrinsic_dim_per_seed = config
        .id_seeds
        .iter()
        .map(|&s| intrinsic_dimension_mle(ds, &config.id_params(s)))
        .collect::<Result<Vec<_>>>()?;
    let intrinsic_dim = intrinsic_dim_per_seed.iter().sum::<f64>() / intrinsic_dim_per_seed.len() as f64;

    let isomap = config
        .isomap
        .as_ref()
        .map(|p| isomap_residual(ds, p.k, &p.dims, p.subsample, p.seed))
        .transpose()?;

    Ok(ComplexityProfile {
        n_samples: ds.n_samples(),
        n_features: ds.n_features(),
        n_classes: ds.n_classes(),
        heterogeneity_bits,
        sparsity,
        ec,
        intrinsic_dim,
        intrinsic_dim_per_seed,
        isomap,
        params: config.clone(),
    })
}

/// One scalar measure of a profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Measure {
    Heterogeneity,
    /// Discarded dimensions at this explained-variance ratio.
    Sparsity(f64),
    /// Retained features at this variance threshold.
    EcFeatures(f64),
    IntrinsicDim,
}

impl Measure {
    /// Compute just this measure, without building a whole profile.
    pub fn compute(&self, ds: &ImageDataset, config: &ProfileConfig) -> Result<f64> {
        match *self {
            Measure::Heterogeneity => mean_image_entropy_binned(ds, config.entropy_bins),
            Measure::Sparsity(r) => {
                pca_sparsity(ds, r, config.pca_subsample, config.pca_seed).map(|s| s.discarded as f64)
            }
            Measure::EcFeatures(v) => variance_filtered_features(ds, v).map(|c| c as f64),
            Measure::IntrinsicDim => {
                let v = config
                    .id_seeds
                    .iter()
                    .map(|&s| intrinsic_dimension_mle(ds, &config.id_params(s)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(v.iter().sum::<f64>() / v.len() as f64)
            }
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Measure::Heterogeneity => write!(f, "heterogeneity"),
            Measure::Sparsity(r) => write!(f, "sparsity:{r}"),
            Measure::EcFeatures(v) => write!(f, "ec_features:{v}"),
            Measure::IntrinsicDim => write!(f, "intrinsic_dim"),
        }
    }
}

impl FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            a.ok_or_else(|| Error::invalid(format!("measure `{s}` needs a numeric argument")))?
                .parse()
                .map_err(|_| Error::invalid(format!("measure `{s}`: bad number")))
        };
        match name {
            "heterogeneity" | "entropy" if arg.is_none() => Ok(Measure::Heterogeneity),
            "sparsity" => {
                let r = num(arg)?;
                check_ratio(r)?;
                Ok(Measure::Sparsity(r))
            }
            "ec_features" => {
                let v = num(arg)?;
                check_threshold(v)?;
                Ok(Measure::EcFeatures(v))
            }
            "intrinsic_dim" | "id" if arg.is_none() => Ok(Measure::IntrinsicDim),
            _ => Err(Error::invalid(format!(
                "unknown measure `{s}` (heterogeneity | sparsity:<r> | ec_features:<v> | intrinsic_dim)"
            ))),
        }
    }
}
