//! Complexity-versus-performance studies: run a plan of federated
//! configurations, score each one, correlate scores with outcomes and emit
//! reports and plot data.
//!
//! A plan is a JSON document:
//!
//! ```json
//! {
//!   "datasets": { "mnist": { "train_images": "...", "train_labels": "...",
//!                            "test_images": "...", "test_labels": "...",
//!                            "train_subsample": 6000 } },
//!   "profile": { "id_subsample": 2000 },
//!   "defaults": { "partition": "iid", "train": { "learning_rate": 0.003 },
//!                 "aggregation": "heterogeneity", "beta": { "per_entity": 1.0 },
//!                 "intrinsic": "dataset" },
//!   "entries": [ { "dataset": "mnist", "path": "[[0,1]]", "partition_seeds": [0, 1] } ],
//!   "correlations": [ { "target": "avg_acc", "predictor": "F" } ],
//!   "plots": [ { "x": "F", "y": "avg_acc", "fit": true } ]
//! }
//! ```
//!
//! Relative dataset paths resolve against the data directory passed in
//! [`StudyOptions`].

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::complexity::{combined_f, AggregationSpec, ComplexityScore, FedPath, IntrinsicVector, PathExpression};
use crate::dataset::{load_dataset, partition_clients, ImageDataset, PartitionScheme};
use crate::error::{Error, Result};
use crate::fedsim::{run_federation, FedRunResult, TrainConfig};
use crate::kernels::{linfit, LinearFit};
use crate::metrics::ProfileConfig;

/// Where a dataset's four IDX files live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    #[serde(default)]
    pub n_classes: Option<usize>,
    /// Seeded subsample of the training split.
    #[serde(default)]
    pub train_subsample: Option<usize>,
    #[serde(default)]
    pub test_subsample: Option<usize>,
    #[serde(default)]
    pub subsample_seed: u64,
}

impl DatasetSpec {
    /// Standard IDX file names under `dir`.
    pub fn standard(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        Self {
            train_images: dir.join("train-images-idx3-ubyte"),
            train_labels: dir.join("train-labels-idx1-ubyte"),
            test_images: dir.join("t10k-images-idx3-ubyte"),
            test_labels: dir.join("t10k-labels-idx1-ubyte"),
            n_classes: None,
            train_subsample: None,
            test_subsample: None,
            subsample_seed: 0,
        }
    }

    /// Load (and subsample) the train and test splits.
    pub fn load(&self, data_dir: &Path) -> Result<(ImageDataset, ImageDataset)> {
        let p = |f: &Path| data_dir.join(f);
        let train = load_dataset(p(&self.train_images), p(&self.train_labels), self.n_classes)?;
        let test = load_dataset(p(&self.test_images), p(&self.test_labels), Some(train.n_classes()))?;
        let cut = |ds: ImageDataset, n: Option<usize>| match n {
            Some(n) if n < ds.n_samples() => ds.subsample(n, self.subsample_seed),
            _ => Ok(ds),
        };
        Ok((cut(train, self.train_subsample)?, cut(test, self.test_subsample)?))
    }
}

/// How `beta` is chosen for an entry with `n` intrinsic components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// The same `beta` for every entry.
    Fixed(f64),
    /// `beta = beta0 / sqrt(n)`: equal components give `f(X) = beta0 * x`
    /// whatever the client count.
    PerEntity(f64),
}

impl Default for BetaRule {
    fn default() -> Self {
        BetaRule::Fixed(1.0)
    }
}

impl BetaRule {
    pub fn beta(&self, n: usize) -> f64 {
        match *self {
            BetaRule::Fixed(b) => b,
            BetaRule::PerEntity(b) => b / (n as f64).sqrt(),
        }
    }
}

impl fmt::Display for BetaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaRule::Fixed(b) => write!(f, "fixed:{b}"),
            BetaRule::PerEntity(b) => write!(f, "per-entity:{b}"),
        }
    }
}

impl FromStr for BetaRule {
    type Err = Error;

    /// A plain number means `fixed`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .ok()
                .filter(|b| *b >= 0.0 && b.is_finite())
                .ok_or_else(|| Error::invalid(format!("bad beta `{s}`")))
        };
        match s.split_once(':') {
            Some(("fixed", v)) => Ok(BetaRule::Fixed(num(v)?)),
            Some(("per-entity", v)) => Ok(BetaRule::PerEntity(num(v)?)),
            None => Ok(BetaRule::Fixed(num(s)?)),
            _ => Err(Error::invalid(format!("bad beta `{s}` (fixed:<b> | per-entity:<b>)"))),
        }
    }
}

/// Which data each intrinsic component `x_i` is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicSource {
    /// The whole training set, repeated for every participating client.
    #[default]
    Dataset,
    /// Each client's own local data.
    Client,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct PlanDefaults {
    pub partition: PartitionScheme,
    pub train: TrainConfig,
    pub aggregation: AggregationSpec,
    pub beta: BetaRule,
    pub intrinsic: IntrinsicSource,
}


fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// One plan line; expands to one entry per partition seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntrySpec {
    pub dataset: String,
    /// Explicit `[[0,1],[2]]` or `rounds=R clients=C path=all|round-robin`.
    pub path: String,
    /// Defaults to the expression's client count, else the highest id + 1.
    #[serde(default)]
    pub clients: Option<usize>,
    #[serde(default)]
    pub partition: Option<PartitionScheme>,
    #[serde(default = "default_seeds")]
    pub partition_seeds: Vec<u64>,
    /// Field overrides on top of the default [`TrainConfig`].
    #[serde(default)]
    pub train: serde_json::Map<String, Value>,
    #[serde(default)]
    pub aggregation: Option<AggregationSpec>,
    #[serde(default)]
    pub beta: Option<BetaRule>,
    #[serde(default)]
    pub intrinsic: Option<IntrinsicSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrelationRequest {
    pub target: Target,
    pub predictor: Predictor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotRequest {
    pub x: String,
    pub y: String,
    #[serde(default)]
    pub fit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyPlan {
    pub datasets: BTreeMap<String, DatasetSpec>,
    #[serde(default)]
    pub profile: ProfileConfig,
    #[serde(default)]
    pub defaults: PlanDefaults,
    pub entries: Vec<EntrySpec>,
    #[serde(default)]
    pub correlations: Vec<CorrelationRequest>,
    #[serde(default)]
    pub plots: Vec<PlotRequest>,
}

/// A fully resolved, self-contained unit of work.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub dataset: String,
    pub clients: usize,
    pub partition: PartitionScheme,
    pub partition_seed: u64,
    pub path: FedPath,
    pub train: TrainConfig,
    pub aggregation: AggregationSpec,
    pub beta: BetaRule,
    pub intrinsic: IntrinsicSource,
}

impl StudyPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    /// Expand entries in plan order, one per partition seed.
    pub fn resolve(&self) -> Result<Vec<PlanEntry>> {
        if self.entries.is_empty() {
            return Err(Error::invalid("plan has no entries"));
        }
        self.profile.validate()?;
        let mut out = Vec::new();
        for (i, spec) in self.entries.iter().enumerate() {
            let attach = |e: Error| Error::PlanEntry {
                index: i,
                source: Box::new(e),
            };
            let entry = self.resolve_one(spec).map_err(attach)?;
            if spec.partition_seeds.is_empty() {
                return Err(attach(Error::invalid("partition_seeds must not be empty")));
            }
            for &seed in &spec.partition_seeds {
                out.push(PlanEntry {
                    partition_seed: seed,
                    ..entry.clone()
                });
            }
        }
        Ok(out)
    }

    fn resolve_one(&self, spec: &EntrySpec) -> Result<PlanEntry> {
        if !self.datasets.contains_key(&spec.dataset) {
            return Err(Error::invalid(format!("unknown dataset `{}`", spec.dataset)));
        }
        let expr: PathExpression = spec.path.parse()?;
        let clients = spec
            .clients
            .or(expr.clients)
            .unwrap_or(expr.path.max_client() + 1);
        if expr.path.max_client() >= clients {
            return Err(Error::invalid(format!(
                "path uses client {} but only {clients} clients are declared",
                expr.path.max_client()
            )));
        }
        let mut train = serde_json::to_value(&self.defaults.train)?;
        if let Value::Object(map) = &mut train {
            for (k, v) in &spec.train {
                map.insert(k.clone(), v.clone());
            }
        }
        let train: TrainConfig = serde_json::from_value(train)?;
        train.validate()?;
        let aggregation = spec.aggregation.clone().unwrap_or_else(|| self.defaults.aggregation.clone());
        aggregation.validate()?;
        Ok(PlanEntry {
            dataset: spec.dataset.clone(),
            clients,
            partition: spec.partition.unwrap_or(self.defaults.partition),
            partition_seed: 0,
            path: expr.path,
            train,
            aggregation,
            beta: spec.beta.unwrap_or(self.defaults.beta),
            intrinsic: spec.intrinsic.unwrap_or(self.defaults.intrinsic),
        })
    }
}

/// One executed plan entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub index: usize,
    pub dataset: String,
    pub partition: String,
    pub partition_seed: u64,
    pub clients: usize,
    pub path: String,
    pub distinct: usize,
    pub aggregation: String,
    pub beta: f64,
    pub f_x: f64,
    pub f_d: f64,
    #[serde(rename = "F")]
    pub f: f64,
    pub max_acc: f64,
    pub avg_acc: f64,
    pub effort: Option<usize>,
    pub rounds: usize,
    pub threshold: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_unit: String,
    pub local_iterations: usize,
    pub hidden: usize,
    pub train_seed: u64,
    /// Content hash of the plan entry; also the cache file name.
    pub key: String,
}

impl StudyRecord {
    fn new(index: usize, entry: &PlanEntry, score: &ComplexityScore, beta: f64, run: &FedRunResult, key: String) -> Self {
        Self {
            index,
            dataset: entry.dataset.clone(),
            partition: entry.partition.to_string(),
            partition_seed: entry.partition_seed,
            clients: entry.clients,
            path: entry.path.to_string(),
            distinct: entry.path.distinct(),
            aggregation: entry.aggregation.to_string(),
            beta,
            f_x: score.f_x,
            f_d: score.f_d,
            f: score.f,
            max_acc: run.max_accuracy,
            avg_acc: run.avg_accuracy,
            effort: run.effort,
            rounds: entry.train.rounds,
            threshold: entry.train.threshold,
            learning_rate: entry.train.learning_rate,
            batch_size: entry.train.batch_size,
            local_unit: entry.train.local_unit.to_string(),
            local_iterations: entry.train.local_iterations,
            hidden: entry.train.hidden,
            train_seed: entry.train.seed,
            key,
        }
    }

    /// Numeric field by report column name.
    pub fn field(&self, name: &str) -> Option<f64> {
        Some(match name {
            "f_x" => self.f_x,
            "f_d" => self.f_d,
            "F" => self.f,
            "max_acc" => self.max_acc,
            "avg_acc" => self.avg_acc,
            "effort" => self.effort? as f64,
            "beta" => self.beta,
            "clients" => self.clients as f64,
            "distinct" => self.distinct as f64,
            "rounds" => self.rounds as f64,
            "learning_rate" => self.learning_rate,
            "partition_seed" => self.partition_seed as f64,
            _ => return None,
        })
    }

    fn rounded(&self) -> Self {
        let r = |v: f64| round_sig(v, REPORT_DIGITS);
        Self {
            beta: r(self.beta),
            f_x: r(self.f_x),
            f_d: r(self.f_d),
            f: r(self.f),
            max_acc: r(self.max_acc),
            avg_acc: r(self.avg_acc),
            threshold: r(self.threshold),
            learning_rate: r(self.learning_rate),
            ..self.clone()
        }
    }
}

#[derive(Serialize)]
struct CacheKey<'a> {
    version: &'static str,
    entry: &'a PlanEntry,
    dataset: &'a DatasetSpec,
    profile: Option<&'a ProfileConfig>,
}

/// Hex SHA-256 of the JSON encoding of `value`; used for cache and output names.
pub fn content_hash<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(value)?)))
}

fn entry_key(entry: &PlanEntry, dataset: &DatasetSpec, profile: &ProfileConfig) -> Result<String> {
    content_hash(&CacheKey {
        version: env!("CARGO_PKG_VERSION"),
        entry,
        dataset,
        profile: (!entry.aggregation.measures().is_empty()).then_some(profile),
    })
}

/// Settings for [`run_study`] that are not part of the plan itself.
#[derive(Debug, Clone, Default)]
pub struct StudyOptions {
    pub data_dir: PathBuf,
    /// Completed records are stored here as `<key>.json` and reused.
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct StudyOutcome {
    /// Completed records, in plan order.
    pub records: Vec<StudyRecord>,
    /// Failed entries, each an [`Error::PlanEntry`].
    pub failures: Vec<Error>,
    pub cache_hits: usize,
}

struct Workspace<'a> {
    plan: &'a StudyPlan,
    options: &'a StudyOptions,
    datasets: HashMap<String, Arc<(ImageDataset, ImageDataset)>>,
    measures: HashMap<(String, String), Vec<f64>>,
}

impl Workspace<'_> {
    fn dataset(&mut self, name: &str) -> Result<Arc<(ImageDataset, ImageDataset)>> {
        if let Some(d) = self.datasets.get(name) {
            return Ok(d.clone());
        }
        let spec = &self.plan.datasets[name];
        let pair = Arc::new(spec.load(&self.options.data_dir)?);
        self.datasets.insert(name.to_string(), pair.clone());
        Ok(pair)
    }

    fn measure_values(&self, ds: &ImageDataset, spec: &AggregationSpec) -> Result<Vec<f64>> {
        spec.measures()
            .iter()
            .map(|m| m.compute(ds, &self.plan.profile))
            .collect()
    }

    fn intrinsic(&mut self, entry: &PlanEntry, clients: &[ImageDataset], train: &ImageDataset) -> Result<Vec<f64>> {
        let ids: Vec<usize> = entry.path.frequencies().keys().copied().collect();
        match entry.intrinsic {
            IntrinsicSource::Dataset => {
                let key = (entry.dataset.clone(), entry.aggregation.to_string());
                let values = match self.measures.get(&key) {
                    Some(v) => v.clone(),
                    None => {
                        let v = self.measure_values(train, &entry.aggregation)?;
                        self.measures.insert(key, v.clone());
                        v
                    }
                };
                let x = entry.aggregation.combine(&values)?;
                Ok(vec![x; ids.len()])
            }
            IntrinsicSource::Client => ids
                .iter()
                .map(|&c| {
                    let values = self.measure_values(&clients[c], &entry.aggregation)?;
                    entry.aggregation.combine(&values)
                })
                .collect(),
        }
    }

    fn run_entry(&mut self, index: usize, entry: &PlanEntry, key: String) -> Result<StudyRecord> {
        let data = self.dataset(&entry.dataset)?;
        let (train, test) = (&data.0, &data.1);
        let partition = partition_clients(train, entry.clients, entry.partition, entry.partition_seed)?;
        let x = self.intrinsic(entry, &partition.clients, train)?;
        let beta = entry.beta.beta(x.len());
        let vector = IntrinsicVector::new(x, entry.aggregation.clone(), beta)?;
        let score = combined_f(&vector, &entry.path)?;
        let run = run_federation(&partition, &entry.path, test, &entry.train)?;
        Ok(StudyRecord::new(index, entry, &score, beta, &run, key))
    }
}

/// Execute every plan entry in order. Entry failures are collected, not fatal.
pub fn run_study(plan: &StudyPlan, options: &StudyOptions) -> Result<StudyOutcome> {
    let entries = plan.resolve()?;
    if let Some(dir) = &options.cache_dir {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    let mut ws = Workspace {
        plan,
        options,
        datasets: HashMap::new(),
        measures: HashMap::new(),
    };
    let mut outcome = StudyOutcome {
        records: Vec::new(),
        failures: Vec::new(),
        cache_hits: 0,
    };
    for (index, entry) in entries.iter().enumerate() {
        let key = entry_key(entry, &plan.datasets[&entry.dataset], &plan.profile)?;
        let cache_file = options.cache_dir.as_ref().map(|d| d.join(format!("{key}.json")));
        if let Some(record) = cache_file.as_ref().and_then(|f| read_cached(f)) {
            log::info!("entry {index}: cache hit {key}");
            outcome.cache_hits += 1;
            outcome.records.push(StudyRecord { index, ..record });
            continue;
        }
        log::info!("entry {index}: {} {} seed {}", entry.dataset, entry.path, entry.partition_seed);
        match ws.run_entry(index, entry, key) {
            Ok(record) => {
                if let Some(f) = &cache_file {
                    let text = serde_json::to_string_pretty(&record)?;
                    fs::write(f, text).map_err(|e| Error::file(f, e))?;
                }
                outcome.records.push(record);
            }
            Err(e) => {
                log::error!("entry {index} failed: {e}");
                outcome.failures.push(Error::PlanEntry {
                    index,
                    source: Box::new(e),
                });
            }
        }
    }
    Ok(outcome)
}

fn read_cached(path: &Path) -> Option<StudyRecord> {
    let text = fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

/// Outcome variable of a correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Target {
    MaxAcc,
    AvgAcc,
    Effort,
}

/// Complexity score used as the regressor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Predictor {
    FX,
    FD,
    F,
}

impl Target {
    pub fn name(&self) -> &'static str {
        match self {
            Target::MaxAcc => "max_acc",
            Target::AvgAcc => "avg_acc",
            Target::Effort => "effort",
        }
    }
}

impl Predictor {
    pub fn name(&self) -> &'static str {
        match self {
            Predictor::FX => "f_x",
            Predictor::FD => "f_d",
            Predictor::F => "F",
        }
    }
}

macro_rules! named_enum {
    ($t:ident, $($v:ident),+) => {
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                $(if s == $t::$v.name() { return Ok($t::$v); })+
                Err(Error::invalid(format!(
                    concat!("unknown ", stringify!($t), " `{}` (expected one of: {})"),
                    s,
                    [$($t::$v.name()),+].join(", ")
                )))
            }
        }
        impl TryFrom<String> for $t {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                s.parse()
            }
        }
        impl From<$t> for String {
            fn from(v: $t) -> String {
                v.name().to_string()
            }
        }
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

named_enum!(Target, MaxAcc, AvgAcc, Effort);
named_enum!(Predictor, FX, FD, F);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub target: Target,
    pub predictor: Predictor,
    pub slope: f64,
    pub intercept: f64,
    pub pearson_r: f64,
    pub r_squared: f64,
    pub n: usize,
    /// Records left out because the threshold was never reached.
    pub excluded: usize,
}

/// Least-squares fit of `target` on `predictor`. Runs that never reached
/// the threshold are excluded from effort fits and counted.
pub fn correlate(records: &[StudyRecord], target: Target, predictor: Predictor) -> Result<CorrelationSummary> {
    let mut pairs = Vec::with_capacity(records.len());
    let mut excluded = 0;
    for r in records {
        match r.field(target.name()) {
            Some(y) => pairs.push((r.field(predictor.name()).expect("predictor fields exist"), y)),
            None => excluded += 1,
        }
    }
    if pairs.len() < 3 {
        return Err(Error::invalid(format!(
            "{target} vs {predictor} needs at least 3 usable records, got {}",
            pairs.len()
        )));
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let LinearFit {
        slope,
        intercept,
        pearson_r,
        r_squared,
        n,
    } = linfit(&x, &y)?;
    Ok(CorrelationSummary {
        target,
        predictor,
        slope,
        intercept,
        pearson_r,
        r_squared,
        n,
        excluded,
    })
}

pub const REPORT_DIGITS: usize = 6;

/// Round to `digits` significant digits.
pub fn round_sig(v: f64, digits: usize) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", digits.saturating_sub(1), v)
        .parse()
        .expect("formatted float parses")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(Error::invalid(format!("unknown report format `{s}` (csv | json)"))),
        }
    }
}

/// JSON report body: `{"records": [...], "correlations": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub records: Vec<StudyRecord>,
    pub correlations: Vec<CorrelationSummary>,
}

fn rounded_summary(s: &CorrelationSummary) -> CorrelationSummary {
    let r = |v: f64| round_sig(v, REPORT_DIGITS);
    CorrelationSummary {
        slope: r(s.slope),
        intercept: r(s.intercept),
        pearson_r: r(s.pearson_r),
        r_squared: r(s.r_squared),
        ..s.clone()
    }
}

/// Render records and correlation summaries. Floats carry 6 significant digits.
///
/// CSV: the record table (columns in [`StudyRecord`] field order), then, when
/// there are summaries, one blank line and the correlation table.
pub fn emit_report(records: &[StudyRecord], summaries: &[CorrelationSummary], format: ReportFormat) -> Result<Vec<u8>> {
    if records.is_empty() {
        return Err(Error::invalid("report needs at least one record"));
    }
    let records: Vec<StudyRecord> = records.iter().map(StudyRecord::rounded).collect();
    let summaries: Vec<CorrelationSummary> = summaries.iter().map(rounded_summary).collect();
    match format {
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(&Report {
                records,
                correlations: summaries,
            })?;
            out.push(b'\n');
            Ok(out)
        }
        ReportFormat::Csv => {
            let mut out = csv_table(&records)?;
            if !summaries.is_empty() {
                out.push(b'\n');
                out.extend(csv_table(&summaries)?);
            }
            Ok(out)
        }
    }
}

fn csv_table<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Read back a CSV report written by [`emit_report`].
pub fn parse_csv_report(bytes: &[u8]) -> Result<Report> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::invalid(format!("report is not UTF-8: {e}")))?;
    let (records, summaries) = match text.split_once("\n\n") {
        Some((a, b)) => (a, Some(b)),
        None => (text, None),
    };
    let read = |t: &str| -> Result<Vec<_>> {
        csv::Reader::from_reader(t.as_bytes())
            .deserialize()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(Error::from)
    };
    let records: Vec<StudyRecord> = read(records)?;
    let correlations: Vec<CorrelationSummary> = match summaries {
        Some(t) => csv::Reader::from_reader(t.as_bytes())
            .deserialize()
            .collect::<std::result::Result<Vec<_>, _>>()?,
        None => Vec::new(),
    };
    Ok(Report { records, correlations })
}

/// Whitespace-separated `x y` points, and with `with_fit` a second block
/// (after two blank lines) holding the fitted line at the x-range ends.
pub fn emit_plot_data(records: &[StudyRecord], x_field: &str, y_field: &str, with_fit: bool) -> Result<String> {
    let probe = records.first().ok_or_else(|| Error::invalid("no records to plot"))?;
    for f in [x_field, y_field] {
        if probe.field(f).is_none() && f != "effort" {
            return Err(Error::invalid(format!("unknown plot field `{f}`")));
        }
    }
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| Some((r.field(x_field)?, r.field(y_field)?)))
        .collect();
    if points.is_empty() {
        return Err(Error::invalid(format!("no records have both `{x_field}` and `{y_field}`")));
    }
    let mut out = format!("# {x_field} {y_field}\n");
    for (x, y) in &points {
        out.push_str(&format!("{x} {y}\n"));
    }
    if with_fit {
        let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        let fit = linfit(&xs, &ys)?;
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        out.push_str(&format!(
            "\n\n# fit slope={} intercept={} r2={}\n",
            fit.slope, fit.intercept, fit.r_squared
        ));
        for x in [lo, hi] {
            out.push_str(&format!("{x} {}\n", fit.predict(x)));
        }
    }
    Ok(out)
}
