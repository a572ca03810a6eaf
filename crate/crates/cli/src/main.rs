mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use fedcomplex_core::complexity::{
    aggregate_intrinsic, combined_f, enumerate_paths, AggregationSpec, EnumerationPolicy, IntrinsicVector,
    PathExpression, DEFAULT_ENUMERATION_CAP,
};
use fedcomplex_core::dataset::{load_dataset, partition_clients, ImageDataset, PartitionScheme};
use fedcomplex_core::error::Error;
use fedcomplex_core::fedsim::{run_federation, LocalUnit, TrainConfig};
use fedcomplex_core::metrics::{profile, ComplexityProfile, IsomapParams, ProfileConfig};
use fedcomplex_core::study::{
    content_hash, correlate, emit_plot_data, emit_report, run_study, BetaRule, DatasetSpec, ReportFormat,
    StudyOptions, StudyPlan,
};

use config::FileConfig;

/// Dataset complexity profiling, federated learning simulation and
/// complexity-versus-accuracy studies.
///
/// Settings come from built-in defaults, then the --config file, then flags
/// (later wins). Relative dataset paths resolve against the data directory.
/// Exit codes: 0 success, 1 partial study failure, 2 usage or input error.
#[derive(Debug, Parser)]
#[command(name = "fedcomplex", version, max_term_width = 100)]
struct Cli {
    /// Flat JSON config file; keys are flag names with underscores
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Base directory for relative dataset paths [default: .]
    #[arg(long, global = true, env = "FEDCOMPLEX_DATA_DIR", value_name = "DIR")]
    data_dir: Option<PathBuf>,

    /// Output root holding profiles/, runs/, reports/ and cache/ [default: out]
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Worker threads [default: available cores]
    #[arg(long, global = true, value_name = "N")]
    threads: Option<usize>,

    /// More log output (-v debug, -vv trace)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Only log warnings and errors
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the complexity profile of a dataset
    Profile(ProfileArgs),
    /// Simulate federated training over a client partition and path
    Fedsim(FedsimArgs),
    /// Score a federated configuration: f_X, f_d and F
    Score(ScoreArgs),
    /// Run a study plan and write reports and plot data
    Study(StudyArgs),
    /// Enumerate federated paths
    Paths(PathsArgs),
}

#[derive(Debug, Args)]
struct DatasetArgs {
    /// Directory with the four standard IDX files (train-images-idx3-ubyte, ...)
    /// [required unless --images and --labels are given]
    #[arg(long, value_name = "DIR")]
    dataset: Option<PathBuf>,

    /// Training images IDX file [default: <dataset>/train-images-idx3-ubyte]
    #[arg(long, value_name = "FILE")]
    images: Option<PathBuf>,

    /// Training labels IDX file [default: <dataset>/train-labels-idx1-ubyte]
    #[arg(long, value_name = "FILE")]
    labels: Option<PathBuf>,

    /// Number of classes [default: max label + 1]
    #[arg(long, value_name = "N")]
    n_classes: Option<usize>,

    /// Use a seeded subsample of this many training samples [default: all]
    #[arg(long, value_name = "N")]
    train_subsample: Option<usize>,

    /// Seed for the training and test subsamples [default: 0]
    #[arg(long, value_name = "SEED")]
    subsample_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ProfileFlags {
    /// Gray-level histogram bins for entropy [default: 256]
    #[arg(long, value_name = "N")]
    entropy_bins: Option<usize>,

    /// Explained-variance ratios for PCA sparsity [default: 0.8,0.95]
    #[arg(long, value_name = "R,..", value_delimiter = ',')]
    sparsity_ratios: Option<Vec<f64>>,

    /// Variance thresholds v_theta for feature filtering [default: 0,90]
    #[arg(long, value_name = "V,..", value_delimiter = ',')]
    variance_thresholds: Option<Vec<f64>>,

    /// Samples used for PCA [default: all]
    #[arg(long, value_name = "N")]
    pca_subsample: Option<usize>,

    /// Seed for the PCA subsample [default: 0]
    #[arg(long, value_name = "SEED")]
    pca_seed: Option<u64>,

    /// Smallest neighbor count for the MLE [default: 10]
    #[arg(long, value_name = "K")]
    id_k_min: Option<usize>,

    /// Largest neighbor count for the MLE [default: 20]
    #[arg(long, value_name = "K")]
    id_k_max: Option<usize>,

    /// Points per MLE estimate [default: 5000]
    #[arg(long, value_name = "N")]
    id_subsample: Option<usize>,

    /// One MLE per seed, averaged [default: 0,1,2]
    #[arg(long, value_name = "S,..", value_delimiter = ',')]
    id_seeds: Option<Vec<u64>>,

    /// Also compute Isomap residual variances [default: off]
    #[arg(long)]
    isomap: bool,

    /// Isomap neighbor count [default: 10]
    #[arg(long, value_name = "K")]
    isomap_k: Option<usize>,

    /// Isomap target dimensions [default: 1..15]
    #[arg(long, value_name = "D,..", value_delimiter = ',')]
    isomap_dims: Option<Vec<usize>>,

    /// Isomap subsample size [default: 1000]
    #[arg(long, value_name = "N")]
    isomap_subsample: Option<usize>,

    /// Isomap subsample seed [default: 0]
    #[arg(long, value_name = "SEED")]
    isomap_seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    #[command(flatten)]
    data: DatasetArgs,

    #[command(flatten)]
    metrics: ProfileFlags,

    /// Print the flat JSON profile instead of a table
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct FedsimArgs {
    #[command(flatten)]
    data: DatasetArgs,

    /// Test images IDX file [default: <dataset>/t10k-images-idx3-ubyte]
    #[arg(long, value_name = "FILE")]
    test_images: Option<PathBuf>,

    /// Test labels IDX file [default: <dataset>/t10k-labels-idx1-ubyte]
    #[arg(long, value_name = "FILE")]
    test_labels: Option<PathBuf>,

    /// Use a seeded subsample of this many test samples [default: all]
    #[arg(long, value_name = "N")]
    test_subsample: Option<usize>,

    /// Number of clients [default: from --path, else 5]
    #[arg(long, value_name = "N")]
    clients: Option<usize>,

    /// Partition scheme: iid, label-shard:<s> or dirichlet:<alpha> [default: dirichlet:0.5]
    #[arg(long, value_name = "SCHEME")]
    partition: Option<String>,

    /// Partition seed [default: 0]
    #[arg(long, value_name = "SEED")]
    partition_seed: Option<u64>,

    /// Path: explicit rounds like [[0,1],[2]] or "rounds=R clients=C path=all|round-robin";
    /// shorter paths repeat [default: every client every round]
    #[arg(long, value_name = "EXPR")]
    path: Option<String>,

    #[command(flatten)]
    train: TrainFlags,
}

#[derive(Debug, Args)]
struct TrainFlags {
    /// SGD learning rate [default: 0.1]
    #[arg(long, value_name = "LR")]
    learning_rate: Option<f64>,

    /// Mini-batch size [default: 32]
    #[arg(long, value_name = "N")]
    batch_size: Option<usize>,

    /// Local iterations per round [default: 1]
    #[arg(long, value_name = "N")]
    local_iterations: Option<usize>,

    /// What one local iteration is: epoch or step [default: epoch]
    #[arg(long, value_name = "UNIT")]
    local_unit: Option<String>,

    /// Communication rounds [default: 100]
    #[arg(long, value_name = "N")]
    rounds: Option<usize>,

    /// Accuracy threshold for effort [default: 0.6]
    #[arg(long, value_name = "ACC")]
    threshold: Option<f64>,

    /// Hidden units [default: 64]
    #[arg(long, value_name = "N")]
    hidden: Option<usize>,

    /// Seed for model initialisation and shuffling [default: 0]
    #[arg(long, value_name = "SEED")]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Intrinsic values x_i, one per distinct path entity
    #[arg(long, value_name = "X,..", value_delimiter = ',', conflicts_with_all = ["profile", "dataset", "images"])]
    x: Option<Vec<f64>>,

    /// Profile JSON written by `profile`, one per distinct path entity (repeatable)
    #[arg(long, value_name = "FILE", conflicts_with_all = ["dataset", "images"])]
    profile: Vec<PathBuf>,

    #[command(flatten)]
    data: DatasetArgs,

    #[command(flatten)]
    metrics: ProfileFlags,

    /// Path expression (see `fedsim --help`) [required]
    #[arg(long, value_name = "EXPR")]
    path: Option<String>,

    /// How a profile becomes x_i: a measure (heterogeneity, sparsity:<r>, ec_features:<v>,
    /// intrinsic_dim) or norm(<m>=<lo>..<hi>;...) [default: heterogeneity]
    #[arg(long, value_name = "SPEC")]
    aggregation: Option<String>,

    /// Weight on ||x||: <b>, fixed:<b> or per-entity:<b> (b/sqrt(n)) [default: 1]
    #[arg(long, value_name = "BETA")]
    beta: Option<String>,

    /// Print JSON
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Study plan JSON [required]
    #[arg(long, value_name = "FILE")]
    plan: Option<PathBuf>,

    /// Recompute every entry instead of reusing out/cache
    #[arg(long)]
    no_cache: bool,
}

#[derive(Debug, Args)]
struct PathsArgs {
    /// Number of entities [required]
    #[arg(long, value_name = "N")]
    entities: Option<usize>,

    /// Number of rounds [required]
    #[arg(long, value_name = "N")]
    rounds: Option<usize>,

    /// all-subsets, fixed-size:<s> or singleton [default: all-subsets]
    #[arg(long, value_name = "POLICY")]
    policy: Option<String>,

    /// Refuse to enumerate more paths than this [default: 1000000]
    #[arg(long, value_name = "N")]
    cap: Option<u64>,

    /// Print JSON
    #[arg(long)]
    json: bool,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn input(msg: impl Into<String>) -> CliError {
    CliError::Input(msg.into())
}

fn parse<T: std::str::FromStr<Err = Error>>(what: &str, s: &str) -> CliResult<T> {
    s.parse().map_err(|e: Error| input(format!("--{what}: {e}")))
}

struct Ctx {
    file: FileConfig,
    data_dir: PathBuf,
    out_dir: PathBuf,
}

impl Ctx {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }

    fn output(&self, sub: &str, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
        let dir = self.out_dir.join(sub);
        fs::create_dir_all(&dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
        let path = dir.join(name);
        fs::write(&path, contents).map_err(|e| input(format!("{}: {e}", path.display())))?;
        eprintln!("wrote {}", path.display());
        Ok(path)
    }

    fn dataset_spec(&self, d: &DatasetArgs, test: Option<(&Option<PathBuf>, &Option<PathBuf>, Option<usize>)>) -> CliResult<DatasetSpec> {
        let f = &self.file;
        let dir = d.dataset.clone().or_else(|| f.dataset.clone());
        let pick = |flag: &Option<PathBuf>, file: &Option<PathBuf>, standard: &str, what: &str| -> CliResult<PathBuf> {
            flag.clone()
                .or_else(|| file.clone())
                .or_else(|| dir.as_ref().map(|d| d.join(standard)))
                .map(|p| self.resolve(&p))
                .ok_or_else(|| input(format!("no {what}: pass --dataset or --{}", what.replace(' ', "-"))))
        };
        let train_images = pick(&d.images, &f.images, "train-images-idx3-ubyte", "images")?;
        let train_labels = pick(&d.labels, &f.labels, "train-labels-idx1-ubyte", "labels")?;
        let (test_images, test_labels, test_subsample) = match test {
            Some((ti, tl, ts)) => (
                pick(ti, &f.test_images, "t10k-images-idx3-ubyte", "test images")?,
                pick(tl, &f.test_labels, "t10k-labels-idx1-ubyte", "test labels")?,
                ts.or(f.test_subsample),
            ),
            None => (PathBuf::new(), PathBuf::new(), None),
        };
        Ok(DatasetSpec {
            train_images,
            train_labels,
            test_images,
            test_labels,
            n_classes: d.n_classes.or(f.n_classes),
            train_subsample: d.train_subsample.or(f.train_subsample),
            test_subsample,
            subsample_seed: d.subsample_seed.or(f.subsample_seed).unwrap_or(0),
        })
    }

    fn load_train(&self, spec: &DatasetSpec) -> CliResult<ImageDataset> {
        let ds = load_dataset(&spec.train_images, &spec.train_labels, spec.n_classes)?;
        Ok(match spec.train_subsample {
            Some(n) => ds.subsample(n, spec.subsample_seed)?,
            None => ds,
        })
    }

    fn profile_config(&self, m: &ProfileFlags) -> CliResult<ProfileConfig> {
        let f = &self.file;
        let d = ProfileConfig::default();
        let iso_default = IsomapParams::default();
        let isomap = (m.isomap || f.isomap.unwrap_or(false)).then(|| IsomapParams {
            k: m.isomap_k.or(f.isomap_k).unwrap_or(iso_default.k),
            dims: m.isomap_dims.clone().or_else(|| f.isomap_dims.clone()).unwrap_or(iso_default.dims.clone()),
            subsample: m.isomap_subsample.or(f.isomap_subsample).unwrap_or(iso_default.subsample),
            seed: m.isomap_seed.or(f.isomap_seed).unwrap_or(iso_default.seed),
        });
        let config = ProfileConfig {
            entropy_bins: m.entropy_bins.or(f.entropy_bins).unwrap_or(d.entropy_bins),
            sparsity_ratios: m.sparsity_ratios.clone().or_else(|| f.sparsity_ratios.clone()).unwrap_or(d.sparsity_ratios),
            variance_thresholds: m
                .variance_thresholds
                .clone()
                .or_else(|| f.variance_thresholds.clone())
                .unwrap_or(d.variance_thresholds),
            pca_subsample: m.pca_subsample.or(f.pca_subsample).or(d.pca_subsample),
            pca_seed: m.pca_seed.or(f.pca_seed).unwrap_or(d.pca_seed),
            id_k_min: m.id_k_min.or(f.id_k_min).unwrap_or(d.id_k_min),
            id_k_max: m.id_k_max.or(f.id_k_max).unwrap_or(d.id_k_max),
            id_subsample: m.id_subsample.or(f.id_subsample).unwrap_or(d.id_subsample),
            id_seeds: m.id_seeds.clone().or_else(|| f.id_seeds.clone()).unwrap_or(d.id_seeds),
            isomap,
        };
        config.validate()?;
        Ok(config)
    }

    fn train_config(&self, t: &TrainFlags) -> CliResult<TrainConfig> {
        let f = &self.file;
        let d = TrainConfig::default();
        let local_unit = match t.local_unit.as_ref().or(f.local_unit.as_ref()) {
            Some(s) => parse::<LocalUnit>("local-unit", s)?,
            None => d.local_unit,
        };
        let config = TrainConfig {
            learning_rate: t.learning_rate.or(f.learning_rate).unwrap_or(d.learning_rate),
            batch_size: t.batch_size.or(f.batch_size).unwrap_or(d.batch_size),
            local_iterations: t.local_iterations.or(f.local_iterations).unwrap_or(d.local_iterations),
            local_unit,
            rounds: t.rounds.or(f.rounds).unwrap_or(d.rounds),
            threshold: t.threshold.or(f.threshold).unwrap_or(d.threshold),
            seed: t.seed.or(f.seed).unwrap_or(d.seed),
            hidden: t.hidden.or(f.hidden).unwrap_or(d.hidden),
        };
        config.validate()?;
        Ok(config)
    }
}

fn cmd_profile(ctx: &Ctx, args: &ProfileArgs) -> CliResult<ExitCode> {
    let spec = ctx.dataset_spec(&args.data, None)?;
    let config = ctx.profile_config(&args.metrics)?;
    let ds = ctx.load_train(&spec)?;
    let p = profile(&ds, &config)?;
    let flat = p.to_flat();
    let key = content_hash(&json!({
        "command": "profile",
        "version": env!("CARGO_PKG_VERSION"),
        "images": spec.train_images,
        "labels": spec.train_labels,
        "n_classes": spec.n_classes,
        "train_subsample": spec.train_subsample,
        "subsample_seed": spec.subsample_seed,
        "config": config,
    }))?;
    let body = serde_json::to_string_pretty(&flat).map_err(Error::from)? + "\n";
    ctx.output("profiles", &format!("{key}.json"), body.as_bytes())?;
    if args.json || ctx.file.json.unwrap_or(false) {
        print!("{body}");
    } else {
        print!("{}", profile_table(&spec.train_images, &p));
    }
    Ok(ExitCode::SUCCESS)
}

fn profile_table(images: &Path, p: &ComplexityProfile) -> String {
    let name = images
        .parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| images.display().to_string());
    let mut head = vec!["dataset".to_string(), "heterogeneity".to_string()];
    let mut row = vec![name, format!("{:.4}", p.heterogeneity_bits)];
    for s in &p.sparsity {
        head.push(format!("sparsity@{}", s.ratio));
        row.push(s.discarded.to_string());
    }
    for e in &p.ec {
        head.push(format!("features@{}", e.v_theta));
        row.push(e.features.to_string());
    }
    head.push("intrinsic_dim".into());
    row.push(format!("{:.3}", p.intrinsic_dim));
    let widths: Vec<usize> = head.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = format!("{}\n{}\n", line(&head), line(&row));
    let _ = writeln!(
        out,
        "samples {}  features {}  classes {}",
        p.n_samples, p.n_features, p.n_classes
    );
    for e in &p.ec {
        let _ = writeln!(out, "ec_upper@{} = {}", e.v_theta, e.ec_upper);
    }
    if let Some(iso) = &p.isomap {
        let cells: Vec<String> = iso.iter().map(|r| format!("{}:{:.4}", r.dim, r.residual)).collect();
        let _ = writeln!(out, "isomap residual {}", cells.join(" "));
    }
    let c = &p.params;
    let _ = writeln!(
        out,
        "params: entropy_bins={} id_k={}..{} id_subsample={} id_seeds={:?} pca_subsample={}",
        c.entropy_bins,
        c.id_k_min,
        c.id_k_max,
        c.id_subsample,
        c.id_seeds,
        c.pca_subsample.map_or("all".into(), |n| n.to_string())
    );
    out
}

fn path_expression(s: &str) -> CliResult<PathExpression> {
    s.parse().map_err(|e: Error| input(format!("--path `{s}`: {e}")))
}

fn cmd_fedsim(ctx: &Ctx, args: &FedsimArgs) -> CliResult<ExitCode> {
    let f = &ctx.file;
    let expr = args.path.as_ref().or(f.path.as_ref()).map(|s| path_expression(s)).transpose()?;
    let declared = args.clients.or(f.clients);
    let clients = match (declared, expr.as_ref().and_then(|e| e.clients)) {
        (Some(a), Some(b)) if a != b => {
            return Err(input(format!("--clients {a} conflicts with clients={b} in --path")));
        }
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => expr.as_ref().map_or(5, |e| e.path.max_client() + 1),
    };
    let path = match expr {
        Some(e) => e.path,
        None => fedcomplex_core::complexity::FedPath::all_every_round(clients, 1)?,
    };
    if path.max_client() >= clients {
        return Err(input(format!(
            "path uses client {} but only {clients} clients are declared",
            path.max_client()
        )));
    }
    let scheme: PartitionScheme = match args.partition.as_ref().or(f.partition.as_ref()) {
        Some(s) => parse("partition", s)?,
        None => PartitionScheme::default(),
    };
    let partition_seed = args.partition_seed.or(f.partition_seed).unwrap_or(0);
    let train = ctx.train_config(&args.train)?;
    let spec = ctx.dataset_spec(&args.data, Some((&args.test_images, &args.test_labels, args.test_subsample)))?;

    let (train_ds, test_ds) = spec.load(Path::new(""))?;
    let partition = partition_clients(&train_ds, clients, scheme, partition_seed)?;
    let run = run_federation(&partition, &path, &test_ds, &train)?;

    let key = content_hash(&json!({
        "command": "fedsim",
        "version": env!("CARGO_PKG_VERSION"),
        "dataset": spec,
        "clients": clients,
        "partition": scheme,
        "partition_seed": partition_seed,
        "path": path,
        "train": train,
    }))?;
    let mut summary = run.summary_json();
    summary["clients"] = json!(clients);
    summary["partition"] = json!(scheme);
    summary["partition_seed"] = json!(partition_seed);
    summary["path"] = json!(path.to_string());
    summary["f_d"] = json!(path.f_d());
    ctx.output("runs", &format!("{key}.csv"), run.to_csv().as_bytes())?;
    let body = serde_json::to_string_pretty(&summary).map_err(Error::from)? + "\n";
    ctx.output("runs", &format!("{key}.json"), body.as_bytes())?;
    println!(
        "max_acc {:.4}  avg_acc {:.4}  effort {}",
        run.max_accuracy,
        run.avg_accuracy,
        run.effort.map_or_else(|| format!("not reached in {} rounds", train.rounds), |e| e.to_string())
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_score(ctx: &Ctx, args: &ScoreArgs) -> CliResult<ExitCode> {
    let f = &ctx.file;
    let path_text = args
        .path
        .as_ref()
        .or(f.path.as_ref())
        .ok_or_else(|| input("score needs --path"))?;
    let path = path_expression(path_text)?.path;
    let aggregation: AggregationSpec = match args.aggregation.as_ref().or(f.aggregation.as_ref()) {
        Some(s) => parse("aggregation", s)?,
        None => AggregationSpec::default(),
    };
    let beta: BetaRule = match args.beta.as_ref().or(f.beta.as_ref()) {
        Some(s) => parse("beta", s)?,
        None => BetaRule::default(),
    };
    let profiles = if args.profile.is_empty() {
        f.profiles.clone().unwrap_or_default()
    } else {
        args.profile.clone()
    };
    let data_given = args.data.dataset.is_some() || args.data.images.is_some();
    let x: Vec<f64> = if let Some(x) = args.x.clone().or_else(|| if data_given || !profiles.is_empty() { None } else { f.x.clone() }) {
        x
    } else if !profiles.is_empty() {
        profiles
            .iter()
            .map(|p| {
                let text = fs::read_to_string(p).map_err(|e| input(format!("{}: {e}", p.display())))?;
                let flat = serde_json::from_str(&text).map_err(|e| input(format!("{}: {e}", p.display())))?;
                let profile = ComplexityProfile::from_flat(&flat)?;
                Ok(aggregate_intrinsic(&profile, &aggregation)?)
            })
            .collect::<CliResult<_>>()?
    } else if data_given || f.dataset.is_some() || f.images.is_some() {
        // dataset-level value, shared by every entity of the path
        let spec = ctx.dataset_spec(&args.data, None)?;
        let config = ctx.profile_config(&args.metrics)?;
        let ds = ctx.load_train(&spec)?;
        let values = aggregation
            .measures()
            .iter()
            .map(|m| m.compute(&ds, &config))
            .collect::<Result<Vec<_>, _>>()?;
        vec![aggregation.combine(&values)?; path.distinct()]
    } else {
        return Err(input("score needs --x, --profile or a dataset"));
    };
    let vector = IntrinsicVector::new(x, aggregation, beta.beta(path.distinct()))?;
    let score = combined_f(&vector, &path)?;
    if args.json || f.json.unwrap_or(false) {
        let out = json!({
            "path": path.to_string(),
            "x": vector.x(),
            "beta": vector.beta(),
            "aggregation": vector.spec().to_string(),
            "f_x": score.f_x,
            "f_d": score.f_d,
            "F": score.f,
        });
        println!("{}", serde_json::to_string_pretty(&out).map_err(Error::from)?);
    } else {
        println!("f_x {}\nf_d {}\nF {}", score.f_x, score.f_d, score.f);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_study(ctx: &Ctx, args: &StudyArgs) -> CliResult<ExitCode> {
    let plan_path = args
        .plan
        .as_ref()
        .or(ctx.file.plan.as_ref())
        .ok_or_else(|| input("study needs --plan"))?;
    let plan = StudyPlan::load(plan_path)?;
    plan.resolve()?;
    let no_cache = args.no_cache || ctx.file.no_cache.unwrap_or(false);
    let options = StudyOptions {
        data_dir: ctx.data_dir.clone(),
        cache_dir: (!no_cache).then(|| ctx.out_dir.join("cache")),
    };
    let outcome = run_study(&plan, &options)?;
    if outcome.cache_hits > 0 {
        log::info!("{} of {} entries served from cache", outcome.cache_hits, outcome.records.len());
    }
    let key = content_hash(&json!({ "version": env!("CARGO_PKG_VERSION"), "plan": plan }))?;

    if !outcome.records.is_empty() {
        let mut summaries = Vec::new();
        for c in &plan.correlations {
            match correlate(&outcome.records, c.target, c.predictor) {
                Ok(s) => summaries.push(s),
                Err(e) => log::warn!("{} vs {}: {e}", c.target, c.predictor),
            }
        }
        ctx.output("reports", &format!("{key}.csv"), &emit_report(&outcome.records, &summaries, ReportFormat::Csv)?)?;
        ctx.output("reports", &format!("{key}.json"), &emit_report(&outcome.records, &summaries, ReportFormat::Json)?)?;
        for p in &plan.plots {
            match emit_plot_data(&outcome.records, &p.x, &p.y, p.fit) {
                Ok(text) => {
                    ctx.output("reports", &format!("{key}.{}-{}.dat", p.x, p.y), text.as_bytes())?;
                }
                Err(e) => log::warn!("plot {} vs {}: {e}", p.y, p.x),
            }
        }
        println!("{} records", outcome.records.len());
        for s in &summaries {
            println!(
                "{:<8} vs {:<3}  slope {:>10.6}  intercept {:>10.6}  r {:>7.4}  r2 {:.4}  n {}  excluded {}",
                s.target, s.predictor, s.slope, s.intercept, s.pearson_r, s.r_squared, s.n, s.excluded
            );
        }
    }
    if outcome.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for e in &outcome.failures {
            eprintln!("error: {e}");
        }
        eprintln!("{} of {} entries failed", outcome.failures.len(), outcome.failures.len() + outcome.records.len());
        Ok(ExitCode::from(1))
    }
}

fn cmd_paths(ctx: &Ctx, args: &PathsArgs) -> CliResult<ExitCode> {
    let f = &ctx.file;
    let entities = args.entities.or(f.entities).ok_or_else(|| input("paths needs --entities"))?;
    let rounds = args.rounds.or(f.rounds).ok_or_else(|| input("paths needs --rounds"))?;
    let policy: EnumerationPolicy = match args.policy.as_ref().or(f.policy.as_ref()) {
        Some(s) => parse("policy", s)?,
        None => EnumerationPolicy::AllSubsets,
    };
    let cap = args.cap.or(f.cap).unwrap_or(DEFAULT_ENUMERATION_CAP);
    let paths = enumerate_paths(entities, rounds, policy, cap)?;
    if args.json || f.json.unwrap_or(false) {
        let out: Vec<_> = paths.iter().map(|p| json!({ "path": p, "f_d": p.f_d() })).collect();
        println!("{}", serde_json::to_string(&out).map_err(Error::from)?);
    } else {
        for p in &paths {
            println!("{p}\t{}", p.f_d());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let threads = cli.threads.or(file.threads);
    if let Some(n) = threads {
        if n == 0 {
            return Err(input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| input(format!("thread pool: {e}")))?;
    }
    let ctx = Ctx {
        data_dir: cli.data_dir.clone().or_else(|| file.data_dir.clone()).unwrap_or_else(|| PathBuf::from(".")),
        out_dir: cli.out_dir.clone().or_else(|| file.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out")),
        file,
    };
    match &cli.command {
        Command::Profile(a) => cmd_profile(&ctx, a),
        Command::Fedsim(a) => cmd_fedsim(&ctx, a),
        Command::Score(a) => cmd_score(&ctx, a),
        Command::Study(a) => cmd_study(&ctx, a),
        Command::Paths(a) => cmd_paths(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match (cli.quiet, cli.verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
