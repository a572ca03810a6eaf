//! Flat JSON configuration file. Every key is optional and mirrors the flag
//! of the same name (dashes become underscores); flags win over the file,
//! the file wins over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,

    pub dataset: Option<PathBuf>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    pub n_classes: Option<usize>,
    pub train_subsample: Option<usize>,
    pub test_subsample: Option<usize>,
    pub subsample_seed: Option<u64>,

    pub entropy_bins: Option<usize>,
    pub sparsity_ratios: Option<Vec<f64>>,
    pub variance_thresholds: Option<Vec<f64>>,
    pub pca_subsample: Option<usize>,
    pub pca_seed: Option<u64>,
    pub id_k_min: Option<usize>,
    pub id_k_max: Option<usize>,
    pub id_subsample: Option<usize>,
    pub id_seeds: Option<Vec<u64>>,
    pub isomap: Option<bool>,
    pub isomap_k: Option<usize>,
    pub isomap_dims: Option<Vec<usize>>,
    pub isomap_subsample: Option<usize>,
    pub isomap_seed: Option<u64>,

    pub clients: Option<usize>,
    pub partition: Option<String>,
    pub partition_seed: Option<u64>,
    pub path: Option<String>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub local_iterations: Option<usize>,
    pub local_unit: Option<String>,
    pub rounds: Option<usize>,
    pub threshold: Option<f64>,
    pub hidden: Option<usize>,
    pub seed: Option<u64>,

    pub x: Option<Vec<f64>>,
    pub profiles: Option<Vec<PathBuf>>,
    pub aggregation: Option<String>,
    pub beta: Option<String>,

    pub plan: Option<PathBuf>,
    pub no_cache: Option<bool>,

    pub entities: Option<usize>,
    pub policy: Option<String>,
    pub cap: Option<u64>,

    pub json: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }
}
