//! Pre-deployment complexity estimation for federated image classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`]: IDX loading, synthetic oracle datasets, client partitioning
//! - [`kernels`]: exact k-NN, covariance spectra, graph geodesics, least squares
//! - [`metrics`]: entropy heterogeneity, variance-filtered feature counts,
//!   PCA sparsity, MLE intrinsic dimensionality, Isomap residuals
//! - [`fedsim`]: shallow classifier, local SGD, FedAvg, round-by-round evaluation
//! - [`complexity`]: participation paths and the combined score `F = f(X) + f(d)`
//! - [`study`]: sweep plans, cached execution, correlations, reports and plot data

pub mod complexity;
pub mod dataset;
pub mod error;
pub mod fedsim;
pub mod kernels;
pub mod metrics;
pub mod study;

pub use error::{Error, Result};

pub(crate) mod rng {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// ChaCha keeps streams identical across platforms and crate versions.
    pub type DetRng = ChaCha8Rng;

    pub fn seeded(seed: u64) -> DetRng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Derive an independent stream from a base seed and a list of tags.
    pub fn derived(seed: u64, tags: &[u64]) -> DetRng {
        let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
        for &t in tags {
            h = splitmix(h ^ t.wrapping_mul(0xBF58_476D_1CE4_E5B9));
        }
        seeded(h)
    }

    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}
