//! Estimators checked against data with known ground truth.

use fedcomplex_core::dataset::{make_synthetic, partition_clients, ImageDataset, PartitionScheme, SyntheticKind};
use fedcomplex_core::fedsim::{init_model, run_federation_with, train_centralized, TrainConfig};
use fedcomplex_core::complexity::FedPath;
use fedcomplex_core::kernels::{covariance_spectrum, graph_geodesics, knn, Points};
use fedcomplex_core::metrics::{intrinsic_dimension_mle, isomap_residuals, mle_intrinsic_dimension, IdParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::f64::consts::PI;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn uniform_cube_dimension_is_recovered() {
    for d in [3usize, 5, 9] {
        let ds = make_synthetic(SyntheticKind::UniformCube { dim: d }, 2000, 784, 11).unwrap();
        let params = IdParams { subsample: 2000, ..IdParams::default() };
        let est = intrinsic_dimension_mle(&ds, &params).unwrap();
        let rel = (est - d as f64).abs() / d as f64;
        assert!(rel <= 0.15, "d={d}: estimate {est}");
    }
}

#[test]
fn line_in_high_dimension_is_one_dimensional() {
    let mut r = rng(3);
    let dir: Vec<f64> = (0..784).map(|_| StandardNormal.sample(&mut r)).collect();
    let mut data = Vec::with_capacity(500 * 784);
    for _ in 0..500 {
        let t: f64 = r.random_range(0.0..100.0);
        data.extend(dir.iter().map(|v| v * t));
    }
    let est = mle_intrinsic_dimension(&Points::new(data, 784).unwrap(), 10, 20).unwrap();
    assert!((est.dimension - 1.0).abs() <= 0.1, "{}", est.dimension);
}

#[test]
fn constant_data_has_no_dimension() {
    let ds = make_synthetic(SyntheticKind::Constant { value: 9 }, 50, 16, 0).unwrap();
    assert!(intrinsic_dimension_mle(&ds, &IdParams { subsample: 50, ..IdParams::default() }).is_err());
}

#[test]
fn plane_embeds_in_two_dimensions() {
    let mut r = rng(5);
    let mut data = Vec::new();
    for _ in 0..400 {
        let (u, v): (f64, f64) = (r.random_range(0.0..10.0), r.random_range(0.0..10.0));
        // a tilted plane in 5-D
        data.extend([u, v, u + v, u - 2.0 * v, 0.5 * u]);
    }
    let res = isomap_residuals(&Points::new(data, 5).unwrap(), 10, &[1, 2, 3]).unwrap();
    assert!(res[1].residual < 0.01, "{res:?}");
    assert!(res[0].residual > res[1].residual);
}

#[test]
fn circle_needs_two_dimensions() {
    let n = 300;
    let data: Vec<f64> = (0..n)
        .flat_map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            [t.cos(), t.sin()]
        })
        .collect();
    let res = isomap_residuals(&Points::new(data, 2).unwrap(), 6, &[1, 2]).unwrap();
    assert!(res[1].residual <= res[0].residual, "{res:?}");
}

#[test]
fn noisy_circle_geodesic_reaches_half_circumference() {
    let mut r = rng(8);
    let n = 400;
    let data: Vec<f64> = (0..n)
        .flat_map(|i| {
            let t = 2.0 * PI * i as f64 / n as f64;
            let rad = 1.0 + r.random_range(-0.005..0.005);
            [rad * t.cos(), rad * t.sin()]
        })
        .collect();
    let pts = Points::new(data, 2).unwrap();
    let g = graph_geodesics(&knn(&pts, 4).unwrap(), true).unwrap();
    let half = g[(0, n / 2)];
    assert!((half - PI).abs() / PI < 0.02, "antipodal geodesic {half}");
}

#[test]
fn isotropic_gaussian_spectrum_is_flat() {
    let mut r = rng(13);
    let (n, d) = (20000, 10);
    let data: Vec<f64> = (0..n * d).map(|_| { let z: f64 = StandardNormal.sample(&mut r); 3.0 * z }).collect();
    let spec = covariance_spectrum(&Points::new(data, d).unwrap()).unwrap();
    let ratio = spec.eigenvalues[0] / spec.eigenvalues[d - 1];
    assert!(ratio < 1.15, "{ratio}");
    assert!((spec.total_variance / d as f64 - 9.0).abs() < 0.3);
}

#[test]
fn knn_agrees_with_brute_force_on_fifty_points() {
    let mut r = rng(21);
    let data: Vec<f64> = (0..50 * 3).map(|_| r.random_range(-1.0..1.0)).collect();
    let pts = Points::new(data, 3).unwrap();
    let table = knn(&pts, 5).unwrap();
    for i in 0..50 {
        let mut d: Vec<(f64, usize)> = (0..50)
            .filter(|&j| j != i)
            .map(|j| {
                let s: f64 = pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| (a - b).powi(2)).sum();
                (s.sqrt(), j)
            })
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0));
        let want: Vec<usize> = d[..5].iter().map(|p| p.1).collect();
        assert_eq!(table.indices(i), &want[..]);
    }
}

fn ten_class(n: usize, seed: u64) -> ImageDataset {
    let mut r = rng(seed);
    let labels: Vec<u32> = (0..n).map(|i| (i % 10) as u32).collect();
    let pixels: Vec<u8> = (0..n * 16).map(|_| r.random()).collect();
    ImageDataset::new(pixels, labels, 10, 4, 4).unwrap()
}

#[test]
fn dirichlet_label_mix_follows_alpha() {
    // large alpha: every client's label mix should look like the pool's
    let ds = ten_class(20000, 1);
    let part = partition_clients(&ds, 4, PartitionScheme::Dirichlet { alpha: 1000.0 }, 2).unwrap();
    for c in &part.clients {
        let hist = c.label_histogram();
        let n: usize = hist.iter().sum();
        let expected = n as f64 / 10.0;
        let chi2: f64 = hist.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom; 99.9th percentile is 27.9
        assert!(chi2 < 27.9, "chi2 {chi2} for {hist:?}");
    }
    // small alpha: each class lands almost entirely on one client
    let skew = partition_clients(&ds, 4, PartitionScheme::Dirichlet { alpha: 0.05 }, 2).unwrap();
    let hists: Vec<Vec<usize>> = skew.clients.iter().map(|c| c.label_histogram()).collect();
    let concentration = (0..10)
        .map(|k| {
            let held: Vec<usize> = hists.iter().map(|h| h.get(k).copied().unwrap_or(0)).collect();
            *held.iter().max().unwrap() as f64 / held.iter().sum::<usize>() as f64
        })
        .sum::<f64>()
        / 10.0;
    assert!(concentration > 0.8, "{concentration}");
}

#[test]
fn single_client_federation_is_centralized_sgd() {
    let train = ten_class(600, 4);
    let test = ten_class(200, 5);
    let config = TrainConfig {
        rounds: 4,
        hidden: 12,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let model = init_model(16, 12, 10, 9).unwrap();
    let fed = run_federation_with(model.clone(), std::slice::from_ref(&train), &FedPath::new(vec![vec![0]]).unwrap(), &test, &config).unwrap();
    let cen = train_centralized(model, &train, &test, &config).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&fed.accuracies), bits(&cen.accuracies));
}
