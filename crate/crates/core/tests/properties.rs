mod props;

use fedcomplex_core::kernels::{covariance_spectrum, graph_geodesics, knn, linfit, Points};
use proptest::prelude::*;

macro_rules! shared {
    ($($name:ident),+ $(,)?) => {
        $(#[test]
        fn $name() {
            if let Err(e) = props::$name() {
                panic!("{e}");
            }
        })+
    };
}

shared!(
    entropy_bounds,
    sparsity_monotone_in_ratio,
    features_monotone_in_threshold,
    fd_entity_addition,
    fedavg_identities,
    knn_matches_brute_force,
    enumeration_counts,
    idx_round_trip,
    seeded_pipelines_are_deterministic,
);

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn covariance_trace_is_preserved(
        (n, d, data) in (2usize..40, 1usize..12).prop_flat_map(|(n, d)| {
            (Just(n), Just(d), prop::collection::vec(-50.0f64..50.0, n * d))
        })
    ) {
        let pts = Points::new(data.clone(), d).unwrap();
        let spec = covariance_spectrum(&pts).unwrap();
        let mut trace = 0.0;
        for j in 0..d {
            let mean = (0..n).map(|i| data[i * d + j]).sum::<f64>() / n as f64;
            trace += (0..n).map(|i| (data[i * d + j] - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        }
        let sum: f64 = spec.eigenvalues.iter().sum();
        prop_assert!((sum - trace).abs() <= 1e-9 * (1.0 + trace), "{sum} vs {trace}");
        prop_assert!((spec.total_variance - trace).abs() <= 1e-9 * (1.0 + trace));
        prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn geodesics_are_a_metric(
        (d, data) in (12usize..60).prop_flat_map(|n| (Just(2usize), prop::collection::vec(-10.0f64..10.0, n * 2)))
    ) {
        let pts = Points::new(data, d).unwrap();
        let table = knn(&pts, 6).unwrap();
        let Ok(g) = graph_geodesics(&table, true) else { return Ok(()) };
        let n = pts.len();
        for i in 0..n {
            prop_assert_eq!(g[(i, i)], 0.0);
            for j in 0..n {
                prop_assert!((g[(i, j)] - g[(j, i)]).abs() < 1e-9);
                let straight: f64 = pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                prop_assert!(g[(i, j)] + 1e-9 >= straight);
                for k in 0..n {
                    prop_assert!(g[(i, j)] <= g[(i, k)] + g[(k, j)] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn linfit_recovers_planted_lines(
        slope in -100.0f64..100.0,
        intercept in -100.0f64..100.0,
        xs in prop::collection::btree_set(-1000i32..1000, 3..50),
    ) {
        let x: Vec<f64> = xs.into_iter().map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + intercept).collect();
        let fit = linfit(&x, &y).unwrap();
        prop_assert!((fit.slope - slope).abs() <= 1e-10 * (1.0 + slope.abs()));
        prop_assert!((fit.intercept - intercept).abs() <= 1e-8 * (1.0 + intercept.abs()));
        if slope.abs() > 1e-6 {
            prop_assert!((fit.r_squared - 1.0).abs() < 1e-10);
        }
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let errors = props::gradient_probe_errors(100, 7);
    let worst = errors.iter().cloned().fold(0.0, f64::max);
    assert!(worst <= 1e-4, "worst relative error {worst}");
}
