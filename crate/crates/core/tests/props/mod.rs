//! Invariant checks shared by the `properties` and `acceptance` targets.
//! Each check drives a deterministic proptest runner and returns the first
//! counterexample as an error string.

#![allow(dead_code)]

use std::collections::BTreeSet;

use fedcomplex_core::complexity::{enumerate_paths, EnumerationPolicy, FedPath};
use fedcomplex_core::dataset::{
    make_synthetic, parse_idx, partition_clients, IdxTensor, ImageDataset, PartitionScheme, SyntheticKind,
};
use fedcomplex_core::fedsim::{fedavg_aggregate, init_model, run_federation, Classifier, TrainConfig};
use fedcomplex_core::kernels::{knn, Points};
use fedcomplex_core::metrics::{
    image_entropy, intrinsic_dimension_mle, pca_sparsity, variance_filtered_features, IdParams,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

pub fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String> {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn dataset(n: usize, d: usize, pixels: Vec<u8>) -> ImageDataset {
    ImageDataset::new(pixels, vec![0; n], 1, d, 1).unwrap()
}

fn small_dataset(max_n: usize, max_d: usize) -> impl Strategy<Value = ImageDataset> {
    (2..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        // few distinct levels so that ties and zero variance show up
        prop::collection::vec(prop::sample::select(vec![0u8, 1, 7, 128, 255]), n * d)
            .prop_map(move |px| dataset(n, d, px))
    })
}

pub fn entropy_bounds() -> Result<(), String> {
    let strat = (prop::collection::vec(any::<u8>(), 1..300), 1usize..=256, any::<u64>());
    run(256, strat, |(img, bins, seed)| {
        let h = image_entropy(&img, bins);
        let cap = (bins.min(img.len()) as f64).log2();
        prop_assert!(h >= 0.0 && h <= cap + 1e-12, "H={h} outside [0, {cap}]");
        let mut shuffled = img.clone();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(h.to_bits(), image_entropy(&shuffled, bins).to_bits());
        Ok(())
    })
}

pub fn sparsity_monotone_in_ratio() -> Result<(), String> {
    let strat = (small_dataset(40, 12), 0.05f64..0.99, 0.05f64..0.99);
    run(64, strat, |(ds, a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let s_lo = pca_sparsity(&ds, lo, None, 0).unwrap();
        let s_hi = pca_sparsity(&ds, hi, None, 0).unwrap();
        prop_assert!(s_lo.discarded >= s_hi.discarded, "{lo}->{} but {hi}->{}", s_lo.discarded, s_hi.discarded);
        Ok(())
    })
}

pub fn features_monotone_in_threshold() -> Result<(), String> {
    let strat = (small_dataset(40, 20), 0.0f64..20000.0, 0.0f64..20000.0);
    run(128, strat, |(ds, a, b)| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let f_lo = variance_filtered_features(&ds, lo).unwrap();
        let f_hi = variance_filtered_features(&ds, hi).unwrap();
        prop_assert!(f_lo >= f_hi);
        prop_assert!(f_lo <= ds.n_features());
        Ok(())
    })
}

fn path_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::btree_set(0usize..6, 1..=4), 1..=5)
        .prop_map(|rounds| rounds.into_iter().map(|s| s.into_iter().collect()).collect())
}

pub fn fd_entity_addition() -> Result<(), String> {
    let strat = (path_strategy(), any::<prop::sample::Index>());
    run(256, strat, |(rounds, at)| {
        let base = FedPath::new(rounds.clone()).unwrap();
        let fresh = base.max_client() + 1;
        let r = at.index(rounds.len());

        // a new entity appearing once adds exactly 1
        let mut added = rounds.clone();
        added[r].push(fresh);
        let grown = FedPath::new(added).unwrap();
        prop_assert!((grown.f_d() - base.f_d() - 1.0).abs() < 1e-12);

        // an existing entity joining one more round lowers f_d
        let mut extra = rounds.clone();
        let member = rounds[r][0];
        extra.push(vec![member]);
        let denser = FedPath::new(extra).unwrap();
        prop_assert!(denser.f_d() < base.f_d());

        let direct: f64 = base.frequencies().values().map(|&m| 1.0 / m as f64).sum();
        prop_assert!((base.f_d() - direct).abs() < 1e-12);
        prop_assert!(base.f_d() <= base.distinct() as f64 && base.f_d() > 0.0);
        Ok(())
    })
}

fn weighted_mean(sets: &[Vec<f64>], counts: &[usize]) -> Vec<f64> {
    let total: f64 = counts.iter().map(|&c| c as f64).sum();
    (0..sets[0].len())
        .map(|j| sets.iter().zip(counts).map(|(p, &c)| p[j] * c as f64).sum::<f64>() / total)
        .collect()
}

pub fn fedavg_identities() -> Result<(), String> {
    let strat = (1usize..6, 1usize..20).prop_flat_map(|(k, len)| {
        (
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, len), k),
            prop::collection::vec(1usize..500, k),
            Just(()).prop_perturb(move |_, mut rng| {
                let mut order: Vec<usize> = (0..k).collect();
                for i in (1..k).rev() {
                    order.swap(i, rng.random_range(0..=i));
                }
                order
            }),
        )
    });
    run(256, strat, |(sets, counts, order)| {
        let avg = fedavg_aggregate(&sets, &counts).unwrap();
        let oracle = weighted_mean(&sets, &counts);
        for (a, o) in avg.iter().zip(&oracle) {
            prop_assert!((a - o).abs() <= 1e-12 * (1.0 + o.abs()), "{a} vs {o}");
        }

        let ps: Vec<Vec<f64>> = order.iter().map(|&i| sets[i].clone()).collect();
        let pc: Vec<usize> = order.iter().map(|&i| counts[i]).collect();
        let permuted = fedavg_aggregate(&ps, &pc).unwrap();
        for (a, b) in avg.iter().zip(&permuted) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        // identical inputs and a single client come back bit-identical
        let same = vec![sets[0].clone(); sets.len()];
        prop_assert_eq!(&fedavg_aggregate(&same, &counts).unwrap(), &sets[0]);
        prop_assert_eq!(&fedavg_aggregate(&sets[..1], &counts[..1]).unwrap(), &sets[0]);

        // doubling every count leaves the weights unchanged
        let doubled: Vec<usize> = counts.iter().map(|c| c * 2).collect();
        prop_assert_eq!(fedavg_aggregate(&sets, &doubled).unwrap(), avg);
        Ok(())
    })
}

pub fn knn_matches_brute_force() -> Result<(), String> {
    let strat = (3usize..=200, 1usize..=8).prop_flat_map(|(n, d)| {
        (
            // coarse grid values produce plenty of exact distance ties
            prop::collection::vec((0i32..6).prop_map(f64::from), n * d),
            Just(d),
            1..n.min(16),
        )
    });
    run(48, strat, |(data, d, k)| {
        let pts = Points::new(data, d).unwrap();
        let table = knn(&pts, k).unwrap();
        for i in 0..pts.len() {
            let mut all: Vec<(f64, usize)> = (0..pts.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let d2: f64 = pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2.sqrt(), j)
                })
                .collect();
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let want: Vec<f64> = all[..k].iter().map(|p| p.0).collect();
            let got = table.distances(i);
            for (g, w) in got.iter().zip(&want) {
                prop_assert!((g - w).abs() < 1e-9, "point {i}: {got:?} vs {want:?}");
            }
            // chosen neighbours must really be at the reported distances
            for (&j, &dist) in table.indices(i).iter().zip(got) {
                prop_assert!(j != i);
                let d2: f64 = pts.row(i).iter().zip(pts.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                prop_assert!((d2.sqrt() - dist).abs() < 1e-9);
            }
        }
        Ok(())
    })
}

fn brute_force_paths(n: usize, rounds: usize, keep: impl Fn(usize) -> bool) -> BTreeSet<Vec<Vec<usize>>> {
    let subsets: Vec<Vec<usize>> = (1usize..1 << n)
        .filter(|m| keep(m.count_ones() as usize))
        .map(|m| (0..n).filter(|b| m & (1 << b) != 0).collect())
        .collect();
    let mut out = BTreeSet::new();
    let total = subsets.len().pow(rounds as u32);
    for mut code in 0..total {
        let mut path = Vec::with_capacity(rounds);
        for _ in 0..rounds {
            path.push(subsets[code % subsets.len()].clone());
            code /= subsets.len();
        }
        out.insert(path);
    }
    out
}

pub fn enumeration_counts() -> Result<(), String> {
    let mut cases = Vec::new();
    for n in 1..=3 {
        for r in 1..=3 {
            cases.push((n, r, EnumerationPolicy::AllSubsets));
            cases.push((n, r, EnumerationPolicy::Singleton));
            for s in 1..=n {
                cases.push((n, r, EnumerationPolicy::FixedSize(s)));
            }
        }
    }
    run(64, prop::sample::select(cases), |(n, r, policy)| {
        let got = enumerate_paths(n, r, policy, 1_000_000).unwrap();
        let want = match policy {
            EnumerationPolicy::AllSubsets => brute_force_paths(n, r, |_| true),
            EnumerationPolicy::Singleton => brute_force_paths(n, r, |c| c == 1),
            EnumerationPolicy::FixedSize(s) => brute_force_paths(n, r, |c| c == s),
        };
        let got_set: BTreeSet<Vec<Vec<usize>>> = got.iter().map(|p| p.rounds().to_vec()).collect();
        prop_assert_eq!(got.len(), got_set.len(), "duplicates emitted");
        prop_assert_eq!(got_set, want);
        if got.len() > 1 {
            prop_assert!(enumerate_paths(n, r, policy, got.len() as u64 - 1).is_err());
        }
        Ok(())
    })
}

pub fn idx_round_trip() -> Result<(), String> {
    let strat = prop::collection::vec(1usize..6, 1..=4).prop_flat_map(|dims| {
        let len: usize = dims.iter().product();
        (Just(dims), prop::collection::vec(any::<u8>(), len))
    });
    run(256, strat, |(dims, data)| {
        let t = IdxTensor::new(dims, data).unwrap();
        let bytes = t.to_bytes();
        prop_assert_eq!(parse_idx(&bytes).unwrap(), t.clone());
        // truncation and trailing bytes are both rejected
        prop_assert!(parse_idx(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        prop_assert!(parse_idx(&longer).is_err());
        Ok(())
    })
}

pub fn seeded_pipelines_are_deterministic() -> Result<(), String> {
    let schemes = vec![
        PartitionScheme::IidEqual,
        PartitionScheme::LabelShard { shards_per_client: 2 },
        PartitionScheme::Dirichlet { alpha: 0.5 },
    ];
    let strat = (any::<u64>(), prop::sample::select(schemes), 2usize..5);
    run(12, strat, |(seed, scheme, clients)| {
        let ds = labelled(240, 6, seed);
        let a = partition_clients(&ds, clients, scheme, seed).unwrap();
        let b = partition_clients(&ds, clients, scheme, seed).unwrap();
        prop_assert_eq!(&a.assignments, &b.assignments);

        let s1 = ds.subsample(100, seed).unwrap();
        prop_assert_eq!(s1, ds.subsample(100, seed).unwrap());
        let g1 = make_synthetic(SyntheticKind::UniformCube { dim: 3 }, 50, 8, seed).unwrap();
        prop_assert_eq!(g1, make_synthetic(SyntheticKind::UniformCube { dim: 3 }, 50, 8, seed).unwrap());

        let id = IdParams { subsample: 120, seed, ..IdParams::default() };
        let cube = make_synthetic(SyntheticKind::UniformCube { dim: 4 }, 300, 8, seed).unwrap();
        prop_assert_eq!(
            intrinsic_dimension_mle(&cube, &id).unwrap().to_bits(),
            intrinsic_dimension_mle(&cube, &id).unwrap().to_bits()
        );
        prop_assert_eq!(pca_sparsity(&cube, 0.9, Some(100), seed).unwrap(), pca_sparsity(&cube, 0.9, Some(100), seed).unwrap());

        let path = FedPath::all_every_round(clients, 1).unwrap();
        let config = TrainConfig {
            rounds: 3,
            hidden: 8,
            seed,
            ..TrainConfig::default()
        };
        let r1 = run_federation(&a, &path, &ds, &config).unwrap();
        let r2 = run_federation(&b, &path, &ds, &config).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&r1.accuracies), bits(&r2.accuracies));
        Ok(())
    })
}

/// Four classes; class `c` brightens feature block `c`.
pub fn labelled(n: usize, d: usize, seed: u64) -> ImageDataset {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 4;
        labels.push(c as u32);
        for j in 0..d {
            let base: u8 = if j % 4 == c { 180 } else { 20 };
            pixels.push(base.saturating_add(rng.random_range(0..60)));
        }
    }
    ImageDataset::new(pixels, labels, 4, d, 1).unwrap()
}

/// Central finite differences against backprop on a 1 -> 2 -> 2 model
/// (10 parameters), 100 random probes.
pub fn gradient_probe_errors(probes: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut errors = Vec::with_capacity(probes);
    let h = 1e-6;
    while errors.len() < probes {
        let mut model = init_model(1, 2, 2, rng.random()).unwrap();
        for p in model.params_mut() {
            *p = rng.random_range(-1.5..1.5);
        }
        let inputs: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let labels: Vec<u32> = (0..4).map(|_| rng.random_range(0..2)).collect();
        let mut grad = vec![0.0; model.params().len()];
        model.loss_and_grad(&inputs, &labels, &mut grad);
        let j = rng.random_range(0..grad.len());
        let mut scratch = vec![0.0; grad.len()];
        let mut plus = model.clone();
        plus.params_mut()[j] += h;
        let mut minus = model.clone();
        minus.params_mut()[j] -= h;
        let fd = (plus.loss_and_grad(&inputs, &labels, &mut scratch) - minus.loss_and_grad(&inputs, &labels, &mut scratch)) / (2.0 * h);
        errors.push((grad[j] - fd).abs() / grad[j].abs().max(fd.abs()).max(1e-6));
    }
    errors
}

/// A named property check.
pub type Check = (&'static str, fn() -> Result<(), String>);

/// Every check counted by the property criterion, by name.
pub fn all() -> Vec<Check> {
    vec![
        ("entropy bounds", entropy_bounds),
        ("sparsity vs ratio", sparsity_monotone_in_ratio),
        ("features vs v_theta", features_monotone_in_threshold),
        ("f_d entity addition", fd_entity_addition),
        ("fedavg identities", fedavg_identities),
        ("knn brute force", knn_matches_brute_force),
        ("enumeration counts", enumeration_counts),
        ("idx round trip", idx_round_trip),
        ("seeded determinism", seeded_pipelines_are_deterministic),
    ]
}
