use std::io::Write;

use local_ppi::data::{
    generate, load_bundle, load_csv, pca_fit, pca_transform, simulate_gradient, simulate_m, write_csv,
    BundleManifest, CsvSchema, SimulationSpec, BUNDLE_SCHEMA_VERSION, SIM_DIM,
};
use local_ppi::{Dataset, Error};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[test]
fn reference_values() {
    assert_eq!(simulate_m(&[0.0; 10]), 0.0);
    let a = [1.0, 1.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert!((simulate_m(&a) - 2.0).abs() < 1e-15);
    let b = [0.0, 0.0, -1.0, 1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0];
    assert!((simulate_m(&b) - 4.5).abs() < 1e-12);
    let g = simulate_gradient(&[1.0, 2.0, 0.5, 0.3, 0.0, 0.0, 0.0, 9.0, 9.0, 9.0]).unwrap();
    assert_eq!(g[0], 2.0);
    assert_eq!(g[1], 1.0);
    assert!(g[2].abs() < 1e-12);
    assert_eq!(&g[3..], &[-1.0, -0.5, 0.5, 1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn kinks_name_the_coordinate() {
    let mut x = [0.5; 10];
    x[2] = 0.0;
    match simulate_gradient(&x) {
        Err(Error::Nondifferentiable { coordinate }) => assert_eq!(coordinate, 3),
        other => panic!("unexpected {other:?}"),
    }
    x[2] = 0.5;
    x[1] = 0.0;
    assert!(matches!(simulate_gradient(&x), Err(Error::Nondifferentiable { coordinate: 1 | 2 })));
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 100 {
        let x: Vec<f64> = (0..10).map(|_| rng.sample(StandardNormal)).collect();
        if x[0].abs() < 1e-3 || x[1].abs() < 1e-3 || x[2].abs() < 1e-3 {
            continue;
        }
        let g = simulate_gradient(&x).unwrap();
        let step = 1e-6;
        for j in 0..10 {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[j] += step;
            down[j] -= step;
            let fd = (simulate_m(&up) - simulate_m(&down)) / (2.0 * step);
            assert!((fd - g[j]).abs() < 1e-6, "coordinate {j} at {x:?}: {fd} vs {}", g[j]);
        }
        checked += 1;
    }
}

/// `Var(Y)` from the independent pieces: `Var|x₁x₂| = 1 - 4/π²`, the linear
/// block contributes `1 + 0.25 + 0.25 + 1`, the `x₃` piece is integrated
/// numerically, plus the noise variance.
fn label_variance(noise_var: f64) -> f64 {
    let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let m2 = |u: f64| {
        if u <= 0.0 {
            u * (std::f64::consts::PI * u).cos()
        } else {
            (std::f64::consts::PI * u).sin()
        }
    };
    let integrate = |f: &dyn Fn(f64) -> f64| {
        // Simpson on each half-line separately, since m₂ has a kink at 0.
        let half = |a: f64, b: f64| {
            let m = 20_000;
            let h = (b - a) / m as f64;
            let mut s = f(a) + f(b);
            for i in 1..m {
                s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            s * h / 3.0
        };
        half(-12.0, 0.0) + half(0.0, 12.0)
    };
    let mean = integrate(&|u| m2(u) * phi(u));
    let second = integrate(&|u| m2(u) * m2(u) * phi(u));
    let pi = std::f64::consts::PI;
    (1.0 - 4.0 / (pi * pi)) + (second - mean * mean) + 2.5 + noise_var
}

#[test]
fn label_variance_matches_component_sum() {
    let sim = generate(&SimulationSpec::new(100_000, 1, 0.2f64.sqrt(), 3)).unwrap();
    let y = sim.labeled.labels().unwrap();
    let var = y.variance() * y.len() as f64 / (y.len() - 1) as f64;
    let expected = label_variance(0.2);
    assert!((var - expected).abs() < 0.1, "empirical {var}, expected {expected}");
}

#[test]
fn residuals_follow_the_noise_model() {
    let sd = 0.2f64.sqrt();
    let sim = generate(&SimulationSpec::new(100_000, 1, sd, 4)).unwrap();
    let r = sim.labeled.labels().unwrap() - &sim.labeled_truth.m;
    let n = r.len() as f64;
    let mean = r.mean();
    let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 3.0 * sd / n.sqrt());
    assert!((var - 0.2).abs() < 0.02);
}

#[test]
fn generation_is_deterministic_and_exact_without_noise() {
    let spec = SimulationSpec::new(200, 300, 0.5, 11);
    let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
    assert_eq!(a.labeled, b.labeled);
    assert_eq!(a.unlabeled, b.unlabeled);
    let other = generate(&SimulationSpec::new(200, 300, 0.5, 12)).unwrap();
    assert_ne!(a.labeled, other.labeled);

    let clean = generate(&SimulationSpec::new(50, 5, 0.0, 2)).unwrap();
    for i in 0..50 {
        assert_eq!(clean.labeled.labels().unwrap()[i], simulate_m(&clean.labeled.row(i)));
    }
    assert_eq!(clean.labeled.dim(), SIM_DIM);
}

fn names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("x{j}")).collect()
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let feats = DMatrix::from_fn(40, 3, |_, _| rng.sample::<f64, _>(StandardNormal) * 1e3);
    let d = Dataset::new(feats)
        .with_labels(DVector::from_fn(40, |i, _| (i as f64).sqrt() / 7.0))
        .unwrap()
        .with_predictions(DVector::from_fn(40, |i, _| -1e-9 * i as f64))
        .unwrap();
    let schema = CsvSchema::new(names(3)).with_label("y").with_prediction("f");
    write_csv(&path, &d, &schema).unwrap();
    let back = load_csv(&path, &schema).unwrap();
    assert_eq!(back.dropped_rows, 0);
    assert!((back.dataset.features() - d.features()).amax() <= 1e-12);
    assert!((back.dataset.labels().unwrap() - d.labels().unwrap()).amax() <= 1e-12);
    assert!((back.dataset.predictions().unwrap() - d.predictions().unwrap()).amax() <= 1e-12);
}

#[test]
fn nan_rows_are_dropped_and_counted() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "x1,x2,y,extra").unwrap();
    for i in 0..10 {
        let y = if i == 3 { "NaN".to_string() } else if i == 7 { String::new() } else { i.to_string() };
        writeln!(f, "{i},{},{y},zzz", i * 2).unwrap();
    }
    drop(f);
    let loaded = load_csv(&path, &CsvSchema::new(names(2)).with_label("y")).unwrap();
    assert_eq!(loaded.dataset.len(), 8);
    assert_eq!(loaded.dropped_rows, 2);
}

#[test]
fn bad_cells_and_missing_columns_are_located() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(&path, "x1,y\n1,2\n3,oops\n").unwrap();
    match load_csv(&path, &CsvSchema::new(names(1)).with_label("y")) {
        Err(Error::Parse { row, column, .. }) => {
            assert_eq!(row, 3);
            assert_eq!(column, "y");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        load_csv(&path, &CsvSchema::new(names(2))),
        Err(Error::Parse { row: 1, .. })
    ));
    assert!(matches!(load_csv(&dir.path().join("none.csv"), &CsvSchema::new(names(1))), Err(Error::Io { .. })));
}

#[test]
fn bundle_resolves_relative_paths_and_tags_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("data");
    std::fs::create_dir(&sub).unwrap();
    std::fs::write(sub.join("lab.csv"), "x1,y\n1,2\n3,4\n").unwrap();
    std::fs::write(sub.join("unl.csv"), "x1,y\n5,\n6,\n7,\n").unwrap();
    let manifest = BundleManifest {
        schema_version: BUNDLE_SCHEMA_VERSION,
        provenance: "survey-2024".into(),
        schema: CsvSchema::new(names(1)),
        labeled: "lab.csv".into(),
        unlabeled: Some("unl.csv".into()),
        truth: None,
        generator: None,
    };
    std::fs::write(sub.join("m.json"), serde_json::to_string(&manifest).unwrap()).unwrap();
    let b = load_bundle(&sub.join("m.json")).unwrap();
    assert_eq!(b.labeled.dataset.len(), 2);
    assert_eq!(b.unlabeled.unwrap().dataset.len(), 3);
    assert_eq!(b.labeled.dataset.provenance(), Some("survey-2024"));

    let mut wrong = manifest;
    wrong.schema_version = 99;
    std::fs::write(sub.join("w.json"), serde_json::to_string(&wrong).unwrap()).unwrap();
    assert!(matches!(load_bundle(&sub.join("w.json")), Err(Error::Schema { .. })));
}

#[test]
fn pca_on_a_line_explains_everything() {
    let x = DMatrix::from_fn(30, 2, |i, j| (i as f64 - 7.0) * if j == 0 { 1.0 } else { -2.0 } + 3.0);
    let model = pca_fit(&x, 1).unwrap();
    assert!((model.explained_variance_ratio()[0] - 1.0).abs() < 1e-10);
    assert!(model.components.row(0).iter().cloned().fold(f64::MIN, f64::max) > 0.0);
    assert!(pca_fit(&x, 3).is_err());
    assert!(pca_fit(&x, 0).is_err());
}

#[test]
fn pca_on_a_square_has_equal_variances() {
    let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
    let model = pca_fit(&x, 2).unwrap();
    assert!((model.explained_variance[0] - model.explained_variance[1]).abs() < 1e-12);
    assert!((model.explained_variance[0] - 4.0 / 3.0).abs() < 1e-12);
}

fn random_matrix(seed: u64, n: usize, p: usize) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mix = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal)) * mix
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pca_components_are_orthonormal(seed in any::<u64>(), p in 2usize..6) {
        let k = p - 1;
        let model = pca_fit(&random_matrix(seed, 40, p), k).unwrap();
        let gram = &model.components * model.components.transpose();
        prop_assert!((gram - DMatrix::identity(k, k)).amax() < 1e-8);
        let ev = &model.explained_variance;
        prop_assert!(ev.iter().all(|&v| v >= 0.0));
        prop_assert!((1..k).all(|i| ev[i] <= ev[i - 1]));
    }

    #[test]
    fn full_rank_pca_preserves_distances(seed in any::<u64>(), p in 1usize..6) {
        let x = random_matrix(seed, 25, p);
        let z = pca_transform(&pca_fit(&x, p).unwrap(), &x).unwrap();
        for i in 0..25 {
            for j in 0..i {
                let a = (x.row(i) - x.row(j)).norm();
                let b = (z.row(i) - z.row(j)).norm();
                prop_assert!((a - b).abs() < 1e-8 * (1.0 + a));
            }
        }
    }

    #[test]
    fn pca_is_idempotent_up_to_signs(seed in any::<u64>(), p in 2usize..5) {
        let x = random_matrix(seed, 30, p);
        let k = p;
        let z = pca_transform(&pca_fit(&x, k).unwrap(), &x).unwrap();
        let z2 = pca_transform(&pca_fit(&z, k).unwrap(), &z).unwrap();
        for j in 0..k {
            let same = (z.column(j) - z2.column(j)).amax();
            let flipped = (z.column(j) + z2.column(j)).amax();
            prop_assert!(same.min(flipped) < 1e-7 * (1.0 + z.column(j).amax()));
        }
    }
}
