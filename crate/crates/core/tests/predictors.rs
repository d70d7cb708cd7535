use local_ppi::data::{generate, simulate_m, SimulationSpec};
use local_ppi::predictors::{predictor_quality, quality_from_values, KnnPredictor, OracleFunction, Predictor, PredictorRef};
use local_ppi::{Dataset, Error};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn noiseless_oracle_reproduces_truth() {
    let sim = generate(&SimulationSpec::new(200, 1, 0.3, 1)).unwrap();
    let pred = Predictor::noisy_oracle(0.0, OracleFunction::Piecewise, 9).unwrap();
    let f = pred.predict(sim.labeled.features()).unwrap();
    assert_eq!(f, sim.labeled_truth.m);
}

#[test]
fn noisy_oracle_has_the_target_mse() {
    let sim = generate(&SimulationSpec::new(10_000, 1, 0.2f64.sqrt(), 2)).unwrap();
    let pred = Predictor::noisy_oracle(0.316, OracleFunction::Piecewise, 3).unwrap();
    let f = pred.predict(sim.labeled.features()).unwrap();
    let mse = (f - &sim.labeled_truth.m).norm_squared() / 10_000.0;
    assert!((mse - 0.1).abs() < 0.02, "mse {mse}");
}

#[test]
fn predictions_are_deterministic() {
    let sim = generate(&SimulationSpec::new(500, 1, 0.3, 4)).unwrap();
    let pred = Predictor::noisy_oracle(0.5, OracleFunction::Piecewise, 3).unwrap();
    let a = pred.predict(sim.labeled.features()).unwrap();
    let b = pred.predict(sim.labeled.features()).unwrap();
    assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    // a row's output does not depend on which other rows are predicted with it
    let single = pred.predict(&sim.labeled.select_rows(&[17]).features().clone()).unwrap();
    assert_eq!(single[0].to_bits(), a[17].to_bits());
}

#[test]
fn one_nearest_neighbor_returns_training_labels() {
    let sim = generate(&SimulationSpec::new(300, 1, 0.3, 5)).unwrap();
    let knn = KnnPredictor::new(1, sim.labeled.clone(), false).unwrap();
    let pred = Predictor::Knn(knn);
    let f = pred.predict(sim.labeled.features()).unwrap();
    assert_eq!(&f, sim.labeled.labels().unwrap());
}

#[test]
fn knn_refuses_shared_provenance() {
    let train = generate(&SimulationSpec::new(50, 1, 0.3, 6)).unwrap().labeled;
    let infer = generate(&SimulationSpec::new(50, 1, 0.3, 6)).unwrap().labeled;
    let other = infer.clone().with_provenance("elsewhere");
    let knn = KnnPredictor::new(3, train.clone(), false).unwrap();
    assert!(knn.check_independence(&[&infer]).is_err());
    assert!(knn.check_independence(&[&other]).is_ok());
    let permissive = KnnPredictor::new(3, train, true).unwrap();
    assert!(permissive.check_independence(&[&infer]).is_ok());
}

#[test]
fn knn_needs_labeled_training_data() {
    let d = Dataset::new(DMatrix::zeros(4, 2));
    assert!(KnnPredictor::new(1, d.clone(), false).is_err());
    let d = d.with_labels(DVector::zeros(4)).unwrap();
    assert!(KnnPredictor::new(0, d.clone(), false).is_err());
    assert!(KnnPredictor::new(2, d, false).is_ok());
}

#[test]
fn file_backed_predictions_align_by_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.csv");
    std::fs::write(&path, "prediction\n1.5\n-2\n3e-1\n").unwrap();
    let pred = Predictor::from_file(&path).unwrap();
    let f = pred.predict(&DMatrix::zeros(3, 4)).unwrap();
    assert_eq!(f.as_slice(), &[1.5, -2.0, 0.3]);
    assert!(matches!(pred.predict(&DMatrix::zeros(2, 4)), Err(Error::Input(_))));
    assert!(matches!(Predictor::from_file(&dir.path().join("missing.csv")), Err(Error::Io { .. })));
}

#[test]
fn predictor_refs_parse_from_json() {
    let r: PredictorRef = serde_json::from_str(r#"{"kind":"noisy_oracle","sd":0.316,"seed":7}"#).unwrap();
    assert_eq!(
        r,
        PredictorRef::NoisyOracle { sd: 0.316, function: OracleFunction::Piecewise, seed: 7 }
    );
    let r: PredictorRef = serde_json::from_str(r#"{"kind":"knn","k":5}"#).unwrap();
    assert_eq!(r, PredictorRef::Knn { k: 5, allow_shared_provenance: false });
}

#[test]
fn quality_report_examples() {
    let y = DVector::from_vec(vec![1.0, -1.0, 2.0, -2.0]);
    let perfect = quality_from_values(&y, &y).unwrap();
    assert_eq!(perfect.mse_vs_labels, 0.0);
    assert_eq!(perfect.ratio_to_label_second_moment, 0.0);
    assert!(!perfect.likely_unhelpful);
    let zero = quality_from_values(&DVector::zeros(4), &y).unwrap();
    assert!((zero.ratio_to_label_second_moment - 1.0).abs() < 1e-15);
    assert!(zero.likely_unhelpful);
    assert!(quality_from_values(&DVector::zeros(0), &DVector::zeros(0)).is_err());
}

/// With the simulated labels the ratio is the predictor MSE against labels
/// (oracle noise plus label noise) over `E[Y²]`, both computed directly.
#[test]
fn quality_ratio_on_simulated_data() {
    let sim = generate(&SimulationSpec::new(20_000, 1, 0.2f64.sqrt(), 8)).unwrap();
    let pred = Predictor::noisy_oracle(0.316, OracleFunction::Piecewise, 1).unwrap();
    let q = predictor_quality(&pred, &sim.labeled).unwrap();
    let y = sim.labeled.labels().unwrap();
    let expected = (0.316f64.powi(2) + 0.2) / (y.norm_squared() / y.len() as f64);
    assert!((q.ratio_to_label_second_moment - expected).abs() < 0.01, "{} vs {expected}", q.ratio_to_label_second_moment);
    assert!(!q.likely_unhelpful);
}

proptest! {
    #[test]
    fn oracle_noise_is_centered_on_the_surface(seed in any::<u64>()) {
        let pred = Predictor::noisy_oracle(1e-9, OracleFunction::Piecewise, seed).unwrap();
        let x = DMatrix::from_fn(5, 10, |i, j| ((i * 10 + j) as f64 * 0.37).sin());
        let f = pred.predict(&x).unwrap();
        for i in 0..5 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            prop_assert!((f[i] - simulate_m(&row)).abs() < 1e-7);
        }
    }
}
