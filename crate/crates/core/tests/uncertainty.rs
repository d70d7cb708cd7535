use local_ppi::data::{generate, SimulationSpec};
use local_ppi::predictors::{OracleFunction, Predictor};
use local_ppi::special::{chi_square_cdf, chi_square_pdf, chi_square_quantile};
use local_ppi::uncertainty::{
    bootstrap_covariance, ci_value, coverage_constant_c1, plugin_bias_terms, region_gradient,
    theoretical_coverage_multi, theoretical_coverage_single,
};
use local_ppi::{Bandwidth, BiasFormula, BiasTerms, Dataset, KernelSpec, LocalFit, LocalLinear, Method};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn labeled(rng: &mut ChaCha8Rng, n: usize, p: usize, sd: f64, m: impl Fn(&[f64]) -> f64) -> Dataset {
    let feats = DMatrix::from_fn(n, p, |_, _| normal(rng));
    let y = DVector::from_iterator(
        n,
        (0..n).map(|i| m(&feats.row(i).iter().copied().collect::<Vec<_>>()) + sd * normal(rng)),
    );
    Dataset::new(feats).with_labels(y).unwrap()
}

fn conventional(p: usize, h: f64) -> LocalLinear {
    LocalLinear::new(KernelSpec::gaussian(p), Bandwidth::new(h).unwrap())
}

#[test]
fn constant_labels_give_zero_bootstrap_covariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let data = labeled(&mut rng, 60, 2, 0.0, |_| 3.5);
    let m = conventional(2, 1.0);
    let cov = bootstrap_covariance(|l, _| m.conventional_fit(l, &[0.0, 0.0]), &data, None, 50, 9).unwrap();
    assert!(cov.matrix.amax() < 1e-20);
}

#[test]
fn bootstrap_covariance_is_stable_across_seeds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = labeled(&mut rng, 300, 1, 0.5, |x| x[0].sin());
    let m = conventional(1, 1.0);
    let run = |seed| bootstrap_covariance(|l, _| m.conventional_fit(l, &[0.2]), &data, None, 1000, seed).unwrap();
    let (a, b) = (run(10).matrix, run(20).matrix);
    for i in 0..2 {
        for j in 0..2 {
            let scale = (a[(i, i)] * a[(j, j)]).sqrt();
            assert!((a[(i, j)] - b[(i, j)]).abs() <= 0.1 * scale, "entry ({i},{j}): {} vs {}", a[(i, j)], b[(i, j)]);
        }
    }
}

#[test]
fn ppi_bootstrap_diagonal_is_smaller_on_simulated_data() {
    let sim = generate(&SimulationSpec::new(100, 10_000, 0.2f64.sqrt(), 4)).unwrap();
    let oracle = Predictor::noisy_oracle(0.316, OracleFunction::Piecewise, 5).unwrap();
    let lab = oracle.attach(&sim.labeled).unwrap();
    let unl = oracle.attach(&sim.unlabeled.without_labels()).unwrap();
    let x = [0.0; 10];
    let m = LocalLinear::new(KernelSpec::gaussian(10), Bandwidth::new(0.5).unwrap());
    let con = bootstrap_covariance(|l, _| m.conventional_fit(l, &x), &lab, None, 200, 1).unwrap();
    let ppi = bootstrap_covariance(|l, u| m.ppi_fit(l, u.unwrap(), &x), &lab, Some(&unl), 200, 1).unwrap();
    for j in 0..11 {
        assert!(ppi.matrix[(j, j)] < con.matrix[(j, j)], "entry {j}");
    }
}

fn fit_at(grad: Vec<f64>) -> LocalFit {
    LocalFit {
        m_hat: 0.0,
        target: vec![0.0; grad.len()],
        grad_hat: grad,
        method: Method::Conventional,
        effective_weight_mass: 1.0,
    }
}

#[test]
fn regions_nest_with_covariance_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in [2usize, 4, 7] {
        let g = DMatrix::from_fn(p, p, |_, _| normal(&mut rng));
        let small = &g * g.transpose() + DMatrix::identity(p, p) * 0.05;
        let c = DMatrix::from_fn(p, p, |_, _| 0.5 * normal(&mut rng));
        let large = &small + &c * c.transpose() + DMatrix::identity(p, p) * 0.01;
        let fit = fit_at((0..p).map(|_| normal(&mut rng)).collect());
        let inner = region_gradient(&fit, &small, 0.05, None).unwrap();
        let outer = region_gradient(&fit, &large, 0.05, None).unwrap();
        for _ in 0..1000 {
            let u: Vec<f64> = (0..p).map(|_| normal(&mut rng)).collect();
            let v = inner.boundary_point(&u);
            assert!(outer.contains(&v));
        }
        assert!(inner.contains(&fit.grad_hat));
    }
}

/// Coverage of bootstrap intervals over fixed targets for a given truth.
fn interval_coverage(
    m: impl Fn(&[f64]) -> f64 + Copy,
    p: usize,
    h: f64,
    n: usize,
    sd: f64,
    reps: usize,
    bias: impl Fn(&[f64]) -> Option<BiasTerms>,
) -> (f64, f64) {
    let model = conventional(p, h);
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let targets: Vec<Vec<f64>> = (0..20).map(|_| (0..p).map(|_| 0.5 * normal(&mut rng)).collect()).collect();
    let (mut plain, mut corrected, mut total) = (0, 0, 0);
    for r in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + r as u64);
        let data = labeled(&mut rng, n, p, sd, m);
        for (t, x) in targets.iter().enumerate() {
            let fit = model.conventional_fit(&data, x).unwrap();
            let cov = bootstrap_covariance(|l, _| model.conventional_fit(l, x), &data, None, 100, (r * 100 + t) as u64)
                .unwrap();
            let truth = m(x);
            total += 1;
            plain += ci_value(&fit, &cov, 0.05, None).unwrap().contains(truth) as usize;
            let b = bias(x);
            corrected += ci_value(&fit, &cov, 0.05, b.as_ref()).unwrap().contains(truth) as usize;
        }
    }
    (plain as f64 / total as f64, corrected as f64 / total as f64)
}

#[test]
fn coverage_is_calibrated_for_linear_truth() {
    let (cov, _) = interval_coverage(|x| 1.0 + x[0] - 2.0 * x[1], 2, 0.6, 200, 0.5, 100, |_| None);
    assert!((0.91..=0.99).contains(&cov), "coverage {cov}");
}

#[test]
fn oracle_bias_correction_helps_on_quadratic_truth() {
    // Small bandwidth, where the leading-order bias is accurate.
    let h = Bandwidth::new(0.3).unwrap();
    // ½·μ₂·Tr∇²m with μ₂ = 1 and Tr∇²m = p for ½‖x‖².
    let (biased, debiased) = interval_coverage(
        |x| 0.5 * x.iter().map(|v| v * v).sum::<f64>(),
        2,
        0.3,
        400,
        0.3,
        100,
        |_| Some(BiasTerms::oracle(1.0, vec![0.0, 0.0], h, BiasFormula::HalfTrace)),
    );
    assert!(debiased >= biased - 0.01, "{debiased} vs {biased}");
    assert!((debiased - 0.95).abs() < (biased - 0.95).abs(), "{debiased} vs {biased}");
}

#[test]
fn plugin_bias_recovers_curvature_of_a_parabola() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let data = labeled(&mut rng, 5000, 1, 0.1, |x| x[0] * x[0]);
    let h = Bandwidth::new(0.3).unwrap();
    let b = plugin_bias_terms(&data, &[0.0], h, &KernelSpec::gaussian(1), BiasFormula::HalfTrace).unwrap();
    assert!((b.b1 - 1.0).abs() < 0.2, "b1 = {}", b.b1);
}

#[test]
fn plugin_bias_vanishes_for_linear_truth() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let data = labeled(&mut rng, 5000, 2, 0.1, |x| 2.0 * x[0] - x[1]);
    let h = Bandwidth::new(0.5).unwrap();
    let b = plugin_bias_terms(&data, &[0.2, 0.1], h, &KernelSpec::gaussian(2), BiasFormula::HalfTrace).unwrap();
    assert!(b.b1.abs() < 0.05, "b1 = {}", b.b1);
    assert!(b.b2.iter().all(|v| v.abs() < 0.05), "b2 = {:?}", b.b2);
}

#[test]
fn chi_square_matches_reference_distribution() {
    for dof in [1u32, 2, 3, 5, 10, 25] {
        let reference = ChiSquared::new(dof as f64).unwrap();
        for x in [0.1, 0.5, 1.0, 3.84, 10.0, 18.307, 40.0] {
            assert!((chi_square_cdf(dof, x) - reference.cdf(x)).abs() < 1e-10);
        }
        for prob in [0.05, 0.5, 0.9, 0.95, 0.99] {
            let q = chi_square_quantile(dof, prob);
            assert!((q - reference.inverse_cdf(prob)).abs() < 1e-6 * q.max(1.0));
        }
    }
    assert!((chi_square_cdf(2, 2.0 * 20f64.ln()) - 0.95).abs() < 1e-12);
}

#[test]
fn c1_matches_integrated_density() {
    for (p, alpha) in [(1u32, 0.05), (2, 0.05), (3, 0.1), (10, 0.05), (5, 0.32)] {
        let lo = chi_square_quantile(p, 1.0 - alpha);
        let hi = chi_square_quantile(p + 2, 1.0 - alpha);
        let m = 20_000;
        let step = (hi - lo) / m as f64;
        let mut s = chi_square_pdf(p + 2, lo) + chi_square_pdf(p + 2, hi);
        for i in 1..m {
            s += chi_square_pdf(p + 2, lo + i as f64 * step) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * step / 3.0;
        let c1 = coverage_constant_c1(p, alpha).unwrap();
        assert!((c1 - integral).abs() < 1e-6, "p={p}: {c1} vs {integral}");
        assert!(c1 > 0.0 && c1 < 1.0);
    }
    let chi3 = ChiSquared::new(3.0).unwrap();
    let expected = 0.95 - chi3.cdf(ChiSquared::new(1.0).unwrap().inverse_cdf(0.95));
    assert!((coverage_constant_c1(1, 0.05).unwrap() - expected).abs() < 1e-8);
}

#[test]
fn coverage_formula_examples() {
    let h = Bandwidth::new(0.5).unwrap();
    assert!((theoretical_coverage_single(0.05, h, 1.0, 2.0).unwrap() - 0.95 * 0.96875).abs() < 1e-12);
    assert_eq!(theoretical_coverage_single(0.1, h, 2.0, 0.0).unwrap(), 0.9);
    assert_eq!(theoretical_coverage_multi(0.1, 4, &[0.0; 4]).unwrap(), 0.9);
}

proptest! {
    #[test]
    fn quantile_round_trips(dof in 1u32..60, prob in 0.001f64..0.999) {
        let q = chi_square_quantile(dof, prob);
        prop_assert!((chi_square_cdf(dof, q) - prob).abs() < 1e-9);
    }

    #[test]
    fn single_coverage_decreases_in_bias(a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let h = Bandwidth::new(0.5).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let c_lo = theoretical_coverage_single(0.05, h, 1.0, lo).unwrap();
        let c_hi = theoretical_coverage_single(0.05, h, 1.0, -hi).unwrap();
        prop_assert!(c_hi <= c_lo);
    }
}
