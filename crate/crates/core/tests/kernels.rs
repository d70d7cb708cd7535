use local_ppi::kernels::{weight_vector, Bandwidth, KernelFamily, KernelSpec};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_rotation(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(p, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    a.qr().q()
}

/// Composite Simpson rule on `[a, b]` with `m` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    let mut s = f(a) + f(b);
    for i in 1..m {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

proptest! {
    #[test]
    fn kernels_are_rotation_invariant(seed in any::<u64>(), p in 1usize..7, epan in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = if epan { KernelSpec::epanechnikov(p) } else { KernelSpec::gaussian(p) };
        let r = random_rotation(p, &mut rng);
        let scale = if epan { 0.4 } else { 1.5 };
        let u = DVector::from_fn(p, |_, _| scale * rng.sample::<f64, _>(StandardNormal) / (p as f64).sqrt());
        let ru = &r * &u;
        let a = spec.eval(u.as_slice()).unwrap();
        let b = spec.eval(ru.as_slice()).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * spec.peak().max(1.0));
    }

    #[test]
    fn weights_are_nonnegative_and_bounded(seed in any::<u64>(), p in 1usize..5, h in 0.05f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
        let feats = DMatrix::from_fn(40, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        for spec in [KernelSpec::gaussian(p), KernelSpec::epanechnikov(p)] {
            let w = weight_vector(&feats, &x, Bandwidth::new(h).unwrap(), &spec).unwrap();
            prop_assert!(w.iter().all(|&v| v >= 0.0 && v <= spec.peak()));
        }
    }
}

#[test]
fn kernels_integrate_to_one() {
    for family in [KernelFamily::Gaussian, KernelFamily::Epanechnikov] {
        let k1 = KernelSpec::new(family, 1).unwrap();
        let one_d = simpson(|u| k1.eval(&[u]).unwrap(), -10.0, 10.0, 20_000);
        assert!((one_d - 1.0).abs() < 1e-4, "{family:?} p=1: {one_d}");

        let k2 = KernelSpec::new(family, 2).unwrap();
        let m = 1200;
        let step = 16.0 / m as f64;
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let u = [-8.0 + (i as f64 + 0.5) * step, -8.0 + (j as f64 + 0.5) * step];
                total += k2.eval(&u).unwrap();
            }
        }
        total *= step * step;
        assert!((total - 1.0).abs() < 1e-4, "{family:?} p=2: {total}");
    }
}

/// The standard normal kernel factorizes over coordinates, so its moments
/// reduce to one-dimensional integrals evaluated on a fine grid.
#[test]
fn gaussian_moments_match_grid_quadrature() {
    let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let m = 40_000;
    let mass = simpson(phi, -14.0, 14.0, m);
    let second = simpson(|u| u * u * phi(u), -14.0, 14.0, m);
    let sq = simpson(|u| phi(u) * phi(u), -14.0, 14.0, m);
    let sq_second = simpson(|u| u * u * phi(u) * phi(u), -14.0, 14.0, m);
    for p in 1..=3 {
        let mom = KernelSpec::gaussian(p).moments().unwrap();
        let mu2 = second * mass.powi(p as i32 - 1);
        let j0 = sq.powi(p as i32);
        let j2 = sq_second * sq.powi(p as i32 - 1);
        assert!((mom.mu2 - mu2).abs() < 1e-6);
        assert!((mom.j0 - j0).abs() < 1e-6);
        assert!((mom.j2 - j2).abs() < 1e-6);
        let quad = KernelSpec::gaussian(p).moments_by_quadrature().unwrap();
        assert!((quad.mu2 - mu2).abs() < 1e-6 && (quad.j0 - j0).abs() < 1e-6 && (quad.j2 - j2).abs() < 1e-6);
    }
}

#[test]
fn epanechnikov_moments_match_plane_grid() {
    let k = KernelSpec::epanechnikov(2);
    let mom = k.moments().unwrap();
    let m = 1500;
    let step = 2.0 / m as f64;
    let (mut mu2, mut j0, mut j2) = (0.0, 0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            let u = [-1.0 + (i as f64 + 0.5) * step, -1.0 + (j as f64 + 0.5) * step];
            let v = k.eval(&u).unwrap();
            mu2 += u[0] * u[0] * v;
            j0 += v * v;
            j2 += u[0] * u[0] * v * v;
        }
    }
    let a = step * step;
    assert!((mom.mu2 - mu2 * a).abs() < 1e-3);
    assert!((mom.j0 - j0 * a).abs() < 1e-3);
    assert!((mom.j2 - j2 * a).abs() < 1e-3);
}
