use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ziss_core::simulate::{design_points, draw_count, generate_from, GroundTruth};
use ziss_core::{fit_nzss, generate, LambdaPolicy, Setting, SimulationConfig};

fn moments(mu: f64, dropout: f64, a: f64, n: usize, seed: u64) -> (f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..n).map(|_| draw_count(&mut rng, mu, dropout, a) as f64).collect();
    let mean = draws.iter().sum::<f64>() / n as f64;
    let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let zeros = draws.iter().filter(|&&x| x == 0.0).count() as f64 / n as f64;
    (mean, var, zeros)
}

#[test]
fn negative_binomial_dispersion() {
    for (mu, a) in [(2.0, 0.1), (5.0, 0.3), (10.0, 0.5)] {
        let (mean, var, _) = moments(mu, 0.0, a, 100_000, 11);
        let ratio = var / mean;
        let expected = 1.0 + a * mu;
        assert!((ratio / expected - 1.0).abs() < 0.05, "mu {mu} a {a}: {ratio} vs {expected}");
        assert!((mean / mu - 1.0).abs() < 0.02);
    }
}

#[test]
fn vanishing_dispersion_approaches_poisson() {
    let (m0, v0, _) = moments(3.0, 0.0, 0.0, 100_000, 5);
    let (m1, v1, _) = moments(3.0, 0.0, 1e-12, 100_000, 6);
    assert!((m0 - m1).abs() < 0.03);
    assert!((v0 / m0 - 1.0).abs() < 0.03 && (v1 / m1 - 1.0).abs() < 0.03);
}

#[test]
fn zero_fraction_matches_the_mixture() {
    for (mu, d) in [(0.5, 0.2), (2.0, 0.5), (4.0, 0.7)] {
        let (_, _, zeros) = moments(mu, d, 0.0, 100_000, 3);
        let expected = d + (1.0 - d) * (-mu).exp();
        assert!((zeros - expected).abs() < 0.01, "{zeros} vs {expected}");
    }
}

#[test]
fn same_seed_same_data() {
    let cfg = SimulationConfig::new(Setting::Two, 99);
    assert_eq!(generate(&cfg).unwrap().0, generate(&cfg).unwrap().0);
    let other = SimulationConfig::new(Setting::Two, 100);
    assert_ne!(generate(&cfg).unwrap().0, generate(&other).unwrap().0);
}

#[test]
fn nzss_overestimates_small_means() {
    // Dropping zeros biases the fit upward most where μ is small.
    let truth = GroundTruth::new("low", |t| 0.4 + 0.4 * t, |_| 0.3);
    let data = generate_from(&truth, 41, 80, 0.0, 17).unwrap();
    let curve = fit_nzss(&data, &LambdaPolicy::default()).unwrap();
    for &t in &design_points(41) {
        assert!(curve.mean(t).unwrap() > truth.mean(t), "t = {t}");
    }
}
