//! Simulation settings, data generators and the replicate MSE harness.
//!
//! Each replicate draws its data from a ChaCha8 stream seeded with
//! `seed + r`, so replicates are independent of scheduling and can run in
//! parallel.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{fit_dss, fit_nzss};
use crate::data::BinnedCountData;
use crate::em::{fit_ziss, ZissConfig};
use crate::error::{Result, ZissError};
use crate::rkhs::SplineMeanCurve;

const SQRT_2PI: f64 = 2.506_628_274_631_000_2;

/// Setting 1 mean: `2 sin(9t) + 2.5`.
pub fn setting1_mean(t: f64) -> f64 {
    2.0 * (9.0 * t).sin() + 2.5
}

/// Setting 1 mixing probability `1 / (1 + e^{−0.5 (t − 0.5)² + 1})`.
pub fn setting1_prob(t: f64) -> f64 {
    1.0 / (1.0 + (-0.5 * (t - 0.5).powi(2) + 1.0).exp())
}

/// Setting 2 mean: two Gaussian bumps at 0.2 and 0.7.
pub fn setting2_mean(t: f64) -> f64 {
    8.0 / SQRT_2PI * (-10.0 * (t - 0.2).powi(2)).exp()
        + 6.0 / SQRT_2PI * (-100.0 * (t - 0.7).powi(2)).exp()
}

/// Setting 2 mixing probability `sin(6t)/4 + 1/2`.
pub fn setting2_prob(t: f64) -> f64 {
    0.25 * (6.0 * t).sin() + 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    One,
    Two,
}

impl Setting {
    pub fn from_index(i: u8) -> Result<Self> {
        match i {
            1 => Ok(Setting::One),
            2 => Ok(Setting::Two),
            _ => Err(ZissError::InvalidArgument(format!("setting must be 1 or 2, got {i}"))),
        }
    }
}

type CurveFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// True mean and dropout curves on `[0, 1]`.
#[derive(Clone)]
pub struct GroundTruth {
    name: String,
    mean: CurveFn,
    dropout: CurveFn,
    shift: f64,
}

impl fmt::Debug for GroundTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GroundTruth")
            .field("name", &self.name)
            .field("shift", &self.shift)
            .finish()
    }
}

impl GroundTruth {
    pub fn new(
        name: impl Into<String>,
        mean: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dropout: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            mean: Arc::new(mean),
            dropout: Arc::new(dropout),
            shift: 0.0,
        }
    }

    /// Raise the mean by `h`.
    pub fn with_shift(mut self, h: f64) -> Self {
        self.shift = h;
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Mean of the Poisson component, shift included.
    pub fn mean(&self, t: f64) -> f64 {
        (self.mean)(t) + self.shift
    }

    /// Excess-zero probability.
    pub fn dropout(&self, t: f64) -> f64 {
        (self.dropout)(t)
    }

    pub fn poisson_prob(&self, t: f64) -> f64 {
        1.0 - self.dropout(t)
    }
}

/// Setting 1; the mixing curve is the Poisson-component probability.
pub fn truth_setting1() -> GroundTruth {
    GroundTruth::new("setting1", setting1_mean, |t| 1.0 - setting1_prob(t))
}

/// Setting 2; the mixing curve is the Poisson-component probability.
pub fn truth_setting2() -> GroundTruth {
    GroundTruth::new("setting2", setting2_mean, |t| 1.0 - setting2_prob(t))
}

pub fn truth_for(setting: Setting) -> GroundTruth {
    match setting {
        Setting::One => truth_setting1(),
        Setting::Two => truth_setting2(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub setting: Setting,
    pub n_points: usize,
    /// Samples per point, `M`.
    pub samples_per_point: usize,
    /// Negative-binomial over-dispersion `a = σ²`; 0 means Poisson.
    pub overdispersion: f64,
    /// Up-moving shift `h`.
    pub shift: f64,
    pub seed: u64,
    pub replicates: usize,
    /// When false every replicate reuses `seed` (identical data).
    pub reseed_per_replicate: bool,
}

impl SimulationConfig {
    pub fn new(setting: Setting, seed: u64) -> Self {
        Self {
            setting,
            n_points: 41,
            samples_per_point: 80,
            overdispersion: 0.0,
            shift: 0.0,
            seed,
            replicates: 100,
            reseed_per_replicate: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_points < 2 {
            return Err(ZissError::InvalidArgument("need at least two design points".into()));
        }
        if self.samples_per_point < 1 {
            return Err(ZissError::InvalidArgument("need at least one sample per point".into()));
        }
        if !(self.overdispersion >= 0.0 && self.overdispersion.is_finite()) {
            return Err(ZissError::InvalidArgument("over-dispersion must be non-negative".into()));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(ZissError::InvalidArgument("shift must be non-negative".into()));
        }
        Ok(())
    }

    pub fn truth(&self) -> GroundTruth {
        truth_for(self.setting).with_shift(self.shift)
    }

    /// Seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        if self.reseed_per_replicate {
            self.seed.wrapping_add(r as u64)
        } else {
            self.seed
        }
    }
}

/// `N` equally spaced points on `[0, 1]`, pulled inside `[1e-6, 1 − 1e-6]`.
pub fn design_points(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (i as f64 / (n - 1) as f64).clamp(1e-6, 1.0 - 1e-6))
        .collect()
}

/// One count from the zero-inflated model at mean `mu` and dropout `dropout`.
pub fn draw_count<R: Rng + ?Sized>(rng: &mut R, mu: f64, dropout: f64, overdispersion: f64) -> u64 {
    if rng.random::<f64>() < dropout {
        return 0;
    }
    let rate = if overdispersion > 0.0 {
        // Gamma–Poisson mixture: NB with size 1/a and mean mu.
        let size = 1.0 / overdispersion;
        match Gamma::new(size, mu / size) {
            Ok(g) => g.sample(rng),
            Err(_) => return 0,
        }
    } else {
        mu
    };
    if !(rate > 0.0) {
        return 0;
    }
    Poisson::new(rate).map_or(0, |d| d.sample(rng) as u64)
}

/// Draw a dataset for `truth` on the standard design with its own RNG stream.
pub fn generate_from(
    truth: &GroundTruth,
    n_points: usize,
    samples_per_point: usize,
    overdispersion: f64,
    seed: u64,
) -> Result<BinnedCountData> {
    if n_points < 2 || samples_per_point < 1 {
        return Err(ZissError::InvalidArgument("design too small".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = design_points(n_points);
    let counts = points
        .iter()
        .map(|&t| {
            let mu = truth.mean(t);
            let dropout = truth.dropout(t);
            (0..samples_per_point)
                .map(|_| draw_count(&mut rng, mu, dropout, overdispersion))
                .collect()
        })
        .collect();
    BinnedCountData::new(points, counts, (0.0, 1.0))
}

/// Dataset for the configured setting (first replicate's seed).
pub fn generate(config: &SimulationConfig) -> Result<(BinnedCountData, GroundTruth)> {
    generate_replicate(config, 0)
}

pub fn generate_replicate(config: &SimulationConfig, r: usize) -> Result<(BinnedCountData, GroundTruth)> {
    config.validate()?;
    let truth = config.truth();
    let data = generate_from(
        &truth,
        config.n_points,
        config.samples_per_point,
        config.overdispersion,
        config.replicate_seed(r),
    )?;
    Ok((data, truth))
}

/// Mean squared error of `curve`'s mean against the true mean at `points`.
pub fn mse(curve: &SplineMeanCurve, truth: &GroundTruth, points: &[f64]) -> Result<f64> {
    if points.is_empty() {
        return Err(ZissError::InvalidArgument("no evaluation points".into()));
    }
    let mut acc = 0.0;
    for &t in points {
        acc += (curve.mean(t)? - truth.mean(t)).powi(2);
    }
    Ok(acc / points.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    Ziss,
    Nzss,
    Dss,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Ziss, Method::Nzss, Method::Dss];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ziss => "ziss",
            Method::Nzss => "nzss",
            Method::Dss => "dss",
        })
    }
}

impl FromStr for Method {
    type Err = ZissError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ziss" => Ok(Method::Ziss),
            "nzss" => Ok(Method::Nzss),
            "dss" => Ok(Method::Dss),
            other => Err(ZissError::InvalidArgument(format!("unknown method '{other}'"))),
        }
    }
}

/// Per-replicate record.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub seed: u64,
    pub mse: Vec<(Method, Result<f64>)>,
    /// Largest increase of the ZISS penalized NLL trace.
    pub ziss_trace_increase: Option<f64>,
    pub ziss_converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_mse: f64,
    /// Sample standard deviation across replicates.
    pub std_mse: f64,
    pub effective_r: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicateStudy {
    pub summaries: Vec<MethodSummary>,
    pub outcomes: Vec<ReplicateOutcome>,
}

impl ReplicateStudy {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

/// Fit one method to one dataset.
pub fn fit_method(method: Method, data: &BinnedCountData, ziss: &ZissConfig) -> Result<SplineMeanCurve> {
    match method {
        Method::Ziss => fit_ziss(data, ziss).map(|f| f.mean_curve),
        Method::Nzss => fit_nzss(data, &ziss.lambda),
        Method::Dss => fit_dss(data, &ziss.lambda),
    }
}

fn run_one(config: &SimulationConfig, r: usize, methods: &[Method], ziss: &ZissConfig) -> Result<ReplicateOutcome> {
    let (data, truth) = generate_replicate(config, r)?;
    let points = data.points().to_vec();
    let mut out = ReplicateOutcome {
        replicate: r,
        seed: config.replicate_seed(r),
        mse: Vec::with_capacity(methods.len()),
        ziss_trace_increase: None,
        ziss_converged: None,
    };
    for &method in methods {
        let result = match method {
            Method::Ziss => fit_ziss(&data, ziss).and_then(|fit| {
                out.ziss_trace_increase = Some(fit.max_trace_increase());
                out.ziss_converged = Some(fit.converged);
                mse(&fit.mean_curve, &truth, &points)
            }),
            _ => fit_method(method, &data, ziss).and_then(|c| mse(&c, &truth, &points)),
        };
        out.mse.push((method, result));
    }
    Ok(out)
}

fn summarize(method: Method, values: &[f64], failures: usize) -> MethodSummary {
    let r = values.len();
    let mean = if r > 0 { values.iter().sum::<f64>() / r as f64 } else { f64::NAN };
    let std = if r > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1) as f64).sqrt()
    } else {
        f64::NAN
    };
    MethodSummary {
        method,
        mean_mse: mean,
        std_mse: std,
        effective_r: r,
        failures,
    }
}

/// Run `config.replicates` simulated datasets through each method.
///
/// `jobs = 0` uses rayon's default pool. Fit failures are counted per
/// method and excluded from the summary statistics.
pub fn run_replicates(
    config: &SimulationConfig,
    methods: &[Method],
    ziss: &ZissConfig,
    jobs: usize,
) -> Result<ReplicateStudy> {
    config.validate()?;
    if config.replicates < 2 {
        return Err(ZissError::InvalidArgument("need at least two replicates".into()));
    }
    if methods.is_empty() {
        return Err(ZissError::InvalidArgument("no methods selected".into()));
    }
    let work = || -> Result<Vec<ReplicateOutcome>> {
        (0..config.replicates)
            .into_par_iter()
            .map(|r| run_one(config, r, methods, ziss))
            .collect()
    };
    let outcomes = if jobs == 0 {
        work()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| ZissError::InvalidArgument(format!("thread pool: {e}")))?
            .install(work)?
    };

    let summaries = methods
        .iter()
        .map(|&method| {
            let mut values = Vec::new();
            let mut failures = 0;
            for o in &outcomes {
                for (m, res) in &o.mse {
                    if *m == method {
                        match res {
                            Ok(v) if v.is_finite() => values.push(*v),
                            _ => failures += 1,
                        }
                    }
                }
            }
            summarize(method, &values, failures)
        })
        .collect();
    Ok(ReplicateStudy { summaries, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn setting_curves_at_reference_points() {
        assert_eq!(setting1_mean(0.0), 2.5);
        assert!((setting1_prob(0.5) - 1.0 / (1.0 + 1f64.exp())).abs() < 1e-15);
        assert!((setting1_prob(0.5) - 0.26894).abs() < 1e-5);
        assert!((setting1_mean(0.5) - 0.544_94).abs() < 1e-5);
        assert_eq!(setting2_prob(0.0), 0.5);
        assert!((setting2_mean(0.2) - 3.19154).abs() < 1e-5);
        assert!((setting2_mean(0.45) - 1.712_928).abs() < 1e-5);
    }

    #[test]
    fn truths_apply_shift_and_mixing_convention() {
        let t = truth_setting1().with_shift(2.0);
        assert!((t.mean(0.0) - 4.5).abs() < 1e-15);
        assert!((t.poisson_prob(0.5) - setting1_prob(0.5)).abs() < 1e-15);
        assert!((t.dropout(0.5) + setting1_prob(0.5) - 1.0).abs() < 1e-15);
        let t2 = truth_setting2();
        assert!((t2.dropout(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn design_points_are_clipped_grid() {
        let p = design_points(41);
        assert_eq!(p.len(), 41);
        assert_eq!(p[0], 1e-6);
        assert_eq!(p[40], 1.0 - 1e-6);
        assert!((p[20] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let config = SimulationConfig::new(Setting::Two, 99);
        let (a, _) = generate(&config).unwrap();
        let (b, _) = generate(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_obs(), 41 * 80);
        let (c, _) = generate_replicate(&config, 1).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn certain_dropout_gives_all_zeros() {
        let truth = GroundTruth::new("zeros", |_| 3.0, |_| 1.0);
        let d = generate_from(&truth, 10, 20, 0.0, 1).unwrap();
        assert!(!d.has_positive());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = SimulationConfig::new(Setting::One, 1);
        c.n_points = 1;
        assert!(c.validate().is_err());
        let mut c = SimulationConfig::new(Setting::One, 1);
        c.overdispersion = -0.1;
        assert!(c.validate().is_err());
        let mut c = SimulationConfig::new(Setting::One, 1);
        c.shift = -1.0;
        assert!(c.validate().is_err());
        assert!(Setting::from_index(3).is_err());
    }

    #[test]
    fn mse_of_exact_and_offset_curves() {
        let truth = GroundTruth::new("const", |_| 2.0, |_| 0.0);
        let exact = SplineMeanCurve::affine(2f64.ln(), 0.0, (0.0, 1.0)).unwrap();
        let pts = [0.1, 0.5, 0.9];
        assert!(mse(&exact, &truth, &pts).unwrap() < 1e-28);
        let offset = SplineMeanCurve::affine(2.5f64.ln(), 0.0, (0.0, 1.0)).unwrap();
        assert!((mse(&offset, &truth, &pts).unwrap() - 0.25).abs() < 1e-14);
    }

    #[test]
    fn mse_hand_computed() {
        // μ̂(t) = e^{t}, truth μ(t) = 1 + t at t = 0, 0.5, 1
        let curve = SplineMeanCurve::affine(0.0, 1.0, (0.0, 1.0)).unwrap();
        let truth = GroundTruth::new("line", |t| 1.0 + t, |_| 0.0);
        let gaps = [0.0, 0.5f64.exp() - 1.5, 1f64.exp() - 2.0];
        let expected = gaps.iter().map(|g| g * g).sum::<f64>() / 3.0;
        assert!((mse(&curve, &truth, &[0.0, 0.5, 1.0]).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn methods_parse() {
        assert_eq!("ZISS".parse::<Method>().unwrap(), Method::Ziss);
        assert_eq!(" dss".parse::<Method>().unwrap(), Method::Dss);
        assert!("zigam".parse::<Method>().is_err());
        assert_eq!(Method::Nzss.to_string(), "nzss");
    }

    #[test]
    fn identical_seeds_give_zero_spread() {
        let mut config = SimulationConfig::new(Setting::One, 5);
        config.replicates = 2;
        config.reseed_per_replicate = false;
        config.n_points = 15;
        config.samples_per_point = 20;
        let study = run_replicates(&config, &[Method::Nzss, Method::Dss], &ZissConfig::default(), 2).unwrap();
        for s in &study.summaries {
            assert_eq!(s.effective_r, 2);
            assert_eq!(s.std_mse, 0.0);
        }
    }

    #[test]
    fn replicate_count_is_checked() {
        let mut config = SimulationConfig::new(Setting::One, 5);
        config.replicates = 1;
        assert!(run_replicates(&config, &Method::ALL, &ZissConfig::default(), 0).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn same_seed_same_dataset(seed in any::<u64>(), a in 0.0..0.5f64, h in 0.0..3.0f64) {
                let mut cfg = SimulationConfig::new(Setting::Two, seed);
                cfg.n_points = 9;
                cfg.samples_per_point = 7;
                cfg.overdispersion = a;
                cfg.shift = h;
                prop_assert_eq!(generate(&cfg).unwrap().0, generate(&cfg).unwrap().0);
            }

            #[test]
            fn certain_dropout_is_always_zero(seed in any::<u64>(), mu in 0.01..50.0f64, a in 0.0..1.0f64) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                prop_assert_eq!(draw_count(&mut rng, mu, 1.0, a), 0);
            }
        }
    }
}
