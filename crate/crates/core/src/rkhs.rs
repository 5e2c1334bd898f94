//! Cubic smoothing splines in a reproducing kernel Hilbert space.
//!
//! Functions live on the unit interval after an affine map of the data
//! domain. The roughness penalty is `J(η) = ∫₀¹ (η'')²`, whose null space is
//! spanned by `{1, x}`, and the penalized part uses the reproducing kernel
//! built from scaled Bernoulli polynomials
//!
//! ```text
//! R(s, u) = k2(s) k2(u) - k4(|s - u|)
//! ```
//!
//! A fitted curve is `η(t) = d₀ + d₁ x + Σ_k c_k R(z_k, x)` with `x` the
//! rescaled `t` and `z_k` the representer knots, so `J(η) = cᵀ Q c` with `Q`
//! the kernel Gram matrix on the knots.
//!
//! Every linear solve goes through an augmented least-squares problem
//!
//! ```text
//! | W^{1/2} X        |       | W^{1/2} y |
//! | sqrt(λ) [0  L]   | β  ≈  |     0     |      LᵀL = Q
//! ```
//!
//! solved by SVD, which stays well posed when `Q` is numerically rank
//! deficient (closely spaced knots) and yields the smoothing matrix trace
//! needed by GCV for free.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZissError};

/// Above this many distinct points the representer knots are subsampled.
pub const FULL_KNOT_LIMIT: usize = 200;

const SVD_RELATIVE_CUTOFF: f64 = 1e-12;

fn k1(x: f64) -> f64 {
    x - 0.5
}

fn k2(x: f64) -> f64 {
    let a = k1(x);
    (a * a - 1.0 / 12.0) / 2.0
}

fn k4(x: f64) -> f64 {
    let a = k1(x);
    let a2 = a * a;
    (a2 * a2 - a2 / 2.0 + 7.0 / 240.0) / 24.0
}

#[inline]
pub(crate) fn kernel_unit(s: f64, u: f64) -> f64 {
    k2(s) * k2(u) - k4((s - u).abs())
}

/// Cubic-spline reproducing kernel on `[0, 1]`.
pub fn cubic_kernel(s: f64, u: f64) -> Result<f64> {
    for v in [s, u] {
        if !(0.0..=1.0).contains(&v) {
            return Err(ZissError::Domain { value: v, lo: 0.0, hi: 1.0 });
        }
    }
    Ok(kernel_unit(s, u))
}

/// Kernel Gram matrix `Q[i][j] = R(x_i, x_j)` for points already on `[0, 1]`.
pub fn gram_matrix(unit_points: &[f64]) -> DMatrix<f64> {
    let n = unit_points.len();
    DMatrix::from_fn(n, n, |i, j| kernel_unit(unit_points[i], unit_points[j]))
}

fn to_unit(domain: (f64, f64), t: f64) -> Result<f64> {
    let (lo, hi) = domain;
    if !(t >= lo && t <= hi) {
        return Err(ZissError::Domain { value: t, lo, hi });
    }
    Ok(((t - lo) / (hi - lo)).clamp(0.0, 1.0))
}

fn check_domain(domain: (f64, f64)) -> Result<()> {
    let (lo, hi) = domain;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(ZissError::InvalidArgument(format!(
            "domain must be a finite interval with lo < hi, got ({lo}, {hi})"
        )));
    }
    Ok(())
}

/// A fitted log-mean curve `η(t)`; the mean is `μ(t) = exp(η(t))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineMeanCurve {
    knots: Vec<f64>,
    d: Vec<f64>,
    c: Vec<f64>,
    domain: (f64, f64),
}

impl SplineMeanCurve {
    pub fn new(knots: Vec<f64>, d: Vec<f64>, c: Vec<f64>, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        if d.len() != 2 {
            return Err(ZissError::InvalidArgument(format!(
                "null-space coefficients must have length 2, got {}",
                d.len()
            )));
        }
        if c.len() != knots.len() {
            return Err(ZissError::InvalidArgument(format!(
                "{} kernel coefficients for {} knots",
                c.len(),
                knots.len()
            )));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ZissError::InvalidArgument("knots must be strictly increasing".into()));
        }
        for &k in &knots {
            to_unit(domain, k)?;
        }
        if d.iter().chain(&c).any(|v| !v.is_finite()) {
            return Err(ZissError::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self { knots, d, c, domain })
    }

    /// The curve `η(t) = a + b t` expressed in this representation.
    pub fn affine(intercept: f64, slope: f64, domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        let (lo, hi) = domain;
        // a + b t = (a + b lo) + b (hi - lo) x
        Self::new(vec![], vec![intercept + slope * lo, slope * (hi - lo)], vec![], domain)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Null-space coefficients for `{1, x}` with `x` the rescaled time.
    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Log-mean `η(t)`.
    pub fn eta(&self, t: f64) -> Result<f64> {
        let x = to_unit(self.domain, t)?;
        let knots = self.knots.iter().map(|&k| to_unit(self.domain, k).unwrap_or(0.0));
        let kernel_part: f64 = knots.zip(&self.c).map(|(z, c)| c * kernel_unit(z, x)).sum();
        Ok(self.d[0] + self.d[1] * x + kernel_part)
    }

    /// Mean `μ(t) = exp(η(t))`.
    pub fn mean(&self, t: f64) -> Result<f64> {
        self.eta(t).map(f64::exp)
    }

    pub fn eta_at(&self, points: &[f64]) -> Result<Vec<f64>> {
        points.iter().map(|&t| self.eta(t)).collect()
    }

    pub fn means_at(&self, points: &[f64]) -> Result<Vec<f64>> {
        points.iter().map(|&t| self.mean(t)).collect()
    }

    /// Roughness `J(η) = cᵀ Q c`.
    pub fn roughness(&self) -> f64 {
        let unit: Vec<f64> = self
            .knots
            .iter()
            .map(|&k| to_unit(self.domain, k).unwrap_or(0.0))
            .collect();
        let q = gram_matrix(&unit);
        let c = DVector::from_column_slice(&self.c);
        c.dot(&(&q * &c)).max(0.0)
    }
}

/// Representer knots for a set of strictly increasing points: all of them
/// up to [`FULL_KNOT_LIMIT`], otherwise `⌈10 N^{2/9}⌉` spread evenly by rank.
pub fn representer_knots(points: &[f64]) -> Vec<f64> {
    let n = points.len();
    if n <= FULL_KNOT_LIMIT {
        return points.to_vec();
    }
    let q = ((10.0 * (n as f64).powf(2.0 / 9.0)).ceil() as usize).clamp(2, n);
    let mut idx: Vec<usize> = (0..q)
        .map(|k| ((k as f64) * (n - 1) as f64 / (q - 1) as f64).round() as usize)
        .collect();
    idx.dedup();
    idx.into_iter().map(|i| points[i]).collect()
}

/// Design of a penalized spline problem: observation points, representer
/// knots and the factored penalty.
#[derive(Debug, Clone)]
pub struct PenalizedDesign {
    domain: (f64, f64),
    points: Vec<f64>,
    knots: Vec<f64>,
    /// `n × (2 + q)`: columns `1, x, R(z_1, x), …`.
    design: DMatrix<f64>,
    /// `q × q` with `LᵀL = Q`.
    penalty_root: DMatrix<f64>,
}

/// Solution of one penalized weighted least-squares problem.
#[derive(Debug, Clone)]
pub struct WlsSolution {
    pub coef: DVector<f64>,
    pub fitted: Vec<f64>,
    /// `tr A(λ)`, the effective degrees of freedom.
    pub trace: f64,
    /// `Σ w_i (y_i − η̂_i)²`.
    pub weighted_rss: f64,
}

impl WlsSolution {
    /// GCV score `[n⁻¹ RSS_w] / [n⁻¹ tr(I − A)]²`.
    pub fn gcv_score(&self) -> f64 {
        let n = self.fitted.len() as f64;
        let denom = 1.0 - self.trace / n;
        (self.weighted_rss / n) / (denom * denom)
    }
}

impl PenalizedDesign {
    pub fn new(points: &[f64], knots: &[f64], domain: (f64, f64)) -> Result<Self> {
        check_domain(domain)?;
        if points.len() < 2 {
            return Err(ZissError::Singular(format!(
                "need at least two distinct points, got {}",
                points.len()
            )));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ZissError::Singular(
                "points must be distinct and increasing".into(),
            ));
        }
        let x: Vec<f64> = points.iter().map(|&t| to_unit(domain, t)).collect::<Result<_>>()?;
        let z: Vec<f64> = knots.iter().map(|&t| to_unit(domain, t)).collect::<Result<_>>()?;
        let q = z.len();

        let design = DMatrix::from_fn(x.len(), 2 + q, |i, j| match j {
            0 => 1.0,
            1 => x[i],
            _ => kernel_unit(z[j - 2], x[i]),
        });

        let eig = SymmetricEigen::new(gram_matrix(&z));
        let mut penalty_root = eig.eigenvectors.transpose();
        for (mut row, &lambda) in penalty_root.row_iter_mut().zip(eig.eigenvalues.iter()) {
            row *= lambda.max(0.0).sqrt();
        }

        Ok(Self {
            domain,
            points: points.to_vec(),
            knots: knots.to_vec(),
            design,
            penalty_root,
        })
    }

    /// Design over `points` with the default representer knots.
    pub fn with_default_knots(points: &[f64], domain: (f64, f64)) -> Result<Self> {
        Self::new(points, &representer_knots(points), domain)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    pub fn n_coef(&self) -> usize {
        self.design.ncols()
    }

    /// `η` at the observation points for coefficients `(d, c)`.
    pub fn linear_predictor(&self, coef: &DVector<f64>) -> DVector<f64> {
        &self.design * coef
    }

    /// `J = cᵀ Q c` for stacked coefficients `(d, c)`.
    pub fn penalty(&self, coef: &DVector<f64>) -> f64 {
        let c = coef.rows(2, self.knots.len());
        (&self.penalty_root * c).norm_squared()
    }

    /// Minimize `Σ w_i (y_i − η(t_i))² + λ cᵀQc`.
    pub fn solve_wls(&self, weights: &[f64], response: &[f64], lambda: f64) -> Result<WlsSolution> {
        let n = self.points.len();
        let q = self.knots.len();
        let p = 2 + q;
        if weights.len() != n || response.len() != n {
            return Err(ZissError::InvalidArgument(format!(
                "expected {n} weights and responses, got {} and {}",
                weights.len(),
                response.len()
            )));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(ZissError::InvalidArgument(format!("lambda must be positive, got {lambda}")));
        }
        if weights.iter().any(|&w| !(w > 0.0 && w.is_finite())) {
            return Err(ZissError::InvalidArgument("weights must be positive and finite".into()));
        }

        let sqrt_w: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
        let mut aug = DMatrix::zeros(n + q, p);
        for i in 0..n {
            for j in 0..p {
                aug[(i, j)] = sqrt_w[i] * self.design[(i, j)];
            }
        }
        let root_scale = lambda.sqrt();
        for r in 0..q {
            for k in 0..q {
                aug[(n + r, 2 + k)] = root_scale * self.penalty_root[(r, k)];
            }
        }
        let mut rhs = DVector::zeros(n + q);
        for i in 0..n {
            rhs[i] = sqrt_w[i] * response[i];
        }

        let svd = SVD::new(aug, true, true);
        let u = svd.u.as_ref().expect("U requested");
        let v_t = svd.v_t.as_ref().expect("V requested");
        let sigma_max = svd.singular_values.max();
        if !(sigma_max > 0.0 && sigma_max.is_finite()) {
            return Err(ZissError::Singular("design has no usable singular values".into()));
        }
        let cutoff = sigma_max * SVD_RELATIVE_CUTOFF;

        let mut coef = DVector::zeros(p);
        let mut trace = 0.0;
        let mut rank = 0;
        for (k, &s) in svd.singular_values.iter().enumerate() {
            if s <= cutoff {
                continue;
            }
            rank += 1;
            let uk = u.column(k);
            let proj = uk.dot(&rhs) / s;
            coef.axpy(proj, &v_t.row(k).transpose(), 1.0);
            trace += uk.rows(0, n).norm_squared();
        }
        // Without a rank-2 null space the affine part is not identified.
        if rank < 2 {
            return Err(ZissError::Singular("penalized design is rank deficient".into()));
        }

        let fitted = self.linear_predictor(&coef);
        let weighted_rss = (0..n)
            .map(|i| weights[i] * (response[i] - fitted[i]).powi(2))
            .sum();
        Ok(WlsSolution {
            coef,
            fitted: fitted.iter().copied().collect(),
            trace,
            weighted_rss,
        })
    }

    /// Turn stacked coefficients into a curve.
    pub fn curve(&self, coef: &DVector<f64>) -> Result<SplineMeanCurve> {
        SplineMeanCurve::new(
            self.knots.clone(),
            vec![coef[0], coef[1]],
            coef.rows(2, self.knots.len()).iter().copied().collect(),
            self.domain,
        )
    }
}

/// Penalized weighted least squares with the data points as knots.
pub fn solve_penalized_wls(
    knots: &[f64],
    domain: (f64, f64),
    weights: &[f64],
    working_response: &[f64],
    lambda: f64,
) -> Result<SplineMeanCurve> {
    let design = PenalizedDesign::new(knots, knots, domain)?;
    let sol = design.solve_wls(weights, working_response, lambda)?;
    design.curve(&sol.coef)
}

/// Controls for the penalized Poisson Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iter: usize,
    /// Relative change of the penalized objective that counts as converged.
    pub tol: f64,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-8,
            max_halvings: 20,
        }
    }
}

/// Result of a penalized Poisson fit.
#[derive(Debug, Clone)]
pub struct PoissonSplineFit {
    pub curve: SplineMeanCurve,
    pub lambda: f64,
    /// `Σ w_i (μ_i − ȳ_i η_i) + (λ/2) J(η)` at the solution.
    pub objective: f64,
    /// Objective after each accepted Newton step, starting from the initial value.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// GCV score of the converged working problem.
    pub gcv_score: f64,
    /// Trace of the converged working smoothing matrix.
    pub effective_df: f64,
    /// Stacked `(d, c)` on the design the fit was computed with.
    pub coef: DVector<f64>,
}

struct PoissonProblem<'a> {
    design: &'a PenalizedDesign,
    weights: &'a [f64],
    means: &'a [f64],
    lambda: f64,
}

impl PoissonProblem<'_> {
    fn objective(&self, coef: &DVector<f64>) -> f64 {
        let eta = self.design.linear_predictor(coef);
        let data: f64 = eta
            .iter()
            .zip(self.weights.iter().zip(self.means))
            .map(|(&e, (&w, &y))| w * (e.exp() - y * e))
            .sum();
        data + 0.5 * self.lambda * self.design.penalty(coef)
    }

    fn working(&self, coef: &DVector<f64>) -> (Vec<f64>, Vec<f64>) {
        let eta = self.design.linear_predictor(coef);
        let mut ww = Vec::with_capacity(eta.len());
        let mut z = Vec::with_capacity(eta.len());
        for ((&e, &w), &y) in eta.iter().zip(self.weights).zip(self.means) {
            let mu = e.exp().max(f64::MIN_POSITIVE);
            ww.push(w * mu);
            z.push(e + (y - mu) / mu);
        }
        (ww, z)
    }
}

/// Penalized Poisson fit on a prepared design; all weights must be positive.
pub fn fit_poisson_on_design(
    design: &PenalizedDesign,
    weights: &[f64],
    mean_response: &[f64],
    lambda: f64,
    options: &NewtonOptions,
    init: Option<&DVector<f64>>,
) -> Result<PoissonSplineFit> {
    let n = design.points().len();
    if weights.len() != n || mean_response.len() != n {
        return Err(ZissError::InvalidArgument(format!(
            "expected {n} weights and means, got {} and {}",
            weights.len(),
            mean_response.len()
        )));
    }
    if mean_response.iter().any(|&y| !(y >= 0.0 && y.is_finite())) {
        return Err(ZissError::InvalidArgument("mean responses must be non-negative".into()));
    }
    let total_w: f64 = weights.iter().sum();
    let total_y: f64 = weights.iter().zip(mean_response).map(|(w, y)| w * y).sum();
    if total_y <= 0.0 {
        return Err(ZissError::Degenerate(
            "all weighted responses are zero; the log-mean is unbounded below".into(),
        ));
    }

    let problem = PoissonProblem {
        design,
        weights,
        means: mean_response,
        lambda,
    };

    let mut coef = match init {
        Some(c) if c.len() == design.n_coef() && c.iter().all(|v| v.is_finite()) => c.clone(),
        _ => {
            let mut c = DVector::zeros(design.n_coef());
            c[0] = (total_y / total_w).ln();
            c
        }
    };
    let mut objective = problem.objective(&coef);
    let mut trace = vec![objective];
    let mut converged = false;
    let mut iterations = 0;
    let mut last_change = f64::INFINITY;

    while iterations < options.max_iter {
        iterations += 1;
        let (ww, z) = problem.working(&coef);
        let target = design.solve_wls(&ww, &z, lambda)?.coef;
        let direction = &target - &coef;

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=options.max_halvings {
            let candidate = &coef + &direction * step;
            let value = problem.objective(&candidate);
            if value.is_finite() && value <= objective {
                accepted = Some((candidate, value));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, value)) = accepted else {
            // No descent along the Newton direction: we are at the optimum
            // up to rounding.
            converged = true;
            break;
        };
        last_change = (objective - value) / (1.0 + objective.abs());
        coef = candidate;
        objective = value;
        trace.push(objective);
        if last_change <= options.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(ZissError::NonConvergence {
            solver: "penalized Poisson Newton",
            iterations,
            residual: last_change,
        });
    }

    let (ww, z) = problem.working(&coef);
    let working = design.solve_wls(&ww, &z, lambda)?;
    Ok(PoissonSplineFit {
        curve: design.curve(&coef)?,
        lambda,
        objective,
        objective_trace: trace,
        iterations,
        gcv_score: working.gcv_score(),
        effective_df: working.trace,
        coef,
    })
}

/// Points with positive weight, with their weights and means.
pub(crate) fn positive_weight_subset(
    points: &[f64],
    weights: &[f64],
    means: &[f64],
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if points.len() != weights.len() || points.len() != means.len() {
        return Err(ZissError::InvalidArgument(format!(
            "lengths differ: {} points, {} weights, {} means",
            points.len(),
            weights.len(),
            means.len()
        )));
    }
    if weights.iter().any(|&w| !(w >= 0.0 && w.is_finite())) {
        return Err(ZissError::InvalidArgument("weights must be non-negative".into()));
    }
    let mut kept = (Vec::new(), Vec::new(), Vec::new());
    for ((&t, &w), &y) in points.iter().zip(weights).zip(means) {
        if w > 0.0 {
            kept.0.push(t);
            kept.1.push(w);
            kept.2.push(y);
        }
    }
    Ok(kept)
}

/// Minimize `Σ_i w_i (exp(η(t_i)) − ȳ_i η(t_i)) + (λ/2) J(η)` over cubic
/// smoothing splines. Zero-weight points are dropped before the fit.
pub fn fit_poisson_spline(
    points: &[f64],
    domain: (f64, f64),
    weights: &[f64],
    mean_response: &[f64],
    lambda: f64,
    options: &NewtonOptions,
) -> Result<PoissonSplineFit> {
    let (pts, w, y) = positive_weight_subset(points, weights, mean_response)?;
    let design = PenalizedDesign::with_default_knots(&pts, domain)?;
    fit_poisson_on_design(&design, &w, &y, lambda, options, None)
}

/// `10 n^{-2/9}` for `n` total observations.
pub fn initial_lambda(n_obs: usize) -> f64 {
    10.0 * (n_obs.max(1) as f64).powf(-2.0 / 9.0)
}

/// `len` log-spaced values from `center·10^{-span}` to `center·10^{span}`.
pub fn lambda_grid(center: f64, span_decades: f64, len: usize) -> Vec<f64> {
    match len {
        0 => vec![],
        1 => vec![center],
        _ => (0..len)
            .map(|k| {
                let frac = k as f64 / (len - 1) as f64;
                center * 10f64.powf(span_decades * (2.0 * frac - 1.0))
            })
            .collect(),
    }
}

/// How the smoothing parameter is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaPolicy {
    /// Use this λ throughout, no GCV.
    Fixed(f64),
    /// Start from `10 n^{-2/9}` and pick the final λ by GCV on a log grid
    /// spanning `±span_decades` around it.
    Gcv { span_decades: f64, grid_len: usize },
}

impl Default for LambdaPolicy {
    fn default() -> Self {
        LambdaPolicy::Gcv {
            span_decades: 3.0,
            grid_len: 31,
        }
    }
}

impl LambdaPolicy {
    /// λ used before (or instead of) the GCV search, for `n_obs` observations.
    pub fn base_lambda(&self, n_obs: usize) -> f64 {
        match *self {
            LambdaPolicy::Fixed(l) => l,
            LambdaPolicy::Gcv { .. } => initial_lambda(n_obs),
        }
    }

    /// GCV grid, if this policy searches one.
    pub fn grid(&self, n_obs: usize) -> Option<Vec<f64>> {
        match *self {
            LambdaPolicy::Fixed(_) => None,
            LambdaPolicy::Gcv {
                span_decades,
                grid_len,
            } => Some(lambda_grid(initial_lambda(n_obs), span_decades, grid_len)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LambdaPolicy::Fixed(l) if !(l > 0.0 && l.is_finite()) => Err(
                ZissError::InvalidArgument(format!("fixed lambda must be positive, got {l}")),
            ),
            LambdaPolicy::Gcv {
                span_decades,
                grid_len,
            } if !(span_decades >= 0.0 && span_decades.is_finite()) || grid_len == 0 => {
                Err(ZissError::InvalidArgument(
                    "GCV grid needs a non-negative span and at least one value".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Fit a Poisson spline to per-point weights and means under `policy`.
/// `n_obs` is the number of underlying observations, which sets the
/// starting λ.
pub fn fit_with_policy(
    points: &[f64],
    domain: (f64, f64),
    weights: &[f64],
    mean_response: &[f64],
    n_obs: usize,
    policy: &LambdaPolicy,
    options: &NewtonOptions,
) -> Result<PoissonSplineFit> {
    policy.validate()?;
    let (pts, w, y) = positive_weight_subset(points, weights, mean_response)?;
    if pts.len() < 2 {
        return Err(ZissError::Degenerate(format!(
            "need at least two points carrying data, got {}",
            pts.len()
        )));
    }
    let design = PenalizedDesign::with_default_knots(&pts, domain)?;
    match policy.grid(n_obs) {
        None => fit_poisson_on_design(&design, &w, &y, policy.base_lambda(n_obs), options, None),
        Some(grid) => Ok(gcv_select_on_design(&design, &w, &y, &grid, options, None)?.fit),
    }
}

/// Outcome of a GCV search over a λ grid.
#[derive(Debug, Clone)]
pub struct GcvSelection {
    pub lambda: f64,
    /// One score per grid value; `+∞` where the fit failed.
    pub scores: Vec<f64>,
    /// `tr A(λ)` per grid value; NaN where the fit failed.
    pub traces: Vec<f64>,
    pub fit: PoissonSplineFit,
}

/// GCV search on a prepared design. Ties go to the larger λ.
pub fn gcv_select_on_design(
    design: &PenalizedDesign,
    weights: &[f64],
    mean_response: &[f64],
    grid: &[f64],
    options: &NewtonOptions,
    init: Option<&DVector<f64>>,
) -> Result<GcvSelection> {
    if grid.is_empty() {
        return Err(ZissError::InvalidArgument("lambda grid is empty".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0 && l.is_finite())) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ZissError::InvalidArgument(
            "lambda grid must be positive and increasing".into(),
        ));
    }
    let fits: Vec<Result<PoissonSplineFit>> = grid
        .par_iter()
        .map(|&lambda| fit_poisson_on_design(design, weights, mean_response, lambda, options, init))
        .collect();

    let scores: Vec<f64> = fits
        .iter()
        .map(|f| match f {
            Ok(fit) if fit.gcv_score.is_finite() => fit.gcv_score,
            _ => f64::INFINITY,
        })
        .collect();
    let traces = fits
        .iter()
        .map(|f| f.as_ref().map_or(f64::NAN, |fit| fit.effective_df))
        .collect();

    let best = scores.iter().copied().fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        let first_err = fits.into_iter().find_map(|f| f.err());
        return Err(first_err.unwrap_or_else(|| {
            ZissError::Singular("GCV score is not finite for any lambda".into())
        }));
    }
    let slack = 1e-12 * (1.0 + best.abs());
    let chosen = scores
        .iter()
        .rposition(|&s| s <= best + slack)
        .expect("a finite minimum exists");
    let fit = fits
        .into_iter()
        .nth(chosen)
        .expect("index in range")
        .expect("finite score implies a successful fit");
    Ok(GcvSelection {
        lambda: grid[chosen],
        scores,
        traces,
        fit,
    })
}

/// Select λ on `grid` by GCV of the converged working problem.
pub fn gcv_select_lambda(
    points: &[f64],
    domain: (f64, f64),
    weights: &[f64],
    mean_response: &[f64],
    grid: &[f64],
    options: &NewtonOptions,
) -> Result<GcvSelection> {
    let (pts, w, y) = positive_weight_subset(points, weights, mean_response)?;
    let design = PenalizedDesign::with_default_knots(&pts, domain)?;
    gcv_select_on_design(&design, &w, &y, grid, options, None)
}
