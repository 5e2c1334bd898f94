//! The zero-inflated smoothing spline estimator.
//!
//! Each observation comes from the Poisson component with probability
//! `p(t) = 1 / (1 + exp(Σ α_l b_l(t)))` and is a structural zero otherwise.
//! The log-mean of the Poisson component is a cubic smoothing spline.
//! Estimation alternates:
//!
//! * E-step: `q = P(Poisson | y)`, which is 1 for positive counts;
//! * P1: a logistic fit of `α` to the responsibilities by damped Newton;
//! * P2: a penalized Poisson spline fit with replicate weights `Σ_j q_ij`.
//!
//! λ stays fixed within each run of EM iterations. After the first run,
//! GCV picks λ with the responsibilities held fixed and EM resumes at the
//! pick, until the pick repeats or the round budget is spent.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bspline::BSplineBasis;
use crate::data::BinnedCountData;
use crate::error::{Result, ZissError};
use crate::rkhs::{
    fit_poisson_on_design, gcv_select_on_design, positive_weight_subset, LambdaPolicy,
    NewtonOptions, PenalizedDesign, PoissonSplineFit, SplineMeanCurve,
};

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + e^{-x})` without overflow.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic B-spline curve for the Poisson-component probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutCurve {
    basis: BSplineBasis,
    alpha: Vec<f64>,
}

impl DropoutCurve {
    pub fn new(basis: BSplineBasis, alpha: Vec<f64>) -> Result<Self> {
        if alpha.len() != basis.len() {
            return Err(ZissError::InvalidArgument(format!(
                "{} coefficients for a basis of size {}",
                alpha.len(),
                basis.len()
            )));
        }
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(ZissError::InvalidArgument("coefficients must be finite".into()));
        }
        Ok(Self { basis, alpha })
    }

    /// Curve with `p(t) ≡ p`; `p` must lie strictly inside `(0, 1)`.
    pub fn constant(basis: BSplineBasis, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(ZissError::InvalidArgument(format!(
                "constant probability must be in (0, 1), got {p}"
            )));
        }
        // Partition of unity: Σ α b = α when all coefficients agree.
        let a = ((1.0 - p) / p).ln();
        let m = basis.len();
        Self::new(basis, vec![a; m])
    }

    pub fn basis(&self) -> &BSplineBasis {
        &self.basis
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    /// `Σ_l α_l b_l(t)`, the log-odds of a structural zero.
    pub fn linear_predictor(&self, t: f64) -> Result<f64> {
        let b = self.basis.eval(t)?;
        Ok(b.iter().zip(&self.alpha).map(|(b, a)| b * a).sum())
    }

    /// Probability that an observation at `t` comes from the Poisson component.
    pub fn poisson_prob(&self, t: f64) -> Result<f64> {
        self.linear_predictor(t).map(|eta| logistic(-eta))
    }

    /// Excess-zero probability `1 − p(t)`.
    pub fn dropout(&self, t: f64) -> Result<f64> {
        self.linear_predictor(t).map(logistic)
    }
}

/// Posterior Poisson-component probabilities, one per observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    q: Vec<Vec<f64>>,
}

impl Responsibilities {
    pub fn new(data: &BinnedCountData, q: Vec<Vec<f64>>) -> Result<Self> {
        let shape_ok = q.len() == data.n_points()
            && q.iter().zip(data.counts()).all(|(a, b)| a.len() == b.len());
        if !shape_ok {
            return Err(ZissError::InvalidArgument(
                "responsibilities do not match the data layout".into(),
            ));
        }
        if q.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ZissError::InvalidArgument(
                "responsibilities must lie in [0, 1]".into(),
            ));
        }
        Ok(Self { q })
    }

    /// `q = 1` for positive counts and `fill` for zeros.
    pub fn filled(data: &BinnedCountData, fill: f64) -> Result<Self> {
        let q = data
            .counts()
            .iter()
            .map(|row| row.iter().map(|&y| if y > 0 { 1.0 } else { fill }).collect())
            .collect();
        Self::new(data, q)
    }

    pub fn q(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// `Σ_j q_ij` per point.
    pub fn point_weights(&self) -> Vec<f64> {
        self.q.iter().map(|row| row.iter().sum()).collect()
    }

    fn weighted_means(&self, data: &BinnedCountData) -> (Vec<f64>, Vec<f64>) {
        let weights = self.point_weights();
        let means = self
            .q
            .iter()
            .zip(data.counts())
            .zip(&weights)
            .map(|((qs, ys), &w)| {
                if w > 0.0 {
                    qs.iter().zip(ys).map(|(q, &y)| q * y as f64).sum::<f64>() / w
                } else {
                    0.0
                }
            })
            .collect();
        (weights, means)
    }
}

/// `P(Poisson | y = 0) = p e^{−μ} / (p e^{−μ} + 1 − p)`.
pub fn zero_responsibility(mu: f64, p: f64) -> f64 {
    let num = p * (-mu).exp();
    let den = num + (1.0 - p);
    if den > 0.0 {
        num / den
    } else {
        1.0
    }
}

/// E-step.
pub fn e_step(
    data: &BinnedCountData,
    mu_hat: &SplineMeanCurve,
    p_hat: &DropoutCurve,
) -> Result<Responsibilities> {
    let mut q = Vec::with_capacity(data.n_points());
    for (&t, row) in data.points().iter().zip(data.counts()) {
        let mu = mu_hat.mean(t)?;
        let p = p_hat.poisson_prob(t)?;
        let zero_q = zero_responsibility(mu, p);
        q.push(row.iter().map(|&y| if y > 0 { 1.0 } else { zero_q }).collect());
    }
    Ok(Responsibilities { q })
}

/// Value, gradient and Hessian of the dropout objective `F(α)`.
#[derive(Debug, Clone)]
pub struct DropoutObjective {
    pub value: f64,
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

/// Sufficient statistics of P1: per point, `Σ_j q_ij` and `M_i`, plus the
/// basis evaluated at the points.
struct DropoutProblem {
    design: DMatrix<f64>,
    q_sums: Vec<f64>,
    counts: Vec<f64>,
}

impl DropoutProblem {
    fn new(data: &BinnedCountData, q: &Responsibilities, basis: &BSplineBasis) -> Result<Self> {
        if q.q.len() != data.n_points() {
            return Err(ZissError::InvalidArgument(
                "responsibilities do not match the data layout".into(),
            ));
        }
        Ok(Self {
            design: basis.design_matrix(data.points())?,
            q_sums: q.point_weights(),
            counts: data.replicates().into_iter().map(|m| m as f64).collect(),
        })
    }

    fn evaluate(&self, alpha: &DVector<f64>) -> DropoutObjective {
        let m = self.design.ncols();
        let eta = &self.design * alpha;
        let mut value = 0.0;
        let mut grad = DVector::zeros(m);
        let mut hess = DMatrix::zeros(m, m);
        for (i, &e) in eta.iter().enumerate() {
            let (qs, mi) = (self.q_sums[i], self.counts[i]);
            // log(1 / (1 + e^{-η})) = -softplus(-η)
            value += -qs * e - mi * softplus(-e);
            let resid = -qs + mi * logistic(-e);
            let s = logistic(e);
            let curv = mi * s * (1.0 - s);
            let row = self.design.row(i);
            for k in 0..m {
                let bk = row[k];
                if bk == 0.0 {
                    continue;
                }
                grad[k] += bk * resid;
                for l in 0..m {
                    hess[(k, l)] -= bk * row[l] * curv;
                }
            }
        }
        DropoutObjective { value, grad, hess }
    }
}

/// `F(α) = −ΣΣ q_ij η_i + ΣΣ log(1 / (1 + e^{−η_i}))` with
/// `η_i = Σ_k α_k b_k(t_i)`, its gradient and its (negative definite) Hessian.
pub fn dropout_objective_grad_hess(
    data: &BinnedCountData,
    q: &Responsibilities,
    basis: &BSplineBasis,
    alpha: &[f64],
) -> Result<DropoutObjective> {
    if alpha.len() != basis.len() {
        return Err(ZissError::InvalidArgument(format!(
            "{} coefficients for a basis of size {}",
            alpha.len(),
            basis.len()
        )));
    }
    let problem = DropoutProblem::new(data, q, basis)?;
    Ok(problem.evaluate(&DVector::from_column_slice(alpha)))
}

/// Iterate record of a Newton ascent.
#[derive(Debug, Clone)]
pub struct NewtonAscent {
    pub point: DVector<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Accepted iterates, starting with the initial point.
    pub path: Vec<DVector<f64>>,
}

const MAX_STEP_HALVINGS: usize = 30;
const HESSIAN_RIDGE: f64 = 1e-8;

/// Damped Newton ascent on a concave objective. `eval` returns the value,
/// gradient and Hessian. Stops when `‖∇F‖_∞ ≤ tol`.
pub fn newton_maximize<F>(eval: F, init: DVector<f64>, max_iter: usize, tol: f64) -> Result<NewtonAscent>
where
    F: Fn(&DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>),
{
    let mut point = init;
    let (mut value, mut grad, mut hess) = eval(&point);
    let mut path = vec![point.clone()];
    let mut iterations = 0;
    loop {
        let grad_norm = grad.amax();
        if grad_norm <= tol {
            return Ok(NewtonAscent {
                point,
                value,
                grad_norm,
                iterations,
                converged: true,
                path,
            });
        }
        if iterations >= max_iter {
            return Ok(NewtonAscent {
                point,
                value,
                grad_norm,
                iterations,
                converged: false,
                path,
            });
        }
        iterations += 1;

        let neg_hess = -&hess;
        let chol = neg_hess.clone().cholesky().or_else(|| {
            let n = neg_hess.nrows();
            (neg_hess + DMatrix::identity(n, n) * HESSIAN_RIDGE).cholesky()
        });
        let Some(chol) = chol else {
            return Err(ZissError::Singular(
                "Hessian is not negative definite even after ridging".into(),
            ));
        };
        let direction = chol.solve(&grad);

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=MAX_STEP_HALVINGS {
            let candidate = &point + &direction * step;
            let (v, g, h) = eval(&candidate);
            if v.is_finite() && v >= value {
                accepted = Some((candidate, v, g, h));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, v, g, h)) = accepted else {
            // Rounding-level stall: no ascent is available along the Newton direction.
            return Ok(NewtonAscent {
                point,
                value,
                grad_norm,
                iterations,
                converged: false,
                path,
            });
        };
        point = candidate;
        value = v;
        grad = g;
        hess = h;
        path.push(point.clone());
    }
}

/// Outcome of the P1 Newton solve.
#[derive(Debug, Clone)]
pub struct DropoutSolve {
    pub curve: DropoutCurve,
    pub objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Damped Newton for P1 that always returns the last iterate.
pub fn solve_dropout(
    data: &BinnedCountData,
    q: &Responsibilities,
    basis: &BSplineBasis,
    alpha_init: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<DropoutSolve> {
    if alpha_init.len() != basis.len() || alpha_init.iter().any(|a| !a.is_finite()) {
        return Err(ZissError::InvalidArgument(
            "initial coefficients must be finite and match the basis".into(),
        ));
    }
    let problem = DropoutProblem::new(data, q, basis)?;
    let ascent = newton_maximize(
        |a| {
            let o = problem.evaluate(a);
            (o.value, o.grad, o.hess)
        },
        DVector::from_column_slice(alpha_init),
        max_iter,
        tol,
    )?;
    Ok(DropoutSolve {
        curve: DropoutCurve::new(basis.clone(), ascent.point.iter().copied().collect())?,
        objective: ascent.value,
        grad_norm: ascent.grad_norm,
        iterations: ascent.iterations,
        converged: ascent.converged,
    })
}

/// M-step for the dropout curve; errors if the gradient tolerance is not met.
pub fn m_step_dropout(
    data: &BinnedCountData,
    q: &Responsibilities,
    basis: &BSplineBasis,
    alpha_init: &[f64],
    max_iter: usize,
    tol: f64,
) -> Result<DropoutCurve> {
    let solve = solve_dropout(data, q, basis, alpha_init, max_iter, tol)?;
    if !solve.converged {
        return Err(ZissError::NonConvergence {
            solver: "dropout Newton",
            iterations: solve.iterations,
            residual: solve.grad_norm,
        });
    }
    Ok(solve.curve)
}

/// P2 inputs after dropping zero-weight points.
struct MeanProblem {
    kept: Vec<usize>,
    points: Vec<f64>,
    weights: Vec<f64>,
    means: Vec<f64>,
}

fn mean_problem(data: &BinnedCountData, q: &Responsibilities) -> Result<MeanProblem> {
    let (weights, means) = q.weighted_means(data);
    let kept: Vec<usize> = (0..weights.len()).filter(|&i| weights[i] > 0.0).collect();
    let (points, weights, means) = positive_weight_subset(data.points(), &weights, &means)?;
    if points.len() < 2 {
        return Err(ZissError::Degenerate(format!(
            "need at least two points with positive Poisson weight, got {}",
            points.len()
        )));
    }
    if means.iter().all(|&y| y == 0.0) {
        return Err(ZissError::Degenerate(
            "no positive counts carry Poisson weight".into(),
        ));
    }
    Ok(MeanProblem {
        kept,
        points,
        weights,
        means,
    })
}

/// M-step for the mean curve at a fixed λ.
pub fn m_step_mean(
    data: &BinnedCountData,
    q: &Responsibilities,
    lambda: f64,
    options: &NewtonOptions,
) -> Result<PoissonSplineFit> {
    let problem = mean_problem(data, q)?;
    let design = PenalizedDesign::with_default_knots(&problem.points, data.domain())?;
    fit_poisson_on_design(&design, &problem.weights, &problem.means, lambda, options, None)
}

/// Observed-data mixture negative log-likelihood plus `(λ/2) J(η)`.
pub fn penalized_nll(
    data: &BinnedCountData,
    mean_curve: &SplineMeanCurve,
    dropout: &DropoutCurve,
    lambda: f64,
) -> Result<f64> {
    let max_y = data.counts().iter().flatten().copied().max().unwrap_or(0);
    let mut log_fact = Vec::with_capacity(max_y as usize + 1);
    let mut acc = 0.0;
    log_fact.push(0.0);
    for k in 1..=max_y {
        acc += (k as f64).ln();
        log_fact.push(acc);
    }

    let mut nll = 0.0;
    for (&t, row) in data.points().iter().zip(data.counts()) {
        let eta = mean_curve.eta(t)?;
        let mu = eta.exp();
        let a = dropout.linear_predictor(t)?;
        let log_p = -softplus(a);
        let log_1mp = -softplus(-a);
        for &y in row {
            if y == 0 {
                let x1 = log_p - mu;
                let hi = x1.max(log_1mp);
                nll -= hi + ((x1 - hi).exp() + (log_1mp - hi).exp()).ln();
            } else {
                nll -= log_p + y as f64 * eta - mu - log_fact[y as usize];
            }
        }
    }
    Ok(nll + 0.5 * lambda * mean_curve.roughness())
}

/// Settings for [`fit_ziss`].
#[derive(Debug, Clone, PartialEq)]
pub struct ZissConfig {
    /// Relative tolerance on the change of `μ̂` at the data points.
    pub epsilon: f64,
    /// EM iterations allowed per phase.
    pub max_iter: usize,
    pub basis_m: usize,
    pub degree: usize,
    pub lambda: LambdaPolicy,
    /// Upper bound on GCV selections. After each selection but the last,
    /// EM resumes at the selected λ; the loop stops early once the
    /// selection repeats. 1 gives a single final refit.
    pub gcv_rounds: usize,
    pub newton: NewtonOptions,
    pub dropout_max_iter: usize,
    pub dropout_tol: f64,
}

impl Default for ZissConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            max_iter: 200,
            basis_m: 6,
            degree: 3,
            lambda: LambdaPolicy::default(),
            gcv_rounds: 5,
            newton: NewtonOptions::default(),
            dropout_max_iter: 100,
            dropout_tol: 1e-8,
        }
    }
}

/// EM iterations run at one fixed λ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmPhase {
    pub lambda: f64,
    /// Penalized NLL at `lambda`: value at entry, then one per iteration.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl EmPhase {
    /// Largest increase between consecutive trace entries (≤ 0 when monotone).
    pub fn max_trace_increase(&self) -> f64 {
        self.trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Result of [`fit_ziss`].
#[derive(Debug, Clone)]
pub struct ZissFit {
    pub dropout: DropoutCurve,
    pub mean_curve: SplineMeanCurve,
    /// Final λ (GCV-selected unless the policy fixes it).
    pub lambda: f64,
    pub responsibilities: Responsibilities,
    /// The first phase runs at the policy's base λ, later ones at GCV picks.
    pub phases: Vec<EmPhase>,
    /// Total EM iterations over all phases.
    pub iterations: usize,
    /// Every phase met the tolerance.
    pub converged: bool,
    /// Grid and scores of the last GCV selection.
    pub gcv: Option<(Vec<f64>, Vec<f64>)>,
}

impl ZissFit {
    /// Penalized NLL of the final curves at the final λ.
    pub fn penalized_nll(&self, data: &BinnedCountData) -> Result<f64> {
        penalized_nll(data, &self.mean_curve, &self.dropout, self.lambda)
    }

    /// λ of the first EM phase.
    pub fn em_lambda(&self) -> f64 {
        self.phases[0].lambda
    }

    /// Largest trace increase within any phase.
    pub fn max_trace_increase(&self) -> f64 {
        self.phases
            .iter()
            .map(EmPhase::max_trace_increase)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// State of the EM iteration, reusing the P2 design while the set of
/// points with positive weight does not change.
struct EmRunner<'a> {
    data: &'a BinnedCountData,
    basis: BSplineBasis,
    config: &'a ZissConfig,
    designs: HashMap<Vec<usize>, PenalizedDesign>,
    warm: Option<(Vec<usize>, DVector<f64>)>,
}

impl<'a> EmRunner<'a> {
    fn new(data: &'a BinnedCountData, config: &'a ZissConfig) -> Result<Self> {
        let (lo, hi) = data.domain();
        let basis = BSplineBasis::clamped_uniform(lo, hi, config.basis_m, config.degree)?;
        Ok(Self {
            data,
            basis,
            config,
            designs: HashMap::new(),
            warm: None,
        })
    }

    fn design_for(&mut self, problem: &MeanProblem) -> Result<&PenalizedDesign> {
        if !self.designs.contains_key(&problem.kept) {
            let design = PenalizedDesign::with_default_knots(&problem.points, self.data.domain())?;
            self.designs.insert(problem.kept.clone(), design);
        }
        Ok(&self.designs[&problem.kept])
    }

    fn fit_mean(&mut self, q: &Responsibilities, lambda: f64) -> Result<PoissonSplineFit> {
        let problem = mean_problem(self.data, q)?;
        let init = match &self.warm {
            Some((kept, coef)) if *kept == problem.kept => Some(coef.clone()),
            _ => None,
        };
        let options = self.config.newton;
        let design = self.design_for(&problem)?;
        let fit = fit_poisson_on_design(
            design,
            &problem.weights,
            &problem.means,
            lambda,
            &options,
            init.as_ref(),
        )?;
        self.warm = Some((problem.kept, fit.coef.clone()));
        Ok(fit)
    }

    fn select_mean(&mut self, q: &Responsibilities, grid: &[f64]) -> Result<(f64, Vec<f64>, SplineMeanCurve)> {
        let problem = mean_problem(self.data, q)?;
        let init = match &self.warm {
            Some((kept, coef)) if *kept == problem.kept => Some(coef.clone()),
            _ => None,
        };
        let options = self.config.newton;
        let design = self.design_for(&problem)?;
        let sel = gcv_select_on_design(
            design,
            &problem.weights,
            &problem.means,
            grid,
            &options,
            init.as_ref(),
        )?;
        Ok((sel.lambda, sel.scores, sel.fit.curve))
    }

    fn fit_dropout(&self, q: &Responsibilities, alpha: &[f64]) -> Result<DropoutCurve> {
        Ok(solve_dropout(
            self.data,
            q,
            &self.basis,
            alpha,
            self.config.dropout_max_iter,
            self.config.dropout_tol,
        )?
        .curve)
    }

    /// One E-step followed by both M-step problems.
    fn cycle(
        &mut self,
        mean: &SplineMeanCurve,
        dropout: &DropoutCurve,
        lambda: f64,
    ) -> Result<(Responsibilities, SplineMeanCurve, DropoutCurve)> {
        let q = e_step(self.data, mean, dropout)?;
        let next_dropout = self.fit_dropout(&q, dropout.alpha())?;
        let next_mean = self.fit_mean(&q, lambda)?.curve;
        Ok((q, next_mean, next_dropout))
    }
}

/// Starting curves: constant mean at the average positive count, constant
/// Poisson probability matching responsibilities of 1 (positive) and ½ (zero).
pub fn initial_curves(
    data: &BinnedCountData,
    basis: &BSplineBasis,
) -> Result<(SplineMeanCurve, DropoutCurve)> {
    let positives: Vec<u64> = data.counts().iter().flatten().copied().filter(|&y| y > 0).collect();
    let mean0 = if positives.is_empty() {
        1e-2
    } else {
        positives.iter().sum::<u64>() as f64 / positives.len() as f64
    };
    let mu = SplineMeanCurve::affine(mean0.ln(), 0.0, data.domain())?;
    let q0 = Responsibilities::filled(data, 0.5)?;
    let q_bar = q0.point_weights().iter().sum::<f64>() / data.n_obs() as f64;
    let p = DropoutCurve::constant(basis.clone(), q_bar.clamp(1e-8, 1.0 - 1e-8))?;
    Ok((mu, p))
}

/// One EM cycle at a fixed λ from the given curves. Returns the
/// responsibilities of the E-step and the updated mean and dropout curves.
pub fn em_cycle(
    data: &BinnedCountData,
    mean: &SplineMeanCurve,
    dropout: &DropoutCurve,
    lambda: f64,
    config: &ZissConfig,
) -> Result<(Responsibilities, SplineMeanCurve, DropoutCurve)> {
    let mut runner = EmRunner::new(data, config)?;
    if dropout.basis() != &runner.basis {
        runner.basis = dropout.basis().clone();
    }
    runner.cycle(mean, dropout, lambda)
}

fn relative_change(prev: &[f64], next: &[f64]) -> f64 {
    let diff: f64 = prev.iter().zip(next).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = prev.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / (1.0 + norm)
}

/// Fit the zero-inflated smoothing spline model.
pub fn fit_ziss(data: &BinnedCountData, config: &ZissConfig) -> Result<ZissFit> {
    if !(config.epsilon > 0.0) || config.max_iter == 0 || config.gcv_rounds == 0 {
        return Err(ZissError::InvalidArgument(
            "epsilon must be positive, max_iter and gcv_rounds at least 1".into(),
        ));
    }
    config.lambda.validate()?;
    if !data.has_positive() {
        return Err(ZissError::Degenerate(
            "all counts are zero; there are no Poisson observations".into(),
        ));
    }

    let mut runner = EmRunner::new(data, config)?;
    let base_lambda = config.lambda.base_lambda(data.n_obs());
    let (mut mean, mut dropout) = initial_curves(data, &runner.basis)?;

    let (phase, mut q) = run_phase(&mut runner, &mut mean, &mut dropout, base_lambda)?;
    let mut phases = vec![phase];

    let (lambda, gcv, responsibilities) = match config.lambda.grid(data.n_obs()) {
        None => (base_lambda, None, q),
        Some(grid) => {
            let mut current = base_lambda;
            let mut round = 0;
            let scores = loop {
                round += 1;
                let (selected, scores, refit) = runner.select_mean(&q, &grid)?;
                mean = refit;
                let settled = selected == current;
                current = selected;
                if settled || round == config.gcv_rounds {
                    break scores;
                }
                let (phase, q_next) = run_phase(&mut runner, &mut mean, &mut dropout, current)?;
                phases.push(phase);
                q = q_next;
            };
            let q_final = e_step(data, &mean, &dropout)?;
            dropout = runner.fit_dropout(&q_final, dropout.alpha())?;
            (current, Some((grid, scores)), q_final)
        }
    };

    Ok(ZissFit {
        dropout,
        mean_curve: mean,
        lambda,
        responsibilities,
        iterations: phases.iter().map(|p| p.iterations).sum(),
        converged: phases.iter().all(|p| p.converged),
        phases,
        gcv,
    })
}

/// EM cycles at fixed `lambda` until `μ̂` settles; returns the last
/// responsibilities.
fn run_phase(
    runner: &mut EmRunner<'_>,
    mean: &mut SplineMeanCurve,
    dropout: &mut DropoutCurve,
    lambda: f64,
) -> Result<(EmPhase, Responsibilities)> {
    let data = runner.data;
    let config = runner.config;
    let mut trace = vec![penalized_nll(data, mean, dropout, lambda)?];
    let mut fitted = mean.means_at(data.points())?;
    let mut q = None;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let (q_k, mean_k, dropout_k) = runner.cycle(mean, dropout, lambda)?;
        *mean = mean_k;
        *dropout = dropout_k;
        q = Some(q_k);
        trace.push(penalized_nll(data, mean, dropout, lambda)?);

        let next = mean.means_at(data.points())?;
        let change = relative_change(&fitted, &next);
        fitted = next;
        if change <= config.epsilon {
            converged = true;
            break;
        }
    }
    let q = q.expect("max_iter is at least 1");
    Ok((
        EmPhase {
            lambda,
            trace,
            iterations,
            converged,
        },
        q,
    ))
}
