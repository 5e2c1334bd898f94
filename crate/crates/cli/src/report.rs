//! Fit persistence and curve export.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use ziss_core::{DropoutCurve, SplineMeanCurve, ZissFit};

use crate::error::{CliError, CliResult};

/// Points in an exported curve.
pub const CURVE_GRID: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineJson {
    pub knots: Vec<f64>,
    pub d: Vec<f64>,
    pub c: Vec<f64>,
    pub domain: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisJson {
    pub degree: usize,
    pub knots: Vec<f64>,
}

/// Serialized form of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lambda: f64,
    pub iterations: usize,
    pub converged: bool,
    pub penalized_nll: f64,
    pub alpha: Vec<f64>,
    pub spline: SplineJson,
    pub basis: BasisJson,
    /// Pseudotime points the model was fitted on.
    pub points: Vec<f64>,
}

impl FitReport {
    pub fn new(fit: &ZissFit, penalized_nll: f64, points: &[f64]) -> Self {
        let curve = &fit.mean_curve;
        let (lo, hi) = curve.domain();
        let basis = fit.dropout.basis();
        Self {
            lambda: fit.lambda,
            iterations: fit.iterations,
            converged: fit.converged,
            penalized_nll,
            alpha: fit.dropout.alpha().to_vec(),
            spline: SplineJson {
                knots: curve.knots().to_vec(),
                d: curve.d().to_vec(),
                c: curve.c().to_vec(),
                domain: [lo, hi],
            },
            basis: BasisJson {
                degree: basis.degree(),
                knots: basis.knots().to_vec(),
            },
            points: points.to_vec(),
        }
    }

    pub fn mean_curve(&self) -> CliResult<SplineMeanCurve> {
        let s = &self.spline;
        Ok(SplineMeanCurve::new(
            s.knots.clone(),
            s.d.clone(),
            s.c.clone(),
            (s.domain[0], s.domain[1]),
        )?)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: not a fit file: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fit report serializes");
        s.push('\n');
        s
    }
}

/// `t,mu_hat,dropout_hat[,mu_true]` on a uniform grid spanning the domain.
pub fn curve_csv(
    mean: &SplineMeanCurve,
    dropout: &DropoutCurve,
    truth: Option<&dyn Fn(f64) -> f64>,
) -> CliResult<String> {
    let (lo, hi) = mean.domain();
    let mut out = String::from("t,mu_hat,dropout_hat");
    if truth.is_some() {
        out.push_str(",mu_true");
    }
    out.push('\n');
    for k in 0..CURVE_GRID {
        let t = if k + 1 == CURVE_GRID {
            hi
        } else {
            lo + (hi - lo) * k as f64 / (CURVE_GRID - 1) as f64
        };
        let mu = mean.mean(t)?;
        let drop = dropout.dropout(t)?;
        write!(out, "{t},{mu},{drop}").unwrap();
        if let Some(f) = truth {
            write!(out, ",{}", f(t)).unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}
