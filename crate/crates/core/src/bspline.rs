//! Clamped B-spline bases on a closed interval.
//!
//! Evaluation follows the Cox–de Boor recurrence in its triangular form: for
//! a point in knot span `k` only the `degree + 1` functions
//! `b_{k-degree}, …, b_k` are non-zero, and they are built up one degree at
//! a time from the indicator of the span.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ZissError};

/// A clamped B-spline basis: boundary knots repeated `degree + 1` times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl BSplineBasis {
    /// Basis with `m` functions of the given degree and equally spaced
    /// interior knots on `(t_min, t_max)`.
    pub fn clamped_uniform(t_min: f64, t_max: f64, m: usize, degree: usize) -> Result<Self> {
        if !(t_min.is_finite() && t_max.is_finite()) || t_min >= t_max {
            return Err(ZissError::InvalidArgument(format!(
                "basis interval must satisfy t_min < t_max, got [{t_min}, {t_max}]"
            )));
        }
        if m < degree + 1 {
            return Err(ZissError::InvalidArgument(format!(
                "a degree-{degree} basis needs at least {} functions, got {m}",
                degree + 1
            )));
        }
        let n_interior = m - degree - 1;
        let width = t_max - t_min;
        let mut knots = Vec::with_capacity(m + degree + 1);
        knots.extend(std::iter::repeat_n(t_min, degree + 1));
        knots.extend(
            (1..=n_interior).map(|k| t_min + width * k as f64 / (n_interior + 1) as f64),
        );
        knots.extend(std::iter::repeat_n(t_max, degree + 1));
        Ok(Self { degree, knots })
    }

    /// Rebuild a basis from a stored knot vector, checking the clamped layout.
    pub fn from_knots(degree: usize, knots: Vec<f64>) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(ZissError::InvalidArgument(format!(
                "knot vector of length {} is too short for degree {degree}",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) || knots.windows(2).any(|w| w[0] > w[1]) {
            return Err(ZissError::InvalidArgument(
                "knots must be finite and non-decreasing".into(),
            ));
        }
        let lo = knots[0];
        let hi = knots[knots.len() - 1];
        if lo >= hi {
            return Err(ZissError::InvalidArgument("knot vector spans an empty interval".into()));
        }
        let lo_mult = knots.iter().filter(|&&k| k == lo).count();
        let hi_mult = knots.iter().filter(|&&k| k == hi).count();
        if lo_mult != degree + 1 || hi_mult != degree + 1 {
            return Err(ZissError::InvalidArgument(format!(
                "boundary knots must be repeated exactly {} times",
                degree + 1
            )));
        }
        Ok(Self { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions `m`.
    pub fn len(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// Index `k` of the knot span `[knots[k], knots[k+1])` holding `t`.
    /// The right end of the domain belongs to the last non-empty span.
    fn span(&self, t: f64) -> usize {
        let m = self.len();
        let (_, hi) = self.domain();
        if t >= hi {
            return m - 1;
        }
        // knots[degree..=m] cover the domain; find the last knot <= t.
        let upper = self.knots[self.degree + 1..=m].partition_point(|&k| k <= t);
        self.degree + upper
    }

    /// Values `(b_1(t), …, b_m(t))`.
    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(t, &mut out)?;
        Ok(out)
    }

    fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(ZissError::Domain { value: t, lo, hi });
        }
        let p = self.degree;
        let k = self.span(t);
        let u = &self.knots;

        let mut vals = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        vals[0] = 1.0;
        for j in 1..=p {
            left[j] = t - u[k + 1 - j];
            right[j] = u[k + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            vals[j] = saved;
        }

        out.iter_mut().for_each(|v| *v = 0.0);
        out[k - p..=k].copy_from_slice(&vals);
        Ok(())
    }

    /// Matrix whose row `i` is `eval(points[i])`.
    pub fn design_matrix(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let m = self.len();
        let mut row = vec![0.0; m];
        let mut mat = DMatrix::zeros(points.len(), m);
        for (i, &t) in points.iter().enumerate() {
            self.eval_into(t, &mut row)?;
            for (j, &v) in row.iter().enumerate() {
                mat[(i, j)] = v;
            }
        }
        Ok(mat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn minimal_cubic_has_no_interior_knots() {
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 4, 3).unwrap();
        assert_eq!(b.knots(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(b.len(), 4);
    }

    #[test]
    fn five_functions_put_one_knot_at_midpoint() {
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 5, 3).unwrap();
        assert_eq!(&b.knots()[4..5], &[0.5]);
        assert_eq!(b.knots().len(), 9);
    }

    #[test]
    fn ten_functions_space_interior_knots_by_sevenths() {
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 10, 3).unwrap();
        let interior = &b.knots()[4..10];
        let expected: Vec<f64> = (1..=6).map(|k| k as f64 / 7.0).collect();
        assert_close(interior, &expected, 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(matches!(
            BSplineBasis::clamped_uniform(0.0, 1.0, 3, 3),
            Err(ZissError::InvalidArgument(_))
        ));
        assert!(matches!(
            BSplineBasis::clamped_uniform(1.0, 1.0, 6, 3),
            Err(ZissError::InvalidArgument(_))
        ));
        assert!(BSplineBasis::clamped_uniform(2.0, 1.0, 6, 3).is_err());
    }

    #[test]
    fn endpoints_interpolate() {
        let b = BSplineBasis::clamped_uniform(-2.0, 3.0, 6, 3).unwrap();
        assert_close(&b.eval(-2.0).unwrap(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0);
        assert_close(&b.eval(3.0).unwrap(), &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0], 0.0);
    }

    #[test]
    fn bernstein_values_at_midpoint() {
        // B_{k,3}(1/2) = C(3,k) / 8
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 4, 3).unwrap();
        assert_close(&b.eval(0.5).unwrap(), &[0.125, 0.375, 0.375, 0.125], 1e-15);
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 6, 3).unwrap();
        assert!(matches!(b.eval(1.0 + 1e-9), Err(ZissError::Domain { .. })));
        assert!(matches!(b.eval(-1e-9), Err(ZissError::Domain { .. })));
        assert!(b.eval(f64::NAN).is_err());
        assert!(b.design_matrix(&[0.2, 1.5]).is_err());
    }

    #[test]
    fn design_matrix_rows() {
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 4, 3).unwrap();
        let x = b.design_matrix(&[0.0, 1.0, 0.3, 0.3]).unwrap();
        assert_eq!(x.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(x.row(1).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, 1.0]);
        assert_eq!(x.row(2), x.row(3));
    }

    #[test]
    fn from_knots_round_trip_and_validation() {
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 7, 2).unwrap();
        let again = BSplineBasis::from_knots(2, b.knots().to_vec()).unwrap();
        assert_eq!(b, again);
        assert!(BSplineBasis::from_knots(3, b.knots().to_vec()).is_err());
        assert!(BSplineBasis::from_knots(1, vec![0.0, 0.0, 0.6, 0.4, 1.0, 1.0]).is_err());
    }

    #[test]
    fn partition_of_unity_on_random_points() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 9, 3).unwrap();
        let points: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let x = b.design_matrix(&points).unwrap();
        for row in x.row_iter() {
            assert!((row.sum() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn continuity_across_interior_knots() {
        let b = BSplineBasis::clamped_uniform(0.0, 1.0, 8, 3).unwrap();
        let h = 1e-8;
        for &k in &b.knots()[4..8] {
            let lo = b.eval(k - h).unwrap();
            let hi = b.eval(k).unwrap();
            for (a, c) in lo.iter().zip(&hi) {
                assert!((a - c).abs() <= 10.0 * h);
            }
        }
    }

    proptest! {
        #[test]
        fn basis_is_nonnegative_local_and_sums_to_one(
            m in 4usize..14,
            degree in 0usize..4,
            frac in 0.0f64..=1.0,
        ) {
            prop_assume!(m > degree);
            let b = BSplineBasis::clamped_uniform(-1.0, 2.0, m, degree).unwrap();
            let t = -1.0 + 3.0 * frac;
            let v = b.eval(t).unwrap();
            prop_assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            let knots = b.knots();
            for (i, &val) in v.iter().enumerate() {
                prop_assert!(val >= 0.0);
                if t < knots[i] || t > knots[i + degree + 1] {
                    prop_assert_eq!(val, 0.0);
                }
            }
        }

        #[test]
        fn cubic_basis_has_no_jumps(frac in 0.0f64..0.999) {
            let b = BSplineBasis::clamped_uniform(0.0, 1.0, 10, 3).unwrap();
            let h = 1e-8;
            let v0 = b.eval(frac).unwrap();
            let v1 = b.eval(frac + h).unwrap();
            for (a, c) in v0.iter().zip(&v1) {
                // derivative of a cubic B-spline on this grid is bounded by ~3/spacing
                prop_assert!((a - c).abs() <= 30.0 * h);
            }
        }
    }
}
