use serde::{Deserialize, Serialize};

use crate::error::{Result, ZissError};

/// Replicate counts observed at strictly increasing pseudotime points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCountData {
    points: Vec<f64>,
    counts: Vec<Vec<u64>>,
    domain: (f64, f64),
}

impl BinnedCountData {
    /// Validates `t_min < t_1 < … < t_N < t_max`, at least one count per
    /// point and at least two observations overall.
    pub fn new(points: Vec<f64>, counts: Vec<Vec<u64>>, domain: (f64, f64)) -> Result<Self> {
        let (lo, hi) = domain;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(ZissError::InvalidArgument(format!(
                "domain must satisfy t_min < t_max, got ({lo}, {hi})"
            )));
        }
        if points.len() != counts.len() {
            return Err(ZissError::InvalidArgument(format!(
                "{} points but {} count rows",
                points.len(),
                counts.len()
            )));
        }
        if points.is_empty() {
            return Err(ZissError::InvalidArgument("no pseudotime points".into()));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(ZissError::InvalidArgument(
                "pseudotime points must be strictly increasing".into(),
            ));
        }
        if !(points[0] > lo && points[points.len() - 1] < hi) {
            return Err(ZissError::InvalidArgument(format!(
                "points must lie strictly inside ({lo}, {hi})"
            )));
        }
        if let Some(i) = counts.iter().position(Vec::is_empty) {
            return Err(ZissError::InvalidArgument(format!(
                "point {i} has no observations"
            )));
        }
        let n: usize = counts.iter().map(Vec::len).sum();
        if n < 2 {
            return Err(ZissError::InvalidArgument(
                "need at least two observations".into(),
            ));
        }
        Ok(Self { points, counts, domain })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Number of distinct points `N`.
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Total number of observations `n = Σ M_i`.
    pub fn n_obs(&self) -> usize {
        self.counts.iter().map(Vec::len).sum()
    }

    /// Replicates per point, `M_i`.
    pub fn replicates(&self) -> Vec<usize> {
        self.counts.iter().map(Vec::len).collect()
    }

    /// Per-point mean count.
    pub fn point_means(&self) -> Vec<f64> {
        self.counts
            .iter()
            .map(|row| row.iter().sum::<u64>() as f64 / row.len() as f64)
            .collect()
    }

    pub fn has_positive(&self) -> bool {
        self.counts.iter().flatten().any(|&y| y > 0)
    }

    /// Iterate `(t_i, y_{i,j})` in long format.
    pub fn observations(&self) -> impl Iterator<Item = (f64, u64)> + '_ {
        self.points
            .iter()
            .zip(&self.counts)
            .flat_map(|(&t, row)| row.iter().map(move |&y| (t, y)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accepts_valid_data() {
        let d = BinnedCountData::new(vec![0.2, 0.5], vec![vec![0, 3], vec![1]], (0.0, 1.0)).unwrap();
        assert_eq!(d.n_obs(), 3);
        assert_eq!(d.replicates(), vec![2, 1]);
        assert_eq!(d.point_means(), vec![1.5, 1.0]);
        assert_eq!(d.observations().count(), 3);
    }

    #[test]
    fn rejects_invalid_layouts() {
        let dom = (0.0, 1.0);
        assert!(BinnedCountData::new(vec![0.5, 0.2], vec![vec![1], vec![1]], dom).is_err());
        assert!(BinnedCountData::new(vec![0.0, 0.2], vec![vec![1], vec![1]], dom).is_err());
        assert!(BinnedCountData::new(vec![0.2, 1.0], vec![vec![1], vec![1]], dom).is_err());
        assert!(BinnedCountData::new(vec![0.2, 0.4], vec![vec![1], vec![]], dom).is_err());
        assert!(BinnedCountData::new(vec![0.2], vec![vec![1]], dom).is_err());
        assert!(BinnedCountData::new(vec![0.2], vec![vec![1, 2]], (1.0, 0.0)).is_err());
    }
}
