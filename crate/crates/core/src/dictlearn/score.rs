//! Recovery score of a learned dictionary against the true one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::normalized_correlations;
use crate::CMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    /// `max_j |⟨ĝ_i, g_j⟩|` on unit columns, per learned column.
    pub c_max: Vec<f64>,
    /// Best-matching true column of each learned column; not necessarily a
    /// bijection.
    pub permutation: Vec<usize>,
}

impl RecoveryReport {
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        if self.c_max.is_empty() {
            return 0.0;
        }
        self.c_max.iter().filter(|&&c| c > threshold).count() as f64 / self.c_max.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.c_max.iter().sum::<f64>() / self.c_max.len().max(1) as f64
    }

    /// Number of distinct true columns matched.
    pub fn distinct_matches(&self) -> usize {
        let mut p = self.permutation.clone();
        p.sort_unstable();
        p.dedup();
        p.len()
    }
}

pub fn score_recovery(d_hat: &CMatrix, g_true: &CMatrix) -> Result<RecoveryReport> {
    if d_hat.shape() != g_true.shape() {
        return Err(Error::Dimension(format!(
            "learned matrix {:?} vs true {:?}",
            d_hat.shape(),
            g_true.shape()
        )));
    }
    let c = normalized_correlations(d_hat, g_true)?;
    let (c_max, permutation) = c
        .row_iter()
        .map(|row| {
            let (j, v) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            (v.min(1.0), j)
        })
        .unzip();
    Ok(RecoveryReport { c_max, permutation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn g() -> CMatrix {
        CMatrix::from_fn(6, 4, |r, c| Complex64::from_polar(1.0 + (r * c) as f64 * 0.1, (r + 2 * c) as f64 * 0.7))
    }

    #[test]
    fn identical_scores_one() {
        let rep = score_recovery(&g(), &g()).unwrap();
        assert!(rep.c_max.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        assert_eq!(rep.permutation, vec![0, 1, 2, 3]);
        assert_eq!(rep.fraction_above(0.99), 1.0);
    }

    #[test]
    fn permuted_and_phased_scores_one() {
        let t = g();
        let perm = [2, 0, 3, 1];
        let mut d = t.select_columns(&perm);
        for (j, mut c) in d.column_iter_mut().enumerate() {
            c *= Complex64::from_polar(1.0, 1.3 * j as f64);
        }
        let rep = score_recovery(&d, &t).unwrap();
        assert!(rep.c_max.iter().all(|&c| (c - 1.0).abs() < 1e-12));
        assert_eq!(rep.permutation, perm.to_vec());
    }

    #[test]
    fn orthogonal_scores_zero() {
        let mut t = CMatrix::zeros(4, 2);
        t[(0, 0)] = Complex64::new(1.0, 0.0);
        t[(1, 1)] = Complex64::new(1.0, 0.0);
        let mut d = CMatrix::zeros(4, 2);
        d[(2, 0)] = Complex64::new(1.0, 0.0);
        d[(3, 1)] = Complex64::new(0.0, 1.0);
        let rep = score_recovery(&d, &t).unwrap();
        assert_eq!(rep.c_max, vec![0.0, 0.0]);
    }
}
