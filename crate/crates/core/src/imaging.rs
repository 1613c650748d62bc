//! Back-propagation images, time-reversal cross-correlations and embedding
//! spectrum diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalized_correlations, ImageGrid};
use crate::{CMatrix, CVector, RMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageField {
    /// `|⟨ĝ_i, y⟩|` per grid point, in grid index order.
    pub values: Vec<f64>,
    /// `values` divided by their maximum (all zero for a zero image).
    pub normalized: Vec<f64>,
    /// `(n_cross, n_range)`.
    pub shape: (usize, usize),
    pub label: String,
}

impl ImageField {
    /// Index of the largest value (first one on ties).
    pub fn peak(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
            .0
    }

    /// Values as an `n_range × n_cross` matrix (rows of constant range).
    pub fn as_grid(&self, normalized: bool) -> RMatrix {
        let (nc, nr) = self.shape;
        let v = if normalized { &self.normalized } else { &self.values };
        RMatrix::from_fn(nr, nc, |r, c| v[r * nc + c])
    }
}

/// Back-propagate `y` with the ordered estimate: column `i` of `g_est` is the
/// Green's vector assumed for grid point `i`.
pub fn form_image(g_est: &CMatrix, y: &CVector, grid: &ImageGrid, label: &str) -> Result<ImageField> {
    if g_est.ncols() != grid.len() {
        return Err(Error::Dimension(format!(
            "{} columns for {} grid points",
            g_est.ncols(),
            grid.len()
        )));
    }
    if g_est.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs signal length {}",
            g_est.nrows(),
            y.len()
        )));
    }
    let values: Vec<f64> = (g_est.adjoint() * y).iter().map(|z| z.norm()).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite image values".into()));
    }
    let max = values.iter().copied().fold(0.0, f64::max);
    let normalized = if max > 0.0 {
        values.iter().map(|v| v / max).collect()
    } else {
        vec![0.0; values.len()]
    };
    Ok(ImageField {
        values,
        normalized,
        shape: grid.shape(),
        label: label.to_string(),
    })
}

/// `|⟨a_i, b_j⟩|` on unit columns: row `i` is the refocused field of a
/// time-reversal experiment from point `i`.
pub fn crosscorrelation_matrix(a: &CMatrix, b: &CMatrix) -> Result<RMatrix> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    normalized_correlations(a, b)
}

/// Fraction of rows whose maximum sits on the diagonal.
pub fn diagonal_argmax_fraction(c: &RMatrix) -> f64 {
    let n = c.nrows().min(c.ncols());
    if n == 0 {
        return 0.0;
    }
    let hits = (0..n)
        .filter(|&i| {
            let row = c.row(i);
            let (arg, _) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (j, &v)| if v > acc.1 { (j, v) } else { acc });
            arg == i
        })
        .count();
    hits as f64 / n as f64
}

/// Spectrum sorted descending and divided by its maximum.
pub fn embedding_spectrum_report(spectrum: &[f64]) -> Result<Vec<f64>> {
    if spectrum.is_empty() {
        return Err(Error::param("empty spectrum"));
    }
    if spectrum.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite spectrum".into()));
    }
    let mut s: Vec<f64> = spectrum.iter().map(|v| v.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let top = s[0];
    if !(top > 0.0) {
        return Err(Error::Degenerate("spectrum is identically zero".into()));
    }
    Ok(s.into_iter().map(|v| v / top).collect())
}
