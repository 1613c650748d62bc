//! Method-of-optimal-directions dictionary update.

use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::CMatrix;

/// Condition number of `XX*` beyond which the normal equations are
/// diagonally loaded.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Clone, Debug)]
pub struct ModUpdate {
    /// `Y X* (X X*)⁻¹` restricted to the used atoms; unused columns are zero.
    pub d: CMatrix,
    /// Condition number of `X X*` over the used atoms.
    pub condition: f64,
    /// Whether diagonal loading had to be applied.
    pub regularized: bool,
    /// Atoms whose row of `X` is identically zero.
    pub unused_atoms: Vec<usize>,
}

/// Least-squares dictionary for fixed codes: `D = Y X* (X X*)⁻¹`.
///
/// Atoms that no sample uses cannot be determined; they are reported and left
/// as zero columns for the caller to handle.
pub fn mod_update(x: &CMatrix, y: &CMatrix) -> Result<ModUpdate> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "codes have {} samples, data has {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let k = x.nrows();
    let (used, unused_atoms): (Vec<usize>, Vec<usize>) =
        (0..k).partition(|&i| x.row(i).iter().any(|v| v.norm_sqr() > 0.0));
    let mut d = CMatrix::zeros(y.nrows(), k);
    if used.is_empty() {
        return Ok(ModUpdate {
            d,
            condition: f64::INFINITY,
            regularized: false,
            unused_atoms,
        });
    }
    let xu = x.select_rows(&used);
    let mut a = &xu * xu.adjoint();
    // Solve A Dᵤ* = (Y Xᵤ*)* = Xᵤ Y*.
    let rhs = &xu * y.adjoint();

    let eig = a.clone().symmetric_eigenvalues();
    let (lo, hi) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    let mut regularized = false;
    if !(condition <= CONDITION_LIMIT) {
        let load = hi / CONDITION_LIMIT;
        for i in 0..a.nrows() {
            a[(i, i)] += load;
        }
        regularized = true;
        log::warn!("MOD normal equations ill-conditioned (cond {condition:.3e}); diagonal loading {load:.3e}");
    }
    let chol = Cholesky::new(a)
        .ok_or_else(|| Error::Numeric("MOD normal equations not positive definite".into()))?;
    let du = chol.solve(&rhs).adjoint();
    for (c, &i) in used.iter().enumerate() {
        d.set_column(i, &du.column(c));
    }
    Ok(ModUpdate {
        d,
        condition,
        regularized,
        unused_atoms,
    })
}
