//! Sparse coding against a fixed dictionary.
//!
//! Both solvers work in the Gram domain: with `G = D*D` and `b = D*y` the
//! gradient of `½‖Dx - y‖²` is `Gx - b`, so an iteration costs `K · nnz(x)`
//! instead of `N · K`.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{CMatrix, CVector};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Parameters of the equality-constrained solver.
///
/// `tau = None` uses `0.1 · max|D*y|` per right-hand side and `step = None`
/// uses `0.99 / ‖D‖₂²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L1SolverParams {
    pub tau: Option<f64>,
    pub step: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for L1SolverParams {
    fn default() -> Self {
        Self {
            tau: None,
            step: None,
            max_iters: 2000,
            tol: 1e-4,
        }
    }
}

impl L1SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::param("max_iters must be positive"));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::param(format!("tau must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct L1Solution {
    pub x: CVector,
    pub iterations: usize,
    pub converged: bool,
    /// `‖Dx - y‖ / ‖y‖` (0 for `y = 0`).
    pub relative_residual: f64,
}

/// Complex soft threshold: shrinks the modulus by `t` and keeps the phase.
#[inline]
pub fn soft_threshold(v: Complex64, t: f64) -> Complex64 {
    let m = v.norm();
    if m <= t {
        ZERO
    } else {
        v * ((m - t) / m)
    }
}

/// Precomputed Gram matrix of a dictionary, column-major.
#[derive(Clone, Debug)]
pub struct GramOperator {
    k: usize,
    gram: Vec<Complex64>,
    lipschitz: f64,
}

impl GramOperator {
    pub fn new(d: &CMatrix) -> Result<Self> {
        if d.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numeric("dictionary has non-finite entries".into()));
        }
        let g = d.adjoint() * d;
        let lipschitz = g
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |a, &b| a.max(b));
        Ok(Self {
            k: d.ncols(),
            gram: g.as_slice().to_vec(),
            lipschitz,
        })
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    /// `‖D‖₂²`, the largest eigenvalue of the Gram matrix.
    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    fn column(&self, j: usize) -> &[Complex64] {
        &self.gram[j * self.k..(j + 1) * self.k]
    }

    /// `out = G x`, skipping zero coordinates of `x`.
    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = ZERO);
        for (j, &xj) in x.iter().enumerate() {
            if xj == ZERO {
                continue;
            }
            for (o, &g) in out.iter_mut().zip(self.column(j)) {
                *o += g * xj;
            }
        }
    }

    /// `‖Dx - y‖²` from `x*Gx - 2 Re(x*b) + ‖y‖²`.
    fn residual_sq(&self, x: &[Complex64], b: &[Complex64], y_norm_sq: f64, scratch: &mut [Complex64]) -> f64 {
        self.apply(x, scratch);
        let quad: f64 = x.iter().zip(scratch.iter()).map(|(a, g)| (a.conj() * g).re).sum();
        let lin: f64 = x.iter().zip(b).map(|(a, bb)| (a.conj() * bb).re).sum();
        (quad - 2.0 * lin + y_norm_sq).max(0.0)
    }
}

fn check_rhs(d: &CMatrix, y: &CVector) -> Result<()> {
    if d.nrows() != y.len() {
        return Err(Error::Dimension(format!(
            "dictionary has {} rows, signal has {}",
            d.nrows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numeric("signal has non-finite entries".into()));
    }
    Ok(())
}

/// Equality-constrained ℓ1 minimization `min ‖x‖₁ s.t. Dx = y` by the
/// multiplier-feedback iteration
///
/// ```text
/// x⁺ = S_{βτ}(x + β (w + b - Gx))
/// w⁺ = w + β (b - Gx⁺)
/// ```
///
/// where `w` accumulates the residual in the Gram domain. Fixed points satisfy
/// `Dx = y` and `w ∈ τ ∂‖x‖₁`, the optimality conditions of the constrained
/// problem, whatever the value of `τ`.
pub fn solve_l1(d: &CMatrix, y: &CVector, params: &L1SolverParams) -> Result<L1Solution> {
    check_rhs(d, y)?;
    let op = GramOperator::new(d)?;
    let b = d.adjoint() * y;
    solve_l1_gram(&op, b.as_slice(), y.norm_squared(), params)
}

/// [`solve_l1`] with the Gram operator and `b = D*y` already formed.
pub fn solve_l1_gram(
    op: &GramOperator,
    b: &[Complex64],
    y_norm_sq: f64,
    params: &L1SolverParams,
) -> Result<L1Solution> {
    params.validate()?;
    let k = op.dim();
    if b.len() != k {
        return Err(Error::Dimension(format!("D*y has length {}, expected {k}", b.len())));
    }
    if y_norm_sq == 0.0 {
        return Ok(L1Solution {
            x: DVector::zeros(k),
            iterations: 0,
            converged: true,
            relative_residual: 0.0,
        });
    }
    let lip = op.lipschitz();
    if !(lip > 0.0) {
        return Err(Error::Degenerate("dictionary is zero".into()));
    }
    let step = match params.step {
        Some(s) if s * lip > 1.0 + 1e-12 => {
            return Err(Error::param(format!(
                "step {s} too large: step·‖D‖² = {} > 1",
                s * lip
            )))
        }
        Some(s) => s,
        None => 0.99 / lip,
    };
    let tau = params
        .tau
        .unwrap_or_else(|| 0.1 * b.iter().map(|v| v.norm()).fold(0.0, f64::max));
    let thresh = step * tau;
    let target = params.tol * params.tol * y_norm_sq;

    let mut x = vec![ZERO; k];
    let mut w = vec![ZERO; k];
    let mut gx = vec![ZERO; k];
    let mut scratch = vec![ZERO; k];
    let mut converged = false;
    let mut iterations = 0;
    let mut res_sq = y_norm_sq;

    // Gx for the current iterate is carried between steps.
    for it in 1..=params.max_iters {
        iterations = it;
        for i in 0..k {
            x[i] = soft_threshold(x[i] + (w[i] + b[i] - gx[i]) * step, thresh);
        }
        op.apply(&x, &mut gx);
        for i in 0..k {
            w[i] += (b[i] - gx[i]) * step;
        }
        if it % 10 == 0 || it == params.max_iters {
            res_sq = op.residual_sq(&x, b, y_norm_sq, &mut scratch);
            if res_sq <= target {
                converged = true;
                break;
            }
        }
    }
    Ok(L1Solution {
        x: DVector::from_vec(x),
        iterations,
        converged,
        relative_residual: (res_sq / y_norm_sq).sqrt(),
    })
}

/// Accelerated proximal gradient (FISTA) for the penalized problem
/// `min ½‖Dx - y‖² + τ‖x‖₁` with `τ = tau_rel · max|D*y|`.
///
/// Stops after `max_iters` or when the relative change of the iterate drops
/// below `1e-8`.
pub fn solve_penalized_gram(
    op: &GramOperator,
    b: &[Complex64],
    tau_rel: f64,
    max_iters: usize,
) -> Result<CVector> {
    let k = op.dim();
    if b.len() != k {
        return Err(Error::Dimension(format!("D*y has length {}, expected {k}", b.len())));
    }
    let lip = op.lipschitz();
    if !(lip > 0.0) {
        return Err(Error::Degenerate("dictionary is zero".into()));
    }
    let bmax = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if bmax == 0.0 {
        return Ok(DVector::zeros(k));
    }
    let step = 1.0 / lip;
    let thresh = step * tau_rel * bmax;

    let mut x = vec![ZERO; k];
    let mut z = vec![ZERO; k];
    let mut gz = vec![ZERO; k];
    let mut x_next = vec![ZERO; k];
    let mut t = 1.0f64;
    for _ in 0..max_iters {
        op.apply(&z, &mut gz);
        for i in 0..k {
            x_next[i] = soft_threshold(z[i] + (b[i] - gz[i]) * step, thresh);
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        let mut diff = 0.0;
        let mut size = 0.0;
        for i in 0..k {
            let delta = x_next[i] - x[i];
            diff += delta.norm_sqr();
            size += x_next[i].norm_sqr();
            z[i] = x_next[i] + delta * momentum;
        }
        std::mem::swap(&mut x, &mut x_next);
        t = t_next;
        if diff <= 1e-16 * size {
            break;
        }
    }
    Ok(DVector::from_vec(x))
}
