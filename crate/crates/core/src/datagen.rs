//! Synthetic ensembles of sparse-source array data `Y = G X`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::Rng;
use crate::CMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseSourceConfig {
    /// Exact number of active sources per sample.
    pub sparsity: usize,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
}

impl Default for SparseSourceConfig {
    fn default() -> Self {
        Self {
            sparsity: 4,
            amplitude_min: 1.0,
            amplitude_max: 2.0,
        }
    }
}

impl SparseSourceConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        if self.sparsity == 0 || self.sparsity > k {
            return Err(Error::param(format!(
                "sparsity must be in 1..={k}, got {}",
                self.sparsity
            )));
        }
        if !(self.amplitude_min > 0.0 && self.amplitude_max >= self.amplitude_min) {
            return Err(Error::param(format!(
                "amplitude range [{}, {}] must be positive and ordered",
                self.amplitude_min, self.amplitude_max
            )));
        }
        Ok(())
    }
}

/// Samples `Y` and the source matrix that generated them.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleEnsemble {
    pub y: CMatrix,
    pub x_true: CMatrix,
}

impl SampleEnsemble {
    pub fn len(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.y.ncols() == 0
    }
}

/// Smallest `M` with `M > K ln K`.
pub fn default_sample_count(k: usize) -> usize {
    let kf = k as f64;
    (kf * kf.ln()).floor() as usize + 1
}

/// Column `j` draws from its own stream of the seed, so the result does not
/// depend on how columns are scheduled.
pub fn draw_sparse_sources(
    cfg: &SparseSourceConfig,
    k: usize,
    m: usize,
    seed: u64,
) -> Result<CMatrix> {
    cfg.validate(k)?;
    let columns: Vec<Vec<(usize, Complex64)>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let mut rng = Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let support = rand::seq::index::sample(&mut rng, k, cfg.sparsity);
            support
                .iter()
                .map(|i| {
                    let modulus = if cfg.amplitude_max > cfg.amplitude_min {
                        rng.random_range(cfg.amplitude_min..=cfg.amplitude_max)
                    } else {
                        cfg.amplitude_min
                    };
                    let phase = rng.random_range(0.0..2.0 * PI);
                    (i, Complex64::from_polar(modulus, phase))
                })
                .collect()
        })
        .collect();
    let mut x = CMatrix::zeros(k, m);
    for (j, col) in columns.into_iter().enumerate() {
        for (i, v) in col {
            x[(i, j)] = v;
        }
    }
    Ok(x)
}

pub fn synthesize(g: &CMatrix, x: &CMatrix) -> Result<SampleEnsemble> {
    if g.ncols() != x.nrows() {
        return Err(Error::Dimension(format!(
            "sensing matrix has {} columns, sources have {} rows",
            g.ncols(),
            x.nrows()
        )));
    }
    Ok(SampleEnsemble {
        y: g * x,
        x_true: x.clone(),
    })
}

/// Add circular complex Gaussian noise with standard deviation
/// `relative_level · rms(Y)` per entry.
pub fn add_noise(y: &mut CMatrix, relative_level: f64, seed: u64) {
    if relative_level <= 0.0 || y.is_empty() {
        return;
    }
    let rms = (y.norm_squared() / y.len() as f64).sqrt();
    let s = relative_level * rms / 2f64.sqrt();
    let mut rng = Rng::seed_from_u64(seed);
    for v in y.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *v += Complex64::new(s * re, s * im);
    }
}
