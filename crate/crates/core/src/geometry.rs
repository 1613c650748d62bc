//! Array, image grid, frequency band and multi-frequency sensing matrices.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{self, MediumSpec, Point, ScalarField};
use crate::{CMatrix, RMatrix};

/// Receivers equally spaced on the cross-range axis (range = 0), centred at
/// the origin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    receivers: Vec<Point>,
    aperture: f64,
}

impl ArrayGeometry {
    pub fn linear(aperture: f64, n_receivers: usize) -> Result<Self> {
        if n_receivers < 2 {
            return Err(Error::param(format!(
                "array needs at least 2 receivers, got {n_receivers}"
            )));
        }
        if !(aperture.is_finite() && aperture > 0.0) {
            return Err(Error::param(format!("aperture must be positive, got {aperture}")));
        }
        let step = aperture / (n_receivers - 1) as f64;
        let receivers = (0..n_receivers)
            .map(|j| Point::new(-0.5 * aperture + step * j as f64, 0.0))
            .collect();
        Ok(Self { receivers, aperture })
    }

    pub fn receivers(&self) -> &[Point] {
        &self.receivers
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }

    pub fn aperture(&self) -> f64 {
        self.aperture
    }

    /// Receivers inside the centred interval of length `sub_aperture`.
    pub fn subarray_receivers(&self, sub_aperture: f64) -> Result<Vec<usize>> {
        if !(sub_aperture > 0.0 && sub_aperture <= self.aperture * (1.0 + 1e-12)) {
            return Err(Error::param(format!(
                "sub-aperture must lie in (0, {}], got {sub_aperture}",
                self.aperture
            )));
        }
        let half = 0.5 * sub_aperture + 1e-9 * self.aperture;
        let kept: Vec<usize> = self
            .receivers
            .iter()
            .enumerate()
            .filter(|(_, p)| p.x.abs() <= half)
            .map(|(j, _)| j)
            .collect();
        if kept.is_empty() {
            return Err(Error::param(format!(
                "sub-aperture {sub_aperture} contains no receivers"
            )));
        }
        Ok(kept)
    }
}

/// Rectangular grid of focal points. Index `i = ir * n_cross + ic`, so rows of
/// constant range are contiguous.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    points: Vec<Point>,
    n_cross: usize,
    n_range: usize,
    d_cross: f64,
    d_range: f64,
    center: Point,
}

impl ImageGrid {
    pub fn new(
        n_cross: usize,
        n_range: usize,
        d_cross: f64,
        d_range: f64,
        center: Point,
    ) -> Result<Self> {
        if n_cross == 0 || n_range == 0 {
            return Err(Error::param("grid dimensions must be positive"));
        }
        if !(d_cross > 0.0 && d_range > 0.0) {
            return Err(Error::param("grid spacings must be positive"));
        }
        let c0 = 0.5 * (n_cross as f64 - 1.0);
        let r0 = 0.5 * (n_range as f64 - 1.0);
        let mut points = Vec::with_capacity(n_cross * n_range);
        for ir in 0..n_range {
            for ic in 0..n_cross {
                points.push(Point::new(
                    center.x + (ic as f64 - c0) * d_cross,
                    center.y + (ir as f64 - r0) * d_range,
                ));
            }
        }
        Ok(Self {
            points,
            n_cross,
            n_range,
            d_cross,
            d_range,
            center,
        })
    }

    /// Grid at the homogeneous-medium resolution: `λL/a` in cross-range and
    /// `range_factor · c0/B` in range, centred on the axis at range `L`.
    pub fn at_resolution(
        n_cross: usize,
        n_range: usize,
        lambda0: f64,
        l_ref: f64,
        aperture: f64,
        c0: f64,
        bandwidth: f64,
        range_factor: f64,
    ) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::param("bandwidth must be positive"));
        }
        Self::new(
            n_cross,
            n_range,
            lambda0 * l_ref / aperture,
            range_factor * c0 / bandwidth,
            Point::new(0.0, l_ref),
        )
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_cross, self.n_range)
    }

    pub fn spacing(&self) -> (f64, f64) {
        (self.d_cross, self.d_range)
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn index(&self, ic: usize, ir: usize) -> usize {
        debug_assert!(ic < self.n_cross && ir < self.n_range);
        ir * self.n_cross + ic
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.n_cross, index / self.n_cross)
    }

    /// Points in lattice units, `(ic, ir)`. Hop counts measure distance in
    /// these units whatever the physical aspect ratio of the cells.
    pub fn lattice_points(&self) -> Vec<Point> {
        (0..self.len())
            .map(|i| {
                let (ic, ir) = self.coords(i);
                Point::new(ic as f64, ir as f64)
            })
            .collect()
    }

    /// Squared Euclidean distance matrix between all grid points.
    pub fn squared_distances(&self) -> RMatrix {
        let k = self.len();
        RMatrix::from_fn(k, k, |i, j| (self.points[i] - self.points[j]).norm_squared())
    }

    /// The 4-neighbour lattice indices of `index`.
    pub fn lattice_neighbors(&self, index: usize) -> Vec<usize> {
        let (ic, ir) = self.coords(index);
        let mut out = Vec::with_capacity(4);
        if ic > 0 {
            out.push(self.index(ic - 1, ir));
        }
        if ic + 1 < self.n_cross {
            out.push(self.index(ic + 1, ir));
        }
        if ir > 0 {
            out.push(self.index(ic, ir - 1));
        }
        if ir + 1 < self.n_range {
            out.push(self.index(ic, ir + 1));
        }
        out
    }
}

/// Equally spaced frequencies, strictly increasing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySet {
    frequencies: Vec<f64>,
}

impl FrequencySet {
    pub fn band(f_lo: f64, f_hi: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::param("need at least one frequency"));
        }
        if !(f_lo > 0.0 && f_hi >= f_lo) || (count > 1 && f_hi <= f_lo) {
            return Err(Error::param(format!("invalid band [{f_lo}, {f_hi}]")));
        }
        let frequencies = if count == 1 {
            vec![f_hi]
        } else {
            let step = (f_hi - f_lo) / (count - 1) as f64;
            (0..count).map(|q| f_lo + step * q as f64).collect()
        };
        Ok(Self { frequencies })
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn bandwidth(&self) -> f64 {
        self.frequencies[self.frequencies.len() - 1] - self.frequencies[0]
    }
}

/// Frequency-stacked sensing matrix. Row `q * n_receivers + j` holds receiver
/// `j` at frequency `q`; column `i` is grid point `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingMatrix {
    pub matrix: CMatrix,
    pub n_receivers: usize,
    pub n_freqs: usize,
}

impl SensingMatrix {
    pub fn new(matrix: CMatrix, n_receivers: usize, n_freqs: usize) -> Result<Self> {
        if matrix.nrows() != n_receivers * n_freqs {
            return Err(Error::Dimension(format!(
                "{} rows but {n_receivers} receivers x {n_freqs} frequencies",
                matrix.nrows()
            )));
        }
        Ok(Self {
            matrix,
            n_receivers,
            n_freqs,
        })
    }

    pub fn row(&self, freq: usize, receiver: usize) -> usize {
        freq * self.n_receivers + receiver
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Row indices of the stacked matrix that belong to `receivers`, for every
/// frequency block, in stacked order.
pub fn stacked_rows(receivers: &[usize], n_receivers: usize, n_freqs: usize) -> Vec<usize> {
    (0..n_freqs)
        .flat_map(|q| receivers.iter().map(move |&j| q * n_receivers + j))
        .collect()
}

pub fn select_rows(m: &CMatrix, rows: &[usize]) -> CMatrix {
    CMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

/// Assemble the stacked sensing matrix. `field = None` gives the homogeneous
/// medium.
pub fn assemble_sensing_matrix(
    field: Option<&dyn ScalarField>,
    spec: &MediumSpec,
    array: &ArrayGeometry,
    grid: &ImageGrid,
    freqs: &FrequencySet,
) -> Result<SensingMatrix> {
    spec.validate()?;
    let n_r = array.len();
    let n_f = freqs.len();
    let kappas: Vec<f64> = freqs.frequencies().iter().map(|&f| spec.wavenumber(f)).collect();

    let columns: Vec<Vec<Complex64>> = grid
        .points()
        .par_iter()
        .map(|x| {
            let mut col = vec![Complex64::new(0.0, 0.0); n_r * n_f];
            for (j, y) in array.receivers().iter().enumerate() {
                let d = (y - x).norm();
                let n_quad = physics::default_quad_nodes(d, spec.ell);
                for (q, &kappa) in kappas.iter().enumerate() {
                    col[q * n_r + j] = match field {
                        None => physics::green_homogeneous(y, x, kappa)?,
                        Some(f) => physics::green_random(f, spec, y, x, kappa, n_quad)?,
                    };
                }
            }
            Ok(col)
        })
        .collect::<Result<_>>()?;

    let matrix = CMatrix::from_fn(n_r * n_f, grid.len(), |r, c| columns[c][r]);
    SensingMatrix::new(matrix, n_r, n_f)
}

pub fn column_norms(m: &CMatrix) -> Vec<f64> {
    m.column_iter().map(|c| c.norm()).collect()
}

/// Copy of `m` with unit-norm columns; zero columns are an error.
pub fn normalize_columns(m: &CMatrix) -> Result<CMatrix> {
    let mut out = m.clone();
    for (i, mut col) in out.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Degenerate(format!("column {i} has zero or non-finite norm")));
        }
        col /= Complex64::new(n, 0.0);
    }
    Ok(out)
}

/// `|a_i* b_j|` on unit-normalized columns.
pub fn normalized_correlations(a: &CMatrix, b: &CMatrix) -> Result<RMatrix> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension(format!(
            "column length {} vs {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let an = normalize_columns(a)?;
    let bn = normalize_columns(b)?;
    let g = an.adjoint() * bn;
    Ok(g.map(|z| z.norm()))
}

/// Maximum normalized inner product between distinct columns.
pub fn coherence(m: &CMatrix) -> Result<f64> {
    if m.ncols() < 2 {
        return Err(Error::param("coherence needs at least two columns"));
    }
    let c = normalized_correlations(m, m)?;
    let mut nu: f64 = 0.0;
    for j in 0..c.ncols() {
        for i in 0..c.nrows() {
            if i != j {
                nu = nu.max(c[(i, j)]);
            }
        }
    }
    Ok(nu.min(1.0))
}

pub fn singular_values(m: &CMatrix) -> Vec<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rel_threshold · σ₁`.
pub fn numerical_rank(m: &CMatrix, rel_threshold: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&s1) if s1 > 0.0 => s.iter().filter(|&&v| v > rel_threshold * s1).count(),
        _ => 0,
    }
}

/// Keep only the rows of the centred subarray of length `sub_aperture`.
pub fn restrict_to_subarray(
    m: &SensingMatrix,
    array: &ArrayGeometry,
    sub_aperture: f64,
) -> Result<SensingMatrix> {
    if array.len() != m.n_receivers {
        return Err(Error::Dimension(format!(
            "array has {} receivers, matrix has {}",
            array.len(),
            m.n_receivers
        )));
    }
    let kept = array.subarray_receivers(sub_aperture)?;
    let rows = stacked_rows(&kept, m.n_receivers, m.n_freqs);
    SensingMatrix::new(select_rows(&m.matrix, &rows), kept.len(), m.n_freqs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::build_random_field;
    use approx::assert_relative_eq;

    fn spec(sigma_tilde: f64) -> MediumSpec {
        MediumSpec {
            c0: 1.0,
            ell: 100.0,
            sigma_tilde,
            lambda0: 1.0,
            l_ref: 10_000.0,
            seed: 3,
        }
    }

    fn small_setup(n_r: usize, n_f: usize, n: usize) -> (ArrayGeometry, ImageGrid, FrequencySet) {
        let a = 4800.0;
        let freqs = FrequencySet::band(0.5, 1.0, n_f).unwrap();
        let grid =
            ImageGrid::at_resolution(n, n, 1.0, 10_000.0, a, 1.0, 0.5, 0.4).unwrap();
        (ArrayGeometry::linear(a, n_r).unwrap(), grid, freqs)
    }

    #[test]
    fn two_by_one_matches_direct_green() {
        let array = ArrayGeometry::linear(10.0, 2).unwrap();
        let grid = ImageGrid::new(1, 1, 1.0, 1.0, Point::new(0.0, 50.0)).unwrap();
        let freqs = FrequencySet::band(1.0, 1.0, 1).unwrap();
        let s = spec(0.0);
        let m = assemble_sensing_matrix(None, &s, &array, &grid, &freqs).unwrap();
        assert_eq!(m.matrix.shape(), (2, 1));
        for j in 0..2 {
            let g = physics::green_homogeneous(&array.receivers()[j], &grid.points()[0], s.wavenumber(1.0))
                .unwrap();
            assert_eq!(m.matrix[(j, 0)], g);
        }
    }

    #[test]
    fn zero_strength_field_equals_homogeneous() {
        let (array, grid, freqs) = small_setup(12, 3, 4);
        let s = spec(0.0);
        let field = build_random_field(&s, 64).unwrap();
        let a = assemble_sensing_matrix(None, &s, &array, &grid, &freqs).unwrap();
        let b = assemble_sensing_matrix(Some(&field), &s, &array, &grid, &freqs).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn coincident_receiver_and_grid_point_is_singular() {
        let array = ArrayGeometry::linear(2.0, 3).unwrap();
        let grid = ImageGrid::new(1, 1, 1.0, 1.0, Point::new(0.0, 0.0)).unwrap();
        let freqs = FrequencySet::band(1.0, 1.0, 1).unwrap();
        let r = assemble_sensing_matrix(None, &spec(0.0), &array, &grid, &freqs);
        assert!(matches!(r, Err(Error::Singularity { .. })));
    }

    #[test]
    fn full_scale_shape() {
        let (array, grid, freqs) = small_setup(145, 10, 20);
        let m = assemble_sensing_matrix(None, &spec(0.0), &array, &grid, &freqs).unwrap();
        assert_eq!(m.matrix.shape(), (1450, 400));
    }

    #[test]
    fn coherence_extremes() {
        let v = CMatrix::from_fn(3, 1, |r, _| Complex64::new(r as f64 + 1.0, 0.5));
        let dup = CMatrix::from_columns(&[v.column(0), v.column(0)]);
        assert_relative_eq!(coherence(&dup).unwrap(), 1.0, epsilon = 1e-12);
        let eye = CMatrix::identity(4, 3);
        assert_eq!(coherence(&eye).unwrap(), 0.0);
        let mut zero = eye.clone();
        zero.column_mut(1).fill(Complex64::new(0.0, 0.0));
        assert!(matches!(coherence(&zero), Err(Error::Degenerate(_))));
    }

    #[test]
    fn coherence_ignores_column_phase() {
        let (array, grid, freqs) = small_setup(10, 2, 3);
        let m = assemble_sensing_matrix(None, &spec(0.0), &array, &grid, &freqs).unwrap();
        let mut rotated = m.matrix.clone();
        for (i, mut c) in rotated.column_iter_mut().enumerate() {
            c *= Complex64::from_polar(1.0, 0.7 * i as f64);
        }
        assert_relative_eq!(
            coherence(&m.matrix).unwrap(),
            coherence(&rotated).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn subarray_half_keeps_central_73() {
        let array = ArrayGeometry::linear(4800.0, 145).unwrap();
        let kept = array.subarray_receivers(2400.0).unwrap();
        // oracle: count receivers with |position| <= a/4 on the uniform grid
        let expected = (0..145)
            .filter(|&j| (-2400.0 + 4800.0 * j as f64 / 144.0).abs() <= 1200.0 + 1e-6)
            .count();
        assert_eq!(expected, 73);
        assert_eq!(kept.len(), 73);
        assert_eq!(kept[0], 36);
        assert!(array.subarray_receivers(0.0).is_err());
        assert!(array.subarray_receivers(5000.0).is_err());
        assert_eq!(array.subarray_receivers(1.0).unwrap(), vec![72]);
        let even = ArrayGeometry::linear(4800.0, 144).unwrap();
        assert!(even.subarray_receivers(1.0).is_err());
    }

    #[test]
    fn full_subarray_is_identity() {
        let (array, grid, freqs) = small_setup(9, 2, 2);
        let m = assemble_sensing_matrix(None, &spec(0.0), &array, &grid, &freqs).unwrap();
        let r = restrict_to_subarray(&m, &array, array.aperture()).unwrap();
        assert_eq!(r, m);
    }

    #[test]
    fn grid_permutation_permutes_columns() {
        let (array, grid, freqs) = small_setup(8, 2, 3);
        let s = spec(0.7);
        let field = build_random_field(&s, 32).unwrap();
        let m = assemble_sensing_matrix(Some(&field), &s, &array, &grid, &freqs).unwrap();
        let perm: Vec<usize> = (0..grid.len()).rev().collect();
        let pts: Vec<Point> = perm.iter().map(|&i| grid.points()[i]).collect();
        let mut permuted = grid.clone();
        permuted.points = pts;
        let mp = assemble_sensing_matrix(Some(&field), &s, &array, &permuted, &freqs).unwrap();
        assert_eq!(mp.matrix, m.matrix.select_columns(&perm));
    }

    #[test]
    fn grid_indexing_round_trips() {
        let g = ImageGrid::new(5, 3, 1.0, 2.0, Point::new(0.0, 10.0)).unwrap();
        for i in 0..g.len() {
            let (ic, ir) = g.coords(i);
            assert_eq!(g.index(ic, ir), i);
        }
        assert_eq!(g.lattice_neighbors(0).len(), 2);
        assert_eq!(g.lattice_neighbors(g.index(2, 1)).len(), 4);
        assert_relative_eq!(g.points()[g.index(2, 1)].y, 10.0);
    }

    #[test]
    fn frequency_band_is_equally_spaced() {
        let f = FrequencySet::band(0.5, 1.0, 10).unwrap();
        assert_eq!(f.len(), 10);
        assert_relative_eq!(f.bandwidth(), 0.5);
        let d: Vec<f64> = f.frequencies().windows(2).map(|w| w[1] - w[0]).collect();
        assert!(d.iter().all(|&x| (x - 0.5 / 9.0).abs() < 1e-14));
        assert!(FrequencySet::band(1.0, 0.5, 3).is_err());
    }
}
