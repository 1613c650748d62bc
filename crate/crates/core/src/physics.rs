//! Random medium and Green's functions.
//!
//! The medium is `1/c²(x) = (1 + σ μ(x/ℓ)) / c0²` with `μ` a stationary,
//! zero-mean, unit-variance process. Propagation uses the random travel-time
//! approximation: the homogeneous Green's function with its phase shifted by
//! a line integral of `μ` along the straight ray.

use std::f64::consts::PI;

use nalgebra::{Point2, Vector2};
use num_complex::Complex64;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub type Point = Point2<f64>;

/// Physical parameters of the random medium. Lengths share one unit
/// (the pipeline uses the central wavelength).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MediumSpec {
    pub c0: f64,
    pub ell: f64,
    pub sigma_tilde: f64,
    pub lambda0: f64,
    pub l_ref: f64,
    pub seed: u64,
}

impl MediumSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("c0", self.c0),
            ("ell", self.ell),
            ("lambda0", self.lambda0),
            ("l_ref", self.l_ref),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.sigma_tilde.is_finite() && self.sigma_tilde >= 0.0) {
            return Err(Error::param(format!(
                "sigma_tilde must be nonnegative, got {}",
                self.sigma_tilde
            )));
        }
        Ok(())
    }

    /// Absolute fluctuation strength `σ = σ̃ λ / sqrt(ℓ L)`.
    pub fn sigma(&self) -> f64 {
        self.sigma_tilde * self.lambda0 / (self.ell * self.l_ref).sqrt()
    }

    /// Wavenumber at frequency `f`.
    pub fn wavenumber(&self, frequency: f64) -> f64 {
        2.0 * PI * frequency / self.c0
    }
}

/// A real scalar field that can be averaged along straight segments.
pub trait ScalarField: Send + Sync {
    fn eval(&self, p: &Point) -> f64;

    /// Composite midpoint average of the field over the segment `a → b`
    /// with `n` nodes.
    fn segment_average(&self, a: &Point, b: &Point, n: usize) -> f64 {
        let d = b - a;
        let sum: f64 = (0..n)
            .map(|j| {
                let t = (j as f64 + 0.5) / n as f64;
                self.eval(&(a + d * t))
            })
            .sum();
        sum / n as f64
    }
}

/// Spatially constant field; useful as a stub with a known line integral.
#[derive(Clone, Copy, Debug)]
pub struct ConstantField(pub f64);

impl ScalarField for ConstantField {
    fn eval(&self, _p: &Point) -> f64 {
        self.0
    }

    fn segment_average(&self, _a: &Point, _b: &Point, _n: usize) -> f64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FourierMode {
    /// Wavevector in inverse length units.
    pub wavevector: [f64; 2],
    pub phase: f64,
    pub amplitude: f64,
}

/// Random Fourier feature realization of a stationary process with Gaussian
/// autocorrelation `R(u) = exp(-u²/2)`, `u = |Δx|/ℓ`.
///
/// `μ(p) = sqrt(2/n) Σ a_j cos(k_j·p + φ_j)` with `k_j ~ N(0, I/ℓ²)` and
/// `φ_j ~ U[0, 2π)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomField {
    modes: Vec<FourierMode>,
}

impl RandomField {
    pub fn from_modes(modes: Vec<FourierMode>) -> Result<Self> {
        if modes.is_empty() {
            return Err(Error::param("random field needs at least one mode"));
        }
        Ok(Self { modes })
    }

    pub fn modes(&self) -> &[FourierMode] {
        &self.modes
    }

    pub fn count(&self) -> usize {
        self.modes.len()
    }

    fn scale(&self) -> f64 {
        (2.0 / self.modes.len() as f64).sqrt()
    }
}

impl ScalarField for RandomField {
    fn eval(&self, p: &Point) -> f64 {
        let s: f64 = self
            .modes
            .iter()
            .map(|m| m.amplitude * (m.wavevector[0] * p.x + m.wavevector[1] * p.y + m.phase).cos())
            .sum();
        self.scale() * s
    }

    /// Same midpoint rule as the default, summed in closed form per mode:
    /// `Σ_{j<n} cos(α + jβ) = cos(α + (n-1)β/2) sin(nβ/2) / sin(β/2)`.
    fn segment_average(&self, a: &Point, b: &Point, n: usize) -> f64 {
        let d = b - a;
        let nf = n as f64;
        let mut sum = 0.0;
        for m in &self.modes {
            let k = Vector2::new(m.wavevector[0], m.wavevector[1]);
            let beta = k.dot(&d) / nf;
            let alpha = k.dot(&a.coords) + m.phase + 0.5 * beta;
            let centre = (alpha + 0.5 * (nf - 1.0) * beta).cos();
            let half = 0.5 * beta;
            let den = half.sin();
            let ratio = if den.abs() < 1e-9 {
                // sin(nx)/sin(x) -> n cos(nx)/cos(x) near the removable zero
                nf * (nf * half).cos() / half.cos()
            } else {
                (nf * half).sin() / den
            };
            sum += m.amplitude * centre * ratio;
        }
        self.scale() * sum / nf
    }
}

pub fn build_random_field(spec: &MediumSpec, n_modes: usize) -> Result<RandomField> {
    spec.validate()?;
    if n_modes == 0 {
        return Err(Error::param("n_modes must be at least 1"));
    }
    let mut rng = seed::rng_for(spec.seed, seed::LABEL_MEDIUM);
    let modes = (0..n_modes)
        .map(|_| {
            let kx: f64 = StandardNormal.sample(&mut rng);
            let ky: f64 = StandardNormal.sample(&mut rng);
            FourierMode {
                wavevector: [kx / spec.ell, ky / spec.ell],
                phase: rng.random_range(0.0..2.0 * PI),
                amplitude: 1.0,
            }
        })
        .collect();
    RandomField::from_modes(modes)
}

/// Default midpoint node count: at least 64, and at least 8 per correlation
/// length of path.
pub fn default_quad_nodes(distance: f64, ell: f64) -> usize {
    64usize.max((8.0 * distance / ell).ceil() as usize)
}

fn separation(x: &Point, y: &Point) -> Result<f64> {
    let d = (x - y).norm();
    if d == 0.0 || !d.is_finite() {
        return Err(Error::Singularity { x: x.x, y: x.y });
    }
    Ok(d)
}

/// `exp(iκ|x-y|) / (4π|x-y|)`.
pub fn green_homogeneous(x: &Point, y: &Point, kappa: f64) -> Result<Complex64> {
    let d = separation(x, y)?;
    Ok(Complex64::from_polar(1.0 / (4.0 * PI * d), kappa * d))
}

/// Random phase `σ κ |x-y| ∫₀¹ μ(x + s(y-x)) ds`, the integral taken by the
/// midpoint rule with `n_quad` nodes.
pub fn travel_time_phase<F: ScalarField + ?Sized>(
    field: &F,
    spec: &MediumSpec,
    x: &Point,
    y: &Point,
    kappa: f64,
    n_quad: usize,
) -> Result<f64> {
    let d = separation(x, y)?;
    if n_quad < 2 {
        return Err(Error::param(format!("n_quad must be at least 2, got {n_quad}")));
    }
    // Integrate in a canonical direction so the phase is exactly reciprocal.
    let (a, b) = if (x.x, x.y) <= (y.x, y.y) { (x, y) } else { (y, x) };
    let avg = field.segment_average(a, b, n_quad);
    Ok(spec.sigma() * kappa * d * avg)
}

/// Variance of [`travel_time_phase`] over medium realizations for a ray of
/// length `d ≫ ℓ`: `σ² κ² d ℓ √(2π)`.
///
/// The phase is `σκ ∫₀^d μ`, whose variance is `σ²κ² ∫∫ R(|s-t|/ℓ)`, and the
/// double integral tends to `d ∫_ℝ R(u/ℓ) du = d ℓ √(2π)` for the Gaussian
/// autocorrelation. The neglected end correction is `-2ℓ²` inside the
/// bracket, relative size `≈ 0.8 ℓ/d`.
pub fn long_ray_phase_variance(spec: &MediumSpec, kappa: f64, d: f64) -> f64 {
    let s = spec.sigma();
    s * s * kappa * kappa * d * spec.ell * (2.0 * PI).sqrt()
}

pub fn green_random<F: ScalarField + ?Sized>(
    field: &F,
    spec: &MediumSpec,
    x: &Point,
    y: &Point,
    kappa: f64,
    n_quad: usize,
) -> Result<Complex64> {
    let g0 = green_homogeneous(x, y, kappa)?;
    let phase = travel_time_phase(field, spec, x, y, kappa, n_quad)?;
    Ok(g0 * Complex64::from_polar(1.0, phase))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec(sigma_tilde: f64) -> MediumSpec {
        MediumSpec {
            c0: 1.0,
            ell: 100.0,
            sigma_tilde,
            lambda0: 1.0,
            l_ref: 10_000.0,
            seed: 11,
        }
    }

    #[test]
    fn homogeneous_at_one_wavelength_is_real() {
        let lambda = 1.0;
        let kappa = 2.0 * PI / lambda;
        let g = green_homogeneous(&Point::new(0.0, 0.0), &Point::new(0.0, lambda), kappa).unwrap();
        assert_relative_eq!(g.re, 1.0 / (4.0 * PI * lambda), max_relative = 1e-14);
        assert!(g.im.abs() < 1e-15);
    }

    #[test]
    fn homogeneous_at_half_wavelength_is_negative() {
        let kappa = 2.0 * PI;
        let g = green_homogeneous(&Point::new(0.0, 0.0), &Point::new(0.5, 0.0), kappa).unwrap();
        assert_relative_eq!(g.re, -1.0 / (2.0 * PI), max_relative = 1e-14);
        assert!(g.im.abs() < 1e-15);
    }

    #[test]
    fn coincident_points_are_singular() {
        let p = Point::new(1.0, 2.0);
        assert!(matches!(green_homogeneous(&p, &p, 1.0), Err(Error::Singularity { .. })));
        let f = ConstantField(0.3);
        assert!(matches!(
            green_random(&f, &spec(0.5), &p, &p, 1.0, 64),
            Err(Error::Singularity { .. })
        ));
    }

    #[test]
    fn zero_strength_gives_zero_phase_and_homogeneous_green() {
        let s = spec(0.0);
        let field = build_random_field(&s, 64).unwrap();
        let (x, y) = (Point::new(-300.0, 0.0), Point::new(5.0, 9_990.0));
        let k = 2.0 * PI * 0.8;
        assert_eq!(travel_time_phase(&field, &s, &x, &y, k, 200).unwrap(), 0.0);
        let g = green_random(&field, &s, &x, &y, k, 200).unwrap();
        let g0 = green_homogeneous(&x, &y, k).unwrap();
        assert_eq!(g.re.to_bits(), g0.re.to_bits());
        assert_eq!(g.im.to_bits(), g0.im.to_bits());
    }

    #[test]
    fn constant_field_phase_is_exact() {
        let s = spec(0.8);
        let mu0 = 0.37;
        let (x, y) = (Point::new(0.0, 0.0), Point::new(30.0, 40.0));
        let k = 3.0;
        let phase = travel_time_phase(&ConstantField(mu0), &s, &x, &y, k, 64).unwrap();
        assert_relative_eq!(phase, s.sigma() * k * 50.0 * mu0, max_relative = 1e-15);
    }

    #[test]
    fn closed_form_segment_average_matches_node_sum() {
        let s = spec(0.6);
        let field = build_random_field(&s, 256).unwrap();
        let (a, b) = (Point::new(-2400.0, 0.0), Point::new(12.0, 10_020.0));
        for n in [2, 3, 64, 801] {
            let closed = field.segment_average(&a, &b, n);
            let direct: f64 = (0..n)
                .map(|j| field.eval(&(a + (b - a) * ((j as f64 + 0.5) / n as f64))))
                .sum::<f64>()
                / n as f64;
            assert!((closed - direct).abs() < 1e-11, "n={n}: {closed} vs {direct}");
        }
    }

    #[test]
    fn same_seed_same_modes() {
        let a = build_random_field(&spec(0.6), 128).unwrap();
        let b = build_random_field(&spec(0.6), 128).unwrap();
        assert_eq!(a, b);
        let mut other = spec(0.6);
        other.seed += 1;
        assert_ne!(a, build_random_field(&other, 128).unwrap());
    }

    #[test]
    fn invalid_spec_rejected() {
        let mut s = spec(0.5);
        s.ell = 0.0;
        assert!(build_random_field(&s, 8).is_err());
        let mut s = spec(0.5);
        s.sigma_tilde = -1.0;
        assert!(s.validate().is_err());
        assert!(build_random_field(&spec(0.5), 0).is_err());
    }

    #[test]
    fn quad_nodes_rule() {
        assert_eq!(default_quad_nodes(10.0, 100.0), 64);
        assert_eq!(default_quad_nodes(10_000.0, 100.0), 800);
        assert_eq!(default_quad_nodes(10_001.0, 100.0), 801);
    }
}
