//! Experiment configuration. Lengths are in units of the wavelength at the
//! top frequency; the file exposes dimensionless ratios.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::{default_sample_count, SparseSourceConfig};
use crate::dictlearn::LearnOptions;
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, FrequencySet, ImageGrid};
use crate::physics::{MediumSpec, Point};

/// Wavelength at the top frequency; the unit of length.
pub const LAMBDA: f64 = 1.0;
/// Reference wave speed.
pub const C0: f64 = 1.0;

/// Smallest margin, in rows, between the range window and the range alias
/// period before the connectivity graph is at risk of wrapping.
pub const MIN_WRAP_GAP_ROWS: f64 = 3.0;

pub const PRESET_NAMES: [&str; 3] = ["paper-0.6", "paper-0.8", "desk"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MediumConfig {
    pub sigma_tilde: f64,
    /// `ℓ / λ`.
    pub ell_over_lambda: f64,
    /// `L / ℓ`.
    pub range_over_ell: f64,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
}

fn default_modes() -> usize {
    256
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    /// `a / ℓ`.
    pub aperture_over_ell: f64,
    pub receivers: usize,
    /// Fraction of the aperture used for the connectivity step.
    pub subarray_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    /// Band edges as fractions of `f = c0/λ`.
    pub band: [f64; 2],
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_cross: usize,
    pub n_range: usize,
    /// Range spacing in units of `c0/B`.
    pub range_factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub sparsity: usize,
    /// Defaults to `⌊K ln K⌋ + 1`.
    #[serde(default)]
    pub samples: Option<usize>,
    pub amplitude: [f64; 2],
    /// Relative noise level; zero for exact data.
    #[serde(default)]
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MdsConfig {
    pub r: usize,
    pub squared: bool,
    /// Anchor grid points as `[i_cross, i_range]`; empty picks three points
    /// of the central region.
    pub anchors: Vec<[usize; 2]>,
    pub allow_reflection: bool,
}

impl Default for MdsConfig {
    fn default() -> Self {
        Self {
            r: 2,
            squared: true,
            anchors: Vec::new(),
            allow_reflection: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    /// Number of single-source test images.
    pub test_sources: usize,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self { test_sources: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub medium: MediumConfig,
    pub array: ArrayConfig,
    pub frequencies: FrequencyConfig,
    pub grid: GridConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub dictlearn: LearnOptions,
    #[serde(default)]
    pub mdsmap: MdsConfig,
    #[serde(default)]
    pub imaging: ImagingConfig,
}

fn parse_toml(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load and validate a TOML configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_toml(&text, &path.display().to_string())
}

/// One of the configurations shipped in `presets/`.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let text = match name {
        "paper-0.6" => include_str!("../../../presets/paper-0.6.toml"),
        "paper-0.8" => include_str!("../../../presets/paper-0.8.toml"),
        "desk" => include_str!("../../../presets/desk.toml"),
        other => {
            return Err(Error::param(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    parse_toml(text, &format!("preset {name}"))
}

impl ExperimentConfig {
    pub fn ell(&self) -> f64 {
        self.medium.ell_over_lambda * LAMBDA
    }

    pub fn range(&self) -> f64 {
        self.medium.range_over_ell * self.ell()
    }

    pub fn aperture(&self) -> f64 {
        self.array.aperture_over_ell * self.ell()
    }

    pub fn bandwidth(&self) -> f64 {
        (self.frequencies.band[1] - self.frequencies.band[0]) * C0 / LAMBDA
    }

    pub fn k(&self) -> usize {
        self.grid.n_cross * self.grid.n_range
    }

    pub fn samples(&self) -> usize {
        self.data.samples.unwrap_or_else(|| default_sample_count(self.k()))
    }

    pub fn medium_spec(&self) -> MediumSpec {
        MediumSpec {
            c0: C0,
            ell: self.ell(),
            sigma_tilde: self.medium.sigma_tilde,
            lambda0: LAMBDA,
            l_ref: self.range(),
            seed: self.seed,
        }
    }

    pub fn array_geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::linear(self.aperture(), self.array.receivers)
    }

    pub fn frequency_set(&self) -> Result<FrequencySet> {
        let f = C0 / LAMBDA;
        FrequencySet::band(
            self.frequencies.band[0] * f,
            self.frequencies.band[1] * f,
            self.frequencies.count,
        )
    }

    pub fn image_grid(&self) -> Result<ImageGrid> {
        ImageGrid::at_resolution(
            self.grid.n_cross,
            self.grid.n_range,
            LAMBDA,
            self.range(),
            self.aperture(),
            C0,
            self.bandwidth(),
            self.grid.range_factor,
        )
    }

    pub fn sources(&self) -> SparseSourceConfig {
        SparseSourceConfig {
            sparsity: self.data.sparsity,
            amplitude_min: self.data.amplitude[0],
            amplitude_max: self.data.amplitude[1],
        }
    }

    pub fn sub_aperture(&self) -> f64 {
        self.array.subarray_fraction * self.aperture()
    }

    /// Anchor grid indices: the configured ones, or a right triangle over
    /// the central half of the grid.
    pub fn anchor_indices(&self) -> Vec<usize> {
        let (nc, nr) = (self.grid.n_cross, self.grid.n_range);
        let pts: Vec<[usize; 2]> = if self.mdsmap.anchors.is_empty() {
            let (c0, c1) = (nc / 4, (3 * nc) / 4);
            let (r0, r1) = (nr / 4, (3 * nr) / 4);
            vec![[c0, r0], [c1.min(nc - 1), r0], [c0, r1.min(nr - 1)]]
        } else {
            self.mdsmap.anchors.clone()
        };
        pts.iter().map(|[c, r]| r * nc + c).collect()
    }

    pub fn anchor_points(&self, points: &[Point]) -> Vec<(usize, Point)> {
        self.anchor_indices()
            .into_iter()
            .map(|i| (i, points[i]))
            .collect()
    }

    /// Checks everything that can be checked before any computation.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("medium.ell_over_lambda", self.medium.ell_over_lambda),
            ("medium.range_over_ell", self.medium.range_over_ell),
            ("array.aperture_over_ell", self.array.aperture_over_ell),
            ("grid.range_factor", self.grid.range_factor),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::param(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.medium.sigma_tilde.is_finite() && self.medium.sigma_tilde >= 0.0) {
            return Err(Error::param("medium.sigma_tilde must be nonnegative"));
        }
        if self.medium.n_modes == 0 {
            return Err(Error::param("medium.n_modes must be positive"));
        }
        if self.array.receivers < 2 {
            return Err(Error::param("array.receivers must be at least 2"));
        }
        let sf = self.array.subarray_fraction;
        if !(sf > 0.0 && sf <= 1.0) {
            return Err(Error::param(format!("array.subarray_fraction must lie in (0, 1], got {sf}")));
        }
        let [lo, hi] = self.frequencies.band;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::param(format!("frequencies.band [{lo}, {hi}] must be positive and increasing")));
        }
        if self.frequencies.count < 2 {
            return Err(Error::param("frequencies.count must be at least 2"));
        }
        if self.grid.n_cross == 0 || self.grid.n_range == 0 {
            return Err(Error::param("grid dimensions must be positive"));
        }
        let k = self.k();
        self.sources().validate(k)?;
        if self.samples() == 0 {
            return Err(Error::param("data.samples must be positive"));
        }
        if !(self.data.noise >= 0.0) {
            return Err(Error::param("data.noise must be nonnegative"));
        }
        if self.mdsmap.r != 2 {
            return Err(Error::param("only planar image windows (mdsmap.r = 2) are supported"));
        }
        if k <= 2 * self.mdsmap.r {
            return Err(Error::param(format!("grid has {k} points, need more than 2r")));
        }
        let anchors = self.anchor_indices();
        if anchors.len() < 2 {
            return Err(Error::param("mdsmap.anchors needs at least two points"));
        }
        for a in &self.mdsmap.anchors {
            if a[0] >= self.grid.n_cross || a[1] >= self.grid.n_range {
                return Err(Error::param(format!("anchor {a:?} outside the grid")));
            }
        }
        let mut sorted = anchors.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != anchors.len() {
            return Err(Error::param("mdsmap.anchors contains duplicates"));
        }
        if self.dictlearn.max_alternations == 0 {
            return Err(Error::param("dictlearn.max_alternations must be positive"));
        }
        // Discrete frequencies repeat the range response every (N_f - 1) c0/B,
        // i.e. every (N_f - 1)/range_factor rows. Rows closer than a few cells
        // to that period correlate like neighbours and the lattice wraps.
        let period_rows = (self.frequencies.count as f64 - 1.0) / self.grid.range_factor;
        let gap = period_rows - (self.grid.n_range as f64 - 1.0);
        if gap < MIN_WRAP_GAP_ROWS {
            log::warn!(
                "range response repeats every {period_rows:.1} rows; the {}-row window leaves a gap of {gap:.1} rows (< {MIN_WRAP_GAP_ROWS}), so the connectivity graph may wrap",
                self.grid.n_range
            );
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse() {
        for name in PRESET_NAMES {
            let c = preset(name).unwrap();
            c.validate().unwrap();
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn full_scale_preset_constants() {
        for (name, sigma) in [("paper-0.6", 0.6), ("paper-0.8", 0.8)] {
            let c = preset(name).unwrap();
            assert_eq!(c.medium.sigma_tilde, sigma);
            assert_eq!(c.ell(), 100.0);
            assert_eq!(c.range(), 10_000.0);
            assert_eq!(c.aperture(), 4800.0);
            assert_eq!(c.array.receivers, 145);
            assert_eq!(c.sub_aperture(), 2400.0);
            assert_eq!(c.frequencies.band, [0.5, 1.0]);
            assert_eq!(c.frequencies.count, 10);
            assert_eq!((c.grid.n_cross, c.grid.n_range), (20, 20));
            assert_eq!(c.k(), 400);
            assert_eq!(c.array_geometry().unwrap().len() * c.frequencies.count, 1450);
        }
    }

    #[test]
    fn desk_preset_constants() {
        let c = preset("desk").unwrap();
        assert_eq!(c.k(), 100);
        assert_eq!(c.array.receivers, 60);
        assert_eq!(c.frequencies.count, 5);
        assert_eq!(c.data.sparsity, 4);
        assert_eq!(c.samples(), 800);
        assert_eq!(c.medium.sigma_tilde, 0.6);
        assert_eq!(c.aperture(), 4800.0);
    }

    #[test]
    fn unknown_key_is_named() {
        let mut text = include_str!("../../../presets/desk.toml").to_string();
        text = text.replace("[grid]", "[grid]\nbogus_key = 3");
        let err = parse_toml(&text, "test").unwrap_err().to_string();
        assert!(err.contains("bogus_key"), "{err}");
    }

    #[test]
    fn malformed_value_has_location() {
        let text = include_str!("../../../presets/desk.toml").replace("n_cross = 10", "n_cross = \"ten\"");
        let err = parse_toml(&text, "test").unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn sparsity_above_k_rejected() {
        let mut c = preset("desk").unwrap();
        c.data.sparsity = 101;
        assert!(matches!(c.validate(), Err(Error::Parameter(_))));
    }

    #[test]
    fn toml_round_trip_and_hash() {
        let c = preset("desk").unwrap();
        let back: ExperimentConfig = toml::from_str(&c.to_toml()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let mut d = c.clone();
        d.seed += 1;
        assert_ne!(d.hash(), c.hash());
        d.seed = c.seed;
        d.output_dir = Some("elsewhere".into());
        assert_eq!(d.hash(), c.hash());
    }

    #[test]
    fn default_anchors_are_central_and_distinct() {
        let c = preset("paper-0.8").unwrap();
        assert_eq!(c.anchor_indices(), vec![5 * 20 + 5, 5 * 20 + 15, 15 * 20 + 5]);
    }
}
