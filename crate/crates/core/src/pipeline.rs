//! End-to-end experiment: simulate → learn → localize → image → report.
//!
//! Every stage reads its inputs from the run directory and writes its outputs
//! there, so stages can be re-run separately. Ground truth used only for
//! scoring (and for anchor identification) lives under `truth/`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::datagen::{add_noise, draw_sparse_sources, synthesize};
use crate::dictlearn::{learn, score_recovery, LearnedDictionary, RecoveryReport};
use crate::error::{Error, Result};
use crate::geometry::{
    assemble_sensing_matrix, coherence, normalized_correlations, numerical_rank, restrict_to_subarray,
    SensingMatrix,
};
use crate::imaging::{crosscorrelation_matrix, diagonal_argmax_fraction, embedding_spectrum_report, form_image};
use crate::io::{read_cmatrix, write_cmatrix, write_csv, write_matrix_csv};
use crate::mdsmap::{
    anchor_align, assign_to_grid, classical_mds, geodesic_distances, lattice_graph, mds_map,
    weighted_geodesic_distances, EmbeddedGrid, GridAssignment, MdsMapResult,
};
use crate::physics::{build_random_field, Point};
use crate::seed::{derive_seed, rng_for, LABEL_NOISE, LABEL_SOURCES, LABEL_TEST_SOURCES};
use crate::{CMatrix, RMatrix};

pub const STAGES: [&str; 5] = ["simulate", "learn", "localize", "image", "report"];
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
    /// False for files that carry wall-clock timings.
    pub deterministic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_stage: Option<String>,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            config_hash: cfg.hash(),
            seed: cfg.seed,
            stages: Vec::new(),
            files: Vec::new(),
            failed_stage: None,
        }
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
    }

    /// Checksums of the deterministic files, sorted by path.
    pub fn deterministic_checksums(&self) -> Vec<(String, String)> {
        let mut v: Vec<(String, String)> = self
            .files
            .iter()
            .filter(|f| f.deterministic)
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect();
        v.sort();
        v
    }
}

/// Run directory plus the record of what was written into it.
pub struct RunDir {
    root: PathBuf,
    manifest: RunManifest,
}

impl RunDir {
    /// Open `root` for `cfg`, keeping the inventory of an earlier run of the
    /// same configuration.
    pub fn open(root: impl Into<PathBuf>, cfg: &ExperimentConfig) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let manifest = match RunManifest::load(&root) {
            Ok(m) if m.config_hash == cfg.hash() => m,
            _ => RunManifest::new(cfg),
        };
        Ok(Self { root, manifest })
    }

    /// Start from an empty inventory.
    pub fn fresh(root: impl Into<PathBuf>, cfg: &ExperimentConfig) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            manifest: RunManifest::new(cfg),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn record(&mut self, rel: &str, deterministic: bool) -> Result<()> {
        let p = self.path(rel);
        let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let entry = FileEntry {
            path: rel.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len() as u64,
            deterministic,
        };
        match self.manifest.files.iter_mut().find(|f| f.path == rel) {
            Some(f) => *f = entry,
            None => self.manifest.files.push(entry),
        }
        Ok(())
    }

    pub fn write_cmatrix(&mut self, rel: &str, m: &CMatrix) -> Result<()> {
        write_cmatrix(self.path(rel), m)?;
        self.record(rel, true)
    }

    pub fn write_matrix_csv(&mut self, rel: &str, m: &RMatrix) -> Result<()> {
        write_matrix_csv(self.path(rel), m)?;
        self.record(rel, true)
    }

    pub fn write_csv<I, R>(&mut self, rel: &str, header: &[&str], rows: I) -> Result<()>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = f64>,
    {
        write_csv(self.path(rel), Some(header), rows)?;
        self.record(rel, true)
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T, deterministic: bool) -> Result<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let text = serde_json::to_string_pretty(value).expect("value serializes");
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.record(rel, deterministic)
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let p = self.path(rel);
        std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        self.record(rel, true)
    }

    pub fn read_cmatrix(&self, rel: &str) -> Result<CMatrix> {
        read_cmatrix(self.path(rel))
    }

    pub fn read_json<T: for<'de> Deserialize<'de>>(&self, rel: &str) -> Result<T> {
        let p = self.path(rel);
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: p.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Run `f` as stage `name`, recording its timing and outcome. The
    /// manifest is saved either way.
    pub fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t0 = Instant::now();
        log::info!("stage {name}");
        let out = f(self);
        let record = StageRecord {
            name: name.to_string(),
            seconds: t0.elapsed().as_secs_f64(),
            ok: out.is_ok(),
            error: out.as_ref().err().map(|e| e.to_string()),
        };
        self.manifest.stages.retain(|s| s.name != name);
        self.manifest.stages.push(record);
        match &out {
            Ok(_) => {
                if self.manifest.failed_stage.as_deref() == Some(name) {
                    self.manifest.failed_stage = None;
                }
            }
            Err(_) => self.manifest.failed_stage = Some(name.to_string()),
        }
        self.manifest.save(&self.root)?;
        out.map_err(|e| Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        })
    }
}

// File names shared between stages.
const F_DATA: &str = "Y.fmx";
const F_G0: &str = "G0.fmx";
const F_TRUTH_G: &str = "truth/G.fmx";
const F_TRUTH_X: &str = "truth/X.fmx";
const F_DHAT: &str = "D_hat.fmx";
const F_ASSIGNMENT: &str = "localization.json";

/// Outputs of [`simulate`].
pub struct Simulated {
    pub g: CMatrix,
    pub g0: CMatrix,
    pub y: CMatrix,
}

/// Assemble the true and homogeneous sensing matrices and the sample ensemble.
pub fn simulate(cfg: &ExperimentConfig, run: &mut RunDir) -> Result<Simulated> {
    cfg.validate()?;
    let spec = cfg.medium_spec();
    let array = cfg.array_geometry()?;
    let grid = cfg.image_grid()?;
    let freqs = cfg.frequency_set()?;
    let field = build_random_field(&spec, cfg.medium.n_modes)?;
    let g = assemble_sensing_matrix(Some(&field), &spec, &array, &grid, &freqs)?.matrix;
    let g0 = assemble_sensing_matrix(None, &spec, &array, &grid, &freqs)?.matrix;
    let x = draw_sparse_sources(&cfg.sources(), cfg.k(), cfg.samples(), derive_seed(cfg.seed, LABEL_SOURCES))?;
    let mut y = synthesize(&g, &x)?.y;
    add_noise(&mut y, cfg.data.noise, derive_seed(cfg.seed, LABEL_NOISE));

    run.write_text("config.toml", &cfg.to_toml())?;
    run.write_csv(
        "grid.csv",
        &["index", "x", "z"],
        grid.points().iter().enumerate().map(|(i, p)| vec![i as f64, p.x, p.y]),
    )?;
    run.write_cmatrix(F_DATA, &y)?;
    run.write_cmatrix(F_G0, &g0)?;
    run.write_cmatrix(F_TRUTH_G, &g)?;
    run.write_cmatrix(F_TRUTH_X, &x)?;
    Ok(Simulated { g, g0, y })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct LearnLog {
    iterations_run: usize,
    history: Vec<f64>,
    records: Vec<crate::dictlearn::AlternationRecord>,
}

/// Learn the dictionary from the ensemble.
pub fn learn_stage(cfg: &ExperimentConfig, y: &CMatrix, truth: Option<&CMatrix>, run: &mut RunDir) -> Result<LearnedDictionary> {
    let out = learn(y, cfg.k(), &cfg.dictlearn, truth)?;
    run.write_cmatrix(F_DHAT, &out.d_hat)?;
    run.write_csv(
        "learn_history.csv",
        &["alternation", "objective"],
        out.history.iter().enumerate().map(|(i, &v)| vec![i as f64, v]),
    )?;
    run.write_json(
        "learn_log.json",
        &LearnLog {
            iterations_run: out.iterations_run,
            history: out.history.clone(),
            records: out.records.clone(),
        },
        false,
    )?;
    Ok(out)
}

/// Outcome of [`localize`]. Positions and displacements are in lattice
/// units (one grid spacing per step in either direction).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Localization {
    /// Learned column used for each anchor, with its known grid index.
    pub anchors: Vec<(usize, usize)>,
    pub aligned: EmbeddedGrid,
    pub assignment: GridAssignment,
    pub spectrum: Vec<f64>,
    pub edges: usize,
}

/// Learned column whose normalized correlation with the true column of each
/// anchor grid point is largest. Stands in for locating the anchors by an
/// independent imaging method.
pub fn identify_anchor_columns(d_hat: &CMatrix, g_true: &CMatrix, anchors: &[usize]) -> Result<Vec<usize>> {
    let c = normalized_correlations(d_hat, &g_true.select_columns(anchors))?;
    Ok((0..anchors.len())
        .map(|a| {
            c.column(a)
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc })
                .0
        })
        .collect())
}

/// Rows of a stacked (frequency-major) matrix that belong to the subarray.
pub fn subarray_rows(cfg: &ExperimentConfig, m: &CMatrix) -> Result<CMatrix> {
    let array = cfg.array_geometry()?;
    let stacked = SensingMatrix::new(m.clone(), array.len(), cfg.frequencies.count)?;
    Ok(restrict_to_subarray(&stacked, &array, cfg.sub_aperture())?.matrix)
}

/// Order the learned columns: subarray restriction → MDS-MAP → anchor
/// alignment → assignment to grid points.
pub fn localize(cfg: &ExperimentConfig, d_hat: &CMatrix, g_true: &CMatrix, run: &mut RunDir) -> Result<(MdsMapResult, Localization)> {
    let grid = cfg.image_grid()?;
    let lattice = grid.lattice_points();
    let sub = subarray_rows(cfg, d_hat)?;
    let mds = mds_map(&sub, cfg.mdsmap.r, cfg.mdsmap.squared)?;
    let anchor_grid = cfg.anchor_indices();
    let anchor_cols = identify_anchor_columns(d_hat, g_true, &anchor_grid)?;
    let anchors: Vec<(usize, Point)> = anchor_cols
        .iter()
        .zip(&anchor_grid)
        .map(|(&c, &g)| (c, lattice[g]))
        .collect();
    let aligned = anchor_align(&mds.embedding.z, &anchors, cfg.mdsmap.allow_reflection, Some(&lattice))?;
    let assignment = assign_to_grid(&aligned.z, &lattice)?;
    let loc = Localization {
        anchors: anchor_cols.into_iter().zip(anchor_grid).collect(),
        aligned,
        assignment,
        spectrum: mds.embedding.spectrum.clone(),
        edges: mds.graph.edge_count(),
    };
    run.write_json(F_ASSIGNMENT, &loc, true)?;
    run.write_csv(
        "assignment.csv",
        &["column", "grid_index", "ic", "ir", "displacement"],
        (0..grid.len()).map(|c| {
            vec![
                c as f64,
                loc.assignment.grid_index[c] as f64,
                loc.aligned.z[(c, 0)],
                loc.aligned.z[(c, 1)],
                loc.assignment.displacement[c],
            ]
        }),
    )?;
    let edges: Vec<Vec<f64>> = mds
        .graph
        .neighbors
        .iter()
        .enumerate()
        .flat_map(|(i, n)| n.iter().filter(move |&&j| j > i).map(move |&j| vec![i as f64, j as f64]))
        .collect();
    run.write_csv("adjacency_edges.csv", &["i", "j"], edges)?;
    Ok((mds, loc))
}

/// Estimate ordered by the assignment: column `grid_index[c]` holds learned
/// column `c`.
pub fn ordered_estimate(d_hat: &CMatrix, assignment: &GridAssignment) -> CMatrix {
    let mut g = CMatrix::zeros(d_hat.nrows(), d_hat.ncols());
    for (c, &gi) in assignment.grid_index.iter().enumerate() {
        g.set_column(gi, &d_hat.column(c));
    }
    g
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagingSummary {
    pub test_sources: Vec<usize>,
    pub peaks_learned: Vec<usize>,
    pub peaks_true: Vec<usize>,
    pub peaks_homogeneous: Vec<usize>,
    pub success_learned: f64,
    pub success_true: f64,
    pub success_homogeneous: f64,
}

fn fraction_equal(a: &[usize], b: &[usize]) -> f64 {
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len().max(1) as f64
}

/// Single-source test images with the learned (ordered), true and
/// homogeneous matrices. Sources are unit-modulus with random phase at
/// random distinct grid points.
pub fn image_stage(
    cfg: &ExperimentConfig,
    d_hat: &CMatrix,
    assignment: &GridAssignment,
    g_true: &CMatrix,
    g0: &CMatrix,
    run: &mut RunDir,
) -> Result<ImagingSummary> {
    let grid = cfg.image_grid()?;
    let k = grid.len();
    let n = cfg.imaging.test_sources.min(k);
    let mut rng = rng_for(cfg.seed, LABEL_TEST_SOURCES);
    let sources: Vec<usize> = sample(&mut rng, k, n).into_vec();
    let g_est = ordered_estimate(d_hat, assignment);
    let mut peaks = (Vec::new(), Vec::new(), Vec::new());
    for (t, &j) in sources.iter().enumerate() {
        let phase = Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU));
        let y: DVector<Complex64> = g_true.column(j) * phase;
        let learned = form_image(&g_est, &y, &grid, "learned")?;
        let truth = form_image(g_true, &y, &grid, "true")?;
        let homog = form_image(g0, &y, &grid, "homogeneous")?;
        if t == 0 {
            run.write_matrix_csv("fig8_true.csv", &truth.as_grid(true))?;
            run.write_matrix_csv("fig8_homog.csv", &homog.as_grid(true))?;
            run.write_matrix_csv("fig8_learned.csv", &learned.as_grid(true))?;
        }
        peaks.0.push(learned.peak());
        peaks.1.push(truth.peak());
        peaks.2.push(homog.peak());
    }
    let summary = ImagingSummary {
        success_learned: fraction_equal(&peaks.0, &sources),
        success_true: fraction_equal(&peaks.1, &sources),
        success_homogeneous: fraction_equal(&peaks.2, &sources),
        test_sources: sources,
        peaks_learned: peaks.0,
        peaks_true: peaks.1,
        peaks_homogeneous: peaks.2,
    };
    run.write_json("imaging.json", &summary, true)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub k: usize,
    pub n: usize,
    pub coherence: f64,
    pub numerical_rank: usize,
    pub cmax_mean: f64,
    pub cmax_fraction_above_095: f64,
    pub cmax_fraction_above_099: f64,
    pub distinct_matches: usize,
    /// Learned columns assigned to the grid point of their best-matching
    /// true column.
    pub localized_fraction: f64,
    pub anchor_reflection_ambiguous: bool,
    pub embedding_top2_energy: f64,
    pub diag_argmax_gg: f64,
    pub diag_argmax_g0g0: f64,
    pub diag_argmax_gg0: f64,
    pub image_success_learned: f64,
    pub image_success_true: f64,
    pub image_success_homogeneous: f64,
}

/// Fraction of learned columns whose assigned grid index is the index of the
/// true column they best match.
pub fn localized_fraction(recovery: &RecoveryReport, assignment: &GridAssignment) -> f64 {
    fraction_equal(&assignment.grid_index, &recovery.permutation)
}

fn spectrum_rows(columns: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let len = columns.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .map(|i| {
            std::iter::once(i as f64 + 1.0)
                .chain(columns.iter().map(|c| c.get(i).copied().unwrap_or(f64::NAN)))
                .collect()
        })
        .collect()
}

fn aligned_rows(z: &RMatrix, points: &[Point], truth_index: &[usize]) -> Vec<Vec<f64>> {
    (0..z.nrows())
        .map(|i| {
            let p = points[truth_index[i]];
            vec![i as f64, z[(i, 0)], z[(i, 1)], p.x, p.y]
        })
        .collect()
}

/// Align an embedding of the true grid geometry to the fixed anchors.
fn aligned_reference(z: &RMatrix, cfg: &ExperimentConfig, points: &[Point]) -> Result<EmbeddedGrid> {
    anchor_align(z, &cfg.anchor_points(points), cfg.mdsmap.allow_reflection, Some(points))
}

/// Figure data and the run summary.
#[allow(clippy::too_many_arguments)]
pub fn report(
    cfg: &ExperimentConfig,
    g_true: &CMatrix,
    g0: &CMatrix,
    d_hat: &CMatrix,
    mds: &MdsMapResult,
    loc: &Localization,
    imaging: &ImagingSummary,
    run: &mut RunDir,
) -> Result<RunSummary> {
    let grid = cfg.image_grid()?;
    let identity: Vec<usize> = (0..grid.len()).collect();

    // Time-reversal cross-correlations.
    let gg = crosscorrelation_matrix(g_true, g_true)?;
    let g0g0 = crosscorrelation_matrix(g0, g0)?;
    let gg0 = crosscorrelation_matrix(g_true, g0)?;
    run.write_matrix_csv("fig3_GG.csv", &gg)?;
    run.write_matrix_csv("fig3_G0G0.csv", &g0g0)?;
    run.write_matrix_csv("fig3_GG0.csv", &gg0)?;

    // Embedding spectra: Euclidean, ideal lattice hops, learned hops.
    let (z_full, s_full) = classical_mds(&grid.squared_distances(), 2)?;
    let lattice = geodesic_distances(&lattice_graph(&grid));
    let (_, s_lattice) = classical_mds(&lattice.as_mds_input(true), 2)?;
    let spectra = [
        embedding_spectrum_report(&s_full)?,
        embedding_spectrum_report(&s_lattice)?,
        embedding_spectrum_report(&mds.embedding.spectrum)?,
    ];
    run.write_csv(
        "fig4_spectrum.csv",
        &["index", "euclidean", "lattice_geodesic", "learned_geodesic"],
        spectrum_rows(&spectra),
    )?;

    let recovery = score_recovery(d_hat, g_true)?;
    run.write_csv(
        "fig5_cmax.csv",
        &["column", "cmax", "best_match"],
        (0..recovery.c_max.len()).map(|i| vec![i as f64, recovery.c_max[i], recovery.permutation[i] as f64]),
    )?;

    // Grid reconstructions: all distances, nearest-neighbour distances only,
    // and hop counts from the learned columns.
    let full = aligned_reference(&z_full, cfg, grid.points())?;
    run.write_csv("fig6_euclid_full.csv", &["point", "x", "z", "x_true", "z_true"], aligned_rows(&full.z, grid.points(), &identity))?;
    let knn = weighted_geodesic_distances(&lattice_graph(&grid), grid.points())?;
    let (z_knn, _) = classical_mds(&knn.map(|d| d * d), 2)?;
    let knn = aligned_reference(&z_knn, cfg, grid.points())?;
    run.write_csv("fig6_euclid_knn.csv", &["point", "x", "z", "x_true", "z_true"], aligned_rows(&knn.z, grid.points(), &identity))?;
    // Hop-count reconstructions live in lattice units.
    let lattice = grid.lattice_points();
    run.write_csv(
        "fig6_geodesic.csv",
        &["column", "ic", "ir", "ic_true", "ir_true"],
        aligned_rows(&loc.aligned.z, &lattice, &recovery.permutation),
    )?;
    run.write_csv(
        "fig7_aligned.csv",
        &["column", "ic", "ir", "ic_true", "ir_true", "assigned_index", "true_index", "is_anchor"],
        (0..grid.len()).map(|c| {
            let t = lattice[recovery.permutation[c]];
            vec![
                c as f64,
                loc.aligned.z[(c, 0)],
                loc.aligned.z[(c, 1)],
                t.x,
                t.y,
                loc.assignment.grid_index[c] as f64,
                recovery.permutation[c] as f64,
                f64::from(u8::from(loc.anchors.iter().any(|&(a, _)| a == c))),
            ]
        }),
    )?;

    let total: f64 = mds.embedding.spectrum.iter().sum();
    let summary = RunSummary {
        k: g_true.ncols(),
        n: g_true.nrows(),
        coherence: coherence(g_true)?,
        numerical_rank: numerical_rank(g_true, 1e-3),
        cmax_mean: recovery.mean(),
        cmax_fraction_above_095: recovery.fraction_above(0.95),
        cmax_fraction_above_099: recovery.fraction_above(0.99),
        distinct_matches: recovery.distinct_matches(),
        localized_fraction: localized_fraction(&recovery, &loc.assignment),
        anchor_reflection_ambiguous: loc.aligned.transform.as_ref().is_some_and(|t| t.ambiguous),
        embedding_top2_energy: (mds.embedding.spectrum[0] + mds.embedding.spectrum[1]) / total,
        diag_argmax_gg: diagonal_argmax_fraction(&gg),
        diag_argmax_g0g0: diagonal_argmax_fraction(&g0g0),
        diag_argmax_gg0: diagonal_argmax_fraction(&gg0),
        image_success_learned: imaging.success_learned,
        image_success_true: imaging.success_true,
        image_success_homogeneous: imaging.success_homogeneous,
    };
    run.write_json("summary.json", &summary, true)?;
    Ok(summary)
}

/// Everything produced by [`run_pipeline`].
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub manifest: RunManifest,
    pub summary: RunSummary,
}

/// Run all stages into `out`. On failure the manifest names the stage and the
/// artifacts written so far are kept.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineOutput> {
    cfg.validate().map_err(|e| Error::Stage {
        stage: "config".into(),
        source: Box::new(e),
    })?;
    let mut run = RunDir::fresh(out, cfg)?;
    let sim = run.stage("simulate", |r| simulate(cfg, r))?;
    let learned = run.stage("learn", |r| learn_stage(cfg, &sim.y, Some(&sim.g), r))?;
    let (mds, loc) = run.stage("localize", |r| localize(cfg, &learned.d_hat, &sim.g, r))?;
    let imaging = run.stage("image", |r| image_stage(cfg, &learned.d_hat, &loc.assignment, &sim.g, &sim.g0, r))?;
    let summary = run.stage("report", |r| report(cfg, &sim.g, &sim.g0, &learned.d_hat, &mds, &loc, &imaging, r))?;
    Ok(PipelineOutput {
        manifest: run.manifest().clone(),
        summary,
    })
}

/// Stage-by-stage entry points that reload their inputs from a run directory.
pub mod stages {
    use super::*;

    pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
        let mut run = RunDir::open(out, cfg)?;
        run.stage("simulate", |r| super::simulate(cfg, r))?;
        Ok(run.manifest().clone())
    }

    pub fn learn(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
        let mut run = RunDir::open(out, cfg)?;
        run.stage("learn", |r| {
            let y = r.read_cmatrix(F_DATA)?;
            let truth = r.read_cmatrix(F_TRUTH_G).ok();
            learn_stage(cfg, &y, truth.as_ref(), r)
        })?;
        Ok(run.manifest().clone())
    }

    pub fn localize(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
        let mut run = RunDir::open(out, cfg)?;
        run.stage("localize", |r| {
            let d_hat = r.read_cmatrix(F_DHAT)?;
            let g = r.read_cmatrix(F_TRUTH_G)?;
            super::localize(cfg, &d_hat, &g, r)
        })?;
        Ok(run.manifest().clone())
    }

    pub fn image(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
        let mut run = RunDir::open(out, cfg)?;
        run.stage("image", |r| {
            let d_hat = r.read_cmatrix(F_DHAT)?;
            let g = r.read_cmatrix(F_TRUTH_G)?;
            let g0 = r.read_cmatrix(F_G0)?;
            let loc: Localization = r.read_json(F_ASSIGNMENT)?;
            image_stage(cfg, &d_hat, &loc.assignment, &g, &g0, r)
        })?;
        Ok(run.manifest().clone())
    }

    pub fn report(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary> {
        let mut run = RunDir::open(out, cfg)?;
        run.stage("report", |r| {
            let d_hat = r.read_cmatrix(F_DHAT)?;
            let g = r.read_cmatrix(F_TRUTH_G)?;
            let g0 = r.read_cmatrix(F_G0)?;
            let loc: Localization = r.read_json(F_ASSIGNMENT)?;
            let imaging: ImagingSummary = r.read_json("imaging.json")?;
            let sub = subarray_rows(cfg, &d_hat)?;
            let mds = mds_map(&sub, cfg.mdsmap.r, cfg.mdsmap.squared)?;
            super::report(cfg, &g, &g0, &d_hat, &mds, &loc, &imaging, r)
        })
    }
}
