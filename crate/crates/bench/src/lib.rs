//! Shared inputs for the benchmarks: the desk configuration's matrices and a
//! sparse ensemble drawn from them.

use focalmap_core::config::{preset, ExperimentConfig};
use focalmap_core::datagen::{draw_sparse_sources, synthesize};
use focalmap_core::geometry::assemble_sensing_matrix;
use focalmap_core::physics::build_random_field;
use focalmap_core::CMatrix;

pub struct Fixture {
    pub cfg: ExperimentConfig,
    pub g: CMatrix,
    pub g0: CMatrix,
    pub x: CMatrix,
    pub y: CMatrix,
}

pub fn desk() -> Fixture {
    let cfg = preset("desk").expect("desk preset");
    let spec = cfg.medium_spec();
    let array = cfg.array_geometry().unwrap();
    let grid = cfg.image_grid().unwrap();
    let freqs = cfg.frequency_set().unwrap();
    let field = build_random_field(&spec, cfg.medium.n_modes).unwrap();
    let g = assemble_sensing_matrix(Some(&field), &spec, &array, &grid, &freqs).unwrap().matrix;
    let g0 = assemble_sensing_matrix(None, &spec, &array, &grid, &freqs).unwrap().matrix;
    let x = draw_sparse_sources(&cfg.sources(), cfg.k(), cfg.samples(), 11).unwrap();
    let y = synthesize(&g, &x).unwrap().y;
    Fixture { cfg, g, g0, x, y }
}
