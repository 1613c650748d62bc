use criterion::{criterion_group, criterion_main, Criterion};
use focalmap_bench::desk;
use focalmap_core::dictlearn::{mod_update, score_recovery, solve_l1, L1SolverParams};
use focalmap_core::geometry::assemble_sensing_matrix;
use focalmap_core::mdsmap::{classical_mds, geodesic_distances, lattice_graph, mds_map};
use focalmap_core::physics::build_random_field;
use focalmap_core::pipeline::subarray_rows;
use std::hint::black_box;

fn kernels(c: &mut Criterion) {
    let f = desk();
    let spec = f.cfg.medium_spec();
    let array = f.cfg.array_geometry().unwrap();
    let grid = f.cfg.image_grid().unwrap();
    let freqs = f.cfg.frequency_set().unwrap();
    let field = build_random_field(&spec, f.cfg.medium.n_modes).unwrap();

    c.bench_function("assemble_sensing_matrix/desk", |b| {
        b.iter(|| assemble_sensing_matrix(Some(&field), &spec, &array, &grid, &freqs).unwrap())
    });

    let y0 = f.y.column(0).into_owned();
    let params = L1SolverParams::default();
    c.bench_function("solve_l1/desk_sample", |b| b.iter(|| solve_l1(black_box(&f.g), &y0, &params).unwrap()));

    c.bench_function("mod_update/desk", |b| b.iter(|| mod_update(black_box(&f.x), &f.y).unwrap()));

    c.bench_function("score_recovery/desk", |b| b.iter(|| score_recovery(black_box(&f.g), &f.g).unwrap()));

    let sub = subarray_rows(&f.cfg, &f.g0).unwrap();
    c.bench_function("mds_map/desk_homogeneous", |b| b.iter(|| mds_map(black_box(&sub), 2, true).unwrap()));

    let big = focalmap_core::ImageGrid::new(20, 20, 1.0, 1.0, focalmap_core::Point::new(0.0, 0.0)).unwrap();
    let d2 = geodesic_distances(&lattice_graph(&big)).as_mds_input(true);
    c.bench_function("classical_mds/lattice_20x20", |b| b.iter(|| classical_mds(black_box(&d2), 2).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernels
}
criterion_main!(benches);
