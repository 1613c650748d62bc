//! Grid reconstruction from column correlations: k-nearest-neighbour
//! connectivity, hop-count geodesics, classical MDS, anchor alignment and
//! assignment of columns to grid points.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use pathfinding::kuhn_munkres::kuhn_munkres_min;
use pathfinding::matrix::Matrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::normalized_correlations;
use crate::physics::Point;
use crate::{CMatrix, RMatrix};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityGraph {
    /// Neighbour budget `2r` used for the proposals.
    pub budget: usize,
    /// The `budget` most correlated other vertices of each vertex, strongest
    /// first.
    pub proposals: Vec<Vec<usize>>,
    /// Symmetric union of the proposals, sorted.
    pub neighbors: Vec<Vec<usize>>,
}

impl ConnectivityGraph {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// Graph from explicit undirected edges; proposals mirror the neighbours.
    pub fn from_edges(k: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); k];
        for &(a, b) in edges {
            if a >= k || b >= k || a == b {
                return Err(Error::param(format!("invalid edge ({a}, {b}) for {k} vertices")));
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Ok(Self {
            budget: 0,
            proposals: neighbors.clone(),
            neighbors,
        })
    }

    pub fn adjacency_matrix(&self) -> RMatrix {
        let k = self.len();
        let mut a = RMatrix::zeros(k, k);
        for (i, n) in self.neighbors.iter().enumerate() {
            for &j in n {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }
}

/// Connect each column to its `2r` most correlated other columns
/// (`|ĝ_i* ĝ_j|` on unit columns, ties to the lower index) and symmetrize
/// by union.
pub fn build_adjacency(cols: &CMatrix, r: usize) -> Result<ConnectivityGraph> {
    let k = cols.ncols();
    let budget = 2 * r;
    if r == 0 || k <= budget {
        return Err(Error::param(format!(
            "need more than 2r = {budget} columns, got {k}"
        )));
    }
    let corr = normalized_correlations(cols, cols)?;
    let proposals: Vec<Vec<usize>> = (0..k)
        .into_par_iter()
        .map(|i| {
            let mut others: Vec<usize> = (0..k).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| corr[(i, b)].total_cmp(&corr[(i, a)]).then(a.cmp(&b)));
            others.truncate(budget);
            others
        })
        .collect();
    let mut neighbors = vec![Vec::new(); k];
    for (i, p) in proposals.iter().enumerate() {
        for &j in p {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
    }
    for n in &mut neighbors {
        n.sort_unstable();
        n.dedup();
    }
    Ok(ConnectivityGraph {
        budget,
        proposals,
        neighbors,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyDistanceMatrix {
    /// Hop counts; `f64::INFINITY` between different components.
    pub hops: RMatrix,
    pub connected: bool,
    /// Connected components, each sorted, ordered by smallest member.
    pub components: Vec<Vec<usize>>,
}

impl ProxyDistanceMatrix {
    pub fn hop(&self, i: usize, j: usize) -> Option<usize> {
        let h = self.hops[(i, j)];
        h.is_finite().then_some(h as usize)
    }

    /// Element-wise square (or a copy when `squared` is false).
    pub fn as_mds_input(&self, squared: bool) -> RMatrix {
        if squared {
            self.hops.map(|h| h * h)
        } else {
            self.hops.clone()
        }
    }
}

fn bfs(g: &ConnectivityGraph, source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; g.len()];
    dist[source] = 0.0;
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        for &v in &g.neighbors[u] {
            if dist[v].is_infinite() {
                dist[v] = dist[u] + 1.0;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// All-pairs hop counts by breadth-first search from every vertex.
pub fn geodesic_distances(g: &ConnectivityGraph) -> ProxyDistanceMatrix {
    let k = g.len();
    let rows: Vec<Vec<f64>> = (0..k).into_par_iter().map(|s| bfs(g, s)).collect();
    let hops = RMatrix::from_fn(k, k, |i, j| rows[i][j]);
    let mut seen = vec![false; k];
    let mut components = Vec::new();
    for s in 0..k {
        if seen[s] {
            continue;
        }
        let comp: Vec<usize> = (0..k).filter(|&j| rows[s][j].is_finite()).collect();
        for &j in &comp {
            seen[j] = true;
        }
        components.push(comp);
    }
    ProxyDistanceMatrix {
        hops,
        connected: components.len() <= 1,
        components,
    }
}

/// The 4-neighbour lattice graph of a grid.
pub fn lattice_graph(grid: &crate::geometry::ImageGrid) -> ConnectivityGraph {
    let edges: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|i| {
            grid.lattice_neighbors(i)
                .into_iter()
                .filter(move |&j| j > i)
                .map(move |j| (i, j))
        })
        .collect();
    ConnectivityGraph::from_edges(grid.len(), &edges).expect("lattice edges are valid")
}

/// Shortest-path distances with Euclidean edge lengths between the given
/// points (Floyd–Warshall). Unreachable pairs are infinite.
pub fn weighted_geodesic_distances(g: &ConnectivityGraph, points: &[Point]) -> Result<RMatrix> {
    let k = g.len();
    if points.len() != k {
        return Err(Error::Dimension(format!("{} points for {k} vertices", points.len())));
    }
    let mut d = RMatrix::from_element(k, k, f64::INFINITY);
    for i in 0..k {
        d[(i, i)] = 0.0;
        for &j in &g.neighbors[i] {
            d[(i, j)] = (points[i] - points[j]).norm();
        }
    }
    for m in 0..k {
        let via: Vec<f64> = d.column(m).iter().copied().collect();
        for j in 0..k {
            let dmj = d[(m, j)];
            if dmj.is_infinite() {
                continue;
            }
            for (i, &dim) in via.iter().enumerate() {
                let cand = dim + dmj;
                if cand < d[(i, j)] {
                    d[(i, j)] = cand;
                }
            }
        }
    }
    Ok(d)
}

/// Classical MDS: double-center `-½ L D2 L`, keep the top `r` eigenpairs.
/// Returns the `K × r` coordinates and the full spectrum, clipped at zero and
/// sorted descending.
pub fn classical_mds(d2: &RMatrix, r: usize) -> Result<(RMatrix, Vec<f64>)> {
    let k = d2.nrows();
    if d2.ncols() != k {
        return Err(Error::Dimension(format!("distance matrix is {}x{}", k, d2.ncols())));
    }
    if r == 0 || r > k {
        return Err(Error::param(format!("embedding dimension {r} invalid for {k} points")));
    }
    if d2.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("distance matrix has non-finite entries".into()));
    }
    let scale = d2.amax().max(f64::MIN_POSITIVE);
    for i in 0..k {
        if d2[(i, i)].abs() > 1e-12 * scale {
            return Err(Error::param(format!("nonzero diagonal entry at {i}")));
        }
        for j in 0..i {
            if (d2[(i, j)] - d2[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::param(format!("distance matrix not symmetric at ({i}, {j})")));
            }
        }
    }
    let row_means: Vec<f64> = d2.row_iter().map(|r| r.sum() / k as f64).collect();
    let total = row_means.iter().sum::<f64>() / k as f64;
    let b = RMatrix::from_fn(k, k, |i, j| {
        -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + total)
    });
    let b = (&b + b.transpose()) * 0.5;
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]));
    let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let floor = 1e-12 * spectrum[0].max(f64::MIN_POSITIVE);
    let positive = spectrum.iter().filter(|&&v| v > floor).count();
    if positive < r {
        return Err(Error::Rank {
            needed: r,
            found: positive,
        });
    }
    let mut z = RMatrix::zeros(k, r);
    for (c, &i) in order.iter().take(r).enumerate() {
        let mut v = eig.eigenvectors.column(i).into_owned();
        // Fix the sign so the largest-magnitude entry is positive.
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if pivot < 0.0 {
            v.neg_mut();
        }
        z.set_column(c, &(v * spectrum[c].sqrt()));
    }
    Ok((z, spectrum))
}

/// Similarity transform `p ↦ scale · R p + t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: RMatrix,
    pub translation: DVector<f64>,
    pub reflected: bool,
    /// Sum of squared anchor mismatches.
    pub residual: f64,
    /// Both reflection branches fit the anchors equally well; the choice was
    /// made by a tie-break.
    pub ambiguous: bool,
}

impl SimilarityTransform {
    pub fn apply(&self, z: &RMatrix) -> RMatrix {
        let mut out = z * self.rotation.transpose() * self.scale;
        for mut row in out.row_iter_mut() {
            row += self.translation.transpose();
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedGrid {
    /// `K × r` coordinates: centered before alignment, in the grid frame after.
    pub z: RMatrix,
    /// Spectrum of the doubly centered matrix, nonnegative and descending.
    pub spectrum: Vec<f64>,
    pub transform: Option<SimilarityTransform>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdsMapResult {
    pub graph: ConnectivityGraph,
    pub distances: ProxyDistanceMatrix,
    pub embedding: EmbeddedGrid,
}

/// Adjacency → hop counts → classical MDS. `squared` feeds squared hop
/// counts to the centering step (the consistent choice); `false` feeds the
/// raw counts.
pub fn mds_map(cols: &CMatrix, r: usize, squared: bool) -> Result<MdsMapResult> {
    let graph = build_adjacency(cols, r)?;
    let distances = geodesic_distances(&graph);
    if !distances.connected {
        return Err(Error::Disconnected {
            components: distances.components.clone(),
        });
    }
    let (z, spectrum) = classical_mds(&distances.as_mds_input(squared), r)?;
    Ok(MdsMapResult {
        graph,
        distances,
        embedding: EmbeddedGrid {
            z,
            spectrum,
            transform: None,
        },
    })
}

fn fit_branch(src: &RMatrix, dst: &RMatrix, reflect: bool) -> Option<SimilarityTransform> {
    let n = src.nrows() as f64;
    let r = src.ncols();
    let mu_s = src.row_mean();
    let mu_d = dst.row_mean();
    let mut sc = src.clone();
    let mut dc = dst.clone();
    for mut row in sc.row_iter_mut() {
        row -= &mu_s;
    }
    for mut row in dc.row_iter_mut() {
        row -= &mu_d;
    }
    let var_s = sc.norm_squared() / n;
    if var_s <= 0.0 {
        return None;
    }
    let cov = dc.transpose() * &sc / n;
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let mut sv: Vec<(usize, f64)> = svd.singular_values.iter().copied().enumerate().collect();
    sv.sort_by(|a, b| b.1.total_cmp(&a.1));
    // Rotation with the requested determinant: flip the weakest direction if
    // needed.
    let det_uv = (u.determinant() * vt.determinant()).signum();
    let want = if reflect { -1.0 } else { 1.0 };
    let mut s = DVector::from_element(r, 1.0);
    if det_uv != want {
        s[sv[r - 1].0] = -1.0;
    }
    let rotation = &u * DMatrix::from_diagonal(&s) * &vt;
    let trace: f64 = (0..r).map(|i| s[i] * svd.singular_values[i]).sum();
    let scale = trace / var_s;
    let translation = mu_d.transpose() - (&rotation * mu_s.transpose()) * scale;
    let mut t = SimilarityTransform {
        scale,
        rotation,
        translation,
        reflected: reflect,
        residual: 0.0,
        ambiguous: false,
    };
    t.residual = (t.apply(src) - dst).norm_squared();
    Some(t)
}

fn nearest_distance_sum(z: &RMatrix, grid: &[Point]) -> f64 {
    z.row_iter()
        .map(|row| {
            grid.iter()
                .map(|p| ((row[0] - p.x).powi(2) + (row[1] - p.y).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Least-squares similarity alignment of the embedding to known anchor
/// positions, evaluated for both reflection branches. The lower anchor
/// residual wins; a tie keeps the unreflected branch unless `grid` is given
/// (only meaningful for `r = 2`), in which case the branch landing closer to
/// the grid points is taken and the result is marked ambiguous.
pub fn anchor_align(
    z: &RMatrix,
    anchors: &[(usize, Point)],
    allow_reflection: bool,
    grid: Option<&[Point]>,
) -> Result<EmbeddedGrid> {
    let r = z.ncols();
    if r != 2 {
        return Err(Error::param(format!("anchor positions are planar, embedding has r = {r}")));
    }
    if anchors.len() < 2 {
        return Err(Error::param("at least two anchors are needed"));
    }
    if let Some(&(i, _)) = anchors.iter().find(|(i, _)| *i >= z.nrows()) {
        return Err(Error::param(format!("anchor index {i} out of range")));
    }
    let src = RMatrix::from_fn(anchors.len(), r, |a, c| z[(anchors[a].0, c)]);
    let dst = RMatrix::from_fn(anchors.len(), r, |a, c| {
        if c == 0 {
            anchors[a].1.x
        } else {
            anchors[a].1.y
        }
    });
    let spread = |m: &RMatrix| {
        let mu = m.row_mean();
        m.row_iter().map(|row| (row - &mu).norm_squared()).sum::<f64>()
    };
    let scale_ref = spread(&dst).max(spread(&src));
    if spread(&src) <= 1e-20 * scale_ref.max(1.0) || spread(&dst) <= 1e-20 * scale_ref.max(1.0) {
        return Err(Error::Degenerate("anchors are coincident".into()));
    }
    let plain = fit_branch(&src, &dst, false)
        .ok_or_else(|| Error::Degenerate("anchor alignment failed".into()))?;
    let mut chosen = plain;
    if allow_reflection {
        let mirrored = fit_branch(&src, &dst, true)
            .ok_or_else(|| Error::Degenerate("anchor alignment failed".into()))?;
        let tol = 1e-9 * spread(&dst);
        if (mirrored.residual - chosen.residual).abs() <= tol {
            if let Some(g) = grid {
                let keep = nearest_distance_sum(&chosen.apply(z), g);
                let flip = nearest_distance_sum(&mirrored.apply(z), g);
                if flip < keep {
                    chosen = mirrored;
                }
            }
            chosen.ambiguous = true;
        } else if mirrored.residual < chosen.residual {
            chosen = mirrored;
        }
    }
    Ok(EmbeddedGrid {
        z: chosen.apply(z),
        spectrum: Vec::new(),
        transform: Some(chosen),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridAssignment {
    /// Grid index assigned to each embedded point.
    pub grid_index: Vec<usize>,
    /// Distance from each embedded point to its assigned grid point.
    pub displacement: Vec<f64>,
    pub total_squared_distance: f64,
}

/// One-to-one assignment of embedded points to grid points minimizing the
/// total squared distance.
pub fn assign_to_grid(points: &RMatrix, grid: &[Point]) -> Result<GridAssignment> {
    let k = points.nrows();
    if points.ncols() != 2 || grid.len() != k {
        return Err(Error::Dimension(format!(
            "{} points of dimension {} vs {} grid points",
            k,
            points.ncols(),
            grid.len()
        )));
    }
    if k == 0 {
        return Ok(GridAssignment {
            grid_index: Vec::new(),
            displacement: Vec::new(),
            total_squared_distance: 0.0,
        });
    }
    let cost = RMatrix::from_fn(k, k, |i, j| {
        (points[(i, 0)] - grid[j].x).powi(2) + (points[(i, 1)] - grid[j].y).powi(2)
    });
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numeric("non-finite embedded coordinates".into()));
    }
    // The solver needs exact arithmetic, so costs are quantized to 2⁻⁴⁰ of
    // the largest one.
    let unit = cost.max().max(f64::MIN_POSITIVE) / (1u64 << 40) as f64;
    let weights = Matrix::from_fn(k, k, |(i, j)| (cost[(i, j)] / unit).round() as i64);
    let (_, grid_index) = kuhn_munkres_min(&weights);
    let displacement: Vec<f64> = grid_index
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[(i, j)].sqrt())
        .collect();
    let total_squared_distance = grid_index.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    Ok(GridAssignment {
        grid_index,
        displacement,
        total_squared_distance,
    })
}

/// Points as a `K × 2` matrix.
pub fn points_matrix(points: &[Point]) -> RMatrix {
    RMatrix::from_fn(points.len(), 2, |i, c| if c == 0 { points[i].x } else { points[i].y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn lattice(n: usize) -> ConnectivityGraph {
        let mut edges = Vec::new();
        for r in 0..n {
            for c in 0..n {
                let i = r * n + c;
                if c + 1 < n {
                    edges.push((i, i + 1));
                }
                if r + 1 < n {
                    edges.push((i, i + n));
                }
            }
        }
        ConnectivityGraph::from_edges(n * n, &edges).unwrap()
    }

    fn procrustes_residual(a: &RMatrix, b: &RMatrix) -> f64 {
        let t = fit_branch(a, b, false).unwrap();
        let m = fit_branch(a, b, true).unwrap();
        t.residual.min(m.residual)
    }

    #[test]
    fn three_columns_all_connected() {
        let cols = CMatrix::from_fn(4, 3, |r, c| Complex64::from_polar(1.0, (r * (c + 1)) as f64));
        let g = build_adjacency(&cols, 1).unwrap();
        for (i, n) in g.neighbors.iter().enumerate() {
            let expect: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            assert_eq!(n, &expect);
        }
        assert!(matches!(build_adjacency(&cols.columns(0, 2).into_owned(), 1), Err(Error::Parameter(_))));
    }

    #[test]
    fn duplicated_columns_pick_each_other_first() {
        let mut cols = CMatrix::from_fn(6, 5, |r, c| Complex64::from_polar(1.0, (r * r * (c + 2)) as f64 * 0.37));
        let c1 = cols.column(1) * Complex64::from_polar(2.0, 0.4);
        cols.set_column(3, &c1);
        let g = build_adjacency(&cols, 1).unwrap();
        assert_eq!(g.proposals[1][0], 3);
        assert_eq!(g.proposals[3][0], 1);
        for (i, n) in g.neighbors.iter().enumerate() {
            assert!(!n.contains(&i));
            for &j in n {
                assert!(g.neighbors[j].contains(&i));
            }
        }
    }

    #[test]
    fn path_and_lattice_hops() {
        let path = ConnectivityGraph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let d = geodesic_distances(&path);
        assert!(d.connected);
        assert_eq!(d.hop(0, 1), Some(1));
        assert_eq!(d.hop(0, 4), Some(4));
        let d = geodesic_distances(&lattice(20));
        assert_eq!(d.hop(0, 399), Some(38));
        assert_eq!(d.hop(19, 380), Some(38));
    }

    #[test]
    fn weighted_lattice_geodesic_is_manhattan() {
        let grid = crate::geometry::ImageGrid::new(4, 3, 2.0, 0.5, Point::new(0.0, 5.0)).unwrap();
        let g = lattice_graph(&grid);
        assert_eq!(g.edge_count(), 3 * 3 + 4 * 2);
        let d = weighted_geodesic_distances(&g, grid.points()).unwrap();
        for i in 0..grid.len() {
            for j in 0..grid.len() {
                let (a, b) = (grid.points()[i], grid.points()[j]);
                let manhattan = (a.x - b.x).abs() + (a.y - b.y).abs();
                assert!((d[(i, j)] - manhattan).abs() < 1e-12);
            }
        }
        let hops = geodesic_distances(&g);
        assert_eq!(hops.hop(0, grid.len() - 1), Some(5));
    }

    #[test]
    fn disconnected_graph_reports_components() {
        let g = ConnectivityGraph::from_edges(5, &[(0, 1), (2, 3), (3, 4)]).unwrap();
        let d = geodesic_distances(&g);
        assert!(!d.connected);
        assert_eq!(d.components, vec![vec![0, 1], vec![2, 3, 4]]);
        assert_eq!(d.hop(0, 3), None);
    }

    #[test]
    fn collinear_points_recovered() {
        let d2 = RMatrix::from_row_slice(3, 3, &[0.0, 1.0, 4.0, 1.0, 0.0, 1.0, 4.0, 1.0, 0.0]);
        let (z, spectrum) = classical_mds(&d2, 1).unwrap();
        let mut coords: Vec<f64> = z.iter().map(|v| v.abs()).collect();
        coords.sort_by(f64::total_cmp);
        assert!((coords[0]).abs() < 1e-12);
        assert!((coords[1] - 1.0).abs() < 1e-12 && (coords[2] - 1.0).abs() < 1e-12);
        assert!((z[(0, 0)] + z[(2, 0)]).abs() < 1e-12);
        assert!(spectrum[1].abs() < 1e-12);
        assert!(matches!(classical_mds(&d2, 2), Err(Error::Rank { needed: 2, found: 1 })));
    }

    #[test]
    fn planar_configuration_recovered() {
        let pts = RMatrix::from_row_slice(5, 2, &[0.0, 0.0, 3.0, 1.0, -1.0, 2.0, 0.5, -2.0, 2.0, 2.5]);
        let d2 = RMatrix::from_fn(5, 5, |i, j| (pts.row(i) - pts.row(j)).norm_squared());
        let (z, _) = classical_mds(&d2, 2).unwrap();
        assert!(procrustes_residual(&z, &pts) < 1e-8);
        // exact up to an orthogonal map: pairwise distances agree
        let back = RMatrix::from_fn(5, 5, |i, j| (z.row(i) - z.row(j)).norm_squared());
        assert!((back - d2).amax() < 1e-10);
    }

    #[test]
    fn square_from_exact_adjacency() {
        let g = ConnectivityGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        let d = geodesic_distances(&g);
        let (z, _) = classical_mds(&d.as_mds_input(true), 2).unwrap();
        let side: Vec<f64> = [(0, 1), (1, 2), (2, 3), (3, 0)]
            .iter()
            .map(|&(a, b)| (z.row(a) - z.row(b)).norm())
            .collect();
        let diag = [(z.row(0) - z.row(2)).norm(), (z.row(1) - z.row(3)).norm()];
        for s in &side {
            assert!((s - side[0]).abs() < 1e-10);
        }
        assert!((diag[0] - diag[1]).abs() < 1e-10);
        assert!((diag[0] - side[0] * 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn self_anchors_give_identity() {
        let z = RMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 1.0]);
        let anchors: Vec<(usize, Point)> = (0..3).map(|i| (i, Point::new(z[(i, 0)], z[(i, 1)]))).collect();
        let e = anchor_align(&z, &anchors, true, None).unwrap();
        let t = e.transform.unwrap();
        assert!(t.residual < 1e-20);
        assert!((t.scale - 1.0).abs() < 1e-12);
        assert!(!t.reflected);
        assert!((e.z - z).norm() < 1e-12);
    }

    #[test]
    fn rotated_scaled_configuration_inverted() {
        let truth = RMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 2.0, 3.0, 1.0]);
        // rotate by +90° and scale by 3, then shift
        let z = RMatrix::from_fn(4, 2, |i, c| {
            if c == 0 {
                -3.0 * truth[(i, 1)] + 5.0
            } else {
                3.0 * truth[(i, 0)] - 1.0
            }
        });
        let anchors: Vec<(usize, Point)> = (0..3).map(|i| (i, Point::new(truth[(i, 0)], truth[(i, 1)]))).collect();
        let e = anchor_align(&z, &anchors, true, None).unwrap();
        let t = e.transform.unwrap();
        assert!((t.scale - 1.0 / 3.0).abs() < 1e-12);
        // rotation by -90°: [[0, 1], [-1, 0]]
        assert!((t.rotation[(0, 1)] - 1.0).abs() < 1e-12 && (t.rotation[(1, 0)] + 1.0).abs() < 1e-12);
        assert!(t.residual < 1e-10);
        assert!((e.z - truth).norm() < 1e-10);
    }

    #[test]
    fn mirrored_configuration_selects_reflection() {
        let truth = RMatrix::from_row_slice(5, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 1.0, 1.0, 3.0, -1.0, 1.5]);
        let z = RMatrix::from_fn(5, 2, |i, c| if c == 0 { -truth[(i, 0)] } else { truth[(i, 1)] });
        let anchors: Vec<(usize, Point)> = (0..3).map(|i| (i, Point::new(truth[(i, 0)], truth[(i, 1)]))).collect();
        let plain = fit_branch(&z.rows(0, 3).into_owned(), &truth.rows(0, 3).into_owned(), false).unwrap();
        let mirror = fit_branch(&z.rows(0, 3).into_owned(), &truth.rows(0, 3).into_owned(), true).unwrap();
        assert!(mirror.residual < 1e-20 && plain.residual > 1e-3);
        let e = anchor_align(&z, &anchors, true, None).unwrap();
        assert!(e.transform.as_ref().unwrap().reflected);
        assert!((e.z - &truth).norm() < 1e-10);
        let e = anchor_align(&z, &anchors, false, None).unwrap();
        assert!(!e.transform.unwrap().reflected);
    }

    #[test]
    fn two_anchors_resolve_mirror_with_grid() {
        let grid: Vec<Point> = (0..9).map(|i| Point::new((i % 3) as f64, (i / 3) as f64 * 1.5)).collect();
        let truth = points_matrix(&grid);
        // mirror across the x axis; anchors on the axis of symmetry of neither branch
        let z = RMatrix::from_fn(9, 2, |i, c| if c == 1 { -truth[(i, 1)] } else { truth[(i, 0)] });
        let anchors = vec![(0, grid[0]), (4, grid[4])];
        let e = anchor_align(&z, &anchors, true, Some(&grid)).unwrap();
        let t = e.transform.unwrap();
        assert!(t.ambiguous && t.reflected);
        assert!((e.z - truth).norm() < 1e-10);
        let e = anchor_align(&z, &anchors, true, None).unwrap();
        assert!(!e.transform.unwrap().reflected);
    }

    #[test]
    fn coincident_anchors_rejected() {
        let z = RMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let anchors = vec![(0, Point::new(0.0, 0.0)), (1, Point::new(1.0, 0.0))];
        assert!(matches!(anchor_align(&z, &anchors, true, None), Err(Error::Degenerate(_))));
    }

    fn brute_force(points: &RMatrix, grid: &[Point]) -> f64 {
        fn rec(i: usize, used: &mut Vec<bool>, acc: f64, points: &RMatrix, grid: &[Point], best: &mut f64) {
            if i == grid.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..grid.len() {
                if !used[j] {
                    used[j] = true;
                    let c = (points[(i, 0)] - grid[j].x).powi(2) + (points[(i, 1)] - grid[j].y).powi(2);
                    rec(i + 1, used, acc + c, points, grid, best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut vec![false; grid.len()], 0.0, points, grid, &mut best);
        best
    }

    #[test]
    fn assignment_identity_jitter_and_swap() {
        let grid: Vec<Point> = (0..8).map(|i| Point::new((i % 4) as f64, (i / 4) as f64)).collect();
        let exact = assign_to_grid(&points_matrix(&grid), &grid).unwrap();
        assert_eq!(exact.grid_index, (0..8).collect::<Vec<_>>());
        assert_eq!(exact.total_squared_distance, 0.0);

        let jitter = RMatrix::from_fn(8, 2, |i, c| {
            let p = grid[i];
            (if c == 0 { p.x } else { p.y }) + 0.3 * ((i * 7 + c * 3) as f64).sin()
        });
        assert_eq!(assign_to_grid(&jitter, &grid).unwrap().grid_index, (0..8).collect::<Vec<_>>());

        let mut swapped = points_matrix(&grid);
        swapped.swap_rows(0, 7);
        let a = assign_to_grid(&swapped, &grid).unwrap();
        assert_eq!(a.grid_index[0], 7);
        assert_eq!(a.grid_index[7], 0);
        for (pts, name) in [(&jitter, "jitter"), (&swapped, "swap")] {
            let a = assign_to_grid(pts, &grid).unwrap();
            assert!((a.total_squared_distance - brute_force(pts, &grid)).abs() < 1e-9, "{name}");
        }
    }
}
