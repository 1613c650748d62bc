//! Alternating sparse coding / MOD dictionary learning.

use std::time::Instant;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::l1::{solve_l1_gram, solve_penalized_gram, GramOperator, L1SolverParams};
use super::mod_update::mod_update;
use crate::error::{Error, Result};
use crate::seed::{rng_for, LABEL_INIT};
use crate::{CMatrix, CVector};

/// How the alternation is started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitStrategy {
    /// `K` distinct normalized data columns picked by a farthest-point sweep
    /// on the correlation distance, starting from sample 0.
    DataFarthestPoint,
    /// The true dictionary plus complex Gaussian noise of relative size
    /// `noise` per column. Only meaningful when the truth is known.
    PerturbedTruth { noise: f64, seed: u64 },
}

impl Default for InitStrategy {
    fn default() -> Self {
        Self::DataFarthestPoint
    }
}

/// Sparse-coding step used inside the alternation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CodingStrategy {
    /// Equality-constrained ℓ1 (`Dx = y`).
    Equality(L1SolverParams),
    /// Penalized ℓ1 with `τ = tau_rel · max|D*y|` per sample.
    Penalized { tau_rel: f64, max_iters: usize },
}

impl Default for CodingStrategy {
    fn default() -> Self {
        Self::Penalized {
            tau_rel: 0.2,
            max_iters: 300,
        }
    }
}

/// Re-seeding of atoms that the codes stop using. Rarely used atoms are
/// replaced by normalized residuals of the worst-fitted samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtomRefresh {
    pub enabled: bool,
    /// An atom is rare when used by fewer than this fraction of the median
    /// atom's samples.
    pub usage_fraction: f64,
    /// Alternations an atom is left alone after being replaced.
    pub grace: usize,
    /// No replacement in the final alternations, so the last ones only polish.
    pub quiet_tail: usize,
    /// A candidate is rejected if it correlates more than this with a kept atom.
    pub max_corr_kept: f64,
    /// ... or more than this with another replacement chosen in the same pass.
    pub max_corr_chosen: f64,
    /// Two atoms correlated above this are near duplicates; the less used one
    /// is treated as rare.
    pub duplicate_corr: Option<f64>,
    /// Expected number of active atoms per sample. When set, candidates are
    /// ranked by the residual of a refit on only that many largest
    /// coefficients, which exposes samples that lean on combinations of
    /// neighbouring atoms to stand in for a missing one.
    pub sparsity_hint: Option<usize>,
    /// Two atoms that co-occur in at least this many samples, and at least
    /// `pair_excess` times as often as independent use predicts, are taken
    /// to stand in jointly for a missing atom. `0` disables pair candidates.
    pub pair_min_count: usize,
    pub pair_excess: f64,
    /// Pair candidates may correlate up to this much with kept atoms; being
    /// blends of two neighbours they sit closer to them than residuals do.
    pub pair_max_corr_kept: f64,
}

impl Default for AtomRefresh {
    fn default() -> Self {
        Self {
            enabled: true,
            usage_fraction: 0.3,
            grace: 5,
            quiet_tail: 10,
            max_corr_kept: 0.8,
            max_corr_chosen: 0.5,
            duplicate_corr: Some(0.99),
            sparsity_hint: None,
            pair_min_count: 4,
            pair_excess: 3.0,
            pair_max_corr_kept: 0.97,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnOptions {
    pub coding: CodingStrategy,
    pub init: InitStrategy,
    pub refresh: AtomRefresh,
    pub max_alternations: usize,
    pub obj_tol: f64,
    /// Objective increases larger than `increase_slack · ‖Y‖_F²` count
    /// towards the abort rule. `None` picks `1e-6` for equality coding and
    /// `1e-3` for penalized coding, whose shrinkage bias makes the
    /// least-squares objective drift at that level.
    pub increase_slack: Option<f64>,
    /// Final alternations whose codes are refit by least squares on their
    /// support before the dictionary update. They are part of
    /// `max_alternations`; the phase starts early if the objective settles.
    pub debias_tail: usize,
}

impl Default for LearnOptions {
    fn default() -> Self {
        Self {
            coding: CodingStrategy::default(),
            init: InitStrategy::default(),
            refresh: AtomRefresh::default(),
            max_alternations: 50,
            obj_tol: 1e-5,
            increase_slack: None,
            debias_tail: 5,
        }
    }
}

/// Diagnostics of one alternation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternationRecord {
    pub iteration: usize,
    /// `‖D X - Y‖_F²` after the dictionary update.
    pub objective: f64,
    pub condition: f64,
    pub regularized: bool,
    pub unused_atoms: Vec<usize>,
    pub refreshed_atoms: Vec<usize>,
    pub mean_nonzeros: f64,
    pub unconverged_samples: usize,
    /// Codes were refit on their support before the update.
    pub debiased: bool,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct LearnedDictionary {
    /// Unit-norm columns.
    pub d_hat: CMatrix,
    pub history: Vec<f64>,
    pub iterations_run: usize,
    pub records: Vec<AlternationRecord>,
    /// Codes of the last alternation, rescaled to the normalized dictionary.
    pub codes: CMatrix,
}

/// Normalize every column to unit length. Zero columns are an error.
pub fn normalize_unit_columns(d: &mut CMatrix) -> Result<()> {
    for (j, mut col) in d.column_iter_mut().enumerate() {
        let n = col.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::Degenerate(format!("column {j} has norm {n}")));
        }
        col.unscale_mut(n);
    }
    Ok(())
}

fn farthest_point_columns(y: &CMatrix, k: usize) -> Result<CMatrix> {
    let mut yn = y.clone();
    normalize_unit_columns(&mut yn)
        .map_err(|e| Error::Degenerate(format!("data for initialization: {e}")))?;
    let m = yn.ncols();
    let mut chosen = vec![0usize];
    let mut nearest: Vec<f64> = (0..m)
        .map(|j| yn.column(j).dotc(&yn.column(0)).norm())
        .collect();
    while chosen.len() < k {
        let (next, &c) = nearest
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty");
        if c >= 1.0 - 1e-12 {
            return Err(Error::Degenerate(format!(
                "only {} distinct data directions, need {k}",
                chosen.len()
            )));
        }
        chosen.push(next);
        let col = yn.column(next).into_owned();
        nearest
            .par_iter_mut()
            .enumerate()
            .for_each(|(j, v)| *v = v.max(yn.column(j).dotc(&col).norm()));
    }
    Ok(yn.select_columns(&chosen))
}

fn perturbed(truth: &CMatrix, noise: f64, seed: u64) -> Result<CMatrix> {
    let mut rng = rng_for(seed, LABEL_INIT);
    let mut d = truth.clone();
    normalize_unit_columns(&mut d)?;
    let scale = noise / (2.0 * d.nrows() as f64).sqrt();
    for mut col in d.column_iter_mut() {
        for v in col.iter_mut() {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *v += Complex64::new(re, im) * scale;
        }
    }
    normalize_unit_columns(&mut d)?;
    Ok(d)
}

/// Initial dictionary for the given strategy. `truth` is required by
/// [`InitStrategy::PerturbedTruth`].
pub fn initial_dictionary(
    y: &CMatrix,
    k: usize,
    init: &InitStrategy,
    truth: Option<&CMatrix>,
) -> Result<CMatrix> {
    match init {
        InitStrategy::DataFarthestPoint => {
            if y.ncols() < k {
                return Err(Error::param(format!(
                    "{} samples cannot seed {k} atoms",
                    y.ncols()
                )));
            }
            farthest_point_columns(y, k)
        }
        InitStrategy::PerturbedTruth { noise, seed } => {
            let t = truth.ok_or_else(|| Error::param("perturbed-truth init needs the true matrix"))?;
            if t.ncols() != k || t.nrows() != y.nrows() {
                return Err(Error::Dimension(format!(
                    "truth is {}x{}, expected {}x{k}",
                    t.nrows(),
                    t.ncols(),
                    y.nrows()
                )));
            }
            perturbed(t, *noise, *seed)
        }
    }
}

struct Coded {
    x: CMatrix,
    unconverged: usize,
}

fn code_all(d: &CMatrix, y: &CMatrix, coding: &CodingStrategy) -> Result<Coded> {
    let op = GramOperator::new(d)?;
    let b = d.adjoint() * y;
    let k = d.ncols();
    let cols: Vec<Result<(Vec<Complex64>, bool)>> = (0..y.ncols())
        .into_par_iter()
        .map(|j| {
            let bj = b.column(j);
            match coding {
                CodingStrategy::Equality(p) => {
                    let s = solve_l1_gram(&op, bj.as_slice(), y.column(j).norm_squared(), p)?;
                    Ok((s.x.as_slice().to_vec(), s.converged))
                }
                CodingStrategy::Penalized { tau_rel, max_iters } => {
                    let x = solve_penalized_gram(&op, bj.as_slice(), *tau_rel, *max_iters)?;
                    Ok((x.as_slice().to_vec(), true))
                }
            }
        })
        .collect();
    let mut x = CMatrix::zeros(k, y.ncols());
    let mut unconverged = 0;
    for (j, c) in cols.into_iter().enumerate() {
        let (v, ok) = c?;
        x.column_mut(j).copy_from_slice(&v);
        unconverged += usize::from(!ok);
    }
    Ok(Coded { x, unconverged })
}

fn check_coding(coding: &CodingStrategy) -> Result<()> {
    match coding {
        CodingStrategy::Equality(p) => p.validate(),
        CodingStrategy::Penalized { tau_rel, max_iters } => {
            if !(*tau_rel > 0.0 && *tau_rel < 1.0) {
                return Err(Error::param(format!("tau_rel must lie in (0, 1), got {tau_rel}")));
            }
            if *max_iters == 0 {
                return Err(Error::param("coding max_iters must be positive"));
            }
            Ok(())
        }
    }
}

/// Codes refit by least squares on the support of `x`, column by column.
///
/// Penalized codes are shrunk. The shrinkage leaves a uniform bias in
/// `D X - Y` that hides the samples whose content the dictionary genuinely
/// lacks, and it pulls the MOD update towards the atoms' neighbours. The refit
/// keeps the support and removes the bias.
fn support_refit(d: &CMatrix, x: &CMatrix, y: &CMatrix, max_support: Option<usize>) -> CMatrix {
    let xmax = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let cols: Vec<Vec<Complex64>> = (0..y.ncols())
        .into_par_iter()
        .map(|j| {
            let mut out = x.column(j).as_slice().to_vec();
            let mut support: Vec<usize> =
                (0..x.nrows()).filter(|&i| x[(i, j)].norm() > 1e-3 * xmax).collect();
            if support.is_empty() {
                return out;
            }
            if let Some(cap) = max_support.filter(|&c| c > 0 && c < support.len()) {
                support.sort_by(|&a, &b| x[(b, j)].norm().total_cmp(&x[(a, j)].norm()).then(a.cmp(&b)));
                support.truncate(cap);
                support.sort_unstable();
            }
            let ds = d.select_columns(&support);
            if let Some(ch) = (ds.adjoint() * &ds).cholesky() {
                let c = ch.solve(&(ds.adjoint() * y.column(j)));
                out.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
                for (&i, v) in support.iter().zip(c.iter()) {
                    out[i] = *v;
                }
            }
            out
        })
        .collect();
    let mut r = CMatrix::zeros(x.nrows(), x.ncols());
    for (j, c) in cols.iter().enumerate() {
        r.column_mut(j).copy_from_slice(c);
    }
    r
}

/// Directions that over-represented atom pairs jointly encode.
///
/// Under the sparse model two atoms meet in a sample about `n_a n_b / M`
/// times. A pair meeting far more often usually stands in for one missing
/// atom: its partial reconstruction `d_a x_aj + d_b x_bj` then points along
/// the missing column, and the leading singular vector of those
/// reconstructions estimates it. Candidates come out strongest pair first.
fn pair_candidates(d: &CMatrix, x: &CMatrix, active: &[usize], cfg: &AtomRefresh) -> Vec<CVector> {
    if cfg.pair_min_count == 0 {
        return Vec::new();
    }
    let (k, m) = x.shape();
    // Support of each sample: coefficients within a tenth of its largest.
    let supports: Vec<Vec<usize>> = (0..m)
        .map(|j| {
            let top = x.column(j).iter().map(|v| v.norm()).fold(0.0, f64::max);
            active.iter().copied().filter(|&i| top > 0.0 && x[(i, j)].norm() >= 0.1 * top).collect()
        })
        .collect();
    let mut usage = vec![0usize; k];
    let mut together: std::collections::BTreeMap<(usize, usize), Vec<usize>> = Default::default();
    for (j, sup) in supports.iter().enumerate() {
        for (p, &a) in sup.iter().enumerate() {
            usage[a] += 1;
            for &b in &sup[p + 1..] {
                together.entry((a, b)).or_default().push(j);
            }
        }
    }
    let mut pairs: Vec<(f64, (usize, usize), Vec<usize>)> = together
        .into_iter()
        .filter_map(|((a, b), js)| {
            let expected = (usage[a] * usage[b]) as f64 / m as f64;
            let n = js.len();
            (n >= cfg.pair_min_count && n as f64 >= cfg.pair_excess * expected.max(1.0))
                .then(|| (n as f64 - expected, (a, b), js))
        })
        .collect();
    pairs.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
    pairs
        .into_iter()
        .filter_map(|(_, (a, b), js)| {
            let blend = CMatrix::from_fn(d.nrows(), js.len(), |r, c| {
                d[(r, a)] * x[(a, js[c])] + d[(r, b)] * x[(b, js[c])]
            });
            let svd = blend.svd(true, false);
            let lead = svd.singular_values.iter().enumerate().max_by(|p, q| p.1.total_cmp(q.1))?.0;
            let u = svd.u?.column(lead).into_owned();
            let n = u.norm();
            (n > 0.0).then(|| u.unscale(n))
        })
        .collect()
}

/// Replace rarely used atoms; returns the replaced indices.
fn refresh_atoms(
    d: &mut CMatrix,
    x: &CMatrix,
    residual: &CMatrix,
    y_norms: &[f64],
    cfg: &AtomRefresh,
    iteration: usize,
    last_refresh: &mut [Option<usize>],
) -> Vec<usize> {
    let k = d.ncols();
    let xmax = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if xmax == 0.0 {
        return Vec::new();
    }
    let usage: Vec<usize> = (0..k)
        .map(|i| x.row(i).iter().filter(|v| v.norm() > 1e-3 * xmax).count())
        .collect();
    let mut sorted = usage.clone();
    sorted.sort_unstable();
    let median = if k % 2 == 1 {
        sorted[k / 2] as f64
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2]) as f64
    };
    let mut flagged: Vec<bool> = usage
        .iter()
        .map(|&u| (u as f64) < cfg.usage_fraction * median)
        .collect();
    if let Some(limit) = cfg.duplicate_corr {
        let gram = d.adjoint() * &*d;
        for i in 0..k {
            for j in 0..i {
                if gram[(i, j)].norm() > limit {
                    let weaker = if usage[i] < usage[j] || (usage[i] == usage[j] && i > j) { i } else { j };
                    flagged[weaker] = true;
                }
            }
        }
    }
    let rare: Vec<usize> = (0..k)
        .filter(|&i| flagged[i] && last_refresh[i].is_none_or(|l| iteration - l >= cfg.grace))
        .collect();
    if rare.is_empty() {
        return rare;
    }
    let kept: Vec<usize> = (0..k).filter(|i| !rare.contains(i)).collect();
    let d_kept = d.select_columns(&kept);

    let rel: Vec<f64> = residual
        .column_iter()
        .zip(y_norms)
        .map(|(c, &n)| if n > 0.0 { c.norm() / n } else { 0.0 })
        .collect();
    let mut order: Vec<usize> = (0..rel.len()).collect();
    order.sort_by(|&a, &b| rel[b].total_cmp(&rel[a]).then(a.cmp(&b)));

    let mut chosen: Vec<CVector> = Vec::new();
    for v in pair_candidates(d, x, &kept, cfg) {
        if chosen.len() == rare.len() {
            break;
        }
        let kept_corr = (d_kept.adjoint() * &v).iter().map(|c| c.norm()).fold(0.0, f64::max);
        if kept_corr > cfg.pair_max_corr_kept || chosen.iter().any(|c| c.dotc(&v).norm() > cfg.max_corr_chosen) {
            continue;
        }
        chosen.push(v);
    }
    for j in order {
        if chosen.len() == rare.len() {
            break;
        }
        let n = residual.column(j).norm();
        if !(n > 0.0) {
            continue;
        }
        let v = residual.column(j) / Complex64::new(n, 0.0);
        let kept_corr = (d_kept.adjoint() * &v).iter().map(|c| c.norm()).fold(0.0, f64::max);
        if kept_corr > cfg.max_corr_kept {
            continue;
        }
        if chosen.iter().any(|c| c.dotc(&v).norm() > cfg.max_corr_chosen) {
            continue;
        }
        chosen.push(v);
    }
    let mut replaced = Vec::with_capacity(chosen.len());
    for (&i, v) in rare.iter().zip(&chosen) {
        d.set_column(i, v);
        last_refresh[i] = Some(iteration);
        replaced.push(i);
    }
    replaced
}

/// Learn a `K`-atom dictionary from the columns of `y`.
///
/// Each alternation codes all samples against the current dictionary, solves
/// the MOD least-squares update for the atoms in use, normalizes, and
/// optionally re-seeds rarely used atoms. The objective recorded is
/// `‖D X - Y‖_F²` after the update (invariant under the normalization, since
/// the codes are rescaled alongside).
pub fn learn(
    y: &CMatrix,
    k: usize,
    opts: &LearnOptions,
    truth: Option<&CMatrix>,
) -> Result<LearnedDictionary> {
    check_coding(&opts.coding)?;
    if k == 0 || y.ncols() == 0 || y.nrows() == 0 {
        return Err(Error::param("empty data or dictionary size"));
    }
    if !(opts.obj_tol >= 0.0) {
        return Err(Error::param("obj_tol must be nonnegative"));
    }
    if y.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numeric("data has non-finite entries".into()));
    }
    let m = y.ncols();
    if (m as f64) <= k as f64 * (k as f64).ln() {
        log::warn!(
            "{m} samples for {k} atoms is below the K ln K = {:.0} sufficiency level",
            k as f64 * (k as f64).ln()
        );
    }
    let y_norm_sq = y.norm_squared();
    let slack = y_norm_sq
        * opts.increase_slack.unwrap_or(match opts.coding {
            CodingStrategy::Equality(_) => 1e-6,
            CodingStrategy::Penalized { .. } => 1e-3,
        });
    let y_norms: Vec<f64> = y.column_iter().map(|c| c.norm()).collect();

    let mut d = initial_dictionary(y, k, &opts.init, truth)?;
    let mut history = Vec::new();
    let mut records = Vec::new();
    let mut last_refresh = vec![None; k];
    let mut increases = 0usize;
    let mut best = f64::INFINITY;
    let mut codes = CMatrix::zeros(k, m);

    let tail = opts.debias_tail.min(opts.max_alternations);
    // First alternation of the debiasing phase, once it has begun.
    let mut debias_from: Option<usize> = None;

    for it in 0..opts.max_alternations {
        let t0 = Instant::now();
        if debias_from.is_none() && tail > 0 && it + tail >= opts.max_alternations {
            debias_from = Some(it);
        }
        let debiased = debias_from.is_some();
        let coded = code_all(&d, y, &opts.coding)?;
        let mut x = coded.x;
        let cfg = &opts.refresh;
        let may_refresh = !debiased && cfg.enabled && it + cfg.quiet_tail < opts.max_alternations;
        let residual = may_refresh.then(|| &d * support_refit(&d, &x, y, cfg.sparsity_hint) - y);
        if debiased {
            x = support_refit(&d, &x, y, None);
        }

        let upd = mod_update(&x, y)?;
        for (i, col) in upd.d.column_iter().enumerate() {
            if upd.unused_atoms.contains(&i) {
                continue;
            }
            let n = col.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Numeric(format!("MOD produced atom {i} with norm {n}")));
            }
            d.column_mut(i).copy_from(&col);
            d.column_mut(i).unscale_mut(n);
            x.row_mut(i).scale_mut(n);
        }
        let objective = (&d * &x - y).norm_squared();

        let refreshed = match &residual {
            Some(r) => refresh_atoms(&mut d, &x, r, &y_norms, cfg, it, &mut last_refresh),
            None => Vec::new(),
        };
        let nnz = x.iter().filter(|v| v.norm_sqr() > 0.0).count() as f64 / m as f64;
        records.push(AlternationRecord {
            iteration: it,
            objective,
            condition: upd.condition,
            regularized: upd.regularized,
            unused_atoms: upd.unused_atoms,
            refreshed_atoms: refreshed.clone(),
            mean_nonzeros: nnz,
            unconverged_samples: coded.unconverged,
            debiased,
            seconds: t0.elapsed().as_secs_f64(),
        });
        log::debug!(
            "alternation {it}: objective {:.6e}, nnz {nnz:.2}, refreshed {}",
            objective / y_norm_sq,
            refreshed.len()
        );
        let prev = history.last().copied();
        history.push(objective);
        codes = x;

        if let Some(start) = debias_from {
            if it + 1 >= start + tail {
                break;
            }
            // The refit lowers the objective by construction; no
            // convergence or increase bookkeeping across the phase change.
            continue;
        }
        if let Some(p) = prev {
            if refreshed.is_empty() && objective > p + slack {
                increases += 1;
                if increases >= 3 {
                    return Err(Error::ObjectiveIncrease {
                        consecutive: increases,
                        last: objective,
                        best,
                    });
                }
            } else {
                increases = 0;
            }
            best = best.min(objective);
            let rel_change = (p - objective).abs() / p.max(f64::MIN_POSITIVE);
            if refreshed.is_empty() && rel_change < opts.obj_tol {
                if tail == 0 {
                    break;
                }
                debias_from = Some(it + 1);
            }
        } else {
            best = objective;
        }
    }
    // Replacement vectors are unit norm already; the update columns are
    // normalized above. Renormalize once more so the invariant holds to
    // rounding regardless of path.
    normalize_unit_columns(&mut d)?;
    Ok(LearnedDictionary {
        d_hat: d,
        iterations_run: history.len(),
        history,
        records,
        codes,
    })
}
