//! Grid discretisation of the feasibility program solved by
//! Lawson–Hanson non-negative least squares, grid refinement and spike
//! extraction.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{min_separation, DiscreteMeasure};
use crate::window::{phi_matrix, Measurement, SamplingScheme};

/// Dual-feasibility tolerance on `aⱼᵀr / (‖aⱼ‖ ‖r‖)`.
pub const DUAL_TOL: f64 = 1e-12;
/// Round-off floor for dual values, in units of `ε_mach ‖Φᵀ‖ ‖y‖`.
const ROUNDOFF_FLOOR: f64 = 2.0 * f64::EPSILON;
/// Slack added to δ' when declaring a grid solution feasible.
pub const FEASIBILITY_SLACK: f64 = 1e-9;
/// Default number of grid cells.
pub const DEFAULT_RESOLUTION: usize = 2000;
/// Default number of refinement levels.
pub const DEFAULT_LEVELS: usize = 2;
/// Subdivision factor per refinement level.
pub const REFINE_FACTOR: usize = 10;

/// Non-negative weights on a sorted grid of points in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GriddedMeasure {
    /// Grid points in increasing order.
    pub grid: Vec<f64>,
    /// Weights, one per grid point, all `≥ 0`.
    pub weights: Vec<f64>,
    /// Cell width of the finest level that produced this grid.
    pub cell_width: f64,
}

impl GriddedMeasure {
    /// Indices of strictly positive weights.
    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    /// One atom per positive cell.
    pub fn to_discrete(&self) -> DiscreteMeasure {
        let s = self.support();
        DiscreteMeasure::new(s.iter().map(|&i| self.grid[i]).collect(), s.iter().map(|&i| self.weights[i]).collect())
            .expect("grid points lie in (0,1) and weights are positive")
    }

    /// Total mass.
    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Diagnostics of a grid solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    /// `‖y − Φz‖₂`.
    pub residual: f64,
    /// The program's constraint level δ'.
    pub delta_prime: f64,
    /// `residual ≤ δ' + FEASIBILITY_SLACK`.
    pub feasible: bool,
    /// Outer active-set iterations.
    pub iterations: usize,
    /// Number of grid points.
    pub grid_resolution: usize,
    /// Size of the final passive set.
    pub active_set_size: usize,
    /// Largest positive entry of `Φᵀ(y − Φz)` over zero coordinates.
    pub dual_violation: f64,
}

/// Result of an NNLS solve on an explicit matrix.
#[derive(Debug, Clone)]
pub struct NnlsSolution {
    /// Minimiser.
    pub x: Vec<f64>,
    /// Residual norm.
    pub residual: f64,
    /// Outer iterations.
    pub iterations: usize,
    /// Passive-set size.
    pub passive: usize,
    /// Largest positive dual value on zero coordinates.
    pub dual_violation: f64,
}

/// Least squares on the columns `cols` of `a`, by Householder QR with
/// column pivoting. Numerically dependent columns receive zero.
fn least_squares(a: &DMatrix<f64>, cols: &[usize], y: &DVector<f64>) -> Vec<f64> {
    let m = a.nrows();
    let p = cols.len();
    let mut r = DMatrix::from_fn(m, p, |i, j| a[(i, cols[j])]);
    let mut b = y.clone();
    let mut perm: Vec<usize> = (0..p).collect();
    let mut norms: Vec<f64> = (0..p).map(|j| r.column(j).norm_squared()).collect();
    let steps = m.min(p);
    let mut rank = 0;
    let mut r00 = 0.0f64;
    for k in 0..steps {
        let (piv, _) = norms[k..]
            .iter()
            .enumerate()
            .fold((k, -1.0), |acc, (i, &v)| if v > acc.1 { (k + i, v) } else { acc });
        if piv != k {
            r.swap_columns(piv, k);
            perm.swap(piv, k);
            norms.swap(piv, k);
        }
        let mut x = r.view((k, k), (m - k, 1)).clone_owned();
        let alpha = x.norm();
        if k == 0 {
            r00 = alpha;
        }
        if alpha <= 1e-14 * r00 || alpha == 0.0 {
            break;
        }
        let sign = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        x[0] += sign * alpha;
        let vnorm2 = x.norm_squared();
        for j in k..p {
            let dot: f64 = (0..m - k).map(|i| x[i] * r[(k + i, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for i in 0..m - k {
                r[(k + i, j)] -= f * x[i];
            }
        }
        let dot: f64 = (0..m - k).map(|i| x[i] * b[k + i]).sum();
        let f = 2.0 * dot / vnorm2;
        for i in 0..m - k {
            b[k + i] -= f * x[i];
        }
        for j in k + 1..p {
            norms[j] = (k + 1..m).map(|i| r[(i, j)] * r[(i, j)]).sum();
        }
        rank = k + 1;
    }
    let mut z = vec![0.0; rank];
    for i in (0..rank).rev() {
        let mut acc = b[i];
        for j in i + 1..rank {
            acc -= r[(i, j)] * z[j];
        }
        z[i] = acc / r[(i, i)];
    }
    let mut out = vec![0.0; p];
    for i in 0..rank {
        out[perm[i]] = z[i];
    }
    out
}

fn residual_of(a: &DMatrix<f64>, x: &[f64], y: &DVector<f64>) -> DVector<f64> {
    let mut r = y.clone();
    for (j, &xj) in x.iter().enumerate() {
        if xj != 0.0 {
            r.axpy(-xj, &a.column(j), 1.0);
        }
    }
    r
}

/// Lawson–Hanson active-set NNLS: `min ‖a x − y‖₂` subject to `x ≥ 0`.
///
/// The entering index is the largest dual value, lowest index on ties.
pub fn nnls(a: &DMatrix<f64>, y: &[f64], max_iter: usize) -> Result<NnlsSolution> {
    let n = a.ncols();
    let y = DVector::from_column_slice(y);
    let col_norm = (0..n).map(|j| a.column(j).norm()).fold(0.0, f64::max);
    let floor = ROUNDOFF_FLOOR * col_norm * y.norm();
    let mut x = vec![0.0; n];
    let mut passive = vec![false; n];
    let mut blocked = vec![false; n];
    let mut iterations = 0;
    loop {
        let r = residual_of(a, &x, &y);
        let w = a.transpose() * &r;
        let tol = (DUAL_TOL * col_norm * r.norm()).max(floor).max(f64::MIN_POSITIVE);
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if !passive[j] && !blocked[j] && w[j] > tol && best.is_none_or(|(_, v)| w[j] > v) {
                best = Some((j, w[j]));
            }
        }
        let Some((enter, _)) = best else {
            let dual_violation = (0..n).filter(|&j| !passive[j]).map(|j| w[j]).fold(0.0, f64::max);
            return Ok(NnlsSolution {
                residual: r.norm(),
                passive: passive.iter().filter(|&&p| p).count(),
                x,
                iterations,
                dual_violation,
            });
        };
        iterations += 1;
        if iterations > max_iter {
            let residual = r.norm();
            return Err(Error::NotConverged { iterations: max_iter, residual, best: x });
        }
        let (x_prev, passive_prev, res_prev) = (x.clone(), passive.clone(), r.norm());
        passive[enter] = true;
        let mut first = true;
        loop {
            let cols: Vec<usize> = (0..n).filter(|&j| passive[j]).collect();
            let s = least_squares(a, &cols, &y);
            if s.iter().all(|&v| v > 0.0) {
                for (c, v) in cols.iter().zip(&s) {
                    x[*c] = *v;
                }
                break;
            }
            if first {
                if let Some(pos) = cols.iter().position(|&c| c == enter) {
                    if s[pos] <= 0.0 && cols.iter().zip(&s).all(|(&c, &v)| c == enter || v > 0.0) {
                        passive[enter] = false;
                        blocked[enter] = true;
                        break;
                    }
                }
            }
            first = false;
            let mut alpha = f64::INFINITY;
            for (c, v) in cols.iter().zip(&s) {
                if *v <= 0.0 {
                    let denom = x[*c] - v;
                    if denom > 0.0 {
                        alpha = alpha.min(x[*c] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            for (c, v) in cols.iter().zip(&s) {
                x[*c] += alpha * (v - x[*c]);
            }
            let xmax = x.iter().copied().fold(0.0, f64::max);
            for &c in &cols {
                if x[c] <= 1e-15 * xmax {
                    x[c] = 0.0;
                    passive[c] = false;
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
        // Exact arithmetic decreases the residual every outer step; a step
        // that does not is undone and its index blocked, which prevents
        // cycling among near-collinear columns.
        if blocked[enter] {
            continue;
        }
        if residual_of(a, &x, &y).norm() < res_prev {
            blocked.iter_mut().for_each(|b| *b = false);
        } else {
            x = x_prev;
            passive = passive_prev;
            blocked[enter] = true;
        }
    }
}

/// Cell-centre grid `(i + offset)/n`, `offset ∈ (0, 1)`.
pub fn uniform_grid(n: usize, offset: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + offset) / n as f64).collect()
}

fn solve_on(
    measurement: &Measurement,
    scheme: &SamplingScheme,
    grid: Vec<f64>,
    cell_width: f64,
    order: Option<&[usize]>,
) -> Result<(GriddedMeasure, SolveReport)> {
    let n = grid.len();
    let cols: Vec<f64> = match order {
        Some(p) => p.iter().map(|&i| grid[i]).collect(),
        None => grid.clone(),
    };
    let a = phi_matrix(scheme, &cols);
    let sol = nnls(&a, &measurement.values, 50 * n)?;
    let mut weights = vec![0.0; n];
    match order {
        Some(p) => {
            for (k, &i) in p.iter().enumerate() {
                weights[i] = sol.x[k];
            }
        }
        None => weights.copy_from_slice(&sol.x),
    }
    debug_assert!(weights.iter().all(|&w| w >= 0.0));
    let delta_prime = measurement.noise_level;
    let report = SolveReport {
        residual: sol.residual,
        delta_prime,
        feasible: sol.residual <= delta_prime + FEASIBILITY_SLACK,
        iterations: sol.iterations,
        grid_resolution: n,
        active_set_size: sol.passive,
        dual_violation: sol.dual_violation,
    };
    Ok((GriddedMeasure { grid, weights, cell_width }, report))
}

/// Minimises `‖y − Φz‖₂` over non-negative weights on a uniform
/// cell-centre grid with `grid_resolution` cells.
pub fn solve_nnls(
    measurement: &Measurement,
    scheme: &SamplingScheme,
    grid_resolution: usize,
) -> Result<(GriddedMeasure, SolveReport)> {
    if grid_resolution < 2 {
        return Err(Error::InvalidInput("grid resolution must be at least 2".into()));
    }
    if measurement.values.len() != scheme.len() {
        return Err(Error::InvalidInput("measurement length does not match scheme".into()));
    }
    solve_on(measurement, scheme, uniform_grid(grid_resolution, 0.5), 1.0 / grid_resolution as f64, None)
}

fn refined_grid(z: &GriddedMeasure) -> Vec<f64> {
    let h = z.cell_width;
    let sub = h / REFINE_FACTOR as f64;
    let mut pts = Vec::new();
    for i in z.support() {
        let p = z.grid[i];
        pts.push(p);
        for c in -1i32..=1 {
            let left = p + c as f64 * h - h / 2.0;
            for q in 0..REFINE_FACTOR {
                let v = left + (q as f64 + 0.5) * sub;
                if v > 0.0 && v < 1.0 {
                    pts.push(v);
                }
            }
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() <= 1e-15);
    pts
}

/// Re-solves on grids refined by a factor of 10 around the current
/// support (± one cell) for `levels` levels. The previous support is kept
/// in every refined grid, so the residual cannot increase.
pub fn refine(
    z: &GriddedMeasure,
    measurement: &Measurement,
    scheme: &SamplingScheme,
    levels: usize,
) -> Result<(GriddedMeasure, Vec<SolveReport>)> {
    let mut cur = z.clone();
    let mut reports: Vec<SolveReport> = Vec::with_capacity(levels);
    for _ in 0..levels {
        if cur.support().is_empty() {
            break;
        }
        let grid = refined_grid(&cur);
        let width = cur.cell_width / REFINE_FACTOR as f64;
        let (next, rep) = solve_on(measurement, scheme, grid, width, None)?;
        // Near-collinear columns at fine spacing can stall the active set.
        if let Some(prev) = reports.last() {
            if rep.residual > prev.residual {
                break;
            }
        }
        cur = next;
        reports.push(rep);
    }
    Ok((cur, reports))
}

/// Coarse solve followed by refinement; returns the final grid solution
/// and its report.
pub fn solve_refined(
    measurement: &Measurement,
    scheme: &SamplingScheme,
    grid_resolution: usize,
    levels: usize,
) -> Result<(GriddedMeasure, SolveReport)> {
    let (z, rep) = solve_nnls(measurement, scheme, grid_resolution)?;
    let (z, reps) = refine(&z, measurement, scheme, levels)?;
    Ok((z, reps.last().cloned().unwrap_or(rep)))
}

/// Clusters positive grid cells whose consecutive gap is at most ε; each
/// cluster becomes one spike at its centre of mass carrying its total mass.
pub fn extract_spikes(z: &GriddedMeasure, epsilon: f64) -> DiscreteMeasure {
    let mut clusters: Vec<(f64, f64, f64)> = Vec::new();
    for i in z.support() {
        let (t, w) = (z.grid[i], z.weights[i]);
        match clusters.last_mut() {
            Some(c) if t - c.2 <= epsilon => {
                c.0 += t * w;
                c.1 += w;
                c.2 = t;
            }
            _ => clusters.push((t * w, w, t)),
        }
    }
    let locs = clusters.iter().map(|c| (c.0 / c.1).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)).collect();
    let ws = clusters.iter().map(|c| c.1).collect();
    DiscreteMeasure::new(locs, ws).expect("cluster centres lie inside (0,1)")
}

/// Gauss–Newton iterations used by [`polish_spikes`].
pub const POLISH_ITERATIONS: usize = 50;

fn spike_residual(x: &DiscreteMeasure, y: &[f64], scheme: &SamplingScheme) -> f64 {
    let w = scheme.window();
    scheme
        .samples()
        .iter()
        .zip(y)
        .map(|(&s, &yj)| yj - x.atoms().map(|(t, a)| a * w.g(t - s)).sum::<f64>())
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt()
}

/// Off-grid Gauss–Newton refinement of extracted spikes on
/// `‖y − Σ aᵢ Φ(tᵢ)‖₂`, with step halving that keeps every location in
/// `(0, 1)`, every weight positive and the residual non-increasing.
/// Returns the polished spikes and their residual.
pub fn polish_spikes(x: &DiscreteMeasure, measurement: &Measurement, scheme: &SamplingScheme) -> (DiscreteMeasure, f64) {
    let y = &measurement.values;
    let w = scheme.window();
    let mut cur = x.clone();
    let mut res = spike_residual(&cur, y, scheme);
    if cur.is_empty() {
        return (cur, res);
    }
    let k = cur.len();
    for _ in 0..POLISH_ITERATIONS {
        let s = scheme.samples();
        let jac = DMatrix::from_fn(s.len(), 2 * k, |j, c| {
            let (t, a) = (cur.locations()[c % k], cur.weights()[c % k]);
            if c < k { w.g(t - s[j]) } else { a * w.dg(t - s[j]) }
        });
        let r = DVector::from_iterator(
            s.len(),
            s.iter().zip(y).map(|(&sj, &yj)| yj - cur.atoms().map(|(t, a)| a * w.g(t - sj)).sum::<f64>()),
        );
        let Ok(step) = jac.svd(true, true).solve(&r, f64::EPSILON * 16.0) else { break };
        let mut scale = 1.0;
        let mut accepted = None;
        while scale > 1e-6 {
            let ws: Vec<f64> = (0..k).map(|i| cur.weights()[i] + scale * step[i]).collect();
            let ts: Vec<f64> = (0..k).map(|i| cur.locations()[i] + scale * step[k + i]).collect();
            if ws.iter().all(|&a| a > 0.0) && ts.iter().all(|&t| t > 0.0 && t < 1.0) {
                if let Ok(cand) = DiscreteMeasure::new(ts, ws) {
                    if cand.len() == k {
                        let cr = spike_residual(&cand, y, scheme);
                        if cr < res {
                            accepted = Some((cand, cr));
                            break;
                        }
                    }
                }
            }
            scale *= 0.5;
        }
        match accepted {
            Some((cand, cr)) => {
                cur = cand;
                res = cr;
            }
            None => break,
        }
    }
    (cur, res)
}

/// Outcome of the multi-start uniqueness audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    /// Starts attempted.
    pub trials: usize,
    /// Starts whose residual was at most `1e-8`.
    pub feasible: usize,
    /// Feasible starts that clustered to the true spikes.
    pub agreeing: usize,
    /// Largest location error among feasible starts.
    pub max_location_error: f64,
    /// Largest relative weight error among feasible starts.
    pub max_weight_error: f64,
}

impl UniquenessReport {
    /// Every feasible start agreed and at least one start was feasible.
    pub fn unique(&self) -> bool {
        self.feasible > 0 && self.agreeing == self.feasible
    }
}

/// Location and relative weight discrepancy between two measures with the
/// same number of atoms; `None` when the counts differ.
pub fn spike_errors(found: &DiscreteMeasure, truth: &DiscreteMeasure) -> Option<(f64, f64)> {
    if found.len() != truth.len() {
        return None;
    }
    let mut loc: f64 = 0.0;
    let mut wt: f64 = 0.0;
    for ((t, a), (u, b)) in found.atoms().zip(truth.atoms()) {
        loc = loc.max((t - u).abs());
        wt = wt.max((a - b).abs() / b);
    }
    Some((loc, wt))
}

/// Solves exact samples of `x` from `trials` randomised grids (shifted
/// offsets, perturbed resolutions, permuted column orders) and checks that
/// every feasible solution clusters back to `x` after `levels` refinements
/// and an off-grid polish.
pub fn verify_uniqueness(
    x: &DiscreteMeasure,
    scheme: &SamplingScheme,
    trials: usize,
    levels: usize,
    seed: u64,
) -> Result<UniquenessReport> {
    let y = crate::window::sample_measure(x, scheme, &crate::window::Noise::None)?;
    let eps = if x.is_empty() { 0.05 } else { min_separation(x)? / 4.0 };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = UniquenessReport { trials, feasible: 0, agreeing: 0, max_location_error: 0.0, max_weight_error: 0.0 };
    for _ in 0..trials {
        let n = DEFAULT_RESOLUTION + rng.random_range(0..=400) - 200;
        let offset = rng.random_range(0.05..0.95);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (z, _) = solve_on(&y, scheme, uniform_grid(n, offset), 1.0 / n as f64, Some(&order))?;
        let (z, reps) = refine(&z, &y, scheme, levels)?;
        let residual = reps.last().map_or(0.0, |r| r.residual);
        // Feasibility is judged on the better of the grid fit and the polished spikes.
        let (spikes, polished) = polish_spikes(&extract_spikes(&z, eps), &y, scheme);
        if residual.min(polished) > 1e-8 {
            continue;
        }
        report.feasible += 1;
        if let Some((le, we)) = spike_errors(&spikes, x) {
            report.max_location_error = report.max_location_error.max(le);
            report.max_weight_error = report.max_weight_error.max(we);
            if le <= 1e-3 && we <= 1e-6 {
                report.agreeing += 1;
            }
        } else {
            report.max_location_error = f64::INFINITY;
            report.max_weight_error = f64::INFINITY;
        }
    }
    Ok(report)
}
