//! Dual certificates `q(t) = Σ b_j g(t − s_j)` built from minors of the
//! interpolation system, their verification, and numerical audits of the
//! T-system and T*-system properties.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{log_det, log_det_parts, LogDet};
use crate::measure::neighborhoods_of;
use crate::window::{GaussianWindow, SamplingScheme};

/// Magnitude below which the denominator minor counts as singular.
pub const DEGENERATE_MINOR: f64 = 1e-300;
/// Interpolation and margin tolerance of [`verify_certificate`].
pub const VERIFY_TOL: f64 = 1e-8;

/// Piecewise separator `F` (or `F^π` when a sign pattern is present).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparatorSpec {
    /// Value at `t = 0`.
    pub f0: f64,
    /// Value at `t = 1`.
    pub f1: f64,
    /// Floor away from the sources.
    pub f_bar: f64,
    /// Neighbourhood radius ε.
    pub epsilon: f64,
    /// Optional sign pattern π ∈ {±1}^k.
    pub sign_pattern: Option<Vec<i8>>,
}

impl SeparatorSpec {
    /// Separator `F` without sign pattern.
    pub fn plain(f0: f64, f1: f64, f_bar: f64, epsilon: f64) -> Self {
        Self { f0, f1, f_bar, epsilon, sign_pattern: None }
    }

    /// The same separator carrying sign pattern `pi`.
    pub fn with_signs(&self, pi: Vec<i8>) -> Self {
        Self { sign_pattern: Some(pi), ..self.clone() }
    }

    /// Target value at source `i`: 0 for `F`, `πᵢ` for `F^π`.
    pub fn source_target(&self, i: usize) -> f64 {
        self.sign_pattern.as_ref().map_or(0.0, |p| f64::from(p[i]))
    }

    /// Floor off the neighbourhoods: `f̄` for `F`, `−f̄` for `F^π`.
    pub fn floor(&self) -> f64 {
        if self.sign_pattern.is_some() {
            -self.f_bar
        } else {
            self.f_bar
        }
    }

    /// `F(t)` for sources `t_src`.
    pub fn eval(&self, t: f64, t_src: &[f64]) -> f64 {
        if t == 0.0 {
            return self.f0;
        }
        if t == 1.0 {
            return self.f1;
        }
        match t_src.iter().position(|&ti| (t - ti).abs() <= self.epsilon) {
            Some(i) => self.source_target(i),
            None => self.floor(),
        }
    }
}

/// Indices of the `2k + 2` samples used by the certificate: `s = 0`,
/// `s = 1`, and the nearest sample on each side of every source.
pub fn select_samples(t: &[f64], scheme: &SamplingScheme) -> Result<Vec<usize>> {
    let s = scheme.samples();
    let m = s.len();
    if s[0] != 0.0 || s[m - 1] != 1.0 {
        return Err(Error::InsufficientSamples("samples must include 0 and 1".into()));
    }
    let mut idx = vec![0];
    for &ti in t {
        let left = s.iter().rposition(|&v| v <= ti).expect("s_1 = 0 lies left of every source");
        let right = left + 1;
        if right >= m {
            return Err(Error::InsufficientSamples(format!("no sample right of {ti}")));
        }
        idx.push(left);
        idx.push(right);
    }
    idx.push(m - 1);
    if idx.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InsufficientSamples(
            "sources share or reuse boundary samples; need two private samples per source".into(),
        ));
    }
    Ok(idx)
}

/// Rows `[g(0 − s), g(tᵢ − s), g'(tᵢ − s), …, g(1 − s)]` over `samples`.
fn g_block(t: &[f64], samples: &[f64], w: &GaussianWindow) -> DMatrix<f64> {
    let m = samples.len();
    let mut rows = DMatrix::zeros(2 * t.len() + 2, m);
    for j in 0..m {
        rows[(0, j)] = w.g(-samples[j]);
        for (i, &ti) in t.iter().enumerate() {
            rows[(1 + 2 * i, j)] = w.g(ti - samples[j]);
            rows[(2 + 2 * i, j)] = w.dg(ti - samples[j]);
        }
        rows[(2 * t.len() + 1, j)] = w.g(1.0 - samples[j]);
    }
    rows
}

/// The limit minor system: the first column of separator values and the
/// `g`/`g'` block, plus the minors along the free row.
#[derive(Debug, Clone)]
pub struct MinorSystem {
    /// Sources.
    pub sources: Vec<f64>,
    /// Selected samples (length `m = 2k + 2`).
    pub samples: Vec<f64>,
    /// Window.
    pub window: GaussianWindow,
    /// Separator.
    pub separator: SeparatorSpec,
    /// `m × (m + 1)` matrix: separator column followed by the `g` block.
    pub matrix: DMatrix<f64>,
    /// Minors `N_{l̲,c}`, `c = 1..=m+1`, obtained by deleting the free row
    /// and column `c`.
    pub minors: Vec<LogDet>,
}

impl MinorSystem {
    /// Denominator minor `N_{l̲,1}`.
    pub fn denominator(&self) -> LogDet {
        self.minors[0]
    }
}

/// Assembles the limit minor system for sources `t` and computes its minors.
pub fn build_minor_system(t: &[f64], scheme: &SamplingScheme, separator: &SeparatorSpec) -> Result<MinorSystem> {
    let idx = select_samples(t, scheme)?;
    let samples: Vec<f64> = idx.iter().map(|&i| scheme.samples()[i]).collect();
    build_minor_system_on(t, &samples, *scheme.window(), separator)
}

/// [`build_minor_system`] on an explicit list of `2k + 2` samples.
pub fn build_minor_system_on(
    t: &[f64],
    samples: &[f64],
    window: GaussianWindow,
    separator: &SeparatorSpec,
) -> Result<MinorSystem> {
    let k = t.len();
    let m = samples.len();
    if m != 2 * k + 2 {
        return Err(Error::InsufficientSamples(format!("need {} samples, got {m}", 2 * k + 2)));
    }
    if let Some(p) = &separator.sign_pattern {
        if p.len() != k || p.iter().any(|v| v.abs() != 1) {
            return Err(Error::InvalidInput("sign pattern must be ±1 per source".into()));
        }
    }
    let block = g_block(t, samples, &window);
    let mut matrix = DMatrix::zeros(m, m + 1);
    matrix[(0, 0)] = separator.f0;
    for i in 0..k {
        matrix[(1 + 2 * i, 0)] = separator.source_target(i);
    }
    matrix[(m - 1, 0)] = separator.f1;
    matrix.view_mut((0, 1), (m, m)).copy_from(&block);
    let minors: Vec<LogDet> = (0..=m).map(|c| log_det(&matrix.clone().remove_column(c))).collect();
    let den = minors[0];
    if den.is_zero() || den.log_abs < DEGENERATE_MINOR.ln() {
        return Err(Error::DegenerateConfiguration);
    }
    Ok(MinorSystem { sources: t.to_vec(), samples: samples.to_vec(), window, separator: separator.clone(), matrix, minors })
}

/// A dual certificate `q(t) = Σ b_j g(t − s_j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualCertificate {
    /// Coefficients `b`.
    pub b: Vec<f64>,
    /// Samples the coefficients refer to.
    pub samples: Vec<f64>,
    /// Window.
    pub window: GaussianWindow,
    /// Separator the certificate was built for.
    pub separator: SeparatorSpec,
}

impl DualCertificate {
    /// `q(t)`.
    pub fn eval(&self, t: f64) -> f64 {
        self.b.iter().zip(&self.samples).map(|(b, s)| b * self.window.g(t - s)).sum()
    }

    /// `q'(t)`.
    pub fn eval_deriv(&self, t: f64) -> f64 {
        self.b.iter().zip(&self.samples).map(|(b, s)| b * self.window.dg(t - s)).sum()
    }

    /// `‖b‖₂`.
    pub fn b_norm(&self) -> f64 {
        self.b.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// JSON record `{b, f0, f1, f_bar, epsilon, pi?}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::json!({
            "b": self.b,
            "f0": self.separator.f0,
            "f1": self.separator.f1,
            "f_bar": self.separator.f_bar,
            "epsilon": self.separator.epsilon,
        });
        if let Some(p) = &self.separator.sign_pattern {
            v["pi"] = serde_json::json!(p);
        }
        v
    }
}

/// `b_j = (−1)^{j+1} N_{l̲,j+1} / N_{l̲,1}` for `j = 1..=m`.
pub fn certificate_coefficients(system: &MinorSystem) -> DualCertificate {
    let den = system.denominator();
    let b = (1..system.minors.len())
        .map(|j| {
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            sign * system.minors[j].ratio(&den)
        })
        .collect();
    DualCertificate { b, samples: system.samples.clone(), window: system.window, separator: system.separator.clone() }
}

/// Builds the certificate for sources `t` in one call.
pub fn build_certificate(t: &[f64], scheme: &SamplingScheme, separator: &SeparatorSpec) -> Result<DualCertificate> {
    Ok(certificate_coefficients(&build_minor_system(t, scheme, separator)?))
}

/// Outcome of [`verify_certificate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    /// `min (q − F)` over grid points off `T_ε`.
    pub min_margin: f64,
    /// `max |q(tᵢ) − target|` over sources.
    pub max_source_error: f64,
    /// `q(0)`.
    pub q0: f64,
    /// `q(1)`.
    pub q1: f64,
    /// Number of points examined.
    pub points: usize,
}

impl VerifyReport {
    /// Margin at least `−1e−8` and source interpolation within `1e−8`.
    pub fn pass(&self) -> bool {
        self.min_margin >= -VERIFY_TOL && self.max_source_error <= VERIFY_TOL
    }
}

/// Checks `q ≥ F` off `T_ε` on a uniform grid (plus sources and samples)
/// and the interpolation conditions at the sources.
pub fn verify_certificate(cert: &DualCertificate, t: &[f64], grid_points: usize) -> VerifyReport {
    let n = grid_points.max(2);
    let mut pts: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    pts.extend_from_slice(t);
    pts.extend_from_slice(&cert.samples);
    let hood = neighborhoods_of(t, cert.separator.epsilon);
    let mut min_margin = f64::INFINITY;
    for &p in &pts {
        if p > 0.0 && p < 1.0 && hood.in_complement(p) {
            min_margin = min_margin.min(cert.eval(p) - cert.separator.floor());
        }
    }
    let max_source_error = t
        .iter()
        .enumerate()
        .map(|(i, &ti)| (cert.eval(ti) - cert.separator.source_target(i)).abs())
        .fold(0.0, f64::max);
    VerifyReport { min_margin, max_source_error, q0: cert.eval(0.0), q1: cert.eval(1.0), points: pts.len() }
}

/// `N_{1,1}(τ)` and `N_{m+1,1}(τ)`: the `g`-block with the free row at τ
/// in sorted position, dropping the `t = 0` row or the `t = 1` row.
fn tau_minors(t: &[f64], samples: &[f64], w: &GaussianWindow, tau: f64) -> (LogDet, LogDet) {
    let block = g_block(t, samples, w);
    let m = samples.len();
    let before = t.iter().filter(|&&ti| ti < tau).count();
    let pos = 1 + 2 * before;
    let tau_row = DMatrix::from_fn(1, m, |_, j| w.g(tau - samples[j]));
    let mut full = block.clone().insert_row(pos, 0.0);
    full.view_mut((pos, 0), (1, m)).copy_from(&tau_row);
    let n11 = log_det(&full.clone().remove_row(0));
    let nm1 = log_det(&full.remove_row(m));
    (n11, nm1)
}

/// Result of [`choose_f0`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F0Choice {
    /// Selected `f0`.
    pub f0: f64,
    /// `f0` from the ε-rule `C_ε f̄ / ε²`.
    pub rule_f0: f64,
    /// `C_ε = 3 N_{l̲,1} / min N^ε_{1,1}`.
    pub c_eps: f64,
    /// Largest `f0` demanded by the minor-ratio conditions.
    pub required: f64,
    /// True when the rule fell short and `f0 = 3 · required` was used.
    pub override_triggered: bool,
}

/// Number of free-row positions scanned when checking the minor ratios.
pub const F0_SCAN_POINTS: usize = 2000;

/// Chooses `f0 = C_ε f̄/ε²` with `C_ε` from the minors at `τ = tᵢ ± ε`,
/// raising it to three times the largest required minor ratio if needed.
pub fn choose_f0(t: &[f64], scheme: &SamplingScheme, epsilon: f64, f_bar: f64, f1: f64) -> Result<F0Choice> {
    let idx = select_samples(t, scheme)?;
    let samples: Vec<f64> = idx.iter().map(|&i| scheme.samples()[i]).collect();
    let w = *scheme.window();
    let n_l1 = log_det(&g_block(t, &samples, &w));
    if n_l1.is_zero() || n_l1.log_abs < DEGENERATE_MINOR.ln() {
        return Err(Error::DegenerateConfiguration);
    }
    let mut min_neps = f64::INFINITY;
    for &ti in t {
        for tau in [ti - epsilon, ti + epsilon] {
            let (n11, _) = tau_minors(t, &samples, &w, tau);
            let neps = 2.0 * n11.ratio(&n_l1) / (epsilon * epsilon);
            min_neps = min_neps.min(neps);
        }
    }
    if !(min_neps > 0.0) {
        return Err(Error::DegenerateConfiguration);
    }
    let c_eps = 3.0 / min_neps;
    let rule_f0 = c_eps * f_bar / (epsilon * epsilon);
    let hood = neighborhoods_of(t, epsilon);
    let mut required = f1;
    let scan = (1..F0_SCAN_POINTS).map(|i| i as f64 / F0_SCAN_POINTS as f64);
    let edges = t.iter().flat_map(|&ti| [ti - epsilon * (1.0 + 1e-12), ti + epsilon * (1.0 + 1e-12)]);
    for tau in scan.chain(edges).filter(|&v| v > 0.0 && v < 1.0 && hood.in_complement(v)) {
        let (n11, nm1) = tau_minors(t, &samples, &w, tau);
        if n11.sign <= 0.0 {
            continue;
        }
        let need = f_bar * n_l1.ratio(&n11) - f1 * nm1.ratio(&n11);
        required = required.max(need);
    }
    let (f0, override_triggered) = if rule_f0 > required { (rule_f0, false) } else { (3.0 * required, true) };
    Ok(F0Choice { f0, rule_f0, c_eps, required, override_triggered })
}

/// Largest floor `f̄ ≤ cap` for which [`choose_f0`] returns at most
/// `f0_target`, located by bisection in log scale.
pub fn max_floor_for(t: &[f64], scheme: &SamplingScheme, epsilon: f64, f0_target: f64, f1: f64, cap: f64) -> Result<f64> {
    let ok = |fb: f64| -> Result<bool> { Ok(choose_f0(t, scheme, epsilon, fb, f1)?.f0 <= f0_target) };
    if ok(cap)? {
        return Ok(cap);
    }
    let (mut lo, mut hi) = (f64::MIN_POSITIVE.ln(), cap.ln());
    if !ok(lo.exp())? {
        return Err(Error::DegenerateConfiguration);
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if ok(mid.exp())? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo.exp())
}

/// Outcome of the T-system audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TSystemReport {
    /// Trials run.
    pub trials: usize,
    /// Smallest `ln |det|` of the row-equilibrated collocation matrix.
    pub min_log_abs_equilibrated: f64,
    /// Draws whose determinant was resolved in double precision and was
    /// not positive.
    pub counterexamples: Vec<Vec<f64>>,
    /// Draws whose row-equilibrated collocation matrix has reciprocal
    /// condition below [`RESOLUTION_FLOOR`], so the sign is not trusted.
    pub unresolved: usize,
}

/// Reciprocal 2-norm condition below which a computed determinant sign is
/// not trusted, in units of `m ε_mach`.
pub const RESOLUTION_FLOOR: f64 = 64.0;

impl TSystemReport {
    /// No resolved counterexample was found.
    pub fn pass(&self) -> bool {
        self.counterexamples.is_empty()
    }
}

/// `det[g(τ_l − s_j)]` for a strictly increasing sequence `taus` of length `m`.
pub fn collocation_det(scheme: &SamplingScheme, taus: &[f64]) -> Result<crate::linalg::DetParts> {
    let m = scheme.len();
    if taus.len() != m {
        return Err(Error::InvalidInput(format!("need {m} points, got {}", taus.len())));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("points must be strictly increasing".into()));
    }
    let s = scheme.samples();
    let w = scheme.window();
    Ok(log_det_parts(&DMatrix::from_fn(m, m, |l, j| w.g(taus[l] - s[j]))))
}

fn resolved(scheme: &SamplingScheme, taus: &[f64]) -> bool {
    let (s, w, m) = (scheme.samples(), scheme.window(), scheme.len());
    let mut a = DMatrix::from_fn(m, m, |l, j| w.g(taus[l] - s[j]));
    for mut row in a.row_iter_mut() {
        let mx = row.amax();
        if mx > 0.0 {
            row /= mx;
        }
    }
    let sv = a.singular_values();
    sv.min() > RESOLUTION_FLOOR * m as f64 * f64::EPSILON * sv.max()
}

/// Random increasing sequences must give positive collocation determinants.
pub fn tsystem_check(scheme: &SamplingScheme, trials: usize, seed: u64) -> TSystemReport {
    let m = scheme.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report =
        TSystemReport { trials, min_log_abs_equilibrated: f64::INFINITY, counterexamples: Vec::new(), unresolved: 0 };
    let mut done = 0;
    while done < trials {
        let mut taus: Vec<f64> = (0..m).map(|_| rng.random::<f64>()).collect();
        taus.sort_by(f64::total_cmp);
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            continue;
        }
        done += 1;
        let parts = collocation_det(scheme, &taus).expect("sequence is increasing");
        report.min_log_abs_equilibrated = report.min_log_abs_equilibrated.min(parts.log_abs_equilibrated);
        if parts.det.is_zero() || parts.det.sign <= 0.0 {
            if resolved(scheme, &taus) {
                report.counterexamples.push(taus);
            } else {
                report.unresolved += 1;
            }
        }
    }
    report
}

/// Outcome of the T*-system rate audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TStarReport {
    /// Number of sources `k`.
    pub k: usize,
    /// ρ values used.
    pub rhos: Vec<f64>,
    /// Least-squares slope of `ln |M^ρ_{l̲,c}|` against `ln ρ`, per column `c`.
    pub slopes: Vec<f64>,
    /// `det M^ρ > 0` for every ρ and every free-row position tried.
    pub determinant_positive: bool,
}

impl TStarReport {
    /// Every slope is within `0.1` of `k` and part 1 holds.
    pub fn pass(&self) -> bool {
        self.determinant_positive && self.slopes.iter().all(|s| (s - self.k as f64).abs() <= 0.1)
    }
}

/// Rows of `M^ρ` without the free row. Each second row of a pair is the
/// divided difference `(g(tᵢ + ρ − s) − g(tᵢ − s))/ρ`, evaluated with
/// `expm1` so that `det M^ρ = ρ^k det` of the returned matrix exactly.
fn m_rho_rows(t: &[f64], samples: &[f64], w: &GaussianWindow, sep: &SeparatorSpec, rho: f64) -> DMatrix<f64> {
    let m = samples.len();
    let s2 = w.sigma() * w.sigma();
    let mut out = DMatrix::zeros(m, m + 1);
    out[(0, 0)] = sep.f0;
    out[(m - 1, 0)] = sep.f1;
    for j in 0..m {
        out[(0, j + 1)] = w.g(-samples[j]);
        out[(m - 1, j + 1)] = w.g(1.0 - samples[j]);
        for (i, &ti) in t.iter().enumerate() {
            let a = ti - samples[j];
            out[(1 + 2 * i, j + 1)] = w.g(a);
            out[(2 + 2 * i, j + 1)] = w.g(a) * (-(2.0 * a * rho + rho * rho) / s2).exp_m1() / rho;
        }
    }
    for i in 0..t.len() {
        let v = sep.source_target(i);
        out[(1 + 2 * i, 0)] = v;
        out[(2 + 2 * i, 0)] = 0.0;
    }
    out
}

/// Estimates the rate at which the minors of `M^ρ` along the free row
/// vanish as `ρ → 0`, and checks `det M^ρ > 0` with the free row at the
/// midpoints of the gaps between consecutive points of `{0} ∪ T ∪ {1}`.
pub fn tstar_rate_check(t: &[f64], scheme: &SamplingScheme, separator: &SeparatorSpec, rhos: &[f64]) -> Result<TStarReport> {
    let idx = select_samples(t, scheme)?;
    let samples: Vec<f64> = idx.iter().map(|&i| scheme.samples()[i]).collect();
    let w = *scheme.window();
    let k = t.len();
    let m = samples.len();
    let mut logs: Vec<Vec<f64>> = vec![Vec::new(); m + 1];
    let mut positive = true;
    let mut knots = vec![0.0];
    knots.extend_from_slice(t);
    knots.push(1.0);
    let taus: Vec<f64> = knots.windows(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    for &rho in rhos {
        let rows = m_rho_rows(t, &samples, &w, separator, rho);
        for (c, log) in logs.iter_mut().enumerate() {
            let d = log_det(&rows.clone().remove_column(c));
            log.push(k as f64 * rho.ln() + d.log_abs);
        }
        for &tau in &taus {
            let before = t.iter().filter(|&&ti| ti < tau).count();
            let pos = 1 + 2 * before;
            let mut full = rows.clone().insert_row(pos, 0.0);
            full[(pos, 0)] = separator.eval(tau, t);
            for j in 0..m {
                full[(pos, j + 1)] = w.g(tau - samples[j]);
            }
            if log_det(&full).sign <= 0.0 {
                positive = false;
            }
        }
    }
    let xs: Vec<f64> = rhos.iter().map(|r| r.ln()).collect();
    let xm = xs.iter().sum::<f64>() / xs.len() as f64;
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let slopes = logs
        .iter()
        .map(|ys| {
            let ym = ys.iter().sum::<f64>() / ys.len() as f64;
            xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum::<f64>() / sxx
        })
        .collect();
    Ok(TStarReport { k, rhos: rhos.to_vec(), slopes, determinant_positive: positive })
}
