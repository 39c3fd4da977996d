//! Closed-form stability quantities for the Gaussian window, the λ₀
//! sampling condition, diagonal dominance of the local-average matrix,
//! the eigenvalue floor of the derivative block matrix and the
//! determinant perturbation envelope.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_succeeds, inf_norm, inverse_spectral_norm, log_det};
use crate::measure::GroupedPartition;
use crate::window::{GaussianWindow, SamplingScheme};

/// `1/(1 − √e/2)`.
pub fn dominance_prefactor() -> f64 {
    1.0 / (1.0 - std::f64::consts::E.sqrt() / 2.0)
}

/// Default upper limit on the sample proximity λ.
pub const DEFAULT_LAMBDA_THRESHOLD: f64 = 0.4;

/// Parameters shared by the closed-form bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Number of sources.
    pub k: usize,
    /// Minimum separation Δ(T).
    pub delta_sep: f64,
    /// Window width σ.
    pub sigma: f64,
    /// Neighbourhood radius ε.
    pub epsilon: f64,
    /// Sample-pair spacing η.
    pub eta: f64,
    /// Sample proximity λ.
    pub lambda: f64,
    /// Separator value at 0.
    pub f0: f64,
    /// Separator value at 1.
    pub f1: f64,
    /// Separator floor.
    pub f_bar: f64,
}

/// A bound together with a flag saying whether its preconditions hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    /// Formula value.
    pub value: f64,
    /// Preconditions met and value finite.
    pub valid: bool,
}

impl BoundValue {
    fn new(value: f64, valid: bool) -> Self {
        Self { value, valid: valid && value.is_finite() }
    }
}

fn decay(delta: f64, sigma: f64) -> (f64, f64) {
    let x = delta * delta / (sigma * sigma);
    ((-x).exp(), -(-x).exp_m1())
}

/// `σ√(log(3 + 4/σ²))`, the separation threshold.
pub fn separation_threshold(sigma: f64) -> f64 {
    sigma * (3.0 + 4.0 / (sigma * sigma)).ln().sqrt()
}

/// `F_min(Δ, σ) = 1 − (1 + 2/σ²) · 2e^{−Δ²/σ²}/(1 − e^{−Δ²/σ²})`, valid iff
/// it is positive and Δ exceeds the separation threshold. The value equals
/// 1 only through underflow of the exponential.
pub fn f_min(delta_sep: f64, sigma: f64) -> BoundValue {
    let (e, one_minus) = decay(delta_sep, sigma);
    let v = 1.0 - (1.0 + 2.0 / (sigma * sigma)) * 2.0 * e / one_minus;
    BoundValue::new(v, v > 0.0 && v <= 1.0 && delta_sep > separation_threshold(sigma))
}

/// `F_max(Δ, σ)`.
pub fn f_max(delta_sep: f64, sigma: f64) -> f64 {
    let (_, one_minus) = decay(delta_sep, sigma);
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    let a = 8.0 + (1.0 + 4.0 / s4) * 2.0 / one_minus;
    let b = 32.0 + (1.0 / s4 + 2.0 / (s4 * s2) + 2.0 / (s4 * s4)) * 24.0 / one_minus;
    a.sqrt() * b.sqrt()
}

/// `C̄(f0, f1) = f0² + f1² + 2f0 + 2f1 + 2`.
pub fn c_bar(f0: f64, f1: f64) -> f64 {
    f0 * f0 + f1 * f1 + 2.0 * f0 + 2.0 * f1 + 2.0
}

/// `P(σ) = 4/σ⁴ + (13/4)(2/σ² + 4/σ⁴)² + (9/4)(12/σ⁴ + 8/σ⁶)²`.
pub fn p_poly(sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let s4 = s2 * s2;
    let a = 2.0 / s2 + 4.0 / s4;
    let b = 12.0 / s4 + 8.0 / (s4 * s2);
    4.0 / s4 + 3.25 * a * a + 2.25 * b * b
}

/// Both branches of the η threshold and their minimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaMax {
    /// Branch driven by `F_min` and `P`.
    pub branch_fmin: f64,
    /// Branch driven by `C̄`.
    pub branch_cbar: f64,
    /// `min` of the two branches, flagged by the validity of `F_min`.
    pub value: BoundValue,
}

/// Largest admissible sample-pair spacing η.
pub fn eta_max(k: usize, delta_sep: f64, sigma: f64, f0: f64, f1: f64) -> EtaMax {
    let kf = k as f64;
    let fm = f_min(delta_sep, sigma);
    let (_, one_minus) = decay(delta_sep, sigma);
    let inner = 80.0 * kf + 8.0 + kf * p_poly(sigma) * 3.0 / one_minus;
    let branch_fmin = 8.0 * fm.value / (34.0 * (2.0 * kf + 2.0) * inner.sqrt());
    let branch_cbar = c_bar(f0, f1).powf(1.0 / 6.0) / (4.0 * kf + 4.0 + 4.0 * kf / (sigma * sigma)).cbrt();
    EtaMax { branch_fmin, branch_cbar, value: BoundValue::new(branch_fmin.min(branch_cbar), fm.valid) }
}

/// `F_max / F_min²`, the per-source growth factor of the coefficient bounds.
pub fn growth_ratio(delta_sep: f64, sigma: f64) -> f64 {
    let fm = f_min(delta_sep, sigma).value;
    f_max(delta_sep, sigma) / (fm * fm)
}

fn poly_term(k: f64, sigma: f64) -> f64 {
    4.0 * k + 5.0 + 4.0 * k / sigma.powi(4)
}

/// Coefficient-norm bounds for `b` and `b^π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    /// Bound on `‖b‖₂`.
    pub b: BoundValue,
    /// Bound on `‖b^π‖₂`.
    pub b_pi: BoundValue,
    /// `F_max / F_min²`.
    pub ratio: f64,
}

fn preconditions(inp: &BoundInputs) -> bool {
    f_min(inp.delta_sep, inp.sigma).valid
        && inp.eta <= eta_max(inp.k, inp.delta_sep, inp.sigma, inp.f0, inp.f1).value.value
}

/// Bounds on `‖b‖₂` and `‖b^π‖₂`; valid when `F_min` is valid and `η ≤ η_max`.
pub fn b_norm_bounds(inp: &BoundInputs) -> CoefficientBounds {
    let k = inp.k as f64;
    let ratio = growth_ratio(inp.delta_sep, inp.sigma);
    let cb = c_bar(inp.f0, inp.f1);
    let geo = ratio.powi(inp.k as i32);
    let b = ((2.0 * k + 2.0) * poly_term(k, inp.sigma)).sqrt() * dominance_prefactor() * cb.powf(1.25) * geo;
    let b_pi = (2.0 * k + 2.0).sqrt() * dominance_prefactor() / inp.eta * (cb + 2.0 * k).powf(1.5) * geo;
    let ok = preconditions(inp);
    CoefficientBounds { b: BoundValue::new(b, ok), b_pi: BoundValue::new(b_pi, ok), ratio }
}

/// Constant multiplying δ in the generalised Wasserstein stability bound.
pub fn f1_bound(inp: &BoundInputs) -> BoundValue {
    let k = inp.k as f64;
    let cb = c_bar(inp.f0, inp.f1);
    let lead = (6.0 + 2.0 / inp.f_bar) * poly_term(k, inp.sigma).sqrt() * cb.powf(1.25)
        + 6.0 / inp.eta * (cb + 2.0 * k).powf(1.5);
    let v = lead * (2.0 * k + 2.0).sqrt() * dominance_prefactor() * growth_ratio(inp.delta_sep, inp.sigma).powi(inp.k as i32);
    BoundValue::new(v, preconditions(inp))
}

/// Constant multiplying δ in the mass bound away from the sources.
pub fn f2_bound(inp: &BoundInputs) -> BoundValue {
    let k = inp.k as f64;
    let cb = c_bar(inp.f0, inp.f1);
    let v = ((2.0 * k + 2.0) * poly_term(k, inp.sigma)).sqrt() * dominance_prefactor() * cb.powf(1.25) / inp.f_bar
        * growth_ratio(inp.delta_sep, inp.sigma).powi(inp.k as i32);
    BoundValue::new(v, preconditions(inp))
}

/// Inverse dominance margin of the Gaussian local-average matrix; invalid
/// when its denominator is not positive.
pub fn f3_bound(delta_sep: f64, sigma: f64, lambda: f64) -> BoundValue {
    let s2 = sigma * sigma;
    let d2 = delta_sep * delta_sep;
    let (e1, one_minus) = decay(delta_sep, sigma);
    let e2 = e1 * e1;
    let near = (-d2 * lambda * lambda / s2).exp();
    let far = (-d2 * (1.0 - lambda) * (1.0 - lambda) / s2).exp();
    let den = near - near * (e1 + e2) / one_minus - far;
    BoundValue::new(1.0 / den, den > 0.0)
}

/// `C₁ = (C̄ + 2k)^{3/2}/f̄`.
pub fn c1(inp: &BoundInputs) -> f64 {
    (c_bar(inp.f0, inp.f1) + 2.0 * inp.k as f64).powf(1.5) / inp.f_bar
}

/// `C₂ = C̄^{5/4}/f̄`.
pub fn c2(inp: &BoundInputs) -> f64 {
    c_bar(inp.f0, inp.f1).powf(1.25) / inp.f_bar
}

/// Which terms of the λ₀ equation to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum LambdaVariant {
    /// Both integral tail terms.
    #[default]
    Full,
    /// Three sources: no integral terms.
    ThreeSources,
    /// Four sources: only the first integral term.
    FourSources,
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Absolute quadrature tolerance for the λ equation.
pub const QUAD_TOL: f64 = 1e-12;

/// `φ(λΔ) − [φ(Δ − λΔ) + φ(Δ + λΔ) + tail integrals]`.
pub fn lambda_equation(window: &GaussianWindow, delta_sep: f64, lambda: f64, variant: LambdaVariant) -> f64 {
    let phi = |x: f64| window.g(x);
    let ld = lambda * delta_sep;
    // Each integral is divided by Δ, so its tolerance is scaled to keep
    // the error in the equation below QUAD_TOL.
    let tol = 0.1 * QUAD_TOL * delta_sep;
    let mut rhs = phi(delta_sep - ld) + phi(delta_sep + ld);
    if variant != LambdaVariant::ThreeSources {
        rhs += adaptive_simpson(&phi, delta_sep - ld, 0.5 - ld, tol) / delta_sep;
    }
    if variant == LambdaVariant::Full {
        rhs += adaptive_simpson(&phi, delta_sep + ld, 0.5 + ld, tol) / delta_sep;
    }
    phi(ld) - rhs
}

/// Root λ₀ of the λ equation on `[1e−9, 1/2 − 1e−9]` by bisection.
pub fn solve_lambda0(window: &GaussianWindow, delta_sep: f64, variant: LambdaVariant) -> Result<f64> {
    if !(delta_sep > 0.0 && delta_sep <= 0.5) {
        return Err(Error::InvalidInput(format!("Δ = {delta_sep} outside (0, 1/2]")));
    }
    let h = |l: f64| lambda_equation(window, delta_sep, l, variant);
    let (mut lo, mut hi) = (1e-9, 0.5 - 1e-9);
    let (hlo, hhi) = (h(lo), h(hi));
    if !(hlo > 0.0 && hhi < 0.0) {
        return Err(Error::NoAdmissibleLambda);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = h(mid);
        if v == 0.0 || hi - lo <= 1e-15 {
            return Ok(mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// The local-average matrix `A` and its dominance margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceMatrix {
    /// `A_ii = g(tᵢ − s_{l(i)})`, `A_ij = −g(t_j − s_{l(i)})`.
    pub matrix: Vec<Vec<f64>>,
    /// Nearest-sample index `l(i)` per row.
    pub assignment: Vec<usize>,
    /// Row margins: diagonal minus the off-diagonal magnitudes.
    pub margins: Vec<f64>,
}

impl DominanceMatrix {
    /// Strictly diagonally dominant.
    pub fn dominant(&self) -> bool {
        self.margins.iter().all(|&m| m > 0.0)
    }

    /// `1/min margin`, an upper bound on `‖A⁻¹‖∞` when dominant.
    pub fn varah_bound(&self) -> Option<f64> {
        self.dominant().then(|| 1.0 / self.margins.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// As a dense matrix.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        let k = self.matrix.len();
        DMatrix::from_fn(k, k, |i, j| self.matrix[i][j])
    }

    /// `‖A⁻¹‖∞` by explicit inversion.
    pub fn inverse_inf_norm(&self) -> Option<f64> {
        self.to_matrix().try_inverse().map(|inv| inf_norm(&inv))
    }
}

/// Index of the sample nearest to `t`, lowest index on ties.
pub fn nearest_sample(samples: &[f64], t: f64) -> usize {
    let mut best = 0;
    for (j, &s) in samples.iter().enumerate() {
        if (s - t).abs() < (samples[best] - t).abs() {
            best = j;
        }
    }
    best
}

/// Builds `A` at the sources, or at the group representatives ξᵢ.
pub fn build_dominance_matrix(t: &[f64], scheme: &SamplingScheme, grouped: Option<&GroupedPartition>) -> DominanceMatrix {
    let pts: Vec<f64> = grouped.map_or_else(|| t.to_vec(), |g| g.representatives());
    let s = scheme.samples();
    let w = scheme.window();
    let assignment: Vec<usize> = pts.iter().map(|&p| nearest_sample(s, p)).collect();
    let k = pts.len();
    let matrix: Vec<Vec<f64>> = (0..k)
        .map(|i| {
            let sl = s[assignment[i]];
            (0..k).map(|j| if i == j { w.g(pts[j] - sl) } else { -w.g(pts[j] - sl) }).collect()
        })
        .collect();
    let margins = (0..k)
        .map(|i| matrix[i][i] - (0..k).filter(|&j| j != i).map(|j| matrix[i][j].abs()).sum::<f64>())
        .collect();
    DominanceMatrix { matrix, assignment, margins }
}

/// `H(t) = [[g, −g'], [g', −g'']]`.
pub fn h_block(window: &GaussianWindow, t: f64) -> [[f64; 2]; 2] {
    [[window.g(t), -window.dg(t)], [window.dg(t), -window.d2g(t)]]
}

/// The `2k × 2k` block matrix with blocks `H(tᵢ − t_j)`.
pub fn b_matrix(t: &[f64], window: &GaussianWindow) -> DMatrix<f64> {
    let k = t.len();
    let mut b = DMatrix::zeros(2 * k, 2 * k);
    for i in 0..k {
        for j in 0..k {
            let h = h_block(window, t[i] - t[j]);
            for (r, row) in h.iter().enumerate() {
                for (c, v) in row.iter().enumerate() {
                    b[(2 * i + r, 2 * j + c)] = *v;
                }
            }
        }
    }
    b
}

/// Eigenvalue floor audit of the block matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GershgorinReport {
    /// `F_min(Δ, σ)` with validity of the hypotheses.
    pub floor: BoundValue,
    /// Cholesky of `B − F_min·I` succeeded.
    pub factorization_ok: bool,
    /// `B` equals its transpose exactly.
    pub symmetric: bool,
}

/// Smallest pairwise gap, infinite for a single source.
pub fn pairwise_separation(t: &[f64]) -> f64 {
    t.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min)
}

/// Relative slack, in units of `‖B‖_F`, granted to the factorisation for
/// rounding in the assembly of `B`.
pub const FLOOR_SLACK: f64 = 1e-12;

/// Assembles `B` and checks `λ_min(B) ≥ F_min` through a Cholesky attempt
/// on `B − F_min·I`. `B` depends only on source differences, so Δ is the
/// pairwise separation here.
pub fn gershgorin_floor(t: &[f64], sigma: f64) -> Result<GershgorinReport> {
    if t.is_empty() {
        return Err(Error::NoSources);
    }
    let window = GaussianWindow::new(sigma)?;
    let mut floor = f_min(pairwise_separation(t), sigma);
    floor.valid &= sigma <= std::f64::consts::SQRT_2;
    let b = b_matrix(t, &window);
    let symmetric = b == b.transpose();
    let shift = floor.value - FLOOR_SLACK * b.norm();
    let shifted = &b - DMatrix::identity(b.nrows(), b.ncols()) * shift;
    Ok(GershgorinReport { floor, factorization_ok: cholesky_succeeds(&shifted), symmetric })
}

/// Envelope around `det(A + εB)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetEnvelope {
    /// `det A`.
    pub det_a: f64,
    /// `det A (1 − (17√e/8) m ε ρ̂)`.
    pub lo: f64,
    /// `det A (1 + (17√e/8) m ε ρ̂)`.
    pub hi: f64,
    /// Largest admissible ε, `8/(34 m ρ̂)`.
    pub eps_admissible: f64,
    /// `ρ̂ = ‖A⁻¹‖₂ ‖B‖_F`.
    pub rho_hat: f64,
}

/// Power-iteration count used for `‖A⁻¹‖₂`.
pub const POWER_ITERATIONS: usize = 20;

/// Determinant perturbation envelope with the spectral-radius surrogate
/// `ρ̂ = ‖A⁻¹‖₂ ‖B‖_F`.
pub fn det_perturbation_envelope(a: &DMatrix<f64>, b: &DMatrix<f64>, eps: f64) -> Result<DetEnvelope> {
    let m = a.nrows() as f64;
    let det_a = log_det(a).value();
    if !(det_a > 0.0) {
        return Err(Error::NonPositiveDeterminant);
    }
    let inv_norm = inverse_spectral_norm(a, POWER_ITERATIONS, 1e-10).ok_or(Error::NonPositiveDeterminant)?;
    let rho_hat = inv_norm * b.norm();
    let c = 17.0 * std::f64::consts::E.sqrt() / 8.0 * m * eps * rho_hat;
    Ok(DetEnvelope { det_a, lo: det_a * (1.0 - c), hi: det_a * (1.0 + c), eps_admissible: 8.0 / (34.0 * m * rho_hat), rho_hat })
}

/// Every closed-form quantity for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    /// Inputs the report was computed from.
    pub inputs: BoundInputs,
    /// `F_min`.
    pub f_min: BoundValue,
    /// `F_max`.
    pub f_max: f64,
    /// `C̄(f0, f1)`.
    pub c_bar: f64,
    /// `P(σ)`.
    pub p_value: f64,
    /// η threshold.
    pub eta_max: EtaMax,
    /// Bound on `‖b‖₂`.
    pub b_norm_bound: BoundValue,
    /// Bound on `‖b^π‖₂`.
    pub b_pi_norm_bound: BoundValue,
    /// `F1`.
    pub f1: BoundValue,
    /// `F2`.
    pub f2: BoundValue,
    /// `F3`.
    pub f3: BoundValue,
    /// `C₁`.
    pub c1: f64,
    /// `C₂`.
    pub c2: f64,
    /// λ₀ for the Gaussian window at Δ, when it exists.
    pub lambda0: Option<f64>,
    /// `λ` below the configured threshold.
    pub lambda_in_regime: bool,
    /// Varah bound of the local-average matrix, when geometry was supplied
    /// and the matrix is dominant.
    pub varah_bound: Option<f64>,
    /// Eigenvalue floor audit, when geometry was supplied.
    pub gershgorin: Option<GershgorinReport>,
}

impl BoundReport {
    /// Flat CSV header matching [`Self::csv_row`].
    pub const CSV_HEADER: [&'static str; 17] = [
        "k", "delta_sep", "sigma", "epsilon", "eta", "lambda", "f0", "f1", "f_bar", "f_min", "f_max", "eta_max",
        "b_norm_bound", "b_pi_norm_bound", "F1", "F2", "F3",
    ];

    /// Flat CSV row for sweep aggregation.
    pub fn csv_row(&self) -> Vec<String> {
        let i = &self.inputs;
        [
            i.k as f64, i.delta_sep, i.sigma, i.epsilon, i.eta, i.lambda, i.f0, i.f1, i.f_bar, self.f_min.value, self.f_max,
            self.eta_max.value.value, self.b_norm_bound.value, self.b_pi_norm_bound.value, self.f1.value, self.f2.value,
            self.f3.value,
        ]
        .iter()
        .map(|v| format!("{v:?}"))
        .collect()
    }
}

/// Computes the full report; `geometry` adds the Varah and eigenvalue-floor audits.
pub fn bound_report(inp: &BoundInputs, lambda_threshold: f64, geometry: Option<(&[f64], &SamplingScheme)>) -> BoundReport {
    let cb = b_norm_bounds(inp);
    let lambda0 = GaussianWindow::new(inp.sigma)
        .ok()
        .and_then(|w| solve_lambda0(&w, inp.delta_sep, LambdaVariant::Full).ok());
    let (varah_bound, gershgorin) = match geometry {
        Some((t, scheme)) => (build_dominance_matrix(t, scheme, None).varah_bound(), gershgorin_floor(t, inp.sigma).ok()),
        None => (None, None),
    };
    BoundReport {
        inputs: *inp,
        f_min: f_min(inp.delta_sep, inp.sigma),
        f_max: f_max(inp.delta_sep, inp.sigma),
        c_bar: c_bar(inp.f0, inp.f1),
        p_value: p_poly(inp.sigma),
        eta_max: eta_max(inp.k, inp.delta_sep, inp.sigma, inp.f0, inp.f1),
        b_norm_bound: cb.b,
        b_pi_norm_bound: cb.b_pi,
        f1: f1_bound(inp),
        f2: f2_bound(inp),
        f3: f3_bound(inp.delta_sep, inp.sigma, inp.lambda),
        c1: c1(inp),
        c2: c2(inp),
        lambda0,
        lambda_in_regime: inp.lambda < lambda_threshold,
        varah_bound,
        gershgorin,
    }
}
