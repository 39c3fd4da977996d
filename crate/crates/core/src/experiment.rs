//! Configuration-driven experiments: exact recovery, stability sweeps,
//! certificate construction, bound reports and the random-separation
//! statistic, with deterministic CSV and JSON output.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    bound_report, build_dominance_matrix, f1_bound, nearest_sample, solve_lambda0, BoundInputs, BoundReport, LambdaVariant,
    DEFAULT_LAMBDA_THRESHOLD,
};
use crate::certificate::{
    build_certificate, choose_f0, max_floor_for, tstar_rate_check, verify_certificate, DualCertificate, F0Choice,
    SeparatorSpec, TStarReport, VerifyReport,
};
use crate::error::{Error, Result};
use crate::measure::{group_partition, min_separation_of, tv_norm, DiscreteMeasure};
use crate::solver::{
    extract_spikes, polish_spikes, solve_refined, spike_errors, verify_uniqueness, GriddedMeasure, SolveReport, DEFAULT_LEVELS,
    DEFAULT_RESOLUTION,
};
use crate::transport::{error_decomposition, error_decomposition_grouped, generalized_wasserstein};
use crate::window::{check_conditions, place_samples, sample_measure, GaussianWindow, Measurement, Noise, SamplingScheme};

/// How sample locations are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// One pair `(tᵢ − uη, tᵢ − uη + η)` per source plus anchor samples.
    #[default]
    Pairs,
    /// Uniform grid at spacing `2λΔ`.
    Uniform,
    /// Explicit sample list.
    Explicit,
}

/// Sampling section of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// Placement rule.
    #[serde(default)]
    pub mode: SamplingMode,
    /// Pair spacing η; defaults to `σ²`.
    pub eta: Option<f64>,
    /// Position `u ∈ [0, 1]` of the source inside its pair; defaults to 1/2.
    pub pair_offset: Option<f64>,
    /// Extra samples in pairs mode; defaults to `[0, 1]`.
    pub anchors: Option<Vec<f64>>,
    /// Samples in explicit mode.
    pub samples: Option<Vec<f64>>,
    /// Proximity λ in uniform mode; defaults to `0.99 λ₀`.
    pub lambda: Option<f64>,
}

/// Solver section of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Coarse grid cells.
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// Refinement levels.
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Starts of the uniqueness audit.
    #[serde(default = "default_starts")]
    pub uniqueness_starts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { resolution: default_resolution(), levels: default_levels(), uniqueness_starts: default_starts() }
    }
}

/// Certificate section of the configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertificateConfig {
    /// Largest acceptable `f0`; the floor `f̄` is the largest value meeting it.
    #[serde(default = "default_f0_target")]
    pub f0_target: f64,
    /// Separator value at 1.
    #[serde(default = "default_f1")]
    pub f1: f64,
    /// Upper limit on `f̄`.
    #[serde(default = "default_f_bar_cap")]
    pub f_bar_cap: f64,
    /// Neighbourhood radius; defaults to `Δ/4`.
    pub epsilon: Option<f64>,
    /// Grid points for verification.
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    /// Sign patterns for `q^π`.
    #[serde(default)]
    pub sign_patterns: Vec<Vec<i8>>,
    /// ρ values for the T*-rate audit; empty skips it.
    #[serde(default)]
    pub rhos: Vec<f64>,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            f0_target: default_f0_target(),
            f1: default_f1(),
            f_bar_cap: default_f_bar_cap(),
            epsilon: None,
            grid_points: default_grid_points(),
            sign_patterns: Vec::new(),
            rhos: Vec::new(),
        }
    }
}

/// Explicit bound inputs; missing values are derived from the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    /// Number of sources.
    pub k: Option<usize>,
    /// Minimum separation.
    pub delta_sep: Option<f64>,
    /// Neighbourhood radius.
    pub epsilon: Option<f64>,
    /// Pair spacing.
    pub eta: Option<f64>,
    /// Sample proximity.
    pub lambda: Option<f64>,
    /// Separator value at 0.
    pub f0: Option<f64>,
    /// Separator value at 1.
    pub f1: Option<f64>,
    /// Separator floor.
    pub f_bar: Option<f64>,
    /// Upper limit on λ; defaults to 0.4.
    pub lambda_threshold: Option<f64>,
}

/// Full experiment configuration, read from TOML by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario name, used as the output file stem.
    #[serde(default = "default_scenario")]
    pub scenario: String,
    /// Source locations; drawn at random from `k` and `seed` when absent.
    pub sources: Option<Vec<f64>>,
    /// Number of random sources.
    pub k: Option<usize>,
    /// Master seed.
    #[serde(default)]
    pub seed: u64,
    /// Source weights; unit weights when absent.
    pub weights: Option<Vec<f64>>,
    /// Window width σ.
    pub sigma: f64,
    /// Noise level δ for `simulate` and `solve`.
    #[serde(default)]
    pub noise: f64,
    /// Measurement CSV read by `solve` instead of simulating.
    pub measurement: Option<PathBuf>,
    /// Sample placement.
    #[serde(default)]
    pub sampling: SamplingConfig,
    /// Noise levels of the sweep.
    #[serde(default)]
    pub deltas: Vec<f64>,
    /// Radii of the sweep; empty couples `ε = δ^{1/7}`.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    /// Trials per sweep point.
    #[serde(default = "default_trials")]
    pub trials: usize,
    /// Compare group masses instead of single sources.
    #[serde(default)]
    pub grouped: bool,
    /// Solver settings.
    #[serde(default)]
    pub solver: SolverConfig,
    /// Certificate settings.
    #[serde(default)]
    pub certificate: CertificateConfig,
    /// Bound inputs.
    #[serde(default)]
    pub bounds: BoundsConfig,
}

fn default_scenario() -> String {
    "experiment".into()
}
fn default_resolution() -> usize {
    DEFAULT_RESOLUTION
}
fn default_levels() -> usize {
    DEFAULT_LEVELS
}
fn default_starts() -> usize {
    20
}
fn default_f0_target() -> f64 {
    4.0
}
fn default_f1() -> f64 {
    1.0
}
fn default_f_bar_cap() -> f64 {
    0.5
}
fn default_grid_points() -> usize {
    10_000
}
fn default_trials() -> usize {
    20
}

impl ExperimentConfig {
    /// Minimal configuration with fixed sources and unit weights.
    pub fn with_sources(scenario: &str, sources: Vec<f64>, sigma: f64) -> Self {
        Self {
            scenario: scenario.into(),
            sources: Some(sources),
            k: None,
            seed: 0,
            weights: None,
            sigma,
            noise: 0.0,
            measurement: None,
            sampling: SamplingConfig::default(),
            deltas: Vec::new(),
            epsilons: Vec::new(),
            trials: default_trials(),
            grouped: false,
            solver: SolverConfig::default(),
            certificate: CertificateConfig::default(),
            bounds: BoundsConfig::default(),
        }
    }

    /// Checks list lengths and referenced files.
    pub fn validate(&self) -> Result<()> {
        if let (Some(s), Some(w)) = (&self.sources, &self.weights) {
            if s.len() != w.len() {
                return Err(Error::InvalidInput("sources and weights differ in length".into()));
            }
        }
        if self.sources.is_none() && self.k.is_none() {
            return Err(Error::InvalidInput("either sources or k is required".into()));
        }
        if let Some(p) = &self.measurement {
            if !p.exists() {
                return Err(Error::Io(format!("measurement file {} not found", p.display())));
            }
        }
        Ok(())
    }

    fn eta(&self) -> f64 {
        self.sampling.eta.unwrap_or(self.sigma * self.sigma)
    }

    /// Resolves sources, weights and samples.
    pub fn scenario(&self) -> Result<Scenario> {
        self.validate()?;
        let window = GaussianWindow::new(self.sigma)?;
        let locations = match &self.sources {
            Some(s) => s.clone(),
            None => {
                let k = self.k.expect("validated");
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                random_sources(&mut rng, k, self.sigma, self.eta()).ok_or(Error::DegenerateConfiguration)?
            }
        };
        let weights = self.weights.clone().unwrap_or_else(|| vec![1.0; locations.len()]);
        let truth = DiscreteMeasure::new(locations, weights)?;
        let t = truth.locations().to_vec();
        let scheme = match self.sampling.mode {
            SamplingMode::Pairs => {
                let anchors = self.sampling.anchors.clone().unwrap_or_else(|| vec![0.0, 1.0]);
                pair_scheme(&t, window, self.eta(), self.sampling.pair_offset.unwrap_or(0.5), &anchors)?
            }
            SamplingMode::Explicit => {
                let s = self.sampling.samples.clone().ok_or_else(|| Error::InvalidInput("explicit mode needs samples".into()))?;
                SamplingScheme::new(s, window)?
            }
            SamplingMode::Uniform => {
                let delta = min_separation_of(&t)?;
                let lambda = match self.sampling.lambda {
                    Some(l) => l,
                    None => 0.99 * solve_lambda0(&window, delta.min(0.5), LambdaVariant::Full)?,
                };
                place_samples(delta, lambda, window)?
            }
        };
        let eta = match self.sampling.mode {
            SamplingMode::Pairs => Some(self.eta()),
            _ => check_conditions(&t, &scheme, self.eta()).ok().and_then(|c| c.eta_min),
        };
        Ok(Scenario { truth, scheme, eta })
    }
}

/// A resolved scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// Ground-truth measure.
    pub truth: DiscreteMeasure,
    /// Samples and window.
    pub scheme: SamplingScheme,
    /// Pair spacing, when the samples contain pairs.
    pub eta: Option<f64>,
}

/// Samples `anchors ∪ {tᵢ − uη, tᵢ − uη + η}`.
pub fn pair_scheme(t: &[f64], window: GaussianWindow, eta: f64, u: f64, anchors: &[f64]) -> Result<SamplingScheme> {
    if !(eta > 0.0) || !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidInput(format!("pair spacing {eta} and offset {u} invalid")));
    }
    let mut s = anchors.to_vec();
    for &ti in t {
        let left = ti - u * eta;
        s.push(left);
        s.push(left + eta);
    }
    s.sort_by(f64::total_cmp);
    SamplingScheme::new(s, window)
}

/// `k` sorted sources satisfying the boundary-margin and separation
/// conditions for `(σ, η)`, by rejection; `None` after 10⁵ attempts.
pub fn random_sources<R: Rng>(rng: &mut R, k: usize, sigma: f64, eta: f64) -> Option<Vec<f64>> {
    let margin = sigma * (-3.0 * eta.ln()).max(0.0).sqrt() + eta;
    let threshold = 1.05 * sigma * (3.0 + 4.0 / (sigma * sigma)).ln().sqrt();
    if k == 0 || margin >= 0.5 {
        return None;
    }
    for _ in 0..100_000 {
        let mut t: Vec<f64> = (0..k).map(|_| rng.random_range(margin..1.0 - margin)).collect();
        t.sort_by(f64::total_cmp);
        if min_separation_of(&t).is_ok_and(|d| d > threshold) {
            return Some(t);
        }
    }
    None
}

/// SplitMix64 step, used to derive per-trial seeds from a counter.
pub fn derive_seed(base: u64, counter: u64) -> u64 {
    let mut z = base.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One checked inequality `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    /// Short identifier.
    pub name: String,
    /// The inequality being checked.
    pub equation: String,
    /// Whether it held everywhere.
    pub holds: bool,
    /// Smallest `rhs − lhs` observed.
    pub margin: f64,
}

impl Assertion {
    fn new(name: &str, equation: &str, margin: f64) -> Self {
        Self { name: name.into(), equation: equation.into(), holds: margin >= 0.0, margin }
    }

    fn flag(name: &str, equation: &str, holds: bool) -> Self {
        Self { name: name.into(), equation: equation.into(), holds, margin: if holds { 0.0 } else { -1.0 } }
    }
}

/// Outcome of [`run_exact_recovery`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactRecoveryReport {
    /// Ground truth.
    pub truth: DiscreteMeasure,
    /// Clustered spikes of the solution.
    pub recovered: DiscreteMeasure,
    /// Number of samples.
    pub m: usize,
    /// Largest location error, infinite on a count mismatch.
    pub location_error: f64,
    /// Largest relative weight error, infinite on a count mismatch.
    pub weight_error: f64,
    /// Final solve diagnostics.
    pub solve: SolveReport,
    /// Multi-start audit.
    pub uniqueness: crate::solver::UniquenessReport,
    /// False when `m < 2k + 1`; the run is then a probe only.
    pub asserted: bool,
    /// Checked inequalities.
    pub assertions: Vec<Assertion>,
}

impl ExactRecoveryReport {
    /// Every assertion held, or the run was a probe.
    pub fn pass(&self) -> bool {
        !self.asserted || self.assertions.iter().all(|a| a.holds)
    }
}

/// Location tolerance of exact recovery.
pub const EXACT_LOCATION_TOL: f64 = 1e-4;
/// Relative weight tolerance of exact recovery.
pub const EXACT_WEIGHT_TOL: f64 = 1e-6;

/// Noise-free round trip: sample, solve, extract, compare, and audit
/// uniqueness from randomised starts.
pub fn run_exact_recovery(cfg: &ExperimentConfig) -> Result<ExactRecoveryReport> {
    let sc = cfg.scenario()?;
    let y = sample_measure(&sc.truth, &sc.scheme, &Noise::None)?;
    let (z, solve) = solve_refined(&y, &sc.scheme, cfg.solver.resolution, cfg.solver.levels)?;
    let eps = min_separation_of(sc.truth.locations())? / 4.0;
    let (recovered, _) = polish_spikes(&extract_spikes(&z, eps), &y, &sc.scheme);
    let (location_error, weight_error) = spike_errors(&recovered, &sc.truth).unwrap_or((f64::INFINITY, f64::INFINITY));
    let uniqueness = verify_uniqueness(&sc.truth, &sc.scheme, cfg.solver.uniqueness_starts, cfg.solver.levels, cfg.seed)?;
    let assertions = vec![
        Assertion::new("location_error", "max |t̂ᵢ − tᵢ| <= 1e-4", EXACT_LOCATION_TOL - location_error),
        Assertion::new("weight_error", "max |âᵢ − aᵢ|/aᵢ <= 1e-6", EXACT_WEIGHT_TOL - weight_error),
        Assertion::flag("uniqueness", "every feasible start clusters to x", uniqueness.unique()),
    ];
    Ok(ExactRecoveryReport {
        m: sc.scheme.len(),
        asserted: sc.scheme.len() > 2 * sc.truth.len(),
        truth: sc.truth,
        recovered,
        location_error,
        weight_error,
        solve,
        uniqueness,
        assertions,
    })
}

/// Certificate with its floor and `f0` selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoCertificate {
    /// The certificate.
    pub certificate: DualCertificate,
    /// The `f0` selection.
    pub f0_choice: F0Choice,
}

/// Builds `q` for `(t, scheme, ε)` with the largest `f̄` whose `f0` stays
/// below the configured target.
pub fn auto_certificate(t: &[f64], scheme: &SamplingScheme, epsilon: f64, cfg: &CertificateConfig) -> Result<AutoCertificate> {
    let f_bar = max_floor_for(t, scheme, epsilon, cfg.f0_target, cfg.f1, cfg.f_bar_cap)?;
    let f0_choice = choose_f0(t, scheme, epsilon, f_bar, cfg.f1)?;
    let sep = SeparatorSpec::plain(f0_choice.f0, cfg.f1, f_bar, epsilon);
    Ok(AutoCertificate { certificate: build_certificate(t, scheme, &sep)?, f0_choice })
}

/// Largest proximity `maxᵢ |tᵢ − s_{l(i)}| / Δ`.
pub fn proximity(t: &[f64], scheme: &SamplingScheme) -> Result<f64> {
    let delta = min_separation_of(t)?;
    let s = scheme.samples();
    Ok(t.iter().map(|&ti| (ti - s[nearest_sample(s, ti)]).abs()).fold(0.0, f64::max) / delta)
}

/// Bound inputs from the scenario and a certificate, with explicit
/// overrides from the configuration.
pub fn derive_bound_inputs(sc: &Scenario, cert: &DualCertificate, over: &BoundsConfig) -> Result<BoundInputs> {
    let t = sc.truth.locations();
    let sep = &cert.separator;
    Ok(BoundInputs {
        k: over.k.unwrap_or(t.len()),
        delta_sep: over.delta_sep.unwrap_or(min_separation_of(t)?),
        sigma: sc.scheme.window().sigma(),
        epsilon: over.epsilon.unwrap_or(sep.epsilon),
        eta: over.eta.or(sc.eta).unwrap_or(f64::NAN),
        lambda: over.lambda.unwrap_or(proximity(t, &sc.scheme)?),
        f0: over.f0.unwrap_or(sep.f0),
        f1: over.f1.unwrap_or(sep.f1),
        f_bar: over.f_bar.unwrap_or(sep.f_bar),
    })
}

fn certificate_epsilon(cfg: &ExperimentConfig, t: &[f64]) -> Result<f64> {
    let delta = min_separation_of(t)?;
    Ok(cfg.certificate.epsilon.unwrap_or(delta / 4.0))
}

/// Bound report for the configured scenario.
pub fn run_bounds(cfg: &ExperimentConfig) -> Result<BoundReport> {
    let sc = cfg.scenario()?;
    let t = sc.truth.locations();
    let b = &cfg.bounds;
    let inputs = if let (Some(k), Some(d), Some(e), Some(eta), Some(l), Some(f0), Some(f1), Some(fb)) =
        (b.k, b.delta_sep, b.epsilon, b.eta, b.lambda, b.f0, b.f1, b.f_bar)
    {
        BoundInputs { k, delta_sep: d, sigma: cfg.sigma, epsilon: e, eta, lambda: l, f0, f1, f_bar: fb }
    } else {
        let auto = auto_certificate(t, &sc.scheme, certificate_epsilon(cfg, t)?, &cfg.certificate)?;
        derive_bound_inputs(&sc, &auto.certificate, b)?
    };
    Ok(bound_report(&inputs, b.lambda_threshold.unwrap_or(DEFAULT_LAMBDA_THRESHOLD), Some((t, &sc.scheme))))
}

/// Outcome of [`run_certify`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    /// Certificate for the plain separator.
    pub certificate: AutoCertificate,
    /// Its verification.
    pub verify: VerifyReport,
    /// Certificates for the sign patterns, with their verification.
    pub sign_certificates: Vec<(DualCertificate, VerifyReport)>,
    /// T*-rate audit, when ρ values were configured.
    pub tstar: Option<TStarReport>,
    /// Checked properties.
    pub assertions: Vec<Assertion>,
}

impl CertifyReport {
    /// Every assertion held.
    pub fn pass(&self) -> bool {
        self.assertions.iter().all(|a| a.holds)
    }

    /// `t,q,F` on a uniform grid with `n` points.
    pub fn samples_csv(&self, t: &[f64], n: usize) -> String {
        let c = &self.certificate.certificate;
        let mut out = String::from("t,q,F\n");
        for i in 0..n.max(2) {
            let p = i as f64 / (n.max(2) - 1) as f64;
            out.push_str(&format!("{p:?},{:?},{:?}\n", c.eval(p), c.separator.eval(p, t)));
        }
        out
    }
}

/// Builds and verifies the certificates of the configured scenario.
pub fn run_certify(cfg: &ExperimentConfig) -> Result<CertifyReport> {
    let sc = cfg.scenario()?;
    let t = sc.truth.locations();
    let eps = certificate_epsilon(cfg, t)?;
    let auto = auto_certificate(t, &sc.scheme, eps, &cfg.certificate)?;
    let verify = verify_certificate(&auto.certificate, t, cfg.certificate.grid_points);
    let mut assertions = vec![
        Assertion::new("interpolation", "max |q(tᵢ)| <= 1e-8", 1e-8 - verify.max_source_error),
        Assertion::new("domination", "min (q − F) >= -1e-8 off T_eps", verify.min_margin + 1e-8),
    ];
    let mut sign_certificates = Vec::new();
    for pi in &cfg.certificate.sign_patterns {
        if pi.len() != t.len() {
            return Err(Error::InvalidInput("sign pattern length differs from k".into()));
        }
        let c = build_certificate(t, &sc.scheme, &auto.certificate.separator.with_signs(pi.clone()))?;
        let v = verify_certificate(&c, t, cfg.certificate.grid_points);
        assertions.push(Assertion::new("sign_interpolation", "max |q^π(tᵢ) − πᵢ| <= 1e-8", 1e-8 - v.max_source_error));
        sign_certificates.push((c, v));
    }
    let tstar = if cfg.certificate.rhos.is_empty() {
        None
    } else {
        let r = tstar_rate_check(t, &sc.scheme, &auto.certificate.separator, &cfg.certificate.rhos)?;
        let worst = r.slopes.iter().map(|s| (s - r.k as f64).abs()).fold(0.0, f64::max);
        assertions.push(Assertion::new("tstar_rate", "|slope − k| <= 0.1", 0.1 - worst));
        assertions.push(Assertion::flag("tstar_sign", "det M^ρ > 0", r.determinant_positive));
        Some(r)
    };
    Ok(CertifyReport { certificate: auto, verify, sign_certificates, tstar, assertions })
}

/// One noisy trial at one `(δ, ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    /// Trial index.
    pub trial: usize,
    /// Noise level δ.
    pub delta: f64,
    /// Radius ε in the Wasserstein bound.
    pub epsilon: f64,
    /// Radius of the neighbourhoods and certificate, `min(ε, Δ/2)`.
    pub epsilon_local: f64,
    /// `d_GW(x̂, x)`.
    pub d_gw: f64,
    /// `F1 δ + ‖x‖_TV ε`.
    pub gw_bound: f64,
    /// `‖x̂‖_TV`.
    pub tv_hat: f64,
    /// `∫_{T_ε^C} x̂`.
    pub tail_mass: f64,
    /// `2‖b‖₂ δ / f̄`.
    pub tail_bound: f64,
    /// Per-source (or per-group) local-average errors.
    pub local_errors: Vec<f64>,
    /// `(2(1 + φ^∞‖b‖₂/f̄)δ + c L ε ‖x̂‖_TV) · Varah`, `c = 2k − 1` in grouped mode.
    pub local_bound: f64,
    /// `‖b‖₂` of the certificate used.
    pub b_norm: f64,
    /// Floor `f̄` of the certificate used.
    pub f_bar: f64,
    /// Final solver residual.
    pub residual: f64,
}

impl SweepRecord {
    /// CSV header.
    pub const HEADER: [&'static str; 14] = [
        "trial", "delta", "epsilon", "epsilon_local", "d_gw", "gw_bound", "tv_hat", "tail_mass", "tail_bound",
        "local_errors", "local_bound", "b_norm", "f_bar", "residual",
    ];

    fn row(&self) -> Vec<String> {
        let f = |v: f64| format!("{v:?}");
        vec![
            self.trial.to_string(),
            f(self.delta),
            f(self.epsilon),
            f(self.epsilon_local),
            f(self.d_gw),
            f(self.gw_bound),
            f(self.tv_hat),
            f(self.tail_mass),
            f(self.tail_bound),
            self.local_errors.iter().map(|v| f(*v)).collect::<Vec<_>>().join(";"),
            f(self.local_bound),
            f(self.b_norm),
            f(self.f_bar),
            f(self.residual),
        ]
    }
}

/// Records and checked assertions of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    /// All records, ordered by δ index, trial, ε index.
    pub records: Vec<SweepRecord>,
    /// Checked inequalities.
    pub assertions: Vec<Assertion>,
    /// Median `d_GW` per δ, in configuration order.
    pub medians: Vec<(f64, f64)>,
    /// Least-squares slope of `ln median d_GW` against `ln δ`; informational.
    pub empirical_rate: Option<f64>,
}

impl SweepOutcome {
    /// Every assertion held.
    pub fn pass(&self) -> bool {
        self.assertions.iter().all(|a| a.holds)
    }
}

/// Largest ε admitted for neighbourhoods, just inside `Δ/2`.
pub fn local_epsilon(epsilon: f64, delta_sep: f64) -> f64 {
    epsilon.min(0.999 * delta_sep / 2.0)
}

struct CertCache {
    entries: Vec<(f64, AutoCertificate)>,
}

impl CertCache {
    fn get(&mut self, t: &[f64], scheme: &SamplingScheme, eps: f64, cfg: &CertificateConfig) -> Result<&AutoCertificate> {
        if let Some(i) = self.entries.iter().position(|(e, _)| *e == eps) {
            return Ok(&self.entries[i].1);
        }
        self.entries.push((eps, auto_certificate(t, scheme, eps, cfg)?));
        Ok(&self.entries.last().expect("just pushed").1)
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Noisy solves over every `(δ, trial, ε)`, with the Wasserstein,
/// local-average and tail quantities of each record.
pub fn sweep_records(cfg: &ExperimentConfig) -> Result<Vec<SweepRecord>> {
    if cfg.deltas.is_empty() {
        return Err(Error::InvalidInput("sweep needs a nonempty delta list".into()));
    }
    let sc = cfg.scenario()?;
    let t = sc.truth.locations().to_vec();
    let delta_sep = min_separation_of(&t)?;
    let tv = tv_norm(&sc.truth);
    let w = *sc.scheme.window();
    let k = t.len();
    let mut cache = CertCache { entries: Vec::new() };
    let mut records = Vec::new();
    for (di, &delta) in cfg.deltas.iter().enumerate() {
        for trial in 0..cfg.trials {
            let seed = derive_seed(cfg.seed, (di * cfg.trials + trial) as u64);
            let y = sample_measure(&sc.truth, &sc.scheme, &Noise::Seeded { seed, delta })?;
            let (z, rep) = solve_refined(&y, &sc.scheme, cfg.solver.resolution, cfg.solver.levels)?;
            let x_hat = z.to_discrete();
            let d_gw = generalized_wasserstein(&x_hat, &sc.truth).distance;
            let tv_hat = tv_norm(&x_hat);
            let eps_list: Vec<f64> = if cfg.epsilons.is_empty() { vec![delta.powf(1.0 / 7.0)] } else { cfg.epsilons.clone() };
            for &epsilon in &eps_list {
                let eps_loc = local_epsilon(epsilon, delta_sep);
                let auto = cache.get(&t, &sc.scheme, eps_loc, &cfg.certificate)?.clone();
                let cert = &auto.certificate;
                let inputs = derive_bound_inputs(&sc, cert, &cfg.bounds)?;
                let f1 = f1_bound(&inputs).value;
                let b_norm = cert.b_norm();
                let f_bar = cert.separator.f_bar;
                // Grouping needs the unclamped ε: below Δ/2 no two sources merge.
                let (dec, varah, c_lip, eps_near) = if cfg.grouped {
                    let part = group_partition(&sc.truth, epsilon);
                    let a = build_dominance_matrix(&t, &sc.scheme, Some(&part));
                    (error_decomposition_grouped(&x_hat, &sc.truth, epsilon), a.varah_bound(), (2 * k - 1) as f64, epsilon)
                } else {
                    let a = build_dominance_matrix(&t, &sc.scheme, None);
                    (error_decomposition(&x_hat, &sc.truth, eps_loc), a.varah_bound(), 1.0, eps_loc)
                };
                let phi_inf = 1.0;
                let local_bound = (2.0 * (1.0 + phi_inf * b_norm / f_bar) * delta + c_lip * w.lipschitz() * eps_near * tv_hat)
                    * varah.unwrap_or(f64::NAN);
                records.push(SweepRecord {
                    trial,
                    delta,
                    epsilon,
                    epsilon_local: eps_loc,
                    d_gw,
                    gw_bound: f1 * delta + tv * epsilon,
                    tv_hat,
                    tail_mass: dec.tail_mass,
                    tail_bound: 2.0 * b_norm * delta / f_bar,
                    local_errors: dec.local_errors,
                    local_bound,
                    b_norm,
                    f_bar,
                    residual: rep.residual,
                });
            }
        }
    }
    Ok(records)
}

fn min_margin<I: Iterator<Item = f64>>(it: I) -> f64 {
    it.map(|v| if v.is_nan() { f64::NEG_INFINITY } else { v }).fold(f64::INFINITY, f64::min)
}

/// Median ceiling at the smallest δ for the decay assertion.
pub const DECAY_CEILING: f64 = 1e-2;

/// Wasserstein stability sweep: per-record bound, median trend and decay.
pub fn run_stability_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    let records = sweep_records(cfg)?;
    Ok(stability_outcome(cfg, records))
}

fn trial_medians(cfg: &ExperimentConfig, records: &[SweepRecord]) -> Vec<(f64, f64)> {
    // One d_GW per (δ, trial): records repeat it across ε.
    cfg.deltas
        .iter()
        .map(|&d| {
            let mut v: Vec<f64> = (0..cfg.trials)
                .filter_map(|tr| records.iter().find(|r| r.delta == d && r.trial == tr).map(|r| r.d_gw))
                .collect();
            (d, median(&mut v))
        })
        .collect()
}

fn stability_outcome(cfg: &ExperimentConfig, records: Vec<SweepRecord>) -> SweepOutcome {
    let medians = trial_medians(cfg, &records);
    let mut assertions = vec![Assertion::new(
        "wasserstein_stability",
        "d_GW(x̂, x) <= F1·δ + ‖x‖_TV·ε",
        min_margin(records.iter().map(|r| r.gw_bound - r.d_gw)),
    )];
    let mut sorted = medians.clone();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let trend = min_margin(sorted.windows(2).map(|p| 2.0 * p[0].1 - p[1].1));
    assertions.push(Assertion::new("median_trend", "median d_GW(δ_small) <= 2·median d_GW(δ_large)", if sorted.len() < 2 { 0.0 } else { trend }));
    let smallest = sorted.last().map_or(f64::NAN, |p| p.1);
    assertions.push(Assertion::new("decay", "median d_GW at smallest δ < 1e-2", DECAY_CEILING - smallest));
    let empirical_rate = log_slope(&medians);
    SweepOutcome { records, assertions, medians, empirical_rate }
}

fn average_assertions(records: &[SweepRecord]) -> Vec<Assertion> {
    vec![
        Assertion::new("tail_away", "∫_{T_ε^C} x̂ <= 2‖b‖₂δ/f̄", min_margin(records.iter().map(|r| r.tail_bound - r.tail_mass))),
        Assertion::new(
            "local_average",
            "|∫_{T_i,ε} x̂ − aᵢ| <= (2(1 + φ^∞‖b‖₂/f̄)δ + L·ε·‖x̂‖_TV)·‖A⁻¹‖_∞",
            min_margin(records.iter().flat_map(|r| r.local_errors.iter().map(move |e| r.local_bound - e))),
        ),
    ]
}

/// Average-stability records with the tail and local-average assertions.
pub fn run_average_stability(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    let records = sweep_records(cfg)?;
    let medians = trial_medians(cfg, &records);
    let assertions = average_assertions(&records);
    Ok(SweepOutcome { empirical_rate: log_slope(&medians), records, assertions, medians })
}

/// Both sweeps from a single pass over the trials.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome> {
    let records = sweep_records(cfg)?;
    let extra = average_assertions(&records);
    let mut out = stability_outcome(cfg, records);
    out.assertions.extend(extra);
    Ok(out)
}

fn log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.ln(), p.1.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let xm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - xm).powi(2)).sum();
    Some(pts.iter().map(|p| (p.0 - xm) * (p.1 - ym)).sum::<f64>() / sxx)
}

/// Monte Carlo estimate of `E[Δ(T)]` for `k` uniform sources.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationStatistic {
    /// Number of sources.
    pub k: usize,
    /// Trials.
    pub trials: usize,
    /// Sample mean of Δ(T).
    pub mean: f64,
    /// `1/(k+1)²`.
    pub expected: f64,
    /// `|mean − expected| / expected`.
    pub relative_error: f64,
}

/// Mean minimum separation of `k` uniform points on `[0, 1]`, endpoints
/// included, against `1/(k+1)²`.
pub fn run_random_separation(k: usize, trials: usize, seed: u64) -> Result<SeparationStatistic> {
    if k == 0 {
        return Err(Error::NoSources);
    }
    if trials < 1000 {
        return Err(Error::InvalidInput(format!("need at least 1000 trials, got {trials}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = vec![0.0; k];
    let mut total = 0.0;
    for _ in 0..trials {
        for v in t.iter_mut() {
            *v = rng.random::<f64>();
        }
        t.sort_by(f64::total_cmp);
        total += min_separation_of(&t)?;
    }
    let mean = total / trials as f64;
    let expected = 1.0 / ((k + 1) * (k + 1)) as f64;
    Ok(SeparationStatistic { k, trials, mean, expected, relative_error: (mean - expected).abs() / expected })
}

/// JSON summary written next to the sweep CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    /// Every assertion held.
    pub pass: bool,
    /// Number of CSV rows.
    pub records: usize,
    /// Checked inequalities.
    pub assertions: Vec<Assertion>,
    /// Median `d_GW` per δ.
    pub medians: Vec<(f64, f64)>,
    /// Informational log-log slope of the medians.
    pub empirical_rate: Option<f64>,
}

/// Sweep records as CSV text, header first.
pub fn records_csv(records: &[SweepRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SweepRecord::HEADER)?;
    for r in records {
        w.write_record(r.row())?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir` and returns both paths.
pub fn emit_report(outcome: &SweepOutcome, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&csv_path, records_csv(&outcome.records)?)?;
    let summary = ReportSummary {
        pass: outcome.pass(),
        records: outcome.records.len(),
        assertions: outcome.assertions.clone(),
        medians: outcome.medians.clone(),
        empirical_rate: outcome.empirical_rate,
    };
    fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok((csv_path, json_path))
}

/// Solves the configured measurement, or a simulated one, and clusters the
/// result at `Δ/4`.
pub fn run_solve(cfg: &ExperimentConfig, y: &Measurement, scheme: &SamplingScheme) -> Result<(GriddedMeasure, DiscreteMeasure, SolveReport)> {
    let (z, rep) = solve_refined(y, scheme, cfg.solver.resolution, cfg.solver.levels)?;
    let eps = match &cfg.sources {
        Some(s) if !s.is_empty() => {
            let mut s = s.clone();
            s.sort_by(f64::total_cmp);
            min_separation_of(&s)? / 4.0
        }
        _ => z.cell_width * 2.0,
    };
    let spikes = extract_spikes(&z, eps);
    Ok((z, spikes, rep))
}
