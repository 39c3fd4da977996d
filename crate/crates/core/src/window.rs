//! Gaussian window, measurement map, forward sampling, sample placement
//! and the window conditions checker.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::{min_separation_of, DiscreteMeasure};

/// `g(t) = exp(−t²/σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianWindow {
    sigma: f64,
}

impl GaussianWindow {
    /// Window of width `sigma > 0`.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidInput(format!("sigma {sigma} must be positive")));
        }
        Ok(Self { sigma })
    }

    /// Width σ.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `g(t)`.
    pub fn g(&self, t: f64) -> f64 {
        (-(t * t) / (self.sigma * self.sigma)).exp()
    }

    /// `g'(t) = −(2t/σ²) g(t)`.
    pub fn dg(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        -2.0 * t / s2 * self.g(t)
    }

    /// `g''(t) = (−2/σ² + 4t²/σ⁴) g(t)`.
    pub fn d2g(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (-2.0 / s2 + 4.0 * t * t / (s2 * s2)) * self.g(t)
    }

    /// `g'''(t) = (12t/σ⁴ − 8t³/σ⁶) g(t)`.
    pub fn d3g(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        (12.0 * t / (s2 * s2) - 8.0 * t * t * t / (s2 * s2 * s2)) * self.g(t)
    }

    /// Lipschitz constant of `g` itself, `max |g'| = √2 e^{−1/2} / σ`.
    pub fn lipschitz(&self) -> f64 {
        std::f64::consts::SQRT_2 * (-0.5f64).exp() / self.sigma
    }
}

/// Evaluates `g` or one of its first three derivatives.
pub fn g_eval(window: &GaussianWindow, t: f64, order: u8) -> Result<f64> {
    match order {
        0 => Ok(window.g(t)),
        1 => Ok(window.dg(t)),
        2 => Ok(window.d2g(t)),
        3 => Ok(window.d3g(t)),
        o => Err(Error::InvalidOrder(o)),
    }
}

/// Sample locations together with the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingScheme {
    samples: Vec<f64>,
    window: GaussianWindow,
}

impl SamplingScheme {
    /// Validates a strictly increasing, nonempty sample list inside `[0, 1]`.
    pub fn new(samples: Vec<f64>, window: GaussianWindow) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("no samples".into()));
        }
        if samples.iter().any(|s| !(0.0..=1.0).contains(s)) {
            return Err(Error::InvalidInput("samples must lie in [0,1]".into()));
        }
        if samples.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("samples must be strictly increasing".into()));
        }
        Ok(Self { samples, window })
    }

    /// Sample locations `s_1 < … < s_m`.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// The window.
    pub fn window(&self) -> &GaussianWindow {
        &self.window
    }

    /// Number of samples `m`.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    /// Always false; schemes hold at least one sample.
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `Φ(t)`, the vector `[g(t − s_j)]_j`.
    pub fn phi(&self, t: f64) -> Vec<f64> {
        self.samples.iter().map(|&s| self.window.g(t - s)).collect()
    }
}

/// Noisy samples `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    /// Values `y_j`.
    pub values: Vec<f64>,
    /// Noise bound δ with `‖η‖₂ ≤ δ`.
    pub noise_level: f64,
}

impl Measurement {
    /// CSV with header `j,s_j,y_j`.
    pub fn to_csv(&self, scheme: &SamplingScheme) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["j", "s_j", "y_j"])?;
        for (j, (s, y)) in scheme.samples().iter().zip(&self.values).enumerate() {
            w.write_record([(j + 1).to_string(), format!("{s:?}"), format!("{y:?}")])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }

    /// Parses the CSV written by [`Self::to_csv`], returning samples and values.
    pub fn from_csv(text: &str, noise_level: f64) -> Result<(Vec<f64>, Self)> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let mut samples = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec.get(i)
                    .ok_or_else(|| Error::InvalidInput("short measurement row".into()))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidInput(e.to_string()))
            };
            samples.push(field(1)?);
            values.push(field(2)?);
        }
        Ok((samples, Self { values, noise_level }))
    }
}

/// How measurement noise is supplied.
#[derive(Debug, Clone, PartialEq)]
pub enum Noise {
    /// Exact samples, δ = 0.
    None,
    /// A given noise vector; δ is set to its norm.
    Explicit(Vec<f64>),
    /// Uniform on the ℓ₂ ball of radius `delta`, drawn from a seeded generator.
    Seeded {
        /// Generator seed.
        seed: u64,
        /// Ball radius.
        delta: f64,
    },
}

/// Draws a point uniformly from the ℓ₂ ball of radius `delta` in `R^m`.
pub fn uniform_ball<R: Rng>(rng: &mut R, m: usize, delta: f64) -> Vec<f64> {
    if m == 0 || delta == 0.0 {
        return vec![0.0; m];
    }
    let mut v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let u: f64 = rng.random::<f64>();
    let radius = delta * u.powf(1.0 / m as f64);
    for x in &mut v {
        *x *= radius / norm;
    }
    v
}

/// `y_j = Σᵢ aᵢ g(tᵢ − s_j) + η_j`.
pub fn sample_measure(mu: &DiscreteMeasure, scheme: &SamplingScheme, noise: &Noise) -> Result<Measurement> {
    let m = scheme.len();
    let mut values: Vec<f64> = scheme
        .samples()
        .iter()
        .map(|&s| mu.atoms().map(|(t, a)| a * scheme.window().g(t - s)).sum())
        .collect();
    let (eta, delta) = match noise {
        Noise::None => (vec![0.0; m], 0.0),
        Noise::Explicit(v) => {
            if v.len() != m {
                return Err(Error::InvalidInput(format!("noise has length {} not {m}", v.len())));
            }
            (v.clone(), v.iter().map(|x| x * x).sum::<f64>().sqrt())
        }
        Noise::Seeded { seed, delta } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            (uniform_ball(&mut rng, m, *delta), *delta)
        }
    };
    for (y, e) in values.iter_mut().zip(eta) {
        *y += e;
    }
    Ok(Measurement { values, noise_level: delta })
}

/// `m × |points|` matrix with entries `g(point_p − s_j)`.
pub fn phi_matrix(scheme: &SamplingScheme, points: &[f64]) -> DMatrix<f64> {
    let w = scheme.window();
    DMatrix::from_fn(scheme.len(), points.len(), |j, p| w.g(points[p] - scheme.samples()[j]))
}

/// Outcome of the four window conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionsReport {
    /// `s_1 = 0` and `s_m = 1`.
    pub endpoints: bool,
    /// Every source has a sample pair `(s, s + η)` with `|s − tᵢ| ≤ η`, and `η ≤ σ²`.
    pub sample_pairs: bool,
    /// Sources and interior samples stay `σ√(log(1/η³))` away from the boundary.
    pub boundary_margin_ok: bool,
    /// `σ ≤ √2` and `Δ(T) > σ√(log(3 + 4/σ²))`.
    pub separation_ok: bool,
    /// The η that was checked.
    pub eta: f64,
    /// Smallest η for which the pair property holds with the given samples.
    pub eta_min: Option<f64>,
    /// Boundary margin `σ√(log(1/η³))`.
    pub boundary_margin: f64,
    /// Minimum separation Δ(T).
    pub separation: f64,
    /// Separation threshold `σ√(log(3 + 4/σ²))`.
    pub separation_threshold: f64,
}

impl ConditionsReport {
    /// All four properties hold.
    pub fn pass(&self) -> bool {
        self.endpoints && self.sample_pairs && self.boundary_margin_ok && self.separation_ok
    }
}

fn gap_matches(gap: f64, eta: f64) -> bool {
    (gap - eta).abs() <= 1e-9 * eta.max(1e-300)
}

fn pairs_hold(t: &[f64], s: &[f64], eta: f64) -> bool {
    t.iter().all(|&ti| {
        s.windows(2)
            .any(|w| gap_matches(w[1] - w[0], eta) && (w[0] - ti).abs() <= eta * (1.0 + 1e-12))
    })
}

/// Checks the four window conditions for sources `t` and the given scheme.
pub fn check_conditions(t: &[f64], scheme: &SamplingScheme, eta: f64) -> Result<ConditionsReport> {
    if !(eta > 0.0) {
        return Err(Error::InvalidInput(format!("eta {eta} must be positive")));
    }
    let s = scheme.samples();
    let sigma = scheme.window().sigma();
    let m = s.len();
    let endpoints = s[0] == 0.0 && s[m - 1] == 1.0;
    let sample_pairs = eta <= sigma * sigma && pairs_hold(t, s, eta);
    let eta_min = s
        .windows(2)
        .map(|w| w[1] - w[0])
        .filter(|&g| pairs_hold(t, s, g))
        .fold(None, |acc: Option<f64>, g| Some(acc.map_or(g, |a| a.min(g))));
    let margin = sigma * (-3.0 * eta.ln()).max(0.0).sqrt();
    let interior = if m > 2 { &s[1..m - 1] } else { &s[0..0] };
    let boundary_margin_ok = t
        .iter()
        .chain(interior)
        .all(|&v| v >= margin && v <= 1.0 - margin);
    let separation = min_separation_of(t).unwrap_or(f64::INFINITY);
    let threshold = sigma * (3.0 + 4.0 / (sigma * sigma)).ln().sqrt();
    let separation_ok = sigma <= std::f64::consts::SQRT_2 && separation > threshold;
    Ok(ConditionsReport {
        endpoints,
        sample_pairs,
        boundary_margin_ok,
        separation_ok,
        eta,
        eta_min,
        boundary_margin: margin,
        separation,
        separation_threshold: threshold,
    })
}

/// Uniform samples at spacing `2λ₀Δ` from 0, with the last point snapped to 1.
pub fn place_samples(delta_sep: f64, lambda0: f64, window: GaussianWindow) -> Result<SamplingScheme> {
    if !(lambda0 > 0.0 && lambda0 < 0.5) || !(delta_sep > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need 0 < λ₀ < 1/2 and Δ > 0, got λ₀ = {lambda0}, Δ = {delta_sep}"
        )));
    }
    let h = 2.0 * lambda0 * delta_sep;
    if h >= 1.0 {
        return Err(Error::SpacingTooLarge(h));
    }
    let n = (1.0 / h - 1e-9).ceil() as usize;
    let mut samples: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    samples.push(1.0);
    SamplingScheme::new(samples, window)
}

/// `L = 2√m / (σ√(2e))`, the Lipschitz constant of the measurement map
/// with respect to the generalised Wasserstein distance.
pub fn lipschitz_constant(m: usize, sigma: f64) -> f64 {
    2.0 * (m as f64).sqrt() / (sigma * (2.0 * std::f64::consts::E).sqrt())
}
