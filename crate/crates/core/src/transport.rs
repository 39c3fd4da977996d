//! Wasserstein and generalised Wasserstein distances between discrete
//! measures, local error functionals and the residual heuristic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::certificate::DualCertificate;
use crate::error::{Error, Result};
use crate::measure::{group_partition, local_mass, neighborhoods_of, tv_norm, DiscreteMeasure};

/// Relative tolerance for the equal-mass precondition of [`wasserstein`].
pub const MASS_TOL: f64 = 1e-12;

/// One entry of a transport plan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    /// Atom index in the first measure.
    pub from: usize,
    /// Atom index in the second measure.
    pub to: usize,
    /// Mass moved.
    pub mass: f64,
}

/// Distance together with an optimal plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportResult {
    /// Optimal cost.
    pub distance: f64,
    /// Transported masses.
    pub plan: Vec<PlanEntry>,
    /// Mass removed from the first measure.
    pub dropped_mass_left: f64,
    /// Mass removed from the second measure.
    pub dropped_mass_right: f64,
    /// Largest negative reduced cost on a residual arc; zero certifies optimality.
    pub reduced_cost_violation: f64,
}

impl TransportResult {
    /// Plan as CSV `from,to,mass`.
    pub fn plan_csv(&self) -> String {
        let mut out = String::from("from,to,mass\n");
        for e in &self.plan {
            out.push_str(&format!("{},{},{:?}\n", e.from, e.to, e.mass));
        }
        out
    }

    /// Row and column sums of the plan.
    pub fn marginals(&self, n_left: usize, n_right: usize) -> (Vec<f64>, Vec<f64>) {
        let mut l = vec![0.0; n_left];
        let mut r = vec![0.0; n_right];
        for e in &self.plan {
            l[e.from] += e.mass;
            r[e.to] += e.mass;
        }
        (l, r)
    }
}

/// `∫₀¹ |F_μ − F_ν|` for measures of equal mass.
pub fn cdf_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let mut pts: Vec<(f64, f64)> = mu.atoms().chain(nu.atoms().map(|(t, a)| (t, -a))).collect();
    pts.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut acc = 0.0;
    let mut total = 0.0;
    for w in pts.windows(2) {
        acc += w[0].1;
        total += acc.abs() * (w[1].0 - w[0].0);
    }
    total
}

/// Exact 1-D optimal transport between measures of equal mass through the
/// monotone coupling, cross-checked against the CDF formula.
pub fn wasserstein(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportResult> {
    let (m1, m2) = (tv_norm(mu), tv_norm(nu));
    if (m1 - m2).abs() > MASS_TOL * m1.max(m2).max(1.0) {
        return Err(Error::UnequalMass(m1, m2));
    }
    let (x, a) = (mu.locations(), mu.weights());
    let (y, b) = (nu.locations(), nu.weights());
    let mut plan = Vec::new();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a.first().copied().unwrap_or(0.0), b.first().copied().unwrap_or(0.0));
    let mut distance = 0.0;
    while i < x.len() && j < y.len() {
        let mv = ra.min(rb);
        if mv > 0.0 {
            plan.push(PlanEntry { from: i, to: j, mass: mv });
            distance += mv * (x[i] - y[j]).abs();
        }
        ra -= mv;
        rb -= mv;
        // Advance the exhausted side; on a tie advance both.
        let adv_i = ra <= rb;
        let adv_j = rb <= ra;
        if adv_i {
            i += 1;
            ra = a.get(i).copied().unwrap_or(0.0);
        }
        if adv_j {
            j += 1;
            rb = b.get(j).copied().unwrap_or(0.0);
        }
    }
    let cdf = cdf_distance(mu, nu);
    debug_assert!((cdf - distance).abs() <= 1e-9 * (1.0 + m1), "coupling {distance} vs cdf {cdf}");
    Ok(TransportResult { distance, plan, dropped_mass_left: 0.0, dropped_mass_right: 0.0, reduced_cost_violation: 0.0 })
}

#[derive(Debug, Clone)]
struct Arc {
    to: usize,
    rev: usize,
    cap: f64,
    cost: f64,
}

struct FlowNetwork {
    adj: Vec<Vec<Arc>>,
}

impl FlowNetwork {
    fn new(n: usize) -> Self {
        Self { adj: vec![Vec::new(); n] }
    }

    fn add(&mut self, u: usize, v: usize, cap: f64, cost: f64) -> (usize, usize) {
        let ru = self.adj[v].len();
        let rv = self.adj[u].len();
        self.adj[u].push(Arc { to: v, rev: ru, cap, cost });
        self.adj[v].push(Arc { to: u, rev: rv, cap: 0.0, cost: -cost });
        (u, rv)
    }

    fn flow_on(&self, (u, idx): (usize, usize)) -> f64 {
        let a = &self.adj[u][idx];
        self.adj[a.to][a.rev].cap
    }

    /// Successive shortest paths with Dijkstra on reduced costs. Returns the
    /// final potentials.
    fn min_cost_flow(&mut self, s: usize, t: usize, demand: f64, cap_tol: f64) -> Vec<f64> {
        let n = self.adj.len();
        let mut pot = vec![0.0; n];
        let mut remaining = demand;
        while remaining > cap_tol {
            let mut dist = vec![f64::INFINITY; n];
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
            dist[s] = 0.0;
            let mut heap = BinaryHeap::new();
            heap.push(HeapItem(0.0, s));
            while let Some(HeapItem(d, u)) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for (ei, a) in self.adj[u].iter().enumerate() {
                    if a.cap <= cap_tol {
                        continue;
                    }
                    let rc = (a.cost + pot[u] - pot[a.to]).max(0.0);
                    let nd = d + rc;
                    if nd < dist[a.to] {
                        dist[a.to] = nd;
                        prev[a.to] = Some((u, ei));
                        heap.push(HeapItem(nd, a.to));
                    }
                }
            }
            if !dist[t].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    pot[v] += dist[v];
                }
            }
            let mut push = remaining;
            let mut v = t;
            while let Some((u, ei)) = prev[v] {
                push = push.min(self.adj[u][ei].cap);
                v = u;
            }
            let mut v = t;
            while let Some((u, ei)) = prev[v] {
                let rev = self.adj[u][ei].rev;
                self.adj[u][ei].cap -= push;
                self.adj[v][rev].cap += push;
                v = u;
            }
            remaining -= push;
        }
        pot
    }

    fn reduced_cost_violation(&self, pot: &[f64], cap_tol: f64) -> f64 {
        let mut worst: f64 = 0.0;
        for (u, arcs) in self.adj.iter().enumerate() {
            for a in arcs {
                if a.cap > cap_tol && pot[u].is_finite() && pot[a.to].is_finite() {
                    worst = worst.max(-(a.cost + pot[u] - pot[a.to]));
                }
            }
        }
        worst
    }
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

/// Generalised Wasserstein distance as partial transport: mass is either
/// moved at cost `|x − y|` or dropped from one side at cost 1 per unit.
///
/// Solved as a min-cost flow with one virtual node per side that absorbs the
/// dropped mass of the other side.
pub fn generalized_wasserstein(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> TransportResult {
    let (n1, n2) = (mu.len(), nu.len());
    let (m1, m2) = (tv_norm(mu), tv_norm(nu));
    let total = m1 + m2;
    if total == 0.0 {
        return TransportResult { distance: 0.0, plan: vec![], dropped_mass_left: 0.0, dropped_mass_right: 0.0, reduced_cost_violation: 0.0 };
    }
    // Nodes: source, left atoms, left virtual, right atoms, right virtual, sink.
    let s = 0;
    let left = |i: usize| 1 + i;
    let lv = 1 + n1;
    let right = |j: usize| 2 + n1 + j;
    let rv = 2 + n1 + n2;
    let t = rv + 1;
    let mut g = FlowNetwork::new(t + 1);
    let inf = 2.0 * total;
    let mut pairs = Vec::with_capacity(n1 * n2);
    let mut drop_left = Vec::with_capacity(n1);
    let mut drop_right = Vec::with_capacity(n2);
    for (i, (x, a)) in mu.atoms().enumerate() {
        g.add(s, left(i), a, 0.0);
        for (j, (y, _)) in nu.atoms().enumerate() {
            pairs.push((i, j, (x - y).abs(), g.add(left(i), right(j), inf, (x - y).abs())));
        }
        drop_left.push(g.add(left(i), rv, inf, 1.0));
    }
    g.add(s, lv, m2, 0.0);
    for j in 0..n2 {
        drop_right.push(g.add(lv, right(j), inf, 1.0));
    }
    g.add(lv, rv, inf, 0.0);
    for (j, (_, b)) in nu.atoms().enumerate() {
        g.add(right(j), t, b, 0.0);
    }
    g.add(rv, t, m1, 0.0);
    let cap_tol = 1e-15 * total;
    let pot = g.min_cost_flow(s, t, total, cap_tol);
    let mut plan = Vec::new();
    let mut distance = 0.0;
    for &(i, j, c, e) in &pairs {
        let f = g.flow_on(e);
        if f > cap_tol {
            plan.push(PlanEntry { from: i, to: j, mass: f });
            distance += f * c;
        }
    }
    let dropped_mass_left: f64 = drop_left.iter().map(|&e| g.flow_on(e)).sum();
    let dropped_mass_right: f64 = drop_right.iter().map(|&e| g.flow_on(e)).sum();
    distance += dropped_mass_left + dropped_mass_right;
    let reduced_cost_violation = g.reduced_cost_violation(&pot, cap_tol);
    TransportResult { distance, plan, dropped_mass_left, dropped_mass_right, reduced_cost_violation }
}

/// Greedy projection onto `k`-sparse, `2ε`-separated measures and the
/// resulting upper bound `d_GW(x, χ)` on the residual.
pub fn residual_heuristic(x: &DiscreteMeasure, k_target: usize, epsilon: f64) -> Result<(DiscreteMeasure, f64)> {
    if k_target == 0 {
        if x.is_empty() {
            return Ok((DiscreteMeasure::empty(), 0.0));
        }
        return Err(Error::InfeasibleProjection(k_target, epsilon));
    }
    let mut atoms: Vec<(f64, f64)> = x.atoms().collect();
    loop {
        let too_many = atoms.len() > k_target;
        let closest = atoms
            .windows(2)
            .enumerate()
            .map(|(i, w)| (i, w[1].0 - w[0].0))
            .min_by(|p, q| p.1.total_cmp(&q.1));
        match closest {
            Some((i, gap)) if too_many || gap < 2.0 * epsilon => {
                let (t0, a0) = atoms[i];
                let (t1, a1) = atoms[i + 1];
                let w = a0 + a1;
                atoms[i] = ((t0 * a0 + t1 * a1) / w, w);
                atoms.remove(i + 1);
            }
            _ => break,
        }
    }
    let chi = DiscreteMeasure::from_pairs(&atoms)?;
    let r = generalized_wasserstein(x, &chi).distance;
    Ok((chi, r))
}

/// Local error functionals of an estimate against the truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDecomposition {
    /// `|∫_{T_{i,ε}} x̂ − aᵢ|` per source or group.
    pub local_errors: Vec<f64>,
    /// `∫_{T_{i,ε}} h` with `h = x̂ − x`.
    pub h_integrals: Vec<f64>,
    /// `∫_{T_{i,ε}} |h|` per source or group.
    pub h_masses: Vec<f64>,
    /// `∫_{T_ε^C} x̂`.
    pub tail_mass: f64,
    /// `∫_{T_ε^C} x`, zero unless grouped mode leaves truth outside.
    pub tail_true: f64,
    /// Neighbourhood radius.
    pub epsilon: f64,
}

impl ErrorDecomposition {
    /// `+1` where `∫_{T_{i,ε}} h > 0`, else `−1`.
    pub fn sign_pattern(&self) -> Vec<i8> {
        self.h_integrals.iter().map(|&v| if v > 0.0 { 1 } else { -1 }).collect()
    }
}

fn abs_h_mass(x_hat: &DiscreteMeasure, x_true: &DiscreteMeasure, lo: f64, hi: f64) -> f64 {
    let mut pts: Vec<(f64, f64)> = x_hat
        .atoms()
        .chain(x_true.atoms().map(|(t, a)| (t, -a)))
        .filter(|(t, _)| *t >= lo && *t <= hi)
        .collect();
    pts.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut total = 0.0;
    let mut i = 0;
    while i < pts.len() {
        let mut v = 0.0;
        let t = pts[i].0;
        while i < pts.len() && pts[i].0 == t {
            v += pts[i].1;
            i += 1;
        }
        total += f64::abs(v);
    }
    total
}

/// Error functionals over the closed neighbourhoods `T_{i,ε}` of the true
/// sources.
pub fn error_decomposition(x_hat: &DiscreteMeasure, x_true: &DiscreteMeasure, epsilon: f64) -> ErrorDecomposition {
    let nb = neighborhoods_of(x_true.locations(), epsilon);
    let intervals: Vec<(f64, f64)> = nb.intervals.clone();
    let weights: Vec<f64> = x_true.weights().to_vec();
    decompose(x_hat, x_true, &intervals, &weights, epsilon)
}

/// [`error_decomposition`] with sources closer than `2ε` merged into groups
/// whose aggregate weights are compared over the union neighbourhoods.
pub fn error_decomposition_grouped(x_hat: &DiscreteMeasure, x_true: &DiscreteMeasure, epsilon: f64) -> ErrorDecomposition {
    let part = group_partition(x_true, epsilon);
    let intervals: Vec<(f64, f64)> = part.groups.iter().map(|g| g.interval).collect();
    let weights: Vec<f64> = part.groups.iter().map(|g| g.weight).collect();
    decompose(x_hat, x_true, &intervals, &weights, epsilon)
}

fn decompose(x_hat: &DiscreteMeasure, x_true: &DiscreteMeasure, intervals: &[(f64, f64)], weights: &[f64], epsilon: f64) -> ErrorDecomposition {
    let inside = |t: f64| intervals.iter().any(|&(lo, hi)| t >= lo && t <= hi);
    let mut h_integrals = Vec::with_capacity(intervals.len());
    let mut h_masses = Vec::with_capacity(intervals.len());
    for (&(lo, hi), &a) in intervals.iter().zip(weights) {
        h_integrals.push(local_mass(x_hat, lo, hi) - a);
        h_masses.push(abs_h_mass(x_hat, x_true, lo, hi));
    }
    let tail_mass = x_hat.atoms().filter(|(t, _)| !inside(*t)).map(|(_, a)| a).sum();
    let tail_true = x_true.atoms().filter(|(t, _)| !inside(*t)).map(|(_, a)| a).sum();
    ErrorDecomposition {
        local_errors: h_integrals.iter().map(|v| v.abs()).collect(),
        h_integrals,
        h_masses,
        tail_mass,
        tail_true,
        epsilon,
    }
}

/// Both sides of the dual inequalities for `h = x̂ − χ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualInequalityReport {
    /// `f̄ ∫_{T_ε^C} h`; the neighbourhood sum vanishes because `f ≡ 0` there.
    pub lhs_away: f64,
    /// `2‖b‖₂δ′`.
    pub rhs_away: f64,
    /// `Σᵢ |∫_{T_{i,ε}} h|`.
    pub lhs_near: f64,
    /// `2(‖b‖₂ + ‖b⁰‖₂)δ′`, present when a sign-pattern certificate was given.
    pub rhs_near: Option<f64>,
    /// `∫_{T_ε} |h|`, never smaller than `lhs_near`.
    pub h_mass_near: f64,
}

impl DualInequalityReport {
    /// `rhs_away − lhs_away`.
    pub fn margin_away(&self) -> f64 {
        self.rhs_away - self.lhs_away
    }

    /// `rhs_near − lhs_near`.
    pub fn margin_near(&self) -> Option<f64> {
        self.rhs_near.map(|r| r - self.lhs_near)
    }

    /// Every evaluated inequality holds.
    pub fn pass(&self) -> bool {
        self.margin_away() >= 0.0 && self.margin_near().is_none_or(|m| m >= 0.0)
    }
}

/// Evaluates the dual inequalities. `cert` supplies `f̄`, `ε` and `‖b‖₂`;
/// `cert_signs` is the certificate for the sign pattern of `h`.
pub fn check_dual_inequality(
    x_hat: &DiscreteMeasure,
    chi: &DiscreteMeasure,
    cert: &DualCertificate,
    cert_signs: Option<&DualCertificate>,
    delta_prime: f64,
) -> DualInequalityReport {
    let eps = cert.separator.epsilon;
    let f_bar = cert.separator.f_bar;
    let dec = error_decomposition(x_hat, chi, eps);
    let lhs_away = f_bar * (dec.tail_mass - dec.tail_true);
    let lhs_near: f64 = dec.local_errors.iter().sum();
    let h_mass_near: f64 = dec.h_masses.iter().sum();
    DualInequalityReport {
        lhs_away,
        rhs_away: 2.0 * cert.b_norm() * delta_prime,
        lhs_near,
        rhs_near: cert_signs.map(|c0| 2.0 * (cert.b_norm() + c0.b_norm()) * delta_prime),
        h_mass_near,
    }
}
