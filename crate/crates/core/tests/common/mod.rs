//! Shared oracles for the integration tests.
#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nnsr_core::measure::DiscreteMeasure;

/// `d_GW` from its definition as an LP over the union support: transport
/// plan `γ`, and split TV slacks `x₁ − z₁ = p₁ − n₁`, `x₂ − z₂ = p₂ − n₂`.
pub fn gw_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let mut pts: Vec<f64> = mu.locations().iter().chain(nu.locations()).copied().collect();
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let n = pts.len();
    let mass = |m: &DiscreteMeasure, p: f64| m.atoms().filter(|a| a.0 == p).map(|a| a.1).sum::<f64>();
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let gamma: Vec<Vec<_>> = (0..n)
        .map(|u| (0..n).map(|v| lp.add_var((pts[u] - pts[v]).abs(), (0.0, f64::INFINITY))).collect())
        .collect();
    let slack = |lp: &mut Problem| (lp.add_var(1.0, (0.0, f64::INFINITY)), lp.add_var(1.0, (0.0, f64::INFINITY)));
    for u in 0..n {
        let (p, q) = slack(&mut lp);
        let mut row: Vec<_> = (0..n).map(|v| (gamma[u][v], 1.0)).collect();
        row.push((p, 1.0));
        row.push((q, -1.0));
        lp.add_constraint(&row[..], ComparisonOp::Eq, mass(mu, pts[u]));
    }
    for v in 0..n {
        let (p, q) = slack(&mut lp);
        let mut row: Vec<_> = (0..n).map(|u| (gamma[u][v], 1.0)).collect();
        row.push((p, 1.0));
        row.push((q, -1.0));
        lp.add_constraint(&row[..], ComparisonOp::Eq, mass(nu, pts[v]));
    }
    lp.solve().expect("LP is feasible and bounded").objective()
}
