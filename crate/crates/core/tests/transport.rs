mod common;

use nnsr_core::certificate::{build_certificate, SeparatorSpec};
use nnsr_core::measure::DiscreteMeasure;
use nnsr_core::transport::*;
use nnsr_core::window::{GaussianWindow, SamplingScheme};
use proptest::prelude::*;

fn m(p: &[(f64, f64)]) -> DiscreteMeasure {
    DiscreteMeasure::from_pairs(p).unwrap()
}

fn measure_strategy(max_atoms: usize) -> impl Strategy<Value = DiscreteMeasure> {
    prop::collection::vec((0.001f64..0.999, 0.05f64..2.0), 1..=max_atoms).prop_map(|v| DiscreteMeasure::from_pairs(&v).unwrap())
}

fn equal_mass_pair() -> impl Strategy<Value = (DiscreteMeasure, DiscreteMeasure)> {
    (measure_strategy(5), prop::collection::vec((0.001f64..0.999, 0.05f64..2.0), 1..=5)).prop_map(|(a, raw)| {
        let total: f64 = raw.iter().map(|p| p.1).sum();
        let scale = a.weights().iter().sum::<f64>() / total;
        let b = DiscreteMeasure::from_pairs(&raw.iter().map(|&(t, w)| (t, w * scale)).collect::<Vec<_>>()).unwrap();
        (a, b)
    })
}

#[test]
fn wasserstein_examples() {
    let mu = m(&[(0.1, 1.0), (0.4, 2.0)]);
    assert_eq!(wasserstein(&mu, &mu).unwrap().distance, 0.0);
    assert!((wasserstein(&m(&[(0.2, 1.0)]), &m(&[(0.5, 1.0)])).unwrap().distance - 0.3).abs() < 1e-15);
    let r = wasserstein(&m(&[(0.1, 1.0), (0.9, 1.0)]), &m(&[(0.2, 2.0)])).unwrap();
    assert!((r.distance - 0.8).abs() < 1e-15);
    assert_eq!(r.plan_csv(), "from,to,mass\n0,0,1.0\n1,0,1.0\n");
    let err = wasserstein(&m(&[(0.2, 1.0)]), &m(&[(0.2, 1.5)])).unwrap_err();
    assert!(err.to_string().contains("use generalized_wasserstein"));
}

#[test]
fn generalized_wasserstein_examples() {
    let r = generalized_wasserstein(&m(&[(0.2, 1.0)]), &DiscreteMeasure::empty());
    assert!((r.distance - 1.0).abs() < 1e-15);
    assert!((r.dropped_mass_left - 1.0).abs() < 1e-15);
    let r = generalized_wasserstein(&m(&[(0.5, 3.0)]), &m(&[(0.5, 1.0)]));
    assert!((r.distance - 2.0).abs() < 1e-14);
    assert!((common::gw_lp(&m(&[(0.5, 3.0)]), &m(&[(0.5, 1.0)])) - 2.0).abs() < 1e-12);
}

#[test]
fn residual_heuristic_examples() {
    let x = m(&[(0.2, 1.0), (0.6, 2.0)]);
    let (chi, r) = residual_heuristic(&x, 2, 0.05).unwrap();
    assert_eq!(chi, x);
    assert_eq!(r, 0.0);
    let (chi, r) = residual_heuristic(&m(&[(0.5, 1.0), (0.52, 1.0)]), 1, 0.05).unwrap();
    assert_eq!(chi.weights(), &[2.0]);
    assert!((r - 0.02).abs() < 1e-12);
    assert!(residual_heuristic(&x, 0, 0.05).is_err());
}

#[test]
fn residual_upper_bounds_grid_infimum() {
    // Brute force over 1-atom χ on a fine grid of locations and masses.
    let x = m(&[(0.3, 1.0), (0.33, 0.5), (0.5, 0.2)]);
    let (_, r) = residual_heuristic(&x, 1, 0.02).unwrap();
    let mut best = f64::INFINITY;
    for i in 1..400 {
        for j in 0..=170 {
            let chi = m(&[(i as f64 / 400.0, 0.01 * j as f64 + 1e-9)]);
            best = best.min(generalized_wasserstein(&x, &chi).distance);
        }
    }
    assert!(r >= best - 1e-9, "{r} < {best}");
}

#[test]
fn error_decomposition_examples() {
    let x = m(&[(0.3, 1.0), (0.7, 2.0)]);
    let eps = 0.05;
    let d = error_decomposition(&x, &x, eps);
    assert_eq!(d.local_errors, vec![0.0, 0.0]);
    assert_eq!(d.tail_mass, 0.0);
    let inside = m(&[(0.3 + eps / 2.0, 1.0), (0.7, 2.0)]);
    let d = error_decomposition(&inside, &x, eps);
    assert_eq!(d.local_errors[0], 0.0);
    assert_eq!(d.tail_mass, 0.0);
    assert!(d.h_masses[0] > 1.9);
    let outside = m(&[(0.3 + 2.0 * eps, 1.0), (0.7, 2.0)]);
    let d = error_decomposition(&outside, &x, eps);
    assert_eq!(d.local_errors[0], 1.0);
    assert_eq!(d.tail_mass, 1.0);
    assert_eq!(d.sign_pattern(), vec![-1, -1]);
}

#[test]
fn grouped_decomposition_merges_close_sources() {
    let x = m(&[(0.3, 1.0), (0.32, 1.0), (0.7, 1.0)]);
    let xh = m(&[(0.31, 2.0), (0.7, 1.0)]);
    let d = error_decomposition_grouped(&xh, &x, 0.05);
    assert_eq!(d.local_errors.len(), 2);
    assert!(d.local_errors.iter().all(|&e| e.abs() < 1e-15));
}

#[test]
fn dual_inequality_examples() {
    let w = GaussianWindow::new(0.5).unwrap();
    let s = SamplingScheme::new(vec![0.0, 0.45, 0.55, 1.0], w).unwrap();
    let t = [0.5];
    let cert = build_certificate(&t, &s, &SeparatorSpec::plain(1.0, 1.0, 0.01, 0.1)).unwrap();
    let chi = m(&[(0.5, 1.0)]);
    let r = check_dual_inequality(&chi, &chi, &cert, None, 0.0);
    assert_eq!(r.lhs_away, 0.0);
    assert!(r.pass());
    let xh = m(&[(0.52, 0.6), (0.49, 0.3)]);
    let r = check_dual_inequality(&xh, &chi, &cert, None, 0.0);
    assert!(r.lhs_near <= r.h_mass_near + 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn flow_matches_definition_lp(a in measure_strategy(4), b in measure_strategy(4)) {
        let flow = generalized_wasserstein(&a, &b);
        let lp = common::gw_lp(&a, &b);
        prop_assert!((flow.distance - lp).abs() <= 1e-10 * (1.0 + lp), "{} vs {}", flow.distance, lp);
        prop_assert!(flow.reduced_cost_violation <= 1e-12);
    }

    #[test]
    fn equal_mass_gw_is_w((a, b) in equal_mass_pair()) {
        let w = wasserstein(&a, &b).unwrap().distance;
        let g = generalized_wasserstein(&a, &b).distance;
        prop_assert!((w - g).abs() <= 1e-10, "{w} vs {g}");
        prop_assert!((w - cdf_distance(&a, &b)).abs() <= 1e-12);
    }

    #[test]
    fn plan_marginals_reproduce_weights(a in measure_strategy(6), b in measure_strategy(6)) {
        let r = generalized_wasserstein(&a, &b);
        let (l, rr) = r.marginals(a.len(), b.len());
        let sum_l: f64 = l.iter().sum::<f64>() + r.dropped_mass_left;
        let sum_r: f64 = rr.iter().sum::<f64>() + r.dropped_mass_right;
        prop_assert!((sum_l - a.weights().iter().sum::<f64>()).abs() <= 1e-12);
        prop_assert!((sum_r - b.weights().iter().sum::<f64>()).abs() <= 1e-12);
        for (i, w) in a.weights().iter().enumerate() {
            prop_assert!(l[i] <= w + 1e-12);
        }
        let cost: f64 = r.plan.iter().map(|e| e.mass * (a.locations()[e.from] - b.locations()[e.to]).abs()).sum::<f64>()
            + r.dropped_mass_left + r.dropped_mass_right;
        prop_assert!((cost - r.distance).abs() <= 1e-12);
    }

    #[test]
    fn gw_bounded_by_total_mass(a in measure_strategy(5), b in measure_strategy(5)) {
        let g = generalized_wasserstein(&a, &b).distance;
        prop_assert!(g <= a.weights().iter().sum::<f64>() + b.weights().iter().sum::<f64>() + 1e-12);
    }

    #[test]
    fn w_triangle_inequality(
        (a, b) in equal_mass_pair(),
        raw in prop::collection::vec((0.001f64..0.999, 0.05f64..2.0), 1..=5),
    ) {
        let total: f64 = raw.iter().map(|p| p.1).sum();
        let scale = a.weights().iter().sum::<f64>() / total;
        let c = DiscreteMeasure::from_pairs(&raw.iter().map(|&(t, w)| (t, w * scale)).collect::<Vec<_>>()).unwrap();
        let ab = wasserstein(&a, &b).unwrap().distance;
        let bc = wasserstein(&b, &c).unwrap().distance;
        let ac = wasserstein(&a, &c).unwrap().distance;
        prop_assert!(ac <= ab + bc + 1e-10);
    }

    #[test]
    fn local_sum_below_local_mass(a in measure_strategy(6), b in measure_strategy(3), eps in 0.001f64..0.1) {
        let d = error_decomposition(&a, &b, eps);
        let s: f64 = d.local_errors.iter().sum();
        let mm: f64 = d.h_masses.iter().sum();
        prop_assert!(s <= mm + 1e-12);
        prop_assert!(d.tail_mass >= 0.0);
    }
}
