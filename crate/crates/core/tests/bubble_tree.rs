use proptest::prelude::*;
use std::f64::consts::PI;

use num_complex::Complex64;

use hmflow::bubble_tree::*;
use hmflow::flow::corotational::CorotationalState;
use hmflow::geometry::{Conformal, SurfaceDomain};
use hmflow::scale_monitor::AnalyzedState;
use hmflow::state::MapState;
use hmflow::Error;

const FOUR_PI: f64 = 4.0 * PI;

fn bubble_on_disk(n: usize, s: f64, a: [f64; 2]) -> AnalyzedState {
    let d = SurfaceDomain::unit_disk(n).unwrap();
    let a = Complex64::new(a[0], a[1]);
    AnalyzedState::new(MapState::from_chart(&d, |z| (z - a) / s)).unwrap()
}

#[test]
fn exact_bubble_recovers_scale_and_centre() {
    let s = 0.05;
    let u = bubble_on_disk(256, s, [0.0, 0.0]);
    let b = extract_bubble(&u, [0.01, -0.01], &TreeConfig::new(0.5), None).unwrap();
    assert!((b.half_energy_radius / s - 1.0).abs() < 0.1, "{}", b.half_energy_radius);
    assert!(b.center[0].hypot(b.center[1]) < 0.1 * s, "{:?}", b.center);
    assert!((b.normalized_scale - 1.0).abs() < 0.1, "{}", b.normalized_scale);
    assert_eq!(b.orientation, Orientation::Holomorphic);
    assert!(b.children.is_empty() && !b.inconclusive);
}

#[test]
fn off_centre_bubble_is_located_within_its_scale() {
    let s = 0.04;
    let a = [0.23, -0.17];
    let u = bubble_on_disk(256, s, a);
    let b = extract_bubble(&u, [0.25, -0.15], &TreeConfig::new(0.3), None).unwrap();
    assert!((b.center[0] - a[0]).hypot(b.center[1] - a[1]) < s, "{:?}", b.center);
    assert!((b.half_energy_radius / s - 1.0).abs() < 0.1);
}

#[test]
fn extraction_is_idempotent_on_a_rescaled_bubble() {
    let u = bubble_on_disk(256, 0.05, [0.0, 0.0]);
    let cfg = TreeConfig::new(0.5);
    let b = extract_bubble(&u, [0.0, 0.0], &cfg, None).unwrap();
    let v = AnalyzedState::new(b.state.clone().unwrap()).unwrap();
    let mut inner = cfg.clone();
    inner.rho = 0.5 / b.scale;
    let again = extract_bubble(&v, [0.0, 0.0], &inner, None).unwrap();
    assert!((again.scale - 1.0).abs() < 0.1, "{}", again.scale);
    assert!(again.center[0].hypot(again.center[1]) < 0.05);
}

#[test]
fn constant_map_fails_the_extraction_precondition() {
    let d = SurfaceDomain::unit_disk(64).unwrap();
    let u = AnalyzedState::new(MapState::from_fn(&d, |_| [0.0, 0.0, 1.0])).unwrap();
    assert!(matches!(extract_bubble(&u, [0.0, 0.0], &TreeConfig::new(0.5), None), Err(Error::Precondition(_))));
}

#[test]
fn smooth_flow_has_no_concentrations() {
    let d = SurfaceDomain::flat_torus(48, 2.0 * PI).unwrap();
    let snaps: Vec<AnalyzedState> = (0..3).map(|k| AnalyzedState::new(MapState::random_smooth(&d, k, 3, 0.5)).unwrap()).collect();
    let cfg = TreeConfig::new(1.0);
    assert!(detect_concentrations(&snaps, &cfg).unwrap().is_empty());
    let tree = build_bubble_tree(&snaps, &cfg).unwrap();
    assert!(tree.bubbles.is_empty());
    assert_eq!(tree.energy_identity_residual, 0.0);
}

#[test]
fn two_separated_bubbles_give_two_candidates_and_eight_pi() {
    let d = SurfaceDomain::unit_disk(320).unwrap();
    let (s, a) = (0.03, 0.45);
    let state = |scale: f64| {
        let p = Complex64::new(a, 0.0);
        MapState::from_chart(&d, move |z| scale / (z - p) + scale / (z + p))
    };
    let snaps: Vec<AnalyzedState> = [1.5 * s, s].iter().map(|&sc| AnalyzedState::new(state(sc)).unwrap()).collect();
    let mut cfg = TreeConfig::new(0.3);
    cfg.length = Some(0.1);
    let cands = detect_concentrations(&snaps, &cfg).unwrap();
    assert_eq!(cands.len(), 2, "{cands:?}");
    for c in &cands {
        assert!((c.center[0].abs() - a).abs() < 0.05 && c.center[1].abs() < 0.05, "{c:?}");
    }
    let tree = build_bubble_tree(&snaps, &cfg).unwrap();
    assert_eq!(tree.bubbles.len(), 2);
    let total: f64 = tree.bubbles.iter().map(Bubble::total_energy).sum();
    assert!((total / (2.0 * FOUR_PI) - 1.0).abs() < 0.05, "{total}");
    for b in &tree.bubbles {
        assert!((b.energy / FOUR_PI - 1.0).abs() < 0.1, "{}", b.energy);
    }
}

#[test]
fn neck_of_a_glued_bubble_vanishes_as_the_window_narrows() {
    // Bubble of scale s glued to the constant south pole beyond r = 1/2.
    let s = 1e-4;
    let d = SurfaceDomain::polar_disk(256, 32, 1e-7, 1.0, Conformal::Flat).unwrap();
    let u = AnalyzedState::new(MapState::corotational(&d, 1, |r| if r < 0.5 { 2.0 * (r / s).atan() } else { PI })).unwrap();
    let (lambda, rho) = (5.0 * s, 0.25);
    let mut prev = f64::INFINITY;
    let mut accounts = Vec::new();
    for (alpha, beta) in [(2.0, 1.0), (4.0, 0.5), (8.0, 0.25), (16.0, 0.125)] {
        let n = neck_accounting(&u, [0.0, 0.0], lambda, rho, alpha, beta).unwrap();
        assert!(n.energy <= prev);
        prev = n.energy;
        // Closed-form tail of the bubble: 4π(1/(1 + (αλ/s)²) − 1/(1 + (βρ/s)²)).
        let tail = FOUR_PI * (1.0 / (1.0 + (n.inner / s).powi(2)) - 1.0 / (1.0 + (n.outer / s).powi(2)));
        assert!((n.energy - tail).abs() < 0.02 * tail.max(1e-3), "{} vs {tail}", n.energy);
        accounts.push(n);
    }
    let last = accounts.last().unwrap();
    assert!(last.energy < 2.5e-3 && last.oscillation < 0.05 * PI, "{last:?}");
    assert!(accounts.windows(2).all(|w| w[1].oscillation <= w[0].oscillation));
    assert!(!neck_flagged(&accounts, 0.1 * FOUR_PI));
}

#[test]
fn neck_of_a_constant_map_is_zero() {
    let d = SurfaceDomain::unit_disk(64).unwrap();
    let u = AnalyzedState::new(MapState::from_fn(&d, |_| [1.0, 0.0, 0.0])).unwrap();
    let n = neck_accounting(&u, [0.0, 0.0], 0.01, 0.5, 4.0, 1.0).unwrap();
    assert_eq!(n.energy, 0.0);
    assert_eq!(n.oscillation, 0.0);
    assert!(neck_accounting(&u, [0.0, 0.0], 0.1, 0.5, 8.0, 1.0).is_err());
}

#[test]
fn energy_plateau_in_the_neck_is_flagged() {
    // A neck winding like h ∝ ln r carries the same energy on every dyadic annulus.
    let s = 1e-3;
    let d = SurfaceDomain::polar_disk(256, 32, 1e-6, 1.0, Conformal::Flat).unwrap();
    let h = |r: f64| if r < 4.0 * s { 2.0 * (r / s).atan() } else { 2.0 * 4f64.atan() + 0.5 * (r / (4.0 * s)).ln() };
    let u = AnalyzedState::new(MapState::corotational(&d, 1, h)).unwrap();
    let ladder: Vec<NeckAccount> = [(4.0, 1.0), (8.0, 0.5)]
        .iter()
        .map(|&(a, b)| neck_accounting(&u, [0.0, 0.0], 5.0 * s, 0.25, a, b).unwrap())
        .collect();
    assert!(neck_flagged(&ladder, 0.1 * FOUR_PI), "{ladder:?}");
}

#[test]
fn bubble_tower_is_extracted_as_parent_and_child() {
    // Two stacked bubbles at the origin: h runs 0 → π at scale 10⁻⁴ and π → 2π at scale 10⁻².
    let (small, big) = (1e-4, 1e-2);
    let st = CorotationalState::from_fn(1 << 15, 1, |r| 2.0 * (r / small).atan() + 2.0 * (r / big).atan()).unwrap();
    let d = SurfaceDomain::polar_disk(384, 32, 1e-8, 1.0, Conformal::Flat).unwrap();
    let u = AnalyzedState::new(st.lift(&d)).unwrap();
    let b = extract_bubble(&u, [0.0, 0.0], &TreeConfig::new(0.5), None).unwrap();
    assert_eq!(b.children.len(), 1, "{b:?}");
    let child = &b.children[0];
    assert!((child.half_energy_radius / small - 1.0).abs() < 0.15, "{}", child.half_energy_radius);
    assert!((b.total_energy() / (2.0 * FOUR_PI) - 1.0).abs() < 0.05, "{}", b.total_energy());
    assert!((child.energy / FOUR_PI - 1.0).abs() < 0.1, "{}", child.energy);
}

#[test]
fn depth_limit_marks_the_tree_inconclusive() {
    let (small, big) = (1e-4, 1e-2);
    let st = CorotationalState::from_fn(1 << 15, 1, |r| 2.0 * (r / small).atan() + 2.0 * (r / big).atan()).unwrap();
    let d = SurfaceDomain::polar_disk(384, 32, 1e-8, 1.0, Conformal::Flat).unwrap();
    let u = AnalyzedState::new(st.lift(&d)).unwrap();
    let mut cfg = TreeConfig::new(0.5);
    cfg.max_depth = 1;
    let b = extract_bubble(&u, [0.0, 0.0], &cfg, None).unwrap();
    assert!(b.children.is_empty() && b.inconclusive);
}

#[test]
fn tree_config_rejects_bad_ladders() {
    let mut cfg = TreeConfig::new(0.5);
    cfg.neck_ladder = vec![(8.0, 0.5), (4.0, 1.0)];
    cfg.persistence = 0;
    assert_eq!(cfg.validate().len(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn neck_energy_is_monotone_by_containment(a1 in 2.0f64..6.0, da in 0.0f64..4.0, b1 in 0.25f64..0.5, db in 0.0f64..0.3) {
        let u = bubble_on_disk(96, 0.02, [0.0, 0.0]);
        let (a2, b2) = (a1 + da, b1 + db);
        let e = |a: f64, b: f64| neck_accounting(&u, [0.0, 0.0], 0.02, 1.0, a, b).unwrap().energy;
        prop_assert!(e(a2, b1) <= e(a1, b1));
        prop_assert!(e(a1, b1) <= e(a1, b2));
    }
}
