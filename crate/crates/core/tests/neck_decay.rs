use proptest::prelude::*;
use hmflow::fields::FieldBundle;
use hmflow::flow::corotational::CorotationalState;
use hmflow::geometry::{Conformal, SurfaceDomain};
use hmflow::neck_decay::*;
use hmflow::scale_monitor::AnalyzedState;
use hmflow::state::MapState;
use hmflow::Error;

/// Admissible `(γ, ν, μ)` triples, including the tight edge `ν = 2γ = 1`.
const TRIPLES: [(f64, f64, f64); 10] = [
    (0.5, 0.9, 0.5),
    (0.5, 0.6, 0.3),
    (0.5, 1.0, 0.9),
    (0.6, 0.8, 0.3),
    (0.7, 0.9, 0.4),
    (0.75, 0.95, 0.2),
    (0.9, 0.95, 0.05),
    (0.55, 0.7, 0.69),
    (0.5, 0.99, 0.98),
    (0.8, 1.0, 0.2),
];

#[test]
fn supersolution_sweep_on_512_grids() {
    for (g, n, m) in TRIPLES {
        let p = SupersolutionParams::new(g, n, m, 0.01).unwrap();
        let rep = verify_supersolution(&p, 512, 512, 1e-6).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!(rep.min_slack >= -1e-6, "γ={g} ν={n} μ={m}: {}", rep.min_slack);
        assert!(rep.boundary_min >= 1.0 && rep.boundary_sup <= rep.constant);
    }
}

#[test]
fn slack_refinement_converges_to_nonnegative_limit() {
    let p = SupersolutionParams::new(0.5, 1.0, 0.9, 0.01).unwrap();
    let coarse = verify_supersolution(&p, 64, 64, 1e-6).unwrap().min_slack;
    let fine = verify_supersolution(&p, 256, 256, 1e-6).unwrap().min_slack;
    assert!(fine >= -1e-8 && fine <= coarse.abs().max(1e-6), "{coarse} {fine}");
}

#[test]
fn fd_slack_matches_symbolic_oracle() {
    // Exact (∂t − Δν)v − r^{μ−2} from symbolic differentiation, R = 0.01.
    let oracle = [
        ((0.5, 0.9, 0.5), [(0.5, 0.3, 1.0460235257564856), (0.05, 0.9, 64.20778010090612), (0.9, 0.0, 0.26202640897672086), (0.2, 0.99, 6.93357227760527)]),
        ((0.6, 0.8, 0.3), [(0.5, 0.3, 1.8643500915235059), (0.05, 0.9, 118.22910322014433), (0.9, 0.0, 0.606602536567414), (0.2, 0.99, 14.72505568407374)]),
        ((0.55, 0.7, 0.69), [(0.5, 0.3, 1.1115181815624438), (0.05, 0.9, 30.47465042967298), (0.9, 0.0, 0.44937245297960885), (0.2, 0.99, 8.821333298616866)]),
    ];
    for ((g, n, m), points) in oracle {
        let p = SupersolutionParams::new(g, n, m, 0.01).unwrap();
        for (r, t, exact) in points {
            let fd = supersolution_slack_fd(&p, r, t, 1e-3, 1e-3);
            assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "({r}, {t}): {fd} vs {exact}");
        }
    }
}

#[test]
fn inadmissible_triples_are_rejected() {
    assert!(matches!(SupersolutionParams::new(0.7, 0.7, 0.1, 0.01), Err(Error::Config(_))));
    // min[ν, ν²/γ − 3ν + 2] = 0.457 < μ.
    assert!(SupersolutionParams::new(0.7, 0.9, 0.5, 0.01).is_err());
    assert!(SupersolutionParams::new(0.4, 0.9, 0.5, 0.01).is_err());
    assert!(SupersolutionParams::new(0.5, 0.9, 0.5, 1.5).is_err());
    assert!(supersolution_value(&SupersolutionParams::new(0.5, 0.9, 0.5, 0.01).unwrap(), 0.5, 0.1).is_err());
}

#[test]
fn comparison_is_exact_for_a_times_v() {
    let p = SupersolutionParams::new(0.5, 0.9, 0.5, 0.01).unwrap();
    let grid = OmegaGrid::new(0.01, 128, 128, 1.5).unwrap();
    let a = 3.0;
    let g = OmegaField::from_fn(&p, grid, |r, t| a * supersolution_value(&p, r, t).unwrap());
    let rep = comparison_check(&g, a, 1e-12).unwrap();
    assert!(rep.passed);
    assert!((rep.supersolution_ratio - 1.0).abs() < 1e-12);
    assert!(rep.envelope_ratio <= 1.0);
}

#[test]
fn comparison_passes_on_directly_solved_model_problems() {
    for (g, n, m) in TRIPLES {
        let p = SupersolutionParams::new(g, n, m, 0.01).unwrap();
        let grid = OmegaGrid::new(0.01, 256, 256, 1.5).unwrap();
        let a = 2.0;
        let forced = solve_model(&p, grid.clone(), |r, _| a * r.powf(p.mu - 2.0), |_, _| a).unwrap();
        let rep = comparison_check(&forced, a, 1e-9).unwrap();
        assert!(rep.passed && rep.supersolution_ratio < 1.0, "{rep:?}");
        let free = solve_model(&p, grid, |_, _| 0.0, |_, t| 0.5 * a * (1.0 + (3.0 * t).sin())).unwrap();
        let rep = comparison_check(&free, a, 1e-9).unwrap();
        assert!(rep.passed && rep.supersolution_ratio < 0.9, "{rep:?}");
    }
}

#[test]
fn comparison_gate_rejects_large_boundary_data() {
    let p = SupersolutionParams::new(0.5, 0.9, 0.5, 0.01).unwrap();
    let grid = OmegaGrid::new(0.01, 64, 64, 1.5).unwrap();
    let g = OmegaField::from_fn(&p, grid, |r, t| 2.0 * supersolution_value(&p, r, t).unwrap());
    assert!(matches!(comparison_check(&g, 1.0, 1e-9), Err(Error::Precondition(_))));
}

#[test]
fn model_solver_reproduces_a_stationary_solution() {
    // (R/r)^ν is Δν-harmonic, so it is its own solution with matching boundary data.
    let p = SupersolutionParams::new(0.5, 0.8, 0.3, 0.01).unwrap();
    let grid = OmegaGrid::new(0.01, 128, 256, 1.5).unwrap();
    let exact = |r: f64, _t: f64| (0.01 / r).powf(0.8);
    let g = solve_model(&p, grid.clone(), |_, _| 0.0, exact).unwrap();
    let nt = grid.times.len();
    for (j, &r) in grid.radii.iter().enumerate() {
        let v = g.get(nt - 1, j);
        assert!((v - exact(r, 1.5)).abs() < 1e-3, "r = {r}: {v}");
    }
}

fn corotational_angular_error(n: usize) -> f64 {
    let d = SurfaceDomain::unit_disk(n).unwrap();
    let h = |r: f64| 2.0 * r.atan();
    let u = MapState::corotational(&d, 1, h);
    let fb = FieldBundle::compute(&u).unwrap();
    let r = 0.5;
    let f = angular_energy(&u, &fb, [0.0, 0.0], r).unwrap();
    (f - (2.0 * std::f64::consts::PI).sqrt() * h(r).sin()).abs()
}

#[test]
fn angular_energy_matches_corotational_closed_form() {
    let (e1, e2) = (corotational_angular_error(64), corotational_angular_error(128));
    assert!(e2 < 1e-2 && e1 / e2 > 3.0, "{e1} {e2}");

    let d = SurfaceDomain::polar_disk(128, 128, 1e-2, 1.0, Conformal::Flat).unwrap();
    let u = MapState::corotational(&d, 2, |r| 2.0 * r.atan());
    let fb = FieldBundle::compute(&u).unwrap();
    let r = d.position(d.idx(64, 0))[0];
    let f = angular_energy(&u, &fb, [0.0, 0.0], r).unwrap();
    let exact = (2.0 * std::f64::consts::PI).sqrt() * 2.0 * (2.0 * r.atan()).sin();
    assert!((f - exact).abs() < 2e-3 * exact, "{f} {exact}");
}

#[test]
fn angular_energy_vanishes_for_constant_maps() {
    let d = SurfaceDomain::unit_disk(48).unwrap();
    let u = MapState::from_fn(&d, |_| [0.0, 0.0, 1.0]);
    let fb = FieldBundle::compute(&u).unwrap();
    assert_eq!(angular_energy(&u, &fb, [0.1, 0.0], 0.3).unwrap(), 0.0);
    assert!(matches!(angular_energy(&u, &fb, [0.5, 0.0], 0.8), Err(Error::OutOfDomain(_))));
}

#[test]
fn radial_energy_inequality_holds_nodewise() {
    let torus = SurfaceDomain::flat_torus(48, 1.0).unwrap();
    let disk = SurfaceDomain::unit_disk(48).unwrap();
    let polar = SurfaceDomain::polar_disk(64, 64, 1e-2, 1.0, Conformal::Flat).unwrap();
    let states = [
        (MapState::random_smooth(&torus, 3, 3, 1.0), [0.5, 0.5]),
        (MapState::perturbed_holomorphic(&disk, 1, 0.5, 0.3, 7), [0.0, 0.0]),
        (MapState::perturbed_holomorphic(&disk, 2, 0.5, 0.3, 8), [0.2, -0.1]),
        (MapState::corotational(&polar, 1, |r| 2.0 * (r / 0.2).atan()), [0.0, 0.0]),
    ];
    for (u, p) in states {
        let fb = FieldBundle::compute(&u).unwrap();
        let defect = radial_energy_defect(&u, &fb, p).unwrap();
        assert!(defect <= 1e-12, "{defect}");
    }
}

#[test]
fn constant_map_neck_is_trivial() {
    let d = SurfaceDomain::unit_disk(48).unwrap();
    let probe = AnalyzedState::new(MapState::from_fn(&d, |_| [1.0, 0.0, 0.0])).unwrap();
    let frame = neck_frame(&probe, [0.0, 0.0], 0.05, 0.4, 12).unwrap();
    let params = NeckParams { rho: 0.4, epsilon: 0.1, sigma: 0.0, q: 2.0, nu: 0.9, gamma: 0.5, delta: 0.0 };
    let rep = check_neck_decay(&[frame], &params).unwrap();
    assert!(rep.hypothesis_ok);
    assert_eq!(rep.c_fit, 0.0);
    assert_eq!(rep.c_f, 0.0);
}

#[test]
fn glued_bubble_neck_has_finite_stable_constant() {
    // Bubble of scale 1e-3 glued to a constant far field: h = 2 atan(r/s) · (1 − r²)².
    let s = 1e-3;
    let mut constants = Vec::new();
    for n in [2048, 4096] {
        let st = CorotationalState::from_fn(n, 1, |r| 2.0 * (r / s).atan() * (1.0 - r * r).powi(2)).unwrap();
        let params = NeckParams { rho: 0.25, epsilon: 0.4, sigma: 0.0, q: 2.0, nu: 0.9, gamma: 0.5, delta: 0.0 };
        let frame = neck_frame(&st, [0.0, 0.0], 20.0 * s, 0.25, 24).unwrap();
        let rep = check_neck_decay(&[frame], &params).unwrap();
        assert!(rep.c_fit.is_finite() && rep.c_fit > 0.0);
        constants.push(rep.c_fit);
    }
    let ratio = constants[0] / constants[1];
    assert!((0.5..=2.0).contains(&ratio), "{constants:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn angular_energy_is_nonnegative_and_radial_bound_holds(seed in 0u64..10_000, amp in 0.1f64..1.5, r in 0.05f64..0.6) {
        let d = SurfaceDomain::unit_disk(32).unwrap();
        let u = MapState::random_smooth(&d, seed, 3, amp);
        let fb = FieldBundle::compute(&u).unwrap();
        let f = angular_energy(&u, &fb, [0.0, 0.0], r).unwrap();
        prop_assert!(f >= 0.0 && f.is_finite());
        prop_assert!(radial_energy_defect(&u, &fb, [0.0, 0.0]).unwrap() <= 1e-12);
    }

    #[test]
    fn sampled_admissible_triples_are_supersolutions(g in 0.5f64..0.95, a in 0.05f64..1.0, b in 0.05f64..0.95) {
        let nu = g + a * (1.0 - g);
        let mu = b * mu_upper(g, nu);
        let p = SupersolutionParams::new(g, nu, mu, 0.1).unwrap();
        let rep = verify_supersolution(&p, 64, 64, 1e-6).unwrap();
        prop_assert!(rep.passed, "{rep:?}");
    }
}
