use proptest::prelude::*;
use std::f64::consts::PI;

use hmflow::fields::{bochner_residual, energy_report, pointwise_energy_residual, tension, FieldBundle};
use hmflow::flow::{heat_step, step_with_dt, Integrator};
use hmflow::geometry::{Conformal, SurfaceDomain, TargetMetric, WarpProfile};
use hmflow::state::MapState;

fn order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

#[test]
fn split_densities_sum_to_the_energy_density() {
    let torus = SurfaceDomain::flat_torus(48, 2.0 * PI).unwrap();
    let polar = SurfaceDomain::polar_disk(48, 48, 1e-2, 1e2, Conformal::RoundSphere).unwrap();
    for (d, seed) in [(&torus, 1), (&polar, 2)] {
        let u = MapState::random_smooth(d, seed, 4, 1.2);
        let fb = FieldBundle::compute(&u).unwrap();
        assert!(fb.splitting_defect(d) < 1e-10);
        for i in 0..d.len() {
            assert!((fb.e_holo[i] + fb.e_antiholo[i] - fb.energy_density[i]).abs() < 1e-10 * (1.0 + fb.energy_density[i]));
        }
    }
}

#[test]
fn stress_matches_twice_real_hopf_at_second_order() {
    for seed in 0..3 {
        let disc: Vec<f64> = [64, 128]
            .iter()
            .map(|&n| {
                let d = SurfaceDomain::flat_torus(n, 2.0 * PI).unwrap();
                let u = MapState::random_smooth(&d, seed, 3, 0.5);
                FieldBundle::full(&u).unwrap().stress_discrepancy.unwrap()
            })
            .collect();
        assert!(order(disc[0], disc[1]) >= 1.8, "seed {seed}: {disc:?}");
    }
}

#[test]
fn stress_norm_is_bounded_by_split_densities() {
    let d = SurfaceDomain::flat_torus(40, 2.0 * PI).unwrap();
    let u = MapState::random_smooth(&d, 9, 5, 1.5);
    let mut fb = FieldBundle::compute(&u).unwrap();
    fb.hopf_and_stress(&u);
    // |S|_g = 2√2 √(e_∂ e_∂̄) exactly, so the ratio to 4√(e_∂ e_∂̄) is 1/√2.
    assert!(fb.stress_bound_ratio(&d) <= 1.0 + 1e-8);
    assert!((fb.stress_bound_ratio(&d) - 0.5f64.sqrt()).abs() < 1e-9);
}

#[test]
fn degree_d_holomorphic_maps_carry_kappa_4_pi_d() {
    let d = SurfaceDomain::polar_disk(192, 192, 1e-3, 1e3, Conformal::RoundSphere).unwrap();
    for deg in [1, 2, -1] {
        let r = energy_report(&MapState::holomorphic(&d, deg, 1.0), 2.0).unwrap();
        let want = 4.0 * PI * deg as f64;
        assert!((r.kappa - want).abs() < 0.01 * want.abs(), "degree {deg}: {}", r.kappa);
        assert!((r.energy - want.abs()).abs() < 0.01 * want.abs());
    }
}

#[test]
fn tension_of_a_holomorphic_map_vanishes_at_second_order() {
    let sup: Vec<f64> = [64, 128]
        .iter()
        .map(|&n| {
            let d = SurfaceDomain::polar_disk(n, n, 1e-2, 1e2, Conformal::RoundSphere).unwrap();
            let u = MapState::holomorphic(&d, 1, 0.7);
            tension(&u).unwrap().iter().map(|t| (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt()).fold(0.0, f64::max)
        })
        .collect();
    assert!(order(sup[0], sup[1]) > 1.8, "{sup:?}");
}

#[test]
fn corotational_tension_matches_the_radial_operator() {
    // u = (h(r), θ) with h = 3r²/(1+r²); τ = (h_rr + h_r/r − sin 2h/(2r²)) e_h on the flat disk.
    let h = |r: f64| 3.0 * r * r / (1.0 + r * r);
    let h1 = |r: f64| 6.0 * r / (1.0 + r * r).powi(2);
    let h2 = |r: f64| 6.0 * (1.0 - 3.0 * r * r) / (1.0 + r * r).powi(3);
    let err: Vec<f64> = [64, 128]
        .iter()
        .map(|&n| {
            let d = SurfaceDomain::polar_disk(n, n, 0.05, 2.0, Conformal::Flat).unwrap();
            let u = MapState::corotational(&d, 1, h);
            let tau = tension(&u).unwrap();
            let mut worst: f64 = 0.0;
            for i in 0..d.len() {
                if d.is_fixed(i) {
                    continue;
                }
                let p = d.position(i);
                let (r, th) = (p[0].hypot(p[1]), p[1].atan2(p[0]));
                let mag = h2(r) + h1(r) / r - (2.0 * h(r)).sin() / (2.0 * r * r);
                let e_h = [h(r).cos() * th.cos(), h(r).cos() * th.sin(), -h(r).sin()];
                for c in 0..3 {
                    worst = worst.max((tau[i][c] - mag * e_h[c]).abs());
                }
            }
            worst
        })
        .collect();
    assert!(order(err[0], err[1]) > 1.8, "{err:?}");
}

#[test]
fn sine_warped_target_reproduces_the_round_sphere() {
    let target = TargetMetric::Warped(WarpProfile::sine_series(vec![1.0]).unwrap());
    assert!((target.curvature_at(0.7) - 1.0).abs() < 1e-8);
    assert!((target.epsilon0() - 4.0 * PI).abs() < 1e-8);
    let gaps: Vec<f64> = [48, 96]
        .iter()
        .map(|&n| {
            let d = SurfaceDomain::polar_disk(n, n, 0.05, 1.0, Conformal::Flat).unwrap();
            let round = MapState::corotational(&d, 1, |r| 1.2 * r + 0.3);
            let warped = round.to_warped(&target).unwrap();
            let a = energy_report(&round, 2.0).unwrap();
            let b = energy_report(&warped, 2.0).unwrap();
            (a.energy - b.energy).abs() + (a.kappa - b.kappa).abs() + (a.tension_l2_sq - b.tension_l2_sq).abs()
        })
        .collect();
    // The two discretizations differ at O(h²); only the evaluator agrees to round-off.
    assert!(order(gaps[0], gaps[1]) > 1.8, "{gaps:?}");
}

#[test]
fn bochner_identities_converge_on_a_round_domain() {
    let res: Vec<(f64, f64, f64)> = [64, 128]
        .iter()
        .map(|&n| {
            let d = SurfaceDomain::polar_disk(n, n, 1e-2, 1e2, Conformal::RoundSphere).unwrap();
            let u = MapState::perturbed_holomorphic(&d, 1, 1.0, 0.3, 3);
            let dt = 1e-7;
            let v = step_with_dt(&u, dt, Integrator::Euler).unwrap();
            let b = bochner_residual(&u, &v, dt).unwrap();
            (b.antiholomorphic.max_abs_identity, b.antiholomorphic.max_positive, b.full.max_abs_identity)
        })
        .collect();
    assert!(res[1].0 < 0.5 * res[0].0, "{res:?}");
    assert!(res[1].1 < 0.5 * res[0].1, "{res:?}");
    assert!(res[1].2 < 0.5 * res[0].2, "{res:?}");
}

#[test]
fn pointwise_energy_identity_converges_on_the_torus() {
    let res: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let d = SurfaceDomain::flat_torus(n, 2.0 * PI).unwrap();
            let u = MapState::random_smooth(&d, 5, 2, 0.8);
            let v = step_with_dt(&u, 1e-7, Integrator::Euler).unwrap();
            pointwise_energy_residual(&u, &v, 1e-7).unwrap().max_abs_identity
        })
        .collect();
    assert!(res[1] < res[0] && res[2] < 0.5 * res[1], "{res:?}");
}

#[test]
fn heat_step_damps_a_mode_at_the_discrete_rate() {
    let n = 64;
    let d = SurfaceDomain::flat_torus(n, 2.0 * PI).unwrap();
    let mut f: Vec<f64> = (0..d.len()).map(|i| d.position(i)[0].sin()).collect();
    let h = d.hx;
    let lambda = (2.0 - 2.0 * h.cos()) / (h * h);
    let dt = 0.2 * h * h;
    let steps = 200;
    for _ in 0..steps {
        f = heat_step(&d, &f, dt);
    }
    let factor = (1.0 - dt * lambda).powi(steps);
    for i in 0..d.len() {
        assert!((f[i] - factor * d.position(i)[0].sin()).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn report_splits_energy_and_kappa_on_random_maps(seed in 0u64..10_000, modes in 1usize..5, amp in 0.05f64..1.5) {
        let d = SurfaceDomain::flat_torus(24, 2.0 * PI).unwrap();
        let u = MapState::random_smooth(&d, seed, modes, amp);
        let mut fb = FieldBundle::full(&u).unwrap();
        prop_assert!(fb.splitting_defect(&d) < 1e-10);
        prop_assert!(fb.stress_bound_ratio(&d) <= 1.0);
        prop_assert!(fb.e_holo.iter().chain(&fb.e_antiholo).all(|&e| e >= 0.0));
        let r = fb.energy_report(&u, 2.0).unwrap();
        prop_assert!((r.energy - r.e_holo - r.e_antiholo).abs() <= 1e-10 * r.energy.max(1.0));
        prop_assert_eq!(r.kappa, r.e_holo - r.e_antiholo);
    }
}
