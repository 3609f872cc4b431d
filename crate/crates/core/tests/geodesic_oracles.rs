mod common;

use common::dijkstra_distance;
use dgflow::geodesic::{
    path_action, phi, relax_geodesic, relax_path, relax_with_restarts, surface_tensions, GeodesicParams,
};
use dgflow::MultiwellPotential;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar_oracle(a: f64, b: f64) -> f64 {
    // integral of sqrt(2)(1 - s^2) ds, valid inside [-1, 1]
    let prim = |s: f64| 2f64.sqrt() * (s - s.powi(3) / 3.0);
    (prim(b) - prim(a)).abs()
}

#[test]
fn scalar_tension_matches_quadrature() {
    let p = MultiwellPotential::<f64>::scalar_double_well();
    let g = relax_geodesic(&p, &[-1.0], &[1.0], 200, 1000).unwrap();
    assert!((g.action - scalar_oracle(-1.0, 1.0)).abs() < 1e-3);
    assert!(g.converged);
    let s = surface_tensions(&p, GeodesicParams { nodes: 200, ..Default::default() }).unwrap();
    assert_eq!(s.num_phases(), 2);
    assert_eq!(s.get(0, 0), 0.0);
    assert!((s.get(0, 1) - 1.885618).abs() < 1e-3);
}

#[test]
fn three_well_tensions_match_dijkstra() {
    let p = MultiwellPotential::<f64>::symmetric_three_well();
    let s = surface_tensions(&p, GeodesicParams::default()).unwrap();
    let wells = p.wells();
    let w = |x: f64, y: f64| p.value(&[x, y]);
    let lo = [-(3f64.sqrt()) / 2.0, -0.5];
    let hi = [3f64.sqrt() / 2.0, 1.0];
    let oracle = dijkstra_distance(w, lo, hi, 400, [wells[0][0], wells[0][1]], [wells[1][0], wells[1][1]]);
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let rel = (s.get(i, j) - oracle).abs() / oracle;
        assert!(rel < 0.02, "sigma[{i}][{j}] = {} vs oracle {oracle}", s.get(i, j));
    }
}

#[test]
fn wells_have_zero_phi_and_match_tensions() {
    let p = MultiwellPotential::<f64>::symmetric_three_well();
    let params = GeodesicParams::default();
    let s = surface_tensions(&p, params).unwrap();
    for i in 0..3 {
        assert_eq!(phi(&p, i, p.well(i), params).unwrap(), 0.0);
        for j in 0..3 {
            if i != j {
                let v = phi(&p, i, p.well(j), params).unwrap();
                assert!((v - s.get(i, j)).abs() <= 1e-6 + s.tolerance, "{v} {}", s.get(i, j));
            }
        }
    }
}

#[test]
fn metric_axioms_on_random_points() {
    let p = MultiwellPotential::<f64>::symmetric_three_well();
    let params = GeodesicParams { nodes: 64, restarts: 2, ..Default::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pts: Vec<Vec<f64>> = (0..100)
        .map(|_| vec![rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)])
        .collect();
    let d = |a: &[f64], b: &[f64], m: usize| {
        relax_with_restarts(&p, a, b, m, params.budget, 3, 5).unwrap().action
    };
    for t in pts.chunks(3) {
        if t.len() < 3 {
            break;
        }
        let m = params.nodes;
        let (ab, ba) = (d(&t[0], &t[1], m), d(&t[1], &t[0], m));
        assert!((ab - ba).abs() <= 2e-6 * ab.max(1.0), "{ab} {ba}");
        let (bc, ac) = (d(&t[1], &t[2], m), d(&t[0], &t[2], m));
        // slack: the change of the direct distance under node doubling
        let tol = 2.0 * (ac - d(&t[0], &t[2], 2 * m)).abs() + 1e-6;
        assert!(ac <= ab + bc + tol, "{ac} > {ab} + {bc} + {tol} at {t:?}");
    }
}

#[test]
fn refined_relaxation_never_increases_the_refined_action() {
    let p = MultiwellPotential::<f64>::symmetric_three_well();
    for m in [16usize, 32, 64] {
        let g = relax_geodesic(&p, p.well(0), p.well(1), m, 20_000).unwrap();
        let mut refined = Vec::new();
        for seg in g.nodes.windows(2) {
            refined.push(seg[0].clone());
            refined.push(vec![0.5 * (seg[0][0] + seg[1][0]), 0.5 * (seg[0][1] + seg[1][1])]);
        }
        refined.push(g.nodes.last().unwrap().clone());
        let start = path_action(&p, &refined).unwrap();
        let relaxed = relax_path(&p, refined, 20_000).unwrap();
        assert!(relaxed.action <= start + 1e-8, "m={m}: {} > {start}", relaxed.action);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn phi_difference_quotient_bounded(x in -0.9f64..0.9, y in -0.9f64..0.9, a in 0.0f64..std::f64::consts::TAU) {
        let p = MultiwellPotential::<f64>::symmetric_three_well();
        let params = GeodesicParams { nodes: 32, restarts: 1, ..Default::default() };
        let h = 1e-3;
        let u = [x, y];
        let v = [x + h * a.cos(), y + h * a.sin()];
        let fu = phi(&p, 0, &u, params).unwrap();
        let fv = phi(&p, 0, &v, params).unwrap();
        let fmax = (0..=20)
            .map(|k| {
                let s = k as f64 / 20.0;
                (2.0 * p.value(&[u[0] + s * (v[0] - u[0]), u[1] + s * (v[1] - u[1])])).sqrt()
            })
            .fold(0.0, f64::max);
        prop_assert!((fu - fv).abs() <= fmax * h + 1e-6, "{} > {}", (fu - fv).abs(), fmax * h);
    }

    #[test]
    fn straight_path_bounds_phi(u in -0.99f64..0.99) {
        let p = MultiwellPotential::<f64>::scalar_double_well();
        let v = phi(&p, 0, &[u], GeodesicParams::default()).unwrap();
        prop_assert!((v - scalar_oracle(-1.0, u)).abs() < 1e-3);
        let fmax = (0..=100).map(|k| {
            let s = -1.0 + (u + 1.0) * k as f64 / 100.0;
            (2.0 * p.value(&[s])).sqrt()
        }).fold(0.0, f64::max);
        prop_assert!(v <= fmax * (u + 1.0) + 1e-9);
    }
}

