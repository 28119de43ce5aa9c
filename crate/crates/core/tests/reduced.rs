use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xqc::geometry::InterfaceGeometry;
use xqc::lattice::*;
use xqc::qc::{QcProblem, StandardBasis};
use xqc::reduce::{HessianCache, ReducedOptions};

fn tight() -> ReducedOptions {
    ReducedOptions {
        solver: SolverOptions {
            tolerance: Some(1e-12),
            ..SolverOptions::default()
        },
        ..ReducedOptions::default()
    }
}

fn inclusion() -> InterfaceGeometry {
    InterfaceGeometry::circle([-1.4, 0.8], 8.6).unwrap()
}

fn affine_bcs() -> BoundaryConditions {
    BoundaryConditions::Affine {
        gradient: [[0.012, -0.004], [0.007, 0.009]],
        offset: [0.01, -0.02],
    }
}

fn check_affine(kind: StandardBasis, h: f64, enrich: bool, gammas: &[f64]) {
    let m = build_lattice(16.0, 1.0, MaterialRule::homogeneous(1.0, 1.0)).unwrap();
    let bcs = affine_bcs();
    let p = QcProblem::new(&m, h, kind, enrich.then(|| (inclusion(), 2.5)), &bcs, tight()).unwrap();
    let g = if gammas.is_empty() { vec![] } else { gammas[..p.n_rep()].to_vec() };
    let e = p.solve(&g, &mut HessianCache::new(), None).unwrap();
    let u = e.state.displacements(&m);
    let mut diff: f64 = 0.0;
    let mut norm: f64 = 0.0;
    for a in 0..m.n_atoms() {
        let want = bcs.affine_field(m.position0(a)).unwrap();
        for k in 0..2 {
            diff = diff.max((u[2 * a + k] - want[k]).abs());
            norm = norm.max(want[k].abs());
        }
    }
    assert!(diff < 1e-8 * norm, "{kind:?} enrich={enrich}: {diff:e}");
    if enrich {
        assert!(e.phi.n_enriched() > 0);
        let q = e.state.enriched_dofs();
        assert!(q.iter().all(|v| v.abs() < 1e-8 * norm));
    }
}

#[test]
fn reduced_model_reproduces_affine_fields() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let gammas: Vec<f64> = (0..81).map(|_| rng.gen_range(0.8..4.0)).collect();
    for enrich in [false, true] {
        check_affine(StandardBasis::Lme, 4.0, enrich, &gammas);
        check_affine(StandardBasis::Lme, 8.0, enrich, &gammas);
        check_affine(StandardBasis::Linear, 4.0, enrich, &[]);
    }
}

#[test]
fn full_resolution_reduced_model_matches_lattice_solve() {
    let material = MaterialRule::homogeneous(1.0, 1.0).with_phase(inclusion(), 10.0);
    let m = build_lattice(4.0, 1.0, material).unwrap();
    let bcs = BoundaryConditions::Tension { u_d: 0.16 };
    let opts = tight();
    let full = solve_full(&m, &bcs, &opts.solver).unwrap();
    for kind in [StandardBasis::Lme, StandardBasis::Linear] {
        let p = QcProblem::new(&m, 1.0, kind, None, &bcs, opts).unwrap();
        let g = if kind == StandardBasis::Lme { vec![4.0; p.n_rep()] } else { vec![] };
        let e = p.solve(&g, &mut HessianCache::new(), None).unwrap();
        let worst = e.state.positions.iter().zip(&full.positions).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "{kind:?}: {worst:e}");
        assert!((e.state.energy - full.energy).abs() < 1e-10 * full.energy);
    }
}

#[test]
fn energy_gradient_matches_nested_finite_differences() {
    let material = MaterialRule::homogeneous(1.0, 1.0).with_phase(inclusion(), 10.0);
    let m = build_lattice(16.0, 1.0, material).unwrap();
    let bcs = BoundaryConditions::Tension { u_d: 0.16 };
    let p = QcProblem::new(&m, 4.0, StandardBasis::Lme, Some((inclusion(), 2.5)), &bcs, tight()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let g0: Vec<f64> = (0..p.n_rep()).map(|_| rng.gen_range(1.0..3.0)).collect();
    let mut cache = HessianCache::new();
    let e0 = p.solve(&g0, &mut cache, None).unwrap();
    assert!(e0.phi.n_enriched() > 0);
    let grad = p.energy_gradient(&e0).unwrap();
    let energy = |g: &[f64], cache: &mut HessianCache| p.solve(g, cache, Some(&e0)).unwrap().state.energy;
    let scale = grad.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = 1e-4 * scale;
    let mut good = 0;
    for c in 0..p.n_rep() {
        let step = 1e-4 * g0[c];
        let mut gp = g0.clone();
        gp[c] += step;
        let mut gm = g0.clone();
        gm[c] -= step;
        let fd = (energy(&gp, &mut cache) - energy(&gm, &mut cache)) / (2.0 * step);
        if (grad[c] - fd).abs() <= 1e-3 * fd.abs().max(floor) {
            good += 1;
        } else {
            eprintln!("component {c}: analytic {:e} fd {fd:e}", grad[c]);
        }
    }
    let frac = good as f64 / p.n_rep() as f64;
    assert!(frac >= 0.95, "{good}/{} components agree", p.n_rep());
}

#[test]
fn uniform_gradient_is_the_sum_of_repatom_components() {
    let material = MaterialRule::homogeneous(1.0, 1.0).with_phase(inclusion(), 10.0);
    let m = build_lattice(16.0, 1.0, material).unwrap();
    let bcs = BoundaryConditions::Tension { u_d: 0.16 };
    let p = QcProblem::new(&m, 4.0, StandardBasis::Lme, Some((inclusion(), 2.5)), &bcs, tight()).unwrap();
    let gamma = 1.7;
    let mut cache = HessianCache::new();
    let e = p.solve(&vec![gamma; p.n_rep()], &mut cache, None).unwrap();
    let total: f64 = p.energy_gradient(&e).unwrap().iter().sum();
    let step = 1e-4;
    let ep = p.solve(&vec![gamma + step; p.n_rep()], &mut cache, Some(&e)).unwrap().state.energy;
    let em = p.solve(&vec![gamma - step; p.n_rep()], &mut cache, Some(&e)).unwrap().state.energy;
    let fd = (ep - em) / (2.0 * step);
    assert!((total - fd).abs() < 1e-3 * fd.abs(), "{total:e} vs {fd:e}");
}
