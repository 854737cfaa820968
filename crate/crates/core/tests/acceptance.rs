//! Acceptance suite: every analytic oracle and structural guarantee the
//! library promises, one test per criterion, each at its stated tolerance.

mod common;

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use maslov::bilinear::{inf_norm, Subspace, SymForm};
use maslov::builtins;
use maslov::fem::{index_profile, index_terms, variable_endpoint_terms, FemOptions};
use maslov::flow::{focal_index, focal_instants, integrate, maslov_index_of_system, FlowOptions};
use maslov::lagrangian::{graph_lagrangian, verify_tech_lemma, LagrangianFrame};
use maslov::spectral_flow::{
    jump_forward, jump_two_sided, locate_degenerate_instants, FormCurve, SubspaceFamily,
};
use maslov::systems::{
    constant_sampler, criterion_semidefinite, Distribution, InitialData, L0Isomorphism,
    MorseSturm, SystemData,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn pass(criterion: &str, detail: String) {
    println!("[PASS] {criterion}: {detail}");
}

fn enforce_runtime(elapsed: std::time::Duration, bound_secs: f64, what: &str) {
    // Runtime bounds hold for optimized builds; unoptimized runs report
    // the measurement without failing.
    if cfg!(not(debug_assertions)) {
        assert!(
            elapsed.as_secs_f64() < bound_secs,
            "{what} took {:.3}s (bound {bound_secs}s)",
            elapsed.as_secs_f64()
        );
    }
}

fn riemannian_line() -> builtins::GeneratedProblem {
    builtins::constant_curvature(&[1.0], 1.0, (0.0, 1.5 * PI), InitialData::fixed_start(1))
        .expect("generator")
}

fn product_problem() -> builtins::GeneratedProblem {
    builtins::product((1.0, 1.0), (0.0, 1.5 * PI), InitialData::fixed_start(2))
        .expect("generator")
}

#[test]
fn acceptance_01_riemannian_oracle() {
    let start = Instant::now();
    let problem = riemannian_line();
    let report = index_terms(&problem.system, &problem.dist, &FemOptions::default()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(report.maslov, 1);
    assert_eq!(report.n_minus_k, 1);
    assert_eq!(report.n_plus_s, 0);
    assert_eq!(report.n_minus_gp, 0);
    assert_eq!(report.identity_residual, 0);
    assert_eq!(report.mesh_elements, 64);
    assert_eq!(report.integration_steps, 2048);
    enforce_runtime(elapsed, 1.0, "riemannian oracle");
    pass(
        "criterion 1",
        format!(
            "maslov=1 = n-K({}) - n+S({}) - n-gP({}), residual 0, {:.0} ms",
            report.n_minus_k,
            report.n_plus_s,
            report.n_minus_gp,
            elapsed.as_secs_f64() * 1e3
        ),
    );
}

#[test]
fn acceptance_02_product_oracle() {
    let start = Instant::now();
    let problem = product_problem();
    let sol = integrate(&problem.system, &FlowOptions::default()).unwrap();
    let focal = focal_instants(&problem.system, &sol).unwrap();
    assert_eq!(focal.len(), 1);
    assert!((focal[0].t - PI).abs() < 1e-8, "focal time error {}", (focal[0].t - PI).abs());
    assert_eq!(focal[0].multiplicity, 2);
    assert_eq!(focal[0].signature, 0);
    let report = index_terms(&problem.system, &problem.dist, &FemOptions::default()).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(report.maslov, 0);
    assert_eq!(report.n_minus_k, 1);
    assert_eq!(report.n_plus_s, 1);
    assert_eq!(report.n_minus_gp, 0);
    assert_eq!(report.identity_residual, 0);
    enforce_runtime(elapsed, 2.0, "product oracle");
    pass(
        "criterion 2",
        format!(
            "maslov=0 = 1 - 1 - 0; focal t = {:.12} (mult 2, sgn 0), {:.0} ms",
            focal[0].t,
            elapsed.as_secs_f64() * 1e3
        ),
    );
}

fn initial_manifold_problem() -> (SystemData, Distribution) {
    let g = SymForm::from_diagonal(&[1.0, -1.0]);
    let r = constant_sampler(DMatrix::zeros(2, 2));
    let p = Subspace::span_of(2, &[DVector::from_row_slice(&[0.0, 1.0])]).unwrap();
    let init = InitialData::new(p, SymForm::zero(1)).unwrap();
    let system = MorseSturm::new((0.0, 1.0), g, r, init).unwrap().to_symplectic().unwrap();
    let dist = Distribution::constant(vec![DVector::from_row_slice(&[0.0, 1.0])]);
    (system, dist)
}

#[test]
fn acceptance_03_initial_manifold_term() {
    let (system, dist) = initial_manifold_problem();
    let report = index_terms(&system, &dist, &FemOptions::default()).unwrap();
    assert_eq!(report.maslov, 0);
    assert_eq!(report.n_minus_gp, 1, "the initial-manifold term must be nontrivial");
    assert_eq!(report.identity_residual, 0);
    assert_eq!(report.n_minus_k as i64 - report.n_plus_s as i64 - 1, 0);

    let grid: Vec<f64> = (1..=8).map(|i| i as f64 / 8.0).collect();
    let profile = index_profile(&system, &dist, &grid, &FemOptions::default()).unwrap();
    for p in &profile {
        assert_eq!(p.index, Some(1), "profile at t = {} is {:?}", p.t, p.index);
    }
    pass(
        "criterion 3",
        format!(
            "index profile constant at n-(g|P) = 1 over {} points, residual 0",
            profile.len()
        ),
    );
}

#[test]
fn acceptance_04_variable_endpoint() {
    let g = SymForm::from_diagonal(&[1.0]);
    let r = constant_sampler(DMatrix::zeros(1, 1));
    let system = MorseSturm::new((0.0, 1.0), g, r, InitialData::fixed_start(1))
        .unwrap()
        .to_symplectic()
        .unwrap();
    let q = Subspace::full(1);
    let mut details = Vec::new();
    for (sq_val, expected) in [(0.0, 0usize), (-2.0, 1usize)] {
        let sq = SymForm::from_diagonal(&[sq_val]);
        let report = variable_endpoint_terms(
            &system,
            &Distribution::empty(),
            &q,
            &sq,
            &FemOptions::default(),
        )
        .unwrap();
        assert_eq!(report.q_term, Some(expected), "S^Q = {sq_val}");
        assert_eq!(report.identity_residual, 0, "S^Q = {sq_val}");
        details.push(format!("S^Q={sq_val} -> Q-term {expected}"));
    }
    pass("criterion 4", format!("{} (S_gamma = -1 closed form), residual 0 both", details.join("; ")));
}

/// Seeded random Morse–Sturm problem with polynomial coefficients.
fn random_morse_sturm(seed: u64) -> Option<SystemData> {
    let mut rng = common::rng(seed);
    let n = rng.random_range(1..=4usize);
    let diag: Vec<f64> =
        (0..n).map(|_| if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 }).collect();
    let g = SymForm::from_diagonal(&diag);
    let m0 = common::random_symmetric(&mut rng, n, 2.5);
    let m1 = common::random_symmetric(&mut rng, n, 1.5);
    let m2 = common::random_symmetric(&mut rng, n, 1.0);
    let g_inv = g.matrix().clone().lu().solve(&DMatrix::identity(n, n)).unwrap();
    let r: maslov::systems::MatrixSampler = Arc::new(move |t| {
        let sym = &m0 + &m1 * t + &m2 * (t * t);
        &g_inv * sym
    });
    let p_dim = rng.random_range(0..=n);
    let init = if p_dim == 0 {
        InitialData::fixed_start(n)
    } else {
        let cols: Vec<DVector<f64>> =
            (0..p_dim).map(|_| common::random_vector(&mut rng, n, 1.0)).collect();
        let p = Subspace::span_of(n, &cols).ok()?;
        // The initial plane must be nondegenerate for the metric.
        if !g.restrict(&p).ok()?.is_nondegenerate() {
            return None;
        }
        let s = common::random_symmetric(&mut rng, p_dim, 1.0);
        InitialData::new(p, SymForm::new(s).ok()?).ok()?
    };
    MorseSturm::new((0.0, 2.0), g, r, init).ok()?.to_symplectic().ok()
}

#[test]
fn acceptance_05_maslov_equals_focal_index_on_random_systems() {
    let opts = FlowOptions::default();
    let mut accepted = 0;
    let mut with_focal = 0;
    let mut seed = 0u64;
    while accepted < 25 {
        seed += 1;
        assert!(seed < 600, "random suite exhausted after {accepted} accepted systems");
        let Some(system) = random_morse_sturm(seed) else { continue };
        let Ok(sol) = integrate(&system, &opts) else { continue };
        let Ok(instants) = focal_instants(&system, &sol) else { continue };
        if instants.iter().any(|i| !i.nondegenerate) {
            continue;
        }
        let Ok(foc) = focal_index(&instants) else { continue };
        let Ok(maslov) = maslov_index_of_system(&system, &sol, &opts) else { continue };
        assert_eq!(
            maslov.index, foc,
            "maslov {} vs focal {foc} on seed {seed} ({} instants)",
            maslov.index,
            instants.len()
        );
        accepted += 1;
        if !instants.is_empty() {
            with_focal += 1;
        }
    }
    assert!(with_focal >= 10, "suite too trivial: only {with_focal} systems had focal instants");
    pass(
        "criterion 5",
        format!("maslov = focal index on 25 random systems ({with_focal} with focal instants)"),
    );
}

#[test]
fn acceptance_06_isomorphism_invariance() {
    let opts = FlowOptions::default();
    let mut accepted = 0;
    let mut seed = 1000u64;
    while accepted < 10 {
        seed += 1;
        assert!(seed < 1400, "isomorphism suite exhausted");
        let Some(system) = random_morse_sturm(seed) else { continue };
        let Ok(sol) = integrate(&system, &opts) else { continue };
        let Ok(instants) = focal_instants(&system, &sol) else { continue };
        let Ok(maslov) = maslov_index_of_system(&system, &sol, &opts) else { continue };

        let n = system.dim();
        let mut rng = common::rng(seed ^ 0xabcd);
        let n0 = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.5..0.5));
        let n1 = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.25..0.25));
        let w0 = common::random_symmetric(&mut rng, n, 0.7);
        let w1 = common::random_symmetric(&mut rng, n, 0.4);
        let z: maslov::systems::MatrixSampler = {
            let (n0, n1) = (n0.clone(), n1.clone());
            Arc::new(move |t| DMatrix::identity(n, n) + (&n0 + &n1 * t) * 0.5)
        };
        let w: maslov::systems::MatrixSampler = {
            let (w0, w1) = (w0.clone(), w1.clone());
            Arc::new(move |t| &w0 + &w1 * t)
        };
        let iso = L0Isomorphism::new(z, w);
        let Ok(mapped) = maslov::systems::apply_isomorphism(&iso, &system) else { continue };
        let Ok(sol2) = integrate(&mapped, &opts) else { continue };
        let inst2 = focal_instants(&mapped, &sol2).unwrap();
        let m2 = maslov_index_of_system(&mapped, &sol2, &opts).unwrap();

        assert_eq!(instants.len(), inst2.len(), "seed {seed}: focal counts differ");
        for (a, b) in instants.iter().zip(&inst2) {
            assert!((a.t - b.t).abs() < 1e-7, "seed {seed}: focal time {} vs {}", a.t, b.t);
            assert_eq!(a.multiplicity, b.multiplicity, "seed {seed}");
            assert_eq!(a.signature, b.signature, "seed {seed}");
        }
        assert_eq!(maslov.index, m2.index, "seed {seed}: maslov changed");
        accepted += 1;
    }
    pass("criterion 6", "focal data and maslov index invariant on 10 random (system, iso) pairs".into());
}

#[test]
fn acceptance_07_tech_lemma_quadruples() {
    let mut accepted = 0;
    let mut seed = 0u64;
    let mut worst = 0.0_f64;
    while accepted < 100 {
        seed += 1;
        assert!(seed < 1000, "quadruple generation exhausted");
        let mut rng = common::rng(seed ^ 0x7777);
        let n = rng.random_range(1..=4usize);
        let m = common::random_symplectic(&mut rng, n);
        if maslov::lagrangian::symplectic_residual(&m) > 1e-9 * inf_norm(&m).powi(2).max(1.0) {
            continue;
        }
        let l0 = common::transformed_frame(&m, &LagrangianFrame::l0_standard(n));
        let l1 = common::transformed_frame(&m, &LagrangianFrame::l1_standard(n));
        let s = common::random_symmetric(&mut rng, n, 1.5);
        let d = common::random_symmetric(&mut rng, n, 1.5);
        let s_form = SymForm::new(s.clone()).unwrap();
        let d_form = SymForm::new(d.clone()).unwrap();
        if !s_form.is_nondegenerate() || !d_form.is_nondegenerate() {
            continue;
        }
        let Ok(l) = graph_lagrangian(&l0, &l1, &s) else { continue };
        let Ok(l_star) = graph_lagrangian(&l0, &l1, &(s + d)) else { continue };
        let Ok(report) = verify_tech_lemma(&l, &l_star, &l0, &l1) else { continue };
        assert!(
            report.residual < 1e-9,
            "seed {seed}: residual {:.3e}",
            report.residual
        );
        assert_eq!(report.n_plus_difference, report.n_plus_chart, "seed {seed}");
        assert!(report.difference_nondegenerate, "seed {seed}");
        worst = worst.max(report.residual);
        accepted += 1;
    }
    pass(
        "criterion 7",
        format!("identity residual < 1e-9 and coindex equality on 100 quadruples (worst {worst:.2e})"),
    );
}

#[test]
fn acceptance_08_index_jump_validator() {
    let mut checked = 0;
    let mut seed = 0u64;
    // Fixed-domain polynomial curves with an engineered degeneracy at 0.3.
    while checked < 30 {
        seed += 1;
        assert!(seed < 400, "fixed-domain generation exhausted");
        let mut rng = common::rng(seed ^ 0x1234);
        let d = rng.random_range(2..=8usize);
        let zeros = rng.random_range(1..=d.min(3));
        let t0 = 0.3;
        let mut lambda = Vec::with_capacity(d);
        let mut mu = Vec::with_capacity(d);
        for i in 0..d {
            if i < zeros {
                lambda.push(0.0);
                let sign = if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
                mu.push(sign * rng.random_range(0.5..2.0));
            } else {
                let sign = if rng.random_range(0.0..1.0) < 0.5 { 1.0 } else { -1.0 };
                lambda.push(sign * rng.random_range(0.4..2.0));
                mu.push(rng.random_range(-1.0..1.0));
            }
        }
        // Conjugate by a random rotation-ish basis to avoid diagonal bias.
        let basis = {
            let raw = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            maslov::bilinear::thin_q(&raw)
        };
        let (lambda, mu) = (lambda.clone(), mu.clone());
        let basis2 = basis.clone();
        let curve = FormCurve::new(
            (0.0, 1.0),
            d,
            Arc::new(move |t| {
                let diag = DMatrix::from_fn(d, d, |i, j| {
                    if i == j {
                        lambda[i] + mu[i] * (t - t0)
                    } else {
                        0.0
                    }
                });
                &basis2 * diag * basis2.transpose()
            }),
        )
        .unwrap();
        let fwd = jump_forward(&curve, t0).unwrap();
        assert!(fwd.consistent, "seed {seed}: {fwd:?}");
        assert!(fwd.kernel_contained_in_ambient, "seed {seed}");
        let two = jump_two_sided(&curve, t0).unwrap();
        assert!(two.consistent, "seed {seed}: {two:?}");
        checked += 1;
    }
    // Moving-domain curves: fixed nondegenerate form on a rotating kernel.
    let mut moving = 0;
    seed = 5000;
    while moving < 20 {
        seed += 1;
        assert!(seed < 5600, "moving-domain generation exhausted");
        let mut rng = common::rng(seed);
        let d = rng.random_range(3..=8usize);
        let c = rng.random_range(1..=d - 2);
        let b0 = common::random_symmetric(&mut rng, d, 1.0)
            + DMatrix::from_fn(d, d, |i, j| if i == j && i % 2 == 0 { 1.5 } else { 0.0 })
            - DMatrix::from_fn(d, d, |i, j| if i == j && i % 2 == 1 { 1.5 } else { 0.0 });
        let f0 = DMatrix::from_fn(c, d, |_, _| rng.random_range(-1.0..1.0));
        let f1 = DMatrix::from_fn(c, d, |_, _| rng.random_range(-1.0..1.0));
        let (b0c, f0c, f1c) = (b0.clone(), f0.clone(), f1.clone());
        let Ok(curve) = FormCurve::with_family(
            (0.0, 1.0),
            d,
            Arc::new(move |_t| b0c.clone()),
            SubspaceFamily::new(Arc::new(move |t| &f0c + &f1c * t)),
        ) else {
            continue;
        };
        let Ok(instants) = locate_degenerate_instants(&curve, 512) else { continue };
        let Some(&t0) = instants.iter().find(|&&t| t > 0.05 && t < 0.95) else { continue };
        let Ok(fwd) = jump_forward(&curve, t0) else { continue };
        assert!(fwd.consistent, "seed {seed}: {fwd:?}");
        let Ok(two) = jump_two_sided(&curve, t0) else { continue };
        assert!(two.consistent, "seed {seed}: {two:?}");
        moving += 1;
        checked += 1;
    }
    assert_eq!(checked, 50);
    pass(
        "criterion 8",
        "one- and two-sided jump identities exact on 50 randomized form curves".into(),
    );
}

#[test]
fn acceptance_09_structural_invariants() {
    for (label, problem) in
        [("riemannian", riemannian_line()), ("product", product_problem())]
    {
        let base = FemOptions::default();
        let report = index_terms(&problem.system, &problem.dist, &base).unwrap();
        assert!(report.diagnostics.symplectic_drift <= 1e-8, "{label} drift");
        assert!(report.diagnostics.isotropy_residual <= 1e-9, "{label} isotropy");
        assert!(
            report.diagnostics.orthogonality_residual <= 1e-8,
            "{label} orthogonality {:.3e}",
            report.diagnostics.orthogonality_residual
        );
        assert_eq!(
            report.diagnostics.dim_k + report.diagnostics.dim_s,
            report.diagnostics.dim_h,
            "{label} splitting dimensions"
        );
        assert!(report.diagnostics.converged, "{label} mesh stability");

        // Step-count doubling must leave every integer unchanged.
        let doubled = FemOptions {
            flow: FlowOptions { steps: 4096, ..FlowOptions::default() },
            ..FemOptions::default()
        };
        let report2 = index_terms(&problem.system, &problem.dist, &doubled).unwrap();
        assert_eq!(report.maslov, report2.maslov, "{label}");
        assert_eq!(report.n_minus_k, report2.n_minus_k, "{label}");
        assert_eq!(report.n_plus_s, report2.n_plus_s, "{label}");
        assert_eq!(report.n_minus_gp, report2.n_minus_gp, "{label}");
    }
    pass(
        "criterion 9",
        "drift <= 1e-8, isotropy <= 1e-9, orthogonality <= 1e-8 |I|, splitting exact, doubling-stable"
            .into(),
    );
}

#[test]
fn acceptance_10_maslov_stability_under_perturbation() {
    let opts = FlowOptions::default();
    for (label, g_diag, r_diag) in [
        ("riemannian", vec![1.0], vec![-1.0]),
        ("product", vec![1.0, -1.0], vec![-1.0, -1.0]),
    ] {
        let n = g_diag.len();
        let g = SymForm::from_diagonal(&g_diag);
        let baseline = {
            let r = constant_sampler(DMatrix::from_diagonal(&DVector::from_row_slice(&r_diag)));
            let sys = MorseSturm::new((0.0, 1.5 * PI), g.clone(), r, InitialData::fixed_start(n))
                .unwrap()
                .to_symplectic()
                .unwrap();
            let sol = integrate(&sys, &opts).unwrap();
            maslov_index_of_system(&sys, &sol, &opts).unwrap().index
        };
        for draw in 0..3u64 {
            let mut rng = common::rng(0x57AB + draw);
            let e = common::random_symmetric(&mut rng, n, 1e-4);
            let g_inv = g.matrix().clone().lu().solve(&DMatrix::identity(n, n)).unwrap();
            let delta = &g_inv * &e;
            assert!(inf_norm(&delta) <= 1e-4, "perturbation size");
            let r_base = DMatrix::from_diagonal(&DVector::from_row_slice(&r_diag));
            let r_pert = r_base + delta;
            let r = constant_sampler(r_pert);
            let sys = MorseSturm::new((0.0, 1.5 * PI), g.clone(), r, InitialData::fixed_start(n))
                .unwrap()
                .to_symplectic()
                .unwrap();
            let sol = integrate(&sys, &opts).unwrap();
            let m = maslov_index_of_system(&sys, &sol, &opts).unwrap();
            assert_eq!(m.index, baseline, "{label} draw {draw}");
        }
    }
    pass("criterion 10", "maslov index unchanged under 1e-4 coefficient noise on items 1-2".into());
}

#[test]
fn acceptance_11_semidefinite_criterion_forces_zero_coindex() {
    // Instances engineered so that one of the two reduced forms is psd.
    let span = (0.0, 2.0);
    let instances: Vec<(&str, SystemData, Distribution)> = vec![
        {
            let p = builtins::lorentzian_causal(1.0, span).unwrap();
            ("lorentzian_causal", p.system, p.dist)
        },
        {
            let p = builtins::jacobi_frame((1.0, -1.0), span, (1.0, 0.0)).unwrap();
            ("jacobi_frame", p.system, p.dist)
        },
        {
            // Negative semidefinite coupling with a parallel distribution.
            let g = SymForm::from_diagonal(&[1.0, -1.0]);
            let r = constant_sampler(DMatrix::from_diagonal(&DVector::from_row_slice(&[
                -1.0, 1.0,
            ])));
            let sys = MorseSturm::new(span, g, r, InitialData::fixed_start(2))
                .unwrap()
                .to_symplectic()
                .unwrap();
            let dist = Distribution::constant(vec![DVector::from_row_slice(&[0.0, 1.0])]);
            ("negative_semidefinite_coupling", sys, dist)
        },
    ];
    for (label, system, dist) in &instances {
        let crit = criterion_semidefinite(&system.coeffs, dist).unwrap();
        assert!(crit.holds(), "{label}: criterion fails {crit:?}");
        let report = index_terms(system, dist, &FemOptions::default()).unwrap();
        assert_eq!(report.n_plus_s, 0, "{label}: coindex must vanish");
        assert_eq!(report.identity_residual, 0, "{label}");
    }
    pass(
        "criterion 11",
        format!("criterion holds and n+(I|S) = 0 on {} generated instances", instances.len()),
    );
}
