use shf_core::calculus::{Bindings, Expr, FormField, Var};
use shf_core::exterior::{Frame, Vector6};
use shf_core::stable::contraction_identity_residual_for;
use shf_core::ts3::{
    build_structure, check_admissibility, stenzel_solve, BuiltStructure, Profile, Ts3Expressions,
};
use shf_core::Error;

fn cosh_sweep() -> BuiltStructure {
    build_structure(&Profile::cosh(3.0, 601).unwrap()).unwrap()
}

#[test]
fn cosh_sweep_satisfies_the_structure_identities() {
    let built = cosh_sweep();
    assert!(built.admissibility.admissible());
    for (key, tol) in [
        ("P_minus_4", 1e-8),
        ("g_xi_xi", 1e-8),
        ("g_xi_a", 1e-8),
        ("g_a_a", 1e-8),
        ("g_e1_e1", 1e-8),
        ("g_e1_e2", 1e-8),
        ("j_xi", 1e-8),
        ("pg11", 1e-8),
        ("norm_phi", 1e-10),
        ("psi_hat_formula", 1e-8),
        ("d_omega", 1e-10),
        ("d_psi", 1e-10),
        ("sigma_formula", 1e-6),
        ("sigma_omega23", 1e-6),
    ] {
        let worst = built.max_residual(key);
        assert!(worst < tol, "{key}: {worst:e}");
    }
    for s in &built.samples {
        if let Some(d) = &s.su3 {
            assert!(d.is_valid(), "t = {}", s.t);
        }
    }
}

#[test]
fn cosh_sweep_scalar_curvature() {
    let built = cosh_sweep();
    for s in built.samples.iter().filter(|s| s.t.abs() >= 0.1) {
        let closed = s.scal_closed.unwrap();
        assert!((s.scal_sigma - closed).abs() < 1e-4, "t = {}", s.t);
        assert!((s.scal_difference.unwrap() - closed).abs() < 1e-8 * closed.abs().max(1.0));
    }
    let s = built.sample_at(1.0).unwrap();
    assert!((s.scal_closed.unwrap() + 5.7965).abs() < 1e-4);
    assert_eq!(built.sample_at(0.0).unwrap().scal_closed, Some(0.0));
    let far = built.sample_at(3.0).unwrap();
    let ratio = far.scal_difference.unwrap() / far.scal_closed.unwrap();
    assert!((ratio - 1.0).abs() < 1e-6);
}

#[test]
fn parity_on_symmetric_grid() {
    let built = cosh_sweep();
    let n = built.samples.len();
    for i in 0..n {
        let (a, b) = (&built.samples[i], &built.samples[n - 1 - i]);
        assert!((a.f1 - b.f1).abs() < 1e-10);
        assert!((a.psi2 - b.psi2).abs() < 1e-10);
        assert!((a.f2 + b.f2).abs() < 1e-10);
        assert!((a.phi5 + b.phi5).abs() < 1e-10);
    }
}

#[test]
fn t_zero_uses_limits() {
    let built = build_structure(&Profile::parse("-2*cosh(t)", 1.0, 41).unwrap()).unwrap();
    let s = built.sample_at(0.0).unwrap();
    assert_eq!(s.t, 0.0);
    assert_eq!(s.f2, 0.0);
    assert!((s.psi2 - 0.5).abs() < 1e-15);
    assert!((s.phi5_prime + 0.5).abs() < 1e-15);
    assert_eq!(s.p, -4.0);
    let ext = &built.admissibility.extendability;
    for key in [
        "f3_prime_at_0",
        "f5_prime_at_0",
        "f4_at_0",
        "f2_at_0",
        "parity_f1",
    ] {
        assert!(ext[key] < 1e-12, "{key}");
    }
    let neighbour = &built.samples[built.samples.len() / 2 + 1];
    assert!((neighbour.psi2 - s.psi2).abs() < 1e-2);
}

#[test]
fn hitchin_invariant_is_minus_four_for_other_profiles() {
    for src in [
        "-1-t*t",
        "-(1+cosh(t))",
        "-2*cosh(t)",
        "-cosh(2*t)",
        "-exp(t*t/4)",
    ] {
        let p = Profile::parse(src, 1.5, 61).unwrap();
        let built = build_structure(&p).unwrap_or_else(|e| panic!("{src}: {e}"));
        assert!(built.max_residual("P_minus_4") < 1e-8, "{src}");
        assert!(built.max_residual("pg11") < 1e-8, "{src}");
    }
}

#[test]
fn contraction_identity_holds_along_the_geodesic() {
    let built = build_structure(&Profile::cosh(2.0, 41).unwrap()).unwrap();
    let xs = [
        Vector6([1.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        Vector6([0.3, -1.2, 0.7, 2.0, -0.4, 0.9]),
    ];
    for s in &built.samples {
        if let Some(d) = &s.su3 {
            for x in &xs {
                assert!(
                    contraction_identity_residual_for(d, x).unwrap()
                        < 1e-8 * s.f1.abs().powi(3).max(1.0)
                );
            }
        }
    }
}

#[test]
fn d_psi_hat_matches_the_stated_components() {
    let p = Profile::cosh(2.0, 41).unwrap();
    let ex = Ts3Expressions::new(&p).unwrap();
    let m = p.model().clone();
    let one =
        |name: &str, c: &Expr| FormField::from_named(m.clone(), 2, &[(name, c.clone())]).unwrap();
    let w1 = one("omega1", &Expr::one());
    let a = ex.sigma_a.clone();
    let b = ex.sigma_b.clone();
    let rhs = w1
        .wedge(&one("omega5", &b))
        .unwrap()
        .add(
            &w1.wedge(&one("omega2", &a).add(&one("omega3", &a)).unwrap())
                .unwrap(),
        )
        .unwrap();
    for i in 0..p.grid().len() {
        if i == p.center() {
            continue;
        }
        let v = p.values_at(i);
        let env = Bindings::default()
            .with(Var::T, v[0])
            .with(Var::named("f2"), v[1]);
        let lhs = ex.d_psi_hat.evaluate_at(&env).unwrap();
        let r = rhs.evaluate_at(&env).unwrap();
        assert_eq!(lhs.frame(), Frame::Ts3);
        assert!(lhs.distance(&r) < 1e-10 * r.max_abs().max(1.0));
    }
}

#[test]
fn admissibility_failures() {
    let rep = check_admissibility(&Profile::parse("-1", 1.0, 101).unwrap()).unwrap();
    assert!(!rep.admissible());
    assert!((rep.first_violation_t.unwrap() - 0.5).abs() < 1e-12);
    let rep = check_admissibility(&Profile::parse("cosh(t)", 3.0, 61).unwrap()).unwrap();
    assert!(!rep.cond1_even_negative);
    assert!(matches!(
        build_structure(&Profile::parse("cosh(t)", 3.0, 61).unwrap()),
        Err(Error::AdmissibilityFailure { .. })
    ));
    assert!(matches!(
        Profile::parse("x1", 1.0, 11),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn stenzel_profile_is_scalar_flat() {
    let p = stenzel_solve(-1.0, 2.0, 401).unwrap();
    let built = build_structure(&p).unwrap();
    let window = built.samples.iter().filter(|s| s.t.abs() >= 0.1);
    let scal: Vec<f64> = window.map(|s| s.scal_sigma).collect();
    let max = scal.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max < 1e-5, "max |Scal| = {max:e}");
    let spread = scal.iter().cloned().fold(f64::MIN, f64::max)
        - scal.iter().cloned().fold(f64::MAX, f64::min);
    if spread < 1e-6 {
        assert!(max < 1e-5);
    }
    for s in built.samples.iter().filter(|s| s.su3.is_some()) {
        assert!((s.f1 * s.psi2 + 0.125).abs() < 1e-10, "t = {}", s.t);
        assert!(s.torsion.unwrap().sigma.max_abs() < 1e-5);
    }
    assert!(built.max_residual("d_omega") < 1e-10);
    assert!(built.max_residual("P_minus_4") < 1e-8);
}

#[test]
fn stenzel_converges_under_refinement() {
    let coarse = stenzel_solve(-1.0, 2.0, 101).unwrap();
    let fine = stenzel_solve(-1.0, 2.0, 401).unwrap();
    let at = |p: &Profile, t: f64| {
        let i = p.grid().iter().position(|x| (x - t).abs() < 1e-12).unwrap();
        p.values_at(i)
    };
    let (a, b) = (at(&coarse, 2.0), at(&fine, 2.0));
    assert!((a[1] - b[1]).abs() < 1e-6);
    assert!((a[2] - b[2]).abs() < 1e-6);
    assert!(matches!(
        stenzel_solve(1.0, 2.0, 11),
        Err(Error::InvalidInput(_))
    ));
}
