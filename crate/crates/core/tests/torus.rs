use shf_core::exterior::{Form, Frame};
use shf_core::torus::{analyze, build_torus, evaluate_grid, verify_half_flat, TorusSpec};

const SINE: &str = "sin(6.283185307179586*x1)";

#[test]
fn sine_family_is_strict_with_five_translations() {
    let spec = TorusSpec::parse(SINE, "0", "0").unwrap();
    let report = analyze(&spec).unwrap();
    assert!(report.strict);
    assert_eq!(report.dim_lower_bound, 5);
    assert!(!report.per_field["x1"].preserved);
    for key in ["x2", "x3", "x4", "x5", "x6"] {
        let f = &report.per_field[key];
        assert!(f.preserved, "{key}");
        assert!(f.res_closed.unwrap() < 1e-5, "{key}");
        assert!(
            f.res_coclosed.unwrap() < 1e-5,
            "{key}: {:e}",
            f.res_coclosed.unwrap()
        );
    }
    let hf = &report.half_flat;
    assert!(hf.res_d_omega < 1e-10 && hf.res_d_psi < 1e-10);
    assert!(hf.primitivity < 1e-8 && hf.j_invariance < 1e-8);
    assert!(hf.psi_hat_symbolic < 1e-10);
    assert!(hf.p_minus_4 < 1e-8);
    assert!(report.scal_range[1] <= 0.0);
    assert!(report.scal_range[0] < -1.0);
}

#[test]
fn sigma_tracks_the_derivative_of_a() {
    let spec = TorusSpec::parse(SINE, "0", "0")
        .unwrap()
        .with_grid(8)
        .unwrap();
    let s = build_torus(&spec).unwrap();
    let grid = evaluate_grid(&s).unwrap();
    // dψ̂ is linear in a'(x¹) = 2π cos(2πx¹)
    let quarter = &grid.nodes[grid.index([2, 0, 0])];
    assert_eq!(quarter.x, [0.25, 0.0, 0.0]);
    assert!(quarter.sigma.max_abs() < 1e-12);
    let origin = &grid.nodes[grid.index([0, 3, 5])];
    let two_pi = std::f64::consts::TAU;
    let expected = -two_pi
        * (Form::basis(Frame::Coordinate, &[1, 5]) + Form::basis(Frame::Coordinate, &[2, 4]));
    assert!(origin.sigma.approx_eq(&expected, 1e-12));
}

#[test]
fn all_nonconstant_profiles_keep_three_translations() {
    let spec = TorusSpec::parse(
        SINE,
        "0.5*cos(6.283185307179586*x2)",
        "0.3*sin(12.566370614359172*x3)",
    )
    .unwrap()
    .with_grid(12)
    .unwrap();
    let report = analyze(&spec).unwrap();
    assert!(report.strict);
    assert_eq!(report.dim_lower_bound, 3);
    for key in ["x4", "x5", "x6"] {
        assert!(report.per_field[key].preserved);
        assert!(report.per_field[key].res_coclosed.unwrap() < 1e-3);
    }
}

#[test]
fn flat_and_constant_profiles_are_not_strict() {
    for (a, grid) in [("0", 8), ("0.2", 8)] {
        let spec = TorusSpec::parse(a, "0", "0")
            .unwrap()
            .with_grid(grid)
            .unwrap();
        let s = build_torus(&spec).unwrap();
        assert!(s.d_psi_hat.is_zero(), "a = {a}");
        let g = evaluate_grid(&s).unwrap();
        let hf = verify_half_flat(&s, &g).unwrap();
        assert!(!hf.strict);
        assert_eq!(hf.sigma_sup, 0.0);
        let report = analyze(&spec).unwrap();
        assert_eq!(report.dim_lower_bound, 6, "a = {a}");
    }
}
