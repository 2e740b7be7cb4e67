//! Pointwise Hitchin machinery for a pair `(ω, ψ)`.
//!
//! From a 2-form and a 3-form this computes the endomorphism `S`, the quartic
//! invariant `P(ψ)`, the almost complex structure `J = S/√|P|`, the dual
//! 3-form `ψ̂ = Jψ = −ψ(J·,·,·)` and the metric `g = ω(·, J·)`, and checks the
//! four SU(3) conditions. The torsion 2-form of a symplectic half-flat
//! structure is recovered by inverting the Lefschetz map `κ ↦ κ ∧ ω`.

use std::collections::BTreeMap;

use nalgebra::{Matrix6, SMatrix, SVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::exterior::{
    contract, hodge_star, inner_product, two_form_from_matrix, two_form_matrix, wedge, wedge_all,
    Form, Frame, Metric, MultiIndex, Vector6, DIM,
};

/// Analytic-input tolerance for the compatibility and normalization residuals.
pub const ANALYTIC_TOL: f64 = 1e-8;
/// Tolerance for inputs that went through finite differences.
pub const FD_TOL: f64 = 1e-4;
/// Condition number above which the Lefschetz system counts as singular.
pub const LEFSCHETZ_COND_MAX: f64 = 1e12;

fn expect_degree(f: &Form, degree: usize) -> Result<()> {
    if f.degree() != degree {
        return Err(Error::DegreeMismatch {
            expected: degree,
            got: f.degree(),
        });
    }
    Ok(())
}

fn same_frame(a: &Form, b: &Form) -> Result<()> {
    if a.frame() != b.frame() {
        return Err(Error::FrameMismatch(a.frame(), b.frame()));
    }
    Ok(())
}

/// `S` defined by `ι_vψ ∧ ψ ∧ θ = θ(S v) · vol`.
pub fn s_endomorphism(psi: &Form, vol: &Form) -> Result<Matrix6<f64>> {
    expect_degree(psi, 3)?;
    expect_degree(vol, 6)?;
    same_frame(psi, vol)?;
    if vol.top() == 0.0 {
        return Err(Error::DegenerateVolume);
    }
    let frame = psi.frame();
    let mut s = Matrix6::zeros();
    for i in 0..DIM {
        let w = wedge(&contract(&Vector6::unit(i), psi)?, psi)?;
        if w.is_zero() {
            continue;
        }
        for j in 0..DIM {
            let top = wedge(&w, &Form::basis(frame, &[j]))?.top();
            s[(j, i)] = top / vol.top();
        }
    }
    Ok(s)
}

/// `S`, `P = tr(S²)/6` and the relative residual of `S² − P·Id`.
#[derive(Clone, Copy, Debug)]
pub struct HitchinInvariant {
    pub s: Matrix6<f64>,
    pub p: f64,
    pub proportionality_residual: f64,
}

pub fn hitchin_invariant(psi: &Form, vol: &Form) -> Result<HitchinInvariant> {
    let s = s_endomorphism(psi, vol)?;
    let s2 = s * s;
    let p = s2.trace() / DIM as f64;
    let scale = p.abs().max(s.amax().powi(2));
    let dev = (s2 - Matrix6::identity() * p).amax();
    let proportionality_residual = if scale > 0.0 { dev / scale } else { 0.0 };
    Ok(HitchinInvariant {
        s,
        p,
        proportionality_residual,
    })
}

/// Hitchin's quartic invariant `P(ψ)`, with `S² = P·Id` enforced to 1e-8 relative.
pub fn hitchin_p(psi: &Form, vol: &Form) -> Result<f64> {
    let h = hitchin_invariant(psi, vol)?;
    if h.proportionality_residual > ANALYTIC_TOL {
        return Err(Error::NotProportional(h.proportionality_residual));
    }
    Ok(h.p)
}

/// `J = S/√|P(ψ)|`; requires `P(ψ) < 0`.
pub fn almost_complex(psi: &Form, vol: &Form) -> Result<Matrix6<f64>> {
    let h = hitchin_invariant(psi, vol)?;
    if h.proportionality_residual > ANALYTIC_TOL {
        return Err(Error::NotProportional(h.proportionality_residual));
    }
    if h.p >= 0.0 {
        return Err(Error::NotStable(h.p));
    }
    Ok(h.s / (-h.p).sqrt())
}

/// `ψ̂_{ijk} = −ψ(J e_i, e_j, e_k)`, with `J` acting on the first slot.
pub fn dual_three_form(psi: &Form, j: &Matrix6<f64>) -> Result<Form> {
    expect_degree(psi, 3)?;
    let mut out = Form::zero(psi.frame(), 3);
    let first_slot: Vec<Form> = (0..DIM)
        .map(|i| contract(&Vector6::from_column(j, i), psi))
        .collect::<Result<_>>()?;
    for (r, idx) in MultiIndex::all(3).enumerate() {
        let s: Vec<usize> = idx.slots().collect();
        let rest = MultiIndex::new(&s[1..]).expect("sorted");
        out.coeffs_mut()[r] = -first_slot[s[0]].coeff(rest);
    }
    Ok(out)
}

/// Action `(Jκ)(u, v) = κ(Ju, Jv)` on 2-forms.
pub fn j_on_two_form(j: &Matrix6<f64>, kappa: &Form) -> Form {
    let w = two_form_matrix(kappa);
    two_form_from_matrix(kappa.frame(), &(j.transpose() * w * j))
}

/// Which of the four SU(3) conditions hold.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Su3Checks {
    /// ω ∧ ψ = 0
    pub compatible: bool,
    /// P(ψ) < 0
    pub stable: bool,
    /// ψ ∧ ψ̂ = (2/3) ω³
    pub normalized: bool,
    /// g = ω(·, J·) positive definite
    pub positive: bool,
}

impl Su3Checks {
    pub fn all(&self) -> bool {
        self.compatible && self.stable && self.normalized && self.positive
    }

    /// Name of the first failing condition.
    pub fn first_failure(&self) -> Option<&'static str> {
        [
            (self.compatible, "compatibility"),
            (self.stable, "stability"),
            (self.normalized, "normalization"),
            (self.positive, "positivity"),
        ]
        .into_iter()
        .find(|(ok, _)| !ok)
        .map(|(_, name)| name)
    }
}

/// A pointwise structure with all Hitchin data and its residual diagnostics.
#[derive(Clone, Debug)]
pub struct Su3Data {
    pub omega: Form,
    pub psi: Form,
    pub psi_hat: Form,
    pub j: Matrix6<f64>,
    pub g: Metric,
    pub p: f64,
    /// `ω³/6`, the orientation used by the Hodge star.
    pub vol: Form,
    pub residuals: BTreeMap<String, f64>,
    pub checks: Su3Checks,
}

impl Su3Data {
    pub fn is_valid(&self) -> bool {
        self.checks.all()
    }

    pub fn residual(&self, name: &str) -> f64 {
        self.residuals.get(name).copied().unwrap_or(f64::NAN)
    }
}

fn row_major(m: &Matrix6<f64>) -> Vec<f64> {
    (0..DIM)
        .flat_map(|r| (0..DIM).map(move |c| m[(r, c)]))
        .collect()
}

impl Serialize for Su3Data {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            omega: &'a Form,
            psi: &'a Form,
            psi_hat: &'a Form,
            #[serde(rename = "J_rowmajor")]
            j_rowmajor: Vec<f64>,
            g_rowmajor: Vec<f64>,
            #[serde(rename = "P")]
            p: f64,
            residuals: &'a BTreeMap<String, f64>,
            checks: &'a Su3Checks,
            valid: bool,
        }
        Repr {
            omega: &self.omega,
            psi: &self.psi,
            psi_hat: &self.psi_hat,
            j_rowmajor: row_major(&self.j),
            g_rowmajor: row_major(self.g.gram()),
            p: self.p,
            residuals: &self.residuals,
            checks: &self.checks,
            valid: self.is_valid(),
        }
        .serialize(ser)
    }
}

/// [`validate_su3_with`] at the analytic tolerance.
pub fn validate_su3(omega: &Form, psi: &Form) -> Result<Su3Data> {
    validate_su3_with(omega, psi, ANALYTIC_TOL)
}

/// Computes every Hitchin quantity for `(ω, ψ)` and checks conditions a)–d).
///
/// Only a degenerate ω is an error; failed conditions are reported through
/// `checks` and `residuals`. Residuals are relative: compatibility against
/// `‖ω‖·‖ψ‖`, normalization against `‖ω‖³` (max-coefficient norms).
pub fn validate_su3_with(omega: &Form, psi: &Form, tol: f64) -> Result<Su3Data> {
    expect_degree(omega, 2)?;
    expect_degree(psi, 3)?;
    same_frame(omega, psi)?;
    let frame = omega.frame();
    let om_norm = omega.max_abs();
    let cube = wedge_all(&[*omega, *omega, *omega])?;
    if om_norm == 0.0 || cube.top().abs() <= 1e-14 * om_norm.powi(3) {
        return Err(Error::DegenerateSymplectic);
    }
    let vol = cube.scale(1.0 / 6.0);

    let mut residuals = BTreeMap::new();
    let psi_norm = psi.max_abs();
    let compat = wedge(omega, psi)?.max_abs();
    let compat_rel = if psi_norm > 0.0 {
        compat / (om_norm * psi_norm)
    } else {
        0.0
    };
    residuals.insert("compatibility".to_string(), compat_rel);

    let h = hitchin_invariant(psi, &vol)?;
    residuals.insert("s_squared".to_string(), h.proportionality_residual);
    let stable = h.p < 0.0 && h.proportionality_residual <= tol;

    let (j, psi_hat, g, normalized, positive) = if h.p < 0.0 {
        let j = h.s / (-h.p).sqrt();
        residuals.insert(
            "j_squared".to_string(),
            (j * j + Matrix6::identity()).amax(),
        );
        let psi_hat = dual_three_form(psi, &j)?;
        let norm_res = (wedge(psi, &psi_hat)? - cube.scale(2.0 / 3.0)).max_abs() / om_norm.powi(3);
        residuals.insert("normalization".to_string(), norm_res);
        let raw = two_form_matrix(omega) * j;
        let scale = raw.amax().max(f64::MIN_POSITIVE);
        residuals.insert(
            "metric_symmetry".to_string(),
            (raw - raw.transpose()).amax() / scale,
        );
        let g = Metric::new((raw + raw.transpose()) * 0.5)?;
        let ev = g.eigenvalues();
        residuals.insert("min_eigenvalue".to_string(), ev[0]);
        (j, psi_hat, g, norm_res <= tol, g.is_positive_definite())
    } else {
        (
            Matrix6::zeros(),
            Form::zero(frame, 3),
            Metric::new(Matrix6::zeros())?,
            false,
            false,
        )
    };

    Ok(Su3Data {
        omega: *omega,
        psi: *psi,
        psi_hat,
        j,
        g,
        p: h.p,
        vol,
        residuals,
        checks: Su3Checks {
            compatible: compat_rel <= tol,
            stable,
            normalized,
            positive,
        },
    })
}

/// Factorized Lefschetz map `κ ↦ κ ∧ ω` from 2-forms to 4-forms.
#[derive(Clone, Debug)]
pub struct Lefschetz {
    omega: Form,
    lu: nalgebra::LU<f64, nalgebra::Const<15>, nalgebra::Const<15>>,
    condition: f64,
}

impl Lefschetz {
    pub fn new(omega: &Form) -> Result<Self> {
        expect_degree(omega, 2)?;
        let norm = omega.max_abs();
        let cube = wedge_all(&[*omega, *omega, *omega])?;
        if norm == 0.0 || cube.top().abs() <= 1e-14 * norm.powi(3) {
            return Err(Error::DegenerateSymplectic);
        }
        let frame = omega.frame();
        let mut m = SMatrix::<f64, 15, 15>::zeros();
        for (c, idx) in MultiIndex::all(2).enumerate() {
            let image = wedge(&Form::from_index(frame, idx, 1.0), omega)?;
            for (r, v) in image.coeffs().iter().enumerate() {
                m[(r, c)] = *v;
            }
        }
        let sv = m.svd(false, false).singular_values;
        let (lo, hi) = (sv.min(), sv.max());
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > LEFSCHETZ_COND_MAX {
            return Err(Error::SingularSystem(condition));
        }
        Ok(Lefschetz {
            omega: *omega,
            lu: m.lu(),
            condition,
        })
    }

    pub fn condition_number(&self) -> f64 {
        self.condition
    }

    pub fn omega(&self) -> &Form {
        &self.omega
    }

    /// The unique 2-form σ with `σ ∧ ω = τ`.
    pub fn solve(&self, tau: &Form) -> Result<Form> {
        expect_degree(tau, 4)?;
        same_frame(&self.omega, tau)?;
        let rhs = SVector::<f64, 15>::from_column_slice(tau.coeffs());
        let x = self
            .lu
            .solve(&rhs)
            .ok_or(Error::SingularSystem(f64::INFINITY))?;
        Form::from_coeffs(tau.frame(), 2, x.as_slice())
    }
}

pub fn lefschetz_inverse(omega: &Form, tau: &Form) -> Result<Form> {
    Lefschetz::new(omega)?.solve(tau)
}

/// Torsion form and the scalar curvature it determines.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TorsionReport {
    pub sigma: Form,
    /// `‖σ ∧ ω²‖`
    pub primitivity_residual: f64,
    /// `‖Jσ − σ‖`
    pub j_invariance_residual: f64,
    /// `|σ|²_g`
    pub norm_sq: f64,
    /// `−½ |σ|²`
    pub scal: f64,
}

/// σ from `dψ̂ = σ ∧ ω`, its type residuals, and `Scal = −½|σ|²`.
pub fn torsion_report(data: &Su3Data, d_psi_hat: &Form) -> Result<TorsionReport> {
    torsion_report_with(data, d_psi_hat, &Lefschetz::new(&data.omega)?)
}

/// Same as [`torsion_report`] with a prefactored Lefschetz map for `data.omega`.
pub fn torsion_report_with(
    data: &Su3Data,
    d_psi_hat: &Form,
    lefschetz: &Lefschetz,
) -> Result<TorsionReport> {
    if !data.is_valid() {
        return Err(Error::InvalidStructure(
            data.checks.first_failure().unwrap_or("unknown").to_string(),
        ));
    }
    torsion_from_parts(&data.omega, &data.j, &data.g, d_psi_hat, lefschetz)
}

pub(crate) fn torsion_from_parts(
    omega: &Form,
    j: &Matrix6<f64>,
    g: &Metric,
    d_psi_hat: &Form,
    lefschetz: &Lefschetz,
) -> Result<TorsionReport> {
    let sigma = lefschetz.solve(d_psi_hat)?;
    let omega2 = wedge(omega, omega)?;
    let primitivity_residual = wedge(&sigma, &omega2)?.max_abs();
    let j_invariance_residual = (j_on_two_form(j, &sigma) - sigma).max_abs();
    let norm_sq = inner_product(g, &sigma, &sigma)?;
    Ok(TorsionReport {
        sigma,
        primitivity_residual,
        j_invariance_residual,
        norm_sq,
        scal: -0.5 * norm_sq,
    })
}

/// `‖ι_Xψ ∧ ψ + 2 *(ι_Xω)‖` for a valid structure.
pub fn contraction_identity_residual(omega: &Form, psi: &Form, x: &Vector6) -> Result<f64> {
    let data = validate_su3(omega, psi)?;
    contraction_identity_residual_for(&data, x)
}

pub fn contraction_identity_residual_for(data: &Su3Data, x: &Vector6) -> Result<f64> {
    if !data.is_valid() {
        return Err(Error::InvalidStructure(
            data.checks.first_failure().unwrap_or("unknown").to_string(),
        ));
    }
    let lhs = wedge(&contract(x, &data.psi)?, &data.psi)?;
    let star = hodge_star(&data.g, &data.vol, &contract(x, &data.omega)?)?;
    Ok((lhs + star.scale(2.0)).max_abs())
}

/// The flat model `ω₀ = dx¹⁴ + dx²⁵ + dx³⁶`.
pub fn flat_omega(frame: Frame) -> Form {
    Form::basis(frame, &[0, 3]) + Form::basis(frame, &[1, 4]) + Form::basis(frame, &[2, 5])
}

/// The flat model `ψ₀ = −dx¹²⁶ + dx¹³⁵ − dx²³⁴ + dx⁴⁵⁶`.
pub fn flat_psi(frame: Frame) -> Form {
    -Form::basis(frame, &[0, 1, 5]) + Form::basis(frame, &[0, 2, 4])
        - Form::basis(frame, &[1, 2, 3])
        + Form::basis(frame, &[3, 4, 5])
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: Frame = Frame::Coordinate;

    fn vol0() -> Form {
        let w = flat_omega(C);
        wedge_all(&[w, w, w]).unwrap().scale(1.0 / 6.0)
    }

    /// Oracle for S: evaluate θ(S v) via the defining identity with explicit loops.
    fn s_brute(psi: &Form, vol: &Form) -> Matrix6<f64> {
        let mut s = Matrix6::zeros();
        for i in 0..DIM {
            for j in 0..DIM {
                let lhs = wedge_all(&[
                    contract(&Vector6::unit(i), psi).unwrap(),
                    *psi,
                    Form::basis(C, &[j]),
                ])
                .unwrap();
                s[(j, i)] = lhs.top() / vol.top();
            }
        }
        s
    }

    #[test]
    fn flat_s_squares_to_minus_four() {
        let s = s_endomorphism(&flat_psi(C), &vol0()).unwrap();
        assert_eq!(s, s_brute(&flat_psi(C), &vol0()));
        assert_eq!(s * s, Matrix6::identity() * -4.0);
        assert_eq!(hitchin_p(&flat_psi(C), &vol0()).unwrap(), -4.0);
    }

    #[test]
    fn decomposable_three_form_has_zero_s() {
        let psi = Form::basis(C, &[0, 1, 2]);
        assert_eq!(s_endomorphism(&psi, &vol0()).unwrap(), Matrix6::zeros());
        let any_vol = Form::basis(C, &[0, 1, 2, 3, 4, 5]).scale(3.0);
        assert_eq!(s_endomorphism(&psi, &any_vol).unwrap(), Matrix6::zeros());
        assert_eq!(hitchin_p(&Form::zero(C, 3), &vol0()).unwrap(), 0.0);
    }

    #[test]
    fn s_scales_quadratically_and_p_quartically() {
        let psi = flat_psi(C);
        let s1 = s_endomorphism(&psi, &vol0()).unwrap();
        let s3 = s_endomorphism(&psi.scale(3.0), &vol0()).unwrap();
        assert_eq!(s3, s1 * 9.0);
        let p1 = hitchin_p(&psi, &vol0()).unwrap();
        let p2 = hitchin_p(&psi.scale(2.0), &vol0()).unwrap();
        assert_eq!(p2, 16.0 * p1);
    }

    #[test]
    fn real_type_form_is_not_stable() {
        let psi = Form::basis(C, &[0, 1, 2]) + Form::basis(C, &[3, 4, 5]);
        let vol = Form::basis(C, &[0, 1, 2, 3, 4, 5]);
        let p = hitchin_p(&psi, &vol).unwrap();
        assert!(p > 0.0, "P = {p}");
        assert!(matches!(
            almost_complex(&psi, &vol),
            Err(Error::NotStable(_))
        ));
    }

    #[test]
    fn degenerate_volume_is_rejected() {
        let vol = Form::zero(C, 6);
        assert_eq!(
            s_endomorphism(&flat_psi(C), &vol),
            Err(Error::DegenerateVolume)
        );
    }

    #[test]
    fn flat_complex_structure() {
        let j = almost_complex(&flat_psi(C), &vol0()).unwrap();
        assert_eq!(j * j, -Matrix6::identity());
        // J e1 = e4 and ω0 = dx¹⁴ + ...
        assert_eq!(Vector6::from_column(&j, 0), Vector6::unit(3));
        assert_eq!(j, s_brute(&flat_psi(C), &vol0()) / 2.0);
    }

    #[test]
    fn flat_model_validates() {
        let d = validate_su3(&flat_omega(C), &flat_psi(C)).unwrap();
        assert!(d.is_valid());
        assert_eq!(d.p, -4.0);
        assert_eq!(*d.g.gram(), Matrix6::identity());
        assert_eq!(d.residual("compatibility"), 0.0);
        assert_eq!(d.residual("normalization"), 0.0);
        // ψ̂ ∧ ψ = −(2/3) ω³
        let w = flat_omega(C);
        let lhs = wedge(&d.psi_hat, &d.psi).unwrap();
        assert_eq!(lhs, wedge_all(&[w, w, w]).unwrap().scale(-2.0 / 3.0));
    }

    #[test]
    fn scaled_psi_fails_normalization_only() {
        let d = validate_su3(&flat_omega(C), &flat_psi(C).scale(2.0)).unwrap();
        assert!(!d.is_valid());
        assert!(d.checks.compatible && d.checks.stable && d.checks.positive);
        assert!(!d.checks.normalized);
        // ψ∧ψ̂ scales by 4 (ψ̂ = Jψ, J unchanged), ω³ fixed: |4·(-4) − (-4)| / 1 = 12.
        assert_eq!(d.residual("normalization"), 12.0);
    }

    #[test]
    fn real_type_pair_fails_stability() {
        let psi = Form::basis(C, &[0, 1, 2]) + Form::basis(C, &[3, 4, 5]);
        let d = validate_su3(&flat_omega(C), &psi).unwrap();
        assert!(!d.checks.stable);
        assert!(!d.is_valid());
    }

    #[test]
    fn degenerate_omega_is_an_error() {
        let w = Form::basis(C, &[0, 1]);
        assert_eq!(
            validate_su3(&w, &flat_psi(C)).unwrap_err(),
            Error::DegenerateSymplectic
        );
    }

    #[test]
    fn lefschetz_examples() {
        let w = flat_omega(C);
        let w2 = wedge(&w, &w).unwrap();
        assert!(lefschetz_inverse(&w, &w2).unwrap().approx_eq(&w, 1e-14));
        assert!(lefschetz_inverse(&w, &Form::zero(C, 4)).unwrap().is_zero());
        assert_eq!(
            lefschetz_inverse(&Form::basis(C, &[0, 1]), &w2).unwrap_err(),
            Error::DegenerateSymplectic
        );
    }

    #[test]
    fn calabi_yau_torsion_vanishes() {
        let d = validate_su3(&flat_omega(C), &flat_psi(C)).unwrap();
        let t = torsion_report(&d, &Form::zero(C, 4)).unwrap();
        assert!(t.sigma.is_zero());
        assert_eq!(t.scal, 0.0);
        assert_eq!(t.scal, -0.5 * t.norm_sq);
    }

    #[test]
    fn contraction_identity_on_flat_model() {
        let r =
            contraction_identity_residual(&flat_omega(C), &flat_psi(C), &Vector6::unit(0)).unwrap();
        assert_eq!(r, 0.0);
        let r = contraction_identity_residual(&flat_omega(C), &flat_psi(C), &Vector6([0.0; DIM]))
            .unwrap();
        assert_eq!(r, 0.0);
        let x = Vector6([0.3, -1.2, 0.5, 2.0, 0.1, -0.7]);
        assert!(contraction_identity_residual(&flat_omega(C), &flat_psi(C), &x).unwrap() < 1e-14);
    }

    #[test]
    fn su3_json_field_names() {
        let d = validate_su3(&flat_omega(C), &flat_psi(C)).unwrap();
        let v = serde_json::to_value(&d).unwrap();
        for key in [
            "omega",
            "psi",
            "psi_hat",
            "J_rowmajor",
            "g_rowmajor",
            "P",
            "residuals",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["J_rowmajor"].as_array().unwrap().len(), 36);
        assert_eq!(v["P"], -4.0);
    }
}
