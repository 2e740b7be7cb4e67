//! SO(4)-invariant symplectic half-flat structures on TS³, built along the
//! normal geodesic from a profile function `f₁(t)`.
//!
//! With `f₂' = −¼f₁` and `q = (f₂²)''`:
//!
//! ```text
//! ω  = f₁ω₁ + f₂ω₂ − f₂ω₃
//! ψ  = ψ₂ ξ*∧(ω₂+ω₃) + φ₅' ξ*∧ω₅ + 2φ₅ A*∧ω₄,   ψ₂ = √(q² − f₂²),  φ₅ = ½f₁f₂
//! ψ̂  = −(2φ₅/f₁) ξ*∧ω₄ + f₁ψ₂ A*∧(ω₂+ω₃) + f₁φ₅' A*∧ω₅
//! ```

use std::collections::BTreeMap;
use std::io::{self, Write};

use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{parse_expr, CoframeModel, Expr, FormField, Func, Tape, Var};
use crate::error::{Error, Result};
use crate::exterior::Form;
use crate::stable::{
    torsion_report_with, validate_su3_with, Lefschetz, Su3Data, TorsionReport, ANALYTIC_TOL,
};

/// Launch point of the Stenzel integration.
pub const STENZEL_T0: f64 = 1e-3;
const PARITY_TOL: f64 = 1e-10;
const MARGINAL_REL: f64 = 1e-12;
const DIVISION_FLOOR: f64 = 1e-12;

pub const CSV_HEADER: &str = "t,f1,f2,psi2,phi5,P,scal_sigma,scal_closed,res_compat,res_norm";

fn f2_var() -> Var {
    Var::named("f2")
}

/// Symmetric grid `t_i = T(i − m)/m`, `i = 0..2m`.
pub fn symmetric_grid(t_max: f64, samples: usize) -> Result<Vec<f64>> {
    if !(t_max.is_finite() && t_max > 0.0) {
        return Err(Error::InvalidInput(format!(
            "t_max must be positive, got {t_max}"
        )));
    }
    if samples < 3 || samples.is_multiple_of(2) {
        return Err(Error::InvalidInput(format!(
            "sample count must be odd and at least 3 so that t = 0 is a node, got {samples}"
        )));
    }
    let m = (samples / 2) as f64;
    Ok((0..samples).map(|i| t_max * (i as f64 - m) / m).collect())
}

/// `f₂` tabulated on a symmetric grid with the cubic Hermite interpolant
/// built from the exact derivative `f₂' = −¼f₁`.
#[derive(Clone, Debug)]
pub struct F2Table {
    pub t: Vec<f64>,
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

impl F2Table {
    pub fn interpolate(&self, t: f64) -> f64 {
        let n = self.t.len();
        let (lo, hi) = (self.t[0], self.t[n - 1]);
        let h = (hi - lo) / (n - 1) as f64;
        let k = (((t - lo) / h).floor() as isize).clamp(0, n as isize - 2) as usize;
        let s = (t - self.t[k]) / h;
        let (y0, y1) = (self.f2[k], self.f2[k + 1]);
        let (d0, d1) = (-0.25 * self.f1[k] * h, -0.25 * self.f1[k + 1] * h);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0
            + (s3 - 2.0 * s2 + s) * d0
            + (-2.0 * s3 + 3.0 * s2) * y1
            + (s3 - s2) * d1
    }
}

/// `f₂(t) = −¼∫₀ᵗ f₁` by Simpson's rule on each grid interval, accumulated
/// outward from `t = 0` on both sides.
pub fn integrate_f2(f1: &Expr, t_max: f64, samples: usize) -> Result<F2Table> {
    let t = symmetric_grid(t_max, samples)?;
    let tape = Tape::compile(std::slice::from_ref(f1), &[Var::T]);
    let eval = |x: f64| tape.eval(&[x])[0];
    let f1v: Vec<f64> = t.iter().map(|&x| eval(x)).collect();
    let m = samples / 2;
    let mut f2 = vec![0.0; samples];
    let simpson = |a: usize, b: usize, fa: f64, fb: f64| {
        let mid = 0.5 * (t[a] + t[b]);
        (t[b] - t[a]) / 6.0 * (fa + 4.0 * eval(mid) + fb)
    };
    for i in m..samples - 1 {
        f2[i + 1] = f2[i] - 0.25 * simpson(i, i + 1, f1v[i], f1v[i + 1]);
    }
    for i in (1..=m).rev() {
        f2[i - 1] = f2[i] - 0.25 * simpson(i, i - 1, f1v[i], f1v[i - 1]);
    }
    Ok(F2Table { t, f1: f1v, f2 })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProfileSource {
    Expression { f1: String },
    Stenzel { f1_at_0: f64, c: f64 },
}

/// A profile `f₁` sampled on a symmetric grid, with `f₂` and any auxiliary
/// state tabulated at every node.
///
/// Coefficients are expressions in `t` and the state variables; `D_t` of a
/// state variable is given by the model's state rules.
#[derive(Clone, Debug)]
pub struct Profile {
    source: ProfileSource,
    f1: Expr,
    f2: Expr,
    model: CoframeModel,
    vars: Vec<Var>,
    grid: Vec<f64>,
    /// `states[i]` holds the values of `vars[1..]` at node `i`.
    states: Vec<Vec<f64>>,
}

impl Profile {
    /// Profile from an expression in `t`; `f₂` by quadrature.
    pub fn from_f1(f1: Expr, t_max: f64, samples: usize) -> Result<Self> {
        if let Some(v) = f1.free_vars().into_iter().find(|v| *v != Var::T) {
            return Err(Error::InvalidInput(format!(
                "f1 may only depend on t, found `{v}`"
            )));
        }
        let table = integrate_f2(&f1, t_max, samples)?;
        let rule = f1.scale(-0.25);
        Ok(Profile {
            source: ProfileSource::Expression { f1: f1.to_string() },
            f2: Expr::var(f2_var()),
            model: CoframeModel::ts3_with_states(vec![(f2_var(), rule)]),
            vars: vec![Var::T, f2_var()],
            grid: table.t,
            states: table.f2.into_iter().map(|v| vec![v]).collect(),
            f1,
        })
    }

    pub fn parse(src: &str, t_max: f64, samples: usize) -> Result<Self> {
        Self::from_f1(parse_expr(src)?, t_max, samples)
    }

    /// `f₁(t) = −cosh(t)`.
    pub fn cosh(t_max: f64, samples: usize) -> Result<Self> {
        Self::from_f1(Expr::call(Func::Cosh, &Expr::t()).neg(), t_max, samples)
    }

    pub fn source(&self) -> &ProfileSource {
        &self.source
    }

    pub fn f1(&self) -> &Expr {
        &self.f1
    }

    pub fn f2(&self) -> &Expr {
        &self.f2
    }

    pub fn model(&self) -> &CoframeModel {
        &self.model
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn center(&self) -> usize {
        self.grid.len() / 2
    }

    /// Variables in the order of [`Profile::values_at`].
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// `[t, state...]` at node `i`.
    pub fn values_at(&self, i: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.vars.len());
        v.push(self.grid[i]);
        v.extend_from_slice(&self.states[i]);
        v
    }

    pub fn total_derivative(&self, e: &Expr) -> Expr {
        self.model.total_derivative(e)
    }

    fn tape(&self, exprs: &[Expr]) -> Tape {
        Tape::compile(exprs, &self.vars)
    }
}

/// Symbolic expressions of the construction for a profile.
#[derive(Clone, Debug)]
pub struct Ts3Expressions {
    pub f1: Expr,
    pub f2: Expr,
    /// `(f₂²)'' = −½(f₁f₂)'`
    pub q: Expr,
    pub psi2: Expr,
    pub phi5: Expr,
    pub phi5_prime: Expr,
    /// `(f₁ψ₂)'`
    pub sigma_a: Expr,
    /// `(f₁φ₅')' − 4φ₅/f₁`
    pub sigma_b: Expr,
    /// `−((f₁ψ₂)'/(f₁φ₅'))²`
    pub scal_closed: Expr,
    /// `−[((f₁ψ₂)')² − ((f₁φ₅')' − 4φ₅/f₁)²]/(f₁f₂)²`
    pub scal_difference: Expr,
    pub omega: FormField,
    pub psi: FormField,
    pub psi_hat: FormField,
    pub d_omega: FormField,
    pub d_psi: FormField,
    pub d_psi_hat: FormField,
    /// σ assembled from its stated components.
    pub sigma: FormField,
}

impl Ts3Expressions {
    pub fn new(profile: &Profile) -> Result<Self> {
        let d = |e: &Expr| profile.total_derivative(e);
        let f1 = profile.f1.clone();
        let f2 = profile.f2.clone();
        let q = d(&f1.mul(&f2)).scale(-0.5);
        let psi2 = q.square().sub(&f2.square()).sqrt();
        let phi5 = f1.mul(&f2).scale(0.5);
        let phi5_prime = d(&phi5);
        let f1psi2 = f1.mul(&psi2);
        let f1phi5p = f1.mul(&phi5_prime);
        let sigma_a = d(&f1psi2);
        let sigma_b = d(&f1phi5p).sub(&phi5.scale(4.0).div(&f1));
        let scal_closed = sigma_a.div(&f1phi5p).square().neg();
        let scal_difference = sigma_a
            .square()
            .sub(&sigma_b.square())
            .div(&f1.mul(&f2).square())
            .neg();
        let m = profile.model.clone();
        let omega = FormField::from_named(
            m.clone(),
            2,
            &[
                ("omega1", f1.clone()),
                ("omega2", f2.clone()),
                ("omega3", f2.neg()),
            ],
        )?;
        let psi = FormField::from_named(
            m.clone(),
            3,
            &[
                ("xi*^omega2", psi2.clone()),
                ("xi*^omega3", psi2.clone()),
                ("xi*^omega5", phi5_prime.clone()),
                ("A*^omega4", phi5.scale(2.0)),
            ],
        )?;
        let psi_hat = FormField::from_named(
            m.clone(),
            3,
            &[
                ("xi*^omega4", phi5.scale(2.0).div(&f1).neg()),
                ("A*^omega2", f1psi2.clone()),
                ("A*^omega3", f1psi2),
                ("A*^omega5", f1phi5p),
            ],
        )?;
        let sigma = FormField::from_named(
            m,
            2,
            &[
                ("omega2", sigma_a.div(&f1)),
                ("omega3", sigma_a.div(&f1)),
                ("omega5", sigma_b.div(&f1)),
            ],
        )?;
        Ok(Ts3Expressions {
            d_omega: omega.exterior_derivative()?,
            d_psi: psi.exterior_derivative()?,
            d_psi_hat: psi_hat.exterior_derivative()?,
            f1,
            f2,
            q,
            psi2,
            phi5,
            phi5_prime,
            sigma_a,
            sigma_b,
            scal_closed,
            scal_difference,
            omega,
            psi,
            psi_hat,
            sigma,
        })
    }
}

/// Outcome of conditions 1)–3) and the extendability residuals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdmissibilityReport {
    /// `f₁` even and negative on the grid.
    pub cond1_even_negative: bool,
    /// `(f₂²)'' > 0`.
    pub cond2_convexity: bool,
    /// `[(f₂²)'']² − f₂² > 0` away from `t = 0`.
    pub cond3_psi2_real: bool,
    /// Smallest `|t|` at which some condition fails.
    pub first_violation_t: Option<f64>,
    pub first_violation: Option<String>,
    /// `ψ₂²` vanishes (to rounding) at the first cond3 violation rather
    /// than turning negative.
    pub marginal: bool,
    pub extendability: BTreeMap<String, f64>,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.cond1_even_negative && self.cond2_convexity && self.cond3_psi2_real
    }

    pub fn into_result(self) -> Result<Self> {
        if self.admissible() {
            Ok(self)
        } else {
            Err(Error::AdmissibilityFailure {
                reason: self.first_violation.clone().unwrap_or_default(),
                first_violation_t: self.first_violation_t,
            })
        }
    }
}

/// Values of `f₁, f₂, q` at a node, with the `t = 0` limits `f₂ = 0`,
/// `q = ⅛f₁(0)²`.
fn node_basics(profile: &Profile, tape: &Tape, i: usize) -> (f64, f64, f64) {
    let v = tape.eval(&profile.values_at(i));
    if i == profile.center() {
        (v[0], 0.0, 0.125 * v[0] * v[0])
    } else {
        (v[0], v[1], v[2])
    }
}

pub fn check_admissibility(profile: &Profile) -> Result<AdmissibilityReport> {
    let ex = Ts3Expressions::new(profile)?;
    let f2_prime = profile.total_derivative(&ex.f2);
    let tape = profile.tape(&[ex.f1.clone(), ex.f2.clone(), ex.q.clone(), f2_prime]);
    let n = profile.grid.len();
    let c = profile.center();
    let basics: Vec<(f64, f64, f64)> = (0..n).map(|i| node_basics(profile, &tape, i)).collect();

    let mut violations: Vec<(f64, usize, String, bool)> = Vec::new();
    let mut note = |t: f64, cond: usize, reason: String, marginal: bool| {
        violations.push((t.abs(), cond, reason, marginal));
    };
    let (mut c1, mut c2, mut c3) = (true, true, true);
    let mut parity_f1: f64 = 0.0;
    let mut parity_f2: f64 = 0.0;
    for i in 0..n {
        let t = profile.grid[i];
        let (f1, f2, q) = basics[i];
        let (f1m, f2m, _) = basics[n - 1 - i];
        let odd = (f1 - f1m).abs();
        parity_f1 = parity_f1.max(odd);
        parity_f2 = parity_f2.max((f2 + f2m).abs());
        if !(odd < PARITY_TOL) {
            c1 = false;
            note(
                t,
                1,
                format!("f1 is not even: |f1(t) - f1(-t)| = {odd:e}"),
                false,
            );
        }
        if !(f1 < 0.0) {
            c1 = false;
            note(t, 1, format!("f1 = {f1} is not negative"), false);
        }
        if !(q > 0.0) {
            c2 = false;
            note(t, 2, format!("(f2^2)'' = {q} is not positive"), false);
        }
        if i != c {
            let psi2_sq = q * q - f2 * f2;
            let floor = MARGINAL_REL * (q * q).max(1.0);
            if !(psi2_sq > floor) {
                c3 = false;
                let marginal = psi2_sq.abs() <= floor;
                let kind = if marginal { "vanishes" } else { "is negative" };
                note(t, 3, format!("psi2^2 = {psi2_sq:e} {kind}"), marginal);
            }
        }
    }
    violations.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let first = violations.first();
    let marginal = violations.iter().find(|v| v.1 == 3).is_some_and(|v| v.3);

    let v0 = tape.eval(&profile.values_at(c));
    let (f1_0, f2p_0) = (v0[0], v0[3]);
    let f3p_0 = -f2p_0;
    let mut extendability = BTreeMap::new();
    extendability.insert("parity_f1".to_string(), parity_f1);
    extendability.insert("parity_f2".to_string(), parity_f2);
    extendability.insert(
        "f2_at_0".to_string(),
        basics[c].1.abs().max(profile.states[c][0].abs()),
    );
    extendability.insert(
        "f3_prime_at_0".to_string(),
        (f3p_0 - (0.5 * f1_0 + f2p_0)).abs(),
    );
    extendability.insert("f5_prime_at_0".to_string(), (0.25 * f1_0 + f2p_0).abs());
    extendability.insert("f4_at_0".to_string(), 0.0);

    Ok(AdmissibilityReport {
        cond1_even_negative: c1,
        cond2_convexity: c2,
        cond3_psi2_real: c3,
        first_violation_t: first.map(|v| v.0),
        first_violation: first.map(|v| format!("condition {}: {}", v.1, v.2)),
        marginal,
        extendability,
    })
}

/// One node of the built structure. The orbit through `t = 0` is singular:
/// there the scalar data hold their limits and no SU(3) data are attached.
#[derive(Clone, Debug, Serialize)]
pub struct Sample {
    pub t: f64,
    pub f1: f64,
    pub f2: f64,
    pub psi2: f64,
    pub phi5: f64,
    pub phi5_prime: f64,
    #[serde(rename = "P")]
    pub p: f64,
    pub omega: Form,
    pub psi: Form,
    pub psi_hat: Form,
    pub su3: Option<Su3Data>,
    pub torsion: Option<TorsionReport>,
    /// `−½|σ|²` from the Lefschetz-inverted torsion.
    pub scal_sigma: f64,
    /// `None` when `|f₁φ₅'|` is below the division floor.
    pub scal_closed: Option<f64>,
    pub scal_difference: Option<f64>,
    pub residuals: BTreeMap<String, f64>,
}

impl Sample {
    pub fn residual(&self, name: &str) -> f64 {
        self.residuals.get(name).copied().unwrap_or(f64::NAN)
    }

    fn csv_row(&self) -> String {
        let res = |k: &str| self.su3.as_ref().map_or(0.0, |d| d.residual(k));
        let values = [
            self.t,
            self.f1,
            self.f2,
            self.psi2,
            self.phi5,
            self.p,
            self.scal_sigma,
            self.scal_closed.unwrap_or(f64::NAN),
            res("compatibility"),
            res("normalization"),
        ];
        values
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BuiltStructure {
    pub source: ProfileSource,
    pub admissibility: AdmissibilityReport,
    pub samples: Vec<Sample>,
}

impl BuiltStructure {
    pub fn sample_at(&self, t: f64) -> Option<&Sample> {
        self.samples
            .iter()
            .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
    }

    /// Largest value of a residual over the samples that carry it.
    pub fn max_residual(&self, name: &str) -> f64 {
        self.samples
            .iter()
            .filter_map(|s| s.residuals.get(name))
            .fold(0.0, |m: f64, v| m.max(*v))
    }

    /// First sample that fails SU(3) validation, as an error.
    pub fn first_invalid(&self) -> Option<Error> {
        self.samples.iter().find_map(|s| {
            let d = s.su3.as_ref()?;
            if d.is_valid() {
                return None;
            }
            let check = d.checks.first_failure().unwrap_or("unknown");
            let key = match check {
                "compatibility" => "compatibility",
                "stability" => "s_squared",
                "normalization" => "normalization",
                _ => "min_eigenvalue",
            };
            Some(Error::ValidationFailure {
                t: s.t,
                check: check.to_string(),
                residual: d.residual(key),
            })
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for s in &self.samples {
            writeln!(w, "{}", s.csv_row())?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

struct Tapes {
    scalars: Tape,
    fields: Vec<crate::calculus::FieldTape>,
}

const SCALARS: usize = 10;

fn build_sample(
    profile: &Profile,
    ex: &Ts3Expressions,
    tapes: &Tapes,
    i: usize,
    tol: f64,
) -> Result<Sample> {
    let values = profile.values_at(i);
    let v = tapes.scalars.eval(&values);
    let mut scratch = Vec::new();
    let forms: Vec<Form> = tapes
        .fields
        .iter()
        .map(|f| f.eval(&values, &mut scratch))
        .collect();
    let (omega, psi, psi_hat) = (forms[0], forms[1], forms[2]);
    let t = values[0];
    let f1 = v[0];
    let mut residuals = BTreeMap::new();

    if i == profile.center() {
        let psi2 = 0.125 * f1 * f1;
        let psi = FormField::from_named(
            ex.psi.model().clone(),
            3,
            &[
                ("xi*^omega2", Expr::num(psi2)),
                ("xi*^omega3", Expr::num(psi2)),
                ("xi*^omega5", Expr::num(-psi2)),
            ],
        )?
        .evaluate_at(&crate::calculus::Bindings::default())?;
        let psi_hat = FormField::from_named(
            ex.psi.model().clone(),
            3,
            &[
                ("A*^omega2", Expr::num(f1 * psi2)),
                ("A*^omega3", Expr::num(f1 * psi2)),
                ("A*^omega5", Expr::num(-f1 * psi2)),
            ],
        )?
        .evaluate_at(&crate::calculus::Bindings::default())?;
        return Ok(Sample {
            t,
            f1,
            f2: 0.0,
            psi2,
            phi5: 0.0,
            phi5_prime: -psi2,
            p: -4.0,
            omega,
            psi,
            psi_hat,
            su3: None,
            torsion: None,
            scal_sigma: 0.0,
            scal_closed: Some(0.0),
            scal_difference: Some(0.0),
            residuals,
        });
    }

    let (f2, psi2, phi5, phi5_prime) = (v[1], v[2], v[3], v[4]);
    let (sigma_a, sigma_b) = (v[5], v[6]);
    let (d_omega, d_psi, d_psi_hat, sigma_formula) = (forms[3], forms[4], forms[5], forms[6]);
    let data = validate_su3_with(&omega, &psi, tol)?;
    let torsion = if data.is_valid() {
        let lef = Lefschetz::new(&omega)?;
        Some(torsion_report_with(&data, &d_psi_hat, &lef)?)
    } else {
        None
    };

    let rel = |x: f64, scale: f64| x.abs() / scale.abs().max(1.0);
    let g = data.g.gram();
    residuals.insert("d_omega".into(), d_omega.max_abs());
    residuals.insert("d_psi".into(), d_psi.max_abs());
    residuals.insert("psi_hat_formula".into(), psi_hat.distance(&data.psi_hat));
    residuals.insert("P_minus_4".into(), (data.p + 4.0).abs());
    residuals.insert("g_xi_xi".into(), (g[(0, 0)] - 1.0).abs());
    residuals.insert("g_xi_a".into(), g[(0, 1)].abs());
    residuals.insert("g_a_a".into(), rel(g[(1, 1)] - f1 * f1, f1 * f1));
    let e11 = -2.0 * phi5_prime * phi5 / (f1 * f2);
    let e12 = -2.0 * psi2 * phi5 / (f1 * f2);
    residuals.insert("g_e1_e1".into(), rel(g[(2, 2)] - e11, e11));
    residuals.insert("g_e1_e2".into(), rel(g[(2, 4)] - e12, e12));
    let mut j_xi = 0.0f64;
    for r in 0..6 {
        let expected = if r == 1 { 1.0 / f1 } else { 0.0 };
        j_xi = j_xi.max((data.j[(r, 0)] - expected).abs());
    }
    residuals.insert("j_xi".into(), j_xi);
    let ff = 0.25 * (f1 * f2).powi(2);
    residuals.insert("norm_phi".into(), rel(phi5 * phi5 - ff, ff));
    let lhs = 4.0 * phi5 * phi5;
    let rhs = f1 * f1 * (phi5_prime * phi5_prime - psi2 * psi2);
    residuals.insert("pg11".into(), rel(lhs - rhs, lhs));
    if let Some(tr) = &torsion {
        let scale = sigma_a.abs().max(sigma_b.abs()) / f1.abs();
        residuals.insert(
            "sigma_formula".into(),
            rel(tr.sigma.distance(&sigma_formula), scale),
        );
        let along = tr
            .sigma
            .coeff(crate::exterior::MultiIndex::new(&[2, 3]).expect("sorted"));
        residuals.insert(
            "sigma_omega23".into(),
            rel(along - sigma_a / f1, sigma_a / f1),
        );
    }

    let denom = (f1 * phi5_prime).abs();
    let scal_closed = (denom >= DIVISION_FLOOR).then_some(v[7]);
    let scal_difference = ((f1 * f2).abs() >= DIVISION_FLOOR).then_some(v[8]);
    Ok(Sample {
        t,
        f1,
        f2,
        psi2,
        phi5,
        phi5_prime,
        p: data.p,
        omega,
        psi,
        psi_hat,
        scal_sigma: torsion.as_ref().map_or(f64::NAN, |tr| tr.scal),
        torsion,
        su3: Some(data),
        scal_closed,
        scal_difference,
        residuals,
    })
}

/// Builds the structure at every grid node after checking admissibility.
///
/// Fails with `AdmissibilityFailure` or with a `ValidationFailure` naming
/// the first sample that is not a valid SU(3)-structure.
pub fn build_structure(profile: &Profile) -> Result<BuiltStructure> {
    build_structure_with(profile, ANALYTIC_TOL)
}

/// As [`build_structure`] with an explicit tolerance for the SU(3) checks.
pub fn build_structure_with(profile: &Profile, tol: f64) -> Result<BuiltStructure> {
    let built = build_structure_unchecked_with(profile, tol)?;
    if let Some(e) = built.first_invalid() {
        return Err(e);
    }
    Ok(built)
}

/// As [`build_structure`] but keeps samples that fail validation.
pub fn build_structure_unchecked(profile: &Profile) -> Result<BuiltStructure> {
    build_structure_unchecked_with(profile, ANALYTIC_TOL)
}

pub fn build_structure_unchecked_with(profile: &Profile, tol: f64) -> Result<BuiltStructure> {
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let admissibility = check_admissibility(profile)?.into_result()?;
    let ex = Ts3Expressions::new(profile)?;
    let scalars = [
        ex.f1.clone(),
        ex.f2.clone(),
        ex.psi2.clone(),
        ex.phi5.clone(),
        ex.phi5_prime.clone(),
        ex.sigma_a.clone(),
        ex.sigma_b.clone(),
        ex.scal_closed.clone(),
        ex.scal_difference.clone(),
        ex.q.clone(),
    ];
    debug_assert_eq!(scalars.len(), SCALARS);
    let tapes = Tapes {
        scalars: profile.tape(&scalars),
        fields: [
            &ex.omega,
            &ex.psi,
            &ex.psi_hat,
            &ex.d_omega,
            &ex.d_psi,
            &ex.d_psi_hat,
            &ex.sigma,
        ]
        .iter()
        .map(|f| f.compile(profile.vars()))
        .collect(),
    };
    let samples = (0..profile.grid.len())
        .into_par_iter()
        .map(|i| build_sample(profile, &ex, &tapes, i, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(BuiltStructure {
        source: profile.source.clone(),
        admissibility,
        samples,
    })
}

/// `−((f₁ψ₂)'/(f₁φ₅'))²` per sample (0 at `t = 0`).
pub fn scal_closed_form(built: &BuiltStructure) -> Vec<Option<f64>> {
    built.samples.iter().map(|s| s.scal_closed).collect()
}

/// Torsion reports per sample (`None` at `t = 0`).
pub fn scal_from_torsion(built: &BuiltStructure) -> Vec<Option<&TorsionReport>> {
    built.samples.iter().map(|s| s.torsion.as_ref()).collect()
}

/// Integrates the profile with `(f₁ψ₂)' = 0`, i.e. `f₁ψ₂ ≡ c` with
/// `c = ⅛f₁(0)³`.
///
/// In terms of `y = f₂` (so `f₁ = −4y'`) this is
/// `y'' = (√(y² + c²/(16y'²)) − 2y'²)/(2y)`, launched from a Taylor
/// polynomial at `t = 1e−3` and continued with fixed-step RK4 at the grid
/// spacing. The negative half follows from `y` odd, `y'` even.
pub fn stenzel_solve(f1_at_0: f64, t_max: f64, samples: usize) -> Result<Profile> {
    if !(f1_at_0 < 0.0 && f1_at_0.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "f1(0) must be negative, got {f1_at_0}"
        )));
    }
    let grid = symmetric_grid(t_max, samples)?;
    let m = samples / 2;
    let h = grid[m + 1];
    if h <= STENZEL_T0 {
        return Err(Error::InvalidInput(format!(
            "grid spacing {h} must exceed the launch point {STENZEL_T0}"
        )));
    }
    let s = -0.25 * f1_at_0;
    let c = 0.125 * f1_at_0.powi(3);

    let y = Var::named("y");
    let yp = Var::named("yp");
    let (ye, ype) = (Expr::var(y.clone()), Expr::var(yp.clone()));
    let rhs = ye
        .square()
        .add(&Expr::num(c * c / 16.0).div(&ype.square()))
        .sqrt()
        .sub(&ype.square().scale(2.0))
        .div(&ye.scale(2.0));
    let rhs_tape = Tape::compile(std::slice::from_ref(&rhs), &[y.clone(), yp.clone()]);
    let field = |state: [f64; 2]| -> [f64; 2] { [state[1], rhs_tape.eval(&state)[0]] };

    let taylor = |t: f64| -> [f64; 2] {
        let (t2, s3, s5) = (t * t, s.powi(3), s.powi(5));
        let y = s * t + t.powi(3) / (120.0 * s) - 29.0 * t.powi(5) / (336000.0 * s3)
            + 59.0 * t.powi(7) / (31360000.0 * s5);
        let yp = s + t2 / (40.0 * s) - 29.0 * t.powi(4) / (67200.0 * s3)
            + 59.0 * t.powi(6) / (4480000.0 * s5);
        [y, yp]
    };
    let rk4 = |st: [f64; 2], dt: f64| -> [f64; 2] {
        let add = |a: [f64; 2], b: [f64; 2], k: f64| [a[0] + k * b[0], a[1] + k * b[1]];
        let k1 = field(st);
        let k2 = field(add(st, k1, dt / 2.0));
        let k3 = field(add(st, k2, dt / 2.0));
        let k4 = field(add(st, k3, dt));
        [
            st[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            st[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    };

    let mut states = vec![vec![0.0, 0.0]; samples];
    states[m] = vec![0.0, s];
    let mut state = taylor(STENZEL_T0);
    let mut t_prev = STENZEL_T0;
    let mut last_valid = 0.0;
    for i in m + 1..samples {
        state = rk4(state, grid[i] - t_prev);
        t_prev = grid[i];
        if !(state[0] > 0.0 && state[1] > 0.0 && state[0].is_finite() && state[1].is_finite()) {
            return Err(Error::OdeFailure {
                last_t: last_valid,
                reason: format!(
                    "state left the domain y > 0, y' > 0: ({}, {})",
                    state[0], state[1]
                ),
            });
        }
        last_valid = grid[i];
        states[i] = state.to_vec();
        states[2 * m - i] = vec![-state[0], state[1]];
    }

    let model = CoframeModel::ts3_with_states(vec![(y.clone(), ype.clone()), (yp.clone(), rhs)]);
    Ok(Profile {
        source: ProfileSource::Stenzel { f1_at_0, c },
        f1: ype.scale(-4.0),
        f2: ye,
        model,
        vars: vec![Var::T, y, yp],
        grid,
        states,
    })
}
