//! The six-torus family
//!
//! ```text
//! ω = dx¹⁴ + dx²⁵ + dx³⁶
//! ψ = −e^{λ₃}dx¹²⁶ + e^{λ₂}dx¹³⁵ − e^{λ₁}dx²³⁴ + dx⁴⁵⁶
//! λ₁ = b(x²) − c(x³),  λ₂ = c(x³) − a(x¹),  λ₃ = a(x¹) − b(x²)
//! ```
//!
//! with a grid evaluation of the torsion and a scan of the coordinate vector
//! fields for infinitesimal automorphisms.

use std::collections::BTreeMap;

use nalgebra::Matrix6;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{
    parse_expr, symbolic_dual, Bindings, CoframeModel, Expr, FieldTape, FormField, Var, VectorField,
};
use crate::error::{Error, Result};
use crate::exterior::{
    contract, hodge_star, wedge, wedge_sign, Form, Frame, Metric, MultiIndex, Vector6, DIM,
};
use crate::stable::{flat_omega, j_on_two_form, validate_su3_with, Lefschetz, ANALYTIC_TOL};

pub const DEFAULT_GRID: usize = 32;
/// Sup-norm of σ above which the structure counts as strict.
pub const STRICT_TOL: f64 = 1e-6;
const PERIODICITY_TOL: f64 = 1e-8;

/// Profile functions `a(x¹), b(x²), c(x³)`, the grid resolution per axis
/// and the tolerance for pointwise validation and preserved fields.
#[derive(Clone, Debug)]
pub struct TorusSpec {
    pub a: Expr,
    pub b: Expr,
    pub c: Expr,
    pub grid: usize,
    pub tol: f64,
}

impl TorusSpec {
    pub fn new(a: Expr, b: Expr, c: Expr) -> Result<Self> {
        let spec = TorusSpec {
            a,
            b,
            c,
            grid: DEFAULT_GRID,
            tol: ANALYTIC_TOL,
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn parse(a: &str, b: &str, c: &str) -> Result<Self> {
        Self::new(parse_expr(a)?, parse_expr(b)?, parse_expr(c)?)
    }

    pub fn with_grid(mut self, grid: usize) -> Result<Self> {
        if grid < 5 {
            return Err(Error::InvalidInput(format!(
                "grid must have at least 5 points per axis, got {grid}"
            )));
        }
        self.grid = grid;
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tolerance must be positive, got {tol}"
            )));
        }
        self.tol = tol;
        Ok(self)
    }

    fn functions(&self) -> [(&'static str, &Expr, usize); 3] {
        [("a", &self.a, 0), ("b", &self.b, 1), ("c", &self.c, 2)]
    }

    fn check(&self) -> Result<()> {
        for (name, f, slot) in self.functions() {
            if let Some(v) = f.free_vars().into_iter().find(|v| *v != Var::x(slot)) {
                return Err(Error::InvalidInput(format!(
                    "{name} may only depend on x{}, found `{v}`",
                    slot + 1
                )));
            }
            let at = |x: f64| f.eval(&Bindings::default().with(Var::x(slot), x));
            for k in 0..64 {
                let x = k as f64 / 64.0 + 0.0037;
                let (y0, y1) = (at(x)?, at(x + 1.0)?);
                if !((y1 - y0).abs() < PERIODICITY_TOL) {
                    return Err(Error::PeriodicityViolation(name.to_string()));
                }
            }
        }
        Ok(())
    }

    /// `(λ₁, λ₂, λ₃)`.
    pub fn lambdas(&self) -> [Expr; 3] {
        [
            self.b.sub(&self.c),
            self.c.sub(&self.a),
            self.a.sub(&self.b),
        ]
    }
}

/// Symbolic fields of a torus structure.
#[derive(Clone, Debug)]
pub struct TorusStructure {
    pub spec: TorusSpec,
    pub omega: FormField,
    pub psi: FormField,
    pub psi_hat: FormField,
    pub d_psi_hat: FormField,
    pub p: Expr,
}

pub fn build_torus(spec: &TorusSpec) -> Result<TorusStructure> {
    let m = CoframeModel::coordinate_chart();
    let [l1, l2, l3] = spec.lambdas();
    let omega = FormField::constant(m.clone(), &flat_omega(Frame::Coordinate))?;
    let term = |slots: &[usize], e: Expr| {
        let rank = MultiIndex::new(slots).expect("sorted").rank();
        FormField::term(m.clone(), 3, rank, e)
    };
    let psi = term(&[0, 1, 5], l3.exp().neg())
        .add(&term(&[0, 2, 4], l2.exp()))?
        .add(&term(&[1, 2, 3], l1.exp().neg()))?
        .add(&term(&[3, 4, 5], Expr::one()))?;
    let dual = symbolic_dual(&omega, &psi)?;
    Ok(TorusStructure {
        spec: spec.clone(),
        d_psi_hat: dual.psi_hat.exterior_derivative()?,
        psi_hat: dual.psi_hat,
        p: dual.p,
        omega,
        psi,
    })
}

/// Pointwise data at one grid node.
#[derive(Clone, Debug)]
pub struct NodeData {
    pub x: [f64; 3],
    pub psi: Form,
    pub psi_hat: Form,
    pub metric: Metric,
    pub j: Matrix6<f64>,
    pub vol: Form,
    pub p: f64,
    pub sigma: Form,
    pub scal: f64,
    pub residuals: BTreeMap<String, f64>,
}

/// All grid nodes of a structure, in `x¹`-major order.
#[derive(Clone, Debug)]
pub struct TorusGrid {
    pub n: usize,
    pub nodes: Vec<NodeData>,
}

impl TorusGrid {
    pub fn index(&self, i: [usize; 3]) -> usize {
        (i[0] * self.n + i[1]) * self.n + i[2]
    }

    fn sup(&self, key: &str) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.residuals.get(key).copied().unwrap_or(0.0))
            .fold(0.0, f64::max)
    }
}

fn coordinate_vars() -> [Var; 3] {
    [Var::x(0), Var::x(1), Var::x(2)]
}

/// Evaluates and validates the structure at every node of the `n³` grid
/// over `(x¹, x², x³)`; the fields do not depend on the other coordinates.
pub fn evaluate_grid(s: &TorusStructure) -> Result<TorusGrid> {
    let n = s.spec.grid;
    let vars = coordinate_vars();
    let tapes: Vec<FieldTape> = [&s.psi, &s.psi_hat, &s.d_psi_hat]
        .iter()
        .map(|f| f.compile(&vars))
        .collect();
    let omega = flat_omega(Frame::Coordinate);
    let lefschetz = Lefschetz::new(&omega)?;
    let omega2 = wedge(&omega, &omega)?;
    let nodes = (0..n * n * n)
        .into_par_iter()
        .map_init(Vec::new, |scratch, k| {
            let x = [
                (k / (n * n)) as f64 / n as f64,
                ((k / n) % n) as f64 / n as f64,
                (k % n) as f64 / n as f64,
            ];
            let psi = tapes[0].eval(&x, scratch);
            let psi_hat_sym = tapes[1].eval(&x, scratch);
            let d_psi_hat = tapes[2].eval(&x, scratch);
            let data = validate_su3_with(&omega, &psi, s.spec.tol)?;
            if !data.is_valid() {
                return Err(Error::InvalidStructure(format!(
                    "{} fails at x = {x:?}",
                    data.checks.first_failure().unwrap_or("unknown")
                )));
            }
            let sigma = lefschetz.solve(&d_psi_hat)?;
            let norm_sq = crate::exterior::inner_product(&data.g, &sigma, &sigma)?;
            let mut residuals = BTreeMap::new();
            residuals.insert(
                "psi_hat_symbolic".into(),
                psi_hat_sym.distance(&data.psi_hat),
            );
            residuals.insert("primitivity".into(), wedge(&sigma, &omega2)?.max_abs());
            residuals.insert(
                "j_invariance".into(),
                (j_on_two_form(&data.j, &sigma) - sigma).max_abs(),
            );
            residuals.insert("sigma".into(), sigma.max_abs());
            residuals.insert("P_minus_4".into(), (data.p + 4.0).abs());
            Ok(NodeData {
                x,
                psi,
                psi_hat: data.psi_hat,
                metric: data.g,
                j: data.j,
                vol: data.vol,
                p: data.p,
                sigma,
                scal: -0.5 * norm_sq,
                residuals,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TorusGrid { n, nodes })
}

/// Sup-norm residuals of the half-flat equations on the grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HalfFlatReport {
    pub res_d_omega: f64,
    pub res_d_psi: f64,
    pub sigma_sup: f64,
    pub primitivity: f64,
    pub j_invariance: f64,
    pub psi_hat_symbolic: f64,
    pub p_minus_4: f64,
    pub strict: bool,
    pub scal_range: [f64; 2],
}

fn field_sup(f: &FormField, n: usize) -> Result<f64> {
    if f.is_zero() {
        return Ok(0.0);
    }
    let tape = f.compile(&coordinate_vars());
    Ok((0..n * n * n)
        .into_par_iter()
        .map_init(Vec::new, |scratch, k| {
            let x = [
                (k / (n * n)) as f64 / n as f64,
                ((k / n) % n) as f64 / n as f64,
                (k % n) as f64 / n as f64,
            ];
            tape.eval(&x, scratch).max_abs()
        })
        .reduce(|| 0.0, f64::max))
}

pub fn verify_half_flat(s: &TorusStructure, grid: &TorusGrid) -> Result<HalfFlatReport> {
    let n = grid.n;
    let res_d_omega = field_sup(&s.omega.exterior_derivative()?, n)?;
    let res_d_psi = field_sup(&s.psi.exterior_derivative()?, n)?;
    let sigma_sup = grid.sup("sigma");
    let (lo, hi) = grid
        .nodes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), node| {
            (lo.min(node.scal), hi.max(node.scal))
        });
    Ok(HalfFlatReport {
        res_d_omega,
        res_d_psi,
        sigma_sup,
        primitivity: grid.sup("primitivity"),
        j_invariance: grid.sup("j_invariance"),
        psi_hat_symbolic: grid.sup("psi_hat_symbolic"),
        p_minus_4: grid.sup("P_minus_4"),
        strict: sigma_sup > STRICT_TOL,
        scal_range: [lo, hi],
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FieldReport {
    pub res_omega: f64,
    pub res_psi: f64,
    pub preserved: bool,
    /// `‖d(ι_Xω)‖`, for preserved fields.
    pub res_closed: Option<f64>,
    /// `‖d*(ι_Xω)‖` by periodic fourth-order differences, for preserved fields.
    pub res_coclosed: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AutomorphismReport {
    pub per_field: BTreeMap<String, FieldReport>,
    /// Number of preserved coordinate fields, a lower bound for the
    /// dimension of the automorphism algebra.
    pub dim_lower_bound: usize,
}

impl AutomorphismReport {
    pub fn preserved(&self) -> Vec<usize> {
        (0..DIM)
            .filter(|i| self.per_field[&format!("x{}", i + 1)].preserved)
            .collect()
    }
}

/// `‖d*β‖` on the grid for the 1-form `β` by periodic fourth-order
/// differences of the starred coefficients.
fn coclosed_residual(grid: &TorusGrid, beta: &Form) -> Result<f64> {
    let n = grid.n;
    let h = 1.0 / n as f64;
    let starred: Vec<Form> = grid
        .nodes
        .par_iter()
        .map(|node| hodge_star(&node.metric, &node.vol, beta))
        .collect::<Result<_>>()?;
    let wrap = |i: isize| i.rem_euclid(n as isize) as usize;
    (0..grid.nodes.len())
        .into_par_iter()
        .map(|k| {
            let idx = [k / (n * n), (k / n) % n, k % n];
            let mut top = 0.0;
            for axis in 0..3 {
                let rest = MultiIndex::from_mask(0b11_1111 & !(1 << axis));
                let sign = wedge_sign(MultiIndex::from_mask(1 << axis), rest);
                let at = |offset: isize| {
                    let mut j = idx;
                    j[axis] = wrap(idx[axis] as isize + offset);
                    starred[grid.index(j)].coeff(rest)
                };
                let deriv = (-at(2) + 8.0 * at(1) - 8.0 * at(-1) + at(-2)) / (12.0 * h);
                top += sign * deriv;
            }
            let node = &grid.nodes[k];
            let d_star = Form::from_index(Frame::Coordinate, MultiIndex::from_mask(0b11_1111), top);
            Ok(hodge_star(&node.metric, &node.vol, &d_star)?.coeffs()[0].abs())
        })
        .try_reduce(|| 0.0, |a, b| Ok(a.max(b)))
}

pub fn automorphism_scan(s: &TorusStructure, grid: &TorusGrid) -> Result<AutomorphismReport> {
    let n = grid.n;
    let mut per_field = BTreeMap::new();
    for i in 0..DIM {
        let x = VectorField::coordinate(i);
        let res_omega = field_sup(&s.omega.lie_derivative(&x)?, n)?;
        let res_psi = field_sup(&s.psi.lie_derivative(&x)?, n)?;
        let preserved = res_omega < s.spec.tol && res_psi < s.spec.tol;
        let (res_closed, res_coclosed) = if preserved {
            let beta = s.omega.contract(&x)?;
            let closed = field_sup(&beta.exterior_derivative()?, n)?;
            let numeric = contract(&Vector6::unit(i), &flat_omega(Frame::Coordinate))?;
            (Some(closed), Some(coclosed_residual(grid, &numeric)?))
        } else {
            (None, None)
        };
        per_field.insert(
            format!("x{}", i + 1),
            FieldReport {
                res_omega,
                res_psi,
                preserved,
                res_closed,
                res_coclosed,
            },
        );
    }
    let dim_lower_bound = per_field.values().filter(|f| f.preserved).count();
    Ok(AutomorphismReport {
        per_field,
        dim_lower_bound,
    })
}

/// Combined diagnostics as emitted by the command-line tool.
#[derive(Clone, Debug, Serialize)]
pub struct TorusReport {
    pub strict: bool,
    pub dim_lower_bound: usize,
    pub per_field: BTreeMap<String, FieldReport>,
    pub scal_range: [f64; 2],
    pub half_flat: HalfFlatReport,
    pub grid: usize,
    pub a: String,
    pub b: String,
    pub c: String,
}

pub fn analyze(spec: &TorusSpec) -> Result<TorusReport> {
    let s = build_torus(spec)?;
    let grid = evaluate_grid(&s)?;
    let half_flat = verify_half_flat(&s, &grid)?;
    let scan = automorphism_scan(&s, &grid)?;
    Ok(TorusReport {
        strict: half_flat.strict,
        dim_lower_bound: scan.dim_lower_bound,
        per_field: scan.per_field,
        scal_range: half_flat.scal_range,
        half_flat,
        grid: spec.grid,
        a: spec.a.to_string(),
        b: spec.b.to_string(),
        c: spec.c.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stable::flat_psi;

    #[test]
    fn zero_profiles_give_the_flat_model() {
        let spec = TorusSpec::parse("0", "0", "0").unwrap();
        let s = build_torus(&spec).unwrap();
        let psi = s.psi.evaluate_at(&Bindings::default()).unwrap();
        assert_eq!(psi, flat_psi(Frame::Coordinate));
        assert!(s.d_psi_hat.is_zero());
        assert_eq!(s.p.as_num(), Some(-4.0));
    }

    #[test]
    fn spec_checks() {
        assert!(matches!(
            TorusSpec::parse("x1", "0", "0"),
            Err(Error::PeriodicityViolation(ref n)) if n == "a"
        ));
        assert!(matches!(
            TorusSpec::parse("0", "sin(x1)", "0"),
            Err(Error::InvalidInput(_))
        ));
        assert!(TorusSpec::parse("0", "0", "cos(6.283185307179586*x3)").is_ok());
        let spec = TorusSpec::parse("0", "0", "0").unwrap();
        assert!(spec.with_grid(4).is_err());
    }

    #[test]
    fn lie_derivatives_of_the_sine_family() {
        let spec = TorusSpec::parse("sin(6.283185307179586*x1)", "0", "0").unwrap();
        let s = build_torus(&spec).unwrap();
        let p = crate::calculus::Coords([0.1, 0.1, 0.2, 0.3, 0.4, 0.5]);
        let l1 = s.psi.lie_derivative(&VectorField::coordinate(0)).unwrap();
        assert!(l1.evaluate_at(&p).unwrap().max_abs() > 1.0);
        for i in 1..DIM {
            let l = s.psi.lie_derivative(&VectorField::coordinate(i)).unwrap();
            assert!(l.evaluate_at(&p).unwrap().max_abs() < 1e-15);
        }
    }
}
