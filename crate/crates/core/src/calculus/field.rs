use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use super::expr::{Env, Expr, Tape, Var};
use super::parse::parse_expr;
use crate::error::{Error, Result};
use crate::exterior::{self, contract, wedge, wedge_sign, Form, Frame, MultiIndex, Vector6, DIM};

const PROJECTION_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    CoordinateChart,
    Ts3Invariant,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::CoordinateChart => "coordinate_chart",
            ModelKind::Ts3Invariant => "ts3_invariant",
        }
    }

    pub fn frame(self) -> Frame {
        match self {
            ModelKind::CoordinateChart => Frame::Coordinate,
            ModelKind::Ts3Invariant => Frame::Ts3,
        }
    }
}

/// Generators of the invariant algebra along the normal geodesic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Gen {
    Xi,
    A,
    W(u8),
}

impl Gen {
    const ALL: [Gen; 7] = [
        Gen::Xi,
        Gen::A,
        Gen::W(1),
        Gen::W(2),
        Gen::W(3),
        Gen::W(4),
        Gen::W(5),
    ];

    fn name(self) -> String {
        match self {
            Gen::Xi => "xi*".into(),
            Gen::A => "A*".into(),
            Gen::W(i) => format!("omega{i}"),
        }
    }

    fn degree(self) -> usize {
        match self {
            Gen::Xi | Gen::A => 1,
            Gen::W(_) => 2,
        }
    }

    fn form(self) -> Form {
        let f = Frame::Ts3;
        match self {
            Gen::Xi => Form::basis(f, &[0]),
            Gen::A => Form::basis(f, &[1]),
            Gen::W(1) => Form::basis(f, &[0, 1]),
            Gen::W(2) => Form::basis(f, &[2, 3]),
            Gen::W(3) => Form::basis(f, &[4, 5]),
            Gen::W(4) => Form::basis(f, &[2, 4]) + Form::basis(f, &[3, 5]),
            Gen::W(5) => Form::basis(f, &[2, 5]) - Form::basis(f, &[3, 4]),
            Gen::W(_) => unreachable!(),
        }
    }

    /// Structure equations along the geodesic.
    fn d(self) -> Form {
        let w = |i| Gen::W(i).form();
        let xi = Gen::Xi.form();
        let a = Gen::A.form();
        let wedge = |x: &Form, y: &Form| wedge(x, y).expect("degrees fit");
        match self {
            Gen::Xi | Gen::W(2) | Gen::W(3) => Form::zero(Frame::Ts3, self.degree() + 1),
            Gen::A => 0.25 * (w(3) - w(2)),
            Gen::W(1) => 0.25 * wedge(&xi, &(w(2) - w(3))),
            Gen::W(4) => -2.0 * wedge(&a, &w(5)),
            Gen::W(5) => 2.0 * wedge(&a, &w(4)),
            Gen::W(_) => unreachable!(),
        }
    }
}

fn monomials(degree: usize) -> Vec<Vec<Gen>> {
    use Gen::*;
    let ws = |g: Gen| -> Vec<Vec<Gen>> { (2..=5).map(|i| vec![g, W(i)]).collect() };
    match degree {
        0 => vec![vec![]],
        1 => vec![vec![Xi], vec![A]],
        2 => (1..=5).map(|i| vec![W(i)]).collect(),
        3 => ws(Xi).into_iter().chain(ws(A)).collect(),
        4 => (2..=5)
            .map(|i| vec![W(1), W(i)])
            .chain(std::iter::once(vec![W(2), W(3)]))
            .collect(),
        5 => vec![vec![Xi, W(2), W(3)], vec![A, W(2), W(3)]],
        6 => vec![vec![W(1), W(2), W(3)]],
        _ => vec![],
    }
}

fn product(gens: &[Gen]) -> Form {
    gens.iter().fold(Form::scalar(Frame::Ts3, 1.0), |acc, g| {
        wedge(&acc, &g.form()).expect("degrees fit")
    })
}

/// Graded Leibniz expansion of `d` on a product of generators.
fn d_product(gens: &[Gen]) -> Form {
    let degree: usize = gens.iter().map(|g| g.degree()).sum();
    let mut out = Form::zero(Frame::Ts3, degree + 1);
    let mut before = 0;
    for (p, g) in gens.iter().enumerate() {
        let mut term = product(&gens[..p]);
        term = wedge(&term, &g.d()).expect("degrees fit");
        term = wedge(&term, &product(&gens[p + 1..])).expect("degrees fit");
        let sign = if before % 2 == 0 { 1.0 } else { -1.0 };
        out += sign * term;
        before += g.degree();
    }
    out
}

/// Linear map written as `rows[i] = image of basis element i`.
type Table = Vec<Vec<f64>>;

struct Ts3Tables {
    names: Vec<Vec<String>>,
    basis: Vec<Vec<Form>>,
    d: Vec<Table>,
    xi: Vec<Table>,
    /// `mul[a][b][i][j]`: coefficients of `basis[a][i] ∧ basis[b][j]`.
    mul: Vec<Vec<Vec<Table>>>,
}

fn ts3_tables() -> &'static Ts3Tables {
    static TABLES: OnceLock<Ts3Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let monos: Vec<Vec<Vec<Gen>>> = (0..=DIM).map(monomials).collect();
        let names = monos
            .iter()
            .map(|ms| {
                ms.iter()
                    .map(|m| {
                        if m.is_empty() {
                            "1".to_string()
                        } else {
                            m.iter().map(|g| g.name()).collect::<Vec<_>>().join("^")
                        }
                    })
                    .collect()
            })
            .collect();
        let basis: Vec<Vec<Form>> = monos
            .iter()
            .map(|ms| ms.iter().map(|m| product(m)).collect())
            .collect();
        let project = |f: &Form| project_onto(&basis[f.degree()], f).expect("invariant");
        let d = (0..=DIM)
            .map(|k| {
                if k == DIM {
                    return vec![Vec::new()];
                }
                monos[k].iter().map(|m| project(&d_product(m))).collect()
            })
            .collect();
        let xi_form = Gen::Xi.form();
        let xi = (0..=DIM)
            .map(|k| {
                if k == DIM {
                    return vec![Vec::new()];
                }
                basis[k]
                    .iter()
                    .map(|b| project(&wedge(&xi_form, b).expect("degrees fit")))
                    .collect()
            })
            .collect();
        let mul = (0..=DIM)
            .map(|a| {
                (0..=DIM)
                    .map(|b| {
                        if a + b > DIM {
                            return Vec::new();
                        }
                        basis[a]
                            .iter()
                            .map(|x| {
                                basis[b]
                                    .iter()
                                    .map(|y| project(&wedge(x, y).expect("degrees fit")))
                                    .collect()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Ts3Tables {
            names,
            basis,
            d,
            xi,
            mul,
        }
    })
}

/// Coefficients of `f` in a basis with pairwise disjoint supports.
fn project_onto(basis: &[Form], f: &Form) -> Result<Vec<f64>> {
    let dot =
        |a: &Form, b: &Form| -> f64 { a.coeffs().iter().zip(b.coeffs()).map(|(x, y)| x * y).sum() };
    let coeffs: Vec<f64> = basis.iter().map(|b| dot(f, b) / dot(b, b)).collect();
    let mut rest = *f;
    for (b, c) in basis.iter().zip(&coeffs) {
        rest = rest - *c * *b;
    }
    let residual = rest.max_abs();
    if residual > PROJECTION_TOL * f.max_abs().max(1.0) {
        return Err(Error::NotInvariant(residual));
    }
    Ok(coeffs)
}

/// Sum of `w·e`, skipping zero weights and zero expressions.
fn combine<I: IntoIterator<Item = (f64, Expr)>>(terms: I) -> Expr {
    let mut acc = Expr::zero();
    for (w, e) in terms {
        if w == 0.0 || e.is_zero() {
            continue;
        }
        acc = if w == 1.0 {
            acc.add(&e)
        } else if w == -1.0 {
            acc.sub(&e)
        } else {
            acc.add(&e.scale(w))
        };
    }
    acc
}

/// One of the two concrete coframe models.
///
/// The invariant model may carry state variables: symbols standing for
/// tabulated functions of `t`, each with an expression for its `t`-derivative.
#[derive(Clone, PartialEq)]
pub struct CoframeModel {
    kind: ModelKind,
    state_rules: Arc<[(Var, Expr)]>,
}

impl fmt::Debug for CoframeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CoframeModel({}", self.kind.name())?;
        for (v, e) in self.state_rules.iter() {
            write!(f, ", d{v}/dt = {e}")?;
        }
        write!(f, ")")
    }
}

impl CoframeModel {
    pub fn coordinate_chart() -> Self {
        CoframeModel {
            kind: ModelKind::CoordinateChart,
            state_rules: Arc::from(Vec::new()),
        }
    }

    pub fn ts3_invariant() -> Self {
        Self::ts3_with_states(Vec::new())
    }

    /// Invariant model whose coefficients may mention the given state
    /// variables, with `D_t v = rule` for each `(v, rule)`.
    pub fn ts3_with_states(rules: Vec<(Var, Expr)>) -> Self {
        CoframeModel {
            kind: ModelKind::Ts3Invariant,
            state_rules: Arc::from(rules),
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn frame(&self) -> Frame {
        self.kind.frame()
    }

    pub fn state_rules(&self) -> &[(Var, Expr)] {
        &self.state_rules
    }

    pub fn generator_names(&self) -> Vec<String> {
        match self.kind {
            ModelKind::CoordinateChart => Frame::Coordinate
                .generator_names()
                .iter()
                .map(|s| s.to_string())
                .collect(),
            ModelKind::Ts3Invariant => Gen::ALL.iter().map(|g| g.name()).collect(),
        }
    }

    pub fn basis_len(&self, degree: usize) -> usize {
        match self.kind {
            ModelKind::CoordinateChart => exterior::basis_len(degree),
            ModelKind::Ts3Invariant => ts3_tables().basis.get(degree).map_or(0, |b| b.len()),
        }
    }

    pub fn basis_names(&self, degree: usize) -> Vec<String> {
        match self.kind {
            ModelKind::CoordinateChart => {
                let gens = Frame::Coordinate.generator_names();
                MultiIndex::all(degree)
                    .map(|idx| {
                        if degree == 0 {
                            "1".to_string()
                        } else {
                            idx.slots().map(|s| gens[s]).collect::<Vec<_>>().join("^")
                        }
                    })
                    .collect()
            }
            ModelKind::Ts3Invariant => ts3_tables().names[degree].clone(),
        }
    }

    /// The `i`-th basis `degree`-form as a concrete form.
    pub fn basis_form(&self, degree: usize, i: usize) -> Form {
        match self.kind {
            ModelKind::CoordinateChart => {
                Form::from_index(Frame::Coordinate, MultiIndex::from_rank(degree, i), 1.0)
            }
            ModelKind::Ts3Invariant => ts3_tables().basis[degree][i],
        }
    }

    /// Coefficients of a concrete form in the model basis.
    pub fn project(&self, form: &Form) -> Result<Vec<f64>> {
        if form.frame() != self.frame() {
            return Err(Error::FrameMismatch(self.frame(), form.frame()));
        }
        match self.kind {
            ModelKind::CoordinateChart => Ok(form.coeffs().to_vec()),
            ModelKind::Ts3Invariant => project_onto(&ts3_tables().basis[form.degree()], form),
        }
    }

    /// `d` of each generator as sparse `(basis name, coefficient)` lists.
    /// Empty for coordinate charts, where `d` acts on coefficients only.
    pub fn d_rules(&self) -> Vec<(String, Vec<(String, f64)>)> {
        if self.kind == ModelKind::CoordinateChart {
            return Vec::new();
        }
        Gen::ALL
            .iter()
            .map(|g| {
                let k = g.degree() + 1;
                let coeffs = project_onto(&ts3_tables().basis[k], &g.d()).expect("invariant");
                let names = &ts3_tables().names[k];
                let sparse = coeffs
                    .iter()
                    .zip(names)
                    .filter(|(c, _)| **c != 0.0)
                    .map(|(c, n)| (n.clone(), *c))
                    .collect();
                (g.name(), sparse)
            })
            .collect()
    }

    /// `D_t e = ∂_t e + Σ ∂_v e · rule_v` over the state variables.
    pub fn total_derivative(&self, e: &Expr) -> Expr {
        let mut d = e.diff(&Var::T);
        for (v, rule) in self.state_rules.iter() {
            let partial = e.diff(v);
            if !partial.is_zero() {
                d = d.add(&partial.mul(rule));
            }
        }
        d
    }

    fn check_same(&self, other: &CoframeModel) -> Result<()> {
        if self.kind != other.kind {
            return Err(Error::FrameMismatch(self.frame(), other.frame()));
        }
        if self.state_rules != other.state_rules {
            return Err(Error::InvalidInput(
                "fields carry different state variables".into(),
            ));
        }
        Ok(())
    }
}

/// Vector field with coefficient expressions on the coframe's dual basis.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField(pub [Expr; DIM]);

impl VectorField {
    pub fn zero() -> Self {
        VectorField(std::array::from_fn(|_| Expr::zero()))
    }

    /// The dual basis vector `e_slot`, e.g. `∂/∂x^{slot+1}`.
    pub fn coordinate(slot: usize) -> Self {
        let mut v = Self::zero();
        v.0[slot] = Expr::one();
        v
    }

    pub fn constant(v: &Vector6) -> Self {
        VectorField(std::array::from_fn(|i| Expr::num(v.0[i])))
    }

    pub fn evaluate(&self, env: &dyn Env) -> Result<Vector6> {
        let mut out = [0.0; DIM];
        for (o, e) in out.iter_mut().zip(&self.0) {
            *o = e.eval(env)?;
        }
        Ok(Vector6(out))
    }
}

/// A differential form whose coefficients are expressions over a model basis.
#[derive(Clone, PartialEq)]
pub struct FormField {
    model: CoframeModel,
    degree: usize,
    coeffs: Vec<Expr>,
}

impl fmt::Debug for FormField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names = self.model.basis_names(self.degree);
        let terms: Vec<String> = self
            .coeffs
            .iter()
            .zip(&names)
            .filter(|(c, _)| !c.is_zero())
            .map(|(c, n)| format!("({c})·{n}"))
            .collect();
        if terms.is_empty() {
            write!(f, "0")
        } else {
            write!(f, "{}", terms.join(" + "))
        }
    }
}

impl FormField {
    pub fn new(model: CoframeModel, degree: usize, coeffs: Vec<Expr>) -> Result<Self> {
        if degree > DIM {
            return Err(Error::DegreeOverflow(degree));
        }
        let expected = model.basis_len(degree);
        if coeffs.len() != expected {
            return Err(Error::CoefficientLength {
                degree,
                expected,
                got: coeffs.len(),
            });
        }
        Ok(FormField {
            model,
            degree,
            coeffs,
        })
    }

    pub fn zero(model: CoframeModel, degree: usize) -> Self {
        let n = model.basis_len(degree);
        FormField {
            model,
            degree,
            coeffs: vec![Expr::zero(); n],
        }
    }

    /// `coeff · basis[degree][index]`.
    pub fn term(model: CoframeModel, degree: usize, index: usize, coeff: Expr) -> Self {
        let mut f = Self::zero(model, degree);
        f.coeffs[index] = coeff;
        f
    }

    /// Field from `(basis name, coefficient)` pairs.
    pub fn from_named(model: CoframeModel, degree: usize, terms: &[(&str, Expr)]) -> Result<Self> {
        let names = model.basis_names(degree);
        let mut f = Self::zero(model, degree);
        for (name, c) in terms {
            let i = names
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| Error::InvalidInput(format!("no basis element `{name}`")))?;
            f.coeffs[i] = f.coeffs[i].add(c);
        }
        Ok(f)
    }

    /// Constant field equal to a concrete form.
    pub fn constant(model: CoframeModel, form: &Form) -> Result<Self> {
        let c = model.project(form)?;
        let coeffs = c.into_iter().map(Expr::num).collect();
        FormField::new(model, form.degree(), coeffs)
    }

    pub fn model(&self) -> &CoframeModel {
        &self.model
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[Expr] {
        &self.coeffs
    }

    pub fn coeff(&self, name: &str) -> Option<&Expr> {
        let names = self.model.basis_names(self.degree);
        names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.coeffs[i])
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(Expr::is_zero)
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        self.coeffs.iter().flat_map(|c| c.free_vars()).collect()
    }

    fn same_shape(&self, other: &FormField) -> Result<()> {
        self.model.check_same(&other.model)?;
        if self.degree != other.degree {
            return Err(Error::DegreeMismatch {
                expected: self.degree,
                got: other.degree,
            });
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(&Expr) -> Expr) -> FormField {
        FormField {
            model: self.model.clone(),
            degree: self.degree,
            coeffs: self.coeffs.iter().map(f).collect(),
        }
    }

    pub fn add(&self, other: &FormField) -> Result<FormField> {
        self.same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a = a.add(b);
        }
        Ok(out)
    }

    pub fn sub(&self, other: &FormField) -> Result<FormField> {
        self.same_shape(other)?;
        let mut out = self.clone();
        for (a, b) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *a = a.sub(b);
        }
        Ok(out)
    }

    pub fn neg(&self) -> FormField {
        self.map(Expr::neg)
    }

    /// Multiplication by a function.
    pub fn scale(&self, e: &Expr) -> FormField {
        self.map(|c| e.mul(c))
    }

    pub fn wedge(&self, other: &FormField) -> Result<FormField> {
        self.model.check_same(&other.model)?;
        let degree = self.degree + other.degree;
        if degree > DIM {
            return Err(Error::DegreeOverflow(degree));
        }
        let n = self.model.basis_len(degree);
        let mut terms: Vec<Vec<(f64, Expr)>> = vec![Vec::new(); n];
        match self.model.kind {
            ModelKind::CoordinateChart => {
                for (i, ci) in self.coeffs.iter().enumerate() {
                    if ci.is_zero() {
                        continue;
                    }
                    let ii = MultiIndex::from_rank(self.degree, i);
                    for (j, cj) in other.coeffs.iter().enumerate() {
                        let jj = MultiIndex::from_rank(other.degree, j);
                        if cj.is_zero() || ii.mask() & jj.mask() != 0 {
                            continue;
                        }
                        let k = MultiIndex::from_mask(ii.mask() | jj.mask()).rank();
                        terms[k].push((wedge_sign(ii, jj), ci.mul(cj)));
                    }
                }
            }
            ModelKind::Ts3Invariant => {
                let table = &ts3_tables().mul[self.degree][other.degree];
                for (i, ci) in self.coeffs.iter().enumerate() {
                    if ci.is_zero() {
                        continue;
                    }
                    for (j, cj) in other.coeffs.iter().enumerate() {
                        if cj.is_zero() {
                            continue;
                        }
                        let prod = ci.mul(cj);
                        for (k, w) in table[i][j].iter().enumerate() {
                            if *w != 0.0 {
                                terms[k].push((*w, prod.clone()));
                            }
                        }
                    }
                }
            }
        }
        FormField::new(
            self.model.clone(),
            degree,
            terms.into_iter().map(combine).collect(),
        )
    }

    /// Interior product `ι_X F`.
    ///
    /// On the invariant model the contraction of every basis element used
    /// must stay invariant, otherwise `NotInvariant` is returned.
    pub fn contract(&self, x: &VectorField) -> Result<FormField> {
        if self.degree == 0 {
            return Err(Error::DegreeUnderflow);
        }
        let degree = self.degree - 1;
        let n = self.model.basis_len(degree);
        let mut terms: Vec<Vec<(f64, Expr)>> = vec![Vec::new(); n];
        match self.model.kind {
            ModelKind::CoordinateChart => {
                for (i, ci) in self.coeffs.iter().enumerate() {
                    if ci.is_zero() {
                        continue;
                    }
                    let ii = MultiIndex::from_rank(self.degree, i);
                    for (p, slot) in ii.slots().enumerate() {
                        if x.0[slot].is_zero() {
                            continue;
                        }
                        let rest = MultiIndex::from_mask(ii.mask() & !(1 << slot)).rank();
                        let sign = if p % 2 == 0 { 1.0 } else { -1.0 };
                        terms[rest].push((sign, x.0[slot].mul(ci)));
                    }
                }
            }
            ModelKind::Ts3Invariant => {
                let tables = ts3_tables();
                for (i, ci) in self.coeffs.iter().enumerate() {
                    if ci.is_zero() {
                        continue;
                    }
                    for (a, xa) in x.0.iter().enumerate() {
                        if xa.is_zero() {
                            continue;
                        }
                        let image = contract(&Vector6::unit(a), &tables.basis[self.degree][i])?;
                        let w = project_onto(&tables.basis[degree], &image)?;
                        let prod = xa.mul(ci);
                        for (k, wk) in w.iter().enumerate() {
                            if *wk != 0.0 {
                                terms[k].push((*wk, prod.clone()));
                            }
                        }
                    }
                }
            }
        }
        FormField::new(
            self.model.clone(),
            degree,
            terms.into_iter().map(combine).collect(),
        )
    }

    /// Exterior derivative. Coordinate charts differentiate coefficients
    /// symbolically; the invariant model applies the structure equations and
    /// wedges `D_t` of each coefficient with `ξ* = dt`.
    pub fn exterior_derivative(&self) -> Result<FormField> {
        let degree = self.degree + 1;
        if degree > DIM {
            return Err(Error::DegreeOverflow(degree));
        }
        let n = self.model.basis_len(degree);
        let mut terms: Vec<Vec<(f64, Expr)>> = vec![Vec::new(); n];
        match self.model.kind {
            ModelKind::CoordinateChart => {
                for (i, ci) in self.coeffs.iter().enumerate() {
                    if ci.is_zero() {
                        continue;
                    }
                    let ii = MultiIndex::from_rank(self.degree, i);
                    for slot in 0..DIM {
                        if ii.contains(slot) {
                            continue;
                        }
                        let partial = ci.diff(&Var::x(slot));
                        if partial.is_zero() {
                            continue;
                        }
                        let s = MultiIndex::from_mask(1 << slot);
                        let k = MultiIndex::from_mask(ii.mask() | s.mask()).rank();
                        terms[k].push((wedge_sign(s, ii), partial));
                    }
                }
            }
            ModelKind::Ts3Invariant => {
                let tables = ts3_tables();
                for (i, ci) in self.coeffs.iter().enumerate() {
                    if ci.is_zero() {
                        continue;
                    }
                    let dt = self.model.total_derivative(ci);
                    for k in 0..n {
                        let wx = tables.xi[self.degree][i][k];
                        if wx != 0.0 && !dt.is_zero() {
                            terms[k].push((wx, dt.clone()));
                        }
                        let wd = tables.d[self.degree][i][k];
                        if wd != 0.0 {
                            terms[k].push((wd, ci.clone()));
                        }
                    }
                }
            }
        }
        FormField::new(
            self.model.clone(),
            degree,
            terms.into_iter().map(combine).collect(),
        )
    }

    /// Cartan formula `L_X = d ι_X + ι_X d`, coordinate charts only.
    pub fn lie_derivative(&self, x: &VectorField) -> Result<FormField> {
        if self.model.kind != ModelKind::CoordinateChart {
            return Err(Error::UnsupportedModel(self.model.kind.name()));
        }
        let mut out = FormField::zero(self.model.clone(), self.degree);
        if self.degree > 0 {
            out = out.add(&self.contract(x)?.exterior_derivative()?)?;
        }
        if self.degree < DIM {
            out = out.add(&self.exterior_derivative()?.contract(x)?)?;
        }
        Ok(out)
    }

    pub fn evaluate_at(&self, env: &dyn Env) -> Result<Form> {
        let values = self
            .coeffs
            .iter()
            .map(|c| c.eval(env))
            .collect::<Result<Vec<f64>>>()?;
        Ok(self.assemble(&values))
    }

    fn assemble(&self, values: &[f64]) -> Form {
        match self.model.kind {
            ModelKind::CoordinateChart => {
                Form::from_coeffs(Frame::Coordinate, self.degree, values).expect("length checked")
            }
            ModelKind::Ts3Invariant => {
                let basis = &ts3_tables().basis[self.degree];
                let mut out = Form::zero(Frame::Ts3, self.degree);
                for (b, v) in basis.iter().zip(values) {
                    if *v != 0.0 {
                        out += *v * *b;
                    }
                }
                out
            }
        }
    }

    /// Compiles the coefficients for repeated evaluation with the variables
    /// `vars` supplied positionally.
    pub fn compile(&self, vars: &[Var]) -> FieldTape {
        FieldTape {
            field: self.clone(),
            tape: Tape::compile(&self.coeffs, vars),
        }
    }
}

/// Compiled evaluator for a [`FormField`].
#[derive(Clone, Debug)]
pub struct FieldTape {
    field: FormField,
    tape: Tape,
}

impl FieldTape {
    pub fn eval(&self, values: &[f64], scratch: &mut Vec<f64>) -> Form {
        let mut out = vec![0.0; self.tape.outputs()];
        self.tape.eval_into(values, scratch, &mut out);
        self.field.assemble(&out)
    }
}

/// Symbolic Hitchin data on a coordinate chart: `S`, `P`, `J` and
/// `ψ̂ = −ψ(J·,·,·)` as expressions, with `vol = ω³/6`.
#[derive(Clone, Debug)]
pub struct SymbolicDual {
    /// Row-major `S[j][i]`.
    pub s: Vec<Vec<Expr>>,
    pub p: Expr,
    pub j: Vec<Vec<Expr>>,
    pub psi_hat: FormField,
}

pub fn symbolic_dual(omega: &FormField, psi: &FormField) -> Result<SymbolicDual> {
    if psi.model.kind != ModelKind::CoordinateChart {
        return Err(Error::UnsupportedModel(psi.model.kind.name()));
    }
    omega.model.check_same(&psi.model)?;
    if omega.degree != 2 || psi.degree != 3 {
        return Err(Error::DegreeMismatch {
            expected: if omega.degree != 2 { 2 } else { 3 },
            got: if omega.degree != 2 {
                omega.degree
            } else {
                psi.degree
            },
        });
    }
    let model = psi.model.clone();
    let vol = omega.wedge(omega)?.wedge(omega)?.coeffs[0].scale(1.0 / 6.0);
    let mut s = vec![vec![Expr::zero(); DIM]; DIM];
    for i in 0..DIM {
        let w = psi.contract(&VectorField::coordinate(i))?.wedge(psi)?;
        if w.is_zero() {
            continue;
        }
        for (j, row) in s.iter_mut().enumerate() {
            let theta = FormField::term(model.clone(), 1, j, Expr::one());
            let top = w.wedge(&theta)?.coeffs[0].clone();
            row[i] = top.div(&vol);
        }
    }
    let mut trace = Expr::zero();
    for a in 0..DIM {
        for b in 0..DIM {
            trace = trace.add(&s[a][b].mul(&s[b][a]));
        }
    }
    let p = trace.scale(1.0 / DIM as f64);
    let root = p.neg().sqrt();
    let j: Vec<Vec<Expr>> = s
        .iter()
        .map(|row| row.iter().map(|e| e.div(&root)).collect())
        .collect();
    let first_slot: Vec<FormField> = (0..DIM)
        .map(|i| psi.contract(&VectorField(std::array::from_fn(|a| j[a][i].clone()))))
        .collect::<Result<_>>()?;
    let coeffs = MultiIndex::all(3)
        .map(|idx| {
            let sl: Vec<usize> = idx.slots().collect();
            let rest = MultiIndex::new(&sl[1..]).expect("sorted").rank();
            first_slot[sl[0]].coeffs[rest].neg()
        })
        .collect();
    Ok(SymbolicDual {
        s,
        p,
        j,
        psi_hat: FormField::new(model, 3, coeffs)?,
    })
}

#[derive(Serialize, Deserialize)]
struct SparseTerm {
    basis: String,
    coeff: f64,
}

#[derive(Serialize, Deserialize)]
struct DRule {
    generator: String,
    d: Vec<SparseTerm>,
}

#[derive(Serialize, Deserialize)]
struct StateRule {
    var: String,
    derivative: String,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    kind: ModelKind,
    generators: Vec<String>,
    #[serde(default)]
    d_rules: Vec<DRule>,
    #[serde(default)]
    state_rules: Vec<StateRule>,
}

impl Serialize for CoframeModel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ModelRepr {
            kind: self.kind,
            generators: self.generator_names(),
            d_rules: self
                .d_rules()
                .into_iter()
                .map(|(generator, d)| DRule {
                    generator,
                    d: d.into_iter()
                        .map(|(basis, coeff)| SparseTerm { basis, coeff })
                        .collect(),
                })
                .collect(),
            state_rules: self
                .state_rules
                .iter()
                .map(|(v, e)| StateRule {
                    var: v.to_string(),
                    derivative: e.to_string(),
                })
                .collect(),
        }
        .serialize(s)
    }
}

impl TryFrom<ModelRepr> for CoframeModel {
    type Error = Error;

    fn try_from(r: ModelRepr) -> Result<Self> {
        let model = match r.kind {
            ModelKind::CoordinateChart => {
                if !r.state_rules.is_empty() {
                    return Err(Error::InvalidInput(
                        "coordinate charts carry no state variables".into(),
                    ));
                }
                CoframeModel::coordinate_chart()
            }
            ModelKind::Ts3Invariant => {
                let rules = r
                    .state_rules
                    .iter()
                    .map(|s| Ok((Var::named(&s.var), parse_expr(&s.derivative)?)))
                    .collect::<Result<Vec<_>>>()?;
                CoframeModel::ts3_with_states(rules)
            }
        };
        if r.generators != model.generator_names() {
            return Err(Error::InvalidInput(format!(
                "generators {:?} do not match the {} model",
                r.generators,
                model.kind.name()
            )));
        }
        Ok(model)
    }
}

impl<'de> Deserialize<'de> for CoframeModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = ModelRepr::deserialize(d)?;
        CoframeModel::try_from(repr).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct FieldRepr {
    model: CoframeModel,
    degree: usize,
    basis: Vec<String>,
    coefficients: Vec<String>,
}

impl Serialize for FormField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        FieldRepr {
            model: self.model.clone(),
            degree: self.degree,
            basis: self.model.basis_names(self.degree),
            coefficients: self.coeffs.iter().map(|c| c.to_string()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for FormField {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let r = FieldRepr::deserialize(d)?;
        if r.basis != r.model.basis_names(r.degree) {
            return Err(D::Error::custom("basis names do not match the model"));
        }
        let coeffs = r
            .coefficients
            .iter()
            .map(|c| parse_expr(c))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(D::Error::custom)?;
        FormField::new(r.model, r.degree, coeffs).map_err(D::Error::custom)
    }
}
