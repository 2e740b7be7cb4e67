//! Dense real exterior algebra over a fixed six-dimensional coframe.
//!
//! A k-form is stored as its coefficients over the lexicographically ordered
//! basis `e^I`, `I = (i_1 < ... < i_k)`. Coframe slots are 0-based in code;
//! `dx¹²` in the usual notation is `Form::basis(frame, &[0, 1])`.

use std::fmt;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};
use std::sync::OnceLock;

use nalgebra::Matrix6;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DIM: usize = 6;
/// Largest basis size, C(6, 3).
pub const MAX_BASIS: usize = 20;

const BINOM6: [usize; 7] = [1, 6, 15, 20, 15, 6, 1];

/// Number of basis k-forms in dimension 6.
pub fn basis_len(degree: usize) -> usize {
    BINOM6.get(degree).copied().unwrap_or(0)
}

struct Tables {
    /// Bitmasks of each degree in lexicographic order.
    masks: [Vec<u8>; DIM + 1],
    /// Rank of a mask within its degree.
    rank: [u8; 1 << DIM],
}

fn tables() -> &'static Tables {
    static TABLES: OnceLock<Tables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let mut masks: [Vec<u8>; DIM + 1] = Default::default();
        let mut rank = [0u8; 1 << DIM];
        for (k, list) in masks.iter_mut().enumerate() {
            let mut all: Vec<Vec<usize>> = Vec::new();
            combinations(k, 0, &mut Vec::new(), &mut all);
            for (r, idx) in all.iter().enumerate() {
                let m = idx.iter().fold(0u8, |m, &i| m | (1 << i));
                rank[m as usize] = r as u8;
                list.push(m);
            }
        }
        Tables { masks, rank }
    })
}

fn combinations(k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..DIM {
        cur.push(i);
        combinations(k, i + 1, cur, out);
        cur.pop();
    }
}

/// Strictly increasing tuple of coframe slots, stored as a bitmask.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(u8);

impl MultiIndex {
    pub fn new(slots: &[usize]) -> Result<Self> {
        let increasing = slots.windows(2).all(|w| w[0] < w[1]);
        if !increasing || slots.iter().any(|&s| s >= DIM) {
            return Err(Error::InvalidMultiIndex(slots.to_vec()));
        }
        Ok(MultiIndex(slots.iter().fold(0, |m, &i| m | (1 << i))))
    }

    pub fn from_mask(mask: u8) -> Self {
        MultiIndex(mask & 0b11_1111)
    }

    pub fn from_rank(degree: usize, rank: usize) -> Self {
        MultiIndex(tables().masks[degree][rank])
    }

    pub fn mask(self) -> u8 {
        self.0
    }

    pub fn degree(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn rank(self) -> usize {
        tables().rank[self.0 as usize] as usize
    }

    pub fn slots(self) -> impl Iterator<Item = usize> {
        (0..DIM).filter(move |i| self.0 & (1 << i) != 0)
    }

    pub fn contains(self, slot: usize) -> bool {
        self.0 & (1 << slot) != 0
    }

    pub fn complement(self) -> Self {
        MultiIndex(!self.0 & 0b11_1111)
    }

    /// All multi-indices of a degree, in lexicographic order.
    pub fn all(degree: usize) -> impl Iterator<Item = MultiIndex> {
        tables().masks[degree].iter().map(|&m| MultiIndex(m))
    }
}

impl fmt::Debug for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "e")?;
        if self.0 == 0 {
            return write!(f, "∅");
        }
        for s in self.slots() {
            write!(f, "{}", s + 1)?;
        }
        Ok(())
    }
}

/// Sign of `e^I ∧ e^J` relative to `e^{I∪J}`; zero if the indices overlap.
pub fn wedge_sign(i: MultiIndex, j: MultiIndex) -> f64 {
    if i.0 & j.0 != 0 {
        return 0.0;
    }
    let mut swaps = 0u32;
    for s in j.slots() {
        let above = i.0 & !((1u8 << (s + 1)) - 1);
        swaps += above.count_ones();
    }
    if swaps.is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

/// Identifies the coframe a form is written in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Coordinate coframe `dx¹, ..., dx⁶`.
    Coordinate,
    /// Invariant coframe `(ξ*, A*, E₁*, V₁*, E₂*, V₂*)` along the normal geodesic of TS³.
    Ts3,
}

impl Frame {
    pub fn generator_names(self) -> [&'static str; DIM] {
        match self {
            Frame::Coordinate => ["dx1", "dx2", "dx3", "dx4", "dx5", "dx6"],
            Frame::Ts3 => ["xi*", "A*", "E1*", "V1*", "E2*", "V2*"],
        }
    }
}

/// A k-form with real coefficients over the lexicographic k-index basis.
#[derive(Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FormRepr", into = "FormRepr")]
pub struct Form {
    frame: Frame,
    degree: u8,
    coeffs: [f64; MAX_BASIS],
}

#[derive(Serialize, Deserialize)]
struct FormRepr {
    degree: usize,
    frame: Frame,
    coeffs: Vec<f64>,
}

impl From<Form> for FormRepr {
    fn from(f: Form) -> Self {
        FormRepr {
            degree: f.degree(),
            frame: f.frame,
            coeffs: f.coeffs().to_vec(),
        }
    }
}

impl TryFrom<FormRepr> for Form {
    type Error = Error;
    fn try_from(r: FormRepr) -> Result<Self> {
        Form::from_coeffs(r.frame, r.degree, &r.coeffs)
    }
}

impl Form {
    pub fn zero(frame: Frame, degree: usize) -> Self {
        assert!(degree <= DIM, "degree {degree} > 6");
        Form {
            frame,
            degree: degree as u8,
            coeffs: [0.0; MAX_BASIS],
        }
    }

    pub fn scalar(frame: Frame, value: f64) -> Self {
        let mut f = Form::zero(frame, 0);
        f.coeffs[0] = value;
        f
    }

    /// Basis form `e^{slots}`. Panics on an invalid index list.
    pub fn basis(frame: Frame, slots: &[usize]) -> Self {
        let idx = MultiIndex::new(slots).expect("invalid basis multi-index");
        Form::from_index(frame, idx, 1.0)
    }

    pub fn from_index(frame: Frame, idx: MultiIndex, value: f64) -> Self {
        let mut f = Form::zero(frame, idx.degree());
        f.coeffs[idx.rank()] = value;
        f
    }

    pub fn from_coeffs(frame: Frame, degree: usize, coeffs: &[f64]) -> Result<Self> {
        if degree > DIM {
            return Err(Error::DegreeOverflow(degree));
        }
        let expected = basis_len(degree);
        if coeffs.len() != expected {
            return Err(Error::CoefficientLength {
                degree,
                expected,
                got: coeffs.len(),
            });
        }
        let mut f = Form::zero(frame, degree);
        f.coeffs[..expected].copy_from_slice(coeffs);
        Ok(f)
    }

    /// 1-form with the given components.
    pub fn one_form(frame: Frame, components: [f64; DIM]) -> Self {
        Form::from_coeffs(frame, 1, &components).expect("six components")
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn degree(&self) -> usize {
        self.degree as usize
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs[..basis_len(self.degree())]
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        let n = basis_len(self.degree());
        &mut self.coeffs[..n]
    }

    pub fn coeff(&self, idx: MultiIndex) -> f64 {
        if idx.degree() != self.degree() {
            return 0.0;
        }
        self.coeffs[idx.rank()]
    }

    /// Coefficient on `e^{123456}`; zero unless this is a 6-form.
    pub fn top(&self) -> f64 {
        if self.degree() == DIM {
            self.coeffs[0]
        } else {
            0.0
        }
    }

    pub fn terms(&self) -> impl Iterator<Item = (MultiIndex, f64)> + '_ {
        MultiIndex::all(self.degree())
            .zip(self.coeffs().iter().copied())
            .filter(|&(_, c)| c != 0.0)
    }

    /// Largest coefficient magnitude.
    pub fn max_abs(&self) -> f64 {
        self.coeffs().iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs().iter().all(|&c| c == 0.0)
    }

    pub fn scale(&self, s: f64) -> Form {
        let mut out = *self;
        out.coeffs_mut().iter_mut().for_each(|c| *c *= s);
        out
    }

    /// Largest coefficient difference; `f64::INFINITY` when degree or frame differ.
    pub fn distance(&self, other: &Form) -> f64 {
        if self.degree != other.degree || self.frame != other.frame {
            return f64::INFINITY;
        }
        self.coeffs()
            .iter()
            .zip(other.coeffs())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// Approximate equality at absolute tolerance `tol` scaled by the larger magnitude.
    pub fn approx_eq(&self, other: &Form, tol: f64) -> bool {
        let scale = self.max_abs().max(other.max_abs()).max(1.0);
        self.distance(other) <= tol * scale
    }

    fn check_same(&self, other: &Form) {
        assert_eq!(self.frame, other.frame, "forms in different coframes");
        assert_eq!(self.degree, other.degree, "forms of different degree");
    }
}

impl fmt::Debug for Form {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Form<{:?},{}>(", self.frame, self.degree)?;
        let mut first = true;
        for (idx, c) in self.terms() {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{c}·{idx:?}")?;
        }
        if first {
            write!(f, "0")?;
        }
        write!(f, ")")
    }
}

impl Add for Form {
    type Output = Form;
    fn add(mut self, rhs: Form) -> Form {
        self += rhs;
        self
    }
}

impl AddAssign for Form {
    fn add_assign(&mut self, rhs: Form) {
        self.check_same(&rhs);
        for (a, b) in self.coeffs_mut().iter_mut().zip(rhs.coeffs()) {
            *a += b;
        }
    }
}

impl Sub for Form {
    type Output = Form;
    fn sub(mut self, rhs: Form) -> Form {
        self.check_same(&rhs);
        for (a, b) in self.coeffs_mut().iter_mut().zip(rhs.coeffs()) {
            *a -= b;
        }
        self
    }
}

impl Neg for Form {
    type Output = Form;
    fn neg(self) -> Form {
        self.scale(-1.0)
    }
}

impl Mul<Form> for f64 {
    type Output = Form;
    fn mul(self, rhs: Form) -> Form {
        rhs.scale(self)
    }
}

/// Tangent vector in the frame dual to the active coframe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector6(pub [f64; DIM]);

impl Vector6 {
    pub fn unit(slot: usize) -> Self {
        let mut v = [0.0; DIM];
        v[slot] = 1.0;
        Vector6(v)
    }

    pub fn from_column(m: &Matrix6<f64>, col: usize) -> Self {
        Vector6(std::array::from_fn(|i| m[(i, col)]))
    }

    pub fn components(&self) -> &[f64; DIM] {
        &self.0
    }
}

/// Components of a symmetric bilinear form in the active coframe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metric {
    gram: Matrix6<f64>,
}

impl Metric {
    /// Rejects matrices that are not symmetric to 1e-12 (relative to the largest entry).
    pub fn new(gram: Matrix6<f64>) -> Result<Self> {
        let scale = gram.amax().max(1.0);
        if (gram - gram.transpose()).amax() > 1e-12 * scale {
            return Err(Error::DegenerateMetric);
        }
        Ok(Metric { gram })
    }

    pub fn euclidean() -> Self {
        Metric {
            gram: Matrix6::identity(),
        }
    }

    pub fn diagonal(d: [f64; DIM]) -> Self {
        Metric {
            gram: Matrix6::from_diagonal(&nalgebra::Vector6::from(d)),
        }
    }

    pub fn gram(&self) -> &Matrix6<f64> {
        &self.gram
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; DIM] {
        let mut ev: Vec<f64> = self.gram.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        std::array::from_fn(|i| ev[i])
    }

    /// Positive definite when `λ_min > 1e-10 · λ_max`.
    pub fn is_positive_definite(&self) -> bool {
        let ev = self.eigenvalues();
        ev[DIM - 1] > 0.0 && ev[0] > 1e-10 * ev[DIM - 1]
    }

    pub fn evaluate(&self, u: &Vector6, v: &Vector6) -> f64 {
        let u = nalgebra::Vector6::from(u.0);
        let v = nalgebra::Vector6::from(v.0);
        u.dot(&(self.gram * v))
    }

    fn inverse_checked(&self) -> Result<Matrix6<f64>> {
        if !self.is_positive_definite() {
            return Err(Error::DegenerateMetric);
        }
        self.gram.try_inverse().ok_or(Error::DegenerateMetric)
    }

    /// `√det g`, the coefficient of the metric volume form.
    pub fn volume_factor(&self) -> Result<f64> {
        if !self.is_positive_definite() {
            return Err(Error::DegenerateMetric);
        }
        Ok(self.gram.determinant().sqrt())
    }
}

fn check_frames(a: &Form, b: &Form) -> Result<()> {
    if a.frame != b.frame {
        return Err(Error::FrameMismatch(a.frame, b.frame));
    }
    Ok(())
}

pub fn wedge(a: &Form, b: &Form) -> Result<Form> {
    check_frames(a, b)?;
    let degree = a.degree() + b.degree();
    if degree > DIM {
        return Err(Error::DegreeOverflow(degree));
    }
    let mut out = Form::zero(a.frame, degree);
    for (i, x) in a.terms() {
        for (j, y) in b.terms() {
            let s = wedge_sign(i, j);
            if s != 0.0 {
                let k = MultiIndex(i.0 | j.0);
                out.coeffs[k.rank()] += s * x * y;
            }
        }
    }
    Ok(out)
}

/// Wedge of a list of forms, left to right.
pub fn wedge_all(forms: &[Form]) -> Result<Form> {
    let (first, rest) = forms.split_first().ok_or(Error::DegreeUnderflow)?;
    rest.iter().try_fold(*first, |acc, f| wedge(&acc, f))
}

/// Interior product `ι_v a`, the degree −1 anti-derivation with `ι_v α = α(v)` on 1-forms.
pub fn contract(v: &Vector6, a: &Form) -> Result<Form> {
    if a.degree() == 0 {
        return Err(Error::DegreeUnderflow);
    }
    let mut out = Form::zero(a.frame, a.degree() - 1);
    for (idx, c) in a.terms() {
        for (pos, slot) in idx.slots().enumerate() {
            let vs = v.0[slot];
            if vs == 0.0 {
                continue;
            }
            let sign = if pos % 2 == 0 { 1.0 } else { -1.0 };
            let rest = MultiIndex(idx.0 & !(1 << slot));
            out.coeffs[rest.rank()] += sign * vs * c;
        }
    }
    Ok(out)
}

/// Determinant of the submatrix with the given row and column slots.
pub(crate) fn minor(m: &Matrix6<f64>, rows: MultiIndex, cols: MultiIndex) -> f64 {
    let k = rows.degree();
    debug_assert_eq!(k, cols.degree());
    if k == 0 {
        return 1.0;
    }
    let r: Vec<usize> = rows.slots().collect();
    let c: Vec<usize> = cols.slots().collect();
    if k == 1 {
        return m[(r[0], c[0])];
    }
    if k == 2 {
        return m[(r[0], c[0])] * m[(r[1], c[1])] - m[(r[0], c[1])] * m[(r[1], c[0])];
    }
    let mut a = [[0.0f64; DIM]; DIM];
    for (i, &ri) in r.iter().enumerate() {
        for (j, &cj) in c.iter().enumerate() {
            a[i][j] = m[(ri, cj)];
        }
    }
    let mut det = 1.0;
    for col in 0..k {
        let piv = (col..k)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[piv][col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            a.swap(piv, col);
            det = -det;
        }
        det *= a[col][col];
        for row in col + 1..k {
            let f = a[row][col] / a[col][col];
            for j in col..k {
                a[row][j] -= f * a[col][j];
            }
        }
    }
    det
}

/// Pullback along the linear map `A`, with `A^* e^i = Σ_j A_ij e^j`.
pub fn pullback(a_map: &Matrix6<f64>, a: &Form) -> Form {
    let k = a.degree();
    let mut out = Form::zero(a.frame, k);
    for (i, c) in a.terms() {
        for j in MultiIndex::all(k) {
            out.coeffs[j.rank()] += c * minor(a_map, i, j);
        }
    }
    out
}

/// `⟨e^I, e^J⟩` for all pairs of degree k under the inverse metric.
fn gram_table(inv: &Matrix6<f64>, k: usize) -> Vec<f64> {
    let n = basis_len(k);
    let mut t = vec![0.0; n * n];
    for (r, i) in MultiIndex::all(k).enumerate() {
        for (c, j) in MultiIndex::all(k).enumerate() {
            t[r * n + c] = minor(inv, i, j);
        }
    }
    t
}

pub fn inner_product(g: &Metric, a: &Form, b: &Form) -> Result<f64> {
    check_frames(a, b)?;
    if a.degree() != b.degree() {
        return Err(Error::DegreeMismatch {
            expected: a.degree(),
            got: b.degree(),
        });
    }
    let inv = g.inverse_checked()?;
    let mut sum = 0.0;
    for (i, x) in a.terms() {
        for (j, y) in b.terms() {
            sum += x * y * minor(&inv, i, j);
        }
    }
    Ok(sum)
}

/// Hodge star with `a ∧ *b = ⟨a, b⟩ dV_g`, where `dV_g = ±√det g · e^{123456}`
/// carries the sign of `orientation`.
pub fn hodge_star(g: &Metric, orientation: &Form, a: &Form) -> Result<Form> {
    check_frames(orientation, a)?;
    if orientation.degree() != DIM {
        return Err(Error::DegreeMismatch {
            expected: DIM,
            got: orientation.degree(),
        });
    }
    if orientation.top() == 0.0 {
        return Err(Error::DegenerateVolume);
    }
    let inv = g.inverse_checked()?;
    let vol = g.volume_factor()? * orientation.top().signum();
    let k = a.degree();
    let gram = gram_table(&inv, k);
    let n = basis_len(k);
    let mut out = Form::zero(a.frame, DIM - k);
    for (r, kk) in MultiIndex::all(k).enumerate() {
        let pairing: f64 = (0..n).map(|c| gram[r * n + c] * a.coeffs[c]).sum();
        if pairing == 0.0 {
            continue;
        }
        let comp = kk.complement();
        out.coeffs[comp.rank()] += pairing * wedge_sign(kk, comp) * vol;
    }
    Ok(out)
}

/// Antisymmetric matrix `W_ij = a(e_i, e_j)` of a 2-form.
pub fn two_form_matrix(a: &Form) -> Matrix6<f64> {
    assert_eq!(a.degree(), 2, "two_form_matrix needs a 2-form");
    let mut w = Matrix6::zeros();
    for (idx, c) in a.terms() {
        let s: Vec<usize> = idx.slots().collect();
        w[(s[0], s[1])] = c;
        w[(s[1], s[0])] = -c;
    }
    w
}

/// Inverse of [`two_form_matrix`]; reads the upper triangle.
pub fn two_form_from_matrix(frame: Frame, w: &Matrix6<f64>) -> Form {
    let mut f = Form::zero(frame, 2);
    for (r, idx) in MultiIndex::all(2).enumerate() {
        let s: Vec<usize> = idx.slots().collect();
        f.coeffs[r] = w[(s[0], s[1])];
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    const C: Frame = Frame::Coordinate;

    fn omega0() -> Form {
        Form::basis(C, &[0, 3]) + Form::basis(C, &[1, 4]) + Form::basis(C, &[2, 5])
    }

    /// Brute-force evaluation of a k-form on k vectors via the determinant formula.
    fn eval_on(a: &Form, vs: &[[f64; DIM]]) -> f64 {
        let k = a.degree();
        let mut total = 0.0;
        for (idx, c) in a.terms() {
            let slots: Vec<usize> = idx.slots().collect();
            let mut perm: Vec<usize> = (0..k).collect();
            let mut det = 0.0;
            permute(&mut perm, 0, &mut |p| {
                let mut sign = 1.0;
                for i in 0..k {
                    for j in i + 1..k {
                        if p[i] > p[j] {
                            sign = -sign;
                        }
                    }
                }
                let prod: f64 = (0..k).map(|i| vs[i][slots[p[i]]]).product();
                det += sign * prod;
            });
            total += c * det;
        }
        total
    }

    fn permute(p: &mut Vec<usize>, i: usize, f: &mut dyn FnMut(&[usize])) {
        if i == p.len() {
            f(p);
            return;
        }
        for j in i..p.len() {
            p.swap(i, j);
            permute(p, i + 1, f);
            p.swap(i, j);
        }
    }

    #[test]
    fn multi_index_rank_is_bijective() {
        for k in 0..=DIM {
            let all: Vec<_> = MultiIndex::all(k).collect();
            assert_eq!(all.len(), basis_len(k));
            for (r, idx) in all.iter().enumerate() {
                assert_eq!(idx.rank(), r);
                assert_eq!(MultiIndex::from_rank(k, r), *idx);
            }
            assert!(all.windows(2).all(|w| {
                let a: Vec<_> = w[0].slots().collect();
                let b: Vec<_> = w[1].slots().collect();
                a < b
            }));
        }
        assert!(MultiIndex::new(&[2, 1]).is_err());
        assert!(MultiIndex::new(&[0, 6]).is_err());
    }

    #[test]
    fn wedge_of_basis_one_forms() {
        let r = wedge(&Form::basis(C, &[0]), &Form::basis(C, &[1])).unwrap();
        assert_eq!(r, Form::basis(C, &[0, 1]));
        let r = wedge(&Form::basis(C, &[1]), &Form::basis(C, &[0])).unwrap();
        assert_eq!(r, -Form::basis(C, &[0, 1]));
    }

    #[test]
    fn omega0_cubed_matches_brute_force() {
        let w = omega0();
        let cube = wedge_all(&[w, w, w]).unwrap();
        // Oracle: evaluate ω⊗ω⊗ω antisymmetrized on the standard basis by brute force.
        let vs: Vec<[f64; DIM]> = (0..DIM).map(|i| Vector6::unit(i).0).collect();
        let mut brute = 0.0;
        let mut perm: Vec<usize> = (0..DIM).collect();
        permute(&mut perm, 0, &mut |p| {
            let mut sign = 1.0;
            for i in 0..DIM {
                for j in i + 1..DIM {
                    if p[i] > p[j] {
                        sign = -sign;
                    }
                }
            }
            let pair = |a: usize, b: usize| eval_on(&w, &[vs[p[a]], vs[p[b]]]);
            brute += sign * pair(0, 1) * pair(2, 3) * pair(4, 5);
        });
        // (ω∧ω∧ω)(e1..e6) = (1/(2!2!2!)) Σ_σ sgn σ ω⊗ω⊗ω(e_σ)
        brute /= 8.0;
        assert_eq!(brute, -6.0);
        assert_eq!(cube.top(), -6.0);
    }

    #[test]
    fn contraction_examples() {
        let e12 = Form::basis(C, &[0, 1]);
        assert_eq!(
            contract(&Vector6::unit(0), &e12).unwrap(),
            Form::basis(C, &[1])
        );
        assert_eq!(
            contract(&Vector6::unit(1), &e12).unwrap(),
            -Form::basis(C, &[0])
        );
        assert_eq!(
            contract(&Vector6::unit(0), &Form::scalar(C, 1.0)),
            Err(Error::DegreeUnderflow)
        );
    }

    #[test]
    fn contraction_of_volume_from_omega0() {
        let w = omega0();
        let vol = wedge_all(&[w, w, w]).unwrap().scale(1.0 / 6.0);
        let got = contract(&Vector6::unit(0), &vol).unwrap();
        // ι_{e1}(c·e^{123456}) = c·e^{23456}, c = −1 from the brute-force cube.
        assert_eq!(got, Form::basis(C, &[1, 2, 3, 4, 5]).scale(-1.0));
        // Cross-check against evaluation on vectors.
        let vs: Vec<[f64; DIM]> = (1..DIM).map(|i| Vector6::unit(i).0).collect();
        let direct = eval_on(
            &vol,
            &[Vector6::unit(0).0, vs[0], vs[1], vs[2], vs[3], vs[4]],
        );
        assert_eq!(
            got.coeff(MultiIndex::new(&[1, 2, 3, 4, 5]).unwrap()),
            direct
        );
    }

    #[test]
    fn wedge_errors() {
        let a = Form::basis(C, &[0, 1, 2, 3]);
        let b = Form::basis(C, &[0, 4, 5]);
        assert_eq!(wedge(&a, &b), Err(Error::DegreeOverflow(7)));
        let c = Form::basis(Frame::Ts3, &[0]);
        assert!(matches!(
            wedge(&a, &c),
            Err(Error::FrameMismatch(Frame::Coordinate, Frame::Ts3))
        ));
    }

    #[test]
    fn pullback_examples() {
        let e1 = Form::basis(C, &[0]);
        assert_eq!(pullback(&Matrix6::identity(), &omega0()), omega0());
        let mut a = Matrix6::identity();
        a[(0, 0)] = 2.0;
        assert_eq!(pullback(&a, &e1), e1.scale(2.0));
        let th = 0.37f64;
        let mut rot = Matrix6::identity();
        rot[(0, 0)] = th.cos();
        rot[(0, 3)] = -th.sin();
        rot[(3, 0)] = th.sin();
        rot[(3, 3)] = th.cos();
        assert!(pullback(&rot, &omega0()).approx_eq(&omega0(), 1e-14));
    }

    #[test]
    fn euclidean_hodge_examples() {
        let g = Metric::euclidean();
        let dv = Form::basis(C, &[0, 1, 2, 3, 4, 5]);
        let e1 = Form::basis(C, &[0]);
        assert_eq!(
            hodge_star(&g, &dv, &e1).unwrap(),
            Form::basis(C, &[1, 2, 3, 4, 5])
        );
        assert_eq!(hodge_star(&g, &dv, &Form::scalar(C, 1.0)).unwrap(), dv);
        let e12 = Form::basis(C, &[0, 1]);
        let ss = hodge_star(&g, &dv, &hodge_star(&g, &dv, &e12).unwrap()).unwrap();
        assert_eq!(ss, e12);
    }

    #[test]
    fn inner_product_examples() {
        let g = Metric::euclidean();
        let e12 = Form::basis(C, &[0, 1]);
        let e13 = Form::basis(C, &[0, 2]);
        assert_eq!(inner_product(&g, &e12, &e12).unwrap(), 1.0);
        assert_eq!(inner_product(&g, &e12, &e13).unwrap(), 0.0);
        let g4 = Metric::diagonal([4.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!(inner_product(&g4, &e12, &e12).unwrap(), 0.25);
        assert!(matches!(
            inner_product(&g, &e12, &Form::basis(C, &[0])),
            Err(Error::DegreeMismatch { .. })
        ));
        let degenerate = Metric::diagonal([1.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
        assert_eq!(
            inner_product(&degenerate, &e12, &e12),
            Err(Error::DegenerateMetric)
        );
    }

    #[test]
    fn metric_rejects_asymmetry() {
        let mut m = Matrix6::identity();
        m[(0, 1)] = 1e-3;
        assert_eq!(Metric::new(m), Err(Error::DegenerateMetric));
    }

    #[test]
    fn form_json_layout() {
        let f = Form::basis(C, &[0, 1]).scale(2.5);
        let v = serde_json::to_value(f).unwrap();
        assert_eq!(v["degree"], 2);
        assert_eq!(v["frame"], "coordinate");
        assert_eq!(v["coeffs"].as_array().unwrap().len(), 15);
        assert_eq!(v["coeffs"][0], 2.5);
        let back: Form = serde_json::from_value(v).unwrap();
        assert_eq!(back, f);
        let bad = serde_json::json!({"degree": 2, "frame": "coordinate", "coeffs": [1.0]});
        assert!(serde_json::from_value::<Form>(bad).is_err());
    }
}
