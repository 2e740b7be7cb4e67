//! Symbolic scalar expressions: coefficient functions of form fields.
//!
//! Nodes are reference counted so derivatives share subtrees with their
//! source. [`Tape`] flattens a set of expressions into a straight-line
//! program for repeated evaluation over grids.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A variable of the expression grammar.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Var {
    /// Orbit-space parameter `t`.
    T,
    /// Coordinate `x1..x6`, stored 0-based.
    X(u8),
    /// Any other identifier, e.g. tabulated state variables.
    Named(Arc<str>),
}

impl Var {
    pub fn from_name(name: &str) -> Var {
        if name == "t" {
            return Var::T;
        }
        if let Some(rest) = name.strip_prefix('x') {
            if let Ok(i) = rest.parse::<u8>() {
                if (1..=6).contains(&i) && rest.len() == 1 {
                    return Var::X(i - 1);
                }
            }
        }
        Var::Named(name.into())
    }

    pub fn x(slot: usize) -> Var {
        assert!(slot < 6);
        Var::X(slot as u8)
    }

    pub fn named(name: &str) -> Var {
        Var::from_name(name)
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::Named(n) => write!(f, "{n}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Sinh,
    Cosh,
    Exp,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sinh => "sinh",
            Func::Cosh => "cosh",
            Func::Exp => "exp",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sinh" => Func::Sinh,
            "cosh" => Func::Cosh,
            "exp" => Func::Exp,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Sinh => x.sinh(),
            Func::Cosh => x.cosh(),
            Func::Exp => x.exp(),
            Func::Sqrt => x.sqrt(),
        }
    }
}

#[derive(Debug, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Var),
    Neg(Expr),
    Add(Expr, Expr),
    Sub(Expr, Expr),
    Mul(Expr, Expr),
    Div(Expr, Expr),
    Call(Func, Expr),
}

/// Shared immutable expression tree.
#[derive(Clone, PartialEq)]
pub struct Expr(Arc<Node>);

/// Variable lookup during evaluation.
pub trait Env {
    fn get(&self, var: &Var) -> Option<f64>;
}

impl<F: Fn(&Var) -> Option<f64>> Env for F {
    fn get(&self, var: &Var) -> Option<f64> {
        self(var)
    }
}

/// A point in the coordinate chart.
#[derive(Clone, Copy, Debug)]
pub struct Coords(pub [f64; 6]);

impl Env for Coords {
    fn get(&self, var: &Var) -> Option<f64> {
        match var {
            Var::X(i) => Some(self.0[*i as usize]),
            _ => None,
        }
    }
}

/// Explicit list of bindings.
#[derive(Clone, Debug, Default)]
pub struct Bindings(pub Vec<(Var, f64)>);

impl Bindings {
    pub fn with(mut self, var: Var, value: f64) -> Self {
        self.0.push((var, value));
        self
    }
}

impl Env for Bindings {
    fn get(&self, var: &Var) -> Option<f64> {
        self.0.iter().find(|(v, _)| v == var).map(|(_, x)| *x)
    }
}

impl Expr {
    /// Wraps a node without simplification.
    pub fn raw(node: Node) -> Expr {
        Expr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn num(x: f64) -> Expr {
        Expr::raw(Node::Num(x))
    }

    pub fn zero() -> Expr {
        Expr::num(0.0)
    }

    pub fn one() -> Expr {
        Expr::num(1.0)
    }

    pub fn var(v: Var) -> Expr {
        Expr::raw(Node::Var(v))
    }

    pub fn t() -> Expr {
        Expr::var(Var::T)
    }

    pub fn x(slot: usize) -> Expr {
        Expr::var(Var::x(slot))
    }

    pub fn as_num(&self) -> Option<f64> {
        match *self.0 {
            Node::Num(x) => Some(x),
            _ => None,
        }
    }

    /// Structural zero (the literal `0`).
    pub fn is_zero(&self) -> bool {
        self.as_num() == Some(0.0)
    }

    fn is_one(&self) -> bool {
        self.as_num() == Some(1.0)
    }

    pub fn neg(&self) -> Expr {
        match &*self.0 {
            Node::Num(x) => Expr::num(-x),
            Node::Neg(inner) => inner.clone(),
            _ => Expr::raw(Node::Neg(self.clone())),
        }
    }

    pub fn add(&self, rhs: &Expr) -> Expr {
        match (self.as_num(), rhs.as_num()) {
            (Some(a), Some(b)) => Expr::num(a + b),
            (Some(0.0), _) => rhs.clone(),
            (_, Some(0.0)) => self.clone(),
            _ => match &*rhs.0 {
                Node::Neg(inner) => Expr::raw(Node::Sub(self.clone(), inner.clone())),
                _ => Expr::raw(Node::Add(self.clone(), rhs.clone())),
            },
        }
    }

    pub fn sub(&self, rhs: &Expr) -> Expr {
        match (self.as_num(), rhs.as_num()) {
            (Some(a), Some(b)) => Expr::num(a - b),
            (Some(0.0), _) => rhs.neg(),
            (_, Some(0.0)) => self.clone(),
            _ => Expr::raw(Node::Sub(self.clone(), rhs.clone())),
        }
    }

    pub fn mul(&self, rhs: &Expr) -> Expr {
        match (self.as_num(), rhs.as_num()) {
            (Some(a), Some(b)) => Expr::num(a * b),
            (Some(0.0), _) => Expr::zero(),
            (_, Some(0.0)) => Expr::zero(),
            (Some(1.0), _) => rhs.clone(),
            (_, Some(1.0)) => self.clone(),
            (Some(-1.0), _) => rhs.neg(),
            (_, Some(-1.0)) => self.neg(),
            _ => Expr::raw(Node::Mul(self.clone(), rhs.clone())),
        }
    }

    pub fn div(&self, rhs: &Expr) -> Expr {
        match (self.as_num(), rhs.as_num()) {
            (Some(a), Some(b)) if b != 0.0 => Expr::num(a / b),
            (Some(0.0), _) => Expr::zero(),
            _ if rhs.is_one() => self.clone(),
            _ => Expr::raw(Node::Div(self.clone(), rhs.clone())),
        }
    }

    pub fn scale(&self, c: f64) -> Expr {
        Expr::num(c).mul(self)
    }

    pub fn call(f: Func, arg: &Expr) -> Expr {
        match arg.as_num() {
            Some(x) => Expr::num(f.apply(x)),
            None => Expr::raw(Node::Call(f, arg.clone())),
        }
    }

    pub fn square(&self) -> Expr {
        self.mul(self)
    }

    pub fn sqrt(&self) -> Expr {
        Expr::call(Func::Sqrt, self)
    }

    pub fn exp(&self) -> Expr {
        Expr::call(Func::Exp, self)
    }

    pub fn eval(&self, env: &dyn Env) -> Result<f64> {
        Ok(match &*self.0 {
            Node::Num(x) => *x,
            Node::Var(v) => env
                .get(v)
                .ok_or_else(|| Error::UnboundVariable(v.to_string()))?,
            Node::Neg(a) => -a.eval(env)?,
            Node::Add(a, b) => a.eval(env)? + b.eval(env)?,
            Node::Sub(a, b) => a.eval(env)? - b.eval(env)?,
            Node::Mul(a, b) => a.eval(env)? * b.eval(env)?,
            Node::Div(a, b) => a.eval(env)? / b.eval(env)?,
            Node::Call(f, a) => f.apply(a.eval(env)?),
        })
    }

    /// Partial derivative with respect to `var`.
    pub fn diff(&self, var: &Var) -> Expr {
        let mut memo = HashMap::new();
        self.diff_memo(var, &mut memo)
    }

    fn diff_memo(&self, var: &Var, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        let key = Arc::as_ptr(&self.0);
        if let Some(d) = memo.get(&key) {
            return d.clone();
        }
        let d = match &*self.0 {
            Node::Num(_) => Expr::zero(),
            Node::Var(v) => {
                if v == var {
                    Expr::one()
                } else {
                    Expr::zero()
                }
            }
            Node::Neg(a) => a.diff_memo(var, memo).neg(),
            Node::Add(a, b) => a.diff_memo(var, memo).add(&b.diff_memo(var, memo)),
            Node::Sub(a, b) => a.diff_memo(var, memo).sub(&b.diff_memo(var, memo)),
            Node::Mul(a, b) => {
                let da = a.diff_memo(var, memo);
                let db = b.diff_memo(var, memo);
                da.mul(b).add(&a.mul(&db))
            }
            Node::Div(a, b) => {
                let da = a.diff_memo(var, memo);
                let db = b.diff_memo(var, memo);
                if db.is_zero() {
                    da.div(b)
                } else {
                    da.mul(b).sub(&a.mul(&db)).div(&b.square())
                }
            }
            Node::Call(f, a) => {
                let da = a.diff_memo(var, memo);
                if da.is_zero() {
                    Expr::zero()
                } else {
                    let outer = match f {
                        Func::Sin => Expr::call(Func::Cos, a),
                        Func::Cos => Expr::call(Func::Sin, a).neg(),
                        Func::Sinh => Expr::call(Func::Cosh, a),
                        Func::Cosh => Expr::call(Func::Sinh, a),
                        Func::Exp => self.clone(),
                        Func::Sqrt => Expr::one().div(&self.scale(2.0)),
                    };
                    outer.mul(&da)
                }
            }
        };
        memo.insert(key, d.clone());
        d
    }

    pub fn free_vars(&self) -> BTreeSet<Var> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<Var>) {
        match &*self.0 {
            Node::Num(_) => {}
            Node::Var(v) => {
                out.insert(v.clone());
            }
            Node::Neg(a) | Node::Call(_, a) => a.collect_vars(out),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }

    /// Number of distinct nodes (shared subtrees counted once).
    pub fn node_count(&self) -> usize {
        Tape::compile(std::slice::from_ref(self), &[]).len()
    }

    fn precedence(&self) -> u8 {
        match &*self.0 {
            Node::Add(..) | Node::Sub(..) => 1,
            Node::Mul(..) | Node::Div(..) => 2,
            Node::Neg(_) => 3,
            Node::Num(x) if *x < 0.0 || x.is_sign_negative() => 3,
            _ => 4,
        }
    }

    fn write_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let paren = self.precedence() < min;
        if paren {
            write!(f, "(")?;
        }
        match &*self.0 {
            Node::Num(x) => write!(f, "{x}")?,
            Node::Var(v) => write!(f, "{v}")?,
            Node::Neg(a) => {
                write!(f, "-")?;
                // `-2` would read back as a literal, so keep `Neg(Num)` explicit.
                if a.as_num().is_some() {
                    write!(f, "(")?;
                    a.write_prec(f, 0)?;
                    write!(f, ")")?;
                } else {
                    a.write_prec(f, 3)?;
                }
            }
            Node::Add(a, b) => {
                a.write_prec(f, 1)?;
                write!(f, " + ")?;
                b.write_prec(f, 2)?;
            }
            Node::Sub(a, b) => {
                a.write_prec(f, 1)?;
                write!(f, " - ")?;
                b.write_prec(f, 2)?;
            }
            Node::Mul(a, b) => {
                a.write_prec(f, 2)?;
                write!(f, "*")?;
                b.write_prec(f, 3)?;
            }
            Node::Div(a, b) => {
                a.write_prec(f, 2)?;
                write!(f, "/")?;
                b.write_prec(f, 3)?;
            }
            Node::Call(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if paren {
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Canonical printer; `parse(e.to_string())` reproduces `e` structurally.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_prec(f, 0)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({self})")
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Num(f64),
    Load(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Call(Func, usize),
}

/// Straight-line program evaluating a batch of expressions with shared
/// subtrees computed once.
#[derive(Clone, Debug)]
pub struct Tape {
    vars: Vec<Var>,
    ops: Vec<Op>,
    outputs: Vec<usize>,
}

impl Tape {
    /// Compiles `exprs`; variables listed in `vars` are read by position from
    /// the slice passed to [`Tape::eval`], any other free variable makes
    /// evaluation fail.
    pub fn compile(exprs: &[Expr], vars: &[Var]) -> Tape {
        let mut tape = Tape {
            vars: vars.to_vec(),
            ops: Vec::new(),
            outputs: Vec::new(),
        };
        let mut seen: HashMap<*const Node, usize> = HashMap::new();
        for e in exprs {
            let slot = tape.emit(e, &mut seen);
            tape.outputs.push(slot);
        }
        tape
    }

    fn emit(&mut self, e: &Expr, seen: &mut HashMap<*const Node, usize>) -> usize {
        let key = Arc::as_ptr(&e.0);
        if let Some(&slot) = seen.get(&key) {
            return slot;
        }
        let op = match &*e.0 {
            Node::Num(x) => Op::Num(*x),
            Node::Var(v) => match self.vars.iter().position(|w| w == v) {
                Some(i) => Op::Load(i),
                None => Op::Num(f64::NAN),
            },
            Node::Neg(a) => Op::Neg(self.emit(a, seen)),
            Node::Add(a, b) => {
                let (a, b) = (self.emit(a, seen), self.emit(b, seen));
                Op::Add(a, b)
            }
            Node::Sub(a, b) => {
                let (a, b) = (self.emit(a, seen), self.emit(b, seen));
                Op::Sub(a, b)
            }
            Node::Mul(a, b) => {
                let (a, b) = (self.emit(a, seen), self.emit(b, seen));
                Op::Mul(a, b)
            }
            Node::Div(a, b) => {
                let (a, b) = (self.emit(a, seen), self.emit(b, seen));
                Op::Div(a, b)
            }
            Node::Call(f, a) => Op::Call(*f, self.emit(a, seen)),
        };
        self.ops.push(op);
        let slot = self.ops.len() - 1;
        seen.insert(key, slot);
        slot
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn outputs(&self) -> usize {
        self.outputs.len()
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Evaluates into `out` (length = number of compiled expressions) using
    /// `scratch` as register storage.
    pub fn eval_into(&self, values: &[f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        scratch.clear();
        scratch.reserve(self.ops.len());
        for op in &self.ops {
            let r = match *op {
                Op::Num(x) => x,
                Op::Load(i) => values[i],
                Op::Neg(a) => -scratch[a],
                Op::Add(a, b) => scratch[a] + scratch[b],
                Op::Sub(a, b) => scratch[a] - scratch[b],
                Op::Mul(a, b) => scratch[a] * scratch[b],
                Op::Div(a, b) => scratch[a] / scratch[b],
                Op::Call(f, a) => f.apply(scratch[a]),
            };
            scratch.push(r);
        }
        for (o, &slot) in out.iter_mut().zip(&self.outputs) {
            *o = scratch[slot];
        }
    }

    pub fn eval(&self, values: &[f64]) -> Vec<f64> {
        let mut scratch = Vec::new();
        let mut out = vec![0.0; self.outputs.len()];
        self.eval_into(values, &mut scratch, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at_t(t: f64) -> Bindings {
        Bindings::default().with(Var::T, t)
    }

    #[test]
    fn derivative_of_negative_cosh() {
        let e = Expr::call(Func::Cosh, &Expr::t()).neg();
        let d = e.diff(&Var::T);
        assert_eq!(d, Expr::call(Func::Sinh, &Expr::t()).neg());
    }

    #[test]
    fn partial_ignores_other_coordinates() {
        let e = Expr::call(Func::Sin, &Expr::x(0))
            .add(&Expr::num(2.0).mul(&Expr::call(Func::Cos, &Expr::x(1))));
        assert_eq!(e.diff(&Var::x(0)), Expr::call(Func::Cos, &Expr::x(0)));
    }

    #[test]
    fn smart_constructors_prune_zeros() {
        let x = Expr::x(0);
        assert!(x.mul(&Expr::zero()).is_zero());
        assert_eq!(x.add(&Expr::zero()), x);
        assert_eq!(x.mul(&Expr::one()), x);
        assert_eq!(x.neg().neg(), x);
        assert_eq!(Expr::num(2.0).mul(&Expr::num(3.0)).as_num(), Some(6.0));
    }

    #[test]
    fn quotient_and_sqrt_rules() {
        let t = Expr::t();
        let e = Expr::call(Func::Sinh, &t).div(&t.square().add(&Expr::one()).sqrt());
        let d = e.diff(&Var::T);
        for &x in &[0.3, 1.1, -2.0] {
            let h = 1e-5;
            let fd = (e.eval(&at_t(x + h)).unwrap() - e.eval(&at_t(x - h)).unwrap()) / (2.0 * h);
            assert!((d.eval(&at_t(x)).unwrap() - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn unbound_variable_is_reported() {
        let e = Expr::var(Var::named("y")).add(&Expr::t());
        assert_eq!(
            e.eval(&at_t(1.0)),
            Err(Error::UnboundVariable("y".to_string()))
        );
    }

    #[test]
    fn tape_matches_tree_evaluation_and_shares_nodes() {
        let t = Expr::t();
        let c = Expr::call(Func::Cosh, &t);
        let shared = c.mul(&c).add(&c);
        let exprs = vec![shared.clone(), shared.diff(&Var::T), c.clone()];
        let tape = Tape::compile(&exprs, &[Var::T]);
        let out = tape.eval(&[0.7]);
        for (e, v) in exprs.iter().zip(&out) {
            assert_eq!(e.eval(&at_t(0.7)).unwrap(), *v);
        }
        // cosh(t) is emitted once for all three outputs.
        let cosh_ops = tape
            .ops
            .iter()
            .filter(|op| matches!(op, Op::Call(Func::Cosh, _)))
            .count();
        assert_eq!(cosh_ops, 1);
    }

    #[test]
    fn free_vars_collects_everything() {
        let e = Expr::x(0).mul(&Expr::t()).add(&Expr::var(Var::named("f2")));
        let vars: Vec<String> = e.free_vars().iter().map(|v| v.to_string()).collect();
        assert_eq!(vars, vec!["t", "x1", "f2"]);
    }
}
