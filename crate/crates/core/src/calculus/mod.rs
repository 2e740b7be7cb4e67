//! Form fields with symbolic coefficients and their exterior calculus on a
//! coordinate chart of ℝ⁶ or along the normal geodesic of TS³.

mod expr;
mod field;
mod parse;

pub use expr::{Bindings, Coords, Env, Expr, Func, Node, Tape, Var};
pub use field::{
    symbolic_dual, CoframeModel, FieldTape, FormField, ModelKind, SymbolicDual, VectorField,
};
pub use parse::parse_expr;
