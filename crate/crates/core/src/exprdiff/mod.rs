//! Expression language for problem data, with forward-mode dual numbers
//! supplying every partial derivative.
//!
//! Grammar:
//!
//! ```text
//! expr    = term { ("+" | "-") term }
//! term    = unary { ("*" | "/") unary }
//! unary   = "-" unary | power
//! power   = primary [ "^" unary ]
//! primary = number | variable | func "(" expr ")" | "(" expr ")"
//! func    = "sin" | "cos" | "exp" | "log" | "tanh" | "sqrt" | "abs"
//! variable= "t" | "x"<i> | "u"<i> | "p"<i>        (i ≥ 1)
//! ```
//!
//! `^` binds tighter than unary minus and is right associative, so `-x1^2`
//! is `-(x1^2)` and `2^3^2` is `2^(3^2)`. Terminal functions (`g`, `h`) see
//! only `x<i>` and `p<i>`.

mod bind;
mod dual;
mod expr;

pub use bind::{bind_problem, ExprDims, ExprModel, ExprSources, FdExprModel};
pub use dual::Dual;
pub use expr::{parse, BinOp, DualEval, Expr, Func, Node, Point, Scope, Var};
