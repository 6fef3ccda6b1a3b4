use std::fmt;

use super::dual::Dual;
use crate::error::{OcError, Result};

/// Variables an expression may reference. Indices are zero-based; the
/// surface syntax is `t`, `x1 … xn`, `u1 … umu`, `p1 … pnp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X(usize),
    U(usize),
    P(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Tanh,
    Sqrt,
    Abs,
}

impl Func {
    const ALL: [(&'static str, Func); 7] = [
        ("sin", Func::Sin),
        ("cos", Func::Cos),
        ("exp", Func::Exp),
        ("log", Func::Log),
        ("tanh", Func::Tanh),
        ("sqrt", Func::Sqrt),
        ("abs", Func::Abs),
    ];

    fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, f)| *f == self).map(|(n, _)| *n).expect("listed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone)]
pub enum Node {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Expression tree node with its byte span in the source.
#[derive(Debug, Clone)]
pub struct Expr {
    pub node: Node,
    pub span: (usize, usize),
}

/// Structural equality; spans are ignored.
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        match (&self.node, &other.node) {
            (Node::Const(a), Node::Const(b)) => a == b,
            (Node::Var(a), Node::Var(b)) => a == b,
            (Node::Neg(a), Node::Neg(b)) => a == b,
            (Node::Bin(o1, a1, b1), Node::Bin(o2, a2, b2)) => o1 == o2 && a1 == a2 && b1 == b2,
            (Node::Call(f1, a1), Node::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

/// Declared dimensions, plus whether `t` is in scope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scope {
    pub state: usize,
    pub control: usize,
    pub param: usize,
    pub time: bool,
}

impl Scope {
    pub fn running(state: usize, control: usize, param: usize) -> Self {
        Self {
            state,
            control,
            param,
            time: true,
        }
    }

    /// Terminal functions see only the state and the parameter.
    pub fn terminal(state: usize, param: usize) -> Self {
        Self {
            state,
            control: 0,
            param,
            time: false,
        }
    }

    fn names(&self) -> Vec<String> {
        let mut v: Vec<String> = Func::ALL.iter().map(|(n, _)| n.to_string()).collect();
        if self.time {
            v.push("t".into());
        }
        v.extend((1..=self.state).map(|i| format!("x{i}")));
        v.extend((1..=self.control).map(|i| format!("u{i}")));
        v.extend((1..=self.param).map(|i| format!("p{i}")));
        v
    }

    fn resolve(&self, name: &str) -> Option<Var> {
        if name == "t" {
            return self.time.then_some(Var::T);
        }
        let (head, digits) = name.split_at(1);
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) || digits.starts_with('0') {
            return None;
        }
        let i: usize = digits.parse().ok()?;
        match head {
            "x" if i <= self.state => Some(Var::X(i - 1)),
            "u" if i <= self.control => Some(Var::U(i - 1)),
            "p" if i <= self.param => Some(Var::P(i - 1)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn tokens(src: &'a str) -> Result<Vec<(Tok, usize, usize)>> {
        let mut lx = Lexer { src, pos: 0 };
        let mut out = Vec::new();
        loop {
            let (tok, start) = lx.next()?;
            let end = lx.pos;
            let done = tok == Tok::End;
            out.push((tok, start, end));
            if done {
                return Ok(out);
            }
        }
    }

    fn next(&mut self) -> Result<(Tok, usize)> {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() && bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        let start = self.pos;
        let Some(&c) = bytes.get(self.pos) else {
            return Ok((Tok::End, start));
        };
        if c.is_ascii_digit() || c == b'.' {
            let mut end = self.pos;
            while end < bytes.len() && (bytes[end].is_ascii_digit() || bytes[end] == b'.') {
                end += 1;
            }
            if end < bytes.len() && (bytes[end] == b'e' || bytes[end] == b'E') {
                let mut k = end + 1;
                if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                    k += 1;
                }
                if k < bytes.len() && bytes[k].is_ascii_digit() {
                    while k < bytes.len() && bytes[k].is_ascii_digit() {
                        k += 1;
                    }
                    end = k;
                }
            }
            let text = &self.src[start..end];
            let v: f64 = text.parse().map_err(|_| OcError::Syntax {
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            self.pos = end;
            return Ok((Tok::Num(v), start));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut end = self.pos;
            while end < bytes.len() && (bytes[end].is_ascii_alphanumeric() || bytes[end] == b'_') {
                end += 1;
            }
            self.pos = end;
            return Ok((Tok::Ident(self.src[start..end].to_string()), start));
        }
        self.pos += 1;
        match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => Ok((Tok::Op(c as char), start)),
            b'(' => Ok((Tok::LParen, start)),
            b')' => Ok((Tok::RParen, start)),
            _ => {
                let ch = self.src[start..].chars().next().expect("non-empty");
                Err(OcError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                })
            }
        }
    }
}

struct Parser<'a> {
    toks: Vec<(Tok, usize, usize)>,
    at: usize,
    scope: &'a Scope,
}

impl Parser<'_> {
    fn peek(&self) -> &(Tok, usize, usize) {
        &self.toks[self.at]
    }

    fn bump(&mut self) -> (Tok, usize, usize) {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn err_here(&self, what: &str) -> OcError {
        let (tok, start, _) = self.peek();
        let found = match tok {
            Tok::End => "end of input".to_string(),
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Op(c) => format!("`{c}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
        };
        OcError::Syntax {
            offset: *start,
            message: format!("expected {what}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        while let Tok::Op(c @ ('+' | '-')) = self.peek().0 {
            self.bump();
            let rhs = self.term()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        while let Tok::Op(c @ ('*' | '/')) = self.peek().0 {
            self.bump();
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = bin(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr> {
        if let (Tok::Op('-'), start, _) = self.peek() {
            let start = *start;
            self.bump();
            let inner = self.unary()?;
            let end = inner.span.1;
            return Ok(Expr {
                node: Node::Neg(Box::new(inner)),
                span: (start, end),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.primary()?;
        if let Tok::Op('^') = self.peek().0 {
            self.bump();
            // Right associative; the exponent may carry a unary minus.
            let exp = self.unary()?;
            return Ok(bin(BinOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr> {
        let (tok, start, end) = self.peek().clone();
        match tok {
            Tok::Num(v) => {
                self.bump();
                Ok(Expr {
                    node: Node::Const(v),
                    span: (start, end),
                })
            }
            Tok::LParen => {
                self.bump();
                let inner = self.expr()?;
                match self.peek() {
                    (Tok::RParen, _, close) => {
                        let close = *close;
                        self.bump();
                        Ok(Expr {
                            node: inner.node,
                            span: (start, close),
                        })
                    }
                    _ => Err(self.err_here("`)`")),
                }
            }
            Tok::Ident(name) => {
                self.bump();
                if let Some((_, f)) = Func::ALL.iter().find(|(n, _)| *n == name) {
                    if self.peek().0 != Tok::LParen {
                        return Err(self.err_here(&format!("`(` after function `{name}`")));
                    }
                    self.bump();
                    let arg = self.expr()?;
                    return match self.peek() {
                        (Tok::RParen, _, close) => {
                            let close = *close;
                            self.bump();
                            Ok(Expr {
                                node: Node::Call(*f, Box::new(arg)),
                                span: (start, close),
                            })
                        }
                        _ => Err(self.err_here("`)`")),
                    };
                }
                match self.scope.resolve(&name) {
                    Some(v) => Ok(Expr {
                        node: Node::Var(v),
                        span: (start, end),
                    }),
                    None => Err(OcError::UnknownIdentifier {
                        suggestion: suggest(&name, &self.scope.names()),
                        name,
                        offset: start,
                    }),
                }
            }
            _ => Err(self.err_here("a number, variable, function call or `(`")),
        }
    }
}

fn suggest(name: &str, candidates: &[String]) -> Option<String> {
    candidates
        .iter()
        .map(|c| (strsim::levenshtein(name, c), c))
        .filter(|(d, _)| *d <= 2)
        .min_by_key(|(d, _)| *d)
        .map(|(_, c)| c.clone())
}

fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    let span = (a.span.0, b.span.1);
    Expr {
        node: Node::Bin(op, Box::new(a), Box::new(b)),
        span,
    }
}

/// Parses `src` with the variables of `scope`.
pub fn parse(src: &str, scope: &Scope) -> Result<Expr> {
    let toks = Lexer::tokens(src)?;
    let mut p = Parser { toks, at: 0, scope };
    let e = p.expr()?;
    if p.peek().0 != Tok::End {
        return Err(p.err_here("an operator or end of input"));
    }
    Ok(e)
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::X(i) => write!(f, "x{}", i + 1),
            Var::U(i) => write!(f, "u{}", i + 1),
            Var::P(i) => write!(f, "p{}", i + 1),
        }
    }
}

/// Fully parenthesized printing, so that parsing the output gives back the
/// same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.node {
            Node::Const(v) => write!(f, "{v:?}"),
            Node::Var(v) => write!(f, "{v}"),
            Node::Neg(a) => write!(f, "(-{a})"),
            Node::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Node::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

/// A point at which to evaluate: time, state, control, parameter.
#[derive(Debug, Clone, Copy)]
pub struct Point<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub p: &'a [f64],
}

impl Point<'_> {
    fn get(&self, v: Var) -> f64 {
        match v {
            Var::T => self.t,
            Var::X(i) => self.x[i],
            Var::U(i) => self.u[i],
            Var::P(i) => self.p[i],
        }
    }

    /// Seed layout `[t, x…, u…, p…]`.
    fn seed_index(&self, v: Var) -> usize {
        match v {
            Var::T => 0,
            Var::X(i) => 1 + i,
            Var::U(i) => 1 + self.x.len() + i,
            Var::P(i) => 1 + self.x.len() + self.u.len() + i,
        }
    }

    pub fn width(&self) -> usize {
        1 + self.x.len() + self.u.len() + self.p.len()
    }
}

/// Value and partials `[∂_t, ∂_x…, ∂_u…, ∂_p…]` of an expression.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Set when `abs` was differentiated at zero (right derivative used).
    pub one_sided: bool,
}

impl Expr {
    fn fault(&self, src: Option<&str>, message: impl Into<String>) -> OcError {
        let snippet = src
            .and_then(|s| s.get(self.span.0..self.span.1))
            .map(str::to_string)
            .unwrap_or_else(|| self.to_string());
        OcError::Eval {
            start: self.span.0,
            end: self.span.1,
            snippet,
            message: message.into(),
        }
    }

    /// Plain evaluation; domain faults are errors carrying the span
    /// (`src` supplies the snippet text when available).
    pub fn eval(&self, at: &Point<'_>, src: Option<&str>) -> Result<f64> {
        Ok(match &self.node {
            Node::Const(v) => *v,
            Node::Var(v) => at.get(*v),
            Node::Neg(a) => -a.eval(at, src)?,
            Node::Bin(op, a, b) => {
                let (x, y) = (a.eval(at, src)?, b.eval(at, src)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(self.fault(src, "division by zero"));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        if x < 0.0 && y.fract() != 0.0 {
                            return Err(self.fault(src, "negative base with non-integer exponent"));
                        }
                        x.powf(y)
                    }
                }
            }
            Node::Call(func, a) => {
                let x = a.eval(at, src)?;
                match func {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Tanh => x.tanh(),
                    Func::Abs => x.abs(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(self.fault(src, format!("log of nonpositive value {x}")));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(self.fault(src, format!("sqrt of negative value {x}")));
                        }
                        x.sqrt()
                    }
                }
            }
        })
    }

    /// Value and all partials at once, every variable group seeded.
    pub fn eval_dual(&self, at: &Point<'_>, src: Option<&str>) -> Result<DualEval> {
        let mut one_sided = false;
        let d = self.dual(at, src, &mut one_sided)?;
        Ok(DualEval {
            value: d.val,
            grad: d.grad,
            one_sided,
        })
    }

    fn dual(&self, at: &Point<'_>, src: Option<&str>, one_sided: &mut bool) -> Result<Dual> {
        let w = at.width();
        Ok(match &self.node {
            Node::Const(v) => Dual::constant(*v, w),
            Node::Var(v) => Dual::variable(at.get(*v), at.seed_index(*v), w),
            Node::Neg(a) => -&a.dual(at, src, one_sided)?,
            Node::Bin(op, a, b) => {
                let (x, y) = (a.dual(at, src, one_sided)?, b.dual(at, src, one_sided)?);
                match op {
                    BinOp::Add => &x + &y,
                    BinOp::Sub => &x - &y,
                    BinOp::Mul => &x * &y,
                    BinOp::Div => {
                        if y.val == 0.0 {
                            return Err(self.fault(src, "division by zero"));
                        }
                        &x / &y
                    }
                    BinOp::Pow => {
                        if y.is_constant() {
                            if x.val < 0.0 && y.val.fract() != 0.0 {
                                return Err(self.fault(src, "negative base with non-integer exponent"));
                            }
                        } else if x.val <= 0.0 {
                            return Err(self.fault(src, "variable exponent needs a positive base"));
                        }
                        x.pow(&y)
                    }
                }
            }
            Node::Call(func, a) => {
                let x = a.dual(at, src, one_sided)?;
                match func {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Tanh => x.tanh(),
                    Func::Abs => {
                        if x.val == 0.0 && !x.is_constant() {
                            *one_sided = true;
                        }
                        x.abs()
                    }
                    Func::Log => {
                        if x.val <= 0.0 {
                            return Err(self.fault(src, format!("log of nonpositive value {}", x.val)));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x.val < 0.0 || (x.val == 0.0 && !x.is_constant()) {
                            return Err(self.fault(src, format!("sqrt is not differentiable at {}", x.val)));
                        }
                        x.sqrt()
                    }
                }
            }
        })
    }

    /// Variables occurring in the expression.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut Vec<Var>) {
        match &self.node {
            Node::Const(_) => {}
            Node::Var(v) => {
                if !out.contains(v) {
                    out.push(*v);
                }
            }
            Node::Neg(a) | Node::Call(_, a) => a.collect_vars(out),
            Node::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scope() -> Scope {
        Scope::running(2, 1, 1)
    }

    fn at<'a>(x: &'a [f64], u: &'a [f64], p: &'a [f64]) -> Point<'a> {
        Point { t: 0.0, x, u, p }
    }

    #[test]
    fn single_variable() {
        let e = parse("u1", &Scope::running(1, 1, 0)).unwrap();
        assert!(matches!(e.node, Node::Var(Var::U(0))));
    }

    #[test]
    fn arithmetic_example() {
        let e = parse("-(x1^2+u1^2)/2", &scope()).unwrap();
        assert_eq!(e.eval(&at(&[1.0, 0.0], &[1.0], &[0.0]), None).unwrap(), -1.0);
    }

    #[test]
    fn syntax_error_offset() {
        match parse("x1 +* u1", &scope()) {
            Err(OcError::Syntax { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_suggests() {
        match parse("x1 + sn(u1)", &scope()) {
            Err(OcError::UnknownIdentifier { name, offset, suggestion }) => {
                assert_eq!((name.as_str(), offset), ("sn", 5));
                assert_eq!(suggestion.as_deref(), Some("sin"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("u2", &scope()), Err(OcError::UnknownIdentifier { .. })));
        assert!(matches!(parse("t", &Scope::terminal(1, 1)), Err(OcError::UnknownIdentifier { .. })));
    }

    #[test]
    fn precedence_and_associativity() {
        let s = scope();
        let e = |src: &str| parse(src, &s).unwrap().eval(&at(&[2.0, 3.0], &[0.0], &[0.0]), None).unwrap();
        assert_eq!(e("-x1^2"), -4.0);
        assert_eq!(e("x1^3^2"), 512.0);
        assert_eq!(e("x2 - x1 - 1"), 0.0);
        assert_eq!(e("x2 / x1 * 2"), 3.0);
        assert_eq!(e("x1^-1"), 0.5);
        assert_eq!(e("1.5e1 + .5"), 15.5);
    }

    #[test]
    fn round_trip() {
        let s = scope();
        for src in ["-(x1^2+u1^2)/2", "x1^3^2", "sin(t)*exp(-x2)/(1+p1^2)", "-x1^-2", "abs(u1)-2.5e-3"] {
            let e = parse(src, &s).unwrap();
            let printed = e.to_string();
            assert_eq!(parse(&printed, &s).unwrap(), e, "{src} → {printed}");
        }
    }

    #[test]
    fn dual_partials() {
        let s = Scope::running(1, 1, 0);
        let e = parse("x1*u1", &s).unwrap();
        let r = e.eval_dual(&at(&[2.0], &[3.0], &[]), None).unwrap();
        assert_eq!(r.value, 6.0);
        assert_eq!(&r.grad[1..], &[3.0, 2.0]);
        let e = parse("tanh(t)", &s).unwrap();
        assert_eq!(e.eval_dual(&at(&[0.0], &[0.0], &[]), None).unwrap().grad[0], 1.0);
    }

    #[test]
    fn domain_faults_carry_span() {
        let s = Scope::running(1, 0, 0);
        let src = "1 + log(x1 - 1)";
        let e = parse(src, &s).unwrap();
        match e.eval(&at(&[0.5], &[], &[]), Some(src)) {
            Err(OcError::Eval { start, end, snippet, .. }) => {
                assert_eq!((start, end), (4, 15));
                assert_eq!(snippet, "log(x1 - 1)");
            }
            other => panic!("{other:?}"),
        }
        let e = parse("x1 / (x1 - x1)", &s).unwrap();
        assert!(e.eval_dual(&at(&[1.0], &[], &[]), None).is_err());
    }

    #[test]
    fn abs_at_zero_flagged() {
        let s = Scope::running(1, 0, 0);
        let r = parse("abs(x1)", &s).unwrap().eval_dual(&at(&[0.0], &[], &[]), None).unwrap();
        assert!(r.one_sided);
        assert_eq!(r.grad[1], 1.0);
    }
}
