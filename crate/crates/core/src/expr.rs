//! Arithmetic expressions over named real variables.
//!
//! Expressions describe scale functions such as `eps^3*ln(1+1/eps)`, cell
//! coefficients such as `2+sin(2*pi*y1)` and problem data `f(x,t)`, `u0(x)`.
//! The grammar is deliberately small:
//!
//! ```text
//! expr  := term (('+'|'-') term)*
//! term  := unary (('*'|'/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! so `^` binds tighter than unary minus, which binds tighter than `*` and `/`.
//! `^` is right-associative. There is no implicit multiplication.
//!
//! Two cancellation-prone shapes are evaluated with dedicated kernels:
//! `exp(a)-1` uses `expm1` and `ln(1+a)` uses `log1p`. Both are recognised
//! when the tree is built, so printing and re-parsing reproduce the same tree.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExprError {
    #[error("syntax error at byte {pos}: expected {expected}, found {found}")]
    Syntax {
        pos: usize,
        expected: &'static str,
        found: String,
    },
    #[error("unknown identifier `{name}` at byte {pos}")]
    UnknownIdentifier { name: String, pos: usize },
    #[error("domain error in {op}: argument {arg}")]
    Domain { op: &'static str, arg: f64 },
    #[error("no value bound for variable `{name}`")]
    MissingBinding { name: String },
    #[error("expression `{expr}` is not strictly positive at {at}: value {value}")]
    Positivity { expr: String, at: f64, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    /// `exp(a)-1`, evaluated without cancellation.
    ExpM1,
    /// `ln(1+a)`, evaluated without cancellation.
    Ln1p,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Index into the owning expression's variable list.
    Var(usize),
    Unary(UnaryOp, Box<Node>),
    Binary(BinaryOp, Box<Node>, Box<Node>),
}

const FUNCTIONS: [(&str, UnaryOp); 5] = [
    ("sqrt", UnaryOp::Sqrt),
    ("exp", UnaryOp::Exp),
    ("ln", UnaryOp::Ln),
    ("sin", UnaryOp::Sin),
    ("cos", UnaryOp::Cos),
];

const CONSTANTS: [(&str, f64); 1] = [("pi", core::f64::consts::PI)];

impl Node {
    /// Rewrites `exp(a)-1` and `ln(1+a)` (bottom-up) into their fused forms.
    fn normalize(self) -> Node {
        match self {
            Node::Const(_) | Node::Var(_) => self,
            Node::Unary(op, a) => {
                let a = a.normalize();
                if op == UnaryOp::Ln {
                    if let Node::Binary(BinaryOp::Add, l, r) = a {
                        return match (*l, *r) {
                            (Node::Const(c), r) if c == 1.0 => Node::Unary(UnaryOp::Ln1p, Box::new(r)),
                            (l, Node::Const(c)) if c == 1.0 => Node::Unary(UnaryOp::Ln1p, Box::new(l)),
                            (l, r) => Node::Unary(
                                UnaryOp::Ln,
                                Box::new(Node::Binary(BinaryOp::Add, Box::new(l), Box::new(r))),
                            ),
                        };
                    }
                }
                Node::Unary(op, Box::new(a))
            }
            Node::Binary(op, l, r) => {
                let l = l.normalize();
                let r = r.normalize();
                if op == BinaryOp::Sub && r == Node::Const(1.0) {
                    if let Node::Unary(UnaryOp::Exp, a) = l {
                        return Node::Unary(UnaryOp::ExpM1, a);
                    }
                }
                Node::Binary(op, Box::new(l), Box::new(r))
            }
        }
    }

    fn eval(&self, env: &[f64]) -> Result<f64, ExprError> {
        match self {
            Node::Const(c) => Ok(*c),
            Node::Var(i) => Ok(env[*i]),
            Node::Unary(op, a) => {
                let x = a.eval(env)?;
                let (name, y) = match op {
                    UnaryOp::Neg => return Ok(-x),
                    UnaryOp::Sqrt => {
                        if x < 0.0 {
                            return Err(ExprError::Domain { op: "sqrt", arg: x });
                        }
                        ("sqrt", libm::sqrt(x))
                    }
                    UnaryOp::Exp => ("exp", libm::exp(x)),
                    UnaryOp::ExpM1 => ("exp", libm::expm1(x)),
                    UnaryOp::Ln => {
                        if !(x > 0.0) {
                            return Err(ExprError::Domain { op: "ln", arg: x });
                        }
                        ("ln", libm::log(x))
                    }
                    UnaryOp::Ln1p => {
                        if !(x > -1.0) {
                            return Err(ExprError::Domain { op: "ln", arg: 1.0 + x });
                        }
                        ("ln", libm::log1p(x))
                    }
                    UnaryOp::Sin => ("sin", libm::sin(x)),
                    UnaryOp::Cos => ("cos", libm::cos(x)),
                };
                if y.is_finite() || !x.is_finite() {
                    Ok(y)
                } else {
                    Err(ExprError::Domain { op: name, arg: x })
                }
            }
            Node::Binary(op, l, r) => {
                let a = l.eval(env)?;
                let b = r.eval(env)?;
                match op {
                    BinaryOp::Add => Ok(a + b),
                    BinaryOp::Sub => Ok(a - b),
                    BinaryOp::Mul => Ok(a * b),
                    BinaryOp::Div => {
                        if b == 0.0 {
                            Err(ExprError::Domain { op: "division", arg: b })
                        } else {
                            Ok(a / b)
                        }
                    }
                    BinaryOp::Pow => {
                        let y = libm::pow(a, b);
                        if y.is_finite() {
                            Ok(y)
                        } else {
                            Err(ExprError::Domain { op: "pow", arg: a })
                        }
                    }
                }
            }
        }
    }

    fn uses_var(&self, out: &mut [bool]) {
        match self {
            Node::Const(_) => {}
            Node::Var(i) => out[*i] = true,
            Node::Unary(_, a) => a.uses_var(out),
            Node::Binary(_, l, r) => {
                l.uses_var(out);
                r.uses_var(out);
            }
        }
    }

    /// Binding strength used by the printer; atoms are 5.
    fn level(&self) -> u8 {
        match self {
            Node::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => 3,
            Node::Const(_) | Node::Var(_) => 5,
            Node::Unary(UnaryOp::Neg, _) => 3,
            Node::Unary(UnaryOp::ExpM1, _) => 1,
            Node::Unary(..) => 5,
            Node::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
            Node::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
            Node::Binary(BinaryOp::Pow, ..) => 4,
        }
    }
}

/// A parsed expression together with the variable names it may reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    vars: Vec<String>,
}

impl Expr {
    /// Parses `text`, accepting only the identifiers in `vars` (plus the
    /// built-in functions and the constant `pi`).
    pub fn parse(text: &str, vars: &[&str]) -> Result<Expr, ExprError> {
        let tokens = lex(text)?;
        let mut p = Parser {
            tokens: &tokens,
            pos: 0,
            vars,
            end: text.len(),
        };
        let root = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(ExprError::Syntax {
                pos: t.pos,
                expected: "operator or end of input",
                found: t.kind.describe(),
            });
        }
        Ok(Expr {
            root: root.normalize(),
            vars: vars.iter().map(|v| v.to_string()).collect(),
        })
    }

    /// Builds an expression from a raw tree. Variable indices must be in
    /// range of `vars`.
    pub fn from_node(root: Node, vars: &[&str]) -> Expr {
        // panics on an out-of-range variable index
        root.uses_var(&mut alloc::vec![false; vars.len()]);
        Expr {
            root: root.normalize(),
            vars: vars.iter().map(|v| v.to_string()).collect(),
        }
    }

    pub fn constant(value: f64) -> Expr {
        Expr {
            root: Node::Const(value),
            vars: Vec::new(),
        }
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    /// True when the expression references the named variable.
    pub fn depends_on(&self, name: &str) -> bool {
        let mut used = alloc::vec![false; self.vars.len()];
        self.root.uses_var(&mut used);
        self.vars.iter().zip(used).any(|(v, u)| u && v == name)
    }

    /// Evaluates with positional bindings matching [`Expr::variables`].
    pub fn eval(&self, env: &[f64]) -> Result<f64, ExprError> {
        if env.len() < self.vars.len() {
            let mut used = alloc::vec![false; self.vars.len()];
            self.root.uses_var(&mut used);
            if let Some(i) = (env.len()..self.vars.len()).find(|&i| used[i]) {
                return Err(ExprError::MissingBinding {
                    name: self.vars[i].clone(),
                });
            }
            let mut padded = env.to_vec();
            padded.resize(self.vars.len(), 0.0);
            return self.root.eval(&padded);
        }
        self.root.eval(env)
    }

    /// Evaluates with bindings looked up by name.
    pub fn eval_map(&self, env: &BTreeMap<String, f64>) -> Result<f64, ExprError> {
        let mut used = alloc::vec![false; self.vars.len()];
        self.root.uses_var(&mut used);
        let mut values = Vec::with_capacity(self.vars.len());
        for (name, u) in self.vars.iter().zip(used) {
            match env.get(name) {
                Some(v) => values.push(*v),
                None if !u => values.push(0.0),
                None => return Err(ExprError::MissingBinding { name: name.clone() }),
            }
        }
        self.root.eval(&values)
    }

    /// Evaluates a single-variable expression and requires a strictly
    /// positive, finite result.
    pub fn eval_positive(&self, at: f64) -> Result<f64, ExprError> {
        let v = self.eval(&[at])?;
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Positivity {
                expr: self.to_string(),
                at,
                value: v,
            })
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(f, &self.root, &self.vars)
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, n: &Node, vars: &[String], min_level: u8) -> fmt::Result {
    if n.level() < min_level {
        f.write_str("(")?;
        write_node(f, n, vars)?;
        f.write_str(")")
    } else {
        write_node(f, n, vars)
    }
}

fn write_node(f: &mut fmt::Formatter<'_>, n: &Node, vars: &[String]) -> fmt::Result {
    match n {
        Node::Const(c) => {
            if n.level() == 3 {
                write!(f, "-{:?}", -c)
            } else {
                write!(f, "{:?}", c)
            }
        }
        Node::Var(i) => f.write_str(&vars[*i]),
        Node::Unary(UnaryOp::Neg, a) => {
            f.write_str("-")?;
            write_child(f, a, vars, 3)
        }
        Node::Unary(UnaryOp::ExpM1, a) => {
            f.write_str("exp(")?;
            write_node(f, a, vars)?;
            f.write_str(")-1.0")
        }
        Node::Unary(UnaryOp::Ln1p, a) => {
            f.write_str("ln(1.0+")?;
            write_child(f, a, vars, 2)?;
            f.write_str(")")
        }
        Node::Unary(op, a) => {
            let name = FUNCTIONS
                .iter()
                .find(|(_, o)| o == op)
                .map(|(n, _)| *n)
                .unwrap_or("?");
            write!(f, "{}(", name)?;
            write_node(f, a, vars)?;
            f.write_str(")")
        }
        Node::Binary(op, l, r) => {
            let (sym, left_min, right_min) = match op {
                BinaryOp::Add => ("+", 1, 2),
                BinaryOp::Sub => ("-", 1, 2),
                BinaryOp::Mul => ("*", 2, 3),
                BinaryOp::Div => ("/", 2, 3),
                BinaryOp::Pow => ("^", 5, 3),
            };
            write_child(f, l, vars, left_min)?;
            f.write_str(sym)?;
            write_child(f, r, vars, right_min)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Number(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Number(v) => alloc::format!("number {}", v),
            TokenKind::Ident(s) => alloc::format!("identifier `{}`", s),
            TokenKind::Plus => "'+'".into(),
            TokenKind::Minus => "'-'".into(),
            TokenKind::Star => "'*'".into(),
            TokenKind::Slash => "'/'".into(),
            TokenKind::Caret => "'^'".into(),
            TokenKind::LParen => "'('".into(),
            TokenKind::RParen => "')'".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        let kind = match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => TokenKind::Plus,
            b'-' => TokenKind::Minus,
            b'*' => TokenKind::Star,
            b'/' => TokenKind::Slash,
            b'^' => TokenKind::Caret,
            b'(' => TokenKind::LParen,
            b')' => TokenKind::RParen,
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let s = &text[start..i];
                let v: f64 = s.parse().map_err(|_| ExprError::Syntax {
                    pos: start,
                    expected: "number",
                    found: s.to_string(),
                })?;
                out.push(Token {
                    kind: TokenKind::Number(v),
                    pos: start,
                });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push(Token {
                    kind: TokenKind::Ident(text[start..i].to_string()),
                    pos: start,
                });
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ExprError::Syntax {
                    pos: start,
                    expected: "token",
                    found: alloc::format!("'{}'", ch),
                });
            }
        };
        out.push(Token { kind, pos: start });
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    vars: &'a [&'a str],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next_is(&self, k: &TokenKind) -> bool {
        matches!(self.peek(), Some(t) if &t.kind == k)
    }

    fn fail<T>(&self, expected: &'static str) -> Result<T, ExprError> {
        match self.peek() {
            Some(t) => Err(ExprError::Syntax {
                pos: t.pos,
                expected,
                found: t.kind.describe(),
            }),
            None => Err(ExprError::Syntax {
                pos: self.end,
                expected,
                found: "end of input".into(),
            }),
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Plus) => BinaryOp::Add,
                Some(TokenKind::Minus) => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Star) => BinaryOp::Mul,
                Some(TokenKind::Slash) => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.next_is(&TokenKind::Minus) {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Node::Unary(UnaryOp::Neg, Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.next_is(&TokenKind::Caret) {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Node::Binary(BinaryOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        const EXPECTED: &str = "number, identifier, '(' or '-'";
        let Some(tok) = self.peek().cloned() else {
            return self.fail(EXPECTED);
        };
        match tok.kind {
            TokenKind::Number(v) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            TokenKind::LParen => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.next_is(&TokenKind::RParen) {
                    return self.fail("')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            TokenKind::Ident(name) => {
                self.pos += 1;
                if self.next_is(&TokenKind::LParen) {
                    let Some(op) = FUNCTIONS.iter().find(|(n, _)| *n == name).map(|(_, o)| *o) else {
                        return Err(ExprError::UnknownIdentifier { name, pos: tok.pos });
                    };
                    self.pos += 1;
                    let arg = self.expr()?;
                    if !self.next_is(&TokenKind::RParen) {
                        return self.fail("')'");
                    }
                    self.pos += 1;
                    return Ok(Node::Unary(op, Box::new(arg)));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                if let Some((_, c)) = CONSTANTS.iter().find(|(n, _)| *n == name) {
                    return Ok(Node::Const(*c));
                }
                Err(ExprError::UnknownIdentifier { name, pos: tok.pos })
            }
            _ => self.fail(EXPECTED),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Expr {
        Expr::parse(s, &["eps", "x", "t"]).unwrap()
    }

    fn ev(s: &str, eps: f64) -> f64 {
        p(s).eval(&[eps, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn parses_call_with_multiplication() {
        let e = p("2*sqrt(eps)");
        assert_eq!(
            e.root(),
            &Node::Binary(
                BinaryOp::Mul,
                Box::new(Node::Const(2.0)),
                Box::new(Node::Unary(UnaryOp::Sqrt, Box::new(Node::Var(0))))
            )
        );
    }

    #[test]
    fn slow_scale_of_the_worked_example() {
        let e = p("eps^3*ln(1+1/eps)");
        let eps: f64 = 0.01;
        let expected = eps.powi(3) * (1.0 + 1.0 / eps).ln();
        assert!((e.eval(&[eps]).unwrap() - expected).abs() < 1e-18);
    }

    #[test]
    fn double_star_is_rejected_at_second_star() {
        let err = Expr::parse("2**eps", &["eps"]).unwrap_err();
        match err {
            ExprError::Syntax { pos, .. } => assert_eq!(pos, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn implicit_multiplication_is_rejected() {
        assert!(matches!(
            Expr::parse("2eps", &["eps"]),
            Err(ExprError::Syntax { pos: 1, .. })
        ));
    }

    #[test]
    fn unknown_names() {
        assert!(matches!(
            Expr::parse("foo+1", &["eps"]),
            Err(ExprError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("tan(eps)", &["eps"]),
            Err(ExprError::UnknownIdentifier { .. })
        ));
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("-2^2", 0.0), -4.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("8/4/2", 0.0), 1.0);
        assert_eq!(ev("1-2-3", 0.0), -4.0);
        assert_eq!(ev("-3*2", 0.0), -6.0);
        assert_eq!(ev("2*(1+eps)", 1.0), 4.0);
    }

    #[test]
    fn evaluation_examples() {
        assert_eq!(ev("eps^2", 0.1), 0.1f64 * 0.1);
        assert!((ev("exp(eps)-1", 1.0) - 1.718281828459045).abs() < 1e-15);
        assert!((ev("ln(1+eps^2)", 1.0) - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn fused_kernels_avoid_cancellation() {
        assert!(matches!(p("exp(eps)-1").root(), Node::Unary(UnaryOp::ExpM1, _)));
        assert!(matches!(p("ln(eps^2+1)").root(), Node::Unary(UnaryOp::Ln1p, _)));
        let tiny = 1e-13;
        assert!((ev("exp(eps)-1", tiny) / tiny - 1.0).abs() < 1e-12);
        assert!(ev("ln(1+eps^2)", tiny) > 0.0);
    }

    #[test]
    fn domain_errors() {
        let e = |s: &str| p(s).eval(&[0.0, 0.0, 0.0]).unwrap_err();
        assert!(matches!(e("ln(eps)"), ExprError::Domain { op: "ln", .. }));
        assert!(matches!(e("sqrt(eps-1)"), ExprError::Domain { op: "sqrt", .. }));
        assert!(matches!(e("1/eps"), ExprError::Domain { op: "division", .. }));
        assert!(matches!(e("10^1000"), ExprError::Domain { op: "pow", .. }));
    }

    #[test]
    fn missing_bindings() {
        let e = p("eps+t");
        assert!(matches!(e.eval(&[1.0]), Err(ExprError::MissingBinding { .. })));
        let mut env = BTreeMap::new();
        env.insert("eps".to_string(), 1.0);
        assert!(matches!(e.eval_map(&env), Err(ExprError::MissingBinding { .. })));
        env.insert("t".to_string(), 2.0);
        assert_eq!(e.eval_map(&env).unwrap(), 3.0);
        // unused trailing variables need no binding
        assert_eq!(p("eps").eval(&[2.0]).unwrap(), 2.0);
    }

    #[test]
    fn positivity_guard() {
        assert!(p("eps-0.5").eval_positive(0.1).is_err());
        assert_eq!(p("eps").eval_positive(0.25).unwrap(), 0.25);
    }

    #[test]
    fn printing_round_trips() {
        for s in [
            "2*sqrt(eps)",
            "eps^3*ln(1+1/eps)",
            "exp(eps)-1",
            "-(eps+1)*2",
            "(-2)^eps",
            "eps-(x-t)",
            "-eps^2",
            "2^3^2",
            "ln(1+(eps-x))",
            "(exp(eps)-1)*x",
            "x/(eps*t)",
        ] {
            let a = p(s);
            let b = p(&a.to_string());
            assert_eq!(a, b, "{s} printed as {a}");
        }
    }

    #[test]
    fn pi_constant_and_trig() {
        assert!((p("2+sin(2*pi*x)").eval(&[0.0, 0.25, 0.0]).unwrap() - 3.0).abs() < 1e-15);
        assert!(p("cos(pi*x)").depends_on("x"));
        assert!(!p("cos(pi*x)").depends_on("t"));
    }
}
