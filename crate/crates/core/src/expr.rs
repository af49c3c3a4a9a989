//! Closed-form scalar fields parsed from expression strings.
//!
//! The grammar is deliberately small: numeric literals, `pi`, variables
//! `x1`..`xn`, binary `+ - * / ^`, unary minus, and the functions `sin`,
//! `cos`, `exp`. Angles are radians. Precedence is `^` above unary minus
//! above `* /` above `+ -`; equal precedence associates left except `^`,
//! which associates right.

use crate::error::{Error, Result};
use crate::grid::TorusGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sin,
    Cos,
    Exp,
}

impl UnaryFn {
    fn name(self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Exp => "exp",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            UnaryFn::Sin => v.sin(),
            UnaryFn::Cos => v.cos(),
            UnaryFn::Exp => v.exp(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Pi,
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(UnaryFn, Box<Node>),
}

/// A parsed, immutable expression over `x1..xn`; evaluation is reentrant.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldExpr {
    root: Node,
    n: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn tokens(mut self) -> Result<Vec<(Tok, usize)>> {
        let mut out = Vec::new();
        while self.pos < self.src.len() {
            let c = self.src[self.pos];
            let at = self.pos;
            match c {
                b' ' | b'\t' | b'\n' | b'\r' => {
                    self.pos += 1;
                }
                b'+' => {
                    out.push((Tok::Plus, at));
                    self.pos += 1;
                }
                b'-' => {
                    out.push((Tok::Minus, at));
                    self.pos += 1;
                }
                b'*' => {
                    out.push((Tok::Star, at));
                    self.pos += 1;
                }
                b'/' => {
                    out.push((Tok::Slash, at));
                    self.pos += 1;
                }
                b'^' => {
                    out.push((Tok::Caret, at));
                    self.pos += 1;
                }
                b'(' => {
                    out.push((Tok::LParen, at));
                    self.pos += 1;
                }
                b')' => {
                    out.push((Tok::RParen, at));
                    self.pos += 1;
                }
                b',' => {
                    out.push((Tok::Comma, at));
                    self.pos += 1;
                }
                b'0'..=b'9' | b'.' => {
                    let start = self.pos;
                    while self.pos < self.src.len()
                        && matches!(self.src[self.pos], b'0'..=b'9' | b'.')
                    {
                        self.pos += 1;
                    }
                    // exponent part, e.g. 1.5e-3
                    if self.pos < self.src.len() && matches!(self.src[self.pos], b'e' | b'E') {
                        let mut p = self.pos + 1;
                        if p < self.src.len() && matches!(self.src[p], b'+' | b'-') {
                            p += 1;
                        }
                        if p < self.src.len() && self.src[p].is_ascii_digit() {
                            self.pos = p;
                            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit()
                            {
                                self.pos += 1;
                            }
                        }
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    let v: f64 = text.parse().map_err(|_| Error::SyntaxError {
                        offset: start,
                        message: format!("bad number `{text}`"),
                    })?;
                    out.push((Tok::Num(v), start));
                }
                b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                    let start = self.pos;
                    while self.pos < self.src.len()
                        && matches!(self.src[self.pos], b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'_')
                    {
                        self.pos += 1;
                    }
                    let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
                    out.push((Tok::Ident(text.to_string()), start));
                }
                other => {
                    return Err(Error::SyntaxError {
                        offset: at,
                        message: format!("unexpected character `{}`", other as char),
                    });
                }
            }
        }
        Ok(out)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    cursor: usize,
    end: usize,
    n: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.cursor).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks
            .get(self.cursor)
            .map(|&(_, at)| at)
            .unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.cursor).map(|(t, _)| t.clone());
        if t.is_some() {
            self.cursor += 1;
        }
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.cursor += 1;
            Ok(())
        } else {
            Err(Error::SyntaxError {
                offset: self.offset(),
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.cursor += 1;
                    let rhs = self.term()?;
                    lhs = Node::Add(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Minus) => {
                    self.cursor += 1;
                    let rhs = self.term()?;
                    lhs = Node::Sub(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(Tok::Star) => {
                    self.cursor += 1;
                    let rhs = self.unary()?;
                    lhs = Node::Mul(Box::new(lhs), Box::new(rhs));
                }
                Some(Tok::Slash) => {
                    self.cursor += 1;
                    let rhs = self.unary()?;
                    lhs = Node::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.peek() == Some(&Tok::Minus) {
            self.cursor += 1;
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.cursor += 1;
            // right-associative; the exponent may carry a unary minus
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let at = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Node::Num(v)),
            Some(Tok::LParen) => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Some(Tok::Ident(name)) => {
                if self.peek() == Some(&Tok::LParen) {
                    let func = match name.as_str() {
                        "sin" => UnaryFn::Sin,
                        "cos" => UnaryFn::Cos,
                        "exp" => UnaryFn::Exp,
                        _ => return Err(Error::UnknownIdentifier { offset: at, name }),
                    };
                    self.cursor += 1; // consume '('
                    let mut args = vec![self.expr()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.cursor += 1;
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    if args.len() != 1 {
                        return Err(Error::ArityError {
                            name: func.name().into(),
                            expected: 1,
                            got: args.len(),
                        });
                    }
                    Ok(Node::Call(func, Box::new(args.pop().unwrap())))
                } else if name == "pi" {
                    Ok(Node::Pi)
                } else if let Some(rest) = name.strip_prefix('x') {
                    match rest.parse::<usize>() {
                        Ok(k) if (1..=self.n).contains(&k) => Ok(Node::Var(k - 1)),
                        _ => Err(Error::UnknownIdentifier { offset: at, name }),
                    }
                } else {
                    Err(Error::UnknownIdentifier { offset: at, name })
                }
            }
            _ => Err(Error::SyntaxError {
                offset: at,
                message: "expected expression".into(),
            }),
        }
    }
}

/// Parse `src` as a field over `x1..xn`.
pub fn parse_field(src: &str, n: usize) -> Result<FieldExpr> {
    if src.trim().is_empty() {
        return Err(Error::SyntaxError {
            offset: 0,
            message: "empty expression".into(),
        });
    }
    let toks = Lexer::new(src).tokens()?;
    let mut p = Parser {
        toks,
        cursor: 0,
        end: src.len(),
        n,
    };
    let root = p.expr()?;
    if p.cursor != p.toks.len() {
        return Err(Error::SyntaxError {
            offset: p.offset(),
            message: "trailing input".into(),
        });
    }
    Ok(FieldExpr { root, n })
}

impl FieldExpr {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        eval_node(&self.root, x)
    }

    /// Canonical text form; `parse_field(print(..))` evaluates identically.
    pub fn print(&self) -> String {
        print_node(&self.root, 0)
    }
}

fn eval_node(node: &Node, x: &[f64]) -> f64 {
    match node {
        Node::Num(v) => *v,
        Node::Pi => std::f64::consts::PI,
        Node::Var(k) => x[*k],
        Node::Neg(a) => -eval_node(a, x),
        Node::Add(a, b) => eval_node(a, x) + eval_node(b, x),
        Node::Sub(a, b) => eval_node(a, x) - eval_node(b, x),
        Node::Mul(a, b) => eval_node(a, x) * eval_node(b, x),
        Node::Div(a, b) => eval_node(a, x) / eval_node(b, x),
        Node::Pow(a, b) => eval_node(a, x).powf(eval_node(b, x)),
        Node::Call(f, a) => f.apply(eval_node(a, x)),
    }
}

// parent precedence levels: 0 add, 1 mul, 2 unary, 3 pow
fn print_node(node: &Node, parent: u8) -> String {
    let (s, prec) = match node {
        Node::Num(v) => (format!("{v:?}"), 4),
        Node::Pi => ("pi".to_string(), 4),
        Node::Var(k) => (format!("x{}", k + 1), 4),
        Node::Neg(a) => (format!("-{}", print_node(a, 2)), 2),
        Node::Add(a, b) => (
            format!("{} + {}", print_node(a, 0), print_node(b, 1)),
            0,
        ),
        Node::Sub(a, b) => (
            format!("{} - {}", print_node(a, 0), print_node(b, 1)),
            0,
        ),
        Node::Mul(a, b) => (
            format!("{}*{}", print_node(a, 1), print_node(b, 2)),
            1,
        ),
        Node::Div(a, b) => (
            format!("{}/{}", print_node(a, 1), print_node(b, 2)),
            1,
        ),
        Node::Pow(a, b) => (
            format!("{}^{}", print_node(a, 4), print_node(b, 2)),
            3,
        ),
        Node::Call(f, a) => (format!("{}({})", f.name(), print_node(a, 0)), 4),
    };
    if prec < parent {
        format!("({s})")
    } else {
        s
    }
}

/// Sampled periodicity check: true iff |fe(x+z) - fe(x)| <= tol at every
/// grid node for every unit shift z in {e_1, ..., e_n}. Sub-tolerance drift
/// is invisible to a sampled check by construction.
pub fn check_periodic(fe: &FieldExpr, grid: &TorusGrid, tol: f64) -> bool {
    let n = grid.dim();
    for f in 0..grid.node_count() {
        let x = grid.coords(f);
        let base = fe.eval(&x);
        for axis in 0..n {
            let mut y = x.clone();
            y[axis] += 1.0;
            if (fe.eval(&y) - base).abs() > tol {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use proptest::prelude::*;

    #[test]
    fn parses_and_evaluates() {
        let fe = parse_field("sin(2*pi*x1)", 2).unwrap();
        assert!((fe.eval(&[0.25, 0.0]) - 1.0).abs() <= 1e-15);
        let fe2 = parse_field("1 + 0.5*sin(2*pi*x1)", 2).unwrap();
        assert!((fe2.eval(&[0.75, 0.0]) - 0.5).abs() <= 1e-15);
    }

    #[test]
    fn syntax_error_offsets() {
        match parse_field("sin(", 2) {
            Err(Error::SyntaxError { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected syntax error, got {other:?}"),
        }
        assert!(matches!(
            parse_field("x3", 2),
            Err(Error::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            parse_field("sin(x1, x2)", 2),
            Err(Error::ArityError { .. })
        ));
        assert!(matches!(
            parse_field("foo(x1)", 2),
            Err(Error::UnknownIdentifier { .. })
        ));
        assert!(parse_field("", 2).is_err());
    }

    #[test]
    fn precedence_and_associativity() {
        // ^ binds tighter than unary minus, and is right-associative
        let fe = parse_field("-x1^2", 1).unwrap();
        assert_eq!(fe.eval(&[3.0]), -9.0);
        let fe2 = parse_field("2^3^2", 1).unwrap();
        assert_eq!(fe2.eval(&[0.0]), 512.0);
        let fe3 = parse_field("2 - 3 - 4", 1).unwrap();
        assert_eq!(fe3.eval(&[0.0]), -5.0);
        let fe4 = parse_field("12/3/2", 1).unwrap();
        assert_eq!(fe4.eval(&[0.0]), 2.0);
        let fe5 = parse_field("2^-1", 1).unwrap();
        assert_eq!(fe5.eval(&[0.0]), 0.5);
    }

    #[test]
    fn pythagorean_identity_on_grid() {
        let g = make_grid(2, 16).unwrap();
        let fe = parse_field("sin(x1)^2 + cos(x1)^2", 2).unwrap();
        for f in 0..g.node_count() {
            let x = g.coords(f);
            assert!((fe.eval(&x) - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn periodicity_check() {
        let g = make_grid(2, 16).unwrap();
        let s = parse_field("sin(2*pi*x1)", 2).unwrap();
        assert!(check_periodic(&s, &g, 1e-9));
        let lin = parse_field("x1", 2).unwrap();
        assert!(!check_periodic(&lin, &g, 1e-9));
        // sub-tolerance drift is not seen by a sampled check
        let drift = parse_field("sin(2*pi*x1) + 0.0000000001*x2", 2).unwrap();
        assert!(check_periodic(&drift, &g, 1e-6));
    }

    fn arb_expr_source() -> impl Strategy<Value = String> {
        let leaf = prop_oneof![
            (-9.0f64..9.0).prop_map(|v| format!("{v:.3}")),
            Just("pi".to_string()),
            Just("x1".to_string()),
            Just("x2".to_string()),
        ];
        leaf.prop_recursive(3, 24, 2, |inner| {
            prop_oneof![
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a})*({b})")),
                inner.clone().prop_map(|a| format!("sin({a})")),
                inner.clone().prop_map(|a| format!("cos({a})")),
                inner.prop_map(|a| format!("-({a})")),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_parse_round_trip(src in arb_expr_source(), px in -2.0f64..2.0, py in -2.0f64..2.0) {
            let fe = parse_field(&src, 2).unwrap();
            let printed = fe.print();
            let re = parse_field(&printed, 2).unwrap();
            let a = fe.eval(&[px, py]);
            let b = re.eval(&[px, py]);
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()), "{src} vs {printed}");
        }
    }
}
