//! Scalar expression language used to describe nominal models, error bounds and
//! Lyapunov candidates.
//!
//! Grammar, from loosest to tightest binding:
//!
//! | level | operators            | associativity |
//! |-------|----------------------|---------------|
//! | 1     | `+` `-` (binary)     | left          |
//! | 2     | `*` `/`              | left          |
//! | 3     | `-` (unary)          | prefix        |
//! | 4     | `^`                  | right         |
//! | 5     | literals, variables, `f(expr)`, `(expr)` | |
//!
//! So `-x1^2` is `-(x1^2)` and `2^3^2` is `2^(3^2)`. The right operand of `^`
//! may itself carry a unary minus (`2^-1`). Implicit multiplication is not
//! accepted. Functions: `sin cos tan exp log sqrt abs tanh`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("context binds {got} values but the expression declares {expected} variables")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
    Tanh,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
            Func::Tanh => "tanh",
        }
    }

    fn apply(self, a: f64) -> Result<f64, ExprError> {
        match self {
            Func::Log if a <= 0.0 => Err(ExprError::Domain(format!("log of non-positive value {a}"))),
            Func::Sqrt if a < 0.0 => Err(ExprError::Domain(format!("sqrt of negative value {a}"))),
            Func::Sin => Ok(a.sin()),
            Func::Cos => Ok(a.cos()),
            Func::Tan => Ok(a.tan()),
            Func::Exp => Ok(a.exp()),
            Func::Log => Ok(a.ln()),
            Func::Sqrt => Ok(a.sqrt()),
            Func::Abs => Ok(a.abs()),
            Func::Tanh => Ok(a.tanh()),
        }
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

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Const(f64),
    /// Index into the owning expression's variable list.
    Var(usize),
    Neg(Box<Node>),
    Call(Func, Box<Node>),
    Binary(BinOp, Box<Node>, Box<Node>),
}

/// A parsed expression together with the variable list it was validated against.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    root: Node,
    vars: Vec<String>,
    source: String,
}

/// Ordered variable bindings for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalContext {
    names: Vec<String>,
    values: Vec<f64>,
}

impl EvalContext {
    pub fn new<S: AsRef<str>>(names: &[S], values: &[f64]) -> Result<Self, ExprError> {
        if names.len() != values.len() {
            return Err(ExprError::Arity { expected: names.len(), got: values.len() });
        }
        Ok(Self {
            names: names.iter().map(|s| s.as_ref().to_string()).collect(),
            values: values.to_vec(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

/// Parses `text` against the declared variable names.
pub fn parse<S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Expr, ExprError> {
    let vars: Vec<String> = vars.iter().map(|s| s.as_ref().to_string()).collect();
    if text.trim().is_empty() {
        return Err(ExprError::Syntax { pos: 0, msg: "empty expression".into() });
    }
    let tokens = lex(text)?;
    let mut p = Parser { tokens: &tokens, at: 0, vars: &vars, end: text.len() };
    let root = p.sum()?;
    if let Some(tok) = p.peek() {
        return Err(ExprError::Syntax { pos: tok.pos, msg: format!("unexpected {}", tok.kind) });
    }
    Ok(Expr { root, vars, source: text.to_string() })
}

/// Evaluates with bindings looked up by name; the context must bind exactly the
/// expression's declared variables.
pub fn evaluate(expr: &Expr, ctx: &EvalContext) -> Result<f64, ExprError> {
    if ctx.values.len() != expr.vars.len() {
        return Err(ExprError::Arity { expected: expr.vars.len(), got: ctx.values.len() });
    }
    if ctx.names == expr.vars {
        return expr.eval(&ctx.values);
    }
    let mut ordered = Vec::with_capacity(expr.vars.len());
    for v in &expr.vars {
        let i = ctx
            .names
            .iter()
            .position(|n| n == v)
            .ok_or_else(|| ExprError::UnknownVariable(v.clone()))?;
        ordered.push(ctx.values[i]);
    }
    expr.eval(&ordered)
}

impl Expr {
    /// Positional evaluation: `values[i]` binds the i-th declared variable.
    pub fn eval(&self, values: &[f64]) -> Result<f64, ExprError> {
        if values.len() != self.vars.len() {
            return Err(ExprError::Arity { expected: self.vars.len(), got: values.len() });
        }
        eval_node(&self.root, values)
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// The text this expression was parsed from.
    pub fn source(&self) -> &str {
        &self.source
    }
}

fn eval_node(node: &Node, values: &[f64]) -> Result<f64, ExprError> {
    let v = match node {
        Node::Const(c) => *c,
        Node::Var(i) => values[*i],
        Node::Neg(a) => -eval_node(a, values)?,
        Node::Call(f, a) => f.apply(eval_node(a, values)?)?,
        Node::Binary(op, a, b) => {
            let a = eval_node(a, values)?;
            let b = eval_node(b, values)?;
            match op {
                BinOp::Add => a + b,
                BinOp::Sub => a - b,
                BinOp::Mul => a * b,
                BinOp::Div => {
                    if b == 0.0 {
                        return Err(ExprError::Domain(format!("division of {a} by zero")));
                    }
                    a / b
                }
                BinOp::Pow => pow(a, b)?,
            }
        }
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ExprError::Domain(format!("non-finite intermediate result {v}")))
    }
}

fn pow(base: f64, exp: f64) -> Result<f64, ExprError> {
    if exp.fract() == 0.0 && exp.abs() <= i32::MAX as f64 {
        if base == 0.0 && exp < 0.0 {
            return Err(ExprError::Domain("zero raised to a negative power".into()));
        }
        return Ok(base.powi(exp as i32));
    }
    if base < 0.0 {
        return Err(ExprError::Domain(format!("negative base {base} with non-integer exponent {exp}")));
    }
    Ok(base.powf(exp))
}

/// Fully parenthesized; reparsing the output reproduces the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_node(&self.root, &self.vars, f)
    }
}

fn write_node(node: &Node, vars: &[String], f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match node {
        // `{:?}` is the shortest representation that round-trips exactly.
        Node::Const(c) => write!(f, "{c:?}"),
        Node::Var(i) => f.write_str(&vars[*i]),
        Node::Neg(a) => {
            f.write_str("(-")?;
            write_node(a, vars, f)?;
            f.write_str(")")
        }
        Node::Call(func, a) => {
            write!(f, "{}(", func.name())?;
            write_node(a, vars, f)?;
            f.write_str(")")
        }
        Node::Binary(op, a, b) => {
            f.write_str("(")?;
            write_node(a, vars, f)?;
            write!(f, " {} ", op.symbol())?;
            write_node(b, vars, f)?;
            f.write_str(")")
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "number {v}"),
            TokKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokKind::Op(c) => write!(f, "`{c}`"),
            TokKind::LParen => f.write_str("`(`"),
            TokKind::RParen => f.write_str("`)`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn lex(text: &str) -> Result<Vec<Token>, ExprError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || c == '.' {
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
            let lit = &text[start..i];
            let v: f64 = lit
                .parse()
                .map_err(|_| ExprError::Syntax { pos: start, msg: format!("malformed number `{lit}`") })?;
            out.push(Token { kind: TokKind::Num(v), pos: start });
            if i < bytes.len() && (bytes[i].is_ascii_alphabetic() || bytes[i] == b'_') {
                return Err(ExprError::Syntax {
                    pos: i,
                    msg: "implicit multiplication is not supported; use `*`".into(),
                });
            }
        } else if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { kind: TokKind::Ident(text[start..i].to_string()), pos: start });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokKind::Op(c),
                '(' => TokKind::LParen,
                ')' => TokKind::RParen,
                _ => {
                    return Err(ExprError::Syntax { pos: start, msg: format!("unexpected character `{c}`") })
                }
            };
            i += c.len_utf8();
            out.push(Token { kind, pos: start });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: &'a [Token],
    at: usize,
    vars: &'a [String],
    end: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token { kind: TokKind::Op(c), .. }) => Some(*c),
            _ => None,
        }
    }

    fn pos(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn sum(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.product()?;
        while let Some(c @ ('+' | '-')) = self.peek_op() {
            self.at += 1;
            let rhs = self.product()?;
            let op = if c == '+' { BinOp::Add } else { BinOp::Sub };
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn product(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        while let Some(c @ ('*' | '/')) = self.peek_op() {
            self.at += 1;
            let rhs = self.unary()?;
            let op = if c == '*' { BinOp::Mul } else { BinOp::Div };
            lhs = Node::Binary(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        if self.peek_op() == Some('-') {
            self.at += 1;
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek_op() == Some('^') {
            self.at += 1;
            let exp = self.unary()?;
            return Ok(Node::Binary(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        let pos = self.pos();
        let Some(tok) = self.peek().cloned() else {
            return Err(ExprError::Syntax { pos, msg: "unexpected end of expression".into() });
        };
        self.at += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Const(v)),
            TokKind::LParen => {
                let inner = self.sum()?;
                self.expect_rparen(pos)?;
                Ok(inner)
            }
            TokKind::Ident(name) => {
                if matches!(self.peek(), Some(Token { kind: TokKind::LParen, .. })) {
                    let func = Func::from_name(&name).ok_or(ExprError::UnknownFunction(name))?;
                    self.at += 1;
                    let arg = self.sum()?;
                    self.expect_rparen(pos)?;
                    return Ok(Node::Call(func, Box::new(arg)));
                }
                match self.vars.iter().position(|v| *v == name) {
                    Some(i) => Ok(Node::Var(i)),
                    None => Err(ExprError::UnknownVariable(name)),
                }
            }
            other => Err(ExprError::Syntax { pos: tok.pos, msg: format!("unexpected {other}") }),
        }
    }

    fn expect_rparen(&mut self, open: usize) -> Result<(), ExprError> {
        match self.peek() {
            Some(Token { kind: TokKind::RParen, .. }) => {
                self.at += 1;
                Ok(())
            }
            _ => Err(ExprError::Syntax {
                pos: self.pos(),
                msg: format!("missing `)` for `(` at position {open}"),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval_const(text: &str) -> f64 {
        parse::<&str>(text, &[]).unwrap().eval(&[]).unwrap()
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(eval_const("2+3*4^2"), 50.0);
        assert_eq!(eval_const("2^3^2"), 512.0);
        assert_eq!(eval_const("-2^2"), -4.0);
        assert_eq!(eval_const("10-4-3"), 3.0);
        assert_eq!(eval_const("24/4/3"), 2.0);
        assert_eq!(eval_const("(2+3)*4"), 20.0);
        assert_eq!(eval_const("2^-1"), 0.5);
        assert_eq!(eval_const("--3"), 3.0);
        assert_eq!(eval_const("1.5e1 + .5"), 15.5);
    }

    #[test]
    fn example_models_vanish_at_origin() {
        let vars = ["x1", "u1"];
        let fhat = parse("-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1", &vars).unwrap();
        let delta = parse("1 - exp(-2*(x1^2 + u1^2))", &vars).unwrap();
        assert_eq!(fhat.eval(&[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(delta.eval(&[0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn example_values() {
        let vars = ["x1", "u1"];
        let fhat = parse("-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1", &vars).unwrap();
        let delta = parse("1 - exp(-2*(x1^2 + u1^2))", &vars).unwrap();
        // High-precision reference values: -sin(0.1) - 0.001 - 0.01 - 0.0004 + 0.02
        // and 1 - exp(-0.0058).
        assert!((fhat.eval(&[0.05, 0.02]).unwrap() - -0.091233416646828152).abs() < 1e-15);
        assert!((delta.eval(&[0.05, 0.02]).unwrap() - 0.0057832124715692436).abs() < 1e-15);
        let sq = parse("x1^2", &["x1"]).unwrap();
        assert!((sq.eval(&[-0.06]).unwrap() - 0.0036).abs() < 1e-15);
    }

    #[test]
    fn named_context_reorders() {
        let e = parse("x1 - u1", &["x1", "u1"]).unwrap();
        let ctx = EvalContext::new(&["u1", "x1"], &[1.0, 5.0]).unwrap();
        assert_eq!(evaluate(&e, &ctx).unwrap(), 4.0);
        let bad = EvalContext::new(&["u1"], &[1.0]).unwrap();
        assert!(matches!(evaluate(&e, &bad), Err(ExprError::Arity { .. })));
    }

    #[test]
    fn syntax_errors_carry_position() {
        match parse::<&str>("2 + * 3", &[]) {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 4),
            other => panic!("{other:?}"),
        }
        match parse::<&str>("(1 + 2", &[]) {
            Err(ExprError::Syntax { pos, .. }) => assert_eq!(pos, 6),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse::<&str>("2x", &[]), Err(ExprError::Syntax { pos: 1, .. })));
        assert!(matches!(parse::<&str>("1 $ 2", &[]), Err(ExprError::Syntax { pos: 2, .. })));
        assert!(matches!(parse::<&str>("   ", &[]), Err(ExprError::Syntax { .. })));
        assert!(matches!(parse::<&str>("1 2", &[]), Err(ExprError::Syntax { pos: 2, .. })));
    }

    #[test]
    fn unknown_names_are_reported() {
        assert_eq!(parse("x1 + x2", &["x1", "u1"]), Err(ExprError::UnknownVariable("x2".into())));
        assert_eq!(parse("erf(x1)", &["x1"]), Err(ExprError::UnknownFunction("erf".into())));
    }

    #[test]
    fn domain_errors_are_reported() {
        let e = parse("sqrt(x1)", &["x1"]).unwrap();
        assert!(matches!(e.eval(&[-1.0]), Err(ExprError::Domain(_))));
        let e = parse("log(x1)", &["x1"]).unwrap();
        assert!(matches!(e.eval(&[-1.0]), Err(ExprError::Domain(_))));
        assert!(matches!(e.eval(&[0.0]), Err(ExprError::Domain(_))));
        let e = parse("x1^0.5", &["x1"]).unwrap();
        assert!(matches!(e.eval(&[-4.0]), Err(ExprError::Domain(_))));
        assert_eq!(e.eval(&[4.0]).unwrap(), 2.0);
        let e = parse("x1^3", &["x1"]).unwrap();
        assert_eq!(e.eval(&[-2.0]).unwrap(), -8.0);
        let e = parse("1/x1", &["x1"]).unwrap();
        assert!(matches!(e.eval(&[0.0]), Err(ExprError::Domain(_))));
        let e = parse("exp(x1)", &["x1"]).unwrap();
        assert!(matches!(e.eval(&[1000.0]), Err(ExprError::Domain(_))));
    }

    #[test]
    fn display_reparses_to_same_tree() {
        let vars = ["x1", "u1"];
        for text in [
            "-sin(2*x1) - x1*u1 - 0.2*x1 - u1^2 + u1",
            "1 - exp(-2*(x1^2 + u1^2))",
            "-x1^-2^u1 / abs(tanh(x1)) * 1e-7",
        ] {
            let e = parse(text, &vars).unwrap();
            let again = parse(&e.to_string(), &vars).unwrap();
            assert_eq!(e.root(), again.root(), "{text}");
        }
    }
}
