//! Scalar expressions in the variables `t` (time) and `x` (position).
//!
//! Scenario files describe velocities, reaction coefficients, sources and
//! boundary data as strings like `"2*t-1"` or `"1+0.5*sin(6*x)"`. This
//! module parses them into a small AST and evaluates that AST exactly the
//! same way on every call, which is what keeps repeated simulation runs
//! bit-identical.
//!
//! Operator binding, loosest to tightest: `+ -`, then `* /`, then unary
//! minus, then `^`. `+ - * /` associate to the left, `^` to the right.
//! Because `^` binds tighter than unary minus, `-2^2` means `-(2^2)`.

use std::fmt;

/// One-argument builtin functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func1 {
    Sin,
    Cos,
    Exp,
    Sqrt,
    Abs,
}

/// Two-argument builtin functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func2 {
    Min,
    Max,
}

impl Func1 {
    fn name(self) -> &'static str {
        match self {
            Func1::Sin => "sin",
            Func1::Cos => "cos",
            Func1::Exp => "exp",
            Func1::Sqrt => "sqrt",
            Func1::Abs => "abs",
        }
    }
}

impl Func2 {
    fn name(self) -> &'static str {
        match self {
            Func2::Min => "min",
            Func2::Max => "max",
        }
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    /// The variable `t`.
    Time,
    /// The variable `x`.
    Pos,
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, Box<Expr>),
    Call1(Func1, Box<Expr>),
    Call2(Func2, Box<Expr>, Box<Expr>),
}

/// Why parsing stopped, and where.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("parse error at byte {offset}: {message}")]
pub struct ParseError {
    /// Byte offset into the source string at which the problem sits.
    pub offset: usize,
    pub message: String,
}

fn perr<T>(offset: usize, message: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        message: message.into(),
    })
}

/// Evaluation failure. Evaluation is total on its domain: anything that
/// would silently produce a NaN or infinity is reported as an error
/// instead.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("division by zero (denominator evaluated to 0)")]
    DivisionByZero,
    #[error("sqrt of negative value {0}")]
    SqrtOfNegative(f64),
    #[error("{base}^{exponent} is undefined (negative base, non-integer exponent)")]
    PowDomain { base: f64, exponent: f64 },
    #[error("`{op}` produced a non-finite value")]
    NonFinite { op: &'static str },
}

impl Expr {
    /// Evaluate at time `t` and position `x`.
    pub fn eval(&self, t: f64, x: f64) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Num(n) => *n,
            Expr::Time => t,
            Expr::Pos => x,
            Expr::Neg(e) => -e.eval(t, x)?,
            Expr::Add(a, b) => checked("+", a.eval(t, x)? + b.eval(t, x)?)?,
            Expr::Sub(a, b) => checked("-", a.eval(t, x)? - b.eval(t, x)?)?,
            Expr::Mul(a, b) => checked("*", a.eval(t, x)? * b.eval(t, x)?)?,
            Expr::Div(a, b) => {
                let den = b.eval(t, x)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                checked("/", a.eval(t, x)? / den)?
            }
            Expr::Pow(a, b) => {
                let base = a.eval(t, x)?;
                let exponent = b.eval(t, x)?;
                if base < 0.0 && exponent.fract() != 0.0 {
                    return Err(EvalError::PowDomain { base, exponent });
                }
                checked("^", base.powf(exponent))?
            }
            Expr::Call1(f, a) => {
                let v = a.eval(t, x)?;
                match f {
                    Func1::Sin => v.sin(),
                    Func1::Cos => v.cos(),
                    Func1::Exp => checked("exp", v.exp())?,
                    Func1::Sqrt => {
                        if v < 0.0 {
                            return Err(EvalError::SqrtOfNegative(v));
                        }
                        v.sqrt()
                    }
                    Func1::Abs => v.abs(),
                }
            }
            Expr::Call2(f, a, b) => {
                let va = a.eval(t, x)?;
                let vb = b.eval(t, x)?;
                match f {
                    Func2::Min => va.min(vb),
                    Func2::Max => va.max(vb),
                }
            }
        };
        Ok(v)
    }

    /// Does the value depend on `t`?
    pub fn depends_on_t(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Time))
    }

    /// Does the value depend on `x`?
    pub fn depends_on_x(&self) -> bool {
        self.any(&|e| matches!(e, Expr::Pos))
    }

    fn any(&self, pred: &dyn Fn(&Expr) -> bool) -> bool {
        if pred(self) {
            return true;
        }
        match self {
            Expr::Num(_) | Expr::Time | Expr::Pos => false,
            Expr::Neg(a) | Expr::Call1(_, a) => a.any(pred),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Pow(a, b)
            | Expr::Call2(_, a, b) => a.any(pred) || b.any(pred),
        }
    }

    // Precedence levels used by the printer. Atoms are 5; a negative
    // literal prints with a leading sign, so as a sub-expression it binds
    // like unary minus.
    fn prec(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Num(n) if n.is_sign_negative() => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min: u8) -> fmt::Result {
        let p = self.prec();
        if p < min {
            write!(f, "(")?;
        }
        match self {
            Expr::Num(n) => write!(f, "{:?}", n)?,
            Expr::Time => write!(f, "t")?,
            Expr::Pos => write!(f, "x")?,
            Expr::Neg(a) => {
                write!(f, "-")?;
                a.fmt_prec(f, 3)?;
            }
            Expr::Add(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, "+")?;
                b.fmt_prec(f, 2)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, 1)?;
                write!(f, "-")?;
                b.fmt_prec(f, 2)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "*")?;
                b.fmt_prec(f, 3)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, 2)?;
                write!(f, "/")?;
                b.fmt_prec(f, 3)?;
            }
            Expr::Pow(a, b) => {
                a.fmt_prec(f, 5)?;
                write!(f, "^")?;
                b.fmt_prec(f, 4)?;
            }
            Expr::Call1(func, a) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 1)?;
                write!(f, ")")?;
            }
            Expr::Call2(func, a, b) => {
                write!(f, "{}(", func.name())?;
                a.fmt_prec(f, 1)?;
                write!(f, ",")?;
                b.fmt_prec(f, 1)?;
                write!(f, ")")?;
            }
        }
        if p < min {
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Printing produces a string that parses back to an expression with the
/// same value everywhere (the tree shape may differ, e.g. a negative
/// literal comes back as a negated positive one).
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

fn checked(op: &'static str, v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite { op })
    }
}

/// Parse a source string.
pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let mut p = Parser {
        src: src.as_bytes(),
        pos: 0,
    };
    p.skip_ws();
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return perr(
            p.pos,
            format!("unexpected character `{}`", p.src[p.pos] as char),
        );
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && (self.src[self.pos] as char).is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            self.skip_ws();
            true
        } else {
            false
        }
    }

    // expr := term (('+' | '-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat(b'+') {
                let rhs = self.term()?;
                lhs = Expr::Add(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'-') {
                let rhs = self.term()?;
                lhs = Expr::Sub(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    // term := unary (('*' | '/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat(b'*') {
                let rhs = self.unary()?;
                lhs = Expr::Mul(Box::new(lhs), Box::new(rhs));
            } else if self.eat(b'/') {
                let rhs = self.unary()?;
                lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
            } else {
                return Ok(lhs);
            }
        }
    }

    // unary := '-' unary | power
    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            Ok(Expr::Neg(Box::new(inner)))
        } else {
            self.power()
        }
    }

    // power := atom ('^' unary)?     (right-associative via recursion)
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            Ok(Expr::Pow(Box::new(base), Box::new(exponent)))
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(c) = self.peek() else {
            return perr(self.pos, "unexpected end of input");
        };
        if c == b'(' {
            self.pos += 1;
            self.skip_ws();
            let inner = self.expr()?;
            if !self.eat(b')') {
                return perr(self.pos, "expected `)`");
            }
            return Ok(inner);
        }
        if c.is_ascii_digit() {
            return self.number();
        }
        if c.is_ascii_alphabetic() {
            return self.identifier();
        }
        perr(self.pos, format!("unexpected character `{}`", c as char))
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.peek().is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.peek() == Some(b'.') {
            self.pos += 1;
            if !self.peek().is_some_and(|c| c.is_ascii_digit()) {
                return perr(self.pos, "expected digits after decimal point");
            }
            while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            // Only treat as an exponent when digits (optionally signed)
            // follow; otherwise the `e` starts an identifier like `exp`.
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        let value: f64 = match text.parse() {
            Ok(v) => v,
            Err(_) => return perr(start, format!("invalid number `{text}`")),
        };
        self.skip_ws();
        Ok(Expr::Num(value))
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|c| c.is_ascii_alphanumeric() || c == b'_')
        {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        self.skip_ws();
        match name {
            "t" => return Ok(Expr::Time),
            "x" => return Ok(Expr::Pos),
            _ => {}
        }
        let f1 = match name {
            "sin" => Some(Func1::Sin),
            "cos" => Some(Func1::Cos),
            "exp" => Some(Func1::Exp),
            "sqrt" => Some(Func1::Sqrt),
            "abs" => Some(Func1::Abs),
            _ => None,
        };
        let f2 = match name {
            "min" => Some(Func2::Min),
            "max" => Some(Func2::Max),
            _ => None,
        };
        if f1.is_none() && f2.is_none() {
            return perr(start, format!("unknown identifier `{name}`"));
        }
        if !self.eat(b'(') {
            return perr(self.pos, format!("expected `(` after `{name}`"));
        }
        let first = self.expr()?;
        if let Some(f) = f1 {
            if self.peek() == Some(b',') {
                return perr(
                    self.pos,
                    format!("`{name}` takes exactly 1 argument, found more"),
                );
            }
            if !self.eat(b')') {
                return perr(self.pos, "expected `)`");
            }
            return Ok(Expr::Call1(f, Box::new(first)));
        }
        let f = f2.unwrap();
        if !self.eat(b',') {
            return perr(
                self.pos,
                format!("`{name}` takes exactly 2 arguments, found 1"),
            );
        }
        let second = self.expr()?;
        if self.peek() == Some(b',') {
            return perr(
                self.pos,
                format!("`{name}` takes exactly 2 arguments, found more"),
            );
        }
        if !self.eat(b')') {
            return perr(self.pos, "expected `)`");
        }
        Ok(Expr::Call2(f, Box::new(first), Box::new(second)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, t: f64, x: f64) -> f64 {
        parse(src).unwrap().eval(t, x).unwrap()
    }

    #[test]
    fn precedence_golden_values() {
        assert_eq!(ev("2+3*4", 0.0, 0.0), 14.0);
        assert_eq!(ev("2^3^2", 0.0, 0.0), 512.0);
        assert_eq!(ev("-2^2", 0.0, 0.0), -4.0);
        assert_eq!(ev("(2+3)*4", 0.0, 0.0), 20.0);
        assert_eq!(ev("2-3-4", 0.0, 0.0), -5.0);
        assert_eq!(ev("24/4/2", 0.0, 0.0), 3.0);
        assert_eq!(ev("2^-1", 0.0, 0.0), 0.5);
    }

    #[test]
    fn variables_and_functions() {
        assert_eq!(ev("2*t-1", 0.75, 0.0), 0.5);
        assert_eq!(ev("exp(-t)", 1.0, 0.0), 0.36787944117144233);
        assert_eq!(ev("x", 0.0, 0.25), 0.25);
        assert_eq!(ev("min(t,x)", 2.0, 3.0), 2.0);
        assert_eq!(ev("max(t,x)", 2.0, 3.0), 3.0);
        assert_eq!(ev("abs(-3)", 0.0, 0.0), 3.0);
        assert_eq!(ev("sqrt(4)", 0.0, 0.0), 2.0);
        assert_eq!(ev("sin(0)", 0.0, 0.0), 0.0);
        assert_eq!(ev("cos(0)", 0.0, 0.0), 1.0);
        assert_eq!(ev("1e-3", 0.0, 0.0), 1e-3);
        assert_eq!(ev("2.5E2", 0.0, 0.0), 250.0);
        // `e` not followed by digits is an identifier boundary, so `2*exp(0)`
        // style inputs still work.
        assert_eq!(ev("2*exp(0)", 0.0, 0.0), 2.0);
    }

    #[test]
    fn whitespace_is_insignificant() {
        assert_eq!(ev("  2 + 3 * 4 ", 0.0, 0.0), 14.0);
        assert_eq!(ev("min( t , x )", 1.0, 2.0), 1.0);
    }

    #[test]
    fn error_offsets() {
        let e = parse("2*").unwrap_err();
        assert_eq!(e.offset, 2);
        let e = parse("t@x").unwrap_err();
        assert_eq!(e.offset, 1);
        let e = parse("foo(t)").unwrap_err();
        assert_eq!(e.offset, 0);
        assert!(e.message.contains("foo"));
        let e = parse("sin(t,x)").unwrap_err();
        assert!(e.message.contains("1 argument"), "{}", e.message);
        let e = parse("min(t)").unwrap_err();
        assert!(e.message.contains("2 arguments"), "{}", e.message);
        let e = parse("(1+2").unwrap_err();
        assert_eq!(e.offset, 4);
        let e = parse("1.").unwrap_err();
        assert_eq!(e.offset, 2);
    }

    #[test]
    fn eval_domain_errors() {
        let e = parse("1/(t-1)").unwrap().eval(1.0, 0.0).unwrap_err();
        assert_eq!(e, EvalError::DivisionByZero);
        let e = parse("sqrt(-1)").unwrap().eval(0.0, 0.0).unwrap_err();
        assert_eq!(e, EvalError::SqrtOfNegative(-1.0));
        let e = parse("(-2)^0.5").unwrap().eval(0.0, 0.0).unwrap_err();
        assert!(matches!(e, EvalError::PowDomain { .. }));
        let e = parse("exp(1000)").unwrap().eval(0.0, 0.0).unwrap_err();
        assert!(matches!(e, EvalError::NonFinite { .. }));
    }

    #[test]
    fn dependence_flags() {
        assert!(parse("2*t-1").unwrap().depends_on_t());
        assert!(!parse("2*t-1").unwrap().depends_on_x());
        assert!(parse("x*(1-x)*t").unwrap().depends_on_x());
        assert!(!parse("3.5").unwrap().depends_on_t());
    }

    #[test]
    fn printing_round_trips_values() {
        for src in [
            "2+3*4",
            "2^3^2",
            "-2^2",
            "2-(3-4)",
            "x*(1-x)*t",
            "min(t,max(x,0.5))",
            "-(t+x)",
            "1/(1+t)",
            "2^-3",
            "(2^3)^2",
        ] {
            let e = parse(src).unwrap();
            let printed = e.to_string();
            let back = parse(&printed)
                .unwrap_or_else(|err| panic!("reparse of `{printed}` failed: {err}"));
            for &(t, x) in &[(0.0, 0.0), (0.3, 0.7), (1.5, 0.25), (2.0, 1.0)] {
                let a = e.eval(t, x).unwrap();
                let b = back.eval(t, x).unwrap();
                assert_eq!(a.to_bits(), b.to_bits(), "`{src}` vs `{printed}` at ({t},{x})");
            }
        }
    }
}
