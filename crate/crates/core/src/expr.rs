//! Small arithmetic expression language for coefficient functions.
//!
//! Grammar (usual precedence, `^` right-associative and binding tighter than
//! unary minus):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | 'x'<k> | 'pi' | param | func '(' expr ')' | '(' expr ')'
//! func   := abs | sqrt | exp | ln | log | sin | cos
//! ```
//!
//! Variables are `x1 … xn`. Named parameters are substituted at parse time.
//! Expressions evaluate either on `f64` or on [`Jet`]s, the latter giving
//! exact derivatives of any order.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::jet::Jet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    PowI(Box<Expr>, i32),
    PowF(Box<Expr>, f64),
    Pow(Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn parse(src: &str, nvars: usize) -> Result<Expr> {
        Expr::parse_with(src, nvars, &HashMap::new())
    }

    pub fn parse_with(src: &str, nvars: usize, params: &HashMap<String, f64>) -> Result<Expr> {
        let tokens = tokenize(src)?;
        let mut p = Parser { tokens, pos: 0, nvars, params, src };
        let e = p.expr()?;
        if p.pos != p.tokens.len() {
            return Err(Error::Expression(format!(
                "unexpected trailing input in '{src}' at token {}",
                p.pos
            )));
        }
        Ok(e)
    }

    /// Largest variable index referenced, plus one.
    pub fn arity(&self) -> usize {
        match self {
            Expr::Const(_) => 0,
            Expr::Var(i) => i + 1,
            Expr::Neg(a) | Expr::PowI(a, _) | Expr::PowF(a, _) | Expr::Call(_, a) => a.arity(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.arity().max(b.arity())
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::PowI(a, e) => a.eval(x).powi(*e),
            Expr::PowF(a, e) => a.eval(x).powf(*e),
            Expr::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Expr::Call(f, a) => {
                let v = a.eval(x);
                match f {
                    Func::Abs => v.abs(),
                    Func::Sqrt => v.sqrt(),
                    Func::Exp => v.exp(),
                    Func::Ln => v.ln(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                }
            }
        }
    }

    /// Evaluates on coordinate jets; all jets must share one basis.
    pub fn eval_jet(&self, vars: &[Jet]) -> Jet {
        match self {
            Expr::Const(c) => Jet::constant(vars[0].basis().clone(), *c),
            Expr::Var(i) => vars[*i].clone(),
            Expr::Neg(a) => -a.eval_jet(vars),
            Expr::Add(a, b) => &a.eval_jet(vars) + &b.eval_jet(vars),
            Expr::Sub(a, b) => &a.eval_jet(vars) - &b.eval_jet(vars),
            Expr::Mul(a, b) => match (a.as_ref(), b.as_ref()) {
                (Expr::Const(c), e) | (e, Expr::Const(c)) => e.eval_jet(vars).scale(*c),
                _ => &a.eval_jet(vars) * &b.eval_jet(vars),
            },
            Expr::Div(a, b) => match b.as_ref() {
                Expr::Const(c) => a.eval_jet(vars).scale(1.0 / c),
                _ => &a.eval_jet(vars) * &b.eval_jet(vars).recip(),
            },
            Expr::PowI(a, e) => a.eval_jet(vars).powi(*e),
            Expr::PowF(a, e) => a.eval_jet(vars).powf(*e),
            Expr::Pow(a, b) => (&b.eval_jet(vars) * &a.eval_jet(vars).ln()).exp(),
            Expr::Call(f, a) => {
                let v = a.eval_jet(vars);
                match f {
                    Func::Abs => v.abs(),
                    Func::Sqrt => v.sqrt(),
                    Func::Exp => v.exp(),
                    Func::Ln => v.ln(),
                    Func::Sin => v.sin(),
                    Func::Cos => v.cos(),
                }
            }
        }
    }

    /// Points where the expression may fail to be smooth: arguments of `abs`.
    pub fn has_abs(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) => false,
            Expr::Call(Func::Abs, _) => true,
            Expr::Neg(a) | Expr::PowI(a, _) | Expr::PowF(a, _) | Expr::Call(_, a) => a.has_abs(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) | Expr::Pow(a, b) => {
                a.has_abs() || b.has_abs()
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Div(a, b) => write!(f, "({a} / {b})"),
            Expr::PowI(a, e) => write!(f, "({a}^{e})"),
            Expr::PowF(a, e) => write!(f, "({a}^{e})"),
            Expr::Pow(a, b) => write!(f, "({a}^{b})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Abs => "abs",
                    Func::Sqrt => "sqrt",
                    Func::Exp => "exp",
                    Func::Ln => "ln",
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                };
                write!(f, "{name}({a})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Num(f64),
    Ident(String),
    Op(char),
}

fn tokenize(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            // exponent part, e.g. 1e-3
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v = text
                .parse::<f64>()
                .map_err(|_| Error::Expression(format!("bad number '{text}' in '{src}'")))?;
            out.push(Token::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Token::Op(c));
            i += 1;
        } else {
            return Err(Error::Expression(format!("unexpected character '{c}' in '{src}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    nvars: usize,
    params: &'a HashMap<String, f64>,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn eat_op(&mut self, op: char) -> bool {
        if self.peek() == Some(&Token::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn err(&self, msg: &str) -> Error {
        Error::Expression(format!("{msg} in '{}'", self.src))
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Expr::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat_op('-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                e => Expr::Neg(Box::new(e)),
            });
        }
        if self.eat_op('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if !self.eat_op('^') {
            return Ok(base);
        }
        let exponent = self.unary()?;
        Ok(match (base, exponent) {
            (Expr::Const(a), Expr::Const(b)) => Expr::Const(a.powf(b)),
            (b, Expr::Const(e)) if e.fract() == 0.0 && e.abs() <= 64.0 => {
                Expr::PowI(Box::new(b), e as i32)
            }
            (b, Expr::Const(e)) => Expr::PowF(Box::new(b), e),
            (b, e) => Expr::Pow(Box::new(b), Box::new(e)),
        })
    }

    fn atom(&mut self) -> Result<Expr> {
        let tok = self.peek().cloned().ok_or_else(|| self.err("unexpected end of input"))?;
        self.pos += 1;
        match tok {
            Token::Num(v) => Ok(Expr::Const(v)),
            Token::Op('(') => {
                let e = self.expr()?;
                if !self.eat_op(')') {
                    return Err(self.err("missing ')'"));
                }
                Ok(e)
            }
            Token::Op(c) => Err(self.err(&format!("unexpected '{c}'"))),
            Token::Ident(name) => {
                let func = match name.as_str() {
                    "abs" => Some(Func::Abs),
                    "sqrt" => Some(Func::Sqrt),
                    "exp" => Some(Func::Exp),
                    "ln" | "log" => Some(Func::Ln),
                    "sin" => Some(Func::Sin),
                    "cos" => Some(Func::Cos),
                    _ => None,
                };
                if let Some(f) = func {
                    if !self.eat_op('(') {
                        return Err(self.err(&format!("expected '(' after {name}")));
                    }
                    let arg = self.expr()?;
                    if !self.eat_op(')') {
                        return Err(self.err("missing ')'"));
                    }
                    return Ok(Expr::Call(f, Box::new(arg)));
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                if let Some(&v) = self.params.get(&name) {
                    return Ok(Expr::Const(v));
                }
                if let Some(idx) = name.strip_prefix('x').and_then(|d| d.parse::<usize>().ok()) {
                    if idx >= 1 && idx <= self.nvars {
                        return Ok(Expr::Var(idx - 1));
                    }
                    return Err(self.err(&format!("variable {name} out of range 1..={}", self.nvars)));
                }
                Err(self.err(&format!("unknown identifier '{name}'")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::coordinate_jets;

    #[test]
    fn precedence_and_associativity() {
        let e = Expr::parse("1 + 2*x1^2 - x2/4", 2).unwrap();
        assert_eq!(e.eval(&[3.0, 8.0]), 1.0 + 18.0 - 2.0);
        let p = Expr::parse("2^3^2", 1).unwrap();
        assert_eq!(p.eval(&[0.0]), 512.0);
        let n = Expr::parse("-x1^2", 1).unwrap();
        assert_eq!(n.eval(&[3.0]), -9.0);
        let s = Expr::parse("1e-3*x1", 1).unwrap();
        assert_eq!(s.eval(&[2.0]), 2e-3);
    }

    #[test]
    fn parameters_and_functions() {
        let mut params = HashMap::new();
        params.insert("c".to_string(), 2.0);
        let e = Expr::parse_with("x1 + c*x1*abs(x1)", 1, &params).unwrap();
        assert_eq!(e.eval(&[-0.5]), -0.5 - 0.5);
        assert!(e.has_abs());
        let f = Expr::parse("sqrt(x1) + exp(0) + ln(x1) + sin(0) + cos(0)", 1).unwrap();
        assert!((f.eval(&[4.0]) - (2.0 + 1.0 + 4f64.ln() + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(Expr::parse("x3", 2).is_err());
        assert!(Expr::parse("(x1", 1).is_err());
        assert!(Expr::parse("x1 +", 1).is_err());
        assert!(Expr::parse("y", 1).is_err());
        assert!(Expr::parse("x1 $ 2", 1).is_err());
        assert!(Expr::parse("x1 x1", 1).is_err());
    }

    #[test]
    fn jet_evaluation_matches_hand_derivatives() {
        let e = Expr::parse("x1^2*x2 - x2/(1 + x1) + x1^1.5", 2).unwrap();
        let (a, b) = (0.8, -1.3);
        let j = e.eval_jet(&coordinate_jets(&[a, b], 2));
        assert!((j.value() - e.eval(&[a, b])).abs() < 1e-14);
        let dx = 2.0 * a * b + b / (1.0 + a).powi(2) + 1.5 * a.sqrt();
        let dy = a * a - 1.0 / (1.0 + a);
        let dxx = 2.0 * b - 2.0 * b / (1.0 + a).powi(3) + 0.75 / a.sqrt();
        assert!((j.derivative(&[1, 0]) - dx).abs() < 1e-12);
        assert!((j.derivative(&[0, 1]) - dy).abs() < 1e-12);
        assert!((j.derivative(&[2, 0]) - dxx).abs() < 1e-12);
        let g = Expr::parse("x1^x2", 2).unwrap();
        let gj = g.eval_jet(&coordinate_jets(&[2.0, 3.0], 1));
        assert!((gj.value() - 8.0).abs() < 1e-12);
        assert!((gj.derivative(&[1, 0]) - 12.0).abs() < 1e-12);
        assert!((gj.derivative(&[0, 1]) - 8.0 * 2f64.ln()).abs() < 1e-12);
    }
}
