//! Symbolic real-valued expressions over soft slots.
//!
//! Kept separate from the tape so the compiler can rewrite and render them
//! before anything is lowered.

use std::fmt;

use crate::autodiff::{NodeId, TapeBuilder};

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Index into the owning loss's slot list.
    Slot(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Log(Box<Expr>),
    Relu(Box<Expr>),
    Abs(Box<Expr>),
    Step(Box<Expr>),
}

macro_rules! binary {
    ($($name:ident => $variant:ident),* $(,)?) => {
        $(pub fn $name(a: Expr, b: Expr) -> Expr {
            Expr::$variant(Box::new(a), Box::new(b))
        })*
    };
}

macro_rules! unary {
    ($($name:ident => $variant:ident),* $(,)?) => {
        $(pub fn $name(a: Expr) -> Expr {
            Expr::$variant(Box::new(a))
        })*
    };
}

#[allow(clippy::should_implement_trait)]
impl Expr {
    binary!(add => Add, sub => Sub, mul => Mul, div => Div, min => Min, max => Max);
    unary!(neg => Neg, log => Log, relu => Relu, abs => Abs, step => Step);

    pub fn is_const(&self, value: f64) -> bool {
        matches!(self, Expr::Const(c) if *c == value)
    }

    /// Direct evaluation with slot values, for tests and diagnostics.
    pub fn eval(&self, slots: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Slot(i) => slots[*i],
            Expr::Add(a, b) => a.eval(slots) + b.eval(slots),
            Expr::Sub(a, b) => a.eval(slots) - b.eval(slots),
            Expr::Mul(a, b) => a.eval(slots) * b.eval(slots),
            Expr::Div(a, b) => a.eval(slots) / b.eval(slots),
            Expr::Min(a, b) => a.eval(slots).min(b.eval(slots)),
            Expr::Max(a, b) => a.eval(slots).max(b.eval(slots)),
            Expr::Neg(a) => -a.eval(slots),
            Expr::Log(a) => a.eval(slots).ln(),
            Expr::Relu(a) => a.eval(slots).max(0.0),
            Expr::Abs(a) => a.eval(slots).abs(),
            Expr::Step(a) => {
                if a.eval(slots) >= 0.0 { 1.0 } else { 0.0 }
            }
        }
    }

    /// Emit onto a tape, with `slots[i]` standing for `Slot(i)`.
    pub fn lower(&self, b: &mut TapeBuilder, slots: &[NodeId]) -> NodeId {
        let pair = |x: &Expr, y: &Expr, b: &mut TapeBuilder| (x.lower(b, slots), y.lower(b, slots));
        match self {
            Expr::Const(c) => b.constant(*c),
            Expr::Slot(i) => slots[*i],
            Expr::Add(x, y) => {
                let (x, y) = pair(x, y, b);
                b.add(x, y)
            }
            Expr::Sub(x, y) => {
                let (x, y) = pair(x, y, b);
                b.sub(x, y)
            }
            Expr::Mul(x, y) => {
                let (x, y) = pair(x, y, b);
                b.mul(x, y)
            }
            Expr::Div(x, y) => {
                let (x, y) = pair(x, y, b);
                b.div(x, y)
            }
            Expr::Min(x, y) => {
                let (x, y) = pair(x, y, b);
                b.min(x, y)
            }
            Expr::Max(x, y) => {
                let (x, y) = pair(x, y, b);
                b.max(x, y)
            }
            Expr::Neg(x) => {
                let x = x.lower(b, slots);
                b.neg(x)
            }
            Expr::Log(x) => {
                let x = x.lower(b, slots);
                b.log(x)
            }
            Expr::Relu(x) => {
                let x = x.lower(b, slots);
                b.relu(x)
            }
            Expr::Abs(x) => {
                let x = x.lower(b, slots);
                b.abs(x)
            }
            Expr::Step(x) => {
                let x = x.lower(b, slots);
                b.step(x)
            }
        }
    }

    pub fn display<'a>(&'a self, slot_names: &'a [String]) -> ExprDisplay<'a> {
        ExprDisplay { expr: self, names: slot_names }
    }
}

pub struct ExprDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const PREFIX: u8 = 3;
const ATOM: u8 = 4;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Add(..) | Expr::Sub(..) => SUM,
        Expr::Mul(..) | Expr::Div(..) => PRODUCT,
        Expr::Neg(_) => PREFIX,
        Expr::Const(c) if *c < 0.0 => PREFIX,
        // `log x` without parentheses binds like a prefix operator.
        Expr::Log(a) if matches!(**a, Expr::Slot(_)) => PREFIX,
        _ => ATOM,
    }
}

fn write_expr(f: &mut fmt::Formatter<'_>, e: &Expr, names: &[String], min: u8) -> fmt::Result {
    let wrap = precedence(e) < min;
    if wrap {
        f.write_str("(")?;
    }
    let infix = |f: &mut fmt::Formatter<'_>, a, b, op: &str, prec: u8| {
        write_expr(f, a, names, prec)?;
        write!(f, " {op} ")?;
        write_expr(f, b, names, prec + 1)
    };
    let call = |f: &mut fmt::Formatter<'_>, name: &str, args: &[&Expr]| {
        write!(f, "{name}(")?;
        for (i, a) in args.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write_expr(f, a, names, SUM)?;
        }
        f.write_str(")")
    };
    match e {
        Expr::Const(c) => write!(f, "{c}")?,
        Expr::Slot(i) => f.write_str(&names[*i])?,
        Expr::Add(a, b) => infix(f, a, b, "+", SUM)?,
        Expr::Sub(a, b) => infix(f, a, b, "-", SUM)?,
        Expr::Mul(a, b) => infix(f, a, b, "*", PRODUCT)?,
        Expr::Div(a, b) => infix(f, a, b, "/", PRODUCT)?,
        Expr::Min(a, b) => call(f, "min", &[a, b])?,
        Expr::Max(a, b) => call(f, "max", &[a, b])?,
        Expr::Neg(a) => {
            f.write_str("-")?;
            write_expr(f, a, names, PREFIX)?;
        }
        Expr::Log(a) => match **a {
            Expr::Slot(i) => write!(f, "log {}", names[i])?,
            _ => call(f, "log", &[a])?,
        },
        Expr::Relu(a) => call(f, "relu", &[a])?,
        Expr::Step(a) => call(f, "step", &[a])?,
        Expr::Abs(a) => {
            f.write_str("|")?;
            write_expr(f, a, names, SUM)?;
            f.write_str("|")?;
        }
    }
    if wrap {
        f.write_str(")")?;
    }
    Ok(())
}

impl fmt::Display for ExprDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_expr(f, self.expr, self.names, SUM)
    }
}
