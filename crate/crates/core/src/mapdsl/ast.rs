use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Sqrt,
    Exp,
    Atan2,
    Abs,
}

impl Func {
    pub fn arity(self) -> usize {
        match self {
            Func::Atan2 => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Atan2 => "atan2",
            Func::Abs => "abs",
        }
    }
}

/// Variable reference; pair indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X(usize),
    Y(usize),
    /// `r_i = sqrt(x_i^2 + y_i^2)`
    R(usize),
    /// `theta_i = atan2(y_i, x_i)`
    Theta(usize),
    /// The direction angle of a radial support expression.
    Angle,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Largest pair index referenced (zero-based), if any.
    pub fn max_pair(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(Var::X(i) | Var::Y(i) | Var::R(i) | Var::Theta(i)) => Some(*i),
            Expr::Var(Var::Angle) => None,
            Expr::Neg(a) | Expr::Pow(a, _) => a.max_pair(),
            Expr::Bin(_, a, b) => a.max_pair().max(b.max_pair()),
            Expr::Call(_, args) => args.iter().filter_map(Expr::max_pair).max(),
        }
    }
}

/// Fully parenthesized rendering. Floats use the shortest round-trip form,
/// so reparsing reproduces every constant bit for bit.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(v) => {
                if v.is_sign_negative() {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            Expr::Var(v) => match v {
                Var::X(i) => write!(f, "x{}", i + 1),
                Var::Y(i) => write!(f, "y{}", i + 1),
                Var::R(i) => write!(f, "r{}", i + 1),
                Var::Theta(i) => write!(f, "theta{}", i + 1),
                Var::Angle => write!(f, "theta"),
            },
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Pow(a, k) => write!(f, "({a}^({k}))"),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}
