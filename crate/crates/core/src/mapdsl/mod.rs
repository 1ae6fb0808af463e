//! Expression language for maps `R^{2n} -> R^{2n}` and for radial support
//! functions of planar domains.
//!
//! Points are ordered `(x1, y1, ..., xn, yn)`. Polar helpers `r<i>` and
//! `theta<i>` refer to the pair `(x<i>, y<i>)`; for `n = 1` the bare names
//! `r` and `theta` are accepted too. Exponents must be integer constants.

mod ast;
mod parser;
mod tape;

pub use ast::{BinOp, Expr, Func, Var};
pub use parser::Symbols;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use parser::Parser;
use tape::Tape;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("expected {expected} components, found {found}")]
    Arity { expected: usize, found: usize },
    #[error("unknown symbol '{name}' at offset {offset}")]
    UnknownSymbol { name: String, offset: usize },
}

impl ParseError {
    pub fn offset(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { offset, .. } | ParseError::UnknownSymbol { offset, .. } => Some(*offset),
            ParseError::Arity { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("point has dimension {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
}

/// A parsed map `R^{2n} -> R^{2n}`. Immutable after construction.
#[derive(Debug, Clone)]
pub struct MapExpression {
    source: String,
    n: usize,
    components: Vec<Expr>,
    tape: Tape,
}

/// Parse `source` as a map on `R^{2n}`.
pub fn parse(source: &str, n: usize) -> Result<MapExpression, ParseError> {
    MapExpression::parse(source, n)
}

impl MapExpression {
    pub fn parse(source: &str, n: usize) -> Result<Self, ParseError> {
        assert!(n >= 1, "dimension must be positive");
        let components = Parser::new(source, Symbols::Map { n })?.parse_list()?;
        if components.len() != 2 * n {
            return Err(ParseError::Arity { expected: 2 * n, found: components.len() });
        }
        let tape = Tape::compile(&components, 2 * n);
        Ok(MapExpression { source: source.to_string(), n, components, tape })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Half the ambient dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn arity_in(&self) -> usize {
        2 * self.n
    }

    pub fn arity_out(&self) -> usize {
        self.tape.n_out()
    }

    pub fn components(&self) -> &[Expr] {
        &self.components
    }

    /// Fully parenthesized source that reparses to the same evaluation.
    pub fn pretty_print(&self) -> String {
        self.components.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(", ")
    }

    fn check_dim(&self, z: &[f64]) -> Result<(), EvalError> {
        if z.len() != 2 * self.n {
            return Err(EvalError::Dimension { expected: 2 * self.n, found: z.len() });
        }
        Ok(())
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<DVector<f64>, EvalError> {
        self.check_dim(z)?;
        let mut out = DVector::zeros(2 * self.n);
        self.tape.eval(z, out.as_mut_slice())?;
        Ok(out)
    }

    pub fn jacobian(&self, z: &[f64]) -> Result<DMatrix<f64>, EvalError> {
        Ok(self.evaluate_with_jacobian(z)?.1)
    }

    /// Value and exact Jacobian in one dual-number sweep.
    pub fn evaluate_with_jacobian(&self, z: &[f64]) -> Result<(DVector<f64>, DMatrix<f64>), EvalError> {
        self.check_dim(z)?;
        let m = 2 * self.n;
        let mut out = DVector::zeros(m);
        let mut jac = vec![0.0; m * m];
        self.tape.eval_dual(z, out.as_mut_slice(), &mut jac)?;
        Ok((out, DMatrix::from_row_slice(m, m, &jac)))
    }
}

/// A scalar function of the direction angle `theta`, used for planar radial supports.
#[derive(Debug, Clone)]
pub struct AngleExpression {
    source: String,
    expr: Expr,
    tape: Tape,
}

impl AngleExpression {
    pub fn parse(source: &str) -> Result<Self, ParseError> {
        let mut list = Parser::new(source, Symbols::Angle)?.parse_list()?;
        if list.len() != 1 {
            return Err(ParseError::Arity { expected: 1, found: list.len() });
        }
        let expr = list.pop().unwrap();
        let tape = Tape::compile(std::slice::from_ref(&expr), 1);
        Ok(AngleExpression { source: source.to_string(), expr, tape })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn pretty_print(&self) -> String {
        self.expr.to_string()
    }

    pub fn evaluate(&self, theta: f64) -> Result<f64, EvalError> {
        let mut out = [0.0];
        self.tape.eval(&[theta], &mut out)?;
        Ok(out[0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_parses() {
        let m = parse("x1, y1", 1).unwrap();
        assert_eq!(m.components(), &[Expr::Var(Var::X(0)), Expr::Var(Var::Y(0))]);
        assert_eq!(m.arity_out(), 2);
    }

    #[test]
    fn truncated_input_reports_offset() {
        let err = parse("x1, y1 +", 1).unwrap_err();
        assert!(matches!(err, ParseError::Syntax { offset: 8, .. }), "{err:?}");
    }

    #[test]
    fn arity_and_unknown_symbols() {
        assert!(matches!(parse("x1", 1), Err(ParseError::Arity { expected: 2, found: 1 })));
        assert!(matches!(parse("x2, y1", 1), Err(ParseError::UnknownSymbol { .. })));
        assert!(matches!(parse("x1, foo(y1)", 1), Err(ParseError::UnknownSymbol { .. })));
        assert!(matches!(parse("x1, z", 1), Err(ParseError::UnknownSymbol { offset: 4, .. })));
        assert!(matches!(parse("x1, y1^0.5", 1), Err(ParseError::Syntax { .. })));
        assert!(matches!(parse("x1, y1 $", 1), Err(ParseError::Syntax { offset: 7, .. })));
    }

    #[test]
    fn shear_value_and_jacobian() {
        let m = parse("x1, y1 + x1^2", 1).unwrap();
        let w = m.evaluate(&[1.0, 0.0]).unwrap();
        assert_eq!(w.as_slice(), &[1.0, 1.0]);
        let j = m.jacobian(&[1.0, 0.0]).unwrap();
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]));
    }

    #[test]
    fn polar_annulus_map() {
        let m = parse("sqrt(r^2 + 16) * cos(theta), sqrt(r^2 + 16) * sin(theta)", 1).unwrap();
        let w = m.evaluate(&[1.0, 0.0]).unwrap();
        assert!((w[0] - 17f64.sqrt()).abs() < 1e-15);
        assert_eq!(w[1], 0.0);
    }

    #[test]
    fn domain_errors() {
        let m = parse("x1, y1/x1", 1).unwrap();
        assert!(matches!(m.evaluate(&[0.0, 1.0]), Err(EvalError::Domain(_))));
        let m = parse("abs(x1), y1", 1).unwrap();
        assert!(m.evaluate(&[0.0, 1.0]).is_ok());
        assert!(matches!(m.jacobian(&[0.0, 1.0]), Err(EvalError::Domain(_))));
        let m = parse("sqrt(x1), y1", 1).unwrap();
        assert!(matches!(m.evaluate(&[-1.0, 1.0]), Err(EvalError::Domain(_))));
        assert!(matches!(m.evaluate(&[1.0]), Err(EvalError::Dimension { .. })));
    }

    #[test]
    fn precedence() {
        let m = parse("-x1^2, 2*y1 - 3/x1 + 1", 1).unwrap();
        let w = m.evaluate(&[2.0, 5.0]).unwrap();
        assert_eq!(w.as_slice(), &[-4.0, 9.5]);
        let m = parse("x1^-2, x1^(-1) * pi - e", 1).unwrap();
        let w = m.evaluate(&[2.0, 0.0]).unwrap();
        assert_eq!(w[0], 0.25);
        assert_eq!(w[1], std::f64::consts::PI / 2.0 - std::f64::consts::E);
    }

    #[test]
    fn higher_dimension_indices() {
        let m = parse("x1 + y2, y1, x2, y2 + sin(x1) * r2", 2).unwrap();
        let j = m.jacobian(&[0.5, 1.0, 3.0, 4.0]).unwrap();
        assert_eq!(j[(0, 3)], 1.0);
        assert!((j[(3, 0)] - 0.5f64.cos() * 5.0).abs() < 1e-14);
        assert!((j[(3, 2)] - 0.5f64.sin() * 0.6).abs() < 1e-14);
        assert!(matches!(parse("x1, y1, x2, r", 2), Err(ParseError::UnknownSymbol { .. })));
    }

    #[test]
    fn pretty_print_roundtrip_bitwise() {
        let src = "sqrt(r^2 + 16) * cos(theta) - 0.1e-3 * x1^-3, atan2(y1, x1 + 7) + exp(-x1) / 3";
        let m = parse(src, 1).unwrap();
        let again = parse(&m.pretty_print(), 1).unwrap();
        for z in [[1.0, 2.0], [-0.3, 0.7], [2.5, -1.25]] {
            let a = m.evaluate(&z).unwrap();
            let b = again.evaluate(&z).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn angle_expression() {
        let a = AngleExpression::parse("2 + cos(3*theta)").unwrap();
        assert_eq!(a.evaluate(0.0).unwrap(), 3.0);
        assert!(AngleExpression::parse("2 + x1").is_err());
    }
}
