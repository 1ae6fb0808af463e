//! Flat instruction tape with value and forward-mode derivative evaluation.

use std::cell::RefCell;

use super::ast::{BinOp, Expr, Func, Var};
use super::EvalError;

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Input(usize),
    Neg(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Pow(usize, i32),
    Sin(usize),
    Cos(usize),
    Sqrt(usize),
    Exp(usize),
    Abs(usize),
    Atan2(usize, usize),
    Hypot(usize, usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Tape {
    ops: Vec<Op>,
    outputs: Vec<usize>,
    n_in: usize,
}

thread_local! {
    static SCRATCH: RefCell<(Vec<f64>, Vec<f64>)> = const { RefCell::new((Vec::new(), Vec::new())) };
}

fn domain(msg: &str) -> EvalError {
    EvalError::Domain(msg.to_string())
}

impl Tape {
    pub(crate) fn compile(exprs: &[Expr], n_in: usize) -> Tape {
        let mut tape = Tape { ops: Vec::new(), outputs: Vec::new(), n_in };
        let inputs: Vec<usize> = (0..n_in)
            .map(|i| {
                tape.ops.push(Op::Input(i));
                i
            })
            .collect();
        for e in exprs {
            let slot = tape.emit(e, &inputs);
            tape.outputs.push(slot);
        }
        tape
    }

    fn push(&mut self, op: Op) -> usize {
        self.ops.push(op);
        self.ops.len() - 1
    }

    fn emit(&mut self, e: &Expr, inputs: &[usize]) -> usize {
        match e {
            Expr::Const(v) => self.push(Op::Const(*v)),
            Expr::Var(v) => match *v {
                Var::X(i) => inputs[2 * i],
                Var::Y(i) => inputs[2 * i + 1],
                Var::R(i) => self.push(Op::Hypot(inputs[2 * i], inputs[2 * i + 1])),
                Var::Theta(i) => self.push(Op::Atan2(inputs[2 * i + 1], inputs[2 * i])),
                Var::Angle => inputs[0],
            },
            Expr::Neg(a) => {
                let a = self.emit(a, inputs);
                self.push(Op::Neg(a))
            }
            Expr::Bin(op, a, b) => {
                let a = self.emit(a, inputs);
                let b = self.emit(b, inputs);
                self.push(match op {
                    BinOp::Add => Op::Add(a, b),
                    BinOp::Sub => Op::Sub(a, b),
                    BinOp::Mul => Op::Mul(a, b),
                    BinOp::Div => Op::Div(a, b),
                })
            }
            Expr::Pow(a, k) => {
                let a = self.emit(a, inputs);
                self.push(Op::Pow(a, *k))
            }
            Expr::Call(f, args) => {
                let a = self.emit(&args[0], inputs);
                match f {
                    Func::Sin => self.push(Op::Sin(a)),
                    Func::Cos => self.push(Op::Cos(a)),
                    Func::Sqrt => self.push(Op::Sqrt(a)),
                    Func::Exp => self.push(Op::Exp(a)),
                    Func::Abs => self.push(Op::Abs(a)),
                    Func::Atan2 => {
                        let b = self.emit(&args[1], inputs);
                        self.push(Op::Atan2(a, b))
                    }
                }
            }
        }
    }

    pub(crate) fn n_out(&self) -> usize {
        self.outputs.len()
    }

    /// Values only.
    pub(crate) fn eval(&self, z: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        debug_assert_eq!(z.len(), self.n_in);
        SCRATCH.with(|s| {
            let (vals, _) = &mut *s.borrow_mut();
            vals.clear();
            for op in &self.ops {
                let v = match *op {
                    Op::Const(c) => c,
                    Op::Input(i) => z[i],
                    Op::Neg(a) => -vals[a],
                    Op::Add(a, b) => vals[a] + vals[b],
                    Op::Sub(a, b) => vals[a] - vals[b],
                    Op::Mul(a, b) => vals[a] * vals[b],
                    Op::Div(a, b) => {
                        if vals[b] == 0.0 {
                            return Err(domain("division by zero"));
                        }
                        vals[a] / vals[b]
                    }
                    Op::Pow(a, k) => {
                        if k < 0 && vals[a] == 0.0 {
                            return Err(domain("negative power of zero"));
                        }
                        vals[a].powi(k)
                    }
                    Op::Sin(a) => vals[a].sin(),
                    Op::Cos(a) => vals[a].cos(),
                    Op::Sqrt(a) => {
                        if vals[a] < 0.0 {
                            return Err(domain("sqrt of negative number"));
                        }
                        vals[a].sqrt()
                    }
                    Op::Exp(a) => vals[a].exp(),
                    Op::Abs(a) => vals[a].abs(),
                    Op::Atan2(y, x) => {
                        if vals[y] == 0.0 && vals[x] == 0.0 {
                            return Err(domain("atan2(0, 0)"));
                        }
                        vals[y].atan2(vals[x])
                    }
                    Op::Hypot(x, y) => vals[x].hypot(vals[y]),
                };
                vals.push(v);
            }
            for (o, &slot) in out.iter_mut().zip(&self.outputs) {
                let v = vals[slot];
                if !v.is_finite() {
                    return Err(domain("non-finite result"));
                }
                *o = v;
            }
            Ok(())
        })
    }

    /// Values and the Jacobian, row-major `jac[i * n_in + j] = d out_i / d z_j`.
    pub(crate) fn eval_dual(&self, z: &[f64], out: &mut [f64], jac: &mut [f64]) -> Result<(), EvalError> {
        let m = self.n_in;
        SCRATCH.with(|s| {
            let (vals, grads) = &mut *s.borrow_mut();
            vals.clear();
            grads.clear();
            grads.resize(self.ops.len() * m, 0.0);
            for (k, op) in self.ops.iter().enumerate() {
                let (head, tail) = grads.split_at_mut(k * m);
                let g = &mut tail[..m];
                let gr = |a: usize| &head[a * m..a * m + m];
                let v = match *op {
                    Op::Const(c) => c,
                    Op::Input(i) => {
                        g[i] = 1.0;
                        z[i]
                    }
                    Op::Neg(a) => {
                        for (gi, ai) in g.iter_mut().zip(gr(a)) {
                            *gi = -ai;
                        }
                        -vals[a]
                    }
                    Op::Add(a, b) => {
                        for j in 0..m {
                            g[j] = gr(a)[j] + gr(b)[j];
                        }
                        vals[a] + vals[b]
                    }
                    Op::Sub(a, b) => {
                        for j in 0..m {
                            g[j] = gr(a)[j] - gr(b)[j];
                        }
                        vals[a] - vals[b]
                    }
                    Op::Mul(a, b) => {
                        let (va, vb) = (vals[a], vals[b]);
                        for j in 0..m {
                            g[j] = gr(a)[j] * vb + va * gr(b)[j];
                        }
                        va * vb
                    }
                    Op::Div(a, b) => {
                        let (va, vb) = (vals[a], vals[b]);
                        if vb == 0.0 {
                            return Err(domain("division by zero"));
                        }
                        let q = va / vb;
                        for j in 0..m {
                            g[j] = (gr(a)[j] - q * gr(b)[j]) / vb;
                        }
                        q
                    }
                    Op::Pow(a, k) => {
                        let va = vals[a];
                        if k < 0 && va == 0.0 {
                            return Err(domain("negative power of zero"));
                        }
                        let d = if k == 0 { 0.0 } else { k as f64 * va.powi(k - 1) };
                        for j in 0..m {
                            g[j] = d * gr(a)[j];
                        }
                        va.powi(k)
                    }
                    Op::Sin(a) => {
                        let d = vals[a].cos();
                        for j in 0..m {
                            g[j] = d * gr(a)[j];
                        }
                        vals[a].sin()
                    }
                    Op::Cos(a) => {
                        let d = -vals[a].sin();
                        for j in 0..m {
                            g[j] = d * gr(a)[j];
                        }
                        vals[a].cos()
                    }
                    Op::Sqrt(a) => {
                        let va = vals[a];
                        if va < 0.0 {
                            return Err(domain("sqrt of negative number"));
                        }
                        if va == 0.0 {
                            return Err(domain("sqrt is not differentiable at 0"));
                        }
                        let s = va.sqrt();
                        for j in 0..m {
                            g[j] = gr(a)[j] / (2.0 * s);
                        }
                        s
                    }
                    Op::Exp(a) => {
                        let e = vals[a].exp();
                        for j in 0..m {
                            g[j] = e * gr(a)[j];
                        }
                        e
                    }
                    Op::Abs(a) => {
                        let va = vals[a];
                        if va == 0.0 {
                            return Err(domain("abs is not differentiable at 0"));
                        }
                        let s = va.signum();
                        for j in 0..m {
                            g[j] = s * gr(a)[j];
                        }
                        va.abs()
                    }
                    Op::Atan2(y, x) => {
                        let (vy, vx) = (vals[y], vals[x]);
                        let r2 = vx * vx + vy * vy;
                        if r2 == 0.0 {
                            return Err(domain("atan2(0, 0)"));
                        }
                        for j in 0..m {
                            g[j] = (vx * gr(y)[j] - vy * gr(x)[j]) / r2;
                        }
                        vy.atan2(vx)
                    }
                    Op::Hypot(x, y) => {
                        let (vx, vy) = (vals[x], vals[y]);
                        let r = vx.hypot(vy);
                        if r == 0.0 {
                            return Err(domain("polar radius is not differentiable at 0"));
                        }
                        for j in 0..m {
                            g[j] = (vx * gr(x)[j] + vy * gr(y)[j]) / r;
                        }
                        r
                    }
                };
                vals.push(v);
            }
            for (i, &slot) in self.outputs.iter().enumerate() {
                let v = vals[slot];
                let row = &grads[slot * m..slot * m + m];
                if !v.is_finite() || row.iter().any(|d| !d.is_finite()) {
                    return Err(domain("non-finite result"));
                }
                out[i] = v;
                jac[i * m..i * m + m].copy_from_slice(row);
            }
            Ok(())
        })
    }
}
