//! Holomorphic expressions in one complex variable.
//!
//! An expression is an immutable DAG over polynomials with sums, products,
//! quotients and exponentials. Subexpressions are shared through `Arc`, and a
//! compiled [`Program`] evaluates every shared node exactly once per point, so
//! long chains of Möbius substitutions stay linear in cost.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("expression is singular at z = {z}")]
    Singular { z: Complex64 },
    #[error("malformed expression table: {0}")]
    Table(String),
}

#[derive(Debug)]
enum Kind {
    Poly(Vec<Complex64>),
    Sum(HoloExpr, HoloExpr),
    Product(HoloExpr, HoloExpr),
    Quotient(HoloExpr, HoloExpr),
    Exp(HoloExpr),
}

#[derive(Debug)]
struct Node {
    kind: Kind,
    deriv: OnceLock<HoloExpr>,
    program: OnceLock<Program>,
}

/// A holomorphic expression of `z`.
#[derive(Clone)]
pub struct HoloExpr(Arc<Node>);

impl fmt::Debug for HoloExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0.kind {
            Kind::Poly(c) => write!(f, "Poly(deg {})", c.len().saturating_sub(1)),
            Kind::Sum(a, b) => write!(f, "Sum({a:?}, {b:?})"),
            Kind::Product(a, b) => write!(f, "Product({a:?}, {b:?})"),
            Kind::Quotient(a, b) => write!(f, "Quotient({a:?}, {b:?})"),
            Kind::Exp(a) => write!(f, "Exp({a:?})"),
        }
    }
}

const MAX_FOLDED_DEGREE: usize = 256;

fn trim(mut c: Vec<Complex64>) -> Vec<Complex64> {
    while c.len() > 1 && c.last().is_some_and(|v| *v == Complex64::new(0.0, 0.0)) {
        c.pop();
    }
    if c.is_empty() {
        c.push(Complex64::new(0.0, 0.0));
    }
    c
}

impl HoloExpr {
    fn from_kind(kind: Kind) -> Self {
        HoloExpr(Arc::new(Node { kind, deriv: OnceLock::new(), program: OnceLock::new() }))
    }

    /// `Σ coeffs[k] z^k`.
    pub fn poly(coeffs: Vec<Complex64>) -> Self {
        HoloExpr::from_kind(Kind::Poly(trim(coeffs)))
    }

    pub fn constant(c: Complex64) -> Self {
        HoloExpr::poly(vec![c])
    }

    pub fn zero() -> Self {
        HoloExpr::constant(Complex64::new(0.0, 0.0))
    }

    pub fn one() -> Self {
        HoloExpr::constant(Complex64::new(1.0, 0.0))
    }

    /// The coordinate `z`.
    pub fn z() -> Self {
        HoloExpr::poly(vec![Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)])
    }

    pub fn as_poly(&self) -> Option<&[Complex64]> {
        match &self.0.kind {
            Kind::Poly(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_constant(&self) -> Option<Complex64> {
        self.as_poly().filter(|c| c.len() == 1).map(|c| c[0])
    }

    /// `true` for `exp(·)` nodes, which never vanish.
    pub fn is_exp(&self) -> bool {
        matches!(self.0.kind, Kind::Exp(_))
    }

    pub fn is_zero(&self) -> bool {
        self.as_constant() == Some(Complex64::new(0.0, 0.0))
    }

    pub fn is_one(&self) -> bool {
        self.as_constant() == Some(Complex64::new(1.0, 0.0))
    }

    pub fn ptr_eq(&self, other: &HoloExpr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn sum(a: &HoloExpr, b: &HoloExpr) -> Self {
        if a.is_zero() {
            return b.clone();
        }
        if b.is_zero() {
            return a.clone();
        }
        if let (Some(p), Some(q)) = (a.as_poly(), b.as_poly()) {
            let n = p.len().max(q.len());
            let c = (0..n)
                .map(|k| p.get(k).copied().unwrap_or_default() + q.get(k).copied().unwrap_or_default())
                .collect();
            return HoloExpr::poly(c);
        }
        HoloExpr::from_kind(Kind::Sum(a.clone(), b.clone()))
    }

    pub fn sub(a: &HoloExpr, b: &HoloExpr) -> Self {
        HoloExpr::sum(a, &b.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn product(a: &HoloExpr, b: &HoloExpr) -> Self {
        if a.is_zero() || b.is_zero() {
            return HoloExpr::zero();
        }
        if a.is_one() {
            return b.clone();
        }
        if b.is_one() {
            return a.clone();
        }
        if let (Some(p), Some(q)) = (a.as_poly(), b.as_poly()) {
            if p.len() + q.len() <= MAX_FOLDED_DEGREE || p.len() == 1 || q.len() == 1 {
                let mut c = vec![Complex64::new(0.0, 0.0); p.len() + q.len() - 1];
                for (i, x) in p.iter().enumerate() {
                    for (j, y) in q.iter().enumerate() {
                        c[i + j] += x * y;
                    }
                }
                return HoloExpr::poly(c);
            }
        }
        HoloExpr::from_kind(Kind::Product(a.clone(), b.clone()))
    }

    pub fn quotient(a: &HoloExpr, b: &HoloExpr) -> Self {
        if b.is_one() || a.is_zero() {
            return a.clone();
        }
        if let Some(c) = b.as_constant() {
            if c != Complex64::new(0.0, 0.0) {
                return a.scale(c.inv());
            }
        }
        HoloExpr::from_kind(Kind::Quotient(a.clone(), b.clone()))
    }

    pub fn exp(a: &HoloExpr) -> Self {
        if let Some(c) = a.as_constant() {
            return HoloExpr::constant(c.exp());
        }
        HoloExpr::from_kind(Kind::Exp(a.clone()))
    }

    pub fn scale(&self, c: Complex64) -> Self {
        HoloExpr::product(&HoloExpr::constant(c), self)
    }

    pub fn square(&self) -> Self {
        HoloExpr::product(self, self)
    }

    /// `(α f + β) / (γ f + δ)`.
    pub fn mobius(&self, alpha: Complex64, beta: Complex64, gamma: Complex64, delta: Complex64) -> Self {
        let num = HoloExpr::sum(&self.scale(alpha), &HoloExpr::constant(beta));
        let den = HoloExpr::sum(&self.scale(gamma), &HoloExpr::constant(delta));
        HoloExpr::quotient(&num, &den)
    }

    /// Exact symbolic derivative, computed once and cached.
    pub fn derivative(&self) -> HoloExpr {
        self.0.deriv.get_or_init(|| self.compute_derivative()).clone()
    }

    fn compute_derivative(&self) -> HoloExpr {
        match &self.0.kind {
            Kind::Poly(c) => {
                if c.len() <= 1 {
                    return HoloExpr::zero();
                }
                HoloExpr::poly(c.iter().enumerate().skip(1).map(|(k, v)| v * k as f64).collect())
            }
            Kind::Sum(a, b) => HoloExpr::sum(&a.derivative(), &b.derivative()),
            Kind::Product(a, b) => HoloExpr::sum(
                &HoloExpr::product(&a.derivative(), b),
                &HoloExpr::product(a, &b.derivative()),
            ),
            Kind::Quotient(a, b) => {
                let num = HoloExpr::sub(
                    &HoloExpr::product(&a.derivative(), b),
                    &HoloExpr::product(a, &b.derivative()),
                );
                HoloExpr::quotient(&num, &b.square())
            }
            Kind::Exp(a) => HoloExpr::product(&a.derivative(), self),
        }
    }

    fn program(&self) -> &Program {
        self.0.program.get_or_init(|| Program::compile(&[self]))
    }

    /// Evaluates at a point; errors on a zero denominator or overflow.
    pub fn eval(&self, z: Complex64) -> Result<Complex64, EvalError> {
        let mut regs = Vec::new();
        let p = self.program();
        p.run(z, &mut regs)?;
        Ok(regs[p.outputs[0]])
    }

    /// Number of distinct nodes in the DAG.
    pub fn node_count(&self) -> usize {
        Program::compile(&[self]).ops.len()
    }
}

#[derive(Debug, Clone)]
enum Op {
    Poly(Vec<Complex64>),
    Add(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Exp(usize),
}

/// A straight-line evaluation program for several expressions sharing
/// subexpressions.
#[derive(Debug, Clone)]
pub struct Program {
    ops: Vec<Op>,
    outputs: Vec<usize>,
}

impl Program {
    pub fn compile(exprs: &[&HoloExpr]) -> Program {
        let mut ops = Vec::new();
        let mut seen: HashMap<*const Node, usize> = HashMap::new();
        let outputs = exprs.iter().map(|e| Self::visit(e, &mut ops, &mut seen)).collect();
        Program { ops, outputs }
    }

    fn visit(e: &HoloExpr, ops: &mut Vec<Op>, seen: &mut HashMap<*const Node, usize>) -> usize {
        let key = Arc::as_ptr(&e.0);
        if let Some(&i) = seen.get(&key) {
            return i;
        }
        // iterative post-order to survive deep chains
        let mut stack: Vec<(HoloExpr, bool)> = vec![(e.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            let k = Arc::as_ptr(&node.0);
            if seen.contains_key(&k) {
                continue;
            }
            let children: Vec<&HoloExpr> = match &node.0.kind {
                Kind::Poly(_) => vec![],
                Kind::Sum(a, b) | Kind::Product(a, b) | Kind::Quotient(a, b) => vec![a, b],
                Kind::Exp(a) => vec![a],
            };
            if !expanded {
                stack.push((node.clone(), true));
                for c in children {
                    if !seen.contains_key(&Arc::as_ptr(&c.0)) {
                        stack.push((c.clone(), false));
                    }
                }
                continue;
            }
            let idx = |c: &HoloExpr| seen[&Arc::as_ptr(&c.0)];
            let op = match &node.0.kind {
                Kind::Poly(c) => Op::Poly(c.clone()),
                Kind::Sum(a, b) => Op::Add(idx(a), idx(b)),
                Kind::Product(a, b) => Op::Mul(idx(a), idx(b)),
                Kind::Quotient(a, b) => Op::Div(idx(a), idx(b)),
                Kind::Exp(a) => Op::Exp(idx(a)),
            };
            ops.push(op);
            seen.insert(k, ops.len() - 1);
        }
        seen[&key]
    }

    /// Runs the program, leaving every node value in `regs`.
    pub fn run(&self, z: Complex64, regs: &mut Vec<Complex64>) -> Result<(), EvalError> {
        regs.clear();
        regs.reserve(self.ops.len());
        for op in &self.ops {
            let v = match op {
                Op::Poly(c) => c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, a| acc * z + a),
                Op::Add(a, b) => regs[*a] + regs[*b],
                Op::Mul(a, b) => regs[*a] * regs[*b],
                Op::Div(a, b) => {
                    let d = regs[*b];
                    if d.norm_sqr() == 0.0 {
                        return Err(EvalError::Singular { z });
                    }
                    regs[*a] / d
                }
                Op::Exp(a) => regs[*a].exp(),
            };
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(EvalError::Singular { z });
            }
            regs.push(v);
        }
        Ok(())
    }

    /// Evaluates all outputs at `z`.
    pub fn eval(&self, z: Complex64, regs: &mut Vec<Complex64>, out: &mut [Complex64]) -> Result<(), EvalError> {
        self.run(z, regs)?;
        for (o, &i) in out.iter_mut().zip(&self.outputs) {
            *o = regs[i];
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// One node of a serialised expression DAG. Coefficients are written as
/// shortest round-trip decimal strings so that parsing reproduces the exact
/// binary value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NodeRecord {
    Poly { coeffs: Vec<[String; 2]> },
    Sum { args: [usize; 2] },
    Product { args: [usize; 2] },
    Quotient { args: [usize; 2] },
    Exp { arg: usize },
}

/// A topologically ordered node table; children always precede parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExprTable {
    pub nodes: Vec<NodeRecord>,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str) -> Result<f64, EvalError> {
    s.parse::<f64>().map_err(|e| EvalError::Table(format!("bad number {s:?}: {e}")))
}

impl ExprTable {
    /// Serialises several expressions into one table, returning root indices.
    pub fn from_exprs(exprs: &[&HoloExpr]) -> (ExprTable, Vec<usize>) {
        let p = Program::compile(exprs);
        let nodes = p
            .ops
            .iter()
            .map(|op| match op {
                Op::Poly(c) => NodeRecord::Poly {
                    coeffs: c.iter().map(|v| [fmt_f64(v.re), fmt_f64(v.im)]).collect(),
                },
                Op::Add(a, b) => NodeRecord::Sum { args: [*a, *b] },
                Op::Mul(a, b) => NodeRecord::Product { args: [*a, *b] },
                Op::Div(a, b) => NodeRecord::Quotient { args: [*a, *b] },
                Op::Exp(a) => NodeRecord::Exp { arg: *a },
            })
            .collect();
        (ExprTable { nodes }, p.outputs)
    }

    /// Rebuilds expressions. Structural simplification is not reapplied, so
    /// the DAG shape round-trips.
    pub fn to_exprs(&self, roots: &[usize]) -> Result<Vec<HoloExpr>, EvalError> {
        let mut built: Vec<HoloExpr> = Vec::with_capacity(self.nodes.len());
        for (i, rec) in self.nodes.iter().enumerate() {
            let get = |j: usize| -> Result<HoloExpr, EvalError> {
                if j >= i {
                    return Err(EvalError::Table(format!("node {i} references later node {j}")));
                }
                Ok(built[j].clone())
            };
            let e = match rec {
                NodeRecord::Poly { coeffs } => {
                    let c = coeffs
                        .iter()
                        .map(|[re, im]| Ok(Complex64::new(parse_f64(re)?, parse_f64(im)?)))
                        .collect::<Result<Vec<_>, EvalError>>()?;
                    if c.is_empty() {
                        return Err(EvalError::Table(format!("node {i}: empty polynomial")));
                    }
                    HoloExpr::from_kind(Kind::Poly(c))
                }
                NodeRecord::Sum { args } => HoloExpr::from_kind(Kind::Sum(get(args[0])?, get(args[1])?)),
                NodeRecord::Product { args } => HoloExpr::from_kind(Kind::Product(get(args[0])?, get(args[1])?)),
                NodeRecord::Quotient { args } => HoloExpr::from_kind(Kind::Quotient(get(args[0])?, get(args[1])?)),
                NodeRecord::Exp { arg } => HoloExpr::from_kind(Kind::Exp(get(*arg)?)),
            };
            built.push(e);
        }
        roots
            .iter()
            .map(|&r| built.get(r).cloned().ok_or_else(|| EvalError::Table(format!("root {r} out of range"))))
            .collect()
    }
}
