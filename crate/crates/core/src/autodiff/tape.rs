//! Operation tape recorded while a scalar function is evaluated.
//!
//! Every node stores its value as a [`Dual`]; the tangent part is seeded on
//! the inputs before recording, so the forward pass doubles as a forward-mode
//! sweep. [`Tape::adjoints`] then runs reverse mode with dual-valued adjoints.
//! The real part of an input's adjoint is the gradient entry and the tangent
//! part is the corresponding entry of the Hessian-vector product.

use std::cell::RefCell;
use std::ops::{Add, Div, Mul, Neg, Sub};

use super::dual::Dual;

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    DivConst(usize, f64),
    Offset(usize),
    Powi(usize, i32),
    Powf(usize, f64),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Abs(usize),
    Softplus(usize),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: Dual,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(n)),
        }
    }

    fn push(&self, op: Op, value: Dual) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var {
            tape: self,
            idx: nodes.len() - 1,
        }
    }

    /// An independent input with a seeded tangent.
    pub fn input(&self, value: f64, tangent: f64) -> Var<'_> {
        self.push(Op::Leaf, Dual::new(value, tangent))
    }

    pub fn constant(&self, value: f64) -> Var<'_> {
        self.push(Op::Leaf, Dual::constant(value))
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sum of many nodes. An empty iterator gives the constant zero.
    pub fn sum<'t, I>(&'t self, terms: I) -> Var<'t>
    where
        I: IntoIterator<Item = Var<'t>>,
    {
        let mut it = terms.into_iter();
        match it.next() {
            None => self.constant(0.0),
            Some(first) => it.fold(first, |acc, t| acc + t),
        }
    }

    /// `Σ a_i b_i`.
    pub fn dot<'t>(&'t self, a: &[Var<'t>], b: &[Var<'t>]) -> Var<'t> {
        assert_eq!(a.len(), b.len(), "dot of unequal lengths");
        self.sum(a.iter().zip(b).map(|(&x, &y)| x * y))
    }

    /// `Σ c_i x_i` for constant coefficients.
    pub fn weighted_sum<'t>(&'t self, coeffs: &[f64], x: &[Var<'t>]) -> Var<'t> {
        assert_eq!(coeffs.len(), x.len(), "weighted sum of unequal lengths");
        self.sum(coeffs.iter().zip(x).map(|(&c, &v)| v * c))
    }

    /// Affine map `W x + b` with constant `W` (row-major, `rows × x.len()`)
    /// and constant `b`.
    pub fn affine<'t>(&'t self, w: &[f64], x: &[Var<'t>], b: &[f64]) -> Vec<Var<'t>> {
        let cols = x.len();
        assert_eq!(w.len(), b.len() * cols, "affine shape");
        b.iter()
            .enumerate()
            .map(|(r, &br)| self.weighted_sum(&w[r * cols..(r + 1) * cols], x) + br)
            .collect()
    }

    /// `log Σ exp(z_i)`, shifted by the (constant) maximum for stability.
    pub fn logsumexp<'t>(&'t self, z: &[Var<'t>]) -> Var<'t> {
        let shift = z.iter().map(|v| v.value()).fold(f64::NEG_INFINITY, f64::max);
        self.sum(z.iter().map(|&v| (v - shift).exp())).ln() + shift
    }

    /// Reverse sweep from `output`. Returns the dual adjoint of every node.
    pub fn adjoints(&self, output: Var<'_>) -> Vec<Dual> {
        let nodes = self.nodes.borrow();
        let mut adj = vec![Dual::ZERO; nodes.len()];
        adj[output.idx] = Dual::ONE;
        for i in (0..=output.idx).rev() {
            let a = adj[i];
            if a == Dual::ZERO {
                continue;
            }
            let node = nodes[i];
            let val = |j: usize| nodes[j].value;
            match node.op {
                Op::Leaf => {}
                Op::Add(x, y) => {
                    adj[x] += a;
                    adj[y] += a;
                }
                Op::Sub(x, y) => {
                    adj[x] += a;
                    adj[y] += -a;
                }
                Op::Mul(x, y) => {
                    adj[x] += a * val(y);
                    adj[y] += a * val(x);
                }
                Op::Div(x, y) => {
                    let inv = val(y).recip();
                    adj[x] += a * inv;
                    adj[y] += -(a * node.value * inv);
                }
                Op::Neg(x) => adj[x] += -a,
                Op::Scale(x, c) => adj[x] += a * c,
                Op::DivConst(x, c) => adj[x] += Dual::new(a.re / c, a.eps / c),
                Op::Offset(x) => adj[x] += a,
                Op::Powi(x, n) => adj[x] += a * val(x).powi(n - 1) * f64::from(n),
                Op::Powf(x, p) => adj[x] += a * val(x).powf(p - 1.0) * p,
                Op::Exp(x) => adj[x] += a * node.value,
                Op::Ln(x) => adj[x] += a * val(x).recip(),
                Op::Tanh(x) => {
                    let t = node.value;
                    adj[x] += a * (Dual::ONE - t * t);
                }
                Op::Abs(x) => adj[x] += a * val(x).signum0(),
                Op::Softplus(x) => adj[x] += a * val(x).sigmoid(),
            }
        }
        adj
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> f64 {
        self.tape.nodes.borrow()[self.idx].value.re
    }

    pub fn dual(&self) -> Dual {
        self.tape.nodes.borrow()[self.idx].value
    }

    pub(crate) fn index(&self) -> usize {
        self.idx
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    fn unary(self, op: Op, value: Dual) -> Var<'t> {
        self.tape.push(op, value)
    }

    pub fn exp(self) -> Self {
        self.unary(Op::Exp(self.idx), self.dual().exp())
    }

    pub fn ln(self) -> Self {
        self.unary(Op::Ln(self.idx), self.dual().ln())
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.idx), self.dual().tanh())
    }

    pub fn powi(self, n: i32) -> Self {
        self.unary(Op::Powi(self.idx, n), self.dual().powi(n))
    }

    pub fn powf(self, p: f64) -> Self {
        self.unary(Op::Powf(self.idx, p), self.dual().powf(p))
    }

    pub fn square(self) -> Self {
        self.powi(2)
    }

    /// `|x|` with the subgradient at zero taken as zero.
    pub fn abs(self) -> Self {
        self.unary(Op::Abs(self.idx), self.dual().abs())
    }

    pub fn softplus(self) -> Self {
        self.unary(Op::Softplus(self.idx), self.dual().softplus())
    }

    fn same_tape(&self, other: &Var<'t>) {
        debug_assert!(
            std::ptr::eq(self.tape, other.tape),
            "variables from different tapes"
        );
    }
}

macro_rules! binary_var_op {
    ($trait:ident, $method:ident, $variant:ident, $op:tt) => {
        impl<'t> $trait for Var<'t> {
            type Output = Var<'t>;
            fn $method(self, rhs: Var<'t>) -> Var<'t> {
                self.same_tape(&rhs);
                let value = self.dual() $op rhs.dual();
                self.tape.push(Op::$variant(self.idx, rhs.idx), value)
            }
        }
    };
}

binary_var_op!(Add, add, Add, +);
binary_var_op!(Sub, sub, Sub, -);
binary_var_op!(Mul, mul, Mul, *);
binary_var_op!(Div, div, Div, /);

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary(Op::Neg(self.idx), -self.dual())
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Var<'t>;
    fn add(self, c: f64) -> Var<'t> {
        self.unary(Op::Offset(self.idx), self.dual() + Dual::constant(c))
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, c: f64) -> Var<'t> {
        self + (-c)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, c: f64) -> Var<'t> {
        self.unary(Op::Scale(self.idx, c), self.dual() * c)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Var<'t>;
    fn div(self, c: f64) -> Var<'t> {
        let d = self.dual();
        self.unary(Op::DivConst(self.idx, c), Dual::new(d.re / c, d.eps / c))
    }
}

impl<'t> Add<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn add(self, v: Var<'t>) -> Var<'t> {
        v + self
    }
}

impl<'t> Sub<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn sub(self, v: Var<'t>) -> Var<'t> {
        (-v) + self
    }
}

impl<'t> Mul<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn mul(self, v: Var<'t>) -> Var<'t> {
        v * self
    }
}

impl<'t> Div<Var<'t>> for f64 {
    type Output = Var<'t>;
    fn div(self, v: Var<'t>) -> Var<'t> {
        v.powi(-1) * self
    }
}
