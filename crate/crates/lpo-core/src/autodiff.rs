//! Tape-based reverse-mode automatic differentiation over scalars, with a
//! stop-gradient primitive.
//!
//! A [`Tape`] records every node created on it: its forward value, its
//! parents together with the local derivatives computed at construction
//! time, and a `detached` flag. Nodes are immutable once created, and a
//! node's parents always precede it on the tape, so every recorded graph is
//! acyclic by construction and reverse tape order is a valid topological
//! order for backpropagation.
//!
//! [`Var::backward`] runs a fresh pass each call: it zeroes all adjoints,
//! seeds the root with 1, and sweeps the tape once. The result is returned
//! as [`Gradients`]; repeated calls never accumulate across passes.
//!
//! The stop-gradient primitive [`Var::detach`] produces a node with the
//! same forward value whose adjoint is never propagated to its source, so
//! forward values of any expression are unchanged by inserting `detach`
//! while every path through it contributes exactly zero gradient.
//!
//! Kinked primitives use the sgn(0) = 0 convention: [`Var::abs`] and
//! [`Var::max0`] both report subgradient 0 exactly at their kink.
//!
//! # Example
//!
//! ```
//! use lpo_core::autodiff::Tape;
//!
//! let tape = Tape::new();
//! let x = tape.var(3.0);
//! let y = &x * &x.detach(); // right factor frozen
//! let grads = y.backward();
//! assert_eq!(y.value(), 9.0);
//! assert_eq!(grads.get(&x), 3.0); // only the live factor contributes
//! ```
//!
//! Tapes are single-threaded; distinct tapes are independent and may live
//! on distinct threads.

use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::ops::{Add, Mul, Neg, Sub};

use crate::math;

/// Errors from graph construction.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    /// log of a non-positive value.
    #[error("log of non-positive value {0}")]
    LogDomain(f64),
}

/// Records the computation graph; create variables with [`Tape::var`].
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    /// Creates an empty tape.
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    /// Creates a differentiable leaf variable.
    pub fn var(&self, value: f64) -> Var {
        self.push(value, Parents::none(), false)
    }

    /// Creates a constant node (a leaf that no one differentiates against).
    pub fn constant(&self, value: f64) -> Var {
        self.push(value, Parents::none(), false)
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    /// True when no nodes have been recorded.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: f64, parents: Parents, detached: bool) -> Var {
        let mut inner = self.inner.borrow_mut();
        let idx = inner.nodes.len() as u32;
        // Parents must already be on the tape; this is what keeps every
        // recorded graph acyclic.
        debug_assert!(parents.iter().all(|(p, _)| *p < idx));
        inner.nodes.push(Node {
            value,
            parents,
            detached,
        });
        Var {
            tape: self.clone(),
            idx,
        }
    }

    fn same_tape(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

struct TapeInner {
    nodes: Vec<Node>,
}

/// One recorded scalar: forward value, parent edges with local derivatives,
/// and the stop-gradient flag.
struct Node {
    value: f64,
    parents: Parents,
    detached: bool,
}

/// Up to two parent edges, stored inline.
#[derive(Clone, Copy)]
struct Parents {
    edges: [(u32, f64); 2],
    len: u8,
}

impl Parents {
    fn none() -> Self {
        Self {
            edges: [(0, 0.0); 2],
            len: 0,
        }
    }

    fn one(p: u32, d: f64) -> Self {
        Self {
            edges: [(p, d), (0, 0.0)],
            len: 1,
        }
    }

    fn two(p0: u32, d0: f64, p1: u32, d1: f64) -> Self {
        Self {
            edges: [(p0, d0), (p1, d1)],
            len: 2,
        }
    }

    fn iter(&self) -> impl Iterator<Item = &(u32, f64)> {
        self.edges[..self.len as usize].iter()
    }
}

/// A scalar node handle on a [`Tape`].
#[derive(Clone)]
pub struct Var {
    tape: Tape,
    idx: u32,
}

impl core::fmt::Debug for Var {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Var")
            .field("idx", &self.idx)
            .field("value", &self.value())
            .finish()
    }
}

impl Var {
    /// Forward value of this node.
    pub fn value(&self) -> f64 {
        self.tape.inner.borrow().nodes[self.idx as usize].value
    }

    /// Runs a backward pass from this node and returns all adjoints.
    ///
    /// Every pass starts from a zeroed adjoint buffer, so calling this
    /// repeatedly (or from several roots) never mixes results.
    pub fn backward(&self) -> Gradients {
        let inner = self.tape.inner.borrow();
        let mut grads = vec![0.0; inner.nodes.len()];
        grads[self.idx as usize] = 1.0;
        for idx in (0..=self.idx as usize).rev() {
            let node = &inner.nodes[idx];
            if node.detached {
                continue;
            }
            let g = grads[idx];
            if g == 0.0 {
                continue;
            }
            for &(p, d) in node.parents.iter() {
                grads[p as usize] += g * d;
            }
        }
        Gradients {
            tape: self.tape.clone(),
            grads,
        }
    }

    fn unary(&self, value: f64, local: f64) -> Var {
        self.tape.push(value, Parents::one(self.idx, local), false)
    }

    fn binary(&self, rhs: &Var, value: f64, dl: f64, dr: f64) -> Var {
        assert!(self.tape.same_tape(&rhs.tape), "operands must share a tape");
        self.tape
            .push(value, Parents::two(self.idx, dl, rhs.idx, dr), false)
    }

    /// Stop-gradient: same forward value, zero adjoint flow to the source.
    pub fn detach(&self) -> Var {
        self.tape
            .push(self.value(), Parents::one(self.idx, 1.0), true)
    }

    /// |x| with subgradient sgn(x), 0 at the kink.
    pub fn abs(&self) -> Var {
        let v = self.value();
        self.unary(math::abs(v), math::sgn(v))
    }

    /// max(0, x) with subgradient 1 for x > 0 and 0 at the kink.
    pub fn max0(&self) -> Var {
        let v = self.value();
        self.unary(math::max0(v), if v > 0.0 { 1.0 } else { 0.0 })
    }

    /// e^x.
    pub fn exp(&self) -> Var {
        let e = math::exp(self.value());
        self.unary(e, e)
    }

    /// ln(x); errors on non-positive input.
    pub fn ln(&self) -> Result<Var, GraphError> {
        let v = self.value();
        if v <= 0.0 {
            return Err(GraphError::LogDomain(v));
        }
        Ok(self.unary(math::ln(v), 1.0 / v))
    }

    /// Logistic function σ(x).
    pub fn sigmoid(&self) -> Var {
        let s = math::sigmoid(self.value());
        self.unary(s, s * (1.0 - s))
    }

    /// log σ(x), with local derivative σ(−x).
    pub fn log_sigmoid(&self) -> Var {
        let v = self.value();
        self.unary(math::log_sigmoid(v), math::sigmoid(-v))
    }

    /// tanh(x).
    pub fn tanh(&self) -> Var {
        let t = math::tanh(self.value());
        self.unary(t, 1.0 - t * t)
    }

    /// sgn(x) as a constant: the value is ±1 (or 0 at 0) and no gradient
    /// flows through it.
    pub fn sgn_const(&self) -> Var {
        self.tape.constant(math::sgn(self.value()))
    }

    /// x + c for a constant c.
    pub fn add_const(&self, c: f64) -> Var {
        self.unary(self.value() + c, 1.0)
    }

    /// x − c for a constant c.
    pub fn sub_const(&self, c: f64) -> Var {
        self.unary(self.value() - c, 1.0)
    }

    /// x · c for a constant c.
    pub fn mul_const(&self, c: f64) -> Var {
        self.unary(self.value() * c, c)
    }
}

/// Adjoints produced by one [`Var::backward`] pass.
pub struct Gradients {
    tape: Tape,
    grads: Vec<f64>,
}

impl Gradients {
    /// ∂root/∂var for a node on the same tape.
    pub fn get(&self, var: &Var) -> f64 {
        assert!(
            self.tape.same_tape(&var.tape),
            "gradient queried for a node from a different tape"
        );
        self.grads[var.idx as usize]
    }
}

impl Add for &Var {
    type Output = Var;
    fn add(self, rhs: &Var) -> Var {
        self.binary(rhs, self.value() + rhs.value(), 1.0, 1.0)
    }
}

impl Sub for &Var {
    type Output = Var;
    fn sub(self, rhs: &Var) -> Var {
        self.binary(rhs, self.value() - rhs.value(), 1.0, -1.0)
    }
}

impl Mul for &Var {
    type Output = Var;
    fn mul(self, rhs: &Var) -> Var {
        self.binary(rhs, self.value() * rhs.value(), rhs.value(), self.value())
    }
}

impl Neg for &Var {
    type Output = Var;
    fn neg(self) -> Var {
        self.unary(-self.value(), -1.0)
    }
}

/// Sums a non-empty sequence of vars left to right.
pub fn sum(vars: &[Var]) -> Var {
    assert!(!vars.is_empty(), "sum of zero vars");
    let mut acc = vars[0].clone();
    for v in &vars[1..] {
        acc = &acc + v;
    }
    acc
}
