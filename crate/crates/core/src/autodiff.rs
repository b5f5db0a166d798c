//! Reverse-mode automatic differentiation on a Wengert tape of scalar
//! operations.
//!
//! Every operation appends one record holding parent indices and the local
//! partial derivatives evaluated at record time; [`Tape::backward`] then runs
//! a single reverse sweep. The tape is intentionally scalar: the models it
//! serves are small recurrences (tens of parameters over tens of thousands of
//! timesteps), where tape construction dominates and vectorization would buy
//! nothing.
//!
//! A `Tape` is not thread-safe; concurrency is achieved by running distinct
//! tapes on distinct threads. `backward` may be called repeatedly on the same
//! recording (from the same or different roots) and is a pure function of the
//! tape contents: repeated calls yield bit-identical gradients.

use std::cell::{Cell, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::real::{max_primal, min_primal, sigmoid_primal, Real};

#[derive(Clone, Copy)]
struct Record {
    parents: [u32; 2],
    partials: [f64; 2],
}

/// First non-finite value produced on a tape, kept for diagnostics.
/// Domain violations (log or sqrt of a negative, division by zero) surface
/// here, since IEEE semantics turn them into NaN or infinity.
#[derive(Clone, Copy, Debug)]
pub struct NonFiniteEvent {
    /// Index of the offending record.
    pub index: usize,
    /// Operation that produced the value.
    pub op: &'static str,
    /// The value itself.
    pub value: f64,
}

/// Tape of recorded scalar operations.
#[derive(Default)]
pub struct Tape {
    records: RefCell<Vec<Record>>,
    nonfinite: Cell<Option<NonFiniteEvent>>,
}

/// A scalar variable bound to a tape. Copyable; carries its primal value.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: u32,
    value: f64,
}

/// Adjoints from one reverse sweep; query with [`Gradients::wrt`].
pub struct Gradients {
    adjoints: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(records: usize) -> Self {
        Tape {
            records: RefCell::new(Vec::with_capacity(records)),
            nonfinite: Cell::new(None),
        }
    }

    /// Number of recorded operations.
    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops all records while keeping the allocation. Requires exclusive
    /// access, so no live `Var` can survive a clear.
    pub fn clear(&mut self) {
        self.records.get_mut().clear();
        self.nonfinite.set(None);
    }

    /// First non-finite value recorded since the last clear, if any.
    pub fn nonfinite(&self) -> Option<NonFiniteEvent> {
        self.nonfinite.get()
    }

    /// Introduces a constant or independent variable onto the tape.
    pub fn lift(&self, value: f64) -> Var<'_> {
        self.push("lift", [0, 0], [0.0, 0.0], value)
    }

    fn push(
        &self,
        op: &'static str,
        parents: [u32; 2],
        partials: [f64; 2],
        value: f64,
    ) -> Var<'_> {
        let mut records = self.records.borrow_mut();
        let index = u32::try_from(records.len()).expect("tape exceeds u32 record limit");
        records.push(Record { parents, partials });
        if !value.is_finite() && self.nonfinite.get().is_none() {
            self.nonfinite.set(Some(NonFiniteEvent {
                index: index as usize,
                op,
                value,
            }));
        }
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Reverse sweep from `root`, seeding its adjoint with 1.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(self, root.tape),
            "backward root belongs to a different tape"
        );
        let records = self.records.borrow();
        let mut adjoints = vec![0.0; records.len()];
        adjoints[root.index as usize] = 1.0;
        for i in (0..records.len()).rev() {
            let a = adjoints[i];
            if a == 0.0 {
                continue;
            }
            let r = records[i];
            adjoints[r.parents[0] as usize] += a * r.partials[0];
            adjoints[r.parents[1] as usize] += a * r.partials[1];
        }
        Gradients { adjoints }
    }
}

impl Gradients {
    /// Derivative of the backward root with respect to `v`.
    pub fn wrt(&self, v: Var<'_>) -> f64 {
        self.adjoints[v.index as usize]
    }
}

impl<'t> Var<'t> {
    pub fn value(self) -> f64 {
        self.value
    }

    fn unary(self, op: &'static str, partial: f64, value: f64) -> Var<'t> {
        self.tape.push(op, [self.index, 0], [partial, 0.0], value)
    }

    fn binary(self, op: &'static str, rhs: Var<'t>, partials: [f64; 2], value: f64) -> Var<'t> {
        debug_assert!(std::ptr::eq(self.tape, rhs.tape), "vars from different tapes");
        self.tape.push(op, [self.index, rhs.index], partials, value)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.binary("add", rhs, [1.0, 1.0], self.value + rhs.value)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.binary("sub", rhs, [1.0, -1.0], self.value - rhs.value)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.binary("mul", rhs, [rhs.value, self.value], self.value * rhs.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Var<'t>;
    fn div(self, rhs: Var<'t>) -> Var<'t> {
        let value = self.value / rhs.value;
        let db = -self.value / (rhs.value * rhs.value);
        self.binary("div", rhs, [1.0 / rhs.value, db], value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.unary("neg", -1.0, -self.value)
    }
}

impl<'t> Real for Var<'t> {
    fn value(self) -> f64 {
        self.value
    }

    fn constant(self, c: f64) -> Self {
        self.tape.lift(c)
    }

    fn add_c(self, c: f64) -> Self {
        self.unary("add_c", 1.0, self.value + c)
    }

    fn mul_c(self, c: f64) -> Self {
        self.unary("mul_c", c, self.value * c)
    }

    fn rsub_c(self, c: f64) -> Self {
        self.unary("rsub_c", -1.0, c - self.value)
    }

    fn rdiv_c(self, c: f64) -> Self {
        let value = c / self.value;
        self.unary("rdiv_c", -c / (self.value * self.value), value)
    }

    fn exp(self) -> Self {
        let value = self.value.exp();
        self.unary("exp", value, value)
    }

    fn ln(self) -> Self {
        self.unary("log", 1.0 / self.value, self.value.ln())
    }

    fn sqrt(self) -> Self {
        let value = self.value.sqrt();
        self.unary("sqrt", 0.5 / value, value)
    }

    fn sigmoid(self) -> Self {
        let value = sigmoid_primal(self.value);
        self.unary("sigmoid", value * (1.0 - value), value)
    }

    fn tanh(self) -> Self {
        let value = self.value.tanh();
        self.unary("tanh", 1.0 - value * value, value)
    }

    /// Derivative at exactly 0 is 0.
    fn relu(self) -> Self {
        if self.value > 0.0 {
            self.unary("relu", 1.0, self.value)
        } else {
            self.unary("relu", 0.0, 0.0)
        }
    }

    /// Derivative at exactly 0 is 0.
    fn abs(self) -> Self {
        let partial = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary("abs", partial, self.value.abs())
    }

    /// Ties route the full derivative to the first argument.
    fn max(self, other: Self) -> Self {
        let value = max_primal(self.value, other.value);
        let partials = if self.value >= other.value {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        self.binary("max", other, partials, value)
    }

    /// Ties route the full derivative to the first argument.
    fn min(self, other: Self) -> Self {
        let value = min_primal(self.value, other.value);
        let partials = if self.value <= other.value {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        self.binary("min", other, partials, value)
    }
}
