//! Scalar abstraction shared by the plain-`f64` and the taped (differentiable)
//! simulation paths. Both implementations route through the same primal
//! helpers, so a simulation evaluated with either scalar type produces
//! bit-identical values.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Numerically stable logistic function; primal shared by both scalar types.
pub(crate) fn sigmoid_primal(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let t = x.exp();
        t / (1.0 + t)
    }
}

/// `max` with ties resolved toward the first argument.
pub(crate) fn max_primal(a: f64, b: f64) -> f64 {
    if a >= b {
        a
    } else {
        b
    }
}

/// `min` with ties resolved toward the first argument.
pub(crate) fn min_primal(a: f64, b: f64) -> f64 {
    if a <= b {
        a
    } else {
        b
    }
}

/// A real scalar supporting the elementary operation set used by the models.
///
/// Implemented by `f64` (plain evaluation) and by [`crate::autodiff::Var`]
/// (taped evaluation for reverse-mode gradients).
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// Current primal value.
    fn value(self) -> f64;

    /// A constant in the same evaluation context as `self`.
    fn constant(self, c: f64) -> Self;

    /// `self + c` for a plain constant.
    fn add_c(self, c: f64) -> Self;

    /// `self * c` for a plain constant.
    fn mul_c(self, c: f64) -> Self;

    /// `c - self` for a plain constant.
    fn rsub_c(self, c: f64) -> Self;

    /// `c / self` for a plain constant.
    fn rdiv_c(self, c: f64) -> Self;

    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn sigmoid(self) -> Self;
    fn tanh(self) -> Self;
    fn relu(self) -> Self;
    fn abs(self) -> Self;
    fn max(self, other: Self) -> Self;
    fn min(self, other: Self) -> Self;
}

impl Real for f64 {
    fn value(self) -> f64 {
        self
    }

    fn constant(self, c: f64) -> Self {
        c
    }

    fn add_c(self, c: f64) -> Self {
        self + c
    }

    fn mul_c(self, c: f64) -> Self {
        self * c
    }

    fn rsub_c(self, c: f64) -> Self {
        c - self
    }

    fn rdiv_c(self, c: f64) -> Self {
        c / self
    }

    fn exp(self) -> Self {
        f64::exp(self)
    }

    fn ln(self) -> Self {
        f64::ln(self)
    }

    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }

    fn sigmoid(self) -> Self {
        sigmoid_primal(self)
    }

    fn tanh(self) -> Self {
        f64::tanh(self)
    }

    fn relu(self) -> Self {
        if self > 0.0 {
            self
        } else {
            0.0
        }
    }

    fn abs(self) -> Self {
        f64::abs(self)
    }

    fn max(self, other: Self) -> Self {
        max_primal(self, other)
    }

    fn min(self, other: Self) -> Self {
        min_primal(self, other)
    }
}
