//! First-order dual numbers for forward-mode differentiation.

use std::ops::{Add, Mul, Neg, Sub};

/// Scalar arithmetic shared by plain and dual evaluation of the denoiser.
pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn constant(value: f64) -> Self;
    fn scale(self, c: f64) -> Self;
    fn silu(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn constant(value: f64) -> Self {
        value
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        self * c
    }

    #[inline]
    fn silu(self) -> Self {
        self * sigmoid(self)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// d/dx [x * sigmoid(x)]
#[inline]
pub(crate) fn silu_derivative(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `re + eps * ε` with `ε² = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn new(re: f64, eps: f64) -> Self {
        Dual { re, eps }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, rhs: Dual) -> Dual {
        Dual::new(self.re + rhs.re, self.eps + rhs.eps)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, rhs: Dual) -> Dual {
        Dual::new(self.re - rhs.re, self.eps - rhs.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        Dual::new(self.re * rhs.re, self.re * rhs.eps + self.eps * rhs.re)
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

impl Scalar for Dual {
    #[inline]
    fn constant(value: f64) -> Self {
        Dual::new(value, 0.0)
    }

    #[inline]
    fn scale(self, c: f64) -> Self {
        Dual::new(self.re * c, self.eps * c)
    }

    #[inline]
    fn silu(self) -> Self {
        Dual::new(self.re.silu(), self.eps * silu_derivative(self.re))
    }
}
