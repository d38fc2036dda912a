//! Minimal scalar abstraction so the per-dimension diagonal divergences can be
//! evaluated either as plain `f64` or as a forward-mode dual number carrying the
//! partial derivatives with respect to `(μ, log σ²)`.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub(crate) trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn exp(self) -> Self;
    fn ln(self) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
}

/// `value + d[0] ε₀ + d[1] ε₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dual2 {
    pub value: f64,
    pub d: [f64; 2],
}

impl Dual2 {
    pub fn var(value: f64, slot: usize) -> Self {
        let mut d = [0.0; 2];
        d[slot] = 1.0;
        Self { value, d }
    }

    #[inline]
    fn chain(self, value: f64, deriv: f64) -> Self {
        Self {
            value,
            d: [self.d[0] * deriv, self.d[1] * deriv],
        }
    }
}

impl Add for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self {
            value: self.value + o.value,
            d: [self.d[0] + o.d[0], self.d[1] + o.d[1]],
        }
    }
}

impl Sub for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self {
            value: self.value - o.value,
            d: [self.d[0] - o.d[0], self.d[1] - o.d[1]],
        }
    }
}

impl Mul for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self {
            value: self.value * o.value,
            d: [
                self.d[0] * o.value + self.value * o.d[0],
                self.d[1] * o.value + self.value * o.d[1],
            ],
        }
    }
}

impl Div for Dual2 {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.value;
        let value = self.value * inv;
        Self {
            value,
            d: [(self.d[0] - value * o.d[0]) * inv, (self.d[1] - value * o.d[1]) * inv],
        }
    }
}

impl Neg for Dual2 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            value: -self.value,
            d: [-self.d[0], -self.d[1]],
        }
    }
}

impl Add<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, c: f64) -> Self {
        Self {
            value: self.value + c,
            d: self.d,
        }
    }
}

impl Mul<f64> for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, c: f64) -> Self {
        Self {
            value: self.value * c,
            d: [self.d[0] * c, self.d[1] * c],
        }
    }
}

impl Scalar for Dual2 {
    #[inline]
    fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }
}
