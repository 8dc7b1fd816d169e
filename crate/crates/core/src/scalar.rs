//! Scalar abstraction used to evaluate the model residuals either on plain
//! floats or on hyper-dual numbers.
//!
//! A hyper-dual number `a + b·e1 + c·e2 + d·e1e2` (with `e1² = e2² = 0`)
//! carries two independent first derivatives and the mixed second
//! derivative. Seeding `e1` along one coordinate and `e2` along a fixed
//! direction yields one column of the contracted second derivative in a
//! single evaluation, exactly.

use core::ops::{Add, Mul, Neg, Sub};

pub trait Scalar:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    fn constant(value: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn scale(self, factor: f64) -> Self;
}

impl Scalar for f64 {
    #[inline]
    fn constant(value: f64) -> Self {
        value
    }
    #[inline]
    fn sin(self) -> Self {
        libm::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        libm::cos(self)
    }
    #[inline]
    fn scale(self, factor: f64) -> Self {
        self * factor
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct HyperDual {
    pub re: f64,
    pub e1: f64,
    pub e2: f64,
    pub e12: f64,
}

impl HyperDual {
    pub const fn new(re: f64, e1: f64, e2: f64, e12: f64) -> Self {
        Self { re, e1, e2, e12 }
    }

    /// Applies a scalar function given its value and first two derivatives.
    #[inline]
    fn chain(self, f: f64, df: f64, d2f: f64) -> Self {
        Self {
            re: f,
            e1: df * self.e1,
            e2: df * self.e2,
            e12: df * self.e12 + d2f * self.e1 * self.e2,
        }
    }
}

impl Add for HyperDual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.e1 + o.e1, self.e2 + o.e2, self.e12 + o.e12)
    }
}

impl Sub for HyperDual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.e1 - o.e1, self.e2 - o.e2, self.e12 - o.e12)
    }
}

impl Mul for HyperDual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re,
            self.re * o.e1 + self.e1 * o.re,
            self.re * o.e2 + self.e2 * o.re,
            self.re * o.e12 + self.e1 * o.e2 + self.e2 * o.e1 + self.e12 * o.re,
        )
    }
}

impl Neg for HyperDual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.re, -self.e1, -self.e2, -self.e12)
    }
}

impl Scalar for HyperDual {
    #[inline]
    fn constant(value: f64) -> Self {
        Self::new(value, 0.0, 0.0, 0.0)
    }
    #[inline]
    fn sin(self) -> Self {
        let (s, c) = (libm::sin(self.re), libm::cos(self.re));
        self.chain(s, c, -s)
    }
    #[inline]
    fn cos(self) -> Self {
        let (s, c) = (libm::sin(self.re), libm::cos(self.re));
        self.chain(c, -s, -c)
    }
    #[inline]
    fn scale(self, factor: f64) -> Self {
        Self::new(self.re * factor, self.e1 * factor, self.e2 * factor, self.e12 * factor)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mixed_derivative_of_product_with_sine() {
        // f(x, y) = x * sin(y); d²f/dxdy = cos(y)
        let (x0, y0) = (0.7, 1.3);
        let x = HyperDual::new(x0, 1.0, 0.0, 0.0);
        let y = HyperDual::new(y0, 0.0, 1.0, 0.0);
        let f = x * y.sin();
        assert!((f.re - x0 * libm::sin(y0)).abs() < 1e-15);
        assert!((f.e1 - libm::sin(y0)).abs() < 1e-15);
        assert!((f.e2 - x0 * libm::cos(y0)).abs() < 1e-15);
        assert!((f.e12 - libm::cos(y0)).abs() < 1e-15);
    }

    #[test]
    fn second_derivative_of_cosine() {
        let x0 = 0.4;
        let x = HyperDual::new(x0, 1.0, 1.0, 0.0);
        let f = x.cos();
        assert!((f.e12 + libm::cos(x0)).abs() < 1e-15);
    }
}
