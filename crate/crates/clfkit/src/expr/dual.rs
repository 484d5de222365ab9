//! First-order dual numbers for forward-mode differentiation.
//!
//! A [`Dual`] carries one directional-derivative slot next to the value;
//! gradients of an n-variable expression are assembled from n passes with
//! unit seed directions.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value plus one directional derivative, `(v, v')`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    #[inline]
    pub fn new(value: f64, deriv: f64) -> Self {
        Self { value, deriv }
    }

    /// A constant: zero derivative slot.
    #[inline]
    pub fn constant(value: f64) -> Self {
        Self::new(value, 0.0)
    }

    /// The seed variable of a differentiation pass: unit derivative slot.
    #[inline]
    pub fn seeded(value: f64) -> Self {
        Self::new(value, 1.0)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.value.is_finite() && self.deriv.is_finite()
    }

    #[inline]
    pub fn sin(self) -> Self {
        Self::new(self.value.sin(), self.value.cos() * self.deriv)
    }

    #[inline]
    pub fn cos(self) -> Self {
        Self::new(self.value.cos(), -self.value.sin() * self.deriv)
    }

    #[inline]
    pub fn tanh(self) -> Self {
        let t = self.value.tanh();
        Self::new(t, (1.0 - t * t) * self.deriv)
    }

    #[inline]
    pub fn exp(self) -> Self {
        let e = self.value.exp();
        Self::new(e, e * self.deriv)
    }

    #[inline]
    pub fn ln(self) -> Self {
        Self::new(self.value.ln(), self.deriv / self.value)
    }

    /// Square root. The derivative slot at exactly 0 is defined as 0; the
    /// one-sided derivative is unbounded there and an infinity would poison
    /// every downstream gradient.
    #[inline]
    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        let d = if self.value == 0.0 {
            0.0
        } else {
            self.deriv / (2.0 * s)
        };
        Self::new(s, d)
    }

    /// Absolute value with the subgradient convention `abs'(0) = 0`.
    #[inline]
    pub fn abs(self) -> Self {
        let d = if self.value > 0.0 {
            self.deriv
        } else if self.value < 0.0 {
            -self.deriv
        } else {
            0.0
        };
        Self::new(self.value.abs(), d)
    }

    /// Power with a constant exponent, `d(u^c) = c u^(c-1) u'`.
    ///
    /// Kept separate from [`Dual::pow`] so that integer exponents on negative
    /// bases stay well defined (no logarithm involved).
    #[inline]
    pub fn powc(self, c: f64) -> Self {
        let v = self.value.powf(c);
        let d = if c == 0.0 {
            0.0
        } else {
            c * self.value.powf(c - 1.0) * self.deriv
        };
        Self::new(v, d)
    }

    /// General power `u^w = exp(w ln u)`; requires a positive base.
    #[inline]
    pub fn pow(self, other: Self) -> Self {
        let v = self.value.powf(other.value);
        let d = v * (other.deriv * self.value.ln() + other.value * self.deriv / self.value);
        Self::new(v, d)
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.value + o.value, self.deriv + o.deriv)
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.value - o.value, self.deriv - o.deriv)
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, o: Dual) -> Dual {
        Dual::new(
            self.value * o.value,
            self.deriv * o.value + self.value * o.deriv,
        )
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, o: Dual) -> Dual {
        Dual::new(
            self.value / o.value,
            (self.deriv * o.value - self.value * o.deriv) / (o.value * o.value),
        )
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(self) -> Dual {
        Dual::new(-self.value, -self.deriv)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn product_rule() {
        let a = Dual::new(2.0, 3.0);
        let b = Dual::new(5.0, 7.0);
        let p = a * b;
        assert_eq!(p.value, 10.0);
        assert_eq!(p.deriv, 3.0 * 5.0 + 2.0 * 7.0);
    }

    #[test]
    fn quotient_rule() {
        let x = Dual::seeded(3.0);
        let r = Dual::constant(1.0) / x;
        assert_relative_eq!(r.value, 1.0 / 3.0);
        assert_relative_eq!(r.deriv, -1.0 / 9.0);
    }

    #[test]
    fn chain_rule_through_sin() {
        // d/dx sin(x^2) = 2x cos(x^2)
        let x = Dual::seeded(1.3);
        let y = (x * x).sin();
        assert_relative_eq!(y.value, (1.3f64 * 1.3).sin());
        assert_relative_eq!(y.deriv, 2.0 * 1.3 * (1.3f64 * 1.3).cos());
    }

    #[test]
    fn sqrt_and_abs_pinned_at_zero() {
        assert_eq!(Dual::seeded(0.0).sqrt().deriv, 0.0);
        assert_eq!(Dual::seeded(0.0).abs().deriv, 0.0);
        assert_eq!(Dual::seeded(-2.0).abs().deriv, -1.0);
    }

    #[test]
    fn const_exponent_allows_negative_base() {
        let x = Dual::seeded(-3.0);
        let y = x.powc(2.0);
        assert_eq!(y.value, 9.0);
        assert_eq!(y.deriv, -6.0);
    }

    #[test]
    fn zero_exponent_has_zero_derivative() {
        let y = Dual::seeded(0.0).powc(0.0);
        assert_eq!(y.value, 1.0);
        assert_eq!(y.deriv, 0.0);
    }
}
