//! Scalar abstraction shared by plain `f64` evaluation and forward-mode
//! derivative propagation.
//!
//! Every model function in this crate (plant step maps, barrier functions,
//! cost residuals) is written once against [`Real`] and evaluated either on
//! `f64` or on [`Dual`], which carries a dense gradient with respect to at
//! most [`MAX_DERIVS`] local inputs.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Maximum number of independent inputs a single [`Dual`] tracks.
pub const MAX_DERIVS: usize = 16;

pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(&self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn sqrt(self) -> Self;

    fn square(self) -> Self {
        self * self
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(&self) -> f64 {
        *self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

/// Value plus gradient with respect to up to [`MAX_DERIVS`] seeded inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; MAX_DERIVS],
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual {
            v,
            d: [0.0; MAX_DERIVS],
        }
    }

    /// Independent variable number `slot`.
    pub fn variable(v: f64, slot: usize) -> Self {
        let mut d = [0.0; MAX_DERIVS];
        d[slot] = 1.0;
        Dual { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for di in d.iter_mut() {
            *di *= dv;
        }
        Dual { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, rhs: Dual) -> Dual {
        self.v += rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d.iter()) {
            *a += b;
        }
        self
    }
}

impl Sub for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, rhs: Dual) -> Dual {
        self.v -= rhs.v;
        for (a, b) in self.d.iter_mut().zip(rhs.d.iter()) {
            *a -= b;
        }
        self
    }
}

impl Mul for Dual {
    type Output = Dual;
    #[inline]
    fn mul(self, rhs: Dual) -> Dual {
        let mut d = [0.0; MAX_DERIVS];
        for i in 0..MAX_DERIVS {
            d[i] = self.d[i] * rhs.v + rhs.d[i] * self.v;
        }
        Dual {
            v: self.v * rhs.v,
            d,
        }
    }
}

impl Div for Dual {
    type Output = Dual;
    #[inline]
    fn div(self, rhs: Dual) -> Dual {
        let inv = 1.0 / rhs.v;
        let v = self.v * inv;
        let mut d = [0.0; MAX_DERIVS];
        for i in 0..MAX_DERIVS {
            d[i] = (self.d[i] - v * rhs.d[i]) * inv;
        }
        Dual { v, d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    #[inline]
    fn neg(mut self) -> Dual {
        self.v = -self.v;
        for a in self.d.iter_mut() {
            *a = -*a;
        }
        self
    }
}

impl Add<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn add(mut self, rhs: f64) -> Dual {
        self.v += rhs;
        self
    }
}

impl Sub<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn sub(mut self, rhs: f64) -> Dual {
        self.v -= rhs;
        self
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    #[inline]
    fn mul(mut self, rhs: f64) -> Dual {
        self.v *= rhs;
        for a in self.d.iter_mut() {
            *a *= rhs;
        }
        self
    }
}

impl Real for Dual {
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    #[inline]
    fn value(&self) -> f64 {
        self.v
    }
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c)
    }
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s)
    }
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly<T: Real>(x: T, y: T) -> T {
        (x * y + x.sin()) / (y.square() + 1.0) - x.cos() * 3.0 + (x.square() + 2.0).sqrt()
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, y) = (0.7, -1.3);
        let out = poly(Dual::variable(x, 0), Dual::variable(y, 1));
        assert_eq!(out.v, poly(x, y));
        let h = 1e-6;
        let gx = (poly(x + h, y) - poly(x - h, y)) / (2.0 * h);
        let gy = (poly(x, y + h) - poly(x, y - h)) / (2.0 * h);
        assert!((out.d[0] - gx).abs() < 1e-8);
        assert!((out.d[1] - gy).abs() < 1e-8);
        assert!(out.d[2..].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn constants_carry_no_gradient() {
        let c = Dual::constant(2.0) * Dual::constant(3.0) + 1.0;
        assert_eq!(c.v, 7.0);
        assert!(c.d.iter().all(|&g| g == 0.0));
    }
}
