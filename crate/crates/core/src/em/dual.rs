//! Forward-mode dual numbers with a fixed number of partials.
//!
//! `CDual` is holomorphic in its complex value: every supported operation is
//! complex-analytic, so the partials with respect to real parameters follow the
//! ordinary chain rule. Non-analytic reductions (`norm_sqr`) drop to a real `Dual`.

use std::ops::{Add, Div, Mul, Neg, Sub};

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<const N: usize> {
    pub value: f64,
    pub grad: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(value: f64) -> Self {
        Dual {
            value,
            grad: [0.0; N],
        }
    }

    /// Independent variable seeded at `slot`.
    pub fn variable(value: f64, slot: usize) -> Self {
        let mut d = Self::constant(value);
        d.grad[slot] = 1.0;
        d
    }

    fn chain(self, value: f64, deriv: f64) -> Self {
        Dual {
            value,
            grad: self.grad.map(|g| g * deriv),
        }
    }

    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }

    pub fn exp(self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    pub fn ln(self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }

    pub fn scale(self, k: f64) -> Self {
        self.chain(self.value * k, k)
    }
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut grad = self.grad;
        for (g, h) in grad.iter_mut().zip(o.grad) {
            *g += h;
        }
        Dual {
            value: self.value + o.value,
            grad,
        }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.chain(-self.value, -1.0)
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = self.grad[i] * o.value + self.value * o.grad[i];
        }
        Dual {
            value: self.value * o.value,
            grad,
        }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.value;
        let mut grad = [0.0; N];
        for i in 0..N {
            grad[i] = (self.grad[i] - self.value * inv * o.grad[i]) * inv;
        }
        Dual {
            value: self.value * inv,
            grad,
        }
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    fn add(mut self, k: f64) -> Self {
        self.value += k;
        self
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        self.scale(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CDual<const N: usize> {
    pub value: Complex64,
    pub grad: [Complex64; N],
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

impl<const N: usize> CDual<N> {
    pub fn constant(value: Complex64) -> Self {
        CDual {
            value,
            grad: [ZERO; N],
        }
    }

    pub fn zero() -> Self {
        Self::constant(ZERO)
    }

    pub fn from_real(d: Dual<N>) -> Self {
        CDual {
            value: Complex64::new(d.value, 0.0),
            grad: d.grad.map(|g| Complex64::new(g, 0.0)),
        }
    }

    fn chain(self, value: Complex64, deriv: Complex64) -> Self {
        CDual {
            value,
            grad: self.grad.map(|g| g * deriv),
        }
    }

    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }

    pub fn scale(self, k: Complex64) -> Self {
        self.chain(self.value * k, k)
    }

    pub fn scale_real(self, k: f64) -> Self {
        CDual {
            value: self.value * k,
            grad: self.grad.map(|g| g * k),
        }
    }

    /// Product with a real dual.
    pub fn mul_real(self, r: Dual<N>) -> Self {
        let mut grad = [ZERO; N];
        for i in 0..N {
            grad[i] = self.grad[i] * r.value + self.value * r.grad[i];
        }
        CDual {
            value: self.value * r.value,
            grad,
        }
    }

    /// |z|^2 as a real dual: d|z|^2 = 2 Re(conj(z) dz).
    pub fn norm_sqr(self) -> Dual<N> {
        let conj = self.value.conj();
        Dual {
            value: self.value.norm_sqr(),
            grad: self.grad.map(|g| 2.0 * (conj * g).re),
        }
    }
}

impl<const N: usize> Add for CDual<N> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        let mut grad = self.grad;
        for (g, h) in grad.iter_mut().zip(o.grad) {
            *g += h;
        }
        CDual {
            value: self.value + o.value,
            grad,
        }
    }
}

impl<const N: usize> Sub for CDual<N> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        self + (-o)
    }
}

impl<const N: usize> Neg for CDual<N> {
    type Output = Self;
    fn neg(self) -> Self {
        CDual {
            value: -self.value,
            grad: self.grad.map(|g| -g),
        }
    }
}

impl<const N: usize> Mul for CDual<N> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        let mut grad = [ZERO; N];
        for i in 0..N {
            grad[i] = self.grad[i] * o.value + self.value * o.grad[i];
        }
        CDual {
            value: self.value * o.value,
            grad,
        }
    }
}

impl<const N: usize> Div for CDual<N> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.value;
        let q = self.value * inv;
        let mut grad = [ZERO; N];
        for i in 0..N {
            grad[i] = (self.grad[i] - q * o.grad[i]) * inv;
        }
        CDual { value: q, grad }
    }
}

impl<const N: usize> Add<f64> for CDual<N> {
    type Output = Self;
    fn add(mut self, k: f64) -> Self {
        self.value += k;
        self
    }
}

impl<const N: usize> Mul<f64> for CDual<N> {
    type Output = Self;
    fn mul(self, k: f64) -> Self {
        self.scale_real(k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> Complex64, x: f64) -> Complex64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn complex_chain_matches_finite_difference() {
        let f = |x: CDual<1>| {
            let a = x * x + CDual::constant(Complex64::new(0.5, -2.0));
            (a.sqrt() / (x + 3.0)) * x
        };
        let fv = |x: f64| {
            let z = Complex64::new(x, 0.0);
            ((z * z + Complex64::new(0.5, -2.0)).sqrt() / (z + 3.0)) * z
        };
        let x0 = 1.3;
        let d = f(CDual::from_real(Dual::variable(x0, 0)));
        let expected = fd(fv, x0);
        assert!((d.grad[0] - expected).norm() < 1e-8);
        let n2 = d.norm_sqr();
        let expected = fd(|x| Complex64::new(fv(x).norm_sqr(), 0.0), x0).re;
        assert!((n2.grad[0] - expected).abs() < 1e-7);
    }

    #[test]
    fn real_ops() {
        let x = Dual::<2>::variable(2.0, 0);
        let y = Dual::<2>::variable(3.0, 1);
        let z = (x * y + x.exp()) / y.sqrt();
        let fx = (3.0 + 2f64.exp()) / 3f64.sqrt();
        let fy = 2.0 / 3f64.sqrt() - 0.5 * (6.0 + 2f64.exp()) * 3f64.powf(-1.5);
        assert!((z.grad[0] - fx).abs() < 1e-12);
        assert!((z.grad[1] - fy).abs() < 1e-12);
    }
}
