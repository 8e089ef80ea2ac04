use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// A first-order dual number `re + eps·ε` with `ε² = 0`.
///
/// Tape values and reverse-sweep adjoints are both stored as duals, so the
/// backward pass carries a directional derivative of the gradient along with
/// the gradient itself.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub const ZERO: Dual = Dual { re: 0.0, eps: 0.0 };
    pub const ONE: Dual = Dual { re: 1.0, eps: 0.0 };

    pub fn new(re: f64, eps: f64) -> Self {
        Self { re, eps }
    }

    pub fn constant(re: f64) -> Self {
        Self { re, eps: 0.0 }
    }

    pub fn exp(self) -> Self {
        let e = self.re.exp();
        Self::new(e, e * self.eps)
    }

    pub fn ln(self) -> Self {
        Self::new(self.re.ln(), self.eps / self.re)
    }

    pub fn tanh(self) -> Self {
        let t = self.re.tanh();
        Self::new(t, (1.0 - t * t) * self.eps)
    }

    pub fn powi(self, n: i32) -> Self {
        if n == 0 {
            return Self::ONE;
        }
        Self::new(
            self.re.powi(n),
            f64::from(n) * self.re.powi(n - 1) * self.eps,
        )
    }

    pub fn powf(self, p: f64) -> Self {
        Self::new(self.re.powf(p), p * self.re.powf(p - 1.0) * self.eps)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.re;
        Self::new(r, -r * r * self.eps)
    }

    /// `sign(re)` with `sign(0) = 0`; locally constant, so no tangent.
    pub fn signum0(self) -> Self {
        let s = if self.re > 0.0 {
            1.0
        } else if self.re < 0.0 {
            -1.0
        } else {
            0.0
        };
        Self::constant(s)
    }

    pub fn abs(self) -> Self {
        self.signum0() * self
    }

    /// Logistic sigmoid, evaluated without overflow.
    pub fn sigmoid(self) -> Self {
        let s = if self.re >= 0.0 {
            1.0 / (1.0 + (-self.re).exp())
        } else {
            let e = self.re.exp();
            e / (1.0 + e)
        };
        Self::new(s, s * (1.0 - s) * self.eps)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(self) -> Self {
        let x = self.re;
        let v = x.max(0.0) + (-x.abs()).exp().ln_1p();
        Self::new(v, self.sigmoid().re * self.eps)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::new(self.re + o.re, self.eps + o.eps)
    }
}

impl AddAssign for Dual {
    fn add_assign(&mut self, o: Dual) {
        self.re += o.re;
        self.eps += o.eps;
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::new(self.re - o.re, self.eps - o.eps)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::new(self.re * o.re, self.re * o.eps + self.eps * o.re)
    }
}

impl Mul<f64> for Dual {
    type Output = Dual;
    fn mul(self, c: f64) -> Dual {
        Dual::new(self.re * c, self.eps * c)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        self * o.recip()
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual::new(-self.re, -self.eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn tangents_match_finite_differences() {
        let x = 0.37;
        let cases: Vec<(Box<dyn Fn(Dual) -> Dual>, Box<dyn Fn(f64) -> f64>)> = vec![
            (Box::new(|d| d.exp()), Box::new(|v: f64| v.exp())),
            (Box::new(|d| d.ln()), Box::new(|v: f64| v.ln())),
            (Box::new(|d| d.tanh()), Box::new(|v: f64| v.tanh())),
            (Box::new(|d| d.powi(3)), Box::new(|v: f64| v.powi(3))),
            (Box::new(|d| d.powf(2.5)), Box::new(|v: f64| v.powf(2.5))),
            (Box::new(|d| d.recip()), Box::new(|v: f64| 1.0 / v)),
            (Box::new(|d| d.softplus()), Box::new(|v: f64| v.exp().ln_1p())),
        ];
        for (dual_f, f) in cases {
            let d = dual_f(Dual::new(x, 1.0));
            assert!((d.re - f(x)).abs() < 1e-14);
            assert!((d.eps - fd(&f, x)).abs() < 1e-8);
        }
    }

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert_eq!(Dual::constant(-800.0).softplus().re, 0.0);
        assert_eq!(Dual::constant(800.0).softplus().re, 800.0);
    }

    #[test]
    fn abs_subgradient_at_zero_is_zero() {
        let d = Dual::new(0.0, 1.0);
        assert_eq!(d.signum0().re, 0.0);
        assert_eq!(d.abs(), Dual::ZERO);
    }
}
