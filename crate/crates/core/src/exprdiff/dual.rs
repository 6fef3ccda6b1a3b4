use std::ops::{Add, Div, Mul, Neg, Sub};

/// Forward-mode dual number: a value and its tangent with respect to the
/// seeded variables.
#[derive(Debug, Clone, PartialEq)]
pub struct Dual {
    pub val: f64,
    pub grad: Vec<f64>,
}

impl Dual {
    pub fn constant(val: f64, width: usize) -> Self {
        Self { val, grad: vec![0.0; width] }
    }

    /// The `index`-th of `width` seeded variables.
    pub fn variable(val: f64, index: usize, width: usize) -> Self {
        let mut grad = vec![0.0; width];
        grad[index] = 1.0;
        Self { val, grad }
    }

    fn chain(&self, val: f64, slope: f64) -> Self {
        Self {
            val,
            grad: self.grad.iter().map(|g| slope * g).collect(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.grad.iter().all(|g| *g == 0.0)
    }

    pub fn sin(&self) -> Self {
        self.chain(self.val.sin(), self.val.cos())
    }

    pub fn cos(&self) -> Self {
        self.chain(self.val.cos(), -self.val.sin())
    }

    pub fn exp(&self) -> Self {
        let e = self.val.exp();
        self.chain(e, e)
    }

    pub fn ln(&self) -> Self {
        self.chain(self.val.ln(), 1.0 / self.val)
    }

    pub fn tanh(&self) -> Self {
        let th = self.val.tanh();
        self.chain(th, 1.0 - th * th)
    }

    pub fn sqrt(&self) -> Self {
        let s = self.val.sqrt();
        self.chain(s, 0.5 / s)
    }

    /// `|a|` with the right derivative at zero (slope `+1`).
    pub fn abs(&self) -> Self {
        self.chain(self.val.abs(), if self.val < 0.0 { -1.0 } else { 1.0 })
    }

    /// `aᵇ`. A constant exponent uses `b·aᵇ⁻¹` so negative bases with
    /// integer exponents stay differentiable.
    pub fn pow(&self, b: &Dual) -> Self {
        if b.is_constant() {
            let v = self.val.powf(b.val);
            let slope = if b.val == 0.0 { 0.0 } else { b.val * self.val.powf(b.val - 1.0) };
            return self.chain(v, slope);
        }
        let v = self.val.powf(b.val);
        let ln_a = self.val.ln();
        Self {
            val: v,
            grad: self
                .grad
                .iter()
                .zip(&b.grad)
                .map(|(da, db)| v * (db * ln_a + b.val * da / self.val))
                .collect(),
        }
    }
}

impl Add for &Dual {
    type Output = Dual;
    fn add(self, o: &Dual) -> Dual {
        Dual {
            val: self.val + o.val,
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &Dual {
    type Output = Dual;
    fn sub(self, o: &Dual) -> Dual {
        Dual {
            val: self.val - o.val,
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &Dual {
    type Output = Dual;
    fn mul(self, o: &Dual) -> Dual {
        Dual {
            val: self.val * o.val,
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| self.val * b + o.val * a).collect(),
        }
    }
}

impl Div for &Dual {
    type Output = Dual;
    fn div(self, o: &Dual) -> Dual {
        let sq = o.val * o.val;
        Dual {
            val: self.val / o.val,
            grad: self.grad.iter().zip(&o.grad).map(|(a, b)| (a * o.val - self.val * b) / sq).collect(),
        }
    }
}

impl Neg for &Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.chain(-self.val, -1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let x = Dual::variable(2.0, 0, 2);
        let u = Dual::variable(3.0, 1, 2);
        let p = &x * &u;
        assert_eq!(p.val, 6.0);
        assert_eq!(p.grad, vec![3.0, 2.0]);
    }

    #[test]
    fn quotient_and_power() {
        let x = Dual::variable(2.0, 0, 1);
        let q = &Dual::constant(1.0, 1) / &x;
        assert_eq!(q.grad, vec![-0.25]);
        let c = x.pow(&Dual::constant(3.0, 1));
        assert_eq!((c.val, c.grad[0]), (8.0, 12.0));
        let neg = Dual::variable(-2.0, 0, 1).pow(&Dual::constant(2.0, 1));
        assert_eq!((neg.val, neg.grad[0]), (4.0, -4.0));
        let general = x.pow(&x);
        assert!((general.grad[0] - 4.0 * (2f64.ln() + 1.0)).abs() < 1e-14);
    }

    #[test]
    fn abs_right_derivative_at_zero() {
        assert_eq!(Dual::variable(0.0, 0, 1).abs().grad, vec![1.0]);
        assert_eq!(Dual::variable(-1.0, 0, 1).abs().grad, vec![-1.0]);
    }
}
