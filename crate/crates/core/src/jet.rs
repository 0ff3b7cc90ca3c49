//! Truncated Taylor series in one variable, used to differentiate the window.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Coefficients c_k of f(t0 + s) = Σ c_k s^k, k ≤ order.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Jet(pub Vec<f64>);

impl Jet {
    pub fn constant(c: f64, order: usize) -> Jet {
        let mut v = vec![0.0; order + 1];
        v[0] = c;
        Jet(v)
    }

    pub fn variable(t0: f64, order: usize) -> Jet {
        let mut v = vec![0.0; order + 1];
        v[0] = t0;
        if order > 0 {
            v[1] = 1.0;
        }
        Jet(v)
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet(self.0.iter().map(|x| c * x).collect())
    }

    pub fn exp(&self) -> Jet {
        let n = self.0.len();
        let mut e = vec![0.0; n];
        e[0] = self.0[0].exp();
        for k in 1..n {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * self.0[j] * e[k - j];
            }
            e[k] = s / k as f64;
        }
        Jet(e)
    }

    pub fn sqrt(&self) -> Jet {
        let n = self.0.len();
        let mut r = vec![0.0; n];
        r[0] = self.0[0].sqrt();
        for k in 1..n {
            let mut s = self.0[k];
            for j in 1..k {
                s -= r[j] * r[k - j];
            }
            r[k] = s / (2.0 * r[0]);
        }
        Jet(r)
    }

    /// k-th derivative at the expansion point.
    pub fn derivative(&self, k: usize) -> f64 {
        let mut f = 1.0;
        for i in 2..=k {
            f *= i as f64;
        }
        self.0[k] * f
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a + b).collect())
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        Jet(self.0.iter().zip(&o.0).map(|(a, b)| a - b).collect())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        let n = self.0.len();
        let mut r = vec![0.0; n];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate().take(n - i) {
                r[i + j] += a * b;
            }
        }
        Jet(r)
    }
}

impl Div for &Jet {
    type Output = Jet;
    fn div(self, o: &Jet) -> Jet {
        let n = self.0.len();
        let mut q = vec![0.0; n];
        for k in 0..n {
            let mut s = self.0[k];
            for j in 1..=k {
                s -= o.0[j] * q[k - j];
            }
            q[k] = s / o.0[0];
        }
        Jet(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_of_sine_like_series_matches_known_derivatives() {
        // d/dt exp(t^2) at t = 0.3, second derivative (2 + 4 t^2) exp(t^2).
        let t = Jet::variable(0.3, 3);
        let e = (&t * &t).exp();
        let v = (0.09f64).exp();
        assert!((e.derivative(1) - 0.6 * v).abs() < 1e-14);
        assert!((e.derivative(2) - (2.0 + 4.0 * 0.09) * v).abs() < 1e-13);
    }

    #[test]
    fn quotient_and_sqrt_invert_products() {
        let t = Jet::variable(0.7, 5);
        let one = Jet::constant(1.0, 5);
        let f = &one + &(&t * &t);
        let r = f.sqrt();
        let back = &r * &r;
        let q = &f / &r;
        for k in 0..=5 {
            assert!((back.0[k] - f.0[k]).abs() < 1e-13);
            assert!((q.0[k] - r.0[k]).abs() < 1e-13);
        }
    }
}
