//! One-dimensional quadrature rules.
//!
//! Gauss–Legendre nodes come from Newton iteration on the three-term
//! recurrence. The midpoint rule is kept next to it because integrands built
//! from the window vanish to infinite order at the ends of their support, where
//! equispaced rules converge faster than Gauss–Legendre.

use std::f64::consts::PI;

/// Nodes and weights of a rule on a fixed interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Integrates `f` with this rule.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Affine image of a rule given on [-1, 1].
    pub fn mapped(&self, a: f64, b: f64) -> Rule {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        Rule {
            nodes: self.nodes.iter().map(|&x| c + r * x).collect(),
            weights: self.weights.iter().map(|&w| r * w).collect(),
        }
    }
}

/// Gauss–Legendre rule with `n` nodes on [-1, 1], nodes ascending.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n > 0, "Gauss–Legendre rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi's initial guess for the i-th largest root.
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

/// Gauss–Legendre rule with `n` nodes on [a, b].
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> Rule {
    gauss_legendre(n).mapped(a, b)
}

/// Composite midpoint rule with `n` cells on [a, b].
pub fn midpoint(n: usize, a: f64, b: f64) -> Rule {
    assert!(n > 0, "midpoint rule needs at least one cell");
    let h = (b - a) / n as f64;
    Rule {
        nodes: (0..n).map(|i| a + (i as f64 + 0.5) * h).collect(),
        weights: vec![h; n],
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}
