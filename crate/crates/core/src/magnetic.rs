//! Magnetic fields, vector potentials, and the phases Λ^A and Ω^B.
//!
//! Magnetic content lives in d = 2, where a field is the single function
//! B_12 = −B_21. In d = 1 only the zero field exists.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::quadrature::{gauss_legendre_on, Rule};

/// Default number of Gauss–Legendre nodes for line integrals.
pub const DEFAULT_Q_LINE: usize = 20;
/// Default number of Gauss–Legendre nodes per direction for flux integrals.
pub const DEFAULT_Q_FLUX: usize = 20;

/// Scenario-level description of a field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    /// B_12 = b.
    Constant { b: f64 },
    /// B_12 = b cos(k·x + phase).
    Trig {
        b: f64,
        k: [f64; 2],
        #[serde(default)]
        phase: f64,
    },
    /// B_12 = b exp(−|x − center|²/width²).
    Gaussian { b: f64, center: [f64; 2], width: f64 },
}

/// A smooth magnetic field with analytic derivatives of every order.
#[derive(Debug, Clone, PartialEq)]
pub struct MagneticField {
    d: usize,
    spec: FieldSpec,
}

impl MagneticField {
    pub fn new(d: usize, spec: FieldSpec) -> Result<Self> {
        check_dim(d)?;
        if d == 1 && spec != FieldSpec::Zero {
            return Err(invalid("field", "d = 1 admits only the zero field"));
        }
        if let FieldSpec::Gaussian { width, .. } = spec {
            if width <= 0.0 {
                return Err(invalid("field.width", "must be positive"));
            }
        }
        Ok(MagneticField { d, spec })
    }

    pub fn zero(d: usize) -> Self {
        MagneticField {
            d,
            spec: FieldSpec::Zero,
        }
    }

    pub fn constant(b: f64) -> Self {
        MagneticField {
            d: 2,
            spec: FieldSpec::Constant { b },
        }
    }

    pub fn trig(b: f64, k: [f64; 2], phase: f64) -> Self {
        MagneticField {
            d: 2,
            spec: FieldSpec::Trig { b, k, phase },
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    pub fn is_zero(&self) -> bool {
        match self.spec {
            FieldSpec::Zero => true,
            FieldSpec::Constant { b } | FieldSpec::Trig { b, .. } | FieldSpec::Gaussian { b, .. } => {
                b == 0.0
            }
        }
    }

    /// The value b when the field is constant (zero counts as constant).
    pub fn constant_value(&self) -> Option<f64> {
        match self.spec {
            FieldSpec::Zero => Some(0.0),
            FieldSpec::Constant { b } => Some(b),
            _ if self.is_zero() => Some(0.0),
            _ => None,
        }
    }

    /// B_12(x).
    pub fn b12(&self, x: &[f64]) -> f64 {
        self.b12_derivative(&[0, 0], x)
    }

    /// B_jk(x) for 0-based axes.
    pub fn component(&self, j: usize, k: usize, x: &[f64]) -> f64 {
        match (j, k) {
            (0, 1) => self.b12(x),
            (1, 0) => -self.b12(x),
            _ => 0.0,
        }
    }

    /// ∂^a B_12(x).
    pub fn b12_derivative(&self, a: &[usize; 2], x: &[f64]) -> f64 {
        let order = a[0] + a[1];
        match self.spec {
            FieldSpec::Zero => 0.0,
            FieldSpec::Constant { b } => {
                if order == 0 {
                    b
                } else {
                    0.0
                }
            }
            FieldSpec::Trig { b, k, phase } => {
                let arg = k[0] * x[0] + k[1] * x[1] + phase + order as f64 * std::f64::consts::FRAC_PI_2;
                b * k[0].powi(a[0] as i32) * k[1].powi(a[1] as i32) * arg.cos()
            }
            FieldSpec::Gaussian { b, center, width } => {
                let mut v = b;
                for j in 0..2 {
                    let s = (x[j] - center[j]) / width;
                    v *= (-1.0 / width).powi(a[j] as i32) * hermite(a[j], s) * (-s * s).exp();
                }
                v
            }
        }
    }
}

/// Physicists' Hermite polynomial H_n(s); d^n/ds^n e^{−s²} = (−1)^n H_n(s) e^{−s²}.
pub(crate) fn hermite(n: usize, s: f64) -> f64 {
    let mut h0 = 1.0;
    if n == 0 {
        return h0;
    }
    let mut h1 = 2.0 * s;
    for k in 1..n {
        let h2 = 2.0 * s * h1 - 2.0 * k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Rectangular sampling region with `n` points per axis (endpoints included).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub n: usize,
}

impl SampleBox {
    pub fn square(half: f64, n: usize) -> Self {
        SampleBox {
            lo: [-half, -half],
            hi: [half, half],
            n,
        }
    }

    pub(crate) fn points(&self, d: usize) -> Vec<[f64; 2]> {
        let n = self.n.max(2);
        let ax = |j: usize| -> Vec<f64> {
            (0..n)
                .map(|i| self.lo[j] + (self.hi[j] - self.lo[j]) * i as f64 / (n - 1) as f64)
                .collect()
        };
        let a0 = ax(0);
        if d == 1 {
            return a0.into_iter().map(|t| [t, 0.0]).collect();
        }
        let a1 = ax(1);
        let mut out = Vec::with_capacity(n * n);
        for &s in &a0 {
            for &t in &a1 {
                out.push([s, t]);
            }
        }
        out
    }
}

/// |||B|||_N: sampled sup of |∂^a B_jk| over |a| ≤ N.
pub fn field_seminorm(b: &MagneticField, n: usize, region: &SampleBox) -> f64 {
    if b.dim() == 1 || b.is_zero() {
        return 0.0;
    }
    let mut sup = 0.0f64;
    for x in region.points(2) {
        for order in 0..=n {
            for a0 in 0..=order {
                let v = b.b12_derivative(&[a0, order - a0], &x).abs();
                sup = sup.max(v);
            }
        }
    }
    sup
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeTag {
    Transversal,
    SymmetricConstant,
    Landau,
    User,
}

#[derive(Debug, Clone, PartialEq)]
enum Potential {
    Zero,
    /// A(x) = J x.
    Linear([[f64; 2]; 2]),
    /// A(x) = F(x)(−x_2, x_1), F(x) = ∫_0^1 s B_12(sx) ds.
    Transversal(MagneticField, Rule),
}

/// A vector potential A with B = dA.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorPotential {
    d: usize,
    tag: GaugeTag,
    pot: Potential,
    field: MagneticField,
    q_line: usize,
}

/// Transversal gauge of `b`, with `q_line` Gauss–Legendre nodes per line integral.
pub fn transversal_gauge(b: &MagneticField, q_line: usize) -> VectorPotential {
    let pot = if b.is_zero() {
        Potential::Zero
    } else if let Some(c) = b.constant_value() {
        // The s-integral of a constant field is b/2: the transversal gauge
        // of a constant field is the symmetric gauge.
        Potential::Linear(symmetric_matrix(c))
    } else {
        Potential::Transversal(b.clone(), gauss_legendre_on(q_line, 0.0, 1.0))
    };
    VectorPotential {
        d: b.dim(),
        tag: GaugeTag::Transversal,
        pot,
        field: b.clone(),
        q_line,
    }
}

fn symmetric_matrix(b: f64) -> [[f64; 2]; 2] {
    [[0.0, -0.5 * b], [0.5 * b, 0.0]]
}

impl VectorPotential {
    pub fn zero(d: usize) -> Self {
        VectorPotential {
            d,
            tag: GaugeTag::Transversal,
            pot: Potential::Zero,
            field: MagneticField::zero(d),
            q_line: DEFAULT_Q_LINE,
        }
    }

    /// A = (b/2)(−x_2, x_1).
    pub fn symmetric(b: f64) -> Self {
        VectorPotential {
            d: 2,
            tag: GaugeTag::SymmetricConstant,
            pot: Potential::Linear(symmetric_matrix(b)),
            field: MagneticField::constant(b),
            q_line: DEFAULT_Q_LINE,
        }
    }

    /// A = (−b x_2, 0).
    pub fn landau(b: f64) -> Self {
        VectorPotential {
            d: 2,
            tag: GaugeTag::Landau,
            pot: Potential::Linear([[0.0, -b], [0.0, 0.0]]),
            field: MagneticField::constant(b),
            q_line: DEFAULT_Q_LINE,
        }
    }

    /// Same gauge evaluated with a different line-quadrature order.
    pub fn with_q_line(&self, q: usize) -> Self {
        let mut out = self.clone();
        out.q_line = q;
        if let Potential::Transversal(f, _) = &self.pot {
            out.pot = Potential::Transversal(f.clone(), gauss_legendre_on(q, 0.0, 1.0));
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn tag(&self) -> GaugeTag {
        self.tag
    }

    pub fn field(&self) -> &MagneticField {
        &self.field
    }

    pub fn q_line(&self) -> usize {
        self.q_line
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.pot, Potential::Zero)
    }

    /// The matrix J when A(x) = Jx.
    pub fn linear_matrix(&self) -> Option<[[f64; 2]; 2]> {
        match self.pot {
            Potential::Zero => Some([[0.0; 2]; 2]),
            Potential::Linear(j) => Some(j),
            Potential::Transversal(..) => None,
        }
    }

    /// A(x).
    pub fn potential(&self, x: &[f64]) -> [f64; 2] {
        match &self.pot {
            Potential::Zero => [0.0; 2],
            Potential::Linear(j) => [
                j[0][0] * x[0] + j[0][1] * x[1],
                j[1][0] * x[0] + j[1][1] * x[1],
            ],
            Potential::Transversal(f, rule) => {
                let s = rule.integrate(|s| s * f.b12(&[s * x[0], s * x[1]]));
                [-x[1] * s, x[0] * s]
            }
        }
    }

    /// Jacobian entries jac[j][k] = ∂_j A_k(x).
    pub fn jacobian(&self, x: &[f64]) -> [[f64; 2]; 2] {
        match &self.pot {
            Potential::Zero => [[0.0; 2]; 2],
            Potential::Linear(j) => [[j[0][0], j[1][0]], [j[0][1], j[1][1]]],
            Potential::Transversal(f, rule) => {
                let ff = rule.integrate(|s| s * f.b12(&[s * x[0], s * x[1]]));
                let mut df = [0.0; 2];
                for (j, dfj) in df.iter_mut().enumerate() {
                    let mut a = [0, 0];
                    a[j] = 1;
                    *dfj = rule.integrate(|s| s * s * f.b12_derivative(&a, &[s * x[0], s * x[1]]));
                }
                [
                    [-x[1] * df[0], ff + x[0] * df[0]],
                    [-ff - x[1] * df[1], x[0] * df[1]],
                ]
            }
        }
    }

    /// ∫_0^1 A(x + t(y−x))·(y−x) dt, the segment oriented from x to y.
    pub fn line_integral(&self, x: &[f64], y: &[f64]) -> f64 {
        match &self.pot {
            Potential::Zero => 0.0,
            Potential::Linear(j) => {
                let m = [x[0] + y[0], x[1] + y[1]];
                let a = [j[0][0] * m[0] + j[0][1] * m[1], j[1][0] * m[0] + j[1][1] * m[1]];
                0.5 * (a[0] * (y[0] - x[0]) + a[1] * (y[1] - x[1]))
            }
            Potential::Transversal(f, rule) => {
                let det = x[0] * y[1] - x[1] * y[0];
                if det == 0.0 {
                    return 0.0;
                }
                let mut acc = 0.0;
                for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    let u = [x[0] + t * (y[0] - x[0]), x[1] + t * (y[1] - x[1])];
                    acc += wt * rule.integrate(|s| s * f.b12(&[s * u[0], s * u[1]]));
                }
                det * acc
            }
        }
    }

    /// Gradient of the line integral with respect to its first endpoint.
    pub fn line_integral_grad_first(&self, x: &[f64], y: &[f64]) -> [f64; 2] {
        match &self.pot {
            Potential::Zero => [0.0; 2],
            Potential::Linear(j) => {
                let q = [y[0] - x[0], y[1] - x[1]];
                let m = [x[0] + y[0], x[1] + y[1]];
                let mut g = [0.0; 2];
                for (jj, gj) in g.iter_mut().enumerate() {
                    let col: f64 = (0..2).map(|k| j[k][jj] * q[k]).sum();
                    let row: f64 = (0..2).map(|l| j[jj][l] * m[l]).sum();
                    *gj = 0.5 * col - 0.5 * row;
                }
                g
            }
            Potential::Transversal(f, rule) => {
                let det = x[0] * y[1] - x[1] * y[0];
                let mut phi = 0.0;
                let mut dphi = [0.0; 2];
                for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    let u = [x[0] + t * (y[0] - x[0]), x[1] + t * (y[1] - x[1])];
                    phi += wt * rule.integrate(|s| s * f.b12(&[s * u[0], s * u[1]]));
                    for (j, dj) in dphi.iter_mut().enumerate() {
                        let mut a = [0, 0];
                        a[j] = 1;
                        *dj += wt
                            * (1.0 - t)
                            * rule.integrate(|s| s * s * f.b12_derivative(&a, &[s * u[0], s * u[1]]));
                    }
                }
                [y[1] * phi + det * dphi[0], -y[0] * phi + det * dphi[1]]
            }
        }
    }
}

/// Λ^A(x, y) = exp(−i ∫_{[x,y]} A).
pub fn lambda_phase(a: &VectorPotential, x: &[f64], y: &[f64]) -> Complex64 {
    Complex64::from_polar(1.0, -a.line_integral(x, y))
}

/// ∫ over the triangle u = x + t(y−x) + st(z−y) of B_12 with the induced orientation.
pub fn triangle_flux(b: &MagneticField, x: &[f64], y: &[f64], z: &[f64], q_flux: usize) -> f64 {
    if b.dim() == 1 || b.is_zero() {
        return 0.0;
    }
    let e1 = [y[0] - x[0], y[1] - x[1]];
    let e2 = [z[0] - y[0], z[1] - y[1]];
    let jac = e1[0] * e2[1] - e1[1] * e2[0];
    if jac == 0.0 {
        return 0.0;
    }
    if let Some(c) = b.constant_value() {
        return 0.5 * c * jac;
    }
    let rule = gauss_legendre_on(q_flux, 0.0, 1.0);
    let mut acc = 0.0;
    for (&t, &wt) in rule.nodes.iter().zip(&rule.weights) {
        for (&s, &ws) in rule.nodes.iter().zip(&rule.weights) {
            let u = [
                x[0] + t * e1[0] + s * t * e2[0],
                x[1] + t * e1[1] + s * t * e2[1],
            ];
            acc += wt * ws * t * b.b12(&u);
        }
    }
    acc * jac
}

/// Ω^B(x, y, z) = exp(−i flux).
pub fn omega_flux(b: &MagneticField, x: &[f64], y: &[f64], z: &[f64], q_flux: usize) -> Complex64 {
    Complex64::from_polar(1.0, -triangle_flux(b, x, y, z, q_flux))
}

/// |Λ(α,x)Λ(x,y)Λ(y,β) − Λ(α,β)Ω(α,x,y)Ω(α,y,β)|.
pub fn stokes_residual(
    a: &VectorPotential,
    b: &MagneticField,
    alpha: &[f64],
    x: &[f64],
    y: &[f64],
    beta: &[f64],
    q_flux: usize,
) -> f64 {
    let lhs = lambda_phase(a, alpha, x) * lambda_phase(a, x, y) * lambda_phase(a, y, beta);
    let rhs = lambda_phase(a, alpha, beta)
        * omega_flux(b, alpha, x, y, q_flux)
        * omega_flux(b, alpha, y, beta, q_flux);
    (lhs - rhs).norm()
}

/// max |∂_1A_2 − ∂_2A_1 − B_12| by central differences at the given points.
pub fn curl_residual(a: &VectorPotential, points: &[[f64; 2]], h: f64) -> f64 {
    if a.dim() == 1 {
        return 0.0;
    }
    points
        .iter()
        .map(|x| {
            let d1a2 = (a.potential(&[x[0] + h, x[1]])[1] - a.potential(&[x[0] - h, x[1]])[1]) / (2.0 * h);
            let d2a1 = (a.potential(&[x[0], x[1] + h])[0] - a.potential(&[x[0], x[1] - h])[0]) / (2.0 * h);
            (d1a2 - d2a1 - a.field().b12(x)).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_transversal_gauge_is_symmetric() {
        let a = transversal_gauge(&MagneticField::constant(1.5), DEFAULT_Q_LINE);
        let p = a.potential(&[0.4, -1.2]);
        assert!((p[0] - 0.75 * 1.2).abs() < 1e-15);
        assert!((p[1] - 0.75 * 0.4).abs() < 1e-15);
    }

    #[test]
    fn constant_flux_of_unit_triangle() {
        let b = MagneticField::constant(1.0);
        let w = omega_flux(&b, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], DEFAULT_Q_FLUX);
        assert!((w - Complex64::from_polar(1.0, -0.5)).norm() < 1e-15);
        // Same orientation through the quadrature path of a non-constant field
        // with a vanishing wave number.
        let t = MagneticField::trig(1.0, [0.0, 0.0], 0.0);
        let w2 = omega_flux(&t, &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], DEFAULT_Q_FLUX);
        assert!((w2 - w).norm() < 1e-14);
    }

    #[test]
    fn trig_line_integral_matches_jacobian_derivative() {
        let f = MagneticField::trig(0.8, [1.0, 0.5], 0.3);
        let a = transversal_gauge(&f, 24);
        let x = [0.3, -0.7];
        let y = [1.1, 0.4];
        let g = a.line_integral_grad_first(&x, &y);
        let h = 1e-5;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (a.line_integral(&xp, &y) - a.line_integral(&xm, &y)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8, "j={j}: {fd} vs {}", g[j]);
        }
        let jac = a.jacobian(&x);
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            for k in 0..2 {
                let fd = (a.potential(&xp)[k] - a.potential(&xm)[k]) / (2.0 * h);
                assert!((fd - jac[j][k]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn landau_and_symmetric_gauges_share_the_field() {
        for a in [VectorPotential::landau(0.7), VectorPotential::symmetric(0.7)] {
            assert!(curl_residual(&a, &[[0.3, 1.0], [-2.0, 0.5]], 1e-4) < 1e-9);
        }
    }

    #[test]
    fn linear_gradient_matches_finite_differences() {
        let a = VectorPotential::landau(1.3);
        let x = [0.2, 0.9];
        let y = [-1.0, 0.3];
        let g = a.line_integral_grad_first(&x, &y);
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (a.line_integral(&xp, &y) - a.line_integral(&xm, &y)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }

    #[test]
    fn seminorm_examples() {
        let bx = SampleBox::square(std::f64::consts::PI, 33);
        assert_eq!(field_seminorm(&MagneticField::zero(2), 3, &bx), 0.0);
        assert_eq!(field_seminorm(&MagneticField::constant(2.0), 4, &bx), 2.0);
        let t = MagneticField::trig(1.0, [1.0, 0.0], 0.0);
        assert!((field_seminorm(&t, 3, &bx) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gaussian_field_derivatives_match_finite_differences() {
        let f = MagneticField::new(
            2,
            FieldSpec::Gaussian {
                b: 1.2,
                center: [0.3, -0.1],
                width: 0.8,
            },
        )
        .unwrap();
        let x = [0.5, 0.2];
        let h = 1e-5;
        let d10 = (f.b12(&[x[0] + h, x[1]]) - f.b12(&[x[0] - h, x[1]])) / (2.0 * h);
        assert!((d10 - f.b12_derivative(&[1, 0], &x)).abs() < 1e-8);
        let d01 = |p: [f64; 2]| f.b12_derivative(&[0, 1], &p);
        let d11 = (d01([x[0] + h, x[1]]) - d01([x[0] - h, x[1]])) / (2.0 * h);
        assert!((d11 - f.b12_derivative(&[1, 1], &x)).abs() < 1e-7);
    }
}
