//! Symbols Φ(x, ξ) as finite sums of separable terms, with exact derivatives
//! and the partial Fourier transform in ξ that yields operator kernels.
//!
//! A term is `coeff · X(x) · e^{is·ξ} ∂_ξ^b F(ξ)` where
//! - `X` is a product of plane-wave cosines and one polynomial-Gaussian factor,
//! - `F` is 1, a Gaussian e^{−a|ξ|²}, or the weight ⟨ξ⟩^p with p < 0.
//!
//! The family is closed under ∂_x and ∂_ξ, which is what the commutator
//! formulas need. Kernels follow from
//! (2π)^{-d/2} ∫ e^{iξ·v} e^{is·ξ} ∂^b F(ξ) dξ = (−i(v+s))^b F̂(v+s).

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::magnetic::hermite;
use crate::quadrature::gauss_legendre_on;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// cos(k·x + phase).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub k: [f64; 2],
    pub phase: f64,
}

/// Σ_m c_m (x−center)^m · exp(−a|x−center|²); a = 0 gives a polynomial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyGauss {
    pub a: f64,
    pub center: [f64; 2],
    pub mono: Vec<([u32; 2], Complex64)>,
}

impl PolyGauss {
    pub fn one() -> Self {
        PolyGauss {
            a: 0.0,
            center: [0.0; 2],
            mono: vec![([0, 0], Complex64::new(1.0, 0.0))],
        }
    }

    fn is_constant(&self) -> bool {
        self.a == 0.0 && self.mono.iter().all(|(m, _)| *m == [0, 0])
    }

    fn eval(&self, x: &[f64], d: usize) -> Complex64 {
        let y = [x[0] - self.center[0], if d == 2 { x[1] - self.center[1] } else { 0.0 }];
        let poly: Complex64 = self
            .mono
            .iter()
            .map(|(m, c)| c * y[0].powi(m[0] as i32) * y[1].powi(m[1] as i32))
            .sum();
        if self.a == 0.0 {
            poly
        } else {
            poly * (-self.a * (y[0] * y[0] + y[1] * y[1])).exp()
        }
    }

    fn derivative(&self, j: usize) -> PolyGauss {
        let mut out: Vec<([u32; 2], Complex64)> = Vec::new();
        let mut push = |m: [u32; 2], c: Complex64| {
            if c == ZERO {
                return;
            }
            if let Some(e) = out.iter_mut().find(|(mm, _)| *mm == m) {
                e.1 += c;
            } else {
                out.push((m, c));
            }
        };
        for &(m, c) in &self.mono {
            if m[j] > 0 {
                let mut mm = m;
                mm[j] -= 1;
                push(mm, c * m[j] as f64);
            }
            if self.a != 0.0 {
                let mut mm = m;
                mm[j] += 1;
                push(mm, c * (-2.0 * self.a));
            }
        }
        out.retain(|(_, c)| *c != ZERO);
        PolyGauss {
            a: self.a,
            center: self.center,
            mono: out,
        }
    }

    fn product(&self, o: &PolyGauss) -> Option<PolyGauss> {
        let (base, other) = if o.a == 0.0 && o.center == [0.0; 2] && self.a != 0.0 {
            (self, o)
        } else {
            (o, self)
        };
        // Polynomials in x (centered at 0) re-center exactly only when both
        // centers agree; otherwise require one side to be a constant.
        if other.is_constant() {
            let c: Complex64 = other.mono.iter().map(|(_, c)| c).sum();
            return Some(PolyGauss {
                a: base.a,
                center: base.center,
                mono: base.mono.iter().map(|(m, v)| (*m, v * c)).collect(),
            });
        }
        if base.center != other.center {
            return None;
        }
        let mut mono: Vec<([u32; 2], Complex64)> = Vec::new();
        for (m1, c1) in &base.mono {
            for (m2, c2) in &other.mono {
                let m = [m1[0] + m2[0], m1[1] + m2[1]];
                if let Some(e) = mono.iter_mut().find(|(mm, _)| *mm == m) {
                    e.1 += c1 * c2;
                } else {
                    mono.push((m, c1 * c2));
                }
            }
        }
        Some(PolyGauss {
            a: base.a + other.a,
            center: base.center,
            mono,
        })
    }
}

/// x-dependent factor of a term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XPart {
    pub waves: Vec<Wave>,
    pub pg: PolyGauss,
}

impl XPart {
    pub fn one() -> Self {
        XPart {
            waves: Vec::new(),
            pg: PolyGauss::one(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.waves.iter().all(|w| w.k == [0.0; 2]) && self.pg.is_constant()
    }

    pub fn eval(&self, x: &[f64], d: usize) -> Complex64 {
        let mut v = self.pg.eval(x, d);
        for w in &self.waves {
            let arg = w.k[0] * x[0] + if d == 2 { w.k[1] * x[1] } else { 0.0 } + w.phase;
            v *= arg.cos();
        }
        v
    }

    /// ∂_{x_j} as a list of (coefficient, part).
    fn derivative(&self, j: usize) -> Vec<(f64, XPart)> {
        let mut out = Vec::new();
        for (i, w) in self.waves.iter().enumerate() {
            if w.k[j] == 0.0 {
                continue;
            }
            let mut p = self.clone();
            p.waves[i].phase += std::f64::consts::FRAC_PI_2;
            out.push((w.k[j], p));
        }
        let dpg = self.pg.derivative(j);
        if !dpg.mono.is_empty() {
            out.push((
                1.0,
                XPart {
                    waves: self.waves.clone(),
                    pg: dpg,
                },
            ));
        }
        out
    }
}

/// The ξ-profile F of a term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum XiBase {
    One,
    /// exp(−a|ξ|²), a > 0.
    Gauss { a: f64 },
    /// ⟨ξ⟩^p.
    Bracket { p: f64 },
}

/// ξ-dependent factor e^{is·ξ} ∂^b F(ξ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiPart {
    pub shift: [f64; 2],
    pub base: XiBase,
    pub deriv: [u32; 2],
}

impl XiPart {
    pub fn one() -> Self {
        XiPart {
            shift: [0.0; 2],
            base: XiBase::One,
            deriv: [0, 0],
        }
    }

    pub fn is_constant(&self) -> bool {
        self.shift == [0.0; 2] && self.base == XiBase::One && self.deriv == [0, 0]
    }

    pub fn eval(&self, xi: &[f64], d: usize) -> Complex64 {
        let e = if d == 2 { [xi[0], xi[1]] } else { [xi[0], 0.0] };
        let ph = self.shift[0] * e[0] + self.shift[1] * e[1];
        let base = match self.base {
            XiBase::One => {
                if self.deriv == [0, 0] {
                    1.0
                } else {
                    0.0
                }
            }
            XiBase::Gauss { a } => {
                let sa = a.sqrt();
                (0..d)
                    .map(|j| {
                        let n = self.deriv[j] as usize;
                        (-sa).powi(n as i32) * hermite(n, sa * e[j]) * (-a * e[j] * e[j]).exp()
                    })
                    .product()
            }
            XiBase::Bracket { p } => bracket_derivative(p, self.deriv, &e),
        };
        Complex64::from_polar(base, ph)
    }

    fn derivative(&self, j: usize) -> Vec<(Complex64, XiPart)> {
        let mut out = Vec::new();
        if self.shift[j] != 0.0 {
            out.push((I * self.shift[j], *self));
        }
        if self.base != XiBase::One {
            let mut p = *self;
            p.deriv[j] += 1;
            out.push((Complex64::new(1.0, 0.0), p));
        }
        out
    }
}

/// ∂^b ⟨ξ⟩^p through the closed family Σ c ξ^m ⟨ξ⟩^q.
fn bracket_derivative(p: f64, b: [u32; 2], xi: &[f64; 2]) -> f64 {
    let mut terms: Vec<(f64, [u32; 2], f64)> = vec![(1.0, [0, 0], p)];
    for j in 0..2 {
        for _ in 0..b[j] {
            let mut next = Vec::with_capacity(terms.len() * 2);
            for &(c, m, q) in &terms {
                if m[j] > 0 {
                    let mut mm = m;
                    mm[j] -= 1;
                    next.push((c * m[j] as f64, mm, q));
                }
                if q != 0.0 {
                    let mut mm = m;
                    mm[j] += 1;
                    next.push((c * q, mm, q - 2.0));
                }
            }
            terms = next;
        }
    }
    let br2 = 1.0 + xi[0] * xi[0] + xi[1] * xi[1];
    terms
        .iter()
        .map(|&(c, m, q)| c * xi[0].powi(m[0] as i32) * xi[1].powi(m[1] as i32) * br2.powf(q / 2.0))
        .sum()
}

/// One separable term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: Complex64,
    pub x: XPart,
    pub xi: XiPart,
}

/// How the ξ-transform of a term is realized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// δ(v + s): the term acts as a magnetic translation by s.
    Point { shift: [f64; 2] },
    /// Smooth, rapidly decaying kernel.
    Smooth,
    /// Integrable singularity at v = −s.
    Radial { center: [f64; 2] },
}

impl Term {
    pub fn kernel_kind(&self) -> KernelKind {
        match self.xi.base {
            XiBase::One => KernelKind::Point { shift: self.xi.shift },
            XiBase::Gauss { .. } => KernelKind::Smooth,
            XiBase::Bracket { .. } => KernelKind::Radial {
                center: [-self.xi.shift[0], -self.xi.shift[1]],
            },
        }
    }

    /// (2π)^{-d/2} ∫ e^{iξ·v} (ξ-part)(ξ) dξ for non-distributional terms,
    /// without the coefficient and x-part.
    pub fn xi_transform(&self, v: &[f64], d: usize) -> Complex64 {
        let w = [v[0] + self.xi.shift[0], if d == 2 { v[1] + self.xi.shift[1] } else { 0.0 }];
        let base = match self.xi.base {
            XiBase::One => return ZERO,
            XiBase::Gauss { a } => {
                let r2 = w[0] * w[0] + w[1] * w[1];
                (2.0 * a).powf(-(d as f64) / 2.0) * (-r2 / (4.0 * a)).exp()
            }
            XiBase::Bracket { p } => matern(p, d, (w[0] * w[0] + w[1] * w[1]).sqrt()),
        };
        let mut f = Complex64::new(base, 0.0);
        for (j, &wj) in w.iter().enumerate().take(d) {
            for _ in 0..self.xi.deriv[j] {
                f *= -I * wj;
            }
        }
        f
    }
}

/// (2π)^{-d/2} ∫ e^{iξ·v} ⟨ξ⟩^p dξ for p < 0, a function of r = |v|:
/// 2^{1+p/2}/Γ(−p/2) · r^ν K_ν(r), ν = −p/2 − d/2.
pub fn matern(p: f64, d: usize, r: f64) -> f64 {
    let nu = -p / 2.0 - d as f64 / 2.0;
    let pref = 2f64.powf(1.0 + p / 2.0) / statrs::function::gamma::gamma(-p / 2.0);
    if r == 0.0 {
        return if nu > 0.0 {
            pref * 2f64.powf(nu - 1.0) * statrs::function::gamma::gamma(nu)
        } else {
            f64::INFINITY
        };
    }
    pref * r.powf(nu) * bessel_k(nu, r)
}

/// Modified Bessel function K_ν(r), r > 0, from ∫_0^∞ e^{−r cosh t} cosh(νt) dt
/// with the trapezoid rule (exponentially convergent for this integrand).
pub fn bessel_k(nu: f64, r: f64) -> f64 {
    let nu = nu.abs();
    if (nu - 0.5).abs() < 1e-15 {
        return (PI / (2.0 * r)).sqrt() * (-r).exp();
    }
    // Factor out e^{−r} so large r does not underflow before the sum.
    let tmax = ((2.0 * (60.0 + nu * 10.0)) / r).ln().max(1.0) + 2.0;
    let step = 0.05;
    let n = (tmax / step).ceil() as usize;
    let mut s = 0.5;
    for i in 1..=n {
        let t = i as f64 * step;
        let e = (-r * (t.cosh() - 1.0)).exp();
        s += e * (nu * t).cosh();
        if e < 1e-30 {
            break;
        }
    }
    s * step * (-r).exp()
}

/// A symbol with its declared order p.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Symbol {
    d: usize,
    order: f64,
    name: String,
    terms: Vec<Term>,
}

fn wave1(k: [f64; 2], phase: f64) -> XPart {
    XPart {
        waves: vec![Wave { k, phase }],
        pg: PolyGauss::one(),
    }
}

fn unit(d: usize, axis: usize) -> Result<[f64; 2]> {
    if axis >= d {
        return Err(invalid("axis", format!("axis {} does not exist in d = {d}", axis + 1)));
    }
    let mut e = [0.0; 2];
    e[axis] = 1.0;
    Ok(e)
}

impl Symbol {
    pub fn new(d: usize, order: f64, name: impl Into<String>, terms: Vec<Term>) -> Result<Self> {
        check_dim(d)?;
        Ok(Symbol {
            d,
            order,
            name: name.into(),
            terms,
        })
    }

    pub fn zero(d: usize) -> Self {
        Symbol {
            d,
            order: 0.0,
            name: "0".into(),
            terms: Vec::new(),
        }
    }

    pub fn constant(d: usize, c: Complex64) -> Self {
        Symbol {
            d,
            order: 0.0,
            name: format!("{c}"),
            terms: vec![Term {
                coeff: c,
                x: XPart::one(),
                xi: XiPart::one(),
            }],
        }
    }

    pub fn one(d: usize) -> Self {
        let mut s = Symbol::constant(d, Complex64::new(1.0, 0.0));
        s.name = "1".into();
        s
    }

    /// sin(x_j), 0-based axis.
    pub fn sin_x(d: usize, axis: usize) -> Result<Self> {
        let e = unit(d, axis)?;
        Ok(Symbol {
            d,
            order: 0.0,
            name: format!("sin(x{})", axis + 1),
            terms: vec![Term {
                coeff: Complex64::new(1.0, 0.0),
                x: wave1(e, -std::f64::consts::FRAC_PI_2),
                xi: XiPart::one(),
            }],
        })
    }

    pub fn cos_x(d: usize, axis: usize) -> Result<Self> {
        let e = unit(d, axis)?;
        Ok(Symbol {
            d,
            order: 0.0,
            name: format!("cos(x{})", axis + 1),
            terms: vec![Term {
                coeff: Complex64::new(1.0, 0.0),
                x: wave1(e, 0.0),
                xi: XiPart::one(),
            }],
        })
    }

    fn shift_pair(d: usize, axis: usize, cp: Complex64, cm: Complex64, name: String) -> Result<Self> {
        let e = unit(d, axis)?;
        let t = |c: Complex64, s: f64| Term {
            coeff: c,
            x: XPart::one(),
            xi: XiPart {
                shift: [s * e[0], s * e[1]],
                base: XiBase::One,
                deriv: [0, 0],
            },
        };
        Ok(Symbol {
            d,
            order: 0.0,
            name,
            terms: vec![t(cp, 1.0), t(cm, -1.0)],
        })
    }

    /// cos(ξ_j) = (e^{iξ_j} + e^{−iξ_j})/2.
    pub fn cos_xi(d: usize, axis: usize) -> Result<Self> {
        Self::shift_pair(d, axis, Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0), format!("cos(xi{})", axis + 1))
    }

    /// sin(ξ_j) = (e^{iξ_j} − e^{−iξ_j})/(2i).
    pub fn sin_xi(d: usize, axis: usize) -> Result<Self> {
        Self::shift_pair(d, axis, Complex64::new(0.0, -0.5), Complex64::new(0.0, 0.5), format!("sin(xi{})", axis + 1))
    }

    /// ⟨ξ⟩^p.
    pub fn bracket(d: usize, p: f64) -> Result<Self> {
        check_dim(d)?;
        Ok(Symbol {
            d,
            order: p,
            name: format!("<xi>^{p}"),
            terms: vec![Term {
                coeff: Complex64::new(1.0, 0.0),
                x: XPart::one(),
                xi: XiPart {
                    shift: [0.0; 2],
                    base: XiBase::Bracket { p },
                    deriv: [0, 0],
                },
            }],
        })
    }

    /// exp(−a|ξ|²) · exp(−c|x|²); c = 0 drops the x-factor.
    pub fn gaussian(d: usize, a_xi: f64, c_x: f64) -> Result<Self> {
        check_dim(d)?;
        if !(a_xi > 0.0) || c_x < 0.0 {
            return Err(invalid("gaussian", "need a_xi > 0 and c_x ≥ 0"));
        }
        Ok(Symbol {
            d,
            order: 0.0,
            name: if c_x == 0.0 {
                format!("exp(-{a_xi}|xi|^2)")
            } else {
                format!("exp(-{c_x}|x|^2-{a_xi}|xi|^2)")
            },
            terms: vec![Term {
                coeff: Complex64::new(1.0, 0.0),
                x: XPart {
                    waves: Vec::new(),
                    pg: PolyGauss {
                        a: c_x,
                        center: [0.0; 2],
                        mono: vec![([0, 0], Complex64::new(1.0, 0.0))],
                    },
                },
                xi: XiPart {
                    shift: [0.0; 2],
                    base: XiBase::Gauss { a: a_xi },
                    deriv: [0, 0],
                },
            }],
        })
    }

    /// The coordinate function x_j (not of Hörmander type; order metadata 0).
    pub fn coordinate(d: usize, axis: usize) -> Result<Self> {
        unit(d, axis)?;
        let mut m = [0, 0];
        m[axis] = 1;
        Ok(Symbol {
            d,
            order: 0.0,
            name: format!("x{}", axis + 1),
            terms: vec![Term {
                coeff: Complex64::new(1.0, 0.0),
                x: XPart {
                    waves: Vec::new(),
                    pg: PolyGauss {
                        a: 0.0,
                        center: [0.0; 2],
                        mono: vec![(m, Complex64::new(1.0, 0.0))],
                    },
                },
                xi: XiPart::one(),
            }],
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|t| t.coeff == ZERO)
    }

    pub fn with_order(mut self, p: f64) -> Self {
        self.order = p;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Whether every term has an x-independent factor.
    pub fn is_x_independent(&self) -> bool {
        self.terms.iter().all(|t| t.x.is_constant())
    }

    /// Whether every term has a ξ-independent factor.
    pub fn is_xi_independent(&self) -> bool {
        self.terms.iter().all(|t| t.xi.is_constant())
    }

    pub fn eval(&self, x: &[f64], xi: &[f64]) -> Complex64 {
        self.terms
            .iter()
            .map(|t| t.coeff * t.x.eval(x, self.d) * t.xi.eval(xi, self.d))
            .sum()
    }

    pub fn scale(&self, c: Complex64) -> Symbol {
        let mut s = self.clone();
        for t in &mut s.terms {
            t.coeff *= c;
        }
        s.terms.retain(|t| t.coeff != ZERO);
        s.name = format!("({c})*{}", self.name);
        s
    }

    pub fn add(&self, o: &Symbol) -> Result<Symbol> {
        if self.d != o.d {
            return Err(Error::Mismatch("symbols of different dimension".into()));
        }
        let mut terms = self.terms.clone();
        terms.extend(o.terms.iter().cloned());
        Ok(Symbol {
            d: self.d,
            order: self.order.max(o.order),
            name: format!("{}+{}", self.name, o.name),
            terms,
        })
    }

    /// Pointwise product. Supported when each pair of ξ-parts multiplies
    /// within the family (at most one non-trivial profile, no derivatives).
    pub fn mul(&self, o: &Symbol) -> Result<Symbol> {
        if self.d != o.d {
            return Err(Error::Mismatch("symbols of different dimension".into()));
        }
        let mut terms = Vec::new();
        for a in &self.terms {
            for b in &o.terms {
                let xi = mul_xi(&a.xi, &b.xi).ok_or_else(|| Error::KernelPath {
                    symbol: format!("{}*{}", self.name, o.name),
                    reason: "product of these ξ-profiles leaves the shipped family".into(),
                })?;
                let pg = a.x.pg.product(&b.x.pg).ok_or_else(|| Error::KernelPath {
                    symbol: format!("{}*{}", self.name, o.name),
                    reason: "Gaussian x-factors with different centers".into(),
                })?;
                let mut waves = a.x.waves.clone();
                waves.extend(b.x.waves.iter().copied());
                terms.push(Term {
                    coeff: a.coeff * b.coeff,
                    x: XPart { waves, pg },
                    xi,
                });
            }
        }
        Ok(Symbol {
            d: self.d,
            order: self.order + o.order,
            name: format!("{}*{}", self.name, o.name),
            terms,
        })
    }

    /// ∂_{x_j} Φ, 0-based axis.
    pub fn dx(&self, j: usize) -> Symbol {
        let mut terms = Vec::new();
        for t in &self.terms {
            for (c, x) in t.x.derivative(j) {
                terms.push(Term {
                    coeff: t.coeff * c,
                    x,
                    xi: t.xi,
                });
            }
        }
        Symbol {
            d: self.d,
            order: self.order,
            name: format!("d_x{}({})", j + 1, self.name),
            terms,
        }
    }

    /// ∂_{ξ_j} Φ, 0-based axis.
    pub fn dxi(&self, j: usize) -> Symbol {
        let mut terms = Vec::new();
        for t in &self.terms {
            for (c, xi) in t.xi.derivative(j) {
                terms.push(Term {
                    coeff: t.coeff * c,
                    x: t.x.clone(),
                    xi,
                });
            }
        }
        Symbol {
            d: self.d,
            order: self.order,
            name: format!("d_xi{}({})", j + 1, self.name),
            terms,
        }
    }

    /// ∂_x^a ∂_ξ^b Φ.
    pub fn derivative(&self, a: &[usize], b: &[usize]) -> Symbol {
        let mut s = self.clone();
        for j in 0..self.d {
            for _ in 0..a[j] {
                s = s.dx(j);
            }
            for _ in 0..b[j] {
                s = s.dxi(j);
            }
        }
        s
    }

    /// Multiply every term by a function of x given as a product of waves and
    /// a polynomial-Gaussian factor (used for B_jk(x) ∂_ξ Φ).
    pub fn times_x(&self, factor: &XPart, c: Complex64) -> Result<Symbol> {
        let s = Symbol {
            d: self.d,
            order: 0.0,
            name: "factor".into(),
            terms: vec![Term {
                coeff: c,
                x: factor.clone(),
                xi: XiPart::one(),
            }],
        };
        Ok(self.mul(&s)?.with_order(self.order).with_name(self.name.clone()))
    }

    /// Closed-form partial Fourier transform (2π)^{-d/2} ∫ e^{iξ·v} Φ(x, ξ) dξ.
    /// Refused when some term has a distributional kernel.
    pub fn partial_fourier_xi(&self, x: &[f64], v: &[f64]) -> Result<Complex64> {
        let mut s = ZERO;
        for t in &self.terms {
            if let KernelKind::Point { .. } = t.kernel_kind() {
                return Err(Error::KernelPath {
                    symbol: self.name.clone(),
                    reason: "the ξ-transform is a sum of Dirac masses; use the band-limited path".into(),
                });
            }
            if let XiBase::Bracket { p } = t.xi.base {
                if p >= 0.0 {
                    return Err(Error::KernelPath {
                        symbol: self.name.clone(),
                        reason: format!("⟨ξ⟩^{p} is not integrable in ξ"),
                    });
                }
            }
            s += t.coeff * t.x.eval(x, self.d) * t.xi_transform(v, self.d);
        }
        Ok(s)
    }

    /// The same transform by tensor Gauss–Legendre panels over |ξ_j| ≤ r_xi.
    pub fn partial_fourier_xi_quadrature(&self, x: &[f64], v: &[f64], r_xi: f64, panels: usize) -> Complex64 {
        let nodes = 24;
        let mut rule_n = Vec::new();
        let mut rule_w = Vec::new();
        let h = 2.0 * r_xi / panels as f64;
        for p in 0..panels {
            let r = gauss_legendre_on(nodes, -r_xi + p as f64 * h, -r_xi + (p + 1) as f64 * h);
            rule_n.extend(r.nodes);
            rule_w.extend(r.weights);
        }
        let c = (2.0 * PI).powf(-(self.d as f64) / 2.0);
        let mut s = ZERO;
        if self.d == 1 {
            for (&e, &w) in rule_n.iter().zip(&rule_w) {
                s += w * Complex64::from_polar(1.0, e * v[0]) * self.eval(x, &[e]);
            }
        } else {
            for (&e0, &w0) in rule_n.iter().zip(&rule_w) {
                for (&e1, &w1) in rule_n.iter().zip(&rule_w) {
                    s += w0 * w1 * Complex64::from_polar(1.0, e0 * v[0] + e1 * v[1]) * self.eval(x, &[e0, e1]);
                }
            }
        }
        s * c
    }
}

fn mul_xi(a: &XiPart, b: &XiPart) -> Option<XiPart> {
    if a.deriv != [0, 0] || b.deriv != [0, 0] {
        return None;
    }
    let base = match (a.base, b.base) {
        (XiBase::One, o) | (o, XiBase::One) => o,
        (XiBase::Gauss { a: x }, XiBase::Gauss { a: y }) => XiBase::Gauss { a: x + y },
        (XiBase::Bracket { p }, XiBase::Bracket { p: q }) => XiBase::Bracket { p: p + q },
        _ => return None,
    };
    Some(XiPart {
        shift: [a.shift[0] + b.shift[0], a.shift[1] + b.shift[1]],
        base,
        deriv: [0, 0],
    })
}

/// Sampling region for seminorms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolRegion {
    pub x_max: f64,
    pub xi_max: f64,
    /// Spacing of the regular sample lattice; multiples of π/4 hit the
    /// extrema of the shipped trigonometric symbols.
    pub step: f64,
}

impl SymbolRegion {
    pub fn default_for(d: usize) -> Self {
        SymbolRegion {
            x_max: 10.0,
            xi_max: 40.0,
            step: if d == 1 { PI / 8.0 } else { PI / 4.0 },
        }
    }

    fn axis(max: f64, step: f64, refine: bool) -> Vec<f64> {
        let n = (max / step).floor() as i64;
        let mut v: Vec<f64> = (-n..=n).map(|i| i as f64 * step).collect();
        if refine {
            for &t in &[0.01, 0.05, 0.1, 0.25, 0.5, 1.0] {
                v.push(t);
                v.push(-t);
            }
        }
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.dedup();
        v
    }

    fn points(d: usize, axis: &[f64]) -> Vec<[f64; 2]> {
        if d == 1 {
            axis.iter().map(|&t| [t, 0.0]).collect()
        } else {
            let mut out = Vec::with_capacity(axis.len() * axis.len());
            for &a in axis {
                for &b in axis {
                    out.push([a, b]);
                }
            }
            out
        }
    }
}

fn multi_indices(d: usize, max: usize) -> Vec<[usize; 2]> {
    let mut out = Vec::new();
    for a0 in 0..=max {
        if d == 1 {
            out.push([a0, 0]);
        } else {
            for a1 in 0..=(max - a0) {
                out.push([a0, a1]);
            }
        }
    }
    out
}

/// ν^p_{n,m}(Φ): sampled sup of ⟨ξ⟩^{−p} |∂_x^a ∂_ξ^b Φ| over |a| ≤ n, |b| ≤ m.
pub fn seminorm(phi: &Symbol, n: usize, m: usize, p: f64, region: &SymbolRegion) -> f64 {
    let d = phi.dim();
    let xs = if phi.is_x_independent() {
        vec![[0.0; 2]]
    } else {
        SymbolRegion::points(d, &SymbolRegion::axis(region.x_max, region.step, false))
    };
    let xis = if phi.is_xi_independent() {
        vec![[0.0; 2]]
    } else {
        SymbolRegion::points(d, &SymbolRegion::axis(region.xi_max, region.step, true))
    };
    let mut sup = 0.0f64;
    for a in multi_indices(d, n) {
        for b in multi_indices(d, m) {
            let der = phi.derivative(&a, &b);
            if der.is_zero() {
                continue;
            }
            for xi in &xis {
                let w = (1.0 + xi[0] * xi[0] + xi[1] * xi[1]).powf(-p / 2.0);
                for x in &xs {
                    sup = sup.max(w * der.eval(x, xi).norm());
                }
            }
        }
    }
    sup
}

/// Scenario-level description of a symbol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SymbolSpec {
    One,
    Constant { re: f64, #[serde(default)] im: f64 },
    SinX { #[serde(default = "first_axis")] axis: usize },
    CosX { #[serde(default = "first_axis")] axis: usize },
    SinXi { #[serde(default = "first_axis")] axis: usize },
    CosXi { #[serde(default = "first_axis")] axis: usize },
    /// sin(x_j) cos(ξ_j).
    SinXCosXi { #[serde(default = "first_axis")] axis: usize },
    Bracket { p: f64 },
    Gaussian { #[serde(default = "one_f")] a_xi: f64, #[serde(default)] c_x: f64 },
    Sum { terms: Vec<SymbolSpec> },
    Product { factors: Vec<SymbolSpec> },
}

fn first_axis() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

impl SymbolSpec {
    /// Builds the symbol; axes in specs are 1-based.
    pub fn build(&self, d: usize) -> Result<Symbol> {
        let ax = |a: usize| -> Result<usize> {
            if a == 0 || a > d {
                Err(invalid("symbol.axis", format!("axis {a} is out of range for d = {d}")))
            } else {
                Ok(a - 1)
            }
        };
        match self {
            SymbolSpec::One => Ok(Symbol::one(d)),
            SymbolSpec::Constant { re, im } => Ok(Symbol::constant(d, Complex64::new(*re, *im))),
            SymbolSpec::SinX { axis } => Symbol::sin_x(d, ax(*axis)?),
            SymbolSpec::CosX { axis } => Symbol::cos_x(d, ax(*axis)?),
            SymbolSpec::SinXi { axis } => Symbol::sin_xi(d, ax(*axis)?),
            SymbolSpec::CosXi { axis } => Symbol::cos_xi(d, ax(*axis)?),
            SymbolSpec::SinXCosXi { axis } => {
                let j = ax(*axis)?;
                Ok(Symbol::sin_x(d, j)?
                    .mul(&Symbol::cos_xi(d, j)?)?
                    .with_name(format!("sin(x{0})cos(xi{0})", j + 1)))
            }
            SymbolSpec::Bracket { p } => Symbol::bracket(d, *p),
            SymbolSpec::Gaussian { a_xi, c_x } => Symbol::gaussian(d, *a_xi, *c_x),
            SymbolSpec::Sum { terms } => {
                let mut it = terms.iter();
                let first = it.next().ok_or_else(|| invalid("symbol.terms", "empty sum"))?;
                let mut s = first.build(d)?;
                for t in it {
                    s = s.add(&t.build(d)?)?;
                }
                Ok(s)
            }
            SymbolSpec::Product { factors } => {
                let mut it = factors.iter();
                let first = it.next().ok_or_else(|| invalid("symbol.factors", "empty product"))?;
                let mut s = first.build(d)?;
                for t in it {
                    s = s.mul(&t.build(d)?)?;
                }
                Ok(s)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn trig_symbols_evaluate() {
        let s = Symbol::sin_x(1, 0).unwrap().mul(&Symbol::cos_xi(1, 0).unwrap()).unwrap();
        let v = s.eval(&[0.7], &[1.3]);
        assert!((v - c(0.7f64.sin() * 1.3f64.cos())).norm() < 1e-15);
        let t = Symbol::sin_xi(2, 1).unwrap();
        assert!((t.eval(&[0.0, 0.0], &[0.2, 0.9]) - c(0.9f64.sin())).norm() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let d = 2;
        let s = Symbol::sin_x(d, 0)
            .unwrap()
            .mul(&Symbol::gaussian(d, 0.7, 0.3).unwrap())
            .unwrap()
            .add(&Symbol::bracket(d, -1.5).unwrap().mul(&Symbol::cos_xi(d, 1).unwrap()).unwrap())
            .unwrap();
        let x = [0.4, -0.3];
        let xi = [0.8, 1.1];
        let h = 1e-5;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (s.eval(&xp, &xi) - s.eval(&xm, &xi)) / (2.0 * h);
            assert!((fd - s.dx(j).eval(&x, &xi)).norm() < 1e-8);
            let mut ep = xi;
            let mut em = xi;
            ep[j] += h;
            em[j] -= h;
            let fd = (s.eval(&x, &ep) - s.eval(&x, &em)) / (2.0 * h);
            assert!((fd - s.dxi(j).eval(&x, &xi)).norm() < 1e-8);
        }
        // Mixed second derivative in ξ of the bracket profile.
        let b = Symbol::bracket(2, -1.5).unwrap();
        let b1 = b.dxi(0);
        let fd = (b1.eval(&x, &[xi[0], xi[1] + h]) - b1.eval(&x, &[xi[0], xi[1] - h])) / (2.0 * h);
        assert!((fd - b.derivative(&[0, 0], &[1, 1]).eval(&x, &xi)).norm() < 1e-8);
    }

    #[test]
    fn gaussian_transform_closed_form_and_quadrature() {
        let s = Symbol::gaussian(1, 1.0, 0.0).unwrap();
        for v in [0.0f64, 0.5, 1.7, 3.0] {
            let exact = std::f64::consts::FRAC_1_SQRT_2 * (-v * v / 4.0).exp();
            let cf = s.partial_fourier_xi(&[0.0], &[v]).unwrap();
            let q = s.partial_fourier_xi_quadrature(&[0.0], &[v], 12.0, 24);
            assert!((cf - c(exact)).norm() < 1e-15);
            assert!((q - cf).norm() < 1e-8);
        }
    }

    #[test]
    fn bracket_transform_matches_known_kernels() {
        let s1 = Symbol::bracket(1, -2.0).unwrap();
        for v in [0.1f64, 0.7, 2.5] {
            let exact = (PI / 2.0).sqrt() * (-v).exp();
            assert!((s1.partial_fourier_xi(&[0.0], &[v]).unwrap() - c(exact)).norm() < 1e-13);
        }
        // p = −3 in d = 1 against quadrature of the ξ-integral.
        let s3 = Symbol::bracket(1, -3.0).unwrap();
        for v in [0.3, 1.0, 2.0] {
            let cf = s3.partial_fourier_xi(&[0.0], &[v]).unwrap();
            let q = s3.partial_fourier_xi_quadrature(&[0.0], &[v], 400.0, 800);
            assert!((cf - q).norm() < 1e-5, "v={v}: {cf} vs {q}");
        }
    }

    #[test]
    fn bessel_k_known_values() {
        // K_0(1) and K_1(2) from standard tables.
        assert!((bessel_k(0.0, 1.0) - 0.421_024_438_240_708_3).abs() < 1e-14);
        assert!((bessel_k(1.0, 2.0) - 0.139_865_881_816_522_4).abs() < 1e-14);
        assert!((bessel_k(0.0, 0.01) - 4.721_244_730_161_094).abs() < 1e-12);
    }

    #[test]
    fn distributional_kernels_are_refused() {
        assert!(Symbol::one(1).partial_fourier_xi(&[0.0], &[0.0]).is_err());
        assert!(Symbol::bracket(1, 1.0).unwrap().partial_fourier_xi(&[0.0], &[0.3]).is_err());
    }

    #[test]
    fn seminorm_examples() {
        let r1 = SymbolRegion::default_for(1);
        assert!((seminorm(&Symbol::one(1), 3, 3, 0.0, &r1) - 1.0).abs() < 1e-15);
        assert!((seminorm(&Symbol::sin_x(1, 0).unwrap(), 3, 0, 0.0, &r1) - 1.0).abs() < 1e-15);
        let br = Symbol::bracket(1, 2.0).unwrap();
        assert!((seminorm(&br, 0, 0, 2.0, &r1) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spec_parsing() {
        let spec: SymbolSpec = toml::from_str("kind = \"sin_x_cos_xi\"").unwrap();
        let s = spec.build(1).unwrap();
        assert!((s.eval(&[1.0], &[0.5]) - c(1f64.sin() * 0.5f64.cos())).norm() < 1e-15);
        let bad: std::result::Result<SymbolSpec, _> = toml::from_str("kind = \"nope\"");
        assert!(bad.is_err());
    }
}
