//! The lattice Z^d, its dual 2πZ^d, phase-space index sets, and the window
//! whose squared translates form a partition of unity.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::jet::Jet;

/// A point of Γ = Z^d. Only the first `d` coordinates are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LatticeIndex {
    d: usize,
    c: [i64; 2],
}

impl LatticeIndex {
    pub fn new(coords: &[i64]) -> Result<Self> {
        check_dim(coords.len())?;
        let mut c = [0; 2];
        c[..coords.len()].copy_from_slice(coords);
        Ok(LatticeIndex { d: coords.len(), c })
    }

    pub(crate) fn from_array(d: usize, c: [i64; 2]) -> Self {
        LatticeIndex { d, c }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn coords(&self) -> &[i64] {
        &self.c[..self.d]
    }

    /// The point γ as a real vector.
    pub fn point(&self) -> [f64; 2] {
        [self.c[0] as f64, self.c[1] as f64]
    }

    pub fn max_abs(&self) -> i64 {
        self.coords().iter().map(|c| c.abs()).max().unwrap_or(0)
    }
}

/// A point γ* = 2π·coords of the dual lattice Γ*.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DualIndex {
    d: usize,
    c: [i64; 2],
}

impl DualIndex {
    pub fn new(coords: &[i64]) -> Result<Self> {
        check_dim(coords.len())?;
        let mut c = [0; 2];
        c[..coords.len()].copy_from_slice(coords);
        Ok(DualIndex { d: coords.len(), c })
    }

    pub(crate) fn from_array(d: usize, c: [i64; 2]) -> Self {
        DualIndex { d, c }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn coords(&self) -> &[i64] {
        &self.c[..self.d]
    }

    /// Integer frequencies k with γ* = 2πk; the atom oscillates as e^{ik·x}.
    pub fn freq(&self) -> [f64; 2] {
        [self.c[0] as f64, self.c[1] as f64]
    }

    /// The dual point γ* in momentum units.
    pub fn momentum(&self) -> [f64; 2] {
        [2.0 * PI * self.c[0] as f64, 2.0 * PI * self.c[1] as f64]
    }

    /// ⟨γ*, γ⟩, always a multiple of 2π.
    pub fn pairing(&self, g: &LatticeIndex) -> f64 {
        let m = self.momentum();
        let p = g.point();
        (0..self.d).map(|j| m[j] * p[j]).sum()
    }
}

/// A label (γ, γ*) of one frame atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PhaseSpaceIndex {
    pub pos: LatticeIndex,
    pub mom: DualIndex,
}

/// ϑ_{γ*}(x) = (2π)^{-d/2} exp(i⟨γ*, x⟩/(2π)).
pub fn theta(mom: &DualIndex, x: &[f64]) -> Complex64 {
    let k = mom.freq();
    let d = mom.dim();
    let phase: f64 = (0..d).map(|j| k[j] * x[j]).sum();
    Complex64::from_polar((2.0 * PI).powf(-(d as f64) / 2.0), phase)
}

/// Truncated phase-space lattice: all (γ, γ*) with max|γ_j| ≤ R_pos and
/// max|γ*_j|/(2π) ≤ R_mom, in lexicographic order on (pos, mom).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    d: usize,
    r_pos: usize,
    r_mom: usize,
}

impl IndexSet {
    pub fn new(d: usize, r_pos: usize, r_mom: usize) -> Result<Self> {
        check_dim(d)?;
        Ok(IndexSet { d, r_pos, r_mom })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn r_pos(&self) -> usize {
        self.r_pos
    }

    pub fn r_mom(&self) -> usize {
        self.r_mom
    }

    pub fn n_pos(&self) -> usize {
        (2 * self.r_pos + 1).pow(self.d as u32)
    }

    pub fn n_mom(&self) -> usize {
        (2 * self.r_mom + 1).pow(self.d as u32)
    }

    pub fn len(&self) -> usize {
        self.n_pos() * self.n_mom()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Radii grown by `dp` positions and `dm` frequencies.
    pub fn grown(&self, dp: usize, dm: usize) -> IndexSet {
        IndexSet {
            d: self.d,
            r_pos: self.r_pos + dp,
            r_mom: self.r_mom + dm,
        }
    }

    pub fn position(&self, i: usize) -> LatticeIndex {
        LatticeIndex::from_array(self.d, unlinear(self.d, self.r_pos, i))
    }

    pub fn momentum(&self, i: usize) -> DualIndex {
        DualIndex::from_array(self.d, unlinear(self.d, self.r_mom, i))
    }

    pub fn positions(&self) -> Vec<LatticeIndex> {
        (0..self.n_pos()).map(|i| self.position(i)).collect()
    }

    pub fn momenta(&self) -> Vec<DualIndex> {
        (0..self.n_mom()).map(|i| self.momentum(i)).collect()
    }

    pub fn get(&self, i: usize) -> PhaseSpaceIndex {
        let nm = self.n_mom();
        PhaseSpaceIndex {
            pos: self.position(i / nm),
            mom: self.momentum(i % nm),
        }
    }

    /// Linear number of a position in this set.
    pub fn position_number(&self, p: &LatticeIndex) -> Option<usize> {
        linear(self.d, self.r_pos, p.coords())
    }

    pub fn momentum_number(&self, m: &DualIndex) -> Option<usize> {
        linear(self.d, self.r_mom, m.coords())
    }

    pub fn locate(&self, idx: &PhaseSpaceIndex) -> Option<usize> {
        if idx.pos.dim() != self.d || idx.mom.dim() != self.d {
            return None;
        }
        let p = self.position_number(&idx.pos)?;
        let m = self.momentum_number(&idx.mom)?;
        Some(p * self.n_mom() + m)
    }

    pub fn iter(&self) -> impl Iterator<Item = PhaseSpaceIndex> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }
}

/// All indices of the truncated lattice, in the fixed lexicographic order.
pub fn enumerate_indices(d: usize, r_pos: usize, r_mom: usize) -> Result<Vec<PhaseSpaceIndex>> {
    Ok(IndexSet::new(d, r_pos, r_mom)?.iter().collect())
}

fn unlinear(d: usize, r: usize, i: usize) -> [i64; 2] {
    let w = 2 * r + 1;
    let r = r as i64;
    if d == 1 {
        [i as i64 - r, 0]
    } else {
        [(i / w) as i64 - r, (i % w) as i64 - r]
    }
}

fn linear(d: usize, r: usize, c: &[i64]) -> Option<usize> {
    if c.len() != d {
        return None;
    }
    let w = (2 * r + 1) as i64;
    let r = r as i64;
    let mut out = 0i64;
    for &x in c {
        if x.abs() > r {
            return None;
        }
        out = out * w + (x + r);
    }
    Some(out as usize)
}

/// Serializable description of the window profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowProfile {
    pub kind: WindowKind,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    BumpQuotient,
}

impl Default for WindowProfile {
    fn default() -> Self {
        WindowProfile {
            kind: WindowKind::BumpQuotient,
            margin: DEFAULT_MARGIN,
        }
    }
}

pub const DEFAULT_MARGIN: f64 = 0.05;

/// The window g(x) = B(x)/sqrt(Σ_γ B(x−γ)²) with B(x) = Π_j b(x_j(1+ε)),
/// b(t) = exp(−1/(1−t²)). It is a product of one-dimensional windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    d: usize,
    eps: f64,
    scale: f64,
}

impl Window {
    pub fn new(d: usize, margin: f64) -> Result<Self> {
        check_dim(d)?;
        if !(margin > 0.0 && margin < 1.0) {
            return Err(invalid("smoothness_margin", format!("{margin} is not in (0, 1)")));
        }
        Ok(Window {
            d,
            eps: margin,
            scale: 1.0 + margin,
        })
    }

    pub fn from_profile(d: usize, p: &WindowProfile) -> Result<Self> {
        match p.kind {
            WindowKind::BumpQuotient => Window::new(d, p.margin),
        }
    }

    pub fn profile(&self) -> WindowProfile {
        WindowProfile {
            kind: WindowKind::BumpQuotient,
            margin: self.eps,
        }
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn margin(&self) -> f64 {
        self.eps
    }

    /// g1 vanishes for |t| ≥ 1/(1+ε).
    pub fn support_radius(&self) -> f64 {
        1.0 / self.scale
    }

    fn bump(&self, t: f64) -> f64 {
        let u = t * self.scale;
        let q = 1.0 - u * u;
        if q <= 0.0 {
            0.0
        } else {
            (-1.0 / q).exp()
        }
    }

    /// One-dimensional window.
    pub fn g1(&self, t: f64) -> f64 {
        let b0 = self.bump(t);
        if b0 == 0.0 {
            return 0.0;
        }
        let s = b0 * b0 + sq(self.bump(t - 1.0)) + sq(self.bump(t + 1.0));
        b0 / s.sqrt()
    }

    /// Value and first derivative of the one-dimensional window.
    pub fn g1_d1(&self, t: f64) -> (f64, f64) {
        let (b0, d0) = self.bump_d1(t);
        if b0 == 0.0 {
            return (0.0, 0.0);
        }
        let (bm, dm) = self.bump_d1(t - 1.0);
        let (bp, dp) = self.bump_d1(t + 1.0);
        let s = b0 * b0 + bm * bm + bp * bp;
        let ds = 2.0 * (b0 * d0 + bm * dm + bp * dp);
        let rs = s.sqrt();
        (b0 / rs, d0 / rs - 0.5 * b0 * ds / (s * rs))
    }

    fn bump_d1(&self, t: f64) -> (f64, f64) {
        let u = t * self.scale;
        let q = 1.0 - u * u;
        if q <= 0.0 {
            return (0.0, 0.0);
        }
        let b = (-1.0 / q).exp();
        (b, b * (-2.0 * u / (q * q)) * self.scale)
    }

    /// Derivatives g1^{(k)}(t) for k = 0..=order, exact up to rounding.
    pub fn g1_derivatives(&self, t: f64, order: usize) -> Vec<f64> {
        if self.bump(t) == 0.0 {
            return vec![0.0; order + 1];
        }
        let bump_jet = |shift: f64| -> Jet {
            let u = Jet::variable(t - shift, order).scale(self.scale);
            if (u.0[0]).abs() >= 1.0 {
                return Jet::constant(0.0, order);
            }
            let q = &Jet::constant(1.0, order) - &(&u * &u);
            let inv = &Jet::constant(-1.0, order) / &q;
            inv.exp()
        };
        let b0 = bump_jet(0.0);
        let bm = bump_jet(1.0);
        let bp = bump_jet(-1.0);
        let s = &(&(&b0 * &b0) + &(&bm * &bm)) + &(&bp * &bp);
        let g = &b0 / &s.sqrt();
        (0..=order).map(|k| g.derivative(k)).collect()
    }

    /// g(x).
    pub fn eval(&self, x: &[f64]) -> f64 {
        x[..self.d].iter().map(|&t| self.g1(t)).product()
    }

    /// ∂^a g(x) for a multi-index a.
    pub fn derivative(&self, x: &[f64], a: &[usize]) -> f64 {
        (0..self.d)
            .map(|j| self.g1_derivatives(x[j], a[j])[a[j]])
            .product()
    }

    /// Σ_γ g(x−γ)², which equals 1 by construction.
    pub fn pou_sum(&self, x: &[f64]) -> f64 {
        (0..self.d)
            .map(|j| {
                let t = x[j];
                let base = t.floor() as i64;
                (base - 1..=base + 2)
                    .map(|m| sq(self.g1(t - m as f64)))
                    .sum::<f64>()
            })
            .product()
    }
}

fn sq(x: f64) -> f64 {
    x * x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w1() -> Window {
        Window::new(1, DEFAULT_MARGIN).unwrap()
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(Window::new(3, 0.05).is_err());
        assert!(Window::new(1, 0.0).is_err());
        assert!(Window::new(1, 1.0).is_err());
    }

    #[test]
    fn half_point_value_is_inverse_sqrt_two() {
        assert!((w1().g1(0.5) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn vanishes_outside_the_open_cube() {
        let w = w1();
        for t in [1.0, -1.0, 1.5, 0.96, -0.99] {
            assert_eq!(w.g1(t), 0.0);
        }
        let w2 = Window::new(2, 0.05).unwrap();
        assert_eq!(w2.eval(&[0.2, 1.0]), 0.0);
    }

    #[test]
    fn two_dimensional_partition_of_unity() {
        let w2 = Window::new(2, 0.05).unwrap();
        let mut s = 0.0;
        for a in -1..=1 {
            for b in -1..=1 {
                s += sq(w2.eval(&[0.3 - a as f64, -0.2 - b as f64]));
            }
        }
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn derivatives_agree_with_finite_differences() {
        let w = w1();
        for &t in &[-0.7, -0.2, 0.1, 0.45, 0.8] {
            let d = w.g1_derivatives(t, 4);
            let (v, d1) = w.g1_d1(t);
            assert!((d[0] - v).abs() < 1e-15);
            assert!((d[1] - d1).abs() < 1e-12 * d1.abs().max(1.0));
            for k in 1..=4 {
                let fd = |h: f64| {
                    (w.g1_derivatives(t + h, k - 1)[k - 1] - w.g1_derivatives(t - h, k - 1)[k - 1])
                        / (2.0 * h)
                };
                // Richardson extrapolation removes the O(h²) term.
                let h = 1e-3;
                let rich = (4.0 * fd(h / 2.0) - fd(h)) / 3.0;
                assert!(
                    (rich - d[k]).abs() < 1e-6 * d[k].abs().max(1.0),
                    "t={t} k={k} fd={rich} jet={}",
                    d[k]
                );
            }
        }
    }

    #[test]
    fn index_counts() {
        assert_eq!(enumerate_indices(1, 0, 0).unwrap().len(), 1);
        assert_eq!(enumerate_indices(1, 1, 2).unwrap().len(), 15);
        assert_eq!(enumerate_indices(2, 2, 1).unwrap().len(), 225);
    }

    #[test]
    fn index_order_is_lexicographic_and_locate_inverts_get() {
        let set = IndexSet::new(2, 1, 2).unwrap();
        let all: Vec<_> = set.iter().collect();
        for w in all.windows(2) {
            let a = (w[0].pos.coords().to_vec(), w[0].mom.coords().to_vec());
            let b = (w[1].pos.coords().to_vec(), w[1].mom.coords().to_vec());
            assert!(a < b);
        }
        for (i, idx) in all.iter().enumerate() {
            assert_eq!(set.locate(idx), Some(i));
        }
    }

    #[test]
    fn theta_values() {
        let z = DualIndex::new(&[0]).unwrap();
        assert!((theta(&z, &[1.3]).re - 0.398_942_280_401_432_7).abs() < 1e-15);
        let one = DualIndex::new(&[1]).unwrap();
        let v = theta(&one, &[PI]);
        assert!((v.re + 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!(v.im.abs() < 1e-15);
    }
}
