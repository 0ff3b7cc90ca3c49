//! Algebra and diagnostics on frame matrices: products, off-diagonal decay
//! constants, norm bounds, commutators with Q_j and P^A_j, and a
//! phase-space quadrature of the magnetic Moyal product.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frame::norm_const;
use crate::lattice_window::{IndexSet, Window};
use crate::magnetic::{field_seminorm, MagneticField, SampleBox, VectorPotential};
use crate::quadrature::{gauss_legendre_on, midpoint};
use crate::quantize::{build_matrix, BuildOptions, FrameMatrix, Provenance, QuadratureSpec, Quantizer};
use crate::symbols::{seminorm, KernelKind, Symbol, SymbolRegion, XiBase};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

/// Relative change of an interior decay constant tolerated under radii + 1.
pub const DECAY_STABILITY_TOL: f64 = 0.2;
/// Largest index count for dense singular values.
pub const DENSE_GUARD: usize = 5000;
/// Sign of the field term in the P-commutator symbol
/// [P^A_j, Op^A(Φ)] = Op^A(−i∂_{x_j}Φ + s·i Σ_k B_jk ∂_{ξ_k}Φ). Fixed by the
/// interior defect of the d = 2 check; the other sign misses by 2b.
pub const BEALS_FIELD_SIGN: f64 = 1.0;

/// Row-wise product over the shared index set.
pub fn matrix_product(a: &FrameMatrix, b: &FrameMatrix) -> Result<FrameMatrix> {
    if a.set() != b.set() {
        return Err(Error::Mismatch("product of matrices over different index sets".into()));
    }
    let n = a.len();
    let rows: Vec<Vec<(usize, Complex64)>> = (0..n)
        .into_par_iter()
        .map_init(
            || (vec![ZERO; n], vec![false; n], Vec::new()),
            |(acc, hit, touched), r| {
                for &(g, av) in a.row(r) {
                    for &(c, bv) in b.row(g) {
                        if !hit[c] {
                            hit[c] = true;
                            touched.push(c);
                        }
                        acc[c] += av * bv;
                    }
                }
                touched.sort_unstable();
                let row = touched.iter().map(|&c| (c, acc[c])).collect();
                for &c in touched.iter() {
                    acc[c] = ZERO;
                    hit[c] = false;
                }
                touched.clear();
                row
            },
        )
        .collect();
    FrameMatrix::from_rows(a.set().clone(), a.order() + b.order(), Provenance::Product, rows)
}

/// (A·B) restricted to `core`, summing over all of the shared set. Only the
/// rows of A and the columns of B inside the core are read, so both factors
/// may have been assembled with that core.
pub fn matrix_product_on(a: &FrameMatrix, b: &FrameMatrix, core: &IndexSet) -> Result<FrameMatrix> {
    if a.set() != b.set() {
        return Err(Error::Mismatch("product of matrices over different index sets".into()));
    }
    let set = a.set();
    if core.dim() != set.dim() || core.r_pos() > set.r_pos() || core.r_mom() > set.r_mom() {
        return Err(Error::Mismatch("core is not a subset of the index set".into()));
    }
    let map: Vec<Option<usize>> = (0..set.len()).map(|i| core.locate(&set.get(i))).collect();
    let inv: Vec<usize> = {
        let mut v = vec![0; core.len()];
        for (i, m) in map.iter().enumerate() {
            if let Some(k) = m {
                v[*k] = i;
            }
        }
        v
    };
    let nc = core.len();
    let rows: Vec<Vec<(usize, Complex64)>> = inv
        .par_iter()
        .map(|&r| {
            let mut acc = vec![ZERO; nc];
            for &(g, av) in a.row(r) {
                for &(c, bv) in b.row(g) {
                    if let Some(cc) = map[c] {
                        acc[cc] += av * bv;
                    }
                }
            }
            acc.into_iter().enumerate().filter(|(_, v)| *v != ZERO).collect()
        })
        .collect();
    FrameMatrix::from_rows(core.clone(), a.order() + b.order(), Provenance::Product, rows)
}

/// ⟨v⟩ = (1 + |v|²)^{1/2}.
fn bracket(v: &[f64]) -> f64 {
    (1.0 + v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// One row of a decay table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayConstant {
    pub n1: u32,
    pub n2: u32,
    /// Weighted sup over every stored entry.
    pub constant: f64,
    /// Weighted sup over pairs with both indices one step inside the radii.
    pub interior: f64,
    /// The interior sup of the matrix at radii + 1, when computed.
    pub grown_interior: Option<f64>,
    pub stable: Option<bool>,
}

/// Decay constants C_{n1,n2} of one matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub order: f64,
    pub r_pos: usize,
    pub r_mom: usize,
    /// Radii of the interior block used for the stability comparison.
    pub interior_r_pos: usize,
    pub interior_r_mom: usize,
    pub constants: Vec<DecayConstant>,
    /// All flags true; `None` before a grown matrix was compared.
    pub stable: Option<bool>,
}

impl DecayReport {
    pub fn get(&self, n1: u32, n2: u32) -> Option<&DecayConstant> {
        self.constants.iter().find(|c| c.n1 == n1 && c.n2 == n2)
    }
}

/// Pairs {0, 2, .., max}².
pub fn even_pairs(max: u32) -> Vec<(u32, u32)> {
    let e: Vec<u32> = (0..=max).step_by(2).collect();
    e.iter().flat_map(|&a| e.iter().map(move |&b| (a, b))).collect()
}

fn interior_radii(set: &IndexSet) -> (usize, usize) {
    (set.r_pos().saturating_sub(1), set.r_mom().saturating_sub(1))
}

/// ⟨α−β⟩^{n1}⟨α*−β*⟩^{n2}⟨α*+β*⟩^{−p} with α* = 2πk.
fn decay_weight(pairs: &[(u32, u32)], p: f64, da: &[f64], dm: &[f64], sm: &[f64], out: &mut [f64]) {
    let b1 = bracket(da);
    let b2 = bracket(dm);
    let b3 = bracket(sm).powf(-p);
    for (o, &(n1, n2)) in out.iter_mut().zip(pairs) {
        *o = b1.powi(n1 as i32) * b2.powi(n2 as i32) * b3;
    }
}

/// Weighted sups over all stored entries and over the interior block.
fn weighted_sups(m: &FrameMatrix, p: f64, pairs: &[(u32, u32)]) -> (Vec<f64>, Vec<f64>) {
    let set = m.set();
    let d = set.dim();
    let (ip, im) = interior_radii(set);
    let inside = |i: usize| {
        let x = set.get(i);
        x.pos.max_abs() as usize <= ip && x.mom.coords().iter().all(|k| k.unsigned_abs() as usize <= im)
    };
    let np = pairs.len();
    let folded = (0..m.len())
        .into_par_iter()
        .map(|r| {
            let mut all = vec![0.0f64; np];
            let mut int = vec![0.0f64; np];
            let mut w = vec![0.0; np];
            let a = set.get(r);
            let ri = inside(r);
            for &(c, v) in m.row(r) {
                let b = set.get(c);
                let (pa, pb) = (a.pos.point(), b.pos.point());
                let (ma, mb) = (a.mom.momentum(), b.mom.momentum());
                let da: Vec<f64> = (0..d).map(|j| pa[j] - pb[j]).collect();
                let dm: Vec<f64> = (0..d).map(|j| ma[j] - mb[j]).collect();
                let sm: Vec<f64> = (0..d).map(|j| ma[j] + mb[j]).collect();
                decay_weight(pairs, p, &da, &dm, &sm, &mut w);
                let ci = ri && inside(c);
                for k in 0..np {
                    let x = w[k] * v.norm();
                    all[k] = all[k].max(x);
                    if ci {
                        int[k] = int[k].max(x);
                    }
                }
            }
            (all, int)
        })
        .reduce(
            || (vec![0.0; np], vec![0.0; np]),
            |(mut a1, mut i1), (a2, i2)| {
                for k in 0..np {
                    a1[k] = a1[k].max(a2[k]);
                    i1[k] = i1[k].max(i2[k]);
                }
                (a1, i1)
            },
        );
    folded
}

/// Decay constants of one matrix; the stability flag stays unset.
pub fn decay_constants(m: &FrameMatrix, p: f64, pairs: &[(u32, u32)]) -> DecayReport {
    let (all, int) = weighted_sups(m, p, pairs);
    let (ip, im) = interior_radii(m.set());
    DecayReport {
        order: p,
        r_pos: m.set().r_pos(),
        r_mom: m.set().r_mom(),
        interior_r_pos: ip,
        interior_r_mom: im,
        constants: pairs
            .iter()
            .zip(all.iter().zip(&int))
            .map(|(&(n1, n2), (&c, &ic))| DecayConstant {
                n1,
                n2,
                constant: c,
                interior: ic,
                grown_interior: None,
                stable: None,
            })
            .collect(),
        stable: None,
    }
}

/// Marks each constant stable when the interior sup of `grown` differs from
/// that of `report` by less than [`DECAY_STABILITY_TOL`] relative.
pub fn mark_stability(report: &mut DecayReport, grown_interior: &[f64]) {
    let mut all = true;
    for (c, &g) in report.constants.iter_mut().zip(grown_interior) {
        let ok = g.is_finite() && c.interior.is_finite() && (g - c.interior).abs() <= DECAY_STABILITY_TOL * c.interior.max(g);
        c.grown_interior = Some(g);
        c.stable = Some(ok);
        all &= ok;
    }
    report.stable = Some(all);
}

/// Decay report of `m` with the stability flag taken from `grown`, the same
/// operator at radii + 1.
pub fn decay_report(m: &FrameMatrix, grown: &FrameMatrix, p: f64, pairs: &[(u32, u32)]) -> Result<DecayReport> {
    let (s, g) = (m.set(), grown.set());
    if g.dim() != s.dim() || g.r_pos() != s.r_pos() + 1 || g.r_mom() != s.r_mom() + 1 {
        return Err(Error::Mismatch("the grown matrix must have radii + 1".into()));
    }
    let mut rep = decay_constants(m, p, pairs);
    let (_, gi) = weighted_sups(grown, p, pairs);
    mark_stability(&mut rep, &gi);
    Ok(rep)
}

/// Interior decay constants of Op^A(Φ) over `set`, computed block by block
/// without storing the matrix. Equal to the `interior` column of
/// [`decay_constants`] applied to the assembled matrix.
pub fn decay_scan(
    phi: &Symbol,
    gauge: &VectorPotential,
    window: &Window,
    set: &IndexSet,
    quad: QuadratureSpec,
    p: f64,
    pairs: &[(u32, u32)],
) -> Result<Vec<f64>> {
    let q = Quantizer::new(phi, gauge, window, quad)?;
    let d = set.dim();
    let (ip, im) = interior_radii(set);
    let inner = IndexSet::new(d, ip, im)?;
    let moms_list = inner.momenta();
    let mut moms = Vec::new();
    let mut wts = Vec::new();
    let np = pairs.len();
    for a in &moms_list {
        for b in &moms_list {
            let (ka, kb) = (pad(a.coords()), pad(b.coords()));
            moms.push((ka, kb));
            let (ma, mb) = (a.momentum(), b.momentum());
            let dm: Vec<f64> = (0..d).map(|j| ma[j] - mb[j]).collect();
            let sm: Vec<f64> = (0..d).map(|j| ma[j] + mb[j]).collect();
            let mut w = vec![0.0; np];
            decay_weight(pairs, p, &[0.0; 2][..d], &dm, &sm, &mut w);
            wts.push(w);
        }
    }
    let gap = q.max_gap().min(2 * ip as i64);
    let positions = inner.positions();
    let pos_pairs: Vec<(Vec<i64>, Vec<i64>)> = if q.is_covariant() {
        // |M| depends on α − β only.
        let offs: Vec<i64> = (-gap..=gap).collect();
        let list: Vec<Vec<i64>> = if d == 1 {
            offs.iter().map(|&o| vec![o]).collect()
        } else {
            offs.iter().flat_map(|&a| offs.iter().map(move |&b| vec![a, b])).collect()
        };
        list.into_iter().map(|o| (vec![0; d], o)).collect()
    } else {
        let mut v = Vec::new();
        for a in &positions {
            for b in &positions {
                if a.coords().iter().zip(b.coords()).all(|(x, y)| (x - y).abs() <= gap) {
                    v.push((a.coords().to_vec(), b.coords().to_vec()));
                }
            }
        }
        v
    };
    let sups = pos_pairs
        .par_iter()
        .map(|(a, b)| {
            let vals = q.block(a, b, &moms);
            let da: Vec<f64> = (0..d).map(|j| (a[j] - b[j]) as f64).collect();
            let b1 = bracket(&da);
            let mut out = vec![0.0f64; np];
            for (v, w) in vals.iter().zip(&wts) {
                let m = v.norm();
                for (k, &(n1, _)) in pairs.iter().enumerate() {
                    out[k] = out[k].max(b1.powi(n1 as i32) * w[k] * m);
                }
            }
            out
        })
        .reduce(
            || vec![0.0; np],
            |mut a, b| {
                for k in 0..np {
                    a[k] = a[k].max(b[k]);
                }
                a
            },
        );
    Ok(sups)
}

fn pad(c: &[i64]) -> [i64; 2] {
    [c[0], if c.len() > 1 { c[1] } else { 0 }]
}

/// sqrt(max row ℓ¹ sum · max column ℓ¹ sum), an upper bound for the ℓ²
/// operator norm.
pub fn schur_norm_bound(m: &FrameMatrix) -> f64 {
    let mut cols = vec![0.0f64; m.len()];
    let mut row_max = 0.0f64;
    for r in 0..m.len() {
        let mut s = 0.0;
        for &(c, v) in m.row(r) {
            let a = v.norm();
            s += a;
            cols[c] += a;
        }
        row_max = row_max.max(s);
    }
    let col_max = cols.into_iter().fold(0.0, f64::max);
    (row_max * col_max).sqrt()
}

/// Largest singular value of the dense truncation.
pub fn operator_norm_truncated(m: &FrameMatrix) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let dense = m.to_dense(DENSE_GUARD)?;
    Ok(dense.singular_values().iter().copied().fold(0.0, f64::max))
}

/// Empirical Calderón–Vaillancourt constant at one radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvCertificate {
    pub r_pos: usize,
    pub r_mom: usize,
    pub norm_bound: f64,
    /// ν⁰_{k,k}(Φ) with k = 2d + 2.
    pub seminorm: f64,
    /// |||B|||_N with N = 2d + 2.
    pub field_norm: f64,
    /// norm_bound / ((1 + field_norm) · seminorm).
    pub ratio: f64,
}

/// Box on which field seminorms are sampled for certificates.
pub fn field_box() -> SampleBox {
    SampleBox::square(4.0, 33)
}

/// (ν⁰_{k,k}(Φ), |||B|||_k) with k = 2d + 2. Independent of the radii, so
/// callers comparing radii compute them once.
pub fn cv_norms(phi: &Symbol, field: &MagneticField) -> Result<(f64, f64)> {
    if phi.order() != 0.0 {
        return Err(invalid("symbol", format!("order {} given, the bound needs order 0", phi.order())));
    }
    let d = phi.dim();
    let k = 2 * d + 2;
    Ok((seminorm(phi, k, k, 0.0, &SymbolRegion::default_for(d)), field_seminorm(field, k, &field_box())))
}

/// Certificate of an assembled matrix given the norms from [`cv_norms`].
pub fn cv_ratio(m: &FrameMatrix, norms: (f64, f64)) -> CvCertificate {
    let (sn, fnorm) = norms;
    let norm_bound = schur_norm_bound(m);
    CvCertificate {
        r_pos: m.set().r_pos(),
        r_mom: m.set().r_mom(),
        norm_bound,
        seminorm: sn,
        field_norm: fnorm,
        ratio: if sn > 0.0 { norm_bound / ((1.0 + fnorm) * sn) } else { f64::INFINITY },
    }
}

pub fn cv_certificate(
    phi: &Symbol,
    gauge: &VectorPotential,
    window: &Window,
    set: &IndexSet,
    opts: &BuildOptions,
) -> Result<CvCertificate> {
    let norms = cv_norms(phi, gauge.field())?;
    let m = build_matrix(phi, gauge, window, set, opts)?;
    Ok(cv_ratio(&m, norms))
}

/// Position Q_j or magnetic momentum P^A_j.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Observable {
    Q,
    P,
}

impl Observable {
    pub fn name(&self) -> &'static str {
        match self {
            Observable::Q => "Q",
            Observable::P => "P",
        }
    }
}

/// (G_α̃, Q_j G_β̃) or (G_α̃, (−i∂_j − A_j) G_β̃) by midpoint quadrature over
/// the overlap of the two supports, the derivative taken analytically on the
/// atom. Axis `j` is 0-based. With `core` only rows or columns in it are
/// computed.
pub fn basic_observable_matrix(
    kind: Observable,
    j: usize,
    gauge: &VectorPotential,
    window: &Window,
    set: &IndexSet,
    w_nodes: usize,
    core: Option<&IndexSet>,
) -> Result<FrameMatrix> {
    let d = set.dim();
    if gauge.dim() != d || window.dim() != d {
        return Err(Error::Mismatch("index set, gauge and window dimensions differ".into()));
    }
    if j >= d {
        return Err(invalid("axis", format!("axis {} does not exist in d = {d}", j + 1)));
    }
    let n_mom = set.n_mom();
    let momenta = set.momenta();
    let positions = set.positions();
    let in_core = |c: &[i64], r: fn(&IndexSet) -> usize| core.is_none_or(|s| c.iter().all(|x| x.unsigned_abs() as usize <= r(s)));
    let core_mom: Vec<bool> = momenta.iter().map(|k| in_core(k.coords(), IndexSet::r_mom)).collect();
    let core_pos: Vec<bool> = positions.iter().map(|a| in_core(a.coords(), IndexSet::r_pos)).collect();
    let mut pos_pairs = Vec::new();
    for (i, a) in positions.iter().enumerate() {
        for (k, b) in positions.iter().enumerate() {
            let gap = a.coords().iter().zip(b.coords()).map(|(x, y)| (x - y).abs()).max().unwrap_or(0);
            if gap <= 1 && (core_pos[i] || core_pos[k]) {
                pos_pairs.push((i, k));
            }
        }
    }
    let rm = set.r_mom() as i64;
    let nd = (4 * rm + 1) as usize;
    let r = window.support_radius();
    let c2 = norm_const(d) * norm_const(d);
    let blocks: Vec<Vec<(usize, usize, Complex64)>> = pos_pairs
        .par_iter()
        .map(|&(i, k)| {
            let alpha = positions[i].point();
            let beta = positions[k].point();
            let mut rules = Vec::new();
            for ax in 0..d {
                let lo = alpha[ax].max(beta[ax]) - r;
                let hi = alpha[ax].min(beta[ax]) + r;
                rules.push(midpoint(w_nodes, lo, hi));
            }
            let n0 = rules[0].nodes.len();
            let n1 = if d == 2 { rules[1].nodes.len() } else { 1 };
            // f0 multiplies k_β,j; f1 is the rest of the integrand.
            let mut f0 = vec![ZERO; n0 * n1];
            let mut f1 = vec![ZERO; n0 * n1];
            for i0 in 0..n0 {
                for i1 in 0..n1 {
                    let y = [rules[0].nodes[i0], if d == 2 { rules[1].nodes[i1] } else { 0.0 }];
                    let wq = rules[0].weights[i0] * if d == 2 { rules[1].weights[i1] } else { 1.0 };
                    let mut ga = 1.0;
                    let mut gb = 1.0;
                    let mut dgb = 1.0;
                    for ax in 0..d {
                        ga *= window.g1(y[ax] - alpha[ax]);
                        let (v, dv) = window.g1_d1(y[ax] - beta[ax]);
                        gb *= v;
                        dgb *= if ax == j { dv } else { v };
                    }
                    if ga == 0.0 || gb == 0.0 {
                        continue;
                    }
                    let e = Complex64::from_polar(c2 * wq, gauge.line_integral(&y, &alpha) - gauge.line_integral(&y, &beta));
                    let at = i0 * n1 + i1;
                    match kind {
                        Observable::Q => f1[at] = e * ga * gb * y[j],
                        Observable::P => {
                            let h = gauge.line_integral_grad_first(&y, &beta)[j] + gauge.potential(&y)[j];
                            f0[at] = e * ga * gb;
                            f1[at] = e * ga * (-I * dgb - h * gb);
                        }
                    }
                }
            }
            let t1 = dft2(&f1, &rules, d, rm, nd);
            let t0 = if kind == Observable::P { Some(dft2(&f0, &rules, d, rm, nd)) } else { None };
            let mut out = Vec::new();
            for (ia, ka) in momenta.iter().enumerate() {
                for (ib, kb) in momenta.iter().enumerate() {
                    if !((core_pos[i] && core_mom[ia]) || (core_pos[k] && core_mom[ib])) {
                        continue;
                    }
                    let (fa, fb) = (ka.freq(), kb.freq());
                    let di = |ax: usize| (ka.coords()[ax] - kb.coords()[ax] + 2 * rm) as usize;
                    let at = if d == 1 { di(0) } else { di(0) * nd + di(1) };
                    let mut v = t1[at];
                    if let Some(t0) = &t0 {
                        v += fb[j] * t0[at];
                    }
                    let ph: f64 = (0..d).map(|ax| fa[ax] * alpha[ax] - fb[ax] * beta[ax]).sum();
                    let v = v * Complex64::from_polar(1.0, ph);
                    if v != ZERO {
                        out.push((i * n_mom + ia, k * n_mom + ib, v));
                    }
                }
            }
            out
        })
        .collect();
    let mut rows = vec![Vec::new(); set.len()];
    for block in blocks {
        for (rr, cc, v) in block {
            rows[rr].push((cc, v));
        }
    }
    let m = FrameMatrix::from_rows(set.clone(), 1.0, Provenance::Quadrature, rows)?;
    Ok(m)
}

/// T(Δ) = Σ_y f(y) e^{−iΔ·y} for integer Δ in [−2R, 2R]^d, axis by axis.
fn dft2(f: &[Complex64], rules: &[crate::quadrature::Rule], d: usize, rm: i64, nd: usize) -> Vec<Complex64> {
    let n0 = rules[0].nodes.len();
    let e = |ax: usize| -> Vec<Complex64> {
        let nodes = &rules[ax].nodes;
        let mut out = Vec::with_capacity(nd * nodes.len());
        for k in 0..nd {
            let delta = (k as i64 - 2 * rm) as f64;
            out.extend(nodes.iter().map(|&y| Complex64::from_polar(1.0, -delta * y)));
        }
        out
    };
    let e0 = e(0);
    if d == 1 {
        return (0..nd).map(|k| (0..n0).map(|i| e0[k * n0 + i] * f[i]).sum()).collect();
    }
    let n1 = rules[1].nodes.len();
    let e1 = e(1);
    let mut half = vec![ZERO; n0 * nd];
    for i0 in 0..n0 {
        let row = &f[i0 * n1..(i0 + 1) * n1];
        if row.iter().all(|v| *v == ZERO) {
            continue;
        }
        for k1 in 0..nd {
            half[i0 * nd + k1] = row.iter().zip(&e1[k1 * n1..(k1 + 1) * n1]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![ZERO; nd * nd];
    for k0 in 0..nd {
        for k1 in 0..nd {
            out[k0 * nd + k1] = (0..n0).map(|i0| e0[k0 * n0 + i0] * half[i0 * nd + k1]).sum();
        }
    }
    out
}

/// Symbol of [Q_j, Op^A(Φ)] or [P^A_j, Op^A(Φ)]; the field must be constant.
pub fn commutator_symbol(phi: &Symbol, kind: Observable, j: usize, field: &MagneticField) -> Result<Symbol> {
    let d = phi.dim();
    if j >= d {
        return Err(invalid("axis", format!("axis {} does not exist in d = {d}", j + 1)));
    }
    let name = format!("[{}{}, Op({})]", kind.name(), j + 1, phi.name());
    let s = match kind {
        Observable::Q => phi.dxi(j).scale(I),
        Observable::P => {
            let mut s = phi.dx(j).scale(-I);
            if !field.is_zero() {
                let b = field
                    .constant_value()
                    .ok_or_else(|| invalid("field", "the P-commutator symbol is implemented for constant fields"))?;
                // B_12 = b, B_21 = −b.
                let (k, bjk) = if j == 0 { (1, b) } else { (0, -b) };
                s = s.add(&phi.dxi(k).scale(I * BEALS_FIELD_SIGN * bjk))?;
            }
            s
        }
    };
    Ok(s.with_order(phi.order()).with_name(name))
}

/// Momentum and position margins by which the product radii exceed the
/// compared block. The window spectrum decays slowly, so sums over γ*
/// need a wide momentum margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BealsOptions {
    pub pos_margin: usize,
    pub mom_margin: usize,
    pub quad: QuadratureSpec,
}

impl BealsOptions {
    pub fn default_for(d: usize) -> Self {
        BealsOptions {
            pos_margin: 2,
            mom_margin: if d == 1 { 16 } else { 10 },
            quad: QuadratureSpec::default_for(d),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BealsReport {
    pub symbol: String,
    pub lhs: FrameMatrix,
    pub rhs: FrameMatrix,
    /// max |lhs − rhs| over the compared block.
    pub defect: f64,
    pub lhs_max: f64,
    pub rhs_max: f64,
}

/// Compares [X, M(Φ)] (products at enlarged radii, restricted to `set`) with
/// the matrix of the commutator symbol over `set`.
pub fn beals_check(
    phi: &Symbol,
    gauge: &VectorPotential,
    window: &Window,
    kind: Observable,
    j: usize,
    set: &IndexSet,
    opts: &BealsOptions,
) -> Result<BealsReport> {
    if phi.order() > 0.0 {
        return Err(invalid("symbol", "the commutator check needs an order-0 symbol"));
    }
    let big = set.grown(opts.pos_margin, opts.mom_margin);
    let x = basic_observable_matrix(kind, j, gauge, window, &big, opts.quad.w_nodes, Some(set))?;
    let bo = BuildOptions {
        quad: opts.quad,
        core: Some(set.clone()),
        ..BuildOptions::default_for(set.dim())
    };
    let m = build_matrix(phi, gauge, window, &big, &bo)?;
    let xm = matrix_product_on(&x, &m, set)?;
    let mx = matrix_product_on(&m, &x, set)?;
    let lhs = xm.add_scaled(&mx, Complex64::new(-1.0, 0.0))?.with_provenance(Provenance::Commutator);
    let sym = commutator_symbol(phi, kind, j, gauge.field())?;
    let rhs = build_matrix(&sym, gauge, window, set, &BuildOptions { quad: opts.quad, ..BuildOptions::default_for(set.dim()) })?;
    let diff = lhs.add_scaled(&rhs, Complex64::new(-1.0, 0.0))?;
    Ok(BealsReport {
        symbol: sym.name().to_string(),
        defect: diff.max_abs(),
        lhs_max: lhs.max_abs(),
        rhs_max: rhs.max_abs(),
        lhs,
        rhs,
    })
}

/// Truncation of the Moyal-product integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoyalQuadrature {
    /// Gauss–Legendre panels per axis.
    pub panels: usize,
    pub nodes_per_panel: usize,
    /// Gaussian factors are cut where they fall below e^{−cut}.
    pub cut: f64,
}

impl Default for MoyalQuadrature {
    fn default() -> Self {
        MoyalQuadrature {
            panels: 12,
            nodes_per_panel: 12,
            cut: 50.0,
        }
    }
}

/// One integration variable: a Gauss–Legendre tensor grid, or the single
/// node of a Dirac mass.
struct VarRule {
    /// Per-axis nodes and weights.
    axes: Vec<(Vec<f64>, Vec<f64>)>,
    /// Overall factor of a Dirac node.
    scale: f64,
}

/// (φ ♯^B ψ)(x, ξ) for a constant field b (d = 2) or b = 0 by direct
/// quadrature:
///
/// (φ♯ψ)(X) = (2/π)^d ∫dy ∫dz e^{2iξ·(z−y)} e^{−2ib·det(y,z)} φ̌(x+y, −2z) ψ̌(x+z, 2y),
///
/// where φ̌(x, v) = (2π)^{-d/2} ∫ e^{iη·v} φ(x, η) dη is taken in closed form.
/// Accepts symbols whose ξ-parts are Gaussian or trigonometric.
pub fn moyal_numeric(phi: &Symbol, psi: &Symbol, b: f64, x: &[f64], xi: &[f64], quad: &MoyalQuadrature) -> Result<Complex64> {
    let d = phi.dim();
    if psi.dim() != d || x.len() < d || xi.len() < d {
        return Err(Error::Mismatch("symbol and point dimensions differ".into()));
    }
    if d == 1 && b != 0.0 {
        return Err(invalid("b", "d = 1 admits only b = 0"));
    }
    for s in [phi, psi] {
        for t in s.terms() {
            if let XiBase::Bracket { .. } = t.xi.base {
                return Err(Error::KernelPath {
                    symbol: s.name().to_string(),
                    reason: "the Moyal oracle accepts Gaussian or trigonometric ξ-dependence only".into(),
                });
            }
        }
    }
    let xs = [x[0], if d == 2 { x[1] } else { 0.0 }];
    let es = [xi[0], if d == 2 { xi[1] } else { 0.0 }];
    let dirac = (2.0 * PI).powf(d as f64 / 2.0) * 0.5f64.powi(d as i32);
    let rule_for = |t: &crate::symbols::Term, sign: f64| -> VarRule {
        // The transform is evaluated at ∓2·var, centred where ±2·var + s = 0.
        match (t.kernel_kind(), t.xi.base) {
            (KernelKind::Point { shift }, _) => VarRule {
                axes: (0..d).map(|j| (vec![sign * 0.5 * shift[j]], vec![1.0])).collect(),
                scale: dirac,
            },
            (_, XiBase::Gauss { a }) => {
                let half = (quad.cut * a).sqrt();
                VarRule {
                    axes: (0..d)
                        .map(|j| {
                            let c = sign * 0.5 * t.xi.shift[j];
                            panel_rule(c - half, c + half, quad.panels, quad.nodes_per_panel)
                        })
                        .collect(),
                    scale: 1.0,
                }
            }
            _ => unreachable!("bracket terms rejected above"),
        }
    };
    let mut total = ZERO;
    for tp in phi.terms() {
        for tq in psi.terms() {
            // z carries φ's transform at −2z, y carries ψ's at 2y.
            let rz = rule_for(tp, 1.0);
            let ry = rule_for(tq, -1.0);
            let point_p = matches!(tp.kernel_kind(), KernelKind::Point { .. });
            let point_q = matches!(tq.kernel_kind(), KernelKind::Point { .. });
            let fy = |y: [f64; 2]| -> Complex64 {
                let tr = if point_q { Complex64::new(1.0, 0.0) } else { tq.xi_transform(&[2.0 * y[0], 2.0 * y[1]], d) };
                let arg = [xs[0] + y[0], xs[1] + y[1]];
                tp.x.eval(&arg[..d], d) * tr * Complex64::from_polar(1.0, -2.0 * (es[0] * y[0] + es[1] * y[1]))
            };
            let fz = |z: [f64; 2]| -> Complex64 {
                let tr = if point_p { Complex64::new(1.0, 0.0) } else { tp.xi_transform(&[-2.0 * z[0], -2.0 * z[1]], d) };
                let arg = [xs[0] + z[0], xs[1] + z[1]];
                tq.x.eval(&arg[..d], d) * tr * Complex64::from_polar(1.0, 2.0 * (es[0] * z[0] + es[1] * z[1]))
            };
            let val = if d == 1 {
                let sy: Complex64 = ry.axes[0].0.iter().zip(&ry.axes[0].1).map(|(&y, &w)| w * fy([y, 0.0])).sum();
                let sz: Complex64 = rz.axes[0].0.iter().zip(&rz.axes[0].1).map(|(&z, &w)| w * fz([z, 0.0])).sum();
                sy * sz
            } else {
                coupled_sum(&ry, &rz, b, fy, fz)
            };
            total += tp.coeff * tq.coeff * ry.scale * rz.scale * val;
        }
    }
    Ok(total * (2.0 / PI).powi(d as i32))
}

/// Σ_y Σ_z w_y w_z A(y) B(z) e^{−2ib(y1 z2 − y2 z1)} in d = 2, summed one
/// axis at a time.
fn coupled_sum(ry: &VarRule, rz: &VarRule, b: f64, fy: impl Fn([f64; 2]) -> Complex64, fz: impl Fn([f64; 2]) -> Complex64) -> Complex64 {
    let (y0, wy0) = &ry.axes[0];
    let (y1, wy1) = &ry.axes[1];
    let (z0, wz0) = &rz.axes[0];
    let (z1, wz1) = &rz.axes[1];
    let bz: Vec<Complex64> = z0
        .iter()
        .zip(wz0)
        .flat_map(|(&a, &wa)| z1.iter().zip(wz1).map(move |(&c, &wc)| (a, c, wa * wc)))
        .map(|(a, c, w)| w * fz([a, c]))
        .collect();
    let n1 = z1.len();
    // C[z1-index][y0-index] = Σ_{z2} B(z1, z2) e^{−2ib y1 z2}.
    let c: Vec<Vec<Complex64>> = (0..z0.len())
        .map(|i| {
            y0.iter()
                .map(|&ya| (0..n1).map(|k| bz[i * n1 + k] * Complex64::from_polar(1.0, -2.0 * b * ya * z1[k])).sum())
                .collect()
        })
        .collect();
    let mut total = ZERO;
    for (ia, (&ya, &wa)) in y0.iter().zip(wy0).enumerate() {
        for (&yb, &wb) in y1.iter().zip(wy1) {
            // D(y) = Σ_{z1} C(z1, y1) e^{2ib y2 z1}.
            let dsum: Complex64 = z0.iter().enumerate().map(|(i, &za)| c[i][ia] * Complex64::from_polar(1.0, 2.0 * b * yb * za)).sum();
            total += wa * wb * fy([ya, yb]) * dsum;
        }
    }
    total
}

fn panel_rule(lo: f64, hi: f64, panels: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * n);
    let mut weights = Vec::with_capacity(panels * n);
    for p in 0..panels {
        let r = gauss_legendre_on(n, lo + p as f64 * h, lo + (p + 1) as f64 * h);
        nodes.extend(r.nodes);
        weights.extend(r.weights);
    }
    (nodes, weights)
}

/// Decay constants of M(Φ)·M(Ψ) with weight p + q, stability from the same
/// product at radii + 1.
pub fn compose_class_check(
    phi: &Symbol,
    psi: &Symbol,
    gauge: &VectorPotential,
    window: &Window,
    set: &IndexSet,
    opts: &BuildOptions,
    pairs: &[(u32, u32)],
) -> Result<DecayReport> {
    let product_at = |s: &IndexSet| -> Result<FrameMatrix> {
        let a = build_matrix(phi, gauge, window, s, opts)?;
        let b = build_matrix(psi, gauge, window, s, opts)?;
        matrix_product(&a, &b)
    };
    let m = product_at(set)?;
    let g = product_at(&set.grown(1, 1))?;
    decay_report(&m, &g, phi.order() + psi.order(), pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{atom, GridSpec};
    use crate::lattice_window::PhaseSpaceIndex;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn identity_is_neutral() {
        let set = IndexSet::new(1, 2, 2).unwrap();
        let w = Window::new(1, 0.05).unwrap();
        let a = VectorPotential::zero(1);
        let m = build_matrix(&Symbol::cos_xi(1, 0).unwrap(), &a, &w, &set, &BuildOptions::default_for(1)).unwrap();
        let p = matrix_product(&m, &FrameMatrix::identity(set.clone())).unwrap();
        assert_eq!(p.nnz(), m.nnz());
        for (r, cc, v) in m.entries() {
            assert_eq!(p.get(r, cc), v);
        }
        assert_eq!(schur_norm_bound(&FrameMatrix::identity(set.clone())), 1.0);
        assert!((operator_norm_truncated(&FrameMatrix::identity(set)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_matrix_has_zero_constants() {
        let set = IndexSet::new(1, 1, 1).unwrap();
        let rep = decay_constants(&FrameMatrix::new(set.clone(), 0.0, Provenance::Exact), 0.0, &even_pairs(4));
        assert!(rep.constants.iter().all(|c| c.constant == 0.0 && c.interior == 0.0));
        assert_eq!(operator_norm_truncated(&FrameMatrix::new(set, 0.0, Provenance::Exact)).unwrap(), 0.0);
    }

    #[test]
    fn product_on_core_matches_full_product() {
        let set = IndexSet::new(1, 3, 5).unwrap();
        let core = IndexSet::new(1, 1, 2).unwrap();
        let w = Window::new(1, 0.05).unwrap();
        let a = VectorPotential::zero(1);
        let o = BuildOptions::default_for(1);
        let m1 = build_matrix(&Symbol::cos_xi(1, 0).unwrap(), &a, &w, &set, &o).unwrap();
        let m2 = build_matrix(&Symbol::sin_x(1, 0).unwrap(), &a, &w, &set, &o).unwrap();
        let full = matrix_product(&m1, &m2).unwrap().restrict(&core).unwrap();
        let oc = BuildOptions { core: Some(core.clone()), ..o };
        let c1 = build_matrix(&Symbol::cos_xi(1, 0).unwrap(), &a, &w, &set, &oc).unwrap();
        let c2 = build_matrix(&Symbol::sin_x(1, 0).unwrap(), &a, &w, &set, &oc).unwrap();
        let part = matrix_product_on(&c1, &c2, &core).unwrap();
        let diff = full.add_scaled(&part, c(-1.0)).unwrap();
        assert!(diff.max_abs() < 1e-13, "{}", diff.max_abs());
    }

    #[test]
    fn decay_scan_matches_assembled_interior() {
        let set = IndexSet::new(1, 3, 4).unwrap();
        let w = Window::new(1, 0.05).unwrap();
        let a = VectorPotential::zero(1);
        let pairs = even_pairs(4);
        for phi in [Symbol::bracket(1, -2.0).unwrap(), Symbol::sin_x(1, 0).unwrap().mul(&Symbol::cos_xi(1, 0).unwrap()).unwrap()] {
            let o = BuildOptions::default_for(1);
            let m = build_matrix(&phi, &a, &w, &set, &o).unwrap();
            let rep = decay_constants(&m, phi.order(), &pairs);
            let scan = decay_scan(&phi, &a, &w, &set, o.quad, phi.order(), &pairs).unwrap();
            for (c, s) in rep.constants.iter().zip(&scan) {
                assert!((c.interior - s).abs() <= 1e-12 * s.max(1e-300), "{} vs {s}", c.interior);
            }
        }
    }

    #[test]
    fn observables_match_finite_differences_of_sampled_atoms() {
        // Symmetric gauge: (G_a, P_2 G_b) against a central difference of the
        // sampled atom, and (G_a, Q_1 G_b) against a grid sum.
        let w = Window::new(2, 0.05).unwrap();
        let gauge = VectorPotential::symmetric(0.7);
        let set = IndexSet::new(2, 1, 2).unwrap();
        let p = basic_observable_matrix(Observable::P, 1, &gauge, &w, &set, 96, None).unwrap();
        let q = basic_observable_matrix(Observable::Q, 0, &gauge, &w, &set, 96, None).unwrap();
        let grid = GridSpec::new(2, 3.0, 1.0 / 64.0).unwrap();
        let h = grid.l.min(1.0) * 1e-4;
        let pick = [(0usize, 7usize), (13, 40), (22, 5)];
        for &(ra, rb) in &pick {
            let (ia, ib): (PhaseSpaceIndex, PhaseSpaceIndex) = (set.get(ra), set.get(rb));
            let ga = atom(ia, &w, &gauge);
            let gb = atom(ib, &w, &gauge);
            let mut sp = ZERO;
            let mut sq = ZERO;
            for i in 0..grid.len() {
                let x = grid.point(i);
                let a = ga.eval(&x);
                if a == ZERO {
                    continue;
                }
                let up = gb.eval(&[x[0], x[1] + h]);
                let dn = gb.eval(&[x[0], x[1] - h]);
                let pv = -I * (up - dn) / (2.0 * h) - gauge.potential(&x)[1] * gb.eval(&x);
                sp += a.conj() * pv;
                sq += a.conj() * x[0] * gb.eval(&x);
            }
            let vol = grid.cell_volume();
            assert!((p.get(ra, rb) - sp * vol).norm() < 1e-6, "P {:?} vs {:?}", p.get(ra, rb), sp * vol);
            assert!((q.get(ra, rb) - sq * vol).norm() < 1e-9, "Q {:?} vs {:?}", q.get(ra, rb), sq * vol);
        }
        assert!(q.hermitian_defect() < 1e-8);
        assert!(p.hermitian_defect() < 1e-8, "{}", p.hermitian_defect());
        for (r, cc, _) in p.entries().chain(q.entries()) {
            assert!(crate::quantize::position_gap(&set, r, cc) <= 1);
        }
    }

    #[test]
    fn moyal_unit_and_gaussian_projector() {
        let g = Symbol::gaussian(1, 1.0, 1.0).unwrap();
        let one = Symbol::one(1);
        let q = MoyalQuadrature::default();
        for &(x, xi) in &[(0.0f64, 0.0f64), (0.4, -0.7), (-1.0, 0.9)] {
            let exact = (-(x * x) - xi * xi).exp();
            let v = moyal_numeric(&g, &one, 0.0, &[x], &[xi], &q).unwrap();
            assert!((v - exact).norm() < 1e-10 * exact.max(1e-3), "{v} vs {exact}");
            let u = moyal_numeric(&one, &g, 0.0, &[x], &[xi], &q).unwrap();
            assert!((u - exact).norm() < 1e-10, "{u}");
            // 2e^{−|X|²} is the Weyl symbol of a rank-one projection.
            let s = moyal_numeric(&g, &g, 0.0, &[x], &[xi], &q).unwrap();
            assert!((s - 0.5 * exact).norm() < 1e-10, "{s}");
        }
    }

    #[test]
    fn moyal_field_convention_reproduces_momentum_commutator() {
        // ξ1 e^{−ε(|x|²+|ξ|²)} and ξ2 e^{−ε(...)}: near X = 0 the commutator
        // of the products tends to [Π1, Π2] = i b.
        let eps = 0.01;
        let base = Symbol::gaussian(2, eps, eps).unwrap();
        let xi1 = base.dxi(0).scale(c(-1.0 / (2.0 * eps)));
        let xi2 = base.dxi(1).scale(c(-1.0 / (2.0 * eps)));
        let b = 0.8;
        let q = MoyalQuadrature { panels: 6, nodes_per_panel: 12, cut: 50.0 };
        let f = moyal_numeric(&xi1, &xi2, b, &[0.0, 0.0], &[0.0, 0.0], &q).unwrap();
        let g = moyal_numeric(&xi2, &xi1, b, &[0.0, 0.0], &[0.0, 0.0], &q).unwrap();
        let comm = f - g;
        assert!((comm - I * b).norm() < 0.05 * b, "{comm}");
    }

    #[test]
    fn moyal_refuses_brackets() {
        let p = Symbol::bracket(1, -2.0).unwrap();
        assert!(moyal_numeric(&p, &Symbol::one(1), 0.0, &[0.0], &[0.0], &MoyalQuadrature::default()).is_err());
    }

    #[test]
    fn commutator_symbols() {
        let s = Symbol::sin_xi(1, 0).unwrap();
        let q = commutator_symbol(&s, Observable::Q, 0, &MagneticField::zero(1)).unwrap();
        for &xi in &[0.0, 0.7, 2.0] {
            assert!((q.eval(&[0.3], &[xi]) - I * f64::cos(xi)).norm() < 1e-14);
        }
        let s2 = Symbol::sin_xi(2, 0).unwrap();
        let p = commutator_symbol(&s2, Observable::P, 1, &MagneticField::constant(1.5)).unwrap();
        let v = p.eval(&[0.1, 0.2], &[0.4, 0.0]);
        assert!((v - I * BEALS_FIELD_SIGN * (-1.5) * f64::cos(0.4)).norm() < 1e-14);
    }
}
