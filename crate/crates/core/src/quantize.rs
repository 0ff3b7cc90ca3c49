//! Magnetic Weyl quantization on grids and in the Gabor frame.
//!
//! Normalization: Op^A(Φ) has kernel Λ^A(x,y) Σ_t c_t u_t((x+y)/2) κ_t(x−y)
//! with κ_t = (2π)^{-d/2} · F_ξ[Φ_t], so Op^A(1) = Id. The frame entry
//! M_{α̃,β̃} = (G_α̃, Op^A(Φ) G_β̃) is computed in the variables
//! w = (x+y)/2, v = x−y:
//!
//! M = (2π)^{-d} e^{i(k_α·α − k_β·β)} Σ_t c_t ∫dv κ_t(v) e^{−i(k_α+k_β)·v/2}
//!       ∫dw e^{−i(k_α−k_β)·w} e^{−iP(w,v)} u_t(w) g(x−α) g(y−β),
//!
//! P(w,v) = I(α,x) + I(x,y) + I(y,β) the line integrals of A. The w-integral
//! is a short DFT over the momentum band; the v-integral depends on the
//! kernel type of the term (Dirac mass, smooth, or integrable singularity).

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::frame::{atom, norm_const, GridFunction};
use crate::lattice_window::{IndexSet, PhaseSpaceIndex, Window};
use crate::magnetic::VectorPotential;
use crate::quadrature::{gauss_legendre_on, midpoint};
use crate::symbols::{KernelKind, Symbol, Term, XiBase};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Relative change allowed when quadrature nodes are doubled.
pub const SELF_CHECK_REL: f64 = 1e-4;
/// Entries below this fraction of the largest entry are checked absolutely.
pub const SELF_CHECK_FLOOR: f64 = 1e-6;

/// Node counts for the matrix-element integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Midpoint nodes per axis for the w-integral.
    pub w_nodes: usize,
    /// Midpoint nodes per axis for smooth v-kernels.
    pub v_nodes: usize,
    /// Angular nodes for singular kernels in d = 2.
    pub angular_nodes: usize,
    /// Graded Gauss–Legendre nodes along each ray or half-line.
    pub radial_nodes: usize,
}

impl QuadratureSpec {
    pub fn default_for(d: usize) -> Self {
        if d == 1 {
            QuadratureSpec {
                w_nodes: 128,
                v_nodes: 128,
                angular_nodes: 1,
                radial_nodes: 48,
            }
        } else {
            QuadratureSpec {
                w_nodes: 96,
                v_nodes: 48,
                angular_nodes: 64,
                radial_nodes: 32,
            }
        }
    }

    pub fn doubled(&self) -> Self {
        QuadratureSpec {
            w_nodes: 2 * self.w_nodes,
            v_nodes: 2 * self.v_nodes,
            angular_nodes: 2 * self.angular_nodes,
            radial_nodes: 2 * self.radial_nodes,
        }
    }
}

/// How the entries of a matrix were obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Quadrature,
    TwoPathVerified,
    Product,
    Commutator,
    /// Exactly known entries (identity).
    Exact,
}

/// Sparse frame matrix over a truncated index set, rows sorted by column.
/// Exact zeros are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    set: IndexSet,
    order: f64,
    provenance: Provenance,
    rows: Vec<Vec<(usize, Complex64)>>,
}

/// JSON sidecar of an exported matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub d: usize,
    pub r_pos: usize,
    pub r_mom: usize,
    pub order: f64,
    pub provenance: Provenance,
    pub nnz: usize,
}

/// max_j |α_j − β_j| for flat row and column indices.
pub fn position_gap(set: &IndexSet, r: usize, c: usize) -> i64 {
    let n = set.n_mom();
    let a = set.position(r / n);
    let b = set.position(c / n);
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| (x - y).abs())
        .max()
        .unwrap_or(0)
}

impl FrameMatrix {
    pub fn new(set: IndexSet, order: f64, provenance: Provenance) -> Self {
        let n = set.len();
        FrameMatrix {
            set,
            order,
            provenance,
            rows: vec![Vec::new(); n],
        }
    }

    /// Builds from rows; entries are sorted and exact zeros dropped.
    pub fn from_rows(set: IndexSet, order: f64, provenance: Provenance, mut rows: Vec<Vec<(usize, Complex64)>>) -> Result<Self> {
        if rows.len() != set.len() {
            return Err(Error::Mismatch(format!("{} rows for {} indices", rows.len(), set.len())));
        }
        let n = set.len();
        for (r, row) in rows.iter_mut().enumerate() {
            row.retain(|(_, v)| *v != ZERO);
            row.sort_by_key(|(c, _)| *c);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::Mismatch(format!("duplicate entry ({r}, {})", w[0].0)));
                }
            }
            for &(c, _) in row.iter() {
                if c >= n {
                    return Err(Error::Mismatch(format!("column {c} outside the index set")));
                }
            }
        }
        Ok(FrameMatrix {
            set,
            order,
            provenance,
            rows,
        })
    }

    pub fn identity(set: IndexSet) -> Self {
        let rows = (0..set.len()).map(|i| vec![(i, Complex64::new(1.0, 0.0))]).collect();
        FrameMatrix {
            set,
            order: 0.0,
            provenance: Provenance::Exact,
            rows,
        }
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    pub fn set(&self) -> &IndexSet {
        &self.set
    }

    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }

    pub fn with_order(mut self, p: f64) -> Self {
        self.order = p;
        self
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nnz() == 0
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, r: usize) -> &[(usize, Complex64)] {
        &self.rows[r]
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let row = &self.rows[r];
        match row.binary_search_by_key(&c, |(cc, _)| *cc) {
            Ok(i) => row[i].1,
            Err(_) => ZERO,
        }
    }

    /// Entry addressed by phase-space labels; zero when not stored.
    pub fn entry(&self, a: &PhaseSpaceIndex, b: &PhaseSpaceIndex) -> Option<Complex64> {
        Some(self.get(self.set.locate(a)?, self.set.locate(b)?))
    }

    /// All stored entries in row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        self.rows
            .iter()
            .enumerate()
            .flat_map(|(r, row)| row.iter().map(move |&(c, v)| (r, c, v)))
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().map(|(_, _, v)| v.norm()).fold(0.0, f64::max)
    }

    pub fn scale(&self, s: Complex64) -> FrameMatrix {
        let mut m = self.clone();
        for row in &mut m.rows {
            for e in row.iter_mut() {
                e.1 *= s;
            }
            row.retain(|(_, v)| *v != ZERO);
        }
        m
    }

    /// self + s·other over the same index set.
    pub fn add_scaled(&self, other: &FrameMatrix, s: Complex64) -> Result<FrameMatrix> {
        if self.set != other.set {
            return Err(Error::Mismatch("matrices over different index sets".into()));
        }
        let rows = self
            .rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| {
                let mut m: BTreeMap<usize, Complex64> = a.iter().copied().collect();
                for &(c, v) in b {
                    *m.entry(c).or_insert(ZERO) += s * v;
                }
                m.into_iter().filter(|(_, v)| *v != ZERO).collect()
            })
            .collect();
        Ok(FrameMatrix {
            set: self.set.clone(),
            order: self.order.max(other.order),
            provenance: self.provenance,
            rows,
        })
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> FrameMatrix {
        let mut rows = vec![Vec::new(); self.len()];
        for (r, c, v) in self.entries() {
            rows[c].push((r, v.conj()));
        }
        FrameMatrix {
            set: self.set.clone(),
            order: self.order,
            provenance: self.provenance,
            rows,
        }
    }

    /// max |M − Mᴴ| over stored entries.
    pub fn hermitian_defect(&self) -> f64 {
        self.entries()
            .map(|(r, c, v)| (v - self.get(c, r).conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Entries whose row and column both lie in `sub`, re-indexed to `sub`.
    pub fn restrict(&self, sub: &IndexSet) -> Result<FrameMatrix> {
        if sub.dim() != self.dim() || sub.r_pos() > self.set.r_pos() || sub.r_mom() > self.set.r_mom() {
            return Err(Error::Mismatch("restriction target is not a subset".into()));
        }
        let map: Vec<Option<usize>> = (0..self.len()).map(|i| sub.locate(&self.set.get(i))).collect();
        let mut rows = vec![Vec::new(); sub.len()];
        for (r, c, v) in self.entries() {
            if let (Some(rr), Some(cc)) = (map[r], map[c]) {
                rows[rr].push((cc, v));
            }
        }
        for row in &mut rows {
            row.sort_by_key(|(c, _)| *c);
        }
        Ok(FrameMatrix {
            set: sub.clone(),
            order: self.order,
            provenance: self.provenance,
            rows,
        })
    }

    /// Dense copy; refused above `guard` indices.
    pub fn to_dense(&self, guard: usize) -> Result<DMatrix<Complex64>> {
        let n = self.len();
        if n > guard {
            return Err(Error::SizeGuard(format!("{n} indices exceed the dense limit {guard}")));
        }
        let mut m = DMatrix::from_element(n, n, ZERO);
        for (r, c, v) in self.entries() {
            m[(r, c)] = v;
        }
        Ok(m)
    }

    pub fn header(&self) -> MatrixHeader {
        MatrixHeader {
            d: self.dim(),
            r_pos: self.set.r_pos(),
            r_mom: self.set.r_mom(),
            order: self.order,
            provenance: self.provenance,
            nnz: self.nnz(),
        }
    }

    /// CSV rows: α coords, α* coords, β coords, β* coords, re, im.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut head = Vec::new();
        for p in ["alpha", "alpha_star", "beta", "beta_star"] {
            for j in 1..=d {
                head.push(format!("{p}{j}"));
            }
        }
        head.push("re".into());
        head.push("im".into());
        wr.write_record(&head).map_err(csv_err)?;
        for (r, c, v) in self.entries() {
            let a = self.set.get(r);
            let b = self.set.get(c);
            let mut rec: Vec<String> = Vec::with_capacity(4 * d + 2);
            for part in [a.pos.coords(), a.mom.coords(), b.pos.coords(), b.mom.coords()] {
                rec.extend(part.iter().map(|x| x.to_string()));
            }
            rec.push(format!("{:?}", v.re));
            rec.push(format!("{:?}", v.im));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(header: &MatrixHeader, r: R) -> Result<FrameMatrix> {
        let d = header.d;
        let set = IndexSet::new(d, header.r_pos, header.r_mom)?;
        let mut rows = vec![Vec::new(); set.len()];
        let mut rd = csv::Reader::from_reader(r);
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            if rec.len() != 4 * d + 2 {
                return Err(Error::Parse(format!("expected {} fields, found {}", 4 * d + 2, rec.len())));
            }
            let int = |i: usize| -> Result<i64> {
                rec[i].parse::<i64>().map_err(|e| Error::Parse(format!("field {i}: {e}")))
            };
            let idx = |off: usize| -> Result<PhaseSpaceIndex> {
                let p: Vec<i64> = (0..d).map(|j| int(off + j)).collect::<Result<_>>()?;
                let m: Vec<i64> = (0..d).map(|j| int(off + d + j)).collect::<Result<_>>()?;
                Ok(PhaseSpaceIndex {
                    pos: crate::lattice_window::LatticeIndex::new(&p)?,
                    mom: crate::lattice_window::DualIndex::new(&m)?,
                })
            };
            let a = idx(0)?;
            let b = idx(2 * d)?;
            let fl = |i: usize| -> Result<f64> { rec[i].parse::<f64>().map_err(|e| Error::Parse(format!("field {i}: {e}"))) };
            let v = Complex64::new(fl(4 * d)?, fl(4 * d + 1)?);
            let r = set.locate(&a).ok_or_else(|| Error::Parse("row index outside the header radii".into()))?;
            let c = set.locate(&b).ok_or_else(|| Error::Parse("column index outside the header radii".into()))?;
            rows[r].push((c, v));
        }
        let m = FrameMatrix::from_rows(set, header.order, header.provenance, rows)?;
        if m.nnz() != header.nnz {
            return Err(Error::Parse(format!("header announces {} entries, file has {}", header.nnz, m.nnz())));
        }
        Ok(m)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let f = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(f))?;
        let h = serde_json::to_string_pretty(&self.header()).map_err(|e| Error::Parse(e.to_string()))?;
        std::fs::write(dir.join(format!("{stem}.json")), h)?;
        Ok(())
    }

    pub fn import(dir: &Path, stem: &str) -> Result<FrameMatrix> {
        let h = std::fs::read_to_string(dir.join(format!("{stem}.json")))?;
        let header: MatrixHeader = serde_json::from_str(&h).map_err(|e| Error::Parse(e.to_string()))?;
        let f = std::fs::File::open(dir.join(format!("{stem}.csv")))?;
        FrameMatrix::read_csv(&header, std::io::BufReader::new(f))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// One axis factor e^{iκw} (w−c)^m e^{−a(w−c)²} of a separable x-part.
#[derive(Debug, Clone, Copy)]
struct AxisFactor {
    freq: f64,
    deg: u32,
    a: f64,
    center: f64,
}

impl AxisFactor {
    fn trivial(&self) -> bool {
        self.freq == 0.0 && self.deg == 0 && self.a == 0.0
    }

    fn eval(&self, w: f64) -> Complex64 {
        if self.trivial() {
            return Complex64::new(1.0, 0.0);
        }
        let y = w - self.center;
        Complex64::from_polar(y.powi(self.deg as i32) * (-self.a * y * y).exp(), self.freq * w)
    }
}

#[derive(Debug, Clone)]
struct Piece {
    coef: Complex64,
    axes: [AxisFactor; 2],
}

/// Splits an x-part into separable exponential-polynomial pieces.
fn separable_pieces(t: &Term) -> Vec<Piece> {
    let m = t.x.waves.len();
    let mut waves: Vec<(Complex64, [f64; 2])> = Vec::with_capacity(1 << m);
    for mask in 0..(1usize << m) {
        let mut c = Complex64::new(0.5f64.powi(m as i32), 0.0);
        let mut k = [0.0; 2];
        for (i, w) in t.x.waves.iter().enumerate() {
            let s = if mask >> i & 1 == 1 { -1.0 } else { 1.0 };
            c *= Complex64::from_polar(1.0, s * w.phase);
            k[0] += s * w.k[0];
            k[1] += s * w.k[1];
        }
        waves.push((c, k));
    }
    let pg = &t.x.pg;
    let mut out = Vec::new();
    for &(cw, k) in &waves {
        for &(mono, cm) in &pg.mono {
            let ax = |j: usize| AxisFactor {
                freq: k[j],
                deg: mono[j],
                a: pg.a,
                center: pg.center[j],
            };
            out.push(Piece {
                coef: cw * cm,
                axes: [ax(0), ax(1)],
            });
        }
    }
    out
}

#[derive(Debug, Clone)]
struct PreparedTerm {
    term: Term,
    kind: KernelKind,
    pieces: Vec<Piece>,
}

/// v-node with its weight (quadrature weight times kernel value).
type VNode = ([f64; 2], Complex64);

/// Contiguous integer range lo..lo+n per axis.
#[derive(Debug, Clone, Copy)]
struct IRange {
    lo: i64,
    n: usize,
}

impl IRange {
    fn of(vals: impl Iterator<Item = i64>) -> IRange {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for v in vals {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return IRange { lo: 0, n: 1 };
        }
        IRange {
            lo,
            n: (hi - lo + 1) as usize,
        }
    }
}

/// Evaluates frame matrix elements of Op^A(Φ).
pub struct Quantizer<'a> {
    d: usize,
    gauge: &'a VectorPotential,
    window: &'a Window,
    quad: QuadratureSpec,
    terms: Vec<PreparedTerm>,
    linear: Option<[[f64; 2]; 2]>,
    x_independent: bool,
}

impl<'a> Quantizer<'a> {
    pub fn new(phi: &Symbol, gauge: &'a VectorPotential, window: &'a Window, quad: QuadratureSpec) -> Result<Self> {
        let d = phi.dim();
        if gauge.dim() != d || window.dim() != d {
            return Err(Error::Mismatch(format!(
                "symbol d = {d}, gauge d = {}, window d = {}",
                gauge.dim(),
                window.dim()
            )));
        }
        let mut terms = Vec::new();
        for t in phi.terms() {
            if t.coeff == ZERO {
                continue;
            }
            if let XiBase::Bracket { p } = t.xi.base {
                if p >= 0.0 {
                    return Err(Error::KernelPath {
                        symbol: phi.name().to_string(),
                        reason: format!("⟨ξ⟩^{p} has no integrable ξ-transform"),
                    });
                }
            }
            terms.push(PreparedTerm {
                term: t.clone(),
                kind: t.kernel_kind(),
                pieces: separable_pieces(t),
            });
        }
        Ok(Quantizer {
            d,
            gauge,
            window,
            quad,
            terms,
            linear: gauge.linear_matrix(),
            x_independent: phi.is_x_independent(),
        })
    }

    pub fn quadrature(&self) -> QuadratureSpec {
        self.quad
    }

    fn kappa(&self, t: &Term, v: &[f64; 2]) -> Complex64 {
        norm_const(self.d) * t.xi_transform(v, self.d)
    }

    /// v-rule for one term and the v-box α−β + (−2r, 2r)^d.
    fn v_rule(&self, pt: &PreparedTerm, center: [f64; 2]) -> Vec<VNode> {
        let d = self.d;
        let r2 = 2.0 * self.window.support_radius();
        let lo = [center[0] - r2, center[1] - r2];
        let hi = [center[0] + r2, center[1] + r2];
        match pt.kind {
            KernelKind::Point { shift } => {
                let v = [-shift[0], -shift[1]];
                if (0..d).all(|j| v[j] > lo[j] && v[j] < hi[j]) {
                    vec![(v, Complex64::new(1.0, 0.0))]
                } else {
                    Vec::new()
                }
            }
            KernelKind::Smooth => {
                let rules: Vec<_> = (0..d).map(|j| midpoint(self.quad.v_nodes, lo[j], hi[j])).collect();
                let mut out = Vec::new();
                if d == 1 {
                    for (&v, &w) in rules[0].nodes.iter().zip(&rules[0].weights) {
                        let vv = [v, 0.0];
                        out.push((vv, w * self.kappa(&pt.term, &vv)));
                    }
                } else {
                    for (&v0, &w0) in rules[0].nodes.iter().zip(&rules[0].weights) {
                        for (&v1, &w1) in rules[1].nodes.iter().zip(&rules[1].weights) {
                            let vv = [v0, v1];
                            out.push((vv, w0 * w1 * self.kappa(&pt.term, &vv)));
                        }
                    }
                }
                out
            }
            KernelKind::Radial { center: c } => radial_rule(d, c, lo, hi, &self.quad)
                .into_iter()
                .map(|(v, w)| (v, w * self.kappa(&pt.term, &v)))
                .collect(),
        }
    }

    /// Entries for one position pair and a list of momentum pairs.
    fn pair_values(&self, alpha: [f64; 2], beta: [f64; 2], moms: &[([i64; 2], [i64; 2])]) -> Vec<Complex64> {
        let d = self.d;
        let mut acc = vec![ZERO; moms.len()];
        if moms.is_empty() {
            return acc;
        }
        let dr: Vec<IRange> = (0..2)
            .map(|j| if j < d { IRange::of(moms.iter().map(|(a, b)| a[j] - b[j])) } else { IRange { lo: 0, n: 1 } })
            .collect();
        let sr: Vec<IRange> = (0..2)
            .map(|j| if j < d { IRange::of(moms.iter().map(|(a, b)| a[j] + b[j])) } else { IRange { lo: 0, n: 1 } })
            .collect();
        let idx: Vec<(usize, usize, usize)> = moms
            .iter()
            .map(|(a, b)| {
                let di = |j: usize| (a[j] - b[j] - dr[j].lo) as usize;
                let si = |j: usize| (a[j] + b[j] - sr[j].lo) as usize;
                if d == 1 {
                    (di(0), si(0), 0)
                } else {
                    (di(0) * dr[1].n + di(1), si(0), si(1))
                }
            })
            .collect();
        let center = [alpha[0] - beta[0], alpha[1] - beta[1]];
        for pt in &self.terms {
            for (v, wv) in self.v_rule(pt, center) {
                let Some((t, scal)) = self.w_transform(pt, alpha, beta, v, &dr) else {
                    continue;
                };
                let s = wv * scal;
                let e: Vec<Vec<Complex64>> = (0..2)
                    .map(|j| {
                        (0..sr[j].n)
                            .map(|i| Complex64::from_polar(1.0, -0.5 * (sr[j].lo + i as i64) as f64 * v[j]))
                            .collect()
                    })
                    .collect();
                let c = s * pt.term.coeff;
                for (a, &(ti, s0, s1)) in acc.iter_mut().zip(&idx) {
                    *a += c * e[0][s0] * e[1][s1] * t[ti];
                }
            }
        }
        let pref = norm_const(d) * norm_const(d);
        acc.iter()
            .zip(moms)
            .map(|(&a, (ka, kb))| {
                let ph: f64 = (0..d).map(|j| ka[j] as f64 * alpha[j] - kb[j] as f64 * beta[j]).sum();
                a * Complex64::from_polar(pref, ph)
            })
            .collect()
    }

    /// Σ_w e^{−iΔ·w} e^{−iP} u g g over the Δ-ranges, plus a scalar phase.
    fn w_transform(&self, pt: &PreparedTerm, alpha: [f64; 2], beta: [f64; 2], v: [f64; 2], dr: &[IRange]) -> Option<(Vec<Complex64>, Complex64)> {
        let d = self.d;
        let r = self.window.support_radius();
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        for j in 0..d {
            lo[j] = (alpha[j] - 0.5 * v[j]).max(beta[j] + 0.5 * v[j]) - r;
            hi[j] = (alpha[j] - 0.5 * v[j]).min(beta[j] + 0.5 * v[j]) + r;
            if hi[j] <= lo[j] {
                return None;
            }
        }
        let n = self.quad.w_nodes;
        let rules: Vec<_> = (0..d).map(|j| midpoint(n, lo[j], hi[j])).collect();
        // e^{−iΔ w} per axis, Δ-major.
        let tw: Vec<Vec<Complex64>> = (0..d)
            .map(|j| {
                let mut out = Vec::with_capacity(dr[j].n * n);
                for k in 0..dr[j].n {
                    let f = (dr[j].lo + k as i64) as f64;
                    out.extend(rules[j].nodes.iter().map(|&w| Complex64::from_polar(1.0, -f * w)));
                }
                out
            })
            .collect();
        let gg: Vec<Vec<f64>> = (0..d)
            .map(|j| {
                rules[j]
                    .nodes
                    .iter()
                    .zip(&rules[j].weights)
                    .map(|(&w, &q)| q * self.window.g1(w + 0.5 * v[j] - alpha[j]) * self.window.g1(w - 0.5 * v[j] - beta[j]))
                    .collect()
            })
            .collect();
        let xv = |w: &[f64; 2]| [w[0] + 0.5 * v[0], w[1] + 0.5 * v[1]];
        let yv = |w: &[f64; 2]| [w[0] - 0.5 * v[0], w[1] - 0.5 * v[1]];
        let phase_sum = |w: &[f64; 2]| {
            let x = xv(w);
            let y = yv(w);
            self.gauge.line_integral(&alpha, &x) + self.gauge.line_integral(&x, &y) + self.gauge.line_integral(&y, &beta)
        };
        let nt = dr[0].n * dr[1].n;
        let mut t = vec![ZERO; nt];
        if self.linear.is_some() {
            // P is affine in w for a linear gauge.
            let w0 = [0.5 * (alpha[0] + beta[0]), 0.5 * (alpha[1] + beta[1])];
            let p0 = phase_sum(&w0);
            let mut ell = [0.0; 2];
            for (j, e) in ell.iter_mut().enumerate().take(d) {
                let mut w1 = w0;
                w1[j] += 1.0;
                *e = phase_sum(&w1) - p0;
            }
            let base: Vec<Vec<Complex64>> = (0..d)
                .map(|j| {
                    rules[j]
                        .nodes
                        .iter()
                        .zip(&gg[j])
                        .map(|(&w, &g)| Complex64::from_polar(g, -ell[j] * (w - w0[j])))
                        .collect()
                })
                .collect();
            for piece in &pt.pieces {
                let mut f: Vec<Vec<Complex64>> = Vec::with_capacity(2);
                for j in 0..2 {
                    if j >= d {
                        f.push(vec![Complex64::new(1.0, 0.0)]);
                        continue;
                    }
                    let ax = piece.axes[j];
                    let h: Vec<Complex64> = if ax.trivial() {
                        base[j].clone()
                    } else {
                        rules[j].nodes.iter().zip(&base[j]).map(|(&w, &b)| b * ax.eval(w)).collect()
                    };
                    f.push(
                        (0..dr[j].n)
                            .map(|k| tw[j][k * n..(k + 1) * n].iter().zip(&h).map(|(a, b)| a * b).sum())
                            .collect(),
                    );
                }
                for k0 in 0..dr[0].n {
                    for k1 in 0..dr[1].n {
                        t[k0 * dr[1].n + k1] += piece.coef * f[0][k0] * f[1][k1];
                    }
                }
            }
            Some((t, Complex64::from_polar(1.0, -p0)))
        } else {
            // General gauge (d = 2): full tensor grid, then a separable DFT.
            let n0 = rules[0].nodes.len();
            let n1 = rules[1].nodes.len();
            let mut h = vec![ZERO; n0 * n1];
            for i0 in 0..n0 {
                for i1 in 0..n1 {
                    let amp = gg[0][i0] * gg[1][i1];
                    if amp == 0.0 {
                        continue;
                    }
                    let w = [rules[0].nodes[i0], rules[1].nodes[i1]];
                    h[i0 * n1 + i1] = amp * Complex64::from_polar(1.0, -phase_sum(&w)) * pt.term.x.eval(&w, d);
                }
            }
            let mut rowt = vec![ZERO; n0 * dr[1].n];
            for i0 in 0..n0 {
                for k1 in 0..dr[1].n {
                    rowt[i0 * dr[1].n + k1] = (0..n1).map(|i1| tw[1][k1 * n1 + i1] * h[i0 * n1 + i1]).sum();
                }
            }
            for k0 in 0..dr[0].n {
                for k1 in 0..dr[1].n {
                    t[k0 * dr[1].n + k1] = (0..n0).map(|i0| tw[0][k0 * n0 + i0] * rowt[i0 * dr[1].n + k1]).sum();
                }
            }
            Some((t, Complex64::new(1.0, 0.0)))
        }
    }

    /// Entries for the position pair (α, β) and the listed momentum pairs
    /// (integer frequencies, padded to two axes).
    pub fn block(&self, alpha: &[i64], beta: &[i64], moms: &[([i64; 2], [i64; 2])]) -> Vec<Complex64> {
        let a = arr(alpha);
        let b = arr(beta);
        self.pair_values([a[0] as f64, a[1] as f64], [b[0] as f64, b[1] as f64], moms)
    }

    /// M_{α̃,β̃} without the self-check.
    pub fn element(&self, a: &PhaseSpaceIndex, b: &PhaseSpaceIndex) -> Complex64 {
        let gap = a
            .pos
            .coords()
            .iter()
            .zip(b.pos.coords())
            .map(|(x, y)| (x - y).abs())
            .max()
            .unwrap_or(0);
        if gap > self.max_gap() {
            return ZERO;
        }
        let ka = arr(a.mom.coords());
        let kb = arr(b.mom.coords());
        self.pair_values(a.pos.point(), b.pos.point(), &[(ka, kb)])[0]
    }

    /// Largest position gap with a non-negligible entry. Dirac terms with shift
    /// s reach gap ⌊2r + |s|_∞⌋; smooth and singular kernels are cut where
    /// they fall below 1e−16 of their peak.
    pub fn max_gap(&self) -> i64 {
        let r2 = 2.0 * self.window.support_radius();
        self.terms
            .iter()
            .map(|pt| {
                let s = pt.term.xi.shift[0].abs().max(pt.term.xi.shift[1].abs());
                let reach = match pt.kind {
                    KernelKind::Point { .. } => 0.0,
                    _ => kernel_reach(&pt.term),
                };
                (r2 + s + reach).floor() as i64
            })
            .max()
            .unwrap_or(0)
    }

    /// Whether the matrix is magnetically translation covariant: a linear
    /// gauge and an x-independent symbol. Then
    /// M_{α+γ,β+γ} = e^{−i(Jγ)·(β−α)} M_{α,β}.
    pub fn is_covariant(&self) -> bool {
        self.linear.is_some() && self.x_independent
    }

    /// Assembles all entries with |α−β|_∞ ≤ min(max_gap, pos_band) and
    /// |α*−β*|_∞ ≤ band. With a `core` subset only entries whose row or column
    /// lies in the core are computed; products restricted to the core need
    /// nothing else.
    pub fn build(&self, set: &IndexSet, band: Option<usize>, pos_band: Option<usize>, order: f64, core: Option<&IndexSet>) -> FrameMatrix {
        let d = self.d;
        let gap = pos_band.map_or(self.max_gap(), |b| (b as i64).min(self.max_gap()));
        let n_mom = set.n_mom();
        let band = band.unwrap_or(2 * set.r_mom()) as i64;
        let momenta = set.momenta();
        let positions = set.positions();
        let in_core_mom: Vec<bool> = momenta.iter().map(|k| core.is_none_or(|c| inside(k.coords(), c.r_mom()))).collect();
        let in_core_pos: Vec<bool> = positions.iter().map(|a| core.is_none_or(|c| inside(a.coords(), c.r_pos()))).collect();
        // Momentum pairs tagged with whether the row and the column momentum are in the core.
        let mut mom_pairs: Vec<(usize, usize, bool, bool)> = Vec::new();
        for (ia, ma) in momenta.iter().enumerate() {
            for (ib, mb) in momenta.iter().enumerate() {
                let ka = arr(ma.coords());
                let kb = arr(mb.coords());
                let (ra, cb) = (in_core_mom[ia], in_core_mom[ib]);
                if (ra || cb) && (0..d).all(|j| (ka[j] - kb[j]).abs() <= band) {
                    mom_pairs.push((ia, ib, ra, cb));
                }
            }
        }
        let moms: Vec<([i64; 2], [i64; 2])> = mom_pairs
            .iter()
            .map(|p| (arr(momenta[p.0].coords()), arr(momenta[p.1].coords())))
            .collect();
        let mut pos_pairs: Vec<(usize, usize)> = Vec::new();
        for (i, a) in positions.iter().enumerate() {
            for (k, b) in positions.iter().enumerate() {
                if (in_core_pos[i] || in_core_pos[k]) && a.coords().iter().zip(b.coords()).all(|(x, y)| (x - y).abs() <= gap) {
                    pos_pairs.push((i, k));
                }
            }
        }
        let blocks: Vec<Vec<Complex64>> = if self.is_covariant() {
            let reach = gap.min(2 * set.r_pos() as i64);
            let offsets: Vec<[i64; 2]> = if d == 1 {
                (-reach..=reach).map(|a| [a, 0]).collect()
            } else {
                (-reach..=reach).flat_map(|a| (-reach..=reach).map(move |b| [a, b])).collect()
            };
            let canon: Vec<Vec<Complex64>> = offsets
                .par_iter()
                .map(|o| self.pair_values([0.0; 2], [o[0] as f64, o[1] as f64], &moms))
                .collect();
            let j = self.linear.unwrap_or([[0.0; 2]; 2]);
            pos_pairs
                .iter()
                .map(|&(i, k)| {
                    let a = positions[i].point();
                    let b = positions[k].point();
                    let o = [(b[0] - a[0]) as i64, (b[1] - a[1]) as i64];
                    let oi = offsets.iter().position(|x| *x == o).expect("offset within reach");
                    let ja = [j[0][0] * a[0] + j[0][1] * a[1], j[1][0] * a[0] + j[1][1] * a[1]];
                    let ph = Complex64::from_polar(1.0, -(ja[0] * (b[0] - a[0]) + ja[1] * (b[1] - a[1])));
                    canon[oi].iter().map(|v| v * ph).collect()
                })
                .collect()
        } else {
            pos_pairs
                .par_iter()
                .map(|&(i, k)| {
                    if in_core_pos[i] && in_core_pos[k] {
                        return self.pair_values(positions[i].point(), positions[k].point(), &moms);
                    }
                    // Only one side is in the core: skip the momentum pairs that cannot be kept.
                    let keep: Vec<bool> = mom_pairs.iter().map(|p| (in_core_pos[i] && p.2) || (in_core_pos[k] && p.3)).collect();
                    let sub: Vec<_> = moms.iter().zip(&keep).filter(|(_, &k)| k).map(|(m, _)| *m).collect();
                    let vals = self.pair_values(positions[i].point(), positions[k].point(), &sub);
                    let mut it = vals.into_iter();
                    keep.iter().map(|&k| if k { it.next().unwrap_or(ZERO) } else { ZERO }).collect()
                })
                .collect()
        };
        let mut rows = vec![Vec::new(); set.len()];
        for (&(i, k), vals) in pos_pairs.iter().zip(&blocks) {
            for (&(ia, ib, ra, cb), &v) in mom_pairs.iter().zip(vals) {
                if v != ZERO && ((in_core_pos[i] && ra) || (in_core_pos[k] && cb)) {
                    rows[i * n_mom + ia].push((k * n_mom + ib, v));
                }
            }
        }
        for row in &mut rows {
            row.sort_by_key(|(c, _)| *c);
        }
        FrameMatrix {
            set: set.clone(),
            order,
            provenance: Provenance::Quadrature,
            rows,
        }
    }
}

fn inside(c: &[i64], r: usize) -> bool {
    c.iter().all(|x| x.unsigned_abs() as usize <= r)
}

fn arr(c: &[i64]) -> [i64; 2] {
    [c[0], if c.len() > 1 { c[1] } else { 0 }]
}

/// Nodes and weights for ∫ f(v) dv over the box [lo, hi] when f has an
/// integrable point singularity at `c`. Graded Gauss–Legendre toward c, polar
/// coordinates around c in d = 2.
fn radial_rule(d: usize, c: [f64; 2], lo: [f64; 2], hi: [f64; 2], q: &QuadratureSpec) -> Vec<([f64; 2], f64)> {
    let nr = q.radial_nodes;
    let s = gauss_legendre_on(nr, 0.0, 1.0);
    let mut out = Vec::new();
    if d == 1 {
        let mut side = |a: f64, b: f64| {
            // Graded toward a: v = a + (b−a)σ².
            for (&x, &w) in s.nodes.iter().zip(&s.weights) {
                out.push(([a + (b - a) * x * x, 0.0], w * 2.0 * (b - a).abs() * x));
            }
        };
        if c[0] > lo[0] && c[0] < hi[0] {
            side(c[0], hi[0]);
            side(c[0], lo[0]);
        } else if c[0] <= lo[0] {
            side(lo[0], hi[0]);
        } else {
            side(hi[0], lo[0]);
        }
        return out;
    }
    let inside = (0..2).all(|j| c[j] > lo[j] && c[j] < hi[j]);
    let (t0, t1) = if inside {
        (0.0, 2.0 * PI)
    } else {
        let mid = [0.5 * (lo[0] + hi[0]) - c[0], 0.5 * (lo[1] + hi[1]) - c[1]];
        let reference = mid[1].atan2(mid[0]);
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for x in [lo[0], hi[0]] {
            for y in [lo[1], hi[1]] {
                let mut a = (y - c[1]).atan2(x - c[0]) - reference;
                while a > PI {
                    a -= 2.0 * PI;
                }
                while a < -PI {
                    a += 2.0 * PI;
                }
                mn = mn.min(a);
                mx = mx.max(a);
            }
        }
        (reference + mn, reference + mx)
    };
    let th = midpoint(q.angular_nodes, t0, t1);
    for (&t, &wt) in th.nodes.iter().zip(&th.weights) {
        let u = [t.cos(), t.sin()];
        let mut rin: f64 = 0.0;
        let mut rout = f64::INFINITY;
        for j in 0..2 {
            if u[j].abs() < 1e-300 {
                if c[j] <= lo[j] || c[j] >= hi[j] {
                    rout = -1.0;
                }
                continue;
            }
            let a = (lo[j] - c[j]) / u[j];
            let b = (hi[j] - c[j]) / u[j];
            rin = rin.max(a.min(b));
            rout = rout.min(a.max(b));
        }
        if rout <= rin {
            continue;
        }
        if inside {
            for (&x, &w) in s.nodes.iter().zip(&s.weights) {
                let rho = rout * x * x;
                out.push(([c[0] + rho * u[0], c[1] + rho * u[1]], wt * w * 2.0 * rout * x * rho));
            }
        } else {
            let g = gauss_legendre_on(nr, rin, rout);
            for (&rho, &w) in g.nodes.iter().zip(&g.weights) {
                out.push(([c[0] + rho * u[0], c[1] + rho * u[1]], wt * w * rho));
            }
        }
    }
    out
}

/// Options for matrix assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    /// Largest stored |α*−β*|_∞; `None` keeps the full range 2·R_mom.
    pub band: Option<usize>,
    /// Largest stored |α−β|_∞; `None` keeps every pair the kernel reaches.
    pub pos_band: Option<usize>,
    pub quad: QuadratureSpec,
    /// Recompute with doubled nodes and compare.
    pub self_check: bool,
    /// Compute only rows and columns whose index lies in this subset.
    pub core: Option<IndexSet>,
}

impl BuildOptions {
    pub fn default_for(d: usize) -> Self {
        BuildOptions {
            band: None,
            pos_band: None,
            quad: QuadratureSpec::default_for(d),
            self_check: false,
            core: None,
        }
    }
}

/// Outcome of the doubled-node comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfCheck {
    pub checked: usize,
    pub failures: usize,
    /// Largest |M_N − M_2N| / max(|M_2N|, floor).
    pub max_rel_change: f64,
}

/// Matrix of Op^A(Φ) over `set`.
pub fn build_matrix(phi: &Symbol, gauge: &VectorPotential, window: &Window, set: &IndexSet, opts: &BuildOptions) -> Result<FrameMatrix> {
    Ok(build_matrix_checked(phi, gauge, window, set, opts)?.0)
}

/// As [`build_matrix`], also returning the self-check when requested.
pub fn build_matrix_checked(
    phi: &Symbol,
    gauge: &VectorPotential,
    window: &Window,
    set: &IndexSet,
    opts: &BuildOptions,
) -> Result<(FrameMatrix, Option<SelfCheck>)> {
    if set.dim() != phi.dim() {
        return Err(Error::Mismatch("index set and symbol dimensions differ".into()));
    }
    let q = Quantizer::new(phi, gauge, window, opts.quad)?;
    let m = q.build(set, opts.band, opts.pos_band, phi.order(), opts.core.as_ref());
    if !opts.self_check {
        return Ok((m, None));
    }
    let q2 = Quantizer::new(phi, gauge, window, opts.quad.doubled())?;
    let m2 = q2.build(set, opts.band, opts.pos_band, phi.order(), opts.core.as_ref());
    let check = compare_entries(&m, &m2);
    if check.failures > 0 {
        log::warn!(
            "{} of {} entries of Op({}) moved by more than rel {SELF_CHECK_REL:e} under node doubling (max {:.3e})",
            check.failures,
            check.checked,
            phi.name(),
            check.max_rel_change
        );
    }
    Ok((m2, Some(check)))
}

/// Doubled-node comparison of two assemblies of the same matrix.
pub fn compare_entries(coarse: &FrameMatrix, fine: &FrameMatrix) -> SelfCheck {
    let floor = SELF_CHECK_FLOOR * fine.max_abs();
    let mut out = SelfCheck {
        checked: 0,
        failures: 0,
        max_rel_change: 0.0,
    };
    let mut visit = |a: Complex64, b: Complex64| {
        let scale = b.norm().max(floor);
        if scale == 0.0 {
            return;
        }
        let rel = (a - b).norm() / scale;
        out.checked += 1;
        out.max_rel_change = out.max_rel_change.max(rel);
        if rel > SELF_CHECK_REL {
            out.failures += 1;
        }
    };
    for (r, c, b) in fine.entries() {
        visit(coarse.get(r, c), b);
    }
    for (r, c, a) in coarse.entries() {
        if fine.get(r, c) == ZERO {
            visit(a, ZERO);
        }
    }
    out
}

/// (G_α̃, Op^A(Φ) G_β̃) by quadrature, warning when node doubling moves it.
pub fn matrix_element(
    phi: &Symbol,
    gauge: &VectorPotential,
    window: &Window,
    a: &PhaseSpaceIndex,
    b: &PhaseSpaceIndex,
    quad: &QuadratureSpec,
) -> Result<Complex64> {
    let q = Quantizer::new(phi, gauge, window, *quad)?;
    let v = q.element(a, b);
    let v2 = Quantizer::new(phi, gauge, window, quad.doubled())?.element(a, b);
    if (v - v2).norm() > SELF_CHECK_REL * v2.norm() {
        log::warn!("matrix element of Op({}) moved by {:.3e} under node doubling", phi.name(), (v - v2).norm());
    }
    Ok(v2)
}

/// Kernel data of one term for grid application.
struct GridTerm<'t> {
    term: &'t Term,
    kind: KernelKind,
    /// Offset in grid steps for Dirac terms.
    offset: [i64; 2],
    cutoff: f64,
    /// Cell average of the singular kernel at its center.
    cell_avg: Complex64,
}

/// Distance from the kernel center beyond which |κ| < 1e−16 of its peak.
fn kernel_reach(t: &Term) -> f64 {
    match t.xi.base {
        // exp(−ρ²/4a) < e^{−37}.
        XiBase::Gauss { a } => (4.0 * a * 37.0).sqrt(),
        // ρ^ν K_ν(ρ) ~ e^{−ρ}; the margin absorbs the algebraic factor.
        XiBase::Bracket { .. } => 45.0,
        XiBase::One => 0.0,
    }
}

/// Op^A(Φ)φ on φ's grid: Dirac terms as magnetic translations, the rest as
/// Riemann sums of the kernel against the nonzero samples of φ.
pub fn apply_op(phi: &Symbol, gauge: &VectorPotential, f: &GridFunction) -> Result<GridFunction> {
    let all: Vec<usize> = (0..f.grid.len()).collect();
    let vals = apply_op_at(phi, gauge, f, &all)?;
    Ok(GridFunction { grid: f.grid, data: vals })
}

/// Op^A(Φ)φ evaluated only at the listed flat grid indices.
pub fn apply_op_at(phi: &Symbol, gauge: &VectorPotential, f: &GridFunction, targets: &[usize]) -> Result<Vec<Complex64>> {
    let grid = f.grid;
    let d = grid.d;
    if phi.dim() != d || gauge.dim() != d {
        return Err(Error::Mismatch("symbol, gauge and grid dimensions differ".into()));
    }
    let h = grid.h;
    let vol = grid.cell_volume();
    let mut terms = Vec::new();
    for t in phi.terms() {
        let kind = t.kernel_kind();
        let mut gt = GridTerm {
            term: t,
            kind,
            offset: [0, 0],
            cutoff: kernel_reach(t),
            cell_avg: ZERO,
        };
        match kind {
            KernelKind::Point { shift } => {
                for j in 0..d {
                    let o = shift[j] / h;
                    if (o - o.round()).abs() > 1e-9 {
                        return Err(Error::KernelPath {
                            symbol: phi.name().to_string(),
                            reason: format!("translation by {} is not a multiple of h = {h}", shift[j]),
                        });
                    }
                    gt.offset[j] = o.round() as i64;
                }
            }
            KernelKind::Radial { .. } => {
                if let XiBase::Bracket { p } = t.xi.base {
                    if p >= 0.0 {
                        return Err(Error::KernelPath {
                            symbol: phi.name().to_string(),
                            reason: format!("⟨ξ⟩^{p} has no integrable ξ-transform"),
                        });
                    }
                }
                let q = QuadratureSpec {
                    w_nodes: 0,
                    v_nodes: 0,
                    angular_nodes: 64,
                    radial_nodes: 64,
                };
                let s = t.xi.shift;
                let c = [-s[0], -s[1]];
                let lo = [c[0] - 0.5 * h, c[1] - 0.5 * h];
                let hi = [c[0] + 0.5 * h, c[1] + 0.5 * h];
                let sum: Complex64 = radial_rule(d, c, lo, hi, &q)
                    .into_iter()
                    .map(|(v, w)| w * norm_const(d) * t.xi_transform(&v, d))
                    .sum();
                gt.cell_avg = sum / vol;
            }
            KernelKind::Smooth => {}
        }
        terms.push(gt);
    }
    let n = grid.n();
    let support: Vec<usize> = (0..grid.len()).filter(|&i| f.data[i] != ZERO).collect();
    let unflat = |i: usize| -> [i64; 2] {
        if d == 1 {
            [i as i64, 0]
        } else {
            [(i / n) as i64, (i % n) as i64]
        }
    };
    let flat = |c: [i64; 2]| -> Option<usize> {
        if (0..d).any(|j| c[j] < 0 || c[j] >= n as i64) {
            return None;
        }
        Some(if d == 1 { c[0] as usize } else { c[0] as usize * n + c[1] as usize })
    };
    let out: Vec<Complex64> = targets
        .par_iter()
        .map(|&i| {
            let x = grid.point(i);
            let ci = unflat(i);
            let mut acc = ZERO;
            for gt in &terms {
                let t = gt.term;
                if let KernelKind::Point { .. } = gt.kind {
                    let cj = [ci[0] + gt.offset[0], ci[1] + gt.offset[1]];
                    if let Some(jf) = flat(cj) {
                        let fy = f.data[jf];
                        if fy != ZERO {
                            let y = grid.point(jf);
                            let mid = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])];
                            let lam = Complex64::from_polar(1.0, -gauge.line_integral(&x, &y));
                            acc += t.coeff * lam * t.x.eval(&mid, d) * fy;
                        }
                    }
                }
            }
            let smooth: Vec<&GridTerm> = terms.iter().filter(|g| !matches!(g.kind, KernelKind::Point { .. })).collect();
            if !smooth.is_empty() {
                for &jf in &support {
                    let y = grid.point(jf);
                    let v = [x[0] - y[0], x[1] - y[1]];
                    let mut kv = ZERO;
                    let mid = [0.5 * (x[0] + y[0]), 0.5 * (x[1] + y[1])];
                    for gt in &smooth {
                        let t = gt.term;
                        let w = [v[0] + t.xi.shift[0], v[1] + t.xi.shift[1]];
                        if (0..d).any(|j| w[j].abs() > gt.cutoff) {
                            continue;
                        }
                        let k = if matches!(gt.kind, KernelKind::Radial { .. }) && (0..d).all(|j| w[j].abs() < 0.5 * h) {
                            gt.cell_avg
                        } else {
                            norm_const(d) * t.xi_transform(&v, d)
                        };
                        kv += t.coeff * t.x.eval(&mid, d) * k;
                    }
                    if kv != ZERO {
                        let lam = Complex64::from_polar(1.0, -gauge.line_integral(&x, &y));
                        acc += vol * lam * kv * f.data[jf];
                    }
                }
            }
            acc
        })
        .collect();
    Ok(out)
}

/// (G_α̃, Op^A(Φ) G_β̃) as a grid inner product after applying the operator to
/// the sampled atom; the independent second path for matrix elements.
pub fn apply_path_element(
    phi: &Symbol,
    gauge: &VectorPotential,
    window: &Window,
    a: &PhaseSpaceIndex,
    b: &PhaseSpaceIndex,
    grid: crate::frame::GridSpec,
) -> Result<Complex64> {
    let gb = atom(*b, window, gauge).sample(grid);
    let ga = atom(*a, window, gauge);
    let targets: Vec<usize> = (0..grid.len())
        .filter(|&i| {
            let x = grid.point(i);
            let p = a.pos.point();
            (0..grid.d).all(|j| (x[j] - p[j]).abs() < window.support_radius())
        })
        .collect();
    let vals = apply_op_at(phi, gauge, &gb, &targets)?;
    let vol = grid.cell_volume();
    Ok(targets
        .iter()
        .zip(&vals)
        .map(|(&i, v)| ga.eval(&grid.point(i)).conj() * v * vol)
        .sum())
}

/// Sampled symbol recovered from a matrix:
/// Φ_N(z, ζ) = ∫ dv e^{−iζ·v} Λ^A(z−v/2, z+v/2) 𝔎_N(z+v/2, z−v/2),
/// 𝔎_N = Σ M_{α̃,β̃} G_α̃ ⊗ conj(G_β̃). Returned as `out[z][ζ]`.
pub fn reconstruct_symbol(
    m: &FrameMatrix,
    gauge: &VectorPotential,
    window: &Window,
    zs: &[[f64; 2]],
    zetas: &[[f64; 2]],
    dv: f64,
) -> Result<Vec<Vec<Complex64>>> {
    let set = m.set();
    let d = set.dim();
    if gauge.dim() != d || window.dim() != d {
        return Err(Error::Mismatch("matrix, gauge and window dimensions differ".into()));
    }
    if !(dv > 0.0) {
        return Err(invalid("dv", "step must be positive"));
    }
    let rp = set.r_pos() as f64;
    for z in zs {
        if (0..d).any(|j| z[j].abs() > rp - 2.0) {
            log::warn!("reconstruction at z = {:?} lies within two cells of the truncation boundary", &z[..d]);
        }
    }
    let r = window.support_radius();
    let vmax = 1.0 + 2.0 * r;
    let nv = (2.0 * vmax / dv).ceil() as usize;
    let rule = midpoint(nv, -vmax, vmax);
    let vnodes: Vec<([f64; 2], f64)> = if d == 1 {
        rule.nodes.iter().zip(&rule.weights).map(|(&v, &w)| ([v, 0.0], w)).collect()
    } else {
        let mut out = Vec::new();
        for (&v0, &w0) in rule.nodes.iter().zip(&rule.weights) {
            for (&v1, &w1) in rule.nodes.iter().zip(&rule.weights) {
                out.push(([v0, v1], w0 * w1));
            }
        }
        out
    };
    let n_mom = set.n_mom();
    let momenta = set.momenta();
    let positions = set.positions();
    let c = norm_const(d);
    // Atom values at a point, for positions whose support contains it.
    let atoms_at = |x: &[f64; 2]| -> Vec<(usize, Vec<Complex64>)> {
        let mut out = Vec::new();
        for (pi, p) in positions.iter().enumerate() {
            let g = p.point();
            let loc = [x[0] - g[0], x[1] - g[1]];
            if (0..d).any(|j| loc[j].abs() >= r) {
                continue;
            }
            let amp = c * window.eval(&loc[..d]);
            if amp == 0.0 {
                continue;
            }
            let base = Complex64::from_polar(amp, -gauge.line_integral(x, &g));
            let vals = momenta
                .iter()
                .map(|k| {
                    let f = k.freq();
                    base * Complex64::from_polar(1.0, (0..d).map(|j| f[j] * loc[j]).sum())
                })
                .collect();
            out.push((pi, vals));
        }
        out
    };
    let res: Vec<Vec<Complex64>> = zs
        .par_iter()
        .map(|z| {
            let mut colvec = vec![ZERO; set.len()];
            let mut kern: Vec<([f64; 2], f64, Complex64)> = Vec::with_capacity(vnodes.len());
            for &(v, w) in &vnodes {
                let x = [z[0] + 0.5 * v[0], z[1] + 0.5 * v[1]];
                let y = [z[0] - 0.5 * v[0], z[1] - 0.5 * v[1]];
                let ax = atoms_at(&x);
                if ax.is_empty() {
                    continue;
                }
                let ay = atoms_at(&y);
                if ay.is_empty() {
                    continue;
                }
                for (pi, vals) in &ay {
                    for (k, val) in vals.iter().enumerate() {
                        colvec[pi * n_mom + k] = val.conj();
                    }
                }
                let mut kv = ZERO;
                for (pi, vals) in &ax {
                    for (k, gx) in vals.iter().enumerate() {
                        let row = m.row(pi * n_mom + k);
                        let s: Complex64 = row.iter().map(|&(cc, mv)| mv * colvec[cc]).sum();
                        kv += gx * s;
                    }
                }
                for (pi, _) in &ay {
                    for k in 0..n_mom {
                        colvec[pi * n_mom + k] = ZERO;
                    }
                }
                let lam = Complex64::from_polar(1.0, -gauge.line_integral(&y, &x));
                kern.push((v, w, lam * kv));
            }
            zetas
                .iter()
                .map(|zeta| {
                    kern.iter()
                        .map(|(v, w, k)| *w * k * Complex64::from_polar(1.0, -(0..d).map(|j| zeta[j] * v[j]).sum::<f64>()))
                        .sum()
                })
                .collect()
        })
        .collect();
    Ok(res)
}
