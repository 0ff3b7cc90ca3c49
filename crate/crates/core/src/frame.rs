//! Magnetic Gabor atoms, analysis and synthesis on uniform grids, and grid
//! function I/O.

use std::f64::consts::PI;
use std::io::{Read, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::lattice_window::{IndexSet, LatticeIndex, PhaseSpaceIndex, Window};
use crate::magnetic::VectorPotential;

/// Uniform grid on [−L, L]^d with spacing h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub d: usize,
    pub l: f64,
    pub h: f64,
}

impl GridSpec {
    pub fn new(d: usize, l: f64, h: f64) -> Result<Self> {
        check_dim(d)?;
        if !(h > 0.0) || !h.is_finite() {
            return Err(invalid("h", "grid spacing must be positive"));
        }
        if !(l > 0.0) || !l.is_finite() {
            return Err(invalid("L", "box half-width must be positive"));
        }
        Ok(GridSpec { d, l, h })
    }

    /// Samples per axis, floor(2L/h) + 1.
    pub fn n(&self) -> usize {
        let r = 2.0 * self.l / self.h;
        // Absorb rounding in 2L/h when h divides 2L.
        (r + 1e-9 * r.max(1.0)).floor() as usize + 1
    }

    pub fn len(&self) -> usize {
        self.n().pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.h
    }

    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    pub fn point(&self, flat: usize) -> [f64; 2] {
        let n = self.n();
        if self.d == 1 {
            [self.coord(flat), 0.0]
        } else {
            [self.coord(flat / n), self.coord(flat % n)]
        }
    }

    /// Inclusive index range of grid points with |x − c| < r on one axis,
    /// clipped to the grid. Empty ranges come back as `None`.
    pub fn axis_range(&self, c: f64, r: f64) -> Option<(usize, usize)> {
        let n = self.n() as i64;
        let lo = ((c - r + self.l) / self.h).floor() as i64 + 1;
        let hi = ((c + r + self.l) / self.h).ceil() as i64 - 1;
        let lo = lo.max(0);
        let hi = hi.min(n - 1);
        (lo <= hi).then_some((lo as usize, hi as usize))
    }

    /// Whether [c − r, c + r] lies inside the grid box on every axis.
    pub fn covers(&self, c: &[f64], r: f64) -> bool {
        (0..self.d).all(|j| c[j] - r >= -self.l - 1e-12 && c[j] + r <= self.l + 1e-12)
    }
}

/// Complex samples on a uniform grid, stored row-major (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: GridSpec,
    pub data: Vec<Complex64>,
}

impl GridFunction {
    pub fn zeros(grid: GridSpec) -> Self {
        GridFunction {
            grid,
            data: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(&[f64]) -> Complex64 + Sync) -> Self {
        let data = (0..grid.len())
            .into_par_iter()
            .map(|i| f(&grid.point(i)))
            .collect();
        GridFunction { grid, data }
    }

    /// h^d Σ conj(self)·other.
    pub fn inner(&self, other: &GridFunction) -> Result<Complex64> {
        if self.grid != other.grid {
            return Err(Error::Mismatch("grid functions live on different grids".into()));
        }
        let s: Complex64 = self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum();
        Ok(s * self.grid.cell_volume())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.grid != other.grid {
            return Err(Error::Mismatch("grid functions live on different grids".into()));
        }
        Ok(GridFunction {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    /// CSV with one row per grid point: coordinates, re, im. A leading
    /// `#` line records d, L and h exactly.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# d={} L={:?} h={:?}", self.grid.d, self.grid.l, self.grid.h)?;
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.d).map(|j| format!("x{j}")).collect();
        header.push("re".into());
        header.push("im".into());
        wr.write_record(&header).map_err(csv_err)?;
        for (i, z) in self.data.iter().enumerate() {
            let p = self.grid.point(i);
            let mut rec: Vec<String> = p[..self.grid.d].iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", z.re));
            rec.push(format!("{:?}", z.im));
            wr.write_record(&rec).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Inverse of [`GridFunction::write_csv`]. Without the `#` line the grid
    /// is inferred from the coordinates.
    pub fn read_csv<R: Read>(mut r: R) -> Result<GridFunction> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let header_grid = text.lines().next().and_then(parse_grid_comment);
        let mut rd = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let d = rd.headers().map_err(csv_err)?.len().saturating_sub(2);
        check_dim(d)?;
        let mut coords = Vec::new();
        let mut data = Vec::new();
        for rec in rd.records() {
            let rec = rec.map_err(csv_err)?;
            let v: Vec<f64> = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Parse(e.to_string())))
                .collect::<Result<_>>()?;
            if v.len() != d + 2 {
                return Err(Error::Parse("row length differs from header".into()));
            }
            coords.push(v[0]);
            data.push(Complex64::new(v[d], v[d + 1]));
        }
        let n = (data.len() as f64).powf(1.0 / d as f64).round() as usize;
        if n < 2 || n.pow(d as u32) != data.len() {
            return Err(Error::Parse("sample count is not a full grid".into()));
        }
        let grid = match header_grid {
            Some(g) if g.d == d => g,
            _ => {
                let step = if d == 1 { 1 } else { n };
                GridSpec::new(d, -coords[0], coords[step] - coords[0])?
            }
        };
        if grid.n() != n {
            return Err(Error::Parse("coordinates do not describe a uniform grid".into()));
        }
        Ok(GridFunction { grid, data })
    }

    /// Binary dump: magic, d (u32), L and h (f64), sample count (u64), then
    /// little-endian (re, im) pairs.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.grid.d as u32).to_le_bytes())?;
        w.write_all(&self.grid.l.to_le_bytes())?;
        w.write_all(&self.grid.h.to_le_bytes())?;
        w.write_all(&(self.data.len() as u64).to_le_bytes())?;
        for z in &self.data {
            w.write_all(&z.re.to_le_bytes())?;
            w.write_all(&z.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<GridFunction> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Parse("not a grid function dump".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let l = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let h = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let len = u64::from_le_bytes(b8) as usize;
        let grid = GridSpec::new(d, l, h)?;
        if grid.len() != len {
            return Err(Error::Parse("sample count does not match header".into()));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut b8)?;
            let re = f64::from_le_bytes(b8);
            r.read_exact(&mut b8)?;
            data.push(Complex64::new(re, f64::from_le_bytes(b8)));
        }
        Ok(GridFunction { grid, data })
    }
}

fn parse_grid_comment(line: &str) -> Option<GridSpec> {
    let rest = line.strip_prefix('#')?;
    let mut d = None;
    let mut l = None;
    let mut h = None;
    for tok in rest.split_whitespace() {
        let (k, v) = tok.split_once('=')?;
        match k {
            "d" => d = v.parse::<usize>().ok(),
            "L" => l = v.parse::<f64>().ok(),
            "h" => h = v.parse::<f64>().ok(),
            _ => {}
        }
    }
    GridSpec::new(d?, l?, h?).ok()
}

const BINARY_MAGIC: &[u8; 4] = b"MFGF";

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// G^A_{γ,γ*}(x) = Λ^A(x,γ) ϑ_{γ*}(x−γ) g(x−γ).
#[derive(Debug, Clone, Copy)]
pub struct GaborAtom<'a> {
    pub index: PhaseSpaceIndex,
    pub window: &'a Window,
    pub gauge: &'a VectorPotential,
}

pub fn atom<'a>(index: PhaseSpaceIndex, window: &'a Window, gauge: &'a VectorPotential) -> GaborAtom<'a> {
    GaborAtom { index, window, gauge }
}

impl GaborAtom<'_> {
    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let d = self.window.dim();
        let g = self.index.pos.point();
        let k = self.index.mom.freq();
        let local = [x[0] - g[0], if d == 2 { x[1] - g[1] } else { 0.0 }];
        let w = self.window.eval(&local);
        if w == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let phase = (0..d).map(|j| k[j] * local[j]).sum::<f64>() - self.gauge.line_integral(x, &g);
        Complex64::from_polar(norm_const(d) * w, phase)
    }

    /// Samples on a grid.
    pub fn sample(&self, grid: GridSpec) -> GridFunction {
        GridFunction::from_fn(grid, |x| self.eval(x))
    }
}

/// (2π)^{-d/2}.
pub fn norm_const(d: usize) -> f64 {
    (2.0 * PI).powf(-(d as f64) / 2.0)
}

/// Frame coefficients indexed by a truncated phase-space lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    pub set: IndexSet,
    pub values: Vec<Complex64>,
}

impl CoefficientVector {
    pub fn zeros(set: IndexSet) -> Self {
        let n = set.len();
        CoefficientVector {
            set,
            values: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn get(&self, idx: &PhaseSpaceIndex) -> Option<Complex64> {
        self.set.locate(idx).map(|i| self.values[i])
    }

    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Grid points under one atom's support, with the local phase factors.
struct Patch {
    ranges: Vec<(usize, usize)>,
    /// Local coordinates x_j − γ_j per axis.
    local: Vec<Vec<f64>>,
    /// (2π)^{-d/2} Λ^A(x,γ) g(x−γ) on the patch, row-major.
    envelope: Vec<Complex64>,
}

impl Patch {
    fn new(grid: &GridSpec, window: &Window, gauge: &VectorPotential, pos: &LatticeIndex) -> Option<Patch> {
        let d = grid.d;
        let g = pos.point();
        let r = window.support_radius();
        let mut ranges = Vec::with_capacity(d);
        for &gj in g.iter().take(d) {
            ranges.push(grid.axis_range(gj, r)?);
        }
        let local: Vec<Vec<f64>> = ranges
            .iter()
            .enumerate()
            .map(|(j, &(lo, hi))| (lo..=hi).map(|i| grid.coord(i) - g[j]).collect())
            .collect();
        let w1: Vec<Vec<f64>> = local
            .iter()
            .map(|ax| ax.iter().map(|&t| window.g1(t)).collect())
            .collect();
        let c = norm_const(d);
        let mut envelope = Vec::new();
        if d == 1 {
            for (i, &t) in local[0].iter().enumerate() {
                let x = [g[0] + t, 0.0];
                let ph = -gauge.line_integral(&x, &g);
                envelope.push(Complex64::from_polar(c * w1[0][i], ph));
            }
        } else {
            for (i0, &t0) in local[0].iter().enumerate() {
                for (i1, &t1) in local[1].iter().enumerate() {
                    let x = [g[0] + t0, g[1] + t1];
                    let amp = c * w1[0][i0] * w1[1][i1];
                    let ph = if amp == 0.0 { 0.0 } else { -gauge.line_integral(&x, &g) };
                    envelope.push(Complex64::from_polar(amp, ph));
                }
            }
        }
        Some(Patch { ranges, local, envelope })
    }

    fn flat_indices(&self, grid: &GridSpec) -> Vec<usize> {
        let n = grid.n();
        if self.ranges.len() == 1 {
            (self.ranges[0].0..=self.ranges[0].1).collect()
        } else {
            let mut out = Vec::with_capacity(self.envelope.len());
            for i0 in self.ranges[0].0..=self.ranges[0].1 {
                for i1 in self.ranges[1].0..=self.ranges[1].1 {
                    out.push(i0 * n + i1);
                }
            }
            out
        }
    }
}

/// e^{i s k t} for k = −R..=R, row per t.
fn twiddles(ts: &[f64], r: usize, sign: f64) -> Vec<Vec<Complex64>> {
    ts.iter()
        .map(|&t| {
            (0..=2 * r)
                .map(|m| Complex64::from_polar(1.0, sign * (m as f64 - r as f64) * t))
                .collect()
        })
        .collect()
}

/// Coefficients (G^A_α̃, f) for every α̃ in `set`, as grid inner products.
pub fn analyze(f: &GridFunction, set: &IndexSet, window: &Window, gauge: &VectorPotential) -> CoefficientVector {
    let grid = f.grid;
    let d = grid.d;
    let r = set.r_mom();
    let nk = 2 * r + 1;
    let vol = grid.cell_volume();
    warn_coverage(f, set, window);
    let blocks: Vec<Vec<Complex64>> = set
        .positions()
        .par_iter()
        .map(|pos| {
            let mut out = vec![Complex64::new(0.0, 0.0); set.n_mom()];
            if !grid.covers(&pos.point(), window.support_radius()) {
                log::warn!("atom support at {:?} leaves the grid box; coefficients are truncated", pos.coords());
            }
            let Some(patch) = Patch::new(&grid, window, gauge, pos) else {
                return out;
            };
            let idx = patch.flat_indices(&grid);
            let prod: Vec<Complex64> = patch
                .envelope
                .iter()
                .zip(&idx)
                .map(|(e, &i)| e.conj() * f.data[i] * vol)
                .collect();
            let tw: Vec<_> = patch.local.iter().map(|ax| twiddles(ax, r, -1.0)).collect();
            if d == 1 {
                for (i, p) in prod.iter().enumerate() {
                    for (m, o) in out.iter_mut().enumerate() {
                        *o += p * tw[0][i][m];
                    }
                }
            } else {
                let n1 = patch.local[1].len();
                let n0 = patch.local[0].len();
                // Contract the second axis first.
                let mut q = vec![Complex64::new(0.0, 0.0); n0 * nk];
                for i0 in 0..n0 {
                    for i1 in 0..n1 {
                        let p = prod[i0 * n1 + i1];
                        if p == Complex64::new(0.0, 0.0) {
                            continue;
                        }
                        for m1 in 0..nk {
                            q[i0 * nk + m1] += p * tw[1][i1][m1];
                        }
                    }
                }
                for i0 in 0..n0 {
                    for m0 in 0..nk {
                        let t = tw[0][i0][m0];
                        for m1 in 0..nk {
                            out[m0 * nk + m1] += t * q[i0 * nk + m1];
                        }
                    }
                }
            }
            out
        })
        .collect();
    CoefficientVector {
        set: set.clone(),
        values: blocks.into_iter().flatten().collect(),
    }
}

fn warn_coverage(f: &GridFunction, set: &IndexSet, window: &Window) {
    let reach = set.r_pos() as f64 + window.support_radius();
    let total = f.norm_sq();
    if total == 0.0 {
        return;
    }
    let outside: f64 = f
        .data
        .iter()
        .enumerate()
        .filter(|(i, _)| {
            let p = f.grid.point(*i);
            (0..f.grid.d).any(|j| p[j].abs() >= reach)
        })
        .map(|(_, z)| z.norm_sqr())
        .sum::<f64>()
        * f.grid.cell_volume();
    if outside > 1e-8 * total {
        log::warn!(
            "position radius {} leaves a fraction {:.2e} of the L2 mass uncovered",
            set.r_pos(),
            outside / total
        );
    }
}

/// Σ c_α̃ G^A_α̃ sampled on `grid`, accumulated in index order.
pub fn synthesize(c: &CoefficientVector, grid: GridSpec, window: &Window, gauge: &VectorPotential) -> GridFunction {
    let set = &c.set;
    let d = grid.d;
    let r = set.r_mom();
    let nk = 2 * r + 1;
    let nm = set.n_mom();
    let patches: Vec<Option<(Vec<usize>, Vec<Complex64>)>> = set
        .positions()
        .par_iter()
        .enumerate()
        .map(|(pi, pos)| {
            let coeffs = &c.values[pi * nm..(pi + 1) * nm];
            if coeffs.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                return None;
            }
            let patch = Patch::new(&grid, window, gauge, pos)?;
            let tw: Vec<_> = patch.local.iter().map(|ax| twiddles(ax, r, 1.0)).collect();
            let vals: Vec<Complex64> = if d == 1 {
                patch
                    .envelope
                    .iter()
                    .enumerate()
                    .map(|(i, e)| {
                        let s: Complex64 = coeffs.iter().zip(&tw[0][i]).map(|(a, b)| a * b).sum();
                        e * s
                    })
                    .collect()
            } else {
                let n0 = patch.local[0].len();
                let n1 = patch.local[1].len();
                let mut q = vec![Complex64::new(0.0, 0.0); nk * n1];
                for m0 in 0..nk {
                    for i1 in 0..n1 {
                        let mut s = Complex64::new(0.0, 0.0);
                        for m1 in 0..nk {
                            s += coeffs[m0 * nk + m1] * tw[1][i1][m1];
                        }
                        q[m0 * n1 + i1] = s;
                    }
                }
                let mut v = Vec::with_capacity(n0 * n1);
                for i0 in 0..n0 {
                    for i1 in 0..n1 {
                        let mut s = Complex64::new(0.0, 0.0);
                        for m0 in 0..nk {
                            s += tw[0][i0][m0] * q[m0 * n1 + i1];
                        }
                        v.push(patch.envelope[i0 * n1 + i1] * s);
                    }
                }
                v
            };
            Some((patch.flat_indices(&grid), vals))
        })
        .collect();
    let mut out = GridFunction::zeros(grid);
    for (idx, vals) in patches.into_iter().flatten() {
        for (i, v) in idx.into_iter().zip(vals) {
            out.data[i] += v;
        }
    }
    out
}

/// | ‖analyze(f)‖² − ‖f‖² |.
pub fn parseval_defect(f: &GridFunction, set: &IndexSet, window: &Window, gauge: &VectorPotential) -> f64 {
    (analyze(f, set, window, gauge).norm_sq() - f.norm_sq()).abs()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice_window::{DualIndex, DEFAULT_MARGIN};

    #[test]
    fn sample_count_per_axis() {
        assert_eq!(GridSpec::new(1, 6.0, 0.02).unwrap().n(), 601);
        assert_eq!(GridSpec::new(1, 1.0, 0.3).unwrap().n(), 7);
        assert!(GridSpec::new(1, 1.0, 0.0).is_err());
    }

    #[test]
    fn atom_modulus_is_phase_free() {
        let w = Window::new(2, DEFAULT_MARGIN).unwrap();
        let a = VectorPotential::symmetric(1.3);
        let idx = PhaseSpaceIndex {
            pos: LatticeIndex::new(&[1, -1]).unwrap(),
            mom: DualIndex::new(&[2, 3]).unwrap(),
        };
        let at = atom(idx, &w, &a);
        for x in [[0.5, -0.8], [1.2, -1.3], [1.9, 0.0]] {
            let expect = norm_const(2) * w.eval(&[x[0] - 1.0, x[1] + 1.0]);
            assert!((at.eval(&x).norm() - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn analysis_of_an_atom_gives_its_norm() {
        let w = Window::new(1, DEFAULT_MARGIN).unwrap();
        let a = VectorPotential::zero(1);
        let grid = GridSpec::new(1, 3.0, 0.01).unwrap();
        let set = IndexSet::new(1, 1, 3).unwrap();
        let idx = set.get(9);
        let f = atom(idx, &w, &a).sample(grid);
        let c = analyze(&f, &set, &w, &a);
        let v = c.get(&idx).unwrap();
        assert!((v.re - f.norm_sq()).abs() < 1e-13);
        assert!(v.im.abs() < 1e-13);
    }

    #[test]
    fn csv_and_binary_round_trip() {
        let grid = GridSpec::new(2, 1.0, 0.25).unwrap();
        let f = GridFunction::from_fn(grid, |x| Complex64::new(x[0].sin(), x[1] * 0.1 + 1.0 / 3.0));
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        assert_eq!(GridFunction::read_csv(buf.as_slice()).unwrap(), f);
        let mut bin = Vec::new();
        f.write_binary(&mut bin).unwrap();
        assert_eq!(GridFunction::read_binary(bin.as_slice()).unwrap(), f);
    }
}
