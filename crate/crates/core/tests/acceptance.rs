//! Acceptance criteria 1–12. Each criterion prints one PASS/FAIL line;
//! the test fails only when an outcome differs from expectation, so a known
//! failure that starts passing is reported too.

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use magframe::cli::experiments::{
    composed_elements, far_entries, interior_patch, moyal_matrix_defect, normwise_rel, moyal_points, moyal_unit_defect,
    roundtrip_error, stokes_max, stokes_points,
};
use magframe::frame::{analyze, atom, synthesize, GridFunction, GridSpec};
use magframe::lattice_window::{IndexSet, Window};
use magframe::magnetic::{transversal_gauge, triangle_flux, MagneticField, VectorPotential};
use magframe::matrix_ops::{
    beals_check, commutator_symbol, compose_class_check, cv_norms, cv_ratio, decay_report, decay_scan, even_pairs,
    matrix_product, moyal_numeric, operator_norm_truncated, schur_norm_bound, BealsOptions, MoyalQuadrature, Observable,
    DECAY_STABILITY_TOL, DENSE_GUARD,
};
use magframe::quantize::{apply_op, apply_path_element, build_matrix, matrix_element, BuildOptions, QuadratureSpec};
use magframe::symbols::Symbol;
use magframe::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Criteria expected to fail, with the reason recorded in the decisions
/// ledger.
const KNOWN_FAILURES: &[(u32, &str)] = &[(
    6,
    "entries at position gap ≥ 2 are not zero for ξ-dependent symbols, and the d = 2 ⟨ξ⟩^-2 constants at n2 = 4 keep growing with R_mom",
)];

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        passed,
        detail: detail.into(),
    }
}

fn sin_x_cos_xi(d: usize) -> Symbol {
    Symbol::sin_x(d, 0).unwrap().mul(&Symbol::cos_xi(d, 0).unwrap()).unwrap()
}

fn within(t: Duration, secs: f64) -> bool {
    t.as_secs_f64() < secs
}

fn gaussian_signal(grid: GridSpec) -> GridFunction {
    let d = grid.d;
    GridFunction::from_fn(grid, |x| Complex64::new((-x[..d].iter().map(|t| t * t).sum::<f64>()).exp(), 0.0))
}

fn criterion_1() -> Verdict {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut pou: f64 = 0.0;
    let mut outside: f64 = 0.0;
    for d in [1usize, 2] {
        let w = Window::new(d, 0.05).unwrap();
        for _ in 0..10_000 {
            let x = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
            pou = pou.max((w.pou_sum(&x[..d]) - 1.0).abs());
            let mut y = [rng.gen_range(-0.999..0.999), rng.gen_range(-0.999..0.999)];
            let j = rng.gen_range(0..d);
            y[j] = rng.gen_range(1.0..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            outside = outside.max(w.eval(&y[..d]).abs());
        }
        for edge in [1.0, -1.0] {
            outside = outside.max(w.eval(&[edge, 0.0][..d]).abs());
        }
    }
    let el = t.elapsed();
    verdict(
        pou < 1e-10 && outside == 0.0 && within(el, 1.0),
        format!("max |Σg²−1| = {pou:.2e}, max |g| outside = {outside:e}, {el:.2?}"),
    )
}

fn criterion_2() -> Verdict {
    let t = Instant::now();
    let quads = stokes_points(7, 100);
    let bc = MagneticField::constant(1.0);
    let mut constant: f64 = 0.0;
    for a in [VectorPotential::symmetric(1.0), VectorPotential::landau(1.0), transversal_gauge(&bc, 20)] {
        constant = constant.max(stokes_max(&a, &bc, &quads, 20));
    }
    // Closed form: the flux of a constant field is b times the signed area.
    let mut area: f64 = 0.0;
    for q in &quads {
        let (x, y, z) = (q[0], q[1], q[2]);
        let exact = 0.5 * ((y[0] - x[0]) * (z[1] - x[1]) - (y[1] - x[1]) * (z[0] - x[0]));
        area = area.max((triangle_flux(&bc, &x, &y, &z, 20) - exact).abs());
    }
    let bt = MagneticField::trig(1.0, [1.0, 0.5], 0.3);
    let trig = stokes_max(&transversal_gauge(&bt, 20), &bt, &quads, 20);
    let r3 = stokes_max(&transversal_gauge(&bt, 3), &bt, &quads, 3);
    let r6 = stokes_max(&transversal_gauge(&bt, 6), &bt, &quads, 6);
    let r4 = stokes_max(&transversal_gauge(&bt, 4), &bt, &quads, 4);
    let r8 = stokes_max(&transversal_gauge(&bt, 8), &bt, &quads, 8);
    let el = t.elapsed();
    verdict(
        constant < 1e-8 && area < 1e-8 && trig < 1e-6 && r3 / r6 >= 10.0 && r4 / r8 >= 10.0 && within(el, 30.0),
        format!(
            "constant {constant:.2e} (area {area:.2e}), trig {trig:.2e}; orders 3→6: {r3:.2e}→{r6:.2e}, 4→8: {r4:.2e}→{r8:.2e}; {el:.2?}"
        ),
    )
}

fn parseval_case(d: usize, gauge: &VectorPotential, set: &IndexSet, l: f64, h: f64) -> (f64, f64) {
    let w = Window::new(d, 0.05).unwrap();
    let grid = GridSpec::new(d, l, h).unwrap();
    let f = gaussian_signal(grid);
    let c = analyze(&f, set, &w, gauge);
    let n2 = f.norm_sq();
    let defect = (c.norm_sq() - n2).abs() / n2;
    let rec = synthesize(&c, grid, &w, gauge).sub(&f).unwrap().norm() / n2.sqrt();
    (defect, rec)
}

fn criterion_3() -> Verdict {
    let t = Instant::now();
    let (p1, r1) = parseval_case(1, &VectorPotential::zero(1), &IndexSet::new(1, 5, 40).unwrap(), 6.0, 0.02);
    let (p2, r2) = parseval_case(2, &VectorPotential::symmetric(1.0), &IndexSet::new(2, 4, 30).unwrap(), 5.0, 0.05);
    let el = t.elapsed();
    verdict(
        p1 < 1e-3 && r1 < 1e-3 && p2 < 5e-3 && r2 < 5e-3 && within(el, 120.0),
        format!("d=1 A=0: Parseval {p1:.2e}, recon {r1:.2e}; d=2 b=1: Parseval {p2:.2e}, recon {r2:.2e}; {el:.2?}"),
    )
}

/// max |M(1) − Gram| with Gram columns from grid analysis of sampled atoms.
fn gram_defect(gauge: &VectorPotential, set: &IndexSet, grid: GridSpec) -> f64 {
    let d = set.dim();
    let w = Window::new(d, 0.05).unwrap();
    let m = build_matrix(&Symbol::one(d), gauge, &w, set, &BuildOptions::default_for(d)).unwrap();
    let mut worst: f64 = 0.0;
    for c in 0..set.len() {
        let col = analyze(&atom(set.get(c), &w, gauge).sample(grid), set, &w, gauge);
        for (r, g) in col.values.iter().enumerate() {
            worst = worst.max((m.get(r, c) - g).norm());
        }
    }
    worst
}

fn criterion_4() -> Verdict {
    let t = Instant::now();
    let mut bit_exact = true;
    for (d, a) in [(1usize, VectorPotential::zero(1)), (2, VectorPotential::symmetric(1.0))] {
        let grid = GridSpec::new(d, 2.0, 0.1).unwrap();
        let f = GridFunction::from_fn(grid, |x| Complex64::new(x[0].sin() + x[d - 1], x[0] * x[d - 1]));
        bit_exact &= apply_op(&Symbol::one(d), &a, &f).unwrap().data == f.data;
    }
    let g1 = gram_defect(&VectorPotential::zero(1), &IndexSet::new(1, 2, 4).unwrap(), GridSpec::new(1, 4.0, 0.005).unwrap());
    let grid2 = GridSpec::new(2, 2.5, 1.0 / 64.0).unwrap();
    let set2 = IndexSet::new(2, 1, 2).unwrap();
    let gs = gram_defect(&VectorPotential::symmetric(1.0), &set2, grid2);
    let gl = gram_defect(&VectorPotential::landau(1.0), &set2, grid2);
    let el = t.elapsed();
    verdict(
        bit_exact && g1 < 1e-8 && gs < 1e-8 && gl < 1e-8,
        format!("Op(1) bit-exact: {bit_exact}; |M(1) − Gram|: d=1 {g1:.2e}, symmetric {gs:.2e}, Landau {gl:.2e}; {el:.2?}"),
    )
}

fn criterion_5() -> Verdict {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (d, a) in [(1usize, VectorPotential::zero(1)), (2, VectorPotential::zero(2)), (2, VectorPotential::symmetric(1.0))] {
        let w = Window::new(d, 0.05).unwrap();
        let set = IndexSet::new(d, 2, 3).unwrap();
        let patch = interior_patch(&set);
        let grid = if d == 1 { GridSpec::new(1, 4.0, 0.01).unwrap() } else { GridSpec::new(2, 4.0, 1.0 / 32.0).unwrap() };
        let q = QuadratureSpec::default_for(d);
        for phi in [Symbol::cos_xi(d, 0).unwrap(), Symbol::gaussian(d, 1.0, 0.0).unwrap(), sin_x_cos_xi(d)] {
            let mut case: f64 = 0.0;
            for x in &patch {
                for y in &patch {
                    let m = matrix_element(&phi, &a, &w, x, y, &q).unwrap();
                    let p = apply_path_element(&phi, &a, &w, x, y, grid).unwrap();
                    let s = m.norm().max(p.norm());
                    if s > 1e-12 {
                        case = case.max((m - p).norm() / s);
                    }
                }
            }
            worst = worst.max(case);
            parts.push(format!("d={d} {:?} {}: {case:.1e}", a.tag(), phi.name()));
        }
    }
    let el = t.elapsed();
    verdict(worst < 1e-5 && within(el, 300.0), format!("worst rel {worst:.2e} [{}]; {el:.2?}", parts.join(", ")))
}

fn criterion_6() -> Verdict {
    let t = Instant::now();
    let pairs = even_pairs(4);
    let mut stable_all = true;
    let mut lines = Vec::new();
    let mut gap_ok = true;
    let fine = QuadratureSpec {
        w_nodes: 384,
        v_nodes: 384,
        angular_nodes: 1,
        radial_nodes: 256,
    };
    let w1 = Window::new(1, 0.05).unwrap();
    let a1 = VectorPotential::zero(1);
    for (phi, p, quad) in [
        (Symbol::one(1), 0.0, QuadratureSpec::default_for(1)),
        (sin_x_cos_xi(1), 0.0, QuadratureSpec::default_for(1)),
        (Symbol::bracket(1, -2.0).unwrap(), -2.0, fine),
    ] {
        let o = BuildOptions {
            quad,
            ..BuildOptions::default_for(1)
        };
        let set = IndexSet::new(1, 3, 20).unwrap();
        let m = build_matrix(&phi, &a1, &w1, &set, &o).unwrap();
        let g = build_matrix(&phi, &a1, &w1, &set.grown(1, 1), &o).unwrap();
        let rep = decay_report(&m, &g, p, &pairs).unwrap();
        let finite = rep.constants.iter().all(|c| c.constant.is_finite());
        let stable = rep.stable == Some(true) && finite;
        let far = far_entries(&m);
        stable_all &= stable;
        gap_ok &= far == 0.0;
        lines.push(format!("d=1 {}: stable {stable}, gap≥2 max/max {far:.1e}", phi.name()));
    }
    // d = 2 in a constant field, streamed block by block.
    let w2 = Window::new(2, 0.05).unwrap();
    let a2 = VectorPotential::symmetric(1.0);
    let q2 = QuadratureSpec::default_for(2);
    for (phi, p, rm) in [
        (Symbol::one(2), 0.0, 6usize),
        (sin_x_cos_xi(2), 0.0, 6),
        (Symbol::bracket(2, -2.0).unwrap(), -2.0, 10),
    ] {
        let s0 = decay_scan(&phi, &a2, &w2, &IndexSet::new(2, 2, rm).unwrap(), q2, p, &pairs).unwrap();
        let s1 = decay_scan(&phi, &a2, &w2, &IndexSet::new(2, 3, rm + 1).unwrap(), q2, p, &pairs).unwrap();
        let mut worst: f64 = 0.0;
        let mut stable = true;
        for (a, b) in s0.iter().zip(&s1) {
            let ch = if *a > 0.0 { (b - a).abs() / a } else if *b == 0.0 { 0.0 } else { f64::INFINITY };
            worst = worst.max(ch);
            stable &= a.is_finite() && ch < DECAY_STABILITY_TOL;
        }
        stable_all &= stable;
        lines.push(format!("d=2 b=1 {} R_mom {rm}→{}: stable {stable} (max change {worst:.2})", phi.name(), rm + 1));
    }
    let el = t.elapsed();
    verdict(
        stable_all && gap_ok && within(el, 600.0),
        format!("{}; {el:.2?}", lines.join("; ")),
    )
}

fn criterion_7() -> Verdict {
    let t = Instant::now();
    let w = Window::new(1, 0.05).unwrap();
    let a = VectorPotential::zero(1);
    let o = BuildOptions::default_for(1);
    let set = IndexSet::new(1, 4, 24).unwrap();
    let grid = GridSpec::new(1, 8.0, 0.01).unwrap();
    let phi = Symbol::cos_xi(1, 0).unwrap();
    let patch = interior_patch(&set);
    let mut worst: f64 = 0.0;
    for psi in [sin_x_cos_xi(1), Symbol::bracket(1, -2.0).unwrap()] {
        let prod = matrix_product(&build_matrix(&phi, &a, &w, &set, &o).unwrap(), &build_matrix(&psi, &a, &w, &set, &o).unwrap()).unwrap();
        let direct = composed_elements(&phi, &psi, &a, &w, &patch, grid).unwrap();
        let mut pairs = Vec::new();
        for (i, x) in patch.iter().enumerate() {
            for (j, y) in patch.iter().enumerate() {
                pairs.push((prod.entry(x, y).unwrap(), direct[i * patch.len() + j]));
            }
        }
        worst = worst.max(normwise_rel(&pairs));
    }
    let cset = IndexSet::new(1, 3, 20).unwrap();
    let pairs = even_pairs(4);
    let r00 = compose_class_check(&phi, &sin_x_cos_xi(1), &a, &w, &cset, &o, &pairs).unwrap();
    let r02 = compose_class_check(&phi, &Symbol::bracket(1, -2.0).unwrap(), &a, &w, &cset, &o, &pairs).unwrap();
    let el = t.elapsed();
    let ok = |r: &magframe::matrix_ops::DecayReport| r.stable == Some(true) && r.constants.iter().all(|c| c.constant.is_finite());
    verdict(
        worst < 1e-3 && ok(&r00) && ok(&r02) && r00.order == 0.0 && r02.order == -2.0,
        format!(
            "product vs composition worst rel {worst:.2e}; class (0,0) stable {:?}, (0,−2) stable {:?}; {el:.2?}",
            r00.stable, r02.stable
        ),
    )
}

fn criterion_8() -> Verdict {
    let t = Instant::now();
    let mut dominated = true;
    let mut checked = 0;
    let mut min_gap = f64::INFINITY;
    let mut skipped = 0;
    let cases: Vec<(VectorPotential, IndexSet)> = vec![
        (VectorPotential::zero(1), IndexSet::new(1, 3, 10).unwrap()),
        (VectorPotential::symmetric(1.0), IndexSet::new(2, 1, 3).unwrap()),
    ];
    for (a, set) in &cases {
        let d = set.dim();
        let w = Window::new(d, 0.05).unwrap();
        for phi in [
            Symbol::one(d),
            Symbol::cos_xi(d, 0).unwrap(),
            sin_x_cos_xi(d),
            Symbol::bracket(d, -2.0).unwrap(),
            Symbol::gaussian(d, 1.0, 0.0).unwrap(),
        ] {
            let m = build_matrix(&phi, a, &w, set, &BuildOptions::default_for(d)).unwrap();
            let gap = schur_norm_bound(&m) - operator_norm_truncated(&m).unwrap();
            dominated &= gap >= 0.0;
            min_gap = min_gap.min(gap);
            checked += 1;
        }
    }
    let mut ratios = Vec::new();
    let mut stable = true;
    let trig = transversal_gauge(&MagneticField::trig(1.0, [1.0, 0.5], 0.3), 20);
    let cv_cases: Vec<(Symbol, VectorPotential, IndexSet)> = vec![
        (Symbol::cos_xi(1, 0).unwrap(), VectorPotential::zero(1), IndexSet::new(1, 3, 10).unwrap()),
        (sin_x_cos_xi(1), VectorPotential::zero(1), IndexSet::new(1, 3, 10).unwrap()),
        (Symbol::cos_xi(2, 0).unwrap(), VectorPotential::symmetric(1.0), IndexSet::new(2, 2, 4).unwrap()),
        (sin_x_cos_xi(2), trig, IndexSet::new(2, 2, 4).unwrap()),
    ];
    for (phi, a, set) in &cv_cases {
        let d = set.dim();
        let w = Window::new(d, 0.05).unwrap();
        let o = BuildOptions::default_for(d);
        let norms = cv_norms(phi, a.field()).unwrap();
        let mut r = Vec::new();
        for s in [set.clone(), set.grown(1, 1)] {
            let m = build_matrix(phi, a, &w, &s, &o).unwrap();
            let c = cv_ratio(&m, norms);
            if m.len() <= DENSE_GUARD {
                let gap = c.norm_bound - operator_norm_truncated(&m).unwrap();
                dominated &= gap >= 0.0;
                min_gap = min_gap.min(gap);
                checked += 1;
            } else {
                skipped += 1;
            }
            r.push(c.ratio);
        }
        let change = (r[1] / r[0]).max(r[0] / r[1]);
        stable &= r.iter().all(|x| x.is_finite()) && change < 2.0;
        ratios.push(format!("d={d} {:?} {}: {:.3}→{:.3}", a.tag(), phi.name(), r[0], r[1]));
    }
    let el = t.elapsed();
    verdict(
        dominated && stable,
        format!(
            "Schur ≥ SVD on {checked} matrices (min margin {min_gap:.2e}, {skipped} above the SVD size guard); ratios [{}]; {el:.2?}",
            ratios.join(", ")
        ),
    )
}

fn criterion_9() -> Verdict {
    let t = Instant::now();
    let cases: Vec<(Symbol, Observable, usize, VectorPotential, IndexSet)> = vec![
        (Symbol::sin_xi(1, 0).unwrap(), Observable::Q, 0, VectorPotential::zero(1), IndexSet::new(1, 1, 2).unwrap()),
        (Symbol::sin_x(1, 0).unwrap(), Observable::P, 0, VectorPotential::zero(1), IndexSet::new(1, 1, 2).unwrap()),
        (Symbol::sin_xi(2, 0).unwrap(), Observable::P, 1, VectorPotential::symmetric(1.0), IndexSet::new(2, 0, 1).unwrap()),
    ];
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (phi, kind, j, a, set) in &cases {
        let d = set.dim();
        let w = Window::new(d, 0.05).unwrap();
        let o = BealsOptions::default_for(d);
        let r = beals_check(phi, a, &w, *kind, *j, set, &o).unwrap();
        worst = worst.max(r.defect);
        let mut s = format!("{}{} {}: {:.2e}", kind.name(), j + 1, phi.name(), r.defect);
        if let Some(b) = a.field().constant_value() {
            // The same check with the field term's sign reversed.
            let flipped = commutator_symbol(phi, *kind, *j, &MagneticField::constant(-b)).unwrap();
            let m = build_matrix(&flipped, a, &w, set, &BuildOptions::default_for(d)).unwrap();
            let f = r.lhs.add_scaled(&m, Complex64::new(-1.0, 0.0)).unwrap().max_abs();
            s.push_str(&format!(" (reversed field sign: {f:.2e})"));
        }
        parts.push(s);
    }
    let el = t.elapsed();
    verdict(worst < 1e-3, format!("{}; {el:.2?}", parts.join(", ")))
}

fn criterion_10() -> Verdict {
    let t = Instant::now();
    let w = Window::new(1, 0.05).unwrap();
    let a = VectorPotential::zero(1);
    let o = BuildOptions::default_for(1);
    let mut ok = true;
    let mut parts = Vec::new();
    let cos_sin = Symbol::cos_xi(1, 0).unwrap().mul(&Symbol::sin_x(1, 0).unwrap()).unwrap();
    for phi in [Symbol::one(1), cos_sin] {
        let set = IndexSet::new(1, 3, 10).unwrap();
        let e0 = roundtrip_error(&phi, &build_matrix(&phi, &a, &w, &set, &o).unwrap(), &a, &w).unwrap();
        let e1 = roundtrip_error(&phi, &build_matrix(&phi, &a, &w, &set.grown(1, 1), &o).unwrap(), &a, &w).unwrap();
        ok &= e0 < 5e-2 && e1 < e0;
        parts.push(format!("{}: {e0:.2e}→{e1:.2e}", phi.name()));
    }
    let el = t.elapsed();
    verdict(ok, format!("sup error at radii (3,10)→(4,11): {}; {el:.2?}", parts.join(", ")))
}

fn criterion_11() -> Verdict {
    let t = Instant::now();
    let mut unit: f64 = 0.0;
    for (phi, b) in [
        (Symbol::gaussian(1, 1.0, 1.0).unwrap(), 0.0),
        (sin_x_cos_xi(1), 0.0),
        (Symbol::gaussian(2, 1.0, 1.0).unwrap(), 1.0),
        (sin_x_cos_xi(2), 1.0),
    ] {
        unit = unit.max(moyal_unit_defect(&phi, b).unwrap());
    }
    let g = Symbol::gaussian(1, 1.0, 1.0).unwrap();
    let w = Window::new(1, 0.05).unwrap();
    let a = VectorPotential::zero(1);
    let route = moyal_matrix_defect(&g, &g, &a, &w, &IndexSet::new(1, 3, 8).unwrap(), &BuildOptions::default_for(1)).unwrap();
    // g♯g = ½g for the Gaussian exp(−x²−ξ²).
    let mut exact: f64 = 0.0;
    for x in moyal_points(1) {
        for k in moyal_points(1) {
            let v = moyal_numeric(&g, &g, 0.0, &x[..1], &k[..1], &MoyalQuadrature::default()).unwrap();
            exact = exact.max((v - 0.5 * g.eval(&x[..1], &k[..1])).norm());
        }
    }
    let el = t.elapsed();
    verdict(
        unit < 1e-2 && route < 5e-2 && exact < 1e-8 && within(el, 600.0),
        format!("φ♯1 rel {unit:.2e}; matrix route vs oracle {route:.2e}; oracle vs ½g {exact:.2e}; {el:.2?}"),
    )
}

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn criterion_12() -> Verdict {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for sc in ["decay_d1.toml", "matrix_d2.toml"] {
        let mut reports = Vec::new();
        for workers in [1, 4] {
            let out = dir.path().join(format!("{sc}-{workers}"));
            let status = Command::new(env!("CARGO_BIN_EXE_magframe"))
                .args(["run", scenario(sc).to_str().unwrap(), "--workers", &workers.to_string(), "--out", out.to_str().unwrap()])
                .output()
                .unwrap();
            ok &= status.status.code() == Some(0);
            reports.push(std::fs::read(out.join("report.json")).unwrap_or_default());
        }
        let same = !reports[0].is_empty() && reports[0] == reports[1];
        ok &= same;
        parts.push(format!("{sc}: identical {same}"));
    }
    let el = t.elapsed();
    verdict(ok, format!("{}; {el:.2?}", parts.join(", ")))
}

#[test]
fn acceptance() {
    let criteria: [(u32, fn() -> Verdict); 12] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
        (10, criterion_10),
        (11, criterion_11),
        (12, criterion_12),
    ];
    let mut unexpected = Vec::new();
    for (id, check) in criteria {
        let v = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            verdict(false, format!("panicked: {msg}"))
        });
        let known = KNOWN_FAILURES.iter().find(|(k, _)| *k == id);
        let tag = match (v.passed, known) {
            (true, None) => "PASS",
            (false, Some(_)) => "FAIL (known)",
            (false, None) => "FAIL",
            (true, Some(_)) => "PASS (expected to fail)",
        };
        // Written past the test harness's capture so the lines always show.
        let mut err = std::io::stderr().lock();
        let _ = writeln!(err, "criterion {id:>2}: {tag}: {}", v.detail);
        if let (false, Some((_, why))) = (v.passed, known) {
            let _ = writeln!(err, "              known failure: {why}");
        }
        if v.passed == known.is_some() {
            unexpected.push(id);
        }
    }
    assert!(unexpected.is_empty(), "criteria with unexpected outcomes: {unexpected:?}");
}
