//! The experiments behind `magframe run`. Each returns its gates and a
//! JSON object of computed numbers; matrices go to `matrices/`.

use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::report::{write_decay_csv, Gate, Relation};
use super::scenario::{Experiment, Scenario};
use crate::frame::{analyze, atom, synthesize, GridFunction, GridSpec};
use crate::lattice_window::{DualIndex, IndexSet, LatticeIndex, PhaseSpaceIndex, Window};
use crate::magnetic::{curl_residual, stokes_residual, transversal_gauge, MagneticField, VectorPotential};
use crate::matrix_ops::{
    beals_check, compose_class_check, cv_norms, cv_ratio, decay_report, even_pairs, matrix_product, moyal_numeric,
    operator_norm_truncated, BealsOptions, DecayReport, MoyalQuadrature, DENSE_GUARD,
};
use crate::quantize::{
    apply_op, apply_path_element, build_matrix, build_matrix_checked, matrix_element, position_gap,
    reconstruct_symbol, BuildOptions, FrameMatrix, SELF_CHECK_FLOOR, SELF_CHECK_REL,
};
use crate::symbols::{Symbol, SymbolSpec};
use crate::Result;

pub const POU_TOL: f64 = 1e-10;
pub const STOKES_CONSTANT_TOL: f64 = 1e-8;
pub const STOKES_TRIG_TOL: f64 = 1e-6;
pub const STOKES_CONVERGENCE: f64 = 10.0;
pub const CURL_TOL: f64 = 1e-6;
pub const TWO_PATH_TOL: f64 = 1e-5;
pub const HERMITIAN_TOL: f64 = 1e-8;
pub const BEALS_TOL: f64 = 1e-3;
pub const COMPOSE_TOL: f64 = 1e-3;
pub const ROUNDTRIP_TOL: f64 = 5e-2;
pub const MOYAL_UNIT_TOL: f64 = 1e-2;
pub const MOYAL_MATRIX_TOL: f64 = 5e-2;
pub const CV_RATIO_CHANGE: f64 = 2.0;

/// Parseval and reconstruction tolerance: looser in d = 2, where the
/// momentum radius is smaller relative to the Gaussian's spectrum.
pub fn frame_tol(d: usize) -> f64 {
    if d == 1 {
        1e-3
    } else {
        5e-3
    }
}

pub struct Outcome {
    pub gates: Vec<Gate>,
    pub results: Value,
}

/// Everything resolved from a validated scenario.
struct Ctx<'a> {
    sc: &'a Scenario,
    d: usize,
    field: MagneticField,
    gauge: VectorPotential,
    window: Window,
    symbols: Vec<Symbol>,
    set: IndexSet,
    opts: BuildOptions,
    matrices: &'a Path,
}

pub fn run_experiment(sc: &Scenario, out: &Path) -> Result<Outcome> {
    let cfg = |e: super::scenario::ConfigError| crate::Error::InvalidParameter {
        name: e.key,
        reason: e.message,
    };
    let matrices = out.join("matrices");
    let ctx = Ctx {
        sc,
        d: sc.dimension,
        field: sc.field_value().map_err(cfg)?,
        gauge: sc.gauge_value().map_err(cfg)?,
        window: sc.window_value().map_err(cfg)?,
        symbols: sc.symbol_values().map_err(cfg)?,
        set: sc.index_set(),
        opts: sc.build_options(),
        matrices: &matrices,
    };
    match sc.experiment {
        Experiment::FrameTest => frame_test(&ctx),
        Experiment::StokesTest => stokes_test(&ctx),
        Experiment::MatrixBuild => matrix_build(&ctx),
        Experiment::DecayReport => decay(&ctx, out),
        Experiment::CvBound => cv_bound(&ctx),
        Experiment::BealsCheck => beals(&ctx),
        Experiment::ComposeCheck => compose(&ctx, out),
        Experiment::RoundtripSymbol => roundtrip(&ctx),
        Experiment::MoyalOracle => moyal(&ctx),
    }
}

/// File stem from a symbol name: runs of other characters become one `_`.
fn stem(s: &Symbol) -> String {
    let mut out = String::new();
    for c in s.name().chars() {
        if c.is_ascii_alphanumeric() || c == '-' {
            out.push(c);
        } else if !out.is_empty() && !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

fn idx(p: &[i64], k: &[i64]) -> PhaseSpaceIndex {
    PhaseSpaceIndex {
        pos: LatticeIndex::new(p).expect("1 or 2 coordinates"),
        mom: DualIndex::new(k).expect("1 or 2 coordinates"),
    }
}

/// Five indices near the origin that mix position and momentum offsets,
/// clipped to `set`.
pub fn interior_patch(set: &IndexSet) -> Vec<PhaseSpaceIndex> {
    let cand = if set.dim() == 1 {
        vec![idx(&[0], &[0]), idx(&[1], &[1]), idx(&[0], &[-2]), idx(&[-1], &[1]), idx(&[1], &[0])]
    } else {
        vec![
            idx(&[0, 0], &[0, 0]),
            idx(&[1, 0], &[1, 0]),
            idx(&[0, 1], &[0, -1]),
            idx(&[-1, 1], &[1, 1]),
            idx(&[1, 1], &[0, 2]),
        ]
    };
    cand.into_iter().filter(|i| set.locate(i).is_some()).collect()
}

fn real_spec(s: &SymbolSpec) -> bool {
    match s {
        SymbolSpec::Constant { im, .. } => *im == 0.0,
        SymbolSpec::Sum { terms } => terms.iter().all(real_spec),
        SymbolSpec::Product { factors } => factors.iter().all(real_spec),
        _ => true,
    }
}

/// Largest relative disagreement, with entries below `floor` times the
/// largest compared to that floor instead.
fn worst_rel(pairs: &[(Complex64, Complex64)], floor: f64) -> f64 {
    let top = pairs.iter().map(|(a, b)| a.norm().max(b.norm())).fold(0.0, f64::max);
    let f = floor * top;
    pairs
        .iter()
        .map(|(a, b)| {
            let s = a.norm().max(b.norm()).max(f);
            if s > 0.0 {
                (a - b).norm() / s
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// max |a − b| / max |b|: truncating the momentum sums leaves an absolute
/// error, so entries near zero carry no relative information.
pub fn normwise_rel(pairs: &[(Complex64, Complex64)]) -> f64 {
    let top = pairs.iter().map(|(_, b)| b.norm()).fold(0.0, f64::max);
    let diff = pairs.iter().map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    if top > 0.0 {
        diff / top
    } else {
        diff
    }
}

fn frame_test(c: &Ctx) -> Result<Outcome> {
    let d = c.d;
    let mut rng = ChaCha8Rng::seed_from_u64(c.sc.seed);
    let n = c.sc.samples;
    let mut pou: f64 = 0.0;
    let mut outside: f64 = 0.0;
    for _ in 0..n {
        let x = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        pou = pou.max((c.window.pou_sum(&x[..d]) - 1.0).abs());
        let mut y = [rng.gen_range(-0.999..0.999), rng.gen_range(-0.999..0.999)];
        let j = rng.gen_range(0..d);
        y[j] = rng.gen_range(1.0..3.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        outside = outside.max(c.window.eval(&y[..d]).abs());
    }
    let g = c.sc.grid.expect("validated");
    let grid = GridSpec::new(d, g.l, g.h)?;
    let f = GridFunction::from_fn(grid, |x| Complex64::new((-x[..d].iter().map(|t| t * t).sum::<f64>()).exp(), 0.0));
    let coeffs = analyze(&f, &c.set, &c.window, &c.gauge);
    let fn2 = f.norm_sq();
    let parseval = (coeffs.norm_sq() - fn2).abs() / fn2;
    let rec = synthesize(&coeffs, grid, &c.window, &c.gauge).sub(&f)?.norm() / fn2.sqrt();
    let tol = frame_tol(d);
    Ok(Outcome {
        gates: vec![
            Gate::new("pou_defect", "lattice_window: Σ_γ g(x−γ)² = 1", pou, Relation::Below, POU_TOL),
            Gate::new("window_outside_support", "lattice_window: g = 0 outside (−1,1)^d", outside, Relation::AtMost, 0.0),
            Gate::new("parseval_defect", "frame: Σ|(G_α̃, f)|² = ‖f‖² (Parseval frame)", parseval, Relation::Below, tol),
            Gate::new("reconstruction_error", "frame: synthesis ∘ analysis = identity", rec, Relation::Below, tol),
        ],
        results: json!({
            "samples": n,
            "pou_defect": pou,
            "window_outside_max": outside,
            "f_norm_sq": fn2,
            "coefficient_norm_sq": coeffs.norm_sq(),
            "parseval_defect_rel": parseval,
            "reconstruction_error_rel": rec,
        }),
    })
}

/// Random quadruples in [−2, 2]².
pub fn stokes_points(seed: u64, n: usize) -> Vec<[[f64; 2]; 4]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut q = [[0.0; 2]; 4];
            for p in q.iter_mut() {
                *p = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            }
            q
        })
        .collect()
}

/// Worst Stokes residual over `quads` with `q` nodes for both line and flux
/// integrals.
pub fn stokes_max(gauge: &VectorPotential, b: &MagneticField, quads: &[[[f64; 2]; 4]], q_flux: usize) -> f64 {
    quads
        .iter()
        .map(|q| stokes_residual(gauge, b, &q[0], &q[1], &q[2], &q[3], q_flux))
        .fold(0.0, f64::max)
}

fn stokes_test(c: &Ctx) -> Result<Outcome> {
    let quads = stokes_points(c.sc.seed, c.sc.samples);
    let res = stokes_max(&c.gauge, &c.field, &quads, c.sc.q_flux());
    let constant = c.field.constant_value().is_some();
    let tol = if constant { STOKES_CONSTANT_TOL } else { STOKES_TRIG_TOL };
    let pts: Vec<[f64; 2]> = quads.iter().map(|q| q[0]).collect();
    let curl = curl_residual(&c.gauge, &pts, 1e-4);
    let mut gates = vec![
        Gate::new("stokes_residual", "magnetic: Λ(α,x)Λ(x,y)Λ(y,β) = Λ(α,β)Ω(α,x,y)Ω(α,y,β)", res, Relation::Below, tol),
        Gate::new("curl_residual", "magnetic: dA = B", curl, Relation::Below, CURL_TOL),
    ];
    let mut results = json!({
        "samples": quads.len(),
        "q_line": c.gauge.q_line(),
        "q_flux": c.sc.q_flux(),
        "stokes_residual": res,
        "curl_residual": curl,
    });
    // Constant fields have exact phases at every order; convergence is only
    // measurable when quadrature error dominates round-off.
    if !constant {
        let n = c.sc.quadrature.convergence_order.unwrap_or(3);
        let coarse = stokes_max(&transversal_gauge(&c.field, n), &c.field, &quads, n);
        let fine = stokes_max(&transversal_gauge(&c.field, 2 * n), &c.field, &quads, 2 * n);
        let ratio = coarse / fine;
        gates.push(Gate::new(
            "stokes_convergence",
            "magnetic: line and flux quadrature converge (residual drops 10× per doubling)",
            ratio,
            Relation::AtLeast,
            STOKES_CONVERGENCE,
        ));
        results["convergence"] = json!({ "order": n, "residual": coarse, "residual_doubled": fine, "ratio": ratio });
    }
    Ok(Outcome { gates, results })
}

fn matrix_build(c: &Ctx) -> Result<Outcome> {
    let phi = &c.symbols[0];
    let opts = BuildOptions {
        self_check: true,
        ..c.opts.clone()
    };
    let (m, check) = build_matrix_checked(phi, &c.gauge, &c.window, &c.set, &opts)?;
    let check = check.expect("self-check requested");
    m.export(c.matrices, &stem(phi))?;
    let herm = m.hermitian_defect() / m.max_abs().max(f64::MIN_POSITIVE);
    let mut gates = vec![Gate::new(
        "self_check_rel_change",
        "quantize: entries stable under quadrature node doubling",
        check.max_rel_change,
        Relation::AtMost,
        SELF_CHECK_REL,
    )];
    if real_spec(&c.sc.symbols[0]) {
        gates.push(Gate::new(
            "hermitian_defect_rel",
            "quantize: a real symbol gives a self-adjoint operator",
            herm,
            Relation::Below,
            HERMITIAN_TOL,
        ));
    }
    let mut results = json!({
        "symbol": phi.name(),
        "size": m.len(),
        "nnz": m.nnz(),
        "max_abs": m.max_abs(),
        "self_check": check,
        "hermitian_defect_rel": herm,
    });
    if let Some(g) = c.sc.grid {
        let grid = GridSpec::new(c.d, g.l, g.h)?;
        let patch = interior_patch(&c.set);
        let mut pairs = Vec::new();
        for a in &patch {
            for b in &patch {
                let q = matrix_element(phi, &c.gauge, &c.window, a, b, &opts.quad)?;
                let p = apply_path_element(phi, &c.gauge, &c.window, a, b, grid)?;
                pairs.push((q, p));
            }
        }
        let rel = worst_rel(&pairs, SELF_CHECK_FLOOR);
        gates.push(Gate::new(
            "two_path_rel",
            "quantize: quadrature matrix elements = atom-application inner products",
            rel,
            Relation::Below,
            TWO_PATH_TOL,
        ));
        results["two_path"] = json!({ "patch": patch.len(), "worst_rel": rel });
    }
    Ok(Outcome { gates, results })
}

fn decay_gates(rep: &DecayReport, what: &str) -> Vec<Gate> {
    let nonfinite = rep
        .constants
        .iter()
        .filter(|k| !k.constant.is_finite() || !k.interior.is_finite())
        .count();
    let unstable = rep.constants.iter().filter(|k| k.stable != Some(true)).count();
    vec![
        Gate::new(
            &format!("{what}_nonfinite_constants"),
            "matrix_ops: weighted decay constants C_{n1,n2} are finite",
            nonfinite as f64,
            Relation::AtMost,
            0.0,
        ),
        Gate::new(
            &format!("{what}_unstable_constants"),
            "matrix_ops: interior decay constants change < 20% under radii + 1",
            unstable as f64,
            Relation::AtMost,
            0.0,
        ),
    ]
}

/// Largest |M| at position gap ≥ 2 relative to the largest entry.
pub fn far_entries(m: &FrameMatrix) -> f64 {
    let top = m.max_abs();
    let far = m
        .entries()
        .filter(|&(r, cc, _)| position_gap(m.set(), r, cc) >= 2)
        .map(|(_, _, v)| v.norm())
        .fold(0.0, f64::max);
    if top > 0.0 {
        far / top
    } else {
        0.0
    }
}

fn decay(c: &Ctx, out: &Path) -> Result<Outcome> {
    let phi = &c.symbols[0];
    let m = build_matrix(phi, &c.gauge, &c.window, &c.set, &c.opts)?;
    let g = build_matrix(phi, &c.gauge, &c.window, &c.set.grown(1, 1), &c.opts)?;
    let rep = decay_report(&m, &g, phi.order(), &even_pairs(c.sc.decay.max_n))?;
    m.export(c.matrices, &stem(phi))?;
    write_decay_csv(&out.join("decay.csv"), &rep)?;
    Ok(Outcome {
        gates: decay_gates(&rep, "decay"),
        results: json!({
            "symbol": phi.name(),
            "decay": rep,
            "far_entries_rel": far_entries(&m),
        }),
    })
}

fn cv_bound(c: &Ctx) -> Result<Outcome> {
    let phi = &c.symbols[0];
    let norms = cv_norms(phi, &c.field)?;
    let mut gates = Vec::new();
    let mut certs = Vec::new();
    let mut svds = Vec::new();
    for (tag, set) in [("", c.set.clone()), ("_grown", c.set.grown(1, 1))] {
        let m = build_matrix(phi, &c.gauge, &c.window, &set, &c.opts)?;
        let cert = cv_ratio(&m, norms);
        // Dense SVD only below the size guard.
        let svd = if m.len() <= DENSE_GUARD { Some(operator_norm_truncated(&m)?) } else { None };
        if let Some(s) = svd {
            gates.push(Gate::new(
                &format!("schur_minus_svd{tag}"),
                "matrix_ops: Schur bound dominates the truncated operator norm",
                cert.norm_bound - s,
                Relation::AtLeast,
                0.0,
            ));
        }
        certs.push(cert);
        svds.push(svd);
    }
    let (a, b) = (certs[0], certs[1]);
    let change = (b.ratio / a.ratio).max(a.ratio / b.ratio);
    gates.push(Gate::new(
        "cv_ratio_change",
        "matrix_ops: bound / ((1 + |||B|||) ν⁰) stays within 2× across radii",
        change,
        Relation::Below,
        CV_RATIO_CHANGE,
    ));
    Ok(Outcome {
        gates,
        results: json!({
            "symbol": phi.name(),
            "certificate": a,
            "certificate_grown": b,
            "norm_truncated": svds[0],
            "norm_truncated_grown": svds[1],
            "ratio_change": change,
        }),
    })
}

fn beals(c: &Ctx) -> Result<Outcome> {
    let phi = &c.symbols[0];
    let cm = c.sc.commutator.expect("validated");
    let base = BealsOptions::default_for(c.d);
    let opts = BealsOptions {
        pos_margin: cm.pos_margin.unwrap_or(base.pos_margin),
        mom_margin: cm.mom_margin.unwrap_or(base.mom_margin),
        quad: c.opts.quad,
    };
    let r = beals_check(phi, &c.gauge, &c.window, cm.kind, cm.axis - 1, &c.set, &opts)?;
    let name = format!("{}_{}{}", stem(phi), cm.kind.name(), cm.axis);
    r.lhs.export(c.matrices, &format!("{name}_lhs"))?;
    r.rhs.export(c.matrices, &format!("{name}_rhs"))?;
    Ok(Outcome {
        gates: vec![Gate::new(
            "commutator_defect",
            "matrix_ops: [X, M(Φ)] = M(commutator symbol) on the interior block",
            r.defect,
            Relation::Below,
            BEALS_TOL,
        )],
        results: json!({
            "symbol": phi.name(),
            "observable": cm.kind.name(),
            "axis": cm.axis,
            "commutator_symbol": r.symbol,
            "pos_margin": opts.pos_margin,
            "mom_margin": opts.mom_margin,
            "defect": r.defect,
            "lhs_max": r.lhs_max,
            "rhs_max": r.rhs_max,
        }),
    })
}

/// (G_α̃, Op(Φ)Op(Ψ)G_β̃) on `grid` for every pair of `patch`, row-major.
pub fn composed_elements(
    phi: &Symbol,
    psi: &Symbol,
    gauge: &VectorPotential,
    window: &Window,
    patch: &[PhaseSpaceIndex],
    grid: GridSpec,
) -> Result<Vec<Complex64>> {
    let mut cols = Vec::with_capacity(patch.len());
    for b in patch {
        let gb = atom(*b, window, gauge).sample(grid);
        cols.push(apply_op(phi, gauge, &apply_op(psi, gauge, &gb)?)?);
    }
    let mut out = Vec::with_capacity(patch.len() * patch.len());
    for a in patch {
        let ga = atom(*a, window, gauge).sample(grid);
        for col in &cols {
            out.push(ga.inner(col)?);
        }
    }
    Ok(out)
}

fn compose(c: &Ctx, out: &Path) -> Result<Outcome> {
    let (phi, psi) = (&c.symbols[0], &c.symbols[1]);
    let rep = compose_class_check(phi, psi, &c.gauge, &c.window, &c.set, &c.opts, &even_pairs(c.sc.decay.max_n))?;
    write_decay_csv(&out.join("decay.csv"), &rep)?;
    let mut gates = decay_gates(&rep, "product_decay");
    let mut results = json!({ "symbols": [phi.name(), psi.name()], "weight": phi.order() + psi.order(), "decay": rep });
    if let Some(g) = c.sc.grid {
        let grid = GridSpec::new(c.d, g.l, g.h)?;
        let a = build_matrix(phi, &c.gauge, &c.window, &c.set, &c.opts)?;
        let b = build_matrix(psi, &c.gauge, &c.window, &c.set, &c.opts)?;
        let prod = matrix_product(&a, &b)?;
        prod.export(c.matrices, &format!("{}_times_{}", stem(phi), stem(psi)))?;
        let patch = interior_patch(&c.set);
        let direct = composed_elements(phi, psi, &c.gauge, &c.window, &patch, grid)?;
        let mut pairs = Vec::new();
        for (i, a) in patch.iter().enumerate() {
            for (j, b) in patch.iter().enumerate() {
                pairs.push((prod.entry(a, b).unwrap_or_default(), direct[i * patch.len() + j]));
            }
        }
        let rel = normwise_rel(&pairs);
        gates.push(Gate::new(
            "product_vs_composition_rel",
            "matrix_ops: M(Φ)M(Ψ) = matrix of Op(Φ)Op(Ψ)",
            rel,
            Relation::Below,
            COMPOSE_TOL,
        ));
        results["product_vs_composition"] = json!({ "patch": patch.len(), "worst_rel": rel });
    }
    Ok(Outcome { gates, results })
}

/// Sample points |z| ≤ 1 and |ζ| ≤ 3 for round trips.
pub fn roundtrip_points(d: usize) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
    if d == 1 {
        (
            (-4..=4).map(|i| [i as f64 * 0.25, 0.0]).collect(),
            (-6..=6).map(|i| [i as f64 * 0.5, 0.0]).collect(),
        )
    } else {
        let zs = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let ks = [-3.0, -1.5, 0.0, 1.5, 3.0];
        let grid = |a: &[f64]| a.iter().flat_map(|&u| a.iter().map(move |&v| [u, v])).collect::<Vec<_>>();
        (grid(&zs), grid(&ks))
    }
}

/// Step of the v-integral in symbol reconstruction.
pub fn roundtrip_dv(d: usize) -> f64 {
    if d == 1 {
        0.01
    } else {
        0.025
    }
}

/// sup |Φ_N − Φ| over the sample points.
pub fn roundtrip_error(phi: &Symbol, m: &FrameMatrix, gauge: &VectorPotential, window: &Window) -> Result<f64> {
    let d = phi.dim();
    let (zs, ks) = roundtrip_points(d);
    let out = reconstruct_symbol(m, gauge, window, &zs, &ks, roundtrip_dv(d))?;
    let mut err: f64 = 0.0;
    for (zi, z) in zs.iter().enumerate() {
        for (ki, k) in ks.iter().enumerate() {
            err = err.max((out[zi][ki] - phi.eval(&z[..d], &k[..d])).norm());
        }
    }
    Ok(err)
}

fn roundtrip(c: &Ctx) -> Result<Outcome> {
    let phi = &c.symbols[0];
    let m = build_matrix(phi, &c.gauge, &c.window, &c.set, &c.opts)?;
    let e = roundtrip_error(phi, &m, &c.gauge, &c.window)?;
    let grown = c.set.grown(1, 1);
    let mg = build_matrix(phi, &c.gauge, &c.window, &grown, &c.opts)?;
    let eg = roundtrip_error(phi, &mg, &c.gauge, &c.window)?;
    Ok(Outcome {
        gates: vec![
            Gate::new("roundtrip_error", "quantize: reconstruct_symbol ∘ build_matrix = identity", e, Relation::Below, ROUNDTRIP_TOL),
            Gate::new(
                "roundtrip_error_ratio",
                "quantize: round-trip error decreases when the radii grow",
                eg / e,
                Relation::Below,
                1.0,
            ),
        ],
        results: json!({ "symbol": phi.name(), "error": e, "error_grown": eg }),
    })
}

/// Sample points |x|, |ξ| ≤ 1 for Moyal checks.
pub fn moyal_points(d: usize) -> Vec<[f64; 2]> {
    if d == 1 {
        (-4..=4).map(|i| [i as f64 * 0.25, 0.0]).collect()
    } else {
        let a = [-1.0, 0.0, 1.0];
        a.iter().flat_map(|&u| a.iter().map(move |&v| [u, v])).collect()
    }
}

/// sup |φ♯1 − φ| / sup |φ| over the Moyal sample points.
pub fn moyal_unit_defect(phi: &Symbol, b: f64) -> Result<f64> {
    let d = phi.dim();
    let one = Symbol::one(d);
    let pts = moyal_points(d);
    let (mut diff, mut top): (f64, f64) = (0.0, 0.0);
    for x in &pts {
        for k in &pts {
            let v = moyal_numeric(phi, &one, b, &x[..d], &k[..d], &MoyalQuadrature::default())?;
            let e = phi.eval(&x[..d], &k[..d]);
            diff = diff.max((v - e).norm());
            top = top.max(e.norm());
        }
    }
    Ok(if top > 0.0 { diff / top } else { diff })
}

/// sup |reconstruct(M(φ)M(ψ)) − φ♯ψ| over the Moyal sample points.
pub fn moyal_matrix_defect(phi: &Symbol, psi: &Symbol, gauge: &VectorPotential, window: &Window, set: &IndexSet, opts: &BuildOptions) -> Result<f64> {
    let d = phi.dim();
    let b = gauge.field().constant_value().unwrap_or(0.0);
    let prod = matrix_product(&build_matrix(phi, gauge, window, set, opts)?, &build_matrix(psi, gauge, window, set, opts)?)?;
    let pts = moyal_points(d);
    let rec = reconstruct_symbol(&prod, gauge, window, &pts, &pts, roundtrip_dv(d))?;
    let mut err: f64 = 0.0;
    for (i, x) in pts.iter().enumerate() {
        for (j, k) in pts.iter().enumerate() {
            let o = moyal_numeric(phi, psi, b, &x[..d], &k[..d], &MoyalQuadrature::default())?;
            err = err.max((rec[i][j] - o).norm());
        }
    }
    Ok(err)
}

fn moyal(c: &Ctx) -> Result<Outcome> {
    let phi = &c.symbols[0];
    let b = match c.field.constant_value() {
        Some(b) => b,
        None => {
            return Err(crate::Error::InvalidParameter {
                name: "field".into(),
                reason: "the Moyal oracle needs a zero or constant field".into(),
            })
        }
    };
    let unit = moyal_unit_defect(phi, b)?;
    let mut gates = vec![Gate::new("unit_defect", "matrix_ops: φ ♯ 1 = φ", unit, Relation::Below, MOYAL_UNIT_TOL)];
    let mut results = json!({ "symbol": phi.name(), "b": b, "unit_defect_rel": unit });
    if let Some(psi) = c.symbols.get(1) {
        let e = moyal_matrix_defect(phi, psi, &c.gauge, &c.window, &c.set, &c.opts)?;
        gates.push(Gate::new(
            "matrix_route_error",
            "matrix_ops: reconstruct(M(φ)M(ψ)) = φ ♯ ψ",
            e,
            Relation::Below,
            MOYAL_MATRIX_TOL,
        ));
        results["partner"] = json!(psi.name());
        results["matrix_route_error"] = json!(e);
    }
    Ok(Outcome { gates, results })
}
