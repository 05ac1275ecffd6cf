//! Named verification suites: randomized and fixed fixtures exercising the
//! resolvent identity, the spectral characterisation, the coupling
//! theorems, the quantum-graph solvers and the closeness machinery. The
//! acceptance test target and the CLI `verify` command both run these.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::abvp::graph_abvp;
use crate::coupling::{
    edge_couple, edge_coupled_dtn, line_graph_dtn_check, star_coupling_blueprint,
    trivial_edge_blueprint, trivial_vertex_couple, verify_vertex_coupling, vertex_couple,
};
use crate::fixtures;
use crate::qgraph::{
    equilateral_spectrum, fd_oracle, neumann_spectrum, scan_secular, Method, QuantumGraph,
};
use crate::quasiiso::{closeness_sweep, trivial_limit_ids, verify_trivial_limit};
use crate::space::C64;
use crate::testutil::case_rng;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Result of one named check: the number of cases exercised, the worst
/// residual observed (scaled so that the pass threshold is meaningful per
/// suite) and the verdict.
#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub cases: usize,
    pub max_residual: f64,
    pub pass: bool,
}

impl SuiteReport {
    fn new(suite: &str, cases: usize, max_residual: f64, threshold: f64) -> Self {
        Self {
            suite: suite.to_string(),
            cases,
            max_residual,
            pass: max_residual <= threshold,
        }
    }
}

pub const SUITES: &[&str] = &[
    "krein",
    "green",
    "specrel",
    "subdivision-corollary",
    "edge-model",
    "thm314",
    "thm35",
    "prop210",
    "thm42",
];

/// Krein resolvent identity on random connected graphs with random
/// boundary sets, `|V| <= 50`, at `z` in `{-1, -2, 0.5 + i}`; pass at
/// relative residual `1e-10`.
pub fn suite_krein(seed: u64) -> SuiteReport {
    let zs = [c(-1.0, 0.0), c(-2.0, 0.0), c(0.5, 1.0)];
    let worst = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = case_rng(seed ^ 0x6b72, i);
            let g = fixtures::random_connected(&mut rng, 50, (i % 3) as usize);
            let bd = fixtures::random_boundary(&mut rng, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pi = graph_abvp(&g, &ids).expect("fixture");
            zs.iter()
                .map(|&z| pi.krein_residual(z).expect("z off both spectra"))
                .fold(0.0_f64, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    SuiteReport::new("krein", 100, worst, 1e-10)
}

/// Green's formula residual on random split graph problems; pass at
/// `1e-12` relative to the form-norm product.
pub fn suite_green(seed: u64) -> SuiteReport {
    let worst = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = case_rng(seed ^ 0x6772, i);
            let g = fixtures::random_connected(&mut rng, 30, (i % 3) as usize);
            let bd = fixtures::random_boundary(&mut rng, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pi = graph_abvp(&g, &ids).expect("fixture");
            let mut case_worst = 0.0_f64;
            for _ in 0..10 {
                let f = crate::testutil::random_vector(&mut rng, pi.space().dim());
                let gg = crate::testutil::random_vector(&mut rng, pi.space().dim());
                let r = pi.green_residual(&f, &gg).expect("split");
                let scale = (pi.h1_gram().norm(&f) * pi.h1_gram().norm(&gg)).max(1e-14);
                case_worst = case_worst.max(r / scale);
            }
            case_worst
        })
        .reduce(|| 0.0, f64::max);
    SuiteReport::new("green", 100, worst, 1e-12)
}

/// Spectral characterisation, both directions: every Neumann eigenvalue
/// off the Dirichlet set makes the DtN singular, and every located secular
/// zero matches a Neumann eigenvalue within `1e-8`.
pub fn suite_specrel(seed: u64) -> SuiteReport {
    let worst = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = case_rng(seed ^ 0x7372, i);
            let g = fixtures::random_connected(&mut rng, 50, (i % 3) as usize);
            let bd = fixtures::random_boundary(&mut rng, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pi = graph_abvp(&g, &ids).expect("fixture");
            let mut case_worst = 0.0_f64;
            // forward: each Neumann eigenvalue kills the DtN
            for &l in pi.neumann_spectrum() {
                if pi.dist_to_dirichlet(c(l, 0.0)) <= 1e-6 {
                    continue;
                }
                let (in_neu, dtn_zero) = pi.spectral_relation_check(l).expect("off Dirichlet");
                if !(in_neu && dtn_zero) {
                    case_worst = case_worst.max(1.0);
                }
            }
            // converse: locate secular zeros by branch bracketing and match
            // them against the Neumann spectrum
            let dirichlet: Vec<(f64, usize)> = merge_points(pi.dirichlet_spectrum(), 1e-9);
            let dtn = |lambda: f64| pi.dtn(c(lambda, 0.0));
            let report = scan_secular(&dtn, &dirichlet, (-0.25, 2.25), 1e-3, 1e-10, Method::Secular)
                .expect("scan");
            for p in &report.eigenvalues {
                let dist = pi
                    .neumann_spectrum()
                    .iter()
                    .map(|l| (l - p.lambda).abs())
                    .fold(f64::INFINITY, f64::min);
                case_worst = case_worst.max(dist);
            }
            case_worst
        })
        .reduce(|| 0.0, f64::max);
    SuiteReport::new("specrel", 100, worst, 1e-8)
}

fn merge_points(sorted: &[f64], tol: f64) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = Vec::new();
    for &x in sorted {
        match out.last_mut() {
            Some((x0, m)) if (x - *x0).abs() <= tol => *m += 1,
            _ => out.push((x, 1)),
        }
    }
    out
}

fn star_fixtures() -> Vec<crate::graph::Graph> {
    vec![
        fixtures::k2(),
        fixtures::cycle(3),
        fixtures::cycle(4),
        fixtures::complete(4),
        fixtures::star(3),
    ]
}

/// Vertex-coupling theorem items (kernel decoupling, Dirichlet union,
/// decoupled solutions, the two DtN routes) on the star fixtures.
pub fn criterion_vertex_coupling() -> SuiteReport {
    let zs = [c(-1.0, 0.0), c(-2.0, 0.0), c(0.5, 1.0)];
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for g in star_fixtures() {
        cases += 1;
        let (bp, param) = star_coupling_blueprint(&g).expect("blueprint");
        let coupled = vertex_couple(&bp, Some(param)).expect("coupling");
        let checks = verify_vertex_coupling(&bp, &coupled, &zs).expect("checks");
        worst = worst.max(checks.max_residual());
    }
    SuiteReport::new("vertex-coupling", cases, worst, 1e-8)
}

/// Subdivision identity: coupled Neumann spectrum equals the subdivision
/// Laplacian spectrum, plus the energy embedding `h_G(f) = 2 h_SG(f~)` on
/// random vectors (the constant validated by direct evaluation).
pub fn criterion_subdivision_identity(seed: u64) -> SuiteReport {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for g in star_fixtures() {
        cases += 1;
        let (bp, param) = star_coupling_blueprint(&g).expect("blueprint");
        let coupled = vertex_couple(&bp, Some(param)).expect("coupling");
        let spec_sg = g.subdivision().spectrum().expect("spectrum");
        let got = coupled.abvp.neumann_spectrum();
        let spec_err = if got.len() == spec_sg.len() {
            got.iter()
                .zip(&spec_sg)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        } else {
            f64::INFINITY
        };
        worst = worst.max(spec_err);
        let mut rng = case_rng(seed ^ 0x7564, cases as u64);
        let sg = g.subdivision();
        let hg = g.energy_form().expect("energy");
        let hsg = sg.energy_form().expect("energy");
        for _ in 0..100 {
            let f = crate::testutil::random_vector(&mut rng, g.vertex_count());
            let mut ftilde = nalgebra::DVector::<C64>::zeros(sg.vertex_count());
            for v in 0..g.vertex_count() {
                ftilde[v] = f[v];
            }
            for k in 0..g.edge_count() {
                ftilde[g.vertex_count() + k] = (f[g.src(k)] + f[g.dst(k)]) * 0.5;
            }
            let lhs = hg.quad(&f);
            let rhs = 2.0 * hsg.quad(&ftilde);
            worst = worst.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
        }
    }
    SuiteReport::new("subdivision-identity", cases, worst, 1e-10)
}

/// The line-graph spectral map, fitted from the assembled DtN and validated
/// against brute-force cycle and `K_4` spectra.
pub fn criterion_line_graph_map() -> SuiteReport {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for g in [
        fixtures::cycle(3),
        fixtures::cycle(4),
        fixtures::cycle(6),
        fixtures::complete(4),
    ] {
        cases += 1;
        let report = line_graph_dtn_check(&g, c(-0.7, 0.0)).expect("regular");
        worst = worst
            .max(report.fit_residual)
            .max(report.alpha_oracle_defect)
            .max(report.map_forward_err)
            .max(report.map_backward_err);
    }
    SuiteReport::new("line-graph-map", cases, worst, 1e-8)
}

/// Vertex-coupling theorem items, the subdivision identity and the
/// line-graph spectral map, grouped.
pub fn suite_subdivision_corollary(seed: u64) -> SuiteReport {
    let parts = [
        criterion_vertex_coupling(),
        criterion_subdivision_identity(seed),
        criterion_line_graph_map(),
    ];
    SuiteReport {
        suite: "subdivision-corollary".into(),
        cases: parts.iter().map(|p| p.cases).sum(),
        max_residual: parts.iter().map(|p| p.max_residual).fold(0.0, f64::max),
        pass: parts.iter().all(|p| p.pass),
    }
}

/// Trivial edge problems with standard vertex spaces reproduce the shifted
/// normalised Laplacian, `Lambda(z) = Delta_G - z`, at `1e-12`.
pub fn suite_edge_model(seed: u64) -> SuiteReport {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for g in [
        fixtures::k2(),
        fixtures::cycle(3),
        fixtures::cycle(4),
        fixtures::petersen(),
    ] {
        cases += 1;
        let (bp, param) = trivial_edge_blueprint(&g).expect("blueprint");
        let coupled = edge_couple(&bp, Some(param)).expect("coupling");
        let delta = g.normalized_laplacian().expect("laplacian");
        let mut rng = case_rng(seed ^ 0x656d, cases as u64);
        for _ in 0..20 {
            use rand::Rng;
            let z = c(rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0));
            let expected = delta.shift(z);
            let lam = coupled.abvp.dtn(z).expect("dtn");
            worst = worst.max(lam.max_abs_diff(&expected));
            let lam_blocks = edge_coupled_dtn(&bp, z).expect("blocks");
            worst = worst.max(lam_blocks.max_abs_diff(&expected));
        }
    }
    SuiteReport::new("edge-model", cases, worst, 1e-12)
}

/// Quantum-graph solvers: the free interval via the secular scan, the
/// equilateral closed form against the secular solver, the
/// finite-difference oracle with its Richardson ratio, and the
/// vector-valued shift identity.
pub fn suite_thm314(_seed: u64) -> SuiteReport {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let mut worst = 0.0_f64;

    // single edge: {0, pi^2, 4 pi^2}
    let qg = QuantumGraph::scalar(fixtures::k2(), vec![1.0]).expect("qg");
    let report = neumann_spectrum(&qg, (-1.0, 50.0), 0.02, 1e-10).expect("scan");
    let found = report.flattened();
    for target in [0.0, pi2, 4.0 * pi2] {
        let dist = found
            .iter()
            .map(|l| (l - target).abs())
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(dist / 1e-6 * 1e-8); // scale so threshold 1e-8 = 1e-6 absolute
    }

    // equilateral C4: secular vs closed form outside windows
    let g = fixtures::cycle(4);
    let qg = QuantumGraph::scalar(g.clone(), vec![1.0; 4]).expect("qg");
    let secular = neumann_spectrum(&qg, (-0.5, 20.0), 0.01, 1e-10).expect("scan");
    let closed =
        equilateral_spectrum(&g, &DMatrix::zeros(1, 1), (-0.5, 20.0)).expect("closed form");
    let closed_outside: Vec<f64> = closed
        .flattened()
        .into_iter()
        .filter(|&l| !secular.in_window(l))
        .collect();
    let secular_list = secular.flattened_outside_windows();
    if secular_list.len() != closed_outside.len() {
        worst = f64::INFINITY;
    } else {
        for (a, b) in secular_list.iter().zip(&closed_outside) {
            worst = worst.max((a - b).abs());
        }
    }

    // FD oracle: Richardson ratio in [3.5, 4.5] at the finest mesh 1/400
    let target = (std::f64::consts::PI / 2.0).powi(2);
    let e200 = (fd_oracle(&qg, 1.0 / 200.0, 3).expect("fd").eigenvalues[1] - target).abs();
    let e400 = (fd_oracle(&qg, 1.0 / 400.0, 3).expect("fd").eigenvalues[1] - target).abs();
    let ratio = e200 / e400;
    if !(3.5..=4.5).contains(&ratio) {
        worst = worst.max(1.0);
    }

    SuiteReport::new("thm314", 3, worst, 1e-8)
}

/// Vector-valued quantum graph: `K_0 = diag(0, 9)` on the equilateral
/// square gives the scalar spectrum union its shift by 9, via the secular
/// scan, the closed form and the finite-difference oracle.
pub fn suite_vector_valued() -> SuiteReport {
    let g = fixtures::cycle(4);
    let k0 = DMatrix::from_row_slice(
        2,
        2,
        &[c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(9.0, 0.0)],
    );
    let window = (-0.5, 18.0);
    let mut worst = 0.0_f64;

    // closed form: vector spectrum = scalar union shifted scalar
    let vector = equilateral_spectrum(&g, &k0, window).expect("closed");
    let scalar = equilateral_spectrum(&g, &DMatrix::zeros(1, 1), window).expect("closed");
    let scalar_shift =
        equilateral_spectrum(&g, &DMatrix::zeros(1, 1), (window.0 - 9.0, window.1 - 9.0))
            .expect("closed");
    let mut expected: Vec<f64> = scalar.flattened();
    expected.extend(scalar_shift.flattened().iter().map(|l| l + 9.0));
    expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let got = vector.flattened();
    if got.len() != expected.len() {
        worst = f64::INFINITY;
    } else {
        for (a, b) in got.iter().zip(&expected) {
            worst = worst.max((a - b).abs());
        }
    }

    // secular scan agrees with the closed form outside the Dirichlet
    // windows (the closed form excludes Dirichlet hits; the scan locates
    // embedded ones separately, checked against the oracle below)
    let qgv = QuantumGraph::equilateral(g.clone(), k0).expect("qg");
    let secular = neumann_spectrum(&qgv, window, 0.01, 1e-10).expect("scan");
    let closed_outside: Vec<f64> = vector
        .flattened()
        .into_iter()
        .filter(|&l| !secular.in_window(l))
        .collect();
    let secular_outside = secular.flattened_outside_windows();
    if secular_outside.len() != closed_outside.len() {
        worst = f64::INFINITY;
    } else {
        for (a, b) in secular_outside.iter().zip(&closed_outside) {
            worst = worst.max((a - b).abs());
        }
    }

    // FD union identity at a moderate mesh (the discrete spectra satisfy
    // it exactly)
    let qgs = QuantumGraph::scalar(g, vec![1.0; 4]).expect("qg");
    let fd_vec = fd_oracle(&qgv, 1.0 / 64.0, 6).expect("fd");
    let fd_scalar = fd_oracle(&qgs, 1.0 / 64.0, 8).expect("fd");
    let mut fd_expected: Vec<f64> = fd_scalar.eigenvalues.clone();
    fd_expected.extend(fd_scalar.eigenvalues.iter().map(|l| l + 9.0));
    fd_expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (a, b) in fd_vec.eigenvalues.iter().zip(&fd_expected) {
        worst = worst.max((a - b).abs());
    }

    // the embedded points claimed by the scan are confirmed by the oracle:
    // the FD spectrum carries matching eigenvalues near each window centre
    for p in &secular.embedded {
        let matches = fd_vec
            .eigenvalues
            .iter()
            .filter(|l| (*l - p.lambda).abs() < 5e-3)
            .count();
        if matches < p.multiplicity {
            worst = worst.max(1.0);
        }
    }

    SuiteReport::new("vector-valued", 3, worst, 1e-8)
}

/// Trivial-vertex reduction: `T Gamma = Gamma~ U^1` and `h~(U^1 f) = h(f)`
/// on random coupled vectors for the triangle and `K_4` fixtures.
pub fn suite_thm35(seed: u64) -> SuiteReport {
    let mut worst = 0.0_f64;
    let mut cases = 0;
    for g in [fixtures::cycle(3), fixtures::complete(4)] {
        cases += 1;
        let (bp, param) = trivial_edge_blueprint(&g).expect("blueprint");
        let coupled = edge_couple(&bp, Some(param)).expect("coupling");
        let tv = trivial_vertex_couple(&bp, &coupled).expect("tilde");
        let mut rng = case_rng(seed ^ 0x3335, cases as u64);
        let k = coupled.abvp.space().dim();
        for _ in 0..100 {
            let x = crate::testutil::random_vector(&mut rng, k);
            let lhs = tv.t.apply(&coupled.abvp.gamma().apply(&x));
            let rhs = tv.tilde.gamma().apply(&tv.u1.apply(&x));
            let scale = 1.0 + coupled.abvp.boundary().norm(&lhs);
            worst = worst.max(coupled.abvp.boundary().norm(&(&lhs - &rhs)) / scale);
            let hf = coupled.abvp.form().quad(&x);
            let hft = tv.tilde.form().quad(&tv.u1.apply(&x));
            worst = worst.max((hf - hft).abs() / (1.0 + hf.abs()));
        }
    }
    SuiteReport::new("thm35", cases, worst, 1e-12)
}

/// Trivial-limit identification: exact constants on the path fixture and
/// the defect inequalities on random connected graphs.
pub fn suite_prop210(seed: u64) -> SuiteReport {
    let mut worst = 0.0_f64;
    // path fixture with the constants computed by hand
    let pit = graph_abvp(&fixtures::path_amb(), &["a"]).expect("fixture");
    let tl = trivial_limit_ids(&pit, Some(1.0)).expect("trivial limit");
    worst = worst.max((tl.lambda1 - 1.0).abs());
    worst = worst.max((tl.gamma - 4.0).abs());
    worst = worst.max((tl.delta - 2.0 * 3.0_f64.sqrt()).abs());
    if !tl.mu1.is_infinite() {
        worst = f64::INFINITY;
    }
    let mut rng = case_rng(seed ^ 0x7032, 0);
    worst = worst.max(verify_trivial_limit(&tl, &pit, 200, &mut rng));

    // random connected graphs: the formula's delta certifies every inequality
    let mut cases = 1;
    let mut done = 0u64;
    let mut attempt = 0u64;
    while done < 20 && attempt < 200 {
        attempt += 1;
        let mut rng = case_rng(seed ^ 0x7032, 1000 + attempt);
        let g = fixtures::random_connected(&mut rng, 12, (attempt % 3) as usize);
        let bd = fixtures::random_boundary(&mut rng, &g);
        let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
        let pit = graph_abvp(&g, &ids).expect("fixture");
        match trivial_limit_ids(&pit, None) {
            Ok(tl) => {
                done += 1;
                cases += 1;
                worst = worst.max(verify_trivial_limit(&tl, &pit, 50, &mut rng));
            }
            Err(_) => continue,
        }
    }
    SuiteReport::new("prop210", cases, worst, 1e-10)
}

/// Coupled-closeness sweep: the measured global defect stays under the
/// theorem's bound at every perturbation size and decreases monotonically.
pub fn suite_thm42(_seed: u64) -> SuiteReport {
    let g = fixtures::cycle(3);
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let reports = match closeness_sweep(&g, &eps) {
        Ok(r) => r,
        Err(_) => return SuiteReport::new("thm42", 0, f64::INFINITY, 0.0),
    };
    let mut worst = 0.0_f64;
    let mut prev = f64::INFINITY;
    for (_, report) in &reports {
        // overshoot beyond the bound (the boundary-isomorphy components
        // vanish on these fixtures, so the total is covered too)
        worst = worst.max((report.delta_proven - report.bound).max(0.0));
        worst = worst.max((report.delta_total - report.bound).max(0.0));
        if report.delta_proven > prev + 1e-15 {
            worst = worst.max(1.0);
        }
        prev = report.delta_proven;
    }
    SuiteReport::new("thm42", eps.len(), worst, 1e-10)
}

pub fn run_suite(name: &str, seed: u64) -> Option<Vec<SuiteReport>> {
    match name {
        "krein" => Some(vec![suite_krein(seed)]),
        "green" => Some(vec![suite_green(seed)]),
        "specrel" => Some(vec![suite_specrel(seed)]),
        "subdivision-corollary" => Some(vec![suite_subdivision_corollary(seed)]),
        "edge-model" => Some(vec![suite_edge_model(seed)]),
        "thm314" => Some(vec![suite_thm314(seed), suite_vector_valued()]),
        "thm35" => Some(vec![suite_thm35(seed)]),
        "prop210" => Some(vec![suite_prop210(seed)]),
        "thm42" => Some(vec![suite_thm42(seed)]),
        "all" => {
            let mut out = Vec::new();
            for s in SUITES {
                out.extend(run_suite(s, seed).expect("known suite"));
            }
            Some(out)
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn krein_suite_passes() {
        let r = suite_krein(7);
        assert!(r.pass, "max residual {}", r.max_residual);
        assert_eq!(r.cases, 100);
    }

    #[test]
    fn green_suite_passes() {
        let r = suite_green(7);
        assert!(r.pass, "max residual {}", r.max_residual);
    }

    #[test]
    fn specrel_suite_passes() {
        let r = suite_specrel(7);
        assert!(r.pass, "max residual {}", r.max_residual);
    }

    #[test]
    fn subdivision_suite_passes() {
        let r = suite_subdivision_corollary(7);
        assert!(r.pass, "max residual {}", r.max_residual);
    }

    #[test]
    fn edge_model_suite_passes() {
        let r = suite_edge_model(7);
        assert!(r.pass, "max residual {}", r.max_residual);
    }

    #[test]
    fn thm35_suite_passes() {
        let r = suite_thm35(7);
        assert!(r.pass, "max residual {}", r.max_residual);
    }

    #[test]
    fn prop210_suite_passes() {
        let r = suite_prop210(7);
        assert!(r.pass, "max residual {}", r.max_residual);
    }

    #[test]
    fn thm42_suite_passes() {
        let r = suite_thm42(7);
        assert!(r.pass, "max residual {}", r.max_residual);
    }

    #[test]
    fn reports_are_deterministic() {
        let a = serde_json::to_string(&suite_krein(7)).unwrap();
        let b = serde_json::to_string(&suite_krein(7)).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&suite_krein(8)).unwrap();
        let _ = c;
    }
}
