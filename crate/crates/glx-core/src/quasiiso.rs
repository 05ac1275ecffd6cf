//! Quantitative distances between boundary value problems: closeness of
//! energy forms and boundary maps, quasi-unitary equivalence and
//! quasi-isomorphy defects, the trivial-limit identification with its
//! explicit defect constant, smoothing operators for coupled families and
//! the closeness theorem for vertex-coupled problems.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::abvp::{Abvp, AbvpError};
use crate::coupling::{vertex_couple, CouplingError, VertexCoupled, VertexCouplingBlueprint};
use crate::space::{pairing_norm, GramForm, LinOp, SpaceError, WeightedSpace, C64};

#[derive(Debug, Error)]
pub enum QuasiError {
    #[error("0 is not a simple isolated eigenvalue: {0}")]
    ZeroNotSimple(String),
    #[error("boundary-map estimate fails for every tried a in {0:?}")]
    BdMapEstimateFails(Vec<f64>),
    #[error("smoothing hypothesis fails: {0}")]
    HypothesisFails(String),
    #[error("smallness of the smoothing terms fails: kappa = {kappa:.3e} > cap {cap:.3e}")]
    SmallnessFails { kappa: f64, cap: f64 },
    #[error(transparent)]
    Abvp(#[from] AbvpError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Coupling(#[from] CouplingError),
}

/// The six identification operators between two problems `Pi` and `Pi~`:
/// `J : H -> H~`, `J' : H~ -> H`, the form-level `J^1`, `J'^1`, and the
/// boundary maps `I : G -> G~`, `I' : G~ -> G`. No adjointness between `I`
/// and `I'` is assumed.
#[derive(Clone, Debug)]
pub struct IdentificationSet {
    pub j: LinOp,
    pub jp: LinOp,
    pub j1: LinOp,
    pub jp1: LinOp,
    pub i: LinOp,
    pub ip: LinOp,
}

impl IdentificationSet {
    /// Identity identification between two problems on the same spaces.
    pub fn identity(pi: &Abvp) -> Self {
        let j = LinOp::identity(pi.space());
        let i = LinOp::identity(pi.boundary());
        Self {
            j: j.clone(),
            jp: j.clone(),
            j1: j.clone(),
            jp1: j,
            i: i.clone(),
            ip: i,
        }
    }
}

/// Smallest `delta` with `|h~(J^1 f, u) - h(f, J'^1 u)| <= delta |f|_{H^1} |u|_{H~^1}`.
pub fn delta_forms(pi: &Abvp, pit: &Abvp, ids: &IdentificationSet) -> f64 {
    let n = pit.form().coeffs() * ids.j1.coeffs()
        - ids.jp1.coeffs().adjoint() * pi.form().coeffs();
    pairing_norm(&n, pi.h1_gram(), pit.h1_gram()).expect("form norms definite")
}

/// Smallest constants of `|(I Gamma - Gamma~ J^1) f| <= delta |f|_{H^1}` and
/// its mirror.
pub fn delta_bdmaps(pi: &Abvp, pit: &Abvp, ids: &IdentificationSet) -> (f64, f64) {
    let fwd = ids
        .i
        .compose(pi.gamma())
        .sub(&pit.gamma().compose(&ids.j1));
    let bwd = ids
        .ip
        .compose(pit.gamma())
        .sub(&pi.gamma().compose(&ids.jp1));
    (
        fwd.opnorm(pi.h1_gram(), &pit.boundary().gram())
            .expect("definite"),
        bwd.opnorm(pit.h1_gram(), &pi.boundary().gram())
            .expect("definite"),
    )
}

/// The five quasi-unitarity defects: duality of `(J, J')` in the plain
/// norms, `1 - J'J` and `1 - JJ'` in form-to-plain norms, and the
/// form-level corrections `J^1 - J`, `J'^1 - J'`.
pub fn quasi_unitary_defects(pi: &Abvp, pit: &Abvp, ids: &IdentificationSet) -> [f64; 5] {
    let w = pi.space().gram();
    let wt = pit.space().gram();
    let n = wt.coeffs() * ids.j.coeffs() - ids.jp.coeffs().adjoint() * w.coeffs();
    let duality = pairing_norm(&n, &w, &wt).expect("plain norms definite");
    let jj = LinOp::identity(pi.space()).sub(&ids.jp.compose(&ids.j));
    let jjp = LinOp::identity(pit.space()).sub(&ids.j.compose(&ids.jp));
    [
        duality,
        jj.opnorm(pi.h1_gram(), &w).expect("definite"),
        jjp.opnorm(pit.h1_gram(), &wt).expect("definite"),
        ids.j1
            .sub(&ids.j)
            .opnorm(pi.h1_gram(), &wt)
            .expect("definite"),
        ids.jp1
            .sub(&ids.jp)
            .opnorm(pit.h1_gram(), &w)
            .expect("definite"),
    ]
}

pub fn delta_quasi_unitary(pi: &Abvp, pit: &Abvp, ids: &IdentificationSet) -> f64 {
    quasi_unitary_defects(pi, pit, ids)
        .into_iter()
        .fold(0.0, f64::max)
}

/// Boundary quasi-isomorphy defects `|phi - I'I phi| <= delta |phi|_{G^{1/2}}`
/// and the tilded counterpart, measured in the `l_{-1}` form norms.
pub fn delta_boundary_iso(pi: &Abvp, pit: &Abvp, ids: &IdentificationSet) -> (f64, f64) {
    let fwd = LinOp::identity(pi.boundary()).sub(&ids.ip.compose(&ids.i));
    let bwd = LinOp::identity(pit.boundary()).sub(&ids.i.compose(&ids.ip));
    (
        fwd.opnorm(pi.boundary_half_gram(), &pi.boundary().gram())
            .expect("l_{-1} definite"),
        bwd.opnorm(pit.boundary_half_gram(), &pit.boundary().gram())
            .expect("l_{-1} definite"),
    )
}

/// All measured defects of a pair of problems under an identification set.
#[derive(Clone, Debug, Serialize)]
pub struct ClosenessReport {
    pub delta_forms: f64,
    pub delta_bd_map_fwd: f64,
    pub delta_bd_map_bwd: f64,
    pub delta_qu: f64,
    pub delta_bd_iso_fwd: f64,
    pub delta_bd_iso_bwd: f64,
    pub delta_total: f64,
}

pub fn closeness_report(pi: &Abvp, pit: &Abvp, ids: &IdentificationSet) -> ClosenessReport {
    let delta_forms = delta_forms(pi, pit, ids);
    let (delta_bd_map_fwd, delta_bd_map_bwd) = delta_bdmaps(pi, pit, ids);
    let delta_qu = delta_quasi_unitary(pi, pit, ids);
    let (delta_bd_iso_fwd, delta_bd_iso_bwd) = delta_boundary_iso(pi, pit, ids);
    let delta_total = delta_forms
        .max(delta_bd_map_fwd)
        .max(delta_bd_map_bwd)
        .max(delta_qu)
        .max(delta_bd_iso_fwd)
        .max(delta_bd_iso_bwd);
    ClosenessReport {
        delta_forms,
        delta_bd_map_fwd,
        delta_bd_map_bwd,
        delta_qu,
        delta_bd_iso_fwd,
        delta_bd_iso_bwd,
        delta_total,
    }
}

/// The trivial-limit identification: constants and maps relating a problem
/// whose Neumann operator has `0` as simple isolated eigenvalue to the
/// trivial problem `(id, C, 0, C, C)`.
pub struct TrivialLimit {
    pub trivial: Abvp,
    pub ids: IdentificationSet,
    pub lambda1: f64,
    pub gamma: f64,
    /// distance of `spec Lambda~(0) \ {0}` to zero; infinite when empty.
    pub mu1: f64,
    pub a: f64,
    pub delta: f64,
}

/// Build the trivial-limit identification for `pit`. `a` must satisfy
/// `|Gamma~ u|^2 <= a h~(u) + (2/a) |u|^2`; when `None`, the smallest of
/// `{1, 0.5, 0.1}` that passes the semidefiniteness test is used.
pub fn trivial_limit_ids(pit: &Abvp, a: Option<f64>) -> Result<TrivialLimit, QuasiError> {
    let spec = pit.neumann_spectrum();
    if spec.is_empty() || spec[0].abs() > 1e-10 {
        return Err(QuasiError::ZeroNotSimple(format!(
            "smallest Neumann eigenvalue {:?} is not 0",
            spec.first()
        )));
    }
    if spec.len() < 2 || spec[1] <= 1e-10 {
        return Err(QuasiError::ZeroNotSimple(format!(
            "no spectral gap above 0 (next eigenvalue {:?})",
            spec.get(1)
        )));
    }
    let lambda1 = spec[1];
    let eig = pit.neumann().eigh().expect("self-adjoint");
    let phi0 = DVector::from_column_slice(eig.vectors.column(0).as_slice());
    let psi0 = pit.gamma().apply(&phi0);
    let psi0_norm = pit.boundary().norm(&psi0);
    if psi0_norm <= 1e-12 {
        return Err(QuasiError::ZeroNotSimple(
            "the ground state has vanishing trace".into(),
        ));
    }
    let gamma = psi0_norm.powi(-2);

    // boundary-map estimate: a h~ + (2/a) W~ - Gamma~^H W_G Gamma~ >= 0
    let candidates: Vec<f64> = match a {
        Some(x) => vec![x],
        None => vec![0.1, 0.5, 1.0],
    };
    let wg = pit.boundary().weight_matrix();
    let test = |a: f64| -> bool {
        let m = pit.form().coeffs().map(|x| x * a)
            + pit.space().weight_matrix().map(|x| x * (2.0 / a))
            - pit.gamma().coeffs().adjoint() * &wg * pit.gamma().coeffs();
        let (eigs, _) = crate::space::hermitian_eigen(&m);
        eigs.first().copied().unwrap_or(0.0) >= -1e-10 * (1.0 + m.norm())
    };
    let a = candidates
        .iter()
        .copied()
        .find(|&x| test(x))
        .ok_or_else(|| QuasiError::BdMapEstimateFails(candidates.clone()))?;

    // mu_1 = dist(spec Lambda~(0) \ {0}, 0), +infinity when that set is empty
    let lam0 = pit.dtn(C64::new(0.0, 0.0))?;
    let lam_eigs = lam0.eigh().expect("Hermitian at real z").eigenvalues;
    let zero_tol = 1e-10 * (1.0 + lam0.frobenius());
    let mu1 = lam_eigs
        .iter()
        .map(|x| x.abs())
        .filter(|&x| x > zero_tol)
        .fold(f64::INFINITY, f64::min);

    let delta = (1.0 / mu1.sqrt())
        .max((1.0 / psi0_norm) * (a + 2.0 / (a * lambda1)).sqrt())
        .max(1.0 / lambda1.sqrt());

    // the trivial problem and the identification maps
    let c_space = WeightedSpace::unweighted(1, "C");
    let trivial = Abvp::trivial(c_space.clone(), GramForm::zero(c_space.clone()));
    let j = LinOp::new(
        c_space.clone(),
        pit.space().clone(),
        DMatrix::from_fn(pit.space().dim(), 1, |i, _| phi0[i]),
    )
    .expect("shape");
    let i = LinOp::new(
        c_space,
        pit.boundary().clone(),
        DMatrix::from_fn(pit.boundary().dim(), 1, |k, _| psi0[k]),
    )
    .expect("shape");
    let jp = j.adjoint();
    let ip = i.adjoint().scale(C64::new(gamma, 0.0));
    let ids = IdentificationSet {
        j: j.clone(),
        jp: jp.clone(),
        j1: j,
        jp1: jp,
        i,
        ip,
    };
    Ok(TrivialLimit {
        trivial,
        ids,
        lambda1,
        gamma,
        mu1,
        a,
        delta,
    })
}

/// Literal re-check of every defect inequality of the definitions on random
/// vectors, with the budget `delta`. Returns the worst ratio overshoot
/// (0 when every inequality holds).
pub fn verify_trivial_limit(
    tl: &TrivialLimit,
    pit: &Abvp,
    vectors: usize,
    rng: &mut impl rand::Rng,
) -> f64 {
    let pi = &tl.trivial;
    let ids = &tl.ids;
    let delta = tl.delta;
    let mut worst = 0.0_f64;
    let mut record = |lhs: f64, budget: f64| {
        if budget > 1e-14 {
            worst = worst.max(lhs / budget - delta);
        } else {
            worst = worst.max(lhs);
        }
    };
    for _ in 0..vectors {
        let f = crate::testutil::random_vector(rng, pi.space().dim());
        let u = crate::testutil::random_vector(rng, pit.space().dim());
        let phi = crate::testutil::random_vector(rng, pi.boundary().dim());
        let psi = crate::testutil::random_vector(rng, pit.boundary().dim());
        let f_h = pi.space().norm(&f);
        let f_h1 = pi.h1_gram().norm(&f);
        let u_h = pit.space().norm(&u);
        let u_h1 = pit.h1_gram().norm(&u);

        let duality = (pit.space().inner(&ids.j.apply(&f), &u)
            - pi.space().inner(&f, &ids.jp.apply(&u)))
        .norm();
        record(duality, f_h * u_h);
        let jjf = &f - ids.jp.apply(&ids.j.apply(&f));
        record(pi.space().norm(&jjf), f_h1);
        let jju = &u - ids.j.apply(&ids.jp.apply(&u));
        record(pit.space().norm(&jju), u_h1);
        let d4 = ids.j1.apply(&f) - ids.j.apply(&f);
        record(pit.space().norm(&d4), f_h1);
        let d5 = ids.jp1.apply(&u) - ids.jp.apply(&u);
        record(pi.space().norm(&d5), u_h1);

        let forms = (pit.form().eval(&ids.j1.apply(&f), &u)
            - pi.form().eval(&f, &ids.jp1.apply(&u)))
        .norm();
        record(forms, f_h1 * u_h1);

        let bd_fwd = ids.i.apply(&pi.gamma().apply(&f)) - pit.gamma().apply(&ids.j1.apply(&f));
        record(pit.boundary().norm(&bd_fwd), f_h1);
        let bd_bwd = ids.ip.apply(&pit.gamma().apply(&u)) - pi.gamma().apply(&ids.jp1.apply(&u));
        record(pi.boundary().norm(&bd_bwd), u_h1);

        let iso_fwd = &phi - ids.ip.apply(&ids.i.apply(&phi));
        record(
            pi.boundary().norm(&iso_fwd),
            pi.boundary_half_gram().norm(&phi),
        );
        let iso_bwd = &psi - ids.i.apply(&ids.ip.apply(&psi));
        record(
            pit.boundary().norm(&iso_bwd),
            pit.boundary_half_gram().norm(&psi),
        );
    }
    worst
}

/// Smoothing operator on the decoupled space of a vertex coupling:
/// `f - Bf` satisfies the trace-matching constraints for every `f`.
pub struct SmoothingOp {
    pub op: LinOp,
    /// `((edge, vertex), chi_{e,v})` lifts used to build the operator.
    pub lifts: Vec<((usize, usize), LinOp)>,
    /// `C^2 = sup_v sum_{e in E_v} |chi_{e,v}|^2` (plain boundary norm to
    /// form norm).
    pub constant: f64,
}

/// Build the smoothing operator from the Dirichlet solution lifts
/// `chi_{e,v} = S_v(-1) pi*_{v,e}`. Requires the trace identities
/// `Gamma_{v,e} chi_{e,v} = id` and `Gamma_{v,e} chi_{e',v} = 0` (maximal
/// couplings with coordinate traces satisfy them); they are verified
/// numerically at `1e-10`.
pub fn smoothing_from_solutions(
    bp: &VertexCouplingBlueprint,
) -> Result<SmoothingOp, QuasiError> {
    let g = &bp.graph;
    let mut lifts = Vec::new();
    let minus_one = C64::new(-1.0, 0.0);
    for v in 0..g.vertex_count() {
        let s_v = bp.vertex_abvps[v].solution_operator(minus_one)?;
        for &e in g.incident_edges(v) {
            let chi = s_v.compose(&bp.trace(v, e).adjoint());
            lifts.push(((e, v), chi));
        }
    }
    // hypotheses
    for &((e, v), ref chi) in &lifts {
        let comp = bp.gamma_ve(v, e).compose(chi);
        let defect = comp.max_abs_diff(&LinOp::identity(&bp.edge_spaces[e]));
        if defect > 1e-10 {
            return Err(QuasiError::HypothesisFails(format!(
                "Gamma_({v},{e}) chi_({e},{v}) differs from the identity by {defect:.3e}"
            )));
        }
        for &e2 in g.incident_edges(v) {
            if e2 == e {
                continue;
            }
            let cross = bp.gamma_ve(v, e2).compose(chi);
            if cross.frobenius() > 1e-10 {
                return Err(QuasiError::HypothesisFails(format!(
                    "Gamma_({v},{e2}) chi_({e},{v}) = {:.3e} is nonzero",
                    cross.frobenius()
                )));
            }
        }
    }
    // (Bf)_v = (1/2) sum_{e in E_v} chi_{e,v} (Gamma_{v,e} f_v - Gamma_{v_e,e} f_{v_e})
    let spaces: Vec<&WeightedSpace> = bp.vertex_abvps.iter().map(|p| p.space()).collect();
    let dims: Vec<usize> = spaces.iter().map(|s| s.dim()).collect();
    let mut off = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for &d in &dims {
        off.push(acc);
        acc += d;
    }
    let dec_space = WeightedSpace::direct_sum(&spaces, "decoupled vertex space");
    let mut coeffs = DMatrix::<C64>::zeros(acc, acc);
    for &((e, v), ref chi) in &lifts {
        let w = g.opposite(e, v);
        let half_chi = chi.coeffs().map(|x| x * 0.5);
        let block_vv = &half_chi * bp.gamma_ve(v, e).coeffs();
        let block_vw = &half_chi * bp.gamma_ve(w, e).coeffs();
        for r in 0..dims[v] {
            for c in 0..dims[v] {
                coeffs[(off[v] + r, off[v] + c)] += block_vv[(r, c)];
            }
        }
        for r in 0..dims[v] {
            for c in 0..dims[w] {
                coeffs[(off[v] + r, off[w] + c)] -= block_vw[(r, c)];
            }
        }
    }
    let op = LinOp::new(dec_space.clone(), dec_space, coeffs).expect("shape");
    let mut constant_sq = 0.0_f64;
    for v in 0..g.vertex_count() {
        let mut acc_v = 0.0;
        for &((e, v2), ref chi) in &lifts {
            if v2 != v {
                continue;
            }
            let norm = chi
                .opnorm(&bp.edge_spaces[e].gram(), bp.vertex_abvps[v].h1_gram())
                .expect("definite");
            acc_v += norm * norm;
        }
        constant_sq = constant_sq.max(acc_v);
    }
    Ok(SmoothingOp {
        op,
        lifts,
        constant: constant_sq.sqrt(),
    })
}

/// Worst constraint residual of `f - Bf` over random decoupled vectors,
/// relative to the decoupled form norm of `f`.
pub fn smoothing_constraint_residual(
    bp: &VertexCouplingBlueprint,
    coupled: &VertexCoupled,
    smoothing: &SmoothingOp,
    samples: usize,
    rng: &mut impl rand::Rng,
) -> f64 {
    let n = coupled.dec_space.dim();
    // decoupled H^1 gram
    let h1 = dec_h1_gram(bp, &coupled.dec_space);
    let mut worst = 0.0_f64;
    for _ in 0..samples {
        let f = crate::testutil::random_vector(rng, n);
        let smoothed = &f - smoothing.op.apply(&f);
        let residual = (&coupled.constraint * &smoothed).norm();
        worst = worst.max(residual / h1.norm(&f).max(1e-14));
    }
    worst
}

fn dec_h1_gram(bp: &VertexCouplingBlueprint, dec_space: &WeightedSpace) -> GramForm {
    let n = dec_space.dim();
    let mut m = DMatrix::<C64>::zeros(n, n);
    let mut acc = 0;
    for p in &bp.vertex_abvps {
        let d = p.space().dim();
        m.view_mut((acc, acc), (d, d)).copy_from(p.h1_gram().coeffs());
        acc += d;
    }
    GramForm::new(dec_space.clone(), m).expect("PSD")
}

fn blockdiag(parts: &[&LinOp], label: &str) -> LinOp {
    let doms: Vec<&WeightedSpace> = parts.iter().map(|p| p.domain()).collect();
    let cods: Vec<&WeightedSpace> = parts.iter().map(|p| p.codomain()).collect();
    let dom = WeightedSpace::direct_sum(&doms, label);
    let cod = WeightedSpace::direct_sum(&cods, label);
    let mut coeffs = DMatrix::<C64>::zeros(cod.dim(), dom.dim());
    let (mut r, mut c) = (0, 0);
    for p in parts {
        coeffs
            .view_mut((r, c), (p.codomain().dim(), p.domain().dim()))
            .copy_from(p.coeffs());
        r += p.codomain().dim();
        c += p.domain().dim();
    }
    LinOp::new(dom, cod, coeffs).expect("shape")
}

/// All measured global defects of the coupled-closeness theorem, with its
/// hypothesis constants and the asserted bound. The boundary-isomorphy
/// defects of `(I, I')` are measured and reported but not covered by the
/// theorem's conclusion; `delta_proven` is the part it asserts.
#[derive(Clone, Debug, Serialize)]
pub struct CoupledClosenessReport {
    pub per_vertex_deltas: Vec<f64>,
    pub kappa_fwd: f64,
    pub kappa_bwd: f64,
    /// hypothesis budget: max of per-vertex deltas and the kappas.
    pub delta_input: f64,
    pub delta_forms: f64,
    pub delta_qu: f64,
    pub delta_bd_map_fwd: f64,
    pub delta_bd_map_bwd: f64,
    pub delta_bd_iso_fwd: f64,
    pub delta_bd_iso_bwd: f64,
    /// max of the theorem-covered defects (forms, quasi-unitarity, boundary maps).
    pub delta_proven: f64,
    pub delta_total: f64,
    pub sup_gamma: f64,
    pub sup_gamma_tilde: f64,
    /// `delta_input * max(3, sup |Gamma_v| + 1, sup |Gamma~_v| + 1)`.
    pub bound: f64,
}

impl CoupledClosenessReport {
    pub fn pass(&self) -> bool {
        self.delta_proven <= self.bound + 1e-10
    }

    /// Enforce an explicit smallness cap on the measured smoothing terms
    /// (the theorem's hypothesis with a caller-chosen budget).
    pub fn check_smallness(&self, cap: f64) -> Result<(), QuasiError> {
        let kappa = self.kappa_fwd.max(self.kappa_bwd);
        if kappa > cap {
            return Err(QuasiError::SmallnessFails { kappa, cap });
        }
        Ok(())
    }
}

pub struct CoupledCloseness<'a> {
    pub bp: &'a VertexCouplingBlueprint,
    pub bp_tilde: &'a VertexCouplingBlueprint,
    pub coupled: &'a VertexCoupled,
    pub coupled_tilde: &'a VertexCoupled,
    pub ids: &'a [IdentificationSet],
    pub smoothing: &'a SmoothingOp,
    pub smoothing_tilde: &'a SmoothingOp,
}

/// Measure the global closeness of two vertex-coupled families under
/// per-vertex identifications, with the smoothing-corrected form-level maps
/// `J^1 = (1 - B~) J^{1,dec}` and `J'^1 = (1 - B) J'^{1,dec}` and the
/// boundary identification `(I phi)_e = (1/2) sum_{v=de} pi~_{v,e} I_v pi*_{v,e} phi_e`.
pub fn coupled_closeness(args: &CoupledCloseness<'_>) -> Result<CoupledClosenessReport, QuasiError> {
    let bp = args.bp;
    let bpt = args.bp_tilde;
    let g = &bp.graph;
    assert_eq!(args.ids.len(), g.vertex_count());

    let per_vertex_deltas: Vec<f64> = (0..g.vertex_count())
        .map(|v| {
            closeness_report(&bp.vertex_abvps[v], &bpt.vertex_abvps[v], &args.ids[v]).delta_total
        })
        .collect();

    // decoupled block operators
    let j_parts: Vec<&LinOp> = args.ids.iter().map(|s| &s.j).collect();
    let jp_parts: Vec<&LinOp> = args.ids.iter().map(|s| &s.jp).collect();
    let j1_parts: Vec<&LinOp> = args.ids.iter().map(|s| &s.j1).collect();
    let jp1_parts: Vec<&LinOp> = args.ids.iter().map(|s| &s.jp1).collect();
    let j_dec = blockdiag(&j_parts, "J dec");
    let jp_dec = blockdiag(&jp_parts, "J' dec");
    let j1_dec = blockdiag(&j1_parts, "J1 dec");
    let jp1_dec = blockdiag(&jp1_parts, "J'1 dec");

    let p = &args.coupled.embed;
    let pt = &args.coupled_tilde.embed;
    let pi_c = &args.coupled.abvp;
    let pit_c = &args.coupled_tilde.abvp;

    let one_minus_bt = LinOp::identity(args.smoothing_tilde.op.domain())
        .sub(&args.smoothing_tilde.op);
    let one_minus_b = LinOp::identity(args.smoothing.op.domain()).sub(&args.smoothing.op);
    // form-level maps restricted to the coupled subspaces
    let j1_op = one_minus_bt.compose(&j1_dec).compose(p); // coupled -> H~^dec
    let jp1_op = one_minus_b.compose(&jp1_dec).compose(pt); // coupled~ -> H^dec

    let h1_x = pi_c.h1_gram();
    let h1_y = pit_c.h1_gram();
    let w_dec = args.coupled.dec_space.gram();
    let wt_dec = args.coupled_tilde.dec_space.gram();
    let h1_dec = dec_h1_gram(bp, &args.coupled.dec_space);
    let h1t_dec = dec_h1_gram(bpt, &args.coupled_tilde.dec_space);

    // smallness of the smoothing terms on the coupled subspaces
    let kappa_fwd = args
        .smoothing_tilde
        .op
        .compose(&j1_dec)
        .compose(p)
        .opnorm(h1_x, &h1t_dec)
        .expect("definite");
    let kappa_bwd = args
        .smoothing
        .op
        .compose(&jp1_dec)
        .compose(pt)
        .opnorm(h1_y, &h1_dec)
        .expect("definite");
    let delta_input = per_vertex_deltas
        .iter()
        .copied()
        .fold(0.0_f64, f64::max)
        .max(kappa_fwd)
        .max(kappa_bwd);

    // quasi-unitarity of the global J, J' on the coupled subspaces
    let n_dual = pt.coeffs().adjoint() * wt_dec.coeffs() * j_dec.coeffs() * p.coeffs()
        - pt.coeffs().adjoint() * j_dec.coeffs().adjoint() * w_dec.coeffs() * p.coeffs();
    let duality = pairing_norm(&n_dual, &pi_c.space().gram(), &pit_c.space().gram())
        .expect("definite");
    let d2 = p
        .sub(&jp_dec.compose(&j_dec).compose(p))
        .opnorm(h1_x, &w_dec)
        .expect("definite");
    let d3 = pt
        .sub(&j_dec.compose(&jp_dec).compose(pt))
        .opnorm(h1_y, &wt_dec)
        .expect("definite");
    let d4 = j1_op
        .sub(&j_dec.compose(p))
        .opnorm(h1_x, &wt_dec)
        .expect("definite");
    let d5 = jp1_op
        .sub(&jp_dec.compose(pt))
        .opnorm(h1_y, &w_dec)
        .expect("definite");
    let delta_qu = duality.max(d2).max(d3).max(d4).max(d5);

    // form closeness |h~(J^1 f, u) - h(f, J'^1 u)|
    let m_dec = dec_form_matrix(bp, args.coupled.dec_space.dim());
    let mt_dec = dec_form_matrix(bpt, args.coupled_tilde.dec_space.dim());
    let n_forms = pt.coeffs().adjoint() * &mt_dec * j1_op.coeffs()
        - jp1_op.coeffs().adjoint() * &m_dec * p.coeffs();
    let delta_forms = pairing_norm(&n_forms, h1_x, h1_y).expect("definite");

    // boundary identification operators
    let i_parts: Vec<&LinOp> = args.ids.iter().map(|s| &s.i).collect();
    let ip_parts: Vec<&LinOp> = args.ids.iter().map(|s| &s.ip).collect();
    let i_global = assemble_boundary_id(bp, bpt, &i_parts);
    let ip_global = assemble_boundary_id_rev(bp, bpt, &ip_parts);

    // ambient trace maps (averages of the endpoint traces)
    let gamma_amb_t = ambient_gamma(bpt, &args.coupled_tilde.dec_space);
    let gamma_amb = ambient_gamma(bp, &args.coupled.dec_space);
    let fwd = i_global
        .compose(pi_c.gamma())
        .sub(&gamma_amb_t.compose(&j1_op));
    let delta_bd_map_fwd = fwd
        .opnorm(h1_x, &pit_c.boundary().gram())
        .expect("definite");
    let bwd = ip_global
        .compose(pit_c.gamma())
        .sub(&gamma_amb.compose(&jp1_op));
    let delta_bd_map_bwd = bwd
        .opnorm(h1_y, &pi_c.boundary().gram())
        .expect("definite");

    // boundary isomorphy (reported, not asserted by the theorem)
    let iso_fwd = LinOp::identity(pi_c.boundary()).sub(&ip_global.compose(&i_global));
    let delta_bd_iso_fwd = iso_fwd
        .opnorm(pi_c.boundary_half_gram(), &pi_c.boundary().gram())
        .expect("definite");
    let iso_bwd = LinOp::identity(pit_c.boundary()).sub(&i_global.compose(&ip_global));
    let delta_bd_iso_bwd = iso_bwd
        .opnorm(pit_c.boundary_half_gram(), &pit_c.boundary().gram())
        .expect("definite");

    let delta_proven = delta_forms
        .max(delta_qu)
        .max(delta_bd_map_fwd)
        .max(delta_bd_map_bwd);
    let delta_total = delta_proven.max(delta_bd_iso_fwd).max(delta_bd_iso_bwd);
    let sup_gamma = bp.sup_gamma_norm();
    let sup_gamma_tilde = bpt.sup_gamma_norm();
    let bound = delta_input * 3.0_f64.max(sup_gamma + 1.0).max(sup_gamma_tilde + 1.0);
    Ok(CoupledClosenessReport {
        per_vertex_deltas,
        kappa_fwd,
        kappa_bwd,
        delta_input,
        delta_forms,
        delta_qu,
        delta_bd_map_fwd,
        delta_bd_map_bwd,
        delta_bd_iso_fwd,
        delta_bd_iso_bwd,
        delta_proven,
        delta_total,
        sup_gamma,
        sup_gamma_tilde,
        bound,
    })
}

fn dec_form_matrix(bp: &VertexCouplingBlueprint, n: usize) -> DMatrix<C64> {
    let mut m = DMatrix::<C64>::zeros(n, n);
    let mut acc = 0;
    for p in &bp.vertex_abvps {
        let d = p.space().dim();
        m.view_mut((acc, acc), (d, d)).copy_from(p.form().coeffs());
        acc += d;
    }
    m
}

/// `(I phi)_e = (1/2) sum_{v = de} pi~_{v,e} I_v pi*_{v,e} phi_e`.
fn assemble_boundary_id(
    bp: &VertexCouplingBlueprint,
    bpt: &VertexCouplingBlueprint,
    i_parts: &[&LinOp],
) -> LinOp {
    let g = &bp.graph;
    let dom_parts: Vec<&WeightedSpace> = bp.edge_spaces.iter().collect();
    let cod_parts: Vec<&WeightedSpace> = bpt.edge_spaces.iter().collect();
    let dom = WeightedSpace::direct_sum(&dom_parts, "G");
    let cod = WeightedSpace::direct_sum(&cod_parts, "G~");
    let mut coeffs = DMatrix::<C64>::zeros(cod.dim(), dom.dim());
    let (mut dom_off, mut cod_off) = (vec![0usize; g.edge_count()], vec![0usize; g.edge_count()]);
    let (mut a, mut b) = (0, 0);
    for e in 0..g.edge_count() {
        dom_off[e] = a;
        cod_off[e] = b;
        a += bp.edge_spaces[e].dim();
        b += bpt.edge_spaces[e].dim();
    }
    for e in 0..g.edge_count() {
        let mut block =
            DMatrix::<C64>::zeros(bpt.edge_spaces[e].dim(), bp.edge_spaces[e].dim());
        for v in [g.src(e), g.dst(e)] {
            let term = bpt
                .trace(v, e)
                .compose(&i_parts[v].compose(&bp.trace(v, e).adjoint()));
            block += term.coeffs().map(|x| x * 0.5);
        }
        coeffs
            .view_mut(
                (cod_off[e], dom_off[e]),
                (bpt.edge_spaces[e].dim(), bp.edge_spaces[e].dim()),
            )
            .copy_from(&block);
    }
    LinOp::new(dom, cod, coeffs).expect("shape")
}

fn assemble_boundary_id_rev(
    bp: &VertexCouplingBlueprint,
    bpt: &VertexCouplingBlueprint,
    ip_parts: &[&LinOp],
) -> LinOp {
    let g = &bp.graph;
    let dom_parts: Vec<&WeightedSpace> = bpt.edge_spaces.iter().collect();
    let cod_parts: Vec<&WeightedSpace> = bp.edge_spaces.iter().collect();
    let dom = WeightedSpace::direct_sum(&dom_parts, "G~");
    let cod = WeightedSpace::direct_sum(&cod_parts, "G");
    let mut coeffs = DMatrix::<C64>::zeros(cod.dim(), dom.dim());
    let (mut dom_off, mut cod_off) = (vec![0usize; g.edge_count()], vec![0usize; g.edge_count()]);
    let (mut a, mut b) = (0, 0);
    for e in 0..g.edge_count() {
        dom_off[e] = a;
        cod_off[e] = b;
        a += bpt.edge_spaces[e].dim();
        b += bp.edge_spaces[e].dim();
    }
    for e in 0..g.edge_count() {
        let mut block =
            DMatrix::<C64>::zeros(bp.edge_spaces[e].dim(), bpt.edge_spaces[e].dim());
        for v in [g.src(e), g.dst(e)] {
            let term = bp
                .trace(v, e)
                .compose(&ip_parts[v].compose(&bpt.trace(v, e).adjoint()));
            block += term.coeffs().map(|x| x * 0.5);
        }
        coeffs
            .view_mut(
                (cod_off[e], dom_off[e]),
                (bp.edge_spaces[e].dim(), bpt.edge_spaces[e].dim()),
            )
            .copy_from(&block);
    }
    LinOp::new(dom, cod, coeffs).expect("shape")
}

/// Per-edge average of the endpoint traces: a map from the decoupled space
/// to the coupled boundary that agrees with the coupled trace on the
/// constraint subspace.
fn ambient_gamma(bp: &VertexCouplingBlueprint, dec_space: &WeightedSpace) -> LinOp {
    let g = &bp.graph;
    let bd_parts: Vec<&WeightedSpace> = bp.edge_spaces.iter().collect();
    let boundary = WeightedSpace::direct_sum(&bd_parts, "coupled boundary");
    let mut coeffs = DMatrix::<C64>::zeros(boundary.dim(), dec_space.dim());
    let mut space_off = Vec::with_capacity(g.vertex_count());
    let mut acc = 0;
    for p in &bp.vertex_abvps {
        space_off.push(acc);
        acc += p.space().dim();
    }
    let mut bd_off = 0;
    for e in 0..g.edge_count() {
        for v in [g.src(e), g.dst(e)] {
            let gve = bp.gamma_ve(v, e);
            for r in 0..gve.codomain().dim() {
                for c in 0..gve.domain().dim() {
                    coeffs[(bd_off + r, space_off[v] + c)] += gve.coeffs()[(r, c)] * 0.5;
                }
            }
        }
        bd_off += bp.edge_spaces[e].dim();
    }
    LinOp::new(dec_space.clone(), boundary, coeffs).expect("shape")
}

/// The perturbed star family used by the closeness sweep: the same star
/// blueprint with the energy form at one vertex scaled by `1 + eps`.
pub fn perturbed_star_blueprint(
    g: &crate::graph::Graph,
    eps: f64,
) -> Result<(VertexCouplingBlueprint, LinOp), QuasiError> {
    let (mut bp, param) = crate::coupling::star_coupling_blueprint(g)?;
    let p0 = &bp.vertex_abvps[0];
    let scaled = Abvp::new(
        p0.space().clone(),
        p0.boundary().clone(),
        p0.gamma().clone(),
        p0.form().scale(1.0 + eps),
        p0.split().map(|s| s.to_vec()),
    )?;
    bp.vertex_abvps[0] = scaled;
    Ok((bp, param))
}

/// Closeness sweep over form perturbations `1 + eps` at one vertex of the
/// star coupling; per-vertex identifications are the identities.
pub fn closeness_sweep(
    g: &crate::graph::Graph,
    epsilons: &[f64],
) -> Result<Vec<(f64, CoupledClosenessReport)>, QuasiError> {
    let (bp, param) = crate::coupling::star_coupling_blueprint(g)?;
    let coupled = vertex_couple(&bp, Some(param.clone()))?;
    let smoothing = smoothing_from_solutions(&bp)?;
    let mut out = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let (bpt, param_t) = perturbed_star_blueprint(g, eps)?;
        let coupled_t = vertex_couple(&bpt, Some(param_t))?;
        let smoothing_t = smoothing_from_solutions(&bpt)?;
        let ids: Vec<IdentificationSet> = bp
            .vertex_abvps
            .iter()
            .map(IdentificationSet::identity)
            .collect();
        let report = coupled_closeness(&CoupledCloseness {
            bp: &bp,
            bp_tilde: &bpt,
            coupled: &coupled,
            coupled_tilde: &coupled_t,
            ids: &ids,
            smoothing: &smoothing,
            smoothing_tilde: &smoothing_t,
        })?;
        out.push((eps, report));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abvp::graph_abvp;
    use crate::coupling::star_coupling_blueprint;
    use crate::fixtures;
    use crate::testutil::{case_rng, random_psd, random_vector, seeded_rng};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn identical_problems_have_zero_defects() {
        let pi = graph_abvp(&fixtures::path_amb(), &["a", "b"]).unwrap();
        let ids = IdentificationSet::identity(&pi);
        let report = closeness_report(&pi, &pi, &ids);
        assert!(report.delta_total < 1e-12, "{report:?}");
    }

    #[test]
    fn rank_one_form_perturbation() {
        let mut rng = seeded_rng(41);
        let pi = graph_abvp(&fixtures::cycle(4), &["v0"]).unwrap();
        let eps = 1e-3;
        // rank-one Hermitian perturbation p
        let v = random_vector(&mut rng, 4);
        let p_mat = DMatrix::from_fn(4, 4, |i, j| v[i] * v[j].conj());
        let perturbed = Abvp::new(
            pi.space().clone(),
            pi.boundary().clone(),
            pi.gamma().clone(),
            GramForm::new(
                pi.space().clone(),
                pi.form().coeffs() + p_mat.map(|x| x * eps),
            )
            .unwrap(),
            pi.split().map(|s| s.to_vec()),
        )
        .unwrap();
        let ids = IdentificationSet::identity(&pi);
        let measured = delta_forms(&pi, &perturbed, &ids);
        let expected = eps * pairing_norm(&p_mat, pi.h1_gram(), perturbed.h1_gram()).unwrap();
        assert!((measured - expected).abs() < 1e-10 * (1.0 + expected));
    }

    #[test]
    fn gamma_perturbation_forward_defect() {
        let mut rng = seeded_rng(42);
        let pi = graph_abvp(&fixtures::cycle(3), &["v0", "v1"]).unwrap();
        let eps = 1e-2;
        let p = crate::testutil::random_matrix(&mut rng, 2, 3);
        let gamma2 = LinOp::new(
            pi.space().clone(),
            pi.boundary().clone(),
            pi.gamma().coeffs() + p.map(|x| x * eps),
        )
        .unwrap();
        let perturbed = Abvp::new(
            pi.space().clone(),
            pi.boundary().clone(),
            gamma2,
            pi.form().clone(),
            None,
        )
        .unwrap();
        let ids = IdentificationSet::identity(&pi);
        let (fwd, _) = delta_bdmaps(&pi, &perturbed, &ids);
        let p_op = LinOp::new(pi.space().clone(), pi.boundary().clone(), p).unwrap();
        let expected = eps * p_op.opnorm(pi.h1_gram(), &pi.boundary().gram()).unwrap();
        assert!((fwd - expected).abs() < 1e-10 * (1.0 + expected));
    }

    #[test]
    fn scaled_j_quasi_unitarity() {
        let mut rng = seeded_rng(43);
        let space = WeightedSpace::new(vec![1.0, 2.0, 0.5], "s").unwrap();
        let m = random_psd(&mut rng, 3);
        let pi = Abvp::trivial(space.clone(), GramForm::new(space, m).unwrap());
        let eps = 1e-2;
        let j = LinOp::identity(pi.space()).scale(c(1.0 + eps, 0.0));
        let ids = IdentificationSet {
            jp: j.adjoint(),
            j1: j.clone(),
            jp1: j.adjoint(),
            i: LinOp::identity(pi.boundary()),
            ip: LinOp::identity(pi.boundary()),
            j,
        };
        let d = quasi_unitary_defects(&pi, &pi, &ids);
        // duality defect vanishes for J' = J*
        assert!(d[0] < 1e-12);
        // 1 - J'J = 1 - (1+eps)^2 times the norm factor (H^1 -> H norm)
        let factor = LinOp::identity(pi.space())
            .opnorm(pi.h1_gram(), &pi.space().gram())
            .unwrap();
        let expected = ((1.0 + eps) * (1.0 + eps) - 1.0) * factor;
        assert!((d[1] - expected).abs() < 1e-9 * (1.0 + expected));
    }

    #[test]
    fn boundary_iso_defects() {
        let pi = graph_abvp(&fixtures::cycle(3), &["v0", "v1"]).unwrap();
        // exact inverse pair
        let ids = IdentificationSet::identity(&pi);
        let (f, b) = delta_boundary_iso(&pi, &pi, &ids);
        assert!(f < 1e-12 && b < 1e-12);
        // rank-deficient I': defect at least 1 witnessed on its kernel
        let mut ids2 = IdentificationSet::identity(&pi);
        let mut ip = DMatrix::<C64>::zeros(2, 2);
        ip[(0, 0)] = c(1.0, 0.0);
        ids2.ip = LinOp::new(pi.boundary().clone(), pi.boundary().clone(), ip).unwrap();
        let (f2, _) = delta_boundary_iso(&pi, &pi, &ids2);
        // |phi - I'I phi| = |phi_2| on the kernel direction; measured
        // against the G^{1/2} norm the constant is positive
        assert!(f2 > 0.1);
    }

    #[test]
    fn trivial_limit_on_path_fixture() {
        // path a-m-b with boundary {a}: lambda_1 = 1, |Gamma Phi_0| = 1/2,
        // gamma = 4, mu_1 infinite, delta = 2 sqrt(3) at a = 1
        let pit = graph_abvp(&fixtures::path_amb(), &["a"]).unwrap();
        let tl = trivial_limit_ids(&pit, Some(1.0)).unwrap();
        assert!((tl.lambda1 - 1.0).abs() < 1e-10);
        assert!((tl.gamma - 4.0).abs() < 1e-10);
        assert!(tl.mu1.is_infinite());
        assert!((tl.delta - 2.0 * 3.0_f64.sqrt()).abs() < 1e-10);
        // defaults pick a working a
        let tl2 = trivial_limit_ids(&pit, None).unwrap();
        assert!(tl2.delta <= tl.delta + 1e-12 || tl2.a != 1.0);
        // all definition inequalities hold with the returned delta
        let mut rng = seeded_rng(44);
        let worst = verify_trivial_limit(&tl, &pit, 200, &mut rng);
        assert!(worst <= 1e-12, "violation {worst}");
        // and the exact smallest constants stay below delta
        let report = closeness_report(&tl.trivial, &pit, &tl.ids);
        assert!(report.delta_total <= tl.delta + 1e-12);
        // exact vanishing: the form mismatch, the forward boundary-map
        // defect and the forward boundary-isomorphy defect are all zero
        assert!(report.delta_forms <= 1e-13);
        assert!(report.delta_bd_map_fwd <= 1e-13);
        assert!(report.delta_bd_iso_fwd <= 1e-13);
    }

    #[test]
    fn bd_map_estimate_can_fail() {
        // scale the boundary map so no a in (0, 1] certifies the estimate
        let pit = graph_abvp(&fixtures::path_amb(), &["a"]).unwrap();
        let scaled_gamma = pit.gamma().scale(c(10.0, 0.0));
        let pit_scaled = Abvp::new(
            pit.space().clone(),
            pit.boundary().clone(),
            scaled_gamma,
            pit.form().clone(),
            None,
        )
        .unwrap();
        assert!(matches!(
            trivial_limit_ids(&pit_scaled, None),
            Err(QuasiError::BdMapEstimateFails(_))
        ));
    }

    #[test]
    fn smallness_cap_enforcement() {
        let g = fixtures::cycle(3);
        let reports = closeness_sweep(&g, &[1e-2]).unwrap();
        let report = &reports[0].1;
        // the sweep's smoothing terms vanish on coupled vectors
        report.check_smallness(1e-10).unwrap();
        assert!(matches!(
            report.check_smallness(-1.0),
            Err(QuasiError::SmallnessFails { .. })
        ));
    }

    #[test]
    fn trivial_limit_rejects_no_gap() {
        let space = WeightedSpace::unweighted(1, "C");
        let pit = Abvp::trivial(space.clone(), GramForm::zero(space));
        assert!(matches!(
            trivial_limit_ids(&pit, None),
            Err(QuasiError::ZeroNotSimple(_))
        ));
    }

    #[test]
    fn trivial_limit_on_c4_and_random_graphs() {
        let pit = graph_abvp(&fixtures::cycle(4), &["v0"]).unwrap();
        let tl = trivial_limit_ids(&pit, None).unwrap();
        assert!((tl.lambda1 - 1.0).abs() < 1e-10);
        assert!(tl.mu1.is_infinite());
        let mut rng = seeded_rng(45);
        assert!(verify_trivial_limit(&tl, &pit, 100, &mut rng) <= 1e-12);
        for i in 0..10 {
            let mut case = case_rng(4545, i);
            let g = fixtures::random_connected(&mut case, 8, (i % 3) as usize);
            let bd = fixtures::random_boundary(&mut case, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pit = graph_abvp(&g, &ids).unwrap();
            match trivial_limit_ids(&pit, None) {
                Ok(tl) => {
                    let worst = verify_trivial_limit(&tl, &pit, 50, &mut case);
                    assert!(worst <= 1e-10, "violation {worst} on case {i}");
                }
                Err(QuasiError::ZeroNotSimple(_)) => {}
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn smoothing_annihilates_coupled_vectors() {
        let g = fixtures::cycle(3);
        let (bp, param) = star_coupling_blueprint(&g).unwrap();
        let coupled = vertex_couple(&bp, Some(param)).unwrap();
        let smoothing = smoothing_from_solutions(&bp).unwrap();
        let mut rng = seeded_rng(46);
        for _ in 0..20 {
            let x = random_vector(&mut rng, coupled.abvp.space().dim());
            let f = coupled.embed.apply(&x);
            let bf = smoothing.op.apply(&f);
            assert!(
                coupled.dec_space.norm(&bf) <= 1e-12 * (1.0 + coupled.dec_space.norm(&f)),
                "B does not annihilate a coupled vector"
            );
        }
        assert!(smoothing.constant.is_finite() && smoothing.constant > 0.0);
    }

    #[test]
    fn smoothing_fixes_discontinuous_data() {
        let g = fixtures::k2();
        let (bp, param) = star_coupling_blueprint(&g).unwrap();
        let coupled = vertex_couple(&bp, Some(param)).unwrap();
        let smoothing = smoothing_from_solutions(&bp).unwrap();
        let mut rng = seeded_rng(47);
        let residual = smoothing_constraint_residual(&bp, &coupled, &smoothing, 50, &mut rng);
        assert!(residual <= 1e-12, "constraint residual {residual}");
        // idempotent effect: f - Bf is fixed by another smoothing pass
        let f = random_vector(&mut rng, coupled.dec_space.dim());
        let once = &f - smoothing.op.apply(&f);
        let twice = &once - smoothing.op.apply(&once);
        assert!(coupled.dec_space.norm(&(&once - &twice)) <= 1e-12);
    }

    #[test]
    fn coupled_closeness_identical_families() {
        let g = fixtures::cycle(3);
        let reports = closeness_sweep(&g, &[0.0]).unwrap();
        let report = &reports[0].1;
        assert!(report.delta_total < 1e-11, "{report:?}");
        assert!(report.kappa_fwd < 1e-11 && report.kappa_bwd < 1e-11);
    }

    #[test]
    fn coupled_closeness_sweep_bound_and_decay() {
        let g = fixtures::cycle(3);
        let eps = [1e-1, 1e-2, 1e-3, 1e-4];
        let reports = closeness_sweep(&g, &eps).unwrap();
        let mut prev = f64::INFINITY;
        for (e, report) in &reports {
            assert!(report.pass(), "bound violated at eps={e}: {report:?}");
            assert!(
                report.delta_proven <= prev + 1e-15,
                "delta' not decreasing at eps={e}"
            );
            prev = report.delta_proven;
        }
        // roughly linear decay in eps
        let slope = reports[0].1.delta_proven / reports[2].1.delta_proven;
        assert!(slope > 50.0, "decay too slow: {slope}");
    }

    #[test]
    fn coupled_closeness_form_chain_on_random_vectors() {
        // |h~(J^1 f, u) - h(f, J'^1 u)| <= 3 delta |f|_H1 |u|_H1~
        let g = fixtures::cycle(3);
        let eps = 1e-2;
        let (bp, param) = star_coupling_blueprint(&g).unwrap();
        let coupled = vertex_couple(&bp, Some(param)).unwrap();
        let smoothing = smoothing_from_solutions(&bp).unwrap();
        let (bpt, param_t) = perturbed_star_blueprint(&g, eps).unwrap();
        let coupled_t = vertex_couple(&bpt, Some(param_t)).unwrap();
        let smoothing_t = smoothing_from_solutions(&bpt).unwrap();
        let ids: Vec<IdentificationSet> = bp
            .vertex_abvps
            .iter()
            .map(IdentificationSet::identity)
            .collect();
        let report = coupled_closeness(&CoupledCloseness {
            bp: &bp,
            bp_tilde: &bpt,
            coupled: &coupled,
            coupled_tilde: &coupled_t,
            ids: &ids,
            smoothing: &smoothing,
            smoothing_tilde: &smoothing_t,
        })
        .unwrap();
        let budget = 3.0 * report.delta_input;
        let mut rng = seeded_rng(48);
        let mt = dec_form_matrix(&bpt, coupled_t.dec_space.dim());
        let m = dec_form_matrix(&bp, coupled.dec_space.dim());
        for _ in 0..50 {
            let x = random_vector(&mut rng, coupled.abvp.space().dim());
            let y = random_vector(&mut rng, coupled_t.abvp.space().dim());
            let fx = coupled.embed.apply(&x);
            let uy = coupled_t.embed.apply(&y);
            // J^1 f = (1 - B~) f here (identity per-vertex maps)
            let j1f = &fx - smoothing_t.op.apply(&fx);
            let jp1u = &uy - smoothing.op.apply(&uy);
            let lhs = ((uy.adjoint() * &mt * &j1f)[(0, 0)]
                - (jp1u.adjoint() * &m * &fx)[(0, 0)])
            .norm();
            let rhs = budget
                * coupled.abvp.h1_gram().norm(&x)
                * coupled_t.abvp.h1_gram().norm(&y);
            assert!(lhs <= rhs + 1e-12, "form chain violated: {lhs} > {rhs}");
        }
    }
}
