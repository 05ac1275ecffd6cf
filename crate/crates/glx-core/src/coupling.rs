//! Couplings of boundary value problems along a graph: direct sums, vertex
//! coupling (building blocks per vertex, matched edge traces), edge coupling
//! (building blocks per edge, boundary data restricted to vertex subspaces)
//! and the vertex-edge coupling with trivial vertex problems. The coupled
//! problem is re-expressed on an explicit isometric parameterization of the
//! constraint subspace, so every derived object of [`crate::abvp`] applies
//! verbatim.

use std::collections::HashMap;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::abvp::{Abvp, AbvpError};
use crate::graph::Graph;
use crate::space::{hermitian_eigen, GramForm, LinOp, SpaceError, WeightedSpace, C64};

#[derive(Debug, Error)]
pub enum CouplingError {
    #[error("blueprint invalid: {0}")]
    BlueprintInvalid(String),
    #[error("fibre mismatch at vertex {0}")]
    FibreMismatch(String),
    #[error("graph is not regular")]
    NotRegular,
    #[error(transparent)]
    Abvp(#[from] AbvpError),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

fn c1() -> C64 {
    C64::new(1.0, 0.0)
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(dims.len());
    let mut acc = 0;
    for &d in dims {
        out.push(acc);
        acc += d;
    }
    out
}

/// Direct sum of problems: block-diagonal boundary map and form. The sum is
/// split iff every summand is.
pub fn direct_sum(parts: &[&Abvp]) -> Abvp {
    let spaces: Vec<&WeightedSpace> = parts.iter().map(|p| p.space()).collect();
    let boundaries: Vec<&WeightedSpace> = parts.iter().map(|p| p.boundary()).collect();
    let space = WeightedSpace::direct_sum(&spaces, "direct sum");
    let boundary = WeightedSpace::direct_sum(&boundaries, "direct sum boundary");
    let n = space.dim();
    let m = boundary.dim();
    let sp_off = offsets(&parts.iter().map(|p| p.space().dim()).collect::<Vec<_>>());
    let bd_off = offsets(&parts.iter().map(|p| p.boundary().dim()).collect::<Vec<_>>());
    let mut gamma = DMatrix::<C64>::zeros(m, n);
    let mut form = DMatrix::<C64>::zeros(n, n);
    let mut split = Some(Vec::with_capacity(m));
    for (k, p) in parts.iter().enumerate() {
        let (r0, c0) = (bd_off[k], sp_off[k]);
        gamma
            .view_mut((r0, c0), (p.boundary().dim(), p.space().dim()))
            .copy_from(p.gamma().coeffs());
        form.view_mut((c0, c0), (p.space().dim(), p.space().dim()))
            .copy_from(p.form().coeffs());
        match (&mut split, p.split()) {
            (Some(acc), Some(coords)) => acc.extend(coords.iter().map(|&c| c + c0)),
            (s, None) => *s = None,
            _ => {}
        }
    }
    let gamma = LinOp::new(space.clone(), boundary.clone(), gamma).expect("shape");
    let form = GramForm::new(space.clone(), form).expect("block PSD");
    Abvp::new(space, boundary, gamma, form, split).expect("direct sum of valid problems")
}

/// Per-vertex building blocks with trace maps into shared edge spaces.
pub struct VertexCouplingBlueprint {
    pub graph: Graph,
    pub vertex_abvps: Vec<Abvp>,
    pub edge_spaces: Vec<WeightedSpace>,
    /// `(vertex index, edge index) -> pi_{v,e} : G_v -> G_e` for `e` in `E_v`.
    pub traces: HashMap<(usize, usize), LinOp>,
}

impl VertexCouplingBlueprint {
    pub fn trace(&self, v: usize, e: usize) -> &LinOp {
        &self.traces[&(v, e)]
    }

    /// `Gamma_{v,e} = pi_{v,e} Gamma_v`.
    pub fn gamma_ve(&self, v: usize, e: usize) -> LinOp {
        self.trace(v, e).compose(self.vertex_abvps[v].gamma())
    }

    /// `iota_v : G_v -> G_v^max`, the stacked traces.
    fn iota_v(&self, v: usize) -> LinOp {
        let inc = self.graph.incident_edges(v);
        let parts: Vec<&WeightedSpace> = inc.iter().map(|&e| &self.edge_spaces[e]).collect();
        let gmax = WeightedSpace::direct_sum(&parts, "G_v^max");
        let gv = self.vertex_abvps[v].boundary();
        let mut coeffs = DMatrix::<C64>::zeros(gmax.dim(), gv.dim());
        let off = offsets(&inc.iter().map(|&e| self.edge_spaces[e].dim()).collect::<Vec<_>>());
        for (k, &e) in inc.iter().enumerate() {
            let p = self.trace(v, e);
            coeffs
                .view_mut((off[k], 0), (self.edge_spaces[e].dim(), gv.dim()))
                .copy_from(p.coeffs());
        }
        LinOp::new(gv.clone(), gmax, coeffs).expect("shape")
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        let g = &self.graph;
        if self.vertex_abvps.len() != g.vertex_count() || self.edge_spaces.len() != g.edge_count()
        {
            return Err(CouplingError::BlueprintInvalid(
                "component counts do not match the graph".into(),
            ));
        }
        for v in 0..g.vertex_count() {
            for &e in g.incident_edges(v) {
                let p = self.traces.get(&(v, e)).ok_or_else(|| {
                    CouplingError::BlueprintInvalid(format!("missing trace ({v},{e})"))
                })?;
                if !p.domain().compatible(self.vertex_abvps[v].boundary())
                    || !p.codomain().compatible(&self.edge_spaces[e])
                {
                    return Err(CouplingError::BlueprintInvalid(format!(
                        "trace ({v},{e}) has wrong spaces"
                    )));
                }
            }
            if g.incident_edges(v).is_empty() {
                continue;
            }
            // iota_v isometric: iota* iota = id
            let iota = self.iota_v(v);
            let prod = iota.adjoint().compose(&iota);
            let defect = prod.max_abs_diff(&LinOp::identity(self.vertex_abvps[v].boundary()));
            if defect > 1e-12 {
                return Err(CouplingError::BlueprintInvalid(format!(
                    "iota_{v} is not isometric (defect {defect:.3e})"
                )));
            }
        }
        // matching ranges: ran Gamma_{d-e,e} = ran Gamma_{d+e,e}
        for e in 0..g.edge_count() {
            let pm = range_projector(&self.gamma_ve(g.src(e), e));
            let pp = range_projector(&self.gamma_ve(g.dst(e), e));
            let defect = (pm - pp).norm();
            if defect > 1e-10 {
                return Err(CouplingError::BlueprintInvalid(format!(
                    "trace ranges differ across edge {e} (defect {defect:.3e})"
                )));
            }
        }
        Ok(())
    }

    /// `sup_v` of the boundary-map norms (form norm to boundary norm).
    pub fn sup_gamma_norm(&self) -> f64 {
        self.vertex_abvps
            .iter()
            .map(|p| {
                p.gamma()
                    .opnorm(p.h1_gram(), &p.boundary().gram())
                    .expect("form norm definite")
            })
            .fold(0.0, f64::max)
    }
}

/// Orthogonal projector (plain coordinates of the weighted codomain) onto
/// the range of `t`.
fn range_projector(t: &LinOp) -> DMatrix<C64> {
    let sw: Vec<f64> = t.codomain().weights().iter().map(|w| w.sqrt()).collect();
    let mut m = t.coeffs().clone();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] *= sw[i];
        }
    }
    let gram = &m * m.adjoint();
    let (eigs, u) = hermitian_eigen(&gram);
    let max = eigs.last().copied().unwrap_or(0.0).max(1e-300);
    let mut p = DMatrix::<C64>::zeros(m.nrows(), m.nrows());
    for (k, &e) in eigs.iter().enumerate() {
        if e > 1e-20 * max {
            let col = u.column(k);
            for i in 0..m.nrows() {
                for j in 0..m.nrows() {
                    p[(i, j)] += col[i] * col[j].conj();
                }
            }
        }
    }
    p
}

/// A vertex-coupled problem together with the isometric parameterization of
/// its constraint subspace inside the decoupled space.
pub struct VertexCoupled {
    pub abvp: Abvp,
    /// coupled space -> decoupled space, isometric with range the subspace.
    pub embed: LinOp,
    pub dec_space: WeightedSpace,
    pub space_offsets: Vec<usize>,
    /// offsets of the `G_e` blocks inside the coupled boundary.
    pub edge_offsets: Vec<usize>,
    /// trace-mismatch constraint matrix on the decoupled space.
    pub constraint: DMatrix<C64>,
}

/// Isometric `w`-orthonormal basis of the nullspace of `constraint` on a
/// weighted space.
fn nullspace_embed(space: &WeightedSpace, constraint: &DMatrix<C64>, label: &str) -> LinOp {
    let n = space.dim();
    let sw: Vec<f64> = space.weights().iter().map(|w| w.sqrt()).collect();
    let mut cw = constraint.clone();
    for j in 0..n {
        for i in 0..cw.nrows() {
            cw[(i, j)] /= sw[j];
        }
    }
    let gram = cw.adjoint() * &cw;
    let (eigs, u) = hermitian_eigen(&gram);
    let max = eigs.last().copied().unwrap_or(0.0).max(1.0);
    let null_cols: Vec<usize> = (0..eigs.len())
        .filter(|&k| eigs[k] <= 1e-12 * max)
        .collect();
    let k = null_cols.len();
    let coupled = WeightedSpace::unweighted(k, label);
    let mut coeffs = DMatrix::<C64>::zeros(n, k);
    for (col, &kc) in null_cols.iter().enumerate() {
        for i in 0..n {
            coeffs[(i, col)] = u[(i, kc)] / sw[i];
        }
    }
    LinOp::new(coupled, space.clone(), coeffs).expect("shape")
}

/// Recognize a boundary map that is a plain coordinate restriction with
/// matching weights, yielding split data.
fn detect_split(gamma: &LinOp) -> Option<Vec<usize>> {
    let m = gamma.codomain().dim();
    let n = gamma.domain().dim();
    let mut coords = Vec::with_capacity(m);
    let mut used = vec![false; n];
    for row in 0..m {
        let mut hit = None;
        for col in 0..n {
            let v = gamma.coeffs()[(row, col)];
            if (v - c1()).norm() <= 1e-13 {
                if hit.is_some() {
                    return None;
                }
                hit = Some(col);
            } else if v.norm() > 1e-13 {
                return None;
            }
        }
        let col = hit?;
        if used[col] {
            return None;
        }
        let wr = gamma.codomain().weights()[row];
        let wc = gamma.domain().weights()[col];
        if (wr - wc).abs() > 1e-12 * wc {
            return None;
        }
        used[col] = true;
        coords.push(col);
    }
    Some(coords)
}

/// Vertex-couple a family: the form domain is the subspace of the decoupled
/// space on which the traces `Gamma_{v,e}` of the two endpoints of every
/// edge agree; the boundary is `(+)_e G_e` carrying the shared trace.
///
/// `param` optionally supplies the isometric parameterization of the
/// constraint subspace; by default an orthonormal basis is computed from
/// the constraint equations.
pub fn vertex_couple(
    bp: &VertexCouplingBlueprint,
    param: Option<LinOp>,
) -> Result<VertexCoupled, CouplingError> {
    bp.validate()?;
    let g = &bp.graph;
    let spaces: Vec<&WeightedSpace> = bp.vertex_abvps.iter().map(|p| p.space()).collect();
    let dec_space = WeightedSpace::direct_sum(&spaces, "decoupled vertex space");
    let space_offsets = offsets(&spaces.iter().map(|s| s.dim()).collect::<Vec<_>>());
    let edge_dims: Vec<usize> = bp.edge_spaces.iter().map(|s| s.dim()).collect();
    let edge_offsets = offsets(&edge_dims);
    let n = dec_space.dim();

    // constraint rows per edge: Gamma_{src,e} f_src - Gamma_{dst,e} f_dst
    let total_rows: usize = edge_dims.iter().sum();
    let mut constraint = DMatrix::<C64>::zeros(total_rows, n);
    for e in 0..g.edge_count() {
        let (vs, vd) = (g.src(e), g.dst(e));
        let gs = bp.gamma_ve(vs, e);
        let gd = bp.gamma_ve(vd, e);
        constraint
            .view_mut(
                (edge_offsets[e], space_offsets[vs]),
                (edge_dims[e], spaces[vs].dim()),
            )
            .copy_from(gs.coeffs());
        let mut view = constraint.view_mut(
            (edge_offsets[e], space_offsets[vd]),
            (edge_dims[e], spaces[vd].dim()),
        );
        view -= gd.coeffs();
    }

    let embed = resolve_param(param, &dec_space, &constraint, "coupled")?;

    // decoupled form
    let mut m_dec = DMatrix::<C64>::zeros(n, n);
    for (k, p) in bp.vertex_abvps.iter().enumerate() {
        m_dec
            .view_mut(
                (space_offsets[k], space_offsets[k]),
                (spaces[k].dim(), spaces[k].dim()),
            )
            .copy_from(p.form().coeffs());
    }
    let coupled_space = embed.domain().clone();
    let form = GramForm::new(
        coupled_space.clone(),
        embed.coeffs().adjoint() * &m_dec * embed.coeffs(),
    )
    .expect("restricted form is Hermitian PSD");

    // boundary map: average of the two endpoint traces (equal on the subspace)
    let boundary_parts: Vec<&WeightedSpace> = bp.edge_spaces.iter().collect();
    let boundary = WeightedSpace::direct_sum(&boundary_parts, "coupled boundary");
    let mut gamma = DMatrix::<C64>::zeros(boundary.dim(), coupled_space.dim());
    for e in 0..g.edge_count() {
        let (vs, vd) = (g.src(e), g.dst(e));
        let gs = bp.gamma_ve(vs, e);
        let gd = bp.gamma_ve(vd, e);
        let emb_s = embed
            .coeffs()
            .view((space_offsets[vs], 0), (spaces[vs].dim(), coupled_space.dim()))
            .into_owned();
        let emb_d = embed
            .coeffs()
            .view((space_offsets[vd], 0), (spaces[vd].dim(), coupled_space.dim()))
            .into_owned();
        let rows = (gs.coeffs() * emb_s + gd.coeffs() * emb_d).map(|x| x * 0.5);
        gamma
            .view_mut((edge_offsets[e], 0), (edge_dims[e], coupled_space.dim()))
            .copy_from(&rows);
    }
    let gamma = LinOp::new(coupled_space.clone(), boundary.clone(), gamma).expect("shape");
    let split = detect_split(&gamma);
    let abvp = Abvp::new(coupled_space, boundary, gamma, form, split)?;
    Ok(VertexCoupled {
        abvp,
        embed,
        dec_space,
        space_offsets,
        edge_offsets,
        constraint,
    })
}

fn resolve_param(
    param: Option<LinOp>,
    dec_space: &WeightedSpace,
    constraint: &DMatrix<C64>,
    label: &str,
) -> Result<LinOp, CouplingError> {
    match param {
        Some(p) => {
            if !p.codomain().compatible(dec_space) {
                return Err(CouplingError::BlueprintInvalid(
                    "parameterization codomain is not the decoupled space".into(),
                ));
            }
            let defect = p
                .adjoint()
                .compose(&p)
                .max_abs_diff(&LinOp::identity(p.domain()));
            if defect > 1e-12 {
                return Err(CouplingError::BlueprintInvalid(format!(
                    "parameterization is not isometric (defect {defect:.3e})"
                )));
            }
            let resid = (constraint * p.coeffs()).norm();
            if resid > 1e-10 * (1.0 + constraint.norm()) {
                return Err(CouplingError::BlueprintInvalid(format!(
                    "parameterization violates the coupling constraints ({resid:.3e})"
                )));
            }
            let generic = nullspace_embed(dec_space, constraint, label);
            if generic.domain().dim() != p.domain().dim() {
                return Err(CouplingError::BlueprintInvalid(format!(
                    "parameterization dimension {} but constraint nullity {}",
                    p.domain().dim(),
                    generic.domain().dim()
                )));
            }
            Ok(p)
        }
        None => Ok(nullspace_embed(dec_space, constraint, label)),
    }
}

/// `iota : (+)_e G_e -> (+)_v G_v`, `(iota phi)_v = sum_{e in E_v} pi*_{v,e} phi_e`.
pub fn vertex_coupling_iota(bp: &VertexCouplingBlueprint) -> LinOp {
    let g = &bp.graph;
    let bd_parts: Vec<&WeightedSpace> = bp.edge_spaces.iter().collect();
    let boundary = WeightedSpace::direct_sum(&bd_parts, "coupled boundary");
    let dec_parts: Vec<&WeightedSpace> = bp.vertex_abvps.iter().map(|p| p.boundary()).collect();
    let bd_dec = WeightedSpace::direct_sum(&dec_parts, "decoupled boundary");
    let edge_offsets = offsets(&bp.edge_spaces.iter().map(|s| s.dim()).collect::<Vec<_>>());
    let dec_offsets = offsets(&dec_parts.iter().map(|s| s.dim()).collect::<Vec<_>>());
    let mut coeffs = DMatrix::<C64>::zeros(bd_dec.dim(), boundary.dim());
    for v in 0..g.vertex_count() {
        for &e in g.incident_edges(v) {
            let pistar = bp.trace(v, e).adjoint();
            coeffs
                .view_mut(
                    (dec_offsets[v], edge_offsets[e]),
                    (dec_parts[v].dim(), bp.edge_spaces[e].dim()),
                )
                .copy_from(pistar.coeffs());
        }
    }
    LinOp::new(boundary, bd_dec, coeffs).expect("shape")
}

/// Coupled DtN via the building blocks: `Lambda(z) = iota* Lambda^dec(z) iota`.
pub fn coupled_dtn(bp: &VertexCouplingBlueprint, z: C64) -> Result<LinOp, CouplingError> {
    let iota = vertex_coupling_iota(bp);
    let dec_parts: Vec<&WeightedSpace> = bp.vertex_abvps.iter().map(|p| p.boundary()).collect();
    let bd_dec = iota.codomain().clone();
    let dec_offsets = offsets(&dec_parts.iter().map(|s| s.dim()).collect::<Vec<_>>());
    let mut lam_dec = DMatrix::<C64>::zeros(bd_dec.dim(), bd_dec.dim());
    for (v, p) in bp.vertex_abvps.iter().enumerate() {
        let lam_v = p.dtn(z)?;
        lam_dec
            .view_mut(
                (dec_offsets[v], dec_offsets[v]),
                (dec_parts[v].dim(), dec_parts[v].dim()),
            )
            .copy_from(lam_v.coeffs());
    }
    let lam_dec = LinOp::new(bd_dec.clone(), bd_dec, lam_dec).expect("shape");
    Ok(iota.adjoint().compose(&lam_dec).compose(&iota))
}

/// Star-component blueprint of a graph: one graph problem per star `G_v`
/// with boundary its leaves, scalar edge spaces, coordinate traces. The
/// second return value parameterizes the constraint subspace by
/// `l2(A, deg_SG)` of the subdivision graph (vertices of `G` first, then
/// edge midpoints), under which the coupled problem *is* the subdivision
/// graph problem with boundary `E`.
pub fn star_coupling_blueprint(
    g: &Graph,
) -> Result<(VertexCouplingBlueprint, LinOp), CouplingError> {
    let stars = g.star_components();
    let mut vertex_abvps = Vec::with_capacity(stars.len());
    let mut traces = HashMap::new();
    for (v, s) in stars.iter().enumerate() {
        let leaf_ids: Vec<&str> = s.boundary.iter().map(String::as_str).collect();
        let pi = crate::abvp::graph_abvp(&s.graph, &leaf_ids)?;
        // leaves carry degree 1 in the star, so G_v = l2(E_v, 1) and the
        // coordinate projections onto scalar edge spaces are isometric
        for (pos, &e) in g.incident_edges(v).iter().enumerate() {
            let mut coeffs = DMatrix::<C64>::zeros(1, pi.boundary().dim());
            coeffs[(0, pos)] = c1();
            let edge_space = WeightedSpace::unweighted(1, format!("G_e {}", g.edges()[e].id));
            let p = LinOp::new(pi.boundary().clone(), edge_space, coeffs).expect("shape");
            traces.insert((v, e), p);
        }
        vertex_abvps.push(pi);
    }
    let edge_spaces: Vec<WeightedSpace> = g
        .edges()
        .iter()
        .map(|e| WeightedSpace::unweighted(1, format!("G_e {}", e.id)))
        .collect();
    let bp = VertexCouplingBlueprint {
        graph: g.clone(),
        vertex_abvps,
        edge_spaces,
        traces,
    };

    // natural parameterization by the subdivision graph
    let sg = g.subdivision();
    let coupled_space = sg.vertex_space()?;
    let dec_dims: Vec<usize> = bp.vertex_abvps.iter().map(|p| p.space().dim()).collect();
    let space_offsets = offsets(&dec_dims);
    let n: usize = dec_dims.iter().sum();
    let mut coeffs = DMatrix::<C64>::zeros(n, coupled_space.dim());
    for v in 0..g.vertex_count() {
        // star coordinates: centre first, then leaves in incident order
        coeffs[(space_offsets[v], v)] = c1();
        for (pos, &e) in g.incident_edges(v).iter().enumerate() {
            coeffs[(space_offsets[v] + 1 + pos, g.vertex_count() + e)] = c1();
        }
    }
    let dec_space = WeightedSpace::direct_sum(
        &bp.vertex_abvps.iter().map(|p| p.space()).collect::<Vec<_>>(),
        "decoupled star space",
    );
    let param = LinOp::new(coupled_space, dec_space, coeffs).expect("shape");
    Ok((bp, param))
}

/// Consistency checks of the coupling theorems on a concrete coupled
/// problem: kernel decoupling, Dirichlet-spectrum union, decoupled solution
/// operator, the two DtN routes, and the boundary-map norm bound.
#[derive(Debug)]
pub struct CouplingChecks {
    pub ker_dim_ok: bool,
    pub ker_fit_residual: f64,
    pub dirichlet_multiset_err: f64,
    pub dtn_two_path_err: f64,
    pub s_decoupled_err: f64,
    pub gamma_norm: f64,
    pub gamma_norm_limit: f64,
}

impl CouplingChecks {
    pub fn pass(&self) -> bool {
        self.ker_dim_ok
            && self.ker_fit_residual <= 1e-10
            && self.dirichlet_multiset_err <= 1e-8
            && self.dtn_two_path_err <= 1e-10
            && self.s_decoupled_err <= 1e-10
            && self.gamma_norm <= self.gamma_norm_limit + 1e-10
    }

    pub fn max_residual(&self) -> f64 {
        self.ker_fit_residual
            .max(self.dirichlet_multiset_err)
            .max(self.dtn_two_path_err)
            .max(self.s_decoupled_err)
            .max((self.gamma_norm - self.gamma_norm_limit).max(0.0))
    }
}

pub fn verify_vertex_coupling(
    bp: &VertexCouplingBlueprint,
    coupled: &VertexCoupled,
    zs: &[C64],
) -> Result<CouplingChecks, CouplingError> {
    let pi = &coupled.abvp;
    // ker Gamma decoupling
    let mut ker_dims = 0;
    let mut ker_fit_residual: f64 = 0.0;
    for (v, p) in bp.vertex_abvps.iter().enumerate() {
        let ker = p.ker_embed();
        ker_dims += ker.domain().dim();
        for kcol in 0..ker.domain().dim() {
            let mut ambient = nalgebra::DVector::<C64>::zeros(coupled.dec_space.dim());
            for i in 0..p.space().dim() {
                ambient[coupled.space_offsets[v] + i] = ker.coeffs()[(i, kcol)];
            }
            // must lie in the constraint subspace...
            let x = coupled.embed.adjoint().apply(&ambient);
            let back = coupled.embed.apply(&x);
            let proj_res = coupled.dec_space.norm(&(&ambient - &back));
            // ...and in the kernel of the coupled boundary map
            let bd_res = pi.boundary().norm(&pi.gamma().apply(&x));
            ker_fit_residual = ker_fit_residual.max(proj_res).max(bd_res);
        }
    }
    let ker_dim_ok = ker_dims == pi.ker_embed().domain().dim();

    // Dirichlet spectrum is the multiset union of the component spectra
    let mut dec_dirichlet: Vec<f64> = bp
        .vertex_abvps
        .iter()
        .flat_map(|p| p.dirichlet_spectrum().iter().copied())
        .collect();
    dec_dirichlet.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let coupled_dirichlet = pi.dirichlet_spectrum();
    let dirichlet_multiset_err = if dec_dirichlet.len() == coupled_dirichlet.len() {
        dec_dirichlet
            .iter()
            .zip(coupled_dirichlet)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };

    // S(z) phi = S^dec(z) iota phi, compared through the parameterization
    let iota = vertex_coupling_iota(bp);
    let mut s_decoupled_err: f64 = 0.0;
    let mut dtn_two_path_err: f64 = 0.0;
    for &z in zs {
        let s_c = pi.solution_operator(z)?;
        let mut s_dec = DMatrix::<C64>::zeros(coupled.dec_space.dim(), iota.codomain().dim());
        let mut bd_off = 0;
        for (v, p) in bp.vertex_abvps.iter().enumerate() {
            let s_v = p.solution_operator(z)?;
            s_dec
                .view_mut(
                    (coupled.space_offsets[v], bd_off),
                    (p.space().dim(), p.boundary().dim()),
                )
                .copy_from(s_v.coeffs());
            bd_off += p.boundary().dim();
        }
        let lhs = coupled.embed.coeffs() * s_c.coeffs();
        let rhs = s_dec * iota.coeffs();
        let err = (&lhs - &rhs).norm() / (1.0 + rhs.norm());
        s_decoupled_err = s_decoupled_err.max(err);

        let lam_blocks = coupled_dtn(bp, z)?;
        let lam_direct = pi.dtn(z)?;
        let err = lam_blocks.max_abs_diff(&lam_direct) / (1.0 + lam_direct.frobenius());
        dtn_two_path_err = dtn_two_path_err.max(err);
    }

    // ||Gamma||^2 <= sup_v ||Gamma_v||^2 / 2
    let gamma_norm = pi
        .gamma()
        .opnorm(pi.h1_gram(), &pi.boundary().gram())
        .expect("definite");
    let gamma_norm_limit = bp.sup_gamma_norm() / 2.0_f64.sqrt();

    Ok(CouplingChecks {
        ker_dim_ok,
        ker_fit_residual,
        dirichlet_multiset_err,
        dtn_two_path_err,
        s_decoupled_err,
        gamma_norm,
        gamma_norm_limit,
    })
}

/// Affine fit of the coupled star DtN against the line-graph Laplacian for
/// a regular graph, with the induced spectral map validated against
/// brute-force spectra. The fitted constant term differs from the closed
/// form printed in the source text by `-2/((1-z) r)`: the diagonal `e' = e`
/// term of the trace sum; the assembled operator is authoritative here and
/// the report records both.
#[derive(Debug)]
pub struct LineGraphDtnReport {
    pub r: usize,
    pub z: C64,
    pub alpha_fit: C64,
    pub beta_fit: C64,
    pub fit_residual: f64,
    pub alpha_printed: C64,
    pub beta_printed: C64,
    /// |alpha_fit - (alpha_printed - 2/((1-z) r))|
    pub alpha_oracle_defect: f64,
    /// forward: every subdivision eigenvalue (except 1) maps into spec(LG)
    pub map_forward_err: f64,
    /// backward: preimages of every line-graph eigenvalue found in spec(SG)
    pub map_backward_err: f64,
    /// distance of the printed map's image from spec(LG) (documentation)
    pub printed_map_err: f64,
}

impl LineGraphDtnReport {
    pub fn pass(&self) -> bool {
        self.fit_residual <= 1e-10
            && self.alpha_oracle_defect <= 1e-10
            && (self.beta_fit - self.beta_printed).norm() <= 1e-10
            && self.map_forward_err <= 1e-8
            && self.map_backward_err <= 1e-8
    }
}

pub fn line_graph_dtn_check(g: &Graph, z: C64) -> Result<LineGraphDtnReport, CouplingError> {
    let r = g.regularity().ok_or(CouplingError::NotRegular)?;
    if (z - c1()).norm() < 1e-8 {
        return Err(CouplingError::BlueprintInvalid(
            "z = 1 is the decoupled Dirichlet point".into(),
        ));
    }
    let (bp, _) = star_coupling_blueprint(g)?;
    let lam = coupled_dtn(&bp, z)?;
    let lg = g.line_graph();
    let delta_lg = lg.normalized_laplacian()?;
    let m = g.edge_count();
    // least squares for Lambda = alpha I + beta (I - Delta_LG)
    let zero = C64::new(0.0, 0.0);
    let (mut a11, mut a22) = (0.0_f64, 0.0_f64);
    let mut a12 = zero;
    let (mut b1, mut b2) = (zero, zero);
    for i in 0..m {
        for j in 0..m {
            let e1 = if i == j { c1() } else { zero };
            let e2 = e1 - delta_lg.coeffs()[(i, j)];
            let y = lam.coeffs()[(i, j)];
            a11 += (e1 * e1.conj()).re;
            a12 += e1.conj() * e2;
            a22 += (e2 * e2.conj()).re;
            b1 += e1.conj() * y;
            b2 += e2.conj() * y;
        }
    }
    let det = C64::new(a11 * a22, 0.0) - a12 * a12.conj();
    let alpha_fit = (C64::new(a22, 0.0) * b1 - a12 * b2) / det;
    let beta_fit = (C64::new(a11, 0.0) * b2 - a12.conj() * b1) / det;
    let mut fit_residual = 0.0_f64;
    for i in 0..m {
        for j in 0..m {
            let e1 = if i == j { c1() } else { zero };
            let e2 = e1 - delta_lg.coeffs()[(i, j)];
            let y = lam.coeffs()[(i, j)] - alpha_fit * e1 - beta_fit * e2;
            fit_residual = fit_residual.max(y.norm());
        }
    }
    let rr = r as f64;
    let alpha_printed = (c1() - z) * 2.0;
    let beta_printed = -C64::new(2.0 * rr - 2.0, 0.0) / ((c1() - z) * rr);
    let alpha_oracle = alpha_printed - C64::new(2.0, 0.0) / ((c1() - z) * rr);
    let alpha_oracle_defect = (alpha_fit - alpha_oracle).norm();

    // spectral maps validated against brute-force spectra
    let spec_sg = g.subdivision().spectrum()?;
    let spec_lg = lg.spectrum()?;
    let map = |l: f64| (rr / (rr - 1.0)) * (1.0 - (1.0 - l) * (1.0 - l));
    let printed_map = |l: f64| 1.0 - (rr / (rr - 1.0)) * (1.0 - l) * (1.0 - l);
    let dist = |x: f64, set: &[f64]| {
        set.iter()
            .map(|s| (s - x).abs())
            .fold(f64::INFINITY, f64::min)
    };
    let mut map_forward_err = 0.0_f64;
    let mut printed_map_err = 0.0_f64;
    for &l in &spec_sg {
        if (l - 1.0).abs() <= 1e-8 {
            continue;
        }
        map_forward_err = map_forward_err.max(dist(map(l), &spec_lg));
        printed_map_err = printed_map_err.max(dist(printed_map(l), &spec_lg));
    }
    let mut map_backward_err = 0.0_f64;
    for &mu in &spec_lg {
        let disc = 1.0 - mu * (rr - 1.0) / rr;
        if disc < -1e-12 {
            map_backward_err = f64::INFINITY;
            continue;
        }
        let s = disc.max(0.0).sqrt();
        if s <= 1e-8 {
            // only the excluded preimage lambda = 1
            continue;
        }
        let best = dist(1.0 - s, &spec_sg).min(dist(1.0 + s, &spec_sg));
        map_backward_err = map_backward_err.max(best);
    }
    Ok(LineGraphDtnReport {
        r,
        z,
        alpha_fit,
        beta_fit,
        fit_residual,
        alpha_printed,
        beta_printed,
        alpha_oracle_defect,
        map_forward_err,
        map_backward_err,
        printed_map_err,
    })
}

/// Per-edge building blocks with a declared splitting of each boundary into
/// endpoint components, plus an isometric vertex subspace embedding
/// `iota_v : G_v -> G_v^max = (+)_{e in E_v} G_{e,v}`.
pub struct EdgeCouplingBlueprint {
    pub graph: Graph,
    pub edge_abvps: Vec<Abvp>,
    /// coordinate partition of each `G_e` into the `src` and `dst` blocks.
    pub edge_splits: Vec<(Vec<usize>, Vec<usize>)>,
    pub vertex_embeddings: Vec<LinOp>,
}

impl EdgeCouplingBlueprint {
    pub fn fibre_space(&self, e: usize, at_src: bool) -> WeightedSpace {
        let coords = if at_src {
            &self.edge_splits[e].0
        } else {
            &self.edge_splits[e].1
        };
        let wb = self.edge_abvps[e].boundary().weights();
        let weights: Vec<f64> = coords.iter().map(|&i| wb[i]).collect();
        if weights.is_empty() {
            WeightedSpace::unweighted(0, "fibre")
        } else {
            WeightedSpace::new(weights, "fibre").expect("positive")
        }
    }

    /// `G_v^max` with blocks ordered by the incident-edge order of `v`.
    pub fn vertex_max_space(&self, v: usize) -> WeightedSpace {
        let parts: Vec<WeightedSpace> = self
            .graph
            .incident_edges(v)
            .iter()
            .map(|&e| self.fibre_space(e, self.graph.src(e) == v))
            .collect();
        let refs: Vec<&WeightedSpace> = parts.iter().collect();
        WeightedSpace::direct_sum(&refs, format!("G_max at {}", self.graph.vertices()[v]))
    }

    pub fn validate(&self) -> Result<(), CouplingError> {
        let g = &self.graph;
        if self.edge_abvps.len() != g.edge_count()
            || self.edge_splits.len() != g.edge_count()
            || self.vertex_embeddings.len() != g.vertex_count()
        {
            return Err(CouplingError::BlueprintInvalid(
                "component counts do not match the graph".into(),
            ));
        }
        for e in 0..g.edge_count() {
            let (s, d) = &self.edge_splits[e];
            let dim = self.edge_abvps[e].boundary().dim();
            let mut seen = vec![false; dim];
            for &i in s.iter().chain(d.iter()) {
                if i >= dim || seen[i] {
                    return Err(CouplingError::BlueprintInvalid(format!(
                        "edge {e}: split does not partition the boundary"
                    )));
                }
                seen[i] = true;
            }
            if !seen.iter().all(|&b| b) {
                return Err(CouplingError::BlueprintInvalid(format!(
                    "edge {e}: split does not cover the boundary"
                )));
            }
        }
        for v in 0..g.vertex_count() {
            let iota = &self.vertex_embeddings[v];
            let gmax = self.vertex_max_space(v);
            if !iota.codomain().compatible(&gmax) {
                return Err(CouplingError::BlueprintInvalid(format!(
                    "vertex {v}: embedding codomain is not G_v^max"
                )));
            }
            let defect = iota
                .adjoint()
                .compose(iota)
                .max_abs_diff(&LinOp::identity(iota.domain()));
            if defect > 1e-12 {
                return Err(CouplingError::BlueprintInvalid(format!(
                    "vertex {v}: embedding not isometric (defect {defect:.3e})"
                )));
            }
        }
        Ok(())
    }

    /// Reordering `(+)_e G_e -> (+)_v G_v^max` (a weighted-isometric
    /// coordinate permutation).
    fn reorder_to_vertices(&self) -> LinOp {
        let g = &self.graph;
        let bd_parts: Vec<&WeightedSpace> =
            self.edge_abvps.iter().map(|p| p.boundary()).collect();
        let bd_dec = WeightedSpace::direct_sum(&bd_parts, "edge-ordered boundary");
        let edge_offsets = offsets(&bd_parts.iter().map(|s| s.dim()).collect::<Vec<_>>());
        let max_spaces: Vec<WeightedSpace> = (0..g.vertex_count())
            .map(|v| self.vertex_max_space(v))
            .collect();
        let refs: Vec<&WeightedSpace> = max_spaces.iter().collect();
        let gmax = WeightedSpace::direct_sum(&refs, "vertex-ordered boundary");
        let vmax_offsets = offsets(&max_spaces.iter().map(|s| s.dim()).collect::<Vec<_>>());
        let mut coeffs = DMatrix::<C64>::zeros(gmax.dim(), bd_dec.dim());
        for v in 0..g.vertex_count() {
            let mut pos = vmax_offsets[v];
            for &e in g.incident_edges(v) {
                let coords = if g.src(e) == v {
                    &self.edge_splits[e].0
                } else {
                    &self.edge_splits[e].1
                };
                for &i in coords {
                    coeffs[(pos, edge_offsets[e] + i)] = c1();
                    pos += 1;
                }
            }
        }
        LinOp::new(bd_dec, gmax, coeffs).expect("shape")
    }

    /// `iota : (+)_v G_v -> (+)_e G_e` (vertex subspaces into the edge-ordered
    /// decoupled boundary).
    pub fn iota(&self) -> LinOp {
        let reorder = self.reorder_to_vertices();
        let vertex_spaces: Vec<&WeightedSpace> =
            self.vertex_embeddings.iter().map(|i| i.domain()).collect();
        let gsub = WeightedSpace::direct_sum(&vertex_spaces, "coupled edge boundary");
        let max_spaces: Vec<WeightedSpace> = (0..self.graph.vertex_count())
            .map(|v| self.vertex_max_space(v))
            .collect();
        let vmax_offsets = offsets(&max_spaces.iter().map(|s| s.dim()).collect::<Vec<_>>());
        let sub_offsets = offsets(&vertex_spaces.iter().map(|s| s.dim()).collect::<Vec<_>>());
        let mut block = DMatrix::<C64>::zeros(reorder.codomain().dim(), gsub.dim());
        for (v, iota_v) in self.vertex_embeddings.iter().enumerate() {
            block
                .view_mut(
                    (vmax_offsets[v], sub_offsets[v]),
                    (iota_v.codomain().dim(), iota_v.domain().dim()),
                )
                .copy_from(iota_v.coeffs());
        }
        let into_max = LinOp::new(gsub, reorder.codomain().clone(), block).expect("shape");
        reorder.adjoint().compose(&into_max)
    }
}

/// Standard vertex space over a common fibre: the `deg`-fold diagonal,
/// carried by the fibre coordinates with weights scaled by `deg` so that
/// `eta -> (eta, ..., eta)` is isometric.
pub fn standard_vertex_embedding(fibre: &WeightedSpace, deg: usize) -> (WeightedSpace, LinOp) {
    assert!(deg >= 1);
    let weights: Vec<f64> = fibre.weights().iter().map(|w| w * deg as f64).collect();
    let model =
        WeightedSpace::new(weights, format!("standard({})", fibre.label())).expect("positive");
    let copies: Vec<&WeightedSpace> = (0..deg).map(|_| fibre).collect();
    let gmax = WeightedSpace::direct_sum(&copies, "G_v^max");
    let d = fibre.dim();
    let mut coeffs = DMatrix::<C64>::zeros(deg * d, d);
    for k in 0..deg {
        for i in 0..d {
            coeffs[(k * d + i, i)] = c1();
        }
    }
    (model.clone(), LinOp::new(model, gmax, coeffs).expect("shape"))
}

/// Standard embeddings for every vertex of an edge family whose fibres
/// around each vertex agree; errors with the offending vertex otherwise.
pub fn standard_embeddings(
    graph: &Graph,
    edge_abvps: &[Abvp],
    edge_splits: &[(Vec<usize>, Vec<usize>)],
) -> Result<Vec<LinOp>, CouplingError> {
    let probe = EdgeCouplingBlueprint {
        graph: graph.clone(),
        edge_abvps: edge_abvps.to_vec(),
        edge_splits: edge_splits.to_vec(),
        vertex_embeddings: Vec::new(),
    };
    let mut out = Vec::with_capacity(graph.vertex_count());
    for v in 0..graph.vertex_count() {
        let inc = graph.incident_edges(v);
        if inc.is_empty() {
            return Err(CouplingError::FibreMismatch(graph.vertices()[v].clone()));
        }
        let fibres: Vec<WeightedSpace> = inc
            .iter()
            .map(|&e| probe.fibre_space(e, graph.src(e) == v))
            .collect();
        let first = &fibres[0];
        if !fibres.iter().all(|f| f.compatible(first)) {
            return Err(CouplingError::FibreMismatch(graph.vertices()[v].clone()));
        }
        let (_, emb) = standard_vertex_embedding(first, inc.len());
        out.push(emb);
    }
    Ok(out)
}

pub struct EdgeCoupled {
    pub abvp: Abvp,
    pub embed: LinOp,
    pub dec_space: WeightedSpace,
    pub space_offsets: Vec<usize>,
    /// offsets of the `G_v` blocks inside the coupled boundary.
    pub vertex_offsets: Vec<usize>,
}

/// Edge-couple a family: the form domain is restricted to
/// `{f : Gamma^dec f in (+)_v iota_v(G_v)}` and the boundary map takes
/// values in `(+)_v G_v` (vertex-subspace coordinates).
pub fn edge_couple(
    bp: &EdgeCouplingBlueprint,
    param: Option<LinOp>,
) -> Result<EdgeCoupled, CouplingError> {
    bp.validate()?;
    let spaces: Vec<&WeightedSpace> = bp.edge_abvps.iter().map(|p| p.space()).collect();
    let dec_space = WeightedSpace::direct_sum(&spaces, "decoupled edge space");
    let space_offsets = offsets(&spaces.iter().map(|s| s.dim()).collect::<Vec<_>>());
    let n = dec_space.dim();

    // Gamma^dec in edge order
    let bd_parts: Vec<&WeightedSpace> = bp.edge_abvps.iter().map(|p| p.boundary()).collect();
    let bd_dims: Vec<usize> = bd_parts.iter().map(|s| s.dim()).collect();
    let bd_off = offsets(&bd_dims);
    let bd_total: usize = bd_dims.iter().sum();
    let mut gamma_dec = DMatrix::<C64>::zeros(bd_total, n);
    for (e, p) in bp.edge_abvps.iter().enumerate() {
        gamma_dec
            .view_mut((bd_off[e], space_offsets[e]), (bd_dims[e], spaces[e].dim()))
            .copy_from(p.gamma().coeffs());
    }

    // constraint: (1 - iota iota*) Gamma^dec f = 0
    let iota = bp.iota();
    let q = iota.compose(&iota.adjoint());
    let mut proj_complement = q.coeffs().map(|x| -x);
    for i in 0..bd_total {
        proj_complement[(i, i)] += c1();
    }
    let constraint = proj_complement * &gamma_dec;

    let embed = resolve_param(param, &dec_space, &constraint, "edge coupled")?;

    let coupled_space = embed.domain().clone();
    let mut m_dec = DMatrix::<C64>::zeros(n, n);
    for (e, p) in bp.edge_abvps.iter().enumerate() {
        m_dec
            .view_mut(
                (space_offsets[e], space_offsets[e]),
                (spaces[e].dim(), spaces[e].dim()),
            )
            .copy_from(p.form().coeffs());
    }
    let form = GramForm::new(
        coupled_space.clone(),
        embed.coeffs().adjoint() * &m_dec * embed.coeffs(),
    )
    .expect("restricted form is Hermitian PSD");

    // Gamma_c = iota* Gamma^dec E in vertex-subspace coordinates
    let vertex_spaces: Vec<&WeightedSpace> =
        bp.vertex_embeddings.iter().map(|i| i.domain()).collect();
    let boundary = WeightedSpace::direct_sum(&vertex_spaces, "coupled edge boundary");
    let vertex_offsets = offsets(&vertex_spaces.iter().map(|s| s.dim()).collect::<Vec<_>>());
    let gamma_c = iota.adjoint().coeffs() * &gamma_dec * embed.coeffs();
    let gamma = LinOp::new(coupled_space.clone(), boundary.clone(), gamma_c).expect("shape");
    let split = detect_split(&gamma);
    let abvp = Abvp::new(coupled_space, boundary, gamma, form, split)?;
    Ok(EdgeCoupled {
        abvp,
        embed,
        dec_space,
        space_offsets,
        vertex_offsets,
    })
}

/// Coupled DtN of an edge coupling via the building blocks:
/// `Lambda(z) = iota* Lambda^dec(z) iota`.
pub fn edge_coupled_dtn(bp: &EdgeCouplingBlueprint, z: C64) -> Result<LinOp, CouplingError> {
    let iota = bp.iota();
    let bd_dims: Vec<usize> = bp.edge_abvps.iter().map(|p| p.boundary().dim()).collect();
    let bd_off = offsets(&bd_dims);
    let total: usize = bd_dims.iter().sum();
    let mut lam_dec = DMatrix::<C64>::zeros(total, total);
    for (e, p) in bp.edge_abvps.iter().enumerate() {
        let lam_e = p.dtn(z)?;
        lam_dec
            .view_mut((bd_off[e], bd_off[e]), (bd_dims[e], bd_dims[e]))
            .copy_from(lam_e.coeffs());
    }
    let lam_dec =
        LinOp::new(iota.codomain().clone(), iota.codomain().clone(), lam_dec).expect("shape");
    Ok(iota.adjoint().compose(&lam_dec).compose(&iota))
}

pub fn verify_edge_coupling(
    bp: &EdgeCouplingBlueprint,
    coupled: &EdgeCoupled,
    zs: &[C64],
) -> Result<CouplingChecks, CouplingError> {
    let pi = &coupled.abvp;
    let mut ker_dims = 0;
    let mut ker_fit_residual: f64 = 0.0;
    for (e, p) in bp.edge_abvps.iter().enumerate() {
        let ker = p.ker_embed();
        ker_dims += ker.domain().dim();
        for kcol in 0..ker.domain().dim() {
            let mut ambient = nalgebra::DVector::<C64>::zeros(coupled.dec_space.dim());
            for i in 0..p.space().dim() {
                ambient[coupled.space_offsets[e] + i] = ker.coeffs()[(i, kcol)];
            }
            let x = coupled.embed.adjoint().apply(&ambient);
            let back = coupled.embed.apply(&x);
            let proj_res = coupled.dec_space.norm(&(&ambient - &back));
            let bd_res = pi.boundary().norm(&pi.gamma().apply(&x));
            ker_fit_residual = ker_fit_residual.max(proj_res).max(bd_res);
        }
    }
    let ker_dim_ok = ker_dims == pi.ker_embed().domain().dim();

    let mut dec_dirichlet: Vec<f64> = bp
        .edge_abvps
        .iter()
        .flat_map(|p| p.dirichlet_spectrum().iter().copied())
        .collect();
    dec_dirichlet.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let coupled_dirichlet = pi.dirichlet_spectrum();
    let dirichlet_multiset_err = if dec_dirichlet.len() == coupled_dirichlet.len() {
        dec_dirichlet
            .iter()
            .zip(coupled_dirichlet)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };

    let iota = bp.iota();
    let mut s_decoupled_err: f64 = 0.0;
    let mut dtn_two_path_err: f64 = 0.0;
    for &z in zs {
        let s_c = pi.solution_operator(z)?;
        let bd_dims: Vec<usize> = bp.edge_abvps.iter().map(|p| p.boundary().dim()).collect();
        let bd_off = offsets(&bd_dims);
        let total: usize = bd_dims.iter().sum();
        let mut s_dec = DMatrix::<C64>::zeros(coupled.dec_space.dim(), total);
        for (e, p) in bp.edge_abvps.iter().enumerate() {
            let s_e = p.solution_operator(z)?;
            s_dec
                .view_mut(
                    (coupled.space_offsets[e], bd_off[e]),
                    (p.space().dim(), bd_dims[e]),
                )
                .copy_from(s_e.coeffs());
        }
        let lhs = coupled.embed.coeffs() * s_c.coeffs();
        let rhs = s_dec * iota.coeffs();
        s_decoupled_err = s_decoupled_err.max((&lhs - &rhs).norm() / (1.0 + rhs.norm()));

        let lam_blocks = edge_coupled_dtn(bp, z)?;
        let lam_direct = pi.dtn(z)?;
        let err = lam_blocks.max_abs_diff(&lam_direct) / (1.0 + lam_direct.frobenius());
        dtn_two_path_err = dtn_two_path_err.max(err);
    }

    let gamma_norm = pi
        .gamma()
        .opnorm(pi.h1_gram(), &pi.boundary().gram())
        .expect("definite");
    let gamma_norm_limit = bp
        .edge_abvps
        .iter()
        .map(|p| {
            p.gamma()
                .opnorm(p.h1_gram(), &p.boundary().gram())
                .expect("definite")
        })
        .fold(0.0, f64::max);

    Ok(CouplingChecks {
        ker_dim_ok,
        ker_fit_residual,
        dirichlet_multiset_err,
        dtn_two_path_err,
        s_decoupled_err,
        gamma_norm,
        gamma_norm_limit,
    })
}

/// Blueprint of the graph model built from trivial two-dimensional edge
/// problems (`h_e(f) = |f_2 - f_1|^2` on unweighted `C^2`) with standard
/// scalar vertex spaces, plus the natural parameterization of the coupled
/// problem by `l2(V, deg)`.
pub fn trivial_edge_blueprint(
    g: &Graph,
) -> Result<(EdgeCouplingBlueprint, LinOp), CouplingError> {
    let c2 = WeightedSpace::unweighted(2, "edge C^2");
    let form = GramForm::new(
        c2.clone(),
        DMatrix::from_row_slice(2, 2, &[c1(), -c1(), -c1(), c1()]),
    )
    .expect("PSD");
    let edge_abvps: Vec<Abvp> = (0..g.edge_count())
        .map(|_| Abvp::trivial(c2.clone(), form.clone()))
        .collect();
    let edge_splits: Vec<(Vec<usize>, Vec<usize>)> =
        (0..g.edge_count()).map(|_| (vec![0], vec![1])).collect();
    let vertex_embeddings = standard_embeddings(g, &edge_abvps, &edge_splits)?;
    let bp = EdgeCouplingBlueprint {
        graph: g.clone(),
        edge_abvps,
        edge_splits,
        vertex_embeddings,
    };
    // natural parameterization: f_e = (g(src e), g(dst e)) for g in l2(V,deg)
    let coupled_space = g.vertex_space()?;
    let mut coeffs = DMatrix::<C64>::zeros(2 * g.edge_count(), g.vertex_count());
    for e in 0..g.edge_count() {
        coeffs[(2 * e, g.src(e))] = c1();
        coeffs[(2 * e + 1, g.dst(e))] = c1();
    }
    let dec_parts: Vec<&WeightedSpace> = bp.edge_abvps.iter().map(|p| p.space()).collect();
    let dec_space = WeightedSpace::direct_sum(&dec_parts, "decoupled edge space");
    let param = LinOp::new(coupled_space, dec_space, coeffs).expect("shape");
    Ok((bp, param))
}

/// The vertex-edge coupling with trivial vertex problems
/// `Pi_v = (id, G_v, 0, G_v, G_v)`: the coupled problem on
/// `(+)_e H_e (+) (+)_v G_v` together with the equivalence maps
/// `U^1 f = (f, Gamma^ext f)` and `T = id` onto the plain edge coupling.
pub struct TrivialVertexCoupled {
    pub tilde: Abvp,
    /// edge-coupled space -> tilde space, the `U^1` of the equivalence.
    pub u1: LinOp,
    /// boundary identification (identity on `(+)_v G_v`).
    pub t: LinOp,
}

pub fn trivial_vertex_couple(
    bp: &EdgeCouplingBlueprint,
    edge_coupled: &EdgeCoupled,
) -> Result<TrivialVertexCoupled, CouplingError> {
    let pi = &edge_coupled.abvp;
    let k = pi.space().dim();
    // embed the coupled subspace into H~^dec = (+)_e H_e (+) (+)_v G_v:
    // E~ x = (E x, Gamma_c x)
    let bd = pi.boundary().clone();
    let dec_dim = edge_coupled.dec_space.dim() + bd.dim();
    let tilde_dec = WeightedSpace::direct_sum(
        &[&edge_coupled.dec_space, &bd],
        "vertex-edge decoupled space",
    );
    let mut e_tilde = DMatrix::<C64>::zeros(dec_dim, k);
    e_tilde
        .view_mut((0, 0), (edge_coupled.dec_space.dim(), k))
        .copy_from(edge_coupled.embed.coeffs());
    e_tilde
        .view_mut((edge_coupled.dec_space.dim(), 0), (bd.dim(), k))
        .copy_from(pi.gamma().coeffs());
    // Gram of the tilde inner product in x-coordinates
    let w_tilde = tilde_dec.weight_matrix();
    let gram = e_tilde.adjoint() * &w_tilde * &e_tilde;
    let (eigs, u) = hermitian_eigen(&gram);
    if eigs.first().copied().unwrap_or(0.0) <= 1e-12 {
        return Err(CouplingError::BlueprintInvalid(
            "degenerate tilde parameterization".into(),
        ));
    }
    let mut half = DMatrix::<C64>::zeros(k, k);
    let mut half_inv = DMatrix::<C64>::zeros(k, k);
    for (i, &e) in eigs.iter().enumerate() {
        half[(i, i)] = C64::new(e.sqrt(), 0.0);
        half_inv[(i, i)] = C64::new(1.0 / e.sqrt(), 0.0);
    }
    let g_half = &u * half * u.adjoint();
    let g_half_inv = &u * half_inv * u.adjoint();
    let e_on = &e_tilde * &g_half_inv;

    let tilde_space = WeightedSpace::unweighted(k, "vertex-edge coupled");
    // h~ = (+) h_e (+) 0 pulled back along the orthonormal parameterization
    let mut m_tilde = DMatrix::<C64>::zeros(dec_dim, dec_dim);
    for (e, p) in bp.edge_abvps.iter().enumerate() {
        m_tilde
            .view_mut(
                (edge_coupled.space_offsets[e], edge_coupled.space_offsets[e]),
                (p.space().dim(), p.space().dim()),
            )
            .copy_from(p.form().coeffs());
    }
    let form =
        GramForm::new(tilde_space.clone(), e_on.adjoint() * &m_tilde * &e_on).expect("PSD");
    let gamma_coeffs = e_on
        .view((edge_coupled.dec_space.dim(), 0), (bd.dim(), k))
        .into_owned();
    let gamma = LinOp::new(tilde_space.clone(), bd.clone(), gamma_coeffs).expect("shape");
    let split = detect_split(&gamma);
    let tilde = Abvp::new(tilde_space.clone(), bd.clone(), gamma, form, split)?;
    let u1 = LinOp::new(pi.space().clone(), tilde_space, g_half).expect("shape");
    let t = LinOp::identity(&bd);
    Ok(TrivialVertexCoupled { tilde, u1, t })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abvp::graph_abvp;
    use crate::fixtures;
    use crate::testutil::{random_vector, seeded_rng};
    use nalgebra::DVector;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn multiset_close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn direct_sum_of_single_is_same() {
        let pi = graph_abvp(&fixtures::k2(), &["a"]).unwrap();
        let sum = direct_sum(&[&pi]);
        assert!(sum.neumann().max_abs_diff(pi.neumann()) < 1e-14);
        assert_eq!(sum.dirichlet_spectrum(), pi.dirichlet_spectrum());
    }

    #[test]
    fn direct_sum_dirichlet_union() {
        let a = graph_abvp(&fixtures::path_amb(), &["a"]).unwrap();
        let b = graph_abvp(&fixtures::cycle(4), &["v0"]).unwrap();
        let sum = direct_sum(&[&a, &b]);
        let mut expected: Vec<f64> = a
            .dirichlet_spectrum()
            .iter()
            .chain(b.dirichlet_spectrum())
            .copied()
            .collect();
        expected.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!(multiset_close(sum.dirichlet_spectrum(), &expected, 1e-10));
        // trivial (+) trivial = trivial on the sum space
        let sp = WeightedSpace::unweighted(2, "t");
        let t1 = Abvp::trivial(sp.clone(), GramForm::zero(sp.clone()));
        let t2 = Abvp::trivial(sp.clone(), GramForm::zero(sp));
        let ts = direct_sum(&[&t1, &t2]);
        assert!(ts.split().is_some());
        assert!(ts.dirichlet_spectrum().is_empty());
    }

    #[test]
    fn star_coupling_of_k2_is_subdivision_path() {
        let g = fixtures::k2();
        let (bp, param) = star_coupling_blueprint(&g).unwrap();
        let coupled = vertex_couple(&bp, Some(param)).unwrap();
        // with the natural parameterization the coupled problem is the
        // subdivision path with boundary at the midpoint
        let sg = g.subdivision();
        let expected = sg.normalized_laplacian().unwrap();
        assert!(coupled.abvp.neumann().max_abs_diff(&expected) < 1e-12);
        let spec = fixtures::path(3).spectrum().unwrap();
        let got = coupled.abvp.neumann_spectrum();
        assert!(multiset_close(got, &spec, 1e-10));
    }

    #[test]
    fn star_coupling_of_c3_gives_c6_laplacian() {
        let g = fixtures::cycle(3);
        let (bp, param) = star_coupling_blueprint(&g).unwrap();
        let coupled = vertex_couple(&bp, Some(param)).unwrap();
        let spec_c6 = fixtures::cycle(6).spectrum().unwrap();
        assert!(multiset_close(coupled.abvp.neumann_spectrum(), &spec_c6, 1e-10));
        // generic orthonormal parameterization gives the same spectra
        let generic = vertex_couple(&bp, None).unwrap();
        assert!(multiset_close(
            generic.abvp.neumann_spectrum(),
            coupled.abvp.neumann_spectrum(),
            1e-9
        ));
    }

    #[test]
    fn single_vertex_without_edges_is_unchanged() {
        let g = crate::graph::Graph::new(vec!["v".into()], vec![]).unwrap();
        let sp = WeightedSpace::new(vec![1.0, 2.0], "one").unwrap();
        let m = crate::testutil::random_psd(&mut seeded_rng(3), 2);
        let pi = Abvp::trivial(sp.clone(), GramForm::new(sp, m).unwrap());
        let bp = VertexCouplingBlueprint {
            graph: g,
            vertex_abvps: vec![pi.clone()],
            edge_spaces: vec![],
            traces: HashMap::new(),
        };
        let coupled = vertex_couple(&bp, None).unwrap();
        assert_eq!(coupled.abvp.space().dim(), 2);
        assert!(multiset_close(
            coupled.abvp.neumann_spectrum(),
            pi.neumann_spectrum(),
            1e-10
        ));
    }

    #[test]
    fn vertex_coupling_theorem_items_on_fixtures() {
        let zs = [c(-1.0, 0.0), c(-2.3, 0.0), c(0.5, 1.0)];
        for g in [
            fixtures::k2(),
            fixtures::cycle(3),
            fixtures::cycle(4),
            fixtures::complete(4),
            fixtures::star(3),
        ] {
            let (bp, param) = star_coupling_blueprint(&g).unwrap();
            let coupled = vertex_couple(&bp, Some(param)).unwrap();
            let checks = verify_vertex_coupling(&bp, &coupled, &zs).unwrap();
            assert!(
                checks.pass(),
                "checks failed: ker_fit={:.2e} dir={:.2e} dtn={:.2e} s={:.2e} gamma {:.4} <= {:.4}",
                checks.ker_fit_residual,
                checks.dirichlet_multiset_err,
                checks.dtn_two_path_err,
                checks.s_decoupled_err,
                checks.gamma_norm,
                checks.gamma_norm_limit
            );
        }
    }

    #[test]
    fn coupled_dtn_two_paths_on_c4() {
        let g = fixtures::cycle(4);
        let (bp, param) = star_coupling_blueprint(&g).unwrap();
        let coupled = vertex_couple(&bp, Some(param)).unwrap();
        // two-path agreement on 20 random z off the Dirichlet point 1
        let mut rng = seeded_rng(71);
        let mut tested = 0;
        while tested < 20 {
            use rand::Rng;
            let z = c(rng.gen_range(-3.0..3.0), rng.gen_range(-1.5..1.5));
            if (z - c(1.0, 0.0)).norm() < 0.05 {
                continue;
            }
            tested += 1;
            let lam = coupled_dtn(&bp, z).unwrap();
            let lam2 = coupled.abvp.dtn(z).unwrap();
            assert!(lam.max_abs_diff(&lam2) < 1e-10 * (1.0 + lam2.frobenius()));
        }
        // Hermitian positive definite at z = -1
        let lam_m1 = coupled_dtn(&bp, c(-1.0, 0.0)).unwrap();
        assert!(lam_m1.self_adjoint_defect() < 1e-12 * (1.0 + lam_m1.frobenius()));
        let eig = lam_m1.eigh().unwrap();
        assert!(eig.min() > 0.0);
    }

    #[test]
    fn krein_and_spectral_relation_on_coupled_fixtures() {
        for g in [fixtures::k2(), fixtures::cycle(3), fixtures::complete(4)] {
            let (bp, param) = star_coupling_blueprint(&g).unwrap();
            let coupled = vertex_couple(&bp, Some(param)).unwrap();
            let pi = &coupled.abvp;
            for z in [c(-1.0, 0.0), c(0.5, 1.0)] {
                let r = pi.krein_residual(z).unwrap();
                assert!(r < 1e-10, "krein residual {r}");
            }
            for &l in pi.neumann_spectrum() {
                if pi.dist_to_dirichlet(c(l, 0.0)) < 1e-6 {
                    continue;
                }
                let (a, b) = pi.spectral_relation_check(l).unwrap();
                assert!(a && b);
            }
        }
    }

    #[test]
    fn bad_parameterization_is_rejected() {
        let g = fixtures::cycle(3);
        let (bp, param) = star_coupling_blueprint(&g).unwrap();
        let scaled = param.scale(c(2.0, 0.0));
        assert!(matches!(
            vertex_couple(&bp, Some(scaled)),
            Err(CouplingError::BlueprintInvalid(_))
        ));
    }

    #[test]
    fn non_regular_graph_rejected_by_line_graph_check() {
        assert!(matches!(
            line_graph_dtn_check(&fixtures::star(3), c(-0.5, 0.0)),
            Err(CouplingError::NotRegular)
        ));
    }

    #[test]
    fn mismatched_fibres_rejected_by_standard_embeddings() {
        // one edge with a 2-dimensional boundary split unevenly
        let g = fixtures::path(3);
        let c2 = WeightedSpace::unweighted(2, "edge C^2");
        let c3 = WeightedSpace::unweighted(3, "edge C^3");
        let form2 = GramForm::zero(c2.clone());
        let form3 = GramForm::zero(c3.clone());
        let edge_abvps = vec![Abvp::trivial(c2, form2), Abvp::trivial(c3, form3)];
        let edge_splits = vec![(vec![0], vec![1]), (vec![0, 1], vec![2])];
        assert!(matches!(
            standard_embeddings(&g, &edge_abvps, &edge_splits),
            Err(CouplingError::FibreMismatch(v)) if v == "v1"
        ));
    }

    #[test]
    fn decoupled_dtn_of_isolated_stars() {
        // a 3-star decomposes into the centre star and three single-leaf
        // stars; the coupled DtN adds the leaf DtN (1-z) - 1/(1-z) on the
        // diagonal of the centre DtN
        let g = fixtures::star(3);
        let (bp, _) = star_coupling_blueprint(&g).unwrap();
        let z = c(-0.5, 0.0);
        let lam_centre = bp.vertex_abvps[0].dtn(z).unwrap();
        let coupled = coupled_dtn(&bp, z).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let leaf_term = if i == j {
                    (c1() - z) - (c1() - z).powi(-1)
                } else {
                    c(0.0, 0.0)
                };
                let expected = lam_centre.coeffs()[(i, j)] + leaf_term;
                assert!((coupled.coeffs()[(i, j)] - expected).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn line_graph_dtn_fit_and_spectral_map() {
        for (g, r) in [
            (fixtures::cycle(3), 2usize),
            (fixtures::cycle(4), 2),
            (fixtures::cycle(6), 2),
            (fixtures::complete(4), 3),
        ] {
            let z = c(-0.7, 0.0);
            let report = line_graph_dtn_check(&g, z).unwrap();
            assert_eq!(report.r, r);
            assert!(report.pass(), "report failed: {report:?}");
            // the printed constant term is not what the assembled operator
            // gives: for cycles the printed map misses the spectrum at 0
            if r == 2 {
                assert!(report.printed_map_err > 0.5);
            }
        }
    }

    #[test]
    fn line_graph_dtn_decouples_at_large_negative_z() {
        let report = line_graph_dtn_check(&fixtures::cycle(4), c(-1.0e6, 0.0)).unwrap();
        assert!(report.beta_fit.norm() < 1e-5);
    }

    #[test]
    fn trivial_edge_coupling_reproduces_graph_laplacian() {
        for g in [
            fixtures::k2(),
            fixtures::cycle(3),
            fixtures::cycle(4),
            fixtures::petersen(),
        ] {
            let (bp, param) = trivial_edge_blueprint(&g).unwrap();
            // Lambda_e(z) = [[1-z, -1], [-1, 1-z]]
            let z = c(0.3, -0.2);
            let lam_e = bp.edge_abvps[0].dtn(z).unwrap();
            assert!((lam_e.coeffs()[(0, 0)] - (c1() - z)).norm() < 1e-13);
            assert!((lam_e.coeffs()[(0, 1)] + c1()).norm() < 1e-13);
            let coupled = edge_couple(&bp, Some(param)).unwrap();
            // coupled problem is the graph problem with full boundary
            let delta = g.normalized_laplacian().unwrap();
            assert!(coupled.abvp.neumann().max_abs_diff(&delta) < 1e-12);
            for z in [c(0.0, 0.0), c(-1.2, 0.0), c(0.4, 0.9)] {
                let lam = coupled.abvp.dtn(z).unwrap();
                let expected = delta.shift(z);
                assert!(lam.max_abs_diff(&expected) < 1e-12);
                let lam_blocks = edge_coupled_dtn(&bp, z).unwrap();
                assert!(lam_blocks.max_abs_diff(&expected) < 1e-12);
            }
        }
    }

    #[test]
    fn edge_coupling_theorem_items() {
        let zs = [c(-1.0, 0.0), c(-0.6, 0.0), c(0.5, 1.0)];
        for g in [fixtures::cycle(3), fixtures::complete(4)] {
            let (bp, param) = trivial_edge_blueprint(&g).unwrap();
            let coupled = edge_couple(&bp, Some(param)).unwrap();
            let checks = verify_edge_coupling(&bp, &coupled, &zs).unwrap();
            assert!(checks.ker_dim_ok);
            assert!(checks.ker_fit_residual <= 1e-10);
            assert!(checks.dirichlet_multiset_err <= 1e-8);
            assert!(checks.dtn_two_path_err <= 1e-10);
            assert!(checks.s_decoupled_err <= 1e-10);
        }
    }

    #[test]
    fn full_vertex_subspaces_decouple() {
        // G_v = G_v^max for all v: the coupled problem equals the direct sum
        let g = fixtures::cycle(3);
        let (bp0, _) = trivial_edge_blueprint(&g).unwrap();
        let full_embeddings: Vec<LinOp> = (0..g.vertex_count())
            .map(|v| LinOp::identity(&bp0.vertex_max_space(v)))
            .collect();
        let bp = EdgeCouplingBlueprint {
            graph: g.clone(),
            edge_abvps: bp0.edge_abvps.clone(),
            edge_splits: bp0.edge_splits.clone(),
            vertex_embeddings: full_embeddings,
        };
        let coupled = edge_couple(&bp, None).unwrap();
        let parts: Vec<&Abvp> = bp.edge_abvps.iter().collect();
        let sum = direct_sum(&parts);
        assert_eq!(coupled.abvp.space().dim(), sum.space().dim());
        assert!(multiset_close(
            coupled.abvp.neumann_spectrum(),
            sum.neumann_spectrum(),
            1e-10
        ));
    }

    #[test]
    fn standard_vertex_embedding_shapes() {
        let fibre = WeightedSpace::unweighted(1, "C");
        let (model, emb) = standard_vertex_embedding(&fibre, 1);
        assert_eq!(model.dim(), 1);
        assert_eq!(emb.codomain().dim(), 1);
        let (model2, emb2) = standard_vertex_embedding(&fibre, 2);
        assert!((model2.weights()[0] - 2.0).abs() < 1e-15);
        let v = emb2.apply(&DVector::from_element(1, c1()));
        assert!((v[0] - c1()).norm() < 1e-15 && (v[1] - c1()).norm() < 1e-15);
        let iso = emb2.adjoint().compose(&emb2);
        assert!(iso.max_abs_diff(&LinOp::identity(&model2)) < 1e-14);
    }

    #[test]
    fn averaged_dtn_identity_on_c3() {
        // standard scalar fibres: (Lambda phi)(v) = (1/deg) sum_e (Lambda_e phi_e)(v)
        let g = fixtures::cycle(3);
        let (bp, _) = trivial_edge_blueprint(&g).unwrap();
        let z = c(-0.4, 0.0);
        let lam = edge_coupled_dtn(&bp, z).unwrap();
        let mut manual = DMatrix::<C64>::zeros(3, 3);
        for v in 0..3 {
            for &e in g.incident_edges(v) {
                let lam_e = bp.edge_abvps[e].dtn(z).unwrap();
                let (my_slot, other_slot) = if g.src(e) == v { (0, 1) } else { (1, 0) };
                let other = g.opposite(e, v);
                manual[(v, v)] += lam_e.coeffs()[(my_slot, my_slot)] / 2.0;
                manual[(v, other)] += lam_e.coeffs()[(my_slot, other_slot)] / 2.0;
            }
        }
        assert!((lam.coeffs() - manual).norm() < 1e-12);
    }

    #[test]
    fn trivial_vertex_coupling_reduces_to_edge_coupling() {
        for g in [fixtures::cycle(3), fixtures::complete(4)] {
            let (bp, param) = trivial_edge_blueprint(&g).unwrap();
            let coupled = edge_couple(&bp, Some(param)).unwrap();
            let tv = trivial_vertex_couple(&bp, &coupled).unwrap();
            let mut rng = seeded_rng(17);
            let k = coupled.abvp.space().dim();
            for _ in 0..100 {
                let x = random_vector(&mut rng, k);
                // T Gamma = Gamma~ U^1
                let lhs = tv.t.apply(&coupled.abvp.gamma().apply(&x));
                let rhs = tv.tilde.gamma().apply(&tv.u1.apply(&x));
                let err = coupled.abvp.boundary().norm(&(&lhs - &rhs));
                assert!(err <= 1e-12 * (1.0 + coupled.abvp.boundary().norm(&lhs)));
                // h~(U^1 f) = h(f)
                let hf = coupled.abvp.form().quad(&x);
                let hft = tv.tilde.form().quad(&tv.u1.apply(&x));
                assert!((hf - hft).abs() <= 1e-12 * (1.0 + hf.abs()));
            }
            // for these fixtures |U^1 f|^2 = 2 |f|^2 exactly, so the
            // Neumann spectra agree after scaling by 2
            let spec_tilde: Vec<f64> = tv
                .tilde
                .neumann_spectrum()
                .iter()
                .map(|l| 2.0 * l)
                .collect();
            assert!(multiset_close(
                &spec_tilde,
                coupled.abvp.neumann_spectrum(),
                1e-10
            ));
        }
    }

    #[test]
    fn trivial_vertex_coupling_single_edge() {
        let g = fixtures::k2();
        let (bp, param) = trivial_edge_blueprint(&g).unwrap();
        let coupled = edge_couple(&bp, Some(param)).unwrap();
        let tv = trivial_vertex_couple(&bp, &coupled).unwrap();
        assert_eq!(tv.tilde.space().dim(), coupled.abvp.space().dim());
        // U^1 is a bicontinuous bijection
        assert!(tv.u1.inverse().is_ok());
    }
}
