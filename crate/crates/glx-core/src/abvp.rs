//! Abstract boundary value problems at finite dimension and their derived
//! objects: Neumann and Dirichlet operators, weak-solution operators, the
//! Dirichlet-to-Neumann family, the second boundary map, Green's formula,
//! the Krein resolvent identity and the spectral characterisation.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::space::{hermitian_eigen, GramForm, LinOp, SpaceError, WeightedSpace, C64};

/// Absolute guard distance to the Dirichlet spectrum for solution operators.
pub const DIRICHLET_GUARD_SOLVE: f64 = 1e-10;
/// Absolute guard distance for resolvent and spectral-relation queries.
pub const DIRICHLET_GUARD_SPECTRAL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum AbvpError {
    #[error("boundary map is not surjective (rank defect {0})")]
    NotSurjective(usize),
    #[error("split data does not match the boundary map: {0}")]
    BadSplit(String),
    #[error("the problem is not split")]
    NotSplit,
    #[error("z = {z} is within {dist:.3e} of the Dirichlet spectrum")]
    DirichletSpectrumHit { z: C64, dist: f64 },
    #[error("z = {z} is within {dist:.3e} of the Neumann spectrum")]
    SpectrumHit { z: C64, dist: f64 },
    #[error("DtN operator is singular at z = {0}")]
    SingularDtN(C64),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Cached derived objects of a problem, computed once on first access.
struct Derived {
    neumann: LinOp,
    neumann_spectrum: Vec<f64>,
    /// Isometric embedding of `ker Gamma` into the ambient space.
    ker_embed: LinOp,
    dirichlet: LinOp,
    dirichlet_spectrum: Vec<f64>,
    h1_gram: GramForm,
    s_minus1: LinOp,
    boundary_half_gram: GramForm,
}

/// The quintuple `(Gamma, G, h, H^1, H)` at finite dimension (`H^1 = H`),
/// with `ran Gamma = G` (boundedness). A problem is *split* when `Gamma`
/// is a coordinate restriction onto designated coordinates; split problems
/// additionally expose the second boundary map, Green's formula and the
/// Schur-complement route to the DtN operator.
pub struct Abvp {
    space: WeightedSpace,
    boundary: WeightedSpace,
    gamma: LinOp,
    form: GramForm,
    split: Option<Vec<usize>>,
    derived: OnceLock<Derived>,
}

impl Clone for Abvp {
    fn clone(&self) -> Self {
        Abvp {
            space: self.space.clone(),
            boundary: self.boundary.clone(),
            gamma: self.gamma.clone(),
            form: self.form.clone(),
            split: self.split.clone(),
            derived: OnceLock::new(),
        }
    }
}

impl std::fmt::Debug for Abvp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Abvp")
            .field("space_dim", &self.space.dim())
            .field("boundary_dim", &self.boundary.dim())
            .field("split", &self.split)
            .finish()
    }
}

impl Abvp {
    pub fn new(
        space: WeightedSpace,
        boundary: WeightedSpace,
        gamma: LinOp,
        form: GramForm,
        split: Option<Vec<usize>>,
    ) -> Result<Self, AbvpError> {
        assert!(gamma.domain().compatible(&space), "gamma domain mismatch");
        assert!(
            gamma.codomain().compatible(&boundary),
            "gamma codomain mismatch"
        );
        assert!(form.space().compatible(&space), "form space mismatch");
        // ran Gamma = G: rank of the coefficient matrix must equal dim G.
        let m = boundary.dim();
        if m > 0 {
            let gg = gamma.coeffs() * gamma.coeffs().adjoint();
            let (eigs, _) = hermitian_eigen(&gg);
            let max = eigs.last().copied().unwrap_or(0.0).max(1e-300);
            let rank = eigs.iter().filter(|&&e| e > 1e-24 * max).count();
            if rank < m {
                return Err(AbvpError::NotSurjective(m - rank));
            }
        }
        if let Some(coords) = &split {
            if coords.len() != m {
                return Err(AbvpError::BadSplit(format!(
                    "{} split coordinates for a {m}-dimensional boundary",
                    coords.len()
                )));
            }
            let mut seen = vec![false; space.dim()];
            for (row, &c) in coords.iter().enumerate() {
                if c >= space.dim() || seen[c] {
                    return Err(AbvpError::BadSplit(format!("bad coordinate {c}")));
                }
                seen[c] = true;
                let w_ratio = (boundary.weights()[row] - space.weights()[c]).abs();
                if w_ratio > 1e-12 * space.weights()[c] {
                    return Err(AbvpError::BadSplit(format!(
                        "weight mismatch at coordinate {c}"
                    )));
                }
                for col in 0..space.dim() {
                    let expected = if col == c { 1.0 } else { 0.0 };
                    if (gamma.coeffs()[(row, col)] - C64::new(expected, 0.0)).norm() > 1e-12 {
                        return Err(AbvpError::BadSplit(format!(
                            "gamma row {row} is not the restriction to coordinate {c}"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            space,
            boundary,
            gamma,
            form,
            split,
            derived: OnceLock::new(),
        })
    }

    /// Trivial problem `(id, H, h, H, H)`.
    pub fn trivial(space: WeightedSpace, form: GramForm) -> Self {
        let gamma = LinOp::identity(&space);
        let split = Some((0..space.dim()).collect());
        Self::new(space.clone(), space, gamma, form, split).expect("trivial problem is valid")
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn boundary(&self) -> &WeightedSpace {
        &self.boundary
    }

    pub fn gamma(&self) -> &LinOp {
        &self.gamma
    }

    pub fn form(&self) -> &GramForm {
        &self.form
    }

    pub fn split(&self) -> Option<&[usize]> {
        self.split.as_deref()
    }

    /// Interior coordinates (complement of the split boundary coordinates).
    pub fn interior_coords(&self) -> Option<Vec<usize>> {
        let coords = self.split.as_ref()?;
        let mut is_bd = vec![false; self.space.dim()];
        for &c in coords {
            is_bd[c] = true;
        }
        Some((0..self.space.dim()).filter(|&i| !is_bd[i]).collect())
    }

    fn derived(&self) -> &Derived {
        self.derived.get_or_init(|| self.compute_derived())
    }

    fn compute_derived(&self) -> Derived {
        let neumann = self.form.representative();
        let neumann_spectrum = neumann
            .eigh()
            .expect("form representative is self-adjoint")
            .eigenvalues;
        let ker_embed = self.compute_ker_embed();
        let ker_space = ker_embed.domain().clone();
        let dirichlet = if ker_space.dim() == 0 {
            LinOp::zeros(&ker_space, &ker_space)
        } else {
            self.form.pullback(&ker_embed).representative()
        };
        let dirichlet_spectrum = if ker_space.dim() == 0 {
            Vec::new()
        } else {
            dirichlet
                .eigh()
                .expect("restricted form representative is self-adjoint")
                .eigenvalues
        };
        let h1_gram = self.form.add(&self.space.gram());
        let s_minus1 = self
            .solution_operator_inner(C64::new(-1.0, 0.0), &ker_embed, &dirichlet_spectrum)
            .expect("z = -1 is below the non-negative Dirichlet spectrum");
        // |phi|^2_{G^{1/2}} = l_{-1}(phi) = |S(-1) phi|^2_{H^1}
        let boundary_half_gram = GramForm::new(
            self.boundary.clone(),
            s_minus1.coeffs().adjoint() * h1_gram.coeffs() * s_minus1.coeffs(),
        )
        .expect("l_{-1} is Hermitian PSD");
        Derived {
            neumann,
            neumann_spectrum,
            ker_embed,
            dirichlet,
            dirichlet_spectrum,
            h1_gram,
            s_minus1,
            boundary_half_gram,
        }
    }

    /// Isometric embedding of `ker Gamma`. Split problems use the interior
    /// coordinates (keeping their weights); general problems get a
    /// `w`-orthonormal basis from the weighted nullspace of `Gamma`.
    fn compute_ker_embed(&self) -> LinOp {
        let n = self.space.dim();
        if let Some(interior) = self.interior_coords() {
            let weights: Vec<f64> = interior.iter().map(|&i| self.space.weights()[i]).collect();
            let ker_space = if weights.is_empty() {
                WeightedSpace::unweighted(0, "ker gamma")
            } else {
                WeightedSpace::new(weights, "ker gamma").expect("positive weights")
            };
            let mut coeffs = DMatrix::<C64>::zeros(n, interior.len());
            for (col, &i) in interior.iter().enumerate() {
                coeffs[(i, col)] = C64::new(1.0, 0.0);
            }
            return LinOp::new(ker_space, self.space.clone(), coeffs).expect("shape");
        }
        // nullspace of Gamma W^{-1/2} in plain coordinates, mapped back
        let sw: Vec<f64> = self.space.weights().iter().map(|w| w.sqrt()).collect();
        let mut gw = self.gamma.coeffs().clone();
        for j in 0..n {
            for i in 0..gw.nrows() {
                gw[(i, j)] /= sw[j];
            }
        }
        let gram = gw.adjoint() * &gw;
        let (eigs, u) = hermitian_eigen(&gram);
        let max = eigs.last().copied().unwrap_or(0.0).max(1e-300);
        let null_cols: Vec<usize> = (0..eigs.len())
            .filter(|&k| eigs[k] <= 1e-20 * max)
            .collect();
        let k = null_cols.len();
        let ker_space = WeightedSpace::unweighted(k, "ker gamma");
        let mut coeffs = DMatrix::<C64>::zeros(n, k);
        for (col, &kc) in null_cols.iter().enumerate() {
            for i in 0..n {
                coeffs[(i, col)] = u[(i, kc)] / sw[i];
            }
        }
        LinOp::new(ker_space, self.space.clone(), coeffs).expect("shape")
    }

    /// The Neumann operator: representative of the energy form.
    pub fn neumann(&self) -> &LinOp {
        &self.derived().neumann
    }

    pub fn neumann_spectrum(&self) -> &[f64] {
        &self.derived().neumann_spectrum
    }

    /// The Dirichlet operator (representative of the form restricted to
    /// `ker Gamma`) together with its spectrum. The spectrum is empty when
    /// `ker Gamma = {0}`.
    pub fn dirichlet(&self) -> (&LinOp, &[f64]) {
        let d = self.derived();
        (&d.dirichlet, &d.dirichlet_spectrum)
    }

    pub fn dirichlet_spectrum(&self) -> &[f64] {
        &self.derived().dirichlet_spectrum
    }

    /// Isometric embedding `ker Gamma -> H`.
    pub fn ker_embed(&self) -> &LinOp {
        &self.derived().ker_embed
    }

    /// Gram of the form norm `|f|^2_{H^1} = h(f) + |f|^2_H`.
    pub fn h1_gram(&self) -> &GramForm {
        &self.derived().h1_gram
    }

    /// Gram of the boundary `G^{1/2}`-norm `l_{-1}`.
    pub fn boundary_half_gram(&self) -> &GramForm {
        &self.derived().boundary_half_gram
    }

    pub fn s_minus1(&self) -> &LinOp {
        &self.derived().s_minus1
    }

    pub fn dist_to_dirichlet(&self, z: C64) -> f64 {
        self.dirichlet_spectrum()
            .iter()
            .map(|&l| (z - C64::new(l, 0.0)).norm())
            .fold(f64::INFINITY, f64::min)
    }

    pub fn dist_to_neumann(&self, z: C64) -> f64 {
        self.neumann_spectrum()
            .iter()
            .map(|&l| (z - C64::new(l, 0.0)).norm())
            .fold(f64::INFINITY, f64::min)
    }

    /// Dirichlet solution operator `S(z): G -> H` with `Gamma S(z) = id` and
    /// `h(S(z) phi, g) = z <S(z) phi, g>` for all `g` in `ker Gamma`.
    pub fn solution_operator(&self, z: C64) -> Result<LinOp, AbvpError> {
        let dist = self.dist_to_dirichlet(z);
        if dist <= DIRICHLET_GUARD_SOLVE {
            return Err(AbvpError::DirichletSpectrumHit { z, dist });
        }
        let d = self.derived();
        self.solution_operator_inner(z, &d.ker_embed, &d.dirichlet_spectrum)
    }

    fn solution_operator_inner(
        &self,
        z: C64,
        ker_embed: &LinOp,
        dirichlet_spectrum: &[f64],
    ) -> Result<LinOp, AbvpError> {
        let dist = dirichlet_spectrum
            .iter()
            .map(|&l| (z - C64::new(l, 0.0)).norm())
            .fold(f64::INFINITY, f64::min);
        if dist <= DIRICHLET_GUARD_SOLVE {
            return Err(AbvpError::DirichletSpectrumHit { z, dist });
        }
        let n = self.space.dim();
        let m = self.boundary.dim();
        let k = ker_embed.domain().dim();
        // rows: Gamma f = phi  and  E^H (M - z W) f = 0
        let mut a = DMatrix::<C64>::zeros(m + k, n);
        a.view_mut((0, 0), (m, n)).copy_from(self.gamma.coeffs());
        if k > 0 {
            let mut mzw = self.form.coeffs().clone();
            let w = self.space.weights();
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        mzw[(i, j)] -= z * C64::new(w[i], 0.0);
                    }
                }
            }
            let rows = ker_embed.coeffs().adjoint() * mzw;
            a.view_mut((m, 0), (k, n)).copy_from(&rows);
        }
        let mut rhs = DMatrix::<C64>::zeros(m + k, m);
        for j in 0..m {
            rhs[(j, j)] = C64::new(1.0, 0.0);
        }
        let lu = a.lu();
        let sol = lu.solve(&rhs).ok_or(AbvpError::SingularDtN(z))?;
        Ok(LinOp::new(self.boundary.clone(), self.space.clone(), sol).expect("shape"))
    }

    /// DtN operator at `z`: Schur complement for split problems, the
    /// sesquilinear-form route `l_z(phi,psi) = (h - z)(S(z)phi, S(-1)psi)`
    /// otherwise.
    pub fn dtn(&self, z: C64) -> Result<LinOp, AbvpError> {
        if self.split.is_some() {
            self.dtn_via_schur(z)
        } else {
            self.dtn_via_form(z)
        }
    }

    /// `Lambda(z)` as the operator of the form
    /// `l_z(phi, psi) = (h - z 1)(S(z) phi, S(-1) psi)` on the boundary.
    pub fn dtn_via_form(&self, z: C64) -> Result<LinOp, AbvpError> {
        let s_z = self.solution_operator(z)?;
        let d = self.derived();
        let n = self.space.dim();
        let w = self.space.weights();
        let mut mzw = self.form.coeffs().clone();
        for i in 0..n {
            mzw[(i, i)] -= z * C64::new(w[i], 0.0);
        }
        let l_z = d.s_minus1.coeffs().adjoint() * mzw * s_z.coeffs();
        // operator of the form w.r.t. the boundary inner product
        let wb = self.boundary.weights();
        let mut coeffs = l_z;
        for i in 0..coeffs.nrows() {
            for j in 0..coeffs.ncols() {
                coeffs[(i, j)] /= wb[i];
            }
        }
        Ok(LinOp::new(self.boundary.clone(), self.boundary.clone(), coeffs).expect("shape"))
    }

    /// `Lambda(z) = (A - z) - B (D - z)^{-1} B*` in the block structure of a
    /// split problem.
    pub fn dtn_via_schur(&self, z: C64) -> Result<LinOp, AbvpError> {
        let coords = self.split.as_ref().ok_or(AbvpError::NotSplit)?;
        let dist = self.dist_to_dirichlet(z);
        if dist <= DIRICHLET_GUARD_SOLVE {
            return Err(AbvpError::DirichletSpectrumHit { z, dist });
        }
        let interior = self.interior_coords().expect("split");
        let h = self.neumann().coeffs();
        let m = coords.len();
        let k = interior.len();
        let mut a = DMatrix::<C64>::zeros(m, m);
        for (i, &ci) in coords.iter().enumerate() {
            for (j, &cj) in coords.iter().enumerate() {
                a[(i, j)] = h[(ci, cj)];
            }
            a[(i, i)] -= z;
        }
        if k == 0 {
            return Ok(
                LinOp::new(self.boundary.clone(), self.boundary.clone(), a).expect("shape")
            );
        }
        let mut b = DMatrix::<C64>::zeros(m, k);
        for (i, &ci) in coords.iter().enumerate() {
            for (j, &cj) in interior.iter().enumerate() {
                b[(i, j)] = h[(ci, cj)];
            }
        }
        let mut bstar = DMatrix::<C64>::zeros(k, m);
        for (i, &ci) in interior.iter().enumerate() {
            for (j, &cj) in coords.iter().enumerate() {
                bstar[(i, j)] = h[(ci, cj)];
            }
        }
        let mut dz = DMatrix::<C64>::zeros(k, k);
        for (i, &ci) in interior.iter().enumerate() {
            for (j, &cj) in interior.iter().enumerate() {
                dz[(i, j)] = h[(ci, cj)];
            }
            dz[(i, i)] -= z;
        }
        let solved = dz.lu().solve(&bstar).ok_or(AbvpError::SingularDtN(z))?;
        let coeffs = a - b * solved;
        Ok(LinOp::new(self.boundary.clone(), self.boundary.clone(), coeffs).expect("shape"))
    }

    /// Second boundary map `Gamma' = (A  B)`: the boundary row block of the
    /// Neumann operator in the splitting `H = G (+) ker Gamma`.
    pub fn gamma_prime(&self) -> Result<LinOp, AbvpError> {
        let coords = self.split.as_ref().ok_or(AbvpError::NotSplit)?;
        let h = self.neumann().coeffs();
        let mut coeffs = DMatrix::<C64>::zeros(coords.len(), self.space.dim());
        for (row, &c) in coords.iter().enumerate() {
            for col in 0..self.space.dim() {
                coeffs[(row, col)] = h[(c, col)];
            }
        }
        Ok(LinOp::new(self.space.clone(), self.boundary.clone(), coeffs).expect("shape"))
    }

    /// Residual of the abstract Green formula
    /// `h(f,g) = <H^max f, g>_{ker-part} + <Gamma' f, Gamma g>_G`,
    /// where `H^max f` is realized as the interior row block of the Neumann
    /// operator.
    pub fn green_residual(&self, f: &DVector<C64>, g: &DVector<C64>) -> Result<f64, AbvpError> {
        let interior = self.interior_coords().ok_or(AbvpError::NotSplit)?;
        let lhs = self.form.eval(f, g);
        let hf = self.neumann().apply(f);
        let w = self.space.weights();
        let mut interior_part = C64::new(0.0, 0.0);
        for &i in &interior {
            interior_part += hf[i] * g[i].conj() * w[i];
        }
        let gp = self.gamma_prime()?;
        let boundary_part = self.boundary.inner(&gp.apply(f), &self.gamma.apply(g));
        Ok((lhs - interior_part - boundary_part).norm())
    }

    /// Operator-norm residual of the Krein resolvent identity
    /// `(H^Neu - z)^{-1} = (H^Dir - z)^{-1} + S(z) Lambda(z)^{-1} S(conj z)*`,
    /// relative to the norm of the Neumann resolvent.
    pub fn krein_residual(&self, z: C64) -> Result<f64, AbvpError> {
        let dist_dir = self.dist_to_dirichlet(z);
        if dist_dir <= DIRICHLET_GUARD_SPECTRAL {
            return Err(AbvpError::DirichletSpectrumHit { z, dist: dist_dir });
        }
        let dist_neu = self.dist_to_neumann(z);
        if dist_neu <= DIRICHLET_GUARD_SPECTRAL {
            return Err(AbvpError::SpectrumHit { z, dist: dist_neu });
        }
        let d = self.derived();
        let neumann_res = self
            .neumann()
            .shift(z)
            .inverse()
            .map_err(|_| AbvpError::SpectrumHit { z, dist: dist_neu })?;
        // Dirichlet resolvent, zero-extended along the kernel embedding
        let k = d.ker_embed.domain().dim();
        let dir_res_ext = if k == 0 {
            LinOp::zeros(&self.space, &self.space)
        } else {
            let inner = d
                .dirichlet
                .shift(z)
                .inverse()
                .map_err(|_| AbvpError::DirichletSpectrumHit { z, dist: dist_dir })?;
            d.ker_embed
                .compose(&inner)
                .compose(&d.ker_embed.adjoint())
        };
        let s_z = self.solution_operator(z)?;
        let s_zbar_adj = self.solution_operator(z.conj())?.adjoint();
        let lambda_inv = self
            .dtn(z)?
            .inverse()
            .map_err(|_| AbvpError::SingularDtN(z))?;
        let krein_term = s_z.compose(&lambda_inv).compose(&s_zbar_adj);
        let residual = neumann_res.sub(&dir_res_ext).sub(&krein_term);
        Ok(residual.opnorm_plain() / neumann_res.opnorm_plain())
    }

    /// Spectral characterisation at real `lambda` off the Dirichlet
    /// spectrum: `(lambda in spec H^Neu, 0 in spec Lambda(lambda))`, both
    /// at absolute threshold `1e-8`.
    pub fn spectral_relation_check(&self, lambda: f64) -> Result<(bool, bool), AbvpError> {
        let z = C64::new(lambda, 0.0);
        let dist = self.dist_to_dirichlet(z);
        if dist <= DIRICHLET_GUARD_SPECTRAL {
            return Err(AbvpError::DirichletSpectrumHit { z, dist });
        }
        let in_neumann = self.dist_to_neumann(z) < 1e-8;
        let lam = self.dtn(z)?;
        let eig = lam.eigh()?;
        let min_abs = eig
            .eigenvalues
            .iter()
            .map(|l| l.abs())
            .fold(f64::INFINITY, f64::min);
        Ok((in_neumann, min_abs < 1e-8))
    }

    /// Elliptic-regularity constant: the norm of `S(-1)` from the plain
    /// boundary norm to the plain norm of the ambient space.
    pub fn regularity_constant(&self) -> f64 {
        self.derived().s_minus1.opnorm_plain()
    }
}

/// The problem of a finite graph with boundary set: `H = l2(V, deg)`,
/// `G = l2(boundary, deg)`, `Gamma` the restriction, `h` the energy form.
/// Split along the boundary coordinates.
pub fn graph_abvp(graph: &Graph, boundary_ids: &[&str]) -> Result<Abvp, AbvpError> {
    let space = graph.vertex_space()?;
    let form = graph.energy_form()?;
    let mut coords = Vec::with_capacity(boundary_ids.len());
    for id in boundary_ids {
        coords.push(graph.vertex_index(id)?);
    }
    let weights: Vec<f64> = coords.iter().map(|&c| space.weights()[c]).collect();
    let boundary = if weights.is_empty() {
        WeightedSpace::unweighted(0, "empty boundary")
    } else {
        WeightedSpace::new(weights, format!("l2(dV), {} vertices", coords.len()))
            .expect("degrees positive")
    };
    let mut g = DMatrix::<C64>::zeros(coords.len(), space.dim());
    for (row, &c) in coords.iter().enumerate() {
        g[(row, c)] = C64::new(1.0, 0.0);
    }
    let gamma = LinOp::new(space.clone(), boundary.clone(), g).expect("shape");
    Abvp::new(space, boundary, gamma, form, Some(coords))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::testutil::{case_rng, random_vector, seeded_rng};
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn k2_abvp() -> Abvp {
        graph_abvp(&fixtures::k2(), &["a"]).unwrap()
    }

    fn path_abvp() -> Abvp {
        graph_abvp(&fixtures::path_amb(), &["a", "b"]).unwrap()
    }

    fn random_trivial(rng: &mut impl Rng, n: usize) -> Abvp {
        let space = WeightedSpace::new((0..n).map(|_| rng.gen_range(0.3..2.0)).collect(), "t")
            .unwrap();
        let m = crate::testutil::random_psd(rng, n);
        Abvp::trivial(space.clone(), GramForm::new(space, m).unwrap())
    }

    #[test]
    fn neumann_of_k2_is_normalized_laplacian() {
        let pi = k2_abvp();
        let expected = fixtures::k2().normalized_laplacian().unwrap();
        assert!(pi.neumann().max_abs_diff(&expected) < 1e-14);
    }

    #[test]
    fn neumann_of_trivial_is_form_representative() {
        let mut rng = seeded_rng(3);
        let pi = random_trivial(&mut rng, 4);
        assert!(pi.neumann().max_abs_diff(&pi.form().representative()) < 1e-14);
        // trivial: ker Gamma = {0}
        assert!(pi.dirichlet_spectrum().is_empty());
    }

    #[test]
    fn zero_form_gives_zero_neumann() {
        let space = WeightedSpace::new(vec![1.0, 2.0], "s").unwrap();
        let pi = Abvp::trivial(space.clone(), GramForm::zero(space));
        assert!(pi.neumann().frobenius() < 1e-15);
    }

    #[test]
    fn dirichlet_block_of_path() {
        let pi = path_abvp();
        let (d, spec) = pi.dirichlet();
        // interior {m}: (Delta f)(m) coefficient 1 (degree in the full graph)
        assert_eq!(spec.len(), 1);
        assert!((d.coeffs()[(0, 0)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((spec[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dirichlet_block_of_k2() {
        let pi = k2_abvp();
        let (_, spec) = pi.dirichlet();
        assert_eq!(spec.len(), 1);
        assert!((spec[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solution_operator_of_trivial_is_identity() {
        let mut rng = seeded_rng(4);
        let pi = random_trivial(&mut rng, 3);
        for z in [c(0.0, 0.0), c(-1.0, 0.0), c(3.0, 1.0)] {
            let s = pi.solution_operator(z).unwrap();
            assert!(s.max_abs_diff(&LinOp::identity(pi.space())) < 1e-12);
        }
    }

    #[test]
    fn harmonic_extension_on_k2() {
        let pi = k2_abvp();
        let s0 = pi.solution_operator(c(0.0, 0.0)).unwrap();
        // S(0) phi = (phi, phi)
        assert!((s0.coeffs()[(0, 0)] - c(1.0, 0.0)).norm() < 1e-13);
        assert!((s0.coeffs()[(1, 0)] - c(1.0, 0.0)).norm() < 1e-13);
    }

    #[test]
    fn gamma_compose_solution_is_identity() {
        let mut rng = seeded_rng(5);
        for i in 0..10 {
            let mut case = case_rng(50, i);
            let g = fixtures::random_connected(&mut case, 10, (i % 3) as usize);
            let bd = fixtures::random_boundary(&mut case, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pi = graph_abvp(&g, &ids).unwrap();
            for z in [c(-1.0, 0.0), c(-2.0, 0.0), c(3.0, 1.0)] {
                let s = pi.solution_operator(z).unwrap();
                let comp = pi.gamma().compose(&s);
                assert!(
                    comp.max_abs_diff(&LinOp::identity(pi.boundary())) < 1e-12,
                    "Gamma S(z) != id"
                );
                // weak-solution property: E^H (M - zW) S(z) = 0
                let ker = pi.ker_embed();
                let n = pi.space().dim();
                let mut mzw = pi.form().coeffs().clone();
                for d in 0..n {
                    mzw[(d, d)] -= z * c(pi.space().weights()[d], 0.0);
                }
                let resid = (ker.coeffs().adjoint() * mzw * s.coeffs()).norm();
                assert!(resid < 1e-11, "weak solution residual {resid}");
            }
        }
        let _ = rng.gen::<u64>();
    }

    #[test]
    fn dtn_of_trivial_is_h_minus_z() {
        let mut rng = seeded_rng(6);
        let pi = random_trivial(&mut rng, 4);
        for z in [c(0.5, 0.0), c(-1.0, 0.0), c(0.3, 0.7)] {
            let lam = pi.dtn(z).unwrap();
            let expected = pi.neumann().shift(z);
            assert!(lam.max_abs_diff(&expected) < 1e-11);
        }
    }

    #[test]
    fn dtn_of_k2_closed_form() {
        let pi = k2_abvp();
        for z in [c(0.0, 0.0), c(-1.5, 0.0), c(0.25, 0.5)] {
            let lam = pi.dtn(z).unwrap();
            let expected = (c(1.0, 0.0) - z) - (c(1.0, 0.0) - z).powi(-1);
            assert!((lam.coeffs()[(0, 0)] - expected).norm() < 1e-12);
        }
        let lam0 = pi.dtn(c(0.0, 0.0)).unwrap();
        assert!(lam0.coeffs()[(0, 0)].norm() < 1e-13);
    }

    #[test]
    fn dtn_of_star_at_zero() {
        // star with d = 3, boundary = leaves: Lambda(0) = Id - (1/3) * ones
        let g = fixtures::star(3);
        let pi = graph_abvp(&g, &["l0", "l1", "l2"]).unwrap();
        let lam = pi.dtn(c(0.0, 0.0)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 1.0 - 1.0 / 3.0 } else { -1.0 / 3.0 };
                assert!((lam.coeffs()[(i, j)] - c(expected, 0.0)).norm() < 1e-13);
            }
        }
        let eig = lam.eigh().unwrap();
        assert!((eig.eigenvalues[0] - 0.0).abs() < 1e-12);
        assert!((eig.eigenvalues[1] - 1.0).abs() < 1e-12);
        assert!((eig.eigenvalues[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn schur_and_form_paths_agree() {
        let mut rng = seeded_rng(7);
        for i in 0..10 {
            let g = fixtures::random_connected(&mut rng, 9, (i % 3) as usize);
            let bd = fixtures::random_boundary(&mut rng, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pi = graph_abvp(&g, &ids).unwrap();
            for z in [c(-1.0, 0.0), c(-0.37, 0.0), c(0.5, 1.0)] {
                let a = pi.dtn_via_schur(z).unwrap();
                let b = pi.dtn_via_form(z).unwrap();
                assert!(
                    a.max_abs_diff(&b) <= 1e-10 * (1.0 + a.frobenius()),
                    "paths disagree by {}",
                    a.max_abs_diff(&b)
                );
            }
        }
    }

    #[test]
    fn gamma_prime_examples() {
        // trivial: Gamma' = H^Neu
        let mut rng = seeded_rng(8);
        let pi = random_trivial(&mut rng, 3);
        assert!(pi.gamma_prime().unwrap().max_abs_diff(pi.neumann()) < 1e-14);
        // K2 with boundary {a}: Gamma' f = f(a) - f(b)
        let pi = k2_abvp();
        let gp = pi.gamma_prime().unwrap();
        assert!((gp.coeffs()[(0, 0)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((gp.coeffs()[(0, 1)] + c(1.0, 0.0)).norm() < 1e-14);
        // path a-m-b, boundary {a,b}: Gamma' f = (f(a)-f(m), f(b)-f(m))
        let pi = path_abvp();
        let gp = pi.gamma_prime().unwrap();
        let expected = DMatrix::from_row_slice(
            2,
            3,
            &[c(1.0, 0.0), c(-1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0)],
        );
        assert!((gp.coeffs() - expected).norm() < 1e-13);
    }

    #[test]
    fn green_formula_residual() {
        let mut rng = seeded_rng(9);
        let pi = path_abvp();
        for _ in 0..50 {
            let f = random_vector(&mut rng, 3);
            let g = random_vector(&mut rng, 3);
            let r = pi.green_residual(&f, &g).unwrap();
            let scale = pi.h1_gram().norm(&f) * pi.h1_gram().norm(&g);
            assert!(r <= 1e-12 * scale.max(1.0), "green residual {r}");
        }
    }

    #[test]
    fn green_on_trivial_abvp() {
        let mut rng = seeded_rng(10);
        let pi = random_trivial(&mut rng, 4);
        let f = random_vector(&mut rng, 4);
        let g = random_vector(&mut rng, 4);
        // Gamma = id, Gamma' = H, no interior: h(f,g) = <Gamma'f, Gamma g>
        let r = pi.green_residual(&f, &g).unwrap();
        assert!(r < 1e-12 * (1.0 + pi.form().norm(&f) * pi.form().norm(&g)));
    }

    #[test]
    fn krein_identity_on_fixtures() {
        let pi = path_abvp();
        let r = pi.krein_residual(c(-1.0, 0.0)).unwrap();
        assert!(r < 1e-12, "path residual {r}");
        let mut rng = seeded_rng(11);
        let trivial = random_trivial(&mut rng, 4);
        let r = trivial.krein_residual(c(-1.0, 0.0)).unwrap();
        assert!(r < 1e-12, "trivial residual {r}");
    }

    #[test]
    fn krein_identity_randomized() {
        for i in 0..15 {
            let mut rng = case_rng(77, i);
            let g = fixtures::random_connected(&mut rng, 14, (i % 3) as usize);
            let bd = fixtures::random_boundary(&mut rng, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pi = graph_abvp(&g, &ids).unwrap();
            for z in [c(-1.0, 0.0), c(-2.0, 0.0), c(0.5, 1.0)] {
                let r = pi.krein_residual(z).unwrap();
                assert!(r < 1e-10, "residual {r} at z={z}");
            }
        }
    }

    #[test]
    fn spectral_relation_on_k2() {
        let pi = k2_abvp();
        assert_eq!(pi.spectral_relation_check(0.0).unwrap(), (true, true));
        assert_eq!(pi.spectral_relation_check(0.5).unwrap(), (false, false));
        assert_eq!(pi.spectral_relation_check(2.0).unwrap(), (true, true));
    }

    #[test]
    fn spectral_relation_sweep() {
        for i in 0..10 {
            let mut rng = case_rng(99, i);
            let g = fixtures::random_connected(&mut rng, 10, (i % 3) as usize);
            let bd = fixtures::random_boundary(&mut rng, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pi = graph_abvp(&g, &ids).unwrap();
            for &l in pi.neumann_spectrum() {
                if pi.dist_to_dirichlet(c(l, 0.0)) < 1e-6 {
                    continue;
                }
                let (a, b) = pi.spectral_relation_check(l).unwrap();
                assert!(a && b, "spectral relation failed at {l}");
            }
        }
    }

    #[test]
    fn regularity_constants() {
        let mut rng = seeded_rng(12);
        let trivial = random_trivial(&mut rng, 3);
        assert!((trivial.regularity_constant() - 1.0).abs() < 1e-12);
        // K2, boundary {a}: S(-1)phi = (phi, phi/2), norm sqrt(5)/2
        let pi = k2_abvp();
        assert!((pi.regularity_constant() - (5.0_f64).sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn regularity_boundary_enlargement_sweep() {
        // Reported, not asserted monotone: enlarging the boundary can move
        // the constant either way (K2: 1.118 -> 1.0; path: 1.088 -> 1.118).
        let k2_small = k2_abvp().regularity_constant();
        let k2_full = graph_abvp(&fixtures::k2(), &["a", "b"])
            .unwrap()
            .regularity_constant();
        assert!(k2_small > k2_full);
        let p_small = graph_abvp(&fixtures::path_amb(), &["a"])
            .unwrap()
            .regularity_constant();
        let p_full = path_abvp().regularity_constant();
        assert!(p_small < p_full);
        assert!((p_small - (58.0_f64 / 49.0).sqrt()).abs() < 1e-12);
        assert!((p_full - (1.25_f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn dtn_self_adjointness_and_conjugation() {
        let mut rng = seeded_rng(13);
        for i in 0..8 {
            let g = fixtures::random_connected(&mut rng, 8, (i % 2) as usize);
            let bd = fixtures::random_boundary(&mut rng, &g);
            let ids: Vec<&str> = bd.iter().map(String::as_str).collect();
            let pi = graph_abvp(&g, &ids).unwrap();
            let lam = pi.dtn(c(-0.7, 0.0)).unwrap();
            assert!(lam.self_adjoint_defect() < 1e-12 * (1.0 + lam.frobenius()));
            let z = c(0.4, 0.8);
            let a = pi.dtn(z).unwrap().adjoint();
            let b = pi.dtn(z.conj()).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-11 * (1.0 + b.frobenius()));
        }
    }

    #[test]
    fn dtn_eigenvalue_branches_decrease() {
        let pi = path_abvp();
        // Dirichlet spectrum = {1}; scan inside (-2, 1)
        let mut prev: Option<Vec<f64>> = None;
        for k in 0..100 {
            let l = -2.0 + 2.9 * (k as f64) / 99.0;
            let eig = pi.dtn(c(l, 0.0)).unwrap().eigh().unwrap();
            if let Some(p) = prev {
                for (a, b) in p.iter().zip(&eig.eigenvalues) {
                    assert!(b <= &(a + 1e-9), "branch increased: {a} -> {b}");
                }
            }
            prev = Some(eig.eigenvalues);
        }
    }

    #[test]
    fn boundary_half_gram_positive_definite() {
        let pi = path_abvp();
        let (eigs, _) = hermitian_eigen(pi.boundary_half_gram().coeffs());
        assert!(eigs[0] > 1e-10);
    }

    #[test]
    fn near_dirichlet_rejection() {
        let pi = k2_abvp(); // Dirichlet spectrum {1}
        assert!(matches!(
            pi.solution_operator(c(1.0 + 1e-12, 0.0)),
            Err(AbvpError::DirichletSpectrumHit { .. })
        ));
        assert!(matches!(
            pi.spectral_relation_check(1.0 + 1e-9),
            Err(AbvpError::DirichletSpectrumHit { .. })
        ));
    }
}
