//! Weighted finite-dimensional complex inner-product spaces and the dense
//! linear-algebra kernels built on them: weight-aware adjoints, Hermitian
//! eigendecomposition, matrix functions and operator norms between spaces
//! carrying different Gram forms.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;

/// Relative eigen-truncation threshold for near-degenerate Gram forms.
pub const GRAM_TRUNCATION_REL: f64 = 1e-12;
/// Default relative tolerance for self-adjointness and consistency checks.
pub const DEFAULT_REL_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("weights must be strictly positive (index {index}: {value})")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("operator is not self-adjoint: ||T - T*|| = {defect:.3e} > {tol:.3e}")]
    NotSelfAdjoint { defect: f64, tol: f64 },
    #[error("matrix function undefined at eigenvalue {eigenvalue}")]
    DomainError { eigenvalue: f64 },
    #[error("form is not Hermitian: defect {defect:.3e}")]
    NotHermitian { defect: f64 },
    #[error("form is not positive semi-definite: min eigenvalue {min_eig:.3e}")]
    NotPositiveSemiDefinite { min_eig: f64 },
    #[error("degenerate domain norm: null direction is not annihilated (residual {residual:.3e})")]
    DegenerateNorm { residual: f64 },
    #[error("singular system in linear solve")]
    Singular,
}

/// Finite-dimensional complex space with inner product
/// `<f,g> = sum_i f_i conj(g_i) w_i`, all `w_i > 0`.
#[derive(Clone, Debug)]
pub struct WeightedSpace {
    weights: Vec<f64>,
    label: String,
}

impl WeightedSpace {
    pub fn new(weights: Vec<f64>, label: impl Into<String>) -> Result<Self, SpaceError> {
        for (index, &value) in weights.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(SpaceError::NonPositiveWeight { index, value });
            }
        }
        Ok(Self {
            weights,
            label: label.into(),
        })
    }

    pub fn unweighted(dim: usize, label: impl Into<String>) -> Self {
        Self {
            weights: vec![1.0; dim],
            label: label.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Same dimension and weights (labels are semantic only).
    pub fn compatible(&self, other: &WeightedSpace) -> bool {
        self.dim() == other.dim()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0))
    }

    pub fn inner(&self, f: &DVector<C64>, g: &DVector<C64>) -> C64 {
        assert_eq!(f.len(), self.dim());
        assert_eq!(g.len(), self.dim());
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.dim() {
            acc += f[i] * g[i].conj() * self.weights[i];
        }
        acc
    }

    pub fn norm(&self, f: &DVector<C64>) -> f64 {
        self.inner(f, f).re.max(0.0).sqrt()
    }

    /// Diagonal weight matrix `W` as a complex matrix.
    pub fn weight_matrix(&self) -> DMatrix<C64> {
        DMatrix::from_fn(self.dim(), self.dim(), |i, j| {
            if i == j {
                C64::new(self.weights[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        })
    }

    /// The plain norm of the space as a Gram form (coefficient matrix `W`).
    pub fn gram(&self) -> GramForm {
        GramForm {
            space: self.clone(),
            coeffs: self.weight_matrix(),
        }
    }

    pub fn direct_sum(parts: &[&WeightedSpace], label: impl Into<String>) -> Self {
        let weights = parts
            .iter()
            .flat_map(|p| p.weights.iter().copied())
            .collect();
        Self {
            weights,
            label: label.into(),
        }
    }

    fn sqrt_weights(&self) -> DVector<f64> {
        DVector::from_iterator(self.dim(), self.weights.iter().map(|w| w.sqrt()))
    }
}

/// Dense linear map between weighted spaces. Coefficients are stored as a
/// `codomain.dim x domain.dim` matrix acting on coordinates.
#[derive(Clone, Debug)]
pub struct LinOp {
    domain: WeightedSpace,
    codomain: WeightedSpace,
    coeffs: DMatrix<C64>,
}

impl LinOp {
    pub fn new(
        domain: WeightedSpace,
        codomain: WeightedSpace,
        coeffs: DMatrix<C64>,
    ) -> Result<Self, SpaceError> {
        if coeffs.nrows() != codomain.dim() {
            return Err(SpaceError::DimensionMismatch {
                expected: codomain.dim(),
                got: coeffs.nrows(),
                context: "operator rows vs codomain".into(),
            });
        }
        if coeffs.ncols() != domain.dim() {
            return Err(SpaceError::DimensionMismatch {
                expected: domain.dim(),
                got: coeffs.ncols(),
                context: "operator cols vs domain".into(),
            });
        }
        Ok(Self {
            domain,
            codomain,
            coeffs,
        })
    }

    pub fn from_real(
        domain: WeightedSpace,
        codomain: WeightedSpace,
        coeffs: DMatrix<f64>,
    ) -> Result<Self, SpaceError> {
        Self::new(domain, codomain, coeffs.map(|x| C64::new(x, 0.0)))
    }

    pub fn identity(space: &WeightedSpace) -> Self {
        Self {
            domain: space.clone(),
            codomain: space.clone(),
            coeffs: DMatrix::identity(space.dim(), space.dim()),
        }
    }

    pub fn zeros(domain: &WeightedSpace, codomain: &WeightedSpace) -> Self {
        Self {
            domain: domain.clone(),
            codomain: codomain.clone(),
            coeffs: DMatrix::zeros(codomain.dim(), domain.dim()),
        }
    }

    pub fn domain(&self) -> &WeightedSpace {
        &self.domain
    }

    pub fn codomain(&self) -> &WeightedSpace {
        &self.codomain
    }

    pub fn coeffs(&self) -> &DMatrix<C64> {
        &self.coeffs
    }

    pub fn is_endo(&self) -> bool {
        self.domain.compatible(&self.codomain)
    }

    pub fn apply(&self, v: &DVector<C64>) -> DVector<C64> {
        &self.coeffs * v
    }

    /// Weight-aware adjoint: `T*_{ij} = conj(T_{ji}) w_cod(j) / w_dom(i)`.
    pub fn adjoint(&self) -> LinOp {
        let wc = self.codomain.weights();
        let wd = self.domain.weights();
        let coeffs = DMatrix::from_fn(self.domain.dim(), self.codomain.dim(), |i, j| {
            self.coeffs[(j, i)].conj() * (wc[j] / wd[i])
        });
        LinOp {
            domain: self.codomain.clone(),
            codomain: self.domain.clone(),
            coeffs,
        }
    }

    /// `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &LinOp) -> LinOp {
        assert!(
            self.domain.compatible(&other.codomain),
            "compose: domain of outer ({}) incompatible with codomain of inner ({})",
            self.domain.label(),
            other.codomain.label()
        );
        LinOp {
            domain: other.domain.clone(),
            codomain: self.codomain.clone(),
            coeffs: &self.coeffs * &other.coeffs,
        }
    }

    pub fn add(&self, other: &LinOp) -> LinOp {
        assert!(self.domain.compatible(&other.domain));
        assert!(self.codomain.compatible(&other.codomain));
        LinOp {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            coeffs: &self.coeffs + &other.coeffs,
        }
    }

    pub fn sub(&self, other: &LinOp) -> LinOp {
        assert!(self.domain.compatible(&other.domain));
        assert!(self.codomain.compatible(&other.codomain));
        LinOp {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            coeffs: &self.coeffs - &other.coeffs,
        }
    }

    pub fn scale(&self, c: C64) -> LinOp {
        LinOp {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            coeffs: self.coeffs.map(|x| x * c),
        }
    }

    /// `self - z * id`; requires an endomorphism.
    pub fn shift(&self, z: C64) -> LinOp {
        assert!(self.is_endo(), "shift requires domain == codomain");
        let mut coeffs = self.coeffs.clone();
        for i in 0..coeffs.nrows() {
            coeffs[(i, i)] -= z;
        }
        LinOp {
            domain: self.domain.clone(),
            codomain: self.codomain.clone(),
            coeffs,
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.coeffs.norm()
    }

    /// Coefficient-wise max absolute difference.
    pub fn max_abs_diff(&self, other: &LinOp) -> f64 {
        (&self.coeffs - &other.coeffs)
            .iter()
            .map(|x| x.norm())
            .fold(0.0, f64::max)
    }

    /// Defect of self-adjointness `||T - T*||_F`.
    pub fn self_adjoint_defect(&self) -> f64 {
        self.sub(&self.adjoint()).frobenius()
    }

    /// Inverse as a map codomain -> domain. Errors if singular.
    pub fn inverse(&self) -> Result<LinOp, SpaceError> {
        assert_eq!(self.domain.dim(), self.codomain.dim());
        let inv = self
            .coeffs
            .clone()
            .lu()
            .try_inverse()
            .ok_or(SpaceError::Singular)?;
        Ok(LinOp {
            domain: self.codomain.clone(),
            codomain: self.domain.clone(),
            coeffs: inv,
        })
    }

    /// Operator norm with respect to the plain weighted norms of domain and
    /// codomain, i.e. the largest singular value of `Wc^{1/2} T Wd^{-1/2}`.
    pub fn opnorm_plain(&self) -> f64 {
        let sc = self.codomain.sqrt_weights();
        let sd = self.domain.sqrt_weights();
        let mut m = self.coeffs.clone();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                m[(i, j)] *= sc[i] / sd[j];
            }
        }
        sigma_max(&m)
    }

    /// `sup { ||Tf||_codGram : ||f||_domGram <= 1 }`, the largest generalized
    /// singular value. A nullspace of `domGram` is eigen-truncated at relative
    /// threshold [`GRAM_TRUNCATION_REL`]; directions in that nullspace on
    /// which `T` has nonzero codomain seminorm make the value infinite and
    /// raise `DegenerateNorm`.
    pub fn opnorm(&self, dom_gram: &GramForm, cod_gram: &GramForm) -> Result<f64, SpaceError> {
        assert!(dom_gram.space.compatible(&self.domain));
        assert!(cod_gram.space.compatible(&self.codomain));
        let half = cod_gram.sqrt_factor();
        let y_all = &half * &self.coeffs;
        let (basis, null) = dom_gram.range_basis();
        let scale = 1.0 + y_all.norm();
        for k in 0..null.ncols() {
            let residual = (&y_all * null.column(k)).norm();
            if residual > 1e-8 * scale {
                return Err(SpaceError::DegenerateNorm { residual });
            }
        }
        if basis.ncols() == 0 {
            return Ok(0.0);
        }
        Ok(sigma_max(&(&y_all * &basis)))
    }
}

/// Smallest constant `c` with `|pairing(f,u)| <= c ||f||_domGram ||u||_codGram`
/// for the sesquilinear pairing `(f,u) -> u^H N f`.
pub fn pairing_norm(
    n: &DMatrix<C64>,
    dom_gram: &GramForm,
    cod_gram: &GramForm,
) -> Result<f64, SpaceError> {
    let (basis_d, null_d) = dom_gram.range_basis();
    let (basis_c, null_c) = cod_gram.range_basis();
    let scale = 1.0 + n.norm();
    for k in 0..null_d.ncols() {
        let residual = (n * null_d.column(k)).norm();
        if residual > 1e-8 * scale {
            return Err(SpaceError::DegenerateNorm { residual });
        }
    }
    for k in 0..null_c.ncols() {
        let residual = (n.adjoint() * null_c.column(k)).norm();
        if residual > 1e-8 * scale {
            return Err(SpaceError::DegenerateNorm { residual });
        }
    }
    if basis_d.ncols() == 0 || basis_c.ncols() == 0 {
        return Ok(0.0);
    }
    Ok(sigma_max(&(basis_c.adjoint() * n * basis_d)))
}

/// Eigendecomposition of a self-adjoint operator on a weighted space:
/// ascending real eigenvalues, eigenvectors orthonormal with respect to the
/// weighted inner product (stored as matrix columns in original coordinates).
#[derive(Clone, Debug)]
pub struct Eigh {
    pub space: WeightedSpace,
    pub eigenvalues: Vec<f64>,
    pub vectors: DMatrix<C64>,
}

impl Eigh {
    /// Rank-one spectral projector weights: `sum f(l_k) v_k v_k^H W`.
    pub fn apply_function(&self, f: impl Fn(f64) -> C64) -> Result<LinOp, SpaceError> {
        let n = self.space.dim();
        let w = self.space.weights();
        let mut coeffs = DMatrix::<C64>::zeros(n, n);
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            let value = f(lambda);
            if !value.re.is_finite() || !value.im.is_finite() {
                return Err(SpaceError::DomainError { eigenvalue: lambda });
            }
            let v = self.vectors.column(k);
            for i in 0..n {
                for j in 0..n {
                    coeffs[(i, j)] += value * v[i] * v[j].conj() * w[j];
                }
            }
        }
        LinOp::new(self.space.clone(), self.space.clone(), coeffs)
    }

    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(f64::NEG_INFINITY)
    }
}

impl LinOp {
    /// Eigendecomposition for operators self-adjoint w.r.t. the weighted
    /// inner product, at the default relative tolerance
    /// [`DEFAULT_REL_TOL`]. Realized by `W^{1/2}`-conjugation to a plain
    /// Hermitian problem; eigenvectors are returned in original coordinates.
    pub fn eigh(&self) -> Result<Eigh, SpaceError> {
        self.eigh_with_tol(DEFAULT_REL_TOL)
    }

    /// [`LinOp::eigh`] with an explicit relative self-adjointness tolerance.
    pub fn eigh_with_tol(&self, rel_tol: f64) -> Result<Eigh, SpaceError> {
        assert!(self.is_endo(), "eigh requires domain == codomain");
        let tol = rel_tol * self.frobenius().max(1e-300);
        let defect = self.self_adjoint_defect();
        if defect > tol {
            return Err(SpaceError::NotSelfAdjoint { defect, tol });
        }
        let s = self.symmetrized();
        let (eigenvalues, u) = hermitian_eigen(&s);
        let sw = self.domain.sqrt_weights();
        let mut vectors = u;
        for i in 0..vectors.nrows() {
            for j in 0..vectors.ncols() {
                vectors[(i, j)] /= sw[i];
            }
        }
        Ok(Eigh {
            space: self.domain.clone(),
            eigenvalues,
            vectors,
        })
    }

    /// `f(K)` by functional calculus on a self-adjoint `K`.
    pub fn matfunc(&self, f: impl Fn(f64) -> C64) -> Result<LinOp, SpaceError> {
        self.eigh()?.apply_function(f)
    }

    /// `W^{1/2} T W^{-1/2}`, Hermitian part taken (plain coordinates).
    fn symmetrized(&self) -> DMatrix<C64> {
        let sw = self.domain.sqrt_weights();
        let n = self.domain.dim();
        let mut s = self.coeffs.clone();
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] *= sw[i] / sw[j];
            }
        }
        let sh = s.adjoint();
        (s + sh).map(|x| x * 0.5)
    }
}

/// Hermitian positive-semidefinite sesquilinear form `q(f,g) = g^H M f` on a
/// weighted space. `M` is the coefficient matrix in coordinates; the weights
/// enter only through the associated operator representative.
#[derive(Clone, Debug)]
pub struct GramForm {
    space: WeightedSpace,
    coeffs: DMatrix<C64>,
}

impl GramForm {
    pub fn new(space: WeightedSpace, coeffs: DMatrix<C64>) -> Result<Self, SpaceError> {
        if coeffs.nrows() != space.dim() || coeffs.ncols() != space.dim() {
            return Err(SpaceError::DimensionMismatch {
                expected: space.dim(),
                got: coeffs.nrows(),
                context: "form coefficient matrix".into(),
            });
        }
        let defect = (&coeffs - coeffs.adjoint()).norm();
        if defect > 1e-13 * coeffs.norm().max(1.0) {
            return Err(SpaceError::NotHermitian { defect });
        }
        let sym = (coeffs.adjoint() + &coeffs).map(|x| x * 0.5);
        let form = Self { space, coeffs: sym };
        let (eigs, _) = hermitian_eigen(&form.coeffs);
        let max = eigs.last().copied().unwrap_or(0.0).max(0.0);
        if let Some(&min) = eigs.first() {
            if min < -1e-12 * max.max(1.0) {
                return Err(SpaceError::NotPositiveSemiDefinite { min_eig: min });
            }
        }
        Ok(form)
    }

    pub fn zero(space: WeightedSpace) -> Self {
        let n = space.dim();
        Self {
            space,
            coeffs: DMatrix::zeros(n, n),
        }
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn coeffs(&self) -> &DMatrix<C64> {
        &self.coeffs
    }

    /// `q(f,g) = g^H M f` (linear in `f`).
    pub fn eval(&self, f: &DVector<C64>, g: &DVector<C64>) -> C64 {
        (g.adjoint() * &self.coeffs * f)[(0, 0)]
    }

    pub fn quad(&self, f: &DVector<C64>) -> f64 {
        self.eval(f, f).re
    }

    pub fn norm(&self, f: &DVector<C64>) -> f64 {
        self.quad(f).max(0.0).sqrt()
    }

    pub fn add(&self, other: &GramForm) -> GramForm {
        assert!(self.space.compatible(&other.space));
        GramForm {
            space: self.space.clone(),
            coeffs: &self.coeffs + &other.coeffs,
        }
    }

    pub fn scale(&self, c: f64) -> GramForm {
        GramForm {
            space: self.space.clone(),
            coeffs: self.coeffs.map(|x| x * c),
        }
    }

    /// The operator associated with the form w.r.t. the weighted inner
    /// product: the unique self-adjoint `A` with `<Af,g>_w = q(f,g)`,
    /// i.e. `A = W^{-1} M`.
    pub fn representative(&self) -> LinOp {
        let w = self.space.weights();
        let mut coeffs = self.coeffs.clone();
        for i in 0..coeffs.nrows() {
            for j in 0..coeffs.ncols() {
                coeffs[(i, j)] /= w[i];
            }
        }
        LinOp {
            domain: self.space.clone(),
            codomain: self.space.clone(),
            coeffs,
        }
    }

    /// Pull the form back along `t`: `q'(f,g) = q(t f, t g)`.
    pub fn pullback(&self, t: &LinOp) -> GramForm {
        assert!(t.codomain().compatible(&self.space));
        GramForm {
            space: t.domain().clone(),
            coeffs: t.coeffs().adjoint() * &self.coeffs * t.coeffs(),
        }
    }

    /// Hermitian square root of the coefficient matrix (negatives clamped).
    fn sqrt_factor(&self) -> DMatrix<C64> {
        let (eigs, u) = hermitian_eigen(&self.coeffs);
        let mut d = DMatrix::<C64>::zeros(eigs.len(), eigs.len());
        for (k, &e) in eigs.iter().enumerate() {
            d[(k, k)] = C64::new(e.max(0.0).sqrt(), 0.0);
        }
        &u * d * u.adjoint()
    }

    /// Columns `U+ D+^{-1/2}` spanning the positive-definite part mapped so
    /// that the Gram form is the identity there, plus the truncated nullspace
    /// columns. Truncation threshold is relative, [`GRAM_TRUNCATION_REL`].
    fn range_basis(&self) -> (DMatrix<C64>, DMatrix<C64>) {
        let (eigs, u) = hermitian_eigen(&self.coeffs);
        let max = eigs.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
        let threshold = GRAM_TRUNCATION_REL * max.max(1e-300);
        let keep: Vec<usize> = (0..eigs.len()).filter(|&k| eigs[k] > threshold).collect();
        let drop: Vec<usize> = (0..eigs.len()).filter(|&k| eigs[k] <= threshold).collect();
        let n = self.coeffs.nrows();
        let mut basis = DMatrix::<C64>::zeros(n, keep.len());
        for (c, &k) in keep.iter().enumerate() {
            let scale = 1.0 / eigs[k].sqrt();
            for i in 0..n {
                basis[(i, c)] = u[(i, k)] * scale;
            }
        }
        let mut null = DMatrix::<C64>::zeros(n, drop.len());
        for (c, &k) in drop.iter().enumerate() {
            for i in 0..n {
                null[(i, c)] = u[(i, k)];
            }
        }
        (basis, null)
    }
}

/// Plain Hermitian eigendecomposition with ascending eigenvalues and
/// orthonormal eigenvector columns.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let se = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
    let mut vectors = DMatrix::<C64>::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        vectors.set_column(c, &se.eigenvectors.column(k));
    }
    (eigenvalues, vectors)
}

/// Largest singular value via the Hermitian eigenproblem of `M^H M`.
pub fn sigma_max(m: &DMatrix<C64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let gram = m.adjoint() * m;
    let (eigs, _) = hermitian_eigen(&gram);
    eigs.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// Real symmetric eigendecomposition, ascending. Used by the
/// finite-difference oracle where problems are real.
pub fn symmetric_eigen_real(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), DMatrix::zeros(0, 0));
    }
    let se = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
    let mut vectors = DMatrix::<f64>::zeros(n, n);
    for (c, &k) in order.iter().enumerate() {
        vectors.set_column(c, &se.eigenvectors.column(k));
    }
    (eigenvalues, vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{random_matrix, random_vector, seeded_rng};
    use rand::Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn weights_must_be_positive() {
        assert!(WeightedSpace::new(vec![1.0, 0.0], "bad").is_err());
        assert!(WeightedSpace::new(vec![1.0, -2.0], "bad").is_err());
        assert!(WeightedSpace::new(vec![1.0, 2.0], "ok").is_ok());
    }

    #[test]
    fn adjoint_of_identity_is_identity() {
        let sp = WeightedSpace::new(vec![1.0, 3.0, 0.5], "s").unwrap();
        let id = LinOp::identity(&sp);
        assert!(id.adjoint().max_abs_diff(&id) < 1e-15);
    }

    #[test]
    fn adjoint_unweighted_is_conjugate_transpose() {
        let sp = WeightedSpace::unweighted(2, "c2");
        let t = LinOp::new(
            sp.clone(),
            sp.clone(),
            DMatrix::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
        )
        .unwrap();
        let expected = DMatrix::from_row_slice(
            2,
            2,
            &[c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
        );
        assert!((t.adjoint().coeffs() - expected).norm() < 1e-15);
    }

    #[test]
    fn restriction_adjoint_duality() {
        // Gamma : l2({a,m,b}, deg=(1,2,1)) -> l2({a}, deg=1), f -> f(a).
        let dom = WeightedSpace::new(vec![1.0, 2.0, 1.0], "amb").unwrap();
        let cod = WeightedSpace::new(vec![1.0], "a").unwrap();
        let gamma = LinOp::new(
            dom.clone(),
            cod.clone(),
            DMatrix::from_row_slice(1, 3, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
        )
        .unwrap();
        let adj = gamma.adjoint();
        // zero-extension scaled by weight ratio 1
        assert!((adj.coeffs()[(0, 0)] - c(1.0, 0.0)).norm() < 1e-15);
        assert!(adj.coeffs()[(1, 0)].norm() < 1e-15);
        let mut rng = seeded_rng(11);
        for _ in 0..50 {
            let f = random_vector(&mut rng, 3);
            let phi = random_vector(&mut rng, 1);
            let lhs = cod.inner(&gamma.apply(&f), &phi);
            let rhs = dom.inner(&f, &adj.apply(&phi));
            assert!((lhs - rhs).norm() < 1e-13);
        }
    }

    #[test]
    fn adjoint_involution_random() {
        let mut rng = seeded_rng(7);
        for _ in 0..40 {
            let nd = rng.gen_range(1..6);
            let nc = rng.gen_range(1..6);
            let dom = WeightedSpace::new(
                (0..nd).map(|_| rng.gen_range(0.1..4.0)).collect(),
                "d",
            )
            .unwrap();
            let cod = WeightedSpace::new(
                (0..nc).map(|_| rng.gen_range(0.1..4.0)).collect(),
                "c",
            )
            .unwrap();
            let t = LinOp::new(dom, cod, random_matrix(&mut rng, nc, nd)).unwrap();
            assert!(t.adjoint().adjoint().max_abs_diff(&t) < 1e-14 * (1.0 + t.frobenius()));
        }
    }

    #[test]
    fn adjoint_duality_random() {
        let mut rng = seeded_rng(8);
        for _ in 0..100 {
            let nd = rng.gen_range(1..5);
            let nc = rng.gen_range(1..5);
            let dom = WeightedSpace::new(
                (0..nd).map(|_| rng.gen_range(0.2..3.0)).collect(),
                "d",
            )
            .unwrap();
            let cod = WeightedSpace::new(
                (0..nc).map(|_| rng.gen_range(0.2..3.0)).collect(),
                "c",
            )
            .unwrap();
            let t = LinOp::new(dom.clone(), cod.clone(), random_matrix(&mut rng, nc, nd)).unwrap();
            let f = random_vector(&mut rng, nd);
            let u = random_vector(&mut rng, nc);
            let lhs = cod.inner(&t.apply(&f), &u);
            let rhs = dom.inner(&f, &t.adjoint().apply(&u));
            let bound = 1e-12 * (1.0 + t.frobenius()) * (1.0 + dom.norm(&f)) * (1.0 + cod.norm(&u));
            assert!((lhs - rhs).norm() <= bound);
        }
    }

    #[test]
    fn eigh_zero_operator() {
        let sp = WeightedSpace::new(vec![1.0, 2.0, 3.0], "s").unwrap();
        let z = LinOp::zeros(&sp, &sp);
        let e = z.eigh().unwrap();
        assert!(e.eigenvalues.iter().all(|&l| l.abs() < 1e-14));
    }

    #[test]
    fn eigh_k2_normalized_laplacian() {
        let sp = WeightedSpace::new(vec![1.0, 1.0], "V(K2)").unwrap();
        let t = LinOp::from_real(
            sp.clone(),
            sp,
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
        )
        .unwrap();
        let e = t.eigh().unwrap();
        assert!((e.eigenvalues[0] - 0.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eigh_rejects_non_self_adjoint() {
        let sp = WeightedSpace::unweighted(2, "s");
        let t = LinOp::from_real(
            sp.clone(),
            sp,
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
        )
        .unwrap();
        assert!(matches!(t.eigh(), Err(SpaceError::NotSelfAdjoint { .. })));
    }

    #[test]
    fn eigh_weighted_orthonormality_and_reconstruction() {
        let mut rng = seeded_rng(21);
        for _ in 0..20 {
            let n = rng.gen_range(1..7);
            let sp =
                WeightedSpace::new((0..n).map(|_| rng.gen_range(0.2..3.0)).collect(), "s").unwrap();
            // random w-self-adjoint operator: representative of a random PSD form
            let a = random_matrix(&mut rng, n, n);
            let m = a.adjoint() * &a;
            let form = GramForm::new(sp.clone(), m).unwrap();
            let t = form.representative();
            let e = t.eigh().unwrap();
            for j in 0..n {
                for k in 0..n {
                    let ip = sp.inner(
                        &DVector::from_column_slice(e.vectors.column(j).as_slice()),
                        &DVector::from_column_slice(e.vectors.column(k).as_slice()),
                    );
                    let expected = if j == k { 1.0 } else { 0.0 };
                    assert!((ip - c(expected, 0.0)).norm() < 1e-11);
                }
            }
            let rec = e.apply_function(|l| c(l, 0.0)).unwrap();
            assert!(rec.max_abs_diff(&t) < 1e-9 * (1.0 + t.frobenius()));
        }
    }

    #[test]
    fn matfunc_identity_function_returns_operator() {
        let sp = WeightedSpace::new(vec![2.0, 1.0], "s").unwrap();
        let form = GramForm::new(
            sp.clone(),
            DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(0.5, 0.5), c(0.5, -0.5), c(1.0, 0.0)]),
        )
        .unwrap();
        let t = form.representative();
        let f = t.matfunc(|l| c(l, 0.0)).unwrap();
        assert!(f.max_abs_diff(&t) < 1e-11);
    }

    #[test]
    fn matfunc_cos_sqrt_on_diagonal() {
        let sp = WeightedSpace::unweighted(2, "s");
        let k = LinOp::from_real(
            sp.clone(),
            sp,
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, std::f64::consts::PI.powi(2)]),
        )
        .unwrap();
        let f = k.matfunc(|l| c(l.sqrt().cos(), 0.0)).unwrap();
        assert!((f.coeffs()[(0, 0)] - c(1.0, 0.0)).norm() < 1e-12);
        assert!((f.coeffs()[(1, 1)] - c(-1.0, 0.0)).norm() < 1e-12);
        assert!(f.coeffs()[(0, 1)].norm() < 1e-12);
    }

    #[test]
    fn matfunc_pole_is_domain_error() {
        let sp = WeightedSpace::unweighted(2, "s");
        let k = LinOp::from_real(
            sp.clone(),
            sp,
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]),
        )
        .unwrap();
        let res = k.matfunc(|l| c(1.0 / (l - 3.0), 0.0));
        assert!(matches!(res, Err(SpaceError::DomainError { .. })));
    }

    #[test]
    fn matfunc_homomorphism_on_polynomials() {
        let mut rng = seeded_rng(33);
        let n = 5;
        let sp = WeightedSpace::new((0..n).map(|_| rng.gen_range(0.5..2.0)).collect(), "s").unwrap();
        let a = random_matrix(&mut rng, n, n);
        let form = GramForm::new(sp.clone(), a.adjoint() * &a).unwrap();
        let k = form.representative();
        let f = |l: f64| c(1.0 + 2.0 * l, 0.0);
        let g = |l: f64| c(l * l - 0.5, 0.0);
        let fg = |l: f64| f(l) * g(l);
        let lhs = k.matfunc(fg).unwrap();
        let rhs = k.matfunc(f).unwrap().compose(&k.matfunc(g).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-10 * (1.0 + lhs.frobenius()));
    }

    #[test]
    fn opnorm_zero_map() {
        let sp = WeightedSpace::unweighted(3, "s");
        let z = LinOp::zeros(&sp, &sp);
        let g = sp.gram();
        assert!(z.opnorm(&g, &g).unwrap() < 1e-15);
    }

    #[test]
    fn opnorm_identity_with_scaled_grams() {
        let sp = WeightedSpace::unweighted(3, "s");
        let id = LinOp::identity(&sp);
        let g = sp.gram();
        let g2 = g.scale(2.0);
        let v = id.opnorm(&g2, &g).unwrap();
        assert!((v - 1.0 / 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn opnorm_k2_boundary_map_in_form_norm() {
        // Gamma of the K2 ABVP with boundary {a}: H1-norm -> G-norm.
        let dom = WeightedSpace::new(vec![1.0, 1.0], "V(K2)").unwrap();
        let cod = WeightedSpace::new(vec![1.0], "a").unwrap();
        let gamma = LinOp::from_real(
            dom.clone(),
            cod.clone(),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
        .unwrap();
        // h1 gram = combinatorial Laplacian + W
        let h1 = GramForm::new(
            dom.clone(),
            DMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(-1.0, 0.0), c(-1.0, 0.0), c(2.0, 0.0)]),
        )
        .unwrap();
        let v = gamma.opnorm(&h1, &cod.gram()).unwrap();
        assert!(v <= 1.0 + 1e-12);
        // exact value sqrt(2/3): maximize |f_a|^2 / (|fa-fb|^2 + |fa|^2 + |fb|^2)
        assert!((v - (2.0 / 3.0_f64).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn opnorm_degenerate_detection() {
        let sp = WeightedSpace::unweighted(2, "s");
        let id = LinOp::identity(&sp);
        // dom gram vanishing on e2 while T = id does not
        let dg = GramForm::new(
            sp.clone(),
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]),
        )
        .unwrap();
        assert!(matches!(
            id.opnorm(&dg, &sp.gram()),
            Err(SpaceError::DegenerateNorm { .. })
        ));
        // but a map annihilating the null direction is fine
        let t = LinOp::from_real(
            sp.clone(),
            sp.clone(),
            DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 0.0]),
        )
        .unwrap();
        let v = t.opnorm(&dg, &sp.gram()).unwrap();
        assert!((v - 3.0).abs() < 1e-10);
    }

    #[test]
    fn gram_rejects_non_hermitian_and_indefinite() {
        let sp = WeightedSpace::unweighted(2, "s");
        let bad = DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(
            GramForm::new(sp.clone(), bad),
            Err(SpaceError::NotHermitian { .. })
        ));
        let indef =
            DMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]);
        assert!(matches!(
            GramForm::new(sp, indef),
            Err(SpaceError::NotPositiveSemiDefinite { .. })
        ));
    }
}
