//! Vector-valued quantum graphs: interval and edge Dirichlet-to-Neumann
//! matrices, the coupled DtN under standard or explicit vertex subspaces,
//! a secular-equation spectrum solver with Dirichlet-window accounting, the
//! equilateral closed-form spectrum and an independent finite-difference
//! oracle.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, GraphError};
use crate::space::{
    hermitian_eigen, symmetric_eigen_real, LinOp, SpaceError, WeightedSpace, C64,
};

#[derive(Debug, Error)]
pub enum QgError {
    #[error("z = {z} hits the Dirichlet pole n = {n}, kappa = {kappa}")]
    DirichletPole { z: C64, n: i64, kappa: f64 },
    #[error("fibre operator of edge {0} is not Hermitian")]
    FibreNotHermitian(usize),
    #[error("edge {0} has non-positive length")]
    BadLength(usize),
    #[error("standard vertex spaces need identical fibres around vertex '{0}'")]
    FibreMismatch(String),
    #[error("explicit vertex basis at '{0}' is not orthonormal")]
    BasisNotOrthonormal(String),
    #[error("mesh too coarse: h = {h} > min length / 8 = {limit}")]
    MeshTooCoarse { h: f64, limit: f64 },
    #[error("Laplacian eigenvalue {0} outside [0, 2]")]
    MuOutOfRange(f64),
    #[error("graph must be connected for the equilateral closed form")]
    NotConnected,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// `cos(sqrt w)`, entire in `w`; series below |w| = 1/4, closed form above.
pub fn cos_sqrt(w: C64) -> C64 {
    if w.norm() < 0.25 {
        let mut term = C64::new(1.0, 0.0);
        let mut acc = term;
        for k in 1..=12 {
            term *= -w / ((2 * k - 1) as f64 * (2 * k) as f64);
            acc += term;
        }
        acc
    } else {
        w.sqrt().cos()
    }
}

/// `sin(sqrt w)/sqrt w`, entire in `w`.
pub fn sinc_sqrt(w: C64) -> C64 {
    if w.norm() < 0.25 {
        let mut term = C64::new(1.0, 0.0);
        let mut acc = term;
        for k in 1..=12 {
            term *= -w / ((2 * k) as f64 * (2 * k + 1) as f64);
            acc += term;
        }
        acc
    } else {
        let s = w.sqrt();
        s.sin() / s
    }
}

const POLE_GUARD: f64 = 1e-12;

fn pole_data(l: f64, zk: C64) -> (i64, f64) {
    let n = (l * zk.re.max(0.0).sqrt() / std::f64::consts::PI).round() as i64;
    (n.max(1), zk.re)
}

/// Scalar interval DtN
/// `Lambda_0(z) = (1/(l s(l^2 z))) [[c(l^2 z), -1], [-1, c(l^2 z)]]`.
pub fn interval_dtn(l: f64, z: C64) -> Result<DMatrix<C64>, QgError> {
    let w = z * (l * l);
    let s = sinc_sqrt(w);
    if s.norm() <= POLE_GUARD {
        let (n, _) = pole_data(l, z);
        return Err(QgError::DirichletPole { z, n, kappa: 0.0 });
    }
    let c = cos_sqrt(w);
    let f = C64::new(1.0, 0.0) / (s * l);
    Ok(DMatrix::from_row_slice(2, 2, &[c * f, -f, -f, c * f]))
}

/// Edge DtN for fibre operator `K`: `Lambda(z) = Lambda_0(z - K)` as a
/// 2d x 2d block matrix `[[C(z), -S(z)], [-S(z), C(z)]]` with
/// `C(z) = sqrt(z-K) cot(l sqrt(z-K))`, `S(z) = sqrt(z-K)/sin(l sqrt(z-K))`,
/// evaluated by functional calculus.
pub fn edge_dtn(l: f64, k: &DMatrix<C64>, z: C64) -> Result<DMatrix<C64>, QgError> {
    let d = k.nrows();
    let space = WeightedSpace::unweighted(d, "fibre");
    let op = LinOp::new(space.clone(), space, k.clone()).expect("shape");
    let eig = op.eigh().map_err(QgError::Space)?;
    for &kappa in &eig.eigenvalues {
        let w = (z - C64::new(kappa, 0.0)) * (l * l);
        if sinc_sqrt(w).norm() <= POLE_GUARD {
            let (n, _) = pole_data(l, z - C64::new(kappa, 0.0));
            return Err(QgError::DirichletPole { z, n, kappa });
        }
    }
    let c_block = eig
        .apply_function(|kappa| {
            let w = (z - C64::new(kappa, 0.0)) * (l * l);
            cos_sqrt(w) / (sinc_sqrt(w) * l)
        })
        .map_err(QgError::Space)?;
    let s_block = eig
        .apply_function(|kappa| {
            let w = (z - C64::new(kappa, 0.0)) * (l * l);
            C64::new(1.0, 0.0) / (sinc_sqrt(w) * l)
        })
        .map_err(QgError::Space)?;
    let mut out = DMatrix::<C64>::zeros(2 * d, 2 * d);
    out.view_mut((0, 0), (d, d)).copy_from(c_block.coeffs());
    out.view_mut((d, d), (d, d)).copy_from(c_block.coeffs());
    out.view_mut((0, d), (d, d))
        .copy_from(&s_block.coeffs().map(|x| -x));
    out.view_mut((d, 0), (d, d))
        .copy_from(&s_block.coeffs().map(|x| -x));
    Ok(out)
}

/// Vertex-space declaration: standard (diagonal of the common fibre around
/// each vertex) or explicit orthonormal bases of `G_v^max = (+)_{e in E_v} K_e`.
#[derive(Clone, Debug)]
pub enum VertexSpaces {
    Standard,
    Explicit(Vec<DMatrix<C64>>),
}

/// Metric graph with per-edge length and Hermitian fibre operator.
#[derive(Clone, Debug)]
pub struct QuantumGraph {
    pub graph: Graph,
    pub lengths: Vec<f64>,
    pub fibres: Vec<DMatrix<C64>>,
    pub vertex_spaces: VertexSpaces,
}

impl QuantumGraph {
    pub fn new(
        graph: Graph,
        lengths: Vec<f64>,
        fibres: Vec<DMatrix<C64>>,
        vertex_spaces: VertexSpaces,
    ) -> Result<Self, QgError> {
        assert_eq!(lengths.len(), graph.edge_count());
        assert_eq!(fibres.len(), graph.edge_count());
        for (e, &l) in lengths.iter().enumerate() {
            if !(l > 0.0) {
                return Err(QgError::BadLength(e));
            }
        }
        for (e, k) in fibres.iter().enumerate() {
            if (k - k.adjoint()).norm() > 1e-12 * k.norm().max(1.0) {
                return Err(QgError::FibreNotHermitian(e));
            }
        }
        let qg = Self {
            graph,
            lengths,
            fibres,
            vertex_spaces,
        };
        match &qg.vertex_spaces {
            VertexSpaces::Standard => {
                for v in 0..qg.graph.vertex_count() {
                    let inc = qg.graph.incident_edges(v);
                    if inc.is_empty() {
                        return Err(QgError::Graph(GraphError::IsolatedVertex(
                            qg.graph.vertices()[v].clone(),
                        )));
                    }
                    let first = &qg.fibres[inc[0]];
                    for &e in inc {
                        if qg.fibres[e].nrows() != first.nrows()
                            || (&qg.fibres[e] - first).norm() > 1e-12 * (1.0 + first.norm())
                        {
                            return Err(QgError::FibreMismatch(qg.graph.vertices()[v].clone()));
                        }
                    }
                }
            }
            VertexSpaces::Explicit(bases) => {
                assert_eq!(bases.len(), qg.graph.vertex_count());
                for (v, b) in bases.iter().enumerate() {
                    let expected: usize = qg
                        .graph
                        .incident_edges(v)
                        .iter()
                        .map(|&e| qg.fibres[e].nrows())
                        .sum();
                    if b.nrows() != expected {
                        return Err(QgError::BasisNotOrthonormal(
                            qg.graph.vertices()[v].clone(),
                        ));
                    }
                    let g = b.adjoint() * b;
                    let defect = (&g - DMatrix::<C64>::identity(g.nrows(), g.ncols())).norm();
                    if defect > 1e-12 {
                        return Err(QgError::BasisNotOrthonormal(
                            qg.graph.vertices()[v].clone(),
                        ));
                    }
                }
            }
        }
        Ok(qg)
    }

    /// Scalar graph with standard (free/Kirchhoff) vertex conditions.
    pub fn scalar(graph: Graph, lengths: Vec<f64>) -> Result<Self, QgError> {
        let m = graph.edge_count();
        let fibres = vec![DMatrix::<C64>::zeros(1, 1); m];
        Self::new(graph, lengths, fibres, VertexSpaces::Standard)
    }

    /// All lengths one, all fibres equal to `k0`, standard vertex spaces.
    pub fn equilateral(graph: Graph, k0: DMatrix<C64>) -> Result<Self, QgError> {
        let m = graph.edge_count();
        Self::new(
            graph,
            vec![1.0; m],
            vec![k0; m],
            VertexSpaces::Standard,
        )
    }

    pub fn min_length(&self) -> f64 {
        self.lengths.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn fibre_dim(&self, e: usize) -> usize {
        self.fibres[e].nrows()
    }

    /// The coupled boundary space `(+)_v G_v`: in the standard case the
    /// model fibre with weight `deg v`; for explicit bases the unweighted
    /// coefficient space.
    pub fn boundary_space(&self) -> WeightedSpace {
        match &self.vertex_spaces {
            VertexSpaces::Standard => {
                let mut weights = Vec::new();
                for v in 0..self.graph.vertex_count() {
                    let inc = self.graph.incident_edges(v);
                    let d = self.fibre_dim(inc[0]);
                    weights.extend(std::iter::repeat(inc.len() as f64).take(d));
                }
                WeightedSpace::new(weights, "qg boundary (standard)").expect("positive")
            }
            VertexSpaces::Explicit(bases) => {
                let dim: usize = bases.iter().map(|b| b.ncols()).sum();
                WeightedSpace::unweighted(dim, "qg boundary (explicit)")
            }
        }
    }

    fn vertex_block_offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.graph.vertex_count());
        let mut acc = 0;
        for v in 0..self.graph.vertex_count() {
            out.push(acc);
            acc += match &self.vertex_spaces {
                VertexSpaces::Standard => self.fibre_dim(self.graph.incident_edges(v)[0]),
                VertexSpaces::Explicit(bases) => bases[v].ncols(),
            };
        }
        out
    }

    /// The coupled DtN operator at `z`. Standard spaces use the averaged
    /// formula `(Lambda(z) phi)(v) = (1/deg v) sum_e (C_e phi(v) - S_e phi(v_e))`;
    /// explicit spaces use `iota* Lambda^dec(z) iota`.
    pub fn dtn(&self, z: C64) -> Result<LinOp, QgError> {
        match &self.vertex_spaces {
            VertexSpaces::Standard => self.dtn_standard(z),
            VertexSpaces::Explicit(_) => self.dtn_via_blocks(z),
        }
    }

    fn dtn_standard(&self, z: C64) -> Result<LinOp, QgError> {
        let bd = self.boundary_space();
        let off = self.vertex_block_offsets();
        let g = &self.graph;
        let mut coeffs = DMatrix::<C64>::zeros(bd.dim(), bd.dim());
        for e in 0..g.edge_count() {
            let d = self.fibre_dim(e);
            let lam_e = edge_dtn(self.lengths[e], &self.fibres[e], z)?;
            let c_blk = lam_e.view((0, 0), (d, d)).into_owned();
            let s_blk = lam_e.view((0, d), (d, d)).map(|x| -x);
            for (me, other) in [(g.src(e), g.dst(e)), (g.dst(e), g.src(e))] {
                let scale = 1.0 / g.degree(me) as f64;
                for i in 0..d {
                    for j in 0..d {
                        coeffs[(off[me] + i, off[me] + j)] += c_blk[(i, j)] * scale;
                        coeffs[(off[me] + i, off[other] + j)] -= s_blk[(i, j)] * scale;
                    }
                }
            }
        }
        Ok(LinOp::new(bd.clone(), bd, coeffs).expect("shape"))
    }

    /// `iota : (+)_v G_v -> (+)_e (K_e (+) K_e)` in the declared coordinates.
    pub fn iota(&self) -> LinOp {
        let g = &self.graph;
        let bd = self.boundary_space();
        let off = self.vertex_block_offsets();
        let edge_off = {
            let mut out = Vec::with_capacity(g.edge_count());
            let mut acc = 0;
            for e in 0..g.edge_count() {
                out.push(acc);
                acc += 2 * self.fibre_dim(e);
            }
            out
        };
        let dec_dim: usize = (0..g.edge_count()).map(|e| 2 * self.fibre_dim(e)).sum();
        let dec = WeightedSpace::unweighted(dec_dim, "qg decoupled boundary");
        let mut coeffs = DMatrix::<C64>::zeros(dec_dim, bd.dim());
        for v in 0..g.vertex_count() {
            for (pos, &e) in g.incident_edges(v).iter().enumerate() {
                let d = self.fibre_dim(e);
                let slot = if g.src(e) == v { 0 } else { d };
                match &self.vertex_spaces {
                    VertexSpaces::Standard => {
                        for i in 0..d {
                            coeffs[(edge_off[e] + slot + i, off[v] + i)] = C64::new(1.0, 0.0);
                        }
                    }
                    VertexSpaces::Explicit(bases) => {
                        let b = &bases[v];
                        let row0: usize = g.incident_edges(v)[..pos]
                            .iter()
                            .map(|&e2| self.fibre_dim(e2))
                            .sum();
                        for i in 0..d {
                            for jcol in 0..b.ncols() {
                                coeffs[(edge_off[e] + slot + i, off[v] + jcol)] =
                                    b[(row0 + i, jcol)];
                            }
                        }
                    }
                }
            }
        }
        LinOp::new(bd, dec, coeffs).expect("shape")
    }

    /// The block route `iota* Lambda^dec(z) iota` in the declared
    /// coordinates; for standard spaces this equals [`QuantumGraph::dtn`]
    /// entrywise.
    pub fn dtn_via_blocks(&self, z: C64) -> Result<LinOp, QgError> {
        let iota = self.iota();
        let g = &self.graph;
        let dec = iota.codomain().clone();
        let mut lam_dec = DMatrix::<C64>::zeros(dec.dim(), dec.dim());
        let mut acc = 0;
        for e in 0..g.edge_count() {
            let d = 2 * self.fibre_dim(e);
            let lam_e = edge_dtn(self.lengths[e], &self.fibres[e], z)?;
            lam_dec.view_mut((acc, acc), (d, d)).copy_from(&lam_e);
            acc += d;
        }
        let lam_dec = LinOp::new(dec.clone(), dec, lam_dec).expect("shape");
        Ok(iota.adjoint().compose(&lam_dec).compose(&iota))
    }

    /// Decoupled Dirichlet spectrum `(n pi / l_e)^2 + kappa <= lmax`, sorted
    /// with multiplicity.
    pub fn dirichlet_spectrum(&self, lmax: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for e in 0..self.graph.edge_count() {
            let space = WeightedSpace::unweighted(self.fibre_dim(e), "fibre");
            let op = LinOp::new(space.clone(), space, self.fibres[e].clone()).expect("shape");
            let eig = op.eigh().expect("Hermitian fibre");
            for &kappa in &eig.eigenvalues {
                let mut n = 1_u64;
                loop {
                    let lam = (n as f64 * std::f64::consts::PI / self.lengths[e]).powi(2) + kappa;
                    if lam > lmax {
                        break;
                    }
                    out.push(lam);
                    n += 1;
                }
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// Dirichlet points merged at tolerance, with multiplicities.
    pub fn dirichlet_points(&self, lmax: f64, merge_tol: f64) -> Vec<(f64, usize)> {
        let raw = self.dirichlet_spectrum(lmax);
        let mut out: Vec<(f64, usize)> = Vec::new();
        for lam in raw {
            match out.last_mut() {
                Some((l0, m)) if (lam - *l0).abs() <= merge_tol => *m += 1,
                _ => out.push((lam, 1)),
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Secular,
    Equilateral,
    FiniteDifference,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Secular => "secular",
            Method::Equilateral => "equilateral",
            Method::FiniteDifference => "finite-difference",
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SpectralPoint {
    pub lambda: f64,
    pub multiplicity: usize,
}

/// Spectrum scan result. `eigenvalues` are located outside the Dirichlet
/// windows; `embedded` lists eigenvalues pinned inside a window by the
/// pole/eigenvalue counting balance (located at the window centre, the
/// Dirichlet point itself); `unresolved_windows` are the excluded scan
/// intervals.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub eigenvalues: Vec<SpectralPoint>,
    pub embedded: Vec<SpectralPoint>,
    pub unresolved_windows: Vec<(f64, f64)>,
    pub method: Method,
}

impl SpectrumReport {
    /// Eigenvalues and embedded points merged and sorted.
    pub fn all_points(&self) -> Vec<SpectralPoint> {
        let mut out: Vec<SpectralPoint> = self
            .eigenvalues
            .iter()
            .chain(self.embedded.iter())
            .copied()
            .collect();
        out.sort_by(|a, b| a.lambda.partial_cmp(&b.lambda).unwrap());
        out
    }

    /// Flat sorted list with multiplicities expanded.
    pub fn flattened(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in self.all_points() {
            for _ in 0..p.multiplicity {
                out.push(p.lambda);
            }
        }
        out
    }

    pub fn flattened_outside_windows(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for p in &self.eigenvalues {
            for _ in 0..p.multiplicity {
                out.push(p.lambda);
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    pub fn in_window(&self, lambda: f64) -> bool {
        self.unresolved_windows
            .iter()
            .any(|&(a, b)| lambda >= a && lambda <= b)
    }
}

fn negcount_of<E>(dtn: &impl Fn(f64) -> Result<LinOp, E>, lambda: f64) -> Result<usize, E>
where
    E: From<SpaceError>,
{
    let lam = dtn(lambda)?;
    let eig = lam.eigh().map_err(E::from)?;
    Ok(eig.eigenvalues.iter().filter(|&&x| x < 0.0).count())
}

fn min_abs_eig_of<E>(dtn: &impl Fn(f64) -> Result<LinOp, E>, lambda: f64) -> Result<f64, E>
where
    E: From<SpaceError>,
{
    let lam = dtn(lambda)?;
    let eig = lam.eigh().map_err(E::from)?;
    Ok(eig
        .eigenvalues
        .iter()
        .map(|x| x.abs())
        .fold(f64::INFINITY, f64::min))
}

/// Locate the spectrum of a self-adjoint family through its DtN operators
/// by bracketing sign changes of the sorted eigenvalue branches. The
/// branches decrease strictly in `lambda` between Dirichlet points, so the
/// number of negative branches counts the eigenvalues passed; a jump of `m`
/// across a bracket means `m` eigenvalues inside, and the balance across a
/// Dirichlet window (jump plus the number of pole branches, which equals
/// the Dirichlet multiplicity of the centre) counts eigenvalues embedded
/// in the window.
pub fn scan_secular<E>(
    dtn: &impl Fn(f64) -> Result<LinOp, E>,
    dirichlet_points: &[(f64, usize)],
    window: (f64, f64),
    grid_step: f64,
    tol: f64,
    method: Method,
) -> Result<SpectrumReport, E>
where
    E: From<SpaceError>,
{
    let (lo, hi) = window;
    assert!(lo < hi && grid_step > 0.0 && tol > 0.0);
    let half_width = (2.0 * grid_step).max(1e-6);
    let mut windows: Vec<(f64, f64, usize, f64)> = Vec::new(); // (a, b, mult, centre)
    for &(d, m) in dirichlet_points {
        let (a, b) = (d - half_width, d + half_width);
        if b < lo || a > hi {
            continue;
        }
        match windows.last_mut() {
            Some(last) if a <= last.1 => {
                last.1 = b;
                last.2 += m;
                last.3 = (last.3 + d) / 2.0;
            }
            _ => windows.push((a, b, m, d)),
        }
    }

    // checkpoints: grid points outside windows plus window edges
    let mut checkpoints: Vec<f64> = Vec::new();
    let steps = ((hi - lo) / grid_step).ceil() as usize;
    'grid: for k in 0..=steps {
        let x = (lo + k as f64 * grid_step).min(hi);
        for &(a, b, _, _) in &windows {
            if x > a && x < b {
                continue 'grid;
            }
        }
        checkpoints.push(x);
    }
    for &(a, b, _, _) in &windows {
        if a > lo {
            checkpoints.push(a);
        }
        if b < hi {
            checkpoints.push(b);
        }
    }
    checkpoints.sort_by(|x, y| x.partial_cmp(y).unwrap());
    checkpoints.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    let mut eigenvalues: Vec<SpectralPoint> = Vec::new();
    let mut embedded: Vec<SpectralPoint> = Vec::new();
    let counts: Vec<usize> = checkpoints
        .iter()
        .map(|&x| negcount_of(dtn, x))
        .collect::<Result<_, _>>()?;

    for i in 0..checkpoints.len().saturating_sub(1) {
        let (a, b) = (checkpoints[i], checkpoints[i + 1]);
        let (na, nb) = (counts[i], counts[i + 1]);
        // does (a, b) span a Dirichlet window?
        let spanned: Option<&(f64, f64, usize, f64)> = windows
            .iter()
            .find(|&&(wa, wb, _, _)| (a - wa).abs() < 1e-14 && (wb - b).abs() < 1e-14);
        if let Some(&(_, _, mult, centre)) = spanned {
            let balance = nb as i64 - na as i64 + mult as i64;
            if balance > 0 {
                embedded.push(SpectralPoint {
                    lambda: centre,
                    multiplicity: balance as usize,
                });
            }
            continue;
        }
        if nb > na {
            bracket_roots(dtn, a, na, b, nb, tol, &mut eigenvalues)?;
        }
    }
    eigenvalues.sort_by(|x, y| x.lambda.partial_cmp(&y.lambda).unwrap());
    embedded.sort_by(|x, y| x.lambda.partial_cmp(&y.lambda).unwrap());
    Ok(SpectrumReport {
        eigenvalues,
        embedded,
        unresolved_windows: windows.iter().map(|&(a, b, _, _)| (a, b)).collect(),
        method,
    })
}

/// Neumann spectrum of a quantum graph in a window via [`scan_secular`].
pub fn neumann_spectrum(
    qg: &QuantumGraph,
    window: (f64, f64),
    grid_step: f64,
    tol: f64,
) -> Result<SpectrumReport, QgError> {
    let half_width = (2.0 * grid_step).max(1e-6);
    // merge only exact multiplicities; nearby distinct points produce
    // overlapping windows which the scan merges with the correct pole count
    let points = qg.dirichlet_points(window.1 + half_width, 1e-11);
    let dtn = |lambda: f64| qg.dtn(C64::new(lambda, 0.0));
    scan_secular(&dtn, &points, window, grid_step, tol, Method::Secular)
}

fn bracket_roots<E>(
    dtn: &impl Fn(f64) -> Result<LinOp, E>,
    a: f64,
    na: usize,
    b: f64,
    nb: usize,
    tol: f64,
    out: &mut Vec<SpectralPoint>,
) -> Result<(), E>
where
    E: From<SpaceError>,
{
    if nb <= na {
        return Ok(());
    }
    if b - a <= tol {
        // refine until the secular residual certifies the root
        let (mut a, mut na, mut b) = (a, na, b);
        let mut point = 0.5 * (a + b);
        for _ in 0..80 {
            if min_abs_eig_of(dtn, point)? < 10.0 * tol {
                break;
            }
            let m = 0.5 * (a + b);
            let nm = negcount_of(dtn, m)?;
            if nm > na {
                b = m;
            } else {
                a = m;
                na = nm;
            }
            point = 0.5 * (a + b);
            if b - a < 1e-15 * point.abs().max(1.0) {
                break;
            }
        }
        out.push(SpectralPoint {
            lambda: point,
            multiplicity: nb - na,
        });
        return Ok(());
    }
    let m = 0.5 * (a + b);
    let nm = negcount_of(dtn, m)?;
    bracket_roots(dtn, a, na, m, nm, tol, out)?;
    bracket_roots(dtn, m, nm, b, nb, tol, out)
}

/// Equilateral closed-form spectrum: `lambda` is a Neumann eigenvalue iff
/// `1 - cos sqrt(lambda - kappa)` is an eigenvalue of the normalised
/// Laplacian for some eigenvalue `kappa` of the common fibre, provided
/// `lambda` avoids the Dirichlet set `{(n pi)^2 + kappa}`. Excluded hits
/// are reported as zero-width unresolved windows.
pub fn equilateral_spectrum(
    graph: &Graph,
    k0: &DMatrix<C64>,
    window: (f64, f64),
) -> Result<SpectrumReport, QgError> {
    if !graph.is_connected() {
        return Err(QgError::NotConnected);
    }
    let (lo, hi) = window;
    let mu_spec = graph.spectrum()?;
    for &mu in &mu_spec {
        if !(-1e-9..=2.0 + 1e-9).contains(&mu) {
            return Err(QgError::MuOutOfRange(mu));
        }
    }
    let space = WeightedSpace::unweighted(k0.nrows(), "fibre");
    let kop = LinOp::new(space.clone(), space, k0.clone()).expect("shape");
    let kappa_spec = kop.eigh().map_err(QgError::Space)?.eigenvalues;

    let pi = std::f64::consts::PI;
    let mut raw: Vec<f64> = Vec::new();
    let mut excluded: Vec<f64> = Vec::new();
    for &kappa in &kappa_spec {
        for &mu in &mu_spec {
            let theta = (1.0 - mu).clamp(-1.0, 1.0).acos();
            let mut m = 0u64;
            loop {
                let mut candidates = vec![theta + 2.0 * pi * m as f64];
                let alt = -theta + 2.0 * pi * (m + 1) as f64;
                // theta = 0 or pi: the two families coincide
                if theta > 1e-12 && (pi - theta) > 1e-12 {
                    candidates.push(alt);
                }
                let mut any_below = false;
                for s in candidates {
                    let lam = kappa + s * s;
                    if lam <= hi {
                        any_below = true;
                        if lam >= lo {
                            // Dirichlet hit: s close to a positive multiple of pi
                            let ratio = s / pi;
                            if s > 1e-9 && (ratio - ratio.round()).abs() < 1e-9 {
                                excluded.push(lam);
                            } else {
                                raw.push(lam);
                            }
                        }
                    }
                }
                if !any_below && kappa + (2.0 * pi * m as f64).powi(2) > hi {
                    break;
                }
                m += 1;
            }
        }
    }
    raw.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut eigenvalues: Vec<SpectralPoint> = Vec::new();
    for lam in raw {
        match eigenvalues.last_mut() {
            Some(p) if (lam - p.lambda).abs() <= 1e-10 * (1.0 + lam.abs()) => p.multiplicity += 1,
            _ => eigenvalues.push(SpectralPoint {
                lambda: lam,
                multiplicity: 1,
            }),
        }
    }
    excluded.sort_by(|a, b| a.partial_cmp(b).unwrap());
    excluded.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    Ok(SpectrumReport {
        eigenvalues,
        embedded: Vec::new(),
        unresolved_windows: excluded.iter().map(|&x| (x, x)).collect(),
        method: Method::Equilateral,
    })
}

/// Finite-difference discretization of `-f'' + K f` on the metric graph,
/// with vertex values shared through the vertex spaces and the flux
/// condition imposed variationally (ghost-point / lumped-mass form, second
/// order in the eigenvalues).
pub struct FdSolution {
    pub report: SpectrumReport,
    pub eigenvalues: Vec<f64>,
    /// eigenvectors as columns, in the assembled unknown coordinates.
    pub vectors: DMatrix<C64>,
    pub layout: FdLayout,
}

pub struct FdLayout {
    /// per-edge: (offset of interior nodes, node count n_e, step h_e).
    pub edges: Vec<(usize, usize, f64)>,
    /// per-vertex: (offset, dimension of the vertex unknown block).
    pub vertices: Vec<(usize, usize)>,
    pub total: usize,
}

impl FdLayout {
    /// Value of the discrete function at node `j` of edge `e` (0..=n_e),
    /// given the vertex embedding blocks.
    pub fn node_value(
        &self,
        qg: &QuantumGraph,
        x: &DVector<C64>,
        e: usize,
        j: usize,
    ) -> DVector<C64> {
        let d = qg.fibres[e].nrows();
        let (off, n, _) = self.edges[e];
        if j == 0 || j == n {
            let v = if j == 0 { qg.graph.src(e) } else { qg.graph.dst(e) };
            let (voff, vdim) = self.vertices[v];
            let emb = vertex_embedding_block(qg, v, e, j == 0);
            let coords = DVector::from_fn(vdim, |i, _| x[voff + i]);
            &emb * coords
        } else {
            DVector::from_fn(d, |i, _| x[off + (j - 1) * d + i])
        }
    }
}

/// The `d x k_v` block mapping the vertex unknown to the value seen by edge
/// `e` at the matching endpoint.
fn vertex_embedding_block(qg: &QuantumGraph, v: usize, e: usize, at_src: bool) -> DMatrix<C64> {
    let d = qg.fibres[e].nrows();
    debug_assert_eq!(at_src, qg.graph.src(e) == v);
    match &qg.vertex_spaces {
        VertexSpaces::Standard => DMatrix::identity(d, d),
        VertexSpaces::Explicit(bases) => {
            let b = &bases[v];
            let pos = qg
                .graph
                .incident_edges(v)
                .iter()
                .position(|&e2| e2 == e)
                .expect("incident");
            let row0: usize = qg.graph.incident_edges(v)[..pos]
                .iter()
                .map(|&e2| qg.fibres[e2].nrows())
                .sum();
            b.view((row0, 0), (d, b.ncols())).into_owned()
        }
    }
}

pub fn fd_oracle(qg: &QuantumGraph, h: f64, count: usize) -> Result<FdSolution, QgError> {
    let limit = qg.min_length() / 8.0;
    if h > limit {
        return Err(QgError::MeshTooCoarse { h, limit });
    }
    let g = &qg.graph;
    // layout: vertex blocks first, then interior nodes per edge
    let mut vertices = Vec::with_capacity(g.vertex_count());
    let mut acc = 0;
    for v in 0..g.vertex_count() {
        let dim = match &qg.vertex_spaces {
            VertexSpaces::Standard => qg.fibres[g.incident_edges(v)[0]].nrows(),
            VertexSpaces::Explicit(bases) => bases[v].ncols(),
        };
        vertices.push((acc, dim));
        acc += dim;
    }
    let mut edges = Vec::with_capacity(g.edge_count());
    for e in 0..g.edge_count() {
        let n = (qg.lengths[e] / h).round().max(2.0) as usize;
        let d = qg.fibres[e].nrows();
        edges.push((acc, n, qg.lengths[e] / n as f64));
        acc += (n - 1) * d;
    }
    let total = acc;
    let layout = FdLayout {
        edges,
        vertices,
        total,
    };

    let mut stiff = DMatrix::<C64>::zeros(total, total);
    let mut mass = DMatrix::<C64>::zeros(total, total);
    // node accessor: list of (global index, coefficient) per fibre row is
    // either an identity block or a vertex embedding block
    enum Block {
        Interior(usize),
        Vertex(usize, DMatrix<C64>),
    }
    let node_block = |e: usize, j: usize| -> Block {
        let (off, n, _) = layout.edges[e];
        if j == 0 || j == n {
            let v = if j == 0 { g.src(e) } else { g.dst(e) };
            Block::Vertex(
                layout.vertices[v].0,
                vertex_embedding_block(qg, v, e, j == 0),
            )
        } else {
            let d = qg.fibres[e].nrows();
            Block::Interior(off + (j - 1) * d)
        }
    };
    // accumulate P_a^H Q P_b for blocks a, b and a d x d matrix Q
    let accumulate = |target: &mut DMatrix<C64>, a: &Block, b: &Block, q: &DMatrix<C64>| {
        match (a, b) {
            (Block::Interior(ia), Block::Interior(ib)) => {
                for r in 0..q.nrows() {
                    for c in 0..q.ncols() {
                        target[(ia + r, ib + c)] += q[(r, c)];
                    }
                }
            }
            (Block::Interior(ia), Block::Vertex(ib, eb)) => {
                let m = q * eb;
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        target[(ia + r, ib + c)] += m[(r, c)];
                    }
                }
            }
            (Block::Vertex(ia, ea), Block::Interior(ib)) => {
                let m = ea.adjoint() * q;
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        target[(ia + r, ib + c)] += m[(r, c)];
                    }
                }
            }
            (Block::Vertex(ia, ea), Block::Vertex(ib, eb)) => {
                let m = ea.adjoint() * q * eb;
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        target[(ia + r, ib + c)] += m[(r, c)];
                    }
                }
            }
        }
    };

    for e in 0..g.edge_count() {
        let (_, n, he) = layout.edges[e];
        let d = qg.fibres[e].nrows();
        let eye = DMatrix::<C64>::identity(d, d);
        let k = &qg.fibres[e];
        for j in 0..n {
            let a = node_block(e, j);
            let b = node_block(e, j + 1);
            let q = eye.map(|x| x / he);
            accumulate(&mut stiff, &a, &a, &q);
            accumulate(&mut stiff, &b, &b, &q);
            let qn = eye.map(|x| -x / he);
            accumulate(&mut stiff, &a, &b, &qn);
            accumulate(&mut stiff, &b, &a, &qn);
        }
        for j in 0..=n {
            let w = if j == 0 || j == n { he / 2.0 } else { he };
            let blk = node_block(e, j);
            let qk = k.map(|x| x * w);
            accumulate(&mut stiff, &blk, &blk, &qk);
            let qm = eye.map(|x| x * w);
            accumulate(&mut mass, &blk, &blk, &qm);
        }
    }

    // generalized symmetric problem via M^{-1/2} S M^{-1/2}; M is block
    // diagonal (scalars on interior nodes, small blocks per vertex)
    let mut mhalf_inv = DMatrix::<C64>::zeros(total, total);
    for &(voff, vdim) in &layout.vertices {
        let block = mass.view((voff, voff), (vdim, vdim)).into_owned();
        let (eigs, u) = hermitian_eigen(&block);
        let mut dinv = DMatrix::<C64>::zeros(vdim, vdim);
        for (i, &ev) in eigs.iter().enumerate() {
            dinv[(i, i)] = C64::new(1.0 / ev.sqrt(), 0.0);
        }
        let binv = &u * dinv * u.adjoint();
        mhalf_inv
            .view_mut((voff, voff), (vdim, vdim))
            .copy_from(&binv);
    }
    let interior_start: usize = layout
        .vertices
        .iter()
        .map(|&(_, dimension)| dimension)
        .sum();
    for i in interior_start..total {
        mhalf_inv[(i, i)] = C64::new(1.0 / mass[(i, i)].re.sqrt(), 0.0);
    }
    let sym = &mhalf_inv * stiff * &mhalf_inv;

    // real path when everything is real
    let is_real = sym.iter().all(|x| x.im.abs() < 1e-14);
    let (eigs, vecs) = if is_real {
        let real = sym.map(|x| x.re);
        let sym_real = (&real + real.transpose()).map(|x| 0.5 * x);
        let (ev, v) = symmetric_eigen_real(&sym_real);
        (ev, v.map(|x| C64::new(x, 0.0)))
    } else {
        let symmetrized = (&sym + sym.adjoint()).map(|x| x * 0.5);
        hermitian_eigen(&symmetrized)
    };
    let take = count.min(eigs.len());
    let eigenvalues: Vec<f64> = eigs[..take].to_vec();
    // back-transform eigenvectors to the original unknowns
    let mut vectors = DMatrix::<C64>::zeros(total, take);
    for c in 0..take {
        let col = &mhalf_inv * vecs.column(c);
        vectors.set_column(c, &col);
    }
    let report = SpectrumReport {
        eigenvalues: eigenvalues
            .iter()
            .map(|&lambda| SpectralPoint {
                lambda,
                multiplicity: 1,
            })
            .collect(),
        embedded: Vec::new(),
        unresolved_windows: Vec::new(),
        method: Method::FiniteDifference,
    };
    Ok(FdSolution {
        report,
        eigenvalues,
        vectors,
        layout,
    })
}

/// One-sided second-order derivative of the discrete eigenvector at the
/// endpoints of edge `e`, oriented outward-to-inward sign convention
/// (`-f'` at the start, `+f'` at the end).
pub fn fd_oriented_derivative(
    qg: &QuantumGraph,
    sol: &FdSolution,
    x: &DVector<C64>,
    e: usize,
    at_src: bool,
) -> DVector<C64> {
    let (_, n, he) = sol.layout.edges[e];
    let f0;
    let f1;
    let f2;
    if at_src {
        f0 = sol.layout.node_value(qg, x, e, 0);
        f1 = sol.layout.node_value(qg, x, e, 1);
        f2 = sol.layout.node_value(qg, x, e, 2);
    } else {
        f0 = sol.layout.node_value(qg, x, e, n);
        f1 = sol.layout.node_value(qg, x, e, n - 1);
        f2 = sol.layout.node_value(qg, x, e, n - 2);
    }
    // (-3 f0 + 4 f1 - f2) / (2h), pointing into the edge at both ends
    (f0.map(|v| v * -3.0) + f1.map(|v| v * 4.0) - f2).map(|v| v / (2.0 * he))
}
