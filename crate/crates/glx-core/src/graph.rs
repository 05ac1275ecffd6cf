//! Finite oriented multigraphs, the subdivision and line-graph
//! constructions, star decomposition and the normalised Laplacian on
//! `l2(V, deg)`.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::space::{GramForm, LinOp, WeightedSpace, C64};

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("isolated vertex '{0}' (degree 0)")]
    IsolatedVertex(String),
    #[error("graph is not regular")]
    NotRegular,
    #[error("unknown vertex id '{0}'")]
    UnknownVertex(String),
}

/// Oriented edge `e` with `(src, dst) = (initial, terminal)` vertex.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeRec {
    pub id: String,
    pub src: String,
    pub dst: String,
}

impl EdgeRec {
    pub fn new(id: impl Into<String>, src: impl Into<String>, dst: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            src: src.into(),
            dst: dst.into(),
        }
    }
}

/// Structural report of [`Graph::check_parts`] and the reordering-identity
/// test of [`Graph::validate`].
#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub loops: Vec<String>,
    pub dangling: Vec<String>,
    pub duplicate_ids: Vec<String>,
    pub handshake_ok: bool,
    pub reorder_residual: f64,
    pub valid: bool,
}

/// Finite oriented multigraph with stable string ids. Loops are rejected;
/// parallel edges are permitted.
#[derive(Clone, Debug)]
pub struct Graph {
    vertices: Vec<String>,
    edges: Vec<EdgeRec>,
    vindex: HashMap<String, usize>,
    src_idx: Vec<usize>,
    dst_idx: Vec<usize>,
    incident: Vec<Vec<usize>>,
}

impl Graph {
    pub fn new(vertices: Vec<String>, edges: Vec<EdgeRec>) -> Result<Self, GraphError> {
        let report = Self::check_parts(&vertices, &edges);
        if !report.loops.is_empty() {
            return Err(GraphError::InvalidGraph(format!(
                "loops at edges {:?}",
                report.loops
            )));
        }
        if !report.dangling.is_empty() {
            return Err(GraphError::InvalidGraph(format!(
                "dangling incidences at edges {:?}",
                report.dangling
            )));
        }
        if !report.duplicate_ids.is_empty() {
            return Err(GraphError::InvalidGraph(format!(
                "duplicate ids {:?}",
                report.duplicate_ids
            )));
        }
        let vindex: HashMap<String, usize> = vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i))
            .collect();
        let src_idx: Vec<usize> = edges.iter().map(|e| vindex[&e.src]).collect();
        let dst_idx: Vec<usize> = edges.iter().map(|e| vindex[&e.dst]).collect();
        let mut incident = vec![Vec::new(); vertices.len()];
        for (k, e) in edges.iter().enumerate() {
            incident[vindex[&e.src]].push(k);
            incident[vindex[&e.dst]].push(k);
        }
        Ok(Self {
            vertices,
            edges,
            vindex,
            src_idx,
            dst_idx,
            incident,
        })
    }

    /// Structural validation of raw parts without building the graph.
    pub fn check_parts(vertices: &[String], edges: &[EdgeRec]) -> ValidationReport {
        let vset: HashMap<&str, usize> = vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.as_str(), i))
            .collect();
        let mut report = ValidationReport::default();
        let mut seen = HashMap::new();
        for v in vertices {
            if seen.insert(v.as_str(), ()).is_some() {
                report.duplicate_ids.push(v.clone());
            }
        }
        for e in edges {
            if seen.insert(e.id.as_str(), ()).is_some() {
                report.duplicate_ids.push(e.id.clone());
            }
            if e.src == e.dst {
                report.loops.push(e.id.clone());
            }
            if !vset.contains_key(e.src.as_str()) || !vset.contains_key(e.dst.as_str()) {
                report.dangling.push(e.id.clone());
            }
        }
        if report.loops.is_empty() && report.dangling.is_empty() && report.duplicate_ids.is_empty()
        {
            let degsum: usize = vertices
                .iter()
                .map(|v| {
                    edges
                        .iter()
                        .filter(|e| e.src == *v || e.dst == *v)
                        .count()
                })
                .sum();
            report.handshake_ok = degsum == 2 * edges.len();
        }
        report.valid =
            report.loops.is_empty() && report.dangling.is_empty() && report.handshake_ok;
        report
    }

    /// Full validation: structural checks, handshake, and the reordering
    /// identity `sum_v sum_{e in E_v} a_e(v) = sum_e sum_{v=d(e)} a_e(v)`
    /// on 10 random assignments.
    pub fn validate(&self, rng: &mut impl Rng) -> ValidationReport {
        let mut report = Self::check_parts(&self.vertices, &self.edges);
        let mut worst = 0.0_f64;
        for _ in 0..10 {
            let a: Vec<(f64, f64)> = (0..self.edges.len())
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            // a_e(v): first component at src, second at dst
            let lhs: f64 = (0..self.vertices.len())
                .map(|v| {
                    self.incident[v]
                        .iter()
                        .map(|&k| if self.src_idx[k] == v { a[k].0 } else { a[k].1 })
                        .sum::<f64>()
                })
                .sum();
            let rhs: f64 = a.iter().map(|&(s, d)| s + d).sum();
            worst = worst.max((lhs - rhs).abs());
        }
        report.reorder_residual = worst;
        report.valid = report.valid && worst <= 1e-12;
        report
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[String] {
        &self.vertices
    }

    pub fn edges(&self) -> &[EdgeRec] {
        &self.edges
    }

    pub fn vertex_index(&self, id: &str) -> Result<usize, GraphError> {
        self.vindex
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownVertex(id.to_string()))
    }

    pub fn src(&self, e: usize) -> usize {
        self.src_idx[e]
    }

    pub fn dst(&self, e: usize) -> usize {
        self.dst_idx[e]
    }

    /// The vertex of `e` opposite to `v`.
    pub fn opposite(&self, e: usize, v: usize) -> usize {
        if self.src_idx[e] == v {
            self.dst_idx[e]
        } else {
            self.src_idx[e]
        }
    }

    /// Edges incident to vertex `v` (parallel edges appear once each).
    pub fn incident_edges(&self, v: usize) -> &[usize] {
        &self.incident[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.incident[v].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.incident.iter().map(Vec::len).collect()
    }

    /// `Some(r)` when every vertex has degree `r`.
    pub fn regularity(&self) -> Option<usize> {
        let d = self.degree(0);
        self.incident.iter().all(|inc| inc.len() == d).then_some(d)
    }

    pub fn is_connected(&self) -> bool {
        if self.vertices.is_empty() {
            return true;
        }
        let mut parent: Vec<usize> = (0..self.vertices.len()).collect();
        fn find(parent: &mut Vec<usize>, x: usize) -> usize {
            if parent[x] != x {
                let r = find(parent, parent[x]);
                parent[x] = r;
            }
            parent[x]
        }
        for k in 0..self.edges.len() {
            let a = find(&mut parent, self.src_idx[k]);
            let b = find(&mut parent, self.dst_idx[k]);
            parent[a] = b;
        }
        let root = find(&mut parent, 0);
        (0..self.vertices.len()).all(|v| find(&mut parent, v) == root)
    }

    /// `l2(V, deg)`. Errors on isolated vertices (weight would vanish).
    pub fn vertex_space(&self) -> Result<WeightedSpace, GraphError> {
        for (v, inc) in self.incident.iter().enumerate() {
            if inc.is_empty() {
                return Err(GraphError::IsolatedVertex(self.vertices[v].clone()));
            }
        }
        let weights = self.incident.iter().map(|inc| inc.len() as f64).collect();
        Ok(WeightedSpace::new(weights, format!("l2(V,deg) of {} vertices", self.vertex_count()))
            .expect("degrees positive"))
    }

    /// Energy form `h(f) = sum_e |f(d+e) - f(d-e)|^2` on `l2(V, deg)`:
    /// the combinatorial Laplacian as coefficient matrix.
    pub fn energy_form(&self) -> Result<GramForm, GraphError> {
        let space = self.vertex_space()?;
        let n = self.vertex_count();
        let mut m = DMatrix::<C64>::zeros(n, n);
        for k in 0..self.edges.len() {
            let (a, b) = (self.src_idx[k], self.dst_idx[k]);
            m[(a, a)] += C64::new(1.0, 0.0);
            m[(b, b)] += C64::new(1.0, 0.0);
            m[(a, b)] -= C64::new(1.0, 0.0);
            m[(b, a)] -= C64::new(1.0, 0.0);
        }
        Ok(GramForm::new(space, m).expect("combinatorial Laplacian is Hermitian PSD"))
    }

    /// Normalised Laplacian `(Df)(v) = (1/deg v) sum_{e in E_v} (f(v) - f(v_e))`,
    /// self-adjoint on `l2(V, deg)` with spectrum in `[0, 2]`.
    pub fn normalized_laplacian(&self) -> Result<LinOp, GraphError> {
        Ok(self.energy_form()?.representative())
    }

    /// Ascending spectrum of the normalised Laplacian.
    pub fn spectrum(&self) -> Result<Vec<f64>, GraphError> {
        Ok(self
            .normalized_laplacian()?
            .eigh()
            .expect("normalised Laplacian is self-adjoint")
            .eigenvalues)
    }

    /// Subdivision graph `SG`: one new vertex per edge, vertex set ordered
    /// `V` then `E`; edge `(v, e)` is oriented `v -> e` when `v` is the
    /// initial vertex of `e`, else `e -> v`.
    pub fn subdivision(&self) -> Graph {
        let mut vertices = self.vertices.clone();
        vertices.extend(self.edges.iter().map(|e| e.id.clone()));
        let mut edges = Vec::with_capacity(2 * self.edges.len());
        for e in &self.edges {
            edges.push(EdgeRec::new(format!("{}:{}", e.src, e.id), e.src.clone(), e.id.clone()));
            edges.push(EdgeRec::new(format!("{}:{}", e.dst, e.id), e.id.clone(), e.dst.clone()));
        }
        Graph::new(vertices, edges).expect("subdivision of a valid graph is valid")
    }

    /// Line graph `LG`: vertices are the edges of `G`; each shared endpoint
    /// of two distinct edges contributes one adjacency (two parallel edges
    /// of `G` therefore yield a double edge in `LG`).
    pub fn line_graph(&self) -> Graph {
        let vertices: Vec<String> = self.edges.iter().map(|e| e.id.clone()).collect();
        let mut edges = Vec::new();
        for i in 0..self.edges.len() {
            for j in (i + 1)..self.edges.len() {
                let shared = [self.src_idx[i], self.dst_idx[i]]
                    .iter()
                    .filter(|&&v| v == self.src_idx[j] || v == self.dst_idx[j])
                    .count();
                for c in 0..shared {
                    let id = if c == 0 {
                        format!("{}~{}", self.edges[i].id, self.edges[j].id)
                    } else {
                        format!("{}~{}#{}", self.edges[i].id, self.edges[j].id, c + 1)
                    };
                    edges.push(EdgeRec::new(id, self.edges[i].id.clone(), self.edges[j].id.clone()));
                }
            }
        }
        Graph::new(vertices, edges).expect("line graph of a valid loop-free graph is valid")
    }

    /// Star components `G_v`: for each vertex the star with centre `v` and
    /// one leaf per incident edge (leaf ids are the edge ids, shared across
    /// stars so that gluing along them reproduces the subdivision graph).
    /// The boundary of `G_v` is its leaf set.
    pub fn star_components(&self) -> Vec<StarComponent> {
        (0..self.vertices.len())
            .map(|v| {
                let center = self.vertices[v].clone();
                let mut vertices = vec![center.clone()];
                let mut edges = Vec::new();
                let mut boundary = Vec::new();
                for &k in &self.incident[v] {
                    let leaf = self.edges[k].id.clone();
                    vertices.push(leaf.clone());
                    // orientation matches the subdivision convention
                    if self.src_idx[k] == v {
                        edges.push(EdgeRec::new(format!("{center}:{leaf}"), center.clone(), leaf.clone()));
                    } else {
                        edges.push(EdgeRec::new(format!("{center}:{leaf}"), leaf.clone(), center.clone()));
                    }
                    boundary.push(leaf);
                }
                StarComponent {
                    center,
                    graph: Graph::new(vertices, edges).expect("star is valid"),
                    boundary,
                }
            })
            .collect()
    }
}

/// One star of the star decomposition, with its boundary (the leaves).
#[derive(Clone, Debug)]
pub struct StarComponent {
    pub center: String,
    pub graph: Graph,
    pub boundary: Vec<String>,
}

/// Glue a family of graphs along shared vertex ids (used to re-assemble the
/// subdivision graph from star components).
pub fn glue(parts: &[&Graph]) -> Result<Graph, GraphError> {
    let mut vertices: Vec<String> = Vec::new();
    let mut seen = HashMap::new();
    let mut edges = Vec::new();
    for g in parts {
        for v in g.vertices() {
            if seen.insert(v.clone(), ()).is_none() {
                vertices.push(v.clone());
            }
        }
        edges.extend(g.edges().iter().cloned());
    }
    Graph::new(vertices, edges)
}
