//! JSON schemas and CSV writers for the batch interface. Complex scalars
//! serialize as `[re, im]` pairs, matrices row-major.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abvp::{Abvp, AbvpError};
use crate::graph::{EdgeRec, Graph, GraphError};
use crate::qgraph::{QgError, QuantumGraph, SpectrumReport, VertexSpaces};
use crate::space::{GramForm, LinOp, SpaceError, WeightedSpace, C64};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("field '{field}': {message}")]
    BadField { field: String, message: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Abvp(#[from] AbvpError),
    #[error(transparent)]
    Qg(#[from] QgError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

fn bad(field: &str, message: impl Into<String>) -> IoError {
    IoError::BadField {
        field: field.into(),
        message: message.into(),
    }
}

pub type ComplexPair = [f64; 2];

pub fn matrix_to_rows(m: &DMatrix<C64>) -> Vec<Vec<ComplexPair>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

pub fn rows_to_matrix(rows: &[Vec<ComplexPair>], field: &str) -> Result<DMatrix<C64>, IoError> {
    let nrows = rows.len();
    let ncols = rows.first().map(Vec::len).unwrap_or(0);
    for r in rows {
        if r.len() != ncols {
            return Err(bad(field, "ragged matrix rows"));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| {
        C64::new(rows[i][j][0], rows[i][j][1])
    }))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeJson {
    pub id: String,
    pub src: String,
    pub dst: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GraphJson {
    pub vertices: Vec<String>,
    pub edges: Vec<EdgeJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Vec<String>>,
}

impl GraphJson {
    pub fn from_graph(g: &Graph, boundary: Option<&[String]>) -> Self {
        Self {
            vertices: g.vertices().to_vec(),
            edges: g
                .edges()
                .iter()
                .map(|e| EdgeJson {
                    id: e.id.clone(),
                    src: e.src.clone(),
                    dst: e.dst.clone(),
                })
                .collect(),
            boundary: boundary.map(<[String]>::to_vec),
        }
    }

    pub fn to_graph(&self) -> Result<Graph, IoError> {
        let edges: Vec<EdgeRec> = self
            .edges
            .iter()
            .map(|e| EdgeRec::new(e.id.clone(), e.src.clone(), e.dst.clone()))
            .collect();
        Ok(Graph::new(self.vertices.clone(), edges)?)
    }
}

pub fn parse_graph(text: &str) -> Result<(Graph, Option<Vec<String>>), IoError> {
    let json: GraphJson = serde_json::from_str(text)?;
    let g = json.to_graph()?;
    if let Some(bd) = &json.boundary {
        for v in bd {
            g.vertex_index(v)
                .map_err(|_| bad("boundary", format!("unknown vertex '{v}'")))?;
        }
    }
    Ok((g, json.boundary))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QgEdgeJson {
    pub id: String,
    pub length: f64,
    pub fibre_dim: usize,
    /// row-major `fibre_dim^2` complex entries.
    #[serde(rename = "K")]
    pub k: Vec<ComplexPair>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VertexSpacesJson {
    Tag(String),
    Explicit(std::collections::BTreeMap<String, Vec<Vec<ComplexPair>>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantumGraphJson {
    pub graph: GraphJson,
    pub edges: Vec<QgEdgeJson>,
    pub vertex_spaces: VertexSpacesJson,
}

impl QuantumGraphJson {
    pub fn from_quantum_graph(qg: &QuantumGraph) -> Self {
        let edges = qg
            .graph
            .edges()
            .iter()
            .enumerate()
            .map(|(e, rec)| {
                let k = &qg.fibres[e];
                QgEdgeJson {
                    id: rec.id.clone(),
                    length: qg.lengths[e],
                    fibre_dim: k.nrows(),
                    k: (0..k.nrows())
                        .flat_map(|i| (0..k.ncols()).map(move |j| (i, j)))
                        .map(|(i, j)| [k[(i, j)].re, k[(i, j)].im])
                        .collect(),
                }
            })
            .collect();
        let vertex_spaces = match &qg.vertex_spaces {
            VertexSpaces::Standard => VertexSpacesJson::Tag("standard".into()),
            VertexSpaces::Explicit(bases) => VertexSpacesJson::Explicit(
                qg.graph
                    .vertices()
                    .iter()
                    .zip(bases)
                    .map(|(v, b)| {
                        let cols: Vec<Vec<ComplexPair>> = (0..b.ncols())
                            .map(|c| (0..b.nrows()).map(|r| [b[(r, c)].re, b[(r, c)].im]).collect())
                            .collect();
                        (v.clone(), cols)
                    })
                    .collect(),
            ),
        };
        Self {
            graph: GraphJson::from_graph(&qg.graph, None),
            edges,
            vertex_spaces,
        }
    }

    pub fn to_quantum_graph(&self) -> Result<QuantumGraph, IoError> {
        let graph = self.graph.to_graph()?;
        if self.edges.len() != graph.edge_count() {
            return Err(bad("edges", "edge list does not match the graph"));
        }
        let mut lengths = vec![0.0; graph.edge_count()];
        let mut fibres = vec![DMatrix::<C64>::zeros(0, 0); graph.edge_count()];
        for e in &self.edges {
            let idx = graph
                .edges()
                .iter()
                .position(|rec| rec.id == e.id)
                .ok_or_else(|| bad("edges.id", format!("unknown edge '{}'", e.id)))?;
            if e.k.len() != e.fibre_dim * e.fibre_dim {
                return Err(bad(
                    "edges.K",
                    format!("edge '{}' needs {} entries", e.id, e.fibre_dim * e.fibre_dim),
                ));
            }
            lengths[idx] = e.length;
            fibres[idx] = DMatrix::from_fn(e.fibre_dim, e.fibre_dim, |i, j| {
                let p = e.k[i * e.fibre_dim + j];
                C64::new(p[0], p[1])
            });
        }
        let vertex_spaces = match &self.vertex_spaces {
            VertexSpacesJson::Tag(t) if t == "standard" => VertexSpaces::Standard,
            VertexSpacesJson::Tag(t) => {
                return Err(bad("vertex_spaces", format!("unknown tag '{t}'")))
            }
            VertexSpacesJson::Explicit(map) => {
                let mut bases = Vec::with_capacity(graph.vertex_count());
                for v in graph.vertices() {
                    let cols = map
                        .get(v)
                        .ok_or_else(|| bad("vertex_spaces", format!("missing vertex '{v}'")))?;
                    let nrows = cols.first().map(Vec::len).unwrap_or(0);
                    let mut b = DMatrix::<C64>::zeros(nrows, cols.len());
                    for (c, col) in cols.iter().enumerate() {
                        if col.len() != nrows {
                            return Err(bad("vertex_spaces", "ragged basis columns"));
                        }
                        for (r, p) in col.iter().enumerate() {
                            b[(r, c)] = C64::new(p[0], p[1]);
                        }
                    }
                    bases.push(b);
                }
                VertexSpaces::Explicit(bases)
            }
        };
        Ok(QuantumGraph::new(graph, lengths, fibres, vertex_spaces)?)
    }
}

pub fn parse_quantum_graph(text: &str) -> Result<QuantumGraph, IoError> {
    let json: QuantumGraphJson = serde_json::from_str(text)?;
    json.to_quantum_graph()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AbvpJson {
    pub space_weights: Vec<f64>,
    pub boundary_weights: Vec<f64>,
    pub gamma: Vec<Vec<ComplexPair>>,
    pub form: Vec<Vec<ComplexPair>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<Vec<usize>>,
}

impl AbvpJson {
    pub fn from_abvp(pi: &Abvp) -> Self {
        Self {
            space_weights: pi.space().weights().to_vec(),
            boundary_weights: pi.boundary().weights().to_vec(),
            gamma: matrix_to_rows(pi.gamma().coeffs()),
            form: matrix_to_rows(pi.form().coeffs()),
            split: pi.split().map(<[usize]>::to_vec),
        }
    }

    pub fn to_abvp(&self) -> Result<Abvp, IoError> {
        let space = if self.space_weights.is_empty() {
            WeightedSpace::unweighted(0, "H")
        } else {
            WeightedSpace::new(self.space_weights.clone(), "H")?
        };
        let boundary = if self.boundary_weights.is_empty() {
            WeightedSpace::unweighted(0, "G")
        } else {
            WeightedSpace::new(self.boundary_weights.clone(), "G")?
        };
        let gamma = LinOp::new(
            space.clone(),
            boundary.clone(),
            rows_to_matrix(&self.gamma, "gamma")?,
        )?;
        let form = GramForm::new(space.clone(), rows_to_matrix(&self.form, "form")?)?;
        Ok(Abvp::new(space, boundary, gamma, form, self.split.clone())?)
    }
}

/// Spectrum CSV: header `lambda,multiplicity,method`, one row per spectral
/// point (embedded points included).
pub fn spectrum_csv(report: &SpectrumReport) -> String {
    let mut out = String::from("lambda,multiplicity,method\n");
    for p in report.all_points() {
        out.push_str(&format!(
            "{},{},{}\n",
            p.lambda,
            p.multiplicity,
            report.method.as_str()
        ));
    }
    out
}

/// Dispersion CSV: header `lambda,branch_index,eigenvalue_of_dtn`, with
/// `(window / grid_step) + 1` rows per branch; rows inside unresolved
/// windows carry `nan`.
pub fn dispersion_csv(
    qg: &QuantumGraph,
    window: (f64, f64),
    grid_step: f64,
) -> Result<String, IoError> {
    let (lo, hi) = window;
    let steps = ((hi - lo) / grid_step).round() as usize;
    let dim = qg.boundary_space().dim();
    let mut out = String::from("lambda,branch_index,eigenvalue_of_dtn\n");
    for k in 0..=steps {
        let lambda = lo + k as f64 * grid_step;
        let branches: Option<Vec<f64>> = qg
            .dtn(C64::new(lambda, 0.0))
            .ok()
            .and_then(|lam| lam.eigh().ok())
            .map(|e| e.eigenvalues);
        for b in 0..dim {
            match &branches {
                Some(eigs) => out.push_str(&format!("{lambda},{b},{}\n", eigs[b])),
                None => out.push_str(&format!("{lambda},{b},nan\n")),
            }
        }
    }
    Ok(out)
}

pub fn spectrum_report_json(report: &SpectrumReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

/// Vertex-coupling blueprint schema: components by reference to graph ids,
/// traces as coefficient arrays.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VertexBlueprintJson {
    pub graph: GraphJson,
    /// per-vertex problems, in graph vertex order.
    pub vertex_abvps: Vec<AbvpJson>,
    /// per-edge boundary space weights, in graph edge order.
    pub edge_space_weights: Vec<Vec<f64>>,
    /// traces keyed by `(vertex id, edge id)`.
    pub traces: Vec<TraceJson>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceJson {
    pub vertex: String,
    pub edge: String,
    pub coeffs: Vec<Vec<ComplexPair>>,
}

impl VertexBlueprintJson {
    pub fn from_blueprint(bp: &crate::coupling::VertexCouplingBlueprint) -> Self {
        let g = &bp.graph;
        let mut traces = Vec::new();
        for v in 0..g.vertex_count() {
            for &e in g.incident_edges(v) {
                traces.push(TraceJson {
                    vertex: g.vertices()[v].clone(),
                    edge: g.edges()[e].id.clone(),
                    coeffs: matrix_to_rows(bp.trace(v, e).coeffs()),
                });
            }
        }
        Self {
            graph: GraphJson::from_graph(g, None),
            vertex_abvps: bp.vertex_abvps.iter().map(AbvpJson::from_abvp).collect(),
            edge_space_weights: bp
                .edge_spaces
                .iter()
                .map(|s| s.weights().to_vec())
                .collect(),
            traces,
        }
    }

    pub fn to_blueprint(&self) -> Result<crate::coupling::VertexCouplingBlueprint, IoError> {
        let graph = self.graph.to_graph()?;
        if self.vertex_abvps.len() != graph.vertex_count()
            || self.edge_space_weights.len() != graph.edge_count()
        {
            return Err(bad("vertex_abvps", "component counts do not match the graph"));
        }
        let vertex_abvps: Vec<Abvp> = self
            .vertex_abvps
            .iter()
            .map(AbvpJson::to_abvp)
            .collect::<Result<_, _>>()?;
        let edge_spaces: Vec<WeightedSpace> = self
            .edge_space_weights
            .iter()
            .enumerate()
            .map(|(e, w)| {
                if w.is_empty() {
                    Ok(WeightedSpace::unweighted(0, format!("G_e {e}")))
                } else {
                    WeightedSpace::new(w.clone(), format!("G_e {e}")).map_err(IoError::from)
                }
            })
            .collect::<Result<_, _>>()?;
        let mut traces = std::collections::HashMap::new();
        for t in &self.traces {
            let v = graph.vertex_index(&t.vertex)?;
            let e = graph
                .edges()
                .iter()
                .position(|rec| rec.id == t.edge)
                .ok_or_else(|| bad("traces.edge", format!("unknown edge '{}'", t.edge)))?;
            let coeffs = rows_to_matrix(&t.coeffs, "traces.coeffs")?;
            let op = LinOp::new(
                vertex_abvps[v].boundary().clone(),
                edge_spaces[e].clone(),
                coeffs,
            )?;
            traces.insert((v, e), op);
        }
        Ok(crate::coupling::VertexCouplingBlueprint {
            graph,
            vertex_abvps,
            edge_spaces,
            traces,
        })
    }
}

/// Closeness sweep CSV: `epsilon,delta_measured,delta_bound`.
pub fn closeness_sweep_csv(
    sweep: &[(f64, crate::quasiiso::CoupledClosenessReport)],
) -> String {
    let mut out = String::from("epsilon,delta_measured,delta_bound\n");
    for (eps, report) in sweep {
        out.push_str(&format!("{eps},{},{}\n", report.delta_proven, report.bound));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abvp::graph_abvp;
    use crate::fixtures;

    #[test]
    fn graph_json_roundtrip() {
        let g = fixtures::petersen();
        let json = GraphJson::from_graph(&g, Some(&["v0".to_string()]));
        let text = serde_json::to_string(&json).unwrap();
        let (g2, bd) = parse_graph(&text).unwrap();
        assert_eq!(g2.vertex_count(), 10);
        assert_eq!(g2.edge_count(), 15);
        assert_eq!(bd.unwrap(), vec!["v0".to_string()]);
    }

    #[test]
    fn malformed_graph_is_rejected() {
        let text = r#"{"vertices":["a"],"edges":[{"id":"e","src":"a","dst":"zz"}]}"#;
        assert!(parse_graph(text).is_err());
        let text2 = r#"{"vertices":["a"],"edges":[{"id":"e","src":"a"}]}"#;
        assert!(parse_graph(text2).is_err());
    }

    #[test]
    fn quantum_graph_json_roundtrip() {
        let qg = QuantumGraph::scalar(fixtures::cycle(3), vec![1.0, 0.8, 1.2]).unwrap();
        let json = QuantumGraphJson::from_quantum_graph(&qg);
        let text = serde_json::to_string(&json).unwrap();
        let qg2 = parse_quantum_graph(&text).unwrap();
        assert_eq!(qg2.graph.edge_count(), 3);
        assert!((qg2.lengths[1] - 0.8).abs() < 1e-15);
        let z = C64::new(-1.0, 0.0);
        assert!(qg.dtn(z).unwrap().max_abs_diff(&qg2.dtn(z).unwrap()) < 1e-14);
    }

    #[test]
    fn abvp_json_roundtrip() {
        let pi = graph_abvp(&fixtures::path_amb(), &["a", "b"]).unwrap();
        let json = AbvpJson::from_abvp(&pi);
        let text = serde_json::to_string(&json).unwrap();
        let parsed: AbvpJson = serde_json::from_str(&text).unwrap();
        let pi2 = parsed.to_abvp().unwrap();
        assert!(pi2.neumann().max_abs_diff(pi.neumann()) < 1e-14);
        assert_eq!(pi2.split(), pi.split());
    }

    #[test]
    fn vertex_blueprint_json_roundtrip() {
        let (bp, _) = crate::coupling::star_coupling_blueprint(&fixtures::cycle(3)).unwrap();
        let json = VertexBlueprintJson::from_blueprint(&bp);
        let text = serde_json::to_string(&json).unwrap();
        let parsed: VertexBlueprintJson = serde_json::from_str(&text).unwrap();
        let bp2 = parsed.to_blueprint().unwrap();
        bp2.validate().unwrap();
        let z = C64::new(-0.5, 0.0);
        let a = crate::coupling::coupled_dtn(&bp, z).unwrap();
        let b = crate::coupling::coupled_dtn(&bp2, z).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-13);
    }

    #[test]
    fn sweep_csv_schema() {
        let sweep = crate::quasiiso::closeness_sweep(&fixtures::cycle(3), &[1e-2]).unwrap();
        let csv = closeness_sweep_csv(&sweep);
        assert!(csv.starts_with("epsilon,delta_measured,delta_bound\n"));
        assert_eq!(csv.trim_end().lines().count(), 2);
    }

    #[test]
    fn csv_schemas() {
        let qg = QuantumGraph::scalar(fixtures::k2(), vec![1.0]).unwrap();
        let report = crate::qgraph::neumann_spectrum(&qg, (-0.5, 12.0), 0.05, 1e-10).unwrap();
        let csv = spectrum_csv(&report);
        assert!(csv.starts_with("lambda,multiplicity,method\n"));
        assert!(csv.contains("secular"));
        let disp = dispersion_csv(&qg, (0.0, 1.0), 0.25).unwrap();
        let lines: Vec<&str> = disp.trim_end().lines().collect();
        // header + 5 grid points x 2 branches
        assert_eq!(lines.len(), 1 + 5 * 2);
        assert_eq!(lines[0], "lambda,branch_index,eigenvalue_of_dtn");
    }
}
