//! Named graphs and random fixtures used by the verification suites.

use rand::Rng;

use crate::graph::{EdgeRec, Graph};

pub fn k2() -> Graph {
    Graph::new(
        vec!["a".into(), "b".into()],
        vec![EdgeRec::new("e", "a", "b")],
    )
    .unwrap()
}

/// Path on `n` vertices `v0 - v1 - ... - v(n-1)`.
pub fn path(n: usize) -> Graph {
    assert!(n >= 2);
    let vertices: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let edges = (0..n - 1)
        .map(|i| EdgeRec::new(format!("e{i}"), format!("v{i}"), format!("v{}", i + 1)))
        .collect();
    Graph::new(vertices, edges).unwrap()
}

/// The path `a - m - b` used by several fixtures.
pub fn path_amb() -> Graph {
    Graph::new(
        vec!["a".into(), "m".into(), "b".into()],
        vec![EdgeRec::new("e1", "a", "m"), EdgeRec::new("e2", "m", "b")],
    )
    .unwrap()
}

pub fn cycle(n: usize) -> Graph {
    assert!(n >= 2);
    let vertices: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let edges = (0..n)
        .map(|i| EdgeRec::new(format!("e{i}"), format!("v{i}"), format!("v{}", (i + 1) % n)))
        .collect();
    Graph::new(vertices, edges).unwrap()
}

pub fn complete(n: usize) -> Graph {
    let vertices: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            edges.push(EdgeRec::new(format!("e{i}_{j}"), format!("v{i}"), format!("v{j}")));
        }
    }
    Graph::new(vertices, edges).unwrap()
}

/// Star with centre `c` and `d` leaves.
pub fn star(d: usize) -> Graph {
    let mut vertices = vec!["c".to_string()];
    vertices.extend((0..d).map(|i| format!("l{i}")));
    let edges = (0..d)
        .map(|i| EdgeRec::new(format!("e{i}"), "c".to_string(), format!("l{i}")))
        .collect();
    Graph::new(vertices, edges).unwrap()
}

pub fn petersen() -> Graph {
    let vertices: Vec<String> = (0..10).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    for i in 0..5 {
        edges.push(EdgeRec::new(
            format!("o{i}"),
            format!("v{i}"),
            format!("v{}", (i + 1) % 5),
        ));
        edges.push(EdgeRec::new(
            format!("s{i}"),
            format!("v{i}"),
            format!("v{}", i + 5),
        ));
        edges.push(EdgeRec::new(
            format!("i{i}"),
            format!("v{}", i + 5),
            format!("v{}", (i + 2) % 5 + 5),
        ));
    }
    Graph::new(vertices, edges).unwrap()
}

/// Random connected graph with `2..=max_v` vertices: a random attachment
/// tree plus `extra_factor * |V| / 2` additional random non-loop edges.
pub fn random_connected(rng: &mut impl Rng, max_v: usize, extra_factor: usize) -> Graph {
    let n = rng.gen_range(2..=max_v.max(2));
    let vertices: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    for i in 1..n {
        let j = rng.gen_range(0..i);
        edges.push(EdgeRec::new(format!("t{i}"), format!("v{j}"), format!("v{i}")));
    }
    let extra = extra_factor * n / 2;
    let mut added = 0;
    let mut attempt = 0;
    while added < extra && attempt < 10 * extra + 10 {
        attempt += 1;
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a == b {
            continue;
        }
        edges.push(EdgeRec::new(format!("x{added}"), format!("v{a}"), format!("v{b}")));
        added += 1;
    }
    Graph::new(vertices, edges).unwrap()
}

/// Random graph that may be disconnected but has no isolated vertices
/// removed; used by connectivity-oracle tests.
pub fn random_graph_maybe_disconnected(rng: &mut impl Rng, max_v: usize, salt: usize) -> Graph {
    let n = rng.gen_range(2..=max_v.max(2));
    let vertices: Vec<String> = (0..n).map(|i| format!("v{i}")).collect();
    let mut edges = Vec::new();
    let m = rng.gen_range(1..=(n + salt % 3 + 1));
    for k in 0..m {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        if a != b {
            edges.push(EdgeRec::new(format!("e{k}"), format!("v{a}"), format!("v{b}")));
        }
    }
    Graph::new(vertices, edges).unwrap()
}

/// Random nonempty boundary subset of the vertices (possibly all of them).
pub fn random_boundary(rng: &mut impl Rng, g: &Graph) -> Vec<String> {
    let n = g.vertex_count();
    loop {
        let picked: Vec<String> = g
            .vertices()
            .iter()
            .filter(|_| rng.gen_bool(0.4))
            .cloned()
            .collect();
        if !picked.is_empty() && picked.len() <= n {
            return picked;
        }
    }
}
