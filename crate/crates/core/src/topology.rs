//! Finite interaction graphs on which patches exchange population.
//!
//! Vertices are `0..n` and every edge is stored once, canonically as
//! `(min, max)`. The position of an edge in [`Graph::edges`] is its clock
//! index in the event stream, so edge order is part of the reproducibility
//! contract: generators emit edges sorted lexicographically.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// An undirected edge in canonical `(min, max)` form.
pub type Edge = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TopologyError {
    #[error("a ring needs at least 3 vertices, got {0}")]
    RingTooSmall(usize),
    #[error("a complete graph needs at least 2 vertices, got {0}")]
    CompleteTooSmall(usize),
    #[error("circulant degree {d} must be even (or equal to n - 1 = {max}) and at least 2")]
    CirculantOddDegree { d: usize, max: usize },
    #[error("circulant degree {d} must be below the vertex count {n}")]
    CirculantDegreeTooLarge { d: usize, n: usize },
    #[error("graph needs at least one vertex")]
    Empty,
    #[error("row {row}: vertex {vertex} out of range for {n} vertices")]
    VertexOutOfRange { row: usize, vertex: usize, n: usize },
    #[error("row {row}: self-loop at vertex {vertex}")]
    SelfLoop { row: usize, vertex: usize },
    #[error("row {row}: duplicate edge ({u}, {v})")]
    DuplicateEdge { row: usize, u: usize, v: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read edge list {path}: {msg}")]
    Io { path: String, msg: String },
}

/// Finite simple undirected graph of patches.
#[derive(Clone, PartialEq, Eq)]
pub struct Graph {
    n_vertices: usize,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("n_vertices", &self.n_vertices)
            .field("n_edges", &self.edges.len())
            .finish()
    }
}

impl Graph {
    /// Builds a graph from already-canonical, sorted, duplicate-free edges.
    fn from_canonical(n_vertices: usize, edges: Vec<Edge>) -> Self {
        let mut adjacency = vec![Vec::new(); n_vertices];
        for &(u, v) in &edges {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Graph {
            n_vertices,
            edges,
            adjacency,
        }
    }

    /// A graph with `n` isolated vertices (no edges).
    pub fn empty(n: usize) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        Ok(Self::from_canonical(n, Vec::new()))
    }

    pub fn n_vertices(&self) -> usize {
        self.n_vertices
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Edges in clock order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, index: usize) -> Edge {
        self.edges[index]
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adjacency[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n_vertices && self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Clock index of edge `{u, v}`, if present.
    pub fn edge_index(&self, u: usize, v: usize) -> Option<usize> {
        let key = (u.min(v), u.max(v));
        self.edges.binary_search(&key).ok()
    }

    /// `Some(d)` when every vertex has degree `d`.
    pub fn regular_degree(&self) -> Option<usize> {
        let d = self.degree(0);
        self.adjacency.iter().all(|a| a.len() == d).then_some(d)
    }
}

/// Cycle on `n` vertices: `i ~ i ± 1 (mod n)`.
pub fn build_ring(n: usize) -> Result<Graph, TopologyError> {
    if n < 3 {
        return Err(TopologyError::RingTooSmall(n));
    }
    build_circulant(n, 2)
}

/// All `n (n - 1) / 2` pairs adjacent.
pub fn build_complete(n: usize) -> Result<Graph, TopologyError> {
    if n < 2 {
        return Err(TopologyError::CompleteTooSmall(n));
    }
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in u + 1..n {
            edges.push((u, v));
        }
    }
    Ok(Graph::from_canonical(n, edges))
}

/// Circulant graph where each vertex sees its `d / 2` nearest neighbors on
/// either side. `d = n - 1` gives the complete graph regardless of parity.
pub fn build_circulant(n: usize, d: usize) -> Result<Graph, TopologyError> {
    if n == 0 {
        return Err(TopologyError::Empty);
    }
    if d >= n {
        return Err(TopologyError::CirculantDegreeTooLarge { d, n });
    }
    if d + 1 == n {
        return build_complete(n);
    }
    if d % 2 == 1 || d < 2 {
        return Err(TopologyError::CirculantOddDegree { d, max: n - 1 });
    }
    let half = d / 2;
    let mut set = BTreeSet::new();
    for i in 0..n {
        for k in 1..=half {
            let j = (i + k) % n;
            set.insert((i.min(j), i.max(j)));
        }
    }
    Ok(Graph::from_canonical(n, set.into_iter().collect()))
}

/// Validates explicit `(u, v)` rows. Errors carry the offending row index.
pub fn load_edge_list(rows: &[(usize, usize)], n_vertices: usize) -> Result<Graph, TopologyError> {
    if n_vertices == 0 {
        return Err(TopologyError::Empty);
    }
    let mut set = BTreeSet::new();
    for (row, &(u, v)) in rows.iter().enumerate() {
        for vertex in [u, v] {
            if vertex >= n_vertices {
                return Err(TopologyError::VertexOutOfRange {
                    row,
                    vertex,
                    n: n_vertices,
                });
            }
        }
        if u == v {
            return Err(TopologyError::SelfLoop { row, vertex: u });
        }
        if !set.insert((u.min(v), u.max(v))) {
            return Err(TopologyError::DuplicateEdge { row, u, v });
        }
    }
    Ok(Graph::from_canonical(n_vertices, set.into_iter().collect()))
}

/// Parses the plain-text edge-list format:
///
/// ```text
/// # comment
/// N 4
/// 0 1
/// 1 2
/// ```
///
/// The first non-comment line declares the vertex count; every later
/// non-empty, non-comment line is one `u v` pair. Row indices in errors
/// count edge rows from 0.
pub fn parse_edge_list(text: &str) -> Result<Graph, TopologyError> {
    let mut n_vertices = None;
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parse = |s: Option<&str>| -> Result<usize, TopologyError> {
            let s = s.ok_or_else(|| TopologyError::Parse {
                line: line_no,
                msg: "expected two fields".into(),
            })?;
            s.parse().map_err(|_| TopologyError::Parse {
                line: line_no,
                msg: format!("'{s}' is not a vertex index"),
            })
        };
        match n_vertices {
            None => {
                if fields.next() != Some("N") {
                    return Err(TopologyError::Parse {
                        line: line_no,
                        msg: "first line must be 'N <n_vertices>'".into(),
                    });
                }
                n_vertices = Some(parse(fields.next())?);
            }
            Some(_) => {
                let u = parse(fields.next())?;
                let v = parse(fields.next())?;
                rows.push((u, v));
            }
        }
        if fields.next().is_some() {
            return Err(TopologyError::Parse {
                line: line_no,
                msg: "trailing fields".into(),
            });
        }
    }
    let n = n_vertices.ok_or(TopologyError::Parse {
        line: 0,
        msg: "missing 'N <n_vertices>' header".into(),
    })?;
    load_edge_list(&rows, n)
}

pub fn read_edge_list(path: &Path) -> Result<Graph, TopologyError> {
    let text = std::fs::read_to_string(path).map_err(|e| TopologyError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })?;
    parse_edge_list(&text)
}
