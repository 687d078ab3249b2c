//! Directed ground-truth networks.
//!
//! Nodes are 0-based. An edge `(source, target)` is stored with the
//! adjacency convention `adj[[source, target]] = 1`, so row `j` lists the
//! neurons that `j` projects to. Figures that label neurons from 1 are offset
//! by one from the indices used here and in every file this crate writes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Edge = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct DirectedGraph {
    n_nodes: usize,
    edges: BTreeSet<Edge>,
    /// Synaptic strength multipliers; edges absent from the map have weight 1.
    edge_weights: BTreeMap<Edge, f64>,
}

impl DirectedGraph {
    pub fn empty(n_nodes: usize) -> Self {
        DirectedGraph {
            n_nodes,
            edges: BTreeSet::new(),
            edge_weights: BTreeMap::new(),
        }
    }

    /// Builds a graph from explicit edges, rejecting self-loops, duplicates and
    /// out-of-range indices.
    pub fn from_edges(n_nodes: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Self> {
        let mut g = DirectedGraph::empty(n_nodes);
        for (s, t) in edges {
            g.insert(s, t)?;
        }
        Ok(g)
    }

    pub fn insert(&mut self, source: usize, target: usize) -> Result<()> {
        if source >= self.n_nodes || target >= self.n_nodes {
            return Err(Error::Data(format!(
                "edge ({source}, {target}) outside a {}-node graph",
                self.n_nodes
            )));
        }
        if source == target {
            return Err(Error::Data(format!("self-loop ({source}, {source})")));
        }
        if !self.edges.insert((source, target)) {
            return Err(Error::Data(format!("duplicate edge ({source}, {target})")));
        }
        Ok(())
    }

    pub fn set_weight(&mut self, edge: Edge, weight: f64) -> Result<()> {
        if !self.edges.contains(&edge) {
            return Err(Error::Data(format!("no edge {edge:?} to weight")));
        }
        if !(weight.is_finite() && weight >= 0.0) {
            return Err(Error::Parameter(format!(
                "edge weight {weight} must be finite and >= 0"
            )));
        }
        self.edge_weights.insert(edge, weight);
        Ok(())
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().copied()
    }

    pub fn contains(&self, source: usize, target: usize) -> bool {
        self.edges.contains(&(source, target))
    }

    pub fn weight(&self, edge: Edge) -> f64 {
        self.edge_weights.get(&edge).copied().unwrap_or(1.0)
    }

    /// Number of ordered non-self pairs, the candidate universe for inference.
    pub fn universe_size(&self) -> usize {
        self.n_nodes * self.n_nodes.saturating_sub(1)
    }

    /// Each ordered non-self pair is drawn independently with probability `p_connect`.
    pub fn generate_random(n_nodes: usize, p_connect: f64, seed: u64) -> Result<Self> {
        if n_nodes < 2 {
            return Err(Error::Parameter(format!(
                "n_nodes = {n_nodes}, need at least 2"
            )));
        }
        if !(0.0..=1.0).contains(&p_connect) {
            return Err(Error::Parameter(format!(
                "p_connect = {p_connect} is not a probability"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = DirectedGraph::empty(n_nodes);
        for s in 0..n_nodes {
            for t in 0..n_nodes {
                if s == t {
                    continue;
                }
                // random() lies in [0, 1): p = 0 never fires, p = 1 always does
                if rng.random::<f64>() < p_connect {
                    g.edges.insert((s, t));
                }
            }
        }
        Ok(g)
    }

    pub fn to_adjacency(&self) -> Array2<u8> {
        let mut adj = Array2::zeros((self.n_nodes, self.n_nodes));
        for &(s, t) in &self.edges {
            adj[[s, t]] = 1;
        }
        adj
    }

    pub fn from_adjacency(adj: &Array2<u8>) -> Result<Self> {
        let (rows, cols) = adj.dim();
        if rows != cols {
            return Err(Error::Data(format!(
                "adjacency is {rows}x{cols}, not square"
            )));
        }
        let mut g = DirectedGraph::empty(rows);
        for ((s, t), &v) in adj.indexed_iter() {
            match v {
                0 => {}
                1 => g.insert(s, t)?,
                other => {
                    return Err(Error::Data(format!("adjacency entry ({s}, {t}) = {other}")));
                }
            }
        }
        Ok(g)
    }

    /// Unordered pairs `{i, j}` connected in both directions.
    pub fn count_bidirectional(&self) -> usize {
        self.edges
            .iter()
            .filter(|&&(s, t)| s < t && self.edges.contains(&(t, s)))
            .count()
    }

    pub fn to_json(&self) -> String {
        let doc = GraphDoc {
            n_nodes: self.n_nodes,
            edges: self.edges.iter().map(|&(s, t)| [s, t]).collect(),
            edge_weights: self
                .edge_weights
                .iter()
                .map(|(&(s, t), &w)| (s, t, w))
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, GraphParseError> {
        let doc: GraphDoc = serde_json::from_str(text).map_err(GraphParseError::Json)?;
        let mut g = DirectedGraph::from_edges(doc.n_nodes, doc.edges.iter().map(|e| (e[0], e[1])))
            .map_err(GraphParseError::Invalid)?;
        for (s, t, w) in doc.edge_weights {
            g.set_weight((s, t), w).map_err(GraphParseError::Invalid)?;
        }
        Ok(g)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DirectedGraph::from_json(&text).map_err(|e| match e {
            GraphParseError::Json(source) => Error::Json {
                path: path.to_owned(),
                source,
            },
            GraphParseError::Invalid(err) => Error::format(path, 0, err.to_string()),
        })
    }

    /// Dense 0/1 matrix, one row per source, no header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let adj = self.to_adjacency();
        let mut out = String::new();
        for row in adj.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<Vec<u8>> = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<u8>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::format(path, idx + 1, e.to_string()))?;
            if let Some(first) = rows.first() {
                if first.len() != row.len() {
                    return Err(Error::format(path, idx + 1, "ragged adjacency row"));
                }
            }
            rows.push(row);
        }
        let n = rows.len();
        let flat: Vec<u8> = rows.into_iter().flatten().collect();
        let adj = Array2::from_shape_vec((n, flat.len() / n.max(1)), flat)
            .map_err(|e| Error::format(path, 0, e.to_string()))?;
        DirectedGraph::from_adjacency(&adj).map_err(|e| Error::format(path, 0, e.to_string()))
    }
}

#[derive(Debug)]
pub enum GraphParseError {
    Json(serde_json::Error),
    Invalid(Error),
}

impl std::fmt::Display for GraphParseError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphParseError::Json(e) => write!(f, "{e}"),
            GraphParseError::Invalid(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GraphDoc {
    n_nodes: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    edge_weights: Vec<(usize, usize, f64)>,
}
