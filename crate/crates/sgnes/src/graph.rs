//! Communication and transport graphs: incidence/Laplacian algebra and the
//! neighbor bookkeeping used by every distributed update.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("graph is disconnected")]
    Disconnected,
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge between nodes {0} and {1}")]
    DuplicateEdge(usize, usize),
    #[error("node index {0} out of range 1..={1}")]
    NodeOutOfRange(usize, usize),
    #[error("dimension mismatch: expected vector length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("road {0} connects a market to itself")]
    SelfRoad(usize),
    #[error("road length must be positive, road {0} has length {1}")]
    NonPositiveLength(usize, f64),
}

/// Undirected connected communication graph. Edges carry an orientation so
/// that the per-edge dual variables are reproducible: edge `e = (j, i)` is
/// stored as ordered `(tail j, head i)` and occupies column `e` of the
/// incidence matrix with `+1` at the tail row and `-1` at the head row.
/// Edges keep insertion order; the edge index is the incidence column index.
#[derive(Debug, Clone)]
pub struct CommGraph {
    node_count: usize,
    /// Ordered edges, 0-based `(tail, head)`.
    edges: Vec<(usize, usize)>,
    /// All neighbors of each node in the underlying undirected graph.
    neighbors: Vec<Vec<usize>>,
    /// In-neighbors: `j` such that edge `(j, i)` exists.
    in_neighbors: Vec<Vec<usize>>,
    /// Out-neighbors: `j` such that edge `(i, j)` exists.
    out_neighbors: Vec<Vec<usize>>,
    degrees: Vec<usize>,
    incidence: DMatrix<f64>,
    laplacian: DMatrix<f64>,
}

impl CommGraph {
    /// Build and validate a communication graph from 1-based ordered edge
    /// pairs. Fails on self-loops, duplicate undirected edges, out-of-range
    /// nodes, and disconnected graphs.
    pub fn from_edges(node_count: usize, edges_1based: &[(usize, usize)]) -> Result<Self, GraphError> {
        let n = node_count;
        let mut edges = Vec::with_capacity(edges_1based.len());
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in edges_1based {
            if a == 0 || a > n {
                return Err(GraphError::NodeOutOfRange(a, n));
            }
            if b == 0 || b > n {
                return Err(GraphError::NodeOutOfRange(b, n));
            }
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(GraphError::DuplicateEdge(a, b));
            }
            edges.push((a - 1, b - 1));
        }

        let mut neighbors = vec![Vec::new(); n];
        let mut in_neighbors = vec![Vec::new(); n];
        let mut out_neighbors = vec![Vec::new(); n];
        for &(tail, head) in &edges {
            neighbors[tail].push(head);
            neighbors[head].push(tail);
            in_neighbors[head].push(tail);
            out_neighbors[tail].push(head);
        }

        // Connectivity over the undirected graph.
        if n > 0 {
            let mut visited = vec![false; n];
            let mut stack = vec![0usize];
            visited[0] = true;
            let mut count = 1;
            while let Some(v) = stack.pop() {
                for &w in &neighbors[v] {
                    if !visited[w] {
                        visited[w] = true;
                        count += 1;
                        stack.push(w);
                    }
                }
            }
            if count != n {
                return Err(GraphError::Disconnected);
            }
        }

        let e = edges.len();
        let mut incidence = DMatrix::zeros(n, e);
        for (col, &(tail, head)) in edges.iter().enumerate() {
            incidence[(tail, col)] = 1.0;
            incidence[(head, col)] = -1.0;
        }
        let laplacian = &incidence * incidence.transpose();
        let degrees = neighbors.iter().map(Vec::len).collect();

        Ok(Self {
            node_count: n,
            edges,
            neighbors,
            in_neighbors,
            out_neighbors,
            degrees,
            incidence,
            laplacian,
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Ordered edges as 0-based `(tail, head)` pairs.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn in_neighbors(&self, node: usize) -> &[usize] {
        &self.in_neighbors[node]
    }

    pub fn out_neighbors(&self, node: usize) -> &[usize] {
        &self.out_neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.degrees[node]
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Smallest positive eigenvalue of the Laplacian (algebraic connectivity
    /// up to scaling). Dense eigensolve; graphs here are desk scale.
    pub fn lambda2(&self) -> f64 {
        let eig = self.laplacian.clone().symmetric_eigen();
        let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        vals.into_iter().find(|&v| v > 1e-9).unwrap_or(0.0)
    }
}

/// Apply `(M ⊗ I_block) v` without materializing the Kronecker product.
pub fn kron_apply(m: &DMatrix<f64>, block_dim: usize, v: &DVector<f64>) -> Result<DVector<f64>, GraphError> {
    let (rows, cols) = m.shape();
    if v.len() != cols * block_dim {
        return Err(GraphError::DimensionMismatch {
            expected: cols * block_dim,
            got: v.len(),
        });
    }
    let mut out = DVector::zeros(rows * block_dim);
    for r in 0..rows {
        for c in 0..cols {
            let w = m[(r, c)];
            if w == 0.0 {
                continue;
            }
            let src = v.rows(c * block_dim, block_dim);
            let mut dst = out.rows_mut(r * block_dim, block_dim);
            dst.axpy(w, &src, 1.0);
        }
    }
    Ok(out)
}

/// Directed transport network: markets as nodes, roads as edges. Column `k`
/// of the incidence matrix has `-1` at the road's tail (origin market) and
/// `+1` at its head, so `B_T u` is the net quantity delivered to each market.
#[derive(Debug, Clone)]
pub struct TransportNetwork {
    market_count: usize,
    /// 0-based directed roads `(tail, head)`.
    roads: Vec<(usize, usize)>,
    incidence: DMatrix<f64>,
    /// Length of road `k` divided by the maximum road length; in `(0, 1]`.
    length_ratio: Vec<f64>,
}

impl TransportNetwork {
    /// Build from 1-based `(tail, head, length)` road descriptions. Lengths
    /// are normalized so the longest road has ratio 1.
    pub fn from_roads(market_count: usize, roads_1based: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        let n = market_count;
        let mut roads = Vec::with_capacity(roads_1based.len());
        let mut lengths = Vec::with_capacity(roads_1based.len());
        for (k, &(a, b, len)) in roads_1based.iter().enumerate() {
            if a == 0 || a > n {
                return Err(GraphError::NodeOutOfRange(a, n));
            }
            if b == 0 || b > n {
                return Err(GraphError::NodeOutOfRange(b, n));
            }
            if a == b {
                return Err(GraphError::SelfRoad(k));
            }
            if len <= 0.0 {
                return Err(GraphError::NonPositiveLength(k, len));
            }
            roads.push((a - 1, b - 1));
            lengths.push(len);
        }
        let max_len = lengths.iter().copied().fold(f64::MIN, f64::max);
        let length_ratio: Vec<f64> = lengths.iter().map(|&l| l / max_len).collect();

        let e = roads.len();
        let mut incidence = DMatrix::zeros(n, e);
        for (col, &(tail, head)) in roads.iter().enumerate() {
            incidence[(tail, col)] = -1.0;
            incidence[(head, col)] = 1.0;
        }
        Ok(Self {
            market_count: n,
            roads,
            incidence,
            length_ratio,
        })
    }

    pub fn market_count(&self) -> usize {
        self.market_count
    }

    pub fn road_count(&self) -> usize {
        self.roads.len()
    }

    pub fn roads(&self) -> &[(usize, usize)] {
        &self.roads
    }

    pub fn incidence(&self) -> &DMatrix<f64> {
        &self.incidence
    }

    /// Length ratio of road `k`, in `(0, 1]`.
    pub fn length_ratio(&self, k: usize) -> f64 {
        self.length_ratio[k]
    }
}
