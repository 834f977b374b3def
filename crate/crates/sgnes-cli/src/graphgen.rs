//! Seeded communication-graph generators. Graph construction itself only
//! accepts explicit edge lists; randomness lives here in the config layer.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use sgnes::graph::{CommGraph, GraphError};

/// Undirected circle over `1..=n` plus `extra` distinct random chords.
pub fn circle_plus_random_edges(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Result<CommGraph, GraphError> {
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
    if n > 2 {
        edges.push((n, 1));
    }
    let mut present: std::collections::HashSet<(usize, usize)> =
        edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let mut added = 0;
    let max_extra = n * (n - 1) / 2 - edges.len();
    while added < extra.min(max_extra) {
        let a = 1 + (rng.gen::<f64>() * n as f64) as usize;
        let b = 1 + (rng.gen::<f64>() * n as f64) as usize;
        if a == b || a > n || b > n {
            continue;
        }
        let key = (a.min(b), a.max(b));
        if present.insert(key) {
            edges.push((a, b));
            added += 1;
        }
    }
    CommGraph::from_edges(n, &edges)
}

/// Random connected graph: a random spanning tree plus extra random edges.
pub fn random_connected(n: usize, extra: usize, rng: &mut ChaCha8Rng) -> Result<CommGraph, GraphError> {
    let mut order: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        let j = (rng.gen::<f64>() * (i + 1) as f64) as usize;
        order.swap(i, j);
    }
    let mut edges = Vec::with_capacity(n - 1 + extra);
    let mut present = std::collections::HashSet::new();
    for i in 1..n {
        let parent = order[(rng.gen::<f64>() * i as f64) as usize];
        let child = order[i];
        edges.push((parent, child));
        present.insert((parent.min(child), parent.max(child)));
    }
    let mut added = 0;
    let max_extra = n * (n - 1) / 2 - edges.len();
    while added < extra.min(max_extra) {
        let a = 1 + (rng.gen::<f64>() * n as f64) as usize;
        let b = 1 + (rng.gen::<f64>() * n as f64) as usize;
        if a == b || a > n || b > n {
            continue;
        }
        if present.insert((a.min(b), a.max(b))) {
            edges.push((a, b));
            added += 1;
        }
    }
    CommGraph::from_edges(n, &edges)
}
