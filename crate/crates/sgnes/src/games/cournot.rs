//! Stochastic production-and-distribution market: firms produce a common
//! commodity at factory nodes of a transport network, ship it along roads,
//! and sell at markets whose unit prices fall with the aggregate supply.
//! Prices carry additive zero-mean noise.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{aux_stream, Game, ScenarioGradient};
use crate::graph::{GraphError, TransportNetwork};
use crate::sets::{BoxBounds, Halfspace, LocalSet};

#[derive(Debug, Error)]
pub enum CournotError {
    #[error("invalid network file: {0}")]
    InvalidNetworkFile(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("factory node {0} out of range")]
    FactoryOutOfRange(usize),
}

/// Where the transport network came from; recorded in run metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkSource {
    File,
    Synthetic,
}

/// One firm's data.
struct Firm {
    /// 0-based market nodes of its factories.
    factories: Vec<usize>,
    /// Dense `A_i = [B_T, E_i]`, kept for the generic interfaces.
    coupling: DMatrix<f64>,
    capacities: DVector<f64>,
    /// Diagonal of the quadratic cost.
    q_diag: DVector<f64>,
    /// Production cost coefficients, one per factory.
    kappa: DVector<f64>,
    set: LocalSet,
    bbox: BoxBounds,
}

pub struct CournotGame {
    transport: TransportNetwork,
    firms: Vec<Firm>,
    dims: Vec<usize>,
    /// Transport cost coefficients per road, `eta_k` in `(0, 8]`.
    eta: Vec<f64>,
    price_intercept: DVector<f64>,
    price_slope: DMatrix<f64>,
    noise_halfwidth: f64,
    resource: DVector<f64>,
    pub sigma_symmetrized: bool,
    pub sigma_positive_definite: bool,
    pub network_source: NetworkSource,
    seed: u64,
}

impl CournotGame {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        transport: TransportNetwork,
        factories: Vec<Vec<usize>>,
        capacities: Vec<DVector<f64>>,
        q_diags: Vec<DVector<f64>>,
        kappas: Vec<DVector<f64>>,
        price_intercept: DVector<f64>,
        price_slope: DMatrix<f64>,
        noise_halfwidth: f64,
        resource: DVector<f64>,
        network_source: NetworkSource,
        seed: u64,
    ) -> Result<Self, CournotError> {
        let nt = transport.market_count();
        let et = transport.road_count();
        // Validate and, if necessary, symmetrize the price slope.
        let asym = (&price_slope - price_slope.transpose()).abs().max();
        let (slope, symmetrized) = if asym > 1e-12 {
            ((&price_slope + price_slope.transpose()) * 0.5, true)
        } else {
            (price_slope, false)
        };
        let min_eig = slope
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);

        let mut firms = Vec::with_capacity(factories.len());
        let mut dims = Vec::with_capacity(factories.len());
        for (f, nodes) in factories.iter().enumerate() {
            for &node in nodes {
                if node >= nt {
                    return Err(CournotError::FactoryOutOfRange(node));
                }
            }
            let nf = nodes.len();
            let n_i = et + nf;
            let mut coupling = DMatrix::zeros(nt, n_i);
            coupling.view_mut((0, 0), (nt, et)).copy_from(transport.incidence());
            for (col, &node) in nodes.iter().enumerate() {
                coupling[(node, et + col)] = 1.0;
            }
            let cap = &capacities[f];
            let cap_total: f64 = cap.iter().map(|b| b.abs()).sum();
            let mut lo = DVector::zeros(n_i);
            let mut hi = DVector::zeros(n_i);
            for k in 0..et {
                hi[k] = cap_total;
            }
            for (col, _) in nodes.iter().enumerate() {
                hi[et + col] = cap[col];
            }
            let _ = &mut lo;
            let bounds = BoxBounds::new(lo, hi).unwrap();
            // Sales at each market must be nonnegative: A_i x_i >= 0.
            let halfspaces = (0..nt)
                .map(|r| Halfspace::new(-coupling.row(r).transpose(), 0.0))
                .collect();
            let set = LocalSet::new(bounds.clone(), halfspaces);
            let bbox = bounds.inflated(0.05);
            firms.push(Firm {
                factories: nodes.clone(),
                coupling,
                capacities: cap.clone(),
                q_diag: q_diags[f].clone(),
                kappa: kappas[f].clone(),
                set,
                bbox,
            });
            dims.push(n_i);
        }
        let eta = (0..et).map(|k| 8.0 * transport.length_ratio(k)).collect();
        Ok(CournotGame {
            transport,
            firms,
            dims,
            eta,
            price_intercept,
            price_slope: slope,
            noise_halfwidth,
            resource,
            sigma_symmetrized: symmetrized,
            sigma_positive_definite: min_eig > 0.0,
            network_source,
            seed,
        })
    }

    pub fn transport(&self) -> &TransportNetwork {
        &self.transport
    }

    pub fn road_count(&self) -> usize {
        self.transport.road_count()
    }

    pub fn capacities(&self, firm: usize) -> &DVector<f64> {
        &self.firms[firm].capacities
    }

    /// `A_i x_i` without materializing the dense product: roads move the
    /// commodity, factories inject it.
    fn supply_into(&self, firm: usize, x: nalgebra::DVectorView<'_, f64>, out: &mut DVector<f64>) {
        let et = self.transport.road_count();
        for (k, &(tail, head)) in self.transport.roads().iter().enumerate() {
            let u = x[k];
            out[tail] -= u;
            out[head] += u;
        }
        for (col, &node) in self.firms[firm].factories.iter().enumerate() {
            out[node] += x[et + col];
        }
    }

    /// `A_i^T w` applied sparsely.
    fn supply_adjoint_into(&self, firm: usize, w: &DVector<f64>, out: &mut DVector<f64>) {
        let et = self.transport.road_count();
        for (k, &(tail, head)) in self.transport.roads().iter().enumerate() {
            out[k] = w[head] - w[tail];
        }
        for (col, &node) in self.firms[firm].factories.iter().enumerate() {
            out[et + col] = w[node];
        }
    }

    /// Aggregate supply `A x` over all firms from a full profile.
    fn aggregate_supply(&self, profile: &DVector<f64>) -> DVector<f64> {
        let mut ax = DVector::zeros(self.transport.market_count());
        let mut off = 0;
        for (j, &dj) in self.dims.iter().enumerate() {
            self.supply_into(j, profile.rows(off, dj), &mut ax);
            off += dj;
        }
        ax
    }

    /// Scenario objective of one firm at a full profile and a fixed price
    /// perturbation.
    pub fn scenario_objective(&self, firm: usize, profile: &DVector<f64>, xi: &DVector<f64>) -> f64 {
        let et = self.transport.road_count();
        let off = self.own_offset(firm);
        let n_i = self.dims[firm];
        let x = profile.rows(off, n_i);
        let f = &self.firms[firm];
        let mut quad = 0.0;
        for j in 0..n_i {
            quad += f.q_diag[j] * x[j] * x[j];
        }
        let mut transport_cost = 0.0;
        for k in 0..et {
            let u = x[k];
            transport_cost += self.eta[k] * (u - (1.0 - 1.0 / (1.0 + u)));
        }
        let mut production_cost = 0.0;
        for (col, _) in f.factories.iter().enumerate() {
            let v = x[et + col];
            production_cost += f.kappa[col] * (v - (1.0 - 1.0 / (1.0 + v)));
        }
        let ax = self.aggregate_supply(profile);
        let price = &self.price_intercept - &self.price_slope * &ax + xi;
        let mut own_supply = DVector::zeros(self.transport.market_count());
        self.supply_into(firm, x, &mut own_supply);
        quad + transport_cost + production_cost - price.dot(&own_supply)
    }

    /// Scenario gradient at a fixed price perturbation `xi`.
    pub fn scenario_gradient(&self, firm: usize, profile: &DVector<f64>, xi: &DVector<f64>) -> DVector<f64> {
        let ax = self.aggregate_supply(profile);
        self.gradient_given_supply(firm, profile, &ax, Some(xi))
    }

    fn gradient_given_supply(
        &self,
        firm: usize,
        profile: &DVector<f64>,
        ax: &DVector<f64>,
        xi: Option<&DVector<f64>>,
    ) -> DVector<f64> {
        let et = self.transport.road_count();
        let off = self.own_offset(firm);
        let n_i = self.dims[firm];
        let x = profile.rows(off, n_i);
        let f = &self.firms[firm];

        let mut market = &self.price_intercept - &self.price_slope * ax;
        if let Some(xi) = xi {
            market += xi;
        }
        let mut g = DVector::zeros(n_i);
        self.supply_adjoint_into(firm, &market, &mut g);
        g = -g;

        // A_i^T Sigma^T A_i x_i.
        let mut own_supply = DVector::zeros(self.transport.market_count());
        self.supply_into(firm, x, &mut own_supply);
        let st_ax = self.price_slope.transpose() * own_supply;
        let mut corr = DVector::zeros(n_i);
        self.supply_adjoint_into(firm, &st_ax, &mut corr);
        g += corr;

        for j in 0..n_i {
            g[j] += 2.0 * f.q_diag[j] * x[j];
        }
        for k in 0..et {
            let u = x[k];
            g[k] += self.eta[k] * (1.0 - 1.0 / ((1.0 + u) * (1.0 + u)));
        }
        for (col, _) in f.factories.iter().enumerate() {
            let v = x[et + col];
            g[et + col] += f.kappa[col] * (1.0 - 1.0 / ((1.0 + v) * (1.0 + v)));
        }
        g
    }
}

impl Game for CournotGame {
    fn player_count(&self) -> usize {
        self.firms.len()
    }
    fn dims(&self) -> &[usize] {
        &self.dims
    }
    fn coupling_dim(&self) -> usize {
        self.transport.market_count()
    }
    fn coupling_block(&self, i: usize) -> &DMatrix<f64> {
        &self.firms[i].coupling
    }
    fn resource(&self) -> &DVector<f64> {
        &self.resource
    }
    fn local_set(&self, i: usize) -> &LocalSet {
        &self.firms[i].set
    }
    fn bounding_box(&self, i: usize) -> &BoxBounds {
        &self.firms[i].bbox
    }
    fn sample_own_gradient(&self, i: usize, profile: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let nt = self.transport.market_count();
        let xi = DVector::from_fn(nt, |_, _| self.noise_halfwidth * (2.0 * rng.gen::<f64>() - 1.0));
        self.scenario_gradient(i, profile, &xi)
    }
    fn expected_own_gradient(&self, i: usize, profile: &DVector<f64>) -> Option<DVector<f64>> {
        let ax = self.aggregate_supply(profile);
        Some(self.gradient_given_supply(i, profile, &ax, None))
    }
    fn inner_sampler<'a>(&'a self, i: usize, profile: &DVector<f64>) -> ScenarioGradient<'a> {
        // Everything except the own supply is frozen during inner steps; the
        // symmetrized price slope lets the price and quadratic-correction
        // terms share one dense multiply:
        //   g = A_i^T (Sigma (2 A_i v + S_other) - w - xi) + costs'.
        let nt = self.transport.market_count();
        let et = self.transport.road_count();
        let n_i = self.dims[i];
        let mut other = DVector::zeros(nt);
        let mut off = 0;
        for (j, &dj) in self.dims.iter().enumerate() {
            if j != i {
                self.supply_into(j, profile.rows(off, dj), &mut other);
            }
            off += dj;
        }
        let mut doubled = DVector::zeros(nt);
        let mut market = DVector::zeros(nt);
        let roads = self.transport.roads();
        Box::new(move |v, rng, out| {
            doubled.copy_from(&other);
            {
                let d = doubled.as_mut_slice();
                let x = v.as_slice();
                for (k, &(tail, head)) in roads.iter().enumerate() {
                    let u = 2.0 * x[k];
                    d[tail] -= u;
                    d[head] += u;
                }
                for (col, &node) in self.firms[i].factories.iter().enumerate() {
                    d[node] += 2.0 * x[et + col];
                }
            }
            market.gemv(1.0, &self.price_slope, &doubled, 0.0);
            {
                let m = market.as_mut_slice();
                let w = self.price_intercept.as_slice();
                for r in 0..nt {
                    m[r] -= w[r] + self.noise_halfwidth * (2.0 * rng.gen::<f64>() - 1.0);
                }
            }
            {
                let g = out.as_mut_slice();
                let m = market.as_slice();
                let x = v.as_slice();
                let f = &self.firms[i];
                let q = f.q_diag.as_slice();
                for (k, &(tail, head)) in roads.iter().enumerate() {
                    let u = x[k];
                    let r = 1.0 / (1.0 + u);
                    g[k] = m[head] - m[tail] + 2.0 * q[k] * u + self.eta[k] * (1.0 - r * r);
                }
                for (col, &node) in f.factories.iter().enumerate() {
                    let w = x[et + col];
                    let r = 1.0 / (1.0 + w);
                    g[et + col] = m[node] + 2.0 * q[et + col] * w + f.kappa[col] * (1.0 - r * r);
                }
            }
        })
    }
    fn descriptor(&self) -> String {
        format!(
            "cournot(seed={},markets={},roads={},firms={},src={:?})",
            self.seed,
            self.transport.market_count(),
            self.transport.road_count(),
            self.firms.len(),
            self.network_source
        )
    }
}

/// Seeded random connected transport network: markets placed in the unit
/// square, a nearest-neighbor spanning tree plus the shortest remaining
/// pairs, each undirected road realized in both directions.
pub fn synthetic_transport_network(seed: u64, markets: usize, undirected_roads: usize) -> TransportNetwork {
    let mut rng = aux_stream(seed, 10);
    let pts: Vec<(f64, f64)> = (0..markets).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
    let dist = |a: usize, b: usize| -> f64 {
        let dx = pts[a].0 - pts[b].0;
        let dy = pts[a].1 - pts[b].1;
        (dx * dx + dy * dy).sqrt()
    };
    // Prim's spanning tree.
    let mut in_tree = vec![false; markets];
    in_tree[0] = true;
    let mut undirected: Vec<(usize, usize)> = Vec::new();
    for _ in 1..markets {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..markets {
            if !in_tree[a] {
                continue;
            }
            for b in 0..markets {
                if in_tree[b] {
                    continue;
                }
                let d = dist(a, b);
                if d < best.0 {
                    best = (d, a, b);
                }
            }
        }
        in_tree[best.2] = true;
        undirected.push((best.1, best.2));
    }
    // Shortest non-tree pairs until the road budget is met.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for a in 0..markets {
        for b in a + 1..markets {
            if !undirected.contains(&(a, b)) && !undirected.contains(&(b, a)) {
                candidates.push((dist(a, b), a, b));
            }
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    for &(_, a, b) in candidates.iter() {
        if undirected.len() >= undirected_roads {
            break;
        }
        undirected.push((a, b));
    }
    let mut roads = Vec::with_capacity(2 * undirected.len());
    for &(a, b) in &undirected {
        let len = dist(a, b).max(1e-6);
        roads.push((a + 1, b + 1, len));
        roads.push((b + 1, a + 1, len));
    }
    TransportNetwork::from_roads(markets, &roads).expect("synthetic network is valid by construction")
}

/// Parse the transport-network file format: a header `N_T E_T` followed by
/// `E_T` lines `tail head length` (1-based markets).
pub fn load_transport_network(path: &Path) -> Result<TransportNetwork, CournotError> {
    let text = std::fs::read_to_string(path).map_err(|e| CournotError::InvalidNetworkFile(e.to_string()))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| CournotError::InvalidNetworkFile("empty file".into()))?;
    let mut it = header.split_whitespace();
    let nt: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| CournotError::InvalidNetworkFile("bad header".into()))?;
    let et: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| CournotError::InvalidNetworkFile("bad header".into()))?;
    let mut roads = Vec::with_capacity(et);
    for line in lines {
        let mut parts = line.split_whitespace();
        let tail: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| CournotError::InvalidNetworkFile(format!("bad road line: {line}")))?;
        let head: usize = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| CournotError::InvalidNetworkFile(format!("bad road line: {line}")))?;
        let len: f64 = parts
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| CournotError::InvalidNetworkFile(format!("bad road line: {line}")))?;
        roads.push((tail, head, len));
    }
    if roads.len() != et {
        return Err(CournotError::InvalidNetworkFile(format!(
            "header says {} roads, found {}",
            et,
            roads.len()
        )));
    }
    Ok(TransportNetwork::from_roads(nt, &roads)?)
}

/// The five-firm instance on a 29-market, 68-road network: factories at
/// markets {8, 14, 21, 10, 29}, capacities in `[10, 14]`, quadratic costs in
/// `[2, 3]`, price intercepts in `[26, 30]`, unit price slopes on the
/// diagonal with road-length-dependent off-diagonals, uniform price noise of
/// half-width 2, and market caps of 4. A seeded synthetic network of the
/// same size stands in when no network file is supplied.
pub fn build_paper_cournot(seed: u64) -> Result<CournotGame, CournotError> {
    let network = synthetic_transport_network(seed, 29, 34);
    build_cournot_on(network, NetworkSource::Synthetic, seed)
}

pub fn build_paper_cournot_with_network(seed: u64, path: &Path) -> Result<CournotGame, CournotError> {
    let network = load_transport_network(path)?;
    build_cournot_on(network, NetworkSource::File, seed)
}

fn build_cournot_on(network: TransportNetwork, source: NetworkSource, seed: u64) -> Result<CournotGame, CournotError> {
    let mut rng = aux_stream(seed, 11);
    let nt = network.market_count();
    let et = network.road_count();
    let factory_nodes = [8usize, 14, 21, 10, 29];
    let factories: Vec<Vec<usize>> = factory_nodes.iter().map(|&f| vec![f - 1]).collect();
    let firms = factories.len();
    let capacities: Vec<DVector<f64>> = (0..firms)
        .map(|_| DVector::from_fn(1, |_, _| 10.0 + 4.0 * rng.gen::<f64>()))
        .collect();
    let q_diags: Vec<DVector<f64>> = (0..firms)
        .map(|_| DVector::from_fn(et + 1, |_, _| 2.0 + rng.gen::<f64>()))
        .collect();
    let kappas: Vec<DVector<f64>> = (0..firms).map(|_| DVector::from_element(1, 2.0)).collect();
    let w = DVector::from_fn(nt, |_, _| 26.0 + 4.0 * rng.gen::<f64>());
    let mut sigma = DMatrix::identity(nt, nt);
    for (k, &(tail, head)) in network.roads().iter().enumerate() {
        sigma[(tail, head)] = 0.3 * (1.0 - network.length_ratio(k));
    }
    let c = DVector::from_element(nt, 4.0);
    CournotGame::new(
        network,
        factories,
        capacities,
        q_diags,
        kappas,
        w,
        sigma,
        2.0,
        c,
        source,
        seed,
    )
}
