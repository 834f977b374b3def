//! Two-stage multi-product assembly game: players pre-order subassemblies
//! under uncertain base costs and demands, then produce after demand is
//! revealed. The second stage is a small linear program; its dual vertex
//! supplies the recourse subgradient.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{aux_stream, Game, ScenarioGradient};
use crate::lp::{self, LpError, LpProblem, SimplexOutcome};
use crate::sets::{BoxBounds, LocalSet};

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("second-stage dual is unbounded; structural assumptions violated")]
    LpUnbounded,
    #[error("second-stage dual is infeasible")]
    LpInfeasible,
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error("inconsistent shapes in assembly data")]
    ShapeMismatch,
}

/// One manufacturer's data.
struct Player {
    /// Commodity count `l_i`.
    products: usize,
    /// Subassembly count `n_i`.
    parts: usize,
    /// Requirement matrix, `l_i x n_i`, full row rank, no zero column.
    requirements: DMatrix<f64>,
    /// Global type of each local subassembly index.
    types: Vec<usize>,
    coupling: DMatrix<f64>,
    /// Jittered cost vector of the second-stage primal `[z; h; r]` blocks.
    q: DVector<f64>,
    /// Dual feasible system rows `B_i^T` and the objective embedding sizes.
    dual_rows: DMatrix<f64>,
    /// z-form data: minimize `c_z^T z` st `H^T z <= x`, `z <= d`, `z >= 0`.
    z_cost: DVector<f64>,
    z_rows: DMatrix<f64>,
    /// Gradient offset of the value function: the `h`-block of `q`.
    q_h: DVector<f64>,
    /// The `r`-block of `q` (demand-side value offset).
    q_r: DVector<f64>,
    /// Quadratic cost diagonal.
    q_diag: DVector<f64>,
    /// Demand support, `L` vectors of length `l_i`.
    demand_support: Vec<DVector<f64>>,
    set: LocalSet,
    bbox: BoxBounds,
}

pub struct AssemblyGame {
    players: Vec<Player>,
    dims: Vec<usize>,
    /// Diagonal of the per-unit cost slope over the global types.
    sigma_diag: DVector<f64>,
    cost_lo: DVector<f64>,
    cost_hi: DVector<f64>,
    /// Scenario probabilities shared across players.
    probabilities: Vec<f64>,
    resource: DVector<f64>,
    seed: u64,
}

impl AssemblyGame {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        requirements: Vec<DMatrix<f64>>,
        types: Vec<Vec<usize>>,
        prices: Vec<DVector<f64>>,
        salvage: DVector<f64>,
        q_diags: Vec<DVector<f64>>,
        sigma_diag: DVector<f64>,
        cost_lo: DVector<f64>,
        cost_hi: DVector<f64>,
        demand_support: Vec<Vec<DVector<f64>>>,
        probabilities: Vec<f64>,
        order_caps: Vec<DVector<f64>>,
        resource: DVector<f64>,
        jitter: f64,
        seed: u64,
    ) -> Result<Self, AssemblyError> {
        let nn = requirements.len();
        let m = salvage.len();
        if types.len() != nn || prices.len() != nn || q_diags.len() != nn || demand_support.len() != nn || order_caps.len() != nn
        {
            return Err(AssemblyError::ShapeMismatch);
        }
        let psum: f64 = probabilities.iter().sum();
        if (psum - 1.0).abs() > 1e-9 || probabilities.iter().any(|&p| p < 0.0) {
            return Err(AssemblyError::ShapeMismatch);
        }
        let mut jrng = aux_stream(seed, 21);
        let mut players = Vec::with_capacity(nn);
        let mut dims = Vec::with_capacity(nn);
        for i in 0..nn {
            let h = &requirements[i];
            let (l, n) = (h.nrows(), h.ncols());
            if types[i].len() != n || prices[i].len() != l || q_diags[i].len() != n || order_caps[i].len() != n {
                return Err(AssemblyError::ShapeMismatch);
            }
            let mut coupling = DMatrix::zeros(m, n);
            for (col, &t) in types[i].iter().enumerate() {
                coupling[(t, col)] = 1.0;
            }
            // q = [-p; -A^T s; 0] with a seeded jitter that breaks dual
            // vertex ties.
            let mut q = DVector::zeros(l + n + l);
            q.rows_mut(0, l).copy_from(&(-&prices[i]));
            let ats = coupling.transpose() * &salvage;
            q.rows_mut(l, n).copy_from(&(-ats));
            for v in q.iter_mut() {
                *v += jitter * (2.0 * jrng.gen::<f64>() - 1.0);
            }
            let q_z = q.rows(0, l).clone_owned();
            let q_h = q.rows(l, n).clone_owned();
            let q_r = q.rows(l + n, l).clone_owned();

            // Dual rows B_i^T over v = [v_x (n); v_d (l)], one row per
            // primal variable block: [H, I_l | 0..]; [I_n, 0]; [0, I_l].
            let d = n + l;
            let k = l + n + l;
            let mut dual_rows = DMatrix::zeros(k, d);
            dual_rows.view_mut((0, 0), (l, n)).copy_from(h);
            dual_rows.view_mut((0, n), (l, l)).copy_from(&DMatrix::identity(l, l));
            dual_rows.view_mut((l, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
            dual_rows.view_mut((l + n, n), (l, l)).copy_from(&DMatrix::identity(l, l));

            // z-form: minimize (q_z - H q_h - q_r)^T z st H^T z <= x, z <= d.
            let z_cost = &q_z - h * &q_h - &q_r;
            let mut z_rows = DMatrix::zeros(n + l, l);
            z_rows.view_mut((0, 0), (n, l)).copy_from(&h.transpose());
            z_rows.view_mut((n, 0), (l, l)).copy_from(&DMatrix::identity(l, l));

            let lo = DVector::zeros(n);
            let hi = order_caps[i].clone();
            let bounds = BoxBounds::new(lo, hi).unwrap();
            // Recourse needs nonnegative orders: the relaxed box inflates the
            // upper side only.
            let mut bbox = bounds.inflated(0.05);
            for j in 0..n {
                bbox.lo[j] = bbox.lo[j].max(0.0);
            }
            players.push(Player {
                products: l,
                parts: n,
                requirements: h.clone(),
                types: types[i].clone(),
                coupling,
                q,
                dual_rows,
                z_cost,
                z_rows,
                q_h,
                q_r,

                q_diag: q_diags[i].clone(),
                demand_support: demand_support[i].clone(),
                set: LocalSet::from_box(bounds),
                bbox,
            });
            dims.push(n);
        }
        Ok(AssemblyGame {
            players,
            dims,
            sigma_diag,
            cost_lo,
            cost_hi,
            probabilities,
            resource,
            seed,
        })
    }

    pub fn scenario_count(&self) -> usize {
        self.probabilities.len()
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn demand_support(&self, i: usize) -> &[DVector<f64>] {
        &self.players[i].demand_support
    }

    pub fn requirements(&self, i: usize) -> &DMatrix<f64> {
        &self.players[i].requirements
    }

    pub fn mean_base_cost(&self) -> DVector<f64> {
        (&self.cost_lo + &self.cost_hi) * 0.5
    }

    /// Rows and bounds of the second-stage dual polyhedron
    /// `{v : B_i^T v <= q_i}`, including the tie-breaking jitter.
    pub fn dual_system(&self, i: usize) -> (DMatrix<f64>, DVector<f64>) {
        (self.players[i].dual_rows.clone(), self.players[i].q.clone())
    }

    /// Second-stage value and subgradient through the dual linear program:
    /// maximize `[x; d]^T v` over the dual polyhedron, subgradient from the
    /// `x`-block of the optimal vertex.
    pub fn recourse_dual(&self, i: usize, x: &DVector<f64>, d: &DVector<f64>) -> Result<(f64, DVector<f64>, bool), AssemblyError> {
        let p = &self.players[i];
        let mut objective = DVector::zeros(p.parts + p.products);
        objective.rows_mut(0, p.parts).copy_from(x);
        objective.rows_mut(p.parts, p.products).copy_from(d);
        let problem = LpProblem::new(objective, p.dual_rows.clone(), p.q.clone())?;
        match lp::simplex_solve(&problem)? {
            SimplexOutcome::Optimal { point, value, vertex } => {
                Ok((value, point.rows(0, p.parts).clone_owned(), vertex))
            }
            SimplexOutcome::Unbounded => Err(AssemblyError::LpUnbounded),
            SimplexOutcome::Infeasible => Err(AssemblyError::LpInfeasible),
        }
    }

    /// Same value and subgradient through the second-stage primal in the
    /// production plan, solved from the origin. This is the hot path.
    pub fn recourse_fast(&self, i: usize, x: &DVector<f64>, d: &DVector<f64>) -> Result<(f64, DVector<f64>), AssemblyError> {
        let p = &self.players[i];
        let mut rhs = DVector::zeros(p.parts + p.products);
        for j in 0..p.parts {
            rhs[j] = x[j].max(0.0);
        }
        rhs.rows_mut(p.parts, p.products).copy_from(d);
        let max_cost = -&p.z_cost;
        let sol = lp::solve_nonneg_from_origin(&max_cost, &p.z_rows, &rhs)?;
        let value = p.q_h.dot(x) + p.q_r.dot(d) - sol.value;
        let mut grad = p.q_h.clone();
        grad.axpy(-1.0, &sol.row_duals.rows(0, p.parts), 1.0);
        Ok((value, grad))
    }

    /// Deterministic recourse part of the expected objective and gradient.
    fn expected_recourse_gradient(&self, i: usize, x: &DVector<f64>) -> DVector<f64> {
        let p = &self.players[i];
        let mut g = DVector::zeros(p.parts);
        for (l, d) in p.demand_support.iter().enumerate() {
            let (_, sub) = self
                .recourse_fast(i, x, d)
                .expect("second stage is always feasible for nonnegative orders");
            g.axpy(self.probabilities[l], &sub, 1.0);
        }
        g
    }

    /// Aggregate ordered quantities per global type.
    fn aggregate_orders(&self, profile: &DVector<f64>) -> DVector<f64> {
        let m = self.resource.len();
        let mut ax = DVector::zeros(m);
        let mut off = 0;
        for (i, &n) in self.dims.iter().enumerate() {
            for (col, &t) in self.players[i].types.iter().enumerate() {
                ax[t] += profile[off + col];
            }
            off += n;
        }
        ax
    }

    /// Smooth (first-stage) part of the gradient at a given base cost.
    fn smooth_gradient(&self, i: usize, profile: &DVector<f64>, base_cost: &DVector<f64>, ax: &DVector<f64>) -> DVector<f64> {
        let p = &self.players[i];
        let off = self.own_offset(i);
        let x = profile.rows(off, p.parts);
        let mut g = DVector::zeros(p.parts);
        for j in 0..p.parts {
            let t = p.types[j];
            g[j] = p.q_diag[j] * x[j]
                + base_cost[t]
                + self.sigma_diag[t] * ax[t]
                + self.sigma_diag[t] * x[j];
        }
        g
    }

    /// Expected first-stage objective value; exact because the demand
    /// support is finite.
    pub fn expected_objective(&self, i: usize, profile: &DVector<f64>) -> f64 {
        let p = &self.players[i];
        let off = self.own_offset(i);
        let x = profile.rows(off, p.parts).clone_owned();
        let ax = self.aggregate_orders(profile);
        let mean_c = self.mean_base_cost();
        let mut v = 0.0;
        for j in 0..p.parts {
            let t = p.types[j];
            v += 0.5 * p.q_diag[j] * x[j] * x[j] + (mean_c[t] + self.sigma_diag[t] * ax[t]) * x[j];
        }
        for (l, d) in p.demand_support.iter().enumerate() {
            let (val, _) = self.recourse_fast(i, &x, d).expect("feasible second stage");
            v += self.probabilities[l] * val;
        }
        v
    }
}

impl Game for AssemblyGame {
    fn player_count(&self) -> usize {
        self.players.len()
    }
    fn dims(&self) -> &[usize] {
        &self.dims
    }
    fn coupling_dim(&self) -> usize {
        self.resource.len()
    }
    fn coupling_block(&self, i: usize) -> &DMatrix<f64> {
        &self.players[i].coupling
    }
    fn resource(&self) -> &DVector<f64> {
        &self.resource
    }
    fn local_set(&self, i: usize) -> &LocalSet {
        &self.players[i].set
    }
    fn bounding_box(&self, i: usize) -> &BoxBounds {
        &self.players[i].bbox
    }
    fn sample_own_gradient(&self, i: usize, profile: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let p = &self.players[i];
        let off = self.own_offset(i);
        let x = profile.rows(off, p.parts).clone_owned();
        // One demand scenario by inverse CDF, one base-cost draw.
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut idx = self.probabilities.len() - 1;
        for (l, &pl) in self.probabilities.iter().enumerate() {
            acc += pl;
            if u <= acc {
                idx = l;
                break;
            }
        }
        let m = self.resource.len();
        let cost = DVector::from_fn(m, |t, _| {
            self.cost_lo[t] + (self.cost_hi[t] - self.cost_lo[t]) * rng.gen::<f64>()
        });
        let ax = self.aggregate_orders(profile);
        let mut g = self.smooth_gradient(i, profile, &cost, &ax);
        let (_, sub) = self
            .recourse_fast(i, &x, &p.demand_support[idx])
            .expect("feasible second stage");
        g += sub;
        g
    }
    fn expected_own_gradient(&self, i: usize, profile: &DVector<f64>) -> Option<DVector<f64>> {
        let off = self.own_offset(i);
        let x = profile.rows(off, self.dims[i]).clone_owned();
        let ax = self.aggregate_orders(profile);
        let mean_c = self.mean_base_cost();
        let mut g = self.smooth_gradient(i, profile, &mean_c, &ax);
        g += self.expected_recourse_gradient(i, &x);
        Some(g)
    }
    fn inner_sampler<'a>(&'a self, i: usize, profile: &DVector<f64>) -> ScenarioGradient<'a> {
        let p = &self.players[i];
        let n = p.parts;
        let m = self.resource.len();
        // Orders of the other players are frozen.
        let mut other = self.aggregate_orders(profile);
        let off = self.own_offset(i);
        for (col, &t) in p.types.iter().enumerate() {
            other[t] -= profile[off + col];
        }
        let mut cost = DVector::zeros(m);
        Box::new(move |v, rng, out| {
            // Draw order matches the trait sampler exactly: one demand
            // scenario, then the full base-cost vector in type order.
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut idx = self.probabilities.len() - 1;
            for (l, &pl) in self.probabilities.iter().enumerate() {
                acc += pl;
                if u <= acc {
                    idx = l;
                    break;
                }
            }
            for t in 0..m {
                cost[t] = self.cost_lo[t] + (self.cost_hi[t] - self.cost_lo[t]) * rng.gen::<f64>();
            }
            for j in 0..n {
                let t = p.types[j];
                let ax_t = other[t] + v[j];
                out[j] = p.q_diag[j] * v[j] + cost[t] + self.sigma_diag[t] * ax_t + self.sigma_diag[t] * v[j];
            }
            let (_, sub) = self
                .recourse_fast(i, v, &p.demand_support[idx])
                .expect("feasible second stage");
            *out += &sub;
        })
    }
    fn descriptor(&self) -> String {
        format!(
            "assembly(seed={},players={},types={},l={:?},n={:?})",
            self.seed,
            self.players.len(),
            self.resource.len(),
            self.players.iter().map(|p| p.products).collect::<Vec<_>>(),
            self.dims
        )
    }
}

/// Second-stage value `Q_i(x_i; d)` and a subgradient in the orders, from
/// the dual vertex identified by the simplex method.
pub fn recourse_value_and_subgradient(
    game: &AssemblyGame,
    i: usize,
    x: &DVector<f64>,
    d: &DVector<f64>,
) -> Result<(f64, DVector<f64>), AssemblyError> {
    let (value, sub, _) = game.recourse_dual(i, x, d)?;
    Ok((value, sub))
}

/// Five players competing for ten subassembly types: requirement matrices
/// with full row rank and no zero columns, prices high enough that
/// production is profitable, a five-point demand distribution, and caps that
/// make the shared availability constraint bind.
pub fn build_paper_assembly(seed: u64) -> Result<AssemblyGame, AssemblyError> {
    let mut rng = aux_stream(seed, 20);
    let nn = 5;
    let m = 10;
    let scenarios = 5;

    let mut requirements = Vec::with_capacity(nn);
    let mut types = Vec::with_capacity(nn);
    let mut prices = Vec::with_capacity(nn);
    let mut q_diags = Vec::with_capacity(nn);
    let mut demand_support = Vec::with_capacity(nn);
    let mut order_caps = Vec::with_capacity(nn);

    for _ in 0..nn {
        let n = 7 + (rng.gen::<f64>() * 4.0).floor().min(3.0) as usize;
        let l = 3 + (rng.gen::<f64>() * 3.0).floor().min(2.0) as usize;
        // Distinct global types for the local subassembly indices.
        let mut pool: Vec<usize> = (0..m).collect();
        for t in (1..pool.len()).rev() {
            let j = (rng.gen::<f64>() * (t + 1) as f64) as usize;
            pool.swap(t, j);
        }
        let my_types: Vec<usize> = pool.into_iter().take(n).collect();

        // Requirement matrix: small nonnegative integers, full row rank, no
        // zero column.
        let h = loop {
            let mut h = DMatrix::from_fn(l, n, |_, _| (rng.gen::<f64>() * 4.0).floor());
            for c in 0..n {
                if h.column(c).sum() == 0.0 {
                    let r = (rng.gen::<f64>() * l as f64) as usize;
                    h[(r, c)] = 1.0 + (rng.gen::<f64>() * 3.0).floor();
                }
            }
            if h.clone().svd(false, false).rank(1e-9) == l {
                break h;
            }
        };
        requirements.push(h);
        types.push(my_types);
        prices.push(DVector::from_fn(l, |_, _| 15.0 + 10.0 * rng.gen::<f64>()));
        q_diags.push(DVector::from_fn(n, |_, _| 1.0 + rng.gen::<f64>()));
        let support: Vec<DVector<f64>> = (0..scenarios)
            .map(|_| DVector::from_fn(l, |_, _| 1.0 + 5.0 * rng.gen::<f64>()))
            .collect();
        demand_support.push(support);
        order_caps.push(DVector::from_fn(n, |_, _| 5.0 + 5.0 * rng.gen::<f64>()));
    }

    let salvage = DVector::from_fn(m, |_, _| 0.5 + rng.gen::<f64>());
    let sigma_diag = DVector::from_fn(m, |_, _| 0.05 + 0.1 * rng.gen::<f64>());
    let cost_lo = DVector::from_fn(m, |_, _| 2.0 + rng.gen::<f64>());
    let cost_hi = &cost_lo + DVector::from_fn(m, |_, _| 1.0 + rng.gen::<f64>());

    let raw: Vec<f64> = (0..scenarios).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let probabilities: Vec<f64> = raw.iter().map(|p| p / total).collect();

    // Availability at half of the aggregate caps so the coupling binds.
    let mut cap_sum = DVector::zeros(m);
    for i in 0..nn {
        for (col, &t) in types[i].iter().enumerate() {
            cap_sum[t] += order_caps[i][col];
        }
    }
    let resource = cap_sum * 0.5;

    AssemblyGame::new(
        requirements,
        types,
        prices,
        salvage,
        q_diags,
        sigma_diag,
        cost_lo,
        cost_hi,
        demand_support,
        probabilities,
        order_caps,
        resource,
        1e-6,
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::player_stream;
    use approx::assert_abs_diff_eq;

    fn small_game(seed: u64) -> AssemblyGame {
        // Two players, 4 global types, l=2, n=3.
        let mut rng = aux_stream(seed, 99);
        let requirements = vec![
            DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 0.0, 0.0, 1.0, 1.0]),
            DMatrix::from_row_slice(2, 3, &[2.0, 0.0, 1.0, 1.0, 1.0, 0.0]),
        ];
        let types = vec![vec![0, 1, 2], vec![1, 2, 3]];
        let prices = vec![
            DVector::from_fn(2, |_, _| 12.0 + 4.0 * rng.gen::<f64>()),
            DVector::from_fn(2, |_, _| 12.0 + 4.0 * rng.gen::<f64>()),
        ];
        let salvage = DVector::from_element(4, 1.0);
        let q_diags = vec![DVector::from_element(3, 1.5), DVector::from_element(3, 1.2)];
        let sigma = DVector::from_element(4, 0.1);
        let lo = DVector::from_element(4, 2.0);
        let hi = DVector::from_element(4, 4.0);
        let support = vec![
            vec![DVector::from_vec(vec![2.0, 1.0]), DVector::from_vec(vec![4.0, 3.0])],
            vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0, 4.0])],
        ];
        let probs = vec![0.4, 0.6];
        let caps = vec![DVector::from_element(3, 8.0), DVector::from_element(3, 8.0)];
        let resource = DVector::from_element(4, 8.0);
        AssemblyGame::new(
            requirements,
            types,
            prices,
            salvage,
            q_diags,
            sigma,
            lo,
            hi,
            support,
            probs,
            caps,
            resource,
            1e-6,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_demand_forces_salvage_only_recourse() {
        let game = small_game(1);
        let x = DVector::from_vec(vec![2.0, 1.5, 3.0]);
        let d = DVector::zeros(2);
        let (value, sub) = recourse_value_and_subgradient(&game, 0, &x, &d).unwrap();
        // Nothing can be produced: everything is salvaged, value is
        // -s^T A x up to the tie-breaking jitter.
        let p = &game.players[0];
        let expect_grad = p.q_h.clone();
        let expect_value = p.q_h.dot(&x);
        assert_abs_diff_eq!(value, expect_value, epsilon = 1e-7);
        assert_abs_diff_eq!((sub - expect_grad).amax(), 0.0, epsilon = 1e-7);
    }

    #[test]
    fn dual_route_matches_vertex_enumeration_on_small_instances() {
        let game = small_game(2);
        let mut rng = aux_stream(5, 0);
        for trial in 0..10 {
            let i = trial % 2;
            let p = &game.players[i];
            let x = DVector::from_fn(3, |_, _| 4.0 * rng.gen::<f64>());
            let d = DVector::from_fn(2, |_, _| 3.0 * rng.gen::<f64>() + 0.5);
            let (value, _, vertex) = game.recourse_dual(i, &x, &d).unwrap();
            assert!(vertex, "simplex must land on a vertex");
            // Oracle: maximize over every enumerated dual vertex.
            let mut objective = DVector::zeros(5);
            objective.rows_mut(0, 3).copy_from(&x);
            objective.rows_mut(3, 2).copy_from(&d);
            let problem = LpProblem::new(objective.clone(), p.dual_rows.clone(), p.q.clone()).unwrap();
            let verts = lp::enumerate_vertices(&problem).unwrap();
            assert!(!verts.is_empty());
            let best = verts.iter().map(|v| objective.dot(v)).fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(value, best, epsilon = 1e-8);
        }
    }

    #[test]
    fn fast_route_matches_dual_route() {
        let game = small_game(3);
        let mut rng = aux_stream(6, 0);
        for trial in 0..25 {
            let i = trial % 2;
            let x = DVector::from_fn(3, |_, _| 4.0 * rng.gen::<f64>());
            let d = DVector::from_fn(2, |_, _| 3.0 * rng.gen::<f64>() + 0.5);
            let (v_dual, g_dual) = recourse_value_and_subgradient(&game, i, &x, &d).unwrap();
            let (v_fast, g_fast) = game.recourse_fast(i, &x, &d).unwrap();
            assert_abs_diff_eq!(v_dual, v_fast, epsilon = 1e-7);
            // Subgradients may differ only at ties; the jitter makes ties
            // measure-zero, so they should agree here.
            assert!((g_dual - g_fast).amax() < 1e-6);
        }
    }

    #[test]
    fn recourse_is_convex_and_subgradient_valid() {
        let game = small_game(4);
        let mut rng = aux_stream(7, 0);
        for scenario in 0..2 {
            let d = game.players[0].demand_support[scenario].clone();
            for _ in 0..100 {
                let a = DVector::from_fn(3, |_, _| 5.0 * rng.gen::<f64>());
                let b = DVector::from_fn(3, |_, _| 5.0 * rng.gen::<f64>());
                let (va, ga) = game.recourse_fast(0, &a, &d).unwrap();
                let (vb, _) = game.recourse_fast(0, &b, &d).unwrap();
                // Midpoint convexity.
                let mid = (&a + &b) * 0.5;
                let (vm, _) = game.recourse_fast(0, &mid, &d).unwrap();
                assert!(vm <= 0.5 * va + 0.5 * vb + 1e-9);
                // Subgradient inequality.
                assert!(vb >= va + ga.dot(&(&b - &a)) - 1e-9);
            }
        }
    }

    #[test]
    fn explicit_expected_objective_matches_monte_carlo_value() {
        // The finite-support expected gradient is the mean of scenario
        // gradients; check unbiasedness of the sampler against it.
        let game = small_game(8);
        let n = game.total_dim();
        let mut setup = aux_stream(51, 0);
        let profile = DVector::from_fn(n, |_, _| 3.0 * setup.gen::<f64>() + 0.5);
        let expected = game.expected_own_gradient(1, &profile).unwrap();
        let mut rng = player_stream(51, 1);
        let m = 20_000;
        let mut acc = DVector::zeros(3);
        for _ in 0..m {
            acc += game.sample_own_gradient(1, &profile, &mut rng);
        }
        acc /= m as f64;
        assert!((acc - expected).amax() < 0.05, "sampler biased");
    }

    #[test]
    fn inner_sampler_agrees_with_trait_sampler() {
        let game = small_game(9);
        let n = game.total_dim();
        let mut setup = aux_stream(52, 0);
        let profile = DVector::from_fn(n, |_, _| 3.0 * setup.gen::<f64>() + 0.2);
        let v = DVector::from_fn(3, |_, _| 4.0 * setup.gen::<f64>());
        let mut full = profile.clone();
        full.rows_mut(game.own_offset(0), 3).copy_from(&v);
        let mut ra = player_stream(4, 0);
        let mut rb = player_stream(4, 0);
        let direct = game.sample_own_gradient(0, &full, &mut ra);
        let mut sampler = game.inner_sampler(0, &profile);
        let mut fast = DVector::zeros(3);
        sampler(&v, &mut rb, &mut fast);
        assert_abs_diff_eq!((direct - fast).amax(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn paper_instance_structure() {
        let game = build_paper_assembly(7).unwrap();
        assert_eq!(game.player_count(), 5);
        assert_eq!(game.coupling_dim(), 10);
        for i in 0..5 {
            let h = game.requirements(i);
            assert!(h.nrows() <= h.ncols());
            assert_eq!(h.clone().svd(false, false).rank(1e-9), h.nrows());
            for c in 0..h.ncols() {
                assert!(h.column(c).sum() > 0.0, "zero column in requirements");
            }
            assert!(game.dims()[i] >= 7 && game.dims()[i] <= 10);
        }
        let p: f64 = game.probabilities().iter().sum();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
        let again = build_paper_assembly(7).unwrap();
        assert_eq!(game.descriptor(), again.descriptor());
    }
}
