//! The distributed equilibrium-seeking iteration: a forward player step with
//! an inexact best response, forward edge step, reflected player and edge
//! steps, and an averaged update, together with the projected stochastic
//! subgradient inner solver.

use std::time::Instant;

use nalgebra::DVector;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::game::{AugmentedSubproblem, Game, GameError, GameOracle};
use crate::graph::CommGraph;
use crate::operators::{Dims, OperatorError, PhiOperator, SelectionMap, SplittingConfig, StackState};
use crate::sets::SetError;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("exact inner solve did not converge within {0} iterations")]
    InnerMaxIterations(usize),
}

/// Averaging weight sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaSchedule {
    Constant(f64),
    /// `1/k^a`, evaluated from `k = 1`.
    Power { exponent: f64 },
}

impl GammaSchedule {
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            GammaSchedule::Constant(g) => g,
            GammaSchedule::Power { exponent } => (k as f64).powf(-exponent),
        }
    }

    /// Whether the family diverges in the averaged-iteration sense,
    /// `sum gamma (1 - gamma) = inf`.
    pub fn averaging_divergent(&self) -> bool {
        match *self {
            GammaSchedule::Constant(g) => 0.0 < g && g < 1.0,
            GammaSchedule::Power { exponent } => 0.0 < exponent && exponent <= 1.0,
        }
    }

    fn decay_exponent(&self) -> Option<f64> {
        match *self {
            GammaSchedule::Constant(g) if 0.0 < g && g <= 1.0 => Some(0.0),
            GammaSchedule::Power { exponent } if 0.0 < exponent && exponent <= 1.0 => Some(exponent),
            _ => None,
        }
    }
}

/// Inner-iteration budget sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSchedule {
    Constant(usize),
    /// `ceil(scale * k^exponent) + floor`.
    Power { scale: f64, exponent: f64, floor: usize },
}

impl InnerSchedule {
    pub fn at(&self, k: usize) -> usize {
        let t = match *self {
            InnerSchedule::Constant(t) => t,
            InnerSchedule::Power { scale, exponent, floor } => {
                (scale * (k as f64).powf(exponent)).ceil() as usize + floor
            }
        };
        t.max(1)
    }

    fn growth_exponent(&self) -> f64 {
        match *self {
            InnerSchedule::Constant(_) => 0.0,
            InnerSchedule::Power { scale, exponent, .. } => {
                if scale > 0.0 {
                    exponent
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedules {
    pub gamma: GammaSchedule,
    pub inner: InnerSchedule,
}

impl Schedules {
    /// Whether `gamma^(k) / sqrt(T^(k))` is summable for this family pair,
    /// the sufficient condition for almost-sure convergence of the inexact
    /// iteration (`a + b/2 > 1` in the power families).
    pub fn error_summable(&self) -> bool {
        match self.gamma.decay_exponent() {
            Some(a) => a + self.inner.growth_exponent() / 2.0 > 1.0,
            None => false,
        }
    }
}

/// How the per-player best-response subproblems are solved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerMode {
    /// Projected stochastic subgradient steps, `T^(k)` per outer iteration.
    Stochastic,
    /// Deterministic projected gradient to high accuracy; realizes the exact
    /// resolvent on games with a closed-form expected gradient.
    Exact { tol: f64, max_iter: usize },
}

/// Per-iteration metric row. Wall time is informational and not part of the
/// canonical on-disk metrics, which must be reproducible byte for byte.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub k: usize,
    /// Average over players of `||y_j - y*|| / ||y*||`; NaN without a reference.
    pub dist_avg_norm_star: f64,
    /// Same distance normalized by its value at the first iteration.
    pub dist_avg_norm_init: f64,
    pub step_euclid: f64,
    pub step_phi: f64,
    /// Sum over coordinates of the cross-player standard deviation of the
    /// local estimates; zero exactly on consensus.
    pub primal_consensus: f64,
    pub dual_consensus: f64,
    /// `|| max(0, A x - c) ||` at the players' own decisions.
    pub constraint_violation: f64,
    pub inner_steps: usize,
    pub wall_ms: f64,
}

pub trait MetricsSink {
    fn record(&mut self, rec: &RunRecord);
}

/// Collects every record in memory.
#[derive(Debug, Default)]
pub struct VecSink(pub Vec<RunRecord>);

impl MetricsSink for VecSink {
    fn record(&mut self, rec: &RunRecord) {
        self.0.push(rec.clone());
    }
}

/// Discards records.
pub struct NullSink;

impl MetricsSink for NullSink {
    fn record(&mut self, _rec: &RunRecord) {}
}

/// States of one outer iteration, exposed to observers for invariant checks.
#[derive(Debug, Clone)]
pub struct IterationSnapshot {
    pub k: usize,
    pub tilde: StackState,
    pub forward: StackState,
    pub reflected: StackState,
    pub backward: StackState,
    pub inner_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EarlyStop {
    pub step_tol: f64,
    pub consecutive: usize,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub iterations: usize,
    pub schedules: Schedules,
    pub inner_mode: InnerMode,
    /// Start state; zeros when absent.
    pub init: Option<StackState>,
    /// Ground-truth decision stack for the distance metrics.
    pub reference: Option<DVector<f64>>,
    pub early_stop: Option<EarlyStop>,
    /// Evaluate players concurrently inside each phase. Trajectories do not
    /// depend on this: players use disjoint RNG streams and phase-local reads.
    pub parallel: bool,
}

impl RunOptions {
    pub fn new(iterations: usize, schedules: Schedules) -> Self {
        RunOptions {
            iterations,
            schedules,
            inner_mode: InnerMode::Stochastic,
            init: None,
            reference: None,
            early_stop: None,
            parallel: true,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    /// Final averaged iterate.
    pub state: StackState,
    /// Final forward (resolvent) output; its y-blocks are the players'
    /// decisions and estimates.
    pub forward: StackState,
    pub iterations_run: usize,
    pub stopped_early: bool,
}

/// Projected stochastic subgradient descent on the augmented subproblem:
/// `T` steps from the proximal center with stepsizes `2 tau / (t + 2)`.
pub fn inner_solve(
    game: &dyn Game,
    sub: &AugmentedSubproblem,
    t_steps: usize,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let tau1 = 1.0 / sub.prox_weight;
    let bbox = game.bounding_box(sub.player);
    let mut v = sub.prox_center.clone();
    let mut g = DVector::zeros(v.len());
    let mut sampler = game.inner_sampler(sub.player, &sub.profile);
    for t in 0..t_steps {
        sampler(&v, rng, &mut g);
        sub.finish_gradient(&v, &mut g);
        let kappa = 2.0 * tau1 / (t as f64 + 2.0);
        v.axpy(-kappa, &g, 1.0);
        bbox.project_in_place(&mut v);
    }
    v
}

/// Deterministic projected gradient on the augmented subproblem, iterated to
/// a fixed-point gap below `tol`. Requires the game's expected gradient.
pub fn inner_solve_exact(
    game: &dyn Game,
    sub: &AugmentedSubproblem,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>, SolverError> {
    let expected = game
        .inner_expected(sub.player, &sub.profile)
        .ok_or(GameError::NoDeterministicOracle(sub.player))?;
    let bbox = game.bounding_box(sub.player);
    let d = sub.prox_center.len();

    // Curvature estimate of the augmented gradient over a probe pattern.
    let mut lip = sub.prox_weight;
    {
        let center = bbox.project(&sub.prox_center);
        let mut g0 = DVector::zeros(d);
        expected(&center, &mut g0);
        let span = (&bbox.hi - &bbox.lo).amax().max(1e-6);
        for axis in 0..d {
            let mut probe = center.clone();
            probe[axis] += 1e-3 * span;
            let mut g1 = DVector::zeros(d);
            expected(&probe, &mut g1);
            let slope = (&g1 - &g0).norm() / (1e-3 * span);
            lip = lip.max(slope + sub.prox_weight);
        }
    }
    let step = 1.0 / (1.5 * lip);

    let mut v = bbox.project(&sub.prox_center);
    let mut g = DVector::zeros(d);
    for _ in 0..max_iter {
        expected(&v, &mut g);
        sub.finish_gradient(&v, &mut g);
        let mut next = v.clone();
        next.axpy(-step, &g, 1.0);
        bbox.project_in_place(&mut next);
        let gap = (&next - &v).norm();
        v = next;
        if gap <= tol * (1.0 + v.norm()) {
            return Ok(v);
        }
    }
    Err(SolverError::InnerMaxIterations(max_iter))
}

/// The averaged update: `tilde + 2 gamma (backward - forward)`. The factor 2
/// comes from the composition of the two reflections, and the difference is
/// taken between the two resolvent outputs, not against `tilde`.
pub fn km_update(tilde: &mut StackState, forward: &StackState, backward: &StackState, gamma: f64) {
    debug_assert!((0.0..=1.0).contains(&gamma));
    let n = tilde.data.len();
    for i in 0..n {
        tilde.data[i] += 2.0 * gamma * (backward.data[i] - forward.data[i]);
    }
}

/// Precomputed tables shared by the four phases.
pub struct SolverEngine<'a> {
    game: &'a dyn Game,
    graph: &'a CommGraph,
    cfg: &'a SplittingConfig,
    sel: SelectionMap,
    dims: Dims,
    c_share: DVector<f64>,
    /// Signed incidences per player: `(edge, +1 tail / -1 head)`.
    player_edges: Vec<Vec<(usize, f64)>>,
}

/// Per-player output of the forward phase.
struct PlayerForward {
    y: DVector<f64>,
    lambda: DVector<f64>,
    inner: usize,
}

impl<'a> SolverEngine<'a> {
    pub fn new(game: &'a dyn Game, graph: &'a CommGraph, cfg: &'a SplittingConfig) -> Self {
        let dims = Dims::new(game, graph);
        let mut player_edges = vec![Vec::new(); dims.players];
        for (e, &(tail, head)) in graph.edges().iter().enumerate() {
            player_edges[tail].push((e, 1.0));
            player_edges[head].push((e, -1.0));
        }
        SolverEngine {
            game,
            graph,
            cfg,
            sel: SelectionMap::new(game.dims()),
            dims,
            c_share: game.resource() / game.player_count() as f64,
            player_edges,
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Laplacian row for player `i` over per-player blocks.
    fn laplacian_row<'b>(&self, i: usize, block: impl Fn(usize) -> nalgebra::DVectorView<'b, f64>) -> DVector<f64> {
        let mut acc = block(i).clone_owned();
        acc *= self.graph.degree(i) as f64;
        for &j in self.graph.neighbors(i) {
            acc.axpy(-1.0, &block(j), 1.0);
        }
        acc
    }

    /// Incidence row for player `i` over per-edge blocks.
    fn incidence_row<'b>(
        &self,
        i: usize,
        len: usize,
        edge_block: impl Fn(usize) -> nalgebra::DVectorView<'b, f64>,
    ) -> DVector<f64> {
        let mut acc = DVector::zeros(len);
        for &(e, sign) in &self.player_edges[i] {
            acc.axpy(sign, &edge_block(e), 1.0);
        }
        acc
    }

    fn forward_for_player(
        &self,
        tilde: &StackState,
        i: usize,
        t_steps: usize,
        mode: InnerMode,
        rng: &mut ChaCha8Rng,
    ) -> Result<PlayerForward, SolverError> {
        let n = self.dims.n;
        let y_lap = self.laplacian_row(i, |j| tilde.y_block(j));
        let mu_inc = self.incidence_row(i, n, |e| tilde.mu_edge(e));
        let lam_lap = self.laplacian_row(i, |j| tilde.lambda_block(j));
        let z_inc = self.incidence_row(i, self.dims.m, |e| tilde.z_edge(e));

        let tau1 = self.cfg.tau1[i];
        let tau2 = self.cfg.tau2[i];
        let (off, len) = self.sel.own_range(i);

        // Estimate blocks move by the consensus terms only.
        let mut y_new = tilde.y_block(i).clone_owned();
        y_new.axpy(-0.5 * tau1 * self.cfg.rho_mu, &y_lap, 1.0);
        y_new.axpy(-0.5 * tau1, &mu_inc, 1.0);

        // Own block solves the augmented best response.
        let a_i = self.game.coupling_block(i);
        let lam_i = tilde.lambda_block(i).clone_owned();
        let mut linear = a_i.transpose() * &lam_i;
        linear.axpy(self.cfg.rho_mu, &y_lap.rows(off, len), 1.0);
        linear.axpy(1.0, &mu_inc.rows(off, len), 1.0);
        linear *= 0.5;
        let prox_center = tilde.y_block(i).rows(off, len).clone_owned();
        let sub = AugmentedSubproblem {
            player: i,
            linear,
            prox_center: prox_center.clone(),
            prox_weight: 1.0 / tau1,
            profile: y_new.clone(),
        };
        let (own_new, inner_used) = match mode {
            InnerMode::Stochastic => (inner_solve(self.game, &sub, t_steps, rng), t_steps),
            InnerMode::Exact { tol, max_iter } => (inner_solve_exact(self.game, &sub, tol, max_iter)?, 0),
        };
        y_new.rows_mut(off, len).copy_from(&own_new);

        // Multiplier update.
        let mut rhs = a_i * (&own_new - 0.5 * &prox_center);
        rhs.axpy(-0.5 * self.cfg.rho_z, &lam_lap, 1.0);
        rhs.axpy(-0.5, &z_inc, 1.0);
        rhs -= &self.c_share;
        let mut lam_new = lam_i.clone();
        lam_new.axpy(tau2, &rhs, 1.0);

        Ok(PlayerForward { y: y_new, lambda: lam_new, inner: inner_used })
    }

    /// First loop: per-player estimates, inexact best response, multiplier
    /// update, and the node reflections.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_player_phase(
        &self,
        tilde: &StackState,
        t_steps: usize,
        mode: InnerMode,
        streams: &mut [ChaCha8Rng],
        parallel: bool,
        forward: &mut StackState,
        reflected: &mut StackState,
    ) -> Result<Vec<usize>, SolverError> {
        let results: Vec<Result<PlayerForward, SolverError>> = if parallel {
            streams
                .par_iter_mut()
                .enumerate()
                .map(|(i, rng)| self.forward_for_player(tilde, i, t_steps, mode, rng))
                .collect()
        } else {
            streams
                .iter_mut()
                .enumerate()
                .map(|(i, rng)| self.forward_for_player(tilde, i, t_steps, mode, rng))
                .collect()
        };
        let mut counts = Vec::with_capacity(self.dims.players);
        for (i, res) in results.into_iter().enumerate() {
            let pf = res?;
            forward.y_block_mut(i).copy_from(&pf.y);
            forward.lambda_block_mut(i).copy_from(&pf.lambda);
            // Reflections, exact by construction.
            let mut y_ref = pf.y;
            y_ref *= 2.0;
            y_ref -= tilde.y_block(i);
            reflected.y_block_mut(i).copy_from(&y_ref);
            let mut l_ref = pf.lambda;
            l_ref *= 2.0;
            l_ref -= tilde.lambda_block(i);
            reflected.lambda_block_mut(i).copy_from(&l_ref);
            counts.push(pf.inner);
        }
        Ok(counts)
    }

    /// Second loop: edge multipliers move along the reflected disagreements.
    pub fn forward_edge_phase(
        &self,
        tilde: &StackState,
        reflected_nodes: &StackState,
        forward: &mut StackState,
        reflected: &mut StackState,
    ) {
        for (e, &(tail, head)) in self.graph.edges().iter().enumerate() {
            let dy = reflected_nodes.y_block(tail) - reflected_nodes.y_block(head);
            let mut mu = tilde.mu_edge(e).clone_owned();
            mu.axpy(0.5 * self.cfg.tau3[e], &dy, 1.0);
            let mut mu_ref = mu.clone();
            mu_ref *= 2.0;
            mu_ref -= tilde.mu_edge(e);
            forward.mu_edge_mut(e).copy_from(&mu);
            reflected.mu_edge_mut(e).copy_from(&mu_ref);

            let dl = reflected_nodes.lambda_block(tail) - reflected_nodes.lambda_block(head);
            let mut z = tilde.z_edge(e).clone_owned();
            z.axpy(0.5 * self.cfg.tau4[e], &dl, 1.0);
            let mut z_ref = z.clone();
            z_ref *= 2.0;
            z_ref -= tilde.z_edge(e);
            forward.z_edge_mut(e).copy_from(&z);
            reflected.z_edge_mut(e).copy_from(&z_ref);
        }
    }

    /// Third loop: project the reflected nodes onto the true local sets and
    /// the nonnegative orthant.
    pub fn backward_player_phase(&self, reflected: &StackState, backward: &mut StackState) -> Result<(), SolverError> {
        let n = self.dims.n;
        for i in 0..self.dims.players {
            let y_lap = self.laplacian_row(i, |j| reflected.y_block(j));
            let mu_inc = self.incidence_row(i, n, |e| reflected.mu_edge(e));
            let tau1 = self.cfg.tau1[i];
            let (off, len) = self.sel.own_range(i);
            let a_i = self.game.coupling_block(i);

            let mut pre = reflected.y_block(i).clone_owned();
            pre.axpy(-0.5 * tau1 * self.cfg.rho_mu, &y_lap, 1.0);
            pre.axpy(-0.5 * tau1, &mu_inc, 1.0);
            let atl = a_i.transpose() * reflected.lambda_block(i);
            pre.rows_mut(off, len).axpy(-0.5 * tau1, &atl, 1.0);
            // Only the own block is constrained; estimates pass through.
            let own = pre.rows(off, len).clone_owned();
            let projected = self.game.local_set(i).project(&own)?;
            pre.rows_mut(off, len).copy_from(&projected);
            backward.y_block_mut(i).copy_from(&pre);

            let lam_lap = self.laplacian_row(i, |j| reflected.lambda_block(j));
            let z_inc = self.incidence_row(i, self.dims.m, |e| reflected.z_edge(e));
            let own_hat = reflected.y_block(i).rows(off, len).clone_owned();
            let mut rhs = &projected - 0.5 * own_hat;
            rhs = a_i * rhs;
            rhs.axpy(-0.5 * self.cfg.rho_z, &lam_lap, 1.0);
            rhs.axpy(-0.5, &z_inc, 1.0);
            let mut lam = reflected.lambda_block(i).clone_owned();
            lam.axpy(self.cfg.tau2[i], &rhs, 1.0);
            for v in lam.iter_mut() {
                *v = v.max(0.0);
            }
            backward.lambda_block_mut(i).copy_from(&lam);
        }
        Ok(())
    }

    /// Fourth loop: edge multipliers against the projected disagreements.
    pub fn backward_edge_phase(&self, reflected: &StackState, backward: &mut StackState) {
        for (e, &(tail, head)) in self.graph.edges().iter().enumerate() {
            let dy_bar = backward.y_block(tail) - backward.y_block(head);
            let dy_hat = reflected.y_block(tail) - reflected.y_block(head);
            let mut mu = reflected.mu_edge(e).clone_owned();
            mu.axpy(self.cfg.tau3[e], &dy_bar, 1.0);
            mu.axpy(-0.5 * self.cfg.tau3[e], &dy_hat, 1.0);
            backward.mu_edge_mut(e).copy_from(&mu);

            let dl_bar = backward.lambda_block(tail) - backward.lambda_block(head);
            let dl_hat = reflected.lambda_block(tail) - reflected.lambda_block(head);
            let mut z = reflected.z_edge(e).clone_owned();
            z.axpy(self.cfg.tau4[e], &dl_bar, 1.0);
            z.axpy(-0.5 * self.cfg.tau4[e], &dl_hat, 1.0);
            backward.z_edge_mut(e).copy_from(&z);
        }
    }
}

fn consensus_metric(state: &StackState, players: usize, block_len: usize, block: impl Fn(usize) -> DVector<f64>) -> f64 {
    let blocks: Vec<DVector<f64>> = (0..players).map(block).collect();
    let mut mean = DVector::zeros(block_len);
    for b in &blocks {
        mean += b;
    }
    mean /= players as f64;
    let _ = state;
    let mut total = 0.0;
    for l in 0..block_len {
        let var: f64 = blocks.iter().map(|b| (b[l] - mean[l]).powi(2)).sum::<f64>() / players as f64;
        total += var.sqrt();
    }
    total
}

/// Execute `opts.iterations` outer iterations from the configured start,
/// recording one metric row per iteration. Deterministic given the oracle's
/// master seed.
pub fn run(
    oracle: &mut GameOracle,
    graph: &CommGraph,
    cfg: &SplittingConfig,
    phi: &PhiOperator,
    opts: &RunOptions,
    sink: &mut dyn MetricsSink,
    mut observer: Option<&mut dyn FnMut(&IterationSnapshot)>,
) -> Result<RunOutcome, SolverError> {
    let game = oracle.game_arc();
    let engine = SolverEngine::new(game.as_ref(), graph, cfg);
    let dims = engine.dims();
    let mut tilde = opts.init.clone().unwrap_or_else(|| StackState::zeros(dims));
    let mut forward = StackState::zeros(dims);
    let mut reflected = StackState::zeros(dims);
    let mut backward = StackState::zeros(dims);

    let sel = SelectionMap::new(game.dims());
    let coupling_rows: Vec<_> = (0..dims.players).map(|i| game.coupling_block(i).clone()).collect();

    let mut init_dist = f64::NAN;
    let mut early_hits = 0usize;
    let mut stopped_early = false;
    let mut iterations_run = 0usize;

    for k in 1..=opts.iterations {
        let started = Instant::now();
        let t_steps = engine_inner_steps(&opts.schedules, k);
        let gamma = opts.schedules.gamma.at(k);

        let (_, streams) = oracle.parts_mut();
        let counts = engine.forward_player_phase(
            &tilde,
            t_steps,
            opts.inner_mode,
            streams,
            opts.parallel,
            &mut forward,
            &mut reflected,
        )?;
        engine.forward_edge_phase(&tilde, &reflected.clone(), &mut forward, &mut reflected);
        engine.backward_player_phase(&reflected, &mut backward)?;
        engine.backward_edge_phase(&reflected, &mut backward);

        if let Some(obs) = observer.as_deref_mut() {
            obs(&IterationSnapshot {
                k,
                tilde: tilde.clone(),
                forward: forward.clone(),
                reflected: reflected.clone(),
                backward: backward.clone(),
                inner_counts: counts.clone(),
            });
        }

        let before = tilde.clone();
        km_update(&mut tilde, &forward, &backward, gamma);
        iterations_run = k;

        // Metrics from the forward (resolvent) output.
        let mut step_state = tilde.clone();
        step_state.data -= &before.data;
        let step_euclid = step_state.data.norm();
        let step_phi = phi.norm(&step_state);

        let (dist_star, dist_init) = match &opts.reference {
            Some(xstar) => {
                let mut acc = 0.0;
                for j in 0..dims.players {
                    acc += (forward.y_block(j) - xstar).norm();
                }
                let avg = acc / dims.players as f64;
                if init_dist.is_nan() {
                    init_dist = avg;
                }
                let star_norm = xstar.norm().max(f64::MIN_POSITIVE);
                (avg / star_norm, if init_dist > 0.0 { avg / init_dist } else { 0.0 })
            }
            None => (f64::NAN, f64::NAN),
        };

        let primal = consensus_metric(&forward, dims.players, dims.n, |j| forward.y_block(j).clone_owned());
        let dual = consensus_metric(&forward, dims.players, dims.m, |j| forward.lambda_block(j).clone_owned());

        let own = forward.own_decisions(&sel);
        let mut ax = DVector::zeros(dims.m);
        for i in 0..dims.players {
            let (off, len) = sel.own_range(i);
            ax += &coupling_rows[i] * own.rows(off, len);
        }
        let violation = (ax - game.resource()).map(|v| v.max(0.0)).norm();

        sink.record(&RunRecord {
            k,
            dist_avg_norm_star: dist_star,
            dist_avg_norm_init: dist_init,
            step_euclid,
            step_phi,
            primal_consensus: primal,
            dual_consensus: dual,
            constraint_violation: violation,
            inner_steps: *counts.iter().max().unwrap_or(&0),
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
        });

        if let Some(es) = &opts.early_stop {
            if step_euclid < es.step_tol {
                early_hits += 1;
                if early_hits >= es.consecutive {
                    stopped_early = true;
                    break;
                }
            } else {
                early_hits = 0;
            }
        }
    }

    Ok(RunOutcome {
        state: tilde,
        forward,
        iterations_run,
        stopped_early,
    })
}

fn engine_inner_steps(schedules: &Schedules, k: usize) -> usize {
    schedules.inner.at(k)
}
