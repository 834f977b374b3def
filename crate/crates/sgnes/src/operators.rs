//! Monotone-operator machinery for the splitting solver: the stacked
//! primal/dual state, selection maps, the preconditioner that makes both
//! resolvents distributed, step-size certification, and numeric probes of
//! the standing monotonicity conditions.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::{Game, GameError, GameOracle};
use crate::graph::CommGraph;

/// Above this total dimension the positive-definiteness certificate switches
/// from a dense factorization to a Lanczos bound.
pub const DENSE_CERTIFICATE_LIMIT: usize = 5000;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("preconditioner is not positive definite")]
    NotPositiveDefinite,
    #[error("step-size vector {name} has length {got}, expected {expected}")]
    StepSizeLength { name: &'static str, expected: usize, got: usize },
    #[error("{name} must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// Dimensions of the stacked iterate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Number of players `N`.
    pub players: usize,
    /// Total decision dimension `n`.
    pub n: usize,
    /// Number of coupling constraints `m`.
    pub m: usize,
    /// Number of communication edges `E`.
    pub edges: usize,
}

impl Dims {
    pub fn new(game: &dyn Game, graph: &CommGraph) -> Self {
        Dims {
            players: game.player_count(),
            n: game.total_dim(),
            m: game.coupling_dim(),
            edges: graph.edge_count(),
        }
    }

    pub fn y_len(&self) -> usize {
        self.n * self.players
    }
    pub fn lambda_len(&self) -> usize {
        self.m * self.players
    }
    pub fn mu_len(&self) -> usize {
        self.n * self.edges
    }
    pub fn z_len(&self) -> usize {
        self.m * self.edges
    }
    pub fn total(&self) -> usize {
        self.y_len() + self.lambda_len() + self.mu_len() + self.z_len()
    }
    pub fn lambda_offset(&self) -> usize {
        self.y_len()
    }
    pub fn mu_offset(&self) -> usize {
        self.y_len() + self.lambda_len()
    }
    pub fn z_offset(&self) -> usize {
        self.mu_offset() + self.mu_len()
    }
}

/// The stacked iterate `[y; lambda; mu; z]`: per-player augmented decisions
/// and resource multipliers, per-edge consensus multipliers. Stored flat so
/// reflections and averaged updates are plain vector arithmetic.
#[derive(Debug, Clone, PartialEq)]
pub struct StackState {
    dims: Dims,
    pub data: DVector<f64>,
}

impl StackState {
    pub fn zeros(dims: Dims) -> Self {
        StackState { dims, data: DVector::zeros(dims.total()) }
    }

    pub fn from_flat(dims: Dims, data: DVector<f64>) -> Self {
        assert_eq!(data.len(), dims.total(), "stack partition mismatch");
        StackState { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn y_block(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.data.rows(i * self.dims.n, self.dims.n)
    }
    pub fn y_block_mut(&mut self, i: usize) -> nalgebra::DVectorViewMut<'_, f64> {
        self.data.rows_mut(i * self.dims.n, self.dims.n)
    }
    pub fn lambda_block(&self, i: usize) -> nalgebra::DVectorView<'_, f64> {
        self.data.rows(self.dims.lambda_offset() + i * self.dims.m, self.dims.m)
    }
    pub fn lambda_block_mut(&mut self, i: usize) -> nalgebra::DVectorViewMut<'_, f64> {
        self.data.rows_mut(self.dims.lambda_offset() + i * self.dims.m, self.dims.m)
    }
    pub fn mu_edge(&self, e: usize) -> nalgebra::DVectorView<'_, f64> {
        self.data.rows(self.dims.mu_offset() + e * self.dims.n, self.dims.n)
    }
    pub fn mu_edge_mut(&mut self, e: usize) -> nalgebra::DVectorViewMut<'_, f64> {
        self.data.rows_mut(self.dims.mu_offset() + e * self.dims.n, self.dims.n)
    }
    pub fn z_edge(&self, e: usize) -> nalgebra::DVectorView<'_, f64> {
        self.data.rows(self.dims.z_offset() + e * self.dims.m, self.dims.m)
    }
    pub fn z_edge_mut(&mut self, e: usize) -> nalgebra::DVectorViewMut<'_, f64> {
        self.data.rows_mut(self.dims.z_offset() + e * self.dims.m, self.dims.m)
    }

    /// Stack of every player's own decision, `R y` in matrix terms.
    pub fn own_decisions(&self, sel: &SelectionMap) -> DVector<f64> {
        let mut x = DVector::zeros(self.dims.n);
        for i in 0..self.dims.players {
            let (off, len) = sel.own_range(i);
            x.rows_mut(off, len).copy_from(&self.y_block(i).rows(off, len));
        }
        x
    }
}

/// Per-player selection of the own block inside an augmented decision: the
/// offsets realizing `R_i` and the stacked `R`.
#[derive(Debug, Clone)]
pub struct SelectionMap {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    n: usize,
}

impl SelectionMap {
    pub fn new(dims: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(dims.len());
        let mut acc = 0;
        for &d in dims {
            offsets.push(acc);
            acc += d;
        }
        SelectionMap { dims: dims.to_vec(), offsets, n: acc }
    }

    pub fn player_count(&self) -> usize {
        self.dims.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `(offset, length)` of player `i`'s own block within a profile.
    pub fn own_range(&self, i: usize) -> (usize, usize) {
        (self.offsets[i], self.dims[i])
    }

    /// `R` applied to a stacked augmented decision: extract every player's
    /// own block from its profile copy.
    pub fn extract(&self, y: &DVector<f64>) -> DVector<f64> {
        let nn = self.player_count();
        let mut x = DVector::zeros(self.n);
        for i in 0..nn {
            let (off, len) = self.own_range(i);
            x.rows_mut(off, len).copy_from(&y.rows(i * self.n + off, len));
        }
        x
    }

    /// `R^T` applied to a decision stack: embed each player's block into the
    /// own slot of its profile copy, zero elsewhere.
    pub fn embed(&self, x: &DVector<f64>) -> DVector<f64> {
        let nn = self.player_count();
        let mut y = DVector::zeros(self.n * nn);
        for i in 0..nn {
            let (off, len) = self.own_range(i);
            y.rows_mut(i * self.n + off, len).copy_from(&x.rows(off, len));
        }
        y
    }
}

/// Consensus gains and the four step-size blocks of the preconditioner,
/// together with cached graph data.
#[derive(Debug, Clone)]
pub struct SplittingConfig {
    pub rho_mu: f64,
    pub rho_z: f64,
    /// Per-player proximal steps.
    pub tau1: Vec<f64>,
    /// Per-player multiplier steps.
    pub tau2: Vec<f64>,
    /// Per-edge steps for the decision-consensus multipliers.
    pub tau3: Vec<f64>,
    /// Per-edge steps for the multiplier-consensus multipliers.
    pub tau4: Vec<f64>,
    /// Smallest positive eigenvalue of the communication Laplacian.
    pub sigma1: f64,
    /// Whether the sufficient Gershgorin step bounds hold. Configs may
    /// violate them deliberately; the factorization certificate is the
    /// authoritative gate.
    pub satisfies_step_bounds: bool,
}

impl SplittingConfig {
    pub fn new(
        graph: &CommGraph,
        game: &dyn Game,
        rho_mu: f64,
        rho_z: f64,
        tau1: Vec<f64>,
        tau2: Vec<f64>,
        tau3: Vec<f64>,
        tau4: Vec<f64>,
    ) -> Result<Self, OperatorError> {
        let nn = game.player_count();
        let e = graph.edge_count();
        for (name, v) in [("rho_mu", rho_mu), ("rho_z", rho_z)] {
            if v <= 0.0 {
                return Err(OperatorError::NonPositive { name, value: v });
            }
        }
        for (name, vec, want) in [
            ("tau1", &tau1, nn),
            ("tau2", &tau2, nn),
            ("tau3", &tau3, e),
            ("tau4", &tau4, e),
        ] {
            if vec.len() != want {
                return Err(OperatorError::StepSizeLength { name, expected: want, got: vec.len() });
            }
            if let Some(&bad) = vec.iter().find(|&&t| t <= 0.0) {
                return Err(OperatorError::NonPositive { name, value: bad });
            }
        }
        let satisfies_step_bounds = step_bounds_hold(graph, game, rho_mu, rho_z, &tau1, &tau2, &tau3, &tau4);
        Ok(SplittingConfig {
            rho_mu,
            rho_z,
            tau1,
            tau2,
            tau3,
            tau4,
            sigma1: graph.lambda2(),
            satisfies_step_bounds,
        })
    }

    /// Uniform step sizes across players and edges.
    pub fn uniform(
        graph: &CommGraph,
        game: &dyn Game,
        rho_mu: f64,
        rho_z: f64,
        t1: f64,
        t2: f64,
        t3: f64,
        t4: f64,
    ) -> Result<Self, OperatorError> {
        let nn = game.player_count();
        let e = graph.edge_count();
        Self::new(
            graph,
            game,
            rho_mu,
            rho_z,
            vec![t1; nn],
            vec![t2; nn],
            vec![t3; e],
            vec![t4; e],
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn step_bounds_hold(
    graph: &CommGraph,
    game: &dyn Game,
    rho_mu: f64,
    rho_z: f64,
    tau1: &[f64],
    tau2: &[f64],
    tau3: &[f64],
    tau4: &[f64],
) -> bool {
    let nn = game.player_count();
    for i in 0..nn {
        let a = game.coupling_block(i);
        let d = graph.degree(i) as f64;
        let col = matrix_norm_1(a);
        let row = matrix_norm_inf(a);
        if 1.0 / tau1[i] <= 0.5 * col + (0.5 + rho_mu) * d {
            return false;
        }
        if 1.0 / tau2[i] <= 0.5 * row + (0.5 + rho_z) * d {
            return false;
        }
    }
    tau3.iter().chain(tau4.iter()).all(|&t| t < 1.0)
}

fn matrix_norm_1(a: &DMatrix<f64>) -> f64 {
    (0..a.ncols())
        .map(|c| a.column(c).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn matrix_norm_inf(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows())
        .map(|r| a.row(r).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Step sizes from the sufficient bounds, scaled by `safety` in `(0, 1)`.
/// The returned config always passes the factorization certificate.
pub fn assumption6_step_sizes(
    graph: &CommGraph,
    game: &dyn Game,
    rho_mu: f64,
    rho_z: f64,
    safety: f64,
) -> Result<SplittingConfig, OperatorError> {
    if !(0.0 < safety && safety < 1.0) {
        return Err(OperatorError::NonPositive { name: "safety", value: safety });
    }
    let nn = game.player_count();
    let mut tau1 = Vec::with_capacity(nn);
    let mut tau2 = Vec::with_capacity(nn);
    for i in 0..nn {
        let a = game.coupling_block(i);
        let d = graph.degree(i) as f64;
        let b1 = 0.5 * matrix_norm_1(a) + (0.5 + rho_mu) * d;
        let b2 = 0.5 * matrix_norm_inf(a) + (0.5 + rho_z) * d;
        tau1.push(safety / b1.max(f64::MIN_POSITIVE.sqrt()));
        tau2.push(safety / b2.max(f64::MIN_POSITIVE.sqrt()));
    }
    let e = graph.edge_count();
    SplittingConfig::new(graph, game, rho_mu, rho_z, tau1, tau2, vec![safety; e], vec![safety; e])
}

/// Matrix-free action of the design preconditioner plus its induced norm.
/// The positive-definiteness certificate runs at construction: a dense
/// Cholesky factorization at desk scale, a Lanczos eigenvalue bound beyond
/// [`DENSE_CERTIFICATE_LIMIT`].
pub struct PhiOperator {
    dims: Dims,
    cfg: SplittingConfig,
    sel: SelectionMap,
    coupling: Vec<DMatrix<f64>>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    /// Signed edge incidences per player: `(edge, +1/-1)`.
    player_edges: Vec<Vec<(usize, f64)>>,
    min_eigenvalue: f64,
}

impl PhiOperator {
    pub fn new(graph: &CommGraph, game: &dyn Game, cfg: &SplittingConfig) -> Result<Self, OperatorError> {
        let dims = Dims::new(game, graph);
        let sel = SelectionMap::new(game.dims());
        let coupling = (0..dims.players).map(|i| game.coupling_block(i).clone()).collect();
        let neighbors = (0..dims.players).map(|i| graph.neighbors(i).to_vec()).collect();
        let mut player_edges = vec![Vec::new(); dims.players];
        for (e, &(tail, head)) in graph.edges().iter().enumerate() {
            player_edges[tail].push((e, 1.0));
            player_edges[head].push((e, -1.0));
        }
        let mut phi = PhiOperator {
            dims,
            cfg: cfg.clone(),
            sel,
            coupling,
            edges: graph.edges().to_vec(),
            neighbors,
            player_edges,
            min_eigenvalue: f64::NAN,
        };
        phi.min_eigenvalue = phi.certify()?;
        Ok(phi)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Lower bound on the spectrum established by the certificate.
    pub fn certified_min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn apply(&self, v: &StackState) -> StackState {
        let d = self.dims;
        let mut out = StackState::zeros(d);

        for i in 0..d.players {
            // y rows: tau1^{-1} v_y - (rho_mu/2) L_n v_y - 1/2 R^T Lambda^T v_lambda - 1/2 B_n v_mu
            let mut acc = DVector::zeros(d.n);
            acc.axpy(1.0 / self.cfg.tau1[i], &v.y_block(i), 0.0);
            let deg = self.neighbors[i].len() as f64;
            acc.axpy(-0.5 * self.cfg.rho_mu * deg, &v.y_block(i), 1.0);
            for &j in &self.neighbors[i] {
                acc.axpy(0.5 * self.cfg.rho_mu, &v.y_block(j), 1.0);
            }
            let (off, len) = self.sel.own_range(i);
            let at_l = self.coupling[i].transpose() * v.lambda_block(i);
            acc.rows_mut(off, len).axpy(-0.5, &at_l, 1.0);
            for &(e, sign) in &self.player_edges[i] {
                acc.axpy(-0.5 * sign, &v.mu_edge(e), 1.0);
            }
            out.y_block_mut(i).copy_from(&acc);

            // lambda rows: -1/2 Lambda R v_y + tau2^{-1} v_lambda - (rho_z/2) L_m v_lambda - 1/2 B_m v_z
            let own = v.y_block(i).rows(off, len).clone_owned();
            let mut accl = &self.coupling[i] * own;
            accl *= -0.5;
            accl.axpy(1.0 / self.cfg.tau2[i], &v.lambda_block(i), 1.0);
            accl.axpy(-0.5 * self.cfg.rho_z * deg, &v.lambda_block(i), 1.0);
            for &j in &self.neighbors[i] {
                accl.axpy(0.5 * self.cfg.rho_z, &v.lambda_block(j), 1.0);
            }
            for &(e, sign) in &self.player_edges[i] {
                accl.axpy(-0.5 * sign, &v.z_edge(e), 1.0);
            }
            out.lambda_block_mut(i).copy_from(&accl);
        }

        for (e, &(tail, head)) in self.edges.iter().enumerate() {
            // mu rows: -1/2 B_n^T v_y + tau3^{-1} v_mu
            let mut accm = v.y_block(tail).clone_owned();
            accm -= v.y_block(head);
            accm *= -0.5;
            accm.axpy(1.0 / self.cfg.tau3[e], &v.mu_edge(e), 1.0);
            out.mu_edge_mut(e).copy_from(&accm);

            // z rows: -1/2 B_m^T v_lambda + tau4^{-1} v_z
            let mut accz = v.lambda_block(tail).clone_owned();
            accz -= v.lambda_block(head);
            accz *= -0.5;
            accz.axpy(1.0 / self.cfg.tau4[e], &v.z_edge(e), 1.0);
            out.z_edge_mut(e).copy_from(&accz);
        }
        out
    }

    /// Inner product `<u, v>` in the preconditioned space.
    pub fn inner(&self, u: &StackState, v: &StackState) -> f64 {
        self.apply(v).data.dot(&u.data)
    }

    /// Norm induced by the preconditioner.
    pub fn norm(&self, v: &StackState) -> f64 {
        self.inner(v, v).max(0.0).sqrt()
    }

    /// Dense assembly by applying to basis vectors; desk scale only.
    pub fn dense(&self) -> DMatrix<f64> {
        let t = self.dims.total();
        let mut m = DMatrix::zeros(t, t);
        let mut basis = StackState::zeros(self.dims);
        for c in 0..t {
            basis.data[c] = 1.0;
            let col = self.apply(&basis);
            m.column_mut(c).copy_from(&col.data);
            basis.data[c] = 0.0;
        }
        m
    }

    /// Solve `Phi x = b` densely. Used by fixed-point assembly in tests and
    /// diagnostics, not on the iteration path.
    pub fn solve_dense(&self, b: &StackState) -> Option<StackState> {
        let m = self.dense();
        let x = m.lu().solve(&b.data)?;
        Some(StackState::from_flat(self.dims, x))
    }

    fn certify(&self) -> Result<f64, OperatorError> {
        let t = self.dims.total();
        if t <= DENSE_CERTIFICATE_LIMIT {
            let dense = self.dense();
            match dense.cholesky() {
                Some(chol) => {
                    // Inverse power iteration on the factor locates the
                    // smallest eigenvalue for reporting; the factorization
                    // itself is the certificate.
                    let mut v = DVector::from_fn(t, |i, _| ((i as f64 + 1.0) * 0.331).sin());
                    v /= v.norm();
                    for _ in 0..40 {
                        let w = chol.solve(&v);
                        v = &w / w.norm();
                    }
                    let min = self.inner(
                        &StackState::from_flat(self.dims, v.clone()),
                        &StackState::from_flat(self.dims, v),
                    );
                    if min <= 0.0 {
                        return Err(OperatorError::NotPositiveDefinite);
                    }
                    Ok(min)
                }
                None => Err(OperatorError::NotPositiveDefinite),
            }
        } else {
            let min = self.lanczos_min_eigenvalue(80);
            if min <= 1e-10 {
                return Err(OperatorError::NotPositiveDefinite);
            }
            Ok(min)
        }
    }

    /// Smallest Ritz value of a full-reorthogonalization Lanczos run; an
    /// approximate but scalable spectrum bound.
    fn lanczos_min_eigenvalue(&self, iters: usize) -> f64 {
        let t = self.dims.total();
        let steps = iters.min(t);
        let mut basis: Vec<DVector<f64>> = Vec::with_capacity(steps);
        let mut alphas = Vec::with_capacity(steps);
        let mut betas = Vec::with_capacity(steps);
        let mut q = DVector::from_fn(t, |i, _| ((i as f64 + 1.0) * 0.7390851).sin());
        q /= q.norm();
        let mut prev: Option<DVector<f64>> = None;
        let mut beta_prev = 0.0;
        for _ in 0..steps {
            basis.push(q.clone());
            let mut w = self.apply(&StackState::from_flat(self.dims, q.clone())).data;
            if let Some(p) = &prev {
                w.axpy(-beta_prev, p, 1.0);
            }
            let alpha = w.dot(&q);
            w.axpy(-alpha, &q, 1.0);
            for b in &basis {
                let c = w.dot(b);
                w.axpy(-c, b, 1.0);
            }
            alphas.push(alpha);
            let beta = w.norm();
            if beta < 1e-12 {
                break;
            }
            betas.push(beta);
            prev = Some(q.clone());
            beta_prev = beta;
            q = w / beta;
        }
        let k = alphas.len();
        let mut tri = DMatrix::zeros(k, k);
        for i in 0..k {
            tri[(i, i)] = alphas[i];
            if i + 1 < k && i < betas.len() {
                tri[(i, i + 1)] = betas[i];
                tri[(i + 1, i)] = betas[i];
            }
        }
        tri.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMode {
    Deterministic,
    Sampled,
}

/// The stacked gradient each player sees through its own estimates: player
/// `i`'s partial gradient evaluated at its local profile copy.
pub fn extended_pseudogradient(
    oracle: &mut GameOracle,
    y: &DVector<f64>,
    mode: GradientMode,
) -> Result<DVector<f64>, GameError> {
    let n = oracle.game().total_dim();
    let nn = oracle.game().player_count();
    assert_eq!(y.len(), n * nn, "stacked estimate length mismatch");
    let mut out = DVector::zeros(n);
    for i in 0..nn {
        let profile = y.rows(i * n, n).clone_owned();
        let g = match mode {
            GradientMode::Deterministic => oracle.expected(i, &profile)?,
            GradientMode::Sampled => oracle.sample(i, &profile),
        };
        let off = oracle.game().own_offset(i);
        out.rows_mut(off, g.len()).copy_from(&g);
    }
    Ok(out)
}

/// Full-information pseudogradient at a true profile `x`.
pub fn pseudogradient(game: &dyn Game, x: &DVector<f64>) -> Result<DVector<f64>, GameError> {
    let mut out = DVector::zeros(game.total_dim());
    for i in 0..game.player_count() {
        let g = game
            .expected_own_gradient(i, x)
            .ok_or(GameError::NoDeterministicOracle(i))?;
        out.rows_mut(game.own_offset(i), g.len()).copy_from(&g);
    }
    Ok(out)
}

/// Minimal-norm distance to the normal cone of an interval at `x`:
/// `min || s + nu ||` over `nu` in the cone.
fn interval_cone_residual(x: f64, lo: f64, hi: f64, s: f64, tol: f64) -> f64 {
    let at_lo = x - lo <= tol;
    let at_hi = hi - x <= tol;
    match (at_lo, at_hi) {
        (true, true) => 0.0,          // degenerate interval: cone is all of R
        (true, false) => (-s).max(0.0),
        (false, true) => s.max(0.0),
        (false, false) => s.abs(),
    }
}

/// Computable infeasibility measure for the zero-inclusion of the stacked
/// KKT operator: per row, the norm of the minimal-norm element (normal-cone
/// tests for boxes and the orthant, a natural-map residual when the local
/// set has halfspace cuts).
pub fn operator_t_residual(
    psi: &StackState,
    oracle: &GameOracle,
    graph: &CommGraph,
    cfg: &SplittingConfig,
) -> Result<f64, GameError> {
    let game = oracle.game();
    let d = psi.dims();
    let sel = SelectionMap::new(game.dims());
    let bound_tol = 1e-9;
    let mut total = 0.0f64;

    // Per-player resource shares: uniform split of c.
    let c_share = game.resource() / d.players as f64;

    // Signed edge incidence per player.
    let mut player_edges = vec![Vec::new(); d.players];
    for (e, &(tail, head)) in graph.edges().iter().enumerate() {
        player_edges[tail].push((e, 1.0));
        player_edges[head].push((e, -1.0));
    }

    for i in 0..d.players {
        let profile = psi.y_block(i).clone_owned();
        let grad = game
            .expected_own_gradient(i, &profile)
            .ok_or(GameError::NoDeterministicOracle(i))?;
        let a_i = game.coupling_block(i);
        let lam = psi.lambda_block(i).clone_owned();

        // Smooth part of the y rows for player i.
        let mut s = DVector::zeros(d.n);
        let (off, len) = sel.own_range(i);
        s.rows_mut(off, len).copy_from(&grad);
        let atl = a_i.transpose() * &lam;
        s.rows_mut(off, len).axpy(1.0, &atl, 1.0);
        let deg = graph.degree(i) as f64;
        s.axpy(cfg.rho_mu * deg, &psi.y_block(i), 1.0);
        for &j in graph.neighbors(i) {
            s.axpy(-cfg.rho_mu, &psi.y_block(j), 1.0);
        }
        for &(e, sign) in &player_edges[i] {
            s.axpy(sign, &psi.mu_edge(e), 1.0);
        }

        // Estimate coordinates are unconstrained: the row must vanish.
        for j in 0..d.n {
            if j < off || j >= off + len {
                total += s[j] * s[j];
            }
        }
        // Own block: normal cone of the local set.
        let set = game.local_set(i);
        let own = profile.rows(off, len).clone_owned();
        let s_own = s.rows(off, len).clone_owned();
        if set.is_box() {
            for j in 0..len {
                let r = interval_cone_residual(own[j], set.bounds.lo[j], set.bounds.hi[j], s_own[j], bound_tol);
                total += r * r;
            }
        } else {
            // Natural-map residual for polyhedral sets.
            let shifted = &own - &s_own;
            let proj = set
                .project(&shifted)
                .map_err(|e| GameError::OracleFailure(format!("projection failed: {e}")))?;
            total += (&own - proj).norm_squared();
        }

        // lambda rows: N_{R+}(lambda) - A_i y_i^i + c_i + (B_m z)_i + rho_z (L_m lambda)_i
        let mut sl = -(a_i * &own);
        sl += &c_share;
        sl.axpy(cfg.rho_z * deg, &lam, 1.0);
        for &j in graph.neighbors(i) {
            sl.axpy(-cfg.rho_z, &psi.lambda_block(j), 1.0);
        }
        for &(e, sign) in &player_edges[i] {
            sl.axpy(sign, &psi.z_edge(e), 1.0);
        }
        for r in 0..d.m {
            let res = if lam[r] <= bound_tol {
                (-sl[r]).max(0.0)
            } else {
                sl[r].abs()
            };
            total += res * res;
        }
    }

    // mu rows: -B_n^T y; z rows: -B_m^T lambda.
    for &(tail, head) in graph.edges() {
        let dy = psi.y_block(tail) - psi.y_block(head);
        total += dy.norm_squared();
        let dl = psi.lambda_block(tail) - psi.lambda_block(head);
        total += dl.norm_squared();
    }

    Ok(total.sqrt())
}

/// Build the consensus stack corresponding to a KKT pair `(x*, lambda*)`:
/// decisions and multipliers replicated across players, zero
/// decision-consensus multipliers, and multiplier-consensus duals solved in
/// least squares from the per-player resource balance.
pub fn consensus_stack_from_kkt(
    game: &dyn Game,
    graph: &CommGraph,
    x_star: &DVector<f64>,
    lambda_star: &DVector<f64>,
) -> StackState {
    let dims = Dims::new(game, graph);
    let sel = SelectionMap::new(game.dims());
    let mut psi = StackState::zeros(dims);
    for i in 0..dims.players {
        psi.y_block_mut(i).copy_from(x_star);
        psi.lambda_block_mut(i).copy_from(lambda_star);
    }
    // Residual of the coupled constraint, split evenly.
    let ax = coupling_apply(game, x_star, &sel);
    let slack = (&ax - game.resource()) / dims.players as f64;
    let c_share = game.resource() / dims.players as f64;

    // Solve B zeta_r = rhs_r per constraint coordinate, minimum norm.
    let b = graph.incidence();
    let pinv = b.clone().svd(true, true).pseudo_inverse(1e-12).expect("incidence pseudo-inverse");
    for r in 0..dims.m {
        let rhs = DVector::from_fn(dims.players, |i, _| {
            let (off, len) = sel.own_range(i);
            let own = x_star.rows(off, len);
            (game.coupling_block(i) * own)[r] - c_share[r] - slack[r]
        });
        let zeta = &pinv * rhs;
        for e in 0..dims.edges {
            psi.z_edge_mut(e)[r] = zeta[e];
        }
    }
    psi
}

fn coupling_apply(game: &dyn Game, x: &DVector<f64>, sel: &SelectionMap) -> DVector<f64> {
    let mut ax = DVector::zeros(game.coupling_dim());
    for i in 0..game.player_count() {
        let (off, len) = sel.own_range(i);
        ax += game.coupling_block(i) * x.rows(off, len);
    }
    ax
}

/// Lift a zero of the stacked operator to the fixed point of the reflected
/// composition: `psi_tilde = psi* + Phi^{-1} a*`, with `a*` the smooth
/// selection of the forward half at `psi*`.
pub fn splitting_fixed_point(
    game: &dyn Game,
    graph: &CommGraph,
    cfg: &SplittingConfig,
    phi: &PhiOperator,
    psi_star: &StackState,
) -> Result<StackState, OperatorError> {
    let d = psi_star.dims();
    let sel = SelectionMap::new(game.dims());
    let c_share = game.resource() / d.players as f64;
    let mut a = StackState::zeros(d);
    let mut player_edges = vec![Vec::new(); d.players];
    for (e, &(tail, head)) in graph.edges().iter().enumerate() {
        player_edges[tail].push((e, 1.0));
        player_edges[head].push((e, -1.0));
    }
    for i in 0..d.players {
        let profile = psi_star.y_block(i).clone_owned();
        let grad = game
            .expected_own_gradient(i, &profile)
            .ok_or(GameError::NoDeterministicOracle(i))?;
        let (off, len) = sel.own_range(i);
        // y rows of a*: (rho_mu/2) L_n y + 1/2 R^T Lambda^T lambda + 1/2 B_n mu + R^T F_e(y)
        let mut ay = DVector::zeros(d.n);
        let deg = graph.degree(i) as f64;
        ay.axpy(0.5 * cfg.rho_mu * deg, &psi_star.y_block(i), 1.0);
        for &j in graph.neighbors(i) {
            ay.axpy(-0.5 * cfg.rho_mu, &psi_star.y_block(j), 1.0);
        }
        let atl = game.coupling_block(i).transpose() * psi_star.lambda_block(i);
        ay.rows_mut(off, len).axpy(0.5, &atl, 1.0);
        for &(e, sign) in &player_edges[i] {
            ay.axpy(0.5 * sign, &psi_star.mu_edge(e), 1.0);
        }
        ay.rows_mut(off, len).axpy(1.0, &grad, 1.0);
        a.y_block_mut(i).copy_from(&ay);

        // lambda rows: -1/2 Lambda R y + (rho_z/2) L_m lambda + 1/2 B_m z + c_i
        let own = profile.rows(off, len).clone_owned();
        let mut al = game.coupling_block(i) * own;
        al *= -0.5;
        al.axpy(0.5 * cfg.rho_z * deg, &psi_star.lambda_block(i), 1.0);
        for &j in graph.neighbors(i) {
            al.axpy(-0.5 * cfg.rho_z, &psi_star.lambda_block(j), 1.0);
        }
        for &(e, sign) in &player_edges[i] {
            al.axpy(0.5 * sign, &psi_star.z_edge(e), 1.0);
        }
        al += &c_share;
        a.lambda_block_mut(i).copy_from(&al);
    }
    for (e, &(tail, head)) in graph.edges().iter().enumerate() {
        let dy = (psi_star.y_block(tail) - psi_star.y_block(head)) * -0.5;
        a.mu_edge_mut(e).copy_from(&dy);
        let dl = (psi_star.lambda_block(tail) - psi_star.lambda_block(head)) * -0.5;
        a.z_edge_mut(e).copy_from(&dl);
    }
    let delta = phi.solve_dense(&a).ok_or(OperatorError::NotPositiveDefinite)?;
    let mut out = psi_star.clone();
    out.data += delta.data;
    Ok(out)
}

/// Sampled estimates of the monotonicity and Lipschitz moduli that the
/// convergence conditions reference, plus the implied consensus-gain bound.
#[derive(Debug, Clone)]
pub struct MonotonicityReport {
    /// Sampled strong-monotonicity modulus of the pseudogradient.
    pub eta: f64,
    /// Sampled Lipschitz modulus of the pseudogradient.
    pub theta1: f64,
    /// Sampled Lipschitz modulus of the extended pseudogradient.
    pub theta2: f64,
    /// Smallest sampled monotonicity gap `<dx, dF>`.
    pub min_gap: f64,
    /// Consensus gain the sampled moduli would require.
    pub rho_mu_required: f64,
    /// Whether the supplied `rho_mu` meets the sampled requirement.
    pub rho_mu_ok: bool,
}

/// Estimate the moduli by sampling point pairs from `sampler` (full
/// profiles in `R^n`) and estimate pairs from the product of bounding boxes.
pub fn monotonicity_probe(
    game: &dyn Game,
    sampler: &mut dyn FnMut(&mut ChaCha8Rng) -> DVector<f64>,
    trials: usize,
    rho_mu: f64,
    sigma1: f64,
    rng: &mut ChaCha8Rng,
) -> Result<MonotonicityReport, GameError> {
    let mut eta = f64::INFINITY;
    let mut theta1: f64 = 0.0;
    let mut min_gap = f64::INFINITY;
    for _ in 0..trials {
        let x = sampler(rng);
        let xp = sampler(rng);
        let dx = &x - &xp;
        let norm_sq = dx.norm_squared();
        if norm_sq < 1e-16 {
            continue;
        }
        let df = pseudogradient(game, &x)? - pseudogradient(game, &xp)?;
        let gap = dx.dot(&df);
        min_gap = min_gap.min(gap);
        eta = eta.min(gap / norm_sq);
        theta1 = theta1.max(df.norm() / norm_sq.sqrt());
    }

    // Extended map over the product of bounding boxes.
    let n = game.total_dim();
    let nn = game.player_count();
    let mut theta2: f64 = 0.0;
    let sample_stack = |rng: &mut ChaCha8Rng| -> DVector<f64> {
        let mut y = DVector::zeros(n * nn);
        for i in 0..nn {
            let b = game.bounding_box(i);
            for pl in 0..nn {
                let off = game.own_offset(i);
                for j in 0..b.dim() {
                    let u: f64 = rng.gen();
                    y[pl * n + off + j] = b.lo[j] + u * (b.hi[j] - b.lo[j]);
                }
            }
        }
        y
    };
    let ext = |y: &DVector<f64>| -> Result<DVector<f64>, GameError> {
        let mut out = DVector::zeros(n);
        for i in 0..nn {
            let profile = y.rows(i * n, n).clone_owned();
            let g = game
                .expected_own_gradient(i, &profile)
                .ok_or(GameError::NoDeterministicOracle(i))?;
            out.rows_mut(game.own_offset(i), g.len()).copy_from(&g);
        }
        Ok(out)
    };
    for _ in 0..trials {
        let y = sample_stack(rng);
        let yp = sample_stack(rng);
        let dy = (&y - &yp).norm();
        if dy < 1e-12 {
            continue;
        }
        let dfe = (ext(&y)? - ext(&yp)?).norm();
        theta2 = theta2.max(dfe / dy);
    }

    let rho_required = if eta > 0.0 && sigma1 > 0.0 {
        (2.0 / sigma1) * ((theta1 + theta2).powi(2) / (4.0 * eta) + theta2)
    } else {
        f64::INFINITY
    };
    Ok(MonotonicityReport {
        eta,
        theta1,
        theta2,
        min_gap,
        rho_mu_required: rho_required,
        rho_mu_ok: rho_mu >= rho_required,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::aux_stream;
    use crate::games::quadratic::QuadraticGame;
    use crate::sets::{BoxBounds, LocalSet};
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn line_graph(n: usize) -> CommGraph {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i, i + 1)).collect();
        CommGraph::from_edges(n, &edges).unwrap()
    }

    /// Identity-pseudogradient game: F(x) = x.
    struct IdentityGame {
        dims: Vec<usize>,
        a: DMatrix<f64>,
        c: DVector<f64>,
        set: LocalSet,
        bbox: BoxBounds,
    }

    impl IdentityGame {
        fn new(players: usize, each: usize) -> Self {
            let bounds = BoxBounds::new(DVector::from_element(each, -2.0), DVector::from_element(each, 2.0)).unwrap();
            IdentityGame {
                dims: vec![each; players],
                a: DMatrix::zeros(1, each),
                c: DVector::zeros(1),
                set: LocalSet::from_box(bounds.clone()),
                bbox: bounds,
            }
        }
    }

    impl Game for IdentityGame {
        fn player_count(&self) -> usize {
            self.dims.len()
        }
        fn dims(&self) -> &[usize] {
            &self.dims
        }
        fn coupling_dim(&self) -> usize {
            1
        }
        fn coupling_block(&self, _i: usize) -> &DMatrix<f64> {
            &self.a
        }
        fn resource(&self) -> &DVector<f64> {
            &self.c
        }
        fn local_set(&self, _i: usize) -> &LocalSet {
            &self.set
        }
        fn bounding_box(&self, _i: usize) -> &BoxBounds {
            &self.bbox
        }
        fn sample_own_gradient(&self, i: usize, profile: &DVector<f64>, _rng: &mut ChaCha8Rng) -> DVector<f64> {
            self.expected_own_gradient(i, profile).unwrap()
        }
        fn expected_own_gradient(&self, i: usize, profile: &DVector<f64>) -> Option<DVector<f64>> {
            let off = self.own_offset(i);
            Some(profile.rows(off, self.dims[i]).clone_owned())
        }
        fn descriptor(&self) -> String {
            "identity".into()
        }
    }

    #[test]
    fn selection_extract_then_embed_is_identity_on_own_blocks() {
        let sel = SelectionMap::new(&[2, 3, 1]);
        let n = 6;
        let y = DVector::from_fn(n * 3, |i, _| i as f64 * 0.1);
        let x = sel.extract(&y);
        let back = sel.embed(&x);
        let x2 = sel.extract(&back);
        assert_eq!(x, x2);
        // R R^T = I on the decision stack.
        assert_eq!(x.len(), n);
    }

    #[test]
    fn assumption_bound_plugin_value() {
        let g = line_graph(2);
        let game = IdentityGame::new(2, 1);
        let cfg = assumption6_step_sizes(&g, &game, 1.0, 1.0, 0.99).unwrap();
        // A = 0, degree 1: bound = (1/2 + 1) * 1 = 1.5.
        assert_abs_diff_eq!(cfg.tau1[0], 0.99 / 1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(cfg.tau2[0], 0.99 / 1.5, epsilon = 1e-12);
        assert!(cfg.satisfies_step_bounds);
    }

    #[test]
    fn phi_is_symmetric_and_certified() {
        let g = CommGraph::from_edges(3, &[(1, 2), (2, 3), (3, 1)]).unwrap();
        let game = IdentityGame::new(3, 2);
        let cfg = assumption6_step_sizes(&g, &game, 2.0, 1.5, 0.9).unwrap();
        let phi = PhiOperator::new(&g, &game, &cfg).unwrap();
        assert!(phi.certified_min_eigenvalue() > 0.0);
        let mut rng = aux_stream(11, 0);
        let d = phi.dims();
        for _ in 0..5 {
            let u = StackState::from_flat(d, DVector::from_fn(d.total(), |_, _| rng.gen::<f64>() - 0.5));
            let v = StackState::from_flat(d, DVector::from_fn(d.total(), |_, _| rng.gen::<f64>() - 0.5));
            let uv = phi.inner(&u, &v);
            let vu = phi.inner(&v, &u);
            assert!((uv - vu).abs() < 1e-10 * u.data.norm() * v.data.norm());
        }
    }

    #[test]
    fn phi_norm_with_identity_preconditioner_is_euclidean() {
        // tau = 1 on an edgeless... smallest graph is two nodes and one
        // edge; zero gains are disallowed, so compare against the dense
        // assembly instead.
        let g = line_graph(2);
        let game = IdentityGame::new(2, 1);
        let cfg = assumption6_step_sizes(&g, &game, 1.0, 1.0, 0.5).unwrap();
        let phi = PhiOperator::new(&g, &game, &cfg).unwrap();
        let d = phi.dims();
        let dense = phi.dense();
        let v = DVector::from_fn(d.total(), |i, _| (i as f64 + 1.0) * 0.2);
        let quad = (&dense * &v).dot(&v);
        let got = phi.norm(&StackState::from_flat(d, v.clone()));
        assert_abs_diff_eq!(got, quad.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn grossly_violating_steps_fail_certificate() {
        let g = CommGraph::from_edges(3, &[(1, 2), (2, 3)]).unwrap();
        let game = IdentityGame::new(3, 2);
        let cfg = SplittingConfig::uniform(&g, &game, 2.0, 1.0, 1e3, 0.5, 0.5, 0.5).unwrap();
        assert!(!cfg.satisfies_step_bounds);
        match PhiOperator::new(&g, &game, &cfg) {
            Err(OperatorError::NotPositiveDefinite) => {}
            other => panic!("expected NotPositiveDefinite, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn random_assumption6_configs_always_certify() {
        let mut rng = aux_stream(5, 1);
        for trial in 0..40 {
            let players = 2 + (rng.gen::<f64>() * 4.0) as usize;
            let mut edges: Vec<(usize, usize)> = (1..players).map(|i| (i, i + 1)).collect();
            if players > 2 && trial % 2 == 0 {
                edges.push((1, players));
            }
            let g = CommGraph::from_edges(players, &edges).unwrap();
            let each = 1 + (rng.gen::<f64>() * 2.0) as usize;
            let game = IdentityGame::new(players, each);
            let rho_mu = 0.5 + 4.0 * rng.gen::<f64>();
            let rho_z = 0.5 + 2.0 * rng.gen::<f64>();
            let safety = 0.3 + 0.69 * rng.gen::<f64>();
            let cfg = assumption6_step_sizes(&g, &game, rho_mu, rho_z, safety).unwrap();
            assert!(cfg.satisfies_step_bounds);
            PhiOperator::new(&g, &game, &cfg).expect("assumption-6 config must certify");
        }
    }

    #[test]
    fn lanczos_bound_close_to_dense_minimum() {
        let g = CommGraph::from_edges(4, &[(1, 2), (2, 3), (3, 4), (4, 1)]).unwrap();
        let game = IdentityGame::new(4, 2);
        let cfg = assumption6_step_sizes(&g, &game, 1.0, 1.0, 0.8).unwrap();
        let phi = PhiOperator::new(&g, &game, &cfg).unwrap();
        let lanczos = phi.lanczos_min_eigenvalue(phi.dims().total());
        assert!(lanczos >= phi.certified_min_eigenvalue() - 1e-8);
        assert!(lanczos <= phi.certified_min_eigenvalue() * 1.5 + 1e-6);
    }

    #[test]
    fn extended_pseudogradient_on_consensus_matches_pseudogradient() {
        let game = Arc::new(QuadraticGame::example_pair());
        let x = DVector::from_vec(vec![0.3, -0.2]);
        let f = pseudogradient(game.as_ref(), &x).unwrap();
        let mut y = DVector::zeros(4);
        y.rows_mut(0, 2).copy_from(&x);
        y.rows_mut(2, 2).copy_from(&x);
        let mut oracle = GameOracle::new(game, 1);
        let fe = extended_pseudogradient(&mut oracle, &y, GradientMode::Deterministic).unwrap();
        assert_abs_diff_eq!((f - fe).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_game_probe_reports_unit_moduli() {
        let game = IdentityGame::new(2, 1);
        let mut rng = aux_stream(2, 3);
        let mut sampler = |r: &mut ChaCha8Rng| DVector::from_fn(2, |_, _| 4.0 * r.gen::<f64>() - 2.0);
        let rep = monotonicity_probe(&game, &mut sampler, 200, 1.0, 1.0, &mut rng).unwrap();
        assert_abs_diff_eq!(rep.eta, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(rep.theta1, 1.0, epsilon = 1e-9);
        assert!(rep.min_gap >= 0.0);
    }

    #[test]
    fn consensus_annihilation_in_t_rows() {
        // For a consensus stack with zero duals and a zero game, the
        // Laplacian and incidence contributions vanish.
        let g = CommGraph::from_edges(3, &[(1, 2), (2, 3)]).unwrap();
        let game = IdentityGame::new(3, 1);
        let dims = Dims::new(&game, &g);
        let mut psi = StackState::zeros(dims);
        let w = DVector::from_vec(vec![0.0, 0.0, 0.0]);
        for i in 0..3 {
            psi.y_block_mut(i).copy_from(&w);
        }
        let oracle = GameOracle::new(Arc::new(IdentityGame::new(3, 1)), 0);
        let cfg = assumption6_step_sizes(&g, &game, 1.0, 1.0, 0.9).unwrap();
        // x = 0 is the unconstrained minimum of the identity game, so the
        // all-zeros stack is a zero of the operator.
        let r = operator_t_residual(&psi, &oracle, &g, &cfg).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-12);
    }
}
