//! The game abstraction every solver component consumes: decision spaces,
//! coupling constraints, scenario-based subgradient oracles and projections.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sets::{BoxBounds, LocalSet};

#[derive(Debug, Error)]
pub enum GameError {
    #[error("player {0} has no deterministic gradient oracle")]
    NoDeterministicOracle(usize),
    #[error("oracle failure: {0}")]
    OracleFailure(String),
}

/// Scenario-gradient closure for one player's inner iterations: evaluates a
/// stochastic gradient of the player's objective at its own decision, with
/// the estimates of the other players frozen.
pub type ScenarioGradient<'a> = Box<dyn FnMut(&DVector<f64>, &mut ChaCha8Rng, &mut DVector<f64>) + 'a>;
/// Deterministic counterpart used by the exact-resolvent mode.
pub type ExpectedGradient<'a> = Box<dyn Fn(&DVector<f64>, &mut DVector<f64>) + 'a>;

/// A stochastic game with affine coupling constraints `sum_i A_i x_i <= c`.
///
/// `profile` arguments are full decision profiles in `R^n` (the concatenation
/// of every player's decision); under partial-decision information the
/// caller passes a player's local estimate of the profile.
pub trait Game: Send + Sync {
    fn player_count(&self) -> usize;

    /// Per-player decision dimensions `n_i`.
    fn dims(&self) -> &[usize];

    /// Number of coupling constraints `m`.
    fn coupling_dim(&self) -> usize;

    /// Coupling block `A_i`, of shape `m x n_i`.
    fn coupling_block(&self, i: usize) -> &DMatrix<f64>;

    /// Total resource vector `c`.
    fn resource(&self) -> &DVector<f64>;

    fn local_set(&self, i: usize) -> &LocalSet;

    /// Bounded box containing the local set; inner iterations project here.
    fn bounding_box(&self, i: usize) -> &BoxBounds;

    /// One scenario subgradient of player `i`'s objective in its own
    /// decision, evaluated at `profile`. Consumes exactly the draws it needs
    /// from `rng`.
    fn sample_own_gradient(&self, i: usize, profile: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64>;

    /// Gradient of the expected objective when available in closed form.
    fn expected_own_gradient(&self, i: usize, profile: &DVector<f64>) -> Option<DVector<f64>>;

    /// Stable textual identity of the concrete instance, used to key caches.
    fn descriptor(&self) -> String;

    /// Start offset of player `i`'s own block inside a profile vector.
    fn own_offset(&self, i: usize) -> usize {
        self.dims()[..i].iter().sum()
    }

    /// Total decision dimension `n`.
    fn total_dim(&self) -> usize {
        self.dims().iter().sum()
    }

    /// Sampler used by the inner solver; implementations may precompute the
    /// parts of the gradient that do not depend on the own block.
    fn inner_sampler<'a>(&'a self, i: usize, profile: &DVector<f64>) -> ScenarioGradient<'a> {
        let mut scratch = profile.clone();
        let (lo, len) = (self.own_offset(i), self.dims()[i]);
        Box::new(move |v, rng, out| {
            scratch.rows_mut(lo, len).copy_from(v);
            out.copy_from(&self.sample_own_gradient(i, &scratch, rng));
        })
    }

    /// Deterministic form of [`Game::inner_sampler`].
    fn inner_expected<'a>(&'a self, i: usize, profile: &DVector<f64>) -> Option<ExpectedGradient<'a>> {
        self.expected_own_gradient(i, profile)?;
        let base = profile.clone();
        let (lo, len) = (self.own_offset(i), self.dims()[i]);
        Some(Box::new(move |v, out| {
            let mut scratch = base.clone();
            scratch.rows_mut(lo, len).copy_from(v);
            out.copy_from(&self.expected_own_gradient(i, &scratch).expect("oracle vanished"));
        }))
    }
}

/// Per-player counter-based RNG stream. All randomness of a run derives from
/// `(master_seed, stream id)`, so trajectories do not depend on the order in
/// which players are evaluated.
pub fn player_stream(master_seed: u64, player: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(1 + player as u64);
    rng
}

/// Auxiliary stream (game construction, initial iterates, probes). Tags are
/// namespaced away from the player streams.
pub fn aux_stream(master_seed: u64, tag: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(u64::MAX - tag);
    rng
}

/// A game plus the per-player scenario streams and projection helpers.
pub struct GameOracle {
    game: Arc<dyn Game>,
    streams: Vec<ChaCha8Rng>,
    master_seed: u64,
}

impl GameOracle {
    pub fn new(game: Arc<dyn Game>, master_seed: u64) -> Self {
        let streams = (0..game.player_count()).map(|i| player_stream(master_seed, i)).collect();
        Self { game, streams, master_seed }
    }

    pub fn game(&self) -> &dyn Game {
        self.game.as_ref()
    }

    pub fn game_arc(&self) -> Arc<dyn Game> {
        Arc::clone(&self.game)
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Rewind every player stream to its initial position.
    pub fn reset(&mut self) {
        let n = self.game.player_count();
        self.streams = (0..n).map(|i| player_stream(self.master_seed, i)).collect();
    }

    /// Split into the game and the per-player streams, e.g. to drive players
    /// concurrently with disjoint streams.
    pub fn parts_mut(&mut self) -> (&dyn Game, &mut [ChaCha8Rng]) {
        (self.game.as_ref(), &mut self.streams)
    }

    pub fn stream_mut(&mut self, player: usize) -> &mut ChaCha8Rng {
        &mut self.streams[player]
    }

    /// One scenario gradient draw for `player` at `profile`.
    pub fn sample(&mut self, player: usize, profile: &DVector<f64>) -> DVector<f64> {
        self.game.sample_own_gradient(player, profile, &mut self.streams[player])
    }

    pub fn expected(&self, player: usize, profile: &DVector<f64>) -> Result<DVector<f64>, GameError> {
        self.game
            .expected_own_gradient(player, profile)
            .ok_or(GameError::NoDeterministicOracle(player))
    }
}

/// The strongly convex subproblem a player solves inexactly at each outer
/// iteration: its expected objective at frozen estimates, plus a linear
/// augmentation and a proximal term.
#[derive(Debug, Clone)]
pub struct AugmentedSubproblem {
    pub player: usize,
    /// Linear augmentation; couples the consensus and resource multipliers.
    pub linear: DVector<f64>,
    /// Proximal center, also the inner solver's start point.
    pub prox_center: DVector<f64>,
    /// Proximal weight `1/tau_1i`; the subproblem is strongly convex with
    /// at least this modulus.
    pub prox_weight: f64,
    /// Full profile with the other players' estimates frozen; the own block
    /// is scratch space.
    pub profile: DVector<f64>,
}

impl AugmentedSubproblem {
    /// The augmented gradient pieces shared by every evaluation:
    /// `linear + prox_weight * (v - prox_center)` added onto a game gradient.
    pub fn finish_gradient(&self, v: &DVector<f64>, g: &mut DVector<f64>) {
        *g += &self.linear;
        g.axpy(self.prox_weight, v, 1.0);
        g.axpy(-self.prox_weight, &self.prox_center, 1.0);
    }
}

/// One scenario subgradient of the augmented objective at `v`, drawing a
/// single scenario from `rng`.
pub fn sample_subgradient(
    game: &dyn Game,
    sub: &AugmentedSubproblem,
    v: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> DVector<f64> {
    let mut profile = sub.profile.clone();
    let (lo, len) = (game.own_offset(sub.player), game.dims()[sub.player]);
    profile.rows_mut(lo, len).copy_from(v);
    let mut g = game.sample_own_gradient(sub.player, &profile, rng);
    sub.finish_gradient(v, &mut g);
    g
}

/// Deterministic augmented gradient; `None` when the game has no
/// deterministic oracle.
pub fn expected_subgradient(game: &dyn Game, sub: &AugmentedSubproblem, v: &DVector<f64>) -> Option<DVector<f64>> {
    let mut profile = sub.profile.clone();
    let (lo, len) = (game.own_offset(sub.player), game.dims()[sub.player]);
    profile.rows_mut(lo, len).copy_from(v);
    let mut g = game.expected_own_gradient(sub.player, &profile)?;
    sub.finish_gradient(v, &mut g);
    Some(g)
}

/// Empirical Assumption-style second-moment fit for a game's scenario
/// gradients: constants `(alpha, beta)` with
/// `E||g||^2 <= alpha^2 ||y||^2 + beta^2` over the sampled states, where `y`
/// is the stacked profile. Fitted on one batch and validated on a second.
#[derive(Debug, Clone)]
pub struct SecondMomentFit {
    pub alpha: f64,
    pub beta: f64,
    /// Largest relative excess of the validation batch over the fitted
    /// bound; nonpositive when the bound held everywhere.
    pub worst_excess: f64,
}

pub fn fit_second_moment(game: &dyn Game, trials: usize, draws_per_state: usize, rng: &mut ChaCha8Rng) -> SecondMomentFit {
    use rand::Rng;
    let n = game.total_dim();
    let nn = game.player_count();
    let mut records: Vec<(f64, f64)> = Vec::new();
    let sample_state = |rng: &mut ChaCha8Rng, scale: f64| -> DVector<f64> {
        let mut profile = DVector::zeros(n);
        for i in 0..nn {
            let b = game.bounding_box(i);
            let off = game.own_offset(i);
            for j in 0..b.dim() {
                let u: f64 = rng.gen();
                profile[off + j] = scale * (b.lo[j] + u * (b.hi[j] - b.lo[j]));
            }
        }
        profile
    };
    let collect = |rng: &mut ChaCha8Rng, out: &mut Vec<(f64, f64)>| {
        for t in 0..trials {
            let scale = 0.25 + 1.5 * (t as f64 / trials.max(1) as f64);
            let profile = sample_state(rng, scale);
            for i in 0..nn {
                let mut acc = 0.0;
                for _ in 0..draws_per_state {
                    let g = game.sample_own_gradient(i, &profile, rng);
                    acc += g.norm_squared();
                }
                out.push((profile.norm_squared(), acc / draws_per_state as f64));
            }
        }
    };
    collect(rng, &mut records);
    // Least squares fit of E||g||^2 = a * ||y||^2 + b, clipped nonnegative.
    let k = records.len() as f64;
    let sx: f64 = records.iter().map(|r| r.0).sum();
    let sy: f64 = records.iter().map(|r| r.1).sum();
    let sxx: f64 = records.iter().map(|r| r.0 * r.0).sum();
    let sxy: f64 = records.iter().map(|r| r.0 * r.1).sum();
    let denom = k * sxx - sx * sx;
    let mut a = if denom.abs() > 1e-12 { (k * sxy - sx * sy) / denom } else { 0.0 };
    a = a.max(0.0);
    let b = (sy - a * sx) / k;
    // Inflate the intercept so the fit majorizes the fitted batch.
    let mut beta_sq = b.max(0.0);
    for &(x, y) in &records {
        beta_sq = beta_sq.max(y - a * x);
    }
    beta_sq *= 1.1;

    let mut validation: Vec<(f64, f64)> = Vec::new();
    collect(rng, &mut validation);
    let mut worst = f64::NEG_INFINITY;
    for &(x, y) in &validation {
        let bound = a * x + beta_sq;
        worst = worst.max((y - bound) / bound.max(1e-12));
    }
    SecondMomentFit {
        alpha: a.sqrt(),
        beta: beta_sq.sqrt(),
        worst_excess: worst,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Single-player quadratic toy: J(v) = 1/2 q v^T v - r^T v, with uniform
    /// gradient noise of half-width `noise`.
    pub(crate) struct ToyGame {
        dims: Vec<usize>,
        a: DMatrix<f64>,
        c: DVector<f64>,
        set: LocalSet,
        bbox: BoxBounds,
        pub q: f64,
        pub r: DVector<f64>,
        pub noise: f64,
    }

    impl ToyGame {
        pub fn new(dim: usize, q: f64, r: DVector<f64>, noise: f64) -> Self {
            let lo = DVector::from_element(dim, -100.0);
            let hi = DVector::from_element(dim, 100.0);
            let bounds = BoxBounds::new(lo, hi).unwrap();
            Self {
                dims: vec![dim],
                a: DMatrix::zeros(1, dim),
                c: DVector::zeros(1),
                set: LocalSet::from_box(bounds.clone()),
                bbox: bounds,
                q,
                r,
                noise,
            }
        }
    }

    impl Game for ToyGame {
        fn player_count(&self) -> usize {
            1
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
        fn sample_own_gradient(&self, _i: usize, profile: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
            use rand::Rng;
            let mut g = self.q * profile - &self.r;
            for x in g.iter_mut() {
                *x += self.noise * (2.0 * rng.gen::<f64>() - 1.0);
            }
            g
        }
        fn expected_own_gradient(&self, _i: usize, profile: &DVector<f64>) -> Option<DVector<f64>> {
            Some(self.q * profile - &self.r)
        }
        fn descriptor(&self) -> String {
            format!("toy(q={},noise={})", self.q, self.noise)
        }
    }

    #[test]
    fn zero_noise_sample_matches_analytic_gradient() {
        let game = ToyGame::new(2, 3.0, DVector::from_vec(vec![1.0, -2.0]), 0.0);
        let sub = AugmentedSubproblem {
            player: 0,
            linear: DVector::from_vec(vec![0.5, 0.5]),
            prox_center: DVector::zeros(2),
            prox_weight: 4.0,
            profile: DVector::zeros(2),
        };
        let v = DVector::from_vec(vec![1.0, 1.0]);
        let mut rng = player_stream(7, 0);
        let g = sample_subgradient(&game, &sub, &v, &mut rng);
        // 3v - r + linear + 4(v - 0)
        assert_abs_diff_eq!(g[0], 3.0 - 1.0 + 0.5 + 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 3.0 + 2.0 + 0.5 + 4.0, epsilon = 1e-12);
    }

    #[test]
    fn proximal_term_vanishes_at_center() {
        // Zero game part and zero augmentation: the subgradient at the
        // proximal center is exactly zero.
        let game = ToyGame::new(2, 0.0, DVector::zeros(2), 0.0);
        let center = DVector::from_vec(vec![0.7, -0.3]);
        let sub = AugmentedSubproblem {
            player: 0,
            linear: DVector::zeros(2),
            prox_center: center.clone(),
            prox_weight: 10.0,
            profile: DVector::zeros(2),
        };
        let mut rng = player_stream(1, 0);
        let g = sample_subgradient(&game, &sub, &center, &mut rng);
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn sample_mean_converges_to_expected_gradient() {
        // Monte-Carlo oracle: the empirical mean over many draws must sit
        // within a 3-sigma band of the deterministic gradient.
        let game = ToyGame::new(1, 2.0, DVector::from_vec(vec![0.5]), 2.0);
        let v = DVector::from_vec(vec![1.25]);
        let expected = game.expected_own_gradient(0, &v).unwrap()[0];
        let m = 100_000;
        let mut rng = player_stream(42, 0);
        let mut acc = 0.0;
        for _ in 0..m {
            acc += game.sample_own_gradient(0, &v, &mut rng)[0];
        }
        let mean = acc / m as f64;
        // Var of U[-2,2] is 4/3.
        let sigma = (4.0 / 3.0f64 / m as f64).sqrt();
        assert!((mean - expected).abs() <= 3.0 * sigma, "mean {mean} vs {expected}");
    }

    #[test]
    fn streams_are_reproducible_and_disjoint() {
        use rand::Rng;
        let mut a = player_stream(9, 0);
        let mut b = player_stream(9, 0);
        assert_eq!(a.gen::<u64>(), b.gen::<u64>());
        let mut c = player_stream(9, 1);
        assert_ne!(a.gen::<u64>(), c.gen::<u64>());
    }

    #[test]
    fn second_moment_fit_bounds_validation_batch() {
        let game = ToyGame::new(2, 1.5, DVector::from_vec(vec![1.0, 0.0]), 1.0);
        let mut rng = aux_stream(3, 0);
        let fit = fit_second_moment(&game, 40, 16, &mut rng);
        assert!(fit.beta > 0.0);
        assert!(fit.worst_excess <= 0.25, "excess {}", fit.worst_excess);
    }
}
