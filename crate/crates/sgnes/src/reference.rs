//! Centralized ground-truth equilibrium solver: primal-dual extragradient on
//! the KKT operator over the product of local sets and the nonnegative
//! orthant. Distance metrics of every experiment are measured against its
//! output.

use nalgebra::DVector;
use thiserror::Error;

use crate::game::{Game, GameError};
use crate::operators::{pseudogradient, SelectionMap};
use crate::sets::SetError;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Set(#[from] SetError),
    #[error("extragradient stalled at residual {residual:.3e} after {iterations} iterations")]
    MaxIterations {
        residual: f64,
        iterations: usize,
        best: Box<ReferenceSolution>,
    },
}

#[derive(Debug, Clone)]
pub struct ReferenceSolution {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub method: String,
}

#[derive(Debug, Clone)]
pub struct ExtragradientOptions {
    /// Step size; estimated from a sampled Lipschitz modulus when absent.
    pub step: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Decay the steps and keep the best iterate; for games whose
    /// pseudogradient is a subgradient selection.
    pub nonsmooth: bool,
}

impl Default for ExtragradientOptions {
    fn default() -> Self {
        ExtragradientOptions {
            step: None,
            tol: 1e-8,
            max_iter: 200_000,
            nonsmooth: false,
        }
    }
}

/// KKT infeasibility of a candidate pair: normal-cone residuals of the
/// stationarity rows plus complementarity of the resource constraint.
pub fn kkt_residual(game: &dyn Game, x: &DVector<f64>, lambda: &DVector<f64>) -> Result<f64, ReferenceError> {
    let sel = SelectionMap::new(game.dims());
    let f = pseudogradient(game, x)?;
    let mut total = 0.0;
    let mut ax = DVector::zeros(game.coupling_dim());
    for i in 0..game.player_count() {
        let (off, len) = sel.own_range(i);
        let xi = x.rows(off, len).clone_owned();
        ax += game.coupling_block(i) * &xi;
        let mut s = f.rows(off, len).clone_owned();
        s += game.coupling_block(i).transpose() * lambda;
        let set = game.local_set(i);
        if set.is_box() {
            for j in 0..len {
                let r = interval_residual(xi[j], set.bounds.lo[j], set.bounds.hi[j], s[j]);
                total += r * r;
            }
        } else {
            let proj = set.project(&(&xi - &s))?;
            total += (&xi - proj).norm_squared();
        }
    }
    let slack = game.resource() - ax;
    for r in 0..game.coupling_dim() {
        let res = if lambda[r] > 1e-9 {
            slack[r].abs()
        } else {
            (-slack[r]).max(0.0)
        };
        total += res * res;
    }
    Ok(total.sqrt())
}

fn interval_residual(x: f64, lo: f64, hi: f64, s: f64) -> f64 {
    let tol = 1e-9;
    let at_lo = x - lo <= tol;
    let at_hi = hi - x <= tol;
    match (at_lo, at_hi) {
        (true, true) => 0.0,
        (true, false) => (-s).max(0.0),
        (false, true) => s.max(0.0),
        (false, false) => s.abs(),
    }
}

/// Solve the variational equilibrium by extragradient on
/// `[F(x) + A^T lambda; c - A x]` over `X x R+^m`. The returned multiplier
/// satisfies complementary slackness to the same tolerance.
pub fn solve_vi_extragradient(game: &dyn Game, opts: &ExtragradientOptions) -> Result<ReferenceSolution, ReferenceError> {
    solve_vi_from(game, opts, None)
}

/// Same solver from an explicit start; used by the uniqueness checks.
pub fn solve_vi_from(
    game: &dyn Game,
    opts: &ExtragradientOptions,
    start: Option<(DVector<f64>, DVector<f64>)>,
) -> Result<ReferenceSolution, ReferenceError> {
    let sel = SelectionMap::new(game.dims());
    let n = game.total_dim();
    let m = game.coupling_dim();

    let (mut x, mut lambda) = match start {
        Some(pair) => pair,
        None => {
            let mut x0 = DVector::zeros(n);
            for i in 0..game.player_count() {
                let (off, len) = sel.own_range(i);
                let b = &game.local_set(i).bounds;
                let mid = (&b.lo + &b.hi) * 0.5;
                let proj = game.local_set(i).project(&mid)?;
                x0.rows_mut(off, len).copy_from(&proj);
            }
            (x0, DVector::zeros(m))
        }
    };

    let eval = |x: &DVector<f64>, lam: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>), ReferenceError> {
        let f = pseudogradient(game, x)?;
        let mut gx = f;
        let mut ax = DVector::zeros(m);
        for i in 0..game.player_count() {
            let (off, len) = sel.own_range(i);
            let xi = x.rows(off, len);
            ax += game.coupling_block(i) * xi;
            let at = game.coupling_block(i).transpose() * lam;
            gx.rows_mut(off, len).axpy(1.0, &at, 1.0);
        }
        let glam = game.resource() - ax;
        Ok((gx, glam))
    };

    let mut eta = match opts.step {
        Some(s) => s,
        None => {
            // Finite-difference power iteration of the KKT operator's
            // Jacobian at the start point.
            let mut lip: f64 = 1e-9;
            let eps = 1e-6;
            let (g0x, g0l) = eval(&x, &lambda)?;
            let mut vx = DVector::from_fn(n, |i, _| ((i + 1) as f64 * 0.37).sin());
            let mut vl = DVector::from_fn(m, |i, _| ((i + 3) as f64 * 0.61).cos());
            let norm0 = (vx.norm_squared() + vl.norm_squared()).sqrt();
            vx /= norm0;
            vl /= norm0;
            for _ in 0..25 {
                let (gx, gl) = eval(&(&x + eps * &vx), &(&lambda + eps * &vl))?;
                let jx = (gx - &g0x) / eps;
                let jl = (gl - &g0l) / eps;
                lip = (jx.norm_squared() + jl.norm_squared()).sqrt().max(1e-12);
                vx = jx / lip;
                vl = jl / lip;
            }
            0.9 / lip
        }
    };
    let project = |x: &DVector<f64>, lam: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>), ReferenceError> {
        let mut px = DVector::zeros(n);
        for i in 0..game.player_count() {
            let (off, len) = sel.own_range(i);
            let xi = x.rows(off, len).clone_owned();
            px.rows_mut(off, len).copy_from(&game.local_set(i).project(&xi)?);
        }
        let pl = lam.map(|v| v.max(0.0));
        Ok((px, pl))
    };

    let mut best: Option<ReferenceSolution> = None;
    let mut halvings = 0usize;
    let mut last_halving = 0usize;

    for it in 1..=opts.max_iter {
        let step = if opts.nonsmooth {
            eta / (1.0 + it as f64 / 500.0).powf(0.7)
        } else {
            eta
        };
        let (gx, gl) = eval(&x, &lambda)?;
        let (xm, lm) = project(&(&x - step * &gx), &(&lambda - step * &gl))?;
        let (gxm, glm) = eval(&xm, &lm)?;
        // Local curvature clamp: keep eta * L_local comfortably below 1.
        let dw = ((&xm - &x).norm_squared() + (&lm - &lambda).norm_squared()).sqrt();
        if dw > 1e-14 {
            let dg = ((&gxm - &gx).norm_squared() + (&glm - &gl).norm_squared()).sqrt();
            if step * dg > 0.7 * dw {
                eta = eta.min(0.7 * dw / dg.max(1e-300));
            }
        }
        let (xn, ln) = project(&(&x - step * gxm), &(&lambda - step * glm))?;
        x = xn;
        lambda = ln;

        if it % 10 == 0 || it == opts.max_iter {
            let res = kkt_residual(game, &x, &lambda)?;
            let improved = best.as_ref().map_or(true, |b| res < b.residual);
            if improved {
                best = Some(ReferenceSolution {
                    x: x.clone(),
                    lambda: lambda.clone(),
                    residual: res,
                    iterations: it,
                    method: if opts.nonsmooth { "extragradient-decay".into() } else { "extragradient".into() },
                });
            }
            if res < opts.tol {
                return Ok(best.expect("just assigned"));
            }
            // Divergence guard: the residual doubling past the best level
            // means the step is too long; halve and restart from the best.
            if let Some(b) = &best {
                if res > 2.0 * b.residual.max(opts.tol) && halvings < 20 && it >= last_halving + 200 {
                    eta *= 0.5;
                    halvings += 1;
                    last_halving = it;
                    x = b.x.clone();
                    lambda = b.lambda.clone();
                }
            }
        }
    }
    let best = best.unwrap_or(ReferenceSolution {
        x,
        lambda,
        residual: f64::INFINITY,
        iterations: opts.max_iter,
        method: "extragradient".into(),
    });
    Err(ReferenceError::MaxIterations {
        residual: best.residual,
        iterations: opts.max_iter,
        best: Box::new(best),
    })
}
