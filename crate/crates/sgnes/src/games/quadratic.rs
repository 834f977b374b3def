//! Synthetic quadratic game with additive gradient noise. Its equilibrium is
//! computable by active-set enumeration, which makes it the reference oracle
//! for the solver tests.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::game::Game;
use crate::sets::{BoxBounds, LocalSet};

#[derive(Debug, Error, PartialEq)]
pub enum QuadraticError {
    #[error("stacked game matrix must have positive definite symmetric part (min eig {0})")]
    NotStronglyMonotone(f64),
    #[error("inconsistent block shapes")]
    ShapeMismatch,
    #[error("active-set enumeration found no KKT-consistent candidate")]
    NoSolution,
    #[error("multiple distinct KKT candidates; the instance is degenerate")]
    Degenerate,
    #[error("enumeration over {0} coordinates and {1} couplings is too large")]
    TooLarge(usize, usize),
}

/// Player `i` minimizes
/// `1/2 x_i^T P_i x_i + x_i^T sum_{j != i} G_ij x_j - r_i^T x_i`
/// over a box, with shared constraint `sum_i A_i x_i <= c`; gradients carry
/// additive uniform noise of half-width `noise`.
pub struct QuadraticGame {
    dims: Vec<usize>,
    offsets: Vec<usize>,
    p: Vec<DMatrix<f64>>,
    /// `cross[i][j]` couples player `j`'s decision into `i`'s gradient.
    cross: Vec<Vec<DMatrix<f64>>>,
    r: Vec<DVector<f64>>,
    noise: f64,
    a: Vec<DMatrix<f64>>,
    c: DVector<f64>,
    sets: Vec<LocalSet>,
    boxes: Vec<BoxBounds>,
}

impl QuadraticGame {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: Vec<DMatrix<f64>>,
        cross: Vec<Vec<DMatrix<f64>>>,
        r: Vec<DVector<f64>>,
        noise: f64,
        a: Vec<DMatrix<f64>>,
        c: DVector<f64>,
        local_boxes: Vec<BoxBounds>,
    ) -> Result<Self, QuadraticError> {
        let nn = p.len();
        if cross.len() != nn || r.len() != nn || a.len() != nn || local_boxes.len() != nn {
            return Err(QuadraticError::ShapeMismatch);
        }
        let dims: Vec<usize> = p.iter().map(|m| m.nrows()).collect();
        for i in 0..nn {
            if p[i].ncols() != dims[i]
                || r[i].len() != dims[i]
                || a[i].ncols() != dims[i]
                || a[i].nrows() != c.len()
                || local_boxes[i].dim() != dims[i]
                || cross[i].len() != nn
            {
                return Err(QuadraticError::ShapeMismatch);
            }
            for j in 0..nn {
                if i != j && (cross[i][j].nrows() != dims[i] || cross[i][j].ncols() != dims[j]) {
                    return Err(QuadraticError::ShapeMismatch);
                }
            }
        }
        let mut offsets = Vec::with_capacity(nn);
        let mut acc = 0;
        for &d in &dims {
            offsets.push(acc);
            acc += d;
        }
        let game = QuadraticGame {
            dims,
            offsets,
            p,
            cross,
            r,
            noise,
            a,
            c,
            sets: local_boxes.iter().cloned().map(LocalSet::from_box).collect(),
            boxes: local_boxes.iter().map(|b| b.inflated(0.05)).collect(),
        };
        let m = game.game_matrix();
        let sym = (&m + m.transpose()) * 0.5;
        let min = sym.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if min <= 0.0 {
            return Err(QuadraticError::NotStronglyMonotone(min));
        }
        Ok(game)
    }

    /// The stacked affine map: `F(x) = M x - r`.
    pub fn game_matrix(&self) -> DMatrix<f64> {
        let n: usize = self.dims.iter().sum();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..self.dims.len() {
            let (oi, di) = (self.offsets[i], self.dims[i]);
            m.view_mut((oi, oi), (di, di)).copy_from(&self.p[i]);
            for j in 0..self.dims.len() {
                if i != j {
                    let (oj, dj) = (self.offsets[j], self.dims[j]);
                    m.view_mut((oi, oj), (di, dj)).copy_from(&self.cross[i][j]);
                }
            }
        }
        m
    }

    pub fn linear_term(&self) -> DVector<f64> {
        let n: usize = self.dims.iter().sum();
        let mut r = DVector::zeros(n);
        for i in 0..self.dims.len() {
            r.rows_mut(self.offsets[i], self.dims[i]).copy_from(&self.r[i]);
        }
        r
    }

    pub fn coupling_matrix(&self) -> DMatrix<f64> {
        let n: usize = self.dims.iter().sum();
        let mut a = DMatrix::zeros(self.c.len(), n);
        for i in 0..self.dims.len() {
            a.view_mut((0, self.offsets[i]), (self.c.len(), self.dims[i])).copy_from(&self.a[i]);
        }
        a
    }

    pub fn noise_halfwidth(&self) -> f64 {
        self.noise
    }

    /// Two scalar players with mild cross coupling and a slack resource
    /// constraint; equilibrium in the interior.
    pub fn example_pair() -> QuadraticGame {
        let p = vec![DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 3.0)];
        let cross = vec![
            vec![DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 0.1)],
            vec![DMatrix::from_element(1, 1, -0.2), DMatrix::zeros(1, 1)],
        ];
        let r = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-0.5])];
        let a = vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)];
        let c = DVector::from_vec(vec![10.0]);
        let boxes = vec![
            BoxBounds::new(DVector::from_vec(vec![-5.0]), DVector::from_vec(vec![5.0])).unwrap(),
            BoxBounds::new(DVector::from_vec(vec![-5.0]), DVector::from_vec(vec![5.0])).unwrap(),
        ];
        QuadraticGame::new(p, cross, r, 0.0, a, c, boxes).unwrap()
    }

    /// The four-player two-dimensional benchmark used across the test suite:
    /// two coupling rows, one of them active at the equilibrium. The
    /// curvature scale is deliberately large relative to the coupling
    /// matrices: the sufficient step bounds only see the latter, so a stiff
    /// objective buys per-iteration contraction.
    pub fn four_player_benchmark(noise: f64) -> QuadraticGame {
        let nn = 4;
        let scale = 1.0;
        let p: Vec<DMatrix<f64>> = (0..nn)
            .map(|i| {
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[2.0 + 0.2 * i as f64, 0.3, 0.3, 3.0 + 0.1 * i as f64],
                ) * scale
            })
            .collect();
        let mut cross = vec![vec![DMatrix::zeros(2, 2); nn]; nn];
        for i in 0..nn {
            for j in 0..nn {
                if i != j {
                    let s = 0.15 * ((i + 2 * j) % 3) as f64 - 0.1;
                    cross[i][j] = DMatrix::from_row_slice(2, 2, &[s, 0.05, -0.05, s]) * scale;
                }
            }
        }
        let r: Vec<DVector<f64>> = (0..nn)
            .map(|i| DVector::from_vec(vec![2.0 + 0.4 * i as f64, 1.5 + 0.3 * i as f64]) * scale)
            .collect();
        let a: Vec<DMatrix<f64>> = (0..nn)
            .map(|i| {
                DMatrix::from_row_slice(
                    2,
                    2,
                    &[1.0, 0.5, 0.25 + 0.05 * i as f64, 1.0],
                )
            })
            .collect();
        // Tight enough that the first row binds at the equilibrium.
        let c = DVector::from_vec(vec![2.4, 4.0]);
        let boxes: Vec<BoxBounds> = (0..nn)
            .map(|_| BoxBounds::new(DVector::from_element(2, -4.0), DVector::from_element(2, 4.0)).unwrap())
            .collect();
        QuadraticGame::new(p, cross, r, noise, a, c, boxes).unwrap()
    }
}

impl Game for QuadraticGame {
    fn player_count(&self) -> usize {
        self.dims.len()
    }
    fn dims(&self) -> &[usize] {
        &self.dims
    }
    fn coupling_dim(&self) -> usize {
        self.c.len()
    }
    fn coupling_block(&self, i: usize) -> &DMatrix<f64> {
        &self.a[i]
    }
    fn resource(&self) -> &DVector<f64> {
        &self.c
    }
    fn local_set(&self, i: usize) -> &LocalSet {
        &self.sets[i]
    }
    fn bounding_box(&self, i: usize) -> &BoxBounds {
        &self.boxes[i]
    }
    fn sample_own_gradient(&self, i: usize, profile: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let mut g = self.expected_own_gradient(i, profile).unwrap();
        if self.noise > 0.0 {
            for x in g.iter_mut() {
                *x += self.noise * (2.0 * rng.gen::<f64>() - 1.0);
            }
        }
        g
    }
    fn expected_own_gradient(&self, i: usize, profile: &DVector<f64>) -> Option<DVector<f64>> {
        let mut g = &self.p[i] * profile.rows(self.offsets[i], self.dims[i]);
        for j in 0..self.dims.len() {
            if j != i {
                g += &self.cross[i][j] * profile.rows(self.offsets[j], self.dims[j]);
            }
        }
        g -= &self.r[i];
        Some(g)
    }
    fn descriptor(&self) -> String {
        let m = self.game_matrix();
        let mut acc = 0.0;
        for v in m.iter() {
            acc = 31.0 * acc % 1e9 + v;
        }
        format!(
            "quadratic(n={:?},m={},noise={},sig={:.6e})",
            self.dims,
            self.c.len(),
            self.noise,
            acc
        )
    }
}

/// Solve the affine KKT system of the game's variational equilibrium by
/// enumerating active sets of the box and coupling constraints. Intended for
/// desk-scale instances; the unique candidate is returned as `(x*, lambda*)`.
pub fn quadratic_nash_oracle(game: &QuadraticGame) -> Result<(DVector<f64>, DVector<f64>), QuadraticError> {
    let m_mat = game.game_matrix();
    let r = game.linear_term();
    let a = game.coupling_matrix();
    let c = game.resource().clone();
    let n = r.len();
    let m = c.len();
    if n > 12 || m > 6 {
        return Err(QuadraticError::TooLarge(n, m));
    }
    let mut lo = DVector::zeros(n);
    let mut hi = DVector::zeros(n);
    for i in 0..game.player_count() {
        let off = game.own_offset(i);
        let b = &game.local_set(i).bounds;
        lo.rows_mut(off, b.dim()).copy_from(&b.lo);
        hi.rows_mut(off, b.dim()).copy_from(&b.hi);
    }

    let tol = 1e-8;
    let mut candidates: Vec<(DVector<f64>, DVector<f64>)> = Vec::new();
    let mut box_state = vec![0u8; n]; // 0 free, 1 at lo, 2 at hi

    loop {
        'coupling: for mask in 0..(1usize << m) {
            let free: Vec<usize> = (0..n).filter(|&j| box_state[j] == 0).collect();
            let active: Vec<usize> = (0..m).filter(|&r| mask >> r & 1 == 1).collect();
            let nf = free.len();
            let na = active.len();
            let mut x = DVector::zeros(n);
            for j in 0..n {
                x[j] = match box_state[j] {
                    1 => lo[j],
                    2 => hi[j],
                    _ => 0.0,
                };
            }
            // Stationarity on free coords + active coupling rows, unknowns
            // (x_free, lambda_active).
            let dim = nf + na;
            let mut k = DMatrix::zeros(dim, dim);
            let mut rhs = DVector::zeros(dim);
            for (ri, &fr) in free.iter().enumerate() {
                for (ci, &fc) in free.iter().enumerate() {
                    k[(ri, ci)] = m_mat[(fr, fc)];
                }
                for (ci, &ar) in active.iter().enumerate() {
                    k[(ri, nf + ci)] = a[(ar, fr)];
                }
                rhs[ri] = r[fr];
                for j in 0..n {
                    if box_state[j] != 0 {
                        rhs[ri] -= m_mat[(fr, j)] * x[j];
                    }
                }
            }
            for (ri, &ar) in active.iter().enumerate() {
                for (ci, &fc) in free.iter().enumerate() {
                    k[(nf + ri, ci)] = a[(ar, fc)];
                }
                rhs[nf + ri] = c[ar];
                for j in 0..n {
                    if box_state[j] != 0 {
                        rhs[nf + ri] -= a[(ar, j)] * x[j];
                    }
                }
            }
            let sol = if dim == 0 {
                DVector::zeros(0)
            } else {
                match k.lu().solve(&rhs) {
                    Some(s) => s,
                    None => continue,
                }
            };
            for (ci, &fc) in free.iter().enumerate() {
                x[fc] = sol[ci];
            }
            let mut lambda = DVector::zeros(m);
            for (ci, &ar) in active.iter().enumerate() {
                lambda[ar] = sol[nf + ci];
            }

            // Feasibility and multiplier signs.
            for j in 0..n {
                if x[j] < lo[j] - tol || x[j] > hi[j] + tol {
                    continue 'coupling;
                }
            }
            if lambda.iter().any(|&l| l < -tol) {
                continue;
            }
            let slack = &c - &a * &x;
            for rr in 0..m {
                if slack[rr] < -tol {
                    continue 'coupling;
                }
            }
            // Gradient sign at the bounds.
            let s = &m_mat * &x - &r + a.transpose() * &lambda;
            for j in 0..n {
                match box_state[j] {
                    1 => {
                        if s[j] < -tol {
                            continue 'coupling;
                        }
                    }
                    2 => {
                        if s[j] > tol {
                            continue 'coupling;
                        }
                    }
                    _ => {}
                }
            }
            let dup = candidates
                .iter()
                .any(|(cx, cl)| (cx - &x).amax() <= 1e-7 && (cl - &lambda).amax() <= 1e-7);
            if !dup {
                candidates.push((x.clone(), lambda));
            }
        }
        // Advance the base-3 box state.
        let mut j = 0;
        loop {
            if j == n {
                return match candidates.len() {
                    0 => Err(QuadraticError::NoSolution),
                    1 => Ok(candidates.pop().unwrap()),
                    _ => Err(QuadraticError::Degenerate),
                };
            }
            box_state[j] += 1;
            if box_state[j] == 3 {
                box_state[j] = 0;
                j += 1;
            } else {
                break;
            }
        }
    }
}
