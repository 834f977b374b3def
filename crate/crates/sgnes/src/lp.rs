//! Small dense linear programming: a two-phase tableau simplex with Bland's
//! rule and a brute-force vertex enumerator for cross-checking.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Shared numerical tolerances for the LP routines.
pub mod tol {
    /// Feasibility tolerance on constraint residuals.
    pub const FEAS: f64 = 1e-9;
    /// Optimality tolerance on reduced costs.
    pub const OPT: f64 = 1e-9;
    /// Smallest pivot magnitude accepted by the tableau.
    pub const PIVOT: f64 = 1e-11;
    /// Vertex deduplication distance.
    pub const VERTEX_DEDUP: f64 = 1e-9;
}

#[derive(Debug, Error, PartialEq)]
pub enum LpError {
    #[error("numerical breakdown: pivot below {0:e}")]
    NumericalBreakdown(f64),
    #[error("vertex enumeration limited to dimension <= {limit}, got {got}")]
    DimensionTooLarge { limit: usize, got: usize },
    #[error("dimension mismatch between objective, rows and rhs")]
    ShapeMismatch,
    #[error("origin-start solver requires componentwise nonnegative rhs")]
    NegativeRhs,
}

/// `maximize c^T v` subject to `rows * v <= rhs`, `v` free.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub objective: DVector<f64>,
    pub rows: DMatrix<f64>,
    pub rhs: DVector<f64>,
}

impl LpProblem {
    pub fn new(objective: DVector<f64>, rows: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self, LpError> {
        if rows.ncols() != objective.len() || rows.nrows() != rhs.len() || rhs.is_empty() {
            return Err(LpError::ShapeMismatch);
        }
        Ok(Self { objective, rows, rhs })
    }

    pub fn dim(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimplexOutcome {
    Optimal {
        point: DVector<f64>,
        value: f64,
        /// Whether the active rows at the solution have full rank, i.e. the
        /// point is a vertex of the feasible polyhedron.
        vertex: bool,
    },
    Unbounded,
    Infeasible,
}

/// Dense tableau with Bland's anti-cycling pivot rule.
struct Tableau {
    /// rows x (cols + 1); last column is the rhs.
    t: DMatrix<f64>,
    /// Reduced-cost row, `c_j - z_j`; last entry is the objective value.
    obj: DVector<f64>,
    basis: Vec<usize>,
    banned: Vec<bool>,
}

impl Tableau {
    fn new(t: DMatrix<f64>, obj: DVector<f64>, basis: Vec<usize>) -> Self {
        let cols = t.ncols() - 1;
        Tableau { t, obj, basis, banned: vec![false; cols] }
    }

    fn cols(&self) -> usize {
        self.t.ncols() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) -> Result<(), LpError> {
        let p = self.t[(row, col)];
        if p.abs() < tol::PIVOT {
            return Err(LpError::NumericalBreakdown(tol::PIVOT));
        }
        let ncols = self.t.ncols();
        for j in 0..ncols {
            self.t[(row, j)] /= p;
        }
        for i in 0..self.t.nrows() {
            if i == row {
                continue;
            }
            let f = self.t[(i, col)];
            if f != 0.0 {
                for j in 0..ncols {
                    self.t[(i, j)] -= f * self.t[(row, j)];
                }
            }
        }
        let f = self.obj[col];
        if f != 0.0 {
            for j in 0..ncols {
                self.obj[j] -= f * self.t[(row, j)];
            }
        }
        self.basis[row] = col;
        Ok(())
    }

    /// Run Bland-rule pivots until optimal or unbounded.
    fn optimize(&mut self) -> Result<bool, LpError> {
        loop {
            // Entering: smallest improving index.
            let mut enter = None;
            for j in 0..self.cols() {
                if !self.banned[j] && self.obj[j] > tol::OPT {
                    enter = Some(j);
                    break;
                }
            }
            let Some(col) = enter else { return Ok(true) };
            // Leaving: min ratio, ties by smallest basic index.
            let rhs_col = self.cols();
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.t.nrows() {
                let a = self.t[(i, col)];
                if a > tol::PIVOT {
                    let ratio = self.t[(i, rhs_col)] / a;
                    match leave {
                        None => leave = Some((i, ratio)),
                        Some((best_i, best_r)) => {
                            if ratio < best_r - 1e-12
                                || (ratio <= best_r + 1e-12 && self.basis[i] < self.basis[best_i])
                            {
                                leave = Some((i, ratio));
                            }
                        }
                    }
                }
            }
            let Some((row, _)) = leave else { return Ok(false) };
            self.pivot(row, col)?;
        }
    }

    /// Rebuild the reduced-cost row for a new objective over the current basis.
    fn set_objective(&mut self, c: &[f64]) {
        let ncols = self.t.ncols();
        let mut obj = DVector::zeros(ncols);
        for (j, &cj) in c.iter().enumerate() {
            obj[j] = cj;
        }
        for (i, &b) in self.basis.iter().enumerate() {
            let cb = if b < c.len() { c[b] } else { 0.0 };
            if cb != 0.0 {
                for j in 0..ncols {
                    obj[j] -= cb * self.t[(i, j)];
                }
            }
        }
        self.obj = obj;
    }
}

/// Solve `maximize c^T v : rows v <= rhs` with free `v` by the two-phase
/// dense simplex method. Bland's rule guarantees termination on degenerate
/// instances; the fixed pivot order makes the result deterministic.
pub fn simplex_solve(p: &LpProblem) -> Result<SimplexOutcome, LpError> {
    let d = p.dim();
    let k = p.rhs.len();
    // Columns: v+ (d) | v- (d) | slack (k) | artificial (per negative row).
    let neg_rows: Vec<usize> = (0..k).filter(|&r| p.rhs[r] < 0.0).collect();
    let n_art = neg_rows.len();
    let ncols = 2 * d + k + n_art;
    let mut t = DMatrix::zeros(k, ncols + 1);
    let mut basis = vec![0usize; k];
    let mut art_idx = 0;
    for r in 0..k {
        let sign = if p.rhs[r] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            t[(r, j)] = sign * p.rows[(r, j)];
            t[(r, d + j)] = -sign * p.rows[(r, j)];
        }
        t[(r, 2 * d + r)] = sign;
        t[(r, ncols)] = sign * p.rhs[r];
        if sign < 0.0 {
            let a = 2 * d + k + art_idx;
            t[(r, a)] = 1.0;
            basis[r] = a;
            art_idx += 1;
        } else {
            basis[r] = 2 * d + r;
        }
    }
    let mut tab = Tableau::new(t, DVector::zeros(ncols + 1), basis);

    if n_art > 0 {
        // Phase 1: drive the artificials to zero.
        let mut c1 = vec![0.0; ncols];
        for a in 0..n_art {
            c1[2 * d + k + a] = -1.0;
        }
        tab.set_objective(&c1);
        tab.optimize()?;
        // The objective cell carries the negated value: positive means the
        // artificials could not be driven to zero.
        if tab.obj[ncols] > tol::FEAS {
            return Ok(SimplexOutcome::Infeasible);
        }
        // Pivot lingering artificials out of the basis where possible.
        for i in 0..k {
            if tab.basis[i] >= 2 * d + k {
                let col = (0..2 * d + k).find(|&j| tab.t[(i, j)].abs() > tol::PIVOT);
                if let Some(j) = col {
                    tab.pivot(i, j)?;
                }
            }
        }
        for a in 0..n_art {
            tab.banned[2 * d + k + a] = true;
        }
    }

    // Phase 2.
    let mut c2 = vec![0.0; ncols];
    for j in 0..d {
        c2[j] = p.objective[j];
        c2[d + j] = -p.objective[j];
    }
    tab.set_objective(&c2);
    if !tab.optimize()? {
        return Ok(SimplexOutcome::Unbounded);
    }

    let mut point = DVector::zeros(d);
    for (i, &b) in tab.basis.iter().enumerate() {
        let x = tab.t[(i, ncols)];
        if b < d {
            point[b] += x;
        } else if b < 2 * d {
            point[b - d] -= x;
        }
    }
    let value = p.objective.dot(&point);
    let vertex = is_vertex(p, &point);
    Ok(SimplexOutcome::Optimal { point, value, vertex })
}

/// Whether the rows active at `v` span the full space (rank `d`).
fn is_vertex(p: &LpProblem, v: &DVector<f64>) -> bool {
    let d = p.dim();
    let active: Vec<usize> = (0..p.rhs.len())
        .filter(|&r| (p.rows.row(r).transpose().dot(v) - p.rhs[r]).abs() <= 1e-7)
        .collect();
    if active.len() < d {
        return false;
    }
    let mut m = DMatrix::zeros(active.len(), d);
    for (i, &r) in active.iter().enumerate() {
        m.row_mut(i).copy_from(&p.rows.row(r));
    }
    m.svd(false, false).rank(1e-9) == d
}

/// Enumerate every vertex (basic feasible solution) of `rows v <= rhs`,
/// deduplicated. Combinatorial: guarded to small dimensions.
pub fn enumerate_vertices(p: &LpProblem) -> Result<Vec<DVector<f64>>, LpError> {
    let d = p.dim();
    if d > 8 {
        return Err(LpError::DimensionTooLarge { limit: 8, got: d });
    }
    let k = p.rhs.len();
    let mut verts: Vec<DVector<f64>> = Vec::new();
    let mut combo: Vec<usize> = (0..d).collect();
    if k < d {
        return Ok(verts);
    }
    loop {
        let mut m = DMatrix::zeros(d, d);
        let mut b = DVector::zeros(d);
        for (i, &r) in combo.iter().enumerate() {
            m.row_mut(i).copy_from(&p.rows.row(r));
            b[i] = p.rhs[r];
        }
        if let Some(v) = m.lu().solve(&b) {
            let feasible = (0..k).all(|r| p.rows.row(r).transpose().dot(&v) <= p.rhs[r] + tol::FEAS);
            if feasible && v.iter().all(|x| x.is_finite()) {
                let dup = verts.iter().any(|w| (w - &v).amax() <= tol::VERTEX_DEDUP);
                if !dup {
                    verts.push(v);
                }
            }
        }
        // Next d-combination of row indices.
        let mut i = d;
        loop {
            if i == 0 {
                return Ok(verts);
            }
            i -= 1;
            if combo[i] != i + k - d {
                combo[i] += 1;
                for j in i + 1..d {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solution of the origin-started solver, with row duals.
#[derive(Debug, Clone)]
pub struct NonnegSolution {
    pub point: DVector<f64>,
    pub value: f64,
    /// Dual prices of the `<=` rows: nonnegative, and a supergradient of the
    /// optimal value as a function of the rhs.
    pub row_duals: DVector<f64>,
}

/// `maximize c^T x : rows x <= rhs, x >= 0` with `rhs >= 0`, so the origin is
/// a basic feasible start and no phase 1 is needed. Used on the hot path
/// where the same small LP shape is solved many times.
pub fn solve_nonneg_from_origin(
    c: &DVector<f64>,
    rows: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Result<NonnegSolution, LpError> {
    let d = c.len();
    let k = rhs.len();
    if rows.ncols() != d || rows.nrows() != k {
        return Err(LpError::ShapeMismatch);
    }
    if rhs.iter().any(|&h| h < 0.0) {
        return Err(LpError::NegativeRhs);
    }
    let ncols = d + k;
    let mut t = DMatrix::zeros(k, ncols + 1);
    let mut basis = vec![0usize; k];
    for r in 0..k {
        for j in 0..d {
            t[(r, j)] = rows[(r, j)];
        }
        t[(r, d + r)] = 1.0;
        t[(r, ncols)] = rhs[r];
        basis[r] = d + r;
    }
    let mut tab = Tableau::new(t, DVector::zeros(ncols + 1), basis);
    let mut obj = vec![0.0; ncols];
    obj[..d].copy_from_slice(c.as_slice());
    tab.set_objective(&obj);
    if !tab.optimize()? {
        // Callers bound every variable, so this signals a modeling bug.
        return Err(LpError::NumericalBreakdown(f64::INFINITY));
    }
    let mut point = DVector::zeros(d);
    for (i, &b) in tab.basis.iter().enumerate() {
        if b < d {
            point[b] = tab.t[(i, ncols)];
        }
    }
    // Dual price of row r is the negated reduced cost of its slack.
    let row_duals = DVector::from_fn(k, |r, _| -tab.obj[d + r]);
    let value = c.dot(&point);
    Ok(NonnegSolution { point, value, row_duals })
}
