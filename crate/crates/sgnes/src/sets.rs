//! Local feasible sets: boxes and box-halfspace intersections, with the
//! projections the solver relies on.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default accuracy for the alternating-projection polytope projector.
pub const PROJECTION_TOL: f64 = 1e-8;
/// Sweep cap for the alternating-projection polytope projector.
pub const PROJECTION_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum SetError {
    #[error("inverted bounds at coordinate {0}: lo {1} > hi {2}")]
    InvertedBounds(usize, f64, f64),
    #[error("polytope appears empty (violation stalled at {0:.3e})")]
    EmptyPolytope(f64),
    #[error("projection did not reach tolerance within {0} sweeps")]
    MaxIterations(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Finite box `[lo, hi]` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxBounds {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl BoxBounds {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self, SetError> {
        if lo.len() != hi.len() {
            return Err(SetError::DimensionMismatch {
                expected: lo.len(),
                got: hi.len(),
            });
        }
        for i in 0..lo.len() {
            if lo[i] > hi[i] {
                return Err(SetError::InvertedBounds(i, lo[i], hi[i]));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        (0..self.dim()).all(|i| v[i] >= self.lo[i] - tol && v[i] <= self.hi[i] + tol)
    }

    /// The same box with every side pushed outward by `fraction` of its span.
    pub fn inflated(&self, fraction: f64) -> BoxBounds {
        let span = &self.hi - &self.lo;
        BoxBounds {
            lo: &self.lo - fraction * &span,
            hi: &self.hi + fraction * &span,
        }
    }

    pub fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        self.project_in_place(&mut out);
        out
    }

    pub fn project_in_place(&self, v: &mut DVector<f64>) {
        for i in 0..self.dim() {
            v[i] = v[i].clamp(self.lo[i], self.hi[i]);
        }
    }
}

/// Componentwise clamp of `v` onto `[lo, hi]`.
pub fn project_box(v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<DVector<f64>, SetError> {
    let b = BoxBounds::new(lo.clone(), hi.clone())?;
    if v.len() != b.dim() {
        return Err(SetError::DimensionMismatch {
            expected: b.dim(),
            got: v.len(),
        });
    }
    Ok(b.project(v))
}

/// A halfspace `a^T x <= b`.
#[derive(Debug, Clone)]
pub struct Halfspace {
    pub normal: DVector<f64>,
    pub offset: f64,
    norm_sq: f64,
}

impl Halfspace {
    pub fn new(normal: DVector<f64>, offset: f64) -> Self {
        let norm_sq = normal.norm_squared();
        Self { normal, offset, norm_sq }
    }

    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        (self.normal.dot(v) - self.offset).max(0.0)
    }

    fn project_in_place(&self, v: &mut DVector<f64>) {
        if self.norm_sq == 0.0 {
            return;
        }
        let excess = self.normal.dot(v) - self.offset;
        if excess > 0.0 {
            v.axpy(-excess / self.norm_sq, &self.normal, 1.0);
        }
    }
}

/// Local feasible set: a finite box intersected with finitely many
/// halfspaces. A plain box is the `halfspaces.is_empty()` case and all
/// projections reduce to a clamp.
#[derive(Debug, Clone)]
pub struct LocalSet {
    pub bounds: BoxBounds,
    pub halfspaces: Vec<Halfspace>,
}

impl LocalSet {
    pub fn from_box(bounds: BoxBounds) -> Self {
        Self { bounds, halfspaces: Vec::new() }
    }

    pub fn new(bounds: BoxBounds, halfspaces: Vec<Halfspace>) -> Self {
        Self { bounds, halfspaces }
    }

    pub fn dim(&self) -> usize {
        self.bounds.dim()
    }

    pub fn is_box(&self) -> bool {
        self.halfspaces.is_empty()
    }

    pub fn max_violation(&self, v: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            worst = worst.max(self.bounds.lo[i] - v[i]).max(v[i] - self.bounds.hi[i]);
        }
        for h in &self.halfspaces {
            worst = worst.max(h.violation(v));
        }
        worst
    }

    pub fn contains(&self, v: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(v) <= tol
    }

    /// Euclidean projection onto the set, to within `tol`. Boxes project by
    /// clamping; box-halfspace intersections run Dykstra's alternating
    /// projections, which converge to the exact projection for closed convex
    /// intersections.
    pub fn project(&self, v: &DVector<f64>) -> Result<DVector<f64>, SetError> {
        self.project_with(v, PROJECTION_TOL, PROJECTION_MAX_SWEEPS)
    }

    pub fn project_with(&self, v: &DVector<f64>, tol: f64, max_sweeps: usize) -> Result<DVector<f64>, SetError> {
        if v.len() != self.dim() {
            return Err(SetError::DimensionMismatch {
                expected: self.dim(),
                got: v.len(),
            });
        }
        if self.is_box() {
            return Ok(self.bounds.project(v));
        }
        // Fast path: already feasible points project to themselves.
        if self.contains(v, 0.0) {
            return Ok(v.clone());
        }

        let sets = self.halfspaces.len() + 1;
        let mut x = v.clone();
        let mut increments: Vec<DVector<f64>> = vec![DVector::zeros(self.dim()); sets];
        let mut prev = x.clone();
        let mut stalled_violation = f64::INFINITY;
        let mut stall_count = 0usize;

        for sweep in 0..max_sweeps {
            for (s, inc) in increments.iter_mut().enumerate() {
                // Dykstra: add back this set's increment, project, store the
                // new increment. Skipping a satisfied halfspace whose
                // increment is zero leaves the iteration unchanged.
                x += &*inc;
                let before = x.clone();
                if s == 0 {
                    self.bounds.project_in_place(&mut x);
                } else {
                    let h = &self.halfspaces[s - 1];
                    if inc.iter().all(|&c| c == 0.0) && h.violation(&x) == 0.0 {
                        *inc = DVector::zeros(self.dim());
                        continue;
                    }
                    h.project_in_place(&mut x);
                }
                *inc = before - &x;
            }
            let moved = (&x - &prev).norm();
            let viol = self.max_violation(&x);
            if moved <= tol && viol <= tol {
                return Ok(x);
            }
            // Empty-intersection heuristic: the violation stops shrinking
            // while staying well above tolerance.
            if sweep % 100 == 99 {
                if viol > 100.0 * tol && (stalled_violation - viol).abs() <= 1e-3 * viol {
                    stall_count += 1;
                    if stall_count >= 3 {
                        return Err(SetError::EmptyPolytope(viol));
                    }
                } else {
                    stall_count = 0;
                }
                stalled_violation = viol;
            }
            prev = x.clone();
        }
        Err(SetError::MaxIterations(max_sweeps))
    }

    /// Rows `(a_r, b_r)` of the halfspace system as matrices, for callers
    /// that need the polyhedral description.
    pub fn halfspace_rows(&self) -> (DMatrix<f64>, DVector<f64>) {
        let k = self.halfspaces.len();
        let d = self.dim();
        let mut a = DMatrix::zeros(k, d);
        let mut b = DVector::zeros(k);
        for (r, h) in self.halfspaces.iter().enumerate() {
            a.row_mut(r).copy_from(&h.normal.transpose());
            b[r] = h.offset;
        }
        (a, b)
    }
}
