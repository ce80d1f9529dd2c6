//! Discrete joint-space trajectories and the finite-difference operators
//! that shape sampling noise, precondition gradient steps and propagate
//! endpoint corrections.

use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("a trajectory needs at least 3 waypoints (T >= 2), got {0}")]
    TooShort(usize),
    #[error("waypoint {index} has {got} joints, expected {expected}")]
    Ragged { index: usize, expected: usize, got: usize },
    #[error("trajectory contains a non-finite entry")]
    NonFinite,
    #[error("time step must be positive")]
    BadTimeStep,
    #[error("operand has {got} rows, expected {expected}")]
    Shape { expected: usize, got: usize },
}

/// Waypoints q_0..q_T stored as a (T+1) x D matrix, one row per waypoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    waypoints: DMatrix<f64>,
    dt: f64,
}

impl Trajectory {
    pub fn from_matrix(waypoints: DMatrix<f64>, dt: f64) -> Result<Self, TrajectoryError> {
        if waypoints.nrows() < 3 {
            return Err(TrajectoryError::TooShort(waypoints.nrows()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TrajectoryError::BadTimeStep);
        }
        if waypoints.iter().any(|v| !v.is_finite()) {
            return Err(TrajectoryError::NonFinite);
        }
        Ok(Self { waypoints, dt })
    }

    pub fn from_rows(rows: &[Vec<f64>], dt: f64) -> Result<Self, TrajectoryError> {
        let dof = rows.first().map_or(0, Vec::len);
        if let Some((index, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != dof) {
            return Err(TrajectoryError::Ragged { index, expected: dof, got: row.len() });
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::from_matrix(DMatrix::from_row_slice(rows.len(), dof, &flat), dt)
    }

    /// Straight joint-space line with `steps + 1` waypoints.
    pub fn linear(start: &[f64], goal: &[f64], steps: usize) -> Result<Self, TrajectoryError> {
        if goal.len() != start.len() {
            return Err(TrajectoryError::Ragged { index: steps, expected: start.len(), got: goal.len() });
        }
        let m = DMatrix::from_fn(steps + 1, start.len(), |t, j| {
            let s = t as f64 / steps as f64;
            start[j] + (goal[j] - start[j]) * s
        });
        Self::from_matrix(m, 1.0)
    }

    pub fn steps(&self) -> usize {
        self.waypoints.nrows() - 1
    }

    pub fn dof(&self) -> usize {
        self.waypoints.ncols()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.waypoints
    }

    pub fn matrix_mut(&mut self) -> &mut DMatrix<f64> {
        &mut self.waypoints
    }

    pub fn waypoint(&self, t: usize) -> Vec<f64> {
        self.waypoints.row(t).iter().copied().collect()
    }

    pub fn set_waypoint(&mut self, t: usize, q: &[f64]) {
        for (j, v) in q.iter().enumerate() {
            self.waypoints[(t, j)] = *v;
        }
    }

    pub fn start(&self) -> Vec<f64> {
        self.waypoint(0)
    }

    pub fn goal(&self) -> Vec<f64> {
        self.waypoint(self.steps())
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..=self.steps()).map(|t| self.waypoint(t)).collect()
    }

    /// Rows `range` flattened waypoint-major into one vector.
    pub fn flatten(&self, range: Range<usize>) -> Vec<f64> {
        range.flat_map(|t| self.waypoints.row(t).iter().copied().collect::<Vec<_>>()).collect()
    }

    /// Sum over interior waypoints of the squared second difference / dt^2.
    pub fn smoothness_cost(&self) -> f64 {
        let inv = 1.0 / (self.dt * self.dt);
        (1..self.steps())
            .map(|t| {
                (0..self.dof())
                    .map(|j| {
                        let acc = (self.waypoints[(t + 1, j)] - 2.0 * self.waypoints[(t, j)]
                            + self.waypoints[(t - 1, j)])
                            * inv;
                        acc * acc
                    })
                    .sum::<f64>()
            })
            .sum()
    }

    /// Gradient of `smoothness_cost` with respect to every waypoint.
    pub fn smoothness_gradient(&self) -> DMatrix<f64> {
        let (rows, dof) = self.waypoints.shape();
        let inv = 1.0 / (self.dt * self.dt);
        let mut grad = DMatrix::zeros(rows, dof);
        for t in 1..rows - 1 {
            for j in 0..dof {
                let r = (self.waypoints[(t + 1, j)] - 2.0 * self.waypoints[(t, j)]
                    + self.waypoints[(t - 1, j)])
                    * inv;
                grad[(t - 1, j)] += 2.0 * r * inv;
                grad[(t, j)] -= 4.0 * r * inv;
                grad[(t + 1, j)] += 2.0 * r * inv;
            }
        }
        grad
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClampMode {
    BothEndsFixed,
    StartFixedOnly,
}

/// Finite-difference operators over the free waypoints of a trajectory.
///
/// `diff` is the tridiagonal (-1, 2, -1) operator A on the free block. The
/// covariant metric is M = A^T A, and the sampling covariance is B = M^-1.
/// Endpoint corrections are spread with normalized columns of A^-1, which
/// are piecewise linear: a tent peaking at the corrected waypoint.
#[derive(Debug, Clone)]
pub struct SmoothnessOperators {
    steps: usize,
    clamp: ClampMode,
    diff: DMatrix<f64>,
    metric: DMatrix<f64>,
    sampling_cov: DMatrix<f64>,
    diff_inverse: DMatrix<f64>,
    metric_chol: Cholesky<f64, Dyn>,
}

impl SmoothnessOperators {
    pub fn new(steps: usize, clamp: ClampMode) -> Result<Self, TrajectoryError> {
        if steps < 2 {
            return Err(TrajectoryError::TooShort(steps + 1));
        }
        let n = match clamp {
            ClampMode::BothEndsFixed => steps - 1,
            ClampMode::StartFixedOnly => steps,
        };
        let diff = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
            0 => 2.0,
            1 => -1.0,
            _ => 0.0,
        });
        // Closed-form inverse of the (-1, 2, -1) stencil (1-based indices):
        // (A^-1)_ij = min(i, j) (n + 1 - max(i, j)) / (n + 1).
        let np1 = (n + 1) as f64;
        let diff_inverse = DMatrix::from_fn(n, n, |i, j| {
            let (lo, hi) = ((i.min(j) + 1) as f64, (i.max(j) + 1) as f64);
            lo * (np1 - hi) / np1
        });
        let metric = diff.transpose() * &diff;
        let sampling_cov = &diff_inverse * diff_inverse.transpose();
        let metric_chol = metric.clone().cholesky().expect("A^T A is positive definite");
        Ok(Self {
            steps,
            clamp,
            diff,
            metric,
            sampling_cov,
            diff_inverse,
            metric_chol,
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn clamp_mode(&self) -> ClampMode {
        self.clamp
    }

    /// Waypoint indices carrying free variables.
    pub fn free_range(&self) -> Range<usize> {
        match self.clamp {
            ClampMode::BothEndsFixed => 1..self.steps,
            ClampMode::StartFixedOnly => 1..self.steps + 1,
        }
    }

    pub fn free_len(&self) -> usize {
        self.diff.nrows()
    }

    pub fn diff_matrix(&self) -> &DMatrix<f64> {
        &self.diff
    }

    pub fn metric(&self) -> &DMatrix<f64> {
        &self.metric
    }

    pub fn sampling_cov(&self) -> &DMatrix<f64> {
        &self.sampling_cov
    }

    pub fn diff_inverse(&self) -> &DMatrix<f64> {
        &self.diff_inverse
    }

    /// Applies M^-1 column-wise to an (n_free x D) block.
    pub fn solve_metric(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.metric_chol.solve(rhs)
    }

    /// ln det A; A is the (n x n) stencil whose determinant is n + 1.
    pub fn log_det_diff(&self) -> f64 {
        ((self.free_len() + 1) as f64).ln()
    }

    /// Spread profile over the free block for a unit correction at free
    /// index `k`: the k-th column of A^-1 scaled to 1 at `k`.
    pub fn propagation_profile(&self, k: usize) -> DVector<f64> {
        let col = self.diff_inverse.column(k).into_owned();
        let peak = col[k];
        col / peak
    }

    /// Adds `delta` at free index `k`, spread smoothly over the free block.
    pub fn propagate(&self, traj: &mut Trajectory, k: usize, delta: &[f64]) {
        let profile = self.propagation_profile(k);
        let offset = self.free_range().start;
        let m = traj.matrix_mut();
        for (i, w) in profile.iter().enumerate() {
            for (j, d) in delta.iter().enumerate() {
                m[(offset + i, j)] += w * d;
            }
        }
    }

    /// Free block of `traj` as an (n_free x D) matrix.
    pub fn free_block(&self, traj: &Trajectory) -> DMatrix<f64> {
        let r = self.free_range();
        traj.matrix().rows(r.start, r.len()).into_owned()
    }

    pub fn check(&self, traj: &Trajectory) -> Result<(), TrajectoryError> {
        if traj.steps() != self.steps {
            return Err(TrajectoryError::Shape { expected: self.steps + 1, got: traj.steps() + 1 });
        }
        Ok(())
    }

    /// Log-density of a free-block perturbation under N(0, a B) applied
    /// independently to each joint column.
    pub fn log_gaussian(&self, perturbation: &DMatrix<f64>, scale_a: f64) -> f64 {
        let n = self.free_len() as f64;
        let d = perturbation.ncols() as f64;
        let whitened = &self.diff * perturbation;
        -0.5 * whitened.norm_squared() / scale_a - 0.5 * n * d * (2.0 * std::f64::consts::PI * scale_a).ln()
            + d * self.log_det_diff()
    }
}
