//! Planar revolute chains: forward kinematics, Jacobians, null-space bases,
//! body-point sampling and a damped-least-squares goal solver.
//!
//! Angles are radians, lengths are meters. Every query accepts any finite
//! configuration; joint limits are enforced by the optimizer, not here.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("configuration has {got} joints but the arm has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid arm: {0}")]
    InvalidArm(String),
    #[error("inverse kinematics did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("inverse kinematics solution violates the limit of joint {joint}")]
    JointLimit { joint: usize },
}

/// Closed joint interval in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimit {
    pub lower: f64,
    pub upper: f64,
}

impl JointLimit {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.lower && q <= self.upper
    }
}

/// Rows of the 3xD task Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskRow {
    X,
    Y,
    Orientation,
}

impl TaskRow {
    fn index(self) -> usize {
        match self {
            TaskRow::X => 0,
            TaskRow::Y => 1,
            TaskRow::Orientation => 2,
        }
    }
}

pub const POSITION_ROWS: [TaskRow; 2] = [TaskRow::X, TaskRow::Y];
pub const POSE_ROWS: [TaskRow; 3] = [TaskRow::X, TaskRow::Y, TaskRow::Orientation];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndEffectorPose {
    pub position: Vector2<f64>,
    /// Normalized to (-pi, pi].
    pub orientation: f64,
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarArm {
    link_lengths: Vec<f64>,
    base_position: Vector2<f64>,
    base_orientation: f64,
    joint_limits: Option<Vec<JointLimit>>,
    body_points_per_link: usize,
}

impl PlanarArm {
    pub fn new(
        link_lengths: Vec<f64>,
        base_position: Vector2<f64>,
        base_orientation: f64,
        joint_limits: Option<Vec<JointLimit>>,
        body_points_per_link: usize,
    ) -> Result<Self, KinematicsError> {
        if link_lengths.is_empty() {
            return Err(KinematicsError::InvalidArm("at least one link is required".into()));
        }
        if let Some(i) = link_lengths.iter().position(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(KinematicsError::InvalidArm(format!(
                "link {i} length must be positive and finite"
            )));
        }
        if !(base_position.iter().all(|v| v.is_finite()) && base_orientation.is_finite()) {
            return Err(KinematicsError::InvalidArm("base pose must be finite".into()));
        }
        if let Some(limits) = &joint_limits {
            if limits.len() != link_lengths.len() {
                return Err(KinematicsError::InvalidArm(format!(
                    "{} joint limits given for {} joints",
                    limits.len(),
                    link_lengths.len()
                )));
            }
            if let Some(i) = limits.iter().position(|l| !(l.lower < l.upper)) {
                return Err(KinematicsError::InvalidArm(format!(
                    "joint {i} limit needs lower < upper"
                )));
            }
        }
        if body_points_per_link < 2 {
            return Err(KinematicsError::InvalidArm(
                "body_points_per_link must be at least 2".into(),
            ));
        }
        Ok(Self {
            link_lengths,
            base_position,
            base_orientation,
            joint_limits,
            body_points_per_link,
        })
    }

    /// Chain at the origin with no limits and two body points per link.
    pub fn simple(link_lengths: &[f64]) -> Result<Self, KinematicsError> {
        Self::new(link_lengths.to_vec(), Vector2::zeros(), 0.0, None, 2)
    }

    pub fn with_body_points(mut self, per_link: usize) -> Result<Self, KinematicsError> {
        if per_link < 2 {
            return Err(KinematicsError::InvalidArm(
                "body_points_per_link must be at least 2".into(),
            ));
        }
        self.body_points_per_link = per_link;
        Ok(self)
    }

    pub fn with_base(mut self, position: Vector2<f64>, orientation: f64) -> Self {
        self.base_position = position;
        self.base_orientation = orientation;
        self
    }

    pub fn with_joint_limits(self, limits: Vec<JointLimit>) -> Result<Self, KinematicsError> {
        Self::new(
            self.link_lengths,
            self.base_position,
            self.base_orientation,
            Some(limits),
            self.body_points_per_link,
        )
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn base_position(&self) -> Vector2<f64> {
        self.base_position
    }

    pub fn base_orientation(&self) -> f64 {
        self.base_orientation
    }

    pub fn joint_limits(&self) -> Option<&[JointLimit]> {
        self.joint_limits.as_deref()
    }

    pub fn body_points_per_link(&self) -> usize {
        self.body_points_per_link
    }

    pub fn body_point_count(&self) -> usize {
        self.dof() * self.body_points_per_link
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        match &self.joint_limits {
            None => true,
            Some(limits) => q.iter().zip(limits).all(|(v, l)| l.contains(*v)),
        }
    }

    fn check(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Joint positions p_0..p_D (p_D is the tip) and absolute link angles.
    pub fn joint_frames(&self, q: &[f64]) -> Result<(Vec<Vector2<f64>>, Vec<f64>), KinematicsError> {
        self.check(q)?;
        let mut points = Vec::with_capacity(self.dof() + 1);
        let mut angles = Vec::with_capacity(self.dof());
        let mut p = self.base_position;
        let mut theta = self.base_orientation;
        points.push(p);
        for (len, qi) in self.link_lengths.iter().zip(q) {
            theta += qi;
            p += Vector2::new(theta.cos(), theta.sin()) * *len;
            points.push(p);
            angles.push(theta);
        }
        Ok((points, angles))
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<EndEffectorPose, KinematicsError> {
        let (points, angles) = self.joint_frames(q)?;
        Ok(EndEffectorPose {
            position: points[self.dof()],
            orientation: wrap_angle(*angles.last().expect("non-empty chain")),
        })
    }

    /// Evenly spaced points along each link, both link endpoints included,
    /// ordered link by link.
    pub fn body_points(&self, q: &[f64]) -> Result<Vec<Vector2<f64>>, KinematicsError> {
        let (points, _) = self.joint_frames(q)?;
        let k = self.body_points_per_link;
        let mut out = Vec::with_capacity(self.body_point_count());
        for link in 0..self.dof() {
            let (a, b) = (points[link], points[link + 1]);
            for s in 0..k {
                let frac = s as f64 / (k - 1) as f64;
                out.push(a + (b - a) * frac);
            }
        }
        Ok(out)
    }

    /// Body points together with their 2xD position Jacobians.
    pub fn body_points_with_jacobians(
        &self,
        q: &[f64],
    ) -> Result<Vec<(Vector2<f64>, DMatrix<f64>)>, KinematicsError> {
        let (joints, _) = self.joint_frames(q)?;
        let d = self.dof();
        let k = self.body_points_per_link;
        let mut out = Vec::with_capacity(self.body_point_count());
        for link in 0..d {
            let (a, b) = (joints[link], joints[link + 1]);
            for s in 0..k {
                let frac = s as f64 / (k - 1) as f64;
                let x = a + (b - a) * frac;
                let mut jac = DMatrix::zeros(2, d);
                // Joints up to and including this link's joint move the point.
                for (j, pj) in joints.iter().enumerate().take(link + 1) {
                    let r = x - pj;
                    jac[(0, j)] = -r.y;
                    jac[(1, j)] = r.x;
                }
                out.push((x, jac));
            }
        }
        Ok(out)
    }

    /// 3xD Jacobian of (x, y, orientation) of the tip.
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
        let (joints, _) = self.joint_frames(q)?;
        let d = self.dof();
        let tip = joints[d];
        let mut jac = DMatrix::zeros(3, d);
        for j in 0..d {
            let r = tip - joints[j];
            jac[(0, j)] = -r.y;
            jac[(1, j)] = r.x;
            jac[(2, j)] = 1.0;
        }
        Ok(jac)
    }

    pub fn task_jacobian(&self, q: &[f64], rows: &[TaskRow]) -> Result<DMatrix<f64>, KinematicsError> {
        let full = self.jacobian(q)?;
        Ok(DMatrix::from_fn(rows.len(), self.dof(), |r, c| full[(rows[r].index(), c)]))
    }

    /// Orthonormal basis of the null space of the selected Jacobian rows.
    /// Empty when the task Jacobian has full column rank.
    pub fn null_space_basis(
        &self,
        q: &[f64],
        rows: &[TaskRow],
    ) -> Result<Vec<DVector<f64>>, KinematicsError> {
        let jac = self.task_jacobian(q, rows)?;
        Ok(null_space(&jac, 1e-9))
    }

    /// Damped-least-squares solve for a configuration whose tip reaches
    /// `target_position` with `target_orientation`, starting at `q_seed`.
    /// Stays on the seed's IK branch.
    pub fn goal_rotation_ik(
        &self,
        q_seed: &[f64],
        target_position: Vector2<f64>,
        target_orientation: f64,
    ) -> Result<Vec<f64>, KinematicsError> {
        self.solve_pose(q_seed, target_position, target_orientation, &IkSettings::default())
    }

    pub fn solve_pose(
        &self,
        q_seed: &[f64],
        target_position: Vector2<f64>,
        target_orientation: f64,
        settings: &IkSettings,
    ) -> Result<Vec<f64>, KinematicsError> {
        self.check(q_seed)?;
        let pose_error = |q: &[f64]| -> Result<DVector<f64>, KinematicsError> {
            let pose = self.forward_kinematics(q)?;
            let dp = target_position - pose.position;
            Ok(DVector::from_vec(vec![
                dp.x,
                dp.y,
                wrap_angle(target_orientation - pose.orientation),
            ]))
        };
        let mut q = q_seed.to_vec();
        let mut err = pose_error(&q)?;
        if err.amax() < settings.tolerance {
            return self.checked_limits(q);
        }
        let lambda2 = settings.damping * settings.damping;
        for _ in 0..settings.max_iterations {
            let jac = self.jacobian(&q)?;
            let jjt = &jac * jac.transpose() + DMatrix::identity(3, 3) * lambda2;
            let Some(chol) = jjt.cholesky() else { break };
            let mut step = jac.transpose() * chol.solve(&err);
            let largest = step.amax();
            if largest > settings.max_step {
                step *= settings.max_step / largest;
            }
            for (qi, si) in q.iter_mut().zip(step.iter()) {
                *qi += si;
            }
            err = pose_error(&q)?;
            if err.amax() < settings.polish_tolerance {
                break;
            }
        }
        let residual = err.amax();
        if residual >= settings.tolerance {
            return Err(KinematicsError::NoConvergence {
                iterations: settings.max_iterations,
                residual,
            });
        }
        self.checked_limits(q)
    }

    fn checked_limits(&self, q: Vec<f64>) -> Result<Vec<f64>, KinematicsError> {
        if let Some(limits) = &self.joint_limits {
            if let Some(joint) = q.iter().zip(limits).position(|(v, l)| !l.contains(*v)) {
                return Err(KinematicsError::JointLimit { joint });
            }
        }
        Ok(q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSettings {
    pub damping: f64,
    /// Per-joint step cap per iteration (radians).
    pub max_step: f64,
    pub max_iterations: usize,
    /// Residual below which the solve counts as converged.
    pub tolerance: f64,
    /// Residual at which iteration stops early once started.
    pub polish_tolerance: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            damping: 1e-3,
            max_step: 0.2,
            max_iterations: 200,
            tolerance: 1e-8,
            polish_tolerance: 1e-13,
        }
    }
}

/// Orthonormal null-space basis of `jac` via a full SVD of the zero-padded
/// square matrix. Singular values at or below `rank_tol` (relative to the
/// largest, with an absolute floor) count as zero.
pub fn null_space(jac: &DMatrix<f64>, rank_tol: f64) -> Vec<DVector<f64>> {
    let (rows, cols) = jac.shape();
    if cols == 0 {
        return Vec::new();
    }
    let size = rows.max(cols);
    let mut padded = DMatrix::zeros(size, cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(jac);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let scale = svd.singular_values.max().max(1.0);
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, s)| **s <= rank_tol * scale)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect()
}
