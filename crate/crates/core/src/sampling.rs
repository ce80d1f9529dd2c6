//! Proposal distributions over trajectories.
//!
//! Fixed-goal batches draw around a uniformly chosen current mode with the
//! smoothness-shaped covariance a·B on the interior waypoints. Goal
//! exploration additionally rotates the tool about the goal point, perturbs
//! the goal inside the position null space, and ramps that goal change
//! over the whole trajectory.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{PlanarArm, POSITION_ROWS};
use crate::par::map_indices;
use crate::rng;
use crate::trajectory::{ClampMode, SmoothnessOperators, Trajectory, TrajectoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("no mode trajectories to sample around")]
    NoModes,
    #[error("operators must use {0:?}")]
    WrongClamp(ClampMode),
    #[error("invalid proposal parameters: {0}")]
    InvalidParams(String),
    #[error("sample index {index} out of range for a batch of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalParams {
    /// Scale on the smoothness covariance B.
    pub scale_a: f64,
    /// Tool rotation offsets drawn uniformly from this interval (radians).
    pub rotation_range: (f64, f64),
    /// Null-space coefficients drawn uniformly from this interval.
    pub null_range: (f64, f64),
    /// Share of a goal-exploration batch drawn with a goal perturbation.
    pub end_sample_fraction: f64,
    pub seed: u64,
}

impl Default for ProposalParams {
    fn default() -> Self {
        Self {
            scale_a: 1e-4,
            rotation_range: (-std::f64::consts::PI, std::f64::consts::PI),
            null_range: (-0.3, 0.3),
            end_sample_fraction: 0.5,
            seed: 0,
        }
    }
}

impl ProposalParams {
    pub fn validate(&self) -> Result<(), SamplingError> {
        let bad = |m: &str| Err(SamplingError::InvalidParams(m.into()));
        if !(self.scale_a >= 0.0 && self.scale_a.is_finite()) {
            return bad("scale_a must be >= 0");
        }
        if !(self.rotation_range.0 <= self.rotation_range.1) {
            return bad("rotation_range must be non-empty");
        }
        if !(self.null_range.0 <= self.null_range.1) {
            return bad("null_range must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.end_sample_fraction) {
            return bad("end_sample_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Which generator produced a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Generator {
    /// Smooth noise around mode `mode`.
    Trajectory { mode: usize },
    /// Goal rotation and null-space draw around mode `mode`, plus smooth noise.
    /// `rotated` is false when the rotation draw fell back after IK failures.
    Goal { mode: usize, rotated: bool },
}

#[derive(Debug, Clone)]
pub struct SampleBatch {
    pub trajectories: Vec<Trajectory>,
    pub log_proposal_density: Vec<f64>,
    pub generator: Vec<Generator>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn proposal_log_density(&self, index: usize) -> Result<f64, SamplingError> {
        self.log_proposal_density
            .get(index)
            .copied()
            .ok_or(SamplingError::IndexOutOfRange { index, len: self.len() })
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Smooth free-block perturbation sqrt(a) A^-1 z with z ~ N(0, I).
fn smooth_noise(rng: &mut ChaCha8Rng, ops: &SmoothnessOperators, dof: usize, scale_a: f64) -> DMatrix<f64> {
    let n = ops.free_len();
    let z = DMatrix::from_fn(n, dof, |_, _| rng.sample::<f64, _>(StandardNormal));
    ops.diff_inverse() * z * scale_a.sqrt()
}

fn add_free_block(traj: &mut Trajectory, ops: &SmoothnessOperators, block: &DMatrix<f64>) {
    let r = ops.free_range();
    let mut rows = traj.matrix_mut().rows_mut(r.start, r.len());
    rows += block;
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Log of the uniform mixture of N(center_l, a B) over `centers` that share
/// `sample`'s clamped waypoints; zero for a degenerate (a = 0) proposal.
pub fn mixture_log_density(
    sample: &Trajectory,
    centers: &[Trajectory],
    ops: &SmoothnessOperators,
    scale_a: f64,
) -> f64 {
    if scale_a == 0.0 {
        return 0.0;
    }
    let block = ops.free_block(sample);
    let r = ops.free_range();
    let shares_clamped = |c: &Trajectory| {
        (0..=sample.steps())
            .filter(|t| !r.contains(t))
            .all(|t| sample.matrix().row(t) == c.matrix().row(t))
    };
    let ln_l = (centers.len() as f64).ln();
    let terms: Vec<f64> = centers
        .iter()
        .filter(|c| shares_clamped(c))
        .map(|c| ops.log_gaussian(&(&block - ops.free_block(c)), scale_a) - ln_l)
        .collect();
    if terms.is_empty() {
        return f64::NEG_INFINITY;
    }
    log_sum_exp(&terms)
}

/// Draws `n` trajectories around uniformly chosen `modes` with both ends fixed.
pub fn sample_fixed_goal(
    modes: &[Trajectory],
    ops: &SmoothnessOperators,
    params: &ProposalParams,
    n: usize,
) -> Result<SampleBatch, SamplingError> {
    if modes.is_empty() {
        return Err(SamplingError::NoModes);
    }
    if ops.clamp_mode() != ClampMode::BothEndsFixed {
        return Err(SamplingError::WrongClamp(ClampMode::BothEndsFixed));
    }
    params.validate()?;
    for m in modes {
        ops.check(m)?;
    }
    let drawn = map_indices(n, |i| {
        let mut rng = rng::stream(params.seed, i as u64);
        let mode = rng.random_range(0..modes.len());
        let mut traj = modes[mode].clone();
        let noise = smooth_noise(&mut rng, ops, traj.dof(), params.scale_a);
        add_free_block(&mut traj, ops, &noise);
        let log_density = mixture_log_density(&traj, modes, ops, params.scale_a);
        (traj, log_density, Generator::Trajectory { mode })
    });
    Ok(collect(drawn))
}

fn collect(drawn: Vec<(Trajectory, f64, Generator)>) -> SampleBatch {
    let mut batch = SampleBatch {
        trajectories: Vec::with_capacity(drawn.len()),
        log_proposal_density: Vec::with_capacity(drawn.len()),
        generator: Vec::with_capacity(drawn.len()),
    };
    for (t, d, g) in drawn {
        batch.trajectories.push(t);
        batch.log_proposal_density.push(d);
        batch.generator.push(g);
    }
    batch
}

/// Maximum IK redraws for a rotation sample before it is skipped.
pub const IK_RETRIES: usize = 5;

/// Goal change for one exploration draw around `goal`: a tool rotation
/// that holds the tip position, plus an optional null-space offset.
/// Returns the change and whether the rotation succeeded.
pub fn draw_goal_change(
    rng: &mut ChaCha8Rng,
    arm: &PlanarArm,
    goal: &[f64],
    params: &ProposalParams,
    null_exploration: bool,
) -> (Vec<f64>, bool) {
    let pose = arm.forward_kinematics(goal).expect("goal checked against arm");
    let mut rotated_goal = None;
    for _ in 0..=IK_RETRIES {
        let phi = uniform(rng, params.rotation_range);
        if let Ok(q) = arm.goal_rotation_ik(goal, pose.position, pose.orientation + phi) {
            rotated_goal = Some(q);
            break;
        }
    }
    let rotated = rotated_goal.is_some();
    let q_rot = rotated_goal.unwrap_or_else(|| goal.to_vec());
    let mut delta = DVector::from_iterator(goal.len(), q_rot.iter().zip(goal).map(|(a, b)| a - b));
    if null_exploration {
        let basis = arm.null_space_basis(&q_rot, &POSITION_ROWS).expect("dimension checked");
        for e in basis {
            delta += e * uniform(rng, params.null_range);
        }
    }
    (delta.iter().copied().collect(), rotated)
}

/// Goal-exploration batch. `ops` must leave the goal free; the share
/// `end_sample_fraction` of samples carries a goal change ramped over the
/// trajectory, and every sample carries smooth interior noise.
pub fn sample_goal_exploration(
    modes: &[Trajectory],
    arm: &PlanarArm,
    ops: &SmoothnessOperators,
    params: &ProposalParams,
    n: usize,
    null_exploration: bool,
) -> Result<SampleBatch, SamplingError> {
    if modes.is_empty() {
        return Err(SamplingError::NoModes);
    }
    if ops.clamp_mode() != ClampMode::StartFixedOnly {
        return Err(SamplingError::WrongClamp(ClampMode::StartFixedOnly));
    }
    params.validate()?;
    for m in modes {
        ops.check(m)?;
        if m.dof() != arm.dof() {
            return Err(SamplingError::InvalidParams("mode dimension differs from the arm".into()));
        }
    }
    let interior = SmoothnessOperators::new(ops.steps(), ClampMode::BothEndsFixed)?;
    let n_goal = (params.end_sample_fraction * n as f64).round() as usize;
    let goal_index = ops.free_len() - 1;
    let ln_l = (modes.len() as f64).ln();
    let drawn = map_indices(n, |i| {
        let mut rng = rng::stream(params.seed, i as u64);
        let mode = rng.random_range(0..modes.len());
        let mut traj = modes[mode].clone();
        let mut generator = Generator::Trajectory { mode };
        if i < n_goal {
            let (delta, rotated) = draw_goal_change(&mut rng, arm, &traj.goal(), params, null_exploration);
            ops.propagate(&mut traj, goal_index, &delta);
            generator = Generator::Goal { mode, rotated };
        }
        let noise = smooth_noise(&mut rng, &interior, traj.dof(), params.scale_a);
        add_free_block(&mut traj, &interior, &noise);
        let log_density = match generator {
            Generator::Trajectory { .. } => mixture_log_density(&traj, modes, &interior, params.scale_a),
            Generator::Goal { .. } if params.scale_a == 0.0 => 0.0,
            Generator::Goal { .. } => interior.log_gaussian(&noise, params.scale_a) - ln_l,
        };
        (traj, log_density, generator)
    });
    Ok(collect(drawn))
}
