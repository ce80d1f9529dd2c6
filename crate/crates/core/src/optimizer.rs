//! The outer sampling/clustering loop and gradient-based mode refinement.

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{self, CostError, CostParams};
use crate::density::{self, DensityError, EigenmapParams, VbemInit, VbemParams, VbemPriors};
use crate::kinematics::{KinematicsError, PlanarArm, POSITION_ROWS};
use crate::par::map_indices;
use crate::rng;
use crate::sampling::{self, ProposalParams, SampleBatch, SamplingError};
use crate::scene::{Scene, SceneError};
use crate::trajectory::{ClampMode, SmoothnessOperators, Trajectory, TrajectoryError};

pub const ETA_MIN: f64 = 1e-2;
pub const ETA_MAX: f64 = 1e6;
/// Accepted steps in a row after which eta is halved.
pub const ETA_RELAX_AFTER: usize = 5;
pub const PROJECTION_DAMPING: f64 = 1e-4;
pub const PROJECTION_MAX_ITERATIONS: usize = 20;
/// The region planner's fixed horizon and iteration count.
pub const REGION_STEPS: usize = 50;
pub const REGION_ITERATIONS: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("goal projection stalled with residual {residual:e}")]
    ProjectionFailed { residual: f64 },
    #[error("{which} configuration violates the joint limits")]
    EndpointOutOfLimits { which: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoalMode {
    /// Start and goal configurations are both fixed.
    Fixed,
    /// The goal tip position is fixed; the goal configuration is free.
    Rotational,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmtoConfig {
    /// Maximum number of modes O.
    #[serde(rename = "O")]
    pub max_solutions: usize,
    /// Samples per outer iteration N.
    #[serde(rename = "N")]
    pub batch_size: usize,
    /// Outer iterations K.
    #[serde(rename = "K")]
    pub outer_iterations: usize,
    /// Time steps T; trajectories have T + 1 waypoints.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Gradient steps per mode and outer iteration.
    pub refine_iterations: usize,
    /// Initial inverse step size; `None` gives the exact smoothness step.
    pub step_inverse_eta: Option<f64>,
    pub null_step_scale: f64,
    pub null_fd_step: f64,
    pub null_exploration: bool,
    pub null_update: bool,
    pub collision_accept_threshold: f64,
    pub projection_tolerance: f64,
    /// Modes closer than this RMS joint distance are merged.
    pub dedup_distance: f64,
    pub k_neighbors: usize,
    pub d_embed: usize,
    pub smoothness_weight: f64,
    pub cost_scale_alpha: f64,
    pub scale_a: f64,
    /// Goal rotation window; set from the problem section in files.
    #[serde(skip)]
    pub rotation_range: (f64, f64),
    #[serde(skip)]
    pub null_range: (f64, f64),
    pub end_sample_fraction: f64,
    pub vbem_max_iters: usize,
    /// Divide the cost weight by the proposal density.
    pub proposal_correction: bool,
    pub seed: u64,
}

impl Default for SmtoConfig {
    fn default() -> Self {
        Self {
            max_solutions: 10,
            batch_size: 500,
            outer_iterations: 3,
            steps: 50,
            refine_iterations: 100,
            step_inverse_eta: None,
            null_step_scale: 0.05,
            null_fd_step: 1e-4,
            null_exploration: true,
            null_update: true,
            collision_accept_threshold: 1e-4,
            projection_tolerance: 1e-6,
            dedup_distance: 0.05,
            k_neighbors: 15,
            d_embed: 10,
            smoothness_weight: 1.0,
            cost_scale_alpha: 20.0,
            scale_a: 3e-4,
            rotation_range: (-std::f64::consts::PI, std::f64::consts::PI),
            null_range: (-0.3, 0.3),
            end_sample_fraction: 0.5,
            vbem_max_iters: 500,
            proposal_correction: true,
            seed: 0,
        }
    }
}

impl SmtoConfig {
    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: &str| Err(OptimizerError::InvalidConfig(m.into()));
        if self.max_solutions == 0 {
            return bad("max_solutions must be at least 1");
        }
        if self.batch_size < self.max_solutions {
            return bad("batch_size must be at least max_solutions");
        }
        if self.outer_iterations == 0 {
            return bad("outer_iterations must be at least 1");
        }
        if self.steps < 2 {
            return bad("steps must be at least 2");
        }
        if self.batch_size <= self.d_embed {
            return bad("batch_size must exceed d_embed");
        }
        if self.k_neighbors < 2 {
            return bad("k_neighbors must be at least 2");
        }
        if let Some(eta) = self.step_inverse_eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return bad("step_inverse_eta must be positive");
            }
        }
        for (name, v) in [
            ("collision_accept_threshold", self.collision_accept_threshold),
            ("projection_tolerance", self.projection_tolerance),
            ("null_fd_step", self.null_fd_step),
            ("dedup_distance", self.dedup_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(OptimizerError::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.null_step_scale >= 0.0 && self.null_step_scale.is_finite()) {
            return bad("null_step_scale must be >= 0");
        }
        self.cost_params().validate()?;
        self.proposal_params(0).validate()?;
        Ok(())
    }

    pub fn cost_params(&self) -> CostParams {
        CostParams {
            smoothness_weight: self.smoothness_weight,
            cost_scale_alpha: self.cost_scale_alpha,
        }
    }

    pub fn proposal_params(&self, seed: u64) -> ProposalParams {
        ProposalParams {
            scale_a: self.scale_a,
            rotation_range: self.rotation_range,
            null_range: self.null_range,
            end_sample_fraction: self.end_sample_fraction,
            seed,
        }
    }

    pub fn eigenmap_params(&self) -> EigenmapParams {
        EigenmapParams {
            k_neighbors: self.k_neighbors,
            d_embed: self.d_embed,
        }
    }

    pub fn vbem_params(&self, seed: u64) -> VbemParams {
        VbemParams {
            max_components: self.max_solutions,
            priors: VbemPriors::default(),
            max_iters: self.vbem_max_iters,
            tol: 1e-9,
            init: VbemInit::KMeansPlusPlus { seed },
        }
    }

    /// Starting eta: the inverse step that solves the smoothness term exactly.
    pub fn initial_eta(&self, dt: f64) -> f64 {
        self.step_inverse_eta.unwrap_or_else(|| {
            let eta = 2.0 * self.smoothness_weight / dt.powi(4);
            if eta > 0.0 {
                eta.clamp(ETA_MIN, ETA_MAX)
            } else {
                1.0
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct PlanningProblem {
    pub arm: PlanarArm,
    pub scene: Scene,
    pub q_start: Vec<f64>,
    pub q_goal: Vec<f64>,
    pub goal_mode: GoalMode,
}

impl PlanningProblem {
    fn validate(&self) -> Result<(), OptimizerError> {
        let d = self.arm.dof();
        if self.q_start.len() != d || self.q_goal.len() != d {
            return Err(OptimizerError::InvalidProblem(format!(
                "start and goal need {d} joint values"
            )));
        }
        if self.q_start.iter().chain(&self.q_goal).any(|v| !v.is_finite()) {
            return Err(OptimizerError::InvalidProblem("non-finite configuration".into()));
        }
        if !self.arm.within_limits(&self.q_start) {
            return Err(OptimizerError::EndpointOutOfLimits { which: "start" });
        }
        if self.goal_mode == GoalMode::Fixed && !self.arm.within_limits(&self.q_goal) {
            return Err(OptimizerError::EndpointOutOfLimits { which: "goal" });
        }
        Ok(())
    }

    /// Tip position every solution must reach.
    pub fn target_position(&self) -> Result<Vector2<f64>, OptimizerError> {
        Ok(self.arm.forward_kinematics(&self.q_goal)?.position)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub trajectory: Trajectory,
    pub final_cost: f64,
    pub collision_cost: f64,
    pub smoothness: f64,
    pub cluster_id: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Modes extracted by density estimation, per outer iteration.
    pub mode_counts: Vec<usize>,
    /// Modes left after refinement and merging, per outer iteration.
    pub refined_counts: Vec<usize>,
    /// Variational objective trace of each outer iteration's fit.
    pub elbo_traces: Vec<Vec<f64>>,
    /// Final goal-position residual of each returned solution.
    pub projection_residuals: Vec<f64>,
    pub merged_modes: usize,
    pub projection_failures: usize,
    pub vbem_jitter_events: usize,
    pub iterations_run: usize,
    /// True when no mode met the collision threshold.
    pub infeasible: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolutionSet {
    /// Sorted by ascending final cost.
    pub solutions: Vec<Solution>,
    pub diagnostics: Diagnostics,
}

impl SolutionSet {
    pub fn infeasible(&self) -> bool {
        self.diagnostics.infeasible
    }
}

/// One covariant step: free waypoints move by -(1/eta) M^-1 g.
pub fn covariant_update(
    traj: &Trajectory,
    gradient: &DMatrix<f64>,
    operators: &SmoothnessOperators,
    eta: f64,
) -> Result<Trajectory, OptimizerError> {
    operators.check(traj)?;
    if gradient.shape() != (operators.free_len(), traj.dof()) {
        return Err(TrajectoryError::Shape {
            expected: operators.free_len(),
            got: gradient.nrows(),
        }
        .into());
    }
    if !(eta > 0.0) {
        return Err(OptimizerError::InvalidConfig("eta must be positive".into()));
    }
    let step = operators.solve_metric(gradient) / eta;
    let mut out = traj.clone();
    let r = operators.free_range();
    let mut rows = out.matrix_mut().rows_mut(r.start, r.len());
    rows -= step;
    Ok(out)
}

fn require_start_only(operators: &SmoothnessOperators) -> Result<(), OptimizerError> {
    if operators.clamp_mode() != ClampMode::StartFixedOnly {
        return Err(SamplingError::WrongClamp(ClampMode::StartFixedOnly).into());
    }
    Ok(())
}

/// Moves the goal configuration until its tip reaches `target`, spreading
/// each correction over the trajectory. Returns the trajectory and the final
/// residual, or `ProjectionFailed` after the iteration cap.
pub fn project_goal_constraint(
    traj: &Trajectory,
    arm: &PlanarArm,
    target: Vector2<f64>,
    operators: &SmoothnessOperators,
    tolerance: f64,
) -> Result<(Trajectory, f64), OptimizerError> {
    require_start_only(operators)?;
    operators.check(traj)?;
    let goal_index = operators.free_len() - 1;
    let mut out = traj.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..=PROJECTION_MAX_ITERATIONS {
        let q = out.goal();
        let error = target - arm.forward_kinematics(&q)?.position;
        residual = error.norm();
        if residual < tolerance {
            return Ok((out, residual));
        }
        let j = arm.task_jacobian(&q, &POSITION_ROWS)?;
        let jjt = &j * j.transpose() + DMatrix::identity(2, 2) * PROJECTION_DAMPING;
        let Some(inv) = jjt.try_inverse() else { break };
        let dq = j.transpose() * inv * DVector::from_column_slice(error.as_slice());
        operators.propagate(&mut out, goal_index, dq.as_slice());
    }
    Err(OptimizerError::ProjectionFailed { residual })
}

/// Finite-difference descent on the goal configuration's collision cost
/// inside the position null space, spread over the trajectory. Returns the
/// input and `false` when the arm has no null space at the goal.
pub fn null_space_update(
    traj: &Trajectory,
    arm: &PlanarArm,
    scene: &Scene,
    operators: &SmoothnessOperators,
    step_scale: f64,
    fd_step: f64,
) -> Result<(Trajectory, bool), OptimizerError> {
    require_start_only(operators)?;
    operators.check(traj)?;
    let q = traj.goal();
    let basis = arm.null_space_basis(&q, &POSITION_ROWS)?;
    if basis.is_empty() {
        return Ok((traj.clone(), false));
    }
    let c0 = cost::configuration_collision_cost(&q, arm, scene)?;
    let mut delta = DVector::zeros(q.len());
    for e in &basis {
        let probe: Vec<f64> = q.iter().zip(e.iter()).map(|(a, b)| a + fd_step * b).collect();
        let slope = (cost::configuration_collision_cost(&probe, arm, scene)? - c0) / fd_step;
        delta -= e * (step_scale * slope);
    }
    let mut out = traj.clone();
    if delta.iter().any(|v| *v != 0.0) {
        operators.propagate(&mut out, operators.free_len() - 1, delta.as_slice());
    }
    Ok((out, true))
}

/// Pulls every free entry that violates a joint limit back onto it,
/// spreading each correction to neighboring waypoints.
pub fn clamp_joint_limits(
    traj: &Trajectory,
    arm: &PlanarArm,
    operators: &SmoothnessOperators,
) -> Result<Trajectory, OptimizerError> {
    operators.check(traj)?;
    let Some(limits) = arm.joint_limits() else {
        return Ok(traj.clone());
    };
    if !arm.within_limits(&traj.start()) {
        return Err(OptimizerError::EndpointOutOfLimits { which: "start" });
    }
    if operators.clamp_mode() == ClampMode::BothEndsFixed && !arm.within_limits(&traj.goal()) {
        return Err(OptimizerError::EndpointOutOfLimits { which: "goal" });
    }
    let r = operators.free_range();
    let violation = |m: &DMatrix<f64>, t: usize, j: usize| {
        let v = m[(t, j)];
        if v > limits[j].upper {
            limits[j].upper - v
        } else if v < limits[j].lower {
            limits[j].lower - v
        } else {
            0.0
        }
    };
    let mut out = traj.clone();
    let budget = 4 * r.len() * traj.dof();
    for _ in 0..budget {
        let mut worst: Option<(f64, usize, usize)> = None;
        for t in r.clone() {
            for j in 0..traj.dof() {
                let v = violation(out.matrix(), t, j);
                if v != 0.0 && worst.is_none_or(|(w, _, _)| v.abs() > w.abs()) {
                    worst = Some((v, t, j));
                }
            }
        }
        let Some((v, t, j)) = worst else { break };
        let mut delta = vec![0.0; traj.dof()];
        delta[j] = v;
        operators.propagate(&mut out, t - r.start, &delta);
        out.matrix_mut()[(t, j)] = if v > 0.0 { limits[j].lower } else { limits[j].upper };
    }
    for t in r {
        for (j, lim) in limits.iter().enumerate() {
            let m = out.matrix_mut();
            m[(t, j)] = m[(t, j)].clamp(lim.lower, lim.upper);
        }
    }
    Ok(out)
}

/// Result of refining one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub trajectory: Trajectory,
    pub cost: f64,
    pub eta: f64,
    /// Total cost after every accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub rejected_steps: usize,
    pub projection_residual: Option<f64>,
}

struct Context<'a> {
    problem: &'a PlanningProblem,
    config: &'a SmtoConfig,
    ops: SmoothnessOperators,
    target: Vector2<f64>,
    params: CostParams,
}

impl Context<'_> {
    fn rotational(&self) -> bool {
        self.problem.goal_mode == GoalMode::Rotational
    }

    fn constrain(&self, traj: &Trajectory) -> Result<(Trajectory, Option<f64>), OptimizerError> {
        if !self.rotational() {
            return Ok((traj.clone(), None));
        }
        let (t, r) = project_goal_constraint(
            traj,
            &self.problem.arm,
            self.target,
            &self.ops,
            self.config.projection_tolerance,
        )?;
        Ok((t, Some(r)))
    }

    fn cost(&self, traj: &Trajectory) -> Result<f64, OptimizerError> {
        Ok(cost::total_cost(traj, &self.problem.arm, &self.problem.scene, &self.params)?)
    }

    fn step(&self, traj: &Trajectory, eta: f64) -> Result<Trajectory, OptimizerError> {
        let (arm, scene) = (&self.problem.arm, &self.problem.scene);
        let grad = cost::cost_gradient(traj, arm, scene, &self.params, &self.ops)?;
        let mut next = covariant_update(traj, &grad, &self.ops, eta)?;
        if self.rotational() {
            next = self.constrain(&next)?.0;
            if self.config.null_update {
                next = null_space_update(
                    &next,
                    arm,
                    scene,
                    &self.ops,
                    self.config.null_step_scale,
                    self.config.null_fd_step,
                )?
                .0;
            }
        }
        clamp_joint_limits(&next, arm, &self.ops)
    }

    fn refine(&self, initial: &Trajectory, eta0: f64, iterations: usize) -> Result<Refinement, OptimizerError> {
        let (mut traj, _) = self.constrain(&clamp_joint_limits(initial, &self.problem.arm, &self.ops)?)?;
        let mut cost = self.cost(&traj)?;
        let mut eta = eta0.clamp(ETA_MIN, ETA_MAX);
        let mut trace = vec![cost];
        let mut rejected = 0;
        let mut streak = 0;
        for _ in 0..iterations {
            let candidate = match self.step(&traj, eta) {
                Ok(c) => Some(c),
                Err(OptimizerError::ProjectionFailed { .. }) => None,
                Err(e) => return Err(e),
            };
            let next_cost = match &candidate {
                Some(c) => self.cost(c)?,
                None => f64::INFINITY,
            };
            if next_cost <= cost {
                let stalled = next_cost == cost;
                traj = candidate.expect("finite cost implies a candidate");
                cost = next_cost;
                trace.push(cost);
                streak += 1;
                if streak >= ETA_RELAX_AFTER {
                    eta = (eta * 0.5).max(ETA_MIN);
                    streak = 0;
                }
                if stalled {
                    break;
                }
            } else {
                rejected += 1;
                streak = 0;
                if eta >= ETA_MAX {
                    break;
                }
                eta = (eta * 2.0).min(ETA_MAX);
            }
        }
        let (traj, residual) = self.constrain(&clamp_joint_limits(&traj, &self.problem.arm, &self.ops)?)?;
        let cost = self.cost(&traj)?;
        Ok(Refinement {
            trajectory: traj,
            cost,
            eta,
            cost_trace: trace,
            rejected_steps: rejected,
            projection_residual: residual,
        })
    }

    fn solution(&self, traj: Trajectory, cluster_id: usize) -> Result<Solution, OptimizerError> {
        let b = cost::evaluate(&traj, &self.problem.arm, &self.problem.scene, &self.params)?;
        Ok(Solution {
            trajectory: traj,
            final_cost: b.total,
            collision_cost: b.obstacle,
            smoothness: b.smoothness,
            cluster_id,
        })
    }
}

fn context<'a>(problem: &'a PlanningProblem, config: &'a SmtoConfig) -> Result<Context<'a>, OptimizerError> {
    config.validate()?;
    problem.validate()?;
    let clamp = match problem.goal_mode {
        GoalMode::Fixed => ClampMode::BothEndsFixed,
        GoalMode::Rotational => ClampMode::StartFixedOnly,
    };
    Ok(Context {
        problem,
        config,
        ops: SmoothnessOperators::new(config.steps, clamp)?,
        target: problem.target_position()?,
        params: config.cost_params(),
    })
}

/// Gradient-only refinement of `initial` for `iterations` steps, using the
/// same step control, projection and limit handling as the planner.
pub fn refine_trajectory(
    problem: &PlanningProblem,
    config: &SmtoConfig,
    initial: &Trajectory,
    iterations: usize,
) -> Result<Refinement, OptimizerError> {
    let ctx = context(problem, config)?;
    ctx.refine(initial, config.initial_eta(initial.dt()), iterations)
}

/// Pure covariant descent from the straight-line initialization, with the
/// planner's total gradient budget.
pub fn covariant_descent_plan(problem: &PlanningProblem, config: &SmtoConfig) -> Result<SolutionSet, OptimizerError> {
    let ctx = context(problem, config)?;
    let initial = Trajectory::linear(&problem.q_start, &problem.q_goal, config.steps)?;
    let budget = config.refine_iterations * config.outer_iterations;
    let r = ctx.refine(&initial, config.initial_eta(initial.dt()), budget)?;
    let solution = ctx.solution(r.trajectory, 0)?;
    let diagnostics = Diagnostics {
        refined_counts: vec![1],
        projection_residuals: r.projection_residual.into_iter().collect(),
        iterations_run: 1,
        infeasible: solution.collision_cost >= config.collision_accept_threshold,
        ..Diagnostics::default()
    };
    Ok(SolutionSet {
        solutions: vec![solution],
        diagnostics,
    })
}

fn rms_distance(a: &Trajectory, b: &Trajectory) -> f64 {
    let diff = a.matrix() - b.matrix();
    (diff.norm_squared() / diff.len() as f64).sqrt()
}

struct Candidate {
    trajectory: Trajectory,
    cost: f64,
    cluster: usize,
    residual: Option<f64>,
}

fn sample(ctx: &Context, modes: &[Trajectory], seed: u64) -> Result<SampleBatch, OptimizerError> {
    let params = ctx.config.proposal_params(seed);
    let n = ctx.config.batch_size;
    Ok(match ctx.problem.goal_mode {
        GoalMode::Fixed => sampling::sample_fixed_goal(modes, &ctx.ops, &params, n)?,
        GoalMode::Rotational => sampling::sample_goal_exploration(
            modes,
            &ctx.problem.arm,
            &ctx.ops,
            &params,
            n,
            ctx.config.null_exploration,
        )?,
    })
}

struct Clustered {
    modes: Vec<(Trajectory, usize)>,
    elbo: Vec<f64>,
    jitter_events: usize,
}

/// Weights, embeds and clusters a batch with the given costs.
fn cluster_batch(
    batch: &SampleBatch,
    costs: &[f64],
    free: std::ops::Range<usize>,
    config: &SmtoConfig,
    seed: u64,
) -> Result<Clustered, OptimizerError> {
    let flat: Vec<Vec<f64>> = batch.trajectories.iter().map(|t| t.flatten(free.clone())).collect();
    let embedded = density::laplacian_eigenmap(&flat, config.eigenmap_params())?;
    let flat_proposal;
    let log_proposal = if config.proposal_correction {
        &batch.log_proposal_density
    } else {
        flat_proposal = vec![0.0; batch.len()];
        &flat_proposal
    };
    let weights = density::importance_weights(costs, log_proposal, config.cost_scale_alpha)?;
    let posterior = density::vbem_fit(&embedded, &weights, &config.vbem_params(seed))?;
    let labels = density::assign_clusters(&posterior, &embedded)?;
    let set = density::mode_trajectories(&batch.trajectories, costs, &weights, &labels)?;
    Ok(Clustered {
        modes: set
            .modes
            .into_iter()
            .take(config.max_solutions)
            .map(|m| (m.trajectory, m.cluster))
            .collect(),
        elbo: posterior.elbo_history,
        jitter_events: posterior.jitter_events,
    })
}

/// Plans a set of trajectories, one per discovered mode of the cost.
pub fn smto_plan(problem: &PlanningProblem, config: &SmtoConfig) -> Result<SolutionSet, OptimizerError> {
    let ctx = context(problem, config)?;
    let initial = Trajectory::linear(&problem.q_start, &problem.q_goal, config.steps)?;
    let eta0 = config.initial_eta(initial.dt());
    let mut modes: Vec<Candidate> = vec![Candidate {
        trajectory: initial,
        cost: f64::INFINITY,
        cluster: 0,
        residual: None,
    }];
    let mut diag = Diagnostics::default();

    for k in 0..config.outer_iterations {
        diag.iterations_run = k + 1;
        let centers: Vec<Trajectory> = modes.iter().map(|m| m.trajectory.clone()).collect();
        let batch = sample(&ctx, &centers, rng::derive(config.seed, 2 * k as u64))?;
        let costs = map_indices(batch.len(), |i| ctx.cost(&batch.trajectories[i]));
        let costs: Vec<f64> = costs.into_iter().collect::<Result<_, _>>()?;
        let clustered = cluster_batch(&batch, &costs, ctx.ops.free_range(), config, rng::derive(config.seed, 2 * k as u64 + 1))?;
        diag.mode_counts.push(clustered.modes.len());
        diag.elbo_traces.push(clustered.elbo);
        diag.vbem_jitter_events += clustered.jitter_events;

        let refined = map_indices(clustered.modes.len(), |i| {
            let (traj, cluster) = &clustered.modes[i];
            ctx.refine(traj, eta0, config.refine_iterations).map(|r| Candidate {
                trajectory: r.trajectory,
                cost: r.cost,
                cluster: *cluster,
                residual: r.projection_residual,
            })
        });
        let mut next = Vec::new();
        for r in refined {
            match r {
                Ok(c) => next.push(c),
                Err(OptimizerError::ProjectionFailed { .. }) => diag.projection_failures += 1,
                Err(e) => return Err(e),
            }
        }
        next.sort_by(|a, b| a.cost.total_cmp(&b.cost).then(a.cluster.cmp(&b.cluster)));
        let mut kept: Vec<Candidate> = Vec::new();
        for c in next {
            if kept.iter().any(|k| rms_distance(&k.trajectory, &c.trajectory) < config.dedup_distance) {
                diag.merged_modes += 1;
            } else {
                kept.push(c);
            }
        }
        diag.refined_counts.push(kept.len());
        if kept.is_empty() {
            break;
        }
        modes = kept;
        let all_clear = modes.iter().try_fold(true, |acc, m| {
            cost::obstacle_cost(&m.trajectory, &problem.arm, &problem.scene)
                .map(|c| acc && c < config.collision_accept_threshold)
        })?;
        if all_clear {
            break;
        }
    }

    let mut solutions = Vec::new();
    let mut residuals = Vec::new();
    for m in modes {
        if m.cost.is_infinite() {
            continue;
        }
        residuals.push(m.residual);
        solutions.push(ctx.solution(m.trajectory, m.cluster)?);
    }
    let feasible: Vec<bool> = solutions
        .iter()
        .map(|s| s.collision_cost < config.collision_accept_threshold)
        .collect();
    diag.infeasible = !feasible.iter().any(|f| *f);
    if !diag.infeasible {
        let mut keep = feasible.iter();
        solutions.retain(|_| *keep.next().unwrap());
        let mut keep = feasible.iter();
        residuals.retain(|_| *keep.next().unwrap());
    }
    diag.projection_residuals = residuals.into_iter().flatten().collect();
    Ok(SolutionSet { solutions, diagnostics: diag })
}

/// Point robot moving through a scene with binary cost regions.
#[derive(Debug, Clone)]
pub struct RegionProblem {
    pub scene: Scene,
    pub start: Vector2<f64>,
    pub goal: Vector2<f64>,
}

/// Sum over waypoints of the binary region cost.
pub fn region_path_cost(traj: &Trajectory, scene: &Scene) -> Result<f64, OptimizerError> {
    let mut total = 0.0;
    for t in 0..=traj.steps() {
        let m = traj.matrix();
        total += scene.region_cost(Vector2::new(m[(t, 0)], m[(t, 1)]))?;
    }
    Ok(total)
}

/// Sampling and density estimation only, with no gradient refinement:
/// returns the weighted-mean path of each mode after the last iteration.
/// Only zero-cost paths are returned when any exist.
pub fn plan_binary_region(problem: &RegionProblem, config: &SmtoConfig) -> Result<SolutionSet, OptimizerError> {
    config.validate()?;
    if problem.scene.regions().is_none() {
        return Err(SceneError::NoRegions.into());
    }
    let ops = SmoothnessOperators::new(REGION_STEPS, ClampMode::BothEndsFixed)?;
    let start = [problem.start.x, problem.start.y];
    let goal = [problem.goal.x, problem.goal.y];
    let mut modes = vec![(Trajectory::linear(&start, &goal, REGION_STEPS)?, 0)];
    let mut diag = Diagnostics::default();
    for k in 0..REGION_ITERATIONS {
        diag.iterations_run = k + 1;
        let centers: Vec<Trajectory> = modes.iter().map(|m| m.0.clone()).collect();
        let params = config.proposal_params(rng::derive(config.seed, 2 * k as u64));
        let batch = sampling::sample_fixed_goal(&centers, &ops, &params, config.batch_size)?;
        let costs = map_indices(batch.len(), |i| region_path_cost(&batch.trajectories[i], &problem.scene));
        let costs: Vec<f64> = costs.into_iter().collect::<Result<_, _>>()?;
        let clustered = cluster_batch(&batch, &costs, ops.free_range(), config, rng::derive(config.seed, 2 * k as u64 + 1))?;
        diag.mode_counts.push(clustered.modes.len());
        diag.refined_counts.push(clustered.modes.len());
        diag.elbo_traces.push(clustered.elbo);
        diag.vbem_jitter_events += clustered.jitter_events;
        modes = clustered.modes;
    }
    let mut solutions = Vec::with_capacity(modes.len());
    for (traj, cluster) in modes {
        let region = region_path_cost(&traj, &problem.scene)?;
        solutions.push(Solution {
            smoothness: traj.smoothness_cost(),
            trajectory: traj,
            final_cost: region,
            collision_cost: region,
            cluster_id: cluster,
        });
    }
    solutions.sort_by(|a, b| a.final_cost.total_cmp(&b.final_cost).then(a.cluster_id.cmp(&b.cluster_id)));
    diag.infeasible = !solutions.iter().any(|s| s.collision_cost == 0.0);
    if !diag.infeasible {
        solutions.retain(|s| s.collision_cost == 0.0);
    }
    Ok(SolutionSet { solutions, diagnostics: diag })
}
