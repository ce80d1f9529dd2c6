//! Problem and result files: JSON loading with field-path validation,
//! `key=value` overrides, and the result document.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::kinematics::{JointLimit, PlanarArm};
use crate::optimizer::{
    plan_binary_region, smto_plan, Diagnostics, GoalMode, OptimizerError, PlanningProblem, RegionProblem,
    SmtoConfig, Solution, SolutionSet,
};
use crate::scene::{Bounds, Obstacle, Polygon, Scene};
use crate::trajectory::Trajectory;

/// A load or validation failure, located by a dotted field path.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{path}: {message}")]
pub struct ProblemError {
    pub path: String,
    pub message: String,
}

impl ProblemError {
    fn at(path: impl Into<String>, message: impl ToString) -> Self {
        Self {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    pub position: Vector2<f64>,
    pub orientation: f64,
}

impl Default for BaseSection {
    fn default() -> Self {
        Self {
            position: Vector2::zeros(),
            orientation: 0.0,
        }
    }
}

fn default_body_points() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSection {
    pub link_lengths: Vec<f64>,
    #[serde(default)]
    pub base: BaseSection,
    #[serde(default)]
    pub joint_limits: Option<Vec<JointLimit>>,
    #[serde(default = "default_body_points")]
    pub body_points_per_link: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSection {
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub workspace: Bounds,
    pub margin_epsilon: f64,
    /// Unit-cost polygons; a non-empty list makes this a point-robot region task.
    #[serde(default)]
    pub regions: Vec<Polygon>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub q_start: Vec<f64>,
    pub q_goal: Vec<f64>,
    #[serde(default = "default_goal_mode")]
    pub goal_mode: GoalMode,
    #[serde(default)]
    pub rotation_range: Option<(f64, f64)>,
    #[serde(default)]
    pub null_range: Option<(f64, f64)>,
}

fn default_goal_mode() -> GoalMode {
    GoalMode::Fixed
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub arm: ArmSection,
    pub scene: SceneSection,
    pub problem: ProblemSection,
    pub smto: SmtoConfig,
}

/// A validated problem ready to plan.
#[derive(Debug, Clone)]
pub enum Task {
    Arm(PlanningProblem),
    Region(RegionProblem),
}

#[derive(Debug, Clone)]
pub struct ResolvedProblem {
    pub task: Task,
    pub config: SmtoConfig,
}

/// Sets `path` (dot separated) in `doc` to `raw`, parsed as JSON when it
/// parses and kept as a string otherwise. Missing objects are created.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<(), ProblemError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ProblemError::at(assignment, "override must have the form key=value"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(ProblemError::at(path, "empty key in override path"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (depth, key) in keys.iter().enumerate() {
        let here = keys[..=depth].join(".");
        node = match node {
            Value::Object(map) => map.entry(key.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let index: usize = key
                    .parse()
                    .map_err(|_| ProblemError::at(&here, "array index expected"))?;
                let len = items.len();
                items
                    .get_mut(index)
                    .ok_or_else(|| ProblemError::at(&here, format!("index out of range for length {len}")))?
            }
            Value::Null => {
                *node = Value::Object(Default::default());
                let Value::Object(map) = node else { unreachable!() };
                map.entry(key.to_string()).or_insert(Value::Null)
            }
            _ => return Err(ProblemError::at(&here, "cannot descend into a scalar")),
        };
    }
    *node = value;
    Ok(())
}

impl ProblemFile {
    /// Parses a problem document, applies overrides in order, and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ProblemError> {
        let mut doc: Value = serde_json::from_str(text).map_err(|e| ProblemError::at("<document>", e))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let file: ProblemFile = serde_path_to_error::deserialize(doc).map_err(|e| {
            let mut path = e.path().to_string();
            let message = e.into_inner().to_string();
            if let Some(field) = message.strip_prefix("missing field `").and_then(|m| m.strip_suffix('`')) {
                path = if path == "." { field.to_string() } else { format!("{path}.{field}") };
            }
            ProblemError::at(path, message)
        })?;
        file.resolve()?;
        Ok(file)
    }

    pub fn is_region_task(&self) -> bool {
        !self.scene.regions.is_empty()
    }

    /// Builds the planner inputs, checking every cross-field invariant.
    pub fn resolve(&self) -> Result<ResolvedProblem, ProblemError> {
        let mut config = self.smto.clone();
        if let Some(r) = self.problem.rotation_range {
            config.rotation_range = r;
        }
        if let Some(r) = self.problem.null_range {
            config.null_range = r;
        }
        config.validate().map_err(|e| ProblemError::at("smto", e))?;

        let regions = self.is_region_task().then(|| self.scene.regions.clone());
        let scene = Scene::new(
            self.scene.obstacles.clone(),
            self.scene.workspace,
            self.scene.margin_epsilon,
            regions,
        )
        .map_err(|e| ProblemError::at("scene", e))?;

        for (name, q) in [("problem.q_start", &self.problem.q_start), ("problem.q_goal", &self.problem.q_goal)] {
            if let Some(i) = q.iter().position(|v| !v.is_finite()) {
                return Err(ProblemError::at(format!("{name}[{i}]"), "must be finite"));
            }
        }

        let arm = PlanarArm::new(
            self.arm.link_lengths.clone(),
            self.arm.base.position,
            self.arm.base.orientation,
            self.arm.joint_limits.clone(),
            self.arm.body_points_per_link,
        )
        .map_err(|e| ProblemError::at("arm", e))?;

        let task = if self.is_region_task() {
            let point = |name: &str, q: &[f64]| {
                if q.len() == 2 {
                    Ok(Vector2::new(q[0], q[1]))
                } else {
                    Err(ProblemError::at(name, "region tasks take 2D points"))
                }
            };
            Task::Region(RegionProblem {
                scene,
                start: point("problem.q_start", &self.problem.q_start)?,
                goal: point("problem.q_goal", &self.problem.q_goal)?,
            })
        } else {
            let d = arm.dof();
            for (name, q) in [("problem.q_start", &self.problem.q_start), ("problem.q_goal", &self.problem.q_goal)] {
                if q.len() != d {
                    return Err(ProblemError::at(name, format!("expected {d} joint values, got {}", q.len())));
                }
            }
            if !arm.within_limits(&self.problem.q_start) {
                return Err(ProblemError::at("problem.q_start", "outside the joint limits"));
            }
            if self.problem.goal_mode == GoalMode::Fixed && !arm.within_limits(&self.problem.q_goal) {
                return Err(ProblemError::at("problem.q_goal", "outside the joint limits"));
            }
            Task::Arm(PlanningProblem {
                arm,
                scene,
                q_start: self.problem.q_start.clone(),
                q_goal: self.problem.q_goal.clone(),
                goal_mode: self.problem.goal_mode,
            })
        };
        Ok(ResolvedProblem { task, config })
    }
}

impl ResolvedProblem {
    /// Runs the planner matching the task type.
    pub fn plan(&self) -> Result<SolutionSet, OptimizerError> {
        match &self.task {
            Task::Arm(p) => smto_plan(p, &self.config),
            Task::Region(p) => plan_binary_region(p, &self.config),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    /// (T + 1) x D, one row per waypoint.
    pub waypoints: Vec<Vec<f64>>,
    pub final_cost: f64,
    pub collision_cost: f64,
    pub smoothness: f64,
    pub cluster_id: usize,
}

impl SolutionRecord {
    pub fn trajectory(&self) -> Result<Trajectory, crate::trajectory::TrajectoryError> {
        Trajectory::from_rows(&self.waypoints, 1.0)
    }
}

impl From<&Solution> for SolutionRecord {
    fn from(s: &Solution) -> Self {
        Self {
            waypoints: s.trajectory.rows(),
            final_cost: s.final_cost,
            collision_cost: s.collision_cost,
            smoothness: s.smoothness,
            cluster_id: s.cluster_id,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDiagnostics {
    #[serde(flatten)]
    pub planner: Diagnostics,
    /// Wall clock; the only field that may differ between identical runs.
    pub runtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub solutions: Vec<SolutionRecord>,
    pub infeasible: bool,
    pub diagnostics: ResultDiagnostics,
    pub seed: u64,
    /// The problem as planned, after overrides.
    pub problem: ProblemFile,
}

impl ResultFile {
    pub fn new(problem: &ProblemFile, set: &SolutionSet, runtime_seconds: f64) -> Self {
        Self {
            solutions: set.solutions.iter().map(SolutionRecord::from).collect(),
            infeasible: set.infeasible(),
            diagnostics: ResultDiagnostics {
                planner: set.diagnostics.clone(),
                runtime_seconds,
            },
            seed: problem.smto.seed,
            problem: problem.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result documents always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ProblemError> {
        serde_path_to_error::deserialize(&mut serde_json::Deserializer::from_str(text))
            .map_err(|e| ProblemError::at(e.path().to_string(), e.into_inner()))
    }
}
