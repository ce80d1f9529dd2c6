//! Trajectory cost: arc-length weighted collision cost over body points plus
//! weighted smoothness, its gradient over free waypoints, and the
//! exponential cost-to-weight map used for importance sampling.

use nalgebra::{DMatrix, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{KinematicsError, PlanarArm};
use crate::scene::Scene;
use crate::trajectory::{SmoothnessOperators, Trajectory, TrajectoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CostError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("cost {cost} lies outside the batch range [{min}, {max}]")]
    OutOfRange { cost: f64, min: f64, max: f64 },
    #[error("invalid cost parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Multiplies the smoothness term of the total cost.
    pub smoothness_weight: f64,
    /// Sharpness of the exponential cost-to-weight map.
    pub cost_scale_alpha: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            smoothness_weight: 1.0,
            cost_scale_alpha: 20.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), CostError> {
        if !(self.smoothness_weight >= 0.0 && self.smoothness_weight.is_finite()) {
            return Err(CostError::InvalidParams("smoothness_weight must be >= 0".into()));
        }
        // exp(alpha) must stay representable when weights leave the log domain.
        if !(self.cost_scale_alpha > 0.0 && self.cost_scale_alpha <= 700.0) {
            return Err(CostError::InvalidParams("cost_scale_alpha must be in (0, 700]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub obstacle: f64,
    pub smoothness: f64,
    pub total: f64,
}

struct BodySamples {
    points: Vec<Vec<Vector2<f64>>>,
    jacobians: Vec<Vec<DMatrix<f64>>>,
}

fn sample_body(traj: &Trajectory, arm: &PlanarArm, with_jacobians: bool) -> Result<BodySamples, CostError> {
    let mut points = Vec::with_capacity(traj.steps() + 1);
    let mut jacobians = Vec::new();
    for t in 0..=traj.steps() {
        let q = traj.waypoint(t);
        if with_jacobians {
            let (p, j): (Vec<_>, Vec<_>) = arm.body_points_with_jacobians(&q)?.into_iter().unzip();
            points.push(p);
            jacobians.push(j);
        } else {
            points.push(arm.body_points(&q)?);
        }
    }
    Ok(BodySamples { points, jacobians })
}

/// Temporal difference stencil for body-point velocity at step `t`:
/// central in the interior, one-sided at the ends.
fn velocity_stencil(t: usize, steps: usize, dt: f64) -> [(usize, f64); 2] {
    if t == 0 {
        [(1, 1.0 / dt), (0, -1.0 / dt)]
    } else if t == steps {
        [(steps, 1.0 / dt), (steps - 1, -1.0 / dt)]
    } else {
        [(t + 1, 0.5 / dt), (t - 1, -0.5 / dt)]
    }
}

fn velocity(points: &[Vec<Vector2<f64>>], t: usize, u: usize, dt: f64) -> Vector2<f64> {
    velocity_stencil(t, points.len() - 1, dt)
        .iter()
        .map(|(s, c)| points[*s][u] * *c)
        .sum()
}

/// Half the sum over waypoints and body points of the margin cost times
/// the body point's speed.
pub fn obstacle_cost(traj: &Trajectory, arm: &PlanarArm, scene: &Scene) -> Result<f64, CostError> {
    if scene.obstacles().is_empty() {
        return Ok(0.0);
    }
    let body = sample_body(traj, arm, false)?;
    let mut total = 0.0;
    for t in 0..=traj.steps() {
        for (u, x) in body.points[t].iter().enumerate() {
            let c = scene.local_collision_cost(*x);
            if c > 0.0 {
                total += c * velocity(&body.points, t, u, traj.dt()).norm();
            }
        }
    }
    Ok(0.5 * total)
}

/// Collision cost of a single configuration (no speed weighting).
pub fn configuration_collision_cost(q: &[f64], arm: &PlanarArm, scene: &Scene) -> Result<f64, CostError> {
    Ok(arm.body_points(q)?.iter().map(|x| scene.local_collision_cost(*x)).sum())
}

pub fn evaluate(
    traj: &Trajectory,
    arm: &PlanarArm,
    scene: &Scene,
    params: &CostParams,
) -> Result<CostBreakdown, CostError> {
    let obstacle = obstacle_cost(traj, arm, scene)?;
    let smoothness = traj.smoothness_cost();
    Ok(CostBreakdown {
        obstacle,
        smoothness,
        total: obstacle + params.smoothness_weight * smoothness,
    })
}

pub fn total_cost(traj: &Trajectory, arm: &PlanarArm, scene: &Scene, params: &CostParams) -> Result<f64, CostError> {
    Ok(evaluate(traj, arm, scene, params)?.total)
}

/// Gradient of the obstacle cost with respect to every waypoint, including
/// the derivative of the speed factor.
pub fn obstacle_gradient(traj: &Trajectory, arm: &PlanarArm, scene: &Scene) -> Result<DMatrix<f64>, CostError> {
    let steps = traj.steps();
    let mut grad = DMatrix::zeros(steps + 1, traj.dof());
    if scene.obstacles().is_empty() {
        return Ok(grad);
    }
    let body = sample_body(traj, arm, true)?;
    let n_body = arm.body_point_count();
    // Task-space gradient accumulated per (waypoint, body point).
    let mut task = vec![vec![Vector2::<f64>::zeros(); n_body]; steps + 1];
    for t in 0..=steps {
        for u in 0..n_body {
            let (c, dc) = scene.cost_and_gradient(body.points[t][u]);
            if c == 0.0 && dc == Vector2::zeros() {
                continue;
            }
            let v = velocity(&body.points, t, u, traj.dt());
            let speed = v.norm();
            task[t][u] += dc * speed;
            if speed > 0.0 && c > 0.0 {
                let dir = v / speed;
                for (s, coeff) in velocity_stencil(t, steps, traj.dt()) {
                    task[s][u] += dir * (c * coeff);
                }
            }
        }
    }
    for t in 0..=steps {
        for u in 0..n_body {
            let g = task[t][u];
            if g == Vector2::zeros() {
                continue;
            }
            let jac = &body.jacobians[t][u];
            for j in 0..traj.dof() {
                grad[(t, j)] += 0.5 * (jac[(0, j)] * g.x + jac[(1, j)] * g.y);
            }
        }
    }
    Ok(grad)
}

/// Gradient of `total_cost` restricted to the free waypoints of
/// `operators`, as an (n_free x D) block.
pub fn cost_gradient(
    traj: &Trajectory,
    arm: &PlanarArm,
    scene: &Scene,
    params: &CostParams,
    operators: &SmoothnessOperators,
) -> Result<DMatrix<f64>, CostError> {
    operators.check(traj)?;
    let full = obstacle_gradient(traj, arm, scene)? + traj.smoothness_gradient() * params.smoothness_weight;
    let r = operators.free_range();
    Ok(full.rows(r.start, r.len()).into_owned())
}

/// Log of the exponential cost-to-weight map,
/// -alpha (c - c_max) / (c_max - c_min); zero for a degenerate batch.
pub fn log_cost_weight(c: f64, c_min: f64, c_max: f64, alpha: f64) -> Result<f64, CostError> {
    const SLACK: f64 = 1e-12;
    if c < c_min - SLACK || c > c_max + SLACK || c_max < c_min {
        return Err(CostError::OutOfRange { cost: c, min: c_min, max: c_max });
    }
    if c_max == c_min {
        return Ok(0.0);
    }
    Ok(-alpha * (c - c_max) / (c_max - c_min))
}

pub fn cost_to_weight(c: f64, c_min: f64, c_max: f64, alpha: f64) -> Result<f64, CostError> {
    log_cost_weight(c, c_min, c_max, alpha).map(f64::exp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Bounds, Obstacle};
    use crate::trajectory::ClampMode;

    fn workspace() -> Bounds {
        Bounds { min: Vector2::new(-5.0, -5.0), max: Vector2::new(5.0, 5.0) }
    }

    fn circle_scene(center: Vector2<f64>, radius: f64, eps: f64) -> Scene {
        Scene::new(vec![Obstacle::Circle { center, radius }], workspace(), eps, None).unwrap()
    }

    #[test]
    fn free_space_costs_vanish() {
        let arm = PlanarArm::simple(&[1.0, 1.0]).unwrap();
        let scene = circle_scene(Vector2::new(4.0, 4.0), 0.2, 0.1);
        let line = Trajectory::linear(&[0.0, 0.5], &[1.0, -0.5], 20).unwrap();
        let params = CostParams::default();
        assert_eq!(obstacle_cost(&line, &arm, &scene).unwrap(), 0.0);
        assert!(total_cost(&line, &arm, &scene, &params).unwrap() < 1e-25);
        let ops = SmoothnessOperators::new(20, ClampMode::BothEndsFixed).unwrap();
        assert!(cost_gradient(&line, &arm, &scene, &params, &ops).unwrap().amax() < 1e-12);
    }

    #[test]
    fn static_trajectory_has_no_obstacle_cost() {
        let arm = PlanarArm::simple(&[1.0, 1.0]).unwrap();
        let scene = circle_scene(Vector2::new(1.0, 0.0), 0.5, 0.1);
        let t = Trajectory::linear(&[0.0, 0.0], &[0.0, 0.0], 10).unwrap();
        assert_eq!(obstacle_cost(&t, &arm, &scene).unwrap(), 0.0);
    }

    #[test]
    fn zero_smoothness_weight_gives_obstacle_cost() {
        let arm = PlanarArm::simple(&[1.0, 1.0]).unwrap();
        let scene = circle_scene(Vector2::new(1.2, 0.6), 0.4, 0.2);
        let t = Trajectory::linear(&[-0.6, 0.3], &[1.2, 0.4], 30).unwrap();
        let params = CostParams { smoothness_weight: 0.0, cost_scale_alpha: 10.0 };
        let b = evaluate(&t, &arm, &scene, &params).unwrap();
        assert!(b.obstacle > 0.0);
        assert_eq!(b.total, b.obstacle);
    }

    /// Independent re-derivation: a one-link arm with explicit body points
    /// and per-step speeds evaluated without the library helpers.
    #[test]
    fn one_link_sweep_matches_quadrature_oracle() {
        let arm = PlanarArm::simple(&[2.0]).unwrap().with_body_points(5).unwrap();
        let (center, radius, eps) = (Vector2::new(0.0, 1.2), 0.4, 0.3);
        let scene = circle_scene(center, radius, eps);
        let steps = 40;
        let t = Trajectory::linear(&[0.0], &[std::f64::consts::PI], steps).unwrap();
        let angle = |k: usize| std::f64::consts::PI * k as f64 / steps as f64;
        let mut oracle = 0.0;
        for k in 0..=steps {
            for s in 0..5 {
                let r = 2.0 * s as f64 / 4.0;
                let p = Vector2::new(r * angle(k).cos(), r * angle(k).sin());
                let d = (p - center).norm() - radius;
                let c = if d > eps {
                    0.0
                } else if d > 0.0 {
                    (d - eps).powi(2) / (2.0 * eps)
                } else {
                    -d + eps / 2.0
                };
                let at = |kk: usize| Vector2::new(r * angle(kk).cos(), r * angle(kk).sin());
                let v = if k == 0 {
                    at(1) - at(0)
                } else if k == steps {
                    at(steps) - at(steps - 1)
                } else {
                    (at(k + 1) - at(k - 1)) / 2.0
                };
                oracle += 0.5 * c * v.norm();
            }
        }
        let got = obstacle_cost(&t, &arm, &scene).unwrap();
        assert!(oracle > 0.0);
        assert!((got - oracle).abs() < 1e-12 * oracle.max(1.0), "{got} vs {oracle}");
    }

    #[test]
    fn pure_smoothness_gradient_is_quadratic_form() {
        let arm = PlanarArm::simple(&[1.0, 1.0]).unwrap();
        let scene = Scene::empty(workspace(), 0.1).unwrap();
        let steps = 8;
        let rows: Vec<Vec<f64>> = (0..=steps)
            .map(|t| {
                if t == 0 || t == steps {
                    vec![0.0, 0.0]
                } else {
                    vec![(t as f64 * 0.7).sin(), (t as f64 * 1.3).cos()]
                }
            })
            .collect();
        let traj = Trajectory::from_rows(&rows, 1.0).unwrap();
        let params = CostParams { smoothness_weight: 0.7, cost_scale_alpha: 1.0 };
        let ops = SmoothnessOperators::new(steps, ClampMode::BothEndsFixed).unwrap();
        let g = cost_gradient(&traj, &arm, &scene, &params, &ops).unwrap();
        let expected = ops.metric() * ops.free_block(&traj) * (2.0 * params.smoothness_weight);
        assert!((g - expected).amax() < 1e-12);
    }

    #[test]
    fn cost_to_weight_examples() {
        assert_eq!(cost_to_weight(5.0, 1.0, 5.0, 20.0).unwrap(), 1.0);
        assert!((cost_to_weight(1.0, 1.0, 5.0, 7.0).unwrap() - 7f64.exp()).abs() < 1e-9);
        assert!((cost_to_weight(3.0, 1.0, 5.0, 20.0).unwrap() - 10f64.exp()).abs() < 1e-8);
        assert_eq!(cost_to_weight(2.0, 2.0, 2.0, 20.0).unwrap(), 1.0);
        assert!(cost_to_weight(6.0, 1.0, 5.0, 20.0).is_err());
    }
}
