//! Analytic obstacles, signed distances, and the margin-based collision cost.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("invalid obstacle {index}: {reason}")]
    InvalidObstacle { index: usize, reason: String },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("scene has no binary cost regions")]
    NoRegions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Obstacle {
    Circle { center: Vector2<f64>, radius: f64 },
    Rectangle { min: Vector2<f64>, max: Vector2<f64> },
    Capsule { a: Vector2<f64>, b: Vector2<f64>, radius: f64 },
}

impl Obstacle {
    fn validate(&self) -> Result<(), String> {
        match self {
            Obstacle::Circle { radius, .. } | Obstacle::Capsule { radius, .. } if !(*radius > 0.0) => {
                Err("radius must be positive".into())
            }
            Obstacle::Rectangle { min, max } if !(min.x < max.x && min.y < max.y) => {
                Err("rectangle needs min < max componentwise".into())
            }
            _ => Ok(()),
        }
    }

    /// Exact signed distance and its gradient (unit outward normal where defined).
    pub fn signed_distance_with_gradient(&self, x: Vector2<f64>) -> (f64, Vector2<f64>) {
        match self {
            Obstacle::Circle { center, radius } => radial(x - center, *radius),
            Obstacle::Capsule { a, b, radius } => {
                let ab = b - a;
                let len2 = ab.norm_squared();
                let t = if len2 > 0.0 { ((x - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
                radial(x - (a + ab * t), *radius)
            }
            Obstacle::Rectangle { min, max } => {
                let center = (min + max) * 0.5;
                let half = (max - min) * 0.5;
                let p = x - center;
                let q = Vector2::new(p.x.abs() - half.x, p.y.abs() - half.y);
                let sign = Vector2::new(sign_of(p.x), sign_of(p.y));
                if q.x > 0.0 || q.y > 0.0 {
                    let outside = Vector2::new(q.x.max(0.0), q.y.max(0.0));
                    let d = outside.norm();
                    let g = Vector2::new(outside.x * sign.x, outside.y * sign.y) / d;
                    (d, g)
                } else if q.x >= q.y {
                    (q.x, Vector2::new(sign.x, 0.0))
                } else {
                    (q.y, Vector2::new(0.0, sign.y))
                }
            }
        }
    }

    pub fn signed_distance(&self, x: Vector2<f64>) -> f64 {
        self.signed_distance_with_gradient(x).0
    }

    /// Axis-aligned bounding box (min, max).
    pub fn bounds(&self) -> (Vector2<f64>, Vector2<f64>) {
        match self {
            Obstacle::Circle { center, radius } => {
                let r = Vector2::repeat(*radius);
                (center - r, center + r)
            }
            Obstacle::Rectangle { min, max } => (*min, *max),
            Obstacle::Capsule { a, b, radius } => {
                let r = Vector2::repeat(*radius);
                (a.inf(b) - r, a.sup(b) + r)
            }
        }
    }
}

fn sign_of(v: f64) -> f64 {
    if v < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn radial(offset: Vector2<f64>, radius: f64) -> (f64, Vector2<f64>) {
    let dist = offset.norm();
    let grad = if dist > 0.0 { offset / dist } else { Vector2::new(1.0, 0.0) };
    (dist - radius, grad)
}

/// Simple polygon given by its vertices in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub vertices: Vec<Vector2<f64>>,
}

impl Polygon {
    pub fn rectangle(min: Vector2<f64>, max: Vector2<f64>) -> Self {
        Self {
            vertices: vec![min, Vector2::new(max.x, min.y), max, Vector2::new(min.x, max.y)],
        }
    }

    /// Point-in-polygon with the boundary counted as inside.
    pub fn contains(&self, x: Vector2<f64>) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        for i in 0..n {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            if on_segment(x, a, b) {
                return true;
            }
            if (a.y > x.y) != (b.y > x.y) {
                let cross_x = a.x + (x.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if x.x < cross_x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn centroid(&self) -> Vector2<f64> {
        let n = self.vertices.len() as f64;
        self.vertices.iter().sum::<Vector2<f64>>() / n
    }
}

fn on_segment(x: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>) -> bool {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((x - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (x - (a + ab * t)).norm() <= 1e-12 * (1.0 + ab.norm())
}

/// Axis-aligned workspace rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vector2<f64>,
    pub max: Vector2<f64>,
}

impl Bounds {
    pub fn contains_box(&self, min: Vector2<f64>, max: Vector2<f64>) -> bool {
        min.x >= self.min.x && min.y >= self.min.y && max.x <= self.max.x && max.y <= self.max.y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    obstacles: Vec<Obstacle>,
    workspace: Bounds,
    margin_epsilon: f64,
    regions: Option<Vec<Polygon>>,
}

impl Scene {
    pub fn new(
        obstacles: Vec<Obstacle>,
        workspace: Bounds,
        margin_epsilon: f64,
        regions: Option<Vec<Polygon>>,
    ) -> Result<Self, SceneError> {
        if !(margin_epsilon > 0.0 && margin_epsilon.is_finite()) {
            return Err(SceneError::InvalidScene("margin_epsilon must be positive".into()));
        }
        if !(workspace.min.x < workspace.max.x && workspace.min.y < workspace.max.y) {
            return Err(SceneError::InvalidScene("workspace needs min < max".into()));
        }
        for (index, obstacle) in obstacles.iter().enumerate() {
            obstacle
                .validate()
                .map_err(|reason| SceneError::InvalidObstacle { index, reason })?;
            let (lo, hi) = obstacle.bounds();
            if !workspace.contains_box(lo, hi) {
                return Err(SceneError::InvalidObstacle {
                    index,
                    reason: "extends outside the workspace".into(),
                });
            }
        }
        if let Some(regions) = &regions {
            if let Some(i) = regions.iter().position(|p| p.vertices.len() < 3) {
                return Err(SceneError::InvalidScene(format!("region {i} needs at least 3 vertices")));
            }
        }
        Ok(Self {
            obstacles,
            workspace,
            margin_epsilon,
            regions,
        })
    }

    /// Obstacle-free scene with the given workspace and margin.
    pub fn empty(workspace: Bounds, margin_epsilon: f64) -> Result<Self, SceneError> {
        Self::new(Vec::new(), workspace, margin_epsilon, None)
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn workspace(&self) -> Bounds {
        self.workspace
    }

    pub fn margin_epsilon(&self) -> f64 {
        self.margin_epsilon
    }

    pub fn regions(&self) -> Option<&[Polygon]> {
        self.regions.as_deref()
    }

    /// Index of the nearest obstacle with its signed distance and gradient.
    /// Ties go to the lowest index. `None` for an obstacle-free scene.
    pub fn nearest(&self, x: Vector2<f64>) -> Option<(usize, f64, Vector2<f64>)> {
        let mut best: Option<(usize, f64, Vector2<f64>)> = None;
        for (i, obstacle) in self.obstacles.iter().enumerate() {
            let (d, g) = obstacle.signed_distance_with_gradient(x);
            if best.is_none_or(|(_, bd, _)| d < bd) {
                best = Some((i, d, g));
            }
        }
        best
    }

    /// Minimum signed distance over obstacles; +inf when there are none.
    pub fn signed_distance(&self, x: Vector2<f64>) -> f64 {
        self.nearest(x).map_or(f64::INFINITY, |(_, d, _)| d)
    }

    pub fn local_collision_cost(&self, x: Vector2<f64>) -> f64 {
        margin_cost(self.signed_distance(x), self.margin_epsilon)
    }

    pub fn local_collision_gradient(&self, x: Vector2<f64>) -> Vector2<f64> {
        self.cost_and_gradient(x).1
    }

    pub fn cost_and_gradient(&self, x: Vector2<f64>) -> (f64, Vector2<f64>) {
        match self.nearest(x) {
            None => (0.0, Vector2::zeros()),
            Some((_, d, g)) => {
                let eps = self.margin_epsilon;
                (margin_cost(d, eps), g * margin_cost_derivative(d, eps))
            }
        }
    }

    /// Binary cost: 1 inside any region or outside the workspace, else 0.
    pub fn region_cost(&self, x: Vector2<f64>) -> Result<f64, SceneError> {
        let regions = self.regions.as_ref().ok_or(SceneError::NoRegions)?;
        let outside = !self.workspace.contains_box(x, x);
        Ok(if outside || regions.iter().any(|p| p.contains(x)) { 1.0 } else { 0.0 })
    }
}

/// Piecewise margin cost of a signed distance `d`: zero beyond the margin,
/// quadratic inside it, linear inside the obstacle. C^1 everywhere.
pub fn margin_cost(d: f64, eps: f64) -> f64 {
    if d >= eps {
        0.0
    } else if d >= 0.0 {
        (d - eps) * (d - eps) / (2.0 * eps)
    } else {
        -d + 0.5 * eps
    }
}

pub fn margin_cost_derivative(d: f64, eps: f64) -> f64 {
    if d >= eps {
        0.0
    } else if d >= 0.0 {
        (d - eps) / eps
    } else {
        -1.0
    }
}
