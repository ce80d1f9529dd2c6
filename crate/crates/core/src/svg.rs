//! Static SVG figures of scenes and planned trajectories.
//!
//! Every trajectory is drawn as exactly one `<path>` element (its
//! end-effector or point trace); all other geometry uses other elements.

use std::fmt::Write;

use nalgebra::Vector2;

use crate::kinematics::PlanarArm;
use crate::problem::Task;
use crate::scene::{Obstacle, Scene};
use crate::trajectory::Trajectory;

const WIDTH_PX: f64 = 640.0;
const POSES_PER_SOLUTION: usize = 10;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

struct Canvas {
    out: String,
    min: Vector2<f64>,
    max: Vector2<f64>,
    scale: f64,
}

impl Canvas {
    fn new(scene: &Scene) -> Self {
        let ws = scene.workspace();
        let scale = WIDTH_PX / (ws.max.x - ws.min.x);
        let height = (ws.max.y - ws.min.y) * scale;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH_PX}" height="{height:.1}" viewBox="0 0 {WIDTH_PX} {height:.1}">"#
        );
        let _ = writeln!(out, r##"<rect x="0" y="0" width="{WIDTH_PX}" height="{height:.1}" fill="#ffffff" stroke="#000000"/>"##);
        Self {
            out,
            min: ws.min,
            max: ws.max,
            scale,
        }
    }

    fn px(&self, p: Vector2<f64>) -> (f64, f64) {
        ((p.x - self.min.x) * self.scale, (self.max.y - p.y) * self.scale)
    }

    fn scene(&mut self, scene: &Scene) {
        if let Some(regions) = scene.regions() {
            for poly in regions {
                let pts: Vec<String> = poly
                    .vertices
                    .iter()
                    .map(|v| {
                        let (x, y) = self.px(*v);
                        format!("{x:.2},{y:.2}")
                    })
                    .collect();
                let _ = writeln!(self.out, r##"<polygon points="{}" fill="#9ecae1"/>"##, pts.join(" "));
            }
        }
        for o in scene.obstacles() {
            match o {
                Obstacle::Circle { center, radius } => {
                    let (x, y) = self.px(*center);
                    let r = radius * self.scale;
                    let _ = writeln!(self.out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="{r:.2}" fill="#7f7f7f"/>"##);
                }
                Obstacle::Rectangle { min, max } => {
                    let (x, y) = self.px(Vector2::new(min.x, max.y));
                    let (w, h) = ((max.x - min.x) * self.scale, (max.y - min.y) * self.scale);
                    let _ = writeln!(
                        self.out,
                        r##"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="#7f7f7f"/>"##
                    );
                }
                Obstacle::Capsule { a, b, radius } => {
                    let (x1, y1) = self.px(*a);
                    let (x2, y2) = self.px(*b);
                    let w = 2.0 * radius * self.scale;
                    let _ = writeln!(
                        self.out,
                        r##"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="#7f7f7f" stroke-width="{w:.2}" stroke-linecap="round"/>"##
                    );
                }
            }
        }
    }

    fn poses(&mut self, arm: &PlanarArm, traj: &Trajectory, color: &str) {
        let steps = traj.steps();
        for k in 0..POSES_PER_SOLUTION {
            let t = (k * steps) / (POSES_PER_SOLUTION - 1);
            let Ok((joints, _)) = arm.joint_frames(&traj.waypoint(t)) else { continue };
            let pts: Vec<String> = joints
                .iter()
                .map(|p| {
                    let (x, y) = self.px(*p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let opacity = 0.25 + 0.75 * k as f64 / (POSES_PER_SOLUTION - 1) as f64;
            let _ = writeln!(
                self.out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2" stroke-opacity="{opacity:.2}"/>"#,
                pts.join(" ")
            );
        }
    }

    fn trace(&mut self, points: &[Vector2<f64>], color: &str) {
        let mut d = String::new();
        for (i, p) in points.iter().enumerate() {
            let (x, y) = self.px(*p);
            let _ = write!(d, "{}{x:.2},{y:.2}", if i == 0 { "M" } else { " L" });
        }
        let _ = writeln!(
            self.out,
            r#"<path class="trace" d="{d}" fill="none" stroke="{color}" stroke-width="2.5"/>"#
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

fn trace_points(task: &Task, traj: &Trajectory) -> Vec<Vector2<f64>> {
    (0..=traj.steps())
        .filter_map(|t| {
            let q = traj.waypoint(t);
            match task {
                Task::Arm(p) => p.arm.forward_kinematics(&q).ok().map(|pose| pose.position),
                Task::Region(_) => Some(Vector2::new(q[0], q[1])),
            }
        })
        .collect()
}

fn scene_of(task: &Task) -> &Scene {
    match task {
        Task::Arm(p) => &p.scene,
        Task::Region(p) => &p.scene,
    }
}

/// One solution: scene, arm poses at evenly spaced waypoints, tip trace.
pub fn solution_svg(task: &Task, traj: &Trajectory, index: usize) -> String {
    let color = PALETTE[index % PALETTE.len()];
    let mut c = Canvas::new(scene_of(task));
    c.scene(scene_of(task));
    if let Task::Arm(p) = task {
        c.poses(&p.arm, traj, color);
    }
    c.trace(&trace_points(task, traj), color);
    c.finish()
}

/// All solutions over the scene, one trace each.
pub fn overview_svg(task: &Task, trajectories: &[Trajectory]) -> String {
    let mut c = Canvas::new(scene_of(task));
    c.scene(scene_of(task));
    if let (Task::Arm(p), Some(first)) = (task, trajectories.first()) {
        if let Ok((joints, _)) = p.arm.joint_frames(&first.start()) {
            let pts: Vec<String> = joints
                .iter()
                .map(|q| {
                    let (x, y) = c.px(*q);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(
                c.out,
                r##"<polyline points="{}" fill="none" stroke="#000000" stroke-width="2"/>"##,
                pts.join(" ")
            );
        }
    }
    for (i, t) in trajectories.iter().enumerate() {
        c.trace(&trace_points(task, t), PALETTE[i % PALETTE.len()]);
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::{GoalMode, PlanningProblem};
    use crate::scene::Bounds;

    fn task() -> Task {
        let ws = Bounds {
            min: Vector2::new(-3.0, -3.0),
            max: Vector2::new(3.0, 3.0),
        };
        let scene = Scene::new(
            vec![
                Obstacle::Circle { center: Vector2::new(1.0, 1.0), radius: 0.3 },
                Obstacle::Rectangle { min: Vector2::new(-2.0, -2.0), max: Vector2::new(-1.0, -1.5) },
                Obstacle::Capsule { a: Vector2::new(2.0, -2.0), b: Vector2::new(2.5, 0.0), radius: 0.1 },
            ],
            ws,
            0.2,
            None,
        )
        .unwrap();
        Task::Arm(PlanningProblem {
            arm: PlanarArm::simple(&[1.0, 1.0]).unwrap(),
            scene,
            q_start: vec![0.0, 0.0],
            q_goal: vec![1.0, 0.5],
            goal_mode: GoalMode::Fixed,
        })
    }

    #[test]
    fn one_path_per_trace() {
        let t = Trajectory::linear(&[0.0, 0.0], &[1.0, 0.5], 20).unwrap();
        let single = solution_svg(&task(), &t, 0);
        assert_eq!(single.matches("<path").count(), 1);
        assert_eq!(single.matches("<polyline").count(), POSES_PER_SOLUTION);
        let all = overview_svg(&task(), &[t.clone(), t.clone(), t]);
        assert_eq!(all.matches("<path").count(), 3);
        for doc in [&single, &all] {
            let parsed = roxmltree::Document::parse(doc).unwrap();
            assert_eq!(parsed.root_element().tag_name().name(), "svg");
        }
    }
}
