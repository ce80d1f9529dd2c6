//! Browser bindings: plan a problem file, render it, evaluate kinematics.
//!
//! All inputs and outputs are JSON strings or flat number arrays so the
//! same functions run natively under test.

use smto::kinematics::PlanarArm;
use smto::problem::{ProblemFile, ResultFile};
use smto::svg;
use wasm_bindgen::prelude::*;

/// Plans a problem file (JSON text) and returns the result file as JSON.
/// Runtime is reported as 0 since the browser has no monotonic clock here.
#[wasm_bindgen]
pub fn plan(problem_json: &str) -> Result<String, String> {
    let problem = ProblemFile::parse(problem_json, &[]).map_err(|e| e.to_string())?;
    let set = problem
        .resolve()
        .map_err(|e| e.to_string())?
        .plan()
        .map_err(|e| e.to_string())?;
    Ok(ResultFile::new(&problem, &set, 0.0).to_json())
}

/// Overview SVG of every solution in a result file.
#[wasm_bindgen]
pub fn render_overview(result_json: &str) -> Result<String, String> {
    let result = ResultFile::from_json(result_json).map_err(|e| e.to_string())?;
    let task = result.problem.resolve().map_err(|e| e.to_string())?.task;
    let trajectories = result
        .solutions
        .iter()
        .map(|s| s.trajectory().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(svg::overview_svg(&task, &trajectories))
}

/// Joint positions of a base-at-origin arm as `[x0, y0, x1, y1, ...]`,
/// ending with the tip.
#[wasm_bindgen]
pub fn forward_kinematics(link_lengths: Vec<f64>, q: Vec<f64>) -> Result<Vec<f64>, String> {
    let arm = PlanarArm::simple(&link_lengths).map_err(|e| e.to_string())?;
    let (points, _) = arm.joint_frames(&q).map_err(|e| e.to_string())?;
    Ok(points.iter().flat_map(|p| [p.x, p.y]).collect())
}
