use smto::problem::ResultFile;
use smto_web::{forward_kinematics, plan, render_overview};

const PROBLEM: &str = r#"{
  "arm": {"link_lengths": [1.0, 1.0]},
  "scene": {
    "obstacles": [{"type": "circle", "center": [1.6, 0.6], "radius": 0.2}],
    "workspace": {"min": [-3.0, -3.0], "max": [3.0, 3.0]},
    "margin_epsilon": 0.2
  },
  "problem": {"q_start": [0.0, 0.5], "q_goal": [1.2, -0.4]},
  "smto": {"N": 60, "T": 16, "K": 2, "refine_iterations": 40, "seed": 3}
}"#;

#[test]
fn plan_round_trips_and_renders() {
    let text = plan(PROBLEM).unwrap();
    let result = ResultFile::from_json(&text).unwrap();
    assert!(!result.solutions.is_empty());
    assert_eq!(result.seed, 3);
    assert_eq!(result.diagnostics.runtime_seconds, 0.0);
    assert_eq!(plan(PROBLEM).unwrap(), text);
    let svg = render_overview(&text).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<path").count(), result.solutions.len());
}

#[test]
fn errors_are_messages() {
    let e = plan(r#"{"arm": {}}"#).unwrap_err();
    assert!(e.contains("arm.link_lengths"), "{e}");
    assert!(render_overview("[]").is_err());
    assert!(forward_kinematics(vec![1.0], vec![0.0, 1.0]).is_err());
}

#[test]
fn kinematics_matches_closed_form() {
    let p = forward_kinematics(vec![1.0, 0.5], vec![std::f64::consts::FRAC_PI_2, -std::f64::consts::FRAC_PI_2]).unwrap();
    let expect = [0.0, 0.0, 0.0, 1.0, 0.5, 1.0];
    assert_eq!(p.len(), expect.len());
    for (a, b) in p.iter().zip(expect) {
        assert!((a - b).abs() < 1e-12, "{p:?}");
    }
}
