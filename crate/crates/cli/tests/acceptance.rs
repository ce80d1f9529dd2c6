//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported but do not fail the
//! target; any other failure exits non-zero.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use smto::cost::{configuration_collision_cost, cost_gradient, obstacle_cost, total_cost, CostParams};
use smto::density::{importance_weights, vbem_fit, weights_from_target, EmbeddedBatch, ImportanceWeights, VbemInit, VbemParams};
use smto::kinematics::PlanarArm;
use smto::optimizer::{
    covariant_descent_plan, project_goal_constraint, refine_trajectory, GoalMode, PlanningProblem, SmtoConfig,
};
use smto::problem::{ProblemFile, ResultFile, Task};
use smto::rng::stream;
use smto::scene::{Bounds, Obstacle, Scene};
use smto::trajectory::{ClampMode, SmoothnessOperators, Trajectory};
use smto_cli::{run_problem, sweep_command};

const KNOWN_FAILURES: [u32; 2] = [1, 5];
const SEEDS: u64 = 10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn problems_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems")
}

fn load(name: &str) -> ProblemFile {
    let text = std::fs::read_to_string(problems_dir().join(name)).expect("problem file");
    ProblemFile::parse(&text, &[]).expect("valid problem")
}

fn with_seed(p: &ProblemFile, seed: u64) -> ProblemFile {
    let mut p = p.clone();
    p.smto.seed = seed;
    p
}

fn arm_problem(p: &ProblemFile) -> PlanningProblem {
    match p.resolve().expect("resolves").task {
        Task::Arm(a) => a,
        Task::Region(_) => panic!("expected an arm task"),
    }
}

/// Mean y of the path inside the central corridor's x-span, against the
/// central region's centroid.
fn corridor_side(result: &ResultFile, waypoints: &[Vec<f64>]) -> bool {
    let centre = &result.problem.scene.regions[0];
    let c = centre.centroid();
    let (lo, hi) = centre
        .vertices
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.x), hi.max(v.x)));
    let ys: Vec<f64> = waypoints.iter().filter(|w| w[0] > lo && w[0] < hi).map(|w| w[1]).collect();
    ys.iter().sum::<f64>() / ys.len().max(1) as f64 > c.y
}

fn c1_two_corridor() -> Outcome {
    let base = load("two_corridor.json");
    let (mut hits, mut slowest) = (0, 0.0f64);
    let mut counts = Vec::new();
    for seed in 0..SEEDS {
        let r = run_problem(&with_seed(&base, seed)).expect("plans");
        slowest = slowest.max(r.diagnostics.runtime_seconds);
        let sides: Vec<bool> = r
            .solutions
            .iter()
            .filter(|s| s.collision_cost == 0.0)
            .map(|s| corridor_side(&r, &s.waypoints))
            .collect();
        let distinct = sides.contains(&true) && sides.contains(&false);
        counts.push(format!("{}{}", sides.len(), if distinct { "+" } else { "" }));
        hits += distinct as u32;
    }
    outcome(
        hits >= 8 && slowest < 60.0,
        format!("{hits}/10 seeds with both homotopy classes [{}], slowest run {slowest:.2}s", counts.join(" ")),
    )
}

fn c2_four_link() -> Outcome {
    let base = load("four_link.json");
    let mut hits = 0;
    let mut tally = Vec::new();
    for seed in 0..SEEDS {
        let r = run_problem(&with_seed(&base, seed)).expect("plans");
        let mut clusters: Vec<usize> = r
            .solutions
            .iter()
            .filter(|s| s.collision_cost < 1e-4)
            .map(|s| s.cluster_id)
            .collect();
        clusters.sort_unstable();
        clusters.dedup();
        tally.push(clusters.len().to_string());
        hits += (clusters.len() >= 2) as u32;
    }
    outcome(hits >= 7, format!("{hits}/10 seeds with >= 2 collision-free modes [{}]", tally.join(" ")))
}

fn rotational_success(r: &ResultFile, problem: &PlanningProblem) -> bool {
    let target = problem.target_position().unwrap();
    r.solutions.iter().any(|s| {
        let tip = problem.arm.forward_kinematics(s.waypoints.last().unwrap()).unwrap().position;
        s.collision_cost < 1e-4 && (tip - target).norm() < 1e-3
    })
}

fn c3_rotational() -> Outcome {
    let base = load("rotational.json");
    let problem = arm_problem(&base);
    let goal_collision = configuration_collision_cost(&problem.q_goal, &problem.arm, &problem.scene).unwrap();
    let mut hits = 0;
    for seed in 0..SEEDS {
        let r = run_problem(&with_seed(&base, seed)).expect("plans");
        hits += rotational_success(&r, &problem) as u32;
    }
    outcome(
        goal_collision > 0.0 && hits >= 8,
        format!("{hits}/10 seeds reach the goal position collision-free (given goal collision cost {goal_collision:.3})"),
    )
}

fn blob_data(seed: u64, means: &[[f64; 2]], per: usize, sigma: f64) -> EmbeddedBatch {
    let mut rng = stream(seed, 4);
    let mut m = DMatrix::zeros(means.len() * per, 2);
    for (k, mu) in means.iter().enumerate() {
        for i in 0..per {
            for j in 0..2 {
                let z: f64 = rng.sample(StandardNormal);
                m[(k * per + i, j)] = mu[j] + sigma * z;
            }
        }
    }
    EmbeddedBatch {
        points: m,
        source_indices: (0..means.len() * per).collect(),
    }
}

fn c4_vbem() -> Outcome {
    // Separated by 20 sigma; posterior means shrink toward the data mean by
    // beta0 / (mass + beta0), so the offset from the origin sets that bias.
    let truth = [[-1.5, 0.0], [1.5, 0.0]];
    let mut recovered = 0;
    for seed in 0..20 {
        let data = blob_data(seed, &truth, 100, 0.15);
        let params = VbemParams {
            init: VbemInit::KMeansPlusPlus { seed },
            ..VbemParams::default()
        };
        let post = vbem_fit(&data, &ImportanceWeights::uniform(200), &params).unwrap();
        let alive: Vec<_> = (0..post.components()).filter(|l| post.surviving[*l]).collect();
        let close = truth.iter().all(|t| {
            alive
                .iter()
                .any(|l| (post.means[*l][0] - t[0]).hypot(post.means[*l][1] - t[1]) < 0.1)
        });
        recovered += (alive.len() == 2 && close) as u32;
    }
    let mut worst = f64::INFINITY;
    for seed in 0..50u64 {
        let mut rng = stream(seed, 5);
        let centres: Vec<[f64; 2]> = (0..3)
            .map(|_| [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)])
            .collect();
        let data = blob_data(seed + 100, &centres, 50, 1.0);
        let f: Vec<f64> = (0..data.len()).map(|_| rng.random_range(0.05..1.0)).collect();
        let w = weights_from_target(&f, &vec![0.0; f.len()]).unwrap();
        let params = VbemParams {
            init: VbemInit::KMeansPlusPlus { seed },
            ..VbemParams::default()
        };
        let post = vbem_fit(&data, &w, &params).unwrap();
        for pair in post.elbo_history.windows(2) {
            worst = worst.min((pair[1] - pair[0]) / pair[0].abs().max(1.0));
        }
    }
    outcome(
        recovered >= 19 && worst >= -1e-8,
        format!("{recovered}/20 two-blob fits exact; worst relative objective change over 50 fits {worst:.2e}"),
    )
}

fn c5_weights() -> Outcome {
    let mut rng = stream(5, 0);
    let (mut worst_sum, mut uniform_ok, mut pow2_ok, mut general_ok) = (0.0f64, true, 0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..200);
        let f: Vec<f64> = (0..n).map(|_| rng.random_range(1e-6..1.0)).collect();
        let lb: Vec<f64> = (0..n).map(|_| rng.random_range(-30.0..30.0)).collect();
        let w = weights_from_target(&f, &lb).unwrap();
        worst_sum = worst_sum.max((w.as_slice().iter().sum::<f64>() - 1.0).abs());

        let flat = importance_weights(&vec![0.7; n], &vec![-3.0; n], 20.0).unwrap();
        uniform_ok &= flat.as_slice().iter().all(|x| *x == 1.0 / n as f64);

        let pow2 = 2f64.powi(rng.random_range(-40..40));
        let general = 10f64.powf(rng.random_range(-3.0..3.0));
        let scaled = |s: f64| weights_from_target(&f.iter().map(|v| v * s).collect::<Vec<_>>(), &lb).unwrap();
        pow2_ok += (scaled(pow2) == w) as u32;
        general_ok += (scaled(general) == w) as u32;
    }
    outcome(
        worst_sum <= 1e-12 && uniform_ok && pow2_ok == 1000 && general_ok == 1000,
        format!(
            "max |sum - 1| {worst_sum:.1e}; uniform exact {uniform_ok}; bitwise unchanged under rescaling: power-of-two {pow2_ok}/1000, arbitrary {general_ok}/1000"
        ),
    )
}

fn random_arm_and_trajectory(rng: &mut impl Rng) -> (PlanarArm, Trajectory) {
    let d = rng.random_range(2..5);
    let links: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.2)).collect();
    let arm = PlanarArm::simple(&links).unwrap().with_body_points(4).unwrap();
    let steps = 12;
    let a: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let b: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut traj = Trajectory::linear(&a, &b, steps).unwrap();
    for t in 1..steps {
        let bump = (std::f64::consts::PI * t as f64 / steps as f64).sin();
        for j in 0..d {
            traj.matrix_mut()[(t, j)] += 0.3 * bump * rng.random_range(-1.0..1.0);
        }
    }
    (arm, traj)
}

fn c6_gradient() -> Outcome {
    let mut rng = stream(6, 0);
    let ws = Bounds {
        min: Vector2::new(-6.0, -6.0),
        max: Vector2::new(6.0, 6.0),
    };
    let params = CostParams::default();
    let (mut free_err, mut band_err, mut min_cos, mut band_cases) = (0.0f64, 0.0f64, 1.0f64, 0);
    for _ in 0..100 {
        let (arm, traj) = random_arm_and_trajectory(&mut rng);
        let obstacles = (0..3)
            .map(|_| Obstacle::Circle {
                center: Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                radius: rng.random_range(0.1..0.5),
            })
            .collect();
        let scene = Scene::new(obstacles, ws, 0.3, None).unwrap();
        let ops = SmoothnessOperators::new(traj.steps(), ClampMode::BothEndsFixed).unwrap();
        let g = cost_gradient(&traj, &arm, &scene, &params, &ops).unwrap();
        let h = 1e-6;
        let mut fd = DMatrix::zeros(g.nrows(), g.ncols());
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let eval = |delta: f64| {
                    let mut t = traj.clone();
                    t.matrix_mut()[(i + 1, j)] += delta;
                    total_cost(&t, &arm, &scene, &params).unwrap()
                };
                fd[(i, j)] = (eval(h) - eval(-h)) / (2.0 * h);
            }
        }
        let rel = (&g - &fd).norm() / fd.norm().max(1e-12);
        let cos = g.dot(&fd) / (g.norm() * fd.norm()).max(1e-300);
        min_cos = min_cos.min(cos);
        if obstacle_cost(&traj, &arm, &scene).unwrap() == 0.0 {
            free_err = free_err.max(rel);
        } else {
            band_cases += 1;
            band_err = band_err.max(rel);
        }
    }
    outcome(
        free_err < 1e-5 && band_err < 5e-3 && min_cos > 0.99,
        format!(
            "max relative error {free_err:.1e} obstacle-free, {band_err:.1e} near obstacles ({band_cases} cases); min cosine {min_cos:.6}"
        ),
    )
}

fn c7_empty_scene_convergence() -> Outcome {
    let mut rng = stream(7, 0);
    let ws = Bounds {
        min: Vector2::new(-6.0, -6.0),
        max: Vector2::new(6.0, 6.0),
    };
    let (mut worst, mut monotone) = (0.0f64, true);
    for _ in 0..20 {
        let (arm, bent) = random_arm_and_trajectory(&mut rng);
        let problem = PlanningProblem {
            arm,
            scene: Scene::empty(ws, 0.3).unwrap(),
            q_start: bent.start(),
            q_goal: bent.goal(),
            goal_mode: GoalMode::Fixed,
        };
        let config = SmtoConfig {
            steps: bent.steps(),
            ..SmtoConfig::default()
        };
        let r = refine_trajectory(&problem, &config, &bent, 100).unwrap();
        let line = Trajectory::linear(&problem.q_start, &problem.q_goal, bent.steps()).unwrap();
        worst = worst.max((r.trajectory.matrix() - line.matrix()).amax());
        monotone &= r.cost_trace.windows(2).all(|p| p[0] <= 1e-10 || p[1] < p[0]);
    }
    outcome(
        worst < 1e-6 && monotone,
        format!("max waypoint error {worst:.1e} after 100 iterations; cost strictly decreasing {monotone}"),
    )
}

/// Bent elbows keep the goal away from the singular stretched and folded
/// poses.
fn bent_pose(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| {
            if j == 0 {
                rng.random_range(-3.0..3.0)
            } else {
                rng.random_range(0.5..2.5) * if rng.random::<bool>() { 1.0 } else { -1.0 }
            }
        })
        .collect()
}

fn c8_projection() -> Outcome {
    let mut rng = stream(8, 0);
    let (mut ok, mut worst, mut start_kept) = (0, 0.0f64, true);
    for _ in 0..1000 {
        let d = rng.random_range(2..4);
        let links: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..1.2)).collect();
        let arm = PlanarArm::simple(&links).unwrap();
        let traj = Trajectory::linear(&bent_pose(&mut rng, d), &bent_pose(&mut rng, d), 20).unwrap();
        let ops = SmoothnessOperators::new(20, ClampMode::StartFixedOnly).unwrap();
        let tip = arm.forward_kinematics(&traj.goal()).unwrap().position;
        // Displacements must leave the target inside the reachable annulus.
        let inner = (2.0 * links.iter().copied().fold(0.0, f64::max) - arm.reach()).max(0.0);
        let target = loop {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let t = tip + Vector2::new(angle.cos(), angle.sin()) * rng.random_range(0.0..0.05);
            if t.norm() < arm.reach() - 1e-2 && t.norm() > inner + 1e-2 {
                break t;
            }
        };
        if let Ok((out, residual)) = project_goal_constraint(&traj, &arm, target, &ops, 1e-6) {
            ok += (residual < 1e-6) as u32;
            worst = worst.max(residual);
            start_kept &= out.start() == traj.start();
        }
    }
    outcome(
        ok == 1000 && start_kept,
        format!("{ok}/1000 projections converged within 20 iterations (worst residual {worst:.1e}); start untouched {start_kept}"),
    )
}

fn c9_null_space() -> Outcome {
    let base = load("rotational.json");
    let mut off = base.clone();
    off.smto.null_exploration = false;
    off.smto.null_update = false;
    let mean = |p: &ProblemFile| {
        (0..SEEDS)
            .map(|s| run_problem(&with_seed(p, s)).expect("plans").solutions.len())
            .sum::<usize>() as f64
            / SEEDS as f64
    };
    let (with, without) = (mean(&base), mean(&off));
    outcome(with >= without, format!("mean solutions {with:.1} with null space, {without:.1} without"))
}

fn sweep_rows(grid: &str) -> Vec<smto_cli::SweepRow> {
    let dir = tempfile::tempdir().unwrap();
    sweep_command(&problems_dir().join("two_corridor.json"), &problems_dir().join(grid), dir.path()).expect("sweep runs")
}

fn c10_trends() -> Outcome {
    let by_n = sweep_rows("grid_batch.json");
    let runtimes: Vec<f64> = by_n.iter().map(|r| r.mean_runtime_seconds).collect();
    let monotone = runtimes.windows(2).all(|p| p[1] > p[0]);
    let by_alpha = sweep_rows("grid_alpha.json");
    let counts: Vec<f64> = by_alpha.iter().map(|r| r.mean_solution_count).collect();
    let trend = counts.last() >= counts.first();
    outcome(
        monotone && trend,
        format!(
            "runtime by N {:?}; mean solutions by alpha {:?}",
            runtimes.iter().map(|r| format!("{r:.2}s")).collect::<Vec<_>>(),
            counts
        ),
    )
}

fn c11_smoothness_parity() -> Outcome {
    let mut base = load("four_link.json");
    base.smto.refine_iterations = 3000;
    let result = run_problem(&base).expect("plans");
    let best = result.solutions[0].smoothness;
    let mut single = base.smto.clone();
    single.max_solutions = 1;
    let oracle = covariant_descent_plan(&arm_problem(&base), &single).expect("descends").solutions[0].smoothness;
    let gap = (best - oracle).abs() / oracle;
    outcome(
        gap < 0.05,
        format!("best smoothness {best:.5} vs covariant descent {oracle:.5} ({:.1}%)", 100.0 * gap),
    )
}

fn without_runtime(r: &ResultFile) -> Value {
    let mut v = serde_json::to_value(r).unwrap();
    v["diagnostics"].as_object_mut().unwrap().remove("runtime_seconds");
    v
}

fn c12_determinism() -> Outcome {
    let mut same = 0;
    let names = ["four_link.json", "rotational.json", "two_corridor.json"];
    for name in names {
        let p = load(name);
        same += (without_runtime(&run_problem(&p).unwrap()) == without_runtime(&run_problem(&p).unwrap())) as u32;
    }
    outcome(same == 3, format!("{same}/3 scenes reproduce identical result files"))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 12] = [
        (1, "two-corridor homotopy classes", c1_two_corridor),
        (2, "four-link collision-free modes", c2_four_link),
        (3, "rotational goal", c3_rotational),
        (4, "VBEM recovery and monotone objective", c4_vbem),
        (5, "importance-weight laws", c5_weights),
        (6, "gradient fidelity", c6_gradient),
        (7, "covariant descent optimality", c7_empty_scene_convergence),
        (8, "goal projection accuracy", c8_projection),
        (9, "null-space diversity", c9_null_space),
        (10, "hyperparameter trends", c10_trends),
        (11, "smoothness parity", c11_smoothness_parity),
        (12, "determinism", c12_determinism),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut unexpected = Vec::new();
    let mut out = std::io::stdout();
    for (id, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let started = Instant::now();
        let o = run();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(
            out,
            "criterion {id:>2} {tag} {name}: {} [{:.1}s]",
            o.detail,
            started.elapsed().as_secs_f64()
        );
        if !o.pass && !KNOWN_FAILURES.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        let _ = writeln!(out, "unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
