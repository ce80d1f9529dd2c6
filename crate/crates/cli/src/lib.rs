//! The `plan` and `sweep` commands behind the `smto` binary.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use smto::problem::{ProblemError, ProblemFile, ResultFile};
use smto::svg;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

/// Seeds per sweep cell.
pub const SWEEP_SEEDS: u64 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("planning failed: {0}")]
    Planner(#[from] smto::optimizer::OptimizerError),
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// Loads, plans and times one problem.
pub fn run_problem(problem: &ProblemFile) -> Result<ResultFile, CliError> {
    let resolved = problem.resolve()?;
    let started = Instant::now();
    let set = resolved.plan()?;
    Ok(ResultFile::new(problem, &set, started.elapsed().as_secs_f64()))
}

fn write_plots(problem: &ProblemFile, result: &ResultFile, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let task = problem.resolve()?.task;
    let mut trajectories = Vec::with_capacity(result.solutions.len());
    for s in &result.solutions {
        trajectories.push(s.trajectory().map_err(|e| CliError::Grid(e.to_string()))?);
    }
    for (i, t) in trajectories.iter().enumerate() {
        let path = dir.join(format!("solution_{i:02}.svg"));
        write_atomic(&path, svg::solution_svg(&task, t, i).as_bytes())?;
    }
    write_atomic(&dir.join("overview.svg"), svg::overview_svg(&task, &trajectories).as_bytes())
}

/// Runs `plan`; returns the process exit code.
pub fn plan_command(
    problem_path: &Path,
    output_path: &Path,
    overrides: &[String],
    plot_dir: Option<&Path>,
) -> Result<i32, CliError> {
    let problem = ProblemFile::parse(&read(problem_path)?, overrides)?;
    let result = run_problem(&problem)?;
    write_atomic(output_path, result.to_json().as_bytes())?;
    if let Some(dir) = plot_dir {
        write_plots(&problem, &result, dir)?;
    }
    Ok(if result.infeasible { EXIT_INFEASIBLE } else { EXIT_OK })
}

/// Parameter grid: each present key lists the values to sweep.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(rename = "O", default)]
    pub max_solutions: Vec<usize>,
    #[serde(rename = "N", default)]
    pub batch_size: Vec<usize>,
    #[serde(default)]
    pub cost_scale_alpha: Vec<f64>,
}

/// One grid point; `None` keeps the problem file's value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub max_solutions: Option<usize>,
    pub batch_size: Option<usize>,
    pub cost_scale_alpha: Option<f64>,
}

impl SweepGrid {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let grid: SweepGrid = serde_json::from_str(text).map_err(|e| CliError::Grid(e.to_string()))?;
        if grid.max_solutions.is_empty() && grid.batch_size.is_empty() && grid.cost_scale_alpha.is_empty() {
            return Err(CliError::Grid("at least one of O, N, cost_scale_alpha must list values".into()));
        }
        Ok(grid)
    }

    /// Cartesian product in O, N, alpha order; an absent key contributes
    /// a single unchanged value.
    pub fn cells(&self) -> Vec<Cell> {
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for o in axis(&self.max_solutions) {
            for n in axis(&self.batch_size) {
                for a in axis(&self.cost_scale_alpha) {
                    out.push(Cell {
                        max_solutions: o,
                        batch_size: n,
                        cost_scale_alpha: a,
                    });
                }
            }
        }
        out
    }
}

/// Aggregated sweep row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(rename = "O")]
    pub max_solutions: usize,
    #[serde(rename = "N")]
    pub batch_size: usize,
    pub cost_scale_alpha: f64,
    pub runs: usize,
    pub failed: usize,
    pub mean_runtime_seconds: f64,
    pub mean_solution_count: f64,
}

/// Runs every cell with three consecutive seeds starting at the problem's
/// seed. Each run's result is written to `out_dir`; failed runs are
/// recorded and skipped. Writes `sweep.csv` and returns the rows.
pub fn sweep_command(problem_path: &Path, grid_path: &Path, out_dir: &Path) -> Result<Vec<SweepRow>, CliError> {
    let base = ProblemFile::parse(&read(problem_path)?, &[])?;
    let grid = SweepGrid::parse(&read(grid_path)?)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut rows = Vec::new();
    let mut failures: BTreeMap<String, String> = BTreeMap::new();
    for (index, cell) in grid.cells().into_iter().enumerate() {
        let mut problem = base.clone();
        if let Some(o) = cell.max_solutions {
            problem.smto.max_solutions = o;
        }
        if let Some(n) = cell.batch_size {
            problem.smto.batch_size = n;
        }
        if let Some(a) = cell.cost_scale_alpha {
            problem.smto.cost_scale_alpha = a;
        }
        let (mut runtime, mut count, mut ok, mut failed) = (0.0, 0usize, 0usize, 0usize);
        for k in 0..SWEEP_SEEDS {
            let mut run = problem.clone();
            run.smto.seed = base.smto.seed.wrapping_add(k);
            let name = format!("cell{index:03}_seed{k}.json");
            match run_problem(&run) {
                Ok(result) => {
                    write_atomic(&out_dir.join(&name), result.to_json().as_bytes())?;
                    runtime += result.diagnostics.runtime_seconds;
                    count += result.solutions.len();
                    ok += 1;
                }
                Err(e) => {
                    failed += 1;
                    failures.insert(name, e.to_string());
                }
            }
        }
        let mean = |v: f64| if ok > 0 { v / ok as f64 } else { f64::NAN };
        rows.push(SweepRow {
            max_solutions: problem.smto.max_solutions,
            batch_size: problem.smto.batch_size,
            cost_scale_alpha: problem.smto.cost_scale_alpha,
            runs: ok,
            failed,
            mean_runtime_seconds: mean(runtime),
            mean_solution_count: mean(count as f64),
        });
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Grid(e.to_string()))?;
    write_atomic(&out_dir.join("sweep.csv"), &bytes)?;
    if !failures.is_empty() {
        let text = serde_json::to_string_pretty(&failures).expect("string map serializes");
        write_atomic(&out_dir.join("failures.json"), text.as_bytes())?;
    }
    Ok(rows)
}

/// Caps the global worker pool from `SMTO_THREADS` when set.
pub fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("SMTO_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("SMTO_THREADS must be a positive integer, got {raw:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cells_are_a_product() {
        let g = SweepGrid::parse(r#"{"N": [100, 200], "cost_scale_alpha": [5, 20, 50]}"#).unwrap();
        let cells = g.cells();
        assert_eq!(cells.len(), 6);
        assert!(cells.iter().all(|c| c.max_solutions.is_none()));
        assert_eq!(cells[0].batch_size, Some(100));
        assert_eq!(cells[5].cost_scale_alpha, Some(50.0));
        assert!(SweepGrid::parse("{}").is_err());
        assert!(SweepGrid::parse(r#"{"K": [1]}"#).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
