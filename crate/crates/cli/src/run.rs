use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use rlmc_core::benchmarks::{build_benchmark, Benchmark, Overrides};
use rlmc_core::evaluation::{evaluate_policy_traced, EvaluationReport, Trace};
use rlmc_core::processes::PathSet;
use rlmc_core::solvers::{solve, Algorithm, Mode, Policy, SolveDiagnostics};
use serde::Serialize;

use crate::config::{run_id, ExperimentConfig, RunConfig};

/// Failure class, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }

    pub fn record(&self) -> serde_json::Value {
        let (kind, message) = match self {
            Failure::Config(m) => ("config", m.clone()),
            Failure::Runtime(e) => ("runtime", format!("{e:#}")),
        };
        serde_json::json!({ "error": { "kind": kind, "message": message, "exit_code": self.exit_code() } })
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<rlmc_core::Error> for Failure {
    fn from(e: rlmc_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ResultRow {
    pub run_id: String,
    pub algorithm: String,
    pub mode: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K_or_L")]
    pub k_or_l: usize,
    pub seed: u64,
    pub solve_wall_ms: f64,
    pub eval_mean: f64,
    pub eval_se: f64,
    pub broken_path_frac: f64,
    /// Mean profit with storage minus without, when requested.
    pub uplift: Option<f64>,
}

#[derive(Debug, Serialize)]
struct Uplift {
    mean: f64,
    /// Standard error of the paired per-path difference.
    std_error: f64,
    q25: f64,
    q75: f64,
    without_storage_mean: f64,
}

#[derive(Debug, Serialize)]
struct RunReport {
    #[serde(flatten)]
    row: ResultRow,
    solve: Option<SolveDiagnostics>,
    violation_count: usize,
    uplift_detail: Option<Uplift>,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    version: &'static str,
    config: &'a ExperimentConfig,
    runs: Vec<RunReport>,
}

pub fn run_experiment(
    config: &ExperimentConfig,
    out: &Path,
    dump_paths: bool,
) -> Result<Vec<ResultRow>, Failure> {
    config.validate().map_err(Failure::Config)?;
    for (k, run) in config.runs.iter().enumerate() {
        if run.seed == config.evaluation.seed {
            return Err(Failure::Config(format!(
                "run {}: training seed equals the evaluation seed",
                run_id(run, k)
            )));
        }
    }
    let bench = build_benchmark(&config.benchmark, &config.overrides)
        .map_err(|e| Failure::Config(e.to_string()))?;
    let no_storage = if config.runs.iter().any(|r| r.compare_without_storage) {
        let overrides = Overrides {
            inventory_max: Some(0.0),
            ..config.overrides.clone()
        };
        Some(
            build_benchmark(&config.benchmark, &overrides)
                .map_err(|e| Failure::Config(e.to_string()))?,
        )
    } else {
        None
    };
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let n_steps = bench.problem.horizon();
    let eval = bench
        .process
        .simulate_paths(
            config.evaluation.paths,
            n_steps,
            &bench.x0,
            config.evaluation.seed,
        )
        .context("simulating evaluation paths")?;
    if dump_paths {
        eval.write_csv(BufWriter::new(
            File::create(out.join("paths_eval.csv")).context("paths_eval.csv")?,
        ))?;
    }

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (k, run) in config.runs.iter().enumerate() {
        let id = run_id(run, k);
        let outcome = execute(&bench, run, &eval).with_context(|| format!("run {id}"))?;
        if dump_paths {
            if let Some(train) = &outcome.train {
                let file = File::create(out.join(format!("paths_train_{id}.csv")))?;
                train.write_csv(BufWriter::new(file))?;
            }
        }
        if let Some(p) = run.trajectory_path {
            write_trajectory(
                &out.join(format!("trajectory_{id}.csv")),
                &bench,
                &eval,
                &outcome.trace,
                p,
            )?;
        }
        let uplift = match (&no_storage, run.compare_without_storage) {
            (Some(base), true) => {
                let b = execute(base, run, &eval)
                    .with_context(|| format!("run {id} without storage"))?;
                Some(uplift(&outcome.report, &b.report))
            }
            _ => None,
        };
        let row = ResultRow {
            run_id: id,
            algorithm: outcome.policy.algorithm.short_name().to_string(),
            mode: mode_name(run.mode).to_string(),
            m: outcome.m_paths,
            k_or_l: outcome.k_or_l,
            seed: run.seed,
            solve_wall_ms: outcome.diagnostics.as_ref().map_or(0.0, |d| d.wall_ms),
            eval_mean: outcome.report.mean_value,
            eval_se: outcome.report.std_error,
            broken_path_frac: outcome
                .diagnostics
                .as_ref()
                .map_or(0.0, |d| d.broken_path_fraction),
            uplift: uplift.as_ref().map(|u| u.mean),
        };
        reports.push(RunReport {
            row: row.clone(),
            solve: outcome.diagnostics,
            violation_count: outcome.report.violation_count,
            uplift_detail: uplift,
        });
        rows.push(row);
    }

    write_results(&out.join("results.csv"), &rows)?;
    let report = Report {
        version: env!("CARGO_PKG_VERSION"),
        config,
        runs: reports,
    };
    let json = serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?;
    fs::write(out.join("report.json"), json).context("writing report.json")?;
    Ok(rows)
}

struct Outcome {
    policy: Policy,
    diagnostics: Option<SolveDiagnostics>,
    report: EvaluationReport,
    trace: Trace,
    train: Option<PathSet>,
    m_paths: usize,
    k_or_l: usize,
}

fn execute(bench: &Benchmark, run: &RunConfig, eval: &PathSet) -> Result<Outcome> {
    let algorithm = Algorithm::from(run.algorithm);
    let argmax = run.argmax.unwrap_or(bench.defaults.argmax);
    let (policy, diagnostics, train, m_paths, k_or_l) = match bench.basis_for(algorithm) {
        None => (Policy::myopic(&bench.problem, argmax), None, None, 0, 0),
        Some(basis) => {
            let mut c = bench.solver_config(algorithm, run.mode);
            c.m_paths = run.m_paths.unwrap_or(bench.defaults.m_paths);
            c.grid_levels = run.grid_levels.unwrap_or(bench.defaults.grid_levels);
            c.seed = run.seed;
            c.rl_backward_paths = run.backward_paths;
            c.cr_sweeps = run.cr_sweeps;
            c.argmax = argmax;
            let train = bench.process.simulate_paths(
                c.m_paths,
                bench.problem.horizon(),
                &bench.x0,
                run.seed,
            )?;
            let out = solve(&bench.problem, &bench.process, basis, &train, &c)?;
            let k_or_l = if algorithm == Algorithm::GridDiscretisation {
                c.grid_levels
            } else {
                basis.compile()?.len()
            };
            (
                out.policy,
                Some(out.diagnostics),
                Some(train),
                c.m_paths,
                k_or_l,
            )
        }
    };
    let (report, trace) =
        evaluate_policy_traced(&policy, &bench.problem, eval, &bench.x0, &bench.i0)?;
    Ok(Outcome {
        policy,
        diagnostics,
        report,
        trace,
        train,
        m_paths,
        k_or_l,
    })
}

fn mode_name(mode: Mode) -> &'static str {
    match mode {
        Mode::ValueIteration => "value_iteration",
        Mode::PerformanceIteration => "performance_iteration",
    }
}

fn uplift(with: &EvaluationReport, without: &EvaluationReport) -> Uplift {
    let diff: Vec<f64> = with
        .per_path_values
        .iter()
        .zip(&without.per_path_values)
        .map(|(a, b)| a - b)
        .collect();
    let (mean, std_error) = rlmc_core::evaluation::mean_and_se(&diff);
    Uplift {
        mean,
        std_error,
        q25: quantile(&with.per_path_values, 0.25) - quantile(&without.per_path_values, 0.25),
        q75: quantile(&with.per_path_values, 0.75) - quantile(&without.per_path_values, 0.75),
        without_storage_mean: without.mean_value,
    }
}

/// Linear-interpolation sample quantile.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let h = p * (v.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([
        "run_id",
        "algorithm",
        "mode",
        "M",
        "K_or_L",
        "seed",
        "solve_wall_ms",
        "eval_mean",
        "eval_se",
        "broken_path_frac",
        "uplift",
    ])?;
    for r in rows {
        w.write_record([
            r.run_id.clone(),
            r.algorithm.clone(),
            r.mode.clone(),
            r.m.to_string(),
            r.k_or_l.to_string(),
            r.seed.to_string(),
            r.solve_wall_ms.to_string(),
            r.eval_mean.to_string(),
            r.eval_se.to_string(),
            r.broken_path_frac.to_string(),
            r.uplift.map(|u| u.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_trajectory(
    path: &Path,
    bench: &Benchmark,
    eval: &PathSet,
    trace: &Trace,
    m: usize,
) -> Result<()> {
    let p = bench.problem.exo_dim();
    let q = bench.problem.inv_dim();
    let qc = bench.problem.control_dim();
    let n_steps = bench.problem.horizon();
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    let mut header = vec!["step".to_string()];
    header.extend((0..p).map(|d| format!("x{d}")));
    header.extend((0..q).map(|d| format!("i{d}")));
    header.extend((0..qc).map(|d| format!("u{d}")));
    w.write_record(&header)?;
    for n in 0..=n_steps {
        let mut rec = vec![n.to_string()];
        rec.extend(eval.state(m, n).iter().map(|v| v.to_string()));
        rec.extend(trace.inventory(m, n).iter().map(|v| v.to_string()));
        if n < n_steps {
            rec.extend(trace.control(m, n).iter().map(|v| v.to_string()));
        } else {
            rec.extend(std::iter::repeat_n(String::new(), qc));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0, 5.0];
        assert_eq!(quantile(&v, 0.25), 2.0);
        assert_eq!(quantile(&v, 0.5), 3.0);
        assert_eq!(quantile(&[0.0, 1.0], 0.75), 0.75);
    }
}
