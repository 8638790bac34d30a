use std::fs;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use switchavg::montecarlo::{averaged_trajectory, run_study, sample_switched_path, simulate_paths};
use switchavg::perturbation::residual_check;
use switchavg::{ChainAnalysis, StudyKind, TestFunction};

use crate::config::{RunConfig, Task};
use crate::error::{CliError, Result};

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest";
pub const TRAJECTORIES_FILE: &str = "trajectories.csv";

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub rows: usize,
    /// False when a study ran with `allow_uncertified` on a field that failed.
    pub certified: bool,
    pub wall_clock_secs: f64,
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Runs the configured task and writes `results.csv`, `manifest` and, if
/// requested, `trajectories.csv` into the output directory.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    fs::create_dir_all(&config.out_dir).map_err(|e| CliError::io(&config.out_dir, e))?;
    let start = Instant::now();
    let work = || -> Result<TaskOutput> {
        let (header, rows, certified, extra) = match config.task {
            Task::ChainAnalyze => chain_analyze(config)?,
            Task::ResidualCheck => residual(config)?,
            Task::Simulate => simulate(config)?,
            Task::DeviationStudy => study(config, StudyKind::Deviation)?,
            Task::MomentStudy => study(config, StudyKind::MomentBound)?,
            Task::CccStudy => study(config, StudyKind::Containment)?,
        };
        if let Some(n) = config.dump_paths {
            if matches!(
                config.task,
                Task::Simulate | Task::DeviationStudy | Task::MomentStudy | Task::CccStudy
            ) {
                dump_trajectories(config, n)?;
            }
        }
        Ok((header, rows, certified, extra))
    };
    let (header, rows, certified, extra) = match config.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?
            .install(work)?,
        None => work()?,
    };
    write_csv(&config.out_dir.join(RESULTS_FILE), &header, &rows)?;
    let wall = start.elapsed().as_secs_f64();
    write_manifest(config, wall, certified, extra)?;
    Ok(RunSummary { rows: rows.len(), certified, wall_clock_secs: wall })
}

type TaskOutput = (Vec<&'static str>, Vec<Vec<String>>, bool, toml::Table);

fn chain_analyze(config: &RunConfig) -> Result<TaskOutput> {
    let g = &config.resolved.spec.generator;
    let a = ChainAnalysis::new(g).map_err(|e| CliError::from_core("chain", e))?;
    let labels = g.labels();
    let mut rows = Vec::new();
    for (x, l) in labels.iter().enumerate() {
        rows.push(vec!["stationary".into(), l.clone(), String::new(), fmt_f64(a.pi[x])]);
    }
    for (name, m) in [("generator", g.matrix()), ("potential", &a.potential)] {
        for (x, lx) in labels.iter().enumerate() {
            for (y, ly) in labels.iter().enumerate() {
                rows.push(vec![name.into(), lx.clone(), ly.clone(), fmt_f64(m[(x, y)])]);
            }
        }
    }
    let r = a.identity_residuals(g);
    for (name, v) in [
        ("balance", r.balance),
        ("normalisation", r.normalisation),
        ("q_r0", r.q_r0),
        ("r0_q", r.r0_q),
        ("pi_r0", r.pi_r0),
        ("r0_pi", r.r0_pi),
        ("r0_row_sums", r.r0_row_sums),
    ] {
        rows.push(vec!["identity_residual".into(), name.into(), String::new(), fmt_f64(v)]);
    }
    Ok((vec!["quantity", "row", "column", "value"], rows, true, toml::Table::new()))
}

fn residual(config: &RunConfig) -> Result<TaskOutput> {
    let spec = &config.resolved.spec;
    let g = &spec.generator;
    let a = ChainAnalysis::new(g).map_err(|e| CliError::from_core("chain", e))?;
    let phi = TestFunction::polynomial(config.resolved.phi.clone());
    let mut rows = Vec::new();
    let mut worst = 0.0_f64;
    for &eps in &spec.epsilons {
        let report = residual_check(&phi, eps, g, &spec.field, &a, &config.resolved.residual_grid)
            .map_err(|e| CliError::from_core("residual", e))?;
        worst = worst.max(report.max_residual);
        for row in &report.rows {
            rows.push(vec![
                fmt_f64(eps),
                fmt_f64(row.u),
                g.labels()[row.state].clone(),
                fmt_f64(row.lhs),
                fmt_f64(row.rhs),
                fmt_f64(row.residual),
            ]);
        }
    }
    let mut extra = toml::Table::new();
    extra.insert("max_residual".into(), toml::Value::Float(worst));
    Ok((vec!["epsilon", "u", "state", "lhs", "rhs", "residual"], rows, true, extra))
}

fn simulate(config: &RunConfig) -> Result<TaskOutput> {
    let spec = &config.resolved.spec;
    let a = ChainAnalysis::new(&spec.generator).map_err(|e| CliError::from_core("chain", e))?;
    let averaged = averaged_trajectory(spec, &a).map_err(|e| CliError::from_core("averaged system", e))?;
    let mut rows = Vec::new();
    let mut excluded = 0usize;
    for (k, &eps) in spec.epsilons.iter().enumerate() {
        for (i, outcome) in simulate_paths(spec, &averaged, k).into_iter().enumerate() {
            let mut row = vec![fmt_f64(eps), i.to_string()];
            match outcome {
                Ok(s) => row.extend([
                    "ok".to_string(),
                    s.jumps.to_string(),
                    fmt_f64(s.sup_u),
                    fmt_f64(s.sup_u_sq),
                    fmt_f64(s.sup_dev),
                ]),
                Err(_) => {
                    excluded += 1;
                    row.extend([
                        "blow-up".to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                    ]);
                }
            }
            rows.push(row);
        }
    }
    let mut extra = toml::Table::new();
    extra.insert("excluded_paths".into(), toml::Value::Integer(excluded as i64));
    Ok((vec!["epsilon", "path", "status", "jumps", "sup_u", "sup_u_sq", "sup_dev"], rows, true, extra))
}

fn study(config: &RunConfig, kind: StudyKind) -> Result<TaskOutput> {
    let table = run_study(&config.resolved.spec, kind).map_err(|e| CliError::from_core("study", e))?;
    let rows = table
        .records()
        .into_iter()
        .map(|r| {
            vec![
                opt(r.epsilon),
                r.statistic,
                opt(r.parameter),
                fmt_f64(r.value),
                opt(r.std_error),
                r.certified.to_string(),
            ]
        })
        .collect();
    let mut extra = toml::Table::new();
    extra.insert(
        "epsilon_wall_clock_secs".into(),
        toml::Value::Array(table.rows.iter().map(|r| toml::Value::Float(r.wall_clock_secs)).collect()),
    );
    if !table.certification.reasons.is_empty() {
        extra.insert(
            "certification_failures".into(),
            toml::Value::Array(
                table.certification.reasons.iter().cloned().map(toml::Value::String).collect(),
            ),
        );
    }
    Ok((
        vec!["epsilon", "statistic", "parameter", "value", "std_error", "certified"],
        rows,
        table.certified(),
        extra,
    ))
}

fn dump_trajectories(config: &RunConfig, per_epsilon: usize) -> Result<()> {
    let spec = &config.resolved.spec;
    let labels = spec.generator.labels();
    let dim = spec.field.dim();
    let mut header = vec!["epsilon".to_string(), "path".into(), "t".into(), "regime".into()];
    header.extend((1..=dim).map(|i| format!("u_{i}")));
    let path = config.out_dir.join(TRAJECTORIES_FILE);
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(&header)?;
    for (k, &eps) in spec.epsilons.iter().enumerate() {
        let n = per_epsilon.min(spec.paths);
        let paths: Vec<_> = (0..n).into_par_iter().map(|i| sample_switched_path(spec, k, i)).collect();
        for (i, p) in paths.into_iter().enumerate() {
            // Overflowing paths are reported by the study itself.
            let Ok((_, traj)) = p else { continue };
            for (j, &t) in traj.times().iter().enumerate() {
                let mut rec =
                    vec![fmt_f64(eps), i.to_string(), fmt_f64(t), labels[traj.regime_at(j)].clone()];
                rec.extend(traj.value(j).iter().map(|&v| fmt_f64(v)));
                w.write_record(&rec)?;
            }
        }
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

fn write_manifest(config: &RunConfig, wall: f64, certified: bool, extra: toml::Table) -> Result<()> {
    let mut meta = toml::Table::new();
    meta.insert("program".into(), toml::Value::String("switchavg".into()));
    meta.insert("version".into(), toml::Value::String(env!("CARGO_PKG_VERSION").into()));
    meta.insert("subcommand".into(), toml::Value::String(config.task.name().into()));
    let seed = config.resolved.spec.seed;
    meta.insert("seed".into(), toml::Value::String(seed.to_string()));
    meta.insert("certified".into(), toml::Value::Boolean(certified));
    meta.insert("wall_clock_secs".into(), toml::Value::Float(wall));
    if let Some(n) = config.threads {
        meta.insert("threads".into(), toml::Value::Integer(n as i64));
    }
    if let Some(n) = config.dump_paths {
        meta.insert("dumped_paths_per_epsilon".into(), toml::Value::Integer(n as i64));
    }
    meta.extend(extra);
    let mut doc = config.scenario.clone();
    doc.manifest = Some(meta);
    let path = config.out_dir.join(MANIFEST_FILE);
    fs::write(&path, doc.to_toml()).map_err(|e| CliError::io(&path, e))
}
