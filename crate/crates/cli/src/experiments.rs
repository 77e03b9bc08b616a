//! Experiment runners. Every run writes one CSV per tracked quantity into the
//! output directory, with an `iteration` column followed by one column per
//! series and exactly one row per iteration of the configured budget.

use std::fs;
use std::path::{Path, PathBuf};

use npg_core::fa::{in_class_regularized_gap, solve_regularized_fa, surrogate_game};
use npg_core::instances::{
    first_action_features, linear_cyclic_game, random_cost_matrix, random_invertible,
    random_markov, rotated_quadratic_game, uniform_transition_markov, SeededRng,
};
use npg_core::markov::{solve_markov_fa, solve_markov_tabular, MarkovConfig, MarkovRun};
use npg_core::matrix_game::{npg_step, onpg_stepsize_bound, solve_regularized, vanilla_npg_step, NormChoice};
use npg_core::monotone::{solve_monotone, stepsize_bound, zero_sum_as_monotone, Method, MonotoneConfig};
use npg_core::{CostMatrix, FeatureMap, ParamVector, PlayerFeatures, RegularizedGame, SolverConfig, Status};
use rayon::prelude::*;

use crate::config::{
    Experiment, ExperimentConfig, FeatureKind, MarkovParams, MatrixFaParams, MonotoneInstance,
    MonotoneParams, NpgVsOnpgParams, VanillaParams,
};
use crate::error::{HarnessError, Result};

/// One CSV worth of data: column names after `iteration`, and one row of
/// values per iteration `1..=budget`.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn new(name: &str, columns: Vec<String>) -> Self {
        Self { name: name.to_string(), columns, rows: Vec::new() }
    }

    /// Builds a table from per-series traces, padding series that stopped
    /// early (divergence) with NaN.
    fn from_series(name: &str, columns: Vec<String>, series: &[Vec<f64>], budget: usize) -> Self {
        let rows = (0..budget)
            .map(|t| series.iter().map(|s| s.get(t).copied().unwrap_or(f64::NAN)).collect())
            .collect();
        Self { name: name.to_string(), columns, rows }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunReport {
    pub tables: Vec<Table>,
    /// Series that diverged although the experiment expects them to converge.
    pub unexpected_divergence: Vec<String>,
    /// Series that diverged as the experiment intends.
    pub expected_divergence: Vec<String>,
}

/// Shortest representation that parses back to the same double.
pub fn format_value(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-5..1e16).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

pub fn write_table(dir: &Path, table: &Table) -> Result<PathBuf> {
    let path = dir.join(format!("{}.csv", table.name));
    let mut w = csv::Writer::from_path(&path)?;
    let mut header = vec!["iteration".to_string()];
    header.extend(table.columns.iter().cloned());
    w.write_record(&header)?;
    for (t, row) in table.rows.iter().enumerate() {
        let mut rec = vec![(t + 1).to_string()];
        rec.extend(row.iter().map(|&x| format_value(x)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(path)
}

/// Runs the experiment in memory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    let seed = cfg.seed;
    match &cfg.experiment {
        Experiment::VanillaVsModified(p) => vanilla_vs_modified(p),
        Experiment::NpgVsOnpg(p) => npg_vs_onpg(p, seed),
        Experiment::MatrixFa(p) => matrix_fa(p, seed),
        Experiment::MonotoneMethods(p) => monotone_methods(p, seed),
        Experiment::MarkovTabular(p) => markov(p, seed, false),
        Experiment::MarkovFa(p) => markov(p, seed, true),
    }
}

/// Runs the experiment and writes its CSVs plus the resolved config into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<(RunReport, Vec<PathBuf>)> {
    let report = run(cfg)?;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    for table in &report.tables {
        files.push(write_table(out, table)?);
    }
    let cfg_path = out.join("config.toml");
    fs::write(&cfg_path, cfg.to_toml())?;
    files.push(cfg_path);
    Ok((report, files))
}

fn vanilla_vs_modified(p: &VanillaParams) -> Result<RunReport> {
    let game = RegularizedGame::new(CostMatrix::identity(p.n), p.tau)?;
    let mut report = RunReport::default();
    let mut table = Table::new("theta1", vec!["vanilla".into(), "modified".into()]);
    let mut vanilla = Some((ParamVector::zeros(p.n), ParamVector::zeros(p.n)));
    let mut modified = Some((ParamVector::zeros(p.n), ParamVector::zeros(p.n)));
    for _ in 0..p.iterations {
        vanilla = vanilla.and_then(|(t, v)| vanilla_npg_step(&game, &t, &v, p.eta).ok());
        modified = match modified {
            Some((t, v)) => match npg_step(&game, &t, &v, p.eta) {
                Ok(x) => Some(x),
                Err(npg_core::NpgError::DivergedParameter { .. }) => None,
                Err(e) => return Err(e.into()),
            },
            None => None,
        };
        let first = |s: &Option<(ParamVector, ParamVector)>| s.as_ref().map_or(f64::NAN, |(t, _)| t[0]);
        table.rows.push(vec![first(&vanilla), first(&modified)]);
    }
    if vanilla.is_none() {
        report.expected_divergence.push("vanilla".into());
    }
    if modified.is_none() {
        report.unexpected_divergence.push("modified".into());
    }
    report.tables.push(table);
    Ok(report)
}

struct GridRun {
    name: String,
    optimistic: bool,
    eta: f64,
    status: Status,
    dist: Vec<f64>,
    kl: Vec<f64>,
}

fn npg_vs_onpg(p: &NpgVsOnpgParams, seed: u64) -> Result<RunReport> {
    let mut rng = SeededRng::new(seed);
    let game = RegularizedGame::new(random_cost_matrix(p.n, p.n, &mut rng), p.tau)?;
    let onpg_bound = onpg_stepsize_bound(&game, NormChoice::MaxEntry);
    let runs: Vec<GridRun> = p
        .etas
        .par_iter()
        .flat_map_iter(|&eta| [(eta, false), (eta, true)])
        .map(|(eta, optimistic)| {
            let cfg = SolverConfig {
                max_iters: p.iterations,
                kl_tol: -1.0,
                param_tol: f64::INFINITY,
                ..SolverConfig::new(eta, optimistic)
            };
            let trace = solve_regularized(&game, &cfg)?;
            let tail = &trace.records[1..];
            let name = format!("{}_eta={}", if optimistic { "onpg" } else { "npg" }, eta);
            Ok(GridRun {
                name,
                optimistic,
                eta,
                status: trace.status,
                dist: tail.iter().map(|r| r.param_dist()).collect(),
                kl: tail.iter().map(|r| r.kl_to_target).collect(),
            })
        })
        .collect::<Result<_>>()?;
    let mut report = RunReport::default();
    for run in &runs {
        if run.status == Status::Diverged {
            if run.optimistic && run.eta <= onpg_bound {
                report.unexpected_divergence.push(run.name.clone());
            } else {
                report.expected_divergence.push(run.name.clone());
            }
        }
    }
    let columns: Vec<String> = runs.iter().map(|r| r.name.clone()).collect();
    let dist: Vec<Vec<f64>> = runs.iter().map(|r| r.dist.clone()).collect();
    let kl: Vec<Vec<f64>> = runs.iter().map(|r| r.kl.clone()).collect();
    report.tables.push(Table::from_series("param_dist", columns.clone(), &dist, p.iterations));
    report.tables.push(Table::from_series("kl", columns, &kl, p.iterations));
    Ok(report)
}

fn matrix_fa(p: &MatrixFaParams, seed: u64) -> Result<RunReport> {
    let mut rng = SeededRng::new(seed);
    let game = RegularizedGame::new(random_cost_matrix(p.n, p.n, &mut rng), p.tau)?;
    let m = match p.features {
        FeatureKind::Identity => nalgebra::DMatrix::identity(p.d, p.d),
        FeatureKind::Random => random_invertible(p.d, &mut rng),
    };
    let feats = PlayerFeatures::shared(FeatureMap::build(m, p.n)?);
    let eta = match p.eta {
        Some(eta) => eta,
        None => onpg_stepsize_bound(&surrogate_game(&game, &feats)?, NormChoice::MaxEntry),
    };
    let cfg = SolverConfig {
        max_iters: p.iterations,
        kl_tol: -1.0,
        param_tol: f64::INFINITY,
        ..SolverConfig::new(eta, true)
    };
    let trace = solve_regularized_fa(&game, &feats, &cfg)?;
    let tail = &trace.records[1..];
    let mut report = RunReport::default();
    if trace.status == Status::Diverged {
        report.unexpected_divergence.push("onpg-fa".into());
    }
    let col = |name: &str, f: &dyn Fn(&npg_core::TraceRecord) -> f64| {
        let series = vec![tail.iter().map(f).collect::<Vec<_>>()];
        Table::from_series(name, vec![name.to_string()], &series, p.iterations)
    };
    report.tables.push(col("kl", &|r| r.kl_to_target));
    report.tables.push(col("param_dist", &|r| r.param_dist()));
    report.tables.push(col("regularized_gap", &|r| {
        in_class_regularized_gap(&game, &feats, &r.g, &r.h)
    }));
    Ok(report)
}

fn monotone_methods(p: &MonotoneParams, seed: u64) -> Result<RunReport> {
    let mut rng = SeededRng::new(seed);
    let spec = match p.instance {
        MonotoneInstance::Wrapped => zero_sum_as_monotone(&random_cost_matrix(p.n, p.n, &mut rng), p.tau),
        MonotoneInstance::Cyclic => linear_cyclic_game(p.players, p.n, p.self_weight, p.tau, &mut rng)?,
        MonotoneInstance::Quadratic => rotated_quadratic_game(p.n, p.tau, &mut rng)?,
    };
    let eta = p.eta.unwrap_or_else(|| {
        0.9 * Method::ALL.iter().map(|&m| stepsize_bound(&spec, m)).fold(f64::INFINITY, f64::min)
    });
    let cfg = MonotoneConfig {
        max_iters: p.iterations,
        kl_tol: -1.0,
        ..MonotoneConfig::new(eta)
    };
    let traces = Method::ALL
        .par_iter()
        .map(|&m| solve_monotone(&spec, &cfg, m))
        .collect::<npg_core::Result<Vec<_>>>()?;
    let mut report = RunReport::default();
    let columns: Vec<String> = Method::ALL.iter().map(|m| m.name().to_string()).collect();
    for (m, t) in Method::ALL.iter().zip(&traces) {
        if t.status == Status::Diverged {
            report.unexpected_divergence.push(m.name().to_string());
        }
    }
    let kl: Vec<Vec<f64>> =
        traces.iter().map(|t| t.records[1..].iter().map(|r| r.kl_to_target).collect()).collect();
    let dist: Vec<Vec<f64>> = traces
        .iter()
        .map(|t| t.records[1..].iter().map(|r| r.param_dist_sq.sqrt()).collect())
        .collect();
    report.tables.push(Table::from_series("kl", columns.clone(), &kl, p.iterations));
    report.tables.push(Table::from_series("param_dist", columns, &dist, p.iterations));
    Ok(report)
}

fn markov(p: &MarkovParams, seed: u64, features: bool) -> Result<RunReport> {
    let mut rng = SeededRng::new(seed);
    let cfg = MarkovConfig { eta: p.eta, warm_start: p.warm_start, ..MarkovConfig::default() };
    let run: MarkovRun = if features {
        let spec = uniform_transition_markov(p.states, p.actions, p.gamma, p.tau, &mut rng)?;
        let feats = first_action_features(p.states, p.actions)?;
        solve_markov_fa(&spec, &feats, p.outer, p.inner, &cfg)?
    } else {
        let spec = random_markov(p.states, p.actions, p.gamma, p.tau, &mut rng)?;
        solve_markov_tabular(&spec, p.outer, p.inner, &cfg)?
    };
    let mut report = RunReport::default();
    if run.trace.status == Status::Diverged {
        return Err(HarnessError::UnexpectedDivergence { run: "markov inner solve".into() });
    }
    let tail = &run.trace.records[1..];
    let q: Vec<f64> = tail.iter().map(|r| r.q_error).collect();
    let d: Vec<f64> = tail.iter().map(|r| r.param_dist).collect();
    report.tables.push(Table::from_series("q_error", vec!["q_error".into()], &[q], p.outer));
    report.tables.push(Table::from_series("param_dist", vec!["param_dist".into()], &[d], p.outer));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for x in [0.0, -0.0, 1.0, 0.1, 1e-300, 123456.789, -2.5e17, 1.0 / 3.0, f64::MIN_POSITIVE] {
            let s = format_value(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(format_value(f64::NAN), "NaN");
    }

    #[test]
    fn series_are_padded_to_the_budget() {
        let t = Table::from_series("x", vec!["a".into(), "b".into()], &[vec![1.0, 2.0, 3.0], vec![4.0]], 3);
        assert_eq!(t.rows.len(), 3);
        assert!(t.rows[2][1].is_nan());
    }

    #[test]
    fn small_runs_of_every_experiment() {
        let small = |id: &str| -> Experiment {
            let mut e = Experiment::default_for(id).unwrap();
            match &mut e {
                Experiment::VanillaVsModified(p) => p.iterations = 50,
                Experiment::NpgVsOnpg(p) => p.iterations = 50,
                Experiment::MatrixFa(p) => {
                    p.iterations = 30;
                    p.n = 12;
                    p.d = 3;
                }
                Experiment::MonotoneMethods(p) => p.iterations = 40,
                Experiment::MarkovTabular(p) | Experiment::MarkovFa(p) => {
                    p.outer = 5;
                    p.inner = 20;
                }
            }
            e
        };
        for id in crate::config::EXPERIMENT_IDS {
            let cfg = ExperimentConfig::new(small(id), 3);
            let report = run(&cfg).unwrap();
            assert!(!report.tables.is_empty());
            for t in &report.tables {
                assert_eq!(t.rows.len(), cfg.experiment.budget(), "{id}/{}", t.name);
                assert!(t.rows.iter().all(|r| r.len() == t.columns.len()));
            }
        }
    }
}
