//! Config-driven experiment runs: one CSV row per `(cell, seed)`, a summary
//! with the fitted log-log slope, and plot-ready series.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;

use crate::config::{ExperimentConfig, ModelSpec};
use crate::drift_models::{build_composition, confine_drift, Recipe};
use crate::error::{Error, Result};
use crate::function::{CubeRestricted, ScalarField};
use crate::risk::{check_sweep_grid, evaluate_cell, fit_rate, Problem, RateFit, RiskReport};
use crate::rng;
use crate::sde_sim::{PointMass, SdeModel};
use crate::stats::{mean, ols_line, LineFit};
use crate::theory::rate_exponent;

pub const RESULTS_VERSION: &str = "# driftnet-results v1";
pub const PLOT_VERSION: &str = "# driftnet-plot v1";
pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const PLOT_FILE: &str = "plot.txt";

pub const CSV_HEADER: [&str; 15] = [
    "n",
    "delta",
    "n_delta",
    "seed",
    "emp_risk",
    "gen_risk",
    "gen_stderr",
    "psi_hat",
    "phi_n",
    "remainder",
    "L",
    "width",
    "s",
    "F",
    "status",
];

/// Builds the drift model, regression target and initial law of a config.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let dim = cfg.class.input_dim();
    let (model, target): (SdeModel, Arc<dyn ScalarField>) = match &cfg.model {
        ModelSpec::Confined {
            recipe,
            coefficients,
            segments,
            recipe_seed,
            coord,
            radial_rate,
        } => {
            let recipe = match recipe.as_str() {
                "additive" => Recipe::Additive {
                    coefficients: coefficients.clone(),
                },
                "product-of-splines" => Recipe::ProductOfSplines { segments: *segments },
                "single-layer-polynomial" => Recipe::SingleLayerPolynomial {
                    coefficients: coefficients.clone(),
                },
                other => return Err(Error::Domain(format!("unknown recipe `{other}`"))),
            };
            let f = build_composition(&cfg.class, &recipe, *recipe_seed)?;
            let drift = confine_drift(Arc::new(f), dim, *coord, *radial_rate)?;
            let target = drift.target();
            (drift.into_model(), target)
        }
        ModelSpec::OrnsteinUhlenbeck { theta, sigma, coord } => {
            if *coord == 0 || *coord > dim {
                return Err(Error::Index { index: *coord, dim });
            }
            let (theta, i) = (*theta, *coord - 1);
            let target = CubeRestricted(move |x: &[f64]| -theta * x[i]);
            (SdeModel::ornstein_uhlenbeck(dim, theta, *sigma), Arc::new(target))
        }
    };
    Ok(Problem {
        model,
        target,
        coord: cfg.model.coord(),
        class: cfg.class.clone(),
        init: Arc::new(PointMass(cfg.x0.clone())),
        substeps: cfg.substeps,
        copies: cfg.copies,
        sup_bound: cfg.sup_bound,
        arch: cfg.arch.clone(),
    })
}

/// Seed of cell `cell` under experiment seed `seed`; shared with
/// [`crate::risk::rate_sweep`].
pub fn cell_seed(seed: u64, cell: usize) -> u64 {
    rng::derive_seed(seed, cell as u64)
}

#[derive(Debug)]
pub struct RunRecord {
    pub cell: usize,
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub outcome: Result<RiskReport>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    /// Cell-then-seed order.
    pub records: Vec<RunRecord>,
    pub fit: RateFit,
    pub theory_exponent: f64,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

impl ExperimentOutcome {
    pub fn failed(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Mean generalization risk per cell over the successful runs, as
/// `(nΔ, mean)`; cells without a successful run are skipped.
fn cell_means(records: &[RunRecord], cells: usize) -> Vec<(f64, f64)> {
    (0..cells)
        .filter_map(|c| {
            let runs: Vec<&RunRecord> = records.iter().filter(|r| r.cell == c).collect();
            let ok: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok())
                .map(|r| r.generalization.estimate)
                .collect();
            let first = runs.first()?;
            (!ok.is_empty()).then(|| (first.n as f64 * first.delta, mean(&ok)))
        })
        .collect()
}

fn csv_row(r: &RunRecord) -> Vec<String> {
    let mut row = vec![
        r.n.to_string(),
        format!("{:?}", r.delta),
        format!("{:?}", r.n as f64 * r.delta),
        r.seed.to_string(),
    ];
    match &r.outcome {
        Ok(rep) => {
            row.extend([
                format!("{:?}", rep.empirical),
                format!("{:?}", rep.generalization.estimate),
                format!("{:?}", rep.generalization.stderr),
                format!("{:?}", rep.psi_hat),
                format!("{:?}", rep.phi_n),
                format!("{:?}", rep.remainder),
                rep.depth.to_string(),
                rep.width.to_string(),
                rep.sparsity.to_string(),
                format!("{:?}", rep.sup_bound),
                "ok".to_string(),
            ]);
        }
        Err(e) => {
            row.extend(std::iter::repeat_n(String::new(), 10));
            row.push(format!("failed: {e}"));
        }
    }
    row
}

/// Renders the results CSV, version line first.
pub fn results_csv(records: &[RunRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(csv_row(r))?;
    }
    let body = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let mut out = format!("{RESULTS_VERSION}\n");
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?);
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_else(|| "undefined".into())
}

fn summary_text(cfg: &ExperimentConfig, records: &[RunRecord], fit: &RateFit, exponent: f64) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "name = {}", cfg.name);
    let _ = writeln!(s, "cells = {}", cfg.grid.len());
    let _ = writeln!(s, "seeds = {}", cfg.seeds.len());
    let _ = writeln!(s, "runs = {}", records.len());
    let _ = writeln!(s, "failed_runs = {}", records.iter().filter(|r| r.outcome.is_err()).count());
    let _ = writeln!(s, "slope = {}", fmt_opt(fit.slope));
    let _ = writeln!(s, "intercept = {}", fmt_opt(fit.intercept));
    let _ = writeln!(s, "cells_in_fit = {}", fit.used);
    let _ = writeln!(s, "zero_risk_cells = {}", fit.zero_risk_cells);
    let _ = writeln!(s, "theory_exponent = {exponent:?}");
    let regime = match check_sweep_grid(&cfg.grid) {
        Ok(()) => "ok".to_string(),
        Err(e) => e.to_string(),
    };
    let _ = writeln!(s, "grid_regime = {regime}");
    for (c, &(n, delta)) in cfg.grid.iter().enumerate() {
        let ok: Vec<f64> = records
            .iter()
            .filter(|r| r.cell == c)
            .filter_map(|r| r.outcome.as_ref().ok())
            .map(|r| r.generalization.estimate)
            .collect();
        let m = (!ok.is_empty()).then(|| mean(&ok));
        let _ = writeln!(s, "cell {c}: n = {n}, delta = {delta:?}, mean_gen_risk = {}", fmt_opt(m));
    }
    s
}

/// Runs every `(cell, seed)` pair of the config. Failing runs are recorded
/// and do not stop the others. Writes `results.csv` and `summary.txt` into
/// `out_dir` (the config's when `None`).
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    let problem = build_problem(cfg)?;
    let pairs: Vec<(usize, u64)> = (0..cfg.grid.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let records: Vec<RunRecord> = pairs
        .par_iter()
        .map(|&(c, seed)| {
            let (n, delta) = cfg.grid[c];
            let outcome = evaluate_cell(&problem, n, delta, cell_seed(seed, c), &cfg.train)
                .map(|(r, _)| RiskReport { seed, ..r });
            RunRecord {
                cell: c,
                n,
                delta,
                seed,
                outcome,
            }
        })
        .collect();
    let fit = fit_rate(&cell_means(&records, cfg.grid.len()))?;
    let theory_exponent = rate_exponent(&cfg.class);

    let dir = out_dir.unwrap_or(&cfg.out_dir);
    fs::create_dir_all(dir)?;
    let csv_path = dir.join(RESULTS_FILE);
    let summary_path = dir.join(SUMMARY_FILE);
    fs::write(&csv_path, results_csv(&records)?)?;
    fs::write(&summary_path, summary_text(cfg, &records, &fit, theory_exponent))?;
    Ok(ExperimentOutcome {
        records,
        fit,
        theory_exponent,
        csv_path,
        summary_path,
    })
}

/// Log-log series of per-cell mean generalization risk.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotData {
    /// `(ln nΔ, ln risk)` for cells with positive mean risk.
    pub points: Vec<(f64, f64)>,
    pub zero_risk_cells: usize,
    /// `None` with fewer than two points.
    pub line: Option<LineFit>,
}

impl PlotData {
    pub fn to_text(&self) -> String {
        let mut s = format!("{PLOT_VERSION}\n");
        let _ = writeln!(s, "# excluded zero-risk cells: {}", self.zero_risk_cells);
        s.push_str("ln_n_delta,ln_risk\n");
        for (x, y) in &self.points {
            let _ = writeln!(s, "{x:?},{y:?}");
        }
        s.push_str("intercept,slope\n");
        match &self.line {
            Some(l) => {
                let _ = writeln!(s, "{:?},{:?}", l.intercept, l.slope);
            }
            None => s.push_str("undefined,undefined\n"),
        }
        s
    }
}

/// Reads a results CSV and averages `gen_risk` per `(n, Δ)` cell in order of
/// first appearance; failed rows are skipped.
pub fn emit_plot_data(csv_text: &str) -> Result<PlotData> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(csv_text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::InsufficientData("empty results CSV".into()));
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("results CSV lacks column `{name}`")))
    };
    let (c_n, c_delta, c_risk, c_status) = (col("n")?, col("delta")?, col("gen_risk")?, col("status")?);
    let parse = |s: &str, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::Format(format!("bad {what} value `{s}`")))
    };

    let mut cells: Vec<((String, String), Vec<f64>)> = Vec::new();
    let mut rows = 0usize;
    for rec in reader.records() {
        let rec = rec?;
        rows += 1;
        if rec.get(c_status) != Some("ok") {
            continue;
        }
        let key = (rec[c_n].to_string(), rec[c_delta].to_string());
        let risk = parse(&rec[c_risk], "gen_risk")?;
        match cells.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(risk),
            None => cells.push((key, vec![risk])),
        }
    }
    if rows == 0 {
        return Err(Error::InsufficientData("empty results CSV".into()));
    }

    let mut points = Vec::new();
    let mut zero_risk_cells = 0;
    for ((n, delta), risks) in &cells {
        let nd = parse(n, "n")? * parse(delta, "delta")?;
        let r = mean(risks);
        if r > 0.0 {
            points.push((nd.ln(), r.ln()));
        } else {
            zero_risk_cells += 1;
        }
    }
    let line = if points.len() >= 2 {
        let (x, y): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
        Some(ols_line(&x, &y)?)
    } else {
        None
    };
    Ok(PlotData {
        points,
        zero_risk_cells,
        line,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;
    use crate::risk::McEstimate;

    fn report(n: usize, delta: f64, risk: f64) -> RiskReport {
        RiskReport {
            n,
            delta,
            seed: 0,
            empirical: risk,
            generalization: McEstimate {
                estimate: risk,
                stderr: 0.0,
                samples: 2,
            },
            l2_pi: None,
            psi_hat: 0.0,
            restarts: 1,
            phi_n: 0.1,
            remainder: 0.2,
            depth: 3,
            width: 2,
            sparsity: 5,
            sup_bound: 1.0,
            fit_loss: 0.0,
        }
    }

    fn record(cell: usize, n: usize, delta: f64, outcome: Result<RiskReport>) -> RunRecord {
        RunRecord {
            cell,
            n,
            delta,
            seed: 0,
            outcome,
        }
    }

    #[test]
    fn csv_layout_and_failed_rows() {
        let recs = vec![
            record(0, 200, 0.01, Ok(report(200, 0.01, 0.5))),
            record(1, 400, 0.01, Err(Error::Domain("boom, twice".into()))),
        ];
        let text = results_csv(&recs).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], RESULTS_VERSION);
        assert_eq!(lines[1], CSV_HEADER.join(","));
        assert_eq!(lines[2], "200,0.01,2.0,0,0.5,0.5,0.0,0.0,0.1,0.2,3,2,5,1.0,ok");
        assert!(lines[3].starts_with("400,0.01,4.0,0,,,,,,,,,,,\"failed: "));
    }

    #[test]
    fn plot_data_from_three_cells() {
        let recs = vec![
            record(0, 100, 0.1, Ok(report(100, 0.1, 0.04))),
            record(1, 400, 0.1, Ok(report(400, 0.1, 0.01))),
            record(2, 1600, 0.1, Ok(report(1600, 0.1, 0.0025))),
        ];
        let plot = emit_plot_data(&results_csv(&recs).unwrap()).unwrap();
        assert_eq!(plot.points.len(), 3);
        let line = plot.line.unwrap();
        assert!((line.slope + 1.0).abs() < 1e-12);
        let text = plot.to_text();
        assert!(text.contains("# excluded zero-risk cells: 0"));
        assert_eq!(text.lines().last().unwrap().split(',').count(), 2);
    }

    #[test]
    fn plot_data_counts_zero_cells_and_rejects_empty() {
        let recs = vec![
            record(0, 100, 0.1, Ok(report(100, 0.1, 0.0))),
            record(1, 400, 0.1, Ok(report(400, 0.1, 0.01))),
        ];
        let plot = emit_plot_data(&results_csv(&recs).unwrap()).unwrap();
        assert_eq!(plot.zero_risk_cells, 1);
        assert_eq!(plot.line, None);
        assert!(plot.to_text().contains("undefined,undefined"));

        assert!(matches!(emit_plot_data(""), Err(Error::InsufficientData(_))));
        let header_only = results_csv(&[]).unwrap();
        assert!(matches!(emit_plot_data(&header_only), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn ou_problem_targets_the_restricted_drift() {
        let cfg = parse_config("[model]\nkind = \"ou\"\ntheta = 2.0\n[grid]\ncells = [[400, 0.01]]\n").unwrap();
        let p = build_problem(&cfg).unwrap();
        assert_eq!(p.target.value(&[0.5]), -1.0);
        assert_eq!(p.target.value(&[1.5]), 0.0);
        assert_eq!(p.model.drift_at(&[1.5]), vec![-3.0]);
    }

    #[test]
    fn confined_problem_matches_the_polynomial() {
        let cfg = parse_config(
            "[model]\nkind = \"confined\"\ncoefficients = [1.0, -1.0]\n[grid]\ncells = [[400, 0.01]]\n",
        )
        .unwrap();
        let p = build_problem(&cfg).unwrap();
        for x in [0.0, 0.3, 1.0] {
            assert!((p.target.value(&[x]) - (1.0 - x)).abs() < 1e-12);
        }
        assert_eq!(p.target.value(&[-0.2]), 0.0);
    }
}
