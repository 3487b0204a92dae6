//! Risk estimation: empirical risk on the training path, generalization risk
//! over independent copies, `L²(Π)` risk along one long path, and rate
//! sweeps across `(n, Δ)` grids.

use std::sync::Arc;

use rayon::prelude::*;

use crate::drift_models::ClassParams;
use crate::error::{Error, Result};
use crate::function::ScalarField;
use crate::relu_net::{Architecture, Network};
use crate::rng;
use crate::sde_sim::{copy_seed, make_regression_set, simulate_path, InitialLaw, ObservedPath, SdeModel};
use crate::stats::{mean, mean_stderr, ols_line};
use crate::theory::{oracle_remainder, select_architecture, ArchConstants, RateParams};
use crate::trainer::{estimate_opt_gap, fit_least_squares, FitResult, TrainConfig};

fn path_error(fhat: &dyn ScalarField, f0: &dyn ScalarField, path: &ObservedPath) -> f64 {
    let n = path.n();
    let sse: f64 = path
        .rows()
        .take(n)
        .map(|x| {
            let e = fhat.value(x) - f0.value(x);
            e * e
        })
        .sum();
    sse / n as f64
}

/// `(1/n) Σ_{k<n} (f̂(X_{kΔ}) − f_0(X_{kΔ}))²` on the training path.
pub fn empirical_risk(fhat: &dyn ScalarField, f0: &dyn ScalarField, path: &ObservedPath) -> Result<f64> {
    if path.obs.len() / path.dim < 2 {
        return Err(Error::InsufficientData("a path needs at least two observations".into()));
    }
    Ok(path_error(fhat, f0, path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Monte Carlo generalization risk: the per-path empirical error averaged
/// over `copies` fresh paths. Copy `j` is the path `simulate_copies` would
/// produce for index `j`, generated and discarded one at a time.
#[allow(clippy::too_many_arguments)]
pub fn generalization_risk(
    fhat: &dyn ScalarField,
    f0: &dyn ScalarField,
    model: &SdeModel,
    init: &dyn InitialLaw,
    n: usize,
    delta: f64,
    substeps: usize,
    copies: usize,
    seed: u64,
) -> Result<McEstimate> {
    if copies < 2 {
        return Err(Error::Domain(format!("need at least 2 copies, got {copies}")));
    }
    let errors = (0..copies)
        .into_par_iter()
        .map(|j| {
            let s = copy_seed(seed, j);
            let x0 = init.sample(model.dim(), &mut rng::side_stream(s, 1));
            let path = simulate_path(model, &x0, n, delta, substeps, s)?;
            Ok(path_error(fhat, f0, &path))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (estimate, stderr) = mean_stderr(&errors)?;
    Ok(McEstimate {
        estimate,
        stderr,
        samples: copies,
    })
}

/// Burn-in used when none is given: 10% of the horizon, at least 100.
pub fn default_burn_in(horizon: usize) -> usize {
    (horizon / 10).max(100)
}

const BATCHES: usize = 20;

/// Ergodic average of `(f̂ − f_0)²` over observations `burn_in..horizon` of
/// one path started at `x0`. The standard error comes from 20 batch means.
#[allow(clippy::too_many_arguments)]
pub fn l2_pi_risk(
    fhat: &dyn ScalarField,
    f0: &dyn ScalarField,
    model: &SdeModel,
    x0: &[f64],
    burn_in: Option<usize>,
    horizon: usize,
    delta: f64,
    substeps: usize,
    seed: u64,
) -> Result<McEstimate> {
    let burn_in = burn_in.unwrap_or_else(|| default_burn_in(horizon));
    if horizon < burn_in + BATCHES {
        return Err(Error::Domain(format!(
            "horizon {horizon} leaves fewer than {BATCHES} observations after burn-in {burn_in}"
        )));
    }
    let path = simulate_path(model, x0, horizon, delta, substeps, seed)?;
    let vals: Vec<f64> = path
        .rows()
        .skip(burn_in)
        .take(horizon - burn_in)
        .map(|x| {
            let e = fhat.value(x) - f0.value(x);
            e * e
        })
        .collect();
    let size = vals.len() / BATCHES;
    let batch_means: Vec<f64> = vals.chunks(size).take(BATCHES).map(mean).collect();
    let (_, stderr) = mean_stderr(&batch_means)?;
    Ok(McEstimate {
        estimate: mean(&vals),
        stderr,
        samples: vals.len(),
    })
}

/// How the network class of a cell is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ArchSource {
    Auto(ArchConstants),
    Explicit { arch: Architecture, sparsity: usize },
}

/// Everything needed to run the estimation pipeline on one drift model.
#[derive(Clone)]
pub struct Problem {
    pub model: SdeModel,
    /// Regression target, the `coord`-th drift component on the cube.
    pub target: Arc<dyn ScalarField>,
    pub coord: usize,
    pub class: ClassParams,
    pub init: Arc<dyn InitialLaw>,
    pub substeps: usize,
    pub copies: usize,
    pub sup_bound: f64,
    pub arch: ArchSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiskReport {
    pub n: usize,
    pub delta: f64,
    pub seed: u64,
    pub empirical: f64,
    pub generalization: McEstimate,
    pub l2_pi: Option<McEstimate>,
    pub psi_hat: f64,
    pub restarts: usize,
    pub phi_n: f64,
    pub remainder: f64,
    pub depth: usize,
    pub width: usize,
    pub sparsity: usize,
    pub sup_bound: f64,
    pub fit_loss: f64,
}

impl RiskReport {
    pub fn n_delta(&self) -> f64 {
        self.n as f64 * self.delta
    }
}

/// Per-stage seeds derived from a cell seed.
pub fn stage_seed(cell_seed: u64, stage: u64) -> u64 {
    rng::derive_seed(cell_seed, stage)
}

/// The cell's architecture and sparsity.
pub fn cell_architecture(problem: &Problem, n: usize, delta: f64) -> Result<(RateParams, Architecture, usize)> {
    let rate = RateParams::new(problem.class.clone(), n, delta)?;
    let (arch, s) = match &problem.arch {
        ArchSource::Auto(c) => select_architecture(
            &rate.clone().with_constants(*c),
            problem.sup_bound,
            problem.class.holder_k,
        )?,
        ArchSource::Explicit { arch, sparsity } => (arch.clone(), *sparsity),
    };
    Ok((rate, arch, s))
}

/// The training path of a cell.
pub fn training_path(problem: &Problem, n: usize, delta: f64, seed: u64) -> Result<ObservedPath> {
    let d = problem.model.dim();
    let x0 = problem
        .init
        .sample(d, &mut rng::side_stream(stage_seed(seed, 0), 1));
    simulate_path(&problem.model, &x0, n, delta, problem.substeps, stage_seed(seed, 0))
}

/// Simulate, regress, select or take the architecture, and fit.
pub fn fit_cell(problem: &Problem, n: usize, delta: f64, seed: u64, train: &TrainConfig) -> Result<CellFit> {
    let (rate, arch, sparsity) = cell_architecture(problem, n, delta)?;
    let path = training_path(problem, n, delta, seed)?;
    let data = make_regression_set(&path, problem.coord)?;
    let cfg = TrainConfig {
        seed: stage_seed(seed, 1),
        ..train.clone()
    };
    let fit = fit_least_squares(&data, &arch, sparsity, problem.sup_bound, &cfg)?;
    Ok(CellFit {
        rate,
        arch,
        sparsity,
        path,
        fit,
    })
}

pub struct CellFit {
    pub rate: RateParams,
    pub arch: Architecture,
    pub sparsity: usize,
    pub path: ObservedPath,
    pub fit: FitResult,
}

/// [`fit_cell`], then the empirical and generalization risks.
pub fn evaluate_cell(
    problem: &Problem,
    n: usize,
    delta: f64,
    seed: u64,
    train: &TrainConfig,
) -> Result<(RiskReport, FitResult)> {
    let CellFit {
        rate,
        arch,
        sparsity: s,
        path,
        fit,
    } = fit_cell(problem, n, delta, seed, train)?;
    let net = Network::new(fit.best_params.clone())?;
    let empirical = empirical_risk(&net, problem.target.as_ref(), &path)?;
    let generalization = generalization_risk(
        &net,
        problem.target.as_ref(),
        &problem.model,
        problem.init.as_ref(),
        n,
        delta,
        problem.substeps,
        problem.copies,
        stage_seed(seed, 2),
    )?;
    let report = RiskReport {
        n,
        delta,
        seed,
        empirical,
        generalization,
        l2_pi: None,
        psi_hat: estimate_opt_gap(&fit),
        restarts: fit.restarts(),
        phi_n: rate.phi_n().value,
        remainder: oracle_remainder(n, delta, s, arch.depth(), problem.sup_bound)?,
        depth: arch.depth(),
        width: arch.min_hidden_width(),
        sparsity: s,
        sup_bound: problem.sup_bound,
        fit_loss: fit.best_loss,
    };
    Ok((report, fit))
}

/// Log-log fit of cell risks against `nΔ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// `None` when fewer than two cells have positive risk.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    pub used: usize,
    pub zero_risk_cells: usize,
}

/// Unweighted least squares of `ln risk` on `ln nΔ`; zero-risk cells are
/// excluded and counted.
pub fn fit_rate(points: &[(f64, f64)]) -> Result<RateFit> {
    let (pos, zero): (Vec<_>, Vec<_>) = points.iter().partition(|(_, r)| *r > 0.0);
    if let Some((nd, r)) = points.iter().find(|(nd, r)| !(*nd > 0.0) || !(*r >= 0.0)) {
        return Err(Error::Domain(format!("invalid sweep point (nΔ = {nd}, risk = {r})")));
    }
    let zero_risk_cells = zero.len();
    if pos.len() < 2 {
        return Ok(RateFit {
            slope: None,
            intercept: None,
            used: pos.len(),
            zero_risk_cells,
        });
    }
    let x: Vec<f64> = pos.iter().map(|(nd, _)| nd.ln()).collect();
    let y: Vec<f64> = pos.iter().map(|(_, r)| r.ln()).collect();
    let line = ols_line(&x, &y)?;
    Ok(RateFit {
        slope: Some(line.slope),
        intercept: Some(line.intercept),
        used: pos.len(),
        zero_risk_cells,
    })
}

/// Checks the asymptotic regime of a sweep grid: at least 3 cells, `nΔ`
/// strictly increasing and `nΔ²` strictly decreasing.
pub fn check_sweep_grid(grid: &[(usize, f64)]) -> Result<()> {
    if grid.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "a rate sweep needs at least 3 cells, got {}",
            grid.len()
        )));
    }
    for w in grid.windows(2) {
        let (a, b) = (w[0].0 as f64 * w[0].1, w[1].0 as f64 * w[1].1);
        if !(b > a) {
            return Err(Error::Constraint(format!("nΔ must increase along the grid ({a} then {b})")));
        }
        if !(b * w[1].1 < a * w[0].1) {
            return Err(Error::Constraint(format!(
                "nΔ² must decrease along the grid ({} then {})",
                a * w[0].1,
                b * w[1].1
            )));
        }
    }
    Ok(())
}

#[derive(Debug)]
pub struct SweepCell {
    pub n: usize,
    pub delta: f64,
    pub runs: Vec<Result<RiskReport>>,
}

impl SweepCell {
    /// Mean generalization risk over the successful seeds.
    pub fn mean_risk(&self) -> Option<f64> {
        let ok: Vec<f64> = self
            .runs
            .iter()
            .filter_map(|r| r.as_ref().ok())
            .map(|r| r.generalization.estimate)
            .collect();
        (!ok.is_empty()).then(|| mean(&ok))
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub cells: Vec<SweepCell>,
    pub fit: RateFit,
    /// `−2β*/(2β* + t*)` at the rate-determining layer.
    pub theory_exponent: f64,
}

/// Runs every `(cell, seed)` pair and fits the log-log slope of the mean
/// generalization risk. Cells whose runs all fail are left out of the fit.
pub fn rate_sweep(
    problem: &Problem,
    grid: &[(usize, f64)],
    train: &TrainConfig,
    seeds: &[u64],
) -> Result<SweepOutcome> {
    check_sweep_grid(grid)?;
    if seeds.is_empty() {
        return Err(Error::Domain("at least one seed per cell is required".into()));
    }
    let cells: Vec<SweepCell> = grid
        .iter()
        .enumerate()
        .map(|(c, &(n, delta))| SweepCell {
            n,
            delta,
            runs: seeds
                .par_iter()
                .map(|&s| {
                    evaluate_cell(problem, n, delta, rng::derive_seed(s, c as u64), train)
                        .map(|(r, _)| RiskReport { seed: s, ..r })
                })
                .collect(),
        })
        .collect();
    let points: Vec<(f64, f64)> = cells
        .iter()
        .filter_map(|c| c.mean_risk().map(|r| (c.n as f64 * c.delta, r)))
        .collect();
    let fit = fit_rate(&points)?;
    Ok(SweepOutcome {
        cells,
        fit,
        theory_exponent: crate::theory::rate_exponent(&problem.class),
    })
}
