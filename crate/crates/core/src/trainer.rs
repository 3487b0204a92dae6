//! Projected gradient descent on the empirical least-squares objective
//!
//! ```text
//! Q_n(f) = (1/n) Σ_k (Y_{kΔ} − f(X_{kΔ}))²
//! ```
//!
//! over `F(L, p, s, F)`, with momentum, periodic projection onto the
//! constraint set and restarts. Restart 0 is always the zero network.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::function::in_unit_cube;
use crate::relu_net::{
    init_params, parse_network, project_in_place, Architecture, Batch, InitScheme, LossEvaluator, NetworkParams,
};
use crate::rng;
use crate::sde_sim::RegressionSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchMode {
    Full,
    /// Samples drawn with replacement from the in-cube observations; the
    /// exact gradient is used when there are no more than this many.
    Mini(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// `η_0` in `η_t = η_0 / (1 + t/decay)`.
    pub step_size: f64,
    /// Defaults to `steps / 2`.
    pub decay: Option<f64>,
    pub momentum: f64,
    pub batch: BatchMode,
    pub restarts: usize,
    pub projection_every: usize,
    /// Iterations between evaluations of `Q_n` for best-so-far tracking.
    pub eval_every: usize,
    pub init: InitScheme,
    /// Budget multiplier during the first half of the steps.
    pub relaxed_factor: usize,
    /// Also train every restart for `2 × steps` to bound the optimisation gap.
    pub extended_budget: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            step_size: 0.05,
            decay: None,
            momentum: 0.9,
            batch: BatchMode::Full,
            restarts: 5,
            projection_every: 10,
            eval_every: 10,
            init: InitScheme::ZerosPlusSparse,
            relaxed_factor: 4,
            extended_budget: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.restarts == 0 {
            return Err(Error::Domain("steps and restarts must be at least 1".into()));
        }
        if self.projection_every == 0 || self.eval_every == 0 {
            return Err(Error::Domain("projection and evaluation cadences must be positive".into()));
        }
        if !(self.step_size > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Domain("need η_0 > 0 and momentum in [0, 1)".into()));
        }
        if let BatchMode::Mini(0) = self.batch {
            return Err(Error::Domain("mini-batch size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub restart: usize,
    pub step: usize,
    /// `Q_n` of the current iterate projected to the hard budget.
    pub loss: f64,
    /// Best `Q_n` of this restart so far.
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub best_params: NetworkParams,
    pub best_loss: f64,
    pub best_restart: usize,
    pub per_restart_losses: Vec<f64>,
    /// Best loss of each restart after `2 × steps`; equal to
    /// `per_restart_losses` when the extended budget is off.
    pub extended_losses: Vec<f64>,
    pub trace: Vec<TracePoint>,
}

impl FitResult {
    pub fn restarts(&self) -> usize {
        self.per_restart_losses.len()
    }

    /// Versioned plain-text dump embedding the best network; bit-exact on
    /// reading back.
    pub fn to_text(&self) -> String {
        let floats = |xs: &[f64]| xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let mut out = String::from("driftnet-fit v1\n");
        let _ = writeln!(out, "best_loss {:?}", self.best_loss);
        let _ = writeln!(out, "best_restart {}", self.best_restart);
        let _ = writeln!(out, "restart_losses {}", floats(&self.per_restart_losses));
        let _ = writeln!(out, "extended_losses {}", floats(&self.extended_losses));
        let _ = writeln!(out, "trace {}", self.trace.len());
        for p in &self.trace {
            let _ = writeln!(out, "{} {} {:?} {:?}", p.restart, p.step, p.loss, p.best);
        }
        out.push_str(&self.best_params.to_text());
        out
    }

    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let mut next = || -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format("unexpected end of fit dump".into()))?
                .map_err(Error::from)
        };
        if next()?.trim() != "driftnet-fit v1" {
            return Err(Error::Format("unknown fit header".into()));
        }
        let field = |line: String, key: &str| -> Result<Vec<String>> {
            let mut parts = line.split_whitespace().map(str::to_owned);
            match parts.next() {
                Some(k) if k == key => Ok(parts.collect()),
                other => Err(Error::Format(format!("expected {key}, found {other:?}"))),
            }
        };
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Format(format!("bad number {s:?}")))
        };
        let index = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| Error::Format(format!("bad index {s:?}")))
        };
        let one = |v: Vec<String>| v.into_iter().next().unwrap_or_default();
        let best_loss = parse(&one(field(next()?, "best_loss")?))?;
        let best_restart = index(&one(field(next()?, "best_restart")?))?;
        let per_restart_losses = field(next()?, "restart_losses")?
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<_>>>()?;
        let extended_losses = field(next()?, "extended_losses")?
            .iter()
            .map(|s| parse(s))
            .collect::<Result<Vec<_>>>()?;
        let count = index(&one(field(next()?, "trace")?))?;
        let mut trace = Vec::with_capacity(count);
        for _ in 0..count {
            let line = next()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 4 {
                return Err(Error::Format(format!("bad trace line {line:?}")));
            }
            trace.push(TracePoint {
                restart: index(parts[0])?,
                step: index(parts[1])?,
                loss: parse(parts[2])?,
                best: parse(parts[3])?,
            });
        }
        let best_params = parse_network(&mut next)?;
        Ok(Self {
            best_params,
            best_loss,
            best_restart,
            per_restart_losses,
            extended_losses,
            trace,
        })
    }
}

/// Objective split into the in-cube part, which depends on the network, and
/// the constant contribution `Σ Y²` of off-cube samples.
struct Objective {
    dim: usize,
    inputs: Vec<f64>,
    targets: Vec<f64>,
    offcube_sse: f64,
    n: f64,
}

impl Objective {
    fn new(data: &RegressionSet) -> Self {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut offcube_sse = 0.0;
        for k in 0..data.len() {
            let x = data.input(k);
            let y = data.targets[k];
            if in_unit_cube(x) {
                inputs.extend_from_slice(x);
                targets.push(y);
            } else {
                offcube_sse += y * y;
            }
        }
        Self {
            dim: data.dim,
            inputs,
            targets,
            offcube_sse,
            n: data.len() as f64,
        }
    }

    fn cube(&self) -> Batch<'_> {
        Batch::new(self.dim, &self.inputs, &self.targets)
    }

    fn loss(&self, eval: &LossEvaluator, values: &[f64]) -> f64 {
        (eval.sum_squares(values, self.cube()) + self.offcube_sse) / self.n
    }
}

struct RestartRun {
    best: Vec<f64>,
    best_loss: f64,
    extended_loss: f64,
    trace: Vec<TracePoint>,
}

fn run_restart(
    obj: &Objective,
    arch: &Architecture,
    s: usize,
    sup_bound: f64,
    cfg: &TrainConfig,
    restart: usize,
) -> RestartRun {
    let seed = rng::derive_seed(cfg.seed, restart as u64);
    let init = if restart == 0 {
        NetworkParams::zeros(arch.clone(), s, sup_bound)
    } else {
        let budget = match cfg.init {
            InitScheme::UniformScaled => s * cfg.relaxed_factor,
            InitScheme::ZerosPlusSparse => s,
        };
        init_params(arch, cfg.init, budget, sup_bound, seed)
    };
    let active: Vec<bool> = match cfg.init {
        InitScheme::ZerosPlusSparse => init.nonzero_mask(),
        InitScheme::UniformScaled if restart == 0 => init.nonzero_mask(),
        InitScheme::UniformScaled => vec![true; init.values.len()],
    };
    let eval = LossEvaluator::new(arch, active, sup_bound);
    let mut values = init.values;
    let mut velocity = vec![0.0; values.len()];
    let mut grad = vec![0.0; values.len()];
    let mut rng = rng::side_stream(seed, 3);

    let mut hard = values.clone();
    project_in_place(&mut hard, s, 1.0);
    let mut best_loss = obj.loss(&eval, &hard);
    let mut best = hard;
    let mut trace = vec![TracePoint {
        restart,
        step: 0,
        loss: best_loss,
        best: best_loss,
    }];
    let mut checkpoint_loss = best_loss;
    let mut checkpoint = best.clone();

    let total = if cfg.extended_budget { 2 * cfg.steps } else { cfg.steps };
    let decay = cfg.decay.unwrap_or((cfg.steps as f64 / 2.0).max(1.0));
    let dense = matches!(cfg.init, InitScheme::UniformScaled);
    let n_cube = obj.targets.len();
    let mini = match cfg.batch {
        BatchMode::Mini(b) if n_cube > b => Some(b),
        _ => None,
    };
    let mut mini_inputs = Vec::new();
    let mut mini_targets = Vec::new();

    if n_cube > 0 && eval.active().iter().any(|&a| a) {
        for t in 0..total {
            let budget = if dense && t < cfg.steps / 2 {
                s * cfg.relaxed_factor
            } else {
                s
            };
            let scale = match mini {
                None => {
                    eval.sum_squares_grad(&values, obj.cube(), &mut grad);
                    1.0 / obj.n
                }
                Some(b) => {
                    mini_inputs.clear();
                    mini_targets.clear();
                    for _ in 0..b {
                        let k = rng.random_range(0..n_cube);
                        mini_inputs.extend_from_slice(&obj.inputs[k * obj.dim..(k + 1) * obj.dim]);
                        mini_targets.push(obj.targets[k]);
                    }
                    eval.sum_squares_grad(
                        &values,
                        Batch::new(obj.dim, &mini_inputs, &mini_targets),
                        &mut grad,
                    );
                    n_cube as f64 / (obj.n * b as f64)
                }
            };
            let eta = cfg.step_size / (1.0 + t as f64 / decay);
            for ((v, w), g) in velocity.iter_mut().zip(values.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v - eta * scale * g;
                *w += *v;
            }
            let step = t + 1;
            if step % cfg.projection_every == 0 || step == total || step == cfg.steps {
                project_in_place(&mut values, budget, 1.0);
                for (v, w) in velocity.iter_mut().zip(&values) {
                    if *w == 0.0 {
                        *v = 0.0;
                    }
                }
            }
            if step % cfg.eval_every == 0 || step == total || step == cfg.steps {
                let mut hard = values.clone();
                project_in_place(&mut hard, s, 1.0);
                let loss = obj.loss(&eval, &hard);
                if loss < best_loss {
                    best_loss = loss;
                    best = hard;
                }
                trace.push(TracePoint {
                    restart,
                    step,
                    loss,
                    best: best_loss,
                });
            }
            if step == cfg.steps {
                checkpoint_loss = best_loss;
                checkpoint = best.clone();
            }
        }
    }
    if !cfg.extended_budget || n_cube == 0 {
        checkpoint_loss = best_loss;
        checkpoint = best.clone();
    }
    RestartRun {
        best: checkpoint,
        best_loss: checkpoint_loss,
        extended_loss: best_loss,
        trace,
    }
}

/// Minimises `Q_n` over `F(L, p, s, F)` with `cfg.restarts` restarts (restart
/// 0 being the zero network). Every returned parameter set is feasible.
pub fn fit_least_squares(
    data: &RegressionSet,
    arch: &Architecture,
    s: usize,
    sup_bound: f64,
    cfg: &TrainConfig,
) -> Result<FitResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no regression pairs".into()));
    }
    if s < 2 {
        return Err(Error::Domain(format!("sparsity budget s = {s} must be at least 2")));
    }
    if arch.input_dim() != data.dim {
        return Err(Error::Shape {
            expected: arch.input_dim(),
            got: data.dim,
        });
    }
    if !(sup_bound >= 1.0) {
        return Err(Error::Domain(format!("F = {sup_bound} must be at least 1")));
    }
    let obj = Objective::new(data);
    let runs: Vec<RestartRun> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(&obj, arch, s, sup_bound, cfg, r))
        .collect();

    let (best_restart, _) = runs
        .iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.best_loss.total_cmp(&b.best_loss).then(i.cmp(j)))
        .expect("at least one restart");
    let per_restart_losses = runs.iter().map(|r| r.best_loss).collect();
    let extended_losses = runs.iter().map(|r| r.extended_loss).collect();
    let best_loss = runs[best_restart].best_loss;
    let best_params = NetworkParams {
        arch: arch.clone(),
        values: runs[best_restart].best.clone(),
        sparsity_budget: s,
        sup_bound,
    };
    let trace = runs.into_iter().flat_map(|r| r.trace).collect();
    Ok(FitResult {
        best_params,
        best_loss,
        best_restart,
        per_restart_losses,
        extended_losses,
        trace,
    })
}

/// Surrogate optimisation gap: best loss minus the lowest loss any restart
/// reaches under twice the step budget. Never negative. This is a proxy for
/// the gap to the class infimum, which is not computable.
pub fn estimate_opt_gap(fit: &FitResult) -> f64 {
    let floor = fit
        .extended_losses
        .iter()
        .chain(&fit.per_restart_losses)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    (fit.best_loss - floor).max(0.0)
}

/// `Q_n(f)` for a feasible network.
pub fn empirical_objective(params: &NetworkParams, data: &RegressionSet) -> f64 {
    let obj = Objective::new(data);
    let eval = LossEvaluator::new(&params.arch, params.nonzero_mask(), params.sup_bound);
    obj.loss(&eval, &params.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relu_net::count_nonzero;

    fn linear_data(n: usize, slope: f64) -> RegressionSet {
        let inputs: Vec<f64> = (0..n).map(|k| k as f64 / (n - 1) as f64 * 1.2 - 0.1).collect();
        let targets = inputs
            .iter()
            .map(|&x| if (0.0..=1.0).contains(&x) { slope * (1.0 - x) } else { 0.0 })
            .collect();
        RegressionSet {
            coord: 1,
            dim: 1,
            inputs,
            targets,
            delta: 0.01,
        }
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            steps: 300,
            restarts: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_targets_are_fit_exactly() {
        let mut data = linear_data(50, 1.0);
        data.targets.iter_mut().for_each(|y| *y = 0.0);
        let arch = Architecture::uniform(1, 3, 4).unwrap();
        let fit = fit_least_squares(&data, &arch, 10, 1.0, &quick()).unwrap();
        assert_eq!(fit.best_loss, 0.0);
        assert_eq!(estimate_opt_gap(&fit), 0.0);
    }

    #[test]
    fn fit_improves_on_zero_network_and_stays_feasible() {
        let data = linear_data(200, 1.0);
        let arch = Architecture::uniform(1, 3, 4).unwrap();
        let fit = fit_least_squares(&data, &arch, 12, 1.0, &quick()).unwrap();
        let zero = fit.per_restart_losses[0];
        assert!(fit.best_loss < zero, "{} vs {}", fit.best_loss, zero);
        assert!(fit.best_loss < 0.1 * zero);
        assert!(fit.best_params.validate().is_ok());
        assert!(count_nonzero(&fit.best_params) <= 12);
        assert_eq!(
            fit.best_loss,
            fit.per_restart_losses.iter().cloned().fold(f64::INFINITY, f64::min)
        );
        let recomputed = empirical_objective(&fit.best_params, &data);
        assert!((recomputed - fit.best_loss).abs() < 1e-12);
    }

    #[test]
    fn best_so_far_trace_is_monotone() {
        let data = linear_data(100, 0.8);
        let arch = Architecture::uniform(1, 2, 6).unwrap();
        let cfg = TrainConfig {
            init: InitScheme::UniformScaled,
            ..quick()
        };
        let fit = fit_least_squares(&data, &arch, 12, 1.0, &cfg).unwrap();
        for r in 0..fit.restarts() {
            let bests: Vec<f64> = fit.trace.iter().filter(|p| p.restart == r).map(|p| p.best).collect();
            assert!(bests.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(fit.best_params.validate().is_ok());
    }

    #[test]
    fn deterministic_given_seed() {
        let data = linear_data(120, 1.0);
        let arch = Architecture::uniform(1, 3, 4).unwrap();
        let cfg = TrainConfig {
            batch: BatchMode::Mini(16),
            ..quick()
        };
        let a = fit_least_squares(&data, &arch, 10, 1.0, &cfg).unwrap();
        let b = fit_least_squares(&data, &arch, 10, 1.0, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_restart_has_zero_gap() {
        let data = linear_data(80, 1.0);
        let arch = Architecture::uniform(1, 3, 4).unwrap();
        let cfg = TrainConfig {
            restarts: 1,
            ..quick()
        };
        let fit = fit_least_squares(&data, &arch, 10, 1.0, &cfg).unwrap();
        assert_eq!(estimate_opt_gap(&fit), 0.0);
    }

    #[test]
    fn text_dump_round_trips() {
        let data = linear_data(60, 1.0);
        let arch = Architecture::uniform(1, 3, 4).unwrap();
        let fit = fit_least_squares(&data, &arch, 10, 1.0, &quick()).unwrap();
        let text = fit.to_text();
        let back = FitResult::read_text(text.as_bytes()).unwrap();
        assert_eq!(back, fit);
        assert!(FitResult::read_text(&b"driftnet-fit v2\n"[..]).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = linear_data(10, 1.0);
        let arch = Architecture::uniform(1, 2, 2).unwrap();
        assert!(fit_least_squares(&data, &arch, 1, 1.0, &quick()).is_err());
        let bad = TrainConfig {
            steps: 0,
            ..quick()
        };
        assert!(fit_least_squares(&data, &arch, 4, 1.0, &bad).is_err());
    }
}
