use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use driftnet::config::{load_config, ExperimentConfig};
use driftnet::experiment::{build_problem, cell_seed, emit_plot_data, run_experiment, PLOT_FILE, RESULTS_FILE};
use driftnet::risk::{fit_cell, training_path};
use driftnet::theory::{theory_report, RateParams};
use driftnet::{Error, Result};

/// Drift estimation experiments with sparse ReLU networks.
#[derive(Parser)]
#[command(name = "driftnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training path of every (cell, seed) and save it in binary form.
    Simulate(Common),
    /// Fit a network on every (cell, seed) and save the fits as text.
    Fit(Common),
    /// Print the theoretical quantities of every cell.
    Theory(Common),
    /// Run the full experiment: fit, evaluate risks, write results.csv and summary.txt.
    Sweep(Common),
    /// Turn a results CSV into a log-log series with its fitted line.
    PlotData(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Added to every configured seed.
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// Worker threads (all cores when absent).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// Results CSV; defaults to results.csv in the output directory.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Configuration whose output directory holds the results.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

enum Failure {
    Usage(Error),
    Partial(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Usage(e)
    }
}

fn prepare(c: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    if let Some(j) = c.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(j.max(1))
            .build_global()
            .map_err(|e| Error::Domain(e.to_string()))?;
    }
    let mut cfg = load_config(&c.config)?;
    for s in &mut cfg.seeds {
        *s = s.wrapping_add(c.seed_offset);
    }
    let dir = c.out_dir.clone().unwrap_or_else(|| cfg.out_dir.clone());
    Ok((cfg, dir))
}

fn runs(cfg: &ExperimentConfig) -> Vec<(usize, u64)> {
    (0..cfg.grid.len())
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c, s)))
        .collect()
}

/// Reports per-run failures and returns their count.
fn report_runs(results: Vec<(usize, u64, Result<String>)>) -> usize {
    let mut failed = 0;
    for (c, s, r) in results {
        match r {
            Ok(msg) => println!("cell {c} seed {s}: {msg}"),
            Err(e) => {
                failed += 1;
                eprintln!("cell {c} seed {s}: failed: {e}");
            }
        }
    }
    failed
}

fn simulate(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, dir) = prepare(c)?;
    let problem = build_problem(&cfg)?;
    fs::create_dir_all(&dir).map_err(Error::from)?;
    let results: Vec<_> = runs(&cfg)
        .into_par_iter()
        .map(|(cell, seed)| {
            let (n, delta) = cfg.grid[cell];
            let r = training_path(&problem, n, delta, cell_seed(seed, cell)).and_then(|path| {
                let file = dir.join(format!("path_c{cell}_s{seed}.bin"));
                path.write_binary(std::io::BufWriter::new(fs::File::create(&file)?))?;
                Ok(format!("n = {n}, delta = {delta}, wrote {}", file.display()))
            });
            (cell, seed, r)
        })
        .collect();
    finish(report_runs(results))
}

fn fit(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, dir) = prepare(c)?;
    let problem = build_problem(&cfg)?;
    fs::create_dir_all(&dir).map_err(Error::from)?;
    // Cells run one at a time; restarts inside a fit are already parallel.
    let results: Vec<_> = runs(&cfg)
        .into_iter()
        .map(|(cell, seed)| {
            let (n, delta) = cfg.grid[cell];
            let r = fit_cell(&problem, n, delta, cell_seed(seed, cell), &cfg.train).and_then(|f| {
                let file = dir.join(format!("fit_c{cell}_s{seed}.txt"));
                f.fit.write_text(std::io::BufWriter::new(fs::File::create(&file)?))?;
                Ok(format!(
                    "L = {}, s = {}, loss = {:?}, wrote {}",
                    f.arch.depth(),
                    f.sparsity,
                    f.fit.best_loss,
                    file.display()
                ))
            });
            (cell, seed, r)
        })
        .collect();
    finish(report_runs(results))
}

fn theory(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, _) = prepare(c)?;
    for (cell, &(n, delta)) in cfg.grid.iter().enumerate() {
        let rate = RateParams::new(cfg.class.clone(), n, delta)?;
        let rate = match &cfg.arch {
            driftnet::risk::ArchSource::Auto(k) => rate.with_constants(*k),
            driftnet::risk::ArchSource::Explicit { .. } => rate,
        };
        let report = theory_report(&rate, cfg.sup_bound, cfg.class.holder_k)?;
        println!("[cell {cell}]");
        print!("{report}");
    }
    Ok(())
}

fn sweep(c: &Common) -> std::result::Result<(), Failure> {
    let (cfg, dir) = prepare(c)?;
    let out = run_experiment(&cfg, Some(&dir))?;
    print!("{}", fs::read_to_string(&out.summary_path).map_err(Error::from)?);
    println!("wrote {} and {}", out.csv_path.display(), out.summary_path.display());
    finish(out.failed())
}

fn plot_data(p: &PlotArgs) -> std::result::Result<(), Failure> {
    let dir = match (&p.out_dir, &p.config) {
        (Some(d), _) => d.clone(),
        (None, Some(cfg)) => load_config(cfg)?.out_dir,
        (None, None) => PathBuf::from("."),
    };
    let csv = p.csv.clone().unwrap_or_else(|| dir.join(RESULTS_FILE));
    let text = fs::read_to_string(&csv).map_err(Error::from)?;
    let plot = emit_plot_data(&text)?.to_text();
    let target = csv.parent().filter(|_| p.out_dir.is_none()).unwrap_or(&dir);
    let target: &Path = if target.as_os_str().is_empty() { Path::new(".") } else { target };
    fs::create_dir_all(target).map_err(Error::from)?;
    fs::write(target.join(PLOT_FILE), &plot).map_err(Error::from)?;
    print!("{plot}");
    Ok(())
}

fn finish(failed: usize) -> std::result::Result<(), Failure> {
    if failed > 0 {
        Err(Failure::Partial(failed))
    } else {
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Fit(c) => fit(c),
        Command::Theory(c) => theory(c),
        Command::Sweep(c) => sweep(c),
        Command::PlotData(p) => plot_data(p),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Partial(k)) => {
            eprintln!("{k} run(s) failed");
            ExitCode::from(2)
        }
    }
}
