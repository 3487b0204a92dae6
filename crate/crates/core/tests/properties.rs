use proptest::prelude::*;

use driftnet::config::parse_config;
use driftnet::experiment::{emit_plot_data, CSV_HEADER, RESULTS_VERSION};
use driftnet::relu_net::{count_nonzero, project_params, shifted_relu, Architecture, Network, NetworkParams};
use driftnet::risk::{empirical_risk, fit_rate};
use driftnet::sde_sim::ObservedPath;

fn params_strategy() -> impl Strategy<Value = (NetworkParams, usize)> {
    (1usize..=3, prop::collection::vec(1usize..=5, 1..=4))
        .prop_flat_map(|(d, hidden)| {
            let mut widths = vec![d];
            widths.extend(hidden);
            widths.push(1);
            let arch = Architecture::new(widths).unwrap();
            let total = arch.param_count();
            (
                Just(arch),
                prop::collection::vec(prop_oneof![Just(0.0), -3.0..3.0f64], total),
                0..=total,
            )
        })
        .prop_map(|(arch, values, s)| {
            let mut p = NetworkParams::zeros(arch, values.len(), 1.0);
            p.values = values;
            (p, s)
        })
}

proptest! {
    #[test]
    fn projection_is_feasible_and_idempotent((params, s) in params_strategy()) {
        let once = project_params(&params, s, 1.0);
        prop_assert!(once.values.iter().all(|v| v.abs() <= 1.0));
        prop_assert!(count_nonzero(&once) <= s);
        let twice = project_params(&once, s, 1.0);
        prop_assert_eq!(&once.values, &twice.values);
        for (a, b) in params.values.iter().zip(&once.values) {
            prop_assert!(*b == 0.0 || *b == a.clamp(-1.0, 1.0));
        }
    }

    #[test]
    fn networks_vanish_off_the_cube((params, s) in params_strategy(), x in prop::collection::vec(-2.0..3.0f64, 3)) {
        let mut p = project_params(&params, s, 1.0);
        p.sparsity_budget = s;
        let d = p.arch.input_dim();
        let net = Network::new(p).unwrap();
        let x = &x[..d];
        let y = net.eval(x);
        prop_assert!(y.abs() <= 1.0);
        if x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            prop_assert_eq!(y, 0.0);
        }
    }

    #[test]
    fn shifted_relu_is_nonnegative(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 1..10)) {
        let (v, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let out = shifted_relu(&v, &y).unwrap();
        for ((o, a), b) in out.iter().zip(&y).zip(&v) {
            prop_assert!(*o >= 0.0);
            prop_assert_eq!(*o, (a - b).max(0.0));
        }
    }

    #[test]
    fn empirical_risk_inflates_by_c_squared(
        obs in prop::collection::vec(-0.5..1.5f64, 2..40),
        a in -2.0..2.0f64,
        c in 1.0..5.0f64,
    ) {
        let path = ObservedPath { dim: 1, delta: 0.1, seed: 0, substeps: 1, obs };
        let cube = |x: f64| (0.0..=1.0).contains(&x);
        let f0 = |x: &[f64]| if cube(x[0]) { x[0] * x[0] } else { 0.0 };
        let fhat = move |x: &[f64]| if cube(x[0]) { a * x[0] } else { 0.0 };
        let inflated = move |x: &[f64]| f0(x) + c * (fhat(x) - f0(x));
        let base = empirical_risk(&fhat, &f0, &path).unwrap();
        let big = empirical_risk(&inflated, &f0, &path).unwrap();
        prop_assert!(base >= 0.0);
        prop_assert!((big - c * c * base).abs() <= 1e-12 * big.max(1e-300));
    }

    #[test]
    fn rate_slope_ignores_risk_scale(
        risks in prop::collection::vec(1e-4..1.0f64, 3..7),
        scale in 0.01..100.0f64,
    ) {
        let points: Vec<(f64, f64)> = risks.iter().enumerate().map(|(k, &r)| (10.0 * 2f64.powi(k as i32), r)).collect();
        let scaled: Vec<(f64, f64)> = points.iter().map(|&(x, r)| (x, r * scale)).collect();
        let a = fit_rate(&points).unwrap().slope.unwrap();
        let b = fit_rate(&scaled).unwrap().slope.unwrap();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn plot_line_matches_normal_equations(
        cells in prop::collection::vec((10usize..100_000, 1e-5..1.0f64), 2..8),
    ) {
        let mut csv = format!("{RESULTS_VERSION}\n{}\n", CSV_HEADER.join(","));
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (k, &(n, risk)) in cells.iter().enumerate() {
            let n = n + k * 100_000;
            let delta = 0.01;
            csv.push_str(&format!("{n},{delta:?},{:?},0,{risk:?},{risk:?},0.0,0.0,0.1,0.1,3,2,5,1.0,ok\n", n as f64 * delta));
            xs.push((n as f64 * delta).ln());
            ys.push(risk.ln());
        }
        let line = emit_plot_data(&csv).unwrap().line.unwrap();
        // [m Σx; Σx Σx²] [a; b] = [Σy; Σxy]
        let m = xs.len() as f64;
        let sx: f64 = xs.iter().sum();
        let sy: f64 = ys.iter().sum();
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let det = m * sxx - sx * sx;
        let intercept = (sy * sxx - sx * sxy) / det;
        let slope = (m * sxy - sx * sy) / det;
        prop_assert!((line.slope - slope).abs() <= 1e-9 * slope.abs().max(1.0));
        prop_assert!((line.intercept - intercept).abs() <= 1e-9 * intercept.abs().max(1.0));
    }

    #[test]
    fn config_echo_round_trips(
        seeds in prop::collection::vec(0u64..1000, 1..4),
        steps in 1usize..5000,
        restarts in 1usize..8,
        batch in prop::option::of(1usize..10_000),
        copies in 2usize..10,
        theta in 0.1..5.0f64,
        nd in 2.0..1000.0f64,
    ) {
        let seeds: Vec<String> = seeds.iter().map(|s| s.to_string()).collect();
        let batch = batch.map(|b| b.to_string()).unwrap_or_else(|| "\"full\"".into());
        let text = format!(
            "seeds = [{}]\n[model]\nkind = \"ou\"\ntheta = {theta:?}\n[grid]\nn_delta = [{nd:?}]\ndelta = 0.5\n\
             [train]\nsteps = {steps}\nrestarts = {restarts}\nbatch = {batch}\n[risk]\ncopies = {copies}\n",
            seeds.join(", ")
        );
        let cfg = parse_config(&text).unwrap();
        prop_assert_eq!(parse_config(&cfg.to_toml()).unwrap(), cfg);
    }
}
