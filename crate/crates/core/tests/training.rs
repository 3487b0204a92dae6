use driftnet::relu_net::{Architecture, NetworkParams};
use driftnet::sde_sim::{make_regression_set, simulate_path, RegressionSet, SdeModel};
use driftnet::trainer::{empirical_objective, estimate_opt_gap, fit_least_squares, TrainConfig};

fn ou_data(n: usize, delta: f64, seed: u64) -> RegressionSet {
    let model = SdeModel::ornstein_uhlenbeck(1, 1.0, 1.0);
    let path = simulate_path(&model, &[0.5], n, delta, 10, seed).unwrap();
    make_regression_set(&path, 1).unwrap()
}

fn config(restarts: usize) -> TrainConfig {
    TrainConfig {
        steps: 300,
        restarts,
        seed: 17,
        ..TrainConfig::default()
    }
}

#[test]
fn ou_fit_beats_the_zero_network() {
    let data = ou_data(5000, 0.01, 2);
    let arch = Architecture::uniform(1, 3, 4).unwrap();
    let fit = fit_least_squares(&data, &arch, 12, 1.0, &config(3)).unwrap();
    let zero = empirical_objective(&NetworkParams::zeros(arch, 12, 1.0), &data);
    assert!(fit.best_loss < zero, "{} vs {zero}", fit.best_loss);
    let min = fit.per_restart_losses.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(fit.best_loss, min);
    assert_eq!(fit.best_loss, empirical_objective(&fit.best_params, &data));
}

#[test]
fn more_restarts_never_raise_the_best_loss() {
    let data = ou_data(2000, 0.01, 5);
    let arch = Architecture::uniform(1, 3, 4).unwrap();
    let five = fit_least_squares(&data, &arch, 12, 1.0, &config(5)).unwrap();
    let ten = fit_least_squares(&data, &arch, 12, 1.0, &config(10)).unwrap();
    assert_eq!(&ten.per_restart_losses[..5], &five.per_restart_losses[..]);
    assert!(ten.best_loss <= five.best_loss);
    let (g5, g10) = (estimate_opt_gap(&five), estimate_opt_gap(&ten));
    assert!(g5 >= 0.0 && g10 >= 0.0);
    assert!(g10 <= g5 + 1e-12, "{g10} > {g5}");
}

#[test]
fn exact_fit_has_zero_gap() {
    let data = RegressionSet {
        coord: 1,
        dim: 1,
        inputs: vec![0.1, 0.5, 0.9, 2.0],
        targets: vec![0.0; 4],
        delta: 0.1,
    };
    let arch = Architecture::uniform(1, 2, 3).unwrap();
    let fit = fit_least_squares(&data, &arch, 6, 1.0, &config(4)).unwrap();
    assert_eq!(fit.best_loss, 0.0);
    assert_eq!(estimate_opt_gap(&fit), 0.0);
}
