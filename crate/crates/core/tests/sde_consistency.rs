use warpdrift::sde::{
    brownian_increments, euler_maruyama, model_langevin, simulate_ensemble, simulate_path,
    split_seed,
};

#[test]
fn langevin_terminal_moments() {
    let ens = simulate_ensemble(&model_langevin(), 2.0, 5.0, 2000, 10_000, 3).unwrap();
    let xt: Vec<f64> = ens
        .paths
        .iter()
        .map(|p| *p.values.last().unwrap())
        .collect();
    let n = xt.len() as f64;
    let mean = xt.iter().sum::<f64>() / n;
    let var = xt.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = xt.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;

    let mean_exact = 2.0 * (-5.0f64).exp();
    let var_exact = 0.01 * (1.0 - (-10.0f64).exp()) / 2.0;
    let se_mean = (var / n).sqrt();
    let se_var = ((m4 - var * var) / n).sqrt();
    assert!(
        (mean - mean_exact).abs() <= 3.0 * se_mean,
        "mean {mean} vs {mean_exact} (se {se_mean})"
    );
    assert!(
        (var - var_exact).abs() <= 3.0 * se_var,
        "var {var} vs {var_exact} (se {se_var})"
    );
}

/// Coarse increments obtained by summing blocks of fine ones.
fn coarsen(dw: &[f64], factor: usize) -> Vec<f64> {
    dw.chunks(factor).map(|c| c.iter().sum()).collect()
}

#[test]
fn strong_error_decays_at_first_order() {
    let model = model_langevin();
    let fine = 12_800;
    let levels = [50usize, 100, 200, 400];
    let paths = 200;
    let mut errors = vec![0.0; levels.len()];
    for p in 0..paths {
        let seed = split_seed(99, p);
        let dw = brownian_increments(5.0, fine, seed);
        let reference = *euler_maruyama(&model, 2.0, 5.0, &dw, seed)
            .unwrap()
            .values
            .last()
            .unwrap();
        for (e, &n) in errors.iter_mut().zip(&levels) {
            let coarse = euler_maruyama(&model, 2.0, 5.0, &coarsen(&dw, fine / n), seed).unwrap();
            *e += (coarse.values.last().unwrap() - reference).abs() / paths as f64;
        }
    }
    let xs: Vec<f64> = levels.iter().map(|&n| (5.0 / n as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    let slope = least_squares_slope(&xs, &ys);
    assert!(
        (slope - 1.0).abs() <= 0.3,
        "strong order slope {slope}, errors {errors:?}"
    );
}

#[test]
fn coarsened_increments_reproduce_direct_simulation() {
    let dw = brownian_increments(5.0, 100, 8);
    let p = euler_maruyama(&model_langevin(), 2.0, 5.0, &dw, 8).unwrap();
    assert_eq!(
        p,
        simulate_path(&model_langevin(), 2.0, 5.0, 100, 8).unwrap()
    );
    assert_eq!(coarsen(&dw, 1), dw);
}

#[test]
fn reruns_are_bit_identical() {
    let a = simulate_ensemble(&model_langevin(), 2.0, 5.0, 50, 64, 5).unwrap();
    let b = simulate_ensemble(&model_langevin(), 2.0, 5.0, 50, 64, 5).unwrap();
    assert_eq!(a.paths, b.paths);
    let c = simulate_ensemble(&model_langevin(), 2.0, 5.0, 50, 64, 6).unwrap();
    assert_ne!(a.paths, c.paths);
}

fn least_squares_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
