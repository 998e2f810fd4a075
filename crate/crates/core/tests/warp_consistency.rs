use proptest::prelude::*;
use warpdrift::estimator::{drift_estimate, drift_estimate_known_warp};
use warpdrift::quadrature::linspace;
use warpdrift::sde::{model_langevin, simulate_ensemble, Ensemble};
use warpdrift::warp::{analytic_ou_warp, empirical_cdf, AnalyticOuLaw, AnalyticOuWarp};
use warpdrift::{Kernel, WarpFunction};

fn ou_warp() -> AnalyticOuWarp {
    analytic_ou_warp(&AnalyticOuLaw::new(2.0, 5.0, 0.0, 0.1)).unwrap()
}

fn large_ensemble() -> Ensemble {
    simulate_ensemble(&model_langevin(), 2.0, 5.0, 2000, 2000, 17).unwrap()
}

#[test]
fn empirical_warp_converges_to_analytic() {
    let ens = large_ensemble();
    let emp = empirical_cdf(&ens, 0.0).unwrap();
    let exact = ou_warp();
    let worst = linspace(-0.5, 2.2, 200)
        .into_iter()
        .map(|x| (emp.eval(x) - exact.eval(x)).abs())
        .fold(0.0, f64::max);
    eprintln!("sup |F_N - F| = {worst:e}");
    assert!(worst <= 0.02);
}

#[test]
fn known_warp_estimate_tracks_drift() {
    let ens = large_ensemble();
    let warp = ou_warp();
    let k = Kernel::bump();
    let grid = linspace(0.0, 1.5, 61);
    let known = drift_estimate_known_warp(&ens, &warp, &k, 0.02, &grid, 0.0).unwrap();
    let mse = known.mse(|x| -x);
    let emp = drift_estimate(&ens, &k, 0.02, &grid, 0.0).unwrap();
    let gap = known
        .values
        .iter()
        .zip(&emp.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    eprintln!("known-warp mse {mse:e}, sup gap to empirical warp {gap:e}");
    assert!(mse <= 5e-5);
    assert!(gap <= 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn analytic_warp_is_monotone(a in -1.0f64..3.0, b in -1.0f64..3.0) {
        let w = ou_warp();
        let (x, y) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(w.eval(x) <= w.eval(y));
        prop_assert!((0.0..=1.0).contains(&w.eval(x)));
    }
}
