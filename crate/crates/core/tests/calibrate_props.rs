use liquidation_core::calibrate::{em_fit, y_hat_path, EmConfig, EmResult};
use liquidation_core::model::{ChainSpec, JumpSpec, ModelSpec};
use liquidation_core::rng::PathSeed;
use liquidation_core::simulator::simulate_observations;
use liquidation_core::EventLog;

fn fit(spec: &ModelSpec, horizon: f64, seed: u64, estimate_generator: bool) -> (EventLog, EmResult) {
    let (log, _) = simulate_observations(spec, horizon, PathSeed::new(seed, 0)).unwrap();
    let config = EmConfig { estimate_generator, ..EmConfig::moment(2, 2) };
    let result = em_fit(&log, horizon, &config).unwrap();
    (log, result)
}

fn worst_rate_error(result: &EmResult, truth: &[Vec<f64>]) -> f64 {
    result
        .intensity
        .iter()
        .zip(truth)
        .flat_map(|(got, want)| got.iter().zip(want).map(|(g, w)| (g - w).abs() / w))
        .fold(0.0, f64::max)
}

fn ascends(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] >= w[0] - 1e-7 * w[0].abs())
}

#[test]
fn recovers_the_reference_rates() {
    let spec = ModelSpec::table2();
    let truth = spec.jumps.base_rows();
    for seed in [1, 2] {
        let (_, r) = fit(&spec, 12.0, seed, true);
        assert!(worst_rate_error(&r, &truth) < 0.15, "seed {seed}: {:?}", r.intensity);
        assert!(ascends(&r.loglik_trace));
        for (_, y) in &r.y_hat {
            assert!((1.0..=2.0).contains(y));
        }
    }
}

#[test]
fn more_data_gives_better_estimates() {
    let spec = ModelSpec::table2();
    let truth = spec.jumps.base_rows();
    let median = |horizon: f64| {
        let mut errs: Vec<f64> =
            (0..7).map(|seed| worst_rate_error(&fit(&spec, horizon, 100 + seed, false).1, &truth)).collect();
        errs.sort_by(f64::total_cmp);
        errs[3]
    };
    let (short, long) = (median(2.5), median(10.0));
    assert!(long <= short, "median error {long} at 4x the data vs {short}");
}

#[test]
fn one_state_fit_is_the_poisson_estimate() {
    let spec = ModelSpec {
        chain: ChainSpec::single_state(),
        jumps: JumpSpec::two_tick(0.001, &[1100.0], &[800.0], 0.0).unwrap(),
        ..ModelSpec::table2()
    };
    let (log, _) = simulate_observations(&spec, 3.0, PathSeed::new(8, 0)).unwrap();
    let r = em_fit(&log, 3.0, &EmConfig::moment(1, 2)).unwrap();
    let counts = log.counts(2);
    for (rate, count) in r.intensity[0].iter().zip(&counts) {
        assert!((rate - *count as f64 / 3.0).abs() < 1e-9);
    }
    assert!(r.y_hat.iter().all(|&(_, y)| y == 1.0));
}

#[test]
fn regimeless_data_gives_an_uninformative_regime_estimate() {
    let spec = ModelSpec {
        chain: ChainSpec::single_state(),
        jumps: JumpSpec::two_tick(0.001, &[1000.0], &[1000.0], 0.0).unwrap(),
        ..ModelSpec::table2()
    };
    let (log, r) = fit(&spec, 6.0, 12, false);
    let mean = r.y_hat.iter().map(|p| p.1).sum::<f64>() / r.y_hat.len() as f64;
    assert!((mean - 1.5).abs() < 0.25, "{mean}");
    // rates all land near the common value
    assert!(r.intensity.iter().flatten().all(|&x| (x - 1000.0).abs() / 1000.0 < 0.15));

    let again = y_hat_path(&r, &log).unwrap();
    assert_eq!(again.len(), r.y_hat.len());
    for (a, b) in again.iter().zip(&r.y_hat) {
        assert_eq!(a.0, b.0);
        assert!((a.1 - b.1).abs() < 1e-9);
    }
}

#[test]
fn regime_estimate_follows_long_sojourns() {
    // slow switching so the regimes are visible in the data
    let spec = ModelSpec { chain: ChainSpec::two_state(0.5, 0.5, [0.5, 0.5]).unwrap(), ..ModelSpec::table2() };
    let (mut hit, mut total) = (0, 0);
    for seed in 0..4 {
        let (log, regimes) = simulate_observations(&spec, 8.0, PathSeed::new(30 + seed, 0)).unwrap();
        let r = em_fit(&log, 8.0, &EmConfig::moment(2, 2)).unwrap();
        for &(t, y) in &r.y_hat {
            // skip the first stretch and a margin after each switch
            if t < 0.25 || regimes.switches.iter().any(|s| t >= s.0 && t < s.0 + 0.25) {
                continue;
            }
            total += 1;
            let truth = regimes.state_at(t) + 1;
            if (y.round() as usize) == truth {
                hit += 1;
            }
        }
    }
    assert!(hit as f64 >= 0.9 * total as f64, "{hit}/{total}");
}

#[test]
fn rejects_degenerate_input() {
    let empty = EventLog::new(vec![]).unwrap();
    assert!(em_fit(&empty, 1.0, &EmConfig::moment(2, 2)).is_err());
    let (log, _) = simulate_observations(&ModelSpec::table2(), 0.1, PathSeed::new(1, 0)).unwrap();
    assert!(em_fit(&log, 0.1, &EmConfig { max_iters: 0, ..EmConfig::moment(2, 2) }).is_err());
    assert!(em_fit(&log, 0.1, &EmConfig { tol: 0.0, ..EmConfig::moment(2, 2) }).is_err());
}
