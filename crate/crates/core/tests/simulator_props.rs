use liquidation_core::model::ModelSpec;
use liquidation_core::rng::PathSeed;
use liquidation_core::simulator::{
    compare_policies, mc_evaluate, simulate_observations, simulate_path, Axis, EventKind, Policy, RateTable, SimOptions,
};
use proptest::prelude::*;

fn recorded() -> SimOptions {
    SimOptions { record: true, ..SimOptions::default() }
}

/// Feedback table that sells at `nu` everywhere.
fn flat_table(nu: f64) -> Policy {
    let axes = vec![Axis::new(0.0, 2.0, 3).unwrap(), Axis::new(0.0, 6000.0, 3).unwrap(), Axis::new(0.0, 1.0, 2).unwrap()];
    Policy::feedback(RateTable::new(axes, vec![nu; 18]).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inventory_is_what_was_not_sold(nu in 0.0f64..9000.0, master in any::<u64>(), index in 0u64..1000) {
        let spec = ModelSpec::table2();
        let r = simulate_path(&spec, &Policy::Constant(nu), PathSeed::new(master, index), &recorded()).unwrap();
        let sold: f64 = r.segments.iter().map(|s| s.nu * (s.t1 - s.t0)).sum();
        prop_assert!((spec.initial_inventory - sold - r.final_inventory).abs() < 1e-6);
        prop_assert!(r.final_inventory >= -1e-9);
        let tau = if nu > 0.0 { (spec.initial_inventory / nu).min(spec.horizon) } else { spec.horizon };
        prop_assert!((r.tau - tau).abs() < 1e-9, "tau {} vs {}", r.tau, tau);
    }

    #[test]
    fn prices_stay_positive(nu in 0.0f64..9000.0, master in any::<u64>()) {
        let spec = ModelSpec::table2();
        let r = simulate_path(&spec, &Policy::Constant(nu), PathSeed::new(master, 0), &recorded()).unwrap();
        prop_assert!(r.final_price > 0.0);
        for e in &r.events {
            prop_assert!(e.price_after > 0.0);
            if let EventKind::PriceJump { .. } = e.kind {
                prop_assert!(e.t <= r.tau);
            }
            prop_assert!((e.pi_after.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let jumps = r.events.iter().filter(|e| matches!(e.kind, EventKind::PriceJump { .. })).count();
        prop_assert_eq!(jumps, r.n_jumps);
    }

    #[test]
    fn paths_are_reproducible(master in any::<u64>(), index in any::<u64>()) {
        let spec = ModelSpec::table2();
        let p = flat_table(2500.0);
        let a = simulate_path(&spec, &p, PathSeed::new(master, index), &recorded()).unwrap();
        let b = simulate_path(&spec, &p, PathSeed::new(master, index), &recorded()).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn equal_rules_on_common_numbers_gain_nothing() {
    let spec = ModelSpec::table2();
    let c = compare_policies(&spec, &Policy::Constant(3000.0), &flat_table(3000.0), 200, 5, &SimOptions::default()).unwrap();
    assert!(c.paths.iter().all(|p| p.gain == 0.0));
    assert_eq!(c.gain, 0.0);
}

#[test]
fn evaluation_does_not_depend_on_path_order() {
    let spec = ModelSpec::table2();
    let opts = SimOptions::default();
    let all = mc_evaluate(&spec, &Policy::Constant(3000.0), 50, 9, &opts).unwrap();
    let one = simulate_path(&spec, &Policy::Constant(3000.0), PathSeed::new(9, 37), &opts).unwrap();
    assert_eq!(all.paths[37].revenue, one.revenue);
    assert_eq!(all.paths[37].n_events, one.n_jumps);
}

#[test]
fn second_moment_of_the_price_is_bounded() {
    // E[S_t^2] <= s0^2 exp(C t), C = sup over regimes and rates of the
    // intensity-weighted sum of (z^2 + 2z)
    let spec = ModelSpec::table2();
    let c = (0..spec.n_states())
        .flat_map(|k| [0.0, spec.max_rate].map(|nu| (k, nu)))
        .map(|(k, nu)| {
            (0..spec.n_marks())
                .map(|j| {
                    let z = spec.jumps.marks()[j];
                    (z * z + 2.0 * z) * spec.intensity(0.0, k, nu, j).unwrap()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max);
    assert!((c - 0.2019).abs() < 1e-3, "{c}");

    let n = 2000;
    let squares: Vec<f64> = (0..n)
        .map(|i| {
            let r = simulate_path(&spec, &Policy::Constant(0.0), PathSeed::new(77, i), &SimOptions::default()).unwrap();
            r.final_price * r.final_price
        })
        .collect();
    let mean = squares.iter().sum::<f64>() / n as f64;
    let sd = (squares.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let bound = spec.initial_price.powi(2) * (c * spec.horizon).exp();
    assert!(mean <= bound + 3.0 * sd / (n as f64).sqrt(), "{mean} > {bound}");
}

#[test]
fn tick_counts_match_the_intensity() {
    // without selling the tick count over a day is close to the mean intensity
    let spec = ModelSpec::table2();
    let mut total = 0;
    for i in 0..20 {
        let (log, _) = simulate_observations(&spec, 1.0, PathSeed::new(4, i)).unwrap();
        total += log.len();
    }
    let mean = total as f64 / 20.0;
    assert!((mean - 1900.0).abs() < 4.0 * (1900.0f64 / 20.0).sqrt() + 50.0, "{mean}");
}
