use liquidation_core::hjb::{closed_form_oracle, solve, solve_deterministic, step, Grid, OracleParams};
use liquidation_core::model::{ChainSpec, JumpSpec, ModelSpec, TemporaryImpact, TerminalValue};
use liquidation_core::simulator::{Axis, Policy, RateTable};
use proptest::prelude::*;

fn counterexample() -> ModelSpec {
    ModelSpec {
        chain: ChainSpec::single_state(),
        jumps: JumpSpec::two_tick(0.001, &[900.0], &[1000.0], 7e-6).unwrap(),
        impact: TemporaryImpact::none(),
        terminal: TerminalValue::Zero,
        discount: 0.0,
        ..ModelSpec::table2()
    }
}

const NW: usize = 12;
const NPI: usize = 4;

fn layer() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..8000.0, (NW + 1) * (NPI + 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    /// Raising any input value never lowers any output value.
    #[test]
    fn explicit_step_is_monotone(
        base in layer(),
        bump in prop::collection::vec(0.0f64..50.0, (NW + 1) * (NPI + 1)),
        t in 0.0f64..2.0,
    ) {
        let spec = ModelSpec::table2();
        let grid = Grid::new(10, NW, NPI).unwrap();
        let dt = grid.stable_dt(&spec).unwrap();
        let mut lo = base.clone();
        let mut hi: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + b).collect();
        // inventory zero is worthless in every layer
        for j in 0..=NPI {
            lo[j] = 0.0;
            hi[j] = 0.0;
        }
        let a = step(&spec, &grid, &lo, t, dt).unwrap();
        let b = step(&spec, &grid, &hi, t, dt).unwrap();
        prop_assert!(a.min_center_weight >= 0.0);
        for (x, y) in a.v.iter().zip(&b.v) {
            prop_assert!(*y >= *x - 1e-9 * (1.0 + x.abs()), "{x} > {y}");
        }
    }

    #[test]
    fn policy_rates_are_clamped(values in prop::collection::vec(-1e5f64..1e5, 12), t in -1.0f64..3.0, w in -10.0f64..1e4, pi in -0.5f64..1.5) {
        let axes = vec![Axis::new(0.0, 2.0, 3).unwrap(), Axis::new(0.0, 6000.0, 2).unwrap(), Axis::new(0.0, 1.0, 2).unwrap()];
        let policy = Policy::feedback(RateTable::new(axes, values).unwrap()).unwrap();
        let nu = policy.rate(t, w, &[pi, 1.0 - pi], 9000.0);
        prop_assert!((0.0..=9000.0).contains(&nu));
    }

    #[test]
    fn oracle_is_increasing_in_inventory_and_time_to_go(w in 0.0f64..6000.0, dw in 0.0f64..100.0, t in 0.0f64..1.9) {
        let v = |t: f64, w: f64| closed_form_oracle(0.001, 900.0, 1000.0, 7e-6, 9000.0, 2.0, t, w).unwrap();
        prop_assert!(v(t, w + dw) >= v(t, w));
        prop_assert!(v(t, w) >= v(t + 0.1, w));
        prop_assert!(v(t, w) <= w);
    }
}

#[test]
fn oracle_rejects_rising_prices() {
    assert!(closed_form_oracle(0.001, 1000.0, 900.0, 7e-6, 9000.0, 2.0, 0.0, 100.0).is_err());
    assert!(OracleParams::from_spec(&ModelSpec::table2()).is_err());
}

#[test]
fn coarse_solve_is_close_to_the_closed_form() {
    let spec = counterexample();
    let p = OracleParams::from_spec(&spec).unwrap();
    let f = solve_deterministic(&spec, 50, 60).unwrap();
    let exact = p.value(0.0, f.ws[60]).unwrap();
    let got = f.value(0, 60, 0);
    assert!((got - exact).abs() / exact < 0.01, "{got} vs {exact}");
}

#[test]
fn solved_values_respect_the_upper_bound() {
    let spec = ModelSpec::table2();
    let f = solve(&spec, &Grid::new(20, 60, 5).unwrap()).unwrap();
    let bound = spec.value_upper_bound();
    assert!(f.v.iter().all(|&v| v * spec.initial_price <= bound));
    assert!(f.min_center_weight >= 0.0);
    // rates live in [0, max_rate]
    assert!(f.nu_star.iter().all(|&nu| (0.0..=spec.max_rate).contains(&nu)));
}

#[test]
fn value_is_nondecreasing_in_inventory_and_the_good_belief() {
    let spec = ModelSpec::table2();
    let f = solve(&spec, &Grid::new(20, 60, 5).unwrap()).unwrap();
    for i in 1..f.ws.len() {
        for j in 0..f.pis.len() {
            assert!(f.value(0, i, j) >= f.value(0, i - 1, j) - 1e-9);
            if j > 0 {
                assert!(f.value(0, i, j) >= f.value(0, i, j - 1) - 1e-9);
            }
        }
    }
}
