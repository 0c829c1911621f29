//! Browser bindings: optimal-rate surfaces, filter paths and the
//! closed-form check, each returned as a flat `Float64Array`.

use liquidation_core::hjb::{solve, solve_deterministic, Grid, OracleParams};
use liquidation_core::model::{ChainSpec, JumpSpec, ModelSpec, TemporaryImpact, TerminalValue};
use liquidation_core::rng::PathSeed;
use liquidation_core::simulator::simulate_observations;
use liquidation_core::filter::filter_event_log;
use wasm_bindgen::prelude::*;

fn js(e: liquidation_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

fn reference(impact: f64, impact_scale: f64) -> Result<ModelSpec, liquidation_core::Error> {
    let base = ModelSpec::table2();
    let spec = ModelSpec {
        jumps: JumpSpec::two_tick(0.001, &[1000.0, 900.0], &[900.0, 1000.0], impact)?,
        impact: TemporaryImpact::Power { scale: impact_scale, exponent: 0.6 },
        ..base
    };
    spec.validate()?;
    Ok(spec)
}

/// Optimal selling rate at `t = 0` for the two-regime reference market with
/// permanent impact `impact` and temporary-impact scale `impact_scale`.
///
/// Layout: `[nw + 1, npi + 1, max_rate, rates...]` with the belief index
/// fastest; row `i` is inventory `i * w0 / nw`, column `j` belief `j / npi`.
#[wasm_bindgen]
pub fn policy_surface(impact: f64, impact_scale: f64, nw: usize, npi: usize) -> Result<Vec<f64>, JsError> {
    let spec = reference(impact, impact_scale).map_err(js)?;
    let field = solve(&spec, &Grid::new(50, nw, npi).map_err(js)?).map_err(js)?;
    let cells = field.ws.len() * field.pis.len();
    let mut out = vec![field.ws.len() as f64, field.pis.len() as f64, spec.max_rate];
    out.extend_from_slice(&field.nu_star[..cells]);
    Ok(out)
}

/// Ticks of the reference market without selling over `horizon` days,
/// filtered. Returns triples `(t, belief in regime 1, true regime)`
/// at every event, thinned to at most `max_points` triples.
#[wasm_bindgen]
pub fn filter_path(seed: u32, horizon: f64, max_points: usize) -> Result<Vec<f64>, JsError> {
    let spec = ModelSpec::table2();
    let (log, regimes) = simulate_observations(&spec, horizon, PathSeed::new(u64::from(seed), 0)).map_err(js)?;
    let trace = filter_event_log(&spec, &log, |_| 0.0, 1e-3, horizon).map_err(js)?;
    let every = trace.events.len().div_ceil(max_points.max(1)).max(1);
    let mut out = Vec::with_capacity(3 * max_points);
    for e in trace.events.iter().step_by(every) {
        out.extend_from_slice(&[e.t, e.posterior[0], (regimes.state_at(e.t) + 1) as f64]);
    }
    Ok(out)
}

/// Closed-form value against the solver for the one-regime market with
/// up/down intensities `c_up < c_down`. Returns triples
/// `(w, exact, solved)` at `t = 0`.
#[wasm_bindgen]
pub fn oracle_curve(c_up: f64, c_down: f64, impact: f64, nw: usize) -> Result<Vec<f64>, JsError> {
    let spec = ModelSpec {
        chain: ChainSpec::single_state(),
        jumps: JumpSpec::two_tick(0.001, &[c_up], &[c_down], impact).map_err(js)?,
        impact: TemporaryImpact::none(),
        terminal: TerminalValue::Zero,
        discount: 0.0,
        ..ModelSpec::table2()
    };
    let params = OracleParams::from_spec(&spec).map_err(js)?;
    let field = solve_deterministic(&spec, 100, nw).map_err(js)?;
    let mut out = Vec::with_capacity(3 * field.ws.len());
    for (i, &w) in field.ws.iter().enumerate() {
        out.extend_from_slice(&[w, params.value(0.0, w).map_err(js)?, field.value(0, i, 0)]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surface_layout() {
        let s = policy_surface(7e-6, 5e-11, 20, 4).unwrap();
        assert_eq!((s[0], s[1]), (21.0, 5.0));
        assert_eq!(s.len(), 3 + 21 * 5);
        assert!(s[3..].iter().all(|&nu| (0.0..=s[2]).contains(&nu)));
    }

    #[test]
    fn filter_path_is_thinned_and_bounded() {
        let p = filter_path(3, 0.5, 100).unwrap();
        assert_eq!(p.len() % 3, 0);
        assert!(p.len() / 3 <= 100);
        for c in p.chunks(3) {
            assert!((0.0..=1.0).contains(&c[1]));
            assert!(c[2] == 1.0 || c[2] == 2.0);
        }
    }

    #[test]
    fn oracle_curve_tracks_the_closed_form() {
        let c = oracle_curve(900.0, 1000.0, 7e-6, 60).unwrap();
        let worst = c.chunks(3).map(|x| (x[1] - x[2]).abs()).fold(0.0, f64::max);
        let top = c.chunks(3).map(|x| x[1]).fold(0.0, f64::max);
        assert!(worst / top < 0.01);
    }
}
