//! Filtering of the hidden regime from price-jump observations.
//!
//! Between jumps the belief `pi` follows the ODE
//! `dpi^k/dt = (Q^T pi)^k + pi^k (lambda_bar - lambda_k)`, where `lambda_k`
//! is the total jump intensity in regime `k` and `lambda_bar` its belief
//! average. At a jump with mark `j` the belief is updated by Bayes' rule with
//! the mark intensities as likelihoods. The unnormalized (Zakai) recursion is
//! provided alongside; normalizing it reproduces the same belief path.

use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::model::{check_probability, ChainSpec, ModelSpec};

/// Tolerance for accepting a belief vector as a point of the simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// The trader's belief over regimes at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub pi: Vec<f64>,
    pub t: f64,
}

impl FilterState {
    pub fn new(pi: Vec<f64>, t: f64) -> Result<Self> {
        check_probability(&pi, SIMPLEX_TOL).map_err(|e| Error::Domain(format!("belief off the simplex: {e}")))?;
        Ok(Self { pi, t })
    }

    pub fn initial(spec: &ModelSpec) -> Self {
        Self { pi: spec.chain.initial().to_vec(), t: 0.0 }
    }
}

/// Unnormalized conditional masses, relative to the reference jump measure
/// returned by [`reference_intensity`]. Mass is periodically rescaled to stay
/// in floating-point range; the accumulated log factor is kept in `log_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnnormalizedState {
    pub p: Vec<f64>,
    pub t: f64,
    pub log_scale: f64,
    pub rescales: usize,
}

impl UnnormalizedState {
    pub fn initial(spec: &ModelSpec) -> Self {
        Self { p: spec.chain.initial().to_vec(), t: 0.0, log_scale: 0.0, rescales: 0 }
    }
}

fn check_simplex(pi: &[f64], n: usize) -> Result<()> {
    if pi.len() != n {
        return Err(Error::Domain(format!("belief has {} entries, expected {n}", pi.len())));
    }
    check_probability(pi, SIMPLEX_TOL).map_err(|e| Error::Domain(format!("belief off the simplex: {e}")))
}

fn check_rate(spec: &ModelSpec, nu: f64) -> Result<()> {
    if !(0.0..=spec.max_rate * (1.0 + 1e-12)).contains(&nu) {
        return Err(Error::Domain(format!("rate {nu} outside [0, {}]", spec.max_rate)));
    }
    Ok(())
}

/// Belief drift between jumps, written as `Q^T pi + pi (lambda_bar - lambda)`.
pub(crate) fn drift_into(spec: &ModelSpec, t: f64, pi: &[f64], nu: f64, out: &mut [f64]) {
    let n = pi.len();
    if n == 2 {
        let rates = [spec.total_rate(t, 0, nu), spec.total_rate(t, 1, nu)];
        drift_with_rates(&spec.chain, &rates, pi, out);
        return;
    }
    for (k, o) in out.iter_mut().enumerate() {
        *o = spec.total_rate(t, k, nu);
    }
    let rates = out.to_vec();
    drift_with_rates(&spec.chain, &rates, pi, out);
}

/// Belief drift for given total jump intensities per regime.
#[inline]
pub(crate) fn drift_with_rates(chain: &ChainSpec, rates: &[f64], pi: &[f64], out: &mut [f64]) {
    let n = pi.len();
    if n == 2 {
        // fast path; identical arithmetic to the general loop
        let bar = pi[0] * rates[0] + pi[1] * rates[1];
        out[0] = chain.rate(0, 0) * pi[0] + chain.rate(1, 0) * pi[1] + pi[0] * (bar - rates[0]);
        out[1] = chain.rate(0, 1) * pi[0] + chain.rate(1, 1) * pi[1] + pi[1] * (bar - rates[1]);
        return;
    }
    let bar: f64 = pi.iter().zip(rates).map(|(p, l)| p * l).sum();
    for k in 0..n {
        let mut gen = 0.0;
        for j in 0..n {
            gen += chain.rate(j, k) * pi[j];
        }
        out[k] = gen + pi[k] * (bar - rates[k]);
    }
}

/// Belief drift written through the Bayes factors `u^k(z)`:
/// `sum_j q^{jk} pi^j - pi^k sum_j pi^j sum_m u^k(z_m) lambda_{j,m}`.
pub fn drift_bayes_form(spec: &ModelSpec, t: f64, pi: &[f64], nu: f64) -> Vec<f64> {
    let n = pi.len();
    let marks = spec.n_marks();
    let mixed: Vec<f64> = (0..marks)
        .map(|m| (0..n).map(|l| pi[l] * spec.rate(t, l, nu, m)).sum())
        .collect();
    (0..n)
        .map(|k| {
            let gen: f64 = (0..n).map(|j| spec.chain.rate(j, k) * pi[j]).sum();
            let mut comp = 0.0;
            for j in 0..n {
                for (m, &mix) in mixed.iter().enumerate() {
                    if mix > 0.0 {
                        let u = spec.rate(t, k, nu, m) / mix - 1.0;
                        comp += pi[j] * u * spec.rate(t, j, nu, m);
                    }
                }
            }
            gen - pi[k] * comp
        })
        .collect()
}

/// Belief drift between jumps at time `t` under selling rate `nu`.
///
/// Evaluates both algebraic forms of the drift and fails with
/// [`Error::Invariant`] if they disagree beyond `1e-12` relative to the
/// intensity scale.
pub fn drift(spec: &ModelSpec, t: f64, pi: &[f64], nu: f64) -> Result<Vec<f64>> {
    check_simplex(pi, spec.n_states())?;
    check_rate(spec, nu)?;
    let mut out = vec![0.0; pi.len()];
    drift_into(spec, t, pi, nu, &mut out);
    let other = drift_bayes_form(spec, t, pi, nu);
    let scale = 1.0 + spec.max_total_intensity() + (0..spec.n_states()).map(|k| -spec.chain.rate(k, k)).sum::<f64>();
    for (a, b) in out.iter().zip(&other) {
        if (a - b).abs() > 1e-12 * scale {
            return Err(Error::Invariant(format!("drift forms disagree: {a} vs {b}")));
        }
    }
    Ok(out)
}

/// Bayes update in place; `pi^k <- pi^k lambda_{k,j} / sum_l pi^l lambda_{l,j}`.
pub(crate) fn jump_update_in_place(spec: &ModelSpec, t: f64, pi: &mut [f64], nu: f64, mark: usize) -> Result<()> {
    // The factor m(t) (1 + a_j nu) is shared by all regimes and cancels in
    // the normalization, so the posterior is exactly independent of nu.
    let common = spec.jumps.time_multiplier().eval(t) * (1.0 + spec.jumps.impact()[mark] * nu);
    let mut total = 0.0;
    for (k, p) in pi.iter_mut().enumerate() {
        *p *= spec.jumps.base(k, mark);
        total += *p;
    }
    if !(total > 0.0) || !(common > 0.0) {
        return Err(Error::ImpossibleObservation { mark, t });
    }
    for p in pi.iter_mut() {
        *p /= total;
    }
    Ok(())
}

/// Posterior belief after observing a jump with mark `mark` at time `t`.
pub fn jump_update(spec: &ModelSpec, t: f64, pi: &[f64], nu: f64, mark: usize) -> Result<Vec<f64>> {
    check_simplex(pi, spec.n_states())?;
    check_rate(spec, nu)?;
    if mark >= spec.n_marks() {
        return Err(Error::Domain(format!("mark index {mark} out of range")));
    }
    let mut out = pi.to_vec();
    jump_update_in_place(spec, t, &mut out, nu, mark)?;
    Ok(out)
}

/// Clips round-off negatives and rescales onto the simplex.
#[inline]
pub(crate) fn renormalize(pi: &mut [f64]) {
    let mut sum = 0.0;
    for p in pi.iter_mut() {
        if *p < 0.0 {
            *p = 0.0;
        }
        sum += *p;
    }
    for p in pi.iter_mut() {
        *p /= sum;
    }
}

/// Scratch buffers for the fixed-step fourth-order integrator.
#[derive(Debug, Clone)]
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(n: usize) -> Self {
        Self { k1: vec![0.0; n], k2: vec![0.0; n], k3: vec![0.0; n], k4: vec![0.0; n], tmp: vec![0.0; n] }
    }

    /// One classical RK4 step of `y' = f(t, y)`.
    #[inline]
    pub(crate) fn step<F>(&mut self, t: f64, h: f64, y: &mut [f64], mut f: F)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let n = y.len();
        f(t, y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k1[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * h * self.k2[i];
        }
        f(t + 0.5 * h, &self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + h * self.k3[i];
        }
        f(t + h, &self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Number of equal RK4 steps of length at most `dt_target` covering `horizon`.
pub(crate) fn step_count(horizon: f64, dt_target: f64) -> usize {
    if horizon <= 0.0 {
        0
    } else {
        ((horizon / dt_target).ceil() as usize).max(1)
    }
}

/// Flows a belief forward in place over `horizon` without observations.
pub(crate) fn flow_in_place<F: Fn(f64) -> f64>(
    spec: &ModelSpec,
    rk: &mut Rk4,
    pi: &mut [f64],
    t0: f64,
    horizon: f64,
    dt_target: f64,
    nu_path: &F,
) {
    let n = step_count(horizon, dt_target);
    if n == 0 {
        return;
    }
    let h = horizon / n as f64;
    for i in 0..n {
        let t = t0 + i as f64 * h;
        rk.step(t, h, pi, |s, y, out| drift_into(spec, s, y, nu_path(s), out));
        renormalize(pi);
    }
}

/// Integrates the between-jump belief dynamics over `horizon` with a fixed
/// RK4 step no longer than `dt_target`, renormalizing after every step.
pub fn propagate<F: Fn(f64) -> f64>(
    spec: &ModelSpec,
    state: &FilterState,
    nu_path: F,
    dt_target: f64,
    horizon: f64,
) -> Result<FilterState> {
    check_simplex(&state.pi, spec.n_states())?;
    if !(horizon >= 0.0) || !(dt_target > 0.0) {
        return Err(Error::Domain(format!("invalid propagation horizon {horizon} or step {dt_target}")));
    }
    let mut pi = state.pi.clone();
    let mut rk = Rk4::new(pi.len());
    flow_in_place(spec, &mut rk, &mut pi, state.t, horizon, dt_target, &nu_path);
    Ok(FilterState { pi, t: state.t + horizon })
}

/// Mark-wise reference intensities for the Zakai recursion: the largest
/// intensity of each mark over regimes, times and admissible rates, so every
/// density ratio lies in `(0, 1]`.
pub fn reference_intensity(spec: &ModelSpec) -> Vec<f64> {
    let m = spec.jumps.time_multiplier().max_value();
    (0..spec.n_marks())
        .map(|j| {
            (0..spec.n_states())
                .map(|k| spec.jumps.base(k, j) * (1.0 + spec.jumps.impact()[j] * spec.max_rate))
                .fold(0.0, f64::max)
                * m
        })
        .collect()
}

const MASS_FLOOR: f64 = 1e-150;
const MASS_CEIL: f64 = 1e150;

fn rescale(state: &mut UnnormalizedState) {
    let mass: f64 = state.p.iter().sum();
    if !(MASS_FLOOR..=MASS_CEIL).contains(&mass) {
        for p in state.p.iter_mut() {
            *p /= mass;
        }
        state.log_scale += mass.ln();
        state.rescales += 1;
    }
}

/// Advances the unnormalized filter over `horizon` (linear ODE between
/// jumps, RK4 with step at most `dt_target`) and then, if `mark` is given,
/// applies the multiplicative density update for a jump at the end time.
pub fn zakai_step<F: Fn(f64) -> f64>(
    spec: &ModelSpec,
    state: &UnnormalizedState,
    nu_path: F,
    dt_target: f64,
    horizon: f64,
    mark: Option<usize>,
) -> Result<UnnormalizedState> {
    let n = spec.n_states();
    if state.p.len() != n || state.p.iter().any(|&x| !(x >= 0.0)) {
        return Err(Error::Domain("unnormalized state must be a nonnegative vector over regimes".into()));
    }
    if !(horizon >= 0.0) || !(dt_target > 0.0) {
        return Err(Error::Domain(format!("invalid horizon {horizon} or step {dt_target}")));
    }
    let reference = reference_intensity(spec);
    let ref_total: f64 = reference.iter().sum();
    let mut out = state.clone();
    let steps = step_count(horizon, dt_target);
    let mut rk = Rk4::new(n);
    if steps > 0 {
        let h = horizon / steps as f64;
        for i in 0..steps {
            let t = state.t + i as f64 * h;
            // the decay shared by all regimes is applied exactly; RK4 only
            // sees the part that moves the belief
            let nu0 = nu_path(t);
            let shift = (0..n).map(|k| spec.total_rate(t, k, nu0)).sum::<f64>() / n as f64 - ref_total;
            rk.step(t, h, &mut out.p, |s, y, o| {
                let nu = nu_path(s);
                for k in 0..n {
                    let gen: f64 = (0..n).map(|j| spec.chain.rate(j, k) * y[j]).sum();
                    o[k] = gen - y[k] * (spec.total_rate(s, k, nu) - ref_total - shift);
                }
            });
            let decay = (-shift * h).exp();
            for p in out.p.iter_mut() {
                *p = p.max(0.0) * decay;
            }
            rescale(&mut out);
        }
    }
    out.t = state.t + horizon;
    if let Some(j) = mark {
        if j >= spec.n_marks() {
            return Err(Error::Domain(format!("mark index {j} out of range")));
        }
        let nu = nu_path(out.t);
        for (k, p) in out.p.iter_mut().enumerate() {
            *p *= spec.rate(out.t, k, nu, j) / reference[j];
        }
        if !(out.p.iter().sum::<f64>() > 0.0) {
            return Err(Error::ImpossibleObservation { mark: j, t: out.t });
        }
        rescale(&mut out);
    }
    Ok(out)
}

/// Normalized belief `p / sum(p)`.
pub fn normalize(state: &UnnormalizedState) -> Result<Vec<f64>> {
    let mass: f64 = state.p.iter().sum();
    if !(mass > 0.0) || !mass.is_finite() {
        return Err(Error::Domain(format!("unnormalized state has invalid mass {mass}")));
    }
    Ok(state.p.iter().map(|x| x / mass).collect())
}

/// Belief just before and just after one observed jump.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredEvent {
    pub t: f64,
    pub mark: usize,
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub events: Vec<FilteredEvent>,
    /// Belief at the end of the replay window.
    pub terminal: FilterState,
}

/// Replays an event log through the filter: belief flow between events,
/// Bayes update at each event, then flow to `horizon`.
///
/// `nu_path` gives the selling rate in force; at an event the value at the
/// event time is used as the left limit.
pub fn filter_event_log<F: Fn(f64) -> f64>(
    spec: &ModelSpec,
    log: &EventLog,
    nu_path: F,
    dt_target: f64,
    horizon: f64,
) -> Result<FilterTrace> {
    log.check_against(spec.n_marks(), horizon)?;
    if !(dt_target > 0.0) {
        return Err(Error::Domain(format!("invalid step {dt_target}")));
    }
    let mut pi = spec.chain.initial().to_vec();
    let mut rk = Rk4::new(pi.len());
    let mut t = 0.0;
    let mut events = Vec::with_capacity(log.len());
    for e in log.events() {
        flow_in_place(spec, &mut rk, &mut pi, t, e.t - t, dt_target, &nu_path);
        let prior = pi.clone();
        jump_update_in_place(spec, e.t, &mut pi, nu_path(e.t), e.mark)?;
        events.push(FilteredEvent { t: e.t, mark: e.mark, prior, posterior: pi.clone() });
        t = e.t;
    }
    flow_in_place(spec, &mut rk, &mut pi, t, horizon - t, dt_target, &nu_path);
    Ok(FilterTrace { events, terminal: FilterState { pi, t: horizon } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;
    use crate::model::{ChainSpec, JumpSpec};
    use approx::assert_relative_eq;

    fn single_state() -> ModelSpec {
        let spec = ModelSpec::table2();
        ModelSpec {
            chain: ChainSpec::single_state(),
            jumps: JumpSpec::two_tick(0.001, &[1000.0], &[900.0], 7e-6).unwrap(),
            ..spec
        }
    }

    #[test]
    fn drift_examples() {
        let spec = ModelSpec::table2();
        let d = drift(&spec, 0.0, &[0.5, 0.5], 0.0).unwrap();
        assert!(d[0].abs() < 1e-12 && d[1].abs() < 1e-12);
        let d = drift(&spec, 0.0, &[1.0, 0.0], 0.0).unwrap();
        assert_relative_eq!(d[0], -4.0, max_relative = 1e-14);
        let one = single_state();
        assert_eq!(drift(&one, 0.3, &[1.0], 5000.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn drift_rejects_off_simplex() {
        let spec = ModelSpec::table2();
        assert!(matches!(drift(&spec, 0.0, &[0.6, 0.6], 0.0), Err(Error::Domain(_))));
        assert!(matches!(drift(&spec, 0.0, &[1.2, -0.2], 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn jump_update_examples() {
        let spec = ModelSpec::table2();
        let post = jump_update(&spec, 0.0, &[0.5, 0.5], 0.0, 0).unwrap();
        assert_relative_eq!(post[0], 1000.0 / 1900.0, max_relative = 1e-14);
        assert!((post[0] - 0.5263).abs() < 1e-4);

        // posterior after a down tick does not depend on the selling rate
        let pi = [0.3, 0.7];
        let expected = 0.3 * 900.0 / (0.3 * 900.0 + 0.7 * 1000.0);
        let at_zero = jump_update(&spec, 0.0, &pi, 0.0, 1).unwrap();
        assert_relative_eq!(at_zero[0], expected, max_relative = 1e-14);
        for nu in [10.0, 4500.0, 9000.0] {
            assert_eq!(jump_update(&spec, 0.0, &pi, nu, 1).unwrap(), at_zero);
        }

        let flat = ModelSpec {
            jumps: JumpSpec::two_tick(0.001, &[950.0, 950.0], &[900.0, 900.0], 7e-6).unwrap(),
            ..spec
        };
        assert_eq!(jump_update(&flat, 0.0, &pi, 100.0, 0).unwrap(), pi.to_vec());
    }

    #[test]
    fn impossible_observation_is_an_error() {
        let spec = ModelSpec {
            jumps: JumpSpec::two_tick(0.001, &[1000.0, 900.0], &[0.0, 0.0], 0.0).unwrap(),
            ..ModelSpec::table2()
        };
        assert!(matches!(
            jump_update(&spec, 0.0, &[0.5, 0.5], 0.0, 1),
            Err(Error::ImpossibleObservation { mark: 1, .. })
        ));
    }

    #[test]
    fn propagate_examples() {
        let spec = ModelSpec::table2();
        let s = FilterState::new(vec![0.3, 0.7], 0.2).unwrap();
        assert_eq!(propagate(&spec, &s, |_| 0.0, 1e-3, 0.0).unwrap(), s);

        let mid = FilterState::new(vec![0.5, 0.5], 0.0).unwrap();
        let out = propagate(&spec, &mid, |_| 0.0, 1e-3, 1.7).unwrap();
        assert!((out.pi[0] - 0.5).abs() < 1e-14);

        // first-order behaviour from a degenerate belief: pi^1 = 1 - 4 delta + O(delta^2);
        // the exact solution is (1 + e^{-8 delta}) / 2.
        let edge = FilterState::new(vec![1.0, 0.0], 0.0).unwrap();
        for delta in [1e-3, 1e-2] {
            let out = propagate(&spec, &edge, |_| 0.0, 1e-3, delta).unwrap();
            assert!((out.pi[0] - (1.0 - 4.0 * delta)).abs() <= 20.0 * delta * delta);
            assert_relative_eq!(out.pi[0], 0.5 * (1.0 + (-8.0 * delta).exp()), max_relative = 1e-10);
        }
    }

    #[test]
    fn zakai_normalizes_to_initial_without_time() {
        let spec = ModelSpec::table2();
        let s = UnnormalizedState::initial(&spec);
        let out = zakai_step(&spec, &s, |_| 0.0, 1e-3, 0.0, None).unwrap();
        assert_eq!(normalize(&out).unwrap(), vec![0.5, 0.5]);

        let one = single_state();
        let mut z = UnnormalizedState::initial(&one);
        for i in 0..50 {
            z = zakai_step(&one, &z, |_| 3000.0, 1e-3, 0.01, Some(i % 2)).unwrap();
            assert_eq!(normalize(&z).unwrap(), vec![1.0]);
        }
    }

    #[test]
    fn zakai_tracks_ks_on_a_short_log() {
        let spec = ModelSpec::table2();
        let log = EventLog::new(vec![
            Event { t: 0.01, mark: 0 },
            Event { t: 0.013, mark: 1 },
            Event { t: 0.2, mark: 1 },
        ])
        .unwrap();
        let nu = |t: f64| if t < 0.1 { 9000.0 } else { 2000.0 };
        let trace = filter_event_log(&spec, &log, nu, 1e-4, 0.5).unwrap();
        let mut z = UnnormalizedState::initial(&spec);
        let mut t = 0.0;
        for (e, f) in log.events().iter().zip(&trace.events) {
            z = zakai_step(&spec, &z, nu, 1e-4, e.t - t, Some(e.mark)).unwrap();
            t = e.t;
            let p = normalize(&z).unwrap();
            assert!((p[0] - f.posterior[0]).abs() < 1e-7);
        }
    }

    #[test]
    fn event_log_replay() {
        let spec = ModelSpec::table2();
        let empty = filter_event_log(&spec, &EventLog::default(), |_| 0.0, 1e-3, 1.0).unwrap();
        assert!(empty.events.is_empty());
        let direct = propagate(&spec, &FilterState::initial(&spec), |_| 0.0, 1e-3, 1.0).unwrap();
        assert_eq!(empty.terminal, direct);

        let log = EventLog::new(vec![Event { t: 0.25, mark: 0 }]).unwrap();
        let trace = filter_event_log(&spec, &log, |_| 0.0, 1e-3, 1.0).unwrap();
        assert!((trace.events[0].prior[0] - 0.5).abs() < 1e-14);
        assert!((trace.events[0].posterior[0] - 0.5263).abs() < 1e-4);

        let late = EventLog::new(vec![Event { t: 1.5, mark: 0 }]).unwrap();
        assert!(matches!(filter_event_log(&spec, &late, |_| 0.0, 1e-3, 1.0), Err(Error::Input(_))));
    }
}
