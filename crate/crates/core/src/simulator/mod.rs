//! Monte Carlo simulation of the controlled market: hidden regime, tick
//! price, inventory and the trader's filter, driven by a feedback policy.
//!
//! Price ticks are generated by thinning against a constant bound on the
//! total intensity. The selling rate is held constant between consecutive
//! events and knots of an absolute time grid of spacing `dt_target`, so the
//! proceeds integral is evaluated in closed form per segment and the filter
//! advances by one RK4 step per segment.

mod policy;

pub use policy::{Axis, Policy, RateTable};

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::events::{Event, EventLog};
use crate::filter::{drift_with_rates, jump_update_in_place, renormalize, Rk4};
use crate::model::ModelSpec;
use crate::rng::{categorical, exponential, PathSeed, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// Longest interval over which the selling rate is held fixed.
    pub dt_target: f64,
    /// Keep the event list and rate segments in the returned record.
    pub record: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { dt_target: 1e-3, record: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    PriceJump { mark: usize },
    ChainSwitch { to: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEvent {
    pub t: f64,
    pub kind: EventKind,
    pub price_before: f64,
    pub price_after: f64,
    pub pi_before: Vec<f64>,
    pub pi_after: Vec<f64>,
    pub inventory: f64,
    /// Selling rate in force just before the event.
    pub nu: f64,
}

/// Interval `[t0, t1)` sold at constant rate `nu`; `inventory` is the
/// holding at `t1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateSegment {
    pub t0: f64,
    pub t1: f64,
    pub nu: f64,
    pub inventory: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub initial_regime: usize,
    /// Empty unless recording was requested.
    pub events: Vec<PathEvent>,
    pub segments: Vec<RateSegment>,
    /// Discounted proceeds from selling up to `tau`.
    pub revenue: f64,
    /// First time the inventory is exhausted, or the horizon.
    pub tau: f64,
    pub terminal_payment: f64,
    /// Accepted price ticks.
    pub n_jumps: usize,
    pub n_switches: usize,
    pub final_price: f64,
    pub final_inventory: f64,
    pub final_pi: Vec<f64>,
}

impl PathRecord {
    pub fn total(&self) -> f64 {
        self.revenue + self.terminal_payment
    }
}

/// Per-path line of a Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathSummary {
    /// Path index; together with the master seed it fixes the path's streams.
    pub seed: u64,
    pub revenue: f64,
    pub tau: f64,
    pub n_events: usize,
    pub terminal_payment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub mean: f64,
    pub std_error: f64,
    pub paths: Vec<PathSummary>,
}

/// Per-path line of a paired comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedPath {
    pub seed: u64,
    pub value_a: f64,
    pub value_b: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Mean of `value_a - value_b` over paired paths.
    pub gain: f64,
    /// 95% normal confidence half-width of `gain`.
    pub half_width: f64,
    pub mean_a: f64,
    pub mean_b: f64,
    pub std_error_a: f64,
    pub std_error_b: f64,
    pub paths: Vec<PairedPath>,
}

/// Constant bound on the total tick intensity used for thinning.
fn thinning_bound(spec: &ModelSpec) -> f64 {
    spec.max_total_intensity()
}

#[inline]
fn discount_integral(rho: f64, t0: f64, h: f64) -> f64 {
    if rho == 0.0 {
        h
    } else {
        (-rho * t0).exp() * (-(-rho * h).exp_m1()) / rho
    }
}

fn check_options(opts: &SimOptions) -> Result<()> {
    if !(opts.dt_target > 0.0) || !opts.dt_target.is_finite() {
        return Err(Error::Input(format!("dt_target = {} must be positive", opts.dt_target)));
    }
    Ok(())
}

/// Simulates one path of the controlled model.
pub fn simulate_path(spec: &ModelSpec, policy: &Policy, seed: PathSeed, opts: &SimOptions) -> Result<PathRecord> {
    spec.validate()?;
    policy.check(spec.n_states())?;
    check_options(opts)?;
    run_path(spec, policy, thinning_bound(spec), seed, opts)
}

fn run_path(spec: &ModelSpec, policy: &Policy, bound: f64, seed: PathSeed, opts: &SimOptions) -> Result<PathRecord> {
    let mut chain_rng = seed.rng(Stream::Chain);
    let mut jump_rng = seed.rng(Stream::Jumps);
    let n = spec.n_states();
    let n_marks = spec.n_marks();
    let horizon = spec.horizon;
    let dt = opts.dt_target;

    let initial_regime = categorical(&mut chain_rng, spec.chain.initial());
    let mut y = initial_regime;
    let mut next_switch = exponential(&mut chain_rng, -spec.chain.rate(y, y));
    let mut next_jump = exponential(&mut jump_rng, bound);

    let mut t = 0.0;
    let mut s = spec.initial_price;
    let mut w = spec.initial_inventory;
    let mut pi = spec.chain.initial().to_vec();
    let mut rk = Rk4::new(n);
    let mut intens = vec![0.0; n_marks];
    let mut base_rates = vec![0.0; n];
    let mut rates = vec![0.0; n];
    let mut knot: u64 = 1;
    let mut revenue = 0.0;
    let mut n_jumps = 0;
    let mut n_switches = 0;
    let mut events = Vec::new();
    let mut segments = Vec::new();

    while w > 0.0 && t < horizon {
        let nu = policy.rate(t, w, &pi, spec.max_rate);
        let knot_t = (knot as f64 * dt).min(horizon);
        let mut end = knot_t.min(next_switch).min(next_jump);
        let liquidated = nu > 0.0 && t + w / nu <= end;
        if liquidated {
            end = t + w / nu;
        }
        let h = end - t;
        if h > 0.0 {
            if nu > 0.0 {
                let proceeds = nu * (1.0 - spec.impact.eval(nu));
                revenue += proceeds * s * discount_integral(spec.discount, t, h);
            }
            if n > 1 {
                for (k, r) in base_rates.iter_mut().enumerate() {
                    *r = spec.total_rate_base(k, nu);
                }
                let tm = spec.jumps.time_multiplier();
                let constant = tm.is_constant();
                rk.step(t, h, &mut pi, |u, p, out| {
                    if constant {
                        drift_with_rates(&spec.chain, &base_rates, p, out);
                    } else {
                        let m = tm.eval(u);
                        for (r, b) in rates.iter_mut().zip(&base_rates) {
                            *r = m * b;
                        }
                        drift_with_rates(&spec.chain, &rates, p, out);
                    }
                });
                renormalize(&mut pi);
            }
        }
        w = if liquidated { 0.0 } else { (w - nu * h).max(0.0) };
        if opts.record {
            segments.push(RateSegment { t0: t, t1: end, nu, inventory: w });
        }
        t = end;
        if liquidated {
            break;
        }

        if end == next_jump {
            let mut total = 0.0;
            for (j, x) in intens.iter_mut().enumerate() {
                *x = spec.rate(t, y, nu, j);
                total += *x;
            }
            if total > bound * (1.0 + 1e-12) {
                return Err(Error::Invariant(format!(
                    "tick intensity {total} exceeds thinning bound {bound} at t = {t}"
                )));
            }
            let mut u = jump_rng.random::<f64>() * bound;
            if u < total {
                let mut mark = n_marks - 1;
                for (j, &x) in intens.iter().enumerate() {
                    if u < x {
                        mark = j;
                        break;
                    }
                    u -= x;
                }
                let price_before = s;
                let pi_before = if opts.record { pi.clone() } else { Vec::new() };
                s *= 1.0 + spec.jumps.marks()[mark];
                if n > 1 {
                    jump_update_in_place(spec, t, &mut pi, nu, mark)?;
                }
                n_jumps += 1;
                if opts.record {
                    events.push(PathEvent {
                        t,
                        kind: EventKind::PriceJump { mark },
                        price_before,
                        price_after: s,
                        pi_before,
                        pi_after: pi.clone(),
                        inventory: w,
                        nu,
                    });
                }
            }
            next_jump = t + exponential(&mut jump_rng, bound);
        } else if end == next_switch {
            let weights: Vec<f64> = (0..n).map(|k| if k == y { 0.0 } else { spec.chain.rate(y, k) }).collect();
            y = categorical(&mut chain_rng, &weights);
            n_switches += 1;
            next_switch = t + exponential(&mut chain_rng, -spec.chain.rate(y, y));
            if opts.record {
                events.push(PathEvent {
                    t,
                    kind: EventKind::ChainSwitch { to: y },
                    price_before: s,
                    price_after: s,
                    pi_before: pi.clone(),
                    pi_after: pi.clone(),
                    inventory: w,
                    nu,
                });
            }
        } else if end == knot_t {
            knot += 1;
        }
    }

    let tau = t.min(horizon);
    let terminal_payment = (-spec.discount * tau).exp() * s * spec.terminal.eval(w);
    Ok(PathRecord {
        initial_regime,
        events,
        segments,
        revenue,
        tau,
        terminal_payment,
        n_jumps,
        n_switches,
        final_price: s,
        final_inventory: w,
        final_pi: pi,
    })
}

fn map_paths<T, F>(n_paths: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n_paths).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n_paths).map(f).collect()
    }
}

fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    if n < 2.0 {
        return (mean, 0.0);
    }
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summary(index: u64, r: &PathRecord) -> PathSummary {
    PathSummary {
        seed: index,
        revenue: r.revenue,
        tau: r.tau,
        n_events: r.n_jumps,
        terminal_payment: r.terminal_payment,
    }
}

/// Sample mean and standard error of discounted proceeds plus terminal
/// payment over `n_paths` paths with streams derived from `seed`.
///
/// Paths may run on any number of threads; sums are taken in path order so
/// the result does not depend on the thread count.
pub fn mc_evaluate(spec: &ModelSpec, policy: &Policy, n_paths: u64, seed: u64, opts: &SimOptions) -> Result<McSummary> {
    if n_paths == 0 {
        return Err(Error::Input("n_paths must be at least 1".into()));
    }
    spec.validate()?;
    policy.check(spec.n_states())?;
    check_options(opts)?;
    let bound = thinning_bound(spec);
    let opts = SimOptions { record: false, ..*opts };
    let paths = map_paths(n_paths, |i| {
        run_path(spec, policy, bound, PathSeed::new(seed, i), &opts).map(|r| summary(i, &r))
    })?;
    let (mean, std_error) = mean_and_se(paths.iter().map(|p| p.revenue + p.terminal_payment));
    Ok(McSummary { mean, std_error, paths })
}

/// Paired comparison of two policies on common random numbers: path `i`
/// of both runs uses the same chain and tick streams.
pub fn compare_policies(
    spec: &ModelSpec,
    a: &Policy,
    b: &Policy,
    n_paths: u64,
    seed: u64,
    opts: &SimOptions,
) -> Result<Comparison> {
    if n_paths == 0 {
        return Err(Error::Input("n_paths must be at least 1".into()));
    }
    spec.validate()?;
    a.check(spec.n_states())?;
    b.check(spec.n_states())?;
    check_options(opts)?;
    let bound = thinning_bound(spec);
    let opts = SimOptions { record: false, ..*opts };
    let paths = map_paths(n_paths, |i| {
        let ps = PathSeed::new(seed, i);
        let va = run_path(spec, a, bound, ps, &opts)?.total();
        let vb = if a == b { va } else { run_path(spec, b, bound, ps, &opts)?.total() };
        Ok(PairedPath { seed: i, value_a: va, value_b: vb, gain: va - vb })
    })?;
    let (gain, se) = mean_and_se(paths.iter().map(|p| p.gain));
    let (mean_a, std_error_a) = mean_and_se(paths.iter().map(|p| p.value_a));
    let (mean_b, std_error_b) = mean_and_se(paths.iter().map(|p| p.value_b));
    Ok(Comparison { gain, half_width: 1.96 * se, mean_a, mean_b, std_error_a, std_error_b, paths })
}

/// Regime trajectory: the initial state and `(time, new state)` switches.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimePath {
    pub initial: usize,
    pub switches: Vec<(f64, usize)>,
}

impl RegimePath {
    pub fn state_at(&self, t: f64) -> usize {
        let i = self.switches.partition_point(|s| s.0 <= t);
        if i == 0 {
            self.initial
        } else {
            self.switches[i - 1].1
        }
    }
}

/// Tick data of the uncontrolled model (`nu = 0`) over `[0, horizon]`,
/// together with the hidden regime path that generated it.
pub fn simulate_observations(spec: &ModelSpec, horizon: f64, seed: PathSeed) -> Result<(EventLog, RegimePath)> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Input(format!("horizon {horizon} must be positive")));
    }
    let n = spec.n_states();
    let m = spec.jumps.time_multiplier().max_value();
    let bound = (0..n).map(|k| spec.total_rate_base(k, 0.0)).fold(0.0, f64::max) * m;
    let mut chain_rng = seed.rng(Stream::Chain);
    let mut jump_rng = seed.rng(Stream::Jumps);
    let initial = categorical(&mut chain_rng, spec.chain.initial());
    let mut y = initial;
    let mut switches = Vec::new();
    let mut events = Vec::new();
    let mut next_switch = exponential(&mut chain_rng, -spec.chain.rate(y, y));
    let mut t = exponential(&mut jump_rng, bound);
    while t <= horizon {
        while next_switch <= t {
            let weights: Vec<f64> = (0..n).map(|k| if k == y { 0.0 } else { spec.chain.rate(y, k) }).collect();
            y = categorical(&mut chain_rng, &weights);
            switches.push((next_switch, y));
            next_switch += exponential(&mut chain_rng, -spec.chain.rate(y, y));
        }
        let mut u = jump_rng.random::<f64>() * bound;
        for j in 0..spec.n_marks() {
            let x = spec.rate(t, y, 0.0, j);
            if u < x {
                events.push(Event { t, mark: j });
                break;
            }
            u -= x;
        }
        t += exponential(&mut jump_rng, bound);
    }
    while next_switch <= horizon {
        let weights: Vec<f64> = (0..n).map(|k| if k == y { 0.0 } else { spec.chain.rate(y, k) }).collect();
        y = categorical(&mut chain_rng, &weights);
        switches.push((next_switch, y));
        next_switch += exponential(&mut chain_rng, -spec.chain.rate(y, y));
    }
    Ok((EventLog::new(events)?, RegimePath { initial, switches }))
}
