//! EM calibration of the regime chain and the per-regime tick intensities
//! from an event log recorded without own trading.
//!
//! With no selling the observations form a Markov-modulated Poisson process.
//! The E-step is an exact continuous-time forward-backward pass: between
//! events the joint "state and no tick" kernel is `exp(D s)` with
//! `D = Q - diag(lambda_k)`, and the expected occupation times and transition
//! counts of an inter-event gap come from integrals of the form
//! `int_0^tau exp(D (tau - s)) b a exp(D s) ds`. For chains in detailed
//! balance (every two-state chain) `D` is symmetrizable and these integrals
//! are evaluated through its eigenvalues; otherwise through the block matrix
//! exponential of `[[D, b a], [0, D]]`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::events::EventLog;
use crate::model::ChainSpec;

/// How EM is started.
#[derive(Debug, Clone, PartialEq)]
pub enum EmInit {
    /// Rates split by +-10% around the pooled estimate `count_j / horizon`
    /// (state 0 higher), symmetric generator with switching rate 4 per day
    /// and a uniform initial law.
    Moment { n_states: usize, n_marks: usize },
    /// Explicit starting point; `intensity` has one row per state.
    Given { chain: ChainSpec, intensity: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub init: EmInit,
    /// Re-estimate the generator; when false it stays at its initial value.
    pub estimate_generator: bool,
}

impl EmConfig {
    pub fn moment(n_states: usize, n_marks: usize) -> Self {
        Self { max_iters: 500, tol: 1e-9, init: EmInit::Moment { n_states, n_marks }, estimate_generator: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult {
    /// Fitted chain; states are sorted by their mark-0 rate, descending.
    pub chain: ChainSpec,
    /// Fitted base intensities, one row per state.
    pub intensity: Vec<Vec<f64>>,
    /// Log-likelihood of the starting point and after every update.
    pub loglik_trace: Vec<f64>,
    /// Smoothed state probabilities at each event time.
    pub smoothed: Vec<Vec<f64>>,
    /// Filtered regime estimate `sum_k (k + 1) pi^k` just after each event.
    pub y_hat: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
    /// Number of parameter updates performed.
    pub iterations: usize,
}

impl EmResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }
}

#[derive(Debug, Clone)]
struct Params {
    q: DMatrix<f64>,
    initial: Vec<f64>,
    rates: Vec<Vec<f64>>,
}

impl Params {
    fn n(&self) -> usize {
        self.initial.len()
    }

    fn totals(&self) -> Vec<f64> {
        self.rates.iter().map(|r| r.iter().sum()).collect()
    }

    fn kernel(&self) -> DMatrix<f64> {
        let mut d = self.q.clone();
        for (k, l) in self.totals().into_iter().enumerate() {
            d[(k, k)] -= l;
        }
        d
    }
}

/// Expected sufficient statistics and by-products of one E-step.
struct EStep {
    loglik: f64,
    occupation: Vec<f64>,
    transitions: DMatrix<f64>,
    counts: Vec<Vec<f64>>,
    smoothed: Vec<Vec<f64>>,
    filtered: Vec<Vec<f64>>,
}

/// `int_0^tau exp(x (tau - s) + y s) ds`, scaled by `exp(-m tau)`.
fn phi(x: f64, y: f64, tau: f64, m: f64) -> f64 {
    let (hi, lo) = if x >= y { (x, y) } else { (y, x) };
    let z = (lo - hi) * tau;
    let g = if z == 0.0 { 1.0 } else { z.exp_m1() / z };
    ((hi - m) * tau).exp() * tau * g
}

/// Propagators for the gaps between events, in one of two representations.
enum Kernel {
    /// `D = U diag(mu) U^{-1}`.
    Spectral { u: DMatrix<f64>, u_inv: DMatrix<f64>, mu: Vec<f64>, shift: f64 },
    Dense { d: DMatrix<f64>, shift: f64 },
}

impl Kernel {
    fn new(p: &Params) -> Self {
        let d = p.kernel();
        let n = p.n();
        let shift = (0..n).map(|k| d[(k, k)]).fold(f64::NEG_INFINITY, f64::max);
        if let Some(w) = balance_weights(&p.q) {
            let sq: Vec<f64> = w.iter().map(|x| x.sqrt()).collect();
            let s = DMatrix::from_fn(n, n, |k, l| {
                if k == l {
                    d[(k, k)]
                } else {
                    // symmetric by detailed balance; average away rounding
                    0.5 * (sq[k] / sq[l] * d[(k, l)] + sq[l] / sq[k] * d[(l, k)])
                }
            });
            let eig = SymmetricEigen::new(s);
            let u = DMatrix::from_fn(n, n, |k, l| eig.eigenvectors[(k, l)] / sq[k]);
            let u_inv = DMatrix::from_fn(n, n, |k, l| eig.eigenvectors[(l, k)] * sq[l]);
            let shift = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            return Self::Spectral { u, u_inv, mu: eig.eigenvalues.iter().copied().collect(), shift };
        }
        Self::Dense { d, shift }
    }

    fn shift(&self) -> f64 {
        match self {
            Self::Spectral { shift, .. } | Self::Dense { shift, .. } => *shift,
        }
    }

    /// `exp((D - shift) tau)`.
    fn propagator(&self, tau: f64) -> DMatrix<f64> {
        match self {
            Self::Spectral { u, u_inv, mu, shift } => {
                let e = DVector::from_iterator(mu.len(), mu.iter().map(|m| ((m - shift) * tau).exp()));
                u * DMatrix::from_diagonal(&e) * u_inv
            }
            Self::Dense { d, shift } => {
                let n = d.nrows();
                ((d - DMatrix::identity(n, n) * *shift) * tau).exp()
            }
        }
    }

    /// `int_0^tau exp(D (tau - s)) b a exp(D s) ds`, scaled by `exp(-shift tau)`.
    fn gap_integral(&self, a: &DVector<f64>, b: &DVector<f64>, tau: f64) -> DMatrix<f64> {
        match self {
            Self::Spectral { u, u_inv, mu, shift } => {
                let ah = u.transpose() * a;
                let bh = u_inv * b;
                let n = mu.len();
                let inner = DMatrix::from_fn(n, n, |l, k| bh[l] * ah[k] * phi(mu[l], mu[k], tau, *shift));
                u * inner * u_inv
            }
            Self::Dense { d, shift } => {
                let n = d.nrows();
                let mut block = DMatrix::zeros(2 * n, 2 * n);
                let dd = d - DMatrix::identity(n, n) * *shift;
                block.view_mut((0, 0), (n, n)).copy_from(&dd);
                block.view_mut((n, n), (n, n)).copy_from(&dd);
                block.view_mut((0, n), (n, n)).copy_from(&(b * a.transpose()));
                (block * tau).exp().view((0, n), (n, n)).into_owned()
            }
        }
    }
}

/// Positive weights `w` with `w_k q_kl = w_l q_lk`, if the chain admits them.
fn balance_weights(q: &DMatrix<f64>) -> Option<Vec<f64>> {
    let n = q.nrows();
    let mut w = vec![f64::NAN; n];
    // propagate along a spanning forest of the positive-rate graph
    for root in 0..n {
        if !w[root].is_nan() {
            continue;
        }
        w[root] = 1.0;
        let mut stack = vec![root];
        while let Some(k) = stack.pop() {
            for l in 0..n {
                if l == k || (q[(k, l)] == 0.0 && q[(l, k)] == 0.0) {
                    continue;
                }
                if q[(k, l)] == 0.0 || q[(l, k)] == 0.0 {
                    return None;
                }
                let wl = w[k] * q[(k, l)] / q[(l, k)];
                if w[l].is_nan() {
                    w[l] = wl;
                    stack.push(l);
                } else if (w[l] - wl).abs() > 1e-10 * w[l].max(wl) {
                    return None;
                }
            }
        }
    }
    Some(w)
}

fn e_step(log: &EventLog, horizon: f64, p: &Params) -> Result<EStep> {
    let n = p.n();
    let kernel = Kernel::new(p);
    let shift = kernel.shift();
    let events = log.events();
    let gaps: Vec<f64> = events
        .iter()
        .scan(0.0, |prev, e| {
            let tau = e.t - *prev;
            *prev = e.t;
            Some(tau)
        })
        .chain(std::iter::once(horizon - log.last_time().unwrap_or(0.0)))
        .collect();
    let props: Vec<DMatrix<f64>> = gaps.iter().map(|&tau| kernel.propagator(tau)).collect();
    let mark_rates = |j: usize| DVector::from_iterator(n, p.rates.iter().map(|r| r[j]));

    // forward: alpha[i] is the normalized law just after event i (alpha[0] at t = 0)
    let mut alpha = Vec::with_capacity(events.len() + 1);
    alpha.push(DVector::from_column_slice(&p.initial));
    let mut loglik = 0.0;
    for (i, e) in events.iter().enumerate() {
        let prior = props[i].transpose() * &alpha[i];
        let next = prior.component_mul(&mark_rates(e.mark));
        let c = next.sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Estimation(format!(
                "event {i} (t = {}, mark {}) has zero likelihood under the current parameters",
                e.t, e.mark
            )));
        }
        loglik += c.ln() + shift * gaps[i];
        alpha.push(next / c);
    }
    let tail = props[events.len()].transpose() * &alpha[events.len()];
    loglik += tail.sum().ln() + shift * gaps[events.len()];

    // backward, accumulating expectations gap by gap
    let mut occupation = vec![0.0; n];
    let mut transitions = DMatrix::zeros(n, n);
    let mut counts = vec![vec![0.0; p.rates[0].len()]; n];
    let mut smoothed = vec![Vec::new(); events.len()];
    let mut beta = DVector::from_element(n, 1.0);
    for i in (0..=events.len()).rev() {
        // right-hand vector of gap i: beta at the gap's end including the event factor
        let b = match events.get(i) {
            Some(e) => {
                let b = beta.component_mul(&mark_rates(e.mark));
                let post = alpha[i + 1].component_mul(&beta);
                let s = post.sum();
                smoothed[i] = post.iter().map(|x| x / s).collect();
                for (k, row) in counts.iter_mut().enumerate() {
                    row[e.mark] += smoothed[i][k];
                }
                b
            }
            None => beta.clone(),
        };
        let a = &alpha[i];
        let norm = a.dot(&(&props[i] * &b));
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Estimation(format!("degenerate likelihood in gap {i}")));
        }
        let g = kernel.gap_integral(a, &b, gaps[i]);
        for k in 0..n {
            occupation[k] += g[(k, k)] / norm;
            for l in 0..n {
                if l != k {
                    transitions[(k, l)] += p.q[(k, l)] * g[(l, k)] / norm;
                }
            }
        }
        let next = &props[i] * &b;
        beta = &next / next.max();
    }

    let filtered = alpha[1..].iter().map(|a| a.iter().copied().collect()).collect();
    Ok(EStep { loglik, occupation, transitions, counts, smoothed, filtered })
}

fn m_step(p: &Params, s: &EStep, horizon: f64, estimate_generator: bool, warnings: &mut Vec<String>) -> Params {
    let n = p.n();
    let mut next = p.clone();
    for k in 0..n {
        if s.occupation[k] <= 1e-9 * horizon {
            let msg = format!("state {k} has negligible expected occupation; its rates are held at their initial values");
            if !warnings.contains(&msg) {
                warnings.push(msg);
            }
            continue;
        }
        for (r, c) in next.rates[k].iter_mut().zip(&s.counts[k]) {
            *r = c / s.occupation[k];
        }
        if estimate_generator {
            let mut out = 0.0;
            for l in 0..n {
                if l != k {
                    next.q[(k, l)] = s.transitions[(k, l)] / s.occupation[k];
                    out += next.q[(k, l)];
                }
            }
            next.q[(k, k)] = -out;
        }
    }
    next
}

fn initial_params(log: &EventLog, horizon: f64, init: &EmInit) -> Result<Params> {
    match init {
        EmInit::Moment { n_states, n_marks } => {
            let (n, m) = (*n_states, *n_marks);
            if n == 0 || m == 0 {
                return Err(Error::Estimation("need at least one state and one mark".into()));
            }
            let pooled: Vec<f64> = log.counts(m).into_iter().map(|c| c as f64 / horizon).collect();
            let rates = (0..n)
                .map(|k| {
                    let f = if n == 1 { 1.0 } else { 1.1 - 0.2 * k as f64 / (n - 1) as f64 };
                    pooled.iter().map(|r| r * f).collect()
                })
                .collect();
            let q = if n == 1 {
                DMatrix::zeros(1, 1)
            } else {
                let off = 4.0 / (n - 1) as f64;
                DMatrix::from_fn(n, n, |k, l| if k == l { -4.0 } else { off })
            };
            Ok(Params { q, initial: vec![1.0 / n as f64; n], rates })
        }
        EmInit::Given { chain, intensity } => {
            let n = chain.n_states();
            if intensity.len() != n || intensity.iter().any(|r| r.is_empty() || r.len() != intensity[0].len()) {
                return Err(Error::Estimation(format!("initial intensity must have {n} equal-length rows")));
            }
            if intensity.iter().flatten().any(|r| !(r.is_finite() && *r >= 0.0)) {
                return Err(Error::Estimation("initial intensities must be finite and >= 0".into()));
            }
            Ok(Params {
                q: DMatrix::from_fn(n, n, |k, l| chain.rate(k, l)),
                initial: chain.initial().to_vec(),
                rates: intensity.clone(),
            })
        }
    }
}

/// Reorders states by mark-0 intensity, descending.
fn sort_states(p: &Params) -> Vec<usize> {
    let mut order: Vec<usize> = (0..p.n()).collect();
    order.sort_by(|&a, &b| p.rates[b][0].total_cmp(&p.rates[a][0]));
    order
}

fn y_hat_from(filtered: &[Vec<f64>], log: &EventLog, order: &[usize]) -> Vec<(f64, f64)> {
    log.events()
        .iter()
        .zip(filtered)
        .map(|(e, pi)| (e.t, order.iter().enumerate().map(|(rank, &k)| (rank + 1) as f64 * pi[k]).sum()))
        .collect()
}

/// Fits chain and intensities to `log` observed on `[0, horizon]`.
pub fn em_fit(log: &EventLog, horizon: f64, config: &EmConfig) -> Result<EmResult> {
    if log.is_empty() {
        return Err(Error::Estimation("event log is empty".into()));
    }
    if config.max_iters == 0 || !(config.tol > 0.0) {
        return Err(Error::Estimation("max_iters must be >= 1 and tol > 0".into()));
    }
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::Estimation(format!("horizon {horizon} must be positive")));
    }
    let mut params = initial_params(log, horizon, &config.init)?;
    log.check_against(params.rates[0].len(), horizon)?;

    let mut warnings = Vec::new();
    let mut stats = e_step(log, horizon, &params)?;
    let mut trace = vec![stats.loglik];
    let mut iterations = 0;
    while iterations < config.max_iters {
        params = m_step(&params, &stats, horizon, config.estimate_generator, &mut warnings);
        stats = e_step(log, horizon, &params)?;
        iterations += 1;
        let (prev, cur) = (trace[trace.len() - 1], stats.loglik);
        trace.push(cur);
        if ((cur - prev) / cur.abs().max(1.0)).abs() < config.tol {
            break;
        }
    }

    let order = sort_states(&params);
    let generator = order.iter().map(|&k| order.iter().map(|&l| params.q[(k, l)]).collect()).collect();
    let initial = order.iter().map(|&k| params.initial[k]).collect();
    let chain = ChainSpec::new(generator, initial).map_err(|e| Error::Estimation(format!("fitted chain: {e}")))?;
    Ok(EmResult {
        chain,
        intensity: order.iter().map(|&k| params.rates[k].clone()).collect(),
        loglik_trace: trace,
        smoothed: stats.smoothed.iter().map(|s| order.iter().map(|&k| s[k]).collect()).collect(),
        y_hat: y_hat_from(&stats.filtered, log, &order),
        warnings,
        iterations,
    })
}

/// Filtered regime estimate at each event of `log` under the fitted
/// parameters, `Y_hat = sum_k (k + 1) pi^k`, so values lie in `[1, K]`.
pub fn y_hat_path(result: &EmResult, log: &EventLog) -> Result<Vec<(f64, f64)>> {
    let n = result.chain.n_states();
    let params = Params {
        q: DMatrix::from_fn(n, n, |k, l| result.chain.rate(k, l)),
        initial: result.chain.initial().to_vec(),
        rates: result.intensity.clone(),
    };
    log.check_against(params.rates[0].len(), f64::INFINITY)?;
    let horizon = log.last_time().unwrap_or(0.0);
    let stats = e_step(log, horizon, &params)?;
    let order: Vec<usize> = (0..n).collect();
    Ok(y_hat_from(&stats.filtered, log, &order))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn log_of(times_marks: &[(f64, usize)]) -> EventLog {
        EventLog::new(times_marks.iter().map(|&(t, mark)| Event { t, mark }).collect()).unwrap()
    }

    #[test]
    fn phi_matches_quadrature() {
        for (x, y) in [(-3.0, -1.0), (-2.0, -2.0), (-5.0, -5.0 + 1e-12)] {
            let tau = 0.7;
            let n = 20000;
            let h = tau / n as f64;
            let quad: f64 = (0..n)
                .map(|i| {
                    let s = (i as f64 + 0.5) * h;
                    (x * (tau - s) + y * s).exp() * h
                })
                .sum();
            assert!((phi(x, y, tau, 0.0) - quad).abs() < 1e-8, "{x} {y}");
        }
    }

    #[test]
    fn spectral_and_dense_gap_integrals_agree() {
        let p = Params {
            q: DMatrix::from_row_slice(2, 2, &[-4.0, 4.0, 2.0, -2.0]),
            initial: vec![0.5, 0.5],
            rates: vec![vec![3.0, 1.0], vec![0.5, 2.0]],
        };
        let spectral = Kernel::new(&p);
        assert!(matches!(spectral, Kernel::Spectral { .. }));
        let d = p.kernel();
        let shift = (0..2).map(|k| d[(k, k)]).fold(f64::NEG_INFINITY, f64::max);
        let dense = Kernel::Dense { d, shift };
        let a = DVector::from_vec(vec![0.3, 0.7]);
        let b = DVector::from_vec(vec![1.5, 0.2]);
        for tau in [0.01, 0.4, 3.0] {
            let scale = ((spectral.shift() - dense.shift()) * tau).exp();
            let g1 = spectral.gap_integral(&a, &b, tau) * scale;
            let g2 = dense.gap_integral(&a, &b, tau);
            assert!((g1 - &g2).abs().max() < 1e-12 * g2.abs().max(), "tau = {tau}");
            let e1 = spectral.propagator(tau) * scale;
            assert!((e1 - dense.propagator(tau)).abs().max() < 1e-13);
        }
    }

    #[test]
    fn unbalanced_chain_falls_back() {
        let q = DMatrix::from_row_slice(3, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0, 1.0, 0.0, -1.0]);
        assert!(balance_weights(&q).is_none());
        let q = DMatrix::from_row_slice(2, 2, &[-1.0, 1.0, 3.0, -3.0]);
        let w = balance_weights(&q).unwrap();
        assert!((w[0] * 1.0 - w[1] * 3.0).abs() < 1e-14);
    }

    #[test]
    fn single_state_is_the_poisson_mle() {
        let log = log_of(&[(0.1, 0), (0.4, 1), (0.5, 0), (1.9, 0)]);
        let cfg = EmConfig { max_iters: 1, ..EmConfig::moment(1, 2) };
        let fit = em_fit(&log, 2.0, &cfg).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!((fit.intensity[0][0] - 1.5).abs() < 1e-12);
        assert!((fit.intensity[0][1] - 0.5).abs() < 1e-12);
        assert!(fit.y_hat.iter().all(|&(_, y)| y == 1.0));
        // Poisson log-likelihood at the MLE
        let expected = 3.0 * 1.5f64.ln() + 0.5f64.ln() - 4.0;
        assert!((fit.loglik() - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_log_is_an_error() {
        let log = EventLog::new(vec![]).unwrap();
        assert!(matches!(em_fit(&log, 1.0, &EmConfig::moment(2, 2)), Err(Error::Estimation(_))));
    }

    #[test]
    fn likelihood_matches_dense_evaluation() {
        // two events, explicit product of matrix exponentials and rate factors
        let log = log_of(&[(0.3, 0), (0.5, 1)]);
        let chain = ChainSpec::two_state(1.0, 2.0, [0.6, 0.4]).unwrap();
        let rates = vec![vec![2.0, 1.0], vec![0.5, 3.0]];
        let p = Params { q: DMatrix::from_fn(2, 2, |k, l| chain.rate(k, l)), initial: vec![0.6, 0.4], rates };
        let d = p.kernel();
        let l0 = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        let l1 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]));
        let pi0 = DVector::from_vec(vec![0.6, 0.4]).transpose();
        let total = pi0 * (&d * 0.3).exp() * l0 * (&d * 0.2).exp() * l1 * (&d * 0.5).exp() * DVector::from_element(2, 1.0);
        let s = e_step(&log, 1.0, &p).unwrap();
        assert!((s.loglik - total[(0, 0)].ln()).abs() < 1e-12);
        // expected occupations add up to the horizon, counts to the events
        assert!((s.occupation.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let c: f64 = s.counts.iter().flatten().sum();
        assert!((c - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_state_is_held_with_warning() {
        // state 1 cannot be entered and starts with probability zero
        let chain = ChainSpec::new(vec![vec![0.0, 0.0], vec![1.0, -1.0]], vec![1.0, 0.0]).unwrap();
        let log = log_of(&[(0.2, 0), (0.7, 0)]);
        let cfg = EmConfig {
            max_iters: 3,
            tol: 1e-12,
            init: EmInit::Given { chain, intensity: vec![vec![1.0], vec![5.0]] },
            estimate_generator: true,
        };
        let fit = em_fit(&log, 1.0, &cfg).unwrap();
        assert_eq!(fit.warnings.len(), 1);
        assert!(fit.intensity.iter().any(|r| r[0] == 5.0));
        assert!(fit.intensity.iter().any(|r| (r[0] - 2.0).abs() < 1e-12));
    }
}
