//! Market model primitives: the hidden regime chain, the state- and
//! rate-dependent jump measure of the bid price, temporary impact and the
//! terminal liquidation value.
//!
//! Time is measured in days throughout; generator entries, jump intensities
//! and the discount rate are per day. Jump marks are relative price moves
//! `z`, so a jump maps the bid price `S` to `S (1 + z)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const ROW_SUM_TOL: f64 = 1e-12;

/// Continuous piecewise-linear function given by knots, constant outside
/// the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(knots: &[(f64, f64)]) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::InvalidModel("piecewise-linear table needs at least one knot".into()));
        }
        if knots.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::InvalidModel("piecewise-linear table has non-finite knots".into()));
        }
        if knots.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidModel("piecewise-linear knots must be strictly increasing".into()));
        }
        Ok(Self {
            xs: knots.iter().map(|k| k.0).collect(),
            ys: knots.iter().map(|k| k.1).collect(),
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let i = self.xs.partition_point(|&k| k <= x) - 1;
        let w = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.ys[i] + w * (self.ys[i + 1] - self.ys[i])
    }

    pub fn knots(&self) -> Vec<(f64, f64)> {
        self.xs.iter().copied().zip(self.ys.iter().copied()).collect()
    }

    pub fn max_value(&self) -> f64 {
        self.ys.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.ys.iter().copied().fold(f64::INFINITY, f64::min)
    }

    fn is_nondecreasing(&self) -> bool {
        self.ys.windows(2).all(|w| w[1] >= w[0])
    }
}

/// Finite-state Markov chain driving the market regime.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSpec {
    n: usize,
    generator: Vec<f64>,
    initial: Vec<f64>,
}

impl ChainSpec {
    pub fn new(generator: Vec<Vec<f64>>, initial: Vec<f64>) -> Result<Self> {
        let n = generator.len();
        if n == 0 {
            return Err(Error::InvalidModel("chain needs at least one state".into()));
        }
        if generator.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidModel(format!("generator must be {n}x{n}")));
        }
        if initial.len() != n {
            return Err(Error::InvalidModel(format!(
                "initial distribution has {} entries, expected {n}",
                initial.len()
            )));
        }
        for (i, row) in generator.iter().enumerate() {
            for (j, &q) in row.iter().enumerate() {
                if !q.is_finite() {
                    return Err(Error::InvalidModel(format!("generator entry ({i},{j}) is not finite")));
                }
                if i != j && q < 0.0 {
                    return Err(Error::InvalidModel(format!("off-diagonal generator entry ({i},{j}) = {q} < 0")));
                }
            }
            let sum: f64 = row.iter().sum();
            if sum.abs() > ROW_SUM_TOL {
                return Err(Error::InvalidModel(format!("generator row {i} sums to {sum}, expected 0")));
            }
        }
        check_probability(&initial, ROW_SUM_TOL)
            .map_err(|e| Error::InvalidModel(format!("initial distribution: {e}")))?;
        Ok(Self {
            n,
            generator: generator.into_iter().flatten().collect(),
            initial,
        })
    }

    pub fn single_state() -> Self {
        Self { n: 1, generator: vec![0.0], initial: vec![1.0] }
    }

    /// Two-state chain with switching rates `q12` (1 -> 2) and `q21` (2 -> 1).
    pub fn two_state(q12: f64, q21: f64, initial: [f64; 2]) -> Result<Self> {
        Self::new(vec![vec![-q12, q12], vec![q21, -q21]], initial.to_vec())
    }

    pub fn n_states(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn rate(&self, from: usize, to: usize) -> f64 {
        self.generator[from * self.n + to]
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn generator_rows(&self) -> Vec<Vec<f64>> {
        self.generator.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn with_initial(&self, initial: Vec<f64>) -> Result<Self> {
        Self::new(self.generator_rows(), initial)
    }

    /// Stationary distribution, i.e. the probability vector `p` with `p Q = 0`.
    pub fn stationary(&self) -> Result<Vec<f64>> {
        let n = self.n;
        if n == 1 {
            return Ok(vec![1.0]);
        }
        // Q^T p = 0 with the last equation replaced by sum(p) = 1.
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = self.rate(j, i);
            }
        }
        for j in 0..n {
            a[(n - 1, j)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n);
        b[n - 1] = 1.0;
        let p = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::InvalidModel("chain has no unique stationary distribution".into()))?;
        if p.iter().any(|&x| x < -1e-12) {
            return Err(Error::InvalidModel("chain has no unique stationary distribution".into()));
        }
        Ok(p.iter().map(|&x| x.max(0.0)).collect())
    }
}

/// Deterministic intraday scaling of all jump intensities.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum TimeMultiplier {
    #[default]
    Constant,
    Table(PiecewiseLinear),
}

impl TimeMultiplier {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Table(f) => f.eval(t),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Table(f) => f.max_value(),
        }
    }

    pub fn min_value(&self) -> f64 {
        match self {
            Self::Constant => 1.0,
            Self::Table(f) => f.min_value(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant)
    }
}

/// Jump measure of the return process on a finite set of marks.
///
/// The intensity of mark `j` in state `k` at liquidation rate `nu` is
/// `m(t) * base[k][j] * (1 + impact[j] * nu)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    marks: Vec<f64>,
    base: Vec<f64>,
    impact: Vec<f64>,
    n_states: usize,
    time_multiplier: TimeMultiplier,
}

impl JumpSpec {
    pub fn new(
        marks: Vec<f64>,
        base_intensity: Vec<Vec<f64>>,
        impact: Vec<f64>,
        time_multiplier: TimeMultiplier,
    ) -> Result<Self> {
        let n_marks = marks.len();
        let n_states = base_intensity.len();
        if n_states == 0 {
            return Err(Error::InvalidModel("intensity matrix needs one row per state".into()));
        }
        if impact.len() != n_marks {
            return Err(Error::InvalidModel(format!(
                "impact has {} entries, expected one per mark ({n_marks})",
                impact.len()
            )));
        }
        for (j, &z) in marks.iter().enumerate() {
            if !z.is_finite() || z <= -1.0 {
                return Err(Error::InvalidModel(format!("mark {j} = {z} must exceed -1")));
            }
            if marks[..j].contains(&z) {
                return Err(Error::InvalidModel(format!("mark {z} listed twice")));
            }
        }
        for (k, row) in base_intensity.iter().enumerate() {
            if row.len() != n_marks {
                return Err(Error::InvalidModel(format!(
                    "intensity row {k} has {} entries, expected {n_marks}",
                    row.len()
                )));
            }
            if row.iter().any(|&l| !l.is_finite() || l < 0.0) {
                return Err(Error::InvalidModel(format!("intensity row {k} has negative or non-finite rates")));
            }
        }
        for j in 0..n_marks {
            let positive = base_intensity.iter().filter(|row| row[j] > 0.0).count();
            if positive != 0 && positive != n_states {
                return Err(Error::InvalidModel(format!(
                    "mark {j} has zero intensity in some states but not all; jump laws must be equivalent across states"
                )));
            }
        }
        if impact.iter().any(|&a| !a.is_finite() || a < 0.0) {
            return Err(Error::InvalidModel("impact coefficients must be finite and >= 0".into()));
        }
        if let TimeMultiplier::Table(f) = &time_multiplier {
            if f.min_value() <= 0.0 {
                return Err(Error::InvalidModel("time multiplier must be positive".into()));
            }
        }
        Ok(Self {
            marks,
            base: base_intensity.into_iter().flatten().collect(),
            impact,
            n_states,
            time_multiplier,
        })
    }

    /// Two ticks `+theta` (mark 0) and `-theta` (mark 1); permanent impact
    /// `a` acts on the down tick only.
    pub fn two_tick(theta: f64, up: &[f64], down: &[f64], a: f64) -> Result<Self> {
        if up.len() != down.len() {
            return Err(Error::InvalidModel("up and down rate lists differ in length".into()));
        }
        let rows = up.iter().zip(down).map(|(&u, &d)| vec![u, d]).collect();
        Self::new(vec![theta, -theta], rows, vec![0.0, a], TimeMultiplier::Constant)
    }

    pub fn n_marks(&self) -> usize {
        self.marks.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn marks(&self) -> &[f64] {
        &self.marks
    }

    pub fn impact(&self) -> &[f64] {
        &self.impact
    }

    pub fn time_multiplier(&self) -> &TimeMultiplier {
        &self.time_multiplier
    }

    #[inline]
    pub fn base(&self, state: usize, mark: usize) -> f64 {
        self.base[state * self.marks.len() + mark]
    }

    pub fn base_rows(&self) -> Vec<Vec<f64>> {
        self.base.chunks(self.marks.len().max(1)).map(<[f64]>::to_vec).collect()
    }

    /// Marks with positive intensity (in every state, by equivalence).
    pub fn is_active(&self, mark: usize) -> bool {
        self.base(0, mark) > 0.0
    }
}

/// Temporary price impact `f(nu)`: proceeds per share are `S (1 - f(nu))`.
#[derive(Debug, Clone, PartialEq)]
pub enum TemporaryImpact {
    /// `f(nu) = scale * nu^exponent`.
    Power { scale: f64, exponent: f64 },
    /// Monotone table overriding the power form.
    Table(PiecewiseLinear),
}

impl TemporaryImpact {
    pub fn none() -> Self {
        Self::Power { scale: 0.0, exponent: 1.0 }
    }

    #[inline]
    pub fn eval(&self, nu: f64) -> f64 {
        match self {
            Self::Power { scale, exponent } => {
                if *scale == 0.0 || nu <= 0.0 {
                    0.0
                } else {
                    scale * nu.powf(*exponent)
                }
            }
            Self::Table(f) => f.eval(nu),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Self::Power { scale, exponent } => {
                if !scale.is_finite() || *scale < 0.0 {
                    return Err(Error::InvalidModel(format!("temporary impact scale {scale} must be >= 0")));
                }
                if !exponent.is_finite() || *exponent <= 0.0 {
                    return Err(Error::InvalidModel(format!("temporary impact exponent {exponent} must be > 0")));
                }
            }
            Self::Table(f) => {
                if f.eval(0.0).abs() > 1e-15 {
                    return Err(Error::InvalidModel("temporary impact table must satisfy f(0) = 0".into()));
                }
                if !f.is_nondecreasing() {
                    return Err(Error::InvalidModel("temporary impact table must be nondecreasing".into()));
                }
            }
        }
        Ok(())
    }
}

/// Liquidation value per unit price of inventory left at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub enum TerminalValue {
    Zero,
    /// `h(w) = w / (1 + theta w)`; `theta = 0` gives book value.
    Saturating { theta: f64 },
    Table(PiecewiseLinear),
}

impl TerminalValue {
    #[inline]
    pub fn eval(&self, w: f64) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Saturating { theta } => w / (1.0 + theta * w),
            Self::Table(f) => f.eval(w),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }

    fn validate(&self, w_max: f64) -> Result<()> {
        match self {
            Self::Zero => Ok(()),
            Self::Saturating { theta } => {
                if !theta.is_finite() || *theta < 0.0 {
                    return Err(Error::InvalidModel(format!("terminal theta {theta} must be >= 0")));
                }
                Ok(())
            }
            Self::Table(f) => {
                if f.eval(0.0).abs() > 1e-15 {
                    return Err(Error::InvalidModel("terminal table must satisfy h(0) = 0".into()));
                }
                // increasing, concave and below the book value on [0, w_max]
                let knots = f.knots();
                if !f.is_nondecreasing() {
                    return Err(Error::InvalidModel("terminal table must be nondecreasing".into()));
                }
                let slopes: Vec<f64> = knots
                    .windows(2)
                    .map(|w| (w[1].1 - w[0].1) / (w[1].0 - w[0].0))
                    .collect();
                if slopes.windows(2).any(|s| s[1] > s[0] + 1e-12) {
                    return Err(Error::InvalidModel("terminal table must be concave".into()));
                }
                if knots.iter().any(|&(w, h)| w <= w_max && h > w + 1e-12) {
                    return Err(Error::InvalidModel("terminal table must satisfy h(w) <= w".into()));
                }
                Ok(())
            }
        }
    }
}

/// Complete liquidation model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub chain: ChainSpec,
    pub jumps: JumpSpec,
    pub impact: TemporaryImpact,
    pub terminal: TerminalValue,
    /// Discount rate per day.
    pub discount: f64,
    /// Liquidation horizon in days.
    pub horizon: f64,
    pub initial_inventory: f64,
    pub initial_price: f64,
    /// Upper bound on the selling rate, shares per day.
    pub max_rate: f64,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.jumps.n_states() != self.chain.n_states() {
            return Err(Error::InvalidModel(format!(
                "intensity matrix has {} rows but the chain has {} states",
                self.jumps.n_states(),
                self.chain.n_states()
            )));
        }
        let positive = [
            ("horizon", self.horizon),
            ("initial_inventory", self.initial_inventory),
            ("initial_price", self.initial_price),
            ("max_rate", self.max_rate),
        ];
        for (name, v) in positive {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidModel(format!("{name} = {v} must be positive")));
            }
        }
        if !self.discount.is_finite() || self.discount < 0.0 {
            return Err(Error::InvalidModel(format!("discount = {} must be >= 0", self.discount)));
        }
        // Full liquidation must be feasible: selling at max_rate over the
        // horizon has to clear the inventory.
        let needed = self.initial_inventory / self.horizon;
        if self.max_rate < needed * (1.0 - 1e-12) {
            return Err(Error::InvalidModel(format!(
                "max_rate = {} is below w0/T = {needed}; full liquidation is infeasible",
                self.max_rate
            )));
        }
        self.impact.validate()?;
        self.terminal.validate(self.initial_inventory)?;
        Ok(())
    }

    /// Non-fatal modelling concerns.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let f_max = self.impact.eval(self.max_rate);
        if f_max >= 1.0 {
            out.push(format!(
                "temporary impact f(nu_max) = {f_max:.4} >= 1: proceeds turn negative at high selling rates"
            ));
        }
        for k in 0..self.n_states() {
            let d0 = self.mean_return_unchecked(0.0, k, 0.0);
            let d1 = self.mean_return_unchecked(0.0, k, self.max_rate);
            if d1 > d0 {
                out.push(format!("mean return in state {k} increases with the selling rate"));
            }
        }
        out
    }

    pub fn n_states(&self) -> usize {
        self.chain.n_states()
    }

    pub fn n_marks(&self) -> usize {
        self.jumps.n_marks()
    }

    fn check_args(&self, t: f64, state: usize, nu: f64) -> Result<()> {
        if !(0.0..=self.horizon * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        if state >= self.n_states() {
            return Err(Error::Domain(format!("state index {state} out of range")));
        }
        if !(0.0..=self.max_rate * (1.0 + 1e-12)).contains(&nu) {
            return Err(Error::Domain(format!("rate {nu} outside [0, {}]", self.max_rate)));
        }
        Ok(())
    }

    /// Intensity of mark `mark` in state `state` at time `t` under selling rate `nu`.
    pub fn intensity(&self, t: f64, state: usize, nu: f64, mark: usize) -> Result<f64> {
        self.check_args(t, state, nu)?;
        if mark >= self.n_marks() {
            return Err(Error::Domain(format!("mark index {mark} out of range")));
        }
        Ok(self.rate(t, state, nu, mark))
    }

    #[inline]
    pub(crate) fn rate(&self, t: f64, state: usize, nu: f64, mark: usize) -> f64 {
        self.jumps.time_multiplier.eval(t) * self.jumps.base(state, mark) * (1.0 + self.jumps.impact[mark] * nu)
    }

    #[inline]
    pub(crate) fn total_rate(&self, t: f64, state: usize, nu: f64) -> f64 {
        self.total_rate_base(state, nu) * self.jumps.time_multiplier.eval(t)
    }

    /// Total intensity before the time multiplier.
    #[inline]
    pub(crate) fn total_rate_base(&self, state: usize, nu: f64) -> f64 {
        let nm = self.jumps.marks.len();
        let base = &self.jumps.base[state * nm..(state + 1) * nm];
        base.iter().zip(&self.jumps.impact).map(|(b, a)| b * (1.0 + a * nu)).sum()
    }

    /// Expected instantaneous return `sum_j z_j * intensity_j` in a regime.
    pub fn mean_return_rate(&self, t: f64, state: usize, nu: f64) -> Result<f64> {
        self.check_args(t, state, nu)?;
        Ok(self.mean_return_unchecked(t, state, nu))
    }

    pub(crate) fn mean_return_unchecked(&self, t: f64, state: usize, nu: f64) -> f64 {
        (0..self.n_marks())
            .map(|j| self.jumps.marks[j] * self.rate(t, state, nu, j))
            .sum()
    }

    /// Largest total jump intensity over all times, states and admissible rates.
    pub fn max_total_intensity(&self) -> f64 {
        let m = self.jumps.time_multiplier.max_value();
        (0..self.n_states())
            .map(|k| {
                (0..self.n_marks())
                    .map(|j| self.jumps.base(k, j) * (1.0 + self.jumps.impact[j] * self.max_rate))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
            * m
    }

    /// Upper bound `w0 s0 exp(eta T)` on the expected discounted proceeds of
    /// any admissible strategy, where `eta` is the largest excess of the
    /// no-trading mean return over the discount rate (floored at zero).
    pub fn value_upper_bound(&self) -> f64 {
        let tm = &self.jumps.time_multiplier;
        let sup_drift = (0..self.n_states())
            .map(|k| {
                let base = self.mean_return_unchecked(0.0, k, 0.0) / tm.eval(0.0);
                if base >= 0.0 {
                    base * tm.max_value()
                } else {
                    base * tm.min_value()
                }
            })
            .fold(f64::NEG_INFINITY, f64::max);
        let eta = (sup_drift - self.discount).max(0.0);
        self.initial_inventory * self.initial_price * (eta * self.horizon).exp()
    }

    /// Single-regime model whose intensities are the stationary mixture of
    /// the regime intensities, i.e. the model of a trader who ignores
    /// regime switching.
    pub fn stationary_mixture(&self) -> Result<ModelSpec> {
        let p = self.chain.stationary()?;
        let row: Vec<f64> = (0..self.n_marks())
            .map(|j| (0..self.n_states()).map(|k| p[k] * self.jumps.base(k, j)).sum())
            .collect();
        let jumps = JumpSpec::new(
            self.jumps.marks.clone(),
            vec![row],
            self.jumps.impact.clone(),
            self.jumps.time_multiplier.clone(),
        )?;
        let spec = ModelSpec { chain: ChainSpec::single_state(), jumps, ..self.clone() };
        spec.validate()?;
        Ok(spec)
    }

    /// The reference parameter set of the numerical experiments: two regimes,
    /// one-tick moves of 0.1%, impact on the down tick only.
    pub fn table2() -> ModelSpec {
        crate::config::Recipe::from_toml_str(TABLE2_RECIPE)
            .and_then(|r| r.model())
            .expect("bundled table2 recipe is valid")
    }
}

pub(crate) const TABLE2_RECIPE: &str = include_str!("../recipes/table2.cfg");

pub(crate) fn check_probability(p: &[f64], tol: f64) -> std::result::Result<(), String> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err("entries must be finite and nonnegative".into());
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > tol {
        return Err(format!("entries sum to {sum}, expected 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table2_intensities() {
        let spec = ModelSpec::table2();
        // state e1, down tick, no selling
        assert_relative_eq!(spec.intensity(0.0, 0, 0.0, 1).unwrap(), 900.0);
        // state e2, down tick at full speed: 1000 (1 + 7e-6 * 9000)
        assert_relative_eq!(spec.intensity(0.0, 1, 9000.0, 1).unwrap(), 1063.0, max_relative = 1e-14);
        // up ticks carry no impact
        for nu in [0.0, 100.0, 9000.0] {
            assert_eq!(spec.intensity(1.0, 0, nu, 0).unwrap(), 1000.0);
        }
    }

    #[test]
    fn intensity_domain_errors() {
        let spec = ModelSpec::table2();
        assert!(matches!(spec.intensity(0.0, 2, 0.0, 0), Err(Error::Domain(_))));
        assert!(matches!(spec.intensity(0.0, 0, 0.0, 2), Err(Error::Domain(_))));
        assert!(matches!(spec.intensity(0.0, 0, 9001.0, 0), Err(Error::Domain(_))));
        assert!(matches!(spec.intensity(0.0, 0, -1.0, 0), Err(Error::Domain(_))));
        assert!(matches!(spec.intensity(2.5, 0, 0.0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn mean_return_examples() {
        let spec = ModelSpec::table2();
        assert_relative_eq!(spec.mean_return_rate(0.0, 0, 0.0).unwrap(), 0.1, max_relative = 1e-12);
        assert_relative_eq!(spec.mean_return_rate(0.0, 1, 0.0).unwrap(), -0.1, max_relative = 1e-12);
        // theta (c_up - c_down (1 + a nu))
        let nu = 4000.0;
        let expected = 0.001 * (1000.0 - 900.0 * (1.0 + 7e-6 * nu));
        assert_relative_eq!(spec.mean_return_rate(0.0, 0, nu).unwrap(), expected, max_relative = 1e-12);

        let sym = ModelSpec {
            jumps: JumpSpec::two_tick(0.001, &[800.0, 800.0], &[800.0, 800.0], 0.0).unwrap(),
            ..spec
        };
        assert_eq!(sym.mean_return_rate(0.0, 1, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn upper_bound_examples() {
        let spec = ModelSpec::table2();
        let expected = 6000.0 * (0.09995f64 * 2.0).exp();
        assert_relative_eq!(spec.value_upper_bound(), expected, max_relative = 1e-12);
        assert!(spec.value_upper_bound() <= 7327.8 && spec.value_upper_bound() > 7327.6);

        let doubled = ModelSpec { initial_price: 2.0, ..spec.clone() };
        assert_relative_eq!(doubled.value_upper_bound(), 2.0 * spec.value_upper_bound(), max_relative = 1e-14);

        let falling = ModelSpec {
            jumps: JumpSpec::two_tick(0.001, &[900.0, 800.0], &[1000.0, 1000.0], 7e-6).unwrap(),
            ..spec
        };
        assert_eq!(falling.value_upper_bound(), 6000.0);
    }

    #[test]
    fn chain_validation() {
        assert!(ChainSpec::new(vec![vec![-1.0, 1.0], vec![1.0, -0.5]], vec![0.5, 0.5]).is_err());
        assert!(ChainSpec::new(vec![vec![1.0, -1.0], vec![1.0, -1.0]], vec![0.5, 0.5]).is_err());
        assert!(ChainSpec::new(vec![vec![-1.0, 1.0], vec![1.0, -1.0]], vec![0.6, 0.5]).is_err());
        let c = ChainSpec::two_state(4.0, 1.0, [1.0, 0.0]).unwrap();
        let p = c.stationary().unwrap();
        assert_relative_eq!(p[0], 0.2, max_relative = 1e-12);
        assert_relative_eq!(p[1], 0.8, max_relative = 1e-12);
    }

    #[test]
    fn jump_validation() {
        assert!(JumpSpec::two_tick(1.5, &[1.0], &[1.0], 0.0).is_err());
        // mark active in one state only
        assert!(JumpSpec::new(vec![0.01], vec![vec![1.0], vec![0.0]], vec![0.0], TimeMultiplier::Constant).is_err());
        assert!(JumpSpec::new(vec![0.01, 0.01], vec![vec![1.0, 1.0]], vec![0.0, 0.0], TimeMultiplier::Constant).is_err());
        assert!(JumpSpec::new(vec![0.01], vec![vec![1.0]], vec![-1.0], TimeMultiplier::Constant).is_err());
    }

    #[test]
    fn feasibility_and_warnings() {
        let mut spec = ModelSpec::table2();
        spec.max_rate = 2000.0;
        assert!(spec.validate().is_err());
        spec.max_rate = 3000.0;
        assert!(spec.validate().is_ok());
        spec.impact = TemporaryImpact::Power { scale: 0.1, exponent: 0.6 };
        assert!(spec.validate().is_ok());
        assert_eq!(spec.warnings().len(), 1);
    }

    #[test]
    fn stationary_mixture_averages_rates() {
        let mix = ModelSpec::table2().stationary_mixture().unwrap();
        assert_eq!(mix.n_states(), 1);
        assert_relative_eq!(mix.intensity(0.0, 0, 0.0, 0).unwrap(), 950.0, max_relative = 1e-12);
        assert_relative_eq!(mix.intensity(0.0, 0, 0.0, 1).unwrap(), 950.0, max_relative = 1e-12);
        assert_relative_eq!(
            mix.mean_return_rate(0.0, 0, 1000.0).unwrap(),
            -0.001 * 950.0 * 7e-6 * 1000.0,
            max_relative = 1e-9
        );
    }

    #[test]
    fn terminal_forms() {
        let h = TerminalValue::Saturating { theta: 1e-3 };
        assert_relative_eq!(h.eval(1000.0), 500.0);
        assert_eq!(TerminalValue::Zero.eval(10.0), 0.0);
        let table = TerminalValue::Table(PiecewiseLinear::new(&[(0.0, 0.0), (1.0, 2.0)]).unwrap());
        assert!(table.validate(10.0).is_err());
    }
}
