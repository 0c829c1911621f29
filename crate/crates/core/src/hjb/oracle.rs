//! Closed-form value of the single-regime problem without temporary impact,
//! discounting or terminal value, when the mean return is negative at every
//! selling rate: selling at full speed until the inventory is gone is optimal.

use crate::error::{Error, Result};
use crate::model::{ModelSpec, TemporaryImpact};

/// Parameters of the closed-form case: tick size `theta`, up and down
/// intensities, impact `a` on the down tick, maximal rate and horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleParams {
    pub theta: f64,
    pub c_up: f64,
    pub c_down: f64,
    pub a: f64,
    pub max_rate: f64,
    pub horizon: f64,
}

impl OracleParams {
    /// Extracts the parameters from a model of the closed-form shape, or
    /// explains why the model does not qualify.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        let fail = |why: &str| Err(Error::Domain(format!("model has no closed-form value: {why}")));
        if spec.n_states() != 1 {
            return fail("more than one regime");
        }
        let marks = spec.jumps.marks();
        if marks.len() != 2 || marks[0] <= 0.0 || (marks[0] + marks[1]).abs() > 1e-15 {
            return fail("marks are not a symmetric up/down tick pair");
        }
        if spec.jumps.impact()[0] != 0.0 {
            return fail("impact on the up tick");
        }
        if !spec.jumps.time_multiplier().is_constant() {
            return fail("time-varying intensities");
        }
        if spec.discount != 0.0 {
            return fail("nonzero discount rate");
        }
        if !spec.terminal.is_zero() {
            return fail("nonzero terminal value");
        }
        if !matches!(spec.impact, TemporaryImpact::Power { scale, .. } if scale == 0.0) {
            return fail("temporary impact present");
        }
        let p = Self {
            theta: marks[0],
            c_up: spec.jumps.base(0, 0),
            c_down: spec.jumps.base(0, 1),
            a: spec.jumps.impact()[1],
            max_rate: spec.max_rate,
            horizon: spec.horizon,
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if !(self.c_up < self.c_down) {
            return Err(Error::Domain(format!(
                "closed form needs c_up < c_down, got {} and {}",
                self.c_up, self.c_down
            )));
        }
        let ok = [self.theta, self.max_rate, self.horizon].iter().all(|x| x.is_finite() && *x > 0.0)
            && self.a.is_finite()
            && self.a >= 0.0
            && self.c_up >= 0.0;
        if !ok {
            return Err(Error::Domain("closed form needs positive theta, max_rate, horizon and a >= 0".into()));
        }
        Ok(())
    }

    /// Mean return `theta (c_up - c_down (1 + a nu))` at rate `nu`.
    pub fn mean_return(&self, nu: f64) -> f64 {
        self.theta * (self.c_up - self.c_down * (1.0 + self.a * nu))
    }

    pub fn value(&self, t: f64, w: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) || !(w >= 0.0) {
            return Err(Error::Domain(format!("point (t = {t}, w = {w}) outside the domain")));
        }
        let eta = self.mean_return(self.max_rate);
        let dur = (w / self.max_rate).min(self.horizon - t);
        Ok(self.max_rate * (eta * dur).exp_m1() / eta)
    }
}

/// Value per unit price at time `t` with inventory `w`:
/// `(nu_max / eta) (exp(eta min(w / nu_max, T - t)) - 1)` with
/// `eta = theta (c_up - c_down (1 + a nu_max))`.
#[allow(clippy::too_many_arguments)]
pub fn closed_form_oracle(
    theta: f64,
    c_up: f64,
    c_down: f64,
    a: f64,
    max_rate: f64,
    horizon: f64,
    t: f64,
    w: f64,
) -> Result<f64> {
    let p = OracleParams { theta, c_up, c_down, a, max_rate, horizon };
    p.check()?;
    p.value(t, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counterexample_values() {
        let v = closed_form_oracle(0.001, 900.0, 1000.0, 7e-6, 9000.0, 2.0, 0.0, 6000.0).unwrap();
        let eta: f64 = 0.001 * (900.0 - 1000.0 * 1.063);
        assert!((eta + 0.163).abs() < 1e-12);
        assert!((v - 9000.0 / eta * ((eta * 2.0 / 3.0).exp() - 1.0)).abs() < 1e-9);
        assert!((v - 5685.5).abs() < 1.0);
        assert_eq!(closed_form_oracle(0.001, 900.0, 1000.0, 7e-6, 9000.0, 2.0, 0.0, 0.0).unwrap(), 0.0);
        assert_eq!(closed_form_oracle(0.001, 900.0, 1000.0, 7e-6, 9000.0, 2.0, 2.0, 6000.0).unwrap(), 0.0);
    }

    #[test]
    fn precondition() {
        assert!(matches!(
            closed_form_oracle(0.001, 1000.0, 900.0, 7e-6, 9000.0, 2.0, 0.0, 1.0),
            Err(Error::Domain(_))
        ));
        assert!(OracleParams::from_spec(&ModelSpec::table2()).is_err());
    }
}
