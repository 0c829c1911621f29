//! Pointwise maximization of the selling-rate part of the Hamiltonian,
//! `nu (1 - f(nu)) - nu C`.

use crate::model::{ModelSpec, TemporaryImpact};

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[inline]
fn objective(impact: &TemporaryImpact, c: f64, nu: f64) -> f64 {
    nu * (1.0 - impact.eval(nu)) - nu * c
}

/// Maximizer of `nu (1 - f(nu)) - nu C` over `[lo, hi]`; ties go to the
/// smaller rate.
#[inline]
pub(crate) fn argmax_rate(impact: &TemporaryImpact, c: f64, lo: f64, hi: f64) -> f64 {
    match impact {
        TemporaryImpact::Power { scale, exponent } => {
            if c >= 1.0 {
                lo
            } else if *scale == 0.0 {
                hi
            } else {
                ((1.0 - c) / (scale * (exponent + 1.0))).powf(1.0 / exponent).clamp(lo, hi)
            }
        }
        TemporaryImpact::Table(_) => golden_section(impact, c, lo, hi),
    }
}

fn golden_section(impact: &TemporaryImpact, c: f64, lo: f64, hi: f64) -> f64 {
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - GOLDEN * (b - a);
    let mut x2 = a + GOLDEN * (b - a);
    let mut f1 = objective(impact, c, x1);
    let mut f2 = objective(impact, c, x2);
    while b - a > 1e-9 * (1.0 + hi.abs()) {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + GOLDEN * (b - a);
            f2 = objective(impact, c, x2);
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - GOLDEN * (b - a);
            f1 = objective(impact, c, x1);
        }
    }
    let mid = 0.5 * (a + b);
    // the objective need not be concave for tabulated impact; compare with the ends
    [lo, mid, hi]
        .into_iter()
        .fold((lo, f64::NEG_INFINITY), |best, nu| {
            let v = objective(impact, c, nu);
            if v > best.1 {
                (nu, v)
            } else {
                best
            }
        })
        .0
}

/// Optimal selling rate given the marginal cost `C`: zero when `C > 1`, the
/// maximal rate when there is no temporary impact and `C < 1`, otherwise the
/// interior root of `1 - C = f(nu) + nu f'(nu)` capped at the maximal rate.
/// At `C = 1` without temporary impact the tie is broken towards zero.
pub fn optimal_rate(spec: &ModelSpec, c: f64) -> f64 {
    argmax_rate(&spec.impact, c, 0.0, spec.max_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PiecewiseLinear;

    #[test]
    fn power_form_examples() {
        let f = TemporaryImpact::Power { scale: 1e-3, exponent: 0.6 };
        assert_eq!(argmax_rate(&f, 1.5, 0.0, 9000.0), 0.0);
        let nu = argmax_rate(&f, 0.9, 0.0, 9000.0);
        // brute-force grid search
        let best = (0..=900_000)
            .map(|k| k as f64 * 0.01)
            .max_by(|a, b| objective(&f, 0.9, *a).total_cmp(&objective(&f, 0.9, *b)))
            .unwrap();
        assert!((nu - best).abs() <= 1e-3 * best);
        assert!((nu - 984.0).abs() < 1.0);

        let none = TemporaryImpact::none();
        assert_eq!(argmax_rate(&none, 0.3, 0.0, 9000.0), 9000.0);
        assert_eq!(argmax_rate(&none, 1.0, 0.0, 9000.0), 0.0);
    }

    #[test]
    fn table_form_matches_power_form() {
        let power = TemporaryImpact::Power { scale: 1e-3, exponent: 0.6 };
        let knots: Vec<(f64, f64)> = (0..=4000).map(|k| {
            let nu = k as f64 * 2.5;
            (nu, power.eval(nu))
        }).collect();
        let table = TemporaryImpact::Table(PiecewiseLinear::new(&knots).unwrap());
        let a = argmax_rate(&power, 0.9, 0.0, 9000.0);
        let b = argmax_rate(&table, 0.9, 0.0, 9000.0);
        assert!((a - b).abs() < 0.01 * a);
    }
}
