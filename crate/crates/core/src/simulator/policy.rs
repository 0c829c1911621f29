//! Liquidation policies: feedback maps from `(t, w, pi)` to a selling rate.

use crate::error::{Error, Result};

/// Grid axis: uniform `start + i * step`, or arbitrary increasing points.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    Uniform { start: f64, step: f64, len: usize },
    Points(Vec<f64>),
}

impl Axis {
    /// `len` equally spaced points from `start` to `end`.
    pub fn new(start: f64, end: f64, len: usize) -> Result<Self> {
        if len == 0 || !start.is_finite() || !end.is_finite() || (len > 1 && end <= start) {
            return Err(Error::Input(format!("invalid axis [{start}, {end}] with {len} points")));
        }
        let step = if len > 1 { (end - start) / (len - 1) as f64 } else { 1.0 };
        Ok(Self::Uniform { start, step, len })
    }

    pub fn points(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.iter().any(|x| !x.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("axis points must be finite and strictly increasing".into()));
        }
        Ok(Self::Points(points))
    }

    pub fn len(&self) -> usize {
        match self {
            Self::Uniform { len, .. } => *len,
            Self::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> f64 {
        match self {
            Self::Uniform { start, step, .. } => start + step * i as f64,
            Self::Points(p) => p[i],
        }
    }

    /// Lower cell index and weight of the upper neighbour, clamped to the axis.
    #[inline]
    fn locate(&self, x: f64) -> (usize, f64) {
        let len = self.len();
        if len == 1 {
            return (0, 0.0);
        }
        match self {
            Self::Uniform { start, step, .. } => {
                let s = ((x - start) / step).clamp(0.0, (len - 1) as f64);
                let i = (s.floor() as usize).min(len - 2);
                (i, s - i as f64)
            }
            Self::Points(p) => {
                if x <= p[0] {
                    return (0, 0.0);
                }
                if x >= p[len - 1] {
                    return (len - 2, 1.0);
                }
                let i = p.partition_point(|&k| k <= x) - 1;
                (i, (x - p[i]) / (p[i + 1] - p[i]))
            }
        }
    }
}

/// Values on a tensor grid, looked up by multilinear interpolation with
/// coordinates clamped to the grid. The last axis varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    axes: Vec<Axis>,
    values: Vec<f64>,
}

impl RateTable {
    pub fn new(axes: Vec<Axis>, values: Vec<f64>) -> Result<Self> {
        let n: usize = axes.iter().map(Axis::len).product();
        if axes.is_empty() || n != values.len() {
            return Err(Error::Input(format!("rate table has {} values for {n} grid points", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("rate table contains non-finite values".into()));
        }
        Ok(Self { axes, values })
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lookup(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.axes.len());
        match self.axes.len() {
            2 => self.lookup2(x[0], x[1]),
            3 => self.lookup3(x[0], x[1], x[2]),
            _ => self.lookup_general(x),
        }
    }

    #[inline]
    fn lookup2(&self, x: f64, y: f64) -> f64 {
        let (ny, ay) = (self.axes[1].len(), &self.axes[1]);
        let (i, fx) = self.axes[0].locate(x);
        let (j, fy) = ay.locate(y);
        let sx = if self.axes[0].len() > 1 { ny } else { 0 };
        let sy = usize::from(ny > 1);
        let v = &self.values;
        let k = i * ny + j;
        let lo = v[k] + fy * (v[k + sy] - v[k]);
        let hi = v[k + sx] + fy * (v[k + sx + sy] - v[k + sx]);
        lo + fx * (hi - lo)
    }

    #[inline]
    fn lookup3(&self, x: f64, y: f64, z: f64) -> f64 {
        let (ny, nz) = (self.axes[1].len(), self.axes[2].len());
        let (i, fx) = self.axes[0].locate(x);
        let (j, fy) = self.axes[1].locate(y);
        let (l, fz) = self.axes[2].locate(z);
        let sx = if self.axes[0].len() > 1 { ny * nz } else { 0 };
        let sy = if ny > 1 { nz } else { 0 };
        let sz = usize::from(nz > 1);
        let v = &self.values;
        let k = (i * ny + j) * nz + l;
        let edge = |k: usize| v[k] + fz * (v[k + sz] - v[k]);
        let face = |k: usize| {
            let a = edge(k);
            a + fy * (edge(k + sy) - a)
        };
        let a = face(k);
        a + fx * (face(k + sx) - a)
    }

    fn lookup_general(&self, x: &[f64]) -> f64 {
        let d = self.axes.len();
        let mut base = 0;
        let mut stride = vec![0usize; d];
        let mut frac = vec![0.0; d];
        let mut s = 1;
        for k in (0..d).rev() {
            let (i, w) = self.axes[k].locate(x[k]);
            base += i * s;
            stride[k] = if self.axes[k].len() > 1 { s } else { 0 };
            frac[k] = w;
            s *= self.axes[k].len();
        }
        let mut out = 0.0;
        for corner in 0..(1usize << d) {
            let mut weight = 1.0;
            let mut idx = base;
            for k in 0..d {
                if corner >> k & 1 == 1 {
                    weight *= frac[k];
                    idx += stride[k];
                } else {
                    weight *= 1.0 - frac[k];
                }
            }
            if weight != 0.0 {
                out += weight * self.values[idx];
            }
        }
        out
    }
}

/// A selling-rate rule. Lookups are clamped to `[0, max_rate]`.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Constant(f64),
    /// Table over `(t, w)`; ignores the belief.
    Deterministic(RateTable),
    /// Table over `(t, w, pi)` where `pi` is the belief in the first regime.
    Feedback(RateTable),
    /// Sell at the maximal rate while the belief in the first regime is at
    /// most `threshold`, otherwise wait.
    BangBang { threshold: f64 },
}

impl Policy {
    pub fn deterministic(table: RateTable) -> Result<Self> {
        if table.axes.len() != 2 {
            return Err(Error::Input("deterministic policy needs a (t, w) table".into()));
        }
        Ok(Self::Deterministic(table))
    }

    pub fn feedback(table: RateTable) -> Result<Self> {
        if table.axes.len() != 3 {
            return Err(Error::Input("feedback policy needs a (t, w, pi) table".into()));
        }
        Ok(Self::Feedback(table))
    }

    pub(crate) fn check(&self, n_states: usize) -> Result<()> {
        match self {
            Self::Constant(nu) if !nu.is_finite() || *nu < 0.0 => {
                Err(Error::Input(format!("constant rate {nu} must be finite and >= 0")))
            }
            Self::Feedback(_) | Self::BangBang { .. } if n_states > 2 => {
                Err(Error::Input("belief-dependent policies are tabulated for two regimes only".into()))
            }
            _ => Ok(()),
        }
    }

    /// Selling rate at time `t`, inventory `w` and belief `pi`.
    #[inline]
    pub fn rate(&self, t: f64, w: f64, pi: &[f64], max_rate: f64) -> f64 {
        let nu = match self {
            Self::Constant(nu) => *nu,
            Self::Deterministic(table) => table.lookup(&[t, w]),
            Self::Feedback(table) => table.lookup(&[t, w, pi[0]]),
            Self::BangBang { threshold } => {
                if pi[0] <= *threshold {
                    max_rate
                } else {
                    0.0
                }
            }
        };
        nu.clamp(0.0, max_rate)
    }
}
