//! Value function and optimal selling rate by an explicit monotone
//! finite-difference scheme.
//!
//! The value is homogeneous of degree one in the price, so the solver works
//! with the value per unit price `V(t, w, pi)` on a uniform grid in time,
//! inventory `w in [0, w0]` and, for two regimes, the belief
//! `pi in [0, 1]` in the first regime. One-regime models drop the belief
//! axis. The equation is swept backward from `V(T, w, pi) = h(w)`.
//!
//! The time step is the largest one for which every update is a
//! nonnegative combination of old values: the transport term `-nu dV/dw`
//! uses the backward inventory difference, the belief drift is upwinded by
//! its sign, and post-jump beliefs are interpolated linearly.

mod io;
mod oracle;
mod rate;

pub use io::cache_key;
pub use oracle::{closed_form_oracle, OracleParams};
pub use rate::optimal_rate;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, TemporaryImpact};
use crate::simulator::{Axis, Policy, RateTable};
use rate::argmax_rate;

/// Tolerance on the center weight of the explicit update.
const WEIGHT_TOL: f64 = 1e-12;

/// Grid resolution: `nt` output time steps, `nw` inventory steps and `npi`
/// belief steps (ignored for one-regime models).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub nt: usize,
    pub nw: usize,
    pub npi: usize,
}

impl Grid {
    pub fn new(nt: usize, nw: usize, npi: usize) -> Result<Self> {
        if nt == 0 || nw == 0 || npi == 0 {
            return Err(Error::Config(format!("grid sizes must be positive, got nt={nt} nw={nw} npi={npi}")));
        }
        Ok(Self { nt, nw, npi })
    }

    /// Longest time step for which the explicit update stays monotone.
    pub fn stable_dt(&self, spec: &ModelSpec) -> Result<f64> {
        Ok(1.0 / Ctx::new(spec, self)?.center_rate_bound())
    }
}

#[derive(Debug, Clone)]
struct MarkPost {
    /// Lower interpolation node of the post-jump belief and the weight of the upper one.
    lo: usize,
    w: f64,
    /// Weight the interpolation puts on the node itself.
    center: f64,
    /// Regime mixture of the base intensity, before the time multiplier.
    mix: f64,
}

#[derive(Debug, Clone)]
struct PiNode {
    /// `q21 (1 - pi) - q12 pi`.
    gen: f64,
    /// Belief drift from intensity differences, per unit time multiplier:
    /// `db0 + db1 nu`.
    db0: f64,
    db1: f64,
    marks: Vec<MarkPost>,
}

/// Precomputed node data shared by all layers.
struct Ctx<'a> {
    spec: &'a ModelSpec,
    nw1: usize,
    np: usize,
    dw: f64,
    dpi: f64,
    z: Vec<f64>,
    a: Vec<f64>,
    pis: Vec<PiNode>,
}

#[derive(Debug, Clone, Copy)]
struct NodeOut {
    v: f64,
    nu: f64,
    c: f64,
    center: f64,
}

impl<'a> Ctx<'a> {
    fn new(spec: &'a ModelSpec, grid: &Grid) -> Result<Self> {
        spec.validate()?;
        let k = spec.n_states();
        if k > 2 {
            return Err(Error::Input(format!("the grid solver handles one or two regimes, the model has {k}")));
        }
        let np = if k == 2 { grid.npi + 1 } else { 1 };
        let dpi = 1.0 / grid.npi as f64;
        let nm = spec.n_marks();
        let jumps = &spec.jumps;
        let pis = (0..np)
            .map(|j| {
                if k == 1 {
                    let marks = (0..nm).map(|m| MarkPost { lo: 0, w: 0.0, center: 1.0, mix: jumps.base(0, m) }).collect();
                    return PiNode { gen: 0.0, db0: 0.0, db1: 0.0, marks };
                }
                let pi = if j == np - 1 { 1.0 } else { j as f64 * dpi };
                let q12 = spec.chain.rate(0, 1);
                let q21 = spec.chain.rate(1, 0);
                let spread = pi * (1.0 - pi);
                let mut db0 = 0.0;
                let mut db1 = 0.0;
                let marks = (0..nm)
                    .map(|m| {
                        let (l1, l2) = (jumps.base(0, m), jumps.base(1, m));
                        db0 += spread * (l2 - l1);
                        db1 += spread * (l2 - l1) * jumps.impact()[m];
                        let mix = pi * l1 + (1.0 - pi) * l2;
                        if mix == 0.0 {
                            return MarkPost { lo: j.min(np - 2), w: 0.0, center: 0.0, mix };
                        }
                        let post = (pi * l1 / mix).clamp(0.0, 1.0);
                        let s = post / dpi;
                        let lo = (s.floor() as usize).min(np - 2);
                        let w = (s - lo as f64).clamp(0.0, 1.0);
                        let center = if lo == j {
                            1.0 - w
                        } else if lo + 1 == j {
                            w
                        } else {
                            0.0
                        };
                        MarkPost { lo, w, center, mix }
                    })
                    .collect();
                PiNode { gen: q21 * (1.0 - pi) - q12 * pi, db0, db1, marks }
            })
            .collect();
        Ok(Self {
            spec,
            nw1: grid.nw + 1,
            np,
            dw: spec.initial_inventory / grid.nw as f64,
            dpi,
            z: jumps.marks().to_vec(),
            a: jumps.impact().to_vec(),
            pis,
        })
    }

    fn pi_value(&self, j: usize) -> f64 {
        // single-regime grids sit at pi = 1
        if self.np == 1 || j == self.np - 1 {
            1.0
        } else {
            j as f64 * self.dpi
        }
    }

    /// Largest rate at which the center weight of the update decays, over
    /// nodes, admissible rates and time-multiplier values.
    fn center_rate_bound(&self) -> f64 {
        let tm = self.spec.jumps.time_multiplier();
        let nu_max = self.spec.max_rate;
        let mut worst: f64 = 0.0;
        for p in &self.pis {
            for m in [tm.min_value(), tm.max_value()] {
                for nu in [0.0, nu_max] {
                    let mut r = self.spec.discount + nu / self.dw;
                    if self.np > 1 {
                        r += (p.gen + m * (p.db0 + p.db1 * nu)).abs() / self.dpi;
                    }
                    for (k, mp) in p.marks.iter().enumerate() {
                        let lam = m * mp.mix * (1.0 + self.a[k] * nu);
                        r += lam * (1.0 - (1.0 + self.z[k]) * mp.center);
                    }
                    worst = worst.max(r);
                }
            }
        }
        worst.max(f64::MIN_POSITIVE)
    }

    /// Hamiltonian maximization and explicit update at interior node `(i, j)`.
    #[inline]
    fn node(&self, m: f64, dt: f64, old: &[f64], i: usize, j: usize) -> NodeOut {
        let np = self.np;
        let idx = i * np + j;
        let v = old[idx];
        let row = &old[i * np..(i + 1) * np];
        let p = &self.pis[j];
        let impact = &self.spec.impact;
        let nu_max = self.spec.max_rate;
        let rho = self.spec.discount;

        let d_w = (v - old[idx - np]) / self.dw;
        let mut j0 = 0.0;
        let mut j1 = 0.0;
        for (k, mp) in p.marks.iter().enumerate() {
            if mp.mix == 0.0 {
                continue;
            }
            let post = if np == 1 { v } else { row[mp.lo] * (1.0 - mp.w) + row[mp.lo + 1] * mp.w };
            let gain = m * mp.mix * ((1.0 + self.z[k]) * post - v);
            j0 += gain;
            j1 += gain * self.a[k];
        }

        let b0 = p.gen + m * p.db0;
        let b1 = m * p.db1;
        let d_up = if j + 1 < np { (row[j + 1] - v) / self.dpi } else { 0.0 };
        let d_down = if j > 0 { (v - row[j - 1]) / self.dpi } else { 0.0 };
        let diff = |b: f64| {
            if b > 0.0 {
                d_up
            } else if b < 0.0 {
                d_down
            } else {
                0.0
            }
        };
        let ham = |nu: f64, d: f64| {
            -rho * v + nu * (1.0 - impact.eval(nu)) - nu * d_w + (b0 + b1 * nu) * d + j0 + nu * j1
        };
        let pick = |lo: f64, hi: f64, d: f64| {
            let c = d_w - b1 * d - j1;
            let nu = argmax_rate(impact, c, lo, hi);
            (nu, c, ham(nu, d))
        };

        let (nu, c, h) = if np == 1 {
            pick(0.0, nu_max, 0.0)
        } else {
            let b_hi = b0 + b1 * nu_max;
            if b0 * b_hi >= 0.0 {
                pick(0.0, nu_max, diff(b0 + b_hi))
            } else {
                // the drift changes sign inside the control range
                let nu0 = -b0 / b1;
                let first = pick(0.0, nu0, diff(b0));
                let second = pick(nu0, nu_max, diff(b_hi));
                if second.2 > first.2 {
                    second
                } else {
                    first
                }
            }
        };

        let mut out_rate = rho + nu / self.dw;
        if np > 1 {
            let b = b0 + b1 * nu;
            if (b > 0.0 && j + 1 < np) || (b < 0.0 && j > 0) {
                out_rate += b.abs() / self.dpi;
            }
        }
        for (k, mp) in p.marks.iter().enumerate() {
            let lam = m * mp.mix * (1.0 + self.a[k] * nu);
            out_rate += lam * (1.0 - (1.0 + self.z[k]) * mp.center);
        }
        NodeOut { v: v + dt * h, nu, c, center: 1.0 - dt * out_rate }
    }

    /// One explicit step from `old` (time `t`) to `new` (time `t - dt`).
    /// Returns the smallest center weight and the node where it occurs.
    fn sweep(
        &self,
        t: f64,
        dt: f64,
        old: &[f64],
        new: &mut [f64],
        nu: &mut [f64],
        cost: &mut [f64],
    ) -> (f64, usize) {
        let np = self.np;
        let m = self.spec.jumps.time_multiplier().eval(t);
        let row_fn = |i: usize, v_row: &mut [f64], nu_row: &mut [f64], c_row: &mut [f64]| -> (f64, usize) {
            let mut worst = (f64::INFINITY, usize::MAX);
            if i == 0 {
                v_row.fill(0.0);
                return worst;
            }
            for j in 0..np {
                let o = self.node(m, dt, old, i, j);
                v_row[j] = o.v;
                nu_row[j] = o.nu;
                c_row[j] = o.c;
                if o.center < worst.0 {
                    worst = (o.center, i * np + j);
                }
            }
            worst
        };
        let better = |a: (f64, usize), b: (f64, usize)| if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a };

        #[cfg(feature = "parallel")]
        let worst = {
            use rayon::prelude::*;
            new.par_chunks_mut(np)
                .zip(nu.par_chunks_mut(np))
                .zip(cost.par_chunks_mut(np))
                .enumerate()
                .map(|(i, ((v, n), c))| row_fn(i, v, n, c))
                .reduce(|| (f64::INFINITY, usize::MAX), better)
        };
        #[cfg(not(feature = "parallel"))]
        let worst = new
            .chunks_mut(np)
            .zip(nu.chunks_mut(np))
            .zip(cost.chunks_mut(np))
            .enumerate()
            .map(|(i, ((v, n), c))| row_fn(i, v, n, c))
            .fold((f64::INFINITY, usize::MAX), better);

        // the exhausted row takes the rates of the first interior row
        let (head, tail) = nu.split_at_mut(np);
        head.copy_from_slice(&tail[..np]);
        let (head, tail) = cost.split_at_mut(np);
        head.copy_from_slice(&tail[..np]);
        worst
    }

    fn node_label(&self, idx: usize) -> String {
        let (i, j) = (idx / self.np, idx % self.np);
        if self.np == 1 {
            format!("w = {}", i as f64 * self.dw)
        } else {
            format!("w = {}, pi = {}", i as f64 * self.dw, self.pi_value(j))
        }
    }
}

/// Solution on the grid. Arrays are indexed `[time][w][pi]` with the
/// belief fastest; one-regime solutions have a single belief node `pi = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    pub times: Vec<f64>,
    pub ws: Vec<f64>,
    pub pis: Vec<f64>,
    /// Value per unit price.
    pub v: Vec<f64>,
    pub nu_star: Vec<f64>,
    /// Marginal cost of selling; diagnostic.
    pub cost: Vec<f64>,
    /// Time step actually used.
    pub dt: f64,
    /// Number of time steps taken; output layers are a subset of them.
    pub steps: usize,
    /// Smallest center weight met over all nodes and steps.
    pub min_center_weight: f64,
}

impl ValueField {
    pub fn nt(&self) -> usize {
        self.times.len() - 1
    }

    #[inline]
    pub fn index(&self, n: usize, i: usize, j: usize) -> usize {
        (n * self.ws.len() + i) * self.pis.len() + j
    }

    pub fn value(&self, n: usize, i: usize, j: usize) -> f64 {
        self.v[self.index(n, i, j)]
    }

    pub fn rate(&self, n: usize, i: usize, j: usize) -> f64 {
        self.nu_star[self.index(n, i, j)]
    }

    /// Value per unit price at `(t, w, pi)` by multilinear interpolation.
    pub fn value_at(&self, t: f64, w: f64, pi: f64) -> f64 {
        self.table(&self.v).lookup(&[t, w, pi])
    }

    /// Layer `n` as a `[w][pi]` slice.
    pub fn layer(&self, n: usize) -> &[f64] {
        let len = self.ws.len() * self.pis.len();
        &self.v[n * len..(n + 1) * len]
    }

    fn table(&self, values: &[f64]) -> RateTable {
        let axes = vec![
            Axis::points(self.times.clone()).unwrap(),
            Axis::new(self.ws[0], *self.ws.last().unwrap(), self.ws.len()).unwrap(),
            Axis::new(self.pis[0], *self.pis.last().unwrap(), self.pis.len()).unwrap(),
        ];
        RateTable::new(axes, values.to_vec()).expect("field arrays match the grid")
    }

    /// Optimal rate as a feedback policy on `(t, w, pi)`.
    pub fn feedback_policy(&self) -> Result<Policy> {
        if self.pis.len() < 2 {
            return Err(Error::Input("field has no belief axis; use the deterministic policy".into()));
        }
        Policy::feedback(self.table(&self.nu_star))
    }

    /// Optimal rate as a policy on `(t, w)` for one-regime solutions.
    pub fn deterministic_policy(&self) -> Result<Policy> {
        if self.pis.len() != 1 {
            return Err(Error::Input("field depends on the belief; use the feedback policy".into()));
        }
        let axes = vec![
            Axis::points(self.times.clone())?,
            Axis::new(self.ws[0], *self.ws.last().unwrap(), self.ws.len())?,
        ];
        Policy::deterministic(RateTable::new(axes, self.nu_star.clone())?)
    }
}

/// Result of a single explicit step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub v: Vec<f64>,
    pub nu: Vec<f64>,
    pub cost: Vec<f64>,
    pub min_center_weight: f64,
}

/// One explicit step of length `dt` from the layer at time `t` to the
/// layer at `t - dt`. `layer` is indexed `[w][pi]`.
///
/// Fails with a configuration error naming the node if the update there is
/// not a nonnegative combination of old values.
pub fn step(spec: &ModelSpec, grid: &Grid, layer: &[f64], t: f64, dt: f64) -> Result<Step> {
    let ctx = Ctx::new(spec, grid)?;
    let n = ctx.nw1 * ctx.np;
    if layer.len() != n {
        return Err(Error::Input(format!("layer has {} values, grid has {n} nodes", layer.len())));
    }
    let mut out = Step { v: vec![0.0; n], nu: vec![0.0; n], cost: vec![0.0; n], min_center_weight: 0.0 };
    let (worst, at) = ctx.sweep(t, dt, layer, &mut out.v, &mut out.nu, &mut out.cost);
    if worst < -WEIGHT_TOL {
        return Err(Error::Config(format!(
            "time step {dt} breaks monotonicity at node {} (center weight {worst:.3e}); reduce the time step",
            ctx.node_label(at)
        )));
    }
    out.min_center_weight = worst;
    Ok(out)
}

/// Marginal cost of selling at node `(i, j)` of a layer at time `t`.
pub fn marginal_cost(spec: &ModelSpec, grid: &Grid, layer: &[f64], t: f64, i: usize, j: usize) -> Result<f64> {
    let ctx = Ctx::new(spec, grid)?;
    if layer.len() != ctx.nw1 * ctx.np || i == 0 || i >= ctx.nw1 || j >= ctx.np {
        return Err(Error::Input(format!("node ({i}, {j}) or layer size does not match the grid")));
    }
    let m = spec.jumps.time_multiplier().eval(t);
    Ok(ctx.node(m, 0.0, layer, i, j).c)
}

/// Step indices of the `nt + 1` output layers among `steps` time steps.
fn output_steps(nt: usize, steps: usize) -> Vec<usize> {
    (0..=nt).map(|n| (n * steps + nt / 2) / nt).collect()
}

fn output_times(marks: &[usize], dt: f64, horizon: f64) -> Vec<f64> {
    let mut times: Vec<f64> = marks.iter().map(|&k| k as f64 * dt).collect();
    *times.last_mut().unwrap() = horizon;
    times
}

/// Backward sweep from the terminal layer to `t = 0`.
///
/// The time step is the largest one that keeps the update monotone (or
/// `T / nt` if that is smaller); layers are stored at the steps nearest to
/// the `nt + 1` equally spaced output times, so `times` is only
/// approximately uniform.
pub fn solve(spec: &ModelSpec, grid: &Grid) -> Result<ValueField> {
    let ctx = Ctx::new(spec, grid)?;
    let (nw1, np) = (ctx.nw1, ctx.np);
    let layer_len = nw1 * np;
    let steps = ((spec.horizon * ctx.center_rate_bound()).ceil() as usize).max(grid.nt);
    let dt = spec.horizon / steps as f64;
    let marks = output_steps(grid.nt, steps);

    let ws: Vec<f64> = (0..nw1).map(|i| i as f64 * ctx.dw).collect();
    let mut field = ValueField {
        times: output_times(&marks, dt, spec.horizon),
        pis: (0..np).map(|j| ctx.pi_value(j)).collect(),
        v: vec![0.0; (grid.nt + 1) * layer_len],
        nu_star: vec![0.0; (grid.nt + 1) * layer_len],
        cost: vec![0.0; (grid.nt + 1) * layer_len],
        dt,
        steps,
        min_center_weight: f64::INFINITY,
        ws,
    };

    let mut old: Vec<f64> = (0..layer_len).map(|idx| spec.terminal.eval(field.ws[idx / np])).collect();
    let mut new = vec![0.0; layer_len];
    let mut nu = vec![0.0; layer_len];
    let mut cost = vec![0.0; layer_len];
    field.v[grid.nt * layer_len..].copy_from_slice(&old);

    let check = |worst: (f64, usize), t: f64, field: &mut ValueField| -> Result<()> {
        if worst.0 < -WEIGHT_TOL {
            return Err(Error::Config(format!(
                "time step {dt} breaks monotonicity at t = {t}, node {}",
                ctx.node_label(worst.1)
            )));
        }
        field.min_center_weight = field.min_center_weight.min(worst.0);
        Ok(())
    };

    let mut n = grid.nt;
    for s in (1..=steps).rev() {
        let t = s as f64 * dt;
        let worst = ctx.sweep(t, dt, &old, &mut new, &mut nu, &mut cost);
        check(worst, t, &mut field)?;
        if s == marks[n] {
            let at = n * layer_len;
            field.nu_star[at..at + layer_len].copy_from_slice(&nu);
            field.cost[at..at + layer_len].copy_from_slice(&cost);
        }
        std::mem::swap(&mut old, &mut new);
        if s - 1 == marks[n - 1] {
            n -= 1;
            field.v[n * layer_len..(n + 1) * layer_len].copy_from_slice(&old);
        }
    }
    // rates at t = 0 from the final layer
    let worst = ctx.sweep(0.0, dt, &old, &mut new, &mut nu, &mut cost);
    check(worst, 0.0, &mut field)?;
    field.nu_star[..layer_len].copy_from_slice(&nu);
    field.cost[..layer_len].copy_from_slice(&cost);
    Ok(field)
}

/// Solves the one-regime problem on an inventory grid with a direct
/// one-dimensional implementation of the scheme. The belief axis of the
/// result has the single node `pi = 1`.
pub fn solve_deterministic(spec: &ModelSpec, nt: usize, nw: usize) -> Result<ValueField> {
    spec.validate()?;
    if spec.n_states() != 1 {
        return Err(Error::Input("the deterministic solver needs a one-regime model".into()));
    }
    if nt == 0 || nw == 0 {
        return Err(Error::Config(format!("grid sizes must be positive, got nt={nt} nw={nw}")));
    }
    let nm = spec.n_marks();
    let tm = spec.jumps.time_multiplier();
    let z = spec.jumps.marks();
    let a = spec.jumps.impact();
    let lam: Vec<f64> = (0..nm).map(|j| spec.jumps.base(0, j)).collect();
    // mean return m (r0 + r1 nu)
    let r0: f64 = (0..nm).map(|j| z[j] * lam[j]).sum();
    let r1: f64 = (0..nm).map(|j| z[j] * lam[j] * a[j]).sum();
    let dw = spec.initial_inventory / nw as f64;
    let rho = spec.discount;
    let nu_max = spec.max_rate;
    let impact: &TemporaryImpact = &spec.impact;

    let mut bound: f64 = f64::MIN_POSITIVE;
    for m in [tm.min_value(), tm.max_value()] {
        for nu in [0.0, nu_max] {
            bound = bound.max(rho + nu / dw - m * (r0 + r1 * nu));
        }
    }
    let steps = ((spec.horizon * bound).ceil() as usize).max(nt);
    let dt = spec.horizon / steps as f64;
    let marks = output_steps(nt, steps);

    let nw1 = nw + 1;
    let ws: Vec<f64> = (0..nw1).map(|i| i as f64 * dw).collect();
    let times = output_times(&marks, dt, spec.horizon);
    let mut v_all = vec![0.0; (nt + 1) * nw1];
    let mut nu_all = vec![0.0; (nt + 1) * nw1];
    let mut c_all = vec![0.0; (nt + 1) * nw1];
    let mut old: Vec<f64> = ws.iter().map(|&w| spec.terminal.eval(w)).collect();
    let mut new = vec![0.0; nw1];
    let mut nu = vec![0.0; nw1];
    let mut cost = vec![0.0; nw1];
    let mut min_weight = f64::INFINITY;

    let mut sweep = |t: f64, old: &[f64], new: &mut [f64], nu: &mut [f64], cost: &mut [f64]| -> Result<()> {
        let m = tm.eval(t);
        for i in 1..nw1 {
            let v = old[i];
            let d_w = (v - old[i - 1]) / dw;
            let c = d_w - m * r1 * v;
            let rate = argmax_rate(impact, c, 0.0, nu_max);
            let eta = m * (r0 + r1 * rate);
            new[i] = v + dt * (-rho * v + rate * (1.0 - impact.eval(rate)) - rate * d_w + eta * v);
            nu[i] = rate;
            cost[i] = c;
            let weight = 1.0 - dt * (rho + rate / dw - eta);
            if weight < -WEIGHT_TOL {
                return Err(Error::Config(format!("time step {dt} breaks monotonicity at t = {t}, w = {}", ws[i])));
            }
            min_weight = min_weight.min(weight);
        }
        new[0] = 0.0;
        nu[0] = nu[1];
        cost[0] = cost[1];
        Ok(())
    };

    v_all[nt * nw1..].copy_from_slice(&old);
    let mut n = nt;
    for s in (1..=steps).rev() {
        sweep(s as f64 * dt, &old, &mut new, &mut nu, &mut cost)?;
        if s == marks[n] {
            nu_all[n * nw1..(n + 1) * nw1].copy_from_slice(&nu);
            c_all[n * nw1..(n + 1) * nw1].copy_from_slice(&cost);
        }
        std::mem::swap(&mut old, &mut new);
        if s - 1 == marks[n - 1] {
            n -= 1;
            v_all[n * nw1..(n + 1) * nw1].copy_from_slice(&old);
        }
    }
    sweep(0.0, &old, &mut new, &mut nu, &mut cost)?;
    nu_all[..nw1].copy_from_slice(&nu);
    c_all[..nw1].copy_from_slice(&cost);

    Ok(ValueField {
        times,
        ws,
        pis: vec![1.0],
        v: v_all,
        nu_star: nu_all,
        cost: c_all,
        dt,
        steps,
        min_center_weight: min_weight,
    })
}
