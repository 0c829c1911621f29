//! Policy specifiers and the solves behind them.
//!
//! - `filter`: optimal feedback rate of the model on `(t, w, pi)`
//! - `deterministic`: optimal rate of the one-regime model with the
//!   stationary mixture of the regime intensities, on `(t, w)`
//! - `constant:<rate>`
//! - `bangbang:<threshold>`: full speed while `pi <= threshold`
//! - `field:<path>`: rates from a saved value field (`.bin` or `.csv`)

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use liquidation_core::hjb::{self, cache_key, Grid, ValueField};
use liquidation_core::simulator::Policy;
use liquidation_core::ModelSpec;

/// Solves `spec` on `grid`, going through the cache directory if given.
/// One-regime models use the one-dimensional solver.
pub fn solve_cached(spec: &ModelSpec, grid: &Grid, cache: Option<&Path>) -> Result<(ValueField, String)> {
    let key = cache_key(spec, grid);
    let path = cache.map(|dir| dir.join(format!("{key}.bin")));
    if let Some(p) = path.as_ref().filter(|p| p.exists()) {
        let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
        match ValueField::from_bytes(&bytes) {
            Ok(field) => return Ok((field, key)),
            Err(e) => eprintln!("warning: ignoring cache {}: {e}", p.display()),
        }
    }
    let field = if spec.n_states() == 1 {
        hjb::solve_deterministic(spec, grid.nt, grid.nw)?
    } else {
        hjb::solve(spec, grid)?
    };
    if let Some(p) = path {
        fs::create_dir_all(p.parent().unwrap())?;
        fs::write(&p, field.to_bytes()).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok((field, key))
}

/// A resolved policy plus the PDE value it promises at the initial state,
/// when one is available for the simulated model.
pub struct Resolved {
    pub policy: Policy,
    pub pde_value: Option<f64>,
    pub source: String,
}

pub fn resolve(spec_str: &str, spec: &ModelSpec, grid: &Grid, cache: Option<&Path>) -> Result<Resolved> {
    let (kind, arg) = match spec_str.split_once(':') {
        Some((k, a)) => (k, Some(a)),
        None => (spec_str, None),
    };
    let number = |what: &str| -> Result<f64> {
        arg.ok_or_else(|| anyhow!("policy `{kind}` needs a {what}, e.g. `{kind}:0.5`"))?
            .parse::<f64>()
            .with_context(|| format!("policy `{spec_str}`: {what} is not a number"))
    };
    let s0 = spec.initial_price;
    let at_start = |f: &ValueField| s0 * f.value_at(0.0, spec.initial_inventory, spec.chain.initial()[0]);
    Ok(match kind {
        "filter" => {
            if spec.n_states() == 1 {
                bail!("policy `filter` needs a model with two regimes; use `deterministic`");
            }
            let (f, key) = solve_cached(spec, grid, cache)?;
            Resolved { policy: f.feedback_policy()?, pde_value: Some(at_start(&f)), source: format!("solve {key}") }
        }
        "deterministic" => {
            let mixture = spec.stationary_mixture()?;
            let (f, key) = solve_cached(&mixture, grid, cache)?;
            let own = spec.n_states() == 1;
            Resolved {
                policy: f.deterministic_policy()?,
                pde_value: own.then(|| s0 * f.value_at(0.0, spec.initial_inventory, 1.0)),
                source: format!("solve {key}"),
            }
        }
        "constant" => Resolved { policy: Policy::Constant(number("rate")?), pde_value: None, source: spec_str.into() },
        "bangbang" => {
            Resolved { policy: Policy::BangBang { threshold: number("threshold")? }, pde_value: None, source: spec_str.into() }
        }
        "field" => {
            let path = PathBuf::from(arg.ok_or_else(|| anyhow!("policy `field` needs a path"))?);
            let f = load_field(&path)?;
            let policy = if f.pis.len() == 1 { f.deterministic_policy()? } else { f.feedback_policy()? };
            Resolved { policy, pde_value: None, source: path.display().to_string() }
        }
        _ => bail!("unknown policy `{spec_str}`; expected filter, deterministic, constant:<rate>, bangbang:<threshold> or field:<path>"),
    })
}

/// One CSV line: `t, w, pi, V, nu_star, C`.
type Row = (f64, f64, f64, f64, f64, f64);

/// Reads a value field written by `solve`: the binary cache, or the CSV
/// with columns `t,w,pi,V,nu_star,C` (any subset of complete layers).
pub fn load_field(path: &Path) -> Result<ValueField> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "bin") {
        return Ok(ValueField::from_bytes(&bytes)?);
    }
    let mut rdr = csv::Reader::from_reader(bytes.as_slice());
    let mut rows: Vec<Row> = Vec::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        rows.push(rec.with_context(|| format!("{}: row {}", path.display(), i + 2))?);
    }
    let distinct = |key: fn(&Row) -> f64| {
        let mut v: Vec<f64> = rows.iter().map(key).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let (times, ws, pis) = (distinct(|r| r.0), distinct(|r| r.1), distinct(|r| r.2));
    let cells = times.len() * ws.len() * pis.len();
    if rows.len() != cells || cells == 0 {
        bail!("{}: rows do not form a complete (t, w, pi) grid", path.display());
    }
    // rows are written time-major, then w, then pi
    let (nw, np) = (ws.len(), pis.len());
    for (k, r) in rows.iter().enumerate() {
        if (r.0, r.1, r.2) != (times[k / (nw * np)], ws[k / np % nw], pis[k % np]) {
            bail!("{}: row {} is out of (t, w, pi) order", path.display(), k + 2);
        }
    }
    Ok(ValueField {
        v: rows.iter().map(|r| r.3).collect(),
        nu_star: rows.iter().map(|r| r.4).collect(),
        cost: rows.iter().map(|r| r.5).collect(),
        dt: f64::NAN,
        steps: 0,
        min_center_weight: f64::NAN,
        times,
        ws,
        pis,
    })
}
