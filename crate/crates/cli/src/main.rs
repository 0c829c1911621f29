//! `liquidate`: solve, simulate, evaluate, compare and calibrate the
//! liquidation model from a recipe file, writing CSV tables and a manifest.

mod output;
mod policy;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use liquidation_core::calibrate::{em_fit, EmConfig};
use liquidation_core::config::{ChainSection, JumpsSection, ParameterFragment, Recipe};
use liquidation_core::hjb::{Grid, OracleParams, ValueField};
use liquidation_core::rng::PathSeed;
use liquidation_core::simulator::{
    compare_policies, mc_evaluate, simulate_observations, simulate_path, EventKind, SimOptions,
};
use liquidation_core::{EventLog, MarkEncoding, ModelSpec};
use serde::Serialize;

use output::{Manifest, Outputs};

const DEFAULT_GRID: (usize, usize, usize) = (200, 600, 20);
const DEFAULT_PATHS: usize = 10_000;
const DEFAULT_SEED: u64 = 1;

#[derive(Parser)]
#[command(name = "liquidate", version, about = "Optimal liquidation with a hidden market regime")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Recipe file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; defaults to the recipe's, then 1.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Output time layers of the grid.
    #[arg(long)]
    nt: Option<usize>,
    /// Inventory cells.
    #[arg(long)]
    nw: Option<usize>,
    /// Belief cells.
    #[arg(long)]
    npi: Option<usize>,
    /// Cap on worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Directory for cached value fields.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the dynamic-programming equation and write the value field.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Write every n-th time layer to the CSV (first and last always).
        #[arg(long)]
        layer_stride: Option<usize>,
    },
    /// Simulate paths under a policy; writes per-path results and the
    /// price ticks of the first path.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "filter")]
        policy: String,
    },
    /// Monte Carlo value of a policy.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "filter")]
        policy: String,
    },
    /// Paired comparison of two policies on common random numbers.
    Compare {
        #[command(flatten)]
        common: Common,
        /// First policy; defaults to the recipe's `[compare]` section.
        #[arg(long)]
        a: Option<String>,
        #[arg(long)]
        b: Option<String>,
    },
    /// Fit chain and intensities to tick data with EM.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Event CSV with columns `t,mark`; simulated from the recipe when absent.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Marks in the event file are signed tick counts rather than indices.
        #[arg(long)]
        signed_ticks: bool,
    },
    /// Compare the solver against the closed-form value.
    OracleCheck {
        #[command(flatten)]
        common: Common,
    },
}

struct Loaded {
    recipe: Recipe,
    spec: ModelSpec,
    manifest: Manifest,
}

impl Common {
    fn load(&self, command: &str) -> Result<Loaded> {
        let text = fs::read_to_string(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        let recipe = Recipe::from_toml_str(&text).with_context(|| format!("in {}", self.config.display()))?;
        let spec = recipe.model().with_context(|| format!("in {}", self.config.display()))?;
        for w in spec.warnings() {
            eprintln!("warning: {w}");
        }
        let mut manifest = Manifest::new(command, &self.config, &text);
        if let Some(n) = self.workers {
            // a second initialization only happens in tests, where it is harmless
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
        manifest.setting("max_rate", spec.max_rate);
        Ok(Loaded { recipe, spec, manifest })
    }

    fn grid(&self, recipe: &Recipe, m: &mut Manifest) -> Result<Grid> {
        let g = recipe.grid.clone().unwrap_or_default();
        let nt = self.nt.or(g.nt).unwrap_or(DEFAULT_GRID.0);
        let nw = self.nw.or(g.nw).unwrap_or(DEFAULT_GRID.1);
        let npi = self.npi.or(g.npi).unwrap_or(DEFAULT_GRID.2);
        m.setting("nt", nt as i64);
        m.setting("nw", nw as i64);
        m.setting("npi", npi as i64);
        Ok(Grid::new(nt, nw, npi)?)
    }

    fn seed(&self, recipe: &Recipe, m: &mut Manifest) -> u64 {
        let s = self.seed.or(recipe.simulation.as_ref().and_then(|s| s.seed)).unwrap_or(DEFAULT_SEED);
        m.setting("seed", s.to_string());
        s
    }

    fn paths(&self, recipe: &Recipe, m: &mut Manifest) -> Result<usize> {
        let n = self.paths.or(recipe.simulation.as_ref().and_then(|s| s.paths)).unwrap_or(DEFAULT_PATHS);
        if n == 0 {
            bail!("--paths must be at least 1");
        }
        m.setting("paths", n as i64);
        Ok(n)
    }

    fn sim_options(&self, recipe: &Recipe, m: &mut Manifest) -> SimOptions {
        let mut o = SimOptions::default();
        if let Some(dt) = recipe.simulation.as_ref().and_then(|s| s.dt_target) {
            o.dt_target = dt;
        }
        m.setting("dt_target", o.dt_target);
        o
    }
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Fails if any value exceeds the a-priori upper bound.
fn check_bound(spec: &ModelSpec, what: &str, value: f64, m: &mut Manifest) -> Result<()> {
    let bound = spec.value_upper_bound();
    m.result("value_upper_bound", bound);
    if value > bound {
        bail!("{what} = {value} exceeds the upper bound {bound}");
    }
    Ok(())
}

fn record_field(field: &ValueField, key: &str, m: &mut Manifest) {
    m.result("dt", field.dt);
    m.result("steps", field.steps as i64);
    m.result("min_center_weight", field.min_center_weight);
    m.result("cache_key", key);
}

/// Sup-norm error of the solved field against the closed form, absolute
/// and relative to the largest oracle value.
fn oracle_errors(field: &ValueField, p: &OracleParams) -> Result<(f64, f64, Vec<Vec<String>>)> {
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    let mut rows = Vec::new();
    for (n, &t) in field.times.iter().enumerate() {
        for (i, &w) in field.ws.iter().enumerate() {
            let exact = p.value(t.min(p.horizon), w)?;
            let v = field.value(n, i, 0);
            err = err.max((v - exact).abs());
            scale = scale.max(exact.abs());
            rows.push(vec![fmt(t), fmt(w), fmt(v), fmt(exact), fmt(v - exact)]);
        }
    }
    Ok((err, if scale > 0.0 { err / scale } else { err }, rows))
}

fn cmd_solve(c: &Common, layer_stride: Option<usize>) -> Result<()> {
    let Loaded { recipe, spec, mut manifest } = c.load("solve")?;
    let grid = c.grid(&recipe, &mut manifest)?;
    let stride = layer_stride.unwrap_or((grid.nt / 20).max(1));
    manifest.setting("layer_stride", stride as i64);
    let (field, key) = policy::solve_cached(&spec, &grid, c.cache_dir.as_deref())?;
    record_field(&field, &key, &mut manifest);

    let pi0 = if field.pis.len() == 1 { 1.0 } else { spec.chain.initial()[0] };
    let v0 = spec.initial_price * field.value_at(0.0, spec.initial_inventory, pi0);
    let vmax = spec.initial_price * field.v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    check_bound(&spec, "largest solved value", vmax, &mut manifest)?;
    manifest.result("value_at_start", v0);
    println!("value at (0, w0, pi0): {v0:.4}  (dt {:.3e}, {} steps)", field.dt, field.steps);

    let mut out = Outputs::new(&c.out);
    let mut csv = Vec::new();
    field.write_csv(&mut csv, stride)?;
    out.add("value_field.csv", csv);
    out.add("value_field.bin", field.to_bytes());

    if let Ok(p) = OracleParams::from_spec(&spec) {
        let (abs, rel, _) = oracle_errors(&field, &p)?;
        manifest.result("oracle_sup_error", abs);
        manifest.result("oracle_sup_relative_error", rel);
        println!("oracle: sup |V - V_exact| = {abs:.4e}, relative to max |V_exact|: {rel:.4e}");
    }

    if let Some(sweep) = &recipe.sweep {
        let base = spec.initial_inventory / spec.horizon;
        let mut rows = Vec::new();
        let mut prev: Option<f64> = None;
        for &mult in &sweep.max_rate_multiples {
            let s = ModelSpec { max_rate: mult * base, ..spec.clone() };
            let (f, _) = policy::solve_cached(&s, &grid, c.cache_dir.as_deref())?;
            let v = s.initial_price * f.value_at(0.0, s.initial_inventory, pi0);
            check_bound(&s, "swept value", v, &mut manifest)?;
            let inc = prev.map_or(String::new(), |p| fmt(v - p));
            println!("max_rate {:>8.1}: value {v:.4}", s.max_rate);
            rows.push(vec![fmt(mult), fmt(s.max_rate), fmt(v), inc]);
            prev = Some(v);
        }
        out.add_table("sweep.csv", &["multiple", "max_rate", "value", "increment"], &rows)?;
    }
    out.commit(manifest)
}

#[derive(Serialize)]
struct EventRow {
    t: f64,
    mark: usize,
}

fn cmd_simulate(c: &Common, policy_str: &str) -> Result<()> {
    let Loaded { recipe, spec, mut manifest } = c.load("simulate")?;
    let grid = c.grid(&recipe, &mut manifest)?;
    let seed = c.seed(&recipe, &mut manifest);
    let n = c.paths(&recipe, &mut manifest)?;
    let opts = c.sim_options(&recipe, &mut manifest);
    manifest.setting("policy", policy_str);
    let p = policy::resolve(policy_str, &spec, &grid, c.cache_dir.as_deref())?;
    manifest.result("policy_source", p.source.clone());
    let mc = mc_evaluate(&spec, &p.policy, n as u64, seed, &opts)?;
    let first = simulate_path(&spec, &p.policy, PathSeed::new(seed, 0), &SimOptions { record: true, ..opts })?;
    let ticks: Vec<EventRow> = first
        .events
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::PriceJump { mark } => Some(EventRow { t: e.t, mark }),
            EventKind::ChainSwitch { .. } => None,
        })
        .collect();
    manifest.result("mean", mc.mean);
    manifest.result("std_error", mc.std_error);
    println!("mean {:.4} +- {:.4} (1 s.e.) over {n} paths", mc.mean, mc.std_error);

    let mut out = Outputs::new(&c.out);
    out.add_rows("paths.csv", &mc.paths)?;
    if ticks.is_empty() {
        out.add("events.csv", b"t,mark\n".to_vec());
    } else {
        out.add_rows("events.csv", &ticks)?;
    }
    out.commit(manifest)
}

fn cmd_evaluate(c: &Common, policy_str: &str) -> Result<()> {
    let Loaded { recipe, spec, mut manifest } = c.load("evaluate")?;
    let grid = c.grid(&recipe, &mut manifest)?;
    let seed = c.seed(&recipe, &mut manifest);
    let n = c.paths(&recipe, &mut manifest)?;
    let opts = c.sim_options(&recipe, &mut manifest);
    manifest.setting("policy", policy_str);
    let p = policy::resolve(policy_str, &spec, &grid, c.cache_dir.as_deref())?;
    manifest.result("policy_source", p.source.clone());
    let mc = mc_evaluate(&spec, &p.policy, n as u64, seed, &opts)?;
    check_bound(&spec, "Monte Carlo mean", mc.mean, &mut manifest)?;
    manifest.result("mean", mc.mean);
    manifest.result("std_error", mc.std_error);
    let mut summary = vec![fmt(mc.mean), fmt(mc.std_error), n.to_string(), String::new()];
    print!("mean {:.4} +- {:.4} (1 s.e.)", mc.mean, mc.std_error);
    if let Some(v) = p.pde_value {
        manifest.result("pde_value", v);
        summary[3] = fmt(v);
        print!(", PDE value {v:.4}");
    }
    println!();
    let mut out = Outputs::new(&c.out);
    out.add_rows("paths.csv", &mc.paths)?;
    out.add_table("summary.csv", &["mean", "std_error", "paths", "pde_value"], &[summary])?;
    out.commit(manifest)
}

fn cmd_compare(c: &Common, a: Option<&str>, b: Option<&str>) -> Result<()> {
    let Loaded { recipe, spec, mut manifest } = c.load("compare")?;
    let a = a.or(recipe.compare.as_ref().map(|s| s.a.as_str())).unwrap_or("filter").to_string();
    let b = b.or(recipe.compare.as_ref().map(|s| s.b.as_str())).unwrap_or("deterministic").to_string();
    let grid = c.grid(&recipe, &mut manifest)?;
    let seed = c.seed(&recipe, &mut manifest);
    let n = c.paths(&recipe, &mut manifest)?;
    let opts = c.sim_options(&recipe, &mut manifest);
    manifest.setting("policy_a", a.as_str());
    manifest.setting("policy_b", b.as_str());
    let pa = policy::resolve(&a, &spec, &grid, c.cache_dir.as_deref())?;
    let pb = policy::resolve(&b, &spec, &grid, c.cache_dir.as_deref())?;
    let cmp = compare_policies(&spec, &pa.policy, &pb.policy, n as u64, seed, &opts)?;
    check_bound(&spec, "Monte Carlo mean of policy a", cmp.mean_a, &mut manifest)?;
    check_bound(&spec, "Monte Carlo mean of policy b", cmp.mean_b, &mut manifest)?;
    for (k, v) in [
        ("gain", cmp.gain),
        ("gain_half_width_95", cmp.half_width),
        ("mean_a", cmp.mean_a),
        ("mean_b", cmp.mean_b),
        ("std_error_a", cmp.std_error_a),
        ("std_error_b", cmp.std_error_b),
    ] {
        manifest.result(k, v);
    }
    println!(
        "gain {:.4} +- {:.4} (95%); a: {:.4}, b: {:.4}",
        cmp.gain, cmp.half_width, cmp.mean_a, cmp.mean_b
    );
    let mut out = Outputs::new(&c.out);
    out.add_rows("compare.csv", &cmp.paths)?;
    out.add_table(
        "summary.csv",
        &["gain", "half_width_95", "mean_a", "mean_b", "std_error_a", "std_error_b", "paths"],
        &[vec![
            fmt(cmp.gain),
            fmt(cmp.half_width),
            fmt(cmp.mean_a),
            fmt(cmp.mean_b),
            fmt(cmp.std_error_a),
            fmt(cmp.std_error_b),
            n.to_string(),
        ]],
    )?;
    out.commit(manifest)
}

fn cmd_calibrate(c: &Common, events: Option<&Path>, signed_ticks: bool) -> Result<()> {
    let Loaded { recipe, spec, mut manifest } = c.load("calibrate")?;
    let cal = recipe.calibration.clone().unwrap_or_default();
    let mut out = Outputs::new(&c.out);
    let (log, horizon) = match events {
        Some(path) => {
            let enc = if signed_ticks { MarkEncoding::signed_ticks_for(&spec)? } else { MarkEncoding::Index };
            let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let log = EventLog::read_csv(f, enc).with_context(|| format!("reading {}", path.display()))?;
            let horizon = cal.data_horizon.or(log.last_time()).unwrap_or(0.0);
            manifest.setting("events", path.display().to_string());
            (log, horizon)
        }
        None => {
            let horizon = cal.data_horizon.unwrap_or(12.0);
            let seed = c.seed(&recipe, &mut manifest);
            let (log, _) = simulate_observations(&spec, horizon, PathSeed::new(seed, 0))?;
            let mut buf = Vec::new();
            log.write_csv(&mut buf)?;
            out.add("events.csv", buf);
            (log, horizon)
        }
    };
    manifest.setting("data_horizon", horizon);
    manifest.result("events", log.len() as i64);

    let states = cal.states.unwrap_or(spec.n_states());
    let mut config = EmConfig::moment(states, spec.n_marks());
    config.max_iters = cal.max_iters.unwrap_or(config.max_iters);
    config.tol = cal.tol.unwrap_or(config.tol);
    config.estimate_generator = cal.estimate_generator.unwrap_or(config.estimate_generator);
    manifest.setting("states", states as i64);
    manifest.setting("max_iters", config.max_iters as i64);
    manifest.setting("tol", config.tol);
    manifest.setting("estimate_generator", config.estimate_generator);

    let fit = em_fit(&log, horizon, &config)?;
    for w in &fit.warnings {
        manifest.warn(w.clone());
    }
    if let Some(w) = fit.loglik_trace.windows(2).find(|w| w[1] < w[0] - 1e-8 * w[0].abs().max(1.0)) {
        bail!("log-likelihood decreased from {} to {}", w[0], w[1]);
    }
    manifest.result("iterations", fit.iterations as i64);
    manifest.result("loglik", fit.loglik());
    for (k, row) in fit.intensity.iter().enumerate() {
        println!("state {}: intensities {:?}", k + 1, row.iter().map(|x| (x * 10.0).round() / 10.0).collect::<Vec<_>>());
    }

    let fragment = ParameterFragment {
        chain: ChainSection::from(&fit.chain),
        jumps: JumpsSection {
            marks: spec.jumps.marks().to_vec(),
            intensity: fit.intensity.clone(),
            impact: spec.jumps.impact().to_vec(),
            time_multiplier: None,
        },
    };
    out.add("params.toml", fragment.to_toml_string().into_bytes());
    let y: Vec<Vec<String>> = fit.y_hat.iter().map(|&(t, y)| vec![fmt(t), fmt(y)]).collect();
    out.add_table("y_hat.csv", &["t", "y_hat"], &y)?;
    let ll: Vec<Vec<String>> =
        fit.loglik_trace.iter().enumerate().map(|(i, l)| vec![i.to_string(), fmt(*l)]).collect();
    out.add_table("loglik.csv", &["iteration", "loglik"], &ll)?;
    out.commit(manifest)
}

fn cmd_oracle_check(c: &Common) -> Result<()> {
    let Loaded { recipe, spec, mut manifest } = c.load("oracle-check")?;
    let params = OracleParams::from_spec(&spec)?;
    let grid = c.grid(&recipe, &mut manifest)?;
    let (field, key) = policy::solve_cached(&spec, &grid, c.cache_dir.as_deref())?;
    record_field(&field, &key, &mut manifest);
    let (abs, rel, rows) = oracle_errors(&field, &params)?;
    manifest.result("oracle_sup_error", abs);
    manifest.result("oracle_sup_relative_error", rel);
    println!("sup |V - V_exact| = {abs:.4e}; relative to max |V_exact|: {rel:.4e}");
    let mut out = Outputs::new(&c.out);
    out.add_table("oracle.csv", &["t", "w", "V", "V_exact", "error"], &rows)?;
    out.commit(manifest)
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Solve { common, layer_stride } => cmd_solve(common, *layer_stride),
        Command::Simulate { common, policy } => cmd_simulate(common, policy),
        Command::Evaluate { common, policy } => cmd_evaluate(common, policy),
        Command::Compare { common, a, b } => cmd_compare(common, a.as_deref(), b.as_deref()),
        Command::Calibrate { common, events, signed_ticks } => cmd_calibrate(common, events.as_deref(), *signed_ticks),
        Command::OracleCheck { common } => cmd_oracle_check(common),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;
    use liquidation_core::Event;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn events_serialize_with_header() {
        let log = EventLog::new(vec![Event { t: 0.5, mark: 1 }]).unwrap();
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,mark\n0.5,1\n");
    }
}
