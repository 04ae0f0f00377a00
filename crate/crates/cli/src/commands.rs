use std::fs;
use std::io::Write;

use clap::Args;
use log::warn;
use serde::Serialize;
use serde_json::json;

use scrip_core::acceptance::{self, Profile};
use scrip_core::kidney::{self, CompatModel, HorizonConfig, PopulationConfig};
use scrip_core::meanfield::{self, MeanFieldState, TwoTypeState};
use scrip_core::montecarlo::{self, ZeroReturnSummary};
use scrip_core::oracle::{self, TruncatedChain};
use scrip_core::reduction::{self, parse_rational};
use scrip_core::two_agent::{self, TwoAgentSolution};
use scrip_core::{Rule, SystemConfig};

use crate::output::Outputs;
use crate::{Cli, CliError, Command, SystemArgs};

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::Sweep(a) => sweep(cli, a),
        Command::Exact2(a) => exact2(cli, a),
        Command::Oracle(a) => run_oracle(cli, a),
        Command::Meanfield(a) => run_meanfield(cli, a),
        Command::Equilibrium(a) => equilibrium(cli, a),
        Command::Reduce(a) => run_reduce(cli, a),
        Command::Kidney(a) => run_kidney(cli, a),
        Command::Check(a) => check(cli, a),
    }
}

/// Pretty-prints a report on stdout; a closed pipe is not an error.
fn emit<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value)?;
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        r => Ok(r?),
    }
}

fn parse_rule(s: &str) -> Result<Rule, CliError> {
    Ok(s.parse::<Rule>()?)
}

/// Builds a configuration from an optional file plus flag overrides.
fn system_config(a: &SystemArgs) -> Result<SystemConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => Some(SystemConfig::from_json(&fs::read_to_string(path)?)?),
        None => None,
    };
    if a.p.is_some() || a.q.is_some() || a.n.is_some() || cfg.is_none() {
        let d = a.d.or(cfg.as_ref().map(|c| c.d)).unwrap_or(2);
        let fresh = match (&a.p, &a.q) {
            (Some(p), Some(q)) => SystemConfig::new(p.clone(), q.clone(), d)?,
            (Some(p), None) => SystemConfig::new(p.clone(), p.clone(), d)?,
            (None, Some(_)) => return Err(CliError::Usage("--q needs --p".into())),
            (None, None) => {
                let n =
                    a.n.or(cfg.as_ref().map(|c| c.n))
                        .ok_or_else(|| CliError::Usage("give --n, --p/--q or --config".into()))?;
                SystemConfig::symmetric(n, d)?
            }
        };
        if let (Some(n), Some(p)) = (a.n, &a.p) {
            if n != p.len() {
                return Err(CliError::Usage(format!(
                    "--n {n} disagrees with {} entries in --p",
                    p.len()
                )));
            }
        }
        cfg = Some(match cfg {
            Some(old) => SystemConfig {
                rule: old.rule,
                beta: old.beta,
                seed: old.seed,
                ..fresh
            },
            None => fresh,
        });
    }
    let mut cfg = cfg.expect("set above");
    if let Some(d) = a.d {
        cfg.d = d;
    }
    if let Some(r) = &a.rule {
        cfg.rule = parse_rule(r)?;
    }
    if let Some(b) = a.beta {
        cfg.beta = Some(b);
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    #[arg(long, default_value_t = montecarlo::DEFAULT_STEPS)]
    pub steps: u64,
    #[arg(long, default_value_t = montecarlo::DEFAULT_BURN_IN)]
    pub burn_in: u64,
    /// Largest M in the tail table.
    #[arg(long, default_value_t = 10)]
    pub m_max: usize,
    /// Run the grouped symmetric system for rational rates (p = q) given by --rates.
    #[arg(long)]
    pub grouped: bool,
    /// Rates such as 0.5,0.3,0.2 or 1/2,1/3,1/6 (with --grouped).
    #[arg(long, value_delimiter = ',')]
    pub rates: Option<Vec<String>>,
    /// Record group values every this many steps (with --grouped).
    #[arg(long, default_value_t = 1000)]
    pub record_every: u64,
}

#[derive(Serialize)]
struct TailRow {
    agent: String,
    #[serde(rename = "M")]
    m: usize,
    p: f64,
    q: f64,
    r: f64,
    stderr_p: f64,
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    if a.grouped {
        return simulate_grouped(cli, a);
    }
    let cfg = system_config(&a.system)?;
    if cfg.d == 1 && cfg.beta.is_none() {
        eprintln!("warning: system is not stable for d=1; balances spread without bound");
    }
    let stats = montecarlo::run_chain(&cfg, a.steps, a.burn_in)?;
    let est = montecarlo::tails(&stats, a.m_max);
    let mut out = Outputs::new(&cli.out, "simulate")?;
    {
        let mut w = csv::Writer::from_writer(out.create("tails.csv")?);
        let mut put = |agent: String, s: &montecarlo::TailSeries| -> Result<(), CliError> {
            for m in 0..=a.m_max {
                w.serialize(TailRow {
                    agent: agent.clone(),
                    m,
                    p: s.p[m],
                    q: s.q[m],
                    r: s.r[m],
                    stderr_p: s.stderr_p[m],
                })
                .map_err(std::io::Error::other)?;
            }
            Ok(())
        };
        put("mean".into(), &est.mean)?;
        for (i, s) in est.per_agent.iter().enumerate() {
            put(i.to_string(), s)?;
        }
        w.flush()?;
    }
    let zero = ZeroReturnSummary::from_gaps(&stats.zero_returns);
    let bound = montecarlo::check_5_over_m(&est);
    let summary = json!({
        "steps": a.steps,
        "burn_in": a.burn_in,
        "zero_returns": zero,
        "bound_5_over_m": { "passed": bound.passed(), "worst_margin": bound.worst_margin },
        "final_state": stats.final_state.balances(),
    });
    out.json("simulate.json", &summary)?;
    emit(&summary)?;
    let seed = cfg.seed;
    out.finish(
        &json!({ "system": cfg, "steps": a.steps, "burn_in": a.burn_in, "m_max": a.m_max }),
        Some(seed),
    )?;
    Ok(())
}

fn simulate_grouped(cli: &Cli, a: &SimulateArgs) -> Result<(), CliError> {
    let rates = a
        .rates
        .as_ref()
        .ok_or_else(|| CliError::Usage("--grouped needs --rates".into()))?;
    let p = rates
        .iter()
        .map(|s| parse_rational(s))
        .collect::<Result<Vec<_>, _>>()?;
    let gs = reduction::reduce(&p, &p)?;
    let seed = a.system.seed.unwrap_or(0);
    let run = reduction::simulate_grouped(&gs, a.steps, seed, a.record_every)?;
    let mut out = Outputs::new(&cli.out, "simulate")?;
    {
        let mut w = out.create("grouped.csv")?;
        writeln!(w, "t,group,value")?;
        for (t, values) in &run.trajectory {
            for (g, v) in values.iter().enumerate() {
                writeln!(w, "{t},{g},{v}")?;
            }
        }
        w.flush()?;
    }
    let summary = json!({
        "groups": gs,
        "steps": run.steps,
        "cross_group_transfers": run.cross_group_transfers,
        "violations": run.violations,
        "final_values": run.final_values,
        "zero_returns": run.zero_returns,
    });
    out.json("grouped.json", &summary)?;
    emit(&summary)?;
    out.finish(
        &json!({ "rates": rates, "steps": a.steps, "record_every": a.record_every }),
        Some(seed),
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_values_t = vec![2usize, 3, 5, 10, 20, 50])]
    pub n_values: Vec<usize>,
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 10)]
    pub m_max: usize,
    #[arg(long, default_value_t = montecarlo::DEFAULT_STEPS)]
    pub steps: u64,
    #[arg(long, default_value_t = montecarlo::DEFAULT_BURN_IN)]
    pub burn_in: u64,
    #[arg(long, value_delimiter = ',', default_values_t = vec![1u64])]
    pub seeds: Vec<u64>,
}

fn sweep(cli: &Cli, a: &SweepArgs) -> Result<(), CliError> {
    let runs = montecarlo::sweep_n(&a.n_values, a.m_max, a.d, a.steps, a.burn_in, &a.seeds)?;
    let mut out = Outputs::new(&cli.out, "sweep")?;
    montecarlo::write_sweep_csv(out.create("sweep.csv")?, &runs)?;
    let summary = json!({
        "zero_returns": runs.iter().map(|r| json!({ "n": r.n, "seed": r.seed, "mean": r.zero_returns.mean, "stderr": r.zero_returns.stderr })).collect::<Vec<_>>(),
        "monotonicity_notes": montecarlo::monotonicity_notes(&runs),
    });
    out.json("sweep.json", &summary)?;
    out.finish(
        &json!({ "n_values": a.n_values, "d": a.d, "m_max": a.m_max, "steps": a.steps, "burn_in": a.burn_in, "seeds": a.seeds }),
        a.seeds.first().copied(),
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct Exact2Args {
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.5])]
    pub p: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.5])]
    pub q: Vec<f64>,
    #[arg(long, default_value_t = 2)]
    pub d: u32,
    /// Two draws with this probability and one otherwise (overrides --d).
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub m_max: u32,
}

fn pair(v: &[f64], name: &str) -> Result<[f64; 2], CliError> {
    <[f64; 2]>::try_from(v)
        .map_err(|_| CliError::Usage(format!("--{name} needs exactly two values")))
}

fn exact2(cli: &Cli, a: &Exact2Args) -> Result<(), CliError> {
    let (p, q) = (pair(&a.p, "p")?, pair(&a.q, "q")?);
    let sol = match a.beta {
        Some(beta) => two_agent::solve_intermediate(p, q, beta)?,
        None => two_agent::solve(p, q, a.d)?,
    };
    let mut out = Outputs::new(&cli.out, "exact2")?;
    let report = match &sol {
        TwoAgentSolution::Stable(s) => {
            let tail: Vec<(u32, f64)> = (0..=a.m_max).map(|m| (m, s.tail(m))).collect();
            let mut w = out.create("exact2_tail.csv")?;
            writeln!(w, "M,tail")?;
            for (m, t) in &tail {
                writeln!(w, "{m},{t}")?;
            }
            w.flush()?;
            json!({
                "stable": true,
                "pi00": s.pi00(),
                "expected_return": s.expected_return(),
                "decay_a": two_agent::decay_constant(s, two_agent::DEFAULT_M_CAP)?,
                "tail": tail,
                "x": s.x, "y": s.y, "u": s.u, "v": s.v,
            })
        }
        TwoAgentSolution::Unstable { ratios } => json!({ "stable": false, "ratios": ratios }),
    };
    out.json("exact2.json", &report)?;
    emit(&report)?;
    out.finish(
        &json!({ "p": p, "q": q, "d": a.d, "beta": a.beta, "m_max": a.m_max }),
        None,
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub system: SystemArgs,
    /// Box radius: every balance is kept within [-B, B].
    #[arg(long, default_value_t = 20)]
    pub bound: u32,
    #[arg(long, default_value_t = 10)]
    pub m_max: i64,
    #[arg(long, default_value_t = oracle::DEFAULT_MAX_ITERATIONS)]
    pub max_iterations: usize,
}

fn run_oracle(cli: &Cli, a: &OracleArgs) -> Result<(), CliError> {
    let cfg = system_config(&a.system)?;
    let chain = TruncatedChain::build(&cfg, a.bound)?;
    let st = oracle::stationary_with(&chain, a.max_iterations)?;
    let zero = vec![0i64; cfg.n];
    let tails: Vec<Vec<f64>> = (0..cfg.n)
        .map(|i| {
            (0..=a.m_max)
                .map(|m| oracle::tail(&chain, &st.pi, i, m))
                .collect()
        })
        .collect();
    let report = json!({
        "states": chain.len(),
        "residual": st.residual,
        "iterations": st.iterations,
        "pi_zero": chain.index_of(&zero).map(|k| st.pi[k]),
        "expected_return": oracle::expected_return_time(&chain, &st.pi, &zero)?,
        "tails": tails,
    });
    let mut out = Outputs::new(&cli.out, "oracle")?;
    oracle::write_marginals_csv(out.create("marginals.csv")?, &chain, &st.pi)?;
    out.json("oracle.json", &report)?;
    emit(&report)?;
    out.finish(
        &json!({ "system": cfg, "bound": a.bound, "m_max": a.m_max }),
        Some(cfg.seed),
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct MeanfieldArgs {
    #[arg(long, default_value_t = 2)]
    pub d: u32,
    #[arg(long, default_value_t = meanfield::DEFAULT_LO, allow_hyphen_values = true)]
    pub lo: i64,
    #[arg(long, default_value_t = meanfield::DEFAULT_HI)]
    pub hi: i64,
    #[arg(long, default_value_t = 200.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = meanfield::DEFAULT_DT)]
    pub dt: f64,
    #[arg(long, default_value_t = 1.0)]
    pub record_every: f64,
    /// Integrate the two-type system (d = 2, equal type counts).
    #[arg(long)]
    pub two_type: bool,
    /// p_B / p_A for the two-type system.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// q_B / q_A for the two-type system.
    #[arg(long, default_value_t = 1.0)]
    pub beta_ratio: f64,
}

fn run_meanfield(cli: &Cli, a: &MeanfieldArgs) -> Result<(), CliError> {
    let mut out = Outputs::new(&cli.out, "meanfield")?;
    let summary = if a.two_type {
        if a.d != 2 {
            return Err(CliError::Usage(
                "the two-type system is defined for d = 2".into(),
            ));
        }
        let st = TwoTypeState::step_initial(a.lo, a.hi, a.alpha, a.beta_ratio)?;
        let tr = meanfield::two_type_integrate_recording(&st, a.horizon, a.dt, a.record_every)?;
        let mut w = out.create("meanfield_two_type.csv")?;
        writeln!(w, "t,type,i,z")?;
        for (t, s) in tr.times.iter().zip(&tr.snapshots) {
            for (label, z) in [("A", s.za()), ("B", s.zb())] {
                for (k, v) in z.iter().enumerate() {
                    writeln!(w, "{t},{label},{},{v}", a.lo + k as i64)?;
                }
            }
        }
        w.flush()?;
        let last = tr.last();
        json!({
            "diagnostics": tr.diagnostics,
            "final_drift_l1": tr.final_drift,
            "p_inf_a": (1..=10).map(|m| (m, last.p_inf_a(m))).collect::<Vec<_>>(),
            "p_inf_b": (1..=10).map(|m| (m, last.p_inf_b(m))).collect::<Vec<_>>(),
        })
    } else {
        let st = MeanFieldState::step_initial(a.lo, a.hi, a.d)?;
        let tr = meanfield::integrate_recording(&st, a.horizon, a.dt, a.record_every)?;
        tr.write_csv(out.create("meanfield.csv")?)?;
        let last = tr.last();
        let distance = meanfield::solve_equilibrium(a.d, meanfield::DEFAULT_TOL)
            .and_then(|eq| eq.window(a.lo, a.hi))
            .and_then(|w| last.l1_distance(&w))
            .ok();
        json!({
            "diagnostics": tr.diagnostics,
            "l1_distance_to_equilibrium": distance,
            "p_inf": (1..=10).map(|m| (m, last.p_inf(m))).collect::<Vec<_>>(),
        })
    };
    out.json("meanfield.json", &summary)?;
    emit(&summary)?;
    out.finish(
        &json!({ "d": a.d, "lo": a.lo, "hi": a.hi, "horizon": a.horizon, "dt": a.dt, "two_type": a.two_type,
                 "alpha": a.alpha, "beta_ratio": a.beta_ratio }),
        None,
    )?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct EquilibriumArgs {
    #[arg(long, default_value_t = 2)]
    pub d: u32,
    #[arg(long, default_value_t = meanfield::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 40)]
    pub m_max: u32,
}

fn equilibrium(cli: &Cli, a: &EquilibriumArgs) -> Result<(), CliError> {
    let eq = meanfield::solve_equilibrium(a.d, a.tol)?;
    let g_check = if a.d == 2 {
        match meanfield::verify_half_bound(&eq, a.m_max) {
            Ok(r) => json!({ "status": "pass", "min": r.min }),
            Err(e) => json!({ "status": "fail", "reason": e.to_string() }),
        }
    } else {
        json!({ "status": "not_applicable" })
    };
    let report = json!({
        "pi0": eq.pi0,
        "d": eq.d,
        "residual": eq.residual,
        "window": (meanfield::DEFAULT_LO..=meanfield::DEFAULT_HI).map(|i| (i, eq.pi(i))).collect::<Vec<_>>(),
        "p_inf": (1..=a.m_max).map(|m| (m, eq.p_inf(m))).collect::<Vec<_>>(),
        "g_check": g_check,
    });
    let mut out = Outputs::new(&cli.out, "equilibrium")?;
    out.json("equilibrium.json", &report)?;
    emit(&report)?;
    out.finish(&json!({ "d": a.d, "tol": a.tol, "m_max": a.m_max }), None)?;
    if g_check["status"] == "fail" {
        return Err(CliError::Check("the (1/2)^M bound failed".into()));
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReduceArgs {
    /// Rates (p = q), e.g. 0.5,0.3,0.2 or 1/2,1/3,1/6.
    #[arg(long, value_delimiter = ',', required = true)]
    pub rates: Vec<String>,
    /// Availability rates if different from --rates (rejected unless equal).
    #[arg(long, value_delimiter = ',')]
    pub q: Option<Vec<String>>,
}

fn run_reduce(cli: &Cli, a: &ReduceArgs) -> Result<(), CliError> {
    let p = a
        .rates
        .iter()
        .map(|s| parse_rational(s))
        .collect::<Result<Vec<_>, _>>()?;
    let q = match &a.q {
        Some(q) => q
            .iter()
            .map(|s| parse_rational(s))
            .collect::<Result<Vec<_>, _>>()?,
        None => p.clone(),
    };
    let gs = reduction::reduce(&p, &q)?;
    let mut out = Outputs::new(&cli.out, "reduce")?;
    out.json("reduce.json", &gs)?;
    emit(&gs)?;
    out.finish(&json!({ "rates": a.rates, "q": a.q }), None)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct KidneyArgs {
    /// Population configuration JSON; missing fields take defaults.
    #[arg(long)]
    pub population: Option<std::path::PathBuf>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub hospitals: Option<usize>,
    #[arg(long, default_value_t = 100_000)]
    pub days: u64,
    #[arg(long, default_value = "min_token")]
    pub rule: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub record_every: u64,
    #[arg(long, default_value_t = kidney::DEFAULT_DEPARTURE)]
    pub departure: f64,
    /// Also write the full event log.
    #[arg(long)]
    pub events: bool,
    /// Compare both rules over this many seeds (seed, seed+1, ...) instead of one run.
    #[arg(long)]
    pub compare: Option<u64>,
}

fn run_kidney(cli: &Cli, a: &KidneyArgs) -> Result<(), CliError> {
    let mut pop_cfg = match &a.population {
        Some(path) => serde_json::from_str::<PopulationConfig>(&fs::read_to_string(path)?)
            .map_err(|e| CliError::Usage(format!("population config: {e}")))?,
        None => PopulationConfig::default(),
    };
    if let Some(p) = a.pairs {
        pop_cfg.pairs = p;
    }
    if let Some(h) = a.hospitals {
        pop_cfg.hospitals = h;
    }
    pop_cfg.validate()?;
    let rule = parse_rule(&a.rule)?;
    let mut out = Outputs::new(&cli.out, "kidney")?;
    let manifest_cfg = json!({ "population": pop_cfg, "days": a.days, "rule": rule, "record_every": a.record_every,
                               "departure": a.departure, "events": a.events, "compare": a.compare });
    if let Some(count) = a.compare {
        let seeds: Vec<u64> = (0..count).map(|k| a.seed + k).collect();
        let cmp = kidney::compare_rules(&pop_cfg, a.days, &seeds)?;
        let report = json!({ "min_token_share": cmp.min_token_share(), "comparison": cmp });
        out.json("kidney_compare.json", &report)?;
        emit(&report)?;
        out.finish(&manifest_cfg, Some(a.seed))?;
        return Ok(());
    }
    let pop = kidney::generate_population(&pop_cfg, a.seed)?;
    let compat = CompatModel::new(&pop);
    let hc = HorizonConfig {
        days: a.days,
        rule,
        seed: a.seed,
        record_every: a.record_every,
        departure: a.departure,
        record_events: a.events,
    };
    let run = kidney::run_horizon(&pop, &compat, &hc)?;
    run.write_trajectory_csv(out.create("kidney_trajectory.csv")?)?;
    if a.events {
        kidney::write_events_csv(&run.events, out.create("kidney_events.csv")?)?;
    }
    {
        let mut w = out.create("kidney_pool.csv")?;
        writeln!(w, "day,pool_size")?;
        for (d, s) in &run.pool_sizes {
            writeln!(w, "{d},{s}")?;
        }
        w.flush()?;
    }
    out.json("population.json", &pop)?;
    let d = &run.diagnostics;
    let summary = json!({
        "rule": rule,
        "days": a.days,
        "max_abs_tokens": run.max_abs_tokens(),
        "final_ledger": run.final_pool.ledger(),
        "final_pool_size": run.final_pool.len(),
        "diagnostics": d,
        "choice_share": d.choice_share(),
        "mean_candidates": d.mean_candidates(),
    });
    out.json("kidney.json", &summary)?;
    emit(&summary)?;
    out.finish(&manifest_cfg, Some(a.seed))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Shorter runs with the wider tolerances where defined.
    #[arg(long)]
    pub quick: bool,
    /// Only these criteria (1-13).
    #[arg(long, value_delimiter = ',')]
    pub only: Option<Vec<usize>>,
}

fn check(cli: &Cli, a: &CheckArgs) -> Result<(), CliError> {
    let profile = if a.quick {
        Profile::Quick
    } else {
        Profile::Full
    };
    let ids: Vec<usize> = a
        .only
        .clone()
        .unwrap_or_else(|| (1..=acceptance::CRITERIA).collect());
    if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > acceptance::CRITERIA) {
        return Err(CliError::Usage(format!("no criterion {bad}")));
    }
    let mut results = Vec::new();
    let mut unexpected = Vec::new();
    for &id in &ids {
        let r = acceptance::run_criterion(id, profile);
        println!("{}", r.line());
        if !r.passed {
            match acceptance::known_unattainable(id) {
                Some(reason) => {
                    println!("     known limitation: {reason}");
                    warn!("criterion {id} failed as expected");
                }
                None => unexpected.push(id),
            }
        }
        results.push(r);
    }
    let mut out = Outputs::new(&cli.out, "check")?;
    out.json(
        "check.json",
        &json!({ "profile": profile, "results": results }),
    )?;
    out.finish(&json!({ "profile": profile, "only": ids }), None)?;
    if unexpected.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("criteria {unexpected:?} failed")))
    }
}
