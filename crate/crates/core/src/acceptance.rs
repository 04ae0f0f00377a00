//! End-to-end checks of the library against known values.
//!
//! Each check runs a full computation (exact chain, simulation, ODE or pool
//! run) and compares it with a closed form or a reference value at a fixed
//! tolerance. The `Quick` profile shortens the longest simulations and uses
//! the correspondingly wider tolerance where one is defined.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::error::Result;
use crate::kidney::{self, CompatModel, HorizonConfig, PopulationConfig};
use crate::meanfield::{self, MeanFieldState, TwoTypeState};
use crate::montecarlo::{self, check_5_over_m, group_tails, run_chain, tails, variance_growth};
use crate::oracle::{self, TruncatedChain};
use crate::reduction::{parse_rational, reduce, simulate_grouped};
use crate::two_agent;
use crate::Rule;

pub const CRITERIA: usize = 13;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Quick,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub id: usize,
    pub title: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {} ({:.1}s): {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds,
            self.detail
        )
    }
}

/// Criteria that cannot pass with a faithful implementation, with the reason.
pub fn known_unattainable(id: usize) -> Option<&'static str> {
    match id {
        12 => Some(
            "with equal rate ratios the two-type ODE has the single-type equilibrium as its fixed point, \
             whose M = 1 mass 0.6156 lies 0.032 below the n = 10 type-A table value 0.6476",
        ),
        _ => None,
    }
}

pub fn title(id: usize) -> &'static str {
    match id {
        1 => "two-agent closed form vs exact chain",
        2 => "symmetric two-agent simulation",
        3 => "mean-field equilibrium",
        4 => "(1/2)^M bound at the mean-field limit",
        5 => "n = 50 tail values",
        6 => "5/M tail bound",
        7 => "d = 1 variance growth",
        8 => "mean-field integration",
        9 => "Lipschitz constant",
        10 => "intermediate availability",
        11 => "group reduction",
        12 => "two-type system",
        13 => "kidney pool",
        _ => "unknown",
    }
}

/// Runs one criterion. Errors from the library count as failures.
pub fn run_criterion(id: usize, profile: Profile) -> CriterionResult {
    let start = Instant::now();
    let outcome = match id {
        1 => closed_form_vs_oracle(),
        2 => symmetric_two_agent(),
        3 => equilibrium(),
        4 => half_bound(),
        5 => fifty_agents(profile),
        6 => five_over_m(profile),
        7 => d1_variance(),
        8 => mean_field_integration(),
        9 => lipschitz(),
        10 => intermediate(profile),
        11 => group_reduction(),
        12 => two_types(profile),
        13 => kidney_pool(profile),
        _ => Ok((false, format!("no criterion {id}"))),
    };
    let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    CriterionResult {
        id,
        title: title(id).into(),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(profile: Profile) -> Vec<CriterionResult> {
    (1..=CRITERIA)
        .map(|id| run_criterion(id, profile))
        .collect()
}

type Outcome = Result<(bool, String)>;

fn fmt_list(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn closed_form_vs_oracle() -> Outcome {
    let configs = [
        ([0.6, 0.4], [0.55, 0.45]),
        ([0.6, 0.4], [0.6, 0.4]),
        ([0.7, 0.3], [0.6, 0.4]),
        ([0.45, 0.55], [0.5, 0.5]),
        ([0.3, 0.7], [0.45, 0.55]),
    ];
    let start = Instant::now();
    let mut worst = 0.0f64;
    for (p, q) in configs {
        let sol = two_agent::solve(p, q, 2)?;
        let steady = sol
            .steady()
            .ok_or_else(|| crate::Error::invalid(format!("{p:?}/{q:?} is unstable")))?;
        let cfg = SystemConfig::new(p.to_vec(), q.to_vec(), 2)?;
        let chain = TruncatedChain::build(&cfg, 60)?;
        let st = oracle::stationary(&chain)?;
        for m in 0..=30u32 {
            for agent in 0..2 {
                let exact = oracle::tail(&chain, &st.pi, agent, m as i64);
                worst = worst.max((exact - steady.tail(m)).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok((
        worst < 1e-8 && secs < 10.0,
        format!("max abs error {worst:.2e} over 5 configs, {secs:.2}s"),
    ))
}

fn symmetric_two_agent() -> Outcome {
    let (steps, burn) = (2_000_000, 200_000);
    let start = Instant::now();
    let stats = run_chain(&SystemConfig::symmetric(2, 2)?.with_seed(11), steps, burn)?;
    let est = tails(&stats, 4);
    let mut worst = 0.0f64;
    for m in 1..=4 {
        let target = (2.0 / 3.0) * (1.0f64 / 3.0).powi(m as i32);
        worst = worst.max((est.per_agent[0].tail(m) - target).abs());
    }
    let z = montecarlo::ZeroReturnSummary::from_gaps(&stats.zero_returns);
    let secs = start.elapsed().as_secs_f64();
    let ok = worst <= 0.005 && (z.mean - 3.0).abs() <= 0.05 && secs < 30.0;
    Ok((
        ok,
        format!(
            "max tail error {worst:.4} (<= 0.005), mean zero-return gap {:.3} (3 +- 0.05)",
            z.mean
        ),
    ))
}

fn equilibrium() -> Outcome {
    let start = Instant::now();
    let eq = meanfield::solve_equilibrium(2, meanfield::DEFAULT_TOL)?;
    let secs = start.elapsed().as_secs_f64();
    let pm4 = eq.pi(-4);
    let ok = (0.66..=0.68).contains(&eq.pi0)
        && eq.residual.abs() < 1e-12
        && (0.970..=0.980).contains(&pm4)
        && secs < 1.0;
    Ok((
        ok,
        format!(
            "pi0 = {:.6}, residual {:.1e}, pi_-4 = {pm4:.4}",
            eq.pi0, eq.residual
        ),
    ))
}

fn half_bound() -> Outcome {
    let start = Instant::now();
    let eq = meanfield::solve_equilibrium(2, meanfield::DEFAULT_TOL)?;
    let report = meanfield::verify_half_bound(&eq, 40)?;
    let secs = start.elapsed().as_secs_f64();
    Ok((
        report.min >= 0.0 && secs < 1.0,
        format!("min g(M) over M = 1..40 is {:.3e}", report.min),
    ))
}

const FIFTY_TARGETS: [f64; 4] = [0.6184, 0.8645, 0.9500, 0.9759];

fn fifty_agents(profile: Profile) -> Outcome {
    let (steps, tol) = match profile {
        Profile::Full => (20_000_000, 0.02),
        Profile::Quick => (2_000_000, 0.03),
    };
    let stats = run_chain(
        &SystemConfig::symmetric(50, 2)?.with_seed(5),
        steps,
        steps / 20,
    )?;
    let est = tails(&stats, 4);
    let got: Vec<f64> = (1..=4).map(|m| est.mean.p[m]).collect();
    let worst = got
        .iter()
        .zip(FIFTY_TARGETS)
        .map(|(g, t)| (g - t).abs())
        .fold(0.0, f64::max);
    Ok((
        worst <= tol,
        format!(
            "T = {steps:.0e}: p = {} (max deviation {worst:.4}, tol {tol})",
            fmt_list(&got)
        ),
    ))
}

fn five_over_m(profile: Profile) -> Outcome {
    let steps = match profile {
        Profile::Full => 2_000_000,
        Profile::Quick => 500_000,
    };
    let cases: Vec<(usize, usize)> = [2, 3, 5, 10]
        .iter()
        .flat_map(|&n| [(n, 2), (n, 3)])
        .collect();
    let reports = cases
        .par_iter()
        .map(|&(n, d)| {
            let stats = run_chain(
                &SystemConfig::symmetric(n, d)?.with_seed(60 + n as u64 * 10 + d as u64),
                steps,
                steps / 10,
            )?;
            Ok(((n, d), check_5_over_m(&tails(&stats, 30))))
        })
        .collect::<Result<Vec<_>>>()?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|(_, r)| !r.passed())
        .map(|((n, d), _)| format!("n={n},d={d}"))
        .collect();
    let worst = reports
        .iter()
        .map(|(_, r)| r.worst_margin)
        .fold(f64::INFINITY, f64::min);
    Ok((
        failed.is_empty(),
        format!(
            "8 configs, M <= 30, smallest margin {worst:.4}; violations: {}",
            if failed.is_empty() {
                "none".into()
            } else {
                failed.join(" ")
            }
        ),
    ))
}

fn d1_variance() -> Outcome {
    let seeds: Vec<u64> = (1..=50).collect();
    let g = variance_growth(&SystemConfig::symmetric(10, 1)?, 100_000, 200_000, &seeds)?;
    Ok((
        (1.6..=2.4).contains(&g.ratio),
        format!(
            "Var ratio {:.3} (variances {:.0} and {:.0}, exact {:.0} and {:.0})",
            g.ratio,
            g.var_t1,
            g.var_t2,
            g.exact_t1.unwrap_or(f64::NAN),
            g.exact_t2.unwrap_or(f64::NAN)
        ),
    ))
}

fn mean_field_integration() -> Outcome {
    let eq = meanfield::solve_equilibrium(2, meanfield::DEFAULT_TOL)?.default_window();
    let start = MeanFieldState::step_initial(meanfield::DEFAULT_LO, meanfield::DEFAULT_HI, 2)?;
    let tr = meanfield::integrate(&start, 200.0, 0.01)?;
    let dist = tr.last().l1_distance(&eq)?;
    let drift = tr.diagnostics.max_mass_drift;
    Ok((
        dist < 1e-4 && drift < 1e-8,
        format!("L1 distance at T = 200 is {dist:.2e}, max mass drift {drift:.1e}"),
    ))
}

fn lipschitz() -> Outcome {
    let reports: Vec<_> = [2u32, 3]
        .iter()
        .map(|&d| meanfield::lipschitz_spot_check(d, 10_000, 9 + d as u64))
        .collect();
    let ok = reports.iter().all(|r| r.violations == 0);
    let parts: Vec<String> = reports
        .iter()
        .map(|r| format!("d={}: max ratio {:.3} <= {}", r.d, r.max_ratio, r.bound))
        .collect();
    Ok((ok, format!("{} (10^4 pairs each)", parts.join("; "))))
}

fn intermediate(profile: Profile) -> Outcome {
    let steps = match profile {
        Profile::Full => 4_000_000,
        Profile::Quick => 1_000_000,
    };
    let betas = [0.25, 0.5, 0.75];
    let rows = betas
        .par_iter()
        .map(|&beta| {
            let cfg = SystemConfig::symmetric(2, 2)?
                .with_beta(beta)?
                .with_seed(100 + (beta * 100.0) as u64);
            let est = tails(&run_chain(&cfg, steps, steps / 10)?, 8);
            let worst = (1..=8)
                .map(|m| {
                    let target =
                        1.0 - (2.0 / (2.0 + beta)) * ((2.0 - beta) / (2.0 + beta)).powi(m as i32);
                    (est.mean.p[m] - target).abs()
                })
                .fold(0.0, f64::max);
            Ok((beta, worst))
        })
        .collect::<Result<Vec<_>>>()?;
    let ok = rows.iter().all(|r| r.1 <= 0.01);
    let parts: Vec<String> = rows
        .iter()
        .map(|(b, w)| format!("beta {b}: {w:.4}"))
        .collect();
    Ok((
        ok,
        format!("max deviation over M <= 8 ({}), tol 0.01", parts.join(", ")),
    ))
}

fn group_reduction() -> Outcome {
    let p = ["0.5", "0.3", "0.2"]
        .iter()
        .map(|s| parse_rational(s))
        .collect::<Result<Vec<_>>>()?;
    let gs = reduce(&p, &p)?;
    let sizes: Vec<u64> = gs.groups.iter().map(|g| g.size).collect();
    let run = simulate_grouped(&gs, 100_000, 21, 1_000)?;
    let ok = sizes == [5, 3, 2] && gs.total == 10 && run.violations == 0;
    Ok((
        ok,
        format!(
            "g = {sizes:?}, N = {}, {} cross-group transfers, {} violations",
            gs.total, run.cross_group_transfers, run.violations
        ),
    ))
}

const TABLE_A: [f64; 4] = [0.6476, 0.8753, 0.9510, 0.9767];
const TABLE_B: [f64; 4] = [0.6410, 0.8645, 0.9512, 0.9809];

fn two_types(profile: Profile) -> Outcome {
    let steps = match profile {
        Profile::Full => 20_000_000,
        Profile::Quick => 2_000_000,
    };
    // f = 4 agents of type A with rate 1/64 and six of type B with rate 10/64.
    let rates: Vec<f64> = (0..10)
        .map(|i| if i < 4 { 1.0 / 64.0 } else { 10.0 / 64.0 })
        .collect();
    let cfg = SystemConfig::new(rates.clone(), rates, 2)?.with_seed(12);
    let stats = run_chain(&cfg, steps, steps / 20)?;
    let a = group_tails(&stats, 4, &[0, 1, 2, 3]);
    let b = group_tails(&stats, 4, &[4, 5, 6, 7, 8, 9]);
    let mc_a: Vec<f64> = (1..=4).map(|m| a.p[m]).collect();
    let mc_b: Vec<f64> = (1..=4).map(|m| b.p[m]).collect();

    let st = TwoTypeState::step_initial(meanfield::DEFAULT_LO, meanfield::DEFAULT_HI, 10.0, 10.0)?;
    let tr = meanfield::two_type_integrate(&st, 400.0, meanfield::DEFAULT_DT)?;
    let last = tr.last();
    let ode_a: Vec<f64> = (1..=4).map(|m| last.p_inf_a(m)).collect();
    let ode_b: Vec<f64> = (1..=4).map(|m| last.p_inf_b(m)).collect();

    let dev = |v: &[f64], t: &[f64; 4]| {
        v.iter()
            .zip(t)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    };
    let (d_mc, d_ode) = (
        dev(&mc_a, &TABLE_A).max(dev(&mc_b, &TABLE_B)),
        dev(&ode_a, &TABLE_A).max(dev(&ode_b, &TABLE_B)),
    );
    Ok((
        d_mc <= 0.03 && d_ode <= 0.03,
        format!(
            "simulation A {} B {} (max dev {d_mc:.4}); ODE A {} B {} (max dev {d_ode:.4}); tol 0.03",
            fmt_list(&mc_a),
            fmt_list(&mc_b),
            fmt_list(&ode_a),
            fmt_list(&ode_b)
        ),
    ))
}

fn kidney_pool(profile: Profile) -> Outcome {
    let days = match profile {
        Profile::Full => 100_000,
        Profile::Quick => 20_000,
    };
    let cfg = PopulationConfig::default();
    // Ledger balance is audited after every day; a breach is an error.
    let pop = kidney::generate_population(&cfg, 1)?;
    let compat = CompatModel::new(&pop);
    let mut hc = HorizonConfig::new(days, Rule::MinToken, 1);
    hc.record_events = true;
    let run = kidney::run_horizon(&pop, &compat, &hc)?;
    let audited = kidney::audit_min_token(&pop, &compat, &run.events)?;
    let seeds: Vec<u64> = (1..=20).collect();
    let cmp = kidney::compare_rules(&cfg, days, &seeds)?;
    let share = cmp.min_token_share();
    let n = cmp.rows.len() as f64;
    let choice = cmp.rows.iter().map(|r| r.choice_share).sum::<f64>() / n;
    let cands = cmp.rows.iter().map(|r| r.mean_candidates).sum::<f64>() / n;
    Ok((
        share >= 0.8,
        format!(
            "T = {days}: ledgers balanced every day, {audited} matches replayed; min-token smaller in {:.0}% of 20 seeds; \
             >=2-candidate share {:.2} (reference ~0.67), mean candidates {:.1} (reference ~7)",
            share * 100.0,
            choice,
            cands
        ),
    ))
}
