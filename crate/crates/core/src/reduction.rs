//! Reduction of a rational system with `p = q` to a symmetric one.
//!
//! Agent `i` becomes a group of `g_i` identical agents with `g_i / g_j = p_i / p_j`.
//! In the grouped system every agent requests and is available with
//! probability `1/N`. A transfer between groups moves every member of the
//! requester's group down one token and every member of the provider's group
//! up one, so members of a group always agree and the group values follow the
//! original system.

use num_integer::Integer;
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::Rule;
use crate::dynamics::select_provider;
use crate::error::{Error, Result};
use crate::montecarlo::ZeroReturnSummary;
use crate::rng;

pub type Rational = Ratio<i128>;

/// Parses `"3/10"`, `"0.3"` or `"1"` exactly.
pub fn parse_rational(text: &str) -> Result<Rational> {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix('-') {
        return parse_rational(rest).map(|x| -x);
    }
    let bad = || Error::invalid(format!("{t:?} is not a rational number"));
    if let Some((a, b)) = t.split_once('/') {
        let a: i128 = a.trim().parse().map_err(|_| bad())?;
        let b: i128 = b.trim().parse().map_err(|_| bad())?;
        if b == 0 {
            return Err(bad());
        }
        return Ok(Rational::new(a, b));
    }
    let (int, frac) = t.split_once('.').unwrap_or((t, ""));
    if frac.len() > 30 || !frac.chars().all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let int: i128 = if int.is_empty() {
        0
    } else {
        int.parse().map_err(|_| bad())?
    };
    let frac_num: i128 = if frac.is_empty() {
        0
    } else {
        frac.parse().map_err(|_| bad())?
    };
    let den = 10i128.pow(frac.len() as u32);
    Ok(Rational::from_integer(int) + Rational::new(frac_num, den))
}

/// One original agent and the size of its group.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub agent: usize,
    pub size: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedSystem {
    pub groups: Vec<Group>,
    /// Total number of symmetric agents.
    #[serde(rename = "N")]
    pub total: u64,
    /// Group of each symmetric agent.
    pub member_of: Vec<usize>,
}

/// Minimal integer group sizes for `p` (which must equal `q`).
pub fn reduce(p: &[Rational], q: &[Rational]) -> Result<GroupedSystem> {
    if p.is_empty() {
        return Err(Error::invalid("p is empty"));
    }
    if p != q {
        return Err(Error::invalid(
            "the reduction applies only when request and availability rates coincide (p = q)",
        ));
    }
    if let Some(x) = p.iter().find(|x| **x <= Rational::from_integer(0)) {
        return Err(Error::invalid(format!("rate {x} is not positive")));
    }
    let total: Rational = p.iter().sum();
    if total != Rational::from_integer(1) {
        return Err(Error::invalid(format!("rates sum to {total}, not 1")));
    }
    let lcm = p.iter().fold(1i128, |acc, x| acc.lcm(x.denom()));
    let scaled: Vec<i128> = p.iter().map(|x| (x * lcm).to_integer()).collect();
    let gcd = scaled.iter().fold(0i128, |acc, &x| acc.gcd(&x));
    let sizes: Vec<u64> = scaled
        .iter()
        .map(|&x| {
            u64::try_from(x / gcd).map_err(|_| Error::Infeasible("group size overflows".into()))
        })
        .collect::<Result<_>>()?;
    let total: u64 = sizes.iter().sum();
    if total > 10_000_000 {
        return Err(Error::Infeasible(format!(
            "{total} symmetric agents is too many"
        )));
    }
    let member_of = sizes
        .iter()
        .enumerate()
        .flat_map(|(g, &s)| std::iter::repeat(g).take(s as usize))
        .collect();
    Ok(GroupedSystem {
        groups: sizes
            .into_iter()
            .enumerate()
            .map(|(agent, size)| Group { agent, size })
            .collect(),
        total,
        member_of,
    })
}

/// Outcome of [`simulate_grouped`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GroupedRun {
    pub steps: u64,
    /// Group values (one per original agent) at the end.
    pub final_values: Vec<i64>,
    /// Group values every `record_every` steps, starting at time 0.
    pub trajectory: Vec<(u64, Vec<i64>)>,
    pub cross_group_transfers: u64,
    /// Steps at which two members of a group disagreed. Always zero unless there is a bug.
    pub violations: u64,
    pub zero_returns: ZeroReturnSummary,
}

/// Runs the symmetric system with two availability draws, auditing every step.
pub fn simulate_grouped(
    gs: &GroupedSystem,
    steps: u64,
    seed: u64,
    record_every: u64,
) -> Result<GroupedRun> {
    let n = gs.total as usize;
    let k = gs.groups.len();
    let mut members = vec![0i64; n];
    let mut group_of_member: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (a, &g) in gs.member_of.iter().enumerate() {
        group_of_member[g].push(a);
    }
    let mut values = vec![0i64; k];
    let mut rng = rng::from_seed(seed);
    let mut violations = 0u64;
    let mut cross = 0u64;
    let mut gaps = Vec::new();
    let mut last_zero = 0u64;
    let mut trajectory = vec![(0, values.clone())];
    let record_every = record_every.max(1);
    let mut available = [0usize; 2];
    for t in 1..=steps {
        let requester = rng.gen_range(0..n);
        available[0] = rng.gen_range(0..n);
        available[1] = rng.gen_range(0..n);
        let provider = select_provider(&members, &available, Rule::MinToken, &mut rng)?;
        let (gr, gp) = (gs.member_of[requester], gs.member_of[provider]);
        if gr != gp {
            cross += 1;
            for &a in &group_of_member[gr] {
                members[a] -= 1;
            }
            for &a in &group_of_member[gp] {
                members[a] += 1;
            }
        }
        for (g, mem) in group_of_member.iter().enumerate() {
            let v = members[mem[0]];
            if mem.iter().any(|&a| members[a] != v) {
                violations += 1;
            }
            values[g] = v;
        }
        if values.iter().sum::<i64>() != 0 {
            return Err(Error::Invariant(format!(
                "group values {values:?} do not sum to zero"
            )));
        }
        if values.iter().all(|&v| v == 0) {
            gaps.push(t - last_zero);
            last_zero = t;
        }
        if t % record_every == 0 {
            trajectory.push((t, values.clone()));
        }
    }
    if violations > 0 {
        return Err(Error::Invariant(format!(
            "{violations} steps broke within-group equality"
        )));
    }
    Ok(GroupedRun {
        steps,
        final_values: values,
        trajectory,
        cross_group_transfers: cross,
        violations,
        zero_returns: ZeroReturnSummary::from_gaps(&gaps),
    })
}
