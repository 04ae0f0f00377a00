//! Exact transition law and stationary distribution on a truncated state space.
//!
//! States are the zero-sum vectors with every balance in `[-B, B]`. A move that
//! would leave the box is turned into a self-loop, so every row stays stochastic.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Rule, SystemConfig};
use crate::error::{Error, Result};

/// Largest `n^d` enumerated by [`one_step_law`].
pub const ENUMERATION_GUARD: u64 = 1_000_000;
/// Largest state count accepted by [`TruncatedChain::build`].
pub const STATE_GUARD: usize = 2_000_000;
/// Chains up to this size are solved by dense LU.
pub const DENSE_LIMIT: usize = 1_500;
pub const DEFAULT_MAX_ITERATIONS: usize = 2_000_000;
pub const RESIDUAL_TARGET: f64 = 1e-12;

/// Probability that each agent is chosen as provider when balances are `s`.
pub fn provider_law(s: &[i64], config: &SystemConfig) -> Result<Vec<f64>> {
    let law_d = provider_law_fixed(s, config, config.d)?;
    match config.beta {
        None => Ok(law_d),
        Some(beta) => {
            let law_1 = provider_law_fixed(s, config, 1)?;
            Ok(law_d
                .iter()
                .zip(&law_1)
                .map(|(a, b)| beta * a + (1.0 - beta) * b)
                .collect())
        }
    }
}

fn provider_law_fixed(s: &[i64], config: &SystemConfig, d: usize) -> Result<Vec<f64>> {
    let n = config.n;
    let size = (n as u64)
        .checked_pow(d as u32)
        .filter(|&x| x <= ENUMERATION_GUARD)
        .ok_or_else(|| {
            Error::Infeasible(format!(
                "n^d = {n}^{d} exceeds the enumeration guard {ENUMERATION_GUARD}"
            ))
        })?;
    let mut law = vec![0.0; n];
    let mut tuple = vec![0usize; d];
    for code in 0..size {
        let mut c = code;
        let mut prob = 1.0;
        for slot in tuple.iter_mut() {
            *slot = (c % n as u64) as usize;
            c /= n as u64;
            prob *= config.q[*slot];
        }
        match config.rule {
            Rule::Uniform => {
                for &a in &tuple {
                    law[a] += prob / d as f64;
                }
            }
            Rule::MinToken => {
                let min = tuple.iter().map(|&a| s[a]).min().expect("d >= 1");
                let mut tied: Vec<usize> = tuple.iter().copied().filter(|&a| s[a] == min).collect();
                tied.sort_unstable();
                tied.dedup();
                for &a in &tied {
                    law[a] += prob / tied.len() as f64;
                }
            }
        }
    }
    Ok(law)
}

/// Exact successor distribution of `s`, sorted by successor.
pub fn one_step_law(s: &[i64], config: &SystemConfig) -> Result<Vec<(Vec<i64>, f64)>> {
    config.validate()?;
    if s.len() != config.n {
        return Err(Error::invalid("state length differs from n"));
    }
    let provider = provider_law(s, config)?;
    let mut out: BTreeMap<Vec<i64>, f64> = BTreeMap::new();
    for (i, &pi) in config.p.iter().enumerate() {
        for (j, &qj) in provider.iter().enumerate() {
            let mut next = s.to_vec();
            if i != j {
                next[i] -= 1;
                next[j] += 1;
            }
            *out.entry(next).or_insert(0.0) += pi * qj;
        }
    }
    Ok(out.into_iter().filter(|(_, w)| *w > 0.0).collect())
}

/// The chain restricted to `{s : sum s = 0, |s_i| <= B}`.
#[derive(Clone, Debug)]
pub struct TruncatedChain {
    n: usize,
    bound: i64,
    /// Flattened states, `n` balances each.
    states: Vec<i64>,
    /// Sparse rows: `(target, probability)`.
    rows: Vec<Vec<(usize, f64)>>,
    lookup: Vec<u32>,
}

impl TruncatedChain {
    pub fn build(config: &SystemConfig, bound: u32) -> Result<Self> {
        config.validate()?;
        let n = config.n;
        let b = bound as i64;
        let side = 2 * b + 1;
        let table = (side as u64)
            .checked_pow((n - 1) as u32)
            .filter(|&x| x <= 50 * STATE_GUARD as u64)
            .ok_or_else(|| {
                Error::Infeasible(format!(
                    "box of radius {bound} in {n} dimensions is too large"
                ))
            })?;
        let mut lookup = vec![u32::MAX; table as usize];
        let mut states = Vec::new();
        let mut count = 0usize;
        let mut cur = vec![-b; n - 1];
        for code in 0..table {
            let mut c = code;
            for x in cur.iter_mut() {
                *x = (c % side as u64) as i64 - b;
                c /= side as u64;
            }
            let last = -cur.iter().sum::<i64>();
            if last.abs() <= b {
                if count >= STATE_GUARD {
                    return Err(Error::Infeasible(format!(
                        "more than {STATE_GUARD} states in the box"
                    )));
                }
                lookup[code as usize] = count as u32;
                states.extend_from_slice(&cur);
                states.push(last);
                count += 1;
            }
        }
        let mut chain = TruncatedChain {
            n,
            bound: b,
            states,
            rows: Vec::new(),
            lookup,
        };
        let rows = (0..count)
            .into_par_iter()
            .map(|k| chain.row(k, config))
            .collect::<Result<Vec<_>>>()?;
        chain.rows = rows;
        Ok(chain)
    }

    fn row(&self, k: usize, config: &SystemConfig) -> Result<Vec<(usize, f64)>> {
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        for (next, w) in one_step_law(self.state(k), config)? {
            let target = self.index_of(&next).unwrap_or(k);
            *row.entry(target).or_insert(0.0) += w;
        }
        Ok(row.into_iter().collect())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bound(&self) -> i64 {
        self.bound
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn state(&self, k: usize) -> &[i64] {
        &self.states[k * self.n..(k + 1) * self.n]
    }

    pub fn row_entries(&self, k: usize) -> &[(usize, f64)] {
        &self.rows[k]
    }

    pub fn index_of(&self, s: &[i64]) -> Option<usize> {
        if s.len() != self.n || s.iter().sum::<i64>() != 0 || s.iter().any(|x| x.abs() > self.bound)
        {
            return None;
        }
        let side = 2 * self.bound + 1;
        let mut code = 0i64;
        for &x in s[..self.n - 1].iter().rev() {
            code = code * side + (x + self.bound);
        }
        match self.lookup[code as usize] {
            u32::MAX => None,
            k => Some(k as usize),
        }
    }

    /// `pi P` for a row vector `pi`.
    pub fn apply(&self, pi: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; pi.len()];
        for (k, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                out[j] += pi[k] * w;
            }
        }
        out
    }

    /// `max |(pi P - pi)_k|`
    pub fn residual(&self, pi: &[f64]) -> f64 {
        self.apply(pi)
            .iter()
            .zip(pi)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// A stationary distribution with its residual.
#[derive(Clone, Debug)]
pub struct Stationary {
    pub pi: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `pi P = pi`, `sum pi = 1`.
///
/// Small chains use a dense LU solve followed by a few power steps; larger
/// ones use power iteration, stopped when the residual and a geometric
/// extrapolation of the remaining error are both below target.
pub fn stationary(chain: &TruncatedChain) -> Result<Stationary> {
    stationary_with(chain, DEFAULT_MAX_ITERATIONS)
}

pub fn stationary_with(chain: &TruncatedChain, max_iterations: usize) -> Result<Stationary> {
    let m = chain.len();
    let mut pi = if m <= DENSE_LIMIT {
        dense_solve(chain)?
    } else {
        vec![1.0 / m as f64; m]
    };
    let mut residual = chain.residual(&pi);
    let mut prev = f64::INFINITY;
    let mut iterations = 0;
    while iterations < max_iterations {
        let rate = (residual / prev).min(0.999_999);
        let remaining = residual * rate / (1.0 - rate);
        if residual < RESIDUAL_TARGET * 0.1 && remaining < RESIDUAL_TARGET {
            break;
        }
        let next = chain.apply(&pi);
        let total: f64 = next.iter().sum();
        pi = next.into_iter().map(|x| x / total).collect();
        prev = residual;
        residual = chain.residual(&pi);
        iterations += 1;
        if m <= DENSE_LIMIT && iterations >= 200 && residual < RESIDUAL_TARGET {
            break;
        }
    }
    if residual >= RESIDUAL_TARGET {
        return Err(Error::NoConvergence {
            iterations,
            residual,
        });
    }
    Ok(Stationary {
        pi,
        residual,
        iterations,
    })
}

fn dense_solve(chain: &TruncatedChain) -> Result<Vec<f64>> {
    let m = chain.len();
    // (P^T - I) pi = 0 with the last equation replaced by sum pi = 1.
    let mut a = DMatrix::<f64>::zeros(m, m);
    for k in 0..m {
        for &(j, w) in chain.row_entries(k) {
            a[(j, k)] += w;
        }
        a[(k, k)] -= 1.0;
    }
    for k in 0..m {
        a[(m - 1, k)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[m - 1] = 1.0;
    let x = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Invariant("singular stationary system".into()))?;
    let mut pi: Vec<f64> = x.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|v| *v /= total);
    Ok(pi)
}

/// `1 / pi(state)`: the mean return time to `state`.
pub fn expected_return_time(chain: &TruncatedChain, pi: &[f64], state: &[i64]) -> Result<f64> {
    let k = chain
        .index_of(state)
        .ok_or_else(|| Error::invalid(format!("state {state:?} is outside the box")))?;
    Ok(1.0 / pi[k])
}

/// Marginal law of one agent's balance: `(value, probability)` for `value = -B..=B`.
pub fn marginal(chain: &TruncatedChain, pi: &[f64], agent: usize) -> Vec<(i64, f64)> {
    let b = chain.bound();
    let mut out: Vec<(i64, f64)> = (-b..=b).map(|v| (v, 0.0)).collect();
    for (k, &w) in pi.iter().enumerate() {
        let v = chain.state(k)[agent];
        out[(v + b) as usize].1 += w;
    }
    out
}

/// `P(|s_agent| > m)` under `pi`.
pub fn tail(chain: &TruncatedChain, pi: &[f64], agent: usize, m: i64) -> f64 {
    marginal(chain, pi, agent)
        .into_iter()
        .filter(|(v, _)| v.abs() > m)
        .map(|(_, w)| w)
        .sum()
}

/// One record of the marginals CSV.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MarginalRow {
    pub token_value: i64,
    pub agent: usize,
    pub probability: f64,
}

/// Writes all agents' marginals as `token_value,agent,probability`.
pub fn write_marginals_csv<W: std::io::Write>(
    out: W,
    chain: &TruncatedChain,
    pi: &[f64],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for agent in 0..chain.n() {
        for (token_value, probability) in marginal(chain, pi, agent) {
            w.serialize(MarginalRow {
                token_value,
                agent,
                probability,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(n: usize, d: usize) -> SystemConfig {
        SystemConfig::symmetric(n, d).unwrap()
    }

    #[test]
    fn law_at_origin_by_hand() {
        // Requester 0 or 1 (1/2 each); provider tie at (0,0) splits 1/2 each.
        let law = one_step_law(&[0, 0], &sym(2, 2)).unwrap();
        let get = |s: [i64; 2]| law.iter().find(|(x, _)| x == &s).unwrap().1;
        assert!((get([0, 0]) - 0.5).abs() < 1e-15);
        assert!((get([1, -1]) - 0.25).abs() < 1e-15);
        assert!((get([-1, 1]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn law_is_distribution() {
        let cfg = SystemConfig::new(vec![0.2, 0.3, 0.5], vec![0.4, 0.4, 0.2], 3).unwrap();
        let law = one_step_law(&[2, -1, -1], &cfg).unwrap();
        let total: f64 = law.iter().map(|(_, w)| w).sum();
        assert!((total - 1.0).abs() < 1e-14);
        for (s, _) in &law {
            assert_eq!(s.iter().sum::<i64>(), 0);
        }
    }

    #[test]
    fn distinct_tie_weighting_in_law() {
        // s = (5,2,2), d = 3 symmetric: agents 1 and 2 must be equally likely.
        let law = provider_law(&[5, 2, 2], &sym(3, 3)).unwrap();
        assert!((law[1] - law[2]).abs() < 1e-15);
        // Agent 0 provides only when all three draws are 0.
        assert!((law[0] - 1.0 / 27.0).abs() < 1e-15);
    }

    #[test]
    fn guard_rejects_huge_enumeration() {
        let cfg = sym(10, 7);
        assert!(matches!(
            provider_law(&[0; 10], &cfg),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn state_counts() {
        for b in [0u32, 1, 3, 7] {
            let c2 = TruncatedChain::build(&sym(2, 2), b).unwrap();
            assert_eq!(c2.len(), 2 * b as usize + 1);
            let c3 = TruncatedChain::build(&sym(3, 2), b).unwrap();
            let b = b as usize;
            assert_eq!(c3.len(), 3 * b * b + 3 * b + 1);
        }
    }

    #[test]
    fn rows_are_stochastic() {
        let cfg = SystemConfig::new(vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5], 2).unwrap();
        let chain = TruncatedChain::build(&cfg, 5).unwrap();
        for k in 0..chain.len() {
            let row = chain.row_entries(k);
            assert!(row.iter().all(|&(_, w)| w >= 0.0));
            let total: f64 = row.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_box() {
        let chain = TruncatedChain::build(&sym(2, 2), 0).unwrap();
        let st = stationary(&chain).unwrap();
        assert!((expected_return_time(&chain, &st.pi, &[0, 0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(expected_return_time(&chain, &st.pi, &[1, -1]).is_err());
    }

    #[test]
    fn power_iteration_agrees_with_dense() {
        let cfg = SystemConfig::new(vec![0.5, 0.3, 0.2], vec![0.4, 0.35, 0.25], 2).unwrap();
        let chain = TruncatedChain::build(&cfg, 6).unwrap();
        let dense = stationary(&chain).unwrap();
        let mut power = vec![1.0 / chain.len() as f64; chain.len()];
        for _ in 0..20_000 {
            power = chain.apply(&power);
        }
        for (a, b) in dense.pi.iter().zip(&power) {
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let chain = TruncatedChain::build(&sym(3, 2), 25).unwrap();
        assert!(chain.len() > DENSE_LIMIT);
        match stationary_with(&chain, 3) {
            Err(Error::NoConvergence {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 0.0);
            }
            other => panic!("expected no convergence, got {other:?}"),
        }
    }
}
