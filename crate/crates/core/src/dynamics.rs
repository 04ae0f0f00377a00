//! One-step dynamics of the token system.
//!
//! Each period draws, in this order:
//!
//! 1. one uniform variate for the requester (inverse CDF over `p`);
//! 2. if `beta` is set, one uniform variate choosing between `d` draws and a single draw;
//! 3. one uniform variate per availability draw (inverse CDF over `q`, with replacement);
//! 4. at most one integer draw to break a tie (or, under the uniform rule, to pick a slot).
//!
//! The requester pays one token to the provider unless they coincide.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Rule, SystemConfig};
use crate::error::{Error, Result};
use crate::rng::{self, ChaCha8Rng};

/// Token balances at time `t`. Balances always sum to zero.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenState {
    s: Vec<i64>,
    t: u64,
}

impl TokenState {
    /// The all-zero initial state.
    pub fn zero(n: usize) -> Self {
        TokenState {
            s: vec![0; n],
            t: 0,
        }
    }

    /// State from explicit balances. Fails unless they sum to zero.
    pub fn from_balances(s: Vec<i64>, t: u64) -> Result<Self> {
        if s.iter().sum::<i64>() != 0 {
            return Err(Error::invalid(format!("balances {s:?} do not sum to zero")));
        }
        Ok(TokenState { s, t })
    }

    pub fn balances(&self) -> &[i64] {
        &self.s
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn is_zero(&self) -> bool {
        self.s.iter().all(|&x| x == 0)
    }

    /// Applies a transfer from `requester` to `provider` and advances time.
    pub fn apply(&mut self, requester: usize, provider: usize) {
        if requester != provider {
            self.s[requester] -= 1;
            self.s[provider] += 1;
            debug_assert!(self.s[requester] > i64::MIN && self.s[provider] < i64::MAX);
        }
        self.t += 1;
    }
}

/// What happened in one period.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub requester: usize,
    /// Availability draws in the order they were made.
    pub available: Vec<usize>,
    pub provider: usize,
    pub transferred: bool,
}

/// Inverse-CDF sampler consuming exactly one uniform variate per draw.
#[derive(Clone, Debug)]
pub(crate) struct Categorical {
    cdf: Vec<f64>,
}

impl Categorical {
    pub(crate) fn new(weights: &[f64]) -> Self {
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        Categorical { cdf }
    }

    #[inline]
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let i = self.cdf.partition_point(|&c| c <= u);
        i.min(self.cdf.len() - 1)
    }
}

/// A validated configuration with precomputed samplers.
#[derive(Clone, Debug)]
pub struct Dynamics {
    config: SystemConfig,
    requester: Categorical,
    availability: Categorical,
}

impl Dynamics {
    pub fn new(config: SystemConfig) -> Result<Self> {
        config.validate()?;
        Ok(Dynamics {
            requester: Categorical::new(&config.p),
            availability: Categorical::new(&config.q),
            config,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    /// Draws the requester: agent `i` with probability `p_i`.
    #[inline]
    pub fn sample_requester<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.requester.sample(rng)
    }

    /// Draws the available multiset into `out` (cleared first).
    #[inline]
    pub fn sample_available_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<usize>) {
        out.clear();
        let d = match self.config.beta {
            Some(beta) => {
                if rng.gen::<f64>() < beta {
                    self.config.d
                } else {
                    1
                }
            }
            None => self.config.d,
        };
        for _ in 0..d {
            out.push(self.availability.sample(rng));
        }
    }

    pub fn sample_available<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.config.d);
        self.sample_available_into(rng, &mut out);
        out
    }

    /// One period: returns the outcome and updates `state` in place.
    pub fn step<R: Rng + ?Sized>(&self, state: &mut TokenState, rng: &mut R) -> StepOutcome {
        let requester = self.sample_requester(rng);
        let available = self.sample_available(rng);
        let provider = select_provider(&state.s, &available, self.config.rule, rng)
            .expect("availability draw is never empty");
        state.apply(requester, provider);
        StepOutcome {
            requester,
            transferred: requester != provider,
            available,
            provider,
        }
    }
}

/// Picks the provider among `available` given balances `s`.
///
/// Under [`Rule::MinToken`] ties are broken uniformly over distinct agents: an
/// agent drawn twice counts once. Under [`Rule::Uniform`] each slot of the
/// multiset is equally likely. No random draw is made when the choice is forced.
pub fn select_provider<R: Rng + ?Sized>(
    s: &[i64],
    available: &[usize],
    rule: Rule,
    rng: &mut R,
) -> Result<usize> {
    if available.is_empty() {
        return Err(Error::Contract("available set is empty".into()));
    }
    if let Some(&bad) = available.iter().find(|&&a| a >= s.len()) {
        return Err(Error::Contract(format!("agent {bad} out of range")));
    }
    match rule {
        Rule::Uniform => {
            if available.len() == 1 {
                Ok(available[0])
            } else {
                Ok(available[rng.gen_range(0..available.len())])
            }
        }
        Rule::MinToken => {
            let min = available.iter().map(|&a| s[a]).min().expect("non-empty");
            let first_tied = |idx: usize| {
                let a = available[idx];
                s[a] == min && !available[..idx].contains(&a)
            };
            let k = (0..available.len()).filter(|&i| first_tied(i)).count();
            let pick = if k == 1 { 0 } else { rng.gen_range(0..k) };
            let idx = (0..available.len())
                .filter(|&i| first_tied(i))
                .nth(pick)
                .expect("pick < k");
            Ok(available[idx])
        }
    }
}

/// A running chain: dynamics, state and its own random stream.
///
/// The stream is seeded from `config.seed`, so two chains built from equal
/// configurations follow the same trajectory.
#[derive(Clone, Debug)]
pub struct Chain {
    dynamics: Dynamics,
    state: TokenState,
    rng: ChaCha8Rng,
    available: Vec<usize>,
}

impl Chain {
    pub fn new(config: SystemConfig) -> Result<Self> {
        let rng = rng::from_seed(config.seed);
        let n = config.n;
        Ok(Chain {
            available: Vec::with_capacity(config.d),
            dynamics: Dynamics::new(config)?,
            state: TokenState::zero(n),
            rng,
        })
    }

    pub fn state(&self) -> &TokenState {
        &self.state
    }

    pub fn dynamics(&self) -> &Dynamics {
        &self.dynamics
    }

    /// Advances one period and returns `(requester, provider)`.
    #[inline]
    pub fn advance(&mut self) -> (usize, usize) {
        let requester = self.dynamics.sample_requester(&mut self.rng);
        self.dynamics
            .sample_available_into(&mut self.rng, &mut self.available);
        let provider = select_provider(
            &self.state.s,
            &self.available,
            self.dynamics.config.rule,
            &mut self.rng,
        )
        .expect("availability draw is never empty");
        self.state.apply(requester, provider);
        (requester, provider)
    }

    /// Advances one period and returns the full outcome.
    pub fn step(&mut self) -> StepOutcome {
        self.dynamics.step(&mut self.state, &mut self.rng)
    }

    pub fn run(&mut self, steps: u64) {
        for _ in 0..steps {
            self.advance();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(11)
    }

    #[test]
    fn unique_minimum_wins() {
        let s = [3, -1, 0];
        for _ in 0..10 {
            assert_eq!(
                select_provider(&s, &[0, 1], Rule::MinToken, &mut rng()).unwrap(),
                1
            );
        }
    }

    #[test]
    fn empty_available_is_a_contract_error() {
        let e = select_provider(&[0, 0], &[], Rule::MinToken, &mut rng()).unwrap_err();
        assert!(matches!(e, Error::Contract(_)));
    }

    #[test]
    fn ties_use_distinct_agents() {
        let s = [5, 2, 2];
        let mut r = rng();
        let trials = 200_000;
        let ones = (0..trials)
            .filter(|_| select_provider(&s, &[1, 2, 2], Rule::MinToken, &mut r).unwrap() == 1)
            .count();
        let f = ones as f64 / trials as f64;
        assert!((f - 0.5).abs() < 0.005, "{f}");
    }

    #[test]
    fn uniform_rule_weights_slots() {
        let s = [5, 2, 2];
        let mut r = rng();
        let trials = 300_000;
        let ones = (0..trials)
            .filter(|_| select_provider(&s, &[1, 2, 2], Rule::Uniform, &mut r).unwrap() == 1)
            .count();
        let f = ones as f64 / trials as f64;
        assert!((f - 1.0 / 3.0).abs() < 0.005, "{f}");
    }

    #[test]
    fn self_service_leaves_state() {
        let mut st = TokenState::from_balances(vec![2, -2], 0).unwrap();
        st.apply(0, 0);
        assert_eq!(st.balances(), &[2, -2]);
        assert_eq!(st.t(), 1);
        let mut st = TokenState::zero(2);
        st.apply(0, 1);
        assert_eq!(st.balances(), &[-1, 1]);
    }

    #[test]
    fn requester_frequencies() {
        let cfg = SystemConfig::new(vec![0.5, 0.3, 0.2], vec![0.5, 0.3, 0.2], 2).unwrap();
        let dy = Dynamics::new(cfg).unwrap();
        let mut r = rng();
        let mut counts = [0u64; 3];
        let trials = 1_000_000;
        for _ in 0..trials {
            counts[dy.sample_requester(&mut r)] += 1;
        }
        for (c, p) in counts.iter().zip([0.5, 0.3, 0.2]) {
            assert!((*c as f64 / trials as f64 - p).abs() < 0.002);
        }
    }

    #[test]
    fn symmetric_requester_frequencies() {
        let dy = Dynamics::new(SystemConfig::symmetric(4, 2).unwrap()).unwrap();
        let mut r = rng();
        let mut counts = [0u64; 4];
        for _ in 0..1_000_000 {
            counts[dy.sample_requester(&mut r)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 1e6 - 0.25).abs() < 0.002);
        }
    }

    #[test]
    fn near_degenerate_requester() {
        let cfg = SystemConfig::new(vec![0.999_999, 0.000_001], vec![0.5, 0.5], 2).unwrap();
        let dy = Dynamics::new(cfg).unwrap();
        let mut r = rng();
        let zeros = (0..100_000)
            .filter(|_| dy.sample_requester(&mut r) == 0)
            .count();
        assert!(zeros >= 99_990);
    }

    #[test]
    fn availability_multiset_law() {
        let dy = Dynamics::new(SystemConfig::symmetric(2, 2).unwrap()).unwrap();
        let mut r = rng();
        let mut counts = [0u64; 3];
        let trials = 1_000_000;
        for _ in 0..trials {
            let a = dy.sample_available(&mut r);
            assert_eq!(a.len(), 2);
            counts[a[0] + a[1]] += 1;
        }
        for (c, p) in counts.iter().zip([0.25, 0.5, 0.25]) {
            assert!((*c as f64 / trials as f64 - p).abs() < 0.002);
        }
        let dy1 = Dynamics::new(SystemConfig::symmetric(3, 1).unwrap()).unwrap();
        assert_eq!(dy1.sample_available(&mut r).len(), 1);
    }

    #[test]
    fn beta_mixes_availability_sizes() {
        let cfg = SystemConfig::symmetric(2, 2)
            .unwrap()
            .with_beta(0.4)
            .unwrap();
        let dy = Dynamics::new(cfg).unwrap();
        let mut r = rng();
        let trials = 1_000_000;
        let twos = (0..trials)
            .filter(|_| dy.sample_available(&mut r).len() == 2)
            .count();
        assert!((twos as f64 / trials as f64 - 0.4).abs() < 0.002);
    }

    #[test]
    fn d1_lazy_walk_frequencies() {
        let mut chain = Chain::new(SystemConfig::symmetric(2, 1).unwrap().with_seed(5)).unwrap();
        let (mut up, mut down, mut hold) = (0u64, 0u64, 0u64);
        let trials = 1_000_000;
        for _ in 0..trials {
            let before = chain.state().balances()[0];
            chain.advance();
            match chain.state().balances()[0] - before {
                1 => up += 1,
                -1 => down += 1,
                _ => hold += 1,
            }
        }
        let f = |c: u64| c as f64 / trials as f64;
        assert!((f(up) - 0.25).abs() < 0.002);
        assert!((f(down) - 0.25).abs() < 0.002);
        assert!((f(hold) - 0.5).abs() < 0.002);
    }

    #[test]
    fn step_and_advance_agree() {
        let cfg = SystemConfig::new(vec![0.2, 0.3, 0.5], vec![0.6, 0.3, 0.1], 3)
            .unwrap()
            .with_seed(3);
        let mut a = Chain::new(cfg.clone()).unwrap();
        let mut b = Chain::new(cfg).unwrap();
        for _ in 0..10_000 {
            let o = a.step();
            let (k, j) = b.advance();
            assert_eq!((o.requester, o.provider), (k, j));
        }
        assert_eq!(a.state(), b.state());
    }
}
