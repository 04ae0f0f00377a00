//! Long runs of the chain and the statistics drawn from them.
//!
//! Occupancy is recorded lazily: an agent's balance is credited only when it
//! changes (and at batch boundaries), so a step costs O(1) regardless of `n`.
//! Standard errors use batch means over the sampling window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::dynamics::{Chain, TokenState};
use crate::error::{Error, Result};

/// Default run length.
pub const DEFAULT_STEPS: u64 = 20_000_000;
/// Default burn-in.
pub const DEFAULT_BURN_IN: u64 = 500_000;
pub const DEFAULT_BATCHES: usize = 20;

/// Visit counts per token value.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    offset: i64,
    counts: Vec<u64>,
}

impl Histogram {
    pub fn add(&mut self, value: i64, count: u64) {
        if count == 0 {
            return;
        }
        if self.counts.is_empty() {
            self.offset = value;
            self.counts.push(0);
        }
        if value < self.offset {
            let grow = (self.offset - value) as usize;
            let mut v = vec![0; grow];
            v.append(&mut self.counts);
            self.counts = v;
            self.offset = value;
        }
        let idx = (value - self.offset) as usize;
        if idx >= self.counts.len() {
            self.counts.resize(idx + 1, 0);
        }
        self.counts[idx] += count;
    }

    pub fn count(&self, value: i64) -> u64 {
        if value < self.offset {
            return 0;
        }
        self.counts
            .get((value - self.offset) as usize)
            .copied()
            .unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Non-zero `(value, count)` pairs in increasing value order.
    pub fn iter(&self) -> impl Iterator<Item = (i64, u64)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(move |(i, &c)| (self.offset + i as i64, c))
    }

    pub fn merge(&mut self, other: &Histogram) {
        for (v, c) in other.iter() {
            self.add(v, c);
        }
    }

    fn count_at_most(&self, m: i64) -> u64 {
        self.iter().filter(|&(v, _)| v <= m).map(|(_, c)| c).sum()
    }

    fn count_at_least(&self, m: i64) -> u64 {
        self.iter().filter(|&(v, _)| v >= m).map(|(_, c)| c).sum()
    }
}

/// Raw output of [`run_chain`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimStats {
    pub n: usize,
    pub steps: u64,
    pub burn_in: u64,
    /// Per-agent occupancy over states `s^t` with `burn_in < t <= steps`.
    pub histograms: Vec<Histogram>,
    /// The same occupancy split into consecutive batches: `batches[b][agent]`.
    pub batches: Vec<Vec<Histogram>>,
    /// Gaps between successive visits to the all-zero state, over the whole run.
    pub zero_returns: Vec<u64>,
    pub final_state: TokenState,
}

impl SimStats {
    pub fn window(&self) -> u64 {
        self.steps - self.burn_in
    }
}

/// Runs `steps` periods from the zero state, discarding the first `burn_in` for occupancy.
pub fn run_chain(config: &SystemConfig, steps: u64, burn_in: u64) -> Result<SimStats> {
    run_chain_batched(config, steps, burn_in, DEFAULT_BATCHES)
}

pub fn run_chain_batched(
    config: &SystemConfig,
    steps: u64,
    burn_in: u64,
    batches: usize,
) -> Result<SimStats> {
    if burn_in >= steps {
        return Err(Error::invalid(format!(
            "burn-in {burn_in} must be smaller than the run length {steps}"
        )));
    }
    if batches < 2 {
        return Err(Error::invalid(
            "at least two batches are needed for error bars",
        ));
    }
    let n = config.n;
    let mut chain = Chain::new(config.clone())?;
    let mut nonzero = 0usize;
    let mut last_zero = 0u64;
    let mut zero_returns = Vec::new();

    let mut track = |chain: &Chain, k: usize, j: usize, t: u64, nonzero: &mut usize| {
        if k != j {
            let s = chain.state().balances();
            let was = |x: i64| (x != 0) as usize;
            *nonzero = *nonzero + was(s[k]) + was(s[j]) - was(s[k] + 1) - was(s[j] - 1);
        }
        if *nonzero == 0 {
            zero_returns.push(t - last_zero);
            last_zero = t;
        }
    };

    for t in 1..=burn_in {
        let (k, j) = chain.advance();
        track(&chain, k, j, t, &mut nonzero);
    }

    let window = steps - burn_in;
    let nb = (batches as u64).min(window) as usize;
    let batch_end = |b: usize| burn_in + ((b as u64 + 1) * window) / nb as u64;
    let mut hist = vec![vec![Histogram::default(); n]; nb];
    let mut since = vec![burn_in + 1; n];
    let mut b = 0usize;
    let mut end = batch_end(0);
    for t in burn_in + 1..=steps {
        let (k, j) = chain.advance();
        if k != j {
            let s = chain.state().balances();
            hist[b][k].add(s[k] + 1, t - since[k]);
            hist[b][j].add(s[j] - 1, t - since[j]);
            since[k] = t;
            since[j] = t;
        }
        track(&chain, k, j, t, &mut nonzero);
        if t == end {
            let s = chain.state().balances();
            for i in 0..n {
                hist[b][i].add(s[i], t + 1 - since[i]);
                since[i] = t + 1;
            }
            b += 1;
            if b < nb {
                end = batch_end(b);
            }
        }
    }

    let mut histograms = vec![Histogram::default(); n];
    for batch in &hist {
        for (h, bh) in histograms.iter_mut().zip(batch) {
            h.merge(bh);
        }
    }
    for (i, h) in histograms.iter().enumerate() {
        if h.total() != window {
            return Err(Error::Invariant(format!(
                "agent {i} occupancy {} != window {window}",
                h.total()
            )));
        }
    }
    Ok(SimStats {
        n,
        steps,
        burn_in,
        histograms,
        batches: hist,
        zero_returns,
        final_state: chain.state().clone(),
    })
}

/// Tail estimates for one agent or a group of agents, indexed by `M = 0..=m_max`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TailSeries {
    /// P(|s| <= M)
    pub p: Vec<f64>,
    /// P(s <= M)
    pub q: Vec<f64>,
    /// P(s >= -M)
    pub r: Vec<f64>,
    pub stderr_p: Vec<f64>,
    pub stderr_q: Vec<f64>,
    pub stderr_r: Vec<f64>,
}

impl TailSeries {
    /// P(|s| > M)
    pub fn tail(&self, m: usize) -> f64 {
        1.0 - self.p[m]
    }
}

/// `p_{n,M}`, `q_{n,M}`, `r_{n,M}` averaged over agents, plus per-agent values.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TailEstimates {
    pub m_max: usize,
    pub mean: TailSeries,
    pub per_agent: Vec<TailSeries>,
}

/// Fractions `(p, q, r)` for each `M` from one agent histogram.
fn fractions(h: &Histogram, m_max: usize) -> [Vec<f64>; 3] {
    let total = h.total() as f64;
    let mut out = [
        vec![0.0; m_max + 1],
        vec![0.0; m_max + 1],
        vec![0.0; m_max + 1],
    ];
    for m in 0..=m_max {
        let le = h.count_at_most(m as i64);
        let ge = h.count_at_least(-(m as i64));
        // Every sample satisfies s <= M or s >= -M, so le + ge >= total.
        out[0][m] = (le + ge - h.total()) as f64 / total;
        out[1][m] = le as f64 / total;
        out[2][m] = ge as f64 / total;
    }
    out
}

fn batch_stderr(values: &[f64]) -> f64 {
    let b = values.len() as f64;
    let mean = values.iter().sum::<f64>() / b;
    let ss: f64 = values.iter().map(|x| (x - mean) * (x - mean)).sum();
    (ss / (b * (b - 1.0))).sqrt()
}

/// Tail estimates pooled over `agents` (averaged with equal weight).
pub fn group_tails(stats: &SimStats, m_max: usize, agents: &[usize]) -> TailSeries {
    let avg = |hs: &[Histogram]| {
        let mut acc = [
            vec![0.0; m_max + 1],
            vec![0.0; m_max + 1],
            vec![0.0; m_max + 1],
        ];
        for &a in agents {
            let f = fractions(&hs[a], m_max);
            for k in 0..3 {
                for m in 0..=m_max {
                    acc[k][m] += f[k][m] / agents.len() as f64;
                }
            }
        }
        acc
    };
    let whole = avg(&stats.histograms);
    let per_batch: Vec<_> = stats.batches.iter().map(|b| avg(b)).collect();
    let se = |k: usize| {
        (0..=m_max)
            .map(|m| {
                let v: Vec<f64> = per_batch.iter().map(|b| b[k][m]).collect();
                batch_stderr(&v)
            })
            .collect::<Vec<_>>()
    };
    let [p, q, r] = whole;
    TailSeries {
        stderr_p: se(0),
        stderr_q: se(1),
        stderr_r: se(2),
        p,
        q,
        r,
    }
}

pub fn tails(stats: &SimStats, m_max: usize) -> TailEstimates {
    let all: Vec<usize> = (0..stats.n).collect();
    TailEstimates {
        m_max,
        mean: group_tails(stats, m_max, &all),
        per_agent: (0..stats.n)
            .map(|a| group_tails(stats, m_max, &[a]))
            .collect(),
    }
}

/// Mean time between visits to the all-zero state.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ZeroReturnSummary {
    pub count: usize,
    pub mean: f64,
    /// Gaps are i.i.d. (the chain regenerates at zero), so this is the plain standard error.
    pub stderr: f64,
    /// Mean over the first half of the recorded gaps.
    pub first_half_mean: f64,
}

impl ZeroReturnSummary {
    pub fn from_gaps(gaps: &[u64]) -> Self {
        let k = gaps.len();
        if k == 0 {
            return ZeroReturnSummary {
                count: 0,
                mean: f64::NAN,
                stderr: f64::NAN,
                first_half_mean: f64::NAN,
            };
        }
        let mean_of = |g: &[u64]| g.iter().map(|&x| x as f64).sum::<f64>() / g.len().max(1) as f64;
        let mean = mean_of(gaps);
        let var = if k > 1 {
            gaps.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / (k - 1) as f64
        } else {
            f64::NAN
        };
        ZeroReturnSummary {
            count: k,
            mean,
            stderr: (var / k as f64).sqrt(),
            first_half_mean: mean_of(&gaps[..k.div_ceil(2)]),
        }
    }

    /// Relative difference between the first-half and full-run means.
    pub fn drift(&self) -> f64 {
        ((self.first_half_mean - self.mean) / self.mean).abs()
    }
}

/// One row of a sweep table.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub seed: u64,
    pub p: f64,
    pub q: f64,
    pub r: f64,
    pub stderr_p: f64,
}

/// One chain of a sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRun {
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    pub tails: TailEstimates,
    pub zero_returns: ZeroReturnSummary,
}

impl SweepRun {
    pub fn rows(&self) -> impl Iterator<Item = SweepRow> + '_ {
        (0..=self.tails.m_max).map(move |m| SweepRow {
            n: self.n,
            d: self.d,
            m,
            seed: self.seed,
            p: self.tails.mean.p[m],
            q: self.tails.mean.q[m],
            r: self.tails.mean.r[m],
            stderr_p: self.tails.mean.stderr_p[m],
        })
    }
}

/// Symmetric systems over `n_values` x `seeds`, run in parallel.
/// Results are ordered by `(n, seed)` whatever the scheduling.
pub fn sweep_n(
    n_values: &[usize],
    m_max: usize,
    d: usize,
    steps: u64,
    burn_in: u64,
    seeds: &[u64],
) -> Result<Vec<SweepRun>> {
    if let Some(&n) = n_values.iter().find(|&&n| n < 2) {
        return Err(Error::invalid(format!("sweep needs n >= 2, got {n}")));
    }
    let jobs: Vec<(usize, u64)> = n_values
        .iter()
        .flat_map(|&n| seeds.iter().map(move |&s| (n, s)))
        .collect();
    let mut runs = jobs
        .par_iter()
        .map(|&(n, seed)| {
            let cfg = SystemConfig::symmetric(n, d)?.with_seed(seed);
            let stats = run_chain(&cfg, steps, burn_in)?;
            Ok(SweepRun {
                n,
                d,
                seed,
                tails: tails(&stats, m_max),
                zero_returns: ZeroReturnSummary::from_gaps(&stats.zero_returns),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    runs.sort_by_key(|r| (r.n, r.seed));
    Ok(runs)
}

pub fn write_sweep_csv<W: std::io::Write>(out: W, runs: &[SweepRun]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for run in runs {
        for row in run.rows() {
            w.serialize(row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Which tail curve a monotonicity note refers to.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Curve {
    P,
    Q,
    R,
}

/// An increase in a tail curve from one `n` to the next beyond two standard errors.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct MonotonicityNote {
    pub curve: Curve,
    pub m: usize,
    pub n_from: usize,
    pub n_to: usize,
    pub increase: f64,
    pub allowance: f64,
}

/// Reports where `p`, `q` or `r` increase with `n` by more than two standard errors.
/// Seeds are averaged per `n`. The result is an observation, not a check.
pub fn monotonicity_notes(runs: &[SweepRun]) -> Vec<MonotonicityNote> {
    let mut ns: Vec<usize> = runs.iter().map(|r| r.n).collect();
    ns.dedup();
    let Some(m_max) = runs.first().map(|r| r.tails.m_max) else {
        return Vec::new();
    };
    let stat = |n: usize, curve: Curve, m: usize| {
        let sel: Vec<&SweepRun> = runs.iter().filter(|r| r.n == n).collect();
        let k = sel.len() as f64;
        let pick = |r: &SweepRun| match curve {
            Curve::P => (r.tails.mean.p[m], r.tails.mean.stderr_p[m]),
            Curve::Q => (r.tails.mean.q[m], r.tails.mean.stderr_q[m]),
            Curve::R => (r.tails.mean.r[m], r.tails.mean.stderr_r[m]),
        };
        let mean = sel.iter().map(|r| pick(r).0).sum::<f64>() / k;
        let se = (sel.iter().map(|r| pick(r).1.powi(2)).sum::<f64>()).sqrt() / k;
        (mean, se)
    };
    let mut notes = Vec::new();
    for curve in [Curve::P, Curve::Q, Curve::R] {
        for m in 0..=m_max {
            for w in ns.windows(2) {
                let (a, sa) = stat(w[0], curve, m);
                let (b, sb) = stat(w[1], curve, m);
                let allowance = 2.0 * (sa * sa + sb * sb).sqrt();
                if b - a > allowance {
                    notes.push(MonotonicityNote {
                        curve,
                        m,
                        n_from: w[0],
                        n_to: w[1],
                        increase: b - a,
                        allowance,
                    });
                }
            }
        }
    }
    notes
}

/// One line of the `5/M` bound check.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BoundLine {
    pub m: usize,
    pub agent: usize,
    pub tail: f64,
    pub stderr: f64,
    /// `5/M + 3 * stderr`
    pub bound: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct BoundReport {
    /// The tightest line for each `M` over all agents.
    pub lines: Vec<BoundLine>,
    pub worst_margin: f64,
    pub violations: Vec<BoundLine>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `P(|s_i| > M) <= 5/M + 3 stderr` for every agent and `M = 1..=m_max`.
pub fn check_5_over_m(estimates: &TailEstimates) -> BoundReport {
    let mut lines = Vec::new();
    let mut violations = Vec::new();
    for m in 1..=estimates.m_max {
        let mut tightest: Option<BoundLine> = None;
        for (agent, a) in estimates.per_agent.iter().enumerate() {
            let tail = a.tail(m);
            let stderr = a.stderr_p[m];
            let bound = 5.0 / m as f64 + 3.0 * stderr;
            let line = BoundLine {
                m,
                agent,
                tail,
                stderr,
                bound,
                margin: bound - tail,
            };
            if line.margin < 0.0 {
                violations.push(line.clone());
            }
            if tightest.as_ref().map_or(true, |t| line.margin < t.margin) {
                tightest = Some(line);
            }
        }
        lines.extend(tightest);
    }
    let worst_margin = lines.iter().map(|l| l.margin).fold(f64::INFINITY, f64::min);
    BoundReport {
        lines,
        worst_margin,
        violations,
    }
}

/// Balances at the given times for a chain, one snapshot per time.
pub fn snapshots(config: &SystemConfig, times: &[u64]) -> Result<Vec<TokenState>> {
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    let mut chain = Chain::new(config.clone())?;
    let mut out = Vec::with_capacity(times.len());
    for &t in &sorted {
        chain.run(t - chain.state().t());
        out.push(chain.state().clone());
    }
    Ok(out)
}

/// Spread of balances across independent replications at two times.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VarianceGrowth {
    pub t1: u64,
    pub t2: u64,
    pub var_t1: f64,
    pub var_t2: f64,
    pub ratio: f64,
    /// Exact variance at `t1` and `t2` when `d = 1`.
    pub exact_t1: Option<f64>,
    pub exact_t2: Option<f64>,
}

/// Sample variance of each agent's balance across `seeds`, averaged over agents.
pub fn variance_growth(
    config: &SystemConfig,
    t1: u64,
    t2: u64,
    seeds: &[u64],
) -> Result<VarianceGrowth> {
    if seeds.len() < 2 {
        return Err(Error::invalid("need at least two seeds"));
    }
    let snaps = seeds
        .par_iter()
        .map(|&s| snapshots(&config.clone().with_seed(s), &[t1, t2]))
        .collect::<Result<Vec<_>>>()?;
    let var_at = |k: usize| {
        let n = config.n;
        let mut total = 0.0;
        for i in 0..n {
            let xs: Vec<f64> = snaps.iter().map(|s| s[k].balances()[i] as f64).collect();
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            total += xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        }
        total / n as f64
    };
    let (v1, v2) = (var_at(0), var_at(1));
    let exact = |t: u64| {
        (config.d == 1 && config.beta.is_none()).then(|| {
            let per_step: f64 = (0..config.n)
                .map(|i| {
                    let up = config.q[i] * (1.0 - config.p[i]);
                    let down = config.p[i] * (1.0 - config.q[i]);
                    up + down - (up - down).powi(2)
                })
                .sum::<f64>()
                / config.n as f64;
            per_step * t as f64
        })
    };
    Ok(VarianceGrowth {
        t1,
        t2,
        var_t1: v1,
        var_t2: v2,
        ratio: v2 / v1,
        exact_t1: exact(t1),
        exact_t2: exact(t2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_grows_both_ways() {
        let mut h = Histogram::default();
        h.add(3, 2);
        h.add(-2, 1);
        h.add(5, 4);
        assert_eq!(h.count(3), 2);
        assert_eq!(h.count(-2), 1);
        assert_eq!(h.count(4), 0);
        assert_eq!(h.count(100), 0);
        assert_eq!(h.total(), 7);
        assert_eq!(h.iter().collect::<Vec<_>>(), vec![(-2, 1), (3, 2), (5, 4)]);
    }

    #[test]
    fn occupancy_matches_direct_recording() {
        let cfg = SystemConfig::new(vec![0.2, 0.3, 0.5], vec![0.5, 0.3, 0.2], 2)
            .unwrap()
            .with_seed(9);
        let (steps, burn) = (20_011, 1_003);
        let stats = run_chain_batched(&cfg, steps, burn, 7).unwrap();
        let mut chain = Chain::new(cfg).unwrap();
        let mut direct = vec![Histogram::default(); 3];
        let mut zeros = Vec::new();
        let mut last = 0;
        for t in 1..=steps {
            chain.advance();
            let s = chain.state().balances();
            if t > burn {
                for i in 0..3 {
                    direct[i].add(s[i], 1);
                }
            }
            if chain.state().is_zero() {
                zeros.push(t - last);
                last = t;
            }
        }
        assert_eq!(stats.histograms, direct);
        assert_eq!(stats.zero_returns, zeros);
        assert_eq!(stats.batches.len(), 7);
        let per_batch: u64 = stats.batches.iter().map(|b| b[0].total()).sum();
        assert_eq!(per_batch, steps - burn);
    }

    #[test]
    fn pqr_identity_is_exact() {
        let cfg = SystemConfig::symmetric(5, 2).unwrap().with_seed(4);
        let stats = run_chain(&cfg, 200_000, 10_000).unwrap();
        let t = tails(&stats, 6);
        for a in t.per_agent.iter().chain([&t.mean]) {
            for m in 0..=6 {
                assert!((a.p[m] - (a.q[m] + a.r[m] - 1.0)).abs() < 1e-12);
                assert!((0.0..=1.0).contains(&a.p[m]));
                if m > 0 {
                    assert!(a.p[m] >= a.p[m - 1]);
                }
            }
        }
    }

    #[test]
    fn p_at_zero_is_fraction_at_zero() {
        let cfg = SystemConfig::symmetric(3, 2).unwrap().with_seed(1);
        let stats = run_chain(&cfg, 50_000, 1_000).unwrap();
        let t = tails(&stats, 0);
        let f = stats.histograms[0].count(0) as f64 / stats.window() as f64;
        assert!((t.per_agent[0].p[0] - f).abs() < 1e-15);
    }

    #[test]
    fn rejects_burn_in_past_end() {
        let cfg = SystemConfig::symmetric(2, 2).unwrap();
        assert!(run_chain(&cfg, 10, 10).is_err());
    }

    #[test]
    fn zero_summary() {
        let z = ZeroReturnSummary::from_gaps(&[1, 3, 5, 3]);
        assert_eq!(z.count, 4);
        assert!((z.mean - 3.0).abs() < 1e-12);
        assert!((z.first_half_mean - 2.0).abs() < 1e-12);
    }
}
