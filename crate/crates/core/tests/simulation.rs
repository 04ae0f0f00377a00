//! Monte Carlo against the exact chain, the mean-field drift and each other.

use scrip_core::meanfield::{drift, MeanFieldState};
use scrip_core::montecarlo::{run_chain, tails};
use scrip_core::oracle::{self, TruncatedChain};
use scrip_core::reduction::{parse_rational, reduce, simulate_grouped};
use scrip_core::rng::from_seed;
use scrip_core::{Chain, Dynamics, Rule, SystemConfig, TokenState};

fn exact_tails(cfg: &SystemConfig, bound: u32, agent: usize, m_max: i64) -> Vec<f64> {
    let chain = TruncatedChain::build(cfg, bound).unwrap();
    let st = oracle::stationary(&chain).unwrap();
    (0..=m_max)
        .map(|m| oracle::tail(&chain, &st.pi, agent, m))
        .collect()
}

#[test]
fn three_agents_simulation_matches_exact_chain() {
    let cases = [
        SystemConfig::symmetric(3, 2).unwrap(),
        SystemConfig::new(vec![0.5, 0.3, 0.2], vec![0.4, 0.35, 0.25], 2).unwrap(),
        SystemConfig::new(vec![0.4, 0.3, 0.3], vec![0.3, 0.3, 0.4], 3).unwrap(),
    ];
    for (i, cfg) in cases.into_iter().enumerate() {
        let exact = exact_tails(&cfg, 10, 0, 4);
        let stats = run_chain(&cfg.clone().with_seed(40 + i as u64), 3_000_000, 100_000).unwrap();
        let est = tails(&stats, 4);
        for m in 0..=4 {
            let got = est.per_agent[0].tail(m);
            let tol = 5.0 * est.per_agent[0].stderr_p[m] + 1e-3;
            assert!(
                (got - exact[m]).abs() < tol,
                "case {i} M={m}: {got} vs {}",
                exact[m]
            );
        }
    }
}

#[test]
fn truncation_error_shrinks_with_the_box() {
    let cfg = SystemConfig::symmetric(3, 2).unwrap();
    let t10 = exact_tails(&cfg, 10, 0, 4);
    let t14 = exact_tails(&cfg, 14, 0, 4);
    let t18 = exact_tails(&cfg, 18, 0, 4);
    for m in 0..=4 {
        let (far, near) = ((t10[m] - t18[m]).abs(), (t14[m] - t18[m]).abs());
        assert!(near < 1e-5, "M={m}: {near}");
        assert!(near < far, "M={m}");
    }
}

#[test]
fn uniform_rule_spreads_more() {
    let base = SystemConfig::symmetric(5, 2).unwrap().with_seed(3);
    let min = tails(&run_chain(&base, 1_000_000, 100_000).unwrap(), 3);
    let uni = tails(
        &run_chain(&base.clone().with_rule(Rule::Uniform), 1_000_000, 100_000).unwrap(),
        3,
    );
    assert!(
        uni.mean.tail(3) > 2.0 * min.mean.tail(3),
        "{} vs {}",
        uni.mean.tail(3),
        min.mean.tail(3)
    );
}

#[test]
fn one_step_change_matches_mean_field_drift() {
    let n = 1000;
    let cfg = SystemConfig::symmetric(n, 2).unwrap().with_seed(8);
    let mut chain = Chain::new(cfg.clone()).unwrap();
    // One unit of ODE time is n periods.
    chain.run(1500);
    let s = chain.state().balances().to_vec();
    let (lo, hi) = (-40i64, 30i64);
    let z: Vec<f64> = (lo..=hi)
        .map(|i| s.iter().filter(|&&x| x >= i).count() as f64 / n as f64)
        .collect();
    let f = drift(&MeanFieldState::new(lo, hi, 2, z).unwrap());

    let dynamics = Dynamics::new(cfg).unwrap();
    let mut rng = from_seed(99);
    let samples = 400_000;
    let mut change = vec![0i64; f.len()];
    for _ in 0..samples {
        let mut st = TokenState::from_balances(s.clone(), 0).unwrap();
        let out = dynamics.step(&mut st, &mut rng);
        if out.transferred {
            // Requester drops below its old balance, provider reaches old + 1.
            let (r, p) = (s[out.requester], s[out.provider]);
            if r >= lo && r <= hi {
                change[(r - lo) as usize] -= 1;
            }
            if p + 1 >= lo && p + 1 <= hi {
                change[(p + 1 - lo) as usize] += 1;
            }
        }
    }
    let mut checked = 0;
    for (k, &fk) in f.iter().enumerate() {
        if fk.abs() > 0.05 {
            let empirical = change[k] as f64 / samples as f64; // per period, times n
            assert!(
                (empirical - fk).abs() < 0.1 * fk.abs(),
                "i={}: {empirical} vs {fk}",
                lo + k as i64
            );
            checked += 1;
        }
    }
    assert!(checked >= 2);
}

#[test]
fn grouped_zero_returns_settle() {
    let p: Vec<_> = ["0.5", "0.3", "0.2"]
        .iter()
        .map(|s| parse_rational(s).unwrap())
        .collect();
    let gs = reduce(&p, &p).unwrap();
    let run = simulate_grouped(&gs, 1_000_000, 4, 10_000).unwrap();
    assert_eq!(run.violations, 0);
    assert!(run.zero_returns.count > 1_000);
    assert!(run.zero_returns.drift() < 0.05, "{:?}", run.zero_returns);
    assert!(run
        .trajectory
        .iter()
        .all(|(_, v)| v.iter().sum::<i64>() == 0));
}

#[test]
fn d1_spread_grows() {
    let cfg = SystemConfig::symmetric(4, 1).unwrap();
    let seeds: Vec<u64> = (0..40).collect();
    let g = scrip_core::montecarlo::variance_growth(&cfg, 20_000, 40_000, &seeds).unwrap();
    assert!(g.ratio > 1.4 && g.ratio < 2.8, "{g:?}");
    let exact = g.exact_t1.unwrap();
    assert!((g.var_t1 / exact - 1.0).abs() < 0.35, "{g:?}");
}
