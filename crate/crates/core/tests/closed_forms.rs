//! Two-agent closed forms against a birth-death oracle written out here.

use approx::assert_abs_diff_eq;
use scrip_core::oracle::{self, TruncatedChain};
use scrip_core::two_agent::{decay_constant, solve, solve_intermediate, DEFAULT_M_CAP};
use scrip_core::SystemConfig;

/// Probability that agent 1 provides, given the sign of `s_1`, when the
/// number of draws is `d`. Ties between the two agents are split evenly.
fn agent1_provides(q1: f64, q2: f64, d: i32, sign: i64) -> f64 {
    let (only1, only2) = (q1.powi(d), q2.powi(d));
    match sign {
        1 => only1,
        -1 => 1.0 - only2,
        _ => only1 + 0.5 * (1.0 - only1 - only2),
    }
}

/// Stationary law of `s_1` on `-b..=b` by detailed balance. `mix` lists
/// `(weight, d)` pairs for the number of draws.
fn birth_death(p: [f64; 2], q: [f64; 2], mix: &[(f64, i32)], b: i64) -> Vec<f64> {
    let prov1 = |k: i64| {
        mix.iter()
            .map(|&(w, d)| w * agent1_provides(q[0], q[1], d, k.signum()))
            .sum::<f64>()
    };
    let up = |k: i64| p[1] * prov1(k);
    let down = |k: i64| p[0] * (1.0 - prov1(k));
    // Build outwards from zero so the weights stay bounded.
    let mut right = vec![1.0];
    for k in 0..b {
        let last = *right.last().unwrap();
        right.push(last * up(k) / down(k + 1));
    }
    let mut left = Vec::new();
    let mut cur = 1.0;
    for k in (-b + 1..=0).rev() {
        cur *= down(k) / up(k - 1);
        left.push(cur);
    }
    left.reverse();
    left.extend(right);
    let total: f64 = left.iter().sum();
    left.iter().map(|x| x / total).collect()
}

fn tail(law: &[f64], b: i64, m: i64) -> f64 {
    law.iter()
        .enumerate()
        .filter(|(i, _)| (*i as i64 - b).abs() > m)
        .map(|(_, w)| w)
        .sum()
}

const CASES: [([f64; 2], [f64; 2]); 5] = [
    ([0.5, 0.5], [0.5, 0.5]),
    ([0.6, 0.4], [0.55, 0.45]),
    ([0.7, 0.3], [0.6, 0.4]),
    ([0.45, 0.55], [0.5, 0.5]),
    ([0.3, 0.7], [0.45, 0.55]),
];

#[test]
fn closed_form_matches_birth_death() {
    for (p, q) in CASES {
        let s = *solve(p, q, 2).unwrap().steady().unwrap();
        let law = birth_death(p, q, &[(1.0, 2)], 80);
        {
            assert_abs_diff_eq!(s.pi00(), law[80], epsilon = 1e-12);
            for m in 0..20 {
                assert_abs_diff_eq!(s.tail(m), tail(&law, 80, m as i64), epsilon = 1e-12);
            }
            for k in -5..=5 {
                assert_abs_diff_eq!(s.point_mass(k), law[(80 + k) as usize], epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn intermediate_matches_birth_death() {
    for beta in [0.1, 0.25, 0.5, 0.75, 1.0] {
        for (p, q) in CASES {
            let Some(s) = solve_intermediate(p, q, beta).unwrap().steady().copied() else {
                continue;
            };
            let law = birth_death(p, q, &[(beta, 2), (1.0 - beta, 1)], 1500);
            for m in 0..15 {
                let t = tail(&law, 1500, m as i64);
                assert!(
                    (s.tail(m) - t).abs() < 1e-10,
                    "beta {beta} {p:?} {q:?} m {m}: {} vs {t}",
                    s.tail(m)
                );
            }
        }
    }
}

/// For more than two draws the closed form corresponds to ties at zero being
/// broken in proportion to how often each agent was drawn, so agent 1
/// provides at zero with probability `q1`.
#[test]
fn closed_form_for_more_draws_weights_ties_by_draws() {
    for d in 3..=4 {
        for (p, q) in CASES {
            let s = *solve(p, q, d).unwrap().steady().unwrap();
            let b = 80i64;
            let prov1 = |k: i64| match k.signum() {
                0 => q[0],
                sign => agent1_provides(q[0], q[1], d as i32, sign),
            };
            let mut w = vec![1.0];
            for k in -b..b {
                let last: f64 = *w.last().unwrap();
                w.push(last * p[1] * prov1(k) / (p[0] * (1.0 - prov1(k + 1))));
            }
            let total: f64 = w.iter().sum();
            let law: Vec<f64> = w.iter().map(|x| x / total).collect();
            assert_abs_diff_eq!(s.pi00(), law[b as usize], epsilon = 1e-12);
            for m in 0..20 {
                assert_abs_diff_eq!(s.tail(m), tail(&law, b, m as i64), epsilon = 1e-12);
            }
        }
    }
}

#[test]
fn symmetric_values() {
    let s = *solve([0.5, 0.5], [0.5, 0.5], 2).unwrap().steady().unwrap();
    assert_abs_diff_eq!(s.pi00(), 1.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(s.expected_return(), 3.0, epsilon = 1e-12);
    for m in 0..10 {
        assert_abs_diff_eq!(
            s.tail(m),
            (2.0 / 3.0) * (1.0f64 / 3.0).powi(m as i32),
            epsilon = 1e-15
        );
    }
    assert_abs_diff_eq!(
        decay_constant(&s, DEFAULT_M_CAP).unwrap(),
        1.0 / 3.0,
        epsilon = 1e-15
    );
    for beta in [0.25, 0.5, 0.75] {
        let s = *solve_intermediate([0.5, 0.5], [0.5, 0.5], beta)
            .unwrap()
            .steady()
            .unwrap();
        for m in 0..10 {
            let expected = (2.0 / (2.0 + beta)) * ((2.0 - beta) / (2.0 + beta)).powi(m as i32);
            assert_abs_diff_eq!(s.tail(m), expected, epsilon = 1e-14);
        }
    }
}

#[test]
fn unstable_when_one_agent_is_too_available() {
    // q1^2 >= p1 means agent 1 keeps gaining.
    assert!(!solve([0.3, 0.7], [0.6, 0.4], 2).unwrap().is_stable());
    assert!(solve([0.37, 0.63], [0.6, 0.4], 2).unwrap().is_stable());
}

#[test]
fn decay_constant_is_tight() {
    for (p, q) in CASES {
        let s = *solve(p, q, 2).unwrap().steady().unwrap();
        let a = decay_constant(&s, DEFAULT_M_CAP).unwrap();
        assert!(a < 1.0 && a <= s.x + s.y);
        for m in 1..60 {
            assert!(a.powi(m) >= s.tail(m as u32) * (1.0 - 1e-12));
        }
        // Any smaller constant fails eventually.
        let smaller = a * 0.9;
        assert!((1..300).any(|m| smaller.powi(m) < s.tail(m as u32)));
    }
}

#[test]
fn exact_chain_agrees_for_two_agents() {
    for (p, q) in CASES {
        let cfg = SystemConfig::new(p.to_vec(), q.to_vec(), 2).unwrap();
        let chain = TruncatedChain::build(&cfg, 60).unwrap();
        let st = oracle::stationary(&chain).unwrap();
        let law = birth_death(p, q, &[(1.0, 2)], 60);
        for m in 0..25 {
            assert_abs_diff_eq!(
                oracle::tail(&chain, &st.pi, 0, m),
                tail(&law, 60, m),
                epsilon = 1e-10
            );
        }
        let ret = oracle::expected_return_time(&chain, &st.pi, &[0, 0]).unwrap();
        assert_abs_diff_eq!(ret, 1.0 / law[60], epsilon = 1e-8);
    }
}
