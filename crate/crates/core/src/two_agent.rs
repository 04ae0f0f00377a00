//! Closed-form steady state for two agents.
//!
//! For `n = 2` the chain is a birth-death process on the balance of agent 1.
//! Its stationary law is two geometric tails glued at zero:
//!
//! ```text
//! P(|s_i| > M) = pi00 * (u * x^M + v * y^M)
//! pi00         = 1 / (1 + u + v)
//! ```
//!
//! where `x`, `y` are the ratios of up- to down-rates on either side and
//! `u`, `v` the masses of the two sides relative to `pi00`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `M` checked by [`decay_constant`].
pub const DEFAULT_M_CAP: u32 = 200;

/// Stationary quantities of a stable two-agent system.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    /// Ratio of the geometric tail on the side where agent 1 holds tokens.
    pub x: f64,
    /// Ratio on the side where agent 2 holds tokens.
    pub y: f64,
    /// Mass of the `x` side relative to the zero state.
    pub u: f64,
    /// Mass of the `y` side relative to the zero state.
    pub v: f64,
}

impl SteadyState {
    /// Stationary probability of `(0, 0)`.
    pub fn pi00(&self) -> f64 {
        1.0 / (1.0 + self.u + self.v)
    }

    /// Mean time between visits to `(0, 0)`.
    pub fn expected_return(&self) -> f64 {
        1.0 + self.u + self.v
    }

    /// `c1`: stationary mass on the `x` side.
    pub fn c1(&self) -> f64 {
        self.u * self.pi00()
    }

    /// `c2`: stationary mass on the `y` side.
    pub fn c2(&self) -> f64 {
        self.v * self.pi00()
    }

    /// `P(|s_i| > M)`, the same for both agents.
    pub fn tail(&self, m: u32) -> f64 {
        self.c1() * self.x.powi(m as i32) + self.c2() * self.y.powi(m as i32)
    }

    /// `P(s_1 = k)` for any integer `k`.
    pub fn point_mass(&self, k: i64) -> f64 {
        let pi00 = self.pi00();
        // Detailed balance gives pi(k) = pi(1) x^(k-1) for k >= 1, and u = pi(1)/(pi00 (1-x)).
        match k {
            0 => pi00,
            k if k > 0 => pi00 * self.u * (1.0 - self.x) * self.x.powi(k as i32 - 1),
            k => pi00 * self.v * (1.0 - self.y) * self.y.powi((-k) as i32 - 1),
        }
    }
}

/// Result of the two-agent solver. Unstable parameters have no stationary law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TwoAgentSolution {
    Stable(SteadyState),
    /// `ratios` are the would-be tail ratios; at least one is `>= 1`.
    Unstable {
        ratios: (f64, f64),
    },
}

impl TwoAgentSolution {
    pub fn is_stable(&self) -> bool {
        matches!(self, TwoAgentSolution::Stable(_))
    }

    pub fn steady(&self) -> Option<&SteadyState> {
        match self {
            TwoAgentSolution::Stable(s) => Some(s),
            TwoAgentSolution::Unstable { .. } => None,
        }
    }

    pub fn tail(&self, m: u32) -> Option<f64> {
        self.steady().map(|s| s.tail(m))
    }

    pub fn pi00(&self) -> Option<f64> {
        self.steady().map(SteadyState::pi00)
    }

    pub fn expected_return(&self) -> Option<f64> {
        self.steady().map(SteadyState::expected_return)
    }
}

fn check_pair(name: &str, v: [f64; 2]) -> Result<()> {
    if !v.iter().all(|x| x.is_finite() && *x > 0.0) || ((v[0] + v[1]) - 1.0).abs() > 1e-12 {
        return Err(Error::invalid(format!(
            "{name} = {v:?} must be a full-support distribution on two agents"
        )));
    }
    Ok(())
}

fn from_rates(
    num_x: f64,
    den_x: f64,
    num_y: f64,
    den_y: f64,
    u_num: f64,
    u_den: f64,
    v_num: f64,
    v_den: f64,
) -> TwoAgentSolution {
    let (x, y) = (num_x / den_x, num_y / den_y);
    if x < 1.0 && y < 1.0 {
        TwoAgentSolution::Stable(SteadyState {
            x,
            y,
            u: u_num / u_den,
            v: v_num / v_den,
        })
    } else {
        TwoAgentSolution::Unstable { ratios: (x, y) }
    }
}

/// Two agents, `d >= 2` availability draws every period.
///
/// Stable exactly when `q1^d < p1` and `q2^d < p2`.
///
/// When both balances are zero the formula has agent 1 provide with
/// probability `q1`, which is a tie broken in proportion to the number of
/// draws each agent received. For `d = 2` that coincides with the
/// simulator's rule of choosing uniformly among distinct tied agents; for
/// larger `d` the two differ slightly.
pub fn solve(p: [f64; 2], q: [f64; 2], d: u32) -> Result<TwoAgentSolution> {
    check_pair("p", p)?;
    check_pair("q", q)?;
    if d < 2 {
        return Err(Error::invalid(
            "the closed form needs d >= 2 (d = 1 is never stable)",
        ));
    }
    let [p1, p2] = p;
    let [q1, q2] = q;
    let (a, b) = (q1.powi(d as i32), q2.powi(d as i32));
    Ok(from_rates(
        p2 * a,
        p1 * (1.0 - a),
        p1 * b,
        p2 * (1.0 - b),
        p2 * q1,
        p1 - a,
        p1 * q2,
        p2 - b,
    ))
}

/// Two agents where each period has two availability draws with probability
/// `beta` and one draw otherwise.
pub fn solve_intermediate(p: [f64; 2], q: [f64; 2], beta: f64) -> Result<TwoAgentSolution> {
    check_pair("p", p)?;
    check_pair("q", q)?;
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!(
            "beta must lie in (0, 1], got {beta}"
        )));
    }
    let [p1, p2] = p;
    let [q1, q2] = q;
    let (a, b) = (q1 * q1, q2 * q2);
    let nb = 1.0 - beta;
    Ok(from_rates(
        beta * p2 * a + nb * p2 * q1,
        beta * p1 * (1.0 - a) + nb * p1 * q2,
        beta * p1 * b + nb * p1 * q2,
        beta * p2 * (1.0 - b) + nb * p2 * q1,
        p2 * q1,
        beta * (p1 - a) + nb * (p1 * q2 - p2 * q1),
        p1 * q2,
        beta * (p2 - b) + nb * (p2 * q1 - p1 * q2),
    ))
}

/// Smallest `a` with `a^M >= c1 x^M + c2 y^M` for every `M >= 1`.
///
/// Any valid `a` must be at least `max(x, y)`, since otherwise the larger
/// geometric term eventually dominates `a^M`. Conversely `a = max(x, y)` is
/// valid because `c1 + c2 = 1 - pi00 < 1`. The value is returned after a
/// direct check of the inequality for `M = 1..=m_cap`. It never exceeds `x + y`.
pub fn decay_constant(solution: &SteadyState, m_cap: u32) -> Result<f64> {
    let a = solution.x.max(solution.y);
    for m in 1..=m_cap {
        let lhs = a.powi(m as i32);
        let rhs = solution.tail(m);
        if lhs < rhs * (1.0 - 1e-12) {
            return Err(Error::Invariant(format!(
                "decay constant {a} fails at M = {m}: {lhs} < {rhs}"
            )));
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    const HALF: [f64; 2] = [0.5, 0.5];

    #[test]
    fn symmetric_d2() {
        let s = *solve(HALF, HALF, 2).unwrap().steady().unwrap();
        assert!((s.expected_return() - 3.0).abs() < 1e-12);
        for m in 0..10 {
            let want = (2.0 / 3.0) * (1.0f64 / 3.0).powi(m);
            assert!((s.tail(m as u32) - want).abs() < 1e-15);
        }
        assert!((decay_constant(&s, DEFAULT_M_CAP).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn stability_condition() {
        assert!(solve([0.6, 0.4], [0.6, 0.4], 2).unwrap().is_stable());
        let u = solve([0.4, 0.6], [0.7, 0.3], 2).unwrap();
        assert!(!u.is_stable());
        assert_eq!(u.tail(1), None);
        assert_eq!(u.expected_return(), None);
    }

    #[test]
    fn point_masses_sum_to_one_and_match_tail() {
        let s = *solve([0.6, 0.4], [0.55, 0.45], 3)
            .unwrap()
            .steady()
            .unwrap();
        let total: f64 = (-400..=400).map(|k| s.point_mass(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for m in 0..6i64 {
            let t: f64 = (-400..=400)
                .filter(|k: &i64| k.abs() > m)
                .map(|k| s.point_mass(k))
                .sum();
            assert!((t - s.tail(m as u32)).abs() < 1e-12);
        }
    }

    #[test]
    fn intermediate_symmetric_display() {
        for beta in [0.25, 0.5, 0.75] {
            let s = *solve_intermediate(HALF, HALF, beta)
                .unwrap()
                .steady()
                .unwrap();
            for m in 0..8 {
                let want = (2.0 / (2.0 + beta)) * ((2.0 - beta) / (2.0 + beta)).powi(m);
                assert!((s.tail(m as u32) - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn intermediate_at_beta_one_is_d2() {
        let p = [0.6, 0.4];
        let q = [0.55, 0.45];
        let a = *solve_intermediate(p, q, 1.0).unwrap().steady().unwrap();
        let b = *solve(p, q, 2).unwrap().steady().unwrap();
        assert!((a.x - b.x).abs() < 1e-15 && (a.y - b.y).abs() < 1e-15);
        assert!((a.pi00() - b.pi00()).abs() < 1e-15);
        let c = *solve_intermediate(p, q, 1.0 - 1e-9)
            .unwrap()
            .steady()
            .unwrap();
        assert!((c.pi00() - b.pi00()).abs() < 1e-8);
    }

    #[test]
    fn near_critical_decay() {
        let q1: f64 = 0.7;
        let p1 = q1 * q1 + 1e-3;
        let p = [p1, 1.0 - p1];
        let q = [q1, 1.0 - q1];
        let s = *solve(p, q, 2).unwrap().steady().unwrap();
        let a = decay_constant(&s, DEFAULT_M_CAP).unwrap();
        assert!(a > 0.99 && a < 1.0, "{a}");
    }

    #[test]
    fn decay_not_above_sum_of_ratios() {
        let s = *solve([0.6, 0.4], [0.55, 0.45], 2)
            .unwrap()
            .steady()
            .unwrap();
        assert!(s.x + s.y < 1.0);
        assert!(decay_constant(&s, DEFAULT_M_CAP).unwrap() <= s.x + s.y);
    }

    #[test]
    fn rejects_bad_pairs() {
        assert!(solve([1.0, 0.0], HALF, 2).is_err());
        assert!(solve(HALF, HALF, 1).is_err());
        assert!(solve_intermediate(HALF, HALF, 0.0).is_err());
    }
}
