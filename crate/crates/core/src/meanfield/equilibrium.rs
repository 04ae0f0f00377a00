//! Equilibrium of the mean-field system.
//!
//! At a fixed point `pi_{i+1} = pi_i^d`, so `pi_i = pi_0^(d^i)` for every integer
//! `i`. Token conservation pins down `pi_0` through
//!
//! ```text
//! R(pi_0) = sum_{i>=1} pi_0^(d^i) - sum_{i>=0} (1 - pi_0^(d^-i)) = 0
//! ```
//!
//! `R` is increasing in `pi_0`; for `d = 2` it is negative at 1/2 and positive at 3/4.

use serde::{Deserialize, Serialize};

use super::{MeanFieldState, DEFAULT_HI, DEFAULT_LO};
use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-12;

/// Terms of the right-hand sum: `pi_0^(d^i)` for `i >= 1`.
fn right_sum(ln_pi0: f64, d: f64, cutoff: f64) -> f64 {
    let mut sum = 0.0;
    let mut e = d;
    loop {
        let term = (ln_pi0 * e).exp();
        sum += term;
        // Later terms are at most term^(d-1) times the previous one.
        if term < cutoff {
            return sum;
        }
        e *= d;
    }
}

/// Terms of the left-hand sum: `1 - pi_0^(d^-i)` for `i >= 0`.
fn left_sum(ln_pi0: f64, d: f64, cutoff: f64) -> f64 {
    let term = |i: i32| -(ln_pi0 * d.powi(-i)).exp_m1();
    let mut sum = 0.0;
    let mut i = 0;
    let mut cur = term(0);
    loop {
        sum += cur;
        let next = term(i + 1);
        // Successive ratios decrease towards 1/d, so the remainder after this
        // term is at most next / (1 - next/cur).
        let ratio = next / cur;
        let remainder = next / (1.0 - ratio);
        if cur < cutoff && remainder < cutoff {
            return sum;
        }
        cur = next;
        i += 1;
    }
}

/// Residual of the balance equation at `pi0`, with series truncated at `tol * 1e-3`.
pub fn balance_residual(pi0: f64, d: u32, tol: f64) -> f64 {
    assert!(pi0 > 0.0 && pi0 < 1.0, "pi0 must lie in (0, 1)");
    let ln = pi0.ln();
    let cutoff = tol * 1e-3;
    right_sum(ln, d as f64, cutoff) - left_sum(ln, d as f64, cutoff)
}

/// The fixed point, determined by `pi0` and `d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    pub pi0: f64,
    pub d: u32,
    /// Balance residual at `pi0`.
    pub residual: f64,
}

impl EquilibriumPoint {
    /// `pi_i = pi_0^(d^i)` for any integer `i`.
    pub fn pi(&self, i: i64) -> f64 {
        (self.pi0.ln() * (self.d as f64).powi(i as i32)).exp()
    }

    /// `pi_i` obtained by iterating the recursion from `pi_0` instead of the closed power.
    pub fn pi_recursive(&self, i: i64) -> f64 {
        let mut x = self.pi0;
        if i >= 0 {
            for _ in 0..i {
                x = x.powi(self.d as i32);
            }
        } else {
            let r = 1.0 / self.d as f64;
            for _ in 0..(-i) {
                x = x.powf(r);
            }
        }
        x
    }

    /// Fraction of agents with `|s| <= m`: `pi_{-m} - pi_{m+1}`.
    pub fn p_inf(&self, m: u32) -> f64 {
        self.pi(-(m as i64)) - self.pi(m as i64 + 1)
    }

    /// The equilibrium as a state on `lo..=hi`.
    pub fn window(&self, lo: i64, hi: i64) -> Result<MeanFieldState> {
        MeanFieldState::new(lo, hi, self.d, (lo..=hi).map(|i| self.pi(i)).collect())
    }

    pub fn default_window(&self) -> MeanFieldState {
        self.window(DEFAULT_LO, DEFAULT_HI)
            .expect("default window is valid")
    }
}

/// Bisection for `pi_0`. For `d = 2` the bracket is (1/2, 3/4); for larger `d`
/// a bracket is found by scanning (0, 1).
pub fn solve_equilibrium(d: u32, tol: f64) -> Result<EquilibriumPoint> {
    if d < 2 {
        return Err(Error::invalid("the mean-field equilibrium needs d >= 2"));
    }
    let r = |x: f64| balance_residual(x, d, tol);
    let (mut a, mut b) = if d == 2 {
        (0.5, 0.75)
    } else {
        let grid: Vec<f64> = (1..100).map(|k| k as f64 / 100.0).collect();
        let k = grid
            .windows(2)
            .position(|w| r(w[0]) < 0.0 && r(w[1]) > 0.0)
            .ok_or_else(|| {
                Error::Invariant(format!(
                    "no sign change of the balance residual for d = {d}"
                ))
            })?;
        (grid[k], grid[k + 1])
    };
    if !(r(a) < 0.0 && r(b) > 0.0) {
        return Err(Error::Invariant(format!(
            "balance residual does not change sign on ({a}, {b})"
        )));
    }
    let mut mid = 0.5 * (a + b);
    for _ in 0..200 {
        mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let v = r(mid);
        if v == 0.0 {
            break;
        }
        if v < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let residual = r(mid);
    if residual.abs() >= tol {
        return Err(Error::NoConvergence {
            iterations: 200,
            residual,
        });
    }
    Ok(EquilibriumPoint {
        pi0: mid,
        d,
        residual,
    })
}

/// Values of `g(M) = pi0^(2^-M) - pi0^(2^(M+1)) - 1 + 2^-M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HalfBoundReport {
    pub values: Vec<(u32, f64)>,
    pub min: f64,
}

/// Checks `g(M) >= 0` for `M = 1..=m_max`, i.e. `p_inf(M) >= 1 - (1/2)^M`.
pub fn verify_half_bound(eq: &EquilibriumPoint, m_max: u32) -> Result<HalfBoundReport> {
    if eq.d != 2 {
        return Err(Error::invalid("the 1/2 bound is stated for d = 2"));
    }
    let ln = eq.pi0.ln();
    let values: Vec<(u32, f64)> = (1..=m_max)
        .map(|m| {
            let h = 0.5f64.powi(m as i32);
            // pi0^(2^-M) - 1 via expm1 keeps precision when 2^-M is tiny.
            let g = (ln * h).exp_m1() - (ln * 2f64.powi(m as i32 + 1)).exp() + h;
            (m, g)
        })
        .collect();
    let min = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    if let Some(&(m, g)) = values.iter().find(|v| v.1 < 0.0) {
        return Err(Error::Invariant(format!("g({m}) = {g:e} < 0")));
    }
    Ok(HalfBoundReport { values, min })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_signs() {
        assert!(balance_residual(0.5, 2, DEFAULT_TOL) < 0.0);
        assert!(balance_residual(0.75, 2, DEFAULT_TOL) > 0.0);
        // The often quoted 0.667 sits just below the root.
        let r = balance_residual(0.667, 2, DEFAULT_TOL);
        assert!(r < 0.0 && r > -0.04, "{r}");
    }

    #[test]
    fn residual_is_increasing() {
        let mut prev = f64::NEG_INFINITY;
        for k in 1..100 {
            let v = balance_residual(k as f64 / 100.0, 2, DEFAULT_TOL);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn larger_d() {
        let eq = solve_equilibrium(3, DEFAULT_TOL).unwrap();
        assert!(eq.residual.abs() < DEFAULT_TOL);
        assert!(eq.pi0 > 0.0 && eq.pi0 < 1.0);
        assert!(solve_equilibrium(1, DEFAULT_TOL).is_err());
    }

    #[test]
    fn recursion_and_powers_agree() {
        let eq = solve_equilibrium(2, DEFAULT_TOL).unwrap();
        for i in -8..=5 {
            assert!((eq.pi(i) - eq.pi_recursive(i)).abs() < 1e-12, "i = {i}");
        }
        for i in -20..20 {
            assert!((eq.pi(i + 1) - eq.pi(i).powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn half_bound_needs_d2() {
        let eq = solve_equilibrium(3, DEFAULT_TOL).unwrap();
        assert!(verify_half_bound(&eq, 5).is_err());
    }
}
