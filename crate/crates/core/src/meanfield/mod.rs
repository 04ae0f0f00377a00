//! The infinite-agent limit.
//!
//! The state is the vector of tail fractions `z_i` (fraction of agents holding
//! at least `i` tokens) on a window `lo..=hi`, with `z_{lo-1} = 1` and
//! `z_{hi+1} = 0`. Its drift is
//!
//! ```text
//! dz_i/dt = (z_{i-1}^d - z_i^d) - (z_i - z_{i+1})
//! ```
//!
//! The equilibrium satisfies `pi_{i+1} = pi_i^d` and a zero-mean balance
//! equation in `pi_0`; see [`equilibrium`].

pub mod equilibrium;
pub mod two_type;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub use equilibrium::{
    balance_residual, solve_equilibrium, verify_half_bound, EquilibriumPoint, HalfBoundReport,
    DEFAULT_TOL,
};
pub use two_type::{
    two_type_drift, two_type_integrate, two_type_integrate_recording, two_type_rates, TwoTypeRates,
    TwoTypeState, TwoTypeTrajectory,
};

pub const DEFAULT_LO: i64 = -40;
pub const DEFAULT_HI: i64 = 30;
pub const DEFAULT_DT: f64 = 0.01;
/// Leakage through the window edges above this triggers a warning.
pub const BOUNDARY_THRESHOLD: f64 = 1e-10;
/// Order violations smaller than this are treated as rounding and repaired silently.
const CLAMP_SILENT: f64 = 1e-9;

/// Tail fractions on a window of token counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldState {
    lo: i64,
    hi: i64,
    d: u32,
    z: Vec<f64>,
}

fn check_window(lo: i64, hi: i64) -> Result<()> {
    if !(lo < 0 && hi > 0) {
        return Err(Error::invalid(format!(
            "window must satisfy lo < 0 < hi, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Index of the first order violation in `z` (bounds or monotonicity), if any exceeds `tol`.
fn order_violation(z: &[f64], tol: f64) -> Option<usize> {
    let mut prev = 1.0;
    for (k, &x) in z.iter().enumerate() {
        if !(x >= -tol && x <= 1.0 + tol && x <= prev + tol) {
            return Some(k);
        }
        prev = x;
    }
    None
}

impl MeanFieldState {
    pub fn new(lo: i64, hi: i64, d: u32, z: Vec<f64>) -> Result<Self> {
        check_window(lo, hi)?;
        if d < 1 {
            return Err(Error::invalid("d must be at least 1"));
        }
        if z.len() as i64 != hi - lo + 1 {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                hi - lo + 1,
                z.len()
            )));
        }
        if let Some(k) = order_violation(&z, 1e-9) {
            return Err(Error::invalid(format!(
                "z must lie in [0,1] and be non-increasing; fails at i = {}",
                lo + k as i64
            )));
        }
        Ok(MeanFieldState { lo, hi, d, z })
    }

    /// `z_i = 1` for `i <= 0` and `0` for `i >= 1`: every agent starts at zero.
    pub fn step_initial(lo: i64, hi: i64, d: u32) -> Result<Self> {
        check_window(lo, hi)?;
        let z = (lo..=hi).map(|i| if i <= 0 { 1.0 } else { 0.0 }).collect();
        Self::new(lo, hi, d, z)
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    /// `z_i`, with the boundary conventions outside the window.
    pub fn z(&self, i: i64) -> f64 {
        if i < self.lo {
            1.0
        } else if i > self.hi {
            0.0
        } else {
            self.z[(i - self.lo) as usize]
        }
    }

    /// `sum_{i>=1} z_i - sum_{i<=0} (1 - z_i)`: the mean balance, zero when tokens are conserved.
    pub fn mass_identity(&self) -> f64 {
        mass_identity(self.lo, &self.z)
    }

    /// Fraction of agents with `|s| <= m`.
    pub fn p_inf(&self, m: u32) -> f64 {
        self.z(-(m as i64)) - self.z(m as i64 + 1)
    }

    pub fn l1_distance(&self, other: &MeanFieldState) -> Result<f64> {
        if (self.lo, self.hi) != (other.lo, other.hi) {
            return Err(Error::invalid("states live on different windows"));
        }
        Ok(self
            .z
            .iter()
            .zip(&other.z)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }

    /// Flux through the window edges: `(1 - z_lo) + z_hi^d`.
    pub fn boundary_leak(&self) -> f64 {
        (1.0 - self.z[0]) + self.z[self.z.len() - 1].powi(self.d as i32)
    }
}

pub(crate) fn mass_identity(lo: i64, z: &[f64]) -> f64 {
    z.iter()
        .enumerate()
        .map(|(k, &x)| if lo + k as i64 >= 1 { x } else { x - 1.0 })
        .sum()
}

/// Drift of the single-type system, written into `out`.
pub fn drift_into(z: &[f64], d: u32, out: &mut [f64]) {
    let len = z.len();
    let d = d as i32;
    for k in 0..len {
        let prev = if k == 0 { 1.0 } else { z[k - 1] };
        let next = if k + 1 == len { 0.0 } else { z[k + 1] };
        out[k] = (prev.powi(d) - z[k].powi(d)) - (z[k] - next);
    }
}

pub fn drift(state: &MeanFieldState) -> Vec<f64> {
    let mut out = vec![0.0; state.z.len()];
    drift_into(&state.z, state.d, &mut out);
    out
}

/// Classic fourth-order Runge-Kutta step.
pub(crate) struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub(crate) fn new(len: usize) -> Self {
        Rk4 {
            k1: vec![0.0; len],
            k2: vec![0.0; len],
            k3: vec![0.0; len],
            k4: vec![0.0; len],
            tmp: vec![0.0; len],
        }
    }

    pub(crate) fn step(&mut self, y: &mut [f64], dt: f64, f: &impl Fn(&[f64], &mut [f64])) {
        let n = y.len();
        f(y, &mut self.k1);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k1[i];
        }
        f(&self.tmp, &mut self.k2);
        for i in 0..n {
            self.tmp[i] = y[i] + 0.5 * dt * self.k2[i];
        }
        f(&self.tmp, &mut self.k3);
        for i in 0..n {
            self.tmp[i] = y[i] + dt * self.k3[i];
        }
        f(&self.tmp, &mut self.k4);
        for i in 0..n {
            y[i] += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

/// Repairs bounds and monotonicity in place. Returns the largest repair made.
pub(crate) fn clamp_order(z: &mut [f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut prev = 1.0;
    for x in z.iter_mut() {
        let fixed = x.clamp(0.0, prev);
        worst = worst.max((fixed - *x).abs());
        *x = fixed;
        prev = fixed;
    }
    worst
}

/// Bookkeeping collected while integrating.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegrationDiagnostics {
    pub steps: u64,
    /// Largest `|mass identity(t) - mass identity(0)|` seen.
    pub max_mass_drift: f64,
    /// Number of steps where an order repair larger than rounding was needed.
    pub clamps: u64,
    /// Largest single repair.
    pub max_clamp: f64,
    pub max_boundary_leak: f64,
    /// Set when the leak exceeded [`BOUNDARY_THRESHOLD`].
    pub window_warning: bool,
}

/// Recorded states of an integration.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<MeanFieldState>,
    pub diagnostics: IntegrationDiagnostics,
}

impl Trajectory {
    pub fn last(&self) -> &MeanFieldState {
        self.snapshots
            .last()
            .expect("at least the initial state is recorded")
    }

    /// Writes `t,i,z` rows for every snapshot.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "i", "z"])?;
        for (t, s) in self.times.iter().zip(&self.snapshots) {
            for (k, z) in s.values().iter().enumerate() {
                w.write_record([
                    t.to_string(),
                    (s.lo() + k as i64).to_string(),
                    z.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn step_count(horizon: f64, dt: f64) -> Result<u64> {
    if !(dt > 0.0 && horizon >= 0.0 && dt.is_finite() && horizon.is_finite()) {
        return Err(Error::invalid("need dt > 0 and a finite horizon >= 0"));
    }
    Ok((horizon / dt).round() as u64)
}

/// Integrates for `horizon` time units, recording once per unit of time.
pub fn integrate(state: &MeanFieldState, horizon: f64, dt: f64) -> Result<Trajectory> {
    integrate_recording(state, horizon, dt, 1.0)
}

/// Integrates for `horizon`, recording a snapshot every `record_every` time units.
pub fn integrate_recording(
    state: &MeanFieldState,
    horizon: f64,
    dt: f64,
    record_every: f64,
) -> Result<Trajectory> {
    let steps = step_count(horizon, dt)?;
    let stride = ((record_every / dt).round() as u64).max(1);
    let d = state.d;
    let f = move |z: &[f64], out: &mut [f64]| drift_into(z, d, out);
    let mut z = state.z.clone();
    let mut rk = Rk4::new(z.len());
    let mass0 = state.mass_identity();
    let mut diag = IntegrationDiagnostics::default();
    let mut times = vec![0.0];
    let mut snapshots = vec![state.clone()];
    for step in 1..=steps {
        rk.step(&mut z, dt, &f);
        let repair = clamp_order(&mut z);
        if repair > 0.0 {
            diag.max_clamp = diag.max_clamp.max(repair);
            if repair > 1e-12 {
                diag.clamps += 1;
            }
            if repair > CLAMP_SILENT {
                warn!("order repair of {repair:e} at t = {}", step as f64 * dt);
            }
        }
        diag.max_mass_drift = diag
            .max_mass_drift
            .max((mass_identity(state.lo, &z) - mass0).abs());
        let leak = (1.0 - z[0]) + z[z.len() - 1].powi(d as i32);
        diag.max_boundary_leak = diag.max_boundary_leak.max(leak);
        if step % stride == 0 || step == steps {
            times.push(step as f64 * dt);
            snapshots.push(MeanFieldState {
                lo: state.lo,
                hi: state.hi,
                d,
                z: z.clone(),
            });
        }
    }
    diag.steps = steps;
    if diag.max_boundary_leak > BOUNDARY_THRESHOLD {
        diag.window_warning = true;
        warn!(
            "window [{}, {}] too narrow: boundary leak {:e}",
            state.lo, state.hi, diag.max_boundary_leak
        );
    }
    Ok(Trajectory {
        times,
        snapshots,
        diagnostics: diag,
    })
}

/// Outcome of [`lipschitz_spot_check`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub d: u32,
    pub samples: usize,
    pub max_ratio: f64,
    /// `2 + 2d`
    pub bound: f64,
    pub violations: usize,
}

fn random_state<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let mut z: Vec<f64> = (0..len).map(|_| rng.gen::<f64>()).collect();
    z.sort_by(|a, b| b.partial_cmp(a).expect("finite"));
    z
}

/// Largest `|F(x) - F(y)|_1 / |x - y|_1` over random pairs of valid states.
///
/// Pairs alternate between independent states, small perturbations of one
/// state, and single-coordinate perturbations, all on the window `-10..=10`.
pub fn lipschitz_spot_check(d: u32, samples: usize, seed: u64) -> LipschitzReport {
    let mut rng = rng::from_seed(seed);
    let len = 21;
    let bound = 2.0 + 2.0 * d as f64;
    let (mut fx, mut fy) = (vec![0.0; len], vec![0.0; len]);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for s in 0..samples {
        let x = random_state(&mut rng, len);
        let mut y = match s % 3 {
            0 => random_state(&mut rng, len),
            1 => {
                let scale = 10f64.powf(-rng.gen_range(1.0..6.0));
                x.iter()
                    .map(|v| v + scale * (rng.gen::<f64>() - 0.5))
                    .collect()
            }
            _ => {
                let mut y = x.clone();
                let k = rng.gen_range(0..len);
                y[k] += 1e-3 * (rng.gen::<f64>() - 0.5);
                y
            }
        };
        clamp_order(&mut y);
        let dist: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        if dist == 0.0 {
            continue;
        }
        drift_into(&x, d, &mut fx);
        drift_into(&y, d, &mut fy);
        let num: f64 = fx.iter().zip(&fy).map(|(a, b)| (a - b).abs()).sum();
        let ratio = num / dist;
        if ratio > bound * (1.0 + 1e-12) {
            violations += 1;
        }
        max_ratio = max_ratio.max(ratio);
    }
    LipschitzReport {
        d,
        samples,
        max_ratio,
        bound,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_at_step_initial() {
        let s = MeanFieldState::step_initial(-3, 3, 2).unwrap();
        let f = drift(&s);
        // i = 0 sits at index 3, i = 1 at index 4.
        assert_eq!(f[3], -1.0);
        assert_eq!(f[4], 1.0);
        assert!(f
            .iter()
            .enumerate()
            .all(|(k, &v)| k == 3 || k == 4 || v == 0.0));
    }

    #[test]
    fn window_validation() {
        assert!(MeanFieldState::step_initial(0, 5, 2).is_err());
        assert!(MeanFieldState::new(-1, 1, 2, vec![0.5, 0.6, 0.1]).is_err());
        assert!(MeanFieldState::new(-1, 1, 2, vec![0.9, 0.6]).is_err());
    }

    #[test]
    fn lipschitz_identical_states() {
        let r = lipschitz_spot_check(2, 0, 1);
        assert_eq!(r.max_ratio, 0.0);
    }

    #[test]
    fn narrow_window_warns() {
        let s = MeanFieldState::step_initial(-3, 3, 2).unwrap();
        let tr = integrate(&s, 20.0, 0.01).unwrap();
        assert!(tr.diagnostics.window_warning);
    }

    #[test]
    fn trajectory_csv_header() {
        let s = MeanFieldState::step_initial(-2, 2, 2).unwrap();
        let tr = integrate(&s, 1.0, 0.5).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,i,z\n0,-2,1\n"));
        assert_eq!(text.lines().count(), 1 + 5 * tr.times.len());
    }
}
