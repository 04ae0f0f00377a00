//! Two agent types with `d = 2` and equal type counts.
//!
//! Type B requests `alpha` times as often as type A and is available `beta`
//! times as often. With `c_i` the probability that the requester is of a
//! given type and holds exactly `i` tokens, and `d_i` the same for the
//! provider, each type's tail fractions move by
//!
//! ```text
//! dz_i/dt = -c_i + d_{i-1}
//! ```
//!
//! A provider of type A with `k` tokens arises when both draws are type A and
//! the smaller holds `k`, or when one draw is type A with `k` tokens and the
//! other is type B with more, or when they tie across types (half weight).

use log::warn;
use serde::{Deserialize, Serialize};

use super::{
    clamp_order, mass_identity, step_count, IntegrationDiagnostics, Rk4, BOUNDARY_THRESHOLD,
};
use crate::error::{Error, Result};

/// Tail fractions of both types on a shared window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoTypeState {
    lo: i64,
    hi: i64,
    za: Vec<f64>,
    zb: Vec<f64>,
    /// `p_B / p_A`
    pub alpha: f64,
    /// `q_B / q_A`
    pub beta: f64,
}

impl TwoTypeState {
    pub fn new(
        lo: i64,
        hi: i64,
        za: Vec<f64>,
        zb: Vec<f64>,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        super::check_window(lo, hi)?;
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::invalid("alpha and beta must be positive"));
        }
        let len = (hi - lo + 1) as usize;
        if za.len() != len || zb.len() != len {
            return Err(Error::invalid(format!("expected {len} values per type")));
        }
        if super::order_violation(&za, 1e-9).is_some()
            || super::order_violation(&zb, 1e-9).is_some()
        {
            return Err(Error::invalid(
                "tail fractions must lie in [0,1] and be non-increasing",
            ));
        }
        Ok(TwoTypeState {
            lo,
            hi,
            za,
            zb,
            alpha,
            beta,
        })
    }

    /// Every agent of both types at zero tokens.
    pub fn step_initial(lo: i64, hi: i64, alpha: f64, beta: f64) -> Result<Self> {
        super::check_window(lo, hi)?;
        let z: Vec<f64> = (lo..=hi).map(|i| if i <= 0 { 1.0 } else { 0.0 }).collect();
        Self::new(lo, hi, z.clone(), z, alpha, beta)
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn za(&self) -> &[f64] {
        &self.za
    }

    pub fn zb(&self) -> &[f64] {
        &self.zb
    }

    fn at(z: &[f64], lo: i64, i: i64) -> f64 {
        if i < lo {
            1.0
        } else if i >= lo + z.len() as i64 {
            0.0
        } else {
            z[(i - lo) as usize]
        }
    }

    /// Fraction of type A agents with `|s| <= m`.
    pub fn p_inf_a(&self, m: u32) -> f64 {
        Self::at(&self.za, self.lo, -(m as i64)) - Self::at(&self.za, self.lo, m as i64 + 1)
    }

    pub fn p_inf_b(&self, m: u32) -> f64 {
        Self::at(&self.zb, self.lo, -(m as i64)) - Self::at(&self.zb, self.lo, m as i64 + 1)
    }

    /// Sum over both types of the mean-balance identity.
    pub fn joint_mass_identity(&self) -> f64 {
        mass_identity(self.lo, &self.za) + mass_identity(self.lo, &self.zb)
    }
}

/// Requester and provider probabilities by type and exact token count,
/// for counts `lo - 1 ..= hi` (the first entry lumps everything at or below `lo - 1`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoTypeRates {
    pub first: i64,
    pub ca: Vec<f64>,
    pub cb: Vec<f64>,
    pub da: Vec<f64>,
    pub db: Vec<f64>,
}

fn rates_into(za: &[f64], zb: &[f64], alpha: f64, beta: f64, r: &mut TwoTypeRates) {
    let len = za.len();
    let ra = 1.0 / (1.0 + alpha);
    let rb = alpha / (1.0 + alpha);
    let a = 1.0 / (1.0 + beta);
    let b = beta / (1.0 + beta);
    let get = |z: &[f64], k: usize| {
        // k indexes counts lo-1 ..= hi+1
        if k == 0 {
            1.0
        } else if k > len {
            0.0
        } else {
            z[k - 1]
        }
    };
    for k in 0..=len {
        let (a0, a1) = (get(za, k), get(za, k + 1));
        let (b0, b1) = (get(zb, k), get(zb, k + 1));
        let (ea, eb) = (a0 - a1, b0 - b1);
        r.ca[k] = ra * ea;
        r.cb[k] = rb * eb;
        r.da[k] = a * a * (a0 * a0 - a1 * a1) + 2.0 * a * b * ea * b1 + a * b * ea * eb;
        r.db[k] = b * b * (b0 * b0 - b1 * b1) + 2.0 * a * b * eb * a1 + a * b * ea * eb;
    }
}

pub fn two_type_rates(state: &TwoTypeState) -> TwoTypeRates {
    let n = state.za.len() + 1;
    let mut r = TwoTypeRates {
        first: state.lo - 1,
        ca: vec![0.0; n],
        cb: vec![0.0; n],
        da: vec![0.0; n],
        db: vec![0.0; n],
    };
    rates_into(&state.za, &state.zb, state.alpha, state.beta, &mut r);
    r
}

/// Stacked drift `[dz^A, dz^B]` for a stacked state `[z^A, z^B]`.
fn stacked_drift(y: &[f64], alpha: f64, beta: f64, rates: &mut TwoTypeRates, out: &mut [f64]) {
    let len = y.len() / 2;
    let (za, zb) = y.split_at(len);
    rates_into(za, zb, alpha, beta, rates);
    for k in 0..len {
        // z_i with i = lo + k uses c at count i (index k + 1) and d at count i - 1 (index k).
        out[k] = -rates.ca[k + 1] + rates.da[k];
        out[len + k] = -rates.cb[k + 1] + rates.db[k];
    }
}

pub fn two_type_drift(state: &TwoTypeState) -> (Vec<f64>, Vec<f64>) {
    let len = state.za.len();
    let mut y = state.za.clone();
    y.extend_from_slice(&state.zb);
    let mut out = vec![0.0; 2 * len];
    let mut rates = two_type_rates(state);
    stacked_drift(&y, state.alpha, state.beta, &mut rates, &mut out);
    let zb = out.split_off(len);
    (out, zb)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TwoTypeTrajectory {
    pub times: Vec<f64>,
    pub snapshots: Vec<TwoTypeState>,
    pub diagnostics: IntegrationDiagnostics,
    /// L1 norm of the stacked drift at the final state.
    pub final_drift: f64,
}

impl TwoTypeTrajectory {
    pub fn last(&self) -> &TwoTypeState {
        self.snapshots.last().expect("initial state is recorded")
    }
}

/// Integrates for `horizon`, recording every `record_every` time units.
pub fn two_type_integrate(
    state: &TwoTypeState,
    horizon: f64,
    dt: f64,
) -> Result<TwoTypeTrajectory> {
    two_type_integrate_recording(state, horizon, dt, 1.0)
}

pub fn two_type_integrate_recording(
    state: &TwoTypeState,
    horizon: f64,
    dt: f64,
    record_every: f64,
) -> Result<TwoTypeTrajectory> {
    let steps = step_count(horizon, dt)?;
    let stride = ((record_every / dt).round() as u64).max(1);
    let len = state.za.len();
    let (alpha, beta) = (state.alpha, state.beta);
    let scratch = std::cell::RefCell::new(two_type_rates(state));
    let f =
        |y: &[f64], out: &mut [f64]| stacked_drift(y, alpha, beta, &mut scratch.borrow_mut(), out);
    let mut y = state.za.clone();
    y.extend_from_slice(&state.zb);
    let mut rk = Rk4::new(2 * len);
    let mass0 = state.joint_mass_identity();
    let mut diag = IntegrationDiagnostics::default();
    let snapshot = |y: &[f64]| TwoTypeState {
        lo: state.lo,
        hi: state.hi,
        za: y[..len].to_vec(),
        zb: y[len..].to_vec(),
        alpha,
        beta,
    };
    let mut times = vec![0.0];
    let mut snapshots = vec![state.clone()];
    for step in 1..=steps {
        rk.step(&mut y, dt, &f);
        let (ya, yb) = y.split_at_mut(len);
        let repair = clamp_order(ya).max(clamp_order(yb));
        if repair > 1e-12 {
            diag.clamps += 1;
            diag.max_clamp = diag.max_clamp.max(repair);
        }
        let mass = mass_identity(state.lo, &y[..len]) + mass_identity(state.lo, &y[len..]);
        diag.max_mass_drift = diag.max_mass_drift.max((mass - mass0).abs());
        let leak = (1.0 - y[0])
            + (1.0 - y[len])
            + y[len - 1] * y[len - 1]
            + y[2 * len - 1] * y[2 * len - 1];
        diag.max_boundary_leak = diag.max_boundary_leak.max(leak);
        if step % stride == 0 || step == steps {
            times.push(step as f64 * dt);
            snapshots.push(snapshot(&y));
        }
    }
    diag.steps = steps;
    if diag.max_boundary_leak > BOUNDARY_THRESHOLD {
        diag.window_warning = true;
        warn!(
            "two-type window too narrow: boundary leak {:e}",
            diag.max_boundary_leak
        );
    }
    let mut out = vec![0.0; 2 * len];
    f(&y, &mut out);
    Ok(TwoTypeTrajectory {
        times,
        snapshots,
        diagnostics: diag,
        final_drift: out.iter().map(|v| v.abs()).sum(),
    })
}
