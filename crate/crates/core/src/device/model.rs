//! Current and state equations of the memristor core and its series network.
//!
//! Current through the core at state `h`:
//!
//! ```text
//! I = h·ion0'·sinh(v/aon) + clamp((1-h)·ioff0'·sinh(v/aoff), ±isb') + v/rpp
//! ```
//!
//! State rate:
//!
//! ```text
//! dh/dt = Γs·(1-h) − Γr·h^gam
//! Γs = min(1e6, exp(etas·(v − vs)))   for v >  vt, else 0
//! Γr = min(1e6, exp(etar·(vr0' − v))) for v < −vt, else 0
//! ```
//!
//! The core sits in series with `Rs(h) = ri + h·ron + (1-h)·roff` and the
//! external resistor `rext`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::DeviceParams;
use crate::error::{Error, Result};

/// Smallest admissible perturbed current parameter.
pub const CURRENT_FLOOR: f64 = 1e-12;
/// Cap on the set and reset rates (1/s).
pub const RATE_CAP: f64 = 1e6;
/// Largest state change allowed in one integration substep.
pub const MAX_STATE_STEP: f64 = 0.01;
/// Largest applied voltage accepted by the terminal solver.
pub const MAX_APPLIED_VOLTAGE: f64 = 20.0;
/// Convergence threshold on the series-current mismatch (amperes).
pub const SOLVER_TOLERANCE: f64 = 1e-13;
pub const SOLVER_MAX_ITERATIONS: usize = 200;

/// One cycle-to-cycle variability sample of the perturbed parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariabilityDraw {
    pub ion0: f64,
    pub ioff0: f64,
    pub vr0: f64,
    pub isb: f64,
}

impl VariabilityDraw {
    /// The unperturbed parameters.
    pub fn nominal(p: &DeviceParams) -> Self {
        VariabilityDraw {
            ion0: p.ion0,
            ioff0: p.ioff0,
            vr0: p.vr0,
            isb: p.isb,
        }
    }

    /// Stable 64-bit fingerprint of the drawn values.
    pub fn fingerprint(&self) -> u64 {
        [self.ion0, self.ioff0, self.vr0, self.isb]
            .iter()
            .fold(0xcbf2_9ce4_8422_2325u64, |acc, v| {
                (acc ^ v.to_bits()).wrapping_mul(0x0100_0000_01b3)
            })
    }
}

/// Draw perturbed parameters. Always consumes four normal variates so the
/// stream position does not depend on which sigmas are zero.
pub fn sample_variability<R: Rng + ?Sized>(p: &DeviceParams, rng: &mut R) -> VariabilityDraw {
    let z: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
    VariabilityDraw {
        ion0: (p.ion0 * (1.0 + p.sigion * z[0])).max(CURRENT_FLOOR),
        ioff0: (p.ioff0 * (1.0 + p.sigioff * z[1])).max(CURRENT_FLOOR),
        vr0: p.vr0 + p.sigvr * z[2],
        isb: (p.isb + p.sigsb * z[3]).max(CURRENT_FLOOR),
    }
}

/// Current through the memristor core for a core voltage `v_dev`.
pub fn device_current(v_dev: f64, h: f64, d: &VariabilityDraw, p: &DeviceParams) -> f64 {
    let on = h * d.ion0 * (v_dev / p.aon).sinh();
    let off = ((1.0 - h) * d.ioff0 * (v_dev / p.aoff).sinh()).clamp(-d.isb, d.isb);
    on + off + v_dev / p.rpp
}

/// Total series resistance seen by the core: `rext + ri + h·ron + (1-h)·roff`.
pub fn series_resistance(h: f64, p: &DeviceParams) -> f64 {
    p.rext + p.ri + h * p.ron + (1.0 - h) * p.roff
}

/// Split an applied voltage between the series network and the core.
///
/// Returns `(v_dev, i)`. Solved by bisection on the core voltage; the
/// mismatch between the series-resistor current and the core current is
/// strictly monotone in `v_dev`, so the bracket `[-|v|, |v|]` always holds a
/// root.
pub fn solve_terminal(
    v_applied: f64,
    h: f64,
    d: &VariabilityDraw,
    p: &DeviceParams,
) -> Result<(f64, f64)> {
    if !v_applied.is_finite() || v_applied.abs() > MAX_APPLIED_VOLTAGE {
        return Err(Error::InvalidArgument(format!(
            "applied voltage {v_applied} outside ±{MAX_APPLIED_VOLTAGE} V"
        )));
    }
    if v_applied == 0.0 {
        return Ok((0.0, 0.0));
    }
    let r = series_resistance(h, p);
    // positive when the core can take more voltage
    let mismatch = |v: f64| (v_applied - v) / r - device_current(v, h, d, p);

    let (mut lo, mut hi) = (-v_applied.abs(), v_applied.abs());
    for _ in 0..SOLVER_MAX_ITERATIONS {
        let mid = 0.5 * (lo + hi);
        let m = mismatch(mid);
        if !m.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite current in terminal solve (v={v_applied}, h={h})"
            )));
        }
        if m.abs() < SOLVER_TOLERANCE {
            return Ok((mid, device_current(mid, h, d, p)));
        }
        if m > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        let next = 0.5 * (lo + hi);
        if next == lo || next == hi {
            // Bracket down to adjacent floats: with a very stiff series
            // network the current residual cannot get below tolerance, but
            // the voltage is resolved exactly.
            let v = if mismatch(lo).abs() <= mismatch(hi).abs() {
                lo
            } else {
                hi
            };
            return Ok((v, device_current(v, h, d, p)));
        }
    }
    Err(Error::Numerical(format!(
        "terminal solve did not converge in {SOLVER_MAX_ITERATIONS} iterations (v={v_applied}, h={h})"
    )))
}

/// Instantaneous state rate at core voltage `v_dev`.
pub fn state_rate(h: f64, v_dev: f64, d: &VariabilityDraw, p: &DeviceParams) -> f64 {
    if v_dev > p.vt {
        let gs = (p.etas * (v_dev - p.vs)).exp().min(RATE_CAP);
        gs * (1.0 - h)
    } else if v_dev < -p.vt {
        let gr = (p.etar * (d.vr0 - v_dev)).exp().min(RATE_CAP);
        -gr * h.powf(p.gam)
    } else {
        0.0
    }
}

/// Advance the state by `dt` seconds at a fixed core voltage.
///
/// Explicit substeps, each limited to `|Δh| ≤ 0.01`, clamped to `[0, 1]`.
pub fn step_state(h: f64, v_dev: f64, dt: f64, d: &VariabilityDraw, p: &DeviceParams) -> f64 {
    let mut h = h.clamp(0.0, 1.0);
    if !(dt > 0.0) || v_dev.abs() <= p.vt {
        return h;
    }
    let mut remaining = dt;
    while remaining > 0.0 {
        let rate = state_rate(h, v_dev, d, p);
        if rate == 0.0 {
            break;
        }
        let sub = remaining.min(MAX_STATE_STEP / rate.abs());
        h = (h + rate * sub).clamp(0.0, 1.0);
        remaining -= sub;
    }
    h
}

/// Small-signal read conductance `i / v_read` of the full series network,
/// without variability.
pub fn composite_conductance(h: f64, p: &DeviceParams, v_read: f64) -> Result<f64> {
    if v_read == 0.0 || !v_read.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "read voltage must be nonzero, got {v_read}"
        )));
    }
    let (_, i) = solve_terminal(v_read, h, &VariabilityDraw::nominal(p), p)?;
    Ok(i / v_read)
}
