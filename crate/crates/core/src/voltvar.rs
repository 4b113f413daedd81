//! Autonomous volt/var droop of inverters outside the OFO loop.
//!
//! Reactive power follows generator sign convention: positive Q is injected.
//! An overvoltage therefore yields negative (absorbed) Q and vice versa.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_deadband() -> f64 {
    0.03
}

fn default_saturation() -> f64 {
    0.05
}

fn default_fraction() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroopCurve {
    /// Half-width of the zero-response band around 1.0 p.u.
    #[serde(default = "default_deadband")]
    pub deadband: f64,
    /// Deviation at which the response saturates.
    #[serde(default = "default_saturation")]
    pub v_saturation: f64,
    /// Fraction of the reactive capability used at saturation.
    #[serde(default = "default_fraction")]
    pub q_max_fraction: f64,
}

impl Default for DroopCurve {
    fn default() -> Self {
        Self {
            deadband: default_deadband(),
            v_saturation: default_saturation(),
            q_max_fraction: default_fraction(),
        }
    }
}

impl DroopCurve {
    pub fn check(&self) -> Result<(), String> {
        if !(0.0 < self.deadband && self.deadband < self.v_saturation) {
            return Err("droop curve needs 0 < deadband < v_saturation".into());
        }
        if !(0.0 < self.q_max_fraction && self.q_max_fraction <= 1.0) {
            return Err("droop q_max_fraction must lie in (0, 1]".into());
        }
        Ok(())
    }

    /// Reactive capability left on the rating circle at active power `p`.
    pub fn available_q(&self, s_rated: f64, p_current: f64) -> f64 {
        self.q_max_fraction * (s_rated * s_rated - p_current * p_current).max(0.0).sqrt()
    }

    /// Droop response and its slope dQ/dV at voltage `v`.
    pub fn response(&self, v: f64, q_avail: f64) -> (f64, f64) {
        let dev = v - 1.0;
        let mag = dev.abs();
        // Tolerate representation error so that e.g. v = 1.03 sits on the band edge.
        if mag <= self.deadband + 1e-12 {
            return (0.0, 0.0);
        }
        let sign = -dev.signum();
        if mag >= self.v_saturation {
            return (sign * q_avail, 0.0);
        }
        let slope = q_avail / (self.v_saturation - self.deadband);
        (sign * slope * (mag - self.deadband), -slope)
    }
}

pub fn droop_reactive_power(
    v_meas: f64,
    curve: &DroopCurve,
    s_rated: f64,
    p_current: f64,
) -> Result<f64> {
    if p_current.abs() > s_rated {
        return Err(Error::Precondition(format!(
            "|p| = {} exceeds s_rated = {}",
            p_current.abs(),
            s_rated
        )));
    }
    curve.check().map_err(Error::Precondition)?;
    Ok(curve.response(v_meas, curve.available_q(s_rated, p_current)).0)
}
