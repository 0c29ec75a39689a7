use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

/// Linear attenuation (-3 dB) applied to sources folded from behind the listener.
pub const REAR_ATTENUATION: f64 = 0.707_945_784_384_137_9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PanGains {
    pub left: f64,
    pub right: f64,
    /// The azimuth lay behind the listener and was mirrored to the front.
    pub rear: bool,
}

impl PanGains {
    /// Gain including the rear attenuation.
    pub fn attenuation(&self) -> f64 {
        if self.rear {
            REAR_ATTENUATION
        } else {
            1.0
        }
    }
}

/// Constant-power pan. Rear azimuths mirror across the interaural axis onto
/// `[-90, 90]`, which then maps to `θ ∈ [0, π/2]` with `left = cos θ`, `right = sin θ`.
pub fn pan_gains(azimuth_deg: f64) -> PanGains {
    let a = super::normalize_azimuth(azimuth_deg);
    let (front, rear) = if a > 90.0 {
        (180.0 - a, true)
    } else if a < -90.0 {
        (-180.0 - a, true)
    } else {
        (a, false)
    };
    let theta = (front + 90.0) / 180.0 * FRAC_PI_2;
    PanGains { left: theta.cos(), right: theta.sin(), rear }
}
