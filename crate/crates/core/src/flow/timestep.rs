use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::rng::{normal, rng_for};

/// Reference latent configuration the shift rule is normalized to.
pub const BASE_CHANNELS: u64 = 16;
pub const BASE_PATCH: u64 = 1;

/// `√(C·P² / (C_base·P_base²))`.
pub fn shift_factor_with(channels: u64, patch: u64, base_channels: u64, base_patch: u64) -> Result<f64> {
    if channels == 0 || patch == 0 || base_channels == 0 || base_patch == 0 {
        return Err(LabError::config("shift factor inputs must be positive integers"));
    }
    let num = channels as f64 * (patch * patch) as f64;
    let den = base_channels as f64 * (base_patch * base_patch) as f64;
    Ok((num / den).sqrt())
}

/// Shift factor relative to the 16-channel, patch-1 base.
pub fn shift_factor(channels: u64, patch: u64) -> Result<f64> {
    shift_factor_with(channels, patch, BASE_CHANNELS, BASE_PATCH)
}

/// Shift for a toy space of width `d`, treated as `d` channels with patch 1,
/// never below 1.
pub fn toy_shift(d: usize) -> f64 {
    (d as f64 / BASE_CHANNELS as f64).sqrt().max(1.0)
}

/// `t' = s·t / (1 + (s − 1)·t)`.
pub fn shift_timestep(t: f64, s: f64) -> f64 {
    s * t / (1.0 + (s - 1.0) * t)
}

/// Inverse of [`shift_timestep`].
pub fn unshift_timestep(t_shifted: f64, s: f64) -> f64 {
    t_shifted / (s - (s - 1.0) * t_shifted)
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

/// Logit-normal timestep distribution with shift and clamping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestepSampler {
    #[serde(default)]
    pub loc: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub shift: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,
    #[serde(default = "default_t_max")]
    pub t_max: f64,
}

fn one() -> f64 {
    1.0
}
pub(crate) fn default_t_min() -> f64 {
    1e-3
}
fn default_t_max() -> f64 {
    1.0 - 1e-3
}

impl Default for TimestepSampler {
    fn default() -> Self {
        TimestepSampler {
            loc: 0.0,
            scale: 1.0,
            shift: 1.0,
            t_min: default_t_min(),
            t_max: default_t_max(),
        }
    }
}

impl TimestepSampler {
    pub fn with_shift(shift: f64) -> Self {
        TimestepSampler {
            shift,
            ..TimestepSampler::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.loc.is_finite() || !(self.scale >= 0.0 && self.scale.is_finite()) {
            return Err(LabError::config("logit-normal loc must be finite and scale ≥ 0"));
        }
        if !(self.shift >= 1.0 && self.shift.is_finite()) {
            return Err(LabError::config(format!("shift must be ≥ 1, got {}", self.shift)));
        }
        if !(0.0 < self.t_min && self.t_min < self.t_max && self.t_max < 1.0) {
            return Err(LabError::config("timestep clamp needs 0 < t_min < t_max < 1"));
        }
        Ok(())
    }

    /// One draw: `sigmoid(N(loc, scale))`, shifted, clamped.
    pub fn draw(&self, rng: &mut impl Rng) -> f64 {
        let u = self.loc + self.scale * normal(rng);
        shift_timestep(sigmoid(u), self.shift).clamp(self.t_min, self.t_max)
    }

    /// `sample_timestep(sampler, seed)`.
    pub fn sample(&self, seed: u64) -> f64 {
        self.draw(&mut rng_for(seed, "timestep"))
    }
}
