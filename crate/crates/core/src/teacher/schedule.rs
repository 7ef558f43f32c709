use serde::{Deserialize, Serialize};

use crate::{ArdError, Result};

/// Variance-preserving schedule with a linear β(t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VPSchedule {
    pub beta_min: f64,
    pub beta_max: f64,
    #[serde(default = "default_horizon")]
    pub t_max: f64,
}

fn default_horizon() -> f64 {
    1.0
}

impl Default for VPSchedule {
    fn default() -> Self {
        VPSchedule { beta_min: 0.1, beta_max: 20.0, t_max: 1.0 }
    }
}

impl VPSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta_min >= 0.0 && self.beta_max >= self.beta_min) {
            return Err(ArdError::config(
                "schedule",
                format!("need 0 <= beta_min <= beta_max, got {} / {}", self.beta_min, self.beta_max),
            ));
        }
        if !(self.t_max > 0.0) {
            return Err(ArdError::config("schedule.t_max", "must be positive"));
        }
        Ok(())
    }

    pub fn beta(&self, t: f64) -> f64 {
        self.beta_min + (t / self.t_max) * (self.beta_max - self.beta_min)
    }

    /// ∫₀ᵗ β(u) du.
    pub fn integrated_beta(&self, t: f64) -> f64 {
        self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t * t / self.t_max
    }

    fn check(&self, t: f64) -> Result<()> {
        if !(0.0..=self.t_max).contains(&t) {
            return Err(ArdError::Range { what: "time", detail: format!("{t} not in [0, {}]", self.t_max) });
        }
        Ok(())
    }

    /// Signal and noise scales `(α_t, σ_t)`.
    pub fn alpha_sigma(&self, t: f64) -> Result<(f64, f64)> {
        self.check(t)?;
        Ok(self.alpha_sigma_unchecked(t))
    }

    pub(crate) fn alpha_sigma_unchecked(&self, t: f64) -> (f64, f64) {
        let b = self.integrated_beta(t);
        let alpha = (-0.5 * b).exp();
        // 1 − α² via expm1 keeps σ accurate for small t
        let sigma = (-(-b).exp_m1()).max(0.0).sqrt();
        (alpha, sigma)
    }
}
