use serde::{Deserialize, Serialize};

use crate::error::{RdmError, Result};

/// Linear β schedule with precomputed α and ᾱ tables (timesteps 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::scaled(200)
    }
}

impl ScheduleConfig {
    /// The 1e-4..0.02 range over 1000 steps, rescaled so that `timesteps`
    /// steps destroy the same amount of signal.
    pub fn scaled(timesteps: usize) -> Self {
        let f = 1000.0 / timesteps.max(1) as f64;
        Self {
            timesteps,
            beta_min: (1e-4 * f).min(0.5),
            beta_max: (0.02 * f).min(0.999),
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.timesteps, self.beta_min, self.beta_max)
    }
}

/// β linearly interpolated from `beta_min` (t=1) to `beta_max` (t=T).
pub fn make_schedule(timesteps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if timesteps == 0 {
        return Err(RdmError::contract("schedule needs at least one timestep"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(RdmError::contract(format!(
            "need 0 < beta_min ≤ beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let beta: Vec<f64> = (0..timesteps)
        .map(|i| {
            if timesteps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (timesteps - 1) as f64
            }
        })
        .collect();
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let alpha_bar = alpha
        .iter()
        .scan(1.0, |acc, a| {
            *acc *= a;
            Some(*acc)
        })
        .collect();
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    pub fn timesteps(&self) -> usize {
        self.beta.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.timesteps() {
            return Err(RdmError::contract(format!(
                "timestep {t} outside 1..={}",
                self.timesteps()
            )));
        }
        Ok(())
    }

    /// `(√ᾱ_t, √(1−ᾱ_t))`.
    pub fn marginal(&self, t: usize) -> Result<(f64, f64)> {
        self.check_t(t)?;
        let ab = self.alpha_bar(t);
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }
}
