//! EDM noise schedule (`s(t) = 1`, `sigma(t) = t`) and the per-step
//! Langevin learning-rate decay.
//!
//! The time grid is stored in descending order: position `0` holds
//! `sigma_max` (the sampler's step `i = N`), position `N - 1` holds
//! `sigma_min` (step `i = 1`), and an optional trailing `0` closes the
//! final Euler step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdmSchedule {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub rho: f64,
    pub n_steps: usize,
    pub terminal_zero: bool,
}

impl Default for EdmSchedule {
    fn default() -> Self {
        Self {
            sigma_max: 80.0,
            sigma_min: 0.05,
            rho: 7.0,
            n_steps: 50,
            terminal_zero: true,
        }
    }
}

impl EdmSchedule {
    pub fn new(sigma_max: f64, sigma_min: f64, n_steps: usize) -> Result<Self> {
        let s = Self {
            sigma_max,
            sigma_min,
            n_steps,
            ..Self::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_min > 0.0 && self.sigma_min.is_finite()) {
            return Err(Error::param("sigma_min", "must be positive"));
        }
        if !(self.sigma_max > self.sigma_min && self.sigma_max.is_finite()) {
            return Err(Error::param("sigma_max", "must exceed sigma_min"));
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::param("rho", "must be positive"));
        }
        if self.n_steps < 2 {
            return Err(Error::param("n_steps", "need at least two steps"));
        }
        Ok(())
    }

    /// `t_k = (sigma_max^(1/rho) + k/(N-1) (sigma_min^(1/rho) - sigma_max^(1/rho)))^rho`.
    ///
    /// Endpoints are written exactly rather than through the power round-trip.
    pub fn time_grid(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = self.n_steps;
        let inv_rho = 1.0 / self.rho;
        let hi = self.sigma_max.powf(inv_rho);
        let lo = self.sigma_min.powf(inv_rho);
        let mut grid: Vec<f64> = (0..n)
            .map(|k| match k {
                0 => self.sigma_max,
                k if k == n - 1 => self.sigma_min,
                k => (hi + k as f64 / (n - 1) as f64 * (lo - hi)).powf(self.rho),
            })
            .collect();
        if self.terminal_zero {
            grid.push(0.0);
        }
        Ok(grid)
    }
}

pub fn sigma_of(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(t)
}

pub fn s_of(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(1.0)
}

pub fn sigma_dot(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(1.0)
}

pub fn s_dot(t: f64) -> Result<f64> {
    check_time(t)?;
    Ok(0.0)
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::param("t", format!("must be non-negative, got {t}")))
    }
}

/// Learning-rate decay across diffusion steps: `eta_i = eta (1 + (N-i)/N (r^(1/p) - 1))^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub base_eta: f64,
    pub r: f64,
    pub p: f64,
}

impl Default for LrDecay {
    fn default() -> Self {
        Self {
            base_eta: 5e-5,
            r: 0.01,
            p: 2.0,
        }
    }
}

impl LrDecay {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_eta > 0.0 && self.base_eta.is_finite()) {
            return Err(Error::param("sgld_lr", "must be positive"));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::param("r", "must lie in (0, 1]"));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return Err(Error::param("p", "must be at least 1"));
        }
        Ok(())
    }
}

/// Rate for sampler step `i` of `n_diffusion` (`i = N` is the noisiest step).
pub fn sgld_lr(decay: &LrDecay, i: usize, n_diffusion: usize) -> Result<f64> {
    decay.validate()?;
    if n_diffusion == 0 {
        return Err(Error::param("n_diffusion", "must be positive"));
    }
    if i > n_diffusion {
        return Err(Error::param(
            "i",
            format!("step {i} exceeds the {n_diffusion} diffusion steps"),
        ));
    }
    if i == n_diffusion {
        return Ok(decay.base_eta);
    }
    if i == 0 {
        return Ok(decay.base_eta * decay.r);
    }
    let frac = (n_diffusion - i) as f64 / n_diffusion as f64;
    let base = 1.0 + frac * (decay.r.powf(1.0 / decay.p) - 1.0);
    Ok(decay.base_eta * base.powf(decay.p))
}
