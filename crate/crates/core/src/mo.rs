//! Measurement optimization: a Langevin (or Adam) inner loop on the
//! data-fit objective `|y - A(x)|^2 / (2 tau^2)`, followed by a pull-back
//! onto the prior: add noise at the current level, then denoise.
//!
//! The Langevin update descends the data-fit term (ascends the log
//! likelihood):
//!
//! ```text
//! x <- x - eta_i * grad + sqrt(2 eta_i) * eps
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_grid, ImageGrid};
use crate::operators::{residual_and_pullback, ForwardOperator, Measurement};
use crate::prior::Denoiser;
use crate::rng::{Purpose, RngStream};
use crate::schedule::LrDecay;

/// Residual norms above this abort the inner loop.
pub const DIVERGENCE_GUARD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub lr: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            lr: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerOptimizer {
    Sgld,
    Adam(AdamParams),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoConfig {
    pub n_sgld: usize,
    pub tau: f64,
    pub optimizer: InnerOptimizer,
    pub decay: LrDecay,
}

impl Default for MoConfig {
    fn default() -> Self {
        Self {
            n_sgld: 100,
            tau: 0.01,
            optimizer: InnerOptimizer::Sgld,
            decay: LrDecay::default(),
        }
    }
}

impl MoConfig {
    pub fn base_eta(&self) -> f64 {
        self.decay.base_eta
    }

    pub fn validate(&self) -> Result<()> {
        self.decay.validate()?;
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::param("tau", "must be positive"));
        }
        if let InnerOptimizer::Adam(p) = self.optimizer {
            if !(p.lr > 0.0 && (0.0..1.0).contains(&p.beta1) && (0.0..1.0).contains(&p.beta2)) {
                return Err(Error::param("adam", "need lr > 0 and betas in [0, 1)"));
            }
        }
        Ok(())
    }
}

/// One Langevin step `x - eta * grad + sqrt(2 eta) * eps`.
pub fn sgld_step(x: &ImageGrid, grad: &ImageGrid, eta: f64, stream: &RngStream) -> Result<ImageGrid> {
    x.check_same_shape(grad)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite("SGLD gradient"));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::param("eta", "must be non-negative"));
    }
    if eta == 0.0 {
        return Ok(x.clone());
    }
    let noise = gaussian_grid(x.shape(), stream)?;
    let amp = (2.0 * eta).sqrt();
    let out: Vec<f64> = x
        .as_slice()
        .iter()
        .zip(grad.as_slice())
        .zip(noise.as_slice())
        .map(|((&xv, &g), &e)| xv - eta * g + amp * e)
        .collect();
    Ok(ImageGrid::from_parts(x.shape(), out))
}

#[derive(Debug, Clone, Copy)]
pub struct InnerStep {
    pub iteration: usize,
    /// `|A(x) - y|` at the iterate the step starts from.
    pub residual_norm: f64,
}

pub fn run_inner_opt(
    op: &ForwardOperator,
    y: &Measurement,
    x_init: &ImageGrid,
    cfg: &MoConfig,
    eta_i: f64,
    stream: &RngStream,
) -> Result<ImageGrid> {
    run_inner_opt_observed(op, y, x_init, cfg, eta_i, stream, |_| {})
}

/// [`run_inner_opt`] with a callback per inner iteration.
pub fn run_inner_opt_observed(
    op: &ForwardOperator,
    y: &Measurement,
    x_init: &ImageGrid,
    cfg: &MoConfig,
    eta_i: f64,
    stream: &RngStream,
    mut observe: impl FnMut(InnerStep),
) -> Result<ImageGrid> {
    cfg.validate()?;
    let inv_tau_sq = 1.0 / (cfg.tau * cfg.tau);
    let mut x = x_init.clone();
    let mut adam = match cfg.optimizer {
        InnerOptimizer::Adam(p) => Some(AdamState::new(p, x.len())),
        InnerOptimizer::Sgld => None,
    };
    for k in 0..cfg.n_sgld {
        let (r, pull) = residual_and_pullback(op, &x, y)?;
        let rn = crate::grid::sum_sq(&r).sqrt();
        if rn > DIVERGENCE_GUARD {
            return Err(Error::Diverged(rn));
        }
        observe(InnerStep {
            iteration: k,
            residual_norm: rn,
        });
        let grad = pull.scale(inv_tau_sq);
        x = match adam.as_mut() {
            None => sgld_step(
                &x,
                &grad,
                eta_i,
                &stream.with_purpose(Purpose::SgldNoise(k as u32)),
            )?,
            Some(state) => state.step(&x, &grad)?,
        };
    }
    Ok(x)
}

/// Plain Adam with bias correction; no injected noise.
#[derive(Debug, Clone)]
pub struct AdamState {
    params: AdamParams,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamState {
    pub fn new(params: AdamParams, len: usize) -> Self {
        Self {
            params,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &ImageGrid, grad: &ImageGrid) -> Result<ImageGrid> {
        x.check_same_shape(grad)?;
        if !grad.is_finite() {
            return Err(Error::NonFinite("Adam gradient"));
        }
        let AdamParams {
            beta1,
            beta2,
            eps,
            lr,
        } = self.params;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        let out = x
            .as_slice()
            .iter()
            .zip(grad.as_slice())
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|((&xv, &g), (m, v))| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                xv - lr * (*m / c1) / ((*v / c2).sqrt() + eps)
            })
            .collect();
        Ok(ImageGrid::from_parts(x.shape(), out))
    }
}

/// `D(x_sgld + sigma_t * eps, sigma_t)`.
pub fn prior_query<D: Denoiser + ?Sized>(
    prior: &D,
    x_sgld: &ImageGrid,
    sigma_t: f64,
    stream: &RngStream,
) -> Result<ImageGrid> {
    if !(sigma_t > 0.0 && sigma_t.is_finite()) {
        return Err(Error::param("sigma_t", "must be positive"));
    }
    let eps = gaussian_grid(x_sgld.shape(), &stream.with_purpose(Purpose::PriorNoise))?;
    let noisy = crate::grid::axpy(sigma_t, &eps, x_sgld)?;
    prior.denoise(&noisy, sigma_t)
}

/// Inner optimization followed by the prior pull-back.
#[allow(clippy::too_many_arguments)]
pub fn mo<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    x_init: &ImageGrid,
    cfg: &MoConfig,
    sigma_t: f64,
    eta_i: f64,
    stream: &RngStream,
) -> Result<ImageGrid> {
    let x_sgld = run_inner_opt(op, y, x_init, cfg, eta_i, stream)?;
    prior_query(prior, &x_sgld, sigma_t, stream)
}
