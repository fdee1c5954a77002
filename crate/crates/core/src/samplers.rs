//! Outer diffusion loops.
//!
//! All three samplers walk the descending EDM grid `t_N > ... > t_1 > t_0`
//! with Euler steps on the probability-flow ODE. Grid position `k` is the
//! sampler step `i = N - k`.
//!
//! * [`dps_mo`]: one measurement-optimization call per step, its output
//!   used as the denoised estimate in the Euler slope.
//! * [`red_diff_mo`]: a mean image `mu` updated from a score-distillation
//!   gradient against the measurement-optimized estimate.
//! * [`dps_baseline`]: one likelihood-gradient correction per step,
//!   differentiated through the denoiser.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gaussian_grid, ImageGrid};
use crate::mo::{self, AdamParams, AdamState, MoConfig};
use crate::operators::{residual, ForwardOperator, Measurement};
use crate::prior::Denoiser;
use crate::rng::{Purpose, RngStream};
use crate::schedule::{s_dot, s_of, sgld_lr, sigma_dot, sigma_of, EdmSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    DpsMo,
    RedDiffMo,
    Dps,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::DpsMo => "dps-mo",
            SamplerKind::RedDiffMo => "red-diff-mo",
            SamplerKind::Dps => "dps",
        }
    }
}

/// Where each step's inner optimization starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Re-run the inner loop every step from the previous estimate.
    PerStep,
    /// Solve once at the first step and only re-query the prior afterwards.
    SameSolution,
}

/// Optimizer for the Red-diff mean image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MuOptimizer {
    Sgd { lr: f64 },
    Momentum { lr: f64, beta: f64 },
    Adam { lr: f64 },
}

impl Default for MuOptimizer {
    fn default() -> Self {
        MuOptimizer::Adam { lr: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerRun {
    pub kind: SamplerKind,
    pub schedule: EdmSchedule,
    pub mo: MoConfig,
    pub init_mode: InitMode,
    /// Step size on the likelihood gradient (DPS baseline only).
    pub guidance_scale: f64,
    pub mu_optimizer: MuOptimizer,
    pub seed: u64,
    /// Distinguishes replicas that share a seed.
    pub run: u64,
    /// Test hook: every Gaussian draw becomes zero.
    pub zero_noise: bool,
}

impl Default for SamplerRun {
    fn default() -> Self {
        Self {
            kind: SamplerKind::DpsMo,
            schedule: EdmSchedule::default(),
            mo: MoConfig::default(),
            init_mode: InitMode::PerStep,
            guidance_scale: 0.3,
            mu_optimizer: MuOptimizer::default(),
            seed: 0,
            run: 0,
            zero_noise: false,
        }
    }
}

impl SamplerRun {
    fn stream(&self, step: u64, purpose: Purpose) -> RngStream {
        let s = RngStream::new(self.seed, self.run, step, purpose);
        if self.zero_noise {
            s.zeroed()
        } else {
            s
        }
    }
}

/// Per-step record passed to observers.
#[derive(Debug)]
pub struct StepInfo<'a> {
    /// Sampler step `i` (counts down from `N` to `1`).
    pub i: usize,
    pub t: f64,
    pub t_next: f64,
    /// Langevin rate used at this step (zero for the DPS baseline).
    pub eta: f64,
    pub x_hat0: &'a ImageGrid,
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub image: ImageGrid,
    /// Outer steps taken; the cost unit reported alongside results.
    pub nfe: usize,
}

/// Euler slope of the probability-flow ODE for general `s(t)`, `sigma(t)`:
/// `(sigma'/sigma + s'/s) x - (sigma' s / sigma) x_hat0`.
pub fn euler_slope(t: f64, x: &ImageGrid, x_hat0: &ImageGrid) -> Result<ImageGrid> {
    let (sigma, s) = (sigma_of(t)?, s_of(t)?);
    let (dsigma, ds) = (sigma_dot(t)?, s_dot(t)?);
    if sigma <= 0.0 {
        return Err(Error::param("t", "Euler slope needs t > 0"));
    }
    let a = dsigma / sigma + ds / s;
    let b = dsigma * s / sigma;
    x.zip_map(x_hat0, |xv, dv| a * xv - b * dv)
}

/// One Euler step; landing on `t_next = 0` returns `x_hat0` exactly, which is
/// where `x + (0 - t)(x - x_hat0)/t` lands in exact arithmetic.
fn euler_step(t: f64, t_next: f64, x: &ImageGrid, x_hat0: &ImageGrid) -> Result<ImageGrid> {
    if t_next == 0.0 {
        return Ok(x_hat0.clone());
    }
    let d = euler_slope(t, x, x_hat0)?;
    crate::grid::axpy(t_next - t, &d, x)
}

fn check_finite(x: &ImageGrid, what: &'static str) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

struct Start {
    grid: Vec<f64>,
    x: ImageGrid,
    x_hat0: ImageGrid,
}

/// `x_T ~ N(0, sigma(t_N)^2 s(t_N)^2 I)` and the first denoised estimate.
fn start<D: Denoiser + ?Sized>(prior: &D, run: &SamplerRun) -> Result<Start> {
    run.mo.validate()?;
    let grid = run.schedule.time_grid()?;
    let t_max = grid[0];
    let (sigma, s) = (sigma_of(t_max)?, s_of(t_max)?);
    let eps = gaussian_grid(prior.shape(), &run.stream(0, Purpose::InitialNoise))?;
    let x = eps.scale(sigma * s);
    let x_hat0 = prior.denoise(&x.scale(1.0 / s), sigma)?;
    Ok(Start { grid, x, x_hat0 })
}

pub fn dps_mo<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    run: &SamplerRun,
) -> Result<SampleOutput> {
    dps_mo_observed(prior, op, y, run, |_| {})
}

pub fn dps_mo_observed<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    run: &SamplerRun,
    mut observe: impl FnMut(&StepInfo),
) -> Result<SampleOutput> {
    let Start {
        grid,
        mut x,
        mut x_hat0,
    } = start(prior, run)?;
    let steps = grid.len() - 1;
    let mut fixed_solution: Option<ImageGrid> = None;
    for k in 0..steps {
        let i = steps - k;
        let (t, t_next) = (grid[k], grid[k + 1]);
        let sigma = sigma_of(t)?;
        let eta = sgld_lr(&run.mo.decay, i, steps)?;
        let stream = run.stream(k as u64, Purpose::SgldNoise(0));
        x_hat0 = match run.init_mode {
            InitMode::PerStep => mo::mo(prior, op, y, &x_hat0, &run.mo, sigma, eta, &stream)?,
            InitMode::SameSolution => {
                if fixed_solution.is_none() {
                    fixed_solution =
                        Some(mo::run_inner_opt(op, y, &x_hat0, &run.mo, eta, &stream)?);
                }
                let sol = fixed_solution.as_ref().expect("solved at the first step");
                mo::prior_query(prior, sol, sigma, &stream)?
            }
        };
        observe(&StepInfo {
            i,
            t,
            t_next,
            eta,
            x_hat0: &x_hat0,
        });
        x = euler_step(t, t_next, &x, &x_hat0)?;
        check_finite(&x, "DPS-MO iterate")?;
    }
    Ok(SampleOutput {
        image: x,
        nfe: steps,
    })
}

enum MuState {
    Sgd { lr: f64 },
    Momentum { lr: f64, beta: f64, vel: Vec<f64> },
    Adam(AdamState),
}

impl MuState {
    fn new(opt: MuOptimizer, len: usize) -> Result<Self> {
        let check = |lr: f64| {
            if lr > 0.0 && lr.is_finite() {
                Ok(())
            } else {
                Err(Error::param("mu_lr", "must be positive"))
            }
        };
        Ok(match opt {
            MuOptimizer::Sgd { lr } => {
                check(lr)?;
                MuState::Sgd { lr }
            }
            MuOptimizer::Momentum { lr, beta } => {
                check(lr)?;
                if !(0.0..1.0).contains(&beta) {
                    return Err(Error::param("mu_momentum", "must lie in [0, 1)"));
                }
                MuState::Momentum {
                    lr,
                    beta,
                    vel: vec![0.0; len],
                }
            }
            MuOptimizer::Adam { lr } => {
                check(lr)?;
                MuState::Adam(AdamState::new(
                    AdamParams {
                        lr,
                        ..AdamParams::default()
                    },
                    len,
                ))
            }
        })
    }

    fn step(&mut self, mu: &ImageGrid, grad: &ImageGrid) -> Result<ImageGrid> {
        match self {
            MuState::Sgd { lr } => crate::grid::axpy(-*lr, grad, mu),
            MuState::Momentum { lr, beta, vel } => {
                for (v, &g) in vel.iter_mut().zip(grad.as_slice()) {
                    *v = *beta * *v + g;
                }
                let lr = *lr;
                Ok(ImageGrid::from_parts(
                    mu.shape(),
                    mu.as_slice()
                        .iter()
                        .zip(vel.iter())
                        .map(|(&m, &v)| m - lr * v)
                        .collect(),
                ))
            }
            MuState::Adam(state) => state.step(mu, grad),
        }
    }
}

/// Gradient of `sigma * sg(eps_hat - eps)^T mu` with respect to `mu`.
pub fn red_diff_gradient(
    mu: &ImageGrid,
    x_hat0: &ImageGrid,
    eps: &ImageGrid,
    t: f64,
) -> Result<(ImageGrid, ImageGrid)> {
    let (sigma, s) = (sigma_of(t)?, s_of(t)?);
    let x_t = mu.scale(s).zip_map(eps, |m, e| m + s * sigma * e)?;
    let eps_hat = x_t.zip_map(x_hat0, |xt, d| (xt - s * d) / (s * sigma))?;
    let grad = eps_hat.zip_map(eps, |h, e| sigma * (h - e))?;
    Ok((grad, eps_hat))
}

pub fn red_diff_mo<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    run: &SamplerRun,
) -> Result<SampleOutput> {
    red_diff_mo_observed(prior, op, y, run, |_| {})
}

pub fn red_diff_mo_observed<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    run: &SamplerRun,
    mut observe: impl FnMut(&StepInfo),
) -> Result<SampleOutput> {
    let mut mu = gaussian_grid(prior.shape(), &run.stream(0, Purpose::MeanInit))?;
    let Start {
        grid, mut x_hat0, ..
    } = start(prior, run)?;
    let mut opt = MuState::new(run.mu_optimizer, mu.len())?;
    let steps = grid.len() - 1;
    for k in 0..steps {
        let i = steps - k;
        let (t, t_next) = (grid[k], grid[k + 1]);
        let sigma = sigma_of(t)?;
        let eta = sgld_lr(&run.mo.decay, i, steps)?;
        let stream = run.stream(k as u64, Purpose::SgldNoise(0));
        x_hat0 = mo::mo(prior, op, y, &x_hat0, &run.mo, sigma, eta, &stream)?;
        observe(&StepInfo {
            i,
            t,
            t_next,
            eta,
            x_hat0: &x_hat0,
        });
        let eps = gaussian_grid(prior.shape(), &run.stream(k as u64, Purpose::ScoreNoise))?;
        let (grad, _) = red_diff_gradient(&mu, &x_hat0, &eps, t)?;
        mu = opt.step(&mu, &grad)?;
        check_finite(&mu, "Red-diff mean")?;
    }
    Ok(SampleOutput {
        image: mu,
        nfe: steps,
    })
}

/// `grad_{x_t} |y - A(D(x_t; sigma))|^2` and the residual norm at `D(x_t)`.
pub fn guidance_gradient<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    x_t: &ImageGrid,
    sigma: f64,
) -> Result<(ImageGrid, ImageGrid, f64)> {
    let x_hat0 = prior.denoise(x_t, sigma)?;
    let r = residual(op, &x_hat0, y)?;
    let norm = crate::grid::sum_sq(&r).sqrt();
    let two_r: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
    let through_op = op.vjp(&x_hat0, &two_r)?;
    let grad = prior.denoise_vjp(x_t, sigma, &through_op)?;
    Ok((grad, x_hat0, norm))
}

pub fn dps_baseline<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    run: &SamplerRun,
) -> Result<SampleOutput> {
    dps_baseline_observed(prior, op, y, run, |_| {})
}

pub fn dps_baseline_observed<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    run: &SamplerRun,
    mut observe: impl FnMut(&StepInfo),
) -> Result<SampleOutput> {
    if !(run.guidance_scale >= 0.0 && run.guidance_scale.is_finite()) {
        return Err(Error::param("guidance_scale", "must be non-negative"));
    }
    let grid = run.schedule.time_grid()?;
    let t_max = grid[0];
    let eps = gaussian_grid(prior.shape(), &run.stream(0, Purpose::InitialNoise))?;
    let mut x = eps.scale(sigma_of(t_max)? * s_of(t_max)?);
    let steps = grid.len() - 1;
    for k in 0..steps {
        let (t, t_next) = (grid[k], grid[k + 1]);
        let sigma = sigma_of(t)?;
        let (x_next, x_hat0) = if run.guidance_scale == 0.0 {
            let x_hat0 = prior.denoise(&x, sigma)?;
            (euler_step(t, t_next, &x, &x_hat0)?, x_hat0)
        } else {
            let (grad, x_hat0, norm) = guidance_gradient(prior, op, y, &x, sigma)?;
            let zeta = if norm > 0.0 {
                run.guidance_scale / norm
            } else {
                run.guidance_scale
            };
            let stepped = euler_step(t, t_next, &x, &x_hat0)?;
            (crate::grid::axpy(-zeta, &grad, &stepped)?, x_hat0)
        };
        observe(&StepInfo {
            i: steps - k,
            t,
            t_next,
            eta: 0.0,
            x_hat0: &x_hat0,
        });
        x = x_next;
        check_finite(&x, "DPS iterate")?;
    }
    Ok(SampleOutput {
        image: x,
        nfe: steps,
    })
}

/// Dispatch on [`SamplerRun::kind`].
pub fn sample<D: Denoiser + ?Sized>(
    prior: &D,
    op: &ForwardOperator,
    y: &Measurement,
    run: &SamplerRun,
) -> Result<SampleOutput> {
    match run.kind {
        SamplerKind::DpsMo => dps_mo(prior, op, y, run),
        SamplerKind::RedDiffMo => red_diff_mo(prior, op, y, run),
        SamplerKind::Dps => dps_baseline(prior, op, y, run),
    }
}
