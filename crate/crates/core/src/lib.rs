//! Posterior sampling for imaging inverse problems with a diffusion prior,
//! where each denoising step is preceded by a Langevin inner loop on the
//! measurement fit ("measurement optimization").
//!
//! The prior is the closed-form ideal denoiser of a finite image set, so
//! every component is deterministic, differentiable in closed form and
//! cheap enough to test exhaustively.

pub mod error;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod mo;
pub mod operators;
pub mod prior;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod validate;

pub use error::{Error, Result};
pub use grid::{ImageGrid, Shape};
pub use mo::{InnerOptimizer, MoConfig};
pub use operators::{ForwardOperator, Measurement, OperatorSpec};
pub use prior::{Denoiser, PosteriorWeights, PriorDataset};
pub use rng::{Purpose, RngStream};
pub use samplers::{InitMode, MuOptimizer, SamplerKind, SamplerRun};
pub use schedule::{EdmSchedule, LrDecay};
