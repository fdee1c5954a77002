//! The exact denoiser of a finite training set.
//!
//! With `p_data = (1/n) sum_i delta(x - z_i)` and Gaussian corruption of
//! variance `sigma^2 I`, the minimum-MSE denoiser is the softmax-weighted
//! average of the training items:
//!
//! ```text
//! w_i(x; sigma) = softmax_i( -|x - z_i|^2 / (2 sigma^2) )
//! D(x; sigma)   = sum_i w_i z_i
//! ```
//!
//! Everything here is evaluated in log space with the maximum logit
//! subtracted, so nothing underflows at small `sigma` or large `d`.

use crate::error::{Error, Result};
use crate::grid::{dist_sq_slices, dot_slices, ImageGrid, Shape};

/// Anything that can answer a denoising query at noise level `sigma`.
///
/// Samplers are generic over this so tests can wrap the dataset to count
/// calls.
pub trait Denoiser: Sync {
    fn shape(&self) -> Shape;

    fn denoise(&self, x: &ImageGrid, sigma: f64) -> Result<ImageGrid>;

    /// `v^T J_D(x)` where `J_D` is the Jacobian of [`Denoiser::denoise`].
    fn denoise_vjp(&self, x: &ImageGrid, sigma: f64, v: &ImageGrid) -> Result<ImageGrid>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorWeights(pub Vec<f64>);

impl PosteriorWeights {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Index of the largest weight; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &w) in self.0.iter().enumerate() {
            if w > self.0[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct PriorDataset {
    shape: Shape,
    items: Vec<ImageGrid>,
}

impl PriorDataset {
    pub fn new(items: Vec<ImageGrid>) -> Result<Self> {
        let first = items.first().ok_or(Error::EmptyDataset)?;
        let shape = first.shape();
        for item in &items {
            if item.shape() != shape {
                return Err(Error::ShapeMismatch {
                    expected: shape.dims(),
                    got: item.shape().dims(),
                });
            }
            if !item.is_finite() {
                return Err(Error::NonFinite("prior dataset item"));
            }
        }
        Ok(Self { shape, items })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ImageGrid] {
        &self.items
    }

    pub fn item(&self, i: usize) -> &ImageGrid {
        &self.items[i]
    }

    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    pub fn mean(&self) -> ImageGrid {
        let d = self.dim();
        let mut acc = vec![0.0; d];
        for z in &self.items {
            for (a, &v) in acc.iter_mut().zip(z.as_slice()) {
                *a += v;
            }
        }
        let n = self.items.len() as f64;
        ImageGrid::from_parts(self.shape, acc.into_iter().map(|v| v / n).collect())
    }

    fn check_query(&self, x: &ImageGrid, sigma: f64) -> Result<()> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
        }
        if x.shape() != self.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.dims(),
                got: x.shape().dims(),
            });
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("denoiser query"));
        }
        Ok(())
    }

    /// Logits `-|x - z_i|^2 / (2 sigma^2)`.
    fn logits(&self, x: &ImageGrid, sigma: f64) -> Vec<f64> {
        let inv = 1.0 / (2.0 * sigma * sigma);
        self.items
            .iter()
            .map(|z| -dist_sq_slices(x.as_slice(), z.as_slice()) * inv)
            .collect()
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
        let mut w: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total = w.iter().fold(0.0, |a, &b| a + b);
        for v in &mut w {
            *v /= total;
        }
        w
    }

    fn weighted_sum(&self, w: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim()];
        for (z, &wi) in self.items.iter().zip(w) {
            if wi == 0.0 {
                continue;
            }
            for (a, &v) in acc.iter_mut().zip(z.as_slice()) {
                *a += wi * v;
            }
        }
        acc
    }

    pub fn posterior_weights(&self, x: &ImageGrid, sigma: f64) -> Result<PosteriorWeights> {
        self.check_query(x, sigma)?;
        Ok(PosteriorWeights(Self::softmax(&self.logits(x, sigma))))
    }

    pub fn denoise(&self, x: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
        let w = self.posterior_weights(x, sigma)?;
        Ok(ImageGrid::from_parts(self.shape, self.weighted_sum(&w.0)))
    }

    /// `log p(x; sigma)` of the noised empirical distribution.
    pub fn mixture_log_density(&self, x: &ImageGrid, sigma: f64) -> Result<f64> {
        self.check_query(x, sigma)?;
        let logits = self.logits(x, sigma);
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &l| m.max(l));
        let lse = max + logits.iter().fold(0.0, |a, &l| a + (l - max).exp()).ln();
        let d = self.dim() as f64;
        let n = self.items.len() as f64;
        Ok(lse - n.ln() - 0.5 * d * (2.0 * std::f64::consts::PI * sigma * sigma).ln())
    }

    /// `grad_x log p(x; sigma) = (D(x; sigma) - x) / sigma^2`.
    pub fn score(&self, x: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
        let d = self.denoise(x, sigma)?;
        let inv = 1.0 / (sigma * sigma);
        d.zip_map(x, |dv, xv| (dv - xv) * inv)
    }

    /// `v^T J_D` with `J_D = (1/sigma^2) sum_i w_i z_i (z_i - D)^T`, in `O(n d)`.
    ///
    /// Evaluated in the centered form `sum_i w_i <v, z_i - D> (z_i - D)`,
    /// which equals the above because the weights sum to one.
    pub fn denoiser_vjp(&self, x: &ImageGrid, sigma: f64, v: &ImageGrid) -> Result<ImageGrid> {
        x.check_same_shape(v)?;
        let w = self.posterior_weights(x, sigma)?;
        let mean = self.weighted_sum(&w.0);
        let inv = 1.0 / (sigma * sigma);
        let mut acc = vec![0.0; self.dim()];
        let mut centered = vec![0.0; self.dim()];
        for (z, &wi) in self.items.iter().zip(&w.0) {
            if wi == 0.0 {
                continue;
            }
            for ((c, &zv), &m) in centered.iter_mut().zip(z.as_slice()).zip(&mean) {
                *c = zv - m;
            }
            let coef = wi * dot_slices(v.as_slice(), &centered) * inv;
            for (a, &c) in acc.iter_mut().zip(&centered) {
                *a += coef * c;
            }
        }
        Ok(ImageGrid::from_parts(self.shape, acc))
    }

    /// Per-coordinate bounding box of the dataset, `(min, max)`.
    pub fn coordinate_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.dim();
        let mut lo = vec![f64::INFINITY; d];
        let mut hi = vec![f64::NEG_INFINITY; d];
        for z in &self.items {
            for (k, &v) in z.as_slice().iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        (lo, hi)
    }

    /// Whether `x` lies inside the per-coordinate hull bounds, up to `tol`.
    pub fn within_hull_bounds(&self, x: &ImageGrid, tol: f64) -> bool {
        if x.shape() != self.shape {
            return false;
        }
        let (lo, hi) = self.coordinate_bounds();
        x.as_slice()
            .iter()
            .enumerate()
            .all(|(k, &v)| v >= lo[k] - tol && v <= hi[k] + tol)
    }
}

impl Denoiser for PriorDataset {
    fn shape(&self) -> Shape {
        self.shape
    }

    fn denoise(&self, x: &ImageGrid, sigma: f64) -> Result<ImageGrid> {
        PriorDataset::denoise(self, x, sigma)
    }

    fn denoise_vjp(&self, x: &ImageGrid, sigma: f64, v: &ImageGrid) -> Result<ImageGrid> {
        self.denoiser_vjp(x, sigma, v)
    }
}
