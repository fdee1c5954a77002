//! Circular 2-D convolution with a square odd-sized kernel.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;

use super::fft2::Fft2;
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

/// Kernels with more taps than this use the frequency-domain path.
const DIRECT_MAX_TAPS: usize = 15 * 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ConvBackend {
    Direct,
    Fourier,
}

#[derive(Debug, Clone)]
pub(crate) struct CircularConv {
    h: usize,
    w: usize,
    ksize: usize,
    kernel: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    backend: ConvBackend,
    fft: Option<(Fft2, Vec<Complex64>)>,
}

impl CircularConv {
    pub(crate) fn new(h: usize, w: usize, ksize: usize, kernel: Vec<f64>) -> Self {
        let backend = if ksize * ksize > DIRECT_MAX_TAPS {
            ConvBackend::Fourier
        } else {
            ConvBackend::Direct
        };
        Self::with_backend(h, w, ksize, kernel, backend)
    }

    pub(crate) fn with_backend(
        h: usize,
        w: usize,
        ksize: usize,
        kernel: Vec<f64>,
        backend: ConvBackend,
    ) -> Self {
        debug_assert_eq!(kernel.len(), ksize * ksize);
        let fft = (backend == ConvBackend::Fourier).then(|| {
            let plan = Fft2::new(h, w);
            let half = (ksize / 2) as isize;
            let mut spec = vec![Complex64::new(0.0, 0.0); h * w];
            for i in 0..ksize {
                for j in 0..ksize {
                    let r = (i as isize - half).rem_euclid(h as isize) as usize;
                    let c = (j as isize - half).rem_euclid(w as isize) as usize;
                    spec[r * w + c].re += kernel[i * ksize + j];
                }
            }
            plan.forward(&mut spec);
            (plan, spec)
        });
        Self {
            h,
            w,
            ksize,
            kernel,
            backend,
            fft,
        }
    }

    #[cfg(test)]
    pub(crate) fn backend(&self) -> ConvBackend {
        self.backend
    }

    /// `y[r, c] = sum_{i, j} k[i, j] x[r - (i - h), c - (j - h)]` with wrap-around.
    pub(crate) fn apply(&self, plane: &[f64]) -> Vec<f64> {
        self.run(plane, false)
    }

    /// Adjoint: correlation with the same kernel.
    pub(crate) fn apply_adjoint(&self, plane: &[f64]) -> Vec<f64> {
        self.run(plane, true)
    }

    fn run(&self, plane: &[f64], adjoint: bool) -> Vec<f64> {
        match &self.fft {
            Some((plan, spec)) => {
                let mut buf: Vec<Complex64> =
                    plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
                plan.forward(&mut buf);
                for (b, k) in buf.iter_mut().zip(spec) {
                    *b *= if adjoint { k.conj() } else { *k };
                }
                plan.inverse(&mut buf);
                let scale = 1.0 / plan.len() as f64;
                buf.iter().map(|c| c.re * scale).collect()
            }
            None => self.direct(plane, adjoint),
        }
    }

    fn direct(&self, plane: &[f64], adjoint: bool) -> Vec<f64> {
        let (h, w, k) = (self.h as isize, self.w as isize, self.ksize);
        let half = (k / 2) as isize;
        let sign = if adjoint { 1 } else { -1 };
        let mut out = vec![0.0; plane.len()];
        for r in 0..h {
            for c in 0..w {
                let mut acc = 0.0;
                for i in 0..k {
                    let rr = (r + sign * (i as isize - half)).rem_euclid(h) as usize;
                    for j in 0..k {
                        let kv = self.kernel[i * k + j];
                        if kv == 0.0 {
                            continue;
                        }
                        let cc = (c + sign * (j as isize - half)).rem_euclid(w) as usize;
                        acc += kv * plane[rr * self.w + cc];
                    }
                }
                out[(r * w + c) as usize] = acc;
            }
        }
        out
    }
}

pub(crate) fn check_ksize(ksize: usize) -> Result<()> {
    if ksize == 0 || ksize % 2 == 0 {
        return Err(Error::param("ksize", format!("must be odd, got {ksize}")));
    }
    Ok(())
}

/// Normalized, truncated isotropic Gaussian.
pub(crate) fn gaussian_kernel(ksize: usize, sigma: f64) -> Result<Vec<f64>> {
    check_ksize(ksize)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("blur_sigma", "must be positive"));
    }
    let half = (ksize / 2) as f64;
    let mut k = Vec::with_capacity(ksize * ksize);
    for i in 0..ksize {
        for j in 0..ksize {
            let (di, dj) = (i as f64 - half, j as f64 - half);
            k.push((-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp());
        }
    }
    normalize(&mut k);
    Ok(k)
}

/// Rasterized random-walk trajectory of `ceil(ksize * intensity)` unit steps.
///
/// The heading drifts by `intensity`-scaled Gaussian increments; visited
/// positions are splatted bilinearly and the result is normalized.
pub(crate) fn motion_kernel(ksize: usize, intensity: f64, seed: u64) -> Result<Vec<f64>> {
    check_ksize(ksize)?;
    if !(intensity > 0.0 && intensity <= 1.0) {
        return Err(Error::param("intensity", "must lie in (0, 1]"));
    }
    let mut rng = RngStream::new(seed, 0, 0, Purpose::OperatorKernel).rng();
    let steps = (ksize as f64 * intensity).ceil() as usize;
    let max = (ksize - 1) as f64;
    let half = (ksize / 2) as f64;
    let (mut y, mut x) = (half, half);
    let mut heading = rng.gen::<f64>() * std::f64::consts::TAU;
    let mut k = vec![0.0; ksize * ksize];
    splat(&mut k, ksize, y, x);
    for _ in 0..steps {
        let turn: f64 = StandardNormal.sample(&mut rng);
        heading += intensity * turn;
        y = (y + heading.sin()).clamp(0.0, max);
        x = (x + heading.cos()).clamp(0.0, max);
        splat(&mut k, ksize, y, x);
    }
    normalize(&mut k);
    Ok(k)
}

fn splat(k: &mut [f64], ksize: usize, y: f64, x: f64) {
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let y1 = (y0 + 1).min(ksize - 1);
    let x1 = (x0 + 1).min(ksize - 1);
    k[y0 * ksize + x0] += (1.0 - fy) * (1.0 - fx);
    k[y0 * ksize + x1] += (1.0 - fy) * fx;
    k[y1 * ksize + x0] += fy * (1.0 - fx);
    k[y1 * ksize + x1] += fy * fx;
}

fn normalize(k: &mut [f64]) {
    let total: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= total;
    }
}
