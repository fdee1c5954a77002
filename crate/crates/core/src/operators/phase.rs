//! Fourier-magnitude measurements of a zero-padded image.
//!
//! The transform is the orthonormal DFT (scaled by `1/sqrt(P_h P_w)`), so
//! the magnitude map is 1-Lipschitz and its data-fit gradient lives on the
//! same scale as the masking and blur operators.

use rustfft::num_complex::Complex64;

use super::fft2::Fft2;

pub(crate) const MAGNITUDE_FLOOR: f64 = 1e-12;

// Spectra here are far from the overflow range, so the plain formula is
// safe and much cheaper than `hypot`.
fn modulus(c: Complex64) -> f64 {
    (c.re * c.re + c.im * c.im).sqrt()
}

#[derive(Debug, Clone)]
pub(crate) struct FourierMagnitude {
    h: usize,
    w: usize,
    pad_h: usize,
    pad_w: usize,
    off_r: usize,
    off_c: usize,
    fft: Fft2,
}

impl FourierMagnitude {
    pub(crate) fn new(h: usize, w: usize, pad_h: usize, pad_w: usize) -> Self {
        Self {
            h,
            w,
            pad_h,
            pad_w,
            off_r: (pad_h - h) / 2,
            off_c: (pad_w - w) / 2,
            fft: Fft2::new(pad_h, pad_w),
        }
    }

    pub(crate) fn padded_dims(&self) -> (usize, usize) {
        (self.pad_h, self.pad_w)
    }

    fn spectrum(&self, plane: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.pad_h * self.pad_w];
        for r in 0..self.h {
            for c in 0..self.w {
                buf[(r + self.off_r) * self.pad_w + c + self.off_c].re = plane[r * self.w + c];
            }
        }
        self.fft.forward(&mut buf);
        let scale = 1.0 / (self.fft.len() as f64).sqrt();
        for b in &mut buf {
            *b *= scale;
        }
        buf
    }

    pub(crate) fn apply(&self, plane: &[f64]) -> Vec<f64> {
        self.spectrum(plane).iter().map(|c| modulus(*c)).collect()
    }

    /// `Re{crop(F^H ((X / max(|X|, eps)) * v))}` with `X` the spectrum at `plane`.
    pub(crate) fn vjp(&self, plane: &[f64], cotangent: &[f64]) -> Vec<f64> {
        let spec = self.spectrum(plane);
        let mags: Vec<f64> = spec.iter().map(|c| modulus(*c)).collect();
        self.pull_back(spec, &mags, cotangent)
    }

    /// Residual `|X| - y` and its pull-back, sharing one forward transform.
    pub(crate) fn residual_vjp(&self, plane: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let spec = self.spectrum(plane);
        let mags: Vec<f64> = spec.iter().map(|c| modulus(*c)).collect();
        let r: Vec<f64> = mags.iter().zip(y).map(|(m, yv)| m - yv).collect();
        let g = self.pull_back(spec, &mags, &r);
        (r, g)
    }

    fn pull_back(&self, mut buf: Vec<Complex64>, mags: &[f64], cotangent: &[f64]) -> Vec<f64> {
        for ((b, &m), &v) in buf.iter_mut().zip(mags).zip(cotangent) {
            *b *= v / m.max(MAGNITUDE_FLOOR);
        }
        self.fft.inverse(&mut buf);
        let scale = 1.0 / (self.fft.len() as f64).sqrt();
        let mut out = vec![0.0; self.h * self.w];
        for r in 0..self.h {
            for c in 0..self.w {
                out[r * self.w + c] = buf[(r + self.off_r) * self.pad_w + c + self.off_c].re * scale;
            }
        }
        out
    }
}
