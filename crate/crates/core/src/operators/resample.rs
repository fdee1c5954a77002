//! Separable downsampling by an integer factor.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownsampleKernel {
    Bicubic,
    Average,
}

/// Sparse `out_len x in_len` weight matrix, one tap list per output sample.
#[derive(Debug, Clone)]
pub(crate) struct Taps1d {
    in_len: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

/// Catmull-Rom cubic (`a = -0.5`).
fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

impl Taps1d {
    pub(crate) fn new(in_len: usize, factor: usize, kernel: DownsampleKernel) -> Self {
        let out_len = in_len / factor;
        let f = factor as f64;
        let rows = (0..out_len)
            .map(|i| match kernel {
                DownsampleKernel::Average => (i * factor..(i + 1) * factor)
                    .map(|j| (j, 1.0 / f))
                    .collect(),
                DownsampleKernel::Bicubic => {
                    // Stretch the kernel by `factor` to antialias; drop taps
                    // outside the signal and renormalize.
                    let center = (i as f64 + 0.5) * f - 0.5;
                    let support = 2.0 * f;
                    let lo = (center - support).floor().max(0.0) as usize;
                    let hi = ((center + support).ceil() as usize).min(in_len - 1);
                    let mut taps: Vec<(usize, f64)> = (lo..=hi)
                        .map(|j| (j, cubic((j as f64 - center) / f)))
                        .filter(|&(_, w)| w != 0.0)
                        .collect();
                    let total: f64 = taps.iter().map(|t| t.1).sum();
                    for t in &mut taps {
                        t.1 /= total;
                    }
                    taps
                }
            })
            .collect();
        Self { in_len, rows }
    }

    pub(crate) fn out_len(&self) -> usize {
        self.rows.len()
    }

    fn apply(&self, input: &[f64], stride: usize, out: &mut [f64], out_stride: usize) {
        for (i, taps) in self.rows.iter().enumerate() {
            out[i * out_stride] = taps.iter().map(|&(j, w)| w * input[j * stride]).sum();
        }
    }

    fn apply_t(&self, input: &[f64], stride: usize, out: &mut [f64], out_stride: usize) {
        for (i, taps) in self.rows.iter().enumerate() {
            let v = input[i * stride];
            for &(j, w) in taps {
                out[j * out_stride] += w * v;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Downsampler {
    rows: Taps1d,
    cols: Taps1d,
}

impl Downsampler {
    pub(crate) fn new(h: usize, w: usize, factor: usize, kernel: DownsampleKernel) -> Self {
        Self {
            rows: Taps1d::new(h, factor, kernel),
            cols: Taps1d::new(w, factor, kernel),
        }
    }

    pub(crate) fn out_dims(&self) -> (usize, usize) {
        (self.rows.out_len(), self.cols.out_len())
    }

    pub(crate) fn apply(&self, plane: &[f64]) -> Vec<f64> {
        let (h, w) = (self.rows.in_len, self.cols.in_len);
        let (oh, ow) = self.out_dims();
        let mut tmp = vec![0.0; h * ow];
        for r in 0..h {
            self.cols
                .apply(&plane[r * w..(r + 1) * w], 1, &mut tmp[r * ow..(r + 1) * ow], 1);
        }
        let mut out = vec![0.0; oh * ow];
        for c in 0..ow {
            self.rows.apply(&tmp[c..], ow, &mut out[c..], ow);
        }
        out
    }

    pub(crate) fn apply_adjoint(&self, plane: &[f64]) -> Vec<f64> {
        let (h, w) = (self.rows.in_len, self.cols.in_len);
        let (_, ow) = self.out_dims();
        let mut tmp = vec![0.0; h * ow];
        for c in 0..ow {
            self.rows.apply_t(&plane[c..], ow, &mut tmp[c..], ow);
        }
        let mut out = vec![0.0; h * w];
        for r in 0..h {
            self.cols
                .apply_t(&tmp[r * ow..(r + 1) * ow], 1, &mut out[r * w..(r + 1) * w], 1);
        }
        out
    }
}
