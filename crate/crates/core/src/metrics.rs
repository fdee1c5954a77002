//! Image quality scores in the `[-1, 1]` domain (data range 2).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const DEFAULT_DATA_RANGE: f64 = 2.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_range(data_range: f64) -> Result<()> {
    if data_range > 0.0 && data_range.is_finite() {
        Ok(())
    } else {
        Err(Error::param("data_range", "must be positive"))
    }
}

/// `10 log10(range^2 / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageGrid, b: &ImageGrid, data_range: f64) -> Result<f64> {
    check_range(data_range)?;
    let mse = crate::grid::l2_dist_sq(a, b)? / a.len() as f64;
    let peak = data_range * data_range;
    if mse < peak * 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let u = i as f64 - half;
            (-u * u / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Separable valid-mode filtering of an `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|j| g[j] * plane[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|j| g[j] * rows[(r + j) * ow + c]).sum();
        }
    }
    out
}

/// Mean local SSIM over valid 11x11 Gaussian windows, averaged over channels.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, data_range: f64) -> Result<f64> {
    check_range(data_range)?;
    a.check_same_shape(b)?;
    let shape = a.shape();
    let (h, w) = (shape.height, shape.width);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::param(
            "image",
            format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"),
        ));
    }
    let g = gaussian_window();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let mut total = 0.0;
    for ch in 0..shape.channels {
        let pa = a.channel_plane(ch);
        let pb = b.channel_plane(ch);
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> {
            pa.iter().zip(&pb).map(|(&x, &y)| f(x, y)).collect()
        };
        let mu_a = filter_valid(&pa, h, w, &g);
        let mu_b = filter_valid(&pb, h, w, &g);
        let e_aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
        let e_bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
        let e_ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
        let mut sum = 0.0;
        for k in 0..mu_a.len() {
            let (ma, mb) = (mu_a[k], mu_b[k]);
            let var_a = e_aa[k] - ma * ma;
            let var_b = e_bb[k] - mb * mb;
            let cov = e_ab[k] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok((total / shape.channels as f64).clamp(-1.0, 1.0))
}

/// Point reflection of the spatial indices.
pub fn rot180(x: &ImageGrid) -> ImageGrid {
    let s = x.shape();
    ImageGrid::from_fn(s, |r, c, ch| x.get(s.height - 1 - r, s.width - 1 - c, ch))
        .expect("shape already validated")
}

/// PSNR that forgives the 180-degree rotation ambiguity when `allow_rot`.
/// Returns the score and whether the rotated copy won.
pub fn ambiguity_psnr_flagged(
    x_hat: &ImageGrid,
    x_true: &ImageGrid,
    allow_rot: bool,
    data_range: f64,
) -> Result<(f64, bool)> {
    let plain = psnr(x_hat, x_true, data_range)?;
    if !allow_rot {
        return Ok((plain, false));
    }
    let rotated = psnr(&rot180(x_hat), x_true, data_range)?;
    Ok(if rotated > plain {
        (rotated, true)
    } else {
        (plain, false)
    })
}

pub fn ambiguity_psnr(x_hat: &ImageGrid, x_true: &ImageGrid, allow_rot: bool) -> Result<f64> {
    ambiguity_psnr_flagged(x_hat, x_true, allow_rot, DEFAULT_DATA_RANGE).map(|(p, _)| p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub psnr_db: f64,
    pub ssim: f64,
    pub runtime_ms: f64,
    pub seed: u64,
    pub replica: usize,
    pub ambiguity_corrected: bool,
}

/// Highest PSNR; ties go to the lowest replica index.
pub fn best_of(rows: &[ScoreRow]) -> Result<ScoreRow> {
    let mut best: Option<&ScoreRow> = None;
    for row in rows {
        best = match best {
            None => Some(row),
            Some(b) if row.psnr_db > b.psnr_db => Some(row),
            Some(b) if row.psnr_db == b.psnr_db && row.replica < b.replica => Some(row),
            keep => keep,
        };
    }
    best.cloned()
        .ok_or_else(|| Error::param("rows", "best_of needs at least one row"))
}
