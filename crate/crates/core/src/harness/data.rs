//! Prior datasets: PNG directories and seeded synthetic generators.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Shape};
use crate::prior::PriorDataset;
use crate::rng::{Purpose, RngStream};

/// Attempts per requested item before giving up on the pairwise gap.
const GAP_RETRIES_PER_ITEM: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    Blobs,
    Bars,
    DigitsLike,
}

fn to_pixel(v: f64) -> u8 {
    ((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8
}

fn from_pixel(p: u8) -> f64 {
    p as f64 / 127.5 - 1.0
}

/// Load every PNG in `dir` (lexicographic by file name), scaled to `[-1, 1]`.
pub fn load_dataset(dir: &Path) -> Result<PriorDataset> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::EmptyDataset);
    }
    paths.sort();
    let mut items = Vec::with_capacity(paths.len());
    for path in &paths {
        items.push(load_image(path)?);
    }
    let first = items[0].shape();
    if let Some(bad) = items.iter().position(|z| z.shape() != first) {
        return Err(Error::Config(format!(
            "{} is {:?}, expected {:?} like {}",
            paths[bad].display(),
            items[bad].shape(),
            first,
            paths[0].display()
        )));
    }
    PriorDataset::new(items)
}

/// Grayscale images load with one channel, everything else as RGB.
pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = if img.color().has_color() {
        (3, img.to_rgb8().into_raw())
    } else {
        (1, img.to_luma8().into_raw())
    };
    ImageGrid::from_vec(
        Shape::new(h, w, channels),
        raw.into_iter().map(from_pixel).collect(),
    )
}

/// 8-bit PNG; values outside `[-1, 1]` are clipped.
pub fn save_png(path: &Path, x: &ImageGrid) -> Result<()> {
    let s = x.shape();
    let pixels: Vec<u8> = x.as_slice().iter().map(|&v| to_pixel(v)).collect();
    let color = match s.channels {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::param("channels", format!("cannot save {c}-channel image"))),
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer(path, &pixels, s.width as u32, s.height as u32, color).map_err(
        |source| Error::Image {
            path: path.to_path_buf(),
            source,
        },
    )
}

/// Exact float dump: a JSON header line with the shape, then little-endian `f64`.
pub fn save_raw(path: &Path, x: &ImageGrid) -> Result<()> {
    let mut buf = serde_json::to_vec(&x.shape()).map_err(|e| Error::Format(e.to_string()))?;
    buf.push(b'\n');
    for v in x.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn load_raw(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let shape: Shape =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| Error::Format(e.to_string()))?;
    let body = &bytes[nl + 1..];
    if body.len() != shape.len() * 8 {
        return Err(Error::Format("payload length does not match shape".into()));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    ImageGrid::from_vec(shape, data)
}

/// Seeded synthetic prior whose items are pairwise at least `0.1 sqrt(d)`
/// apart in L2.
pub fn synth_dataset(kind: SynthKind, n: usize, shape: Shape, seed: u64) -> Result<PriorDataset> {
    shape.check_nonempty()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let min_gap_sq = 0.01 * shape.len() as f64;
    let mut items: Vec<ImageGrid> = Vec::with_capacity(n);
    let mut attempt = 0u64;
    while items.len() < n {
        if attempt as usize >= GAP_RETRIES_PER_ITEM * n {
            return Err(Error::GapNotSatisfied(n));
        }
        let mut rng = RngStream::new(seed, 0, attempt, Purpose::Dataset).rng();
        attempt += 1;
        let candidate = match kind {
            SynthKind::Blobs => blobs(shape, &mut rng),
            SynthKind::Bars => bars(shape, &mut rng),
            SynthKind::DigitsLike => digit(shape, &mut rng),
        }?;
        let far = items
            .iter()
            .all(|z| crate::grid::l2_dist_sq(z, &candidate).expect("same shape") > min_gap_sq);
        if far {
            items.push(candidate);
        }
    }
    PriorDataset::new(items)
}

/// Minimum pairwise L2 distance between dataset items (infinite for one item).
pub fn min_pairwise_gap(ds: &PriorDataset) -> f64 {
    let items = ds.items();
    let mut best = f64::INFINITY;
    for i in 0..items.len() {
        for j in i + 1..items.len() {
            let d = crate::grid::l2_dist_sq(&items[i], &items[j]).expect("same shape");
            best = best.min(d.sqrt());
        }
    }
    best
}

fn tints(channels: usize, rng: &mut impl Rng) -> Vec<f64> {
    if channels == 1 {
        vec![1.0]
    } else {
        (0..channels).map(|_| rng.gen_range(0.4..1.0)).collect()
    }
}

/// Intensity map in `[0, 1]` per pixel, tinted per channel and mapped to `[-1, 1]`.
fn render(shape: Shape, rng: &mut impl Rng, intensity: impl Fn(f64, f64) -> f64) -> Result<ImageGrid> {
    let tint = tints(shape.channels, rng);
    let (h, w) = (shape.height as f64, shape.width as f64);
    ImageGrid::from_fn(shape, |r, c, ch| {
        let v = intensity((r as f64 + 0.5) / h, (c as f64 + 0.5) / w).clamp(0.0, 1.0);
        2.0 * v * tint[ch] - 1.0
    })
}

fn blobs(shape: Shape, rng: &mut impl Rng) -> Result<ImageGrid> {
    let count = rng.gen_range(1..=3);
    let params: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.15..0.85),
                rng.gen_range(0.08..0.25),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    render(shape, rng, |y, x| {
        params
            .iter()
            .map(|&(cy, cx, rad, amp)| {
                let d2 = (y - cy).powi(2) + (x - cx).powi(2);
                amp * (-d2 / (2.0 * rad * rad)).exp()
            })
            .sum()
    })
}

fn bars(shape: Shape, rng: &mut impl Rng) -> Result<ImageGrid> {
    let count = rng.gen_range(1..=3);
    // (vertical, start, end, level)
    let params: Vec<(bool, f64, f64, f64)> = (0..count)
        .map(|_| {
            let start = rng.gen_range(0.0..0.8);
            let width = rng.gen_range(0.1..0.3);
            (rng.gen_bool(0.5), start, start + width, rng.gen_range(0.5..1.0))
        })
        .collect();
    render(shape, rng, |y, x| {
        params
            .iter()
            .map(|&(vertical, a, b, level)| {
                let u = if vertical { x } else { y };
                if (a..b).contains(&u) {
                    level
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    })
}

/// Seven-segment layout: (x0, y0, x1, y1) in a unit cell.
const SEGMENTS: [(f64, f64, f64, f64); 7] = [
    (0.0, 0.0, 1.0, 0.0),
    (1.0, 0.0, 1.0, 0.5),
    (1.0, 0.5, 1.0, 1.0),
    (0.0, 1.0, 1.0, 1.0),
    (0.0, 0.5, 0.0, 1.0),
    (0.0, 0.0, 0.0, 0.5),
    (0.0, 0.5, 1.0, 0.5),
];

const DIGITS: [[bool; 7]; 10] = [
    [true, true, true, true, true, true, false],
    [false, true, true, false, false, false, false],
    [true, true, false, true, true, false, true],
    [true, true, true, true, false, false, true],
    [false, true, true, false, false, true, true],
    [true, false, true, true, false, true, true],
    [true, false, true, true, true, true, true],
    [true, true, true, false, false, false, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

fn segment_dist(px: f64, py: f64, (x0, y0, x1, y1): (f64, f64, f64, f64)) -> f64 {
    let (dx, dy) = (x1 - x0, y1 - y0);
    let t = (((px - x0) * dx + (py - y0) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    ((px - x0 - t * dx).powi(2) + (py - y0 - t * dy).powi(2)).sqrt()
}

fn digit(shape: Shape, rng: &mut impl Rng) -> Result<ImageGrid> {
    let lit = DIGITS[rng.gen_range(0..10)];
    let cw = rng.gen_range(0.35..0.5);
    let ch = rng.gen_range(0.55..0.75);
    let ox = rng.gen_range(0.1..(0.9 - cw));
    let oy = rng.gen_range(0.1..(0.9 - ch));
    let stroke = rng.gen_range(0.05..0.09);
    let level = rng.gen_range(0.7..1.0);
    render(shape, rng, |y, x| {
        let (u, v) = ((x - ox) / cw, (y - oy) / ch);
        let near = SEGMENTS
            .iter()
            .zip(lit)
            .filter(|(_, on)| *on)
            .map(|(&seg, _)| segment_dist(u * cw, v * ch, (seg.0 * cw, seg.1 * ch, seg.2 * cw, seg.3 * ch)))
            .fold(f64::INFINITY, f64::min);
        // Soft edge of one stroke width.
        level * (1.0 - ((near - stroke) / stroke).clamp(0.0, 1.0))
    })
}
