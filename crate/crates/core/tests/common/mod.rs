//! Shared helpers for integration tests: random instances and an
//! 192-bit brute-force reference for the dataset denoiser.

#![allow(dead_code)]

use measopt::grid::{gaussian_grid, ImageGrid, Shape};
use measopt::prior::PriorDataset;
use measopt::rng::{Purpose, RngStream};
use rand::Rng;
use astro_float::{BigFloat, Consts, RoundingMode};

pub fn normals(shape: Shape, seed: u64, tag: u32) -> ImageGrid {
    gaussian_grid(shape, &RngStream::new(seed, 0, 0, Purpose::Custom(tag))).unwrap()
}

pub fn uniform(seed: u64, tag: u32) -> impl Rng {
    RngStream::new(seed, 1, 0, Purpose::Custom(tag)).rng()
}

/// A prior, a query point drawn from the noised mixture at `sigma`, and `sigma`.
pub struct Instance {
    pub prior: PriorDataset,
    pub x: ImageGrid,
    pub sigma: f64,
}

/// `n <= 16`, `d <= 64`, `sigma` log-uniform on `[lo, hi]`.
pub fn instance(seed: u64, lo: f64, hi: f64) -> Instance {
    let mut rng = uniform(seed, 1);
    let n = rng.gen_range(1..=16);
    let h = rng.gen_range(1..=8);
    let w = rng.gen_range(1..=8);
    let c = if h * w * 2 <= 64 && rng.gen_bool(0.3) { 2 } else { 1 };
    let shape = Shape::new(h, w, c);
    let items: Vec<ImageGrid> = (0..n)
        .map(|i| normals(shape, seed * 100 + i as u64, 2).scale(0.5))
        .collect();
    let sigma = (lo.ln() + rng.gen::<f64>() * (hi.ln() - lo.ln())).exp();
    let center = if n > 1 && rng.gen_bool(0.3) {
        // Between two items, where the weights are most mixed.
        items[0].add(&items[1]).unwrap().scale(0.5)
    } else {
        items[rng.gen_range(0..n)].clone()
    };
    let x = measopt::grid::axpy(sigma, &normals(shape, seed, 3), &center).unwrap();
    Instance {
        prior: PriorDataset::new(items).unwrap(),
        x,
        sigma,
    }
}

const PREC: usize = 192;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(v: f64) -> BigFloat {
    BigFloat::from_f64(v, PREC)
}

fn to_f64(b: &BigFloat) -> f64 {
    b.to_string().parse().expect("decimal rendering")
}

/// Logits `-|x - z_i|^2 / (2 sigma^2)` evaluated at 192-bit precision.
pub fn big_logits(prior: &PriorDataset, x: &ImageGrid, sigma: f64) -> Vec<BigFloat> {
    let s = big(sigma);
    let two_s2 = big(2.0).mul(&s, PREC, RM).mul(&s, PREC, RM);
    prior
        .items()
        .iter()
        .map(|z| {
            let mut acc = big(0.0);
            for (&a, &b) in x.as_slice().iter().zip(z.as_slice()) {
                let diff = big(a).sub(&big(b), PREC, RM);
                acc = acc.add(&diff.mul(&diff, PREC, RM), PREC, RM);
            }
            acc.div(&two_s2, PREC, RM).neg()
        })
        .collect()
}

fn big_max(v: &[BigFloat]) -> BigFloat {
    v.iter().skip(1).fold(v[0].clone(), |m, l| m.max(l))
}

fn shifted_exps(logits: &[BigFloat], cc: &mut Consts) -> (BigFloat, Vec<BigFloat>) {
    let m = big_max(logits);
    let e = logits
        .iter()
        .map(|l| l.sub(&m, PREC, RM).exp(PREC, RM, cc))
        .collect();
    (m, e)
}

fn big_sum(v: &[BigFloat]) -> BigFloat {
    v.iter().fold(big(0.0), |a, b| a.add(b, PREC, RM))
}

fn big_weights(prior: &PriorDataset, x: &ImageGrid, sigma: f64, cc: &mut Consts) -> Vec<BigFloat> {
    let (_, e) = shifted_exps(&big_logits(prior, x, sigma), cc);
    let total = big_sum(&e);
    e.iter().map(|v| v.div(&total, PREC, RM)).collect()
}

pub fn ref_weights(prior: &PriorDataset, x: &ImageGrid, sigma: f64) -> Vec<f64> {
    let mut cc = Consts::new().expect("constants cache");
    big_weights(prior, x, sigma, &mut cc).iter().map(to_f64).collect()
}

pub fn ref_denoise(prior: &PriorDataset, x: &ImageGrid, sigma: f64) -> Vec<f64> {
    let mut cc = Consts::new().expect("constants cache");
    let w = big_weights(prior, x, sigma, &mut cc);
    (0..x.len())
        .map(|k| {
            let acc = prior.items().iter().zip(&w).fold(big(0.0), |acc, (z, wi)| {
                acc.add(&wi.mul(&big(z.as_slice()[k]), PREC, RM), PREC, RM)
            });
            to_f64(&acc)
        })
        .collect()
}

pub fn ref_log_density(prior: &PriorDataset, x: &ImageGrid, sigma: f64) -> f64 {
    let mut cc = Consts::new().expect("constants cache");
    let (m, e) = shifted_exps(&big_logits(prior, x, sigma), &mut cc);
    let lse = m.add(&big_sum(&e).ln(PREC, RM, &mut cc), PREC, RM);
    let ln_n = big(prior.len() as f64).ln(PREC, RM, &mut cc);
    let s = big(sigma);
    let two_pi_s2 = cc.pi(PREC, RM).mul(&big(2.0), PREC, RM).mul(&s, PREC, RM).mul(&s, PREC, RM);
    let gauss = big(x.len() as f64 / 2.0).mul(&two_pi_s2.ln(PREC, RM, &mut cc), PREC, RM);
    to_f64(&lse.sub(&ln_n, PREC, RM).sub(&gauss, PREC, RM))
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &ImageGrid, b: &ImageGrid) -> f64 {
    measopt::grid::dot(a, b).unwrap()
}
