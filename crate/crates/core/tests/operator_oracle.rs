//! Operators against dense matrices, a naive DFT and finite differences.

mod common;

use common::normals;
use measopt::grid::{ImageGrid, Shape};
use measopt::harness::config::{desk_operator, TASKS};
use measopt::metrics::rot180;
use measopt::operators::{
    apply_noise, data_fit_grad, make_box_inpaint, make_downsample, make_gaussian_blur, make_hdr,
    make_phase_retrieval, make_random_inpaint, measure, read_measurement, residual,
    write_measurement, DownsampleKernel, ForwardOperator, Measurement,
};
use measopt::rng::{Purpose, RngStream};

/// Dense `m x n` matrix stored row-major.
struct Dense {
    m: usize,
    n: usize,
    a: Vec<f64>,
}

impl Dense {
    fn zeros(m: usize, n: usize) -> Self {
        Self { m, n, a: vec![0.0; m * n] }
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| (0..self.n).map(|j| self.a[i * self.n + j] * x[j]).sum())
            .collect()
    }

    fn mul_t(&self, y: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|j| (0..self.m).map(|i| self.a[i * self.n + j] * y[i]).sum())
            .collect()
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn randn(len: usize, seed: u64) -> Vec<f64> {
    RngStream::new(seed, 0, 0, Purpose::Custom(77)).normals(len)
}

fn meas(op: &ForwardOperator, values: Vec<f64>) -> Measurement {
    Measurement {
        values,
        dims: op.output_dims().to_vec(),
        noise_sigma: 0.0,
        operator_id: op.id().to_string(),
        seed: None,
    }
}

/// Circular 2-D convolution with a centered, symmetric `k x k` kernel.
fn dense_circular_conv(h: usize, w: usize, kernel: &[f64], k: usize) -> Dense {
    let half = (k / 2) as isize;
    let mut d = Dense::zeros(h * w, h * w);
    for r in 0..h {
        for c in 0..w {
            for i in 0..k {
                for j in 0..k {
                    let rr = (r as isize + i as isize - half).rem_euclid(h as isize) as usize;
                    let cc = (c as isize + j as isize - half).rem_euclid(w as isize) as usize;
                    d.a[(r * w + c) * h * w + rr * w + cc] += kernel[i * k + j];
                }
            }
        }
    }
    d
}

fn gaussian(k: usize, s: f64) -> Vec<f64> {
    let half = (k / 2) as f64;
    let mut v: Vec<f64> = (0..k * k)
        .map(|p| {
            let (i, j) = ((p / k) as f64 - half, (p % k) as f64 - half);
            (-(i * i + j * j) / (2.0 * s * s)).exp()
        })
        .collect();
    let total: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= total);
    v
}

/// Keys cubic with `a = -1/2`, written from its polynomial pieces.
fn keys(t: f64) -> f64 {
    let t = t.abs();
    if t < 1.0 {
        1.5 * t.powi(3) - 2.5 * t.powi(2) + 1.0
    } else if t < 2.0 {
        -0.5 * t.powi(3) + 2.5 * t.powi(2) - 4.0 * t + 2.0
    } else {
        0.0
    }
}

/// Antialiased 1-D bicubic decimation; taps outside the signal are dropped
/// and each row renormalized to sum to one.
fn bicubic_rows(n: usize, f: usize) -> Dense {
    let mut d = Dense::zeros(n / f, n);
    for i in 0..n / f {
        let center = (i as f64 + 0.5) * f as f64 - 0.5;
        let row: Vec<f64> = (0..n).map(|j| keys((j as f64 - center) / f as f64)).collect();
        let total: f64 = row.iter().sum();
        for j in 0..n {
            d.a[i * n + j] = row[j] / total;
        }
    }
    d
}

/// Kronecker product `rows (x) cols` acting on row-major planes.
fn kron(rows: &Dense, cols: &Dense) -> Dense {
    let mut d = Dense::zeros(rows.m * cols.m, rows.n * cols.n);
    for i in 0..rows.m {
        for j in 0..cols.m {
            for p in 0..rows.n {
                for q in 0..cols.n {
                    d.a[(i * cols.m + j) * d.n + p * cols.n + q] =
                        rows.a[i * rows.n + p] * cols.a[j * cols.n + q];
                }
            }
        }
    }
    d
}

/// Columns `A e_j` read off the operator itself.
fn dense_of(op: &ForwardOperator) -> Dense {
    let shape = op.input_shape();
    let n = shape.len();
    let mut d = Dense::zeros(op.output_len(), n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        let col = op.forward(&ImageGrid::from_vec(shape, e).unwrap()).unwrap();
        for (i, v) in col.into_iter().enumerate() {
            d.a[i * n + j] = v;
        }
    }
    d
}

fn check_against_dense(op: &ForwardOperator, d: &Dense, seed: u64) {
    let shape = op.input_shape();
    let x = normals(shape, seed, 5);
    let ax = op.forward(&x).unwrap();
    let fwd = max_gap(&ax, &d.mul(x.as_slice()));
    assert!(fwd <= 1e-10, "{}: forward gap {fwd:e}", op.id());

    let v = randn(op.output_len(), seed + 1);
    let atv = op.vjp(&x, &v).unwrap();
    let adj = max_gap(atv.as_slice(), &d.mul_t(&v));
    assert!(adj <= 1e-10, "{}: adjoint gap {adj:e}", op.id());

    let y = randn(op.output_len(), seed + 2);
    let tau = 0.3;
    let g = data_fit_grad(op, &x, &meas(op, y.clone()), tau).unwrap();
    let r: Vec<f64> = ax.iter().zip(&y).map(|(a, b)| a - b).collect();
    let want: Vec<f64> = d.mul_t(&r).iter().map(|v| v / (tau * tau)).collect();
    let gap = max_gap(g.as_slice(), &want);
    assert!(gap <= 1e-10 * (1.0 + want.iter().fold(0.0_f64, |m, v| m.max(v.abs()))), "{}: grad gap {gap:e}", op.id());
}

#[test]
fn gaussian_blur_is_circular_convolution() {
    for (h, w, k, s) in [(8, 8, 3, 1.0), (8, 8, 5, 0.8), (16, 16, 9, 3.0), (12, 10, 7, 2.0)] {
        let op = make_gaussian_blur(Shape::new(h, w, 1), k, s).unwrap();
        check_against_dense(&op, &dense_circular_conv(h, w, &gaussian(k, s), k), 11);
    }
}

#[test]
fn bicubic_downsample_matches_separable_dense_matrix() {
    for (n, f) in [(8, 2), (16, 4), (12, 3)] {
        let op = make_downsample(Shape::new(n, n, 1), f, DownsampleKernel::Bicubic).unwrap();
        let r = bicubic_rows(n, f);
        check_against_dense(&op, &kron(&r, &r), 21);
    }
}

#[test]
fn average_downsample_matches_block_means() {
    let op = make_downsample(Shape::new(8, 8, 1), 2, DownsampleKernel::Average).unwrap();
    let mut r = Dense::zeros(4, 8);
    for i in 0..4 {
        r.a[i * 8 + 2 * i] = 0.5;
        r.a[i * 8 + 2 * i + 1] = 0.5;
    }
    check_against_dense(&op, &kron(&r, &r), 31);
}

#[test]
fn masks_select_and_zero_fill() {
    let shape = Shape::new(8, 8, 1);
    for op in [
        make_random_inpaint(shape, 0.4, 3).unwrap(),
        make_box_inpaint(shape, 3, 4, 5).unwrap(),
    ] {
        let d = dense_of(&op);
        // Every row is one unit vector and no pixel is observed twice.
        let mut seen = vec![false; shape.len()];
        for i in 0..d.m {
            let row = &d.a[i * d.n..(i + 1) * d.n];
            let ones: Vec<usize> = (0..d.n).filter(|&j| row[j] == 1.0).collect();
            assert_eq!(ones.len(), 1);
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
            assert!(!seen[ones[0]]);
            seen[ones[0]] = true;
        }
        check_against_dense(&op, &d, 41);
        let y = randn(op.output_len(), 9);
        let back = op.backproject(&y).unwrap();
        for (j, &hit) in seen.iter().enumerate() {
            if !hit {
                assert_eq!(back.as_slice()[j], 0.0);
            }
        }
    }
}

#[test]
fn box_mask_hides_one_rectangle() {
    let shape = Shape::new(8, 8, 1);
    let op = make_box_inpaint(shape, 3, 4, 5).unwrap();
    let hidden = op.backproject(&vec![1.0; op.output_len()]).unwrap();
    let holes: Vec<(usize, usize)> = (0..64)
        .filter(|&p| hidden.as_slice()[p] == 0.0)
        .map(|p| (p / 8, p % 8))
        .collect();
    assert_eq!(holes.len(), 12);
    let (r0, c0) = holes[0];
    for &(r, c) in &holes {
        assert!(r >= r0 && r < r0 + 3 && c >= c0 && c < c0 + 4);
    }
}

#[test]
fn linear_operators_pass_the_adjoint_identity() {
    let shape = Shape::new(32, 32, 1);
    for task in TASKS {
        let op = desk_operator(task).unwrap().build(shape).unwrap();
        if !op.is_linear() {
            continue;
        }
        for k in 0..100 {
            let x = normals(shape, 1000 + k, 6);
            let v = randn(op.output_len(), 2000 + k);
            let ax = op.forward(&x).unwrap();
            let lhs: f64 = ax.iter().zip(&v).map(|(a, b)| a * b).sum();
            let rhs = measopt::grid::dot(&x, &op.vjp(&x, &v).unwrap()).unwrap();
            let scale = ax.iter().map(|a| a * a).sum::<f64>().sqrt() * v.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!((lhs - rhs).abs() <= 1e-10 * scale, "{task}: {lhs} vs {rhs}");
        }
    }
}

fn data_fit(op: &ForwardOperator, x: &ImageGrid, y: &Measurement, tau: f64) -> f64 {
    residual(op, x, y).unwrap().iter().map(|r| r * r).sum::<f64>() / (2.0 * tau * tau)
}

#[test]
fn data_fit_gradient_matches_central_differences() {
    let shape = Shape::new(32, 32, 2);
    for task in TASKS {
        let op = desk_operator(task).unwrap().build(shape).unwrap();
        for k in 0..5 {
            // Amplitude 0.1 keeps the HDR clip inactive (factor 2).
            let x = normals(shape, 3000 + k, 7).scale(0.1);
            let y = measure(&op, &normals(shape, 4000 + k, 7).scale(0.1)).unwrap();
            let v = normals(shape, 5000 + k, 7);
            let tau = 0.5;
            let h = 1e-5;
            let plus = measopt::grid::axpy(h, &v, &x).unwrap();
            let minus = measopt::grid::axpy(-h, &v, &x).unwrap();
            let fd = (data_fit(&op, &plus, &y, tau) - data_fit(&op, &minus, &y, tau)) / (2.0 * h);
            let g = data_fit_grad(&op, &x, &y, tau).unwrap();
            let analytic = measopt::grid::dot(&g, &v).unwrap();
            let scale = g.norm() * v.norm();
            assert!(
                (fd - analytic).abs() <= 1e-5 * scale,
                "{task}: fd {fd} analytic {analytic}"
            );
        }
    }
}

#[test]
fn hdr_clips_and_has_zero_slope_when_saturated() {
    let shape = Shape::new(1, 4, 1);
    let op = make_hdr(shape, 2.0).unwrap();
    let x = ImageGrid::from_vec(shape, vec![-0.9, -0.2, 0.3, 0.7]).unwrap();
    assert_eq!(op.forward(&x).unwrap(), vec![-1.0, -0.4, 0.6, 1.0]);
    let g = op.vjp(&x, &[1.0; 4]).unwrap();
    assert_eq!(g.as_slice(), &[0.0, 2.0, 2.0, 0.0]);
}

/// `|DFT(pad(x))| / sqrt(P)` summed term by term.
fn naive_magnitudes(x: &[f64], h: usize, w: usize, ph: usize, pw: usize) -> Vec<f64> {
    let (or, oc) = ((ph - h) / 2, (pw - w) / 2);
    let mut out = Vec::with_capacity(ph * pw);
    let norm = ((ph * pw) as f64).sqrt();
    for u in 0..ph {
        for v in 0..pw {
            let (mut re, mut im) = (0.0, 0.0);
            for r in 0..h {
                for c in 0..w {
                    let ang = -2.0
                        * std::f64::consts::PI
                        * (((r + or) * u) as f64 / ph as f64 + ((c + oc) * v) as f64 / pw as f64);
                    re += x[r * w + c] * ang.cos();
                    im += x[r * w + c] * ang.sin();
                }
            }
            out.push(re.hypot(im) / norm);
        }
    }
    out
}

#[test]
fn phase_retrieval_matches_naive_dft() {
    for (h, w) in [(4, 4), (3, 5), (6, 4)] {
        let shape = Shape::new(h, w, 1);
        let op = make_phase_retrieval(shape, 2.0).unwrap();
        assert_eq!(op.output_dims(), &[2 * h, 2 * w, 1]);
        let x = normals(shape, 61, 8);
        let got = op.forward(&x).unwrap();
        let want = naive_magnitudes(x.as_slice(), h, w, 2 * h, 2 * w);
        assert!(max_gap(&got, &want) <= 1e-10);
    }
}

#[test]
fn phase_retrieval_cannot_see_point_reflection_or_sign() {
    let shape = Shape::new(8, 8, 3);
    let op = make_phase_retrieval(shape, 2.0).unwrap();
    let x = normals(shape, 71, 9);
    let base = op.forward(&x).unwrap();
    assert!(max_gap(&base, &op.forward(&rot180(&x)).unwrap()) <= 1e-12);
    assert!(max_gap(&base, &op.forward(&x.scale(-1.0)).unwrap()) <= 1e-12);
    // Energy is preserved by the orthonormal transform.
    let e: f64 = base.iter().map(|v| v * v).sum();
    assert!((e - x.norm().powi(2)).abs() <= 1e-10 * e);
}

#[test]
fn operators_act_channel_by_channel() {
    let shape = Shape::new(32, 32, 3);
    let single = Shape::new(32, 32, 1);
    for task in TASKS {
        let spec = desk_operator(task).unwrap();
        let op = spec.build(shape).unwrap();
        let op1 = spec.build(single).unwrap();
        let x = normals(shape, 81, 10).scale(0.3);
        let y = op.forward(&x).unwrap();
        for ch in 0..3 {
            let plane = ImageGrid::from_vec(single, x.channel_plane(ch)).unwrap();
            let y1 = op1.forward(&plane).unwrap();
            let got: Vec<f64> = y.iter().skip(ch).step_by(3).copied().collect();
            assert!(max_gap(&got, &y1) <= 1e-12, "{task} channel {ch}");
        }
    }
}

#[test]
fn measurement_noise_has_the_requested_scale() {
    let shape = Shape::new(64, 64, 1);
    let op = make_random_inpaint(shape, 0.5, 1).unwrap();
    let clean = measure(&op, &normals(shape, 91, 11)).unwrap();
    let stream = RngStream::new(4, 0, 0, Purpose::MeasurementNoise);
    assert_eq!(apply_noise(&clean, 0.0, &stream).unwrap().values, clean.values);
    let noisy = apply_noise(&clean, 0.05, &stream).unwrap();
    let n = clean.values.len() as f64;
    let var = noisy
        .values
        .iter()
        .zip(&clean.values)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / n;
    assert!((var.sqrt() / 0.05 - 1.0).abs() < 0.05, "std {}", var.sqrt());
    assert_eq!(apply_noise(&clean, 0.05, &stream).unwrap().values, noisy.values);
    assert!(apply_noise(&clean, -1.0, &stream).is_err());
}

#[test]
fn measurement_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("y.bin");
    let shape = Shape::new(8, 8, 1);
    let op = make_phase_retrieval(shape, 2.0).unwrap();
    let m = apply_noise(
        &measure(&op, &normals(shape, 5, 12)).unwrap(),
        0.01,
        &RngStream::new(2, 0, 0, Purpose::MeasurementNoise),
    )
    .unwrap();
    write_measurement(&path, &m).unwrap();
    let back = read_measurement(&path).unwrap();
    assert_eq!(back, m);
    std::fs::write(&path, b"{}\n").unwrap();
    assert!(read_measurement(&path).is_err());
}

#[test]
fn shape_mismatches_are_errors() {
    let op = make_gaussian_blur(Shape::new(8, 8, 1), 3, 1.0).unwrap();
    assert!(op.forward(&ImageGrid::zeros(Shape::new(8, 7, 1)).unwrap()).is_err());
    let x = ImageGrid::zeros(Shape::new(8, 8, 1)).unwrap();
    assert!(op.vjp(&x, &[0.0; 3]).is_err());
    assert!(make_downsample(Shape::new(10, 10, 1), 4, DownsampleKernel::Bicubic).is_err());
    assert!(make_box_inpaint(Shape::new(8, 8, 1), 9, 2, 0).is_err());
    assert!(make_phase_retrieval(Shape::new(3, 3, 1), 1.5).is_err());
}
