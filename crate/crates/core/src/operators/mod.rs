//! Forward measurement operators `A`, their vector-Jacobian products, and
//! the noisy measurement process `y = A(x) + n`.
//!
//! Every operator acts on each channel independently. Outputs are flat
//! vectors whose layout is described by [`ForwardOperator::output_dims`];
//! image-shaped outputs keep the interleaved-channel layout of
//! [`ImageGrid`].

mod conv;
mod fft2;
mod io;
mod phase;
mod resample;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{read_measurement, write_measurement};
pub use resample::DownsampleKernel;

use self::conv::CircularConv;
#[cfg(test)]
use self::conv::ConvBackend;
use self::phase::FourierMagnitude;
use self::resample::Downsampler;
use crate::error::{Error, Result};
use crate::grid::{gaussian_grid, ImageGrid, Shape};
use crate::rng::{Purpose, RngStream};

/// Serializable operator description, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity,
    RandomInpaint {
        keep_prob: f64,
        mask_seed: u64,
    },
    BoxInpaint {
        box_h: usize,
        box_w: usize,
        position_seed: u64,
    },
    Downsample {
        factor: usize,
        kernel: DownsampleKernel,
    },
    GaussianBlur {
        ksize: usize,
        blur_sigma: f64,
    },
    MotionBlur {
        ksize: usize,
        intensity: f64,
        kernel_seed: u64,
    },
    PhaseRetrieval {
        oversample: f64,
    },
    Hdr {
        factor: f64,
    },
    NonlinearBlur {
        ksize: usize,
        blur_sigma: f64,
        gain: f64,
    },
}

impl OperatorSpec {
    pub fn build(&self, shape: Shape) -> Result<ForwardOperator> {
        match *self {
            OperatorSpec::Identity => make_identity(shape),
            OperatorSpec::RandomInpaint {
                keep_prob,
                mask_seed,
            } => make_random_inpaint(shape, keep_prob, mask_seed),
            OperatorSpec::BoxInpaint {
                box_h,
                box_w,
                position_seed,
            } => make_box_inpaint(shape, box_h, box_w, position_seed),
            OperatorSpec::Downsample { factor, kernel } => make_downsample(shape, factor, kernel),
            OperatorSpec::GaussianBlur { ksize, blur_sigma } => {
                make_gaussian_blur(shape, ksize, blur_sigma)
            }
            OperatorSpec::MotionBlur {
                ksize,
                intensity,
                kernel_seed,
            } => make_motion_blur(shape, ksize, intensity, kernel_seed),
            OperatorSpec::PhaseRetrieval { oversample } => make_phase_retrieval(shape, oversample),
            OperatorSpec::Hdr { factor } => make_hdr(shape, factor),
            OperatorSpec::NonlinearBlur {
                ksize,
                blur_sigma,
                gain,
            } => make_analytic_nonlinear_blur(shape, ksize, blur_sigma, gain),
        }
    }
}

#[derive(Debug, Clone)]
enum Map {
    /// Keeps the listed pixel indices (all channels) in raster order.
    Select(Vec<usize>),
    Conv(CircularConv),
    Downsample(Downsampler),
    Magnitude(FourierMagnitude),
    Clip { factor: f64 },
    TanhBlur { conv: CircularConv, gain: f64 },
}

#[derive(Debug, Clone)]
pub struct ForwardOperator {
    id: String,
    input: Shape,
    output_dims: Vec<usize>,
    linear: bool,
    map: Map,
}

/// A (possibly noisy) observation `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub values: Vec<f64>,
    pub dims: Vec<usize>,
    pub noise_sigma: f64,
    pub operator_id: String,
    pub seed: Option<u64>,
}

impl Measurement {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl ForwardOperator {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn input_shape(&self) -> Shape {
        self.input
    }

    pub fn output_dims(&self) -> &[usize] {
        &self.output_dims
    }

    pub fn output_len(&self) -> usize {
        self.output_dims.iter().product()
    }

    pub fn is_linear(&self) -> bool {
        self.linear
    }

    fn check_input(&self, x: &ImageGrid) -> Result<()> {
        if x.shape() != self.input {
            return Err(Error::ShapeMismatch {
                expected: self.input.dims(),
                got: x.shape().dims(),
            });
        }
        Ok(())
    }

    fn check_output(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.output_len() {
            return Err(Error::ShapeMismatch {
                expected: self.output_dims.clone(),
                got: vec![v.len()],
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &ImageGrid) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let c = self.input.channels;
        Ok(match &self.map {
            Map::Select(keep) => {
                let data = x.as_slice();
                let mut out = Vec::with_capacity(keep.len() * c);
                for &p in keep {
                    out.extend_from_slice(&data[p * c..(p + 1) * c]);
                }
                out
            }
            Map::Conv(conv) => per_channel(x, |p| conv.apply(p)),
            Map::Downsample(ds) => per_channel(x, |p| ds.apply(p)),
            Map::Magnitude(fm) => per_channel(x, |p| fm.apply(p)),
            Map::Clip { factor } => x
                .as_slice()
                .iter()
                .map(|&v| (factor * v).clamp(-1.0, 1.0))
                .collect(),
            Map::TanhBlur { conv, gain } => per_channel(x, |p| conv.apply(p))
                .into_iter()
                .map(|u| (gain * u).tanh() / gain)
                .collect(),
        })
    }

    /// Cotangent `v` on the output pulled back to the input at `x`.
    ///
    /// For linear operators `x` is ignored and this is the adjoint `A^T v`.
    pub fn vjp(&self, x: &ImageGrid, v: &[f64]) -> Result<ImageGrid> {
        self.check_input(x)?;
        self.check_output(v)?;
        let shape = self.input;
        let c = shape.channels;
        Ok(match &self.map {
            Map::Select(keep) => {
                let mut out = vec![0.0; shape.len()];
                for (j, &p) in keep.iter().enumerate() {
                    out[p * c..(p + 1) * c].copy_from_slice(&v[j * c..(j + 1) * c]);
                }
                ImageGrid::from_parts(shape, out)
            }
            Map::Conv(conv) => pull_channels(shape, v, |p| conv.apply_adjoint(p)),
            Map::Downsample(ds) => pull_channels(shape, v, |p| ds.apply_adjoint(p)),
            Map::Magnitude(fm) => {
                let planes: Vec<Vec<f64>> = (0..c)
                    .map(|ch| fm.vjp(&x.channel_plane(ch), &channel_of(v, c, ch)))
                    .collect();
                ImageGrid::from_planes(shape, &planes)
            }
            Map::Clip { factor } => ImageGrid::from_parts(
                shape,
                x.as_slice()
                    .iter()
                    .zip(v)
                    .map(|(&xv, &vv)| if (factor * xv).abs() < 1.0 { factor * vv } else { 0.0 })
                    .collect(),
            ),
            Map::TanhBlur { conv, gain } => {
                let blurred = per_channel(x, |p| conv.apply(p));
                let inner: Vec<f64> = blurred
                    .iter()
                    .zip(v)
                    .map(|(&u, &vv)| {
                        let t = (gain * u).tanh();
                        (1.0 - t * t) * vv
                    })
                    .collect();
                pull_channels(shape, &inner, |p| conv.apply_adjoint(p))
            }
        })
    }

    /// `A^T y` for linear operators: the measurement placed back on the
    /// image grid (zero-filled for masks).
    pub fn backproject(&self, y: &[f64]) -> Result<ImageGrid> {
        let zero = ImageGrid::zeros(self.input)?;
        self.vjp(&zero, y)
    }
}

fn channel_of(v: &[f64], channels: usize, ch: usize) -> Vec<f64> {
    v.iter().skip(ch).step_by(channels).copied().collect()
}

fn per_channel(x: &ImageGrid, f: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let c = x.shape().channels;
    let planes: Vec<Vec<f64>> = (0..c).map(|ch| f(&x.channel_plane(ch))).collect();
    let len = planes[0].len();
    let mut out = vec![0.0; len * c];
    for (ch, plane) in planes.iter().enumerate() {
        for (p, &val) in plane.iter().enumerate() {
            out[p * c + ch] = val;
        }
    }
    out
}

fn pull_channels(shape: Shape, v: &[f64], f: impl Fn(&[f64]) -> Vec<f64>) -> ImageGrid {
    let c = shape.channels;
    let planes: Vec<Vec<f64>> = (0..c).map(|ch| f(&channel_of(v, c, ch))).collect();
    ImageGrid::from_planes(shape, &planes)
}

fn image_dims(h: usize, w: usize, c: usize) -> Vec<usize> {
    vec![h, w, c]
}

pub fn make_identity(shape: Shape) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    Ok(ForwardOperator {
        id: "identity".into(),
        input: shape,
        output_dims: image_dims(shape.height, shape.width, shape.channels),
        linear: true,
        map: Map::Select((0..shape.pixels()).collect()),
    })
}

fn selection(shape: Shape, id: String, keep: Vec<usize>) -> Result<ForwardOperator> {
    if keep.is_empty() {
        return Err(Error::param("mask", "no pixel is observed"));
    }
    let output_dims = if keep.len() == shape.pixels() {
        image_dims(shape.height, shape.width, shape.channels)
    } else {
        vec![keep.len(), shape.channels]
    };
    Ok(ForwardOperator {
        id,
        input: shape,
        output_dims,
        linear: true,
        map: Map::Select(keep),
    })
}

/// Each pixel is observed independently with probability `keep_prob`.
pub fn make_random_inpaint(shape: Shape, keep_prob: f64, mask_seed: u64) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::param("keep_prob", "must lie in (0, 1]"));
    }
    let mut rng = RngStream::new(mask_seed, 0, 0, Purpose::OperatorMask).rng();
    let keep: Vec<usize> = (0..shape.pixels())
        .filter(|_| rng.gen::<f64>() < keep_prob)
        .collect();
    selection(
        shape,
        format!("random_inpaint(keep={keep_prob},seed={mask_seed})"),
        keep,
    )
}

/// Hides one `box_h x box_w` rectangle placed uniformly at random.
pub fn make_box_inpaint(
    shape: Shape,
    box_h: usize,
    box_w: usize,
    position_seed: u64,
) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    if box_h > shape.height || box_w > shape.width {
        return Err(Error::param("box", "box does not fit inside the image"));
    }
    let mut rng = RngStream::new(position_seed, 0, 0, Purpose::OperatorMask).rng();
    let top = rng.gen_range(0..=shape.height - box_h);
    let left = rng.gen_range(0..=shape.width - box_w);
    let keep: Vec<usize> = (0..shape.pixels())
        .filter(|&p| {
            let (r, c) = (p / shape.width, p % shape.width);
            !(r >= top && r < top + box_h && c >= left && c < left + box_w)
        })
        .collect();
    selection(
        shape,
        format!("box_inpaint({box_h}x{box_w}@{top},{left})"),
        keep,
    )
}

pub fn make_downsample(
    shape: Shape,
    factor: usize,
    kernel: DownsampleKernel,
) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    if factor == 0 || shape.height % factor != 0 || shape.width % factor != 0 {
        return Err(Error::param(
            "factor",
            format!(
                "{}x{} is not divisible by {factor}",
                shape.height, shape.width
            ),
        ));
    }
    let ds = Downsampler::new(shape.height, shape.width, factor, kernel);
    let (oh, ow) = ds.out_dims();
    Ok(ForwardOperator {
        id: format!("downsample(x{factor},{kernel:?})").to_lowercase(),
        input: shape,
        output_dims: image_dims(oh, ow, shape.channels),
        linear: true,
        map: Map::Downsample(ds),
    })
}

fn blur_operator(shape: Shape, id: String, ksize: usize, kernel: Vec<f64>) -> ForwardOperator {
    ForwardOperator {
        id,
        input: shape,
        output_dims: image_dims(shape.height, shape.width, shape.channels),
        linear: true,
        map: Map::Conv(CircularConv::new(shape.height, shape.width, ksize, kernel)),
    }
}

pub fn make_gaussian_blur(shape: Shape, ksize: usize, blur_sigma: f64) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    let kernel = conv::gaussian_kernel(ksize, blur_sigma)?;
    Ok(blur_operator(
        shape,
        format!("gaussian_blur({ksize},{blur_sigma})"),
        ksize,
        kernel,
    ))
}

pub fn make_motion_blur(
    shape: Shape,
    ksize: usize,
    intensity: f64,
    kernel_seed: u64,
) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    let kernel = conv::motion_kernel(ksize, intensity, kernel_seed)?;
    Ok(blur_operator(
        shape,
        format!("motion_blur({ksize},{intensity},seed={kernel_seed})"),
        ksize,
        kernel,
    ))
}

/// `|F pad(x)|` on a frame `oversample` times larger in each dimension.
pub fn make_phase_retrieval(shape: Shape, oversample: f64) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    if !(oversample >= 1.0 && oversample.is_finite()) {
        return Err(Error::param("oversample", "must be at least 1"));
    }
    let padded = |n: usize| -> Result<usize> {
        let p = oversample * n as f64;
        if p.fract() != 0.0 {
            return Err(Error::param(
                "oversample",
                format!("padded size {p} is not an integer"),
            ));
        }
        Ok(p as usize)
    };
    let (ph, pw) = (padded(shape.height)?, padded(shape.width)?);
    let fm = FourierMagnitude::new(shape.height, shape.width, ph, pw);
    let (ph, pw) = fm.padded_dims();
    Ok(ForwardOperator {
        id: format!("phase_retrieval({oversample})"),
        input: shape,
        output_dims: image_dims(ph, pw, shape.channels),
        linear: false,
        map: Map::Magnitude(fm),
    })
}

/// `clip(factor * x, -1, 1)`.
pub fn make_hdr(shape: Shape, factor: f64) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::param("factor", "must be positive"));
    }
    Ok(ForwardOperator {
        id: format!("hdr({factor})"),
        input: shape,
        output_dims: image_dims(shape.height, shape.width, shape.channels),
        linear: false,
        map: Map::Clip { factor },
    })
}

/// Analytic stand-in for a learned nonlinear blur: `tanh(gain * blur(x)) / gain`.
pub fn make_analytic_nonlinear_blur(
    shape: Shape,
    ksize: usize,
    blur_sigma: f64,
    gain: f64,
) -> Result<ForwardOperator> {
    shape.check_nonempty()?;
    if !(gain > 0.0 && gain.is_finite()) {
        return Err(Error::param("gain", "must be positive"));
    }
    let kernel = conv::gaussian_kernel(ksize, blur_sigma)?;
    Ok(ForwardOperator {
        id: format!("nonlinear_blur({ksize},{blur_sigma},gain={gain})"),
        input: shape,
        output_dims: image_dims(shape.height, shape.width, shape.channels),
        linear: false,
        map: Map::TanhBlur {
            conv: CircularConv::new(shape.height, shape.width, ksize, kernel),
            gain,
        },
    })
}

/// Noise-free measurement `A(x)`.
pub fn measure(op: &ForwardOperator, x: &ImageGrid) -> Result<Measurement> {
    Ok(Measurement {
        values: op.forward(x)?,
        dims: op.output_dims().to_vec(),
        noise_sigma: 0.0,
        operator_id: op.id().to_string(),
        seed: None,
    })
}

/// `y = clean + noise_sigma * eps`.
pub fn apply_noise(clean: &Measurement, noise_sigma: f64, stream: &RngStream) -> Result<Measurement> {
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::param("noise_sigma", "must be non-negative"));
    }
    let values = if noise_sigma == 0.0 {
        clean.values.clone()
    } else {
        clean
            .values
            .iter()
            .zip(stream.normals(clean.values.len()))
            .map(|(&v, e)| v + noise_sigma * e)
            .collect()
    };
    Ok(Measurement {
        values,
        noise_sigma,
        seed: Some(stream.seed),
        ..clean.clone()
    })
}

/// Residual `A(x) - y`.
pub fn residual(op: &ForwardOperator, x: &ImageGrid, y: &Measurement) -> Result<Vec<f64>> {
    op.check_output(&y.values)?;
    let ax = op.forward(x)?;
    let r: Vec<f64> = ax.iter().zip(&y.values).map(|(a, b)| a - b).collect();
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement residual"));
    }
    Ok(r)
}

/// Residual `A(x) - y` together with its pull-back `J(x)^T (A(x) - y)`.
///
/// Phase retrieval shares one forward transform between the two.
pub fn residual_and_pullback(
    op: &ForwardOperator,
    x: &ImageGrid,
    y: &Measurement,
) -> Result<(Vec<f64>, ImageGrid)> {
    let Map::Magnitude(fm) = &op.map else {
        let r = residual(op, x, y)?;
        let g = op.vjp(x, &r)?;
        return Ok((r, g));
    };
    op.check_input(x)?;
    op.check_output(&y.values)?;
    let c = op.input.channels;
    let mut r = vec![0.0; y.values.len()];
    let mut planes = Vec::with_capacity(c);
    for ch in 0..c {
        let (rc, gc) = fm.residual_vjp(&x.channel_plane(ch), &channel_of(&y.values, c, ch));
        for (p, v) in rc.into_iter().enumerate() {
            r[p * c + ch] = v;
        }
        planes.push(gc);
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("measurement residual"));
    }
    Ok((r, ImageGrid::from_planes(op.input, &planes)))
}

pub fn residual_norm(op: &ForwardOperator, x: &ImageGrid, y: &Measurement) -> Result<f64> {
    Ok(crate::grid::sum_sq(&residual(op, x, y)?).sqrt())
}

/// Gradient of `|y - A(x)|^2 / (2 tau^2)` with respect to `x`.
pub fn data_fit_grad(
    op: &ForwardOperator,
    x: &ImageGrid,
    y: &Measurement,
    tau: f64,
) -> Result<ImageGrid> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::param("tau", "must be positive"));
    }
    let (_, g) = residual_and_pullback(op, x, y)?;
    Ok(g.scale(1.0 / (tau * tau)))
}

/// Largest eigenvalue of `A^T A` by power iteration (linear operators only).
pub fn operator_norm_sq(op: &ForwardOperator, iters: usize, seed: u64) -> Result<f64> {
    if !op.is_linear() {
        return Err(Error::param("operator", "power iteration needs a linear operator"));
    }
    let stream = RngStream::new(seed, 0, 0, Purpose::Custom(0xA11));
    let mut x = gaussian_grid(op.input_shape(), &stream)?;
    let zero = ImageGrid::zeros(op.input_shape())?;
    let mut lambda = 0.0;
    for _ in 0..iters.max(1) {
        let n = x.norm();
        if n == 0.0 {
            return Ok(0.0);
        }
        x = x.scale(1.0 / n);
        let ata = op.vjp(&zero, &op.forward(&x)?)?;
        lambda = crate::grid::dot(&x, &ata)?;
        x = ata;
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dot_slices;

    fn rand_grid(shape: Shape, seed: u64) -> ImageGrid {
        gaussian_grid(shape, &RngStream::new(seed, 0, 0, Purpose::Custom(1))).unwrap()
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        RngStream::new(seed, 0, 0, Purpose::Custom(2)).normals(n)
    }

    fn adjoint_gap(op: &ForwardOperator, seed: u64) -> f64 {
        let x = rand_grid(op.input_shape(), seed);
        let v = rand_vec(op.output_len(), seed);
        let ax = op.forward(&x).unwrap();
        let atv = op.backproject(&v).unwrap();
        let lhs = dot_slices(&ax, &v);
        let rhs = crate::grid::dot(&x, &atv).unwrap();
        (lhs - rhs).abs() / (crate::grid::sum_sq(&ax).sqrt() * crate::grid::sum_sq(&v).sqrt() + 1.0)
    }

    #[test]
    fn keep_all_is_identity() {
        let shape = Shape::new(5, 4, 2);
        let op = make_random_inpaint(shape, 1.0, 3).unwrap();
        let x = rand_grid(shape, 1);
        assert_eq!(op.forward(&x).unwrap(), x.as_slice());
        assert_eq!(op.output_dims(), &[5, 4, 2]);
    }

    #[test]
    fn random_mask_is_seeded() {
        let shape = Shape::new(16, 16, 1);
        let a = make_random_inpaint(shape, 0.3, 7).unwrap();
        let b = make_random_inpaint(shape, 0.3, 7).unwrap();
        let x = rand_grid(shape, 2);
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        let kept = a.output_len() as f64 / 256.0;
        assert!((kept - 0.3).abs() < 0.1);
        assert!(make_random_inpaint(shape, 0.0, 1).is_err());
        assert!(make_random_inpaint(shape, 1.5, 1).is_err());
    }

    #[test]
    fn box_inpaint_edges() {
        let shape = Shape::new(8, 8, 1);
        assert!(make_box_inpaint(shape, 8, 8, 1).is_err());
        assert!(make_box_inpaint(shape, 9, 2, 1).is_err());
        let id = make_box_inpaint(shape, 0, 0, 1).unwrap();
        let x = rand_grid(shape, 3);
        assert_eq!(id.forward(&x).unwrap(), x.as_slice());
        let op = make_box_inpaint(shape, 3, 4, 1).unwrap();
        assert_eq!(op.output_len(), 64 - 12);
        assert!(adjoint_gap(&op, 4) < 1e-12);
    }

    #[test]
    fn downsample_constant_and_identity() {
        let shape = Shape::new(8, 12, 2);
        for kernel in [DownsampleKernel::Bicubic, DownsampleKernel::Average] {
            let op = make_downsample(shape, 4, kernel).unwrap();
            let c = ImageGrid::filled(shape, 0.37).unwrap();
            for v in op.forward(&c).unwrap() {
                assert!((v - 0.37).abs() < 1e-14);
            }
            let id = make_downsample(shape, 1, kernel).unwrap();
            let x = rand_grid(shape, 5);
            assert_eq!(id.forward(&x).unwrap(), x.as_slice());
            assert!(adjoint_gap(&op, 6) < 1e-12);
        }
        assert!(make_downsample(Shape::new(10, 8, 1), 4, DownsampleKernel::Bicubic).is_err());
    }

    #[test]
    fn gaussian_blur_limits() {
        let shape = Shape::new(8, 8, 1);
        let op = make_gaussian_blur(shape, 5, 1e-6).unwrap();
        let x = rand_grid(shape, 7);
        let y = op.forward(&x).unwrap();
        for (a, b) in y.iter().zip(x.as_slice()) {
            assert!((a - b).abs() < 1e-10);
        }
        let blur = make_gaussian_blur(shape, 5, 2.0).unwrap();
        let c = ImageGrid::filled(shape, -0.4).unwrap();
        for v in blur.forward(&c).unwrap() {
            assert!((v + 0.4).abs() < 1e-14);
        }
        assert!(make_gaussian_blur(shape, 4, 1.0).is_err());
    }

    #[test]
    fn large_kernel_uses_fourier_path() {
        let shape = Shape::new(16, 16, 1);
        let op = make_gaussian_blur(shape, 61, 3.0).unwrap();
        match &op.map {
            Map::Conv(c) => assert_eq!(c.backend(), ConvBackend::Fourier),
            _ => unreachable!(),
        }
        assert!(adjoint_gap(&op, 8) < 1e-12);
        let c = ImageGrid::filled(shape, 0.2).unwrap();
        for v in op.forward(&c).unwrap() {
            assert!((v - 0.2).abs() < 1e-12);
        }
    }

    #[test]
    fn motion_blur_adjoint() {
        let op = make_motion_blur(Shape::new(12, 10, 3), 9, 0.5, 11).unwrap();
        assert!(adjoint_gap(&op, 9) < 1e-12);
    }

    #[test]
    fn phase_retrieval_basics() {
        let shape = Shape::new(6, 6, 1);
        let op = make_phase_retrieval(shape, 2.0).unwrap();
        assert_eq!(op.output_dims(), &[12, 12, 1]);
        let zero = ImageGrid::zeros(shape).unwrap();
        assert!(op.forward(&zero).unwrap().iter().all(|&v| v == 0.0));
        assert!(make_phase_retrieval(Shape::new(5, 5, 1), 1.5).is_err());
        assert!(make_phase_retrieval(shape, 0.5).is_err());
        // Orthonormal transform preserves energy.
        let x = rand_grid(shape, 3);
        let m = op.forward(&x).unwrap();
        assert!((crate::grid::sum_sq(&m) - x.norm().powi(2)).abs() < 1e-10);
    }

    #[test]
    fn hdr_pointwise() {
        let shape = Shape::new(1, 2, 1);
        let op = make_hdr(shape, 2.0).unwrap();
        let x = ImageGrid::from_vec(shape, vec![0.3, 0.8]).unwrap();
        assert_eq!(op.forward(&x).unwrap(), vec![0.6, 1.0]);
        let g = op.vjp(&x, &[1.0, 1.0]).unwrap();
        assert_eq!(g.as_slice(), &[2.0, 0.0]);
        assert!(!op.is_linear());
    }

    #[test]
    fn nonlinear_blur_zero_and_small_gain() {
        let shape = Shape::new(8, 8, 1);
        let op = make_analytic_nonlinear_blur(shape, 5, 1.0, 2.0).unwrap();
        let zero = ImageGrid::zeros(shape).unwrap();
        assert!(op.forward(&zero).unwrap().iter().all(|&v| v == 0.0));
        let weak = make_analytic_nonlinear_blur(shape, 5, 1.0, 1e-6).unwrap();
        let plain = make_gaussian_blur(shape, 5, 1.0).unwrap();
        let x = rand_grid(shape, 4);
        for (a, b) in weak.forward(&x).unwrap().iter().zip(plain.forward(&x).unwrap()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn noise_process() {
        let shape = Shape::new(4, 4, 1);
        let op = make_identity(shape).unwrap();
        let clean = measure(&op, &rand_grid(shape, 1)).unwrap();
        let s = RngStream::new(5, 0, 0, Purpose::MeasurementNoise);
        assert_eq!(apply_noise(&clean, 0.0, &s).unwrap().values, clean.values);
        let a = apply_noise(&clean, 0.05, &s).unwrap();
        assert_eq!(a, apply_noise(&clean, 0.05, &s).unwrap());
        assert_eq!(a.noise_sigma, 0.05);
        assert!(apply_noise(&clean, -1.0, &s).is_err());
    }

    #[test]
    fn data_fit_identity_cases() {
        let shape = Shape::new(3, 3, 1);
        let op = make_identity(shape).unwrap();
        let x = rand_grid(shape, 1);
        let y = measure(&op, &x).unwrap();
        assert_eq!(data_fit_grad(&op, &x, &y, 0.01).unwrap().max_abs(), 0.0);
        let other = rand_grid(shape, 2);
        let y2 = measure(&op, &other).unwrap();
        let g = data_fit_grad(&op, &x, &y2, 1.0).unwrap();
        assert_eq!(g, x.sub(&other).unwrap());
        assert!(data_fit_grad(&op, &x, &y2, 0.0).is_err());
    }

    #[test]
    fn power_iteration_on_mask() {
        let op = make_random_inpaint(Shape::new(8, 8, 1), 0.5, 2).unwrap();
        let l = operator_norm_sq(&op, 20, 1).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        let ds = make_downsample(Shape::new(8, 8, 1), 2, DownsampleKernel::Average).unwrap();
        assert!((operator_norm_sq(&ds, 50, 1).unwrap() - 0.25).abs() < 1e-8);
    }
}
