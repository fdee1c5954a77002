//! Quick invariant suite behind the `validate` command.

use crate::grid::{gaussian_grid, ImageGrid, Shape};
use crate::harness::config::{desk_operator, ExperimentConfig, Family, TASKS};
use crate::harness::data::{synth_dataset, SynthKind};
use crate::metrics::{psnr, rot180, PSNR_CAP_DB};
use crate::operators::{data_fit_grad, measure, residual, ForwardOperator, Measurement};
use crate::prior::PriorDataset;
use crate::rng::{Purpose, RngStream};
use crate::samplers::{dps_mo, SamplerRun};
use crate::schedule::{sgld_lr, EdmSchedule, LrDecay};

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check {
        name: name.into(),
        passed,
        detail: detail.into(),
    }
}

fn noise(shape: Shape, seed: u64, scale: f64) -> ImageGrid {
    gaussian_grid(shape, &RngStream::new(seed, 0, 0, Purpose::Custom(0x7a1)))
        .expect("non-empty shape")
        .scale(scale)
}

fn schedule_checks(out: &mut Vec<Check>) {
    let s = EdmSchedule::default();
    let grid = s.time_grid().expect("default schedule");
    let n = s.n_steps;
    let exact = grid[0] == s.sigma_max && grid[n - 1] == s.sigma_min && grid[n] == 0.0;
    let decreasing = grid.windows(2).all(|w| w[0] > w[1]);
    out.push(check(
        "schedule endpoints",
        exact && decreasing,
        format!("t_N={} t_1={} strictly decreasing={decreasing}", grid[0], grid[n - 1]),
    ));
    let d = LrDecay::default();
    let top = sgld_lr(&d, 10, 10).expect("valid");
    let bottom = sgld_lr(&d, 0, 10).expect("valid");
    let mid = sgld_lr(&d, 5, 10).expect("valid");
    out.push(check(
        "langevin rate decay",
        top == d.base_eta
            && bottom == d.base_eta * d.r
            && (mid - 0.3025 * d.base_eta).abs() <= 1e-15 * d.base_eta.max(1.0),
        format!("eta_N={top:e} eta_0={bottom:e} eta_mid={mid:e}"),
    ));
}

fn prior_checks(out: &mut Vec<Check>) {
    let shape = Shape::new(4, 4, 1);
    let items: Vec<ImageGrid> = (0..6).map(|k| noise(shape, 10 + k, 0.5)).collect();
    let ds = PriorDataset::new(items).expect("valid items");
    let x = noise(shape, 99, 1.0);
    let mut worst: f64 = 0.0;
    for sigma in [1e-3, 0.3, 5.0, 1e6] {
        let w = ds.posterior_weights(&x, sigma).expect("valid");
        worst = worst.max((w.as_slice().iter().sum::<f64>() - 1.0).abs());
    }
    out.push(check("posterior weights sum to one", worst < 1e-12, format!("max deviation {worst:e}")));

    let far = ds.denoise(&x, 1e6).expect("valid");
    let gap = far.sub(&ds.mean()).expect("same shape").max_abs();
    out.push(check("large-noise denoise is the mean", gap < 1e-6, format!("max gap {gap:e}")));

    let v = noise(shape, 7, 1.0);
    let h = 1e-6;
    let sigma = 0.7;
    let fd = ds
        .mixture_log_density(&crate::grid::axpy(h, &v, &x).expect("shape"), sigma)
        .expect("valid")
        - ds.mixture_log_density(&crate::grid::axpy(-h, &v, &x).expect("shape"), sigma)
            .expect("valid");
    let analytic = crate::grid::dot(&ds.score(&x, sigma).expect("valid"), &v).expect("shape");
    let rel = (fd / (2.0 * h) - analytic).abs() / analytic.abs().max(1e-12);
    out.push(check("score matches log-density slope", rel < 1e-5, format!("rel err {rel:e}")));
}

fn operator_checks(out: &mut Vec<Check>) {
    let shape = Shape::new(32, 32, 1);
    for task in TASKS {
        let op = match desk_operator(task).and_then(|spec| spec.build(shape)) {
            Ok(op) => op,
            Err(e) => {
                out.push(check(format!("{task} operator"), false, e.to_string()));
                continue;
            }
        };
        if op.is_linear() {
            out.push(adjoint_check(task, &op));
        }
        out.push(gradient_check(task, &op));
    }
}

fn adjoint_check(task: &str, op: &ForwardOperator) -> Check {
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let x = noise(op.input_shape(), 200 + k, 1.0);
        let v: Vec<f64> = RngStream::new(300 + k, 0, 0, Purpose::Custom(1)).normals(op.output_len());
        let ax = op.forward(&x).expect("shape");
        let atv = op.vjp(&x, &v).expect("shape");
        let lhs = crate::grid::dot_slices(&ax, &v);
        let rhs = crate::grid::dot(&x, &atv).expect("shape");
        let scale = crate::grid::sum_sq(&ax).sqrt() * crate::grid::sum_sq(&v).sqrt() + 1.0;
        worst = worst.max((lhs - rhs).abs() / scale);
    }
    check(format!("{task} adjoint identity"), worst <= 1e-10, format!("max rel gap {worst:e}"))
}

fn gradient_check(task: &str, op: &ForwardOperator) -> Check {
    // Small-amplitude inputs keep HDR away from its clip boundary.
    let x = noise(op.input_shape(), 400, 0.1);
    let y = Measurement {
        values: op.forward(&noise(op.input_shape(), 401, 0.1)).expect("shape"),
        dims: op.output_dims().to_vec(),
        noise_sigma: 0.0,
        operator_id: op.id().to_string(),
        seed: None,
    };
    let tau = 0.5;
    let v = noise(op.input_shape(), 402, 1.0);
    let f = |z: &ImageGrid| {
        crate::grid::sum_sq(&residual(op, z, &y).expect("shape")) / (2.0 * tau * tau)
    };
    let h = 1e-5;
    let fd = (f(&crate::grid::axpy(h, &v, &x).expect("shape")) - f(&crate::grid::axpy(-h, &v, &x).expect("shape")))
        / (2.0 * h);
    let analytic = crate::grid::dot(&data_fit_grad(op, &x, &y, tau).expect("shape"), &v).expect("shape");
    let rel = (fd - analytic).abs() / analytic.abs().max(1e-8);
    check(format!("{task} data-fit gradient"), rel <= 1e-5, format!("rel err {rel:e}"))
}

fn sampler_checks(out: &mut Vec<Check>) {
    let shape = Shape::new(32, 32, 1);
    let z = match synth_dataset(SynthKind::Blobs, 1, shape, 0) {
        Ok(ds) => ds,
        Err(e) => {
            out.push(check("single-item prior", false, e.to_string()));
            return;
        }
    };
    for task in TASKS {
        let result = (|| -> crate::Result<bool> {
            let mut cfg = ExperimentConfig::preset(task, Family::Ffhq)?;
            cfg.schedule.nfe = 6;
            cfg.mo.sgld_steps = 5;
            let op = cfg.operator.build(shape)?;
            let y = measure(&op, &noise(shape, 500, 0.3))?;
            let out = dps_mo(&z, &op, &y, &cfg.sampler_run(3, 0)?)?;
            Ok(out.image == *z.item(0))
        })();
        out.push(match result {
            Ok(ok) => check(format!("{task} single-item collapse"), ok, "output equals the only prior item"),
            Err(e) => check(format!("{task} single-item collapse"), false, e.to_string()),
        });
    }

    let ds = synth_dataset(SynthKind::Blobs, 8, shape, 1).expect("generator");
    let run = SamplerRun {
        schedule: EdmSchedule::new(80.0, 0.05, 8).expect("valid"),
        mo: crate::mo::MoConfig {
            n_sgld: 10,
            ..Default::default()
        },
        seed: 5,
        ..Default::default()
    };
    let op = desk_operator("random-inpaint")
        .and_then(|s| s.build(shape))
        .expect("preset operator");
    let y = measure(&op, ds.item(3)).expect("shape");
    let a = dps_mo(&ds, &op, &y, &run).expect("sampler");
    let b = dps_mo(&ds, &op, &y, &run).expect("sampler");
    out.push(check("sampler determinism", a.image == b.image, "identical run twice"));
    out.push(check(
        "output inside prior hull",
        ds.within_hull_bounds(&a.image, 1e-12),
        "per-coordinate bounds of the prior",
    ));
    out.push(check("reported cost", a.nfe == 8, format!("nfe={}", a.nfe)));
}

fn metric_checks(out: &mut Vec<Check>) {
    let x = noise(Shape::new(12, 12, 1), 600, 0.4);
    out.push(check(
        "psnr cap",
        psnr(&x, &x, 2.0).expect("shape") == PSNR_CAP_DB,
        "identical images",
    ));
    out.push(check("rot180 involution", rot180(&rot180(&x)) == x, "twice is identity"));
}

pub fn run_checks() -> Vec<Check> {
    let mut out = Vec::new();
    schedule_checks(&mut out);
    prior_checks(&mut out);
    operator_checks(&mut out);
    sampler_checks(&mut out);
    metric_checks(&mut out);
    out
}

#[cfg(test)]
mod tests {
    #[test]
    fn built_in_checks_pass() {
        for c in super::run_checks() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
