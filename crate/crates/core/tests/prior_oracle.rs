mod common;

use common::{instance, max_abs_diff, normals, ref_denoise, ref_log_density, ref_weights};
use measopt::grid::{axpy, ImageGrid, Shape};
use measopt::prior::PriorDataset;
use proptest::prelude::*;

#[test]
fn matches_extended_precision_reference() {
    for seed in 0..60 {
        let inst = instance(seed, 1e-3, 1e6);
        let (p, x, s) = (&inst.prior, &inst.x, inst.sigma);
        let w = ref_weights(p, x, s);
        assert!(max_abs_diff(p.posterior_weights(x, s).unwrap().as_slice(), &w) <= 1e-10);
        assert!(max_abs_diff(p.denoise(x, s).unwrap().as_slice(), &ref_denoise(p, x, s)) <= 1e-10);
        let ld = p.mixture_log_density(x, s).unwrap();
        let oracle = ref_log_density(p, x, s);
        assert!((ld - oracle).abs() <= 1e-10, "seed {seed}: {ld} vs {oracle}, sigma {s}, n {}, d {}", p.len(), x.len());
    }
}

#[test]
fn score_is_log_density_slope() {
    for seed in 100..140 {
        let inst = instance(seed, 1e-2, 1e3);
        let (p, x, s) = (&inst.prior, &inst.x, inst.sigma);
        let v = normals(x.shape(), seed, 9);
        let h = 1e-4 * s;
        let fd = (p.mixture_log_density(&axpy(h, &v, x).unwrap(), s).unwrap()
            - p.mixture_log_density(&axpy(-h, &v, x).unwrap(), s).unwrap())
            / (2.0 * h);
        let score = p.score(x, s).unwrap();
        let err = (fd - common::dot(&score, &v)).abs() / (score.norm() * v.norm());
        assert!(err <= 1e-5, "seed {seed}: {err:e}");
    }
}

#[test]
fn vjp_matches_directional_differences() {
    for seed in 200..240 {
        let inst = instance(seed, 0.05, 100.0);
        let (p, x, s) = (&inst.prior, &inst.x, inst.sigma);
        let u = normals(x.shape(), seed, 10);
        let v = normals(x.shape(), seed, 11);
        let h = 1e-5 * s;
        let jv = p
            .denoise(&axpy(h, &v, x).unwrap(), s)
            .unwrap()
            .sub(&p.denoise(&axpy(-h, &v, x).unwrap(), s).unwrap())
            .unwrap()
            .scale(0.5 / h);
        let vjp = p.denoiser_vjp(x, s, &u).unwrap();
        let scale = (vjp.norm() * v.norm()).max(1e-6 * u.norm() * v.norm());
        let err = (common::dot(&u, &jv) - common::dot(&vjp, &v)).abs() / scale;
        assert!(err <= 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn single_item_collapses_for_every_sigma() {
    let z = normals(Shape::new(3, 3, 1), 1, 1);
    let p = PriorDataset::new(vec![z.clone()]).unwrap();
    for s in [1e-3, 1.0, 1e6] {
        let x = normals(z.shape(), 2, 1).scale(s);
        assert_eq!(p.denoise(&x, s).unwrap(), z);
        assert_eq!(p.posterior_weights(&x, s).unwrap().as_slice(), &[1.0]);
    }
}

fn small_set() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, f64)> {
    (1usize..6, 1usize..10).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, d), n),
            prop::collection::vec(-3.0f64..3.0, d),
            -3.0f64..3.0,
        )
    })
}

fn build(items: &[Vec<f64>]) -> PriorDataset {
    let d = items[0].len();
    PriorDataset::new(
        items
            .iter()
            .map(|v| ImageGrid::from_vec(Shape::new(1, d, 1), v.clone()).unwrap())
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn weights_form_a_distribution((items, x, log_s) in small_set()) {
        let p = build(&items);
        let x = ImageGrid::from_vec(Shape::new(1, x.len(), 1), x).unwrap();
        let w = p.posterior_weights(&x, 10f64.powf(log_s)).unwrap();
        prop_assert!(w.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn denoise_stays_in_hull((items, x, log_s) in small_set()) {
        let p = build(&items);
        let x = ImageGrid::from_vec(Shape::new(1, x.len(), 1), x).unwrap();
        let out = p.denoise(&x, 10f64.powf(log_s)).unwrap();
        prop_assert!(p.within_hull_bounds(&out, 1e-12));
    }

    #[test]
    fn translation_equivariance((items, x, log_s) in small_set(), shift in -2.0f64..2.0) {
        let s = 10f64.powf(log_s);
        let p = build(&items);
        let moved: Vec<Vec<f64>> = items.iter().map(|v| v.iter().map(|a| a + shift).collect()).collect();
        let q = build(&moved);
        let xg = ImageGrid::from_vec(Shape::new(1, x.len(), 1), x.clone()).unwrap();
        let xs = xg.map(|a| a + shift);
        let a = p.denoise(&xg, s).unwrap().map(|v| v + shift);
        let b = q.denoise(&xs, s).unwrap();
        prop_assert!(a.sub(&b).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn permutation_invariance((items, x, log_s) in small_set()) {
        let s = 10f64.powf(log_s);
        let p = build(&items);
        let mut rev = items.clone();
        rev.reverse();
        let q = build(&rev);
        let xg = ImageGrid::from_vec(Shape::new(1, x.len(), 1), x).unwrap();
        let a = p.denoise(&xg, s).unwrap();
        let b = q.denoise(&xg, s).unwrap();
        prop_assert!(a.sub(&b).unwrap().max_abs() < 1e-12);
    }
}
