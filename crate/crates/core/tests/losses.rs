mod common;

use common::random_grid;
use depthkit::losses::{
    align_lstsq, batch_loss, fd_check, grad_matching_loss, loss_gradient, ssi_loss, total_loss,
    Alignment, LossConfig, Rho,
};
use depthkit::{Error, Grid, Mask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Normal equations solved in the uncentred form, as an independent route.
fn oracle_alignment(d: &Grid<f64>, gt: &Grid<f64>, mask: &Mask) -> (f64, f64) {
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..d.data().len() {
        if mask.data()[i] {
            let (x, y) = (d.data()[i], gt.data()[i]);
            n += 1.0;
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
        }
    }
    let det = n * sxx - sx * sx;
    ((n * sxy - sx * sy) / det, (sxx * sy - sx * sxy) / det)
}

/// Per-scale loop: pool the residual by explicit block means, keep cells
/// whose pixels are all valid, sum absolute forward differences.
fn oracle_reg(d: &Grid<f64>, gt: &Grid<f64>, mask: &Mask, k: usize) -> f64 {
    let (s, t) = oracle_alignment(d, gt, mask);
    let (h, w) = (d.height(), d.width());
    let m = mask.count() as f64;
    let mut total = 0.0;
    for level in 0..k {
        let f = 1 << level;
        let (ph, pw) = (h.div_ceil(f), w.div_ceil(f));
        let mut cell = vec![None; ph * pw];
        for cy in 0..ph {
            for cx in 0..pw {
                let (mut sum, mut n, mut ok) = (0.0, 0.0, true);
                for y in cy * f..((cy + 1) * f).min(h) {
                    for x in cx * f..((cx + 1) * f).min(w) {
                        ok &= mask.get(y, x);
                        sum += s * d.get(y, x, 0) + t - gt.get(y, x, 0);
                        n += 1.0;
                    }
                }
                if ok {
                    cell[cy * pw + cx] = Some(sum / n);
                }
            }
        }
        for cy in 0..ph {
            for cx in 0..pw {
                let Some(a) = cell[cy * pw + cx] else {
                    continue;
                };
                if cx + 1 < pw {
                    if let Some(b) = cell[cy * pw + cx + 1] {
                        total += (b - a).abs();
                    }
                }
                if cy + 1 < ph {
                    if let Some(b) = cell[(cy + 1) * pw + cx] {
                        total += (b - a).abs();
                    }
                }
            }
        }
    }
    total / m
}

fn sse(d: &Grid<f64>, gt: &Grid<f64>, s: f64, t: f64) -> f64 {
    d.data()
        .iter()
        .zip(gt.data())
        .map(|(x, y)| (s * x + t - y).powi(2))
        .sum()
}

#[test]
fn reg_matches_per_scale_oracle_with_holes() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for trial in 0..10 {
        let (h, w) = (rng.gen_range(8..40), rng.gen_range(8..40));
        let d = random_grid(h, w, 0.0, 3.0, &mut rng);
        let gt = random_grid(h, w, -1.0, 1.0, &mut rng);
        let mask = if trial % 2 == 0 {
            Mask::full(h, w)
        } else {
            Mask::from_fn(h, w, |_, _| rng.gen::<f64>() > 0.1)
        };
        let k = rng.gen_range(1..=4);
        let lib = grad_matching_loss(&d, &gt, &mask, k).unwrap();
        let oracle = oracle_reg(&d, &gt, &mask, k);
        assert!(
            (lib - oracle).abs() <= 1e-6 * oracle.max(1.0),
            "trial {trial}: {lib} vs {oracle}"
        );
    }
}

#[test]
fn alignment_beats_random_probes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = random_grid(16, 16, 0.0, 1.0, &mut rng);
    let gt = random_grid(16, 16, 0.0, 4.0, &mut rng);
    let al = align_lstsq(&d, &gt, &Mask::full(16, 16)).unwrap();
    let (os, ot) = oracle_alignment(&d, &gt, &Mask::full(16, 16));
    assert!((al.scale - os).abs() < 1e-10 && (al.shift - ot).abs() < 1e-10);
    let best = sse(&d, &gt, al.scale, al.shift);
    for _ in 0..100 {
        let s = al.scale + rng.gen_range(-1.0..1.0);
        let t = al.shift + rng.gen_range(-1.0..1.0);
        assert!(sse(&d, &gt, s, t) >= best - 1e-10);
    }
}

#[test]
fn exact_affine_pairs_cost_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = random_grid(16, 16, 0.0, 1.0, &mut rng);
    let gt = d.map(|v| 3.0 * v - 2.0);
    let mask = Mask::full(16, 16);
    assert!(ssi_loss(&d, &gt, &mask, Rho::L1).unwrap() < 1e-12);
    let r = total_loss(&d, &gt, &mask, &LossConfig::default()).unwrap();
    assert!(r.total < 1e-12);
}

#[test]
fn two_pixel_exact_fit() {
    let d = Grid::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
    let gt = Grid::new(1, 2, 1, vec![0.0, 2.0]).unwrap();
    let al = align_lstsq(&d, &gt, &Mask::full(1, 2)).unwrap();
    assert_eq!((al.scale, al.shift), (2.0, 0.0));
    assert_eq!(ssi_loss(&d, &gt, &Mask::full(1, 2), Rho::L2).unwrap(), 0.0);
}

#[test]
fn alpha_zero_is_pure_ssi() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let d = random_grid(16, 16, 0.0, 1.0, &mut rng);
    let gt = random_grid(16, 16, 0.0, 1.0, &mut rng);
    let cfg = LossConfig {
        alpha: 0.0,
        ..LossConfig::default()
    };
    let r = total_loss(&d, &gt, &Mask::full(16, 16), &cfg).unwrap();
    assert_eq!(r.total, r.ssi);
}

#[test]
fn batch_is_mean_of_totals() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = LossConfig::default();
    let samples: Vec<_> = (0..5)
        .map(|_| {
            let d = random_grid(16, 16, 0.0, 1.0, &mut rng);
            let gt = random_grid(16, 16, 0.0, 1.0, &mut rng);
            (d, gt, Mask::full(16, 16))
        })
        .collect();
    let mean = samples
        .iter()
        .map(|(d, g, m)| total_loss(d, g, m, &cfg).unwrap().total)
        .sum::<f64>()
        / 5.0;
    assert!((batch_loss(&samples, &cfg).unwrap() - mean).abs() < 1e-9);
}

#[test]
fn constant_prediction_is_degenerate() {
    let gt = Grid::from_fn(8, 8, |y, x| (y + x) as f64);
    let d = Grid::filled(8, 8, 1, 2.0);
    let err = total_loss(&d, &gt, &Mask::full(8, 8), &LossConfig::default()).unwrap_err();
    assert!(matches!(err, Error::DegenerateAlignment(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn fd_check_on_masked_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for rho in [Rho::L1, Rho::L2] {
        let d = random_grid(16, 16, 0.0, 1.0, &mut rng);
        let gt = Grid::from_fn(16, 16, |y, x| {
            d.get(y, x, 0) + if (x + y) % 2 == 0 { 0.3 } else { -0.3 }
        });
        let mask = Mask::from_fn(16, 16, |y, x| !(y == 5 && x > 3));
        let cfg = LossConfig {
            rho,
            scales: 3,
            alpha: 0.5,
        };
        let r = fd_check(&d, &gt, &mask, &cfg).unwrap();
        assert!(r.max_rel_error < 1e-4, "{rho:?}: {r:?}");
        assert_eq!(r.checked + r.excluded, mask.count());
        assert!(r.checked >= 64, "{r:?}");
    }
}

#[test]
fn gradient_is_zero_off_mask() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let d = random_grid(8, 8, 0.0, 1.0, &mut rng);
    let gt = random_grid(8, 8, 0.0, 1.0, &mut rng);
    let mask = Mask::from_fn(8, 8, |y, _| y < 6);
    let cfg = LossConfig {
        rho: Rho::L2,
        scales: 2,
        alpha: 0.5,
    };
    let al = align_lstsq(&d, &gt, &mask).unwrap();
    let g = loss_gradient(&d, &gt, &mask, &cfg, al).unwrap();
    for y in 6..8 {
        for x in 0..8 {
            assert_eq!(g.get(y, x, 0), 0.0);
        }
    }
    let frozen = loss_gradient(&d, &gt, &mask, &cfg, Alignment::IDENTITY).unwrap();
    assert_ne!(frozen, g);
}

fn grid_strategy(h: usize, w: usize) -> impl Strategy<Value = Grid<f64>> {
    prop::collection::vec(-5.0f64..5.0, h * w).prop_map(move |v| Grid::new(h, w, 1, v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affine_invariance_and_nonnegativity(
        d in grid_strategy(12, 10),
        gt in grid_strategy(12, 10),
        a in 0.05f64..20.0,
        b in -10.0f64..10.0,
        rho in prop::sample::select(vec![Rho::L1, Rho::L2]),
    ) {
        let mask = Mask::full(12, 10);
        let cfg = LossConfig { rho, scales: 3, alpha: 0.5 };
        let moved = d.map(|v| a * v + b);
        let base = total_loss(&d, &gt, &mask, &cfg).unwrap();
        let shifted = total_loss(&moved, &gt, &mask, &cfg).unwrap();
        prop_assert!(base.ssi >= 0.0 && base.reg >= 0.0 && base.total >= 0.0);
        prop_assert!((base.ssi - shifted.ssi).abs() <= 1e-8);
        prop_assert!((base.reg - shifted.reg).abs() <= 1e-8);
        prop_assert!((base.total - shifted.total).abs() <= 1e-8);
        prop_assert!((base.total - (base.ssi + 0.5 * base.reg)).abs() <= 1e-9);
    }

    #[test]
    fn l2_gradient_matches_differences(d in grid_strategy(8, 8), gt in grid_strategy(8, 8), k in 1usize..=4) {
        let cfg = LossConfig { rho: Rho::L2, scales: k, alpha: 0.5 };
        let r = fd_check(&d, &gt, &Mask::full(8, 8), &cfg).unwrap();
        prop_assert!(r.max_rel_error < 1e-4, "{:?}", r);
    }
}
