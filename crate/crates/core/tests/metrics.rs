mod common;

use common::{random_grid, random_unit_field};
use depthkit::metrics::{
    align_for_eval, depth_accumulate, depth_metrics, mean_depth_records, normal_metrics, AlignMode,
    DELTA_THRESHOLDS,
};
use depthkit::{Error, Grid, Mask};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight loop over a list of (pred, gt) pairs.
fn depth_oracle(pairs: &[(f64, f64)]) -> [f64; 7] {
    let n = pairs.len() as f64;
    let mut out = [0.0; 7];
    for &(p, g) in pairs {
        out[0] += (p - g).abs() / g;
        out[1] += (p - g).powi(2) / g;
        out[2] += (p - g).powi(2);
        out[3] += (p.log10() - g.log10()).abs();
        let ratio = (p / g).max(g / p);
        for k in 0..3 {
            if ratio < 1.25f64.powi(k as i32 + 1) {
                out[4 + k] += 1.0;
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out[2] = out[2].sqrt();
    out
}

fn masked_pairs(p: &Grid<f64>, g: &Grid<f64>, m: &Mask) -> Vec<(f64, f64)> {
    (0..p.data().len())
        .filter(|&i| m.data()[i])
        .map(|i| (p.data()[i], g.data()[i]))
        .collect()
}

#[test]
fn depth_metrics_match_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10 {
        let p = random_grid(13, 9, 0.1, 5.0, &mut rng);
        let g = random_grid(13, 9, 0.1, 5.0, &mut rng);
        let m = Mask::from_fn(13, 9, |_, _| rng.gen::<f64>() > 0.2);
        let r = depth_metrics(&p, &g, &m, &DELTA_THRESHOLDS).unwrap();
        let o = depth_oracle(&masked_pairs(&p, &g, &m));
        let got = [
            r.abs_rel, r.sq_rel, r.rmse, r.log10, r.delta1, r.delta2, r.delta3,
        ];
        for (a, b) in got.iter().zip(o) {
            assert!((a - b).abs() < 1e-12, "{got:?} vs {o:?}");
        }
        assert_eq!(r.pixel_count, m.count());
    }
}

#[test]
fn per_pixel_aggregation_equals_one_concatenated_image() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut all = vec![];
    let mut acc = depthkit::metrics::DepthAccumulator::default();
    let mut records = vec![];
    for i in 0..4 {
        let (h, w) = (5 + i, 7);
        let p = random_grid(h, w, 0.5, 2.0, &mut rng);
        let g = random_grid(h, w, 0.5, 2.0, &mut rng);
        let m = Mask::full(h, w);
        let a = depth_accumulate(&p, &g, &m, &DELTA_THRESHOLDS).unwrap();
        acc.merge(&a);
        records.push(a.finish());
        all.extend(masked_pairs(&p, &g, &m));
    }
    let r = acc.finish();
    let o = depth_oracle(&all);
    assert!((r.abs_rel - o[0]).abs() < 1e-12 && (r.rmse - o[2]).abs() < 1e-12);
    assert!((r.delta1 - o[4]).abs() < 1e-12);
    let mean = mean_depth_records(&records).unwrap();
    let expected = records.iter().map(|r| r.abs_rel).sum::<f64>() / 4.0;
    assert!((mean.abs_rel - expected).abs() < 1e-15);
    assert_eq!(mean.pixel_count, all.len());
}

#[test]
fn normal_metrics_match_acos_oracle_and_are_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let p = random_unit_field(16, 16, &mut rng);
    let g = random_unit_field(16, 16, &mut rng);
    let m = Mask::full(16, 16);
    let r = normal_metrics(&p, &g, &m).unwrap();
    let mut angles: Vec<f64> = p
        .data()
        .chunks(3)
        .zip(g.data().chunks(3))
        .map(|(a, b)| {
            (a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
                .clamp(-1.0, 1.0)
                .acos()
                .to_degrees()
        })
        .collect();
    let n = angles.len() as f64;
    let mean = angles.iter().sum::<f64>() / n;
    let rms = (angles.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    let within = |t: f64| angles.iter().filter(|&&a| a < t).count() as f64 / n;
    assert!((r.mean_deg - mean).abs() < 1e-6 && (r.rms_deg - rms).abs() < 1e-6);
    assert_eq!(r.acc_30, within(30.0));
    assert_eq!(r.acc_11_25, within(11.25));
    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!((r.median_deg - angles[(angles.len() - 1) / 2]).abs() < 1e-6);
    assert_eq!(normal_metrics(&g, &p, &m).unwrap(), r);
}

#[test]
fn non_unit_normals_are_rejected() {
    let p = Grid::new(1, 1, 3, vec![0.0, 0.0, 2.0]).unwrap();
    let g = Grid::new(1, 1, 3, vec![0.0, 0.0, 1.0]).unwrap();
    assert!(matches!(
        normal_metrics(&p, &g, &Mask::full(1, 1)),
        Err(Error::Normalization(_))
    ));
}

#[test]
fn alignment_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let g = random_grid(8, 8, 1.0, 3.0, &mut rng);
    let m = Mask::full(8, 8);
    let p = g.map(|v| 2.0 * v + 1.0);
    let aligned = align_for_eval(&p, &g, &m, AlignMode::Lstsq).unwrap();
    for (a, b) in aligned.data().iter().zip(g.data()) {
        assert!((a - b).abs() < 1e-6);
    }
    let half = g.map(|v| 0.5 * v);
    let aligned = align_for_eval(&half, &g, &m, AlignMode::Median).unwrap();
    for (a, b) in aligned.data().iter().zip(g.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let zero = Grid::from_fn(8, 8, |y, _| if y < 5 { 0.0 } else { 1.0 });
    let e = align_for_eval(&zero, &g, &m, AlignMode::Median).unwrap_err();
    assert!(matches!(e, Error::DegenerateAlignment(_)));
    assert_eq!(align_for_eval(&p, &g, &m, AlignMode::None).unwrap(), p);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn deltas_are_ordered(seed in any::<u64>(), spread in 0.01f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(6, 6, 0.5, 2.0, &mut rng);
        let p = Grid::from_fn(6, 6, |y, x| g.get(y, x, 0) * (1.0 + spread * rng.gen::<f64>()));
        let r = depth_metrics(&p, &g, &Mask::full(6, 6), &DELTA_THRESHOLDS).unwrap();
        prop_assert!(r.delta1 <= r.delta2 && r.delta2 <= r.delta3 && r.delta3 <= 1.0);
        prop_assert!(r.abs_rel >= 0.0 && r.rmse >= 0.0);
    }

    #[test]
    fn perfect_prediction_scores_perfectly(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_grid(5, 5, 0.1, 9.0, &mut rng);
        let r = depth_metrics(&g, &g, &Mask::full(5, 5), &DELTA_THRESHOLDS).unwrap();
        prop_assert_eq!((r.abs_rel, r.rmse, r.delta1), (0.0, 0.0, 1.0));
    }
}
