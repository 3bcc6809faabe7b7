//! Benchmark metrics for depth (AbsRel, SqRel, RMSE, log10, δ-accuracy) and
//! surface normals (angular error statistics and threshold accuracies).
//!
//! Per-image records are built from accumulators so that a dataset can be
//! aggregated either by averaging records uniformly over images or by pooling
//! all pixels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};
use crate::losses::align_lstsq;

/// Default δ thresholds: 1.25, 1.25², 1.25³.
pub const DELTA_THRESHOLDS: [f64; 3] = [1.25, 1.25 * 1.25, 1.25 * 1.25 * 1.25];
/// Default angular accuracy thresholds in degrees.
pub const ANGLE_THRESHOLDS: [f64; 3] = [11.25, 22.5, 30.0];
/// Allowed deviation from unit length for normals under evaluation.
pub const UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum AlignMode {
    None,
    Lstsq,
    Median,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthMetricRecord {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalMetricRecord {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub rms_deg: f64,
    pub acc_11_25: f64,
    pub acc_22_5: f64,
    pub acc_30: f64,
    pub pixel_count: usize,
}

/// Lower-middle element for even counts.
pub fn lower_median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Some(values[(values.len() - 1) / 2])
}

fn check_shapes(pred: &Grid<f64>, gt: &Grid<f64>, mask: &Mask, channels: usize) -> Result<()> {
    pred.require_channels(channels, "prediction")?;
    gt.require_channels(channels, "ground truth")?;
    if !pred.same_size(gt) {
        return Err(Error::Dimension(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    mask.check_matches(pred)
}

fn masked_values(g: &Grid<f64>, mask: &Mask) -> Vec<f64> {
    g.data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .collect()
}

/// Brings `pred` onto the ground truth's scale before evaluation.
pub fn align_for_eval(
    pred: &Grid<f64>,
    gt: &Grid<f64>,
    mask: &Mask,
    mode: AlignMode,
) -> Result<Grid<f64>> {
    check_shapes(pred, gt, mask, 1)?;
    match mode {
        AlignMode::None => Ok(pred.clone()),
        AlignMode::Lstsq => Ok(align_lstsq(pred, gt, mask)?.apply_grid(pred)),
        AlignMode::Median => {
            let mp = lower_median(&mut masked_values(pred, mask))
                .ok_or_else(|| Error::Parameter("mask has no valid pixels".into()))?;
            let mg = lower_median(&mut masked_values(gt, mask)).unwrap();
            if mp == 0.0 {
                return Err(Error::DegenerateAlignment(
                    "median of the prediction is zero".into(),
                ));
            }
            let ratio = mg / mp;
            Ok(pred.map(|v| v * ratio))
        }
    }
}

/// Running sums behind [`DepthMetricRecord`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DepthAccumulator {
    pub count: usize,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub sq_err: f64,
    pub log10: f64,
    pub hits: [usize; 3],
}

impl DepthAccumulator {
    /// Adds one pixel. Both values must be strictly positive.
    pub fn push(&mut self, pred: f64, gt: f64, thresholds: &[f64; 3]) {
        let err = pred - gt;
        self.count += 1;
        self.abs_rel += err.abs() / gt;
        self.sq_rel += err * err / gt;
        self.sq_err += err * err;
        self.log10 += (pred.log10() - gt.log10()).abs();
        let ratio = (pred / gt).max(gt / pred);
        for (hit, thr) in self.hits.iter_mut().zip(thresholds) {
            if ratio < *thr {
                *hit += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        self.count += other.count;
        self.abs_rel += other.abs_rel;
        self.sq_rel += other.sq_rel;
        self.sq_err += other.sq_err;
        self.log10 += other.log10;
        for (a, b) in self.hits.iter_mut().zip(other.hits) {
            *a += b;
        }
    }

    pub fn finish(&self) -> DepthMetricRecord {
        let n = self.count.max(1) as f64;
        DepthMetricRecord {
            abs_rel: self.abs_rel / n,
            sq_rel: self.sq_rel / n,
            rmse: (self.sq_err / n).sqrt(),
            log10: self.log10 / n,
            delta1: self.hits[0] as f64 / n,
            delta2: self.hits[1] as f64 / n,
            delta3: self.hits[2] as f64 / n,
            pixel_count: self.count,
        }
    }
}

fn check_thresholds(thresholds: &[f64; 3]) -> Result<()> {
    if !(thresholds[0] > 1.0 && thresholds[0] <= thresholds[1] && thresholds[1] <= thresholds[2]) {
        return Err(Error::Parameter(format!(
            "delta thresholds must be > 1 and ascending, got {thresholds:?}"
        )));
    }
    Ok(())
}

pub fn depth_accumulate(
    pred: &Grid<f64>,
    gt: &Grid<f64>,
    mask: &Mask,
    thresholds: &[f64; 3],
) -> Result<DepthAccumulator> {
    check_shapes(pred, gt, mask, 1)?;
    check_thresholds(thresholds)?;
    let mut acc = DepthAccumulator::default();
    for (i, ((&p, &g), &ok)) in pred
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .enumerate()
    {
        if !ok {
            continue;
        }
        if !(g > 0.0) {
            return Err(Error::Positivity {
                metric: "abs_rel",
                index: i,
            });
        }
        if !(p > 0.0) {
            return Err(Error::Positivity {
                metric: "log10",
                index: i,
            });
        }
        acc.push(p, g, thresholds);
    }
    if acc.count == 0 {
        return Err(Error::Parameter("mask has no valid pixels".into()));
    }
    Ok(acc)
}

pub fn depth_metrics(
    pred: &Grid<f64>,
    gt: &Grid<f64>,
    mask: &Mask,
    thresholds: &[f64; 3],
) -> Result<DepthMetricRecord> {
    Ok(depth_accumulate(pred, gt, mask, thresholds)?.finish())
}

/// Per-pixel angular errors in degrees over the mask, as
/// `atan2(|p × g|, p · g)`: the arccos of the dot product for unit vectors,
/// without its loss of precision near 0° and 180°.
pub fn angular_errors(pred: &Grid<f64>, gt: &Grid<f64>, mask: &Mask) -> Result<Vec<f64>> {
    check_shapes(pred, gt, mask, 3)?;
    let mut out = vec![];
    for (i, ((p, g), &ok)) in pred
        .data()
        .chunks_exact(3)
        .zip(gt.data().chunks_exact(3))
        .zip(mask.data())
        .enumerate()
    {
        if !ok {
            continue;
        }
        for (v, which) in [(p, "prediction"), (g, "ground truth")] {
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Normalization(format!(
                    "{which} normal at pixel {i} has length {norm}"
                )));
            }
        }
        let dot = p[0] * g[0] + p[1] * g[1] + p[2] * g[2];
        let cross = [
            p[1] * g[2] - p[2] * g[1],
            p[2] * g[0] - p[0] * g[2],
            p[0] * g[1] - p[1] * g[0],
        ];
        let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
        out.push(sin.atan2(dot).to_degrees());
    }
    Ok(out)
}

/// Summary of a set of angular errors.
pub fn normal_record_from_angles(angles: &[f64]) -> Result<NormalMetricRecord> {
    if angles.is_empty() {
        return Err(Error::Parameter("mask has no valid pixels".into()));
    }
    let n = angles.len() as f64;
    let frac = |thr: f64| angles.iter().filter(|&&a| a < thr).count() as f64 / n;
    let mut sorted = angles.to_vec();
    Ok(NormalMetricRecord {
        mean_deg: angles.iter().sum::<f64>() / n,
        median_deg: lower_median(&mut sorted).unwrap(),
        rms_deg: (angles.iter().map(|a| a * a).sum::<f64>() / n).sqrt(),
        acc_11_25: frac(ANGLE_THRESHOLDS[0]),
        acc_22_5: frac(ANGLE_THRESHOLDS[1]),
        acc_30: frac(ANGLE_THRESHOLDS[2]),
        pixel_count: angles.len(),
    })
}

pub fn normal_metrics(pred: &Grid<f64>, gt: &Grid<f64>, mask: &Mask) -> Result<NormalMetricRecord> {
    normal_record_from_angles(&angular_errors(pred, gt, mask)?)
}

/// Uniform mean of per-image depth records; `pixel_count` is summed.
pub fn mean_depth_records(records: &[DepthMetricRecord]) -> Option<DepthMetricRecord> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let avg = |f: fn(&DepthMetricRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    Some(DepthMetricRecord {
        abs_rel: avg(|r| r.abs_rel),
        sq_rel: avg(|r| r.sq_rel),
        rmse: avg(|r| r.rmse),
        log10: avg(|r| r.log10),
        delta1: avg(|r| r.delta1),
        delta2: avg(|r| r.delta2),
        delta3: avg(|r| r.delta3),
        pixel_count: records.iter().map(|r| r.pixel_count).sum(),
    })
}

/// Uniform mean of per-image normal records; `pixel_count` is summed.
pub fn mean_normal_records(records: &[NormalMetricRecord]) -> Option<NormalMetricRecord> {
    if records.is_empty() {
        return None;
    }
    let n = records.len() as f64;
    let avg = |f: fn(&NormalMetricRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    Some(NormalMetricRecord {
        mean_deg: avg(|r| r.mean_deg),
        median_deg: avg(|r| r.median_deg),
        rms_deg: avg(|r| r.rms_deg),
        acc_11_25: avg(|r| r.acc_11_25),
        acc_22_5: avg(|r| r.acc_22_5),
        acc_30: avg(|r| r.acc_30),
        pixel_count: records.iter().map(|r| r.pixel_count).sum(),
    })
}
