//! Depth/normal pseudo-label quality metrics and weighted selection.
//!
//! Each teacher model's depth and normal candidate for an image is reduced to
//! a small metric record. Records are scored by a signed linear combination
//! and the highest-scoring depth/normal pair wins.
//!
//! All metrics are computed in `f64` on `[0, 1]`-normalized maps:
//!
//! * edge consistency: `|B_map ∧ B_rgb| / |B_rgb|`, where `B` are binary edge
//!   masks at the 90th percentile of Sobel magnitude, and the RGB edges come
//!   from luminance;
//! * local variance: image mean of the 11×11 sliding-window variance;
//! * complexity: mean gradient magnitude;
//! * sharpness: max gradient magnitude;
//! * orientation variance: `mean(1 - n_i · n̄)` with `n̄` the plain mean vector.

use serde::{Deserialize, Serialize};

use crate::calculus::{
    box_local_variance, edge_mask, luminance, minmax_normalize, normalize_normals, sobel_gradients,
};
use crate::error::{Error, Result};
use crate::grid::{DepthGrid, Grid, ImageGrid, Mask, NormalGrid};

/// Percentile of gradient magnitude above which a pixel counts as an edge.
pub const EDGE_PERCENTILE: f64 = 90.0;
/// Side of the square window used for local depth variance.
pub const VARIANCE_WINDOW: usize = 11;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DepthQuality {
    pub edge_consistency: f64,
    pub local_variance: f64,
    pub complexity: f64,
    pub sharpness: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NormalQuality {
    pub edge_consistency: f64,
    pub orientation_variance: f64,
    pub sharpness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepthWeights {
    pub edge_consistency: f64,
    pub local_variance: f64,
    pub complexity: f64,
    pub sharpness: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalWeights {
    pub edge_consistency: f64,
    pub orientation_variance: f64,
    pub sharpness: f64,
}

/// Linear weights over the metric records. Signs are part of the weights:
/// the default local-variance weight is negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub depth: DepthWeights,
    pub normal: NormalWeights,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            depth: DepthWeights {
                edge_consistency: 0.3,
                local_variance: -0.2,
                complexity: 0.2,
                sharpness: 0.3,
            },
            normal: NormalWeights {
                edge_consistency: 0.4,
                orientation_variance: 0.4,
                sharpness: 0.2,
            },
        }
    }
}

impl ScoreWeights {
    /// Parses `key = value` lines, e.g. `depth.local_variance = -0.2`.
    /// Unlisted keys keep their defaults; `#` starts a comment.
    pub fn parse_kv(text: &str) -> Result<Self> {
        let mut w = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("weights line {}: expected key = value", lineno + 1))
            })?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::Format(format!("weights line {}: bad number {value:?}", lineno + 1))
            })?;
            if !value.is_finite() {
                return Err(Error::Format(format!(
                    "weights line {}: non-finite",
                    lineno + 1
                )));
            }
            let slot = match key.trim() {
                "depth.edge_consistency" => &mut w.depth.edge_consistency,
                "depth.local_variance" => &mut w.depth.local_variance,
                "depth.complexity" => &mut w.depth.complexity,
                "depth.sharpness" => &mut w.depth.sharpness,
                "normal.edge_consistency" => &mut w.normal.edge_consistency,
                "normal.orientation_variance" => &mut w.normal.orientation_variance,
                "normal.sharpness" => &mut w.normal.sharpness,
                other => {
                    return Err(Error::Format(format!(
                        "weights line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            };
            *slot = value;
        }
        Ok(w)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub depth: f64,
    pub normal: f64,
    pub combined: f64,
}

fn check_pair<T: num_traits::Float>(map: &Grid<T>, rgb: &ImageGrid) -> Result<()> {
    if !map.same_size(rgb) {
        return Err(Error::Dimension(format!(
            "candidate is {}x{} but RGB image is {}x{}",
            map.height(),
            map.width(),
            rgb.height(),
            rgb.width()
        )));
    }
    if map.height() < 3 || map.width() < 3 {
        return Err(Error::Dimension("maps must be at least 3x3".into()));
    }
    Ok(())
}

/// Edge mask of the RGB image's normalized luminance.
pub fn rgb_edge_mask(rgb: &ImageGrid) -> Result<Mask> {
    let lum = minmax_normalize(&luminance(rgb)?.cast::<f64>());
    edge_mask(&sobel_gradients(&lum)?.magnitude, EDGE_PERCENTILE)
}

/// Fraction of reference edge pixels also marked in `map_edges`; 0 when the
/// reference has no edges.
pub fn edge_consistency(map_edges: &Mask, rgb_edges: &Mask) -> Result<f64> {
    let reference = rgb_edges.count();
    if reference == 0 {
        return Ok(0.0);
    }
    Ok(map_edges.and(rgb_edges)?.count() as f64 / reference as f64)
}

pub fn evaluate_depth_map(d: &DepthGrid, rgb: &ImageGrid) -> Result<DepthQuality> {
    d.require_channels(1, "depth map")?;
    check_pair(d, rgb)?;
    let dn = minmax_normalize(&d.cast::<f64>());
    let mag = sobel_gradients(&dn)?.magnitude;
    let ec = edge_consistency(&edge_mask(&mag, EDGE_PERCENTILE)?, &rgb_edge_mask(rgb)?)?;
    Ok(DepthQuality {
        edge_consistency: ec,
        local_variance: box_local_variance(&dn, VARIANCE_WINDOW)?.mean(),
        complexity: mag.mean(),
        sharpness: mag.max_value(),
    })
}

/// Normal-field gradient magnitude: sum of the per-channel Sobel magnitudes.
pub fn normal_gradient_magnitude(n: &Grid<f64>) -> Result<Grid<f64>> {
    n.require_channels(3, "normal field")?;
    let mut total = sobel_gradients(&n.channel(0))?.magnitude;
    for c in 1..3 {
        let m = sobel_gradients(&n.channel(c))?.magnitude;
        for (t, v) in total.data_mut().iter_mut().zip(m.data()) {
            *t += v;
        }
    }
    Ok(total)
}

/// `mean(1 - n_i · n̄)`, clamped into `[0, 1]` against rounding.
pub fn orientation_variance(n: &Grid<f64>) -> f64 {
    let count = n.pixel_count().max(1) as f64;
    let mut mean = [0.0f64; 3];
    for p in n.data().chunks_exact(3) {
        for c in 0..3 {
            mean[c] += p[c];
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let sum: f64 = n
        .data()
        .chunks_exact(3)
        .map(|p| 1.0 - (p[0] * mean[0] + p[1] * mean[1] + p[2] * mean[2]))
        .sum();
    (sum / count).clamp(0.0, 1.0)
}

pub fn evaluate_normal_map(n: &NormalGrid, rgb: &ImageGrid) -> Result<NormalQuality> {
    n.require_channels(3, "normal map")?;
    check_pair(n, rgb)?;
    let nn = normalize_normals(&n.cast::<f64>(), 0.0)?;
    let mag = normal_gradient_magnitude(&nn)?;
    let ec = edge_consistency(&edge_mask(&mag, EDGE_PERCENTILE)?, &rgb_edge_mask(rgb)?)?;
    Ok(NormalQuality {
        edge_consistency: ec,
        orientation_variance: orientation_variance(&nn),
        sharpness: mag.max_value(),
    })
}

pub fn combined_score(dq: &DepthQuality, nq: &NormalQuality, w: &ScoreWeights) -> Scores {
    let depth = dq.edge_consistency * w.depth.edge_consistency
        + dq.local_variance * w.depth.local_variance
        + dq.complexity * w.depth.complexity
        + dq.sharpness * w.depth.sharpness;
    let normal = nq.edge_consistency * w.normal.edge_consistency
        + nq.orientation_variance * w.normal.orientation_variance
        + nq.sharpness * w.normal.sharpness;
    Scores {
        depth,
        normal,
        combined: depth + normal,
    }
}

/// Index of the highest combined score. Ties go to the lowest index.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some(b) if s <= scores[b] => {}
            _ => best = Some(i),
        }
    }
    best
}

pub fn find_best_pair(
    candidates: &[(DepthQuality, NormalQuality)],
    w: &ScoreWeights,
) -> Result<usize> {
    let scores: Vec<f64> = candidates
        .iter()
        .map(|(d, n)| combined_score(d, n, w).combined)
        .collect();
    argmax_first(&scores).ok_or(Error::EmptyCandidates)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured_rgb(h: usize, w: usize, seed: u64) -> ImageGrid {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w * 3).map(|_| rng.gen::<f32>()).collect();
        ImageGrid::new(h, w, 3, data).unwrap()
    }

    fn unit_field(h: usize, w: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> NormalGrid {
        let mut data = vec![];
        for y in 0..h {
            for x in 0..w {
                data.extend(f(y, x));
            }
        }
        NormalGrid::new(h, w, 3, data).unwrap()
    }

    #[test]
    fn luminance_depth_has_full_edge_consistency() {
        let rgb = textured_rgb(16, 16, 1);
        let d = luminance(&rgb).unwrap();
        let q = evaluate_depth_map(&d, &rgb).unwrap();
        assert_eq!(q.edge_consistency, 1.0);
    }

    #[test]
    fn constant_depth_is_all_zero() {
        let rgb = textured_rgb(16, 16, 2);
        let d = DepthGrid::filled(16, 16, 1, 0.7);
        let q = evaluate_depth_map(&d, &rgb).unwrap();
        assert_eq!(q, DepthQuality::default());
    }

    #[test]
    fn size_mismatch() {
        let rgb = textured_rgb(16, 16, 3);
        let d = DepthGrid::zeros(15, 16, 1);
        assert!(matches!(
            evaluate_depth_map(&d, &rgb),
            Err(Error::Dimension(_))
        ));
        let n = NormalGrid::zeros(16, 17, 3);
        assert!(matches!(
            evaluate_normal_map(&n, &rgb),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn constant_normals() {
        let rgb = textured_rgb(8, 8, 4);
        let n = unit_field(8, 8, |_, _| [0.0, 0.0, 1.0]);
        let q = evaluate_normal_map(&n, &rgb).unwrap();
        assert_eq!(q.orientation_variance, 0.0);
        assert_eq!(q.sharpness, 0.0);
    }

    #[test]
    fn opposing_halves_have_unit_orientation_variance() {
        let rgb = textured_rgb(8, 8, 5);
        let n = unit_field(8, 8, |y, _| {
            if y < 4 {
                [0.0, 0.0, 1.0]
            } else {
                [0.0, 0.0, -1.0]
            }
        });
        let q = evaluate_normal_map(&n, &rgb).unwrap();
        assert_eq!(q.orientation_variance, 1.0);
    }

    #[test]
    fn default_weight_arithmetic() {
        let w = ScoreWeights::default();
        let dq = DepthQuality {
            edge_consistency: 1.0,
            local_variance: 0.0,
            complexity: 0.0,
            sharpness: 1.0,
        };
        let nq = NormalQuality {
            edge_consistency: 1.0,
            orientation_variance: 1.0,
            sharpness: 1.0,
        };
        let s = combined_score(&dq, &nq, &w);
        assert_eq!((s.depth, s.normal, s.combined), (0.6, 1.0, 1.6));
        let zero = combined_score(&DepthQuality::default(), &NormalQuality::default(), &w);
        assert_eq!(zero.combined, 0.0);
        let lv = DepthQuality {
            local_variance: 1.0,
            ..Default::default()
        };
        assert_eq!(
            combined_score(&lv, &NormalQuality::default(), &w).depth,
            -0.2
        );
    }

    #[test]
    fn argmax_rules() {
        assert_eq!(argmax_first(&[0.5, 0.7]), Some(1));
        assert_eq!(argmax_first(&[0.4, 0.4]), Some(0));
        assert_eq!(argmax_first(&[0.1]), Some(0));
        assert_eq!(argmax_first(&[]), None);
        assert!(matches!(
            find_best_pair(&[], &ScoreWeights::default()),
            Err(Error::EmptyCandidates)
        ));
    }

    #[test]
    fn weights_file_parsing() {
        let w =
            ScoreWeights::parse_kv("# tweak\ndepth.local_variance = -0.5\nnormal.sharpness=0.1\n")
                .unwrap();
        assert_eq!(w.depth.local_variance, -0.5);
        assert_eq!(w.normal.sharpness, 0.1);
        assert_eq!(w.depth.edge_consistency, 0.3);
        assert!(ScoreWeights::parse_kv("depth.bogus = 1").is_err());
        assert!(ScoreWeights::parse_kv("depth.sharpness").is_err());
    }
}
