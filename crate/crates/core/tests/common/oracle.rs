//! Straight-line reference implementation of candidate scoring, written
//! without the library's image operators: separable Sobel, sort-based
//! percentile, direct-window two-pass variance.

use depthkit::{DepthGrid, ImageGrid, NormalGrid};

pub const DEPTH_WEIGHTS: [f64; 4] = [0.3, -0.2, 0.2, 0.3];
pub const NORMAL_WEIGHTS: [f64; 3] = [0.4, 0.4, 0.2];

fn clamp_idx(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// RGB → luminance; the weighted sum happens in `f32` like the stored image.
pub fn luminance(rgb: &ImageGrid) -> Vec<f64> {
    rgb.data()
        .chunks(3)
        .map(|p| (0.299f32 * p[0] + 0.587f32 * p[1] + 0.114f32 * p[2]) as f64)
        .collect()
}

pub fn minmax(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - lo) / (hi - lo)).collect()
}

/// Sobel as vertical [1 2 1] smoothing of a horizontal central difference
/// (and the transpose), then scaled by 1/8.
pub fn sobel_magnitude(v: &[f64], h: usize, w: usize) -> Vec<f64> {
    let at = |y: isize, x: isize| v[clamp_idx(y, h) * w + clamp_idx(x, w)];
    let mut out = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let dx = |yy: isize| at(yy, x + 1) - at(yy, x - 1);
            let dy = |xx: isize| at(y + 1, xx) - at(y - 1, xx);
            let gx = (dx(y - 1) + 2.0 * dx(y) + dx(y + 1)) / 8.0;
            let gy = (dy(x - 1) + 2.0 * dy(x) + dy(x + 1)) / 8.0;
            out[y as usize * w + x as usize] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Top-decile edges: nonzero magnitudes at or above the nearest-rank 90th
/// percentile.
pub fn edges(mag: &[f64]) -> Vec<bool> {
    let mut sorted = mag.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = (0.9 * mag.len() as f64).ceil() as usize;
    let thr = sorted[rank.max(1) - 1];
    mag.iter().map(|&m| m > 0.0 && m >= thr).collect()
}

pub fn edge_consistency(map: &[bool], reference: &[bool]) -> f64 {
    let total = reference.iter().filter(|&&b| b).count();
    if total == 0 {
        return 0.0;
    }
    let both = map
        .iter()
        .zip(reference)
        .filter(|(a, b)| **a && **b)
        .count();
    both as f64 / total as f64
}

/// Mean over pixels of the variance in the replicate-padded `win × win`
/// window around each pixel.
pub fn mean_local_variance(v: &[f64], h: usize, w: usize, win: usize) -> f64 {
    let r = (win / 2) as isize;
    let mut total = 0.0;
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut vals = vec![];
            for dy in -r..=r {
                for dx in -r..=r {
                    vals.push(v[clamp_idx(y + dy, h) * w + clamp_idx(x + dx, w)]);
                }
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            total += vals.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        }
    }
    total / (h * w) as f64
}

fn rgb_edges(rgb: &ImageGrid) -> Vec<bool> {
    let (h, w) = (rgb.height(), rgb.width());
    edges(&sobel_magnitude(&minmax(&luminance(rgb)), h, w))
}

/// `[edge_consistency, local_variance, complexity, sharpness]`.
pub fn depth_metrics(d: &DepthGrid, rgb: &ImageGrid) -> [f64; 4] {
    let (h, w) = (d.height(), d.width());
    let dn = minmax(&d.data().iter().map(|&v| v as f64).collect::<Vec<_>>());
    let mag = sobel_magnitude(&dn, h, w);
    [
        edge_consistency(&edges(&mag), &rgb_edges(rgb)),
        mean_local_variance(&dn, h, w, 11),
        mag.iter().sum::<f64>() / mag.len() as f64,
        mag.iter().cloned().fold(0.0, f64::max),
    ]
}

/// `[edge_consistency, orientation_variance, sharpness]`.
pub fn normal_metrics(n: &NormalGrid, rgb: &ImageGrid) -> [f64; 3] {
    let (h, w) = (n.height(), n.width());
    let mut unit: Vec<[f64; 3]> = vec![];
    for p in n.data().chunks(3) {
        let v = [p[0] as f64, p[1] as f64, p[2] as f64];
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        unit.push(if len == 0.0 {
            [0.0, 0.0, 1.0]
        } else {
            v.map(|c| c / len)
        });
    }
    let mut mag = vec![0.0; h * w];
    for c in 0..3 {
        let channel: Vec<f64> = unit.iter().map(|u| u[c]).collect();
        for (m, s) in mag.iter_mut().zip(sobel_magnitude(&channel, h, w)) {
            *m += s;
        }
    }
    let count = unit.len() as f64;
    let mut mean = [0.0; 3];
    for u in &unit {
        for c in 0..3 {
            mean[c] += u[c] / count;
        }
    }
    let spread = unit
        .iter()
        .map(|u| 1.0 - (u[0] * mean[0] + u[1] * mean[1] + u[2] * mean[2]))
        .sum::<f64>()
        / count;
    [
        edge_consistency(&edges(&mag), &rgb_edges(rgb)),
        spread.clamp(0.0, 1.0),
        mag.iter().cloned().fold(0.0, f64::max),
    ]
}

pub fn score(d: &[f64; 4], n: &[f64; 3]) -> f64 {
    let sd: f64 = d.iter().zip(DEPTH_WEIGHTS).map(|(m, w)| m * w).sum();
    let sn: f64 = n.iter().zip(NORMAL_WEIGHTS).map(|(m, w)| m * w).sum();
    sd + sn
}

/// Index of the best candidate; the first one wins ties.
pub fn select(rgb: &ImageGrid, candidates: &[(DepthGrid, NormalGrid)]) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (i, (d, n)) in candidates.iter().enumerate() {
        let s = score(&depth_metrics(d, rgb), &normal_metrics(n, rgb));
        if s > best_score {
            best = i;
            best_score = s;
        }
    }
    best
}
