//! Image calculus: Sobel gradients, pooling, local variance, normalization
//! and edge binarization.
//!
//! Borders use replicate padding throughout.

use num_traits::Float;

use crate::error::{Error, Result};
use crate::grid::{Grid, ImageGrid, Mask};

/// Horizontal Sobel kernel, row-major, before the 1/8 scale.
pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
/// Vertical Sobel kernel, row-major, before the 1/8 scale.
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

/// Luminance weights applied to RGB before edge detection.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// Output of [`sobel_gradients`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub gx: Grid<T>,
    pub gy: Grid<T>,
    pub magnitude: Grid<T>,
}

/// 3×3 Sobel responses scaled by 1/8, so a unit-slope ramp has gradient 1.
pub fn sobel_gradients<T: Float>(g: &Grid<T>) -> Result<Gradients<T>> {
    g.require_channels(1, "sobel_gradients")?;
    let (h, w) = (g.height(), g.width());
    if h < 3 || w < 3 {
        return Err(Error::Dimension(format!(
            "sobel needs at least 3x3, got {h}x{w}"
        )));
    }
    let eighth = T::from(0.125).unwrap();
    let two = T::from(2.0).unwrap();
    let mut gx = Vec::with_capacity(h * w);
    let mut gy = Vec::with_capacity(h * w);
    let mut mag = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let at = |dy: isize, dx: isize| g.get_clamped(y as isize + dy, x as isize + dx, 0);
            // paired differences, so flat neighbourhoods give exactly zero
            let sx =
                (at(-1, 1) - at(-1, -1)) + two * (at(0, 1) - at(0, -1)) + (at(1, 1) - at(1, -1));
            let sy =
                (at(1, -1) - at(-1, -1)) + two * (at(1, 0) - at(-1, 0)) + (at(1, 1) - at(-1, 1));
            let (sx, sy) = (sx * eighth, sy * eighth);
            gx.push(sx);
            gy.push(sy);
            mag.push((sx * sx + sy * sy).sqrt());
        }
    }
    Ok(Gradients {
        gx: Grid::from_raw(h, w, 1, gx),
        gy: Grid::from_raw(h, w, 1, gy),
        magnitude: Grid::from_raw(h, w, 1, mag),
    })
}

/// Affine map of the value range onto `[0, 1]`. A constant grid maps to all
/// zeros.
pub fn minmax_normalize<T: Float>(d: &Grid<T>) -> Grid<T> {
    let lo = d.min_value();
    let hi = d.max_value();
    if !(hi > lo) {
        return d.map(|_| T::zero());
    }
    let range = hi - lo;
    d.map(|v| ((v - lo) / range).max(T::zero()).min(T::one()))
}

/// Block-mean downsampling by an integer factor, per channel. Trailing
/// partial blocks average only the pixels they cover.
pub fn avg_pool<T: Float>(g: &Grid<T>, factor: usize) -> Result<Grid<T>> {
    if factor < 1 {
        return Err(Error::Parameter("pooling factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(g.clone());
    }
    let (h, w, c) = g.shape();
    let oh = h.div_ceil(factor);
    let ow = w.div_ceil(factor);
    let mut out = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        let ys = oy * factor..((oy + 1) * factor).min(h);
        for ox in 0..ow {
            let xs = ox * factor..((ox + 1) * factor).min(w);
            let n = T::from(ys.len() * xs.len()).unwrap();
            for ch in 0..c {
                let mut s = T::zero();
                for y in ys.clone() {
                    for x in xs.clone() {
                        s = s + g.get(y, x, ch);
                    }
                }
                out.push(s / n);
            }
        }
    }
    Ok(Grid::from_raw(oh, ow, c, out))
}

/// Per-pixel variance over a centred `window × window` neighbourhood,
/// computed from box-filtered first and second moments and clamped at 0.
pub fn box_local_variance<T: Float>(d: &Grid<T>, window: usize) -> Result<Grid<T>> {
    d.require_channels(1, "box_local_variance")?;
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "variance window must be odd and >= 3, got {window}"
        )));
    }
    let (h, w) = (d.height(), d.width());
    let r = (window / 2) as isize;
    // Summed-area tables over the replicate-padded grid.
    let ph = h + 2 * r as usize;
    let pw = w + 2 * r as usize;
    let mut s1 = vec![0.0f64; (ph + 1) * (pw + 1)];
    let mut s2 = vec![0.0f64; (ph + 1) * (pw + 1)];
    for py in 0..ph {
        let mut row1 = 0.0;
        let mut row2 = 0.0;
        for px in 0..pw {
            let v = d
                .get_clamped(py as isize - r, px as isize - r, 0)
                .to_f64()
                .unwrap();
            row1 += v;
            row2 += v * v;
            let i = (py + 1) * (pw + 1) + px + 1;
            s1[i] = s1[i - (pw + 1)] + row1;
            s2[i] = s2[i - (pw + 1)] + row2;
        }
    }
    let rect = |s: &[f64], y0: usize, x0: usize| {
        let y1 = y0 + window;
        let x1 = x0 + window;
        s[y1 * (pw + 1) + x1] - s[y0 * (pw + 1) + x1] - s[y1 * (pw + 1) + x0]
            + s[y0 * (pw + 1) + x0]
    };
    let n = (window * window) as f64;
    let out = Grid::from_fn(h, w, |y, x| {
        let m1 = rect(&s1, y, x) / n;
        let m2 = rect(&s2, y, x) / n;
        T::from((m2 - m1 * m1).max(0.0)).unwrap()
    });
    Ok(out)
}

/// Nearest-rank percentile of `values` (which need not be sorted).
pub fn percentile_threshold<T: Float>(values: &[T], percentile: f64) -> T {
    let mut sorted: Vec<T> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let n = sorted.len();
    let rank = ((percentile / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Binary edge map: pixels whose magnitude reaches the nearest-rank
/// `percentile` threshold and is nonzero.
pub fn edge_mask<T: Float>(magnitude: &Grid<T>, percentile: f64) -> Result<Mask> {
    magnitude.require_channels(1, "edge_mask")?;
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::Parameter(format!(
            "percentile must lie in (0, 100), got {percentile}"
        )));
    }
    if magnitude.pixel_count() == 0 {
        return Ok(Mask::full(0, 0));
    }
    let thr = percentile_threshold(magnitude.data(), percentile);
    let data = magnitude
        .data()
        .iter()
        .map(|&v| v > T::zero() && v >= thr)
        .collect();
    Mask::new(magnitude.height(), magnitude.width(), data)
}

/// Grayscale reduction of an RGB grid; single-channel input passes through.
pub fn luminance(rgb: &ImageGrid) -> Result<ImageGrid> {
    match rgb.channels() {
        1 => Ok(rgb.clone()),
        3 => {
            let [wr, wg, wb] = LUMA_WEIGHTS;
            let data = rgb
                .data()
                .chunks_exact(3)
                .map(|p| wr * p[0] + wg * p[1] + wb * p[2])
                .collect();
            Ok(Grid::from_raw(rgb.height(), rgb.width(), 1, data))
        }
        c => Err(Error::Dimension(format!(
            "luminance needs 1 or 3 channels, got {c}"
        ))),
    }
}

/// Rescales each 3-vector to unit length: `v / max(|v|, eps)`. Exactly zero
/// vectors become `(0, 0, 1)`.
pub fn normalize_normals<T: Float>(n: &Grid<T>, eps: T) -> Result<Grid<T>> {
    n.require_channels(3, "normalize_normals")?;
    let mut data = Vec::with_capacity(n.data().len());
    for p in n.data().chunks_exact(3) {
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if norm == T::zero() {
            data.extend([T::zero(), T::zero(), T::one()]);
        } else {
            let d = norm.max(eps);
            data.extend([p[0] / d, p[1] / d, p[2] / d]);
        }
    }
    Ok(Grid::from_raw(n.height(), n.width(), 3, data))
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest<T: Float>(g: &Grid<T>, factor: usize) -> Grid<T> {
    let (h, w, c) = g.shape();
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(oh * ow * c);
    for y in 0..oh {
        for x in 0..ow {
            for ch in 0..c {
                out.push(g.get(y / factor, x / factor, ch));
            }
        }
    }
    Grid::from_raw(oh, ow, c, out)
}
