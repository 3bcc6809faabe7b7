//! Synthetic scenes and on-disk corpora shared by the integration tests.
#![allow(dead_code)]

pub mod oracle;

use std::fs;
use std::path::{Path, PathBuf};

use depthkit::calculus::sobel_gradients;
use depthkit::codec::{write_normals, write_pfm, write_png16, write_rgb8, Raster8};
use depthkit::{DepthGrid, Grid, ImageGrid, NormalGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Scene {
    pub rgb: ImageGrid,
    pub depth: DepthGrid,
    pub normals: NormalGrid,
}

struct Rect {
    y0: usize,
    x0: usize,
    y1: usize,
    x1: usize,
    depth: f32,
    color: [f32; 3],
}

/// Piecewise-planar scene: a tilted background with a few fronto-parallel
/// rectangles, colored so that depth edges coincide with color edges.
pub fn scene(h: usize, w: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rects: Vec<Rect> = (0..rng.gen_range(2..5))
        .map(|_| {
            let y0 = rng.gen_range(0..h - 4);
            let x0 = rng.gen_range(0..w - 4);
            Rect {
                y0,
                x0,
                y1: rng.gen_range(y0 + 3..h),
                x1: rng.gen_range(x0 + 3..w),
                depth: rng.gen_range(0.2..0.6),
                color: [rng.gen(), rng.gen(), rng.gen()],
            }
        })
        .collect();
    let tilt: f32 = rng.gen_range(0.1..0.3);
    let mut depth = DepthGrid::zeros(h, w, 1);
    let mut rgb = ImageGrid::zeros(h, w, 3);
    for y in 0..h {
        for x in 0..w {
            let mut d = 0.7 + tilt * y as f32 / h as f32;
            let mut c = [0.3, 0.35, 0.4];
            for r in &rects {
                if (r.y0..r.y1).contains(&y) && (r.x0..r.x1).contains(&x) {
                    d = r.depth;
                    c = r.color;
                }
            }
            depth.set(y, x, 0, d);
            for (ch, v) in c.iter().enumerate() {
                let noise: f32 = rng.gen_range(-0.02..0.02);
                rgb.set(y, x, ch, (v + noise).clamp(0.0, 1.0));
            }
        }
    }
    let normals = normals_from_depth(&depth, 8.0);
    Scene {
        rgb,
        depth,
        normals,
    }
}

/// Unit normals `(-gx, -gy, 1)` of a depth map scaled by `gain`.
pub fn normals_from_depth(depth: &DepthGrid, gain: f32) -> NormalGrid {
    let g = sobel_gradients(depth).unwrap();
    let (h, w) = (depth.height(), depth.width());
    let mut data = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        let v = [-gain * g.gx.data()[i], -gain * g.gy.data()[i], 1.0];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        data.extend(v.map(|c| c / n));
    }
    Grid::new(h, w, 3, data).unwrap()
}

/// A worse teacher: box-blurred depth plus noise, normals derived from it.
pub fn degrade(s: &Scene, blur: usize, noise: f32, seed: u64) -> (DepthGrid, NormalGrid) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (s.depth.height(), s.depth.width());
    let r = blur as isize;
    let depth = DepthGrid::from_fn(h, w, |y, x| {
        let mut sum = 0.0;
        let mut n = 0.0;
        for dy in -r..=r {
            for dx in -r..=r {
                sum += s.depth.get_clamped(y as isize + dy, x as isize + dx, 0);
                n += 1.0;
            }
        }
        (sum / n + rng.gen_range(-noise..=noise)).clamp(0.01, 1.0)
    });
    let normals = normals_from_depth(&depth, 8.0);
    (depth, normals)
}

pub fn to_raster8(rgb: &ImageGrid) -> Raster8 {
    Raster8 {
        height: rgb.height(),
        width: rgb.width(),
        channels: 3,
        data: rgb
            .data()
            .iter()
            .map(|v| (v * 255.0).round() as u8)
            .collect(),
    }
}

pub struct Corpus {
    pub rgb_dir: PathBuf,
    pub model_dirs: Vec<PathBuf>,
}

/// Writes `images` scenes and `models` teachers of increasing degradation.
/// Depth alternates between PFM and PNG16 across models.
pub fn write_corpus(root: &Path, images: usize, models: usize, size: usize, seed: u64) -> Corpus {
    let rgb_dir = root.join("rgb");
    fs::create_dir_all(&rgb_dir).unwrap();
    let model_dirs: Vec<PathBuf> = (0..models)
        .map(|m| root.join(format!("model{m}")))
        .collect();
    for d in &model_dirs {
        fs::create_dir_all(d).unwrap();
    }
    for i in 0..images {
        let s = scene(size, size, seed * 1000 + i as u64);
        let name = format!("img{i:03}");
        write_rgb8(&rgb_dir.join(format!("{name}.png")), &to_raster8(&s.rgb)).unwrap();
        for (m, dir) in model_dirs.iter().enumerate() {
            let (depth, normals) = if m == 0 && i % 2 == 0 {
                (s.depth.clone(), s.normals.clone())
            } else {
                degrade(&s, m % 3 + 1, 0.01 * m as f32, seed ^ (i * 31 + m) as u64)
            };
            if m % 2 == 0 {
                write_pfm(&dir.join(format!("{name}_depth.pfm")), &depth).unwrap();
            } else {
                write_png16(&dir.join(format!("{name}_depth.png")), &depth).unwrap();
            }
            write_normals(&dir.join(format!("{name}_normal.png")), &normals).unwrap();
        }
    }
    Corpus {
        rgb_dir,
        model_dirs,
    }
}

pub fn random_grid(h: usize, w: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Grid<f64> {
    Grid::new(h, w, 1, (0..h * w).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

pub fn random_unit_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Grid<f64> {
    let mut data = Vec::with_capacity(h * w * 3);
    for _ in 0..h * w {
        let v: [f64; 3] = loop {
            let v = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n2: f64 = v.iter().map(|c| c * c).sum();
            if n2 > 1e-4 && n2 <= 1.0 {
                break v;
            }
        };
        let n = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        data.extend(v.map(|c| c / n));
    }
    Grid::new(h, w, 3, data).unwrap()
}

/// Smooth random field in roughly `[-1, 1]`: a few random plane waves.
pub fn smooth_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let waves: Vec<[f32; 4]> = (0..3)
        .map(|_| {
            [
                rng.gen_range(0.05..0.6),
                rng.gen_range(0.05..0.6),
                rng.gen_range(0.0..6.3),
                rng.gen_range(0.2..1.0),
            ]
        })
        .collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let v: f32 = waves
                .iter()
                .map(|[fy, fx, ph, a]| a * (fy * y as f32 + fx * x as f32 + ph).sin())
                .sum();
            out.push(v / 3.0);
        }
    }
    out
}

/// An RGB image and `n` candidate depth/normal pairs of varied quality:
/// each candidate mixes the image's own structure, an unrelated smooth
/// field and white noise in random proportions.
pub fn random_candidate_set(
    size: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> (ImageGrid, Vec<(DepthGrid, NormalGrid)>) {
    let base = smooth_field(size, size, rng);
    let mut rgb_data = Vec::with_capacity(size * size * 3);
    for v in &base {
        for _ in 0..3 {
            let noise: f32 = rng.gen_range(-0.1..0.1);
            rgb_data.push((0.5 + 0.4 * v + noise).clamp(0.0, 1.0));
        }
    }
    let rgb = ImageGrid::new(size, size, 3, rgb_data).unwrap();
    let candidates = (0..n)
        .map(|_| {
            let other = smooth_field(size, size, rng);
            let (a, b, c): (f32, f32, f32) = (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..0.3),
            );
            let depth: Vec<f32> = base
                .iter()
                .zip(&other)
                .map(|(s, o)| 1.0 + a * s + b * o + c * rng.gen_range(-1.0f32..1.0))
                .collect();
            let depth = DepthGrid::new(size, size, 1, depth).unwrap();
            let gain = rng.gen_range(1.0..20.0);
            let jitter = rng.gen_range(0.0..0.5f32);
            let mut normals = normals_from_depth(&depth, gain);
            for v in normals.data_mut() {
                *v += jitter * rng.gen_range(-1.0f32..1.0);
            }
            (depth, normals)
        })
        .collect();
    (rgb, candidates)
}
