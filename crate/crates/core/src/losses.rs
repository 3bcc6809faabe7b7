//! Scale-and-shift-invariant depth loss with a multi-scale gradient-matching
//! regularizer.
//!
//! The prediction `d` is aligned to the ground truth `g` by least squares,
//! `(s, t) = argmin Σ (s·d + t − g)²` over valid pixels, and the residual
//! `R = s·d + t − g` drives both terms:
//!
//! ```text
//! ssi   = 1/(2M) Σ ρ(R_i)
//! reg   = 1/M Σ_k Σ_i |∂x R^k_i| + |∂y R^k_i|      (R^k = R pooled by 2^(k-1))
//! total = ssi + α · reg
//! ```
//!
//! `M` is the full-resolution valid-pixel count. A pooled cell is valid only
//! if every pixel it covers is valid, and a forward difference counts only
//! between two valid cells. Gradients treat `(s, t)` as constants.

use serde::{Deserialize, Serialize};

use crate::calculus::avg_pool;
use crate::error::{Error, Result};
use crate::grid::{Grid, Mask};

/// Residuals closer than this to zero make the L1 gradient undefined.
pub const KINK_TOLERANCE: f64 = 1e-6;
/// Central-difference step used by [`fd_check`].
pub const FD_STEP: f64 = 1e-4;
/// Gradient magnitudes below this are compared in absolute terms by
/// [`fd_check`].
pub const FD_DENOMINATOR_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Rho {
    L1,
    L2,
}

impl Rho {
    fn value(self, r: f64) -> f64 {
        match self {
            Rho::L1 => r.abs(),
            Rho::L2 => r * r,
        }
    }

    fn derivative(self, r: f64) -> f64 {
        match self {
            Rho::L1 => sign(r),
            Rho::L2 => 2.0 * r,
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub scale: f64,
    pub shift: f64,
}

impl Alignment {
    pub const IDENTITY: Alignment = Alignment {
        scale: 1.0,
        shift: 0.0,
    };

    pub fn apply(&self, v: f64) -> f64 {
        self.scale * v + self.shift
    }

    pub fn apply_grid(&self, d: &Grid<f64>) -> Grid<f64> {
        d.map(|v| self.apply(v))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub rho: Rho,
    /// Number of gradient-matching scales.
    pub scales: usize,
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            rho: Rho::L1,
            scales: 4,
            alpha: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ssi: f64,
    pub reg: f64,
    pub total: f64,
    pub alignment: Alignment,
    pub k: usize,
    pub alpha: f64,
    pub rho: Rho,
}

fn check_inputs(d: &Grid<f64>, gt: &Grid<f64>, mask: &Mask) -> Result<usize> {
    d.require_channels(1, "prediction")?;
    gt.require_channels(1, "ground truth")?;
    if !d.same_size(gt) {
        return Err(Error::Dimension(format!(
            "prediction {}x{} vs ground truth {}x{}",
            d.height(),
            d.width(),
            gt.height(),
            gt.width()
        )));
    }
    mask.check_matches(d)?;
    let m = mask.count();
    if m == 0 {
        return Err(Error::Parameter("mask has no valid pixels".into()));
    }
    Ok(m)
}

/// Closed-form least-squares scale and shift mapping `d` onto `gt` over the
/// mask.
pub fn align_lstsq(d: &Grid<f64>, gt: &Grid<f64>, mask: &Mask) -> Result<Alignment> {
    let m = check_inputs(d, gt, mask)?;
    if m < 2 {
        return Err(Error::DegenerateAlignment(
            "need at least 2 valid pixels".into(),
        ));
    }
    let valid = || {
        d.data()
            .iter()
            .zip(gt.data())
            .zip(mask.data())
            .filter(|(_, &ok)| ok)
            .map(|(p, _)| p)
    };
    let n = m as f64;
    let (sd, sg) = valid().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (md, mg) = (sd / n, sg / n);
    // centred normal equations
    let (var, cov, sq) = valid().fold((0.0, 0.0, 0.0), |(v, c, q), (x, y)| {
        let dx = x - md;
        (v + dx * dx, c + dx * (y - mg), q + x * x)
    });
    if !(var > 1e-24 * sq.max(f64::MIN_POSITIVE)) || !var.is_finite() {
        return Err(Error::DegenerateAlignment(
            "prediction is constant on the mask".into(),
        ));
    }
    let scale = cov / var;
    Ok(Alignment {
        scale,
        shift: mg - scale * md,
    })
}

/// `s·d + t − gt` on valid pixels, 0 elsewhere.
fn residual(d: &Grid<f64>, gt: &Grid<f64>, mask: &Mask, al: Alignment) -> Grid<f64> {
    let data = d
        .data()
        .iter()
        .zip(gt.data())
        .zip(mask.data())
        .map(|((&x, &g), &ok)| if ok { al.apply(x) - g } else { 0.0 })
        .collect();
    Grid::from_raw(d.height(), d.width(), 1, data)
}

fn ssi_from_residual(r: &Grid<f64>, mask: &Mask, rho: Rho, m: usize) -> f64 {
    let sum: f64 = r
        .data()
        .iter()
        .zip(mask.data())
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| rho.value(v))
        .sum();
    sum / (2.0 * m as f64)
}

/// Largest usable scale count for an `h × w` grid.
pub fn max_scales(h: usize, w: usize) -> usize {
    let side = h.min(w);
    if side == 0 {
        0
    } else {
        side.ilog2() as usize + 1
    }
}

fn check_scales(h: usize, w: usize, k: usize) -> Result<()> {
    let max = max_scales(h, w);
    if k == 0 || k > max {
        return Err(Error::Parameter(format!(
            "{k} gradient scales requested for a {h}x{w} grid; the maximum feasible is {max}"
        )));
    }
    Ok(())
}

/// Residual and cell validity at one pyramid level.
struct Level {
    factor: usize,
    r: Grid<f64>,
    valid: Vec<bool>,
    counts: Vec<usize>,
}

fn pyramid(r: &Grid<f64>, mask: &Mask, k: usize) -> Result<Vec<Level>> {
    let (h, w) = (r.height(), r.width());
    let mask_grid = Grid::from_raw(
        h,
        w,
        1,
        mask.data()
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect(),
    );
    (0..k)
        .map(|level| {
            let factor = 1usize << level;
            let pooled = avg_pool(r, factor)?;
            let cover = avg_pool(&mask_grid, factor)?;
            let (ph, pw) = (pooled.height(), pooled.width());
            let mut counts = Vec::with_capacity(ph * pw);
            for py in 0..ph {
                let ny = (h - py * factor).min(factor);
                for px in 0..pw {
                    counts.push(ny * (w - px * factor).min(factor));
                }
            }
            // a cell is valid when its mean mask coverage is exactly 1
            let valid = cover.data().iter().map(|&c| c == 1.0).collect();
            Ok(Level {
                factor,
                r: pooled,
                valid,
                counts,
            })
        })
        .collect()
}

/// Visits every forward difference between two valid cells as
/// `(cell_a, cell_b, R_b − R_a)`.
fn for_each_difference(level: &Level, mut f: impl FnMut(usize, usize, f64)) {
    let (h, w) = (level.r.height(), level.r.width());
    let r = level.r.data();
    for y in 0..h {
        for x in 0..w {
            let a = y * w + x;
            if !level.valid[a] {
                continue;
            }
            if x + 1 < w && level.valid[a + 1] {
                f(a, a + 1, r[a + 1] - r[a]);
            }
            if y + 1 < h && level.valid[a + w] {
                f(a, a + w, r[a + w] - r[a]);
            }
        }
    }
}

fn reg_from_residual(r: &Grid<f64>, mask: &Mask, k: usize, m: usize) -> Result<f64> {
    let mut sum = 0.0;
    for level in pyramid(r, mask, k)? {
        for_each_difference(&level, |_, _, diff| sum += diff.abs());
    }
    Ok(sum / m as f64)
}

pub fn ssi_loss(d: &Grid<f64>, gt: &Grid<f64>, mask: &Mask, rho: Rho) -> Result<f64> {
    let m = check_inputs(d, gt, mask)?;
    let al = align_lstsq(d, gt, mask)?;
    Ok(ssi_from_residual(&residual(d, gt, mask, al), mask, rho, m))
}

pub fn grad_matching_loss(d: &Grid<f64>, gt: &Grid<f64>, mask: &Mask, k: usize) -> Result<f64> {
    let m = check_inputs(d, gt, mask)?;
    check_scales(d.height(), d.width(), k)?;
    let al = align_lstsq(d, gt, mask)?;
    reg_from_residual(&residual(d, gt, mask, al), mask, k, m)
}

/// Total loss under a fixed alignment; the function [`loss_gradient`]
/// differentiates.
pub fn frozen_loss(
    d: &Grid<f64>,
    gt: &Grid<f64>,
    mask: &Mask,
    cfg: &LossConfig,
    al: Alignment,
) -> Result<LossReport> {
    let m = check_inputs(d, gt, mask)?;
    check_scales(d.height(), d.width(), cfg.scales)?;
    let r = residual(d, gt, mask, al);
    let ssi = ssi_from_residual(&r, mask, cfg.rho, m);
    let reg = reg_from_residual(&r, mask, cfg.scales, m)?;
    Ok(LossReport {
        ssi,
        reg,
        total: ssi + cfg.alpha * reg,
        alignment: al,
        k: cfg.scales,
        alpha: cfg.alpha,
        rho: cfg.rho,
    })
}

/// Both terms under one shared alignment.
pub fn total_loss(
    d: &Grid<f64>,
    gt: &Grid<f64>,
    mask: &Mask,
    cfg: &LossConfig,
) -> Result<LossReport> {
    check_inputs(d, gt, mask)?;
    check_scales(d.height(), d.width(), cfg.scales)?;
    let al = align_lstsq(d, gt, mask)?;
    frozen_loss(d, gt, mask, cfg, al)
}

/// Mean of per-sample totals.
pub fn batch_loss(samples: &[(Grid<f64>, Grid<f64>, Mask)], cfg: &LossConfig) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let mut sum = 0.0;
    for (d, gt, mask) in samples {
        sum += total_loss(d, gt, mask, cfg)?.total;
    }
    Ok(sum / samples.len() as f64)
}

/// Analytic `∂ total / ∂ d` with the alignment held fixed.
pub fn loss_gradient(
    d: &Grid<f64>,
    gt: &Grid<f64>,
    mask: &Mask,
    cfg: &LossConfig,
    frozen: Alignment,
) -> Result<Grid<f64>> {
    let m = check_inputs(d, gt, mask)?;
    check_scales(d.height(), d.width(), cfg.scales)?;
    let (h, w) = (d.height(), d.width());
    let r = residual(d, gt, mask, frozen);
    if cfg.rho == Rho::L1 {
        let kinks: Vec<(usize, usize)> = (0..h * w)
            .filter(|&i| mask.data()[i] && r.data()[i].abs() < KINK_TOLERANCE)
            .map(|i| (i / w, i % w))
            .collect();
        if !kinks.is_empty() {
            return Err(Error::Kink { pixels: kinks });
        }
    }
    let mf = m as f64;
    // dL/dR, then chain through R = s·d + t
    let mut d_r = vec![0.0f64; h * w];
    for (i, g) in d_r.iter_mut().enumerate() {
        if mask.data()[i] {
            *g = cfg.rho.derivative(r.data()[i]) / (2.0 * mf);
        }
    }
    if cfg.alpha != 0.0 {
        for level in pyramid(&r, mask, cfg.scales)? {
            let pw = level.r.width();
            let mut d_cell = vec![0.0f64; level.r.data().len()];
            for_each_difference(&level, |a, b, diff| {
                let sg = sign(diff) / mf;
                d_cell[b] += sg;
                d_cell[a] -= sg;
            });
            for y in 0..h {
                for x in 0..w {
                    let c = (y / level.factor) * pw + x / level.factor;
                    if d_cell[c] != 0.0 {
                        d_r[y * w + x] += cfg.alpha * d_cell[c] / level.counts[c] as f64;
                    }
                }
            }
        }
    }
    let grad = d_r.into_iter().map(|g| g * frozen.scale).collect();
    Ok(Grid::from_raw(h, w, 1, grad))
}

/// Result of comparing the analytic gradient with central differences.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    /// Pixels skipped because a difference step would cross a kink of |·|.
    pub excluded: usize,
}

/// Pixels whose `±FD_STEP` perturbation can flip the sign of some absolute
/// value inside the loss.
fn near_kink_pixels(
    r: &Grid<f64>,
    mask: &Mask,
    cfg: &LossConfig,
    al: Alignment,
) -> Result<Vec<bool>> {
    let (h, w) = (r.height(), r.width());
    let margin = 4.0 * FD_STEP * al.scale.abs();
    let mut near = vec![false; h * w];
    if cfg.rho == Rho::L1 {
        for i in 0..h * w {
            if mask.data()[i] && r.data()[i].abs() <= margin {
                near[i] = true;
            }
        }
    }
    if cfg.alpha != 0.0 {
        for level in pyramid(r, mask, cfg.scales)? {
            let pw = level.r.width();
            let mut hot = vec![false; level.r.data().len()];
            for_each_difference(&level, |a, b, diff| {
                if diff.abs() <= margin {
                    hot[a] = true;
                    hot[b] = true;
                }
            });
            for y in 0..h {
                for x in 0..w {
                    if hot[(y / level.factor) * pw + x / level.factor] {
                        near[y * w + x] = true;
                    }
                }
            }
        }
    }
    Ok(near)
}

/// Central-difference check of [`loss_gradient`] on the frozen-alignment
/// loss, over valid pixels away from kinks.
pub fn fd_check(d: &Grid<f64>, gt: &Grid<f64>, mask: &Mask, cfg: &LossConfig) -> Result<FdReport> {
    let al = align_lstsq(d, gt, mask)?;
    let analytic = loss_gradient(d, gt, mask, cfg, al)?;
    let near = near_kink_pixels(&residual(d, gt, mask, al), mask, cfg, al)?;
    let mut probe = d.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    for i in 0..d.data().len() {
        if !mask.data()[i] {
            continue;
        }
        if near[i] {
            report.excluded += 1;
            continue;
        }
        let x0 = d.data()[i];
        probe.data_mut()[i] = x0 + FD_STEP;
        let up = frozen_loss(&probe, gt, mask, cfg, al)?.total;
        probe.data_mut()[i] = x0 - FD_STEP;
        let down = frozen_loss(&probe, gt, mask, cfg, al)?.total;
        probe.data_mut()[i] = x0;
        let fd = (up - down) / (2.0 * FD_STEP);
        let a = analytic.data()[i];
        let abs = (a - fd).abs();
        let rel = abs / a.abs().max(fd.abs()).max(FD_DENOMINATOR_FLOOR);
        report.max_abs_error = report.max_abs_error.max(abs);
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    Ok(report)
}
