//! C ABI over depthkit.
//!
//! Every function returns a [`DkStatus`]. On failure the message is kept in a
//! thread-local slot readable through [`dk_last_error`]. Grids and networks
//! are opaque handles owned by the caller and released with their `_free`
//! function. Masks are optional `height * width` byte arrays where nonzero
//! marks a valid pixel; pass null for all-valid.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use depthkit::codec::{read_depth, read_normals, read_rgb};
use depthkit::dnesa::{
    combined_score, evaluate_depth_map, evaluate_normal_map, DepthQuality, DepthWeights,
    NormalQuality, NormalWeights, ScoreWeights,
};
use depthkit::losses::{fd_check, total_loss, LossConfig, Rho};
use depthkit::metrics::{
    align_for_eval, depth_metrics, normal_metrics, AlignMode, DELTA_THRESHOLDS,
};
use depthkit::net::{receptive_field, NetConfig, Network};
use depthkit::{Error, Grid, ImageGrid, Mask};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DkStatus {
    Ok = 0,
    /// Null pointer or out-of-range argument.
    InvalidArgument = 1,
    /// Bad shapes, unreadable or malformed data.
    DataError = 2,
    /// Alignment or gradient check could not be carried out.
    Degenerate = 3,
    /// Internal panic caught at the boundary.
    Internal = 4,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DkAlign {
    None = 0,
    Lstsq = 1,
    Median = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DkRho {
    L1 = 0,
    L2 = 1,
}

/// Opaque `height × width × channels` float grid.
pub struct DkGrid(ImageGrid);

/// Opaque network with fixed weights.
pub struct DkNetwork(Network);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DkDepthQuality {
    pub edge_consistency: f64,
    pub local_variance: f64,
    pub complexity: f64,
    pub sharpness: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DkNormalQuality {
    pub edge_consistency: f64,
    pub orientation_variance: f64,
    pub sharpness: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DkScoreWeights {
    pub depth: DkDepthQuality,
    pub normal: DkNormalQuality,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DkScores {
    pub depth: f64,
    pub normal: f64,
    pub combined: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DkDepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub log10: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub pixel_count: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DkNormalMetrics {
    pub mean_deg: f64,
    pub median_deg: f64,
    pub rms_deg: f64,
    pub acc_11_25: f64,
    pub acc_22_5: f64,
    pub acc_30: f64,
    pub pixel_count: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DkLossConfig {
    pub rho: DkRho,
    pub scales: usize,
    pub alpha: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DkLossReport {
    pub ssi: f64,
    pub reg: f64,
    pub total: f64,
    pub scale: f64,
    pub shift: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DkFdReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Arg(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type FfiResult<T> = std::result::Result<T, Failure>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> DkStatus {
    let (status, msg) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => (DkStatus::Ok, String::new()),
        Ok(Err(Failure::Arg(m))) => (DkStatus::InvalidArgument, m),
        Ok(Err(Failure::Lib(e))) => {
            let s = if e.exit_code() == 3 {
                DkStatus::Degenerate
            } else {
                DkStatus::DataError
            };
            (s, e.to_string())
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            (DkStatus::Internal, m)
        }
    };
    set_last_error(&msg);
    status
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure::Arg(format!("{what} is null")))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> FfiResult<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| Failure::Arg(format!("{what} is null")))
}

unsafe fn path_arg(p: *const c_char) -> FfiResult<PathBuf> {
    if p.is_null() {
        return Err(Failure::Arg("path is null".into()));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Arg("path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn mask_arg(mask: *const u8, like: &ImageGrid) -> Mask {
    let (h, w) = (like.height(), like.width());
    if mask.is_null() {
        return Mask::full(h, w);
    }
    let bytes = std::slice::from_raw_parts(mask, h * w);
    Mask::new(h, w, bytes.iter().map(|&b| b != 0).collect()).expect("length matches")
}

fn boxed_grid(g: ImageGrid) -> *mut DkGrid {
    Box::into_raw(Box::new(DkGrid(g)))
}

/// Message of the last failed call on this thread, or an empty string.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn dk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Copies `height * width * channels` floats (row-major, channels last).
///
/// # Safety
/// `data` must point to that many floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_grid_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f32,
    out_grid: *mut *mut DkGrid,
) -> DkStatus {
    guard(|| {
        let slot = out(out_grid, "out_grid")?;
        *slot = ptr::null_mut();
        if data.is_null() {
            return Err(Failure::Arg("data is null".into()));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Failure::Arg("grid size overflows".into()))?;
        let values = std::slice::from_raw_parts(data, n).to_vec();
        *slot = boxed_grid(Grid::new(height, width, channels, values)?);
        Ok(())
    })
}

/// # Safety
/// `grid` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn dk_grid_free(grid: *mut DkGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Writes the shape of `grid`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_grid_shape(
    grid: *const DkGrid,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> DkStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        *out(height, "height")? = g.height();
        *out(width, "width")? = g.width();
        *out(channels, "channels")? = g.channels();
        Ok(())
    })
}

/// Borrowed pointer to the grid's values, valid while the grid lives.
///
/// # Safety
/// `grid` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn dk_grid_data(grid: *const DkGrid) -> *const f32 {
    match grid.as_ref() {
        Some(g) => g.0.data().as_ptr(),
        None => ptr::null(),
    }
}

unsafe fn read_with(
    path: *const c_char,
    out_grid: *mut *mut DkGrid,
    read: fn(&std::path::Path) -> depthkit::Result<ImageGrid>,
) -> DkStatus {
    guard(|| {
        let slot = out(out_grid, "out_grid")?;
        *slot = ptr::null_mut();
        *slot = boxed_grid(read(&path_arg(path)?)?);
        Ok(())
    })
}

/// Reads a depth map (`.pfm`, otherwise 16-bit PNG).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_grid` writable.
#[no_mangle]
pub unsafe extern "C" fn dk_read_depth(
    path: *const c_char,
    out_grid: *mut *mut DkGrid,
) -> DkStatus {
    read_with(path, out_grid, read_depth)
}

/// Reads an 8-bit normal map into unit vectors.
///
/// # Safety
/// As for [`dk_read_depth`].
#[no_mangle]
pub unsafe extern "C" fn dk_read_normals(
    path: *const c_char,
    out_grid: *mut *mut DkGrid,
) -> DkStatus {
    read_with(path, out_grid, read_normals)
}

/// Reads a colour image into `[0, 1]` RGB.
///
/// # Safety
/// As for [`dk_read_depth`].
#[no_mangle]
pub unsafe extern "C" fn dk_read_rgb(path: *const c_char, out_grid: *mut *mut DkGrid) -> DkStatus {
    read_with(path, out_grid, read_rgb)
}

fn depth_quality_out(q: DepthQuality) -> DkDepthQuality {
    DkDepthQuality {
        edge_consistency: q.edge_consistency,
        local_variance: q.local_variance,
        complexity: q.complexity,
        sharpness: q.sharpness,
    }
}

fn normal_quality_out(q: NormalQuality) -> DkNormalQuality {
    DkNormalQuality {
        edge_consistency: q.edge_consistency,
        orientation_variance: q.orientation_variance,
        sharpness: q.sharpness,
    }
}

/// Quality record of a depth candidate against its RGB image.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_evaluate_depth(
    depth: *const DkGrid,
    rgb: *const DkGrid,
    out_quality: *mut DkDepthQuality,
) -> DkStatus {
    guard(|| {
        let q = evaluate_depth_map(&deref(depth, "depth")?.0, &deref(rgb, "rgb")?.0)?;
        *out(out_quality, "out_quality")? = depth_quality_out(q);
        Ok(())
    })
}

/// Quality record of a normal candidate against its RGB image.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_evaluate_normals(
    normals: *const DkGrid,
    rgb: *const DkGrid,
    out_quality: *mut DkNormalQuality,
) -> DkStatus {
    guard(|| {
        let q = evaluate_normal_map(&deref(normals, "normals")?.0, &deref(rgb, "rgb")?.0)?;
        *out(out_quality, "out_quality")? = normal_quality_out(q);
        Ok(())
    })
}

/// Writes the default score weights.
///
/// # Safety
/// `out_weights` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_default_weights(out_weights: *mut DkScoreWeights) -> DkStatus {
    guard(|| {
        let w = ScoreWeights::default();
        *out(out_weights, "out_weights")? = DkScoreWeights {
            depth: DkDepthQuality {
                edge_consistency: w.depth.edge_consistency,
                local_variance: w.depth.local_variance,
                complexity: w.depth.complexity,
                sharpness: w.depth.sharpness,
            },
            normal: DkNormalQuality {
                edge_consistency: w.normal.edge_consistency,
                orientation_variance: w.normal.orientation_variance,
                sharpness: w.normal.sharpness,
            },
        };
        Ok(())
    })
}

/// Weighted scores of a candidate pair. Null `weights` uses the defaults.
///
/// # Safety
/// `depth`, `normal` and `out_scores` must be valid; `weights` may be null.
#[no_mangle]
pub unsafe extern "C" fn dk_combined_score(
    depth: *const DkDepthQuality,
    normal: *const DkNormalQuality,
    weights: *const DkScoreWeights,
    out_scores: *mut DkScores,
) -> DkStatus {
    guard(|| {
        let d = deref(depth, "depth")?;
        let n = deref(normal, "normal")?;
        let w = match weights.as_ref() {
            None => ScoreWeights::default(),
            Some(w) => ScoreWeights {
                depth: DepthWeights {
                    edge_consistency: w.depth.edge_consistency,
                    local_variance: w.depth.local_variance,
                    complexity: w.depth.complexity,
                    sharpness: w.depth.sharpness,
                },
                normal: NormalWeights {
                    edge_consistency: w.normal.edge_consistency,
                    orientation_variance: w.normal.orientation_variance,
                    sharpness: w.normal.sharpness,
                },
            },
        };
        let dq = DepthQuality {
            edge_consistency: d.edge_consistency,
            local_variance: d.local_variance,
            complexity: d.complexity,
            sharpness: d.sharpness,
        };
        let nq = NormalQuality {
            edge_consistency: n.edge_consistency,
            orientation_variance: n.orientation_variance,
            sharpness: n.sharpness,
        };
        let s = combined_score(&dq, &nq, &w);
        *out(out_scores, "out_scores")? = DkScores {
            depth: s.depth,
            normal: s.normal,
            combined: s.combined,
        };
        Ok(())
    })
}

/// Depth error metrics after the chosen alignment.
///
/// # Safety
/// Grid pointers and `out_metrics` must be valid; `mask` is null or holds
/// `height * width` bytes.
#[no_mangle]
pub unsafe extern "C" fn dk_depth_metrics(
    pred: *const DkGrid,
    gt: *const DkGrid,
    mask: *const u8,
    align: DkAlign,
    out_metrics: *mut DkDepthMetrics,
) -> DkStatus {
    guard(|| {
        let p = &deref(pred, "pred")?.0;
        let g = &deref(gt, "gt")?.0;
        let m = mask_arg(mask, g);
        let mode = match align {
            DkAlign::None => AlignMode::None,
            DkAlign::Lstsq => AlignMode::Lstsq,
            DkAlign::Median => AlignMode::Median,
        };
        let (p, g) = (p.cast::<f64>(), g.cast::<f64>());
        let aligned = align_for_eval(&p, &g, &m, mode)?;
        let r = depth_metrics(&aligned, &g, &m, &DELTA_THRESHOLDS)?;
        *out(out_metrics, "out_metrics")? = DkDepthMetrics {
            abs_rel: r.abs_rel,
            sq_rel: r.sq_rel,
            rmse: r.rmse,
            log10: r.log10,
            delta1: r.delta1,
            delta2: r.delta2,
            delta3: r.delta3,
            pixel_count: r.pixel_count,
        };
        Ok(())
    })
}

/// Angular error metrics between two unit normal fields.
///
/// # Safety
/// As for [`dk_depth_metrics`].
#[no_mangle]
pub unsafe extern "C" fn dk_normal_metrics(
    pred: *const DkGrid,
    gt: *const DkGrid,
    mask: *const u8,
    out_metrics: *mut DkNormalMetrics,
) -> DkStatus {
    guard(|| {
        let p = &deref(pred, "pred")?.0;
        let g = &deref(gt, "gt")?.0;
        let m = mask_arg(mask, g);
        let r = normal_metrics(&p.cast(), &g.cast(), &m)?;
        *out(out_metrics, "out_metrics")? = DkNormalMetrics {
            mean_deg: r.mean_deg,
            median_deg: r.median_deg,
            rms_deg: r.rms_deg,
            acc_11_25: r.acc_11_25,
            acc_22_5: r.acc_22_5,
            acc_30: r.acc_30,
            pixel_count: r.pixel_count,
        };
        Ok(())
    })
}

unsafe fn loss_config(cfg: *const DkLossConfig) -> LossConfig {
    match cfg.as_ref() {
        None => LossConfig::default(),
        Some(c) => LossConfig {
            rho: match c.rho {
                DkRho::L1 => Rho::L1,
                DkRho::L2 => Rho::L2,
            },
            scales: c.scales,
            alpha: c.alpha,
        },
    }
}

/// Scale-and-shift invariant loss plus multi-scale gradient matching.
/// Null `config` uses L1, 4 scales, alpha 0.5.
///
/// # Safety
/// As for [`dk_depth_metrics`]; `config` may be null.
#[no_mangle]
pub unsafe extern "C" fn dk_total_loss(
    pred: *const DkGrid,
    gt: *const DkGrid,
    mask: *const u8,
    config: *const DkLossConfig,
    out_report: *mut DkLossReport,
) -> DkStatus {
    guard(|| {
        let p = &deref(pred, "pred")?.0;
        let g = &deref(gt, "gt")?.0;
        let m = mask_arg(mask, g);
        let r = total_loss(&p.cast(), &g.cast(), &m, &loss_config(config))?;
        *out(out_report, "out_report")? = DkLossReport {
            ssi: r.ssi,
            reg: r.reg,
            total: r.total,
            scale: r.alignment.scale,
            shift: r.alignment.shift,
        };
        Ok(())
    })
}

/// Compares the analytic loss gradient against central differences.
///
/// # Safety
/// As for [`dk_total_loss`].
#[no_mangle]
pub unsafe extern "C" fn dk_fd_check(
    pred: *const DkGrid,
    gt: *const DkGrid,
    mask: *const u8,
    config: *const DkLossConfig,
    out_report: *mut DkFdReport,
) -> DkStatus {
    guard(|| {
        let p = &deref(pred, "pred")?.0;
        let g = &deref(gt, "gt")?.0;
        let m = mask_arg(mask, g);
        let r = fd_check(&p.cast(), &g.cast(), &m, &loss_config(config))?;
        *out(out_report, "out_report")? = DkFdReport {
            max_rel_error: r.max_rel_error,
            max_abs_error: r.max_abs_error,
            checked: r.checked,
            excluded: r.excluded,
        };
        Ok(())
    })
}

/// Span of a single dilated convolution: `(kernel - 1) * dilation + 1`.
///
/// # Safety
/// `out_span` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_receptive_field(
    kernel: usize,
    dilation: usize,
    out_span: *mut usize,
) -> DkStatus {
    guard(|| {
        *out(out_span, "out_span")? = receptive_field(kernel, dilation)?;
        Ok(())
    })
}

/// Builds a network with seeded weights. `config` is null for the default
/// architecture, or `key = value` lines overriding it.
///
/// # Safety
/// `config` is null or NUL-terminated; `out_net` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dk_net_new(
    config: *const c_char,
    seed: u64,
    out_net: *mut *mut DkNetwork,
) -> DkStatus {
    guard(|| {
        let slot = out(out_net, "out_net")?;
        *slot = ptr::null_mut();
        let cfg = if config.is_null() {
            NetConfig::default()
        } else {
            let text = CStr::from_ptr(config)
                .to_str()
                .map_err(|_| Failure::Arg("config is not UTF-8".into()))?;
            NetConfig::parse_kv(text)?
        };
        *slot = Box::into_raw(Box::new(DkNetwork(Network::new(cfg, seed)?)));
        Ok(())
    })
}

/// # Safety
/// `net` must come from [`dk_net_new`] or be null.
#[no_mangle]
pub unsafe extern "C" fn dk_net_free(net: *mut DkNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dk_net_param_count(
    net: *const DkNetwork,
    out_count: *mut usize,
) -> DkStatus {
    guard(|| {
        *out(out_count, "out_count")? = deref(net, "net")?.0.weights.param_count();
        Ok(())
    })
}

/// Runs the network on an RGB grid whose sides are multiples of 16 and
/// returns the disparity and normals of output `scale`, which has
/// `1 / 2^scale` of the input resolution. Either output may be null if not
/// wanted.
///
/// # Safety
/// `net` and `rgb` must be valid handles; non-null outputs writable.
#[no_mangle]
pub unsafe extern "C" fn dk_net_forward(
    net: *const DkNetwork,
    rgb: *const DkGrid,
    scale: usize,
    out_disparity: *mut *mut DkGrid,
    out_normals: *mut *mut DkGrid,
) -> DkStatus {
    guard(|| {
        let n = &deref(net, "net")?.0;
        if !n.config.scales.contains(&scale) {
            return Err(Failure::Arg(format!(
                "scale {scale} is not produced; configured scales are {:?}",
                n.config.scales
            )));
        }
        let mut res = n.forward(&deref(rgb, "rgb")?.0)?;
        let s = res.scales.remove(&scale).expect("configured scale");
        if let Some(slot) = out_disparity.as_mut() {
            *slot = boxed_grid(s.disparity);
        }
        if let Some(slot) = out_normals.as_mut() {
            *slot = boxed_grid(s.normals);
        }
        Ok(())
    })
}
