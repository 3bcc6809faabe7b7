//! File codecs: 16-bit grayscale PNG and PFM for depth, 8-bit RGB PNG for
//! normals and colour images.
//!
//! PNG16 depth stores `value / 65535`. Normals store each component as
//! `v / 255 * 2 - 1`. PFM follows the usual convention: `Pf` (one channel)
//! or `PF` (three channels), then `width height`, then a scale whose sign
//! selects the byte order (negative = little-endian), then rows bottom-up.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::calculus::normalize_normals;
use crate::error::{Error, Result};
use crate::grid::{DepthGrid, ImageGrid, Mask, NormalGrid};

/// Denominator guard used when renormalizing decoded normals.
pub const NORMAL_DECODE_EPS: f32 = 1e-7;

/// Plain 8-bit raster, as decoded from or encoded to a PNG.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster8 {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn image_err(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn open_image(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))
}

/// Reads any supported colour image into a 3-channel grid in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<ImageGrid> {
    let img = open_image(path)?.to_rgb32f();
    let (w, h) = img.dimensions();
    ImageGrid::new(h as usize, w as usize, 3, img.into_raw())
}

pub fn read_rgb8(path: &Path) -> Result<Raster8> {
    let img = open_image(path)?;
    if img.color().channel_count() != 3 {
        return Err(Error::Format(format!(
            "{}: expected 3-channel RGB, got {:?}",
            path.display(),
            img.color()
        )));
    }
    let img = img.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Raster8 {
        height: h as usize,
        width: w as usize,
        channels: 3,
        data: img.into_raw(),
    })
}

pub fn write_rgb8(path: &Path, raster: &Raster8) -> Result<()> {
    if raster.channels != 3 {
        return Err(Error::Format("RGB PNG needs 3 channels".into()));
    }
    let buf: ImageBuffer<Rgb<u8>, _> = ImageBuffer::from_raw(
        raster.width as u32,
        raster.height as u32,
        raster.data.clone(),
    )
    .ok_or_else(|| Error::Dimension("raster buffer too small".into()))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Reads a grayscale PNG as `value / 65535`. 8-bit files are widened first.
pub fn read_png16(path: &Path) -> Result<DepthGrid> {
    let img = open_image(path)?;
    if img.color().channel_count() != 1 {
        return Err(Error::Format(format!(
            "{}: depth PNG must be grayscale, got {:?}",
            path.display(),
            img.color()
        )));
    }
    let img = img.to_luma16();
    let (w, h) = img.dimensions();
    let data = img
        .into_raw()
        .into_iter()
        .map(|v| v as f32 / 65535.0)
        .collect();
    DepthGrid::new(h as usize, w as usize, 1, data)
}

/// Quantizes `[0, 1]` values to 16 bits. Values outside are clamped.
pub fn quantize_u16(grid: &DepthGrid) -> Result<Vec<u16>> {
    grid.require_channels(1, "PNG16 depth")?;
    Ok(grid
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect())
}

pub fn write_png16(path: &Path, grid: &DepthGrid) -> Result<()> {
    let data = quantize_u16(grid)?;
    let buf: ImageBuffer<Luma<u16>, _> =
        ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, data)
            .ok_or_else(|| Error::Dimension("raster buffer too small".into()))?;
    buf.save(path).map_err(|e| image_err(path, e))
}

/// Parses a PFM byte stream.
pub fn decode_pfm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PFM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("bad PFM magic {other:?}"))),
    };
    let parse_dim = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PFM dimension {s:?}")))
    };
    let width = parse_dim(token()?)?;
    let height = parse_dim(token()?)?;
    let scale_tok = token()?;
    let scale: f32 = scale_tok
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format("PFM scale must be nonzero".into()));
    }
    let little = scale < 0.0;
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let n = width * height * channels;
    let raw = bytes
        .get(start..start + 4 * n)
        .ok_or_else(|| Error::Format("truncated PFM raster".into()))?;
    let mut data = vec![0f32; n];
    let row = width * channels;
    for (i, chunk) in raw.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let file_row = i / row;
        let dst = (height - 1 - file_row) * row + i % row;
        data[dst] = v;
    }
    ImageGrid::new(height, width, channels, data)
}

/// Serializes a 1- or 3-channel grid as little-endian PFM.
pub fn encode_pfm(grid: &ImageGrid) -> Result<Vec<u8>> {
    let magic = match grid.channels() {
        1 => "Pf",
        3 => "PF",
        c => {
            return Err(Error::Format(format!(
                "PFM supports 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n-1.0\n", grid.width(), grid.height()).into_bytes();
    let row = grid.width() * grid.channels();
    for y in (0..grid.height()).rev() {
        for v in &grid.data()[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_pfm(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_pfm(path: &Path, grid: &ImageGrid) -> Result<()> {
    let bytes = encode_pfm(grid)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a depth map by extension: `.pfm` or grayscale PNG.
pub fn read_depth(path: &Path) -> Result<DepthGrid> {
    let is_pfm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pfm"));
    let g = if is_pfm {
        read_pfm(path)?
    } else {
        read_png16(path)?
    };
    g.require_channels(1, "depth map")?;
    Ok(g)
}

/// Maps 8-bit RGB to unit normals: `v / 255 * 2 - 1`, then renormalized.
/// Black `(0, 0, 0)` pixels mark missing normals and decode to `(0, 0, 1)`,
/// as does any zero raw vector.
pub fn decode_normals(raster: &Raster8) -> Result<NormalGrid> {
    if raster.channels != 3 {
        return Err(Error::Format(format!(
            "normal map needs 3 channels, got {}",
            raster.channels
        )));
    }
    if raster.data.len() != raster.height * raster.width * 3 {
        return Err(Error::Dimension("normal raster length mismatch".into()));
    }
    let mut raw = Vec::with_capacity(raster.data.len());
    for px in raster.data.chunks_exact(3) {
        if px == [0, 0, 0] {
            raw.extend([0.0, 0.0, 0.0]);
        } else {
            raw.extend(px.iter().map(|&v| v as f32 / 255.0 * 2.0 - 1.0));
        }
    }
    let g = NormalGrid::new(raster.height, raster.width, 3, raw)?;
    normalize_normals(&g, NORMAL_DECODE_EPS)
}

/// Inverse of [`decode_normals`] up to quantization.
pub fn encode_normals(normals: &NormalGrid) -> Result<Raster8> {
    normals.require_channels(3, "normal encoding")?;
    Ok(Raster8 {
        height: normals.height(),
        width: normals.width(),
        channels: 3,
        data: normals
            .data()
            .iter()
            .map(|&v| ((v.clamp(-1.0, 1.0) + 1.0) * 0.5 * 255.0).round() as u8)
            .collect(),
    })
}

pub fn read_normals(path: &Path) -> Result<NormalGrid> {
    decode_normals(&read_rgb8(path)?)
}

pub fn write_normals(path: &Path, normals: &NormalGrid) -> Result<()> {
    write_rgb8(path, &encode_normals(normals)?)
}

/// Reads a validity mask: any nonzero pixel is valid.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let img = open_image(path)?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::new(
        h as usize,
        w as usize,
        img.into_raw().into_iter().map(|v| v != 0).collect(),
    )
}
