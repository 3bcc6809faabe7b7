//! Raster containers shared by every other module.
//!
//! [`Grid`] is a dense row-major `height × width × channels` array. The
//! working precision for images on disk and in the network is `f32`
//! ([`ImageGrid`]); the loss module runs the same container in `f64`.

use num_traits::Float;

use crate::error::{Error, Result};

/// Dense row-major raster with interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<T>,
}

/// The universal `f32` raster.
pub type ImageGrid = Grid<f32>;
/// Single-channel grid of relative depth or disparity.
pub type DepthGrid<T = f32> = Grid<T>;
/// Three-channel grid of per-pixel `(nx, ny, nz)` vectors.
pub type NormalGrid<T = f32> = Grid<T>;

impl<T: Float> Grid<T> {
    /// Wraps `data`, checking its length and that every value is finite.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Dimension("grid needs at least one channel".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::Dimension(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!("non-finite value at flat index {i}")));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, T::zero())
    }

    /// Single-channel grid built from a per-pixel closure.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            channels: 1,
            data,
        }
    }

    /// Skips the finiteness scan. Internal producers only.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<T>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Value at `(y, x)` with coordinates clamped into the grid (replicate
    /// padding).
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize, c: usize) -> T {
        let yy = y.clamp(0, self.height as isize - 1) as usize;
        let xx = x.clamp(0, self.width as isize - 1) as usize;
        self.get(yy, xx, c)
    }

    /// Extracts one channel as a single-channel grid.
    pub fn channel(&self, c: usize) -> Self {
        assert!(c < self.channels, "channel {c} out of range");
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect();
        Self::from_raw(self.height, self.width, 1, data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self::from_raw(
            self.height,
            self.width,
            self.channels,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    /// Arithmetic mean over all values.
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.data.iter().map(|v| v.to_f64().unwrap()).sum();
        sum / self.data.len() as f64
    }

    pub fn same_size<U: Float>(&self, other: &Grid<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub(crate) fn require_channels(&self, channels: usize, what: &str) -> Result<()> {
        if self.channels != channels {
            return Err(Error::Dimension(format!(
                "{what} needs {channels} channel(s), got {}",
                self.channels
            )));
        }
        Ok(())
    }

    pub fn cast<U: Float>(&self) -> Grid<U> {
        Grid {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|v| U::from(*v).unwrap()).collect(),
        }
    }
}

/// Boolean validity mask over a grid's pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask length {} does not match {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Valid where the grid's first channel is finite and strictly positive.
    pub fn positive<T: Float>(grid: &Grid<T>) -> Self {
        Self::from_fn(grid.height(), grid.width(), |y, x| {
            let v = grid.get(y, x, 0);
            v.is_finite() && v > T::zero()
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Dimension("mask sizes differ".into()));
        }
        Ok(Mask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a && *b)
                .collect(),
        })
    }

    pub(crate) fn check_matches<T: Float>(&self, grid: &Grid<T>) -> Result<()> {
        if self.height != grid.height() || self.width != grid.width() {
            return Err(Error::Dimension(format!(
                "mask {}x{} does not match grid {}x{}",
                self.height,
                self.width,
                grid.height(),
                grid.width()
            )));
        }
        Ok(())
    }
}
