//! Linear-light RGB rasters and single-channel mattes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest height/width accepted by the synthesis and estimation pipeline.
pub const MIN_PIPELINE_DIM: usize = 8;

/// Number of colour channels carried by every [`ImageBuffer`].
pub const CHANNELS: usize = 3;

/// H×W×3 linear-light raster, row-major with interleaved channels.
///
/// Row index `y` runs along the sensor scan direction. Values are nominally in
/// [0, 1] but are stored unclamped; clamping only happens on encode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// All-zero image.
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::filled(height, width, [0.0; CHANNELS])
    }

    pub fn filled(height: usize, width: usize, value: [f64; CHANNELS]) -> Result<Self> {
        check_nonempty(height, width)?;
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for _ in 0..height * width {
            data.extend_from_slice(&value);
        }
        Self::from_vec(height, width, data)
    }

    /// Wraps an interleaved RGB buffer, rejecting wrong lengths and non-finite samples.
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_nonempty(height, width)?;
        if data.len() != height * width * CHANNELS {
            return Err(Error::BufferLength {
                height,
                width,
                channels: CHANNELS,
                found: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image by evaluating `f(y, x)` for every pixel.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> [f64; CHANNELS],
    ) -> Result<Self> {
        check_nonempty(height, width)?;
        let mut data = Vec::with_capacity(height * width * CHANNELS);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(y, x));
            }
        }
        Self::from_vec(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [f64; CHANNELS] {
        let i = (y * self.width + x) * CHANNELS;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Interleaved samples of row `y`.
    pub fn row(&self, y: usize) -> &[f64] {
        let stride = self.width * CHANNELS;
        &self.data[y * stride..(y + 1) * stride]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width * CHANNELS)
    }

    /// Returns a new image with `f` applied to every sample; `f` receives `(y, c, value)`.
    pub fn map_samples(&self, mut f: impl FnMut(usize, usize, f64) -> f64) -> Result<Self> {
        let stride = self.width * CHANNELS;
        let data = self
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i / stride, i % CHANNELS, v))
            .collect();
        Self::from_vec(self.height, self.width, data)
    }

    pub fn same_dims(&self, other: &ImageBuffer) -> bool {
        self.dims() == other.dims()
    }

    /// Errors unless both sides are at least [`MIN_PIPELINE_DIM`].
    pub fn ensure_pipeline_dims(&self) -> Result<()> {
        if self.height < MIN_PIPELINE_DIM || self.width < MIN_PIPELINE_DIM {
            return Err(Error::TooSmall {
                height: self.height,
                width: self.width,
                min: MIN_PIPELINE_DIM,
            });
        }
        Ok(())
    }

    /// Largest absolute sample difference; `None` if dimensions differ.
    pub fn max_abs_diff(&self, other: &ImageBuffer) -> Option<f64> {
        if !self.same_dims(other) {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        )
    }
}

/// Single-channel coverage matte in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Matte {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Matte {
    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_nonempty(height, width)?;
        if data.len() != height * width {
            return Err(Error::BufferLength {
                height,
                width,
                channels: 1,
                found: data.len(),
            });
        }
        if let Some(index) = data
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            return Err(Error::invalid(format!(
                "matte value {} at index {index} outside [0, 1]",
                data[index]
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, alpha: f64) -> Result<Self> {
        Self::from_vec(height, width, vec![alpha; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

fn check_nonempty(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::TooSmall {
            height,
            width,
            min: 1,
        });
    }
    Ok(())
}
