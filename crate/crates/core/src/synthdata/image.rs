use crate::error::{Error, Result};

use super::CHANNELS;

/// A 3-channel raster stored row-major with interleaved channels (HWC).
/// Values lie in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn black(height: usize, width: usize) -> Self {
        Image {
            height,
            width,
            data: vec![0.0; height * width * CHANNELS],
        }
    }

    pub fn from_raw(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{CHANNELS} image",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        CHANNELS
    }

    #[inline]
    fn offset(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * CHANNELS
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let o = self.offset(y, x);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let o = self.offset(y, x);
        self.data[o..o + CHANNELS].copy_from_slice(&rgb);
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access for in-place transforms. Callers must keep values in
    /// `[0, 1]`.
    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.as_chunks::<CHANNELS>().0.iter().copied()
    }

    pub fn pixels_mut(&mut self) -> impl Iterator<Item = &mut [f32; 3]> + '_ {
        self.data.as_chunks_mut::<CHANNELS>().0.iter_mut()
    }

    /// Number of pixels with at least one nonzero channel.
    pub fn nonzero_pixels(&self) -> usize {
        self.pixels().filter(|p| p.iter().any(|&v| v != 0.0)).count()
    }

    /// Mean over pixels of the brightest channel.
    pub fn mean_value(&self) -> f64 {
        let total: f64 = self
            .pixels()
            .map(|p| f64::from(p[0].max(p[1]).max(p[2])))
            .sum();
        total / (self.height * self.width) as f64
    }
}
