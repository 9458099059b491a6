//! Dense image and disparity containers.
//!
//! Both containers are row-major. [`ImageBuffer`] interleaves channels
//! (`(y * width + x) * channels + c`).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Builds an image, clamping every sample into `[0, 1]`.
    ///
    /// Non-finite samples are rejected rather than clamped.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!("image dimensions must be positive, got {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidParameter(format!("channels must be 1 or 3, got {channels}")));
        }
        let expected = height * width * channels;
        if data.len() != expected {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {expected} samples, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut img = ImageBuffer { height, width, channels, data };
        img.clamp_unit();
        Ok(img)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    /// Builds an image from a per-pixel function; the result is clamped.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self::new(height, width, channels, data)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Same shape, new samples; clamps.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.height, self.width, self.channels, data)
    }

    /// Extracts one channel as a contiguous plane.
    pub fn plane(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.channels).copied().collect()
    }

    /// Reassembles an image from channel planes.
    pub fn from_planes(height: usize, width: usize, planes: &[Vec<f64>]) -> Result<Self> {
        let channels = planes.len();
        let mut data = vec![0.0; height * width * channels];
        for (c, plane) in planes.iter().enumerate() {
            if plane.len() != height * width {
                return Err(Error::ShapeMismatch(format!(
                    "plane {c} has {} samples, expected {}",
                    plane.len(),
                    height * width
                )));
            }
            for (i, v) in plane.iter().enumerate() {
                data[i * channels + c] = *v;
            }
        }
        Self::new(height, width, channels, data)
    }

    /// Mirrors the image left-to-right.
    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let base = (y * self.width + x) * self.channels;
                data.extend_from_slice(&self.data[base..base + self.channels]);
            }
        }
        ImageBuffer { data, ..*self }
    }

    /// Per-channel arithmetic mean.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = (self.height * self.width) as f64;
        (0..self.channels).map(|c| self.data.iter().skip(c).step_by(self.channels).sum::<f64>() / n).collect()
    }

    fn clamp_unit(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }
}

/// Dense non-negative disparity field (inverse relative depth).
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DisparityMap {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidParameter(format!("map dimensions must be positive, got {height}x{width}")));
        }
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} map needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if let Some(i) = data.iter().position(|v| *v < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "disparity must be non-negative, found {} at index {i}",
                data[i]
            )));
        }
        Ok(DisparityMap { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &DisparityMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        DisparityMap { data, ..*self }
    }

    /// Centered crop to `height x width`.
    pub fn center_crop(&self, height: usize, width: usize) -> Result<Self> {
        if height > self.height || width > self.width {
            return Err(Error::ShapeMismatch(format!(
                "cannot crop {}x{} to {height}x{width}",
                self.height, self.width
            )));
        }
        let y0 = (self.height - height) / 2;
        let x0 = (self.width - width) / 2;
        Self::from_fn(height, width, |y, x| self.get(y0 + y, x0 + x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_clamps_on_construction() {
        let img = ImageBuffer::new(1, 2, 1, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
    }

    #[test]
    fn image_rejects_bad_shapes() {
        assert!(ImageBuffer::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageBuffer::new(1, 1, 2, vec![0.0; 2]).is_err());
        assert!(ImageBuffer::new(0, 1, 1, vec![]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn planes_round_trip() {
        let img = ImageBuffer::from_fn(2, 3, 3, |y, x, c| (y * 9 + x * 3 + c) as f64 / 20.0).unwrap();
        let planes: Vec<_> = (0..3).map(|c| img.plane(c)).collect();
        assert_eq!(ImageBuffer::from_planes(2, 3, &planes).unwrap(), img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ImageBuffer::from_fn(2, 3, 3, |y, x, c| (y * 9 + x * 3 + c) as f64 / 20.0).unwrap();
        assert_eq!(img.flip_horizontal().get(0, 0, 1), img.get(0, 2, 1));
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        let d = DisparityMap::from_fn(2, 3, |y, x| (y * 3 + x) as f64).unwrap();
        assert_eq!(d.flip_horizontal().data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
    }

    #[test]
    fn disparity_rejects_negative_and_nan() {
        assert!(DisparityMap::new(1, 2, vec![0.0, -1.0]).is_err());
        assert!(DisparityMap::new(1, 2, vec![0.0, f64::INFINITY]).is_err());
    }
}
