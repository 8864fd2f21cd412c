//! H×W×C images with values canonically in `[0, 1]`.

use alloc::vec::Vec;

use crate::error::{contract, Result};
use crate::tensor::Tensor;

/// Interleaved H×W×C image. `C` is 1 or 3.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(contract!("image must be at least 1x1, got {height}x{width}"));
        }
        if channels != 1 && channels != 3 {
            return Err(contract!("image channels must be 1 or 3, got {channels}"));
        }
        if data.len() != height * width * channels {
            return Err(contract!(
                "image data length {} does not match {height}x{width}x{channels}",
                data.len()
            ));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(contract!("image contains non-finite values"));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: alloc::vec![0.0; height * width * channels] }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    /// From 8-bit interleaved samples.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(height, width, channels, bytes.iter().map(|&b| b as f32 / 255.0).collect())
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }
    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Copy with every value clamped into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self { data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(), ..self.clone() }
    }

    /// 8-bit quantization with round-half-up.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize_u8(v)).collect()
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(contract!(
                "crop {h}x{w} at ({y0},{x0}) outside {}x{} image",
                self.height,
                self.width
            ));
        }
        Ok(Self::from_fn(h, w, self.channels, |y, x, c| self.get(y0 + y, x0 + x, c)))
    }

    /// `[1, C, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut t = Tensor::zeros([1, c, h, w]);
        let d = t.data_mut();
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    d[(ch * h + y) * w + x] = self.data[(y * w + x) * c + ch];
                }
            }
        }
        t
    }

    /// Batch item `n` of an NCHW tensor. Values are not clamped.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let (c, h, w) = (t.c(), t.h(), t.w());
        let src = t.item(n);
        let mut data = alloc::vec![0.0; h * w * c];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(y * w + x) * c + ch] = src[(ch * h + y) * w + x];
                }
            }
        }
        Self::new(h, w, c, data)
    }
}

/// `floor(v * 255 + 0.5)` clamped to `0..=255`.
#[inline]
pub fn quantize_u8(v: f32) -> u8 {
    let s = libm::floor(v as f64 * 255.0 + 0.5);
    s.clamp(0.0, 255.0) as u8
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_channels_and_nan() {
        assert!(ImageTensor::new(1, 1, 2, alloc::vec![0.0; 2]).is_err());
        assert!(ImageTensor::new(1, 1, 1, alloc::vec![f32::NAN]).is_err());
        assert!(ImageTensor::new(0, 1, 1, alloc::vec![]).is_err());
    }

    #[test]
    fn tensor_round_trip() {
        let img = ImageTensor::from_fn(3, 4, 3, |y, x, c| (y * 100 + x * 10 + c) as f32);
        let t = img.to_tensor();
        assert_eq!(t.at(0, 2, 1, 3), 132.0);
        assert_eq!(ImageTensor::from_tensor(&t, 0).unwrap(), img);
    }

    #[test]
    fn round_half_up() {
        assert_eq!(quantize_u8(0.5 / 255.0), 1);
        assert_eq!(quantize_u8(0.49 / 255.0), 0);
        assert_eq!(quantize_u8(1.7), 255);
        assert_eq!(quantize_u8(-0.2), 0);
    }
}
