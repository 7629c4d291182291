use sapiens_tensor::{Float, Tensor};

use crate::error::{Error, Result};

/// Interleaved (HWC) float image, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::BadSize(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    #[inline]
    pub fn idx(&self, y: usize, x: usize) -> usize {
        (y * self.width + x) * self.channels
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = self.idx(y, x);
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let i = self.idx(y, x);
        let c = self.channels;
        &mut self.data[i..i + c]
    }

    /// Bilinear sample at continuous pixel-center coordinates, clamped at the border.
    pub fn sample(&self, y: f64, x: f64, out: &mut [f32]) {
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let (y0, x0) = (yc.floor() as usize, xc.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(self.height - 1), (x0 + 1).min(self.width - 1));
        let (fy, fx) = ((yc - y0 as f64) as f32, (xc - x0 as f64) as f32);
        for c in 0..self.channels {
            let a = self.pixel(y0, x0)[c] * (1.0 - fx) + self.pixel(y0, x1)[c] * fx;
            let b = self.pixel(y1, x0)[c] * (1.0 - fx) + self.pixel(y1, x1)[c] * fx;
            out[c] = a * (1.0 - fy) + b * fy;
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                let src = self.idx(y, self.width - 1 - x);
                let dst = out.idx(y, x);
                out.data[dst..dst + self.channels].copy_from_slice(&self.data[src..src + self.channels]);
            }
        }
        out
    }

    /// Bilinear resize to a new size.
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if (height, width) == (self.height, self.width) {
            return self.clone();
        }
        let mut out = Image::new(height, width, self.channels);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut px = vec![0.0; self.channels];
        for y in 0..height {
            for x in 0..width {
                self.sample((y as f64 + 0.5) * sy - 0.5, (x as f64 + 0.5) * sx - 0.5, &mut px);
                out.pixel_mut(y, x).copy_from_slice(&px);
            }
        }
        out
    }

    pub fn to_tensor<F: Float>(&self) -> Tensor<F> {
        Tensor::from_fn(&[self.height, self.width, self.channels], |i| F::of_f64(self.data[i] as f64))
    }
}

/// Stack equally sized images into `[n, h, w, c]`.
pub fn batch_tensor<F: Float>(images: &[&Image]) -> Result<Tensor<F>> {
    let first = images.first().ok_or_else(|| Error::BadSize("empty image batch".into()))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for im in images {
        if (im.height, im.width, im.channels) != (h, w, c) {
            return Err(Error::BadSize(format!(
                "batch mixes {h}x{w}x{c} and {}x{}x{}",
                im.height, im.width, im.channels
            )));
        }
        data.extend(im.data.iter().map(|&v| F::of_f64(v as f64)));
    }
    Ok(Tensor::new(data, &[images.len(), h, w, c])?)
}
