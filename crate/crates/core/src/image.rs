//! Row-major float images used for HDR panoramas, depth maps and renders.

use crate::error::{Error, Result};

/// A linear float image with 1 (depth) or 3 (RGB radiance) channels.
///
/// Row 0 is the top row. Files that store rows bottom-to-top (PFM) are
/// flipped on load.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageHdr {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageHdr {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::ShapeMismatch(format!("{channels} channels")));
        }
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{}x{}x{} image with {} values",
                width,
                height,
                channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn same_shape(&self, other: &ImageHdr) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// RGB value of a pixel; single-channel images are broadcast.
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let p = self.pixel(x, y);
        if self.channels == 1 {
            [p[0] as f64; 3]
        } else {
            [p[0] as f64, p[1] as f64, p[2] as f64]
        }
    }

    /// First channel of a pixel (the depth value for depth maps).
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.pixel(x, y)[0] as f64
    }

    /// Collapses to a single channel by keeping the first one.
    pub fn first_channel(&self) -> ImageHdr {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks_exact(self.channels).map(|p| p[0]).collect();
        ImageHdr {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> ImageHdr {
        ImageHdr {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

/// Display gamma used for LDR output.
pub const DISPLAY_GAMMA: f64 = 2.2;

/// Maps linear radiance to `[0, 1)`: `(x e / (1 + x e))^(1 / gamma)`.
pub fn tone_map(x: f64, exposure: f64, gamma: f64) -> f64 {
    let y = (x * exposure).max(0.0);
    (y / (1.0 + y)).powf(1.0 / gamma)
}

/// Inverse of [`tone_map`] for values in `[0, 1)`.
pub fn inverse_tone_map(v: f64, exposure: f64, gamma: f64) -> f64 {
    let y = v.clamp(0.0, 1.0).powf(gamma);
    if y >= 1.0 {
        return f64::INFINITY;
    }
    y / (1.0 - y) / exposure
}

impl ImageHdr {
    /// Tone-mapped copy with values in `[0, 1)`.
    pub fn tone_mapped(&self, exposure: f64, gamma: f64) -> ImageHdr {
        self.map(|v| tone_map(v as f64, exposure, gamma) as f32)
    }
}
