use image::imageops::{self, FilterType};
use image::{DynamicImage, GenericImageView};

use super::CropWindow;
use crate::error::{Error, Result};

/// Backbone input side.
pub const INPUT_SIDE: u32 = 224;

/// Per-channel statistics applied after rescaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    /// ImageNet RGB statistics published with the VGG16 weights.
    pub const IMAGENET: Normalization = Normalization {
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };

    pub fn apply(&self, channel: usize, unit: f32) -> f32 {
        (unit - self.mean[channel]) / self.std[channel]
    }

    /// Normalized value of a black pixel in `channel`.
    pub fn black(&self, channel: usize) -> f32 {
        self.apply(channel, 0.0)
    }
}

/// Square three-channel image in CHW layout, normalized for the backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedImage {
    side: usize,
    data: Vec<f32>,
}

impl PreparedImage {
    pub fn from_chw(side: usize, data: Vec<f32>) -> Result<Self> {
        if side == 0 || data.len() != 3 * side * side {
            return Err(Error::Validation(format!(
                "expected 3x{side}x{side} values, got {}",
                data.len()
            )));
        }
        Ok(PreparedImage { side, data })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.side * self.side;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Copies the square window out of `frame` without interpolation.
pub fn crop_quadratic(frame: &DynamicImage, window: CropWindow) -> Result<DynamicImage> {
    let (width, height) = frame.dimensions();
    window.check_bounds(width, height)?;
    Ok(frame.crop_imm(window.x, window.y, window.side, window.side))
}

/// Resizes a square image to `side`×`side`, replicates grayscale to three
/// channels and applies [`Normalization::IMAGENET`].
///
/// Inputs already at `side` are only rescaled, never resampled.
pub fn prepare_input(image: &DynamicImage, side: u32) -> Result<PreparedImage> {
    let (width, height) = image.dimensions();
    if width != height || width == 0 {
        return Err(Error::Validation(format!(
            "expected a square image, got {width}x{height}"
        )));
    }
    if side == 0 {
        return Err(Error::Validation("target side must be >= 1".into()));
    }
    let rgb = image.to_rgb32f();
    let rgb = if width == side {
        rgb
    } else {
        imageops::resize(&rgb, side, side, FilterType::Triangle)
    };

    let side = side as usize;
    let plane = side * side;
    let norm = Normalization::IMAGENET;
    let mut data = vec![0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + i] = norm.apply(c, px.0[c].clamp(0.0, 1.0));
        }
    }
    Ok(PreparedImage { side, data })
}
