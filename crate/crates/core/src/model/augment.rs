//! Random rotation, shift and flips with black fill.

use rand::Rng;

use super::AugmentationSpec;
use crate::ingest::{Normalization, PreparedImage};

/// One realization of the random transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub rotation_deg: f64,
    /// Shift in pixels along x (columns) and y (rows).
    pub shift_x: f64,
    pub shift_y: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl AugmentDraw {
    pub const IDENTITY: AugmentDraw = AugmentDraw {
        rotation_deg: 0.0,
        shift_x: 0.0,
        shift_y: 0.0,
        flip_horizontal: false,
        flip_vertical: false,
    };

    /// Rotation uniform in ±max, shifts uniform in ±frac·side per axis,
    /// each enabled flip with probability one half.
    pub fn sample(spec: &AugmentationSpec, side: usize, rng: &mut impl Rng) -> AugmentDraw {
        let symmetric = |rng: &mut dyn rand::RngCore, max: f64| if max > 0.0 { rng.gen_range(-max..=max) } else { 0.0 };
        let max_shift = spec.max_shift_frac * side as f64;
        AugmentDraw {
            rotation_deg: symmetric(rng, spec.max_rotation_deg),
            shift_x: symmetric(rng, max_shift),
            shift_y: symmetric(rng, max_shift),
            flip_horizontal: spec.horizontal_flip && rng.gen_bool(0.5),
            flip_vertical: spec.vertical_flip && rng.gen_bool(0.5),
        }
    }

    /// Rotates about the center, shifts, then flips. Pixels that map outside the
    /// source are black; sampling is bilinear.
    pub fn apply(&self, image: &PreparedImage) -> PreparedImage {
        let side = image.side();
        let n = side as f64;
        let center = (n - 1.0) / 2.0;
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let norm = Normalization::IMAGENET;
        let mut out = vec![0f32; 3 * side * side];

        for oy in 0..side {
            for ox in 0..side {
                let mut x = if self.flip_horizontal { side - 1 - ox } else { ox } as f64;
                let mut y = if self.flip_vertical { side - 1 - oy } else { oy } as f64;
                x -= self.shift_x;
                y -= self.shift_y;
                // inverse rotation
                let (dx, dy) = (x - center, y - center);
                let sx = cos * dx + sin * dy + center;
                let sy = -sin * dx + cos * dy + center;
                for c in 0..3 {
                    out[c * side * side + oy * side + ox] = bilinear(image.channel(c), side, sx, sy, norm.black(c));
                }
            }
        }
        PreparedImage::from_chw(side, out).expect("same shape")
    }
}

fn bilinear(plane: &[f32], side: usize, x: f64, y: f64, fill: f32) -> f32 {
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
    let at = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= side as f64 || yi >= side as f64 {
            fill
        } else {
            plane[yi as usize * side + xi as usize]
        }
    };
    let top = if fx == 0.0 { at(x0, y0) } else { at(x0, y0) * (1.0 - fx) + at(x0 + 1.0, y0) * fx };
    if fy == 0.0 {
        return top;
    }
    let bottom = if fx == 0.0 { at(x0, y0 + 1.0) } else { at(x0, y0 + 1.0) * (1.0 - fx) + at(x0 + 1.0, y0 + 1.0) * fx };
    top * (1.0 - fy) + bottom * fy
}

/// Draws a transform from `spec` and applies it.
pub fn augment(image: &PreparedImage, spec: &AugmentationSpec, rng: &mut impl Rng) -> PreparedImage {
    if spec.is_identity() {
        return image.clone();
    }
    AugmentDraw::sample(spec, image.side(), rng).apply(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ramp(side: usize) -> PreparedImage {
        PreparedImage::from_chw(side, (0..3 * side * side).map(|i| (i % 97) as f32 / 50.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn disabled_spec_is_identity() {
        let img = ramp(224);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&img, &AugmentationSpec::disabled(), &mut rng), img);
        assert_eq!(AugmentDraw::IDENTITY.apply(&img), img);
    }

    #[test]
    fn horizontal_flip_is_an_involution() {
        let img = ramp(224);
        let flip = AugmentDraw {
            flip_horizontal: true,
            ..AugmentDraw::IDENTITY
        };
        let once = flip.apply(&img);
        assert_ne!(once, img);
        assert_eq!(once.channel(0)[0], img.channel(0)[223]);
        assert_eq!(flip.apply(&once), img);
    }

    #[test]
    fn integer_shift_moves_pixels_and_fills_black() {
        let img = ramp(32);
        let shifted = AugmentDraw {
            shift_x: 3.0,
            ..AugmentDraw::IDENTITY
        }
        .apply(&img);
        assert_eq!(shifted.channel(1)[5 * 32 + 10], img.channel(1)[5 * 32 + 7]);
        assert_eq!(shifted.channel(1)[5 * 32 + 1], Normalization::IMAGENET.black(1));
    }

    #[test]
    fn draws_respect_ranges_and_shape() {
        let spec = AugmentationSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let img = ramp(224);
        for _ in 0..50 {
            let d = AugmentDraw::sample(&spec, 224, &mut rng);
            assert!(d.rotation_deg.abs() <= 10.0);
            assert!(d.shift_x.abs() <= 22.4 && d.shift_y.abs() <= 22.4);
        }
        let out = augment(&img, &spec, &mut rng);
        assert_eq!(out.side(), 224);
        assert_eq!(out.data().len(), img.data().len());
    }

    #[test]
    fn rotation_keeps_center_pixel() {
        let img = ramp(33);
        let rotated = AugmentDraw {
            rotation_deg: 7.0,
            ..AugmentDraw::IDENTITY
        }
        .apply(&img);
        assert!((rotated.channel(2)[16 * 33 + 16] - img.channel(2)[16 * 33 + 16]).abs() < 1e-6);
    }
}
