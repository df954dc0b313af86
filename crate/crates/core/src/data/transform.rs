//! Lossless augmentation, corner crops and bilinear resizing of `[1,H,W]` images.

use rand::Rng;

use super::image::image_hw;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Augmentation {
    /// Clockwise quarter turns, 0..=3.
    pub quarter_turns: u8,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl Augmentation {
    pub const IDENTITY: Self = Self {
        quarter_turns: 0,
        flip_horizontal: false,
        flip_vertical: false,
    };

    /// Independent fair coins for rotate / h-flip / v-flip; a rotation picks
    /// uniformly among 90°, 180° and 270°.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let quarter_turns = if rng.random_bool(0.5) { rng.random_range(1..=3) } else { 0 };
        Self {
            quarter_turns,
            flip_horizontal: rng.random_bool(0.5),
            flip_vertical: rng.random_bool(0.5),
        }
    }

    /// Rotation first, then flips. Only permutes pixels.
    pub fn apply(&self, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (h, w) = image_hw(image)?;
        if h != w {
            return Err(Error::invalid(format!("augmentation needs a square image, got {h}x{w}")));
        }
        let n = h;
        let src = image.data();
        let turns = self.quarter_turns % 4;
        let out = Tensor::from_fn(vec![1, n, n], |i| {
            let (mut r, mut c) = (i / n, i % n);
            if self.flip_vertical {
                r = n - 1 - r;
            }
            if self.flip_horizontal {
                c = n - 1 - c;
            }
            // Inverse of a clockwise rotation: out(r,c) = in(n-1-c, r) per turn.
            for _ in 0..turns {
                (r, c) = (n - 1 - c, r);
            }
            src[r * n + c]
        });
        Ok(out)
    }
}

pub fn augment<R: Rng + ?Sized>(image: &Tensor<f32>, rng: &mut R) -> Result<Tensor<f32>> {
    Augmentation::sample(rng).apply(image)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Corner {
    pub const ALL: [Corner; 4] = [Corner::TopLeft, Corner::TopRight, Corner::BottomLeft, Corner::BottomRight];

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::ALL[rng.random_range(0..4)]
    }
}

/// Crop side for a stored image of side `stored`: round(ratio · stored).
pub fn crop_size_for(stored: usize, ratio: f64) -> usize {
    ((stored as f64 * ratio).round() as usize).clamp(1, stored)
}

pub fn corner_crop(image: &Tensor<f32>, size: usize, corner: Corner) -> Result<Tensor<f32>> {
    let (h, w) = image_hw(image)?;
    if size == 0 || size > h || size > w {
        return Err(Error::invalid(format!("cannot crop {size}x{size} from {h}x{w}")));
    }
    let (r0, c0) = match corner {
        Corner::TopLeft => (0, 0),
        Corner::TopRight => (0, w - size),
        Corner::BottomLeft => (h - size, 0),
        Corner::BottomRight => (h - size, w - size),
    };
    let src = image.data();
    Ok(Tensor::from_fn(vec![1, size, size], |i| {
        src[(r0 + i / size) * w + c0 + i % size]
    }))
}

/// Corner-aligned bilinear resampling: output corners map exactly onto
/// input corners.
pub fn resize_bilinear(image: &Tensor<f32>, target: usize) -> Result<Tensor<f32>> {
    let (h, w) = image_hw(image)?;
    if target == 0 {
        return Err(Error::invalid("resize target must be at least 1"));
    }
    if h == target && w == target {
        return Ok(image.clone());
    }
    let src = image.data();
    let coord = |i: usize, n: usize| -> (usize, usize, f64) {
        if target == 1 || n == 1 {
            return (0, 0, 0.0);
        }
        let x = i as f64 * (n - 1) as f64 / (target - 1) as f64;
        let lo = (x.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, x - lo as f64)
    };
    Ok(Tensor::from_fn(vec![1, target, target], |i| {
        let (r0, r1, fr) = coord(i / target, h);
        let (c0, c1, fc) = coord(i % target, w);
        let at = |r: usize, c: usize| src[r * w + c] as f64;
        let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
        let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
        (top * (1.0 - fr) + bottom * fr) as f32
    }))
}

/// Training view: augment, crop a random corner, rescale to `input_size`.
pub fn train_view<R: Rng + ?Sized>(image: &Tensor<f32>, input_size: usize, crop_ratio: f64, rng: &mut R) -> Result<Tensor<f32>> {
    let augmented = augment(image, rng)?;
    let (h, _) = image_hw(&augmented)?;
    let cropped = corner_crop(&augmented, crop_size_for(h, crop_ratio), Corner::sample(rng))?;
    resize_bilinear(&cropped, input_size)
}

/// Evaluation view: rescale only.
pub fn eval_view(image: &Tensor<f32>, input_size: usize) -> Result<Tensor<f32>> {
    resize_bilinear(image, input_size)
}
