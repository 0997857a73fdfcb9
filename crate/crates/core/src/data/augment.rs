//! Resizing and paired flip/rotation augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::io::SamplePair;
use crate::error::{Error, Result};
use crate::nn::{resize_bilinear_forward, resize_nearest_plane};
use crate::tensor::Tensor;

/// Resizes to `size x size`: bilinear for the image, nearest-neighbour for
/// the mask so it stays binary.
pub fn resize_pair(s: &SamplePair, size: usize) -> Result<SamplePair> {
    if size == 0 {
        return Err(Error::InvalidGeometry("resize target must be positive".into()));
    }
    let (h, w) = (s.height(), s.width());
    if (h, w) == (size, size) {
        return Ok(s.clone());
    }
    let img = s.image.clone().reshape([1, 1, h, w])?;
    let image = resize_bilinear_forward(&img, size, size)?.reshape([size, size])?;
    let mask = Tensor::new([size, size], resize_nearest_plane(s.mask.data(), h, w, size, size))?;
    Ok(SamplePair {
        image,
        mask,
        source: s.source.clone(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Rotation {
    None,
    /// Uniformly one of 0, 90, 180 or 270 degrees.
    QuarterTurns,
    /// Uniform angle in `[-max_degrees, max_degrees]`, zero fill.
    SmallAngle { max_degrees: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub hflip_prob: f64,
    pub rotation: Rotation,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            hflip_prob: 0.5,
            rotation: Rotation::QuarterTurns,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return Err(Error::InvalidConfig(format!(
                "hflip_prob must be in [0, 1], got {}",
                self.hflip_prob
            )));
        }
        if let Rotation::SmallAngle { max_degrees } = self.rotation {
            if !(max_degrees.is_finite() && max_degrees >= 0.0) {
                return Err(Error::InvalidConfig(format!("bad rotation angle {max_degrees}")));
            }
        }
        Ok(())
    }
}

/// Reverses column order.
pub fn hflip_plane<T: Copy>(src: &[T], h: usize, w: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        out.extend(src[r * w..(r + 1) * w].iter().rev());
    }
    out
}

/// Rotates `k` quarter turns counter-clockwise. Returns the plane and its
/// new `(h, w)`.
pub fn rot90_plane<T: Copy>(src: &[T], h: usize, w: usize, k: usize) -> (Vec<T>, usize, usize) {
    let mut cur = src.to_vec();
    let (mut h, mut w) = (h, w);
    for _ in 0..k % 4 {
        // out[i][j] = in[j][w - 1 - i], out is w x h
        let mut out = Vec::with_capacity(h * w);
        for i in 0..w {
            for j in 0..h {
                out.push(cur[j * w + (w - 1 - i)]);
            }
        }
        cur = out;
        std::mem::swap(&mut h, &mut w);
    }
    (cur, h, w)
}

/// Rotates about the plane centre by `degrees`. The image is sampled
/// bilinearly, the mask by nearest neighbour; outside samples are zero.
pub fn rotate_pair(image: &[f32], mask: &[f32], h: usize, w: usize, degrees: f64) -> (Vec<f32>, Vec<f32>) {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let at = |y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            image[y as usize * w + x as usize] as f64
        }
    };
    let mut img = Vec::with_capacity(h * w);
    let mut msk = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            // inverse map: rotate the output coordinate back by -degrees
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            let sy = cos * dy - sin * dx + cy;
            let sx = sin * dy + cos * dx + cx;
            let (y0, x0) = (sy.floor(), sx.floor());
            let (fy, fx) = (sy - y0, sx - x0);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x0 + 1))
                + fy * ((1.0 - fx) * at(y0 + 1, x0) + fx * at(y0 + 1, x0 + 1));
            img.push(v as f32);
            let (ny, nx) = (sy.round() as isize, sx.round() as isize);
            let m = if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                0.0
            } else {
                mask[ny as usize * w + nx as usize]
            };
            msk.push(m);
        }
    }
    (img, msk)
}

/// Applies one random draw of the policy to image and mask together:
/// optional horizontal flip, then rotation.
pub fn augment<R: Rng + ?Sized>(s: &SamplePair, policy: &AugmentPolicy, rng: &mut R) -> SamplePair {
    let (h, w) = (s.height(), s.width());
    let mut image = s.image.data().to_vec();
    let mut mask = s.mask.data().to_vec();
    if rng.random::<f64>() < policy.hflip_prob {
        image = hflip_plane(&image, h, w);
        mask = hflip_plane(&mask, h, w);
    }
    let (mut oh, mut ow) = (h, w);
    match policy.rotation {
        Rotation::None => {}
        Rotation::QuarterTurns => {
            let k = rng.random_range(0..4usize);
            (image, oh, ow) = rot90_plane(&image, h, w, k);
            (mask, _, _) = rot90_plane(&mask, h, w, k);
        }
        Rotation::SmallAngle { max_degrees } => {
            let deg = if max_degrees > 0.0 {
                rng.random_range(-max_degrees..=max_degrees)
            } else {
                0.0
            };
            (image, mask) = rotate_pair(&image, &mask, h, w, deg);
        }
    }
    SamplePair {
        image: Tensor::new([oh, ow], image).expect("augmented image shape"),
        mask: Tensor::new([oh, ow], mask).expect("augmented mask shape"),
        source: s.source.clone(),
    }
}
