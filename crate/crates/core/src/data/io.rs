//! Decoding images and masks, and writing masks back out.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ExtendedColorType, ImageFormat};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A decoded single-channel plane with its original bit depth.
///
/// Colour inputs are collapsed to the mean of their R, G, B channels; alpha
/// is ignored. `values` are raw intensities in `[0, 2^bits - 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RawPlane {
    pub height: usize,
    pub width: usize,
    pub bits: u32,
    pub values: Vec<f32>,
}

impl RawPlane {
    pub fn max_value(&self) -> f32 {
        ((1u32 << self.bits) - 1) as f32
    }
}

/// Image and binary mask of one training example, both `[H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub source: Option<SourcePaths>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourcePaths {
    pub image: PathBuf,
    pub mask: PathBuf,
}

impl SamplePair {
    /// Builds a pair from in-memory planes, checking dims and mask binarity.
    pub fn new(image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        if image.shape().len() != 2 || image.shape() != mask.shape() {
            return Err(Error::DimensionMismatch(format!(
                "image {:?} vs mask {:?}",
                image.shape(),
                mask.shape()
            )));
        }
        if let Some(&v) = mask.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::NonBinaryMask(v as f64));
        }
        Ok(Self {
            image,
            mask,
            source: None,
        })
    }

    pub fn height(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[1]
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    if !path.is_file() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))
}

fn mean_rgb<T: Copy + Into<f32>>(px: &[T], channels: usize) -> Vec<f32> {
    px.chunks_exact(channels)
        .map(|c| (c[0].into() + c[1].into() + c[2].into()) / 3.0)
        .collect()
}

fn first_channel<T: Copy + Into<f32>>(px: &[T], channels: usize) -> Vec<f32> {
    px.chunks_exact(channels).map(|c| c[0].into()).collect()
}

/// Decodes an 8- or 16-bit grayscale or RGB(A) PNG/TIFF.
pub fn read_plane(path: &Path) -> Result<RawPlane> {
    let img = open(path)?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let (bits, values) = match &img {
        DynamicImage::ImageLuma8(b) => (8, first_channel(b.as_raw(), 1)),
        DynamicImage::ImageLumaA8(b) => (8, first_channel(b.as_raw(), 2)),
        DynamicImage::ImageRgb8(b) => (8, mean_rgb(b.as_raw(), 3)),
        DynamicImage::ImageRgba8(b) => (8, mean_rgb(b.as_raw(), 4)),
        DynamicImage::ImageLuma16(b) => (16, first_channel(b.as_raw(), 1)),
        DynamicImage::ImageLumaA16(b) => (16, first_channel(b.as_raw(), 2)),
        DynamicImage::ImageRgb16(b) => (16, mean_rgb(b.as_raw(), 3)),
        DynamicImage::ImageRgba16(b) => (16, mean_rgb(b.as_raw(), 4)),
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: pixel type {:?}",
                path.display(),
                other.color()
            )))
        }
    };
    Ok(RawPlane {
        height,
        width,
        bits,
        values,
    })
}

/// Loads an image as `[H, W]` intensities in `[0, 1]` (divided by the
/// bit-depth maximum).
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let plane = read_plane(path)?;
    let max = plane.max_value();
    Tensor::new(
        [plane.height, plane.width],
        plane.values.iter().map(|v| v / max).collect(),
    )
}

/// Loads a mask as `[H, W]` values in `{0, 1}`.
///
/// 8-bit masks use `pixel > threshold * 255`. 16-bit masks are treated as
/// instance label maps: every non-zero label is foreground.
pub fn load_mask(path: &Path, threshold: f64) -> Result<Tensor<f32>> {
    let plane = read_plane(path)?;
    let cut = if plane.bits == 16 {
        0.0
    } else {
        threshold * plane.max_value() as f64
    };
    Tensor::new(
        [plane.height, plane.width],
        plane
            .values
            .iter()
            .map(|&v| if v as f64 > cut { 1.0 } else { 0.0 })
            .collect(),
    )
}

pub fn load_sample(image_path: &Path, mask_path: &Path, threshold: f64) -> Result<SamplePair> {
    let image = load_image(image_path)?;
    let mask = load_mask(mask_path, threshold)?;
    if image.shape() != mask.shape() {
        return Err(Error::DimensionMismatch(format!(
            "{} is {:?} but {} is {:?}",
            image_path.display(),
            image.shape(),
            mask_path.display(),
            mask.shape()
        )));
    }
    Ok(SamplePair {
        image,
        mask,
        source: Some(SourcePaths {
            image: image_path.to_path_buf(),
            mask: mask_path.to_path_buf(),
        }),
    })
}

fn save_l8(path: &Path, bytes: &[u8], height: usize, width: usize) -> Result<()> {
    image::save_buffer_with_format(
        path,
        bytes,
        width as u32,
        height as u32,
        ExtendedColorType::L8,
        ImageFormat::Png,
    )
    .map_err(|e| Error::Data(format!("writing {}: {e}", path.display())))
}

/// Writes a binary `[H, W]` mask as an 8-bit PNG with values `{0, 255}`.
pub fn write_mask_png(path: &Path, mask: &Tensor<f32>) -> Result<()> {
    let (h, w) = plane_dims(mask)?;
    let bytes: Vec<u8> = mask.data().iter().map(|&v| if v > 0.5 { 255 } else { 0 }).collect();
    save_l8(path, &bytes, h, w)
}

/// Writes `[H, W]` intensities in `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, image: &Tensor<f32>) -> Result<()> {
    let (h, w) = plane_dims(image)?;
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    save_l8(path, &bytes, h, w)
}

fn plane_dims(t: &Tensor<f32>) -> Result<(usize, usize)> {
    match t.shape() {
        &[h, w] => Ok((h, w)),
        s => Err(Error::ShapeMismatch(format!("expected an [H, W] plane, got {s:?}"))),
    }
}
