//! Grayscale PNG boundary: 8/16-bit integers on disk, `[0, 1]` reals in memory.
//!
//! Masks are stored as 8-bit PNGs holding only 0 and 255 (255 maps to set).

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma};

use super::raster::GrayImage;
use super::mask::BinaryMask;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = reader.with_guessed_format().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    reader.decode().map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn unsupported(path: &Path, img: &DynamicImage) -> Error {
    Error::UnsupportedRaster {
        path: path.to_path_buf(),
        reason: format!("expected 8- or 16-bit grayscale, found {:?}", img.color()),
    }
}

/// Integer samples of a grayscale raster, with its bit depth.
fn samples(path: &Path) -> Result<(u32, u32, Vec<u16>, BitDepth)> {
    let img = decode(path)?;
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w, h, buf.into_raw().into_iter().map(u16::from).collect(), BitDepth::Eight))
        }
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w, h, buf.into_raw(), BitDepth::Sixteen))
        }
        other => Err(unsupported(path, &other)),
    }
}

/// Reads an 8- or 16-bit grayscale PNG, dividing by `2^depth - 1`.
pub fn load_raster(path: impl AsRef<Path>) -> Result<GrayImage> {
    load_raster_with_depth(path).map(|(img, _)| img)
}

/// Like [`load_raster`], also reporting the stored bit depth.
pub fn load_raster_with_depth(path: impl AsRef<Path>) -> Result<(GrayImage, BitDepth)> {
    let path = path.as_ref();
    let (w, h, raw, depth) = samples(path)?;
    let max = depth.max_value();
    let data = raw.into_iter().map(|v| f64::from(v) / max).collect();
    Ok((GrayImage::new(w as usize, h as usize, data)?, depth))
}

/// Quantizes with round-half-up and writes a grayscale PNG.
pub fn save_raster(img: &GrayImage, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    let path = path.as_ref();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let max = depth.max_value();
    let quantize = |v: f64| (v * max + 0.5).floor().min(max);
    let result = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v) as u8).collect();
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw)
                .expect("buffer length matches dimensions")
                .save_with_format(path, ImageFormat::Png)
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = img.data().iter().map(|&v| quantize(v) as u16).collect();
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw)
                .expect("buffer length matches dimensions")
                .save_with_format(path, ImageFormat::Png)
        }
    };
    result.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a mask PNG whose samples are all either 0 or full scale.
pub fn load_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let (w, h, raw, depth) = samples(path)?;
    let full = depth.max_value() as u16;
    let mut data = Vec::with_capacity(raw.len());
    for (index, v) in raw.into_iter().enumerate() {
        if v == 0 {
            data.push(false);
        } else if v == full {
            data.push(true);
        } else {
            return Err(Error::UnsupportedRaster {
                path: path.to_path_buf(),
                reason: format!("mask sample {v} at index {index} is neither 0 nor {full}"),
            });
        }
    }
    BinaryMask::new(w as usize, h as usize, data)
}

/// Writes a mask as an 8-bit PNG with values {0, 255}.
pub fn save_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    ImageBuffer::<Luma<u8>, _>::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .expect("buffer length matches dimensions")
        .save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
