use super::raster::GrayImage;
use super::mask::BinaryMask;
use crate::error::{Error, Result};

/// Source coordinate of a destination sample under pixel-center alignment.
fn source_coord(dst: usize, src_len: usize, dst_len: usize) -> f64 {
    let scale = src_len as f64 / dst_len as f64;
    ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64)
}

/// Bilinear resample to `width x height` with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> Result<GrayImage> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    if img.dims() == (width, height) {
        return Ok(img.clone());
    }
    let (sw, sh) = img.dims();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = source_coord(y, sh, height);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = source_coord(x, sw, width);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f64;
            let top = img.get(x0, y0) * (1.0 - tx) + img.get(x1, y0) * tx;
            let bottom = img.get(x0, y1) * (1.0 - tx) + img.get(x1, y1) * tx;
            data.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(width, height, data)
}

/// Nearest-neighbor resample; keeps masks binary.
pub fn resize_mask_nearest(mask: &BinaryMask, width: usize, height: usize) -> Result<BinaryMask> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    let (sw, sh) = mask.dims();
    BinaryMask::from_fn(width, height, |x, y| {
        let sx = ((x as f64 + 0.5) * sw as f64 / width as f64).floor() as usize;
        let sy = ((y as f64 + 0.5) * sh as f64 / height as f64).floor() as usize;
        mask.get(sx.min(sw - 1), sy.min(sh - 1))
    })
}

/// Square working resolution used by the pipeline (256 in practice).
pub fn resize_to_working(img: &GrayImage, side: usize) -> Result<GrayImage> {
    if side == 0 {
        return Err(Error::invalid("side", "must be positive"));
    }
    resize_bilinear(img, side, side)
}

pub fn resize_mask_to_working(mask: &BinaryMask, side: usize) -> Result<BinaryMask> {
    if side == 0 {
        return Err(Error::invalid("side", "must be positive"));
    }
    resize_mask_nearest(mask, side, side)
}
