//! Image and mask containers, mask algebra, resampling, and raster I/O.

mod raster;
mod io;
mod layers;
mod mask;
mod resize;

pub use self::raster::{GrayImage, ScalarField};
pub use self::io::{load_mask, load_raster, load_raster_with_depth, save_mask, save_raster, BitDepth};
pub use self::layers::LayerSet;
pub use self::mask::{apply_mask, mask_intersection, mask_subtract, mask_union, BinaryMask, MaskSet};
pub use self::resize::{resize_bilinear, resize_mask_nearest, resize_mask_to_working, resize_to_working};

pub(crate) use self::raster::check_same;
