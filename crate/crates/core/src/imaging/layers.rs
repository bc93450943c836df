use super::raster::{check_same, GrayImage};
use super::mask::{apply_mask, MaskSet};
use crate::error::{Error, Result};

/// Per-bone layer images aligned to their masks. Layer `i` is zero outside mask `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSet {
    layers: Vec<GrayImage>,
    masks: MaskSet,
}

impl LayerSet {
    /// Validates counts, dimensions, and that every layer vanishes off its mask.
    pub fn new(layers: Vec<GrayImage>, masks: MaskSet) -> Result<Self> {
        if layers.len() != masks.len() {
            return Err(Error::CountMismatch {
                expected: masks.len(),
                found: layers.len(),
            });
        }
        for (i, (layer, mask)) in layers.iter().zip(masks.masks()).enumerate() {
            check_same(mask.dims(), layer.dims())?;
            if let Some(index) = layer
                .data()
                .iter()
                .zip(mask.data())
                .position(|(&v, &m)| !m && v != 0.0)
            {
                return Err(Error::LayerOffMask { layer: i, index });
            }
        }
        Ok(Self { layers, masks })
    }

    /// Multiplies each layer by its mask first, so any raster is accepted.
    pub fn from_unmasked(layers: Vec<GrayImage>, masks: MaskSet) -> Result<Self> {
        if layers.len() != masks.len() {
            return Err(Error::CountMismatch {
                expected: masks.len(),
                found: layers.len(),
            });
        }
        let layers = layers
            .iter()
            .zip(masks.masks())
            .map(|(l, m)| apply_mask(l, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, masks })
    }

    pub(crate) fn from_parts_unchecked(layers: Vec<GrayImage>, masks: MaskSet) -> Self {
        Self { layers, masks }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[GrayImage] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &GrayImage {
        &self.layers[i]
    }

    pub fn masks(&self) -> &MaskSet {
        &self.masks
    }

    pub fn dims(&self) -> (usize, usize) {
        self.masks.dims()
    }

    pub fn into_parts(self) -> (Vec<GrayImage>, MaskSet) {
        (self.layers, self.masks)
    }
}
