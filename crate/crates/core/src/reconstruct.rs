//! Absorption-superposition forward model.
//!
//! Layer intensities `L_i` become absorptions `L'_i = 1 - L_i`. Where a set of
//! masks overlaps, the absorptions are divided by the soft-tissue correction
//! `k`, multiplied, and scaled back by `k`:
//!
//! ```text
//! R = (1 - k * prod_i (1 - (1 - L'_i / k) * M_i)) * M_union
//! ```
//!
//! A pixel covered by one mask reproduces that layer, and soft tissue counted
//! in both layers of an overlap contributes its absorption `k` only once.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{check_same, GrayImage, LayerSet, MaskSet, ScalarField};
use crate::laplace::{inpaint_laplace, SolverConfig};

/// Lower bound on `k`; guards the division by `k`.
pub const K_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KProvenance {
    Estimated,
    Supplied,
}

/// Soft-tissue absorption level `k`, always within `[K_MIN, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectionParameter {
    k: f64,
    provenance: KProvenance,
    /// The overlap was empty, so the background mean was taken over the union.
    fallback_to_union: bool,
    /// The raw estimate fell outside `[K_MIN, 1]` and was clamped.
    clamped: bool,
}

impl CorrectionParameter {
    pub fn supplied(k: f64) -> Result<Self> {
        if !(K_MIN..=1.0).contains(&k) {
            return Err(Error::InvalidCorrection(k));
        }
        Ok(Self {
            k,
            provenance: KProvenance::Supplied,
            fallback_to_union: false,
            clamped: false,
        })
    }

    pub fn value(&self) -> f64 {
        self.k
    }

    pub fn provenance(&self) -> KProvenance {
        self.provenance
    }

    pub fn fallback_to_union(&self) -> bool {
        self.fallback_to_union
    }

    pub fn clamped(&self) -> bool {
        self.clamped
    }

    /// Either warning condition was raised during estimation.
    pub fn flagged(&self) -> bool {
        self.fallback_to_union || self.clamped
    }
}

/// Reconstructed image `R` with its saturation count and overlap view `R * M_cap`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionOutput {
    pub image: GrayImage,
    pub saturated_count: usize,
    pub overlap: GrayImage,
}

/// Per-pixel derivatives of the unclamped reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionGradient {
    /// `dR/dL_i`, one field per layer.
    pub layers: Vec<ScalarField>,
    /// `dR/dk`.
    pub k: ScalarField,
}

/// Unclamped reconstruction of one pixel from the intensities of the layers
/// whose masks cover it. `active` must be non-empty.
pub(crate) fn compose_pixel(active: &[f64], k: f64) -> f64 {
    match active {
        [only] => *only,
        [first, rest @ ..] => {
            let absorption = rest.iter().fold(1.0 - first, |acc, l| acc * ((1.0 - l) / k));
            1.0 - absorption
        }
        [] => 0.0,
    }
}

/// Derivative of [`compose_pixel`] with respect to `active[i]`.
pub(crate) fn compose_pixel_grad(active: &[f64], i: usize, k: f64) -> f64 {
    if active.len() == 1 {
        return 1.0;
    }
    let others: f64 = active
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, l)| 1.0 - l)
        .product();
    others / k.powi(active.len() as i32 - 1)
}

/// Derivative of [`compose_pixel`] with respect to `k`.
pub(crate) fn compose_pixel_grad_k(active: &[f64], k: f64) -> f64 {
    let m = active.len() as i32;
    if m < 2 {
        return 0.0;
    }
    let product: f64 = active.iter().map(|l| 1.0 - l).product();
    (m - 1) as f64 * product / k.powi(m)
}

/// Absorption view `L'_i = 1 - L_i` inside each mask, zero outside.
pub fn to_absorption(ls: &LayerSet) -> LayerSet {
    let layers = ls
        .layers()
        .iter()
        .zip(ls.masks().masks())
        .map(|(layer, mask)| {
            let data = layer
                .data()
                .iter()
                .zip(mask.data())
                .map(|(&v, &m)| if m { 1.0 - v } else { 0.0 })
                .collect();
            GrayImage::from_raw(layer.width(), layer.height(), data)
        })
        .collect();
    LayerSet::from_parts_unchecked(layers, ls.masks().clone())
}

fn check_k(k: f64) -> Result<()> {
    if !(K_MIN..=1.0).contains(&k) {
        return Err(Error::InvalidCorrection(k));
    }
    Ok(())
}

/// Visits every pixel with the intensities of its covering layers.
fn for_each_pixel(ls: &LayerSet, mut f: impl FnMut(usize, &[f64], &[usize])) {
    let n = ls.len();
    let len = ls.layers()[0].len();
    let mut active = Vec::with_capacity(n);
    let mut which = Vec::with_capacity(n);
    for p in 0..len {
        active.clear();
        which.clear();
        for (i, (layer, mask)) in ls.layers().iter().zip(ls.masks().masks()).enumerate() {
            if mask.data()[p] {
                active.push(layer.data()[p]);
                which.push(i);
            }
        }
        f(p, &active, &which);
    }
}

/// Forward model. Pixels whose composed absorption exceeds 1 are clamped to
/// intensity 0 and counted in `saturated_count`.
pub fn reconstruct(ls: &LayerSet, k: &CorrectionParameter) -> Result<ReconstructionOutput> {
    reconstruct_with(ls, k.value())
}

pub(crate) fn reconstruct_with(ls: &LayerSet, k: f64) -> Result<ReconstructionOutput> {
    check_k(k)?;
    let (w, h) = ls.dims();
    let mut data = vec![0.0; w * h];
    let mut overlap = vec![0.0; w * h];
    let mut saturated = 0;
    for_each_pixel(ls, |p, active, _| {
        if active.is_empty() {
            return;
        }
        let r = compose_pixel(active, k);
        let r = if r < 0.0 {
            saturated += 1;
            0.0
        } else if r > 1.0 {
            saturated += 1;
            1.0
        } else {
            r
        };
        data[p] = r;
        if active.len() == ls.len() {
            overlap[p] = r;
        }
    });
    Ok(ReconstructionOutput {
        image: GrayImage::from_raw(w, h, data),
        saturated_count: saturated,
        overlap: GrayImage::from_raw(w, h, overlap),
    })
}

/// Analytic `dR/dL_i` and `dR/dk` of the unclamped model; zero at saturated
/// pixels and outside the union.
pub fn reconstruct_gradient(ls: &LayerSet, k: &CorrectionParameter) -> Result<ReconstructionGradient> {
    reconstruct_gradient_with(ls, k.value())
}

pub(crate) fn reconstruct_gradient_with(ls: &LayerSet, k: f64) -> Result<ReconstructionGradient> {
    check_k(k)?;
    let (w, h) = ls.dims();
    let mut layers = vec![ScalarField::zeros(w, h); ls.len()];
    let mut dk = ScalarField::zeros(w, h);
    for_each_pixel(ls, |p, active, which| {
        if active.is_empty() {
            return;
        }
        let r = compose_pixel(active, k);
        if !(0.0..=1.0).contains(&r) {
            return;
        }
        for (slot, &i) in which.iter().enumerate() {
            layers[i].data[p] = compose_pixel_grad(active, slot, k);
        }
        dk.data[p] = compose_pixel_grad_k(active, k);
    });
    Ok(ReconstructionGradient { layers, k: dk })
}

/// Estimates `k` as one minus the mean of the harmonic background over the
/// overlap. The background is the Laplace fill of the image over the union of
/// the bone masks. An empty overlap falls back to the union, and estimates
/// outside `[K_MIN, 1]` are clamped; both set a warning flag.
pub fn estimate_k(image: &GrayImage, ms: &MaskSet, cfg: &SolverConfig) -> Result<CorrectionParameter> {
    check_same(ms.dims(), image.dims())?;
    let union = ms.union();
    if union.is_empty() {
        return Err(Error::EmptySupport);
    }
    let background = inpaint_laplace(image, &union, cfg)?;
    let overlap = ms.intersection();
    let (region, fallback) = if overlap.is_empty() {
        log::warn!("empty overlap; estimating k over the mask union");
        (&union, true)
    } else {
        (&overlap, false)
    };
    let (sum, n) = region
        .indices()
        .fold((0.0, 0usize), |(s, n), i| (s + background.data()[i], n + 1));
    let raw = 1.0 - sum / n as f64;
    let k = raw.clamp(K_MIN, 1.0);
    Ok(CorrectionParameter {
        k,
        provenance: KProvenance::Estimated,
        fallback_to_union: fallback,
        clamped: k != raw,
    })
}
