//! Training objectives of the separation framework, as pure functions.
//!
//! The generator/reconstructor loss combines a BCE-Dice term on supervisor
//! masks with RMSE reconstruction terms over the union and the overlap; the
//! supervisor loss scores real and fake samples against stacked target masks.
//! Pre-training adds ground-truth layer terms to both.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{check_same, BinaryMask, GrayImage, LayerSet, MaskSet};

/// Probability clamp used by the cross-entropy term.
pub const BCE_EPSILON: f64 = 1e-7;
/// Additive smoothing in both numerator and denominator of the Dice ratio.
pub const DICE_SMOOTHING: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha0: f64,
    pub beta0: f64,
    pub alpha1: f64,
    pub beta1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            beta0: 0.5,
            alpha1: 0.5,
            beta1: 0.5,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("alpha0", self.alpha0),
            ("beta0", self.beta0),
            ("alpha1", self.alpha1),
            ("beta1", self.beta1),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(name, format!("{v} is outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Root mean squared difference over `support`; 0 when the support is empty.
pub fn rmse_loss(x: &GrayImage, y: &GrayImage, support: &BinaryMask) -> Result<f64> {
    check_same(x.dims(), y.dims())?;
    check_same(x.dims(), support.dims())?;
    let (sum, n) = support.indices().fold((0.0, 0usize), |(s, n), i| {
        let d = x.data()[i] - y.data()[i];
        (s + d * d, n + 1)
    });
    Ok(if n == 0 { 0.0 } else { (sum / n as f64).sqrt() })
}

/// `0.5 * BCE + 0.5 * (1 - Dice)` over one prediction channel.
pub fn bce_dice_loss(pred: &GrayImage, target: &BinaryMask) -> Result<f64> {
    bce_dice_loss_stack(std::slice::from_ref(pred), std::slice::from_ref(target))
}

/// BCE-Dice over a stack of channels, pooled as one flattened tensor.
///
/// BCE uses probabilities clamped to `[eps, 1 - eps]`; Dice uses the raw
/// predictions with smoothing 1.
pub fn bce_dice_loss_stack(preds: &[GrayImage], targets: &[BinaryMask]) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::CountMismatch {
            expected: targets.len(),
            found: preds.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut bce = 0.0;
    let mut count = 0usize;
    let (mut intersection, mut pred_sum, mut target_sum) = (0.0, 0.0, 0.0);
    for (p, t) in preds.iter().zip(targets) {
        check_same(t.dims(), p.dims())?;
        for (&v, &bit) in p.data().iter().zip(t.data()) {
            let clamped = v.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
            let target = if bit { 1.0 } else { 0.0 };
            bce -= target * clamped.ln() + (1.0 - target) * (1.0 - clamped).ln();
            intersection += v * target;
            pred_sum += v;
            target_sum += target;
            count += 1;
        }
    }
    let bce = bce / count as f64;
    let dice = (2.0 * intersection + DICE_SMOOTHING) / (pred_sum + target_sum + DICE_SMOOTHING);
    Ok(0.5 * bce + 0.5 * (1.0 - dice))
}

/// Target mask stacks for the supervisor, each with `2n` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisorTargets {
    /// `{M_i - M_cap}` followed by `{M_i}`.
    pub real: Vec<BinaryMask>,
    /// `{M_i}` followed by all-zero channels.
    pub fake: Vec<BinaryMask>,
    /// `{M_i}` twice, for the ground-truth sample used in pre-training.
    pub pretrain: Vec<BinaryMask>,
}

pub fn build_supervisor_targets(ms: &MaskSet) -> SupervisorTargets {
    let overlap = ms.intersection();
    let (w, h) = ms.dims();
    let empty = BinaryMask::empty(w, h).expect("mask set dimensions are valid");
    let masks = ms.masks();
    let exclusive = masks.iter().map(|m| m.and_not(&overlap).expect("same frame"));

    let real = exclusive.chain(masks.iter().cloned()).collect();
    let fake = masks
        .iter()
        .cloned()
        .chain(std::iter::repeat_n(empty, masks.len()))
        .collect();
    let pretrain = masks.iter().chain(masks.iter()).cloned().collect();
    SupervisorTargets {
        real,
        fake,
        pretrain,
    }
}

/// Inputs of the generator/reconstructor loss.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossInputs<'a> {
    /// Supervisor output `M'`, one channel per bone.
    pub predicted_masks: &'a [GrayImage],
    pub masks: &'a MaskSet,
    pub reconstruction: &'a GrayImage,
    pub image: &'a GrayImage,
}

/// `alpha0 * Lb(M', M) + beta0 * Lr(R, J) + Lr(R_cap, J_cap)`, with the RMSE
/// terms normalized over the union and the overlap respectively.
pub fn loss_gr(inputs: &GeneratorLossInputs<'_>, w: &LossWeights) -> Result<f64> {
    let ms = inputs.masks;
    check_same(ms.dims(), inputs.reconstruction.dims())?;
    check_same(ms.dims(), inputs.image.dims())?;
    let mask_term = bce_dice_loss_stack(inputs.predicted_masks, ms.masks())?;
    let union_term = rmse_loss(inputs.reconstruction, inputs.image, &ms.union())?;
    let overlap_term = rmse_loss(inputs.reconstruction, inputs.image, &ms.intersection())?;
    Ok(w.alpha0 * mask_term + w.beta0 * union_term + overlap_term)
}

fn check_channels(preds: &[GrayImage], targets: &[BinaryMask]) -> Result<()> {
    if preds.len() != targets.len() {
        return Err(Error::CountMismatch {
            expected: targets.len(),
            found: preds.len(),
        });
    }
    Ok(())
}

/// `alpha1 * Lb(D(J_r), M_r) + beta1 * Lb(D(J_f), M_f)`.
pub fn loss_d(
    pred_real: &[GrayImage],
    pred_fake: &[GrayImage],
    targets: &SupervisorTargets,
    w: &LossWeights,
) -> Result<f64> {
    check_channels(pred_real, &targets.real)?;
    check_channels(pred_fake, &targets.fake)?;
    Ok(w.alpha1 * bce_dice_loss_stack(pred_real, &targets.real)?
        + w.beta1 * bce_dice_loss_stack(pred_fake, &targets.fake)?)
}

/// [`loss_gr`] plus the per-layer RMSE against ground truth, averaged over layers.
pub fn loss_gr_pretrain(
    inputs: &GeneratorLossInputs<'_>,
    layers: &LayerSet,
    ground_truth: &LayerSet,
    w: &LossWeights,
) -> Result<f64> {
    if layers.len() != ground_truth.len() {
        return Err(Error::CountMismatch {
            expected: ground_truth.len(),
            found: layers.len(),
        });
    }
    let base = loss_gr(inputs, w)?;
    let mut layer_term = 0.0;
    for ((l, g), m) in layers
        .layers()
        .iter()
        .zip(ground_truth.layers())
        .zip(layers.masks().masks())
    {
        layer_term += rmse_loss(l, g, m)?;
    }
    Ok(base + layer_term / layers.len() as f64)
}

/// [`loss_d`] plus the BCE-Dice of the supervisor on the ground-truth layers
/// against `M_g = {M, M}`.
pub fn loss_d_pretrain(
    pred_real: &[GrayImage],
    pred_fake: &[GrayImage],
    pred_ground_truth: &[GrayImage],
    targets: &SupervisorTargets,
    w: &LossWeights,
) -> Result<f64> {
    check_channels(pred_ground_truth, &targets.pretrain)?;
    Ok(loss_d(pred_real, pred_fake, targets, w)?
        + bce_dice_loss_stack(pred_ground_truth, &targets.pretrain)?)
}
