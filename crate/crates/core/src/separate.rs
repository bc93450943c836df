//! Variational layer separation.
//!
//! Pixels covered by a single mask are observed directly: the forward model
//! reproduces the layer there, so those values are frozen to the image. Only
//! pixels shared by two or more masks are unknowns. They are found by
//! projected gradient descent on
//!
//! ```text
//! E(L) = w_rec * rmse(R - J over M_union)
//!      + w_cap * rmse(R - J over M_cap)
//!      + w_tv  * sum_i TV(L_i over M_i)
//! ```
//!
//! with a monotone backtracking line search.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{check_same, BinaryMask, GrayImage, LayerSet, MaskSet};
use crate::laplace::{harmonic_fill, SolverConfig};
use crate::reconstruct::{compose_pixel, compose_pixel_grad, reconstruct_with, CorrectionParameter, ReconstructionOutput};

/// Smoothing inside the TV square root.
pub const TV_EPSILON: f64 = 1e-8;

const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
const STEP_BOUNDS: (f64, f64) = (1e-12, 1e12);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SeparatorConfig {
    /// First trial step; later iterations start from a Barzilai-Borwein estimate.
    pub step_size: f64,
    pub max_iterations: usize,
    /// Stop when the energy drops by less than this fraction over `window` iterations.
    pub tolerance: f64,
    pub window: usize,
    pub w_rec: f64,
    pub w_cap: f64,
    pub w_tv: f64,
    /// Used for the harmonic initialization.
    pub solver: SolverConfig,
}

impl Default for SeparatorConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            max_iterations: 2000,
            tolerance: 1e-6,
            window: 10,
            w_rec: 1.0,
            w_cap: 1.0,
            w_tv: 5e-3,
            solver: SolverConfig::default(),
        }
    }
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step_size", format!("{} is not positive", self.step_size)));
        }
        for (name, w) in [("w_rec", self.w_rec), ("w_cap", self.w_cap), ("w_tv", self.w_tv)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid(name, format!("{w} is negative")));
            }
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::invalid("tolerance", "must be non-negative"));
        }
        if self.window == 0 {
            return Err(Error::invalid("window", "must be positive"));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeparationResult {
    pub layers: LayerSet,
    pub reconstruction: ReconstructionOutput,
    /// Energy of the initialization followed by every accepted iterate.
    pub energy_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Number of (layer, pixel) unknowns.
    pub free_variables: usize,
}

/// Mean over `support` of `sqrt(dx^2 + dy^2 + eps^2)` with forward
/// differences; a difference whose far pixel leaves the support counts as 0.
pub fn total_variation(img: &GrayImage, support: &BinaryMask) -> Result<f64> {
    check_same(img.dims(), support.dims())?;
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let (w, h) = img.dims();
    Ok(tv_value(img.data(), support.data(), w, h) / support.area() as f64)
}

fn forward_diffs(v: &[f64], support: &[bool], w: usize, h: usize, p: usize) -> (f64, f64) {
    let (x, y) = (p % w, p / w);
    let dx = if x + 1 < w && support[p + 1] { v[p + 1] - v[p] } else { 0.0 };
    let dy = if y + 1 < h && support[p + w] { v[p + w] - v[p] } else { 0.0 };
    (dx, dy)
}

/// Unnormalized TV sum.
fn tv_value(v: &[f64], support: &[bool], w: usize, h: usize) -> f64 {
    (0..v.len())
        .filter(|&p| support[p])
        .map(|p| {
            let (dx, dy) = forward_diffs(v, support, w, h, p);
            (dx * dx + dy * dy + TV_EPSILON * TV_EPSILON).sqrt()
        })
        .sum()
}

/// Adds `scale * d(tv_value)/dv` into `grad`.
fn tv_gradient(v: &[f64], support: &[bool], w: usize, h: usize, scale: f64, grad: &mut [f64]) {
    for p in 0..v.len() {
        if !support[p] {
            continue;
        }
        let (dx, dy) = forward_diffs(v, support, w, h, p);
        let g = scale / (dx * dx + dy * dy + TV_EPSILON * TV_EPSILON).sqrt();
        if dx != 0.0 {
            grad[p + 1] += g * dx;
            grad[p] -= g * dx;
        }
        if dy != 0.0 {
            grad[p + w] += g * dy;
            grad[p] -= g * dy;
        }
    }
}

/// Pixels covered by two or more masks.
fn shared_pixels(ms: &MaskSet) -> BinaryMask {
    let (w, h) = ms.dims();
    let cover = ms.coverage();
    BinaryMask::new(w, h, cover.iter().map(|&c| c > 1).collect()).expect("dims match")
}

/// Observed values on exclusive pixels, harmonic extensions of each layer's
/// own boundary into the shared pixels. A layer whose shared part touches no
/// exclusive pixel starts from `1 - k` there.
pub fn initialize_layers(image: &GrayImage, ms: &MaskSet, k: &CorrectionParameter, cfg: &SolverConfig) -> Result<LayerSet> {
    check_same(ms.dims(), image.dims())?;
    let (w, h) = image.dims();
    let shared = shared_pixels(ms);
    let mut layers = Vec::with_capacity(ms.len());
    for mask in ms.masks() {
        let region = mask.and(&shared)?;
        let values = match harmonic_fill(image.data(), w, h, &region, Some(mask), cfg) {
            Ok(fill) => fill.values,
            Err(Error::NoBoundary) => {
                log::warn!("layer has no exclusive boundary; starting from 1 - k");
                let fallback = 1.0 - k.value();
                image
                    .data()
                    .iter()
                    .zip(region.data())
                    .map(|(&v, &r)| if r { fallback } else { v })
                    .collect()
            }
            Err(e) => return Err(e),
        };
        let masked = values
            .iter()
            .zip(mask.data())
            .map(|(&v, &m)| if m { v.clamp(0.0, 1.0) } else { 0.0 })
            .collect();
        layers.push(GrayImage::new(w, h, masked)?);
    }
    LayerSet::new(layers, ms.clone())
}

struct Problem<'a> {
    w: usize,
    h: usize,
    target: &'a [f64],
    masks: Vec<&'a [bool]>,
    mask_areas: Vec<usize>,
    /// Shared pixels with the layers covering each.
    free: Vec<(usize, Vec<usize>)>,
    union_area: usize,
    cap_area: usize,
    n_layers: usize,
    k: f64,
    cfg: &'a SeparatorConfig,
}

impl Problem<'_> {
    /// Energy and, optionally, its gradient (full-frame, one field per layer).
    fn evaluate(&self, layers: &[Vec<f64>], grad: Option<&mut [Vec<f64>]>) -> f64 {
        let cfg = self.cfg;
        let mut active = Vec::with_capacity(self.n_layers);
        let mut residuals = Vec::with_capacity(self.free.len());
        let (mut sum_union, mut sum_cap) = (0.0, 0.0);
        for (p, which) in &self.free {
            active.clear();
            active.extend(which.iter().map(|&i| layers[i][*p]));
            let raw = compose_pixel(&active, self.k);
            let r = raw.clamp(0.0, 1.0) - self.target[*p];
            let is_cap = which.len() == self.n_layers;
            sum_union += r * r;
            if is_cap {
                sum_cap += r * r;
            }
            residuals.push((r, raw, is_cap));
        }
        let rmse_union = (sum_union / self.union_area as f64).sqrt();
        let rmse_cap = if self.cap_area > 0 {
            (sum_cap / self.cap_area as f64).sqrt()
        } else {
            0.0
        };
        let mut energy = cfg.w_rec * rmse_union + cfg.w_cap * rmse_cap;
        for (i, layer) in layers.iter().enumerate() {
            energy += cfg.w_tv * tv_value(layer, self.masks[i], self.w, self.h) / self.mask_areas[i] as f64;
        }

        if let Some(grad) = grad {
            for g in grad.iter_mut() {
                g.fill(0.0);
            }
            let cu = if rmse_union > 0.0 {
                cfg.w_rec / (self.union_area as f64 * rmse_union)
            } else {
                0.0
            };
            let cc = if rmse_cap > 0.0 {
                cfg.w_cap / (self.cap_area as f64 * rmse_cap)
            } else {
                0.0
            };
            for ((p, which), &(r, raw, is_cap)) in self.free.iter().zip(&residuals) {
                if !(0.0..=1.0).contains(&raw) {
                    continue;
                }
                let dr = r * (cu + if is_cap { cc } else { 0.0 });
                if dr == 0.0 {
                    continue;
                }
                active.clear();
                active.extend(which.iter().map(|&i| layers[i][*p]));
                for (slot, &i) in which.iter().enumerate() {
                    grad[i][*p] += dr * compose_pixel_grad(&active, slot, self.k);
                }
            }
            if cfg.w_tv > 0.0 {
                for (i, layer) in layers.iter().enumerate() {
                    let scale = cfg.w_tv / self.mask_areas[i] as f64;
                    tv_gradient(layer, self.masks[i], self.w, self.h, scale, &mut grad[i]);
                }
            }
        }
        energy
    }

    /// `P(x - step * g)` on the free variables; everything else copied.
    fn step(&self, x: &[Vec<f64>], g: &[Vec<f64>], step: f64, out: &mut [Vec<f64>]) {
        for (p, which) in &self.free {
            for &i in which {
                out[i][*p] = (x[i][*p] - step * g[i][*p]).clamp(0.0, 1.0);
            }
        }
    }

    fn free_dist2(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
        self.free
            .iter()
            .flat_map(|(p, which)| {
                which.iter().map(move |&i| {
                    let d = a[i][*p] - b[i][*p];
                    d * d
                })
            })
            .sum()
    }
}

/// Energy of a candidate decomposition under `cfg`'s weights.
pub fn separation_energy(image: &GrayImage, layers: &LayerSet, k: &CorrectionParameter, cfg: &SeparatorConfig) -> Result<f64> {
    check_same(layers.dims(), image.dims())?;
    let fields: Vec<Vec<f64>> = layers.layers().iter().map(|l| l.data().to_vec()).collect();
    let ms = layers.masks();
    let union = ms.union();
    if union.is_empty() {
        return Err(Error::EmptySupport);
    }
    // Exclusive pixels enter through the residual as well when they differ
    // from the image, so evaluate every covered pixel here.
    let cover = ms.coverage();
    let mask_bits: Vec<&[bool]> = ms.masks().iter().map(BinaryMask::data).collect();
    let free: Vec<(usize, Vec<usize>)> = union
        .indices()
        .map(|p| (p, (0..ms.len()).filter(|&i| mask_bits[i][p]).collect()))
        .collect();
    let problem = Problem {
        w: image.width(),
        h: image.height(),
        target: image.data(),
        mask_areas: ms.masks().iter().map(|m| m.area().max(1)).collect(),
        masks: mask_bits,
        free,
        union_area: union.area(),
        cap_area: cover.iter().filter(|&&c| c == ms.len()).count(),
        n_layers: ms.len(),
        k: k.value(),
        cfg,
    };
    Ok(problem.evaluate(&fields, None))
}

/// Recovers per-bone layers from `image`. A run that hits `max_iterations`
/// is returned with `converged = false`.
pub fn separate(image: &GrayImage, ms: &MaskSet, k: &CorrectionParameter, cfg: &SeparatorConfig) -> Result<SeparationResult> {
    cfg.validate()?;
    check_same(ms.dims(), image.dims())?;
    let union = ms.union();
    if union.is_empty() {
        return Err(Error::EmptySupport);
    }
    let init = initialize_layers(image, ms, k, &cfg.solver)?;
    let (w, h) = image.dims();
    let mask_bits: Vec<&[bool]> = ms.masks().iter().map(BinaryMask::data).collect();
    let cover = ms.coverage();
    let free: Vec<(usize, Vec<usize>)> = (0..w * h)
        .filter(|&p| cover[p] > 1)
        .map(|p| (p, (0..ms.len()).filter(|&i| mask_bits[i][p]).collect()))
        .collect();
    let free_variables = free.iter().map(|(_, which)| which.len()).sum();
    let problem = Problem {
        w,
        h,
        target: image.data(),
        mask_areas: ms.masks().iter().map(|m| m.area().max(1)).collect(),
        masks: mask_bits,
        free,
        union_area: union.area(),
        cap_area: cover.iter().filter(|&&c| c == ms.len()).count(),
        n_layers: ms.len(),
        k: k.value(),
        cfg,
    };

    let mut x: Vec<Vec<f64>> = init.layers().iter().map(|l| l.data().to_vec()).collect();
    let mut g = vec![vec![0.0; w * h]; ms.len()];
    let mut energy = problem.evaluate(&x, Some(&mut g));
    let mut trace = vec![energy];
    let mut converged = free_variables == 0;
    let mut iterations = 0;

    let mut trial = x.clone();
    let mut g_trial = g.clone();
    let mut step = cfg.step_size;
    while !converged && iterations < cfg.max_iterations {
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..MAX_HALVINGS {
            problem.step(&x, &g, alpha, &mut trial);
            let moved = problem.free_dist2(&x, &trial);
            if moved == 0.0 {
                break;
            }
            let e = problem.evaluate(&trial, None);
            if e <= energy - ARMIJO / alpha * moved {
                accepted = Some(e);
                break;
            }
            alpha *= 0.5;
        }
        let Some(e) = accepted else {
            // No descent along the projected gradient at any tested step.
            converged = true;
            break;
        };
        problem.evaluate(&trial, Some(&mut g_trial));
        // Barzilai-Borwein estimate for the next trial step.
        let mut sy = 0.0;
        let mut ss = 0.0;
        for (p, which) in &problem.free {
            for &i in which {
                let s = trial[i][*p] - x[i][*p];
                let y = g_trial[i][*p] - g[i][*p];
                sy += s * y;
                ss += s * s;
            }
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(STEP_BOUNDS.0, STEP_BOUNDS.1)
        } else {
            (alpha * 2.0).min(STEP_BOUNDS.1)
        };
        std::mem::swap(&mut x, &mut trial);
        std::mem::swap(&mut g, &mut g_trial);
        energy = e;
        trace.push(e);
        iterations += 1;
        if trace.len() > cfg.window {
            let before = trace[trace.len() - 1 - cfg.window];
            if before - energy <= cfg.tolerance * before.abs() {
                converged = true;
            }
        }
    }
    let layers = x
        .into_iter()
        .map(|v| GrayImage::new(w, h, v))
        .collect::<Result<Vec<_>>>()?;
    let layers = LayerSet::new(layers, ms.clone())?;
    let reconstruction = reconstruct_with(&layers, k.value())?;
    Ok(SeparationResult {
        layers,
        reconstruction,
        energy_trace: trace,
        converged,
        iterations,
        free_variables,
    })
}
