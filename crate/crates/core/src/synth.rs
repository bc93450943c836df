//! Synthetic joints with exact ground-truth layers.
//!
//! Two sources are supported: parametric phantoms built from capsule-shaped
//! bones over a smooth soft-tissue field, and overlapped images produced from
//! a non-overlapped radiograph by translating each bone toward the others and
//! recomposing the result with the superposition model.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    check_same, save_mask, save_raster, BinaryMask, BitDepth, GrayImage, LayerSet, MaskSet,
};
use crate::laplace::{inpaint_laplace, SolverConfig};
use crate::reconstruct::{compose_pixel, estimate_k, CorrectionParameter};

/// Version tag written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;

/// Stadium shape: all points within `radius` of a segment of length
/// `2 * half_length` through `center`, oriented at `angle` radians from +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Capsule {
    /// `[x, y]` in pixels.
    pub center: [f64; 2],
    pub half_length: f64,
    pub radius: f64,
    pub angle: f64,
}

impl Capsule {
    fn endpoints(&self) -> ([f64; 2], [f64; 2]) {
        let (s, c) = self.angle.sin_cos();
        let [cx, cy] = self.center;
        let (hx, hy) = (c * self.half_length, s * self.half_length);
        ([cx - hx, cy - hy], [cx + hx, cy + hy])
    }

    /// Euclidean distance from `(x, y)` to the capsule axis segment.
    pub fn axis_distance(&self, x: f64, y: f64) -> f64 {
        let (a, b) = self.endpoints();
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        let t = if len2 > 0.0 {
            (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let (px, py) = (a[0] + t * dx - x, a[1] + t * dy - y);
        (px * px + py * py).sqrt()
    }

    /// `[xmin, ymin, xmax, ymax]` of the shape.
    pub fn bounds(&self) -> [f64; 4] {
        let (a, b) = self.endpoints();
        [
            a[0].min(b[0]) - self.radius,
            a[1].min(b[1]) - self.radius,
            a[0].max(b[0]) + self.radius,
            a[1].max(b[1]) + self.radius,
        ]
    }
}

/// Parametric joint phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub side: usize,
    pub bones: Vec<Capsule>,
    /// Width in pixels of the denser cortical band along each bone outline.
    pub rim_width: f64,
    /// Amplitude of the band-limited bone texture; the soft-tissue field
    /// varies by half this amount.
    pub texture_amplitude: f64,
    /// Mean soft-tissue absorption, also used as the composition `k`.
    pub soft_tissue_absorption: f64,
    /// Absorption of bone interior on top of the soft tissue.
    pub bone_absorption: f64,
    /// Extra absorption of the cortical rim.
    pub rim_absorption: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::joint(256, 8.0, 0)
    }
}

impl PhantomSpec {
    /// Two vertical bones meeting at the frame center with `gap` pixels
    /// between their ends; a negative gap makes them overlap.
    pub fn joint(side: usize, gap: f64, seed: u64) -> Self {
        let scale = side as f64 / 256.0;
        let half_length = 30.0 * scale;
        let radius = 24.0 * scale;
        let mid = side as f64 / 2.0;
        let offset = gap / 2.0 + half_length + radius;
        let bone = |cy: f64| Capsule {
            center: [mid, cy],
            half_length,
            radius,
            angle: PI / 2.0,
        };
        Self {
            side,
            bones: vec![bone(mid - offset), bone(mid + offset)],
            rim_width: 3.0 * scale.max(0.5),
            texture_amplitude: 0.03,
            soft_tissue_absorption: 0.25,
            bone_absorption: 0.12,
            rim_absorption: 0.06,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0 {
            return Err(Error::invalid("side", "must be positive"));
        }
        if self.bones.len() < 2 {
            return Err(Error::TooFewMasks(self.bones.len()));
        }
        let limit = (self.side - 1) as f64;
        for (i, b) in self.bones.iter().enumerate() {
            if !(b.radius > 0.0 && b.half_length >= 0.0) {
                return Err(Error::invalid("bones", format!("bone {i} has a degenerate shape")));
            }
            let [x0, y0, x1, y1] = b.bounds();
            if x0 < 0.0 || y0 < 0.0 || x1 > limit || y1 > limit {
                return Err(Error::invalid("bones", format!("bone {i} leaves the frame")));
            }
        }
        if !(self.rim_width >= 0.0 && self.texture_amplitude >= 0.0) {
            return Err(Error::invalid("rim_width", "rim width and texture amplitude must be non-negative"));
        }
        let base = self.soft_tissue_absorption;
        if !(base > 0.0 && base < 1.0) {
            return Err(Error::invalid("soft_tissue_absorption", format!("{base} is outside (0, 1)")));
        }
        let peak = base
            + 0.5 * self.texture_amplitude
            + self.bone_absorption
            + self.rim_absorption
            + self.texture_amplitude;
        if self.bone_absorption < 0.0 || self.rim_absorption < 0.0 || peak >= 1.0 {
            return Err(Error::invalid("bone_absorption", format!("peak absorption {peak} is outside (0, 1)")));
        }
        Ok(())
    }
}

/// Plane-wave sum used for textures and the soft-tissue field.
struct WaveField {
    waves: Vec<[f64; 4]>, // fx, fy, phase, amplitude
}

impl WaveField {
    fn random(rng: &mut ChaCha8Rng, count: usize, min_period: f64, max_period: f64, gain: f64) -> Self {
        let amplitude = gain * (2.0 / count as f64).sqrt();
        let waves = (0..count)
            .map(|_| {
                let period = rng.random_range(min_period..=max_period);
                let theta = rng.random_range(0.0..2.0 * PI);
                let phase = rng.random_range(0.0..2.0 * PI);
                let f = 2.0 * PI / period;
                [f * theta.cos(), f * theta.sin(), phase, amplitude]
            })
            .collect();
        Self { waves }
    }

    /// Value clamped to `[-1, 1]`.
    fn at(&self, x: f64, y: f64) -> f64 {
        self.waves
            .iter()
            .map(|[fx, fy, ph, a]| a * (fx * x + fy * y + ph).cos())
            .sum::<f64>()
            .clamp(-1.0, 1.0)
    }
}

/// A phantom and its exact decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub image: GrayImage,
    pub masks: MaskSet,
    pub layers: LayerSet,
    /// Soft-tissue-only image, equal to `image` off the bone union.
    pub background: GrayImage,
    pub k: CorrectionParameter,
    pub saturated_count: usize,
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let n = spec.side;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let field = WaveField::random(&mut rng, 4, n as f64 / 2.0, 2.0 * n as f64, 1.0);
    let textures: Vec<WaveField> = spec
        .bones
        .iter()
        .map(|_| WaveField::random(&mut rng, 16, 5.0, 14.0, 0.5))
        .collect();

    let base = spec.soft_tissue_absorption;
    let soft = |x: usize, y: usize| base + 0.5 * spec.texture_amplitude * field.at(x as f64, y as f64);
    let background = GrayImage::from_fn(n, n, |x, y| 1.0 - soft(x, y))?;

    let mut masks = Vec::with_capacity(spec.bones.len());
    let mut layers = Vec::with_capacity(spec.bones.len());
    for (bone, texture) in spec.bones.iter().zip(&textures) {
        let mut mask = vec![false; n * n];
        let mut layer = vec![0.0; n * n];
        for y in 0..n {
            for x in 0..n {
                let d = bone.axis_distance(x as f64, y as f64);
                if d > bone.radius {
                    continue;
                }
                let rim = if d > bone.radius - spec.rim_width {
                    spec.rim_absorption
                } else {
                    0.0
                };
                let local = texture.at(x as f64 - bone.center[0], y as f64 - bone.center[1]);
                let absorption = soft(x, y) + spec.bone_absorption + rim + spec.texture_amplitude * local;
                mask[y * n + x] = true;
                layer[y * n + x] = (1.0 - absorption).clamp(0.0, 1.0);
            }
        }
        masks.push(BinaryMask::new(n, n, mask)?);
        layers.push(GrayImage::new(n, n, layer)?);
    }
    let masks = MaskSet::new(masks)?;
    let layers = LayerSet::new(layers, masks.clone())?;
    let k = CorrectionParameter::supplied(base)?;
    let full: Vec<Vec<f64>> = layers.layers().iter().map(|l| l.data().to_vec()).collect();
    let (image, saturated_count) = compose(&background, &full, &masks, k.value())?;
    Ok(Phantom {
        image,
        masks,
        layers,
        background,
        k,
        saturated_count,
    })
}

/// Composes full-frame layer fields: the background off the union, the
/// superposition model wherever at least one mask is set.
pub(crate) fn compose(
    background: &GrayImage,
    fields: &[Vec<f64>],
    masks: &MaskSet,
    k: f64,
) -> Result<(GrayImage, usize)> {
    check_same(masks.dims(), background.dims())?;
    let (w, h) = background.dims();
    let mut data = background.data().to_vec();
    let mut active = Vec::with_capacity(fields.len());
    for (p, out) in data.iter_mut().enumerate() {
        active.clear();
        for (field, mask) in fields.iter().zip(masks.masks()) {
            if mask.data()[p] {
                active.push(field[p]);
            }
        }
        if !active.is_empty() {
            *out = compose_pixel(&active, k);
        }
    }
    GrayImage::from_clamped(w, h, data)
}

/// Shifts a full-frame field by `(dy, dx)`; pixels with no source take `fill`.
pub(crate) fn shift_field(values: &[f64], w: usize, h: usize, dy: i64, dx: i64, fill: &[f64]) -> Vec<f64> {
    let mut out = fill.to_vec();
    for y in 0..h {
        let sy = y as i64 - dy;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..w {
            let sx = x as i64 - dx;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            out[y * w + x] = values[sy as usize * w + sx as usize];
        }
    }
    out
}

/// Bones moved by integer vectors, each carried as a full-frame field whose
/// off-mask pixels hold the background.
#[derive(Debug, Clone)]
pub struct ShiftedBones {
    pub masks: MaskSet,
    pub fields: Vec<Vec<f64>>,
}

impl ShiftedBones {
    pub fn layers(&self) -> Result<LayerSet> {
        let (w, h) = self.masks.dims();
        let layers = self
            .fields
            .iter()
            .map(|f| GrayImage::new(w, h, f.clone()))
            .collect::<Result<Vec<_>>>()?;
        LayerSet::from_unmasked(layers, self.masks.clone())
    }

    pub fn compose(&self, background: &GrayImage, k: f64) -> Result<(GrayImage, usize)> {
        compose(background, &self.fields, &self.masks, k)
    }
}

/// Translates every bone of `layers` by its `(dy, dx)` shift. Fails with
/// `None` when a mask would leave the frame.
pub fn shift_bones(background: &GrayImage, layers: &LayerSet, shifts: &[(i64, i64)]) -> Result<Option<ShiftedBones>> {
    if shifts.len() != layers.len() {
        return Err(Error::CountMismatch {
            expected: layers.len(),
            found: shifts.len(),
        });
    }
    check_same(layers.dims(), background.dims())?;
    let (w, h) = background.dims();
    let bg = background.data();
    let mut masks = Vec::with_capacity(shifts.len());
    let mut fields = Vec::with_capacity(shifts.len());
    for ((layer, mask), &(dy, dx)) in layers.layers().iter().zip(layers.masks().masks()).zip(shifts) {
        let (moved, lost) = mask.translate(dy, dx);
        if lost > 0 {
            return Ok(None);
        }
        let extended: Vec<f64> = layer
            .data()
            .iter()
            .zip(mask.data())
            .zip(bg)
            .map(|((&v, &m), &b)| if m { v } else { b })
            .collect();
        fields.push(shift_field(&extended, w, h, dy, dx, bg));
        masks.push(moved);
    }
    Ok(Some(ShiftedBones {
        masks: MaskSet::new(masks)?,
        fields,
    }))
}

/// Shift sampling for overlap synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OverlapSpec {
    /// Per-bone shift magnitude range in pixels, inclusive.
    pub shift_min: u32,
    pub shift_max: u32,
    pub seed: u64,
    /// Resample until the shifted masks intersect.
    pub require_overlap: bool,
    pub solver: SolverConfig,
}

impl Default for OverlapSpec {
    fn default() -> Self {
        Self {
            shift_min: 2,
            shift_max: 20,
            seed: 0,
            require_overlap: true,
            solver: SolverConfig::default(),
        }
    }
}

impl OverlapSpec {
    pub fn validate(&self, side: usize) -> Result<()> {
        if self.shift_min > self.shift_max {
            return Err(Error::invalid("shift_min", "must not exceed shift_max"));
        }
        if 4 * self.shift_max as usize >= side {
            return Err(Error::invalid(
                "shift_max",
                format!("{} must be below a quarter of the image side {side}", self.shift_max),
            ));
        }
        self.solver.validate()
    }
}

/// An overlapped image synthesized from a non-overlapped one.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub image: GrayImage,
    /// Masks after shifting.
    pub masks: MaskSet,
    pub gt_layers: LayerSet,
    pub k_used: CorrectionParameter,
    pub overlap_area: usize,
    /// Per-bone `(dy, dx)`.
    pub shifts: Vec<(i64, i64)>,
    pub saturated_count: usize,
    /// Harmonic soft-tissue background.
    pub background: GrayImage,
}

/// Unit vector from each mask centroid toward the mean centroid of the others.
fn approach_directions(ms: &MaskSet) -> Result<Vec<(f64, f64)>> {
    let centroids = ms
        .masks()
        .iter()
        .map(|m| m.centroid().ok_or_else(|| Error::Synthesis("a bone mask is empty".into())))
        .collect::<Result<Vec<_>>>()?;
    let n = centroids.len() as f64;
    let (sx, sy) = centroids.iter().fold((0.0, 0.0), |(a, b), c| (a + c.0, b + c.1));
    centroids
        .iter()
        .map(|&(cx, cy)| {
            let ox = (sx - cx) / (n - 1.0) - cx;
            let oy = (sy - cy) / (n - 1.0) - cy;
            let norm = (ox * ox + oy * oy).sqrt();
            if norm == 0.0 {
                Err(Error::Synthesis("bone centroids coincide".into()))
            } else {
                Ok((ox / norm, oy / norm))
            }
        })
        .collect()
}

/// Creates an overlapped sample from an image whose bone masks are disjoint.
///
/// The bones are lifted onto a harmonic soft-tissue background, each moved
/// toward the others by a random integer shift, and recomposed; `k` is
/// estimated from the background under the shifted masks.
pub fn synthesize_overlap(image: &GrayImage, ms: &MaskSet, spec: &OverlapSpec) -> Result<SyntheticSample> {
    check_same(ms.dims(), image.dims())?;
    let (w, h) = image.dims();
    spec.validate(w.min(h))?;
    let shared = ms.coverage().iter().filter(|&&c| c > 1).count();
    if shared > 0 {
        return Err(Error::MasksOverlap(shared));
    }
    let directions = approach_directions(ms)?;
    let background = inpaint_laplace(image, &ms.union(), &spec.solver)?;
    let layers = LayerSet::from_unmasked(vec![image.clone(); ms.len()], ms.clone())?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let attempts = spec.shift_max.max(1);
    for _ in 0..attempts {
        let shifts: Vec<(i64, i64)> = directions
            .iter()
            .map(|&(ux, uy)| {
                let s = rng.random_range(spec.shift_min..=spec.shift_max) as f64;
                ((s * uy).round() as i64, (s * ux).round() as i64)
            })
            .collect();
        let Some(moved) = shift_bones(&background, &layers, &shifts)? else {
            continue;
        };
        let overlap = moved.masks.intersection();
        if spec.require_overlap && overlap.is_empty() {
            continue;
        }
        let k_used = estimate_k(&background, &moved.masks, &spec.solver)?;
        let (composed, saturated_count) = moved.compose(&background, k_used.value())?;
        return Ok(SyntheticSample {
            image: composed,
            gt_layers: moved.layers()?,
            masks: moved.masks,
            k_used,
            overlap_area: overlap.area(),
            shifts,
            saturated_count,
            background,
        });
    }
    Err(Error::Synthesis(format!(
        "no admissible shift found in {attempts} attempts (range {}..={})",
        spec.shift_min, spec.shift_max
    )))
}

/// File stem suffix for layer `i` of `n`: `upper`/`lower` for pairs, else the index.
pub fn layer_label(i: usize, n: usize) -> String {
    match (n, i) {
        (2, 0) => "upper".to_string(),
        (2, 1) => "lower".to_string(),
        _ => i.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub schema_version: u32,
    pub kind: String,
    pub seed: u64,
    pub k_used: f64,
    pub k_provenance: crate::reconstruct::KProvenance,
    pub shifts: Vec<(i64, i64)>,
    pub overlap_area: usize,
    pub saturated_count: usize,
}

/// Writes `image.png`, `mask_<label>.png`, `gt_<label>.png` and `meta.json`.
/// Returns the written file names.
pub fn write_sample_dir(
    dir: &Path,
    image: &GrayImage,
    layers: &LayerSet,
    meta: &SampleMeta,
) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = vec!["image.png".to_string()];
    save_raster(image, dir.join("image.png"), BitDepth::Sixteen)?;
    let n = layers.len();
    for i in 0..n {
        let label = layer_label(i, n);
        let mask_name = format!("mask_{label}.png");
        let gt_name = format!("gt_{label}.png");
        save_mask(layers.masks().get(i), dir.join(&mask_name))?;
        save_raster(layers.layer(i), dir.join(&gt_name), BitDepth::Sixteen)?;
        written.push(mask_name);
        written.push(gt_name);
    }
    let path = dir.join("meta.json");
    let json = serde_json::to_string_pretty(meta)?;
    fs::write(&path, json + "\n").map_err(|source| Error::Io { path, source })?;
    written.push("meta.json".to_string());
    Ok(written)
}

impl SyntheticSample {
    pub fn meta(&self, seed: u64) -> SampleMeta {
        SampleMeta {
            schema_version: SCHEMA_VERSION,
            kind: "synthetic_overlap".into(),
            seed,
            k_used: self.k_used.value(),
            k_provenance: self.k_used.provenance(),
            shifts: self.shifts.clone(),
            overlap_area: self.overlap_area,
            saturated_count: self.saturated_count,
        }
    }
}

impl Phantom {
    pub fn meta(&self, seed: u64) -> SampleMeta {
        SampleMeta {
            schema_version: SCHEMA_VERSION,
            kind: "phantom".into(),
            seed,
            k_used: self.k.value(),
            k_provenance: self.k.provenance(),
            shifts: vec![(0, 0); self.masks.len()],
            overlap_area: self.masks.intersection().area(),
            saturated_count: self.saturated_count,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::reconstruct;

    #[test]
    fn default_spec_is_valid_and_disjoint() {
        let spec = PhantomSpec::default();
        spec.validate().unwrap();
        let p = make_phantom(&spec).unwrap();
        assert!(p.masks.pairwise_disjoint());
        assert_eq!(p.saturated_count, 0);
        assert_eq!(p.k.value(), 0.25);
    }

    #[test]
    fn flat_texture_is_piecewise_constant() {
        let spec = PhantomSpec {
            texture_amplitude: 0.0,
            rim_width: 0.0,
            ..PhantomSpec::joint(64, 4.0, 3)
        };
        let p = make_phantom(&spec).unwrap();
        let bg = p.image.get(0, 0);
        assert!(p.background.data().iter().all(|&v| v == bg));
        for (layer, mask) in p.layers.layers().iter().zip(p.masks.masks()) {
            let vals: Vec<f64> = mask.indices().map(|i| layer.data()[i]).collect();
            assert!(vals.iter().all(|&v| v == vals[0]));
            assert!((vals[0] - (1.0 - 0.25 - 0.12)).abs() < 1e-12);
        }
        // With a rim the layers take exactly two values.
        let p = make_phantom(&PhantomSpec { rim_width: 2.0, ..spec }).unwrap();
        let mut levels: Vec<f64> = p.masks.get(0).indices().map(|i| p.layers.layer(0).data()[i]).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        assert_eq!(levels.len(), 2);
    }

    #[test]
    fn phantom_is_deterministic_per_seed() {
        let a = make_phantom(&PhantomSpec::joint(64, 2.0, 11)).unwrap();
        let b = make_phantom(&PhantomSpec::joint(64, 2.0, 11)).unwrap();
        assert_eq!(a, b);
        let c = make_phantom(&PhantomSpec::joint(64, 2.0, 12)).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn disjoint_phantom_reconstructs_exactly() {
        let p = make_phantom(&PhantomSpec::joint(96, 6.0, 5)).unwrap();
        let r = reconstruct(&p.layers, &p.k).unwrap();
        let union = p.masks.union();
        for i in union.indices() {
            assert_eq!(r.image.data()[i], p.image.data()[i]);
        }
    }

    #[test]
    fn overlapping_phantom_round_trips() {
        let p = make_phantom(&PhantomSpec::joint(96, -10.0, 5)).unwrap();
        assert!(p.masks.intersection().area() > 0);
        let r = reconstruct(&p.layers, &p.k).unwrap();
        for i in p.masks.union().indices() {
            assert!((r.image.data()[i] - p.image.data()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn bone_outside_frame_rejected() {
        let mut spec = PhantomSpec::joint(64, 4.0, 0);
        spec.bones[0].center[1] = 2.0;
        assert!(make_phantom(&spec).is_err());
    }

    #[test]
    fn zero_shift_is_identity() {
        let p = make_phantom(&PhantomSpec::joint(64, 4.0, 1)).unwrap();
        let spec = OverlapSpec {
            shift_min: 0,
            shift_max: 0,
            require_overlap: false,
            ..OverlapSpec::default()
        };
        let s = synthesize_overlap(&p.image, &p.masks, &spec).unwrap();
        assert_eq!(s.image, p.image);
        assert_eq!(s.masks, p.masks);
        assert_eq!(s.overlap_area, 0);
        assert_eq!(s.shifts, vec![(0, 0), (0, 0)]);
    }

    #[test]
    fn flat_bones_saturate_in_overlap() {
        // Soft tissue 0.7 (absorption 0.3); bones with absorption 0.55 overlap
        // to 0.55^2 / 0.3 = 1.008, which clamps to intensity 0.
        let n = 64;
        let ms = MaskSet::new(vec![
            BinaryMask::from_fn(n, n, |x, y| (20..44).contains(&x) && (10..30).contains(&y)).unwrap(),
            BinaryMask::from_fn(n, n, |x, y| (20..44).contains(&x) && (34..54).contains(&y)).unwrap(),
        ])
        .unwrap();
        let union = ms.union();
        let img = GrayImage::from_fn(n, n, |x, y| if union.get(x, y) { 0.45 } else { 0.7 }).unwrap();
        let spec = OverlapSpec {
            shift_min: 6,
            shift_max: 6,
            ..OverlapSpec::default()
        };
        let s = synthesize_overlap(&img, &ms, &spec).unwrap();
        assert!((s.k_used.value() - 0.3).abs() < 1e-9);
        assert_eq!(s.shifts, vec![(6, 0), (-6, 0)]);
        let overlap = s.masks.intersection();
        assert_eq!(overlap.area(), 24 * 8);
        assert_eq!(s.saturated_count, overlap.area());
        assert!(overlap.indices().all(|i| s.image.data()[i] == 0.0));
    }

    #[test]
    fn rejects_overlapping_input() {
        let p = make_phantom(&PhantomSpec::joint(64, -6.0, 1)).unwrap();
        assert!(matches!(
            synthesize_overlap(&p.image, &p.masks, &OverlapSpec { shift_max: 10, ..Default::default() }),
            Err(Error::MasksOverlap(_))
        ));
    }

    #[test]
    fn exclusive_regions_match_ground_truth() {
        let p = make_phantom(&PhantomSpec::joint(128, 6.0, 4)).unwrap();
        let spec = OverlapSpec {
            shift_max: 12,
            seed: 9,
            ..OverlapSpec::default()
        };
        let s = synthesize_overlap(&p.image, &p.masks, &spec).unwrap();
        assert!(s.overlap_area > 0);
        let overlap = s.masks.intersection();
        for (i, mask) in s.masks.masks().iter().enumerate() {
            for q in mask.and_not(&overlap).unwrap().indices() {
                assert_eq!(s.image.data()[q], s.gt_layers.layer(i).data()[q]);
            }
        }
        let union = s.masks.union();
        for q in union.not().indices() {
            assert_eq!(s.image.data()[q], s.background.data()[q]);
        }
    }

    #[test]
    fn invalid_overlap_spec() {
        let p = make_phantom(&PhantomSpec::joint(64, 4.0, 1)).unwrap();
        let too_far = OverlapSpec { shift_max: 16, ..Default::default() };
        assert!(synthesize_overlap(&p.image, &p.masks, &too_far).is_err());
        let inverted = OverlapSpec { shift_min: 5, shift_max: 3, ..Default::default() };
        assert!(synthesize_overlap(&p.image, &p.masks, &inverted).is_err());
    }

    #[test]
    fn sample_dir_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = make_phantom(&PhantomSpec::joint(32, 2.0, 1)).unwrap();
        let files = write_sample_dir(dir.path(), &p.image, &p.layers, &p.meta(1)).unwrap();
        assert_eq!(
            files,
            ["image.png", "mask_upper.png", "gt_upper.png", "mask_lower.png", "gt_lower.png", "meta.json"]
        );
        let meta: SampleMeta =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
        assert_eq!(meta, p.meta(1));
    }
}
