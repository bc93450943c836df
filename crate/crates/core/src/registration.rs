//! Translation registration harness comparing whole-image alignment with
//! per-layer alignment after separation.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::imaging::{check_same, load_mask, load_raster, save_mask, save_raster, BinaryMask, BitDepth, GrayImage, MaskSet};
use crate::reconstruct::{compose_pixel, estimate_k};
use crate::separate::{separate, SeparatorConfig};
use crate::synth::{layer_label, make_phantom, shift_bones, PhantomSpec, SCHEMA_VERSION};

/// Best integer translation and the MSE it leaves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Registration {
    /// `(dy, dx)` such that `moving(p + d)` matches `fixed(p)`.
    pub displacement: (i64, i64),
    pub mse: f64,
}

/// Exhaustive search over `[-radius, radius]^2`. The cost of a displacement is
/// the MSE over support pixels whose displaced position stays in frame. Ties
/// go to the smaller displacement norm, then to the smaller `(dy, dx)`.
pub fn register_translation(moving: &GrayImage, fixed: &GrayImage, support: &BinaryMask, radius: usize) -> Result<Registration> {
    check_same(moving.dims(), fixed.dims())?;
    check_same(support.dims(), fixed.dims())?;
    if support.is_empty() {
        return Err(Error::EmptySupport);
    }
    let (w, h) = fixed.dims();
    let points: Vec<(i64, i64, f64)> = support
        .indices()
        .map(|p| ((p / w) as i64, (p % w) as i64, fixed.data()[p]))
        .collect();
    let r = radius as i64;
    let mut best: Option<(f64, i64, (i64, i64))> = None;
    for dy in -r..=r {
        for dx in -r..=r {
            let (mut sum, mut n) = (0.0, 0usize);
            for &(y, x, f) in &points {
                let (my, mx) = (y + dy, x + dx);
                if my < 0 || mx < 0 || my >= h as i64 || mx >= w as i64 {
                    continue;
                }
                let d = moving.data()[my as usize * w + mx as usize] - f;
                sum += d * d;
                n += 1;
            }
            if n == 0 {
                continue;
            }
            let key = (sum / n as f64, dy * dy + dx * dx, (dy, dx));
            let better = match &best {
                None => true,
                Some(b) => key.0.total_cmp(&b.0).then(key.1.cmp(&b.1)).then(key.2.cmp(&b.2)).is_lt(),
            };
            if better {
                best = Some(key);
            }
        }
    }
    let (mse, _, displacement) = best.ok_or(Error::EmptySupport)?;
    Ok(Registration { displacement, mse })
}

/// A baseline/follow-up pair whose bones moved by known integer vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationTrial {
    pub fixed: GrayImage,
    pub fixed_masks: MaskSet,
    pub moving: GrayImage,
    pub moving_masks: MaskSet,
    /// Per-bone `(dy, dx)` from fixed to moving.
    pub true_shifts: Vec<(i64, i64)>,
    pub radius: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Bones move independently; shifts always differ.
    Independent,
    /// Both bones share one shift.
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialSpec {
    pub side: usize,
    /// Inclusive range of the end-to-end gap of the baseline phantom; negative
    /// values make the bones overlap.
    pub gap_min: f64,
    pub gap_max: f64,
    /// Largest per-axis shift magnitude.
    pub max_shift: i64,
    pub radius: usize,
    pub shift_mode: ShiftMode,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            side: 256,
            gap_min: -20.0,
            gap_max: -4.0,
            max_shift: 6,
            radius: 24,
            shift_mode: ShiftMode::Independent,
        }
    }
}

impl TrialSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_min <= self.gap_max) {
            return Err(Error::invalid("gap_min", "must not exceed gap_max"));
        }
        if self.max_shift < 1 || self.max_shift as usize > self.radius {
            return Err(Error::invalid("max_shift", "must be in 1..=radius"));
        }
        Ok(())
    }
}

/// Builds one trial from a phantom seeded with `seed`.
pub fn generate_trial(seed: u64, spec: &TrialSpec) -> Result<RegistrationTrial> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gap = if spec.gap_min == spec.gap_max {
        spec.gap_min
    } else {
        rng.random_range(spec.gap_min..=spec.gap_max)
    };
    let phantom = make_phantom(&PhantomSpec::joint(spec.side, gap, seed))?;
    let m = spec.max_shift;
    let draw = |rng: &mut ChaCha8Rng| (rng.random_range(-m..=m), rng.random_range(-m..=m));
    for _ in 0..100 {
        let shifts = match spec.shift_mode {
            ShiftMode::Equal => vec![draw(&mut rng); phantom.masks.len()],
            ShiftMode::Independent => {
                let s: Vec<(i64, i64)> = (0..phantom.masks.len()).map(|_| draw(&mut rng)).collect();
                if s.windows(2).any(|p| p[0] == p[1]) {
                    continue;
                }
                s
            }
        };
        let Some(moved) = shift_bones(&phantom.background, &phantom.layers, &shifts)? else {
            continue;
        };
        let (moving, _) = moved.compose(&phantom.background, phantom.k.value())?;
        return Ok(RegistrationTrial {
            fixed: phantom.image,
            fixed_masks: phantom.masks,
            moving,
            moving_masks: moved.masks,
            true_shifts: shifts,
            radius: spec.radius,
        });
    }
    Err(Error::Synthesis(format!("trial {seed}: no in-frame shift found")))
}

/// Per-trial seeds drawn from `seed`, then trials built in parallel.
pub fn generate_trials(count: usize, seed: u64, spec: &TrialSpec) -> Result<Vec<RegistrationTrial>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = (0..count).map(|_| rng.random()).collect();
    seeds.par_iter().map(|&s| generate_trial(s, spec)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    /// One displacement per bone (repeated for the whole-image arm).
    pub displacements: Vec<(i64, i64)>,
    /// Euclidean displacement error per bone, pixels.
    pub errors: Vec<f64>,
    /// Post-registration MSE against the fixed image over its mask union.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRow {
    pub trial: usize,
    pub true_shifts: Vec<(i64, i64)>,
    pub overlap_fixed: usize,
    pub overlap_moving: usize,
    pub without_separation: ArmResult,
    pub with_separation: ArmResult,
    /// A separation hit its iteration cap; the row is left out of the statistics.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub trials: usize,
    pub excluded: usize,
    pub included: usize,
    pub mean_mse_without: f64,
    pub mean_mse_with: f64,
    /// Mean of `mse_without - mse_with`.
    pub mean_difference: f64,
    /// Trials where separation lowered / raised / kept the MSE.
    pub improved: usize,
    pub worsened: usize,
    pub ties: usize,
    /// Two-sided exact sign test on the paired MSEs.
    pub sign_test_p: f64,
    pub mean_error_without: f64,
    pub mean_error_with: f64,
    /// Fraction of trials with every per-bone error equal to zero.
    pub exact_fraction_without: f64,
    pub exact_fraction_with: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub rows: Vec<TrialRow>,
    pub summary: Summary,
}

fn displacement_error(d: (i64, i64), t: (i64, i64)) -> f64 {
    (((d.0 - t.0).pow(2) + (d.1 - t.1).pow(2)) as f64).sqrt()
}

/// MSE over `support` between `fixed` and `value(p)`; pixels where `value`
/// returns `None` are skipped.
fn support_mse(fixed: &GrayImage, support: &BinaryMask, mut value: impl FnMut(usize) -> Option<f64>) -> f64 {
    let (sum, n) = support.indices().fold((0.0, 0usize), |(s, n), p| match value(p) {
        Some(v) => {
            let d = v - fixed.data()[p];
            (s + d * d, n + 1)
        }
        None => (s, n),
    });
    if n == 0 {
        f64::INFINITY
    } else {
        sum / n as f64
    }
}

fn displaced(p: usize, d: (i64, i64), w: usize, h: usize) -> Option<usize> {
    let y = (p / w) as i64 + d.0;
    let x = (p % w) as i64 + d.1;
    (y >= 0 && x >= 0 && y < h as i64 && x < w as i64).then(|| y as usize * w + x as usize)
}

/// Runs both arms on one trial.
pub fn evaluate_trial(index: usize, trial: &RegistrationTrial, cfg: &SeparatorConfig) -> Result<TrialRow> {
    check_same(trial.fixed.dims(), trial.moving.dims())?;
    let n = trial.fixed_masks.len();
    if trial.moving_masks.len() != n || trial.true_shifts.len() != n {
        return Err(Error::CountMismatch {
            expected: n,
            found: trial.moving_masks.len().min(trial.true_shifts.len()),
        });
    }
    let (w, h) = trial.fixed.dims();
    let union = trial.fixed_masks.union();

    let whole = register_translation(&trial.moving, &trial.fixed, &union, trial.radius)?;
    let d = whole.displacement;
    let without = ArmResult {
        displacements: vec![d; n],
        errors: trial.true_shifts.iter().map(|&t| displacement_error(d, t)).collect(),
        mse: support_mse(&trial.fixed, &union, |p| displaced(p, d, w, h).map(|q| trial.moving.data()[q])),
    };

    let k_fixed = estimate_k(&trial.fixed, &trial.fixed_masks, &cfg.solver)?;
    let k_moving = estimate_k(&trial.moving, &trial.moving_masks, &cfg.solver)?;
    let sep_fixed = separate(&trial.fixed, &trial.fixed_masks, &k_fixed, cfg)?;
    let sep_moving = separate(&trial.moving, &trial.moving_masks, &k_moving, cfg)?;
    let mut displacements = Vec::with_capacity(n);
    for i in 0..n {
        let r = register_translation(
            sep_moving.layers.layer(i),
            sep_fixed.layers.layer(i),
            trial.fixed_masks.get(i),
            trial.radius,
        )?;
        displacements.push(r.displacement);
    }
    let fixed_bits: Vec<&[bool]> = trial.fixed_masks.masks().iter().map(BinaryMask::data).collect();
    let mut active = Vec::with_capacity(n);
    let mse = support_mse(&trial.fixed, &union, |p| {
        active.clear();
        for i in 0..n {
            if fixed_bits[i][p] {
                let q = displaced(p, displacements[i], w, h)?;
                active.push(sep_moving.layers.layer(i).data()[q]);
            }
        }
        Some(compose_pixel(&active, k_fixed.value()).clamp(0.0, 1.0))
    });
    let with = ArmResult {
        errors: displacements
            .iter()
            .zip(&trial.true_shifts)
            .map(|(&d, &t)| displacement_error(d, t))
            .collect(),
        displacements,
        mse,
    };
    let excluded = !(sep_fixed.converged && sep_moving.converged);
    if excluded {
        log::warn!("trial {index}: separation did not converge; excluded from statistics");
    }
    Ok(TrialRow {
        trial: index,
        true_shifts: trial.true_shifts.clone(),
        overlap_fixed: trial.fixed_masks.intersection().area(),
        overlap_moving: trial.moving_masks.intersection().area(),
        without_separation: without,
        with_separation: with,
        excluded,
    })
}

/// Two-sided exact sign test for `successes` out of `n` non-tied pairs.
pub fn sign_test(successes: usize, n: usize) -> f64 {
    if n == 0 {
        return 1.0;
    }
    let tail = successes.min(n - successes) as u64;
    let binom = Binomial::new(0.5, n as u64).expect("valid binomial");
    (2.0 * binom.cdf(tail)).min(1.0)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn summarize(rows: &[TrialRow]) -> Summary {
    let kept: Vec<&TrialRow> = rows.iter().filter(|r| !r.excluded).collect();
    let diffs: Vec<f64> = kept
        .iter()
        .map(|r| r.without_separation.mse - r.with_separation.mse)
        .collect();
    let improved = diffs.iter().filter(|&&d| d > 0.0).count();
    let worsened = diffs.iter().filter(|&&d| d < 0.0).count();
    let exact = |arm: fn(&TrialRow) -> &ArmResult| {
        if kept.is_empty() {
            0.0
        } else {
            kept.iter().filter(|r| arm(r).errors.iter().all(|&e| e == 0.0)).count() as f64 / kept.len() as f64
        }
    };
    Summary {
        trials: rows.len(),
        excluded: rows.len() - kept.len(),
        included: kept.len(),
        mean_mse_without: mean(kept.iter().map(|r| r.without_separation.mse)),
        mean_mse_with: mean(kept.iter().map(|r| r.with_separation.mse)),
        mean_difference: mean(diffs.iter().copied()),
        improved,
        worsened,
        ties: diffs.len() - improved - worsened,
        sign_test_p: sign_test(improved, improved + worsened),
        mean_error_without: mean(kept.iter().flat_map(|r| r.without_separation.errors.iter().copied())),
        mean_error_with: mean(kept.iter().flat_map(|r| r.with_separation.errors.iter().copied())),
        exact_fraction_without: exact(|r| &r.without_separation),
        exact_fraction_with: exact(|r| &r.with_separation),
    }
}

/// Evaluates every trial in parallel; rows keep the input order.
pub fn evaluate_pipeline(trials: &[RegistrationTrial], cfg: &SeparatorConfig) -> Result<Report> {
    cfg.validate()?;
    let rows = trials
        .par_iter()
        .enumerate()
        .map(|(i, t)| evaluate_trial(i, t, cfg))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&rows);
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        rows,
        summary,
    })
}

#[derive(Serialize)]
struct CsvRow {
    trial: usize,
    bone: usize,
    true_dy: i64,
    true_dx: i64,
    without_dy: i64,
    without_dx: i64,
    without_error: f64,
    without_mse: f64,
    with_dy: i64,
    with_dx: i64,
    with_error: f64,
    with_mse: f64,
    excluded: bool,
}

impl Report {
    /// One CSV line per trial and bone.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = csv::Writer::from_path(path)?;
        for r in &self.rows {
            for (bone, &(ty, tx)) in r.true_shifts.iter().enumerate() {
                let (a, b) = (&r.without_separation, &r.with_separation);
                out.serialize(CsvRow {
                    trial: r.trial,
                    bone,
                    true_dy: ty,
                    true_dx: tx,
                    without_dy: a.displacements[bone].0,
                    without_dx: a.displacements[bone].1,
                    without_error: a.errors[bone],
                    without_mse: a.mse,
                    with_dy: b.displacements[bone].0,
                    with_dx: b.displacements[bone].1,
                    with_error: b.errors[bone],
                    with_mse: b.mse,
                    excluded: r.excluded,
                })?;
            }
        }
        out.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrialMeta {
    schema_version: u32,
    true_shifts: Vec<(i64, i64)>,
    radius: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RegistrationTrial {
    /// Layout: `fixed.png`, `moving.png`, `fixed_mask_<label>.png`,
    /// `moving_mask_<label>.png`, `trial.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        save_raster(&self.fixed, dir.join("fixed.png"), BitDepth::Sixteen)?;
        save_raster(&self.moving, dir.join("moving.png"), BitDepth::Sixteen)?;
        let n = self.fixed_masks.len();
        for i in 0..n {
            let label = layer_label(i, n);
            save_mask(self.fixed_masks.get(i), dir.join(format!("fixed_mask_{label}.png")))?;
            save_mask(self.moving_masks.get(i), dir.join(format!("moving_mask_{label}.png")))?;
        }
        let meta = TrialMeta {
            schema_version: SCHEMA_VERSION,
            true_shifts: self.true_shifts.clone(),
            radius: self.radius,
        };
        let path = dir.join("trial.json");
        fs::write(&path, serde_json::to_string_pretty(&meta)? + "\n").map_err(io_err(&path))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("trial.json");
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let meta: TrialMeta = serde_json::from_str(&text)?;
        let n = meta.true_shifts.len();
        let masks = |prefix: &str| -> Result<MaskSet> {
            let masks = (0..n)
                .map(|i| load_mask(dir.join(format!("{prefix}_mask_{}.png", layer_label(i, n)))))
                .collect::<Result<Vec<_>>>()?;
            MaskSet::new(masks)
        };
        Ok(Self {
            fixed: load_raster(dir.join("fixed.png"))?,
            moving: load_raster(dir.join("moving.png"))?,
            fixed_masks: masks("fixed")?,
            moving_masks: masks("moving")?,
            true_shifts: meta.true_shifts,
            radius: meta.radius,
        })
    }
}

/// Reads every trial subdirectory of `dir` in name order.
pub fn read_trials(dir: &Path) -> Result<Vec<RegistrationTrial>> {
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("trial.json").is_file())
        .collect();
    entries.sort();
    entries.iter().map(|p| RegistrationTrial::read_dir(p)).collect()
}
