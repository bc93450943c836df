use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use bonelayer_core::imaging::{load_mask, load_raster, save_raster, BitDepth, GrayImage, LayerSet, MaskSet};
use bonelayer_core::laplace::SolverConfig;
use bonelayer_core::metrics::{mse, mse_masked, psnr_from_mse, ssim, ssim_masked};
use bonelayer_core::reconstruct::{estimate_k, reconstruct, CorrectionParameter, KProvenance};
use bonelayer_core::registration::{evaluate_pipeline, generate_trials, read_trials, TrialSpec};
use bonelayer_core::separate::{separate, SeparatorConfig};
use bonelayer_core::synth::{layer_label, make_phantom, synthesize_overlap, write_sample_dir, OverlapSpec, PhantomSpec};

use crate::cli::*;
use crate::manifest::{file_name, sidecar_path, write_json, ManifestBuilder};

/// How a command finished when it did not fail outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    NotConverged,
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn load_inputs(input: &ImageInputs) -> Result<(GrayImage, MaskSet)> {
    let image = load_raster(&input.image)?;
    Ok((image, load_masks(&input.masks)?))
}

fn load_masks(paths: &[PathBuf]) -> Result<MaskSet> {
    let masks = paths.iter().map(load_mask).collect::<bonelayer_core::Result<Vec<_>>>()?;
    Ok(MaskSet::new(masks)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

#[derive(Serialize)]
struct KReport {
    k: f64,
    provenance: KProvenance,
    fallback_to_union: bool,
    clamped: bool,
}

fn k_report(k: &CorrectionParameter) -> KReport {
    KReport {
        k: k.value(),
        provenance: k.provenance(),
        fallback_to_union: k.fallback_to_union(),
        clamped: k.clamped(),
    }
}

fn print_json(value: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn phantom(args: &PhantomArgs) -> Result<Status> {
    let mut spec: PhantomSpec = load_config(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(spec.seed);
    if args.side.is_some() || args.gap.is_some() {
        let rebuilt = PhantomSpec::joint(args.side.unwrap_or(spec.side), args.gap.unwrap_or(8.0), seed);
        spec.side = rebuilt.side;
        spec.bones = rebuilt.bones;
    }
    spec.seed = seed;
    if let Some(a) = args.texture_amplitude {
        spec.texture_amplitude = a;
    }
    let phantom = make_phantom(&spec)?;
    let mut manifest = ManifestBuilder::new("phantom").seed(seed).config(&spec)?;
    for name in write_sample_dir(&args.out_dir, &phantom.image, &phantom.layers, &phantom.meta(seed))? {
        manifest.output(name);
    }
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(Status::Done)
}

pub fn synthesize(args: &SynthesizeArgs) -> Result<Status> {
    let mut spec: OverlapSpec = load_config(args.config.as_deref())?;
    if let Some(s) = args.shift_min {
        spec.shift_min = s;
    }
    if let Some(s) = args.shift_max {
        spec.shift_max = s;
    }
    if args.allow_no_overlap {
        spec.require_overlap = false;
    }
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let (image, masks) = load_inputs(&args.input)?;
    let sample = synthesize_overlap(&image, &masks, &spec)?;
    let mut manifest = ManifestBuilder::new("synthesize")
        .seed(spec.seed)
        .config(&spec)?
        .input(&args.input.image)
        .inputs(&args.input.masks);
    for name in write_sample_dir(&args.out_dir, &sample.image, &sample.gt_layers, &sample.meta(spec.seed))? {
        manifest.output(name);
    }
    manifest.write(&args.out_dir.join("manifest.json"))?;
    Ok(Status::Done)
}

pub fn estimate(args: &EstimateKArgs) -> Result<Status> {
    let (image, masks) = load_inputs(&args.input)?;
    let solver = SolverConfig::default();
    let k = estimate_k(&image, &masks, &solver)?;
    let report = k_report(&k);
    print_json(&report)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        let mut manifest = ManifestBuilder::new("estimate-k")
            .config(&solver)?
            .input(&args.input.image)
            .inputs(&args.input.masks);
        manifest.output(file_name(out));
        manifest.write(&sidecar_path(out))?;
    }
    Ok(Status::Done)
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    schema_version: u32,
    k: KReport,
    converged: bool,
    iterations: usize,
    free_variables: usize,
    final_energy: f64,
    saturated_count: usize,
    mse_union: f64,
    energy_trace: &'a [f64],
}

pub fn separate_cmd(args: &SeparateArgs) -> Result<Status> {
    let mut cfg: SeparatorConfig = load_config(args.config.as_deref())?;
    if let Some(n) = args.max_iterations {
        cfg.max_iterations = n;
    }
    if let Some(w) = args.w_tv {
        cfg.w_tv = w;
    }
    cfg.validate()?;
    let (image, masks) = load_inputs(&args.input)?;
    let k = match args.k {
        Some(v) => CorrectionParameter::supplied(v)?,
        None => estimate_k(&image, &masks, &cfg.solver)?,
    };
    let result = separate(&image, &masks, &k, &cfg)?;

    create_dir(&args.out_dir)?;
    let mut manifest = ManifestBuilder::new("separate")
        .config(&json!({ "separator": cfg, "k": args.k }))?
        .input(&args.input.image)
        .inputs(&args.input.masks);
    let n = result.layers.len();
    for i in 0..n {
        let name = format!("layer_{}.png", layer_label(i, n));
        save_raster(result.layers.layer(i), args.out_dir.join(&name), BitDepth::Sixteen)?;
        manifest.output(name);
    }
    save_raster(&result.reconstruction.image, args.out_dir.join("reconstruction.png"), BitDepth::Sixteen)?;
    manifest.output("reconstruction.png");
    let diagnostics = Diagnostics {
        schema_version: crate::manifest::SCHEMA_VERSION,
        k: k_report(&k),
        converged: result.converged,
        iterations: result.iterations,
        free_variables: result.free_variables,
        final_energy: *result.energy_trace.last().expect("trace starts with the initial energy"),
        saturated_count: result.reconstruction.saturated_count,
        mse_union: mse_masked(&result.reconstruction.image, &image, &masks.union())?,
        energy_trace: &result.energy_trace,
    };
    write_json(&args.out_dir.join("diagnostics.json"), &diagnostics)?;
    manifest.output("diagnostics.json");
    manifest.write(&args.out_dir.join("manifest.json"))?;
    if result.converged {
        Ok(Status::Done)
    } else {
        eprintln!("separation stopped after {} iterations without converging", result.iterations);
        Ok(Status::NotConverged)
    }
}

pub fn reconstruct_cmd(args: &ReconstructArgs) -> Result<Status> {
    if args.layers.len() != args.masks.len() {
        bail!("got {} layers but {} masks", args.layers.len(), args.masks.len());
    }
    let layers = args.layers.iter().map(load_raster).collect::<bonelayer_core::Result<Vec<_>>>()?;
    let masks = load_masks(&args.masks)?;
    let k = CorrectionParameter::supplied(args.k)?;
    let out = reconstruct(&LayerSet::from_unmasked(layers, masks)?, &k)?;
    if out.saturated_count > 0 {
        eprintln!("{} pixels saturated", out.saturated_count);
    }
    save_raster(&out.image, &args.out, BitDepth::Sixteen)?;
    let mut manifest = ManifestBuilder::new("reconstruct")
        .config(&json!({ "k": args.k }))?
        .inputs(&args.layers)
        .inputs(&args.masks);
    manifest.output(file_name(&args.out));
    manifest.write(&sidecar_path(&args.out))?;
    Ok(Status::Done)
}

/// PSNR in JSON: a number, or `"inf"` for identical inputs.
fn psnr_json(value: f64) -> serde_json::Value {
    if value.is_infinite() {
        json!("inf")
    } else {
        json!(value)
    }
}

#[derive(Serialize)]
struct MetricsReport {
    mse: f64,
    ssim: f64,
    psnr: serde_json::Value,
}

pub fn metrics(args: &MetricsArgs) -> Result<Status> {
    let a = load_raster(&args.a)?;
    let b = load_raster(&args.b)?;
    let (m, s) = match &args.mask {
        Some(path) => {
            let mask = load_mask(path)?;
            (mse_masked(&a, &b, &mask)?, ssim_masked(&a, &b, &mask)?)
        }
        None => (mse(&a, &b)?, ssim(&a, &b)?),
    };
    let report = MetricsReport {
        mse: m,
        ssim: s,
        psnr: psnr_json(psnr_from_mse(m, 1.0)),
    };
    print_json(&report)?;
    if let Some(out) = &args.out {
        write_json(out, &report)?;
        let mut manifest = ManifestBuilder::new("metrics").input(&args.a).input(&args.b);
        if let Some(mask) = &args.mask {
            manifest = manifest.input(mask);
        }
        manifest.output(file_name(out));
        manifest.write(&sidecar_path(out))?;
    }
    Ok(Status::Done)
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RegevalConfig {
    pub trials: TrialSpec,
    pub separator: SeparatorConfig,
}

pub fn regeval(args: &RegevalArgs) -> Result<Status> {
    let cfg: RegevalConfig = load_config(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(0);
    let mut manifest = ManifestBuilder::new("regeval").config(&cfg)?;
    let trials = match (&args.trials, args.generate) {
        (Some(dir), _) => {
            manifest = manifest.input(dir);
            read_trials(dir)?
        }
        (None, Some(n)) => {
            manifest = manifest.seed(seed);
            let trials = generate_trials(n, seed, &cfg.trials)?;
            if let Some(dir) = &args.save_trials {
                for (i, t) in trials.iter().enumerate() {
                    t.write_dir(&dir.join(format!("trial_{i:04}")))?;
                }
            }
            trials
        }
        (None, None) => bail!("either --trials or --generate is required"),
    };
    if trials.is_empty() {
        bail!("no trials to evaluate");
    }
    let report = evaluate_pipeline(&trials, &cfg.separator)?;
    write_json(&args.out, &report)?;
    manifest.output(file_name(&args.out));
    if let Some(csv) = &args.csv {
        report.write_csv(csv)?;
        manifest.output(file_name(csv));
    }
    let s = &report.summary;
    eprintln!(
        "{} trials ({} excluded): mean MSE {:.6} without separation, {:.6} with; sign test p = {:.3e}",
        s.trials, s.excluded, s.mean_mse_without, s.mean_mse_with, s.sign_test_p
    );
    manifest.write(&sidecar_path(&args.out))?;
    Ok(Status::Done)
}
