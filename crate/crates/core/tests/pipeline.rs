use bonelayer_core::imaging::{load_mask, load_raster, MaskSet};
use bonelayer_core::metrics::{mse_masked, ssim};
use bonelayer_core::reconstruct::{estimate_k, reconstruct};
use bonelayer_core::separate::{separate, SeparatorConfig};
use bonelayer_core::synth::{make_phantom, synthesize_overlap, write_sample_dir, OverlapSpec, PhantomSpec};

#[test]
fn phantom_to_overlap_to_separation() {
    let phantom = make_phantom(&PhantomSpec::joint(128, 6.0, 17)).unwrap();
    let spec = OverlapSpec {
        shift_max: 14,
        seed: 3,
        ..OverlapSpec::default()
    };
    let sample = synthesize_overlap(&phantom.image, &phantom.masks, &spec).unwrap();
    assert!(sample.overlap_area > 0);

    let round = reconstruct(&sample.gt_layers, &sample.k_used).unwrap();
    for q in sample.masks.union().indices() {
        assert!((round.image.data()[q] - sample.image.data()[q]).abs() <= 1e-6);
    }

    let k = estimate_k(&sample.image, &sample.masks, &Default::default()).unwrap();
    let result = separate(&sample.image, &sample.masks, &k, &SeparatorConfig::default()).unwrap();
    assert!(result.converged);
    let mse = mse_masked(&result.reconstruction.image, &sample.image, &sample.masks.union()).unwrap();
    assert!(mse <= 1e-3);
    for i in 0..2 {
        assert!(ssim(result.layers.layer(i), sample.gt_layers.layer(i)).unwrap() >= 0.9);
    }
}

#[test]
fn sample_directory_reloads() {
    let phantom = make_phantom(&PhantomSpec::joint(64, -6.0, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_sample_dir(dir.path(), &phantom.image, &phantom.layers, &phantom.meta(2)).unwrap();
    let image = load_raster(dir.path().join("image.png")).unwrap();
    let masks = MaskSet::new(vec![
        load_mask(dir.path().join("mask_upper.png")).unwrap(),
        load_mask(dir.path().join("mask_lower.png")).unwrap(),
    ])
    .unwrap();
    assert_eq!(masks, phantom.masks);
    let max_err = image
        .data()
        .iter()
        .zip(phantom.image.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(max_err <= 0.5 / 65535.0 + 1e-12);
}
