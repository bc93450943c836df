//! Full-reference image quality: MSE, PSNR and SSIM.

use crate::error::{Error, Result};
use crate::imaging::{check_same, BinaryMask, GrayImage};

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_SIGMA: f64 = 1.5;
/// Side of the Gaussian window.
pub const SSIM_WINDOW: usize = 11;

pub fn mse(x: &GrayImage, y: &GrayImage) -> Result<f64> {
    check_same(x.dims(), y.dims())?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sum / x.len() as f64)
}

/// Mean squared difference restricted to `support`.
pub fn mse_masked(x: &GrayImage, y: &GrayImage, support: &BinaryMask) -> Result<f64> {
    check_same(x.dims(), y.dims())?;
    check_same(x.dims(), support.dims())?;
    let (sum, n) = support.indices().fold((0.0, 0usize), |(s, n), i| {
        let d = x.data()[i] - y.data()[i];
        (s + d * d, n + 1)
    });
    if n == 0 {
        return Err(Error::EmptySupport);
    }
    Ok(sum / n as f64)
}

/// `10 log10(peak^2 / mse)`, or `+inf` for a zero error.
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

pub fn psnr(x: &GrayImage, y: &GrayImage, peak: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(x, y)?, peak))
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable "valid" Gaussian filter; output is `(w - 10) x (h - 10)`.
fn filter_valid(data: &[f64], w: usize, h: usize, kernel: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w + 1 - SSIM_WINDOW;
    let oh = h + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|t| kernel[t] * data[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|t| kernel[t] * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

/// Local SSIM for every full window, indexed by window center
/// `(x + 5, y + 5)` in the source frame. Dynamic range is 1.
pub fn ssim_map(x: &GrayImage, y: &GrayImage) -> Result<(usize, usize, Vec<f64>)> {
    check_same(x.dims(), y.dims())?;
    let (w, h) = x.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(
            "image",
            format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"),
        ));
    }
    let kernel = gaussian_kernel();
    let xx: Vec<f64> = x.data().iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.data().iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.data().iter().zip(y.data()).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x.data(), w, h, &kernel);
    let mu_y = filter_valid(y.data(), w, h, &kernel);
    let e_xx = filter_valid(&xx, w, h, &kernel);
    let e_yy = filter_valid(&yy, w, h, &kernel);
    let e_xy = filter_valid(&xy, w, h, &kernel);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let map = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = e_xx[i] - mx * mx;
            let vy = e_yy[i] - my * my;
            let cxy = e_xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .collect();
    Ok((w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW, map))
}

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03.
pub fn ssim(x: &GrayImage, y: &GrayImage) -> Result<f64> {
    let (_, _, map) = ssim_map(x, y)?;
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

/// Mean SSIM over windows whose center lies in `support`.
pub fn ssim_masked(x: &GrayImage, y: &GrayImage, support: &BinaryMask) -> Result<f64> {
    check_same(x.dims(), support.dims())?;
    let (mw, mh, map) = ssim_map(x, y)?;
    let half = SSIM_WINDOW / 2;
    let mut sum = 0.0;
    let mut n = 0usize;
    for wy in 0..mh {
        for wx in 0..mw {
            if support.get(wx + half, wy + half) {
                sum += map[wy * mw + wx];
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptySupport);
    }
    Ok(sum / n as f64)
}
