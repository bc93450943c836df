//! Harmonic inpainting: solves the discrete Laplace equation over a masked
//! region with Dirichlet data taken from the pixels that surround it.
//!
//! The 5-point stencil only couples a pixel to in-frame neighbors that belong
//! to the solve domain, so frame edges (and pixels outside the domain) act as
//! zero-flux boundaries. Each connected piece of the region must touch at
//! least one known pixel, otherwise the system is singular.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{check_same, BinaryMask, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepOrder {
    #[default]
    Forward,
    Reverse,
}

/// Successive over-relaxation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    /// Stop once the max absolute stencil residual is at or below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// SOR factor, strictly between 0 and 2.
    pub relaxation: f64,
    pub sweep: SweepOrder,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-5,
            max_iterations: 20_000,
            relaxation: 1.9,
            sweep: SweepOrder::Forward,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance", format!("{} is not positive", self.tolerance)));
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return Err(Error::invalid(
                "relaxation",
                format!("{} is outside (0, 2)", self.relaxation),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations", "must be positive"));
        }
        Ok(())
    }
}

/// Solution of a harmonic fill together with its convergence record.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicFill {
    pub values: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Region pixels with precomputed neighbor lists.
struct Stencil {
    cells: Vec<usize>,
    /// `neighbors[offsets[i]..offsets[i + 1]]` are the coupled neighbors of `cells[i]`.
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl Stencil {
    fn build(width: usize, height: usize, region: &[bool], domain: Option<&[bool]>) -> Self {
        let in_domain = |i: usize| domain.is_none_or(|d| d[i]);
        let mut cells = Vec::new();
        let mut offsets = vec![0];
        let mut neighbors = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let i = y * width + x;
                if !region[i] {
                    continue;
                }
                cells.push(i);
                let candidates = [
                    (x > 0).then(|| i - 1),
                    (x + 1 < width).then(|| i + 1),
                    (y > 0).then(|| i - width),
                    (y + 1 < height).then(|| i + width),
                ];
                neighbors.extend(candidates.into_iter().flatten().filter(|&n| in_domain(n)));
                offsets.push(neighbors.len());
            }
        }
        Self {
            cells,
            offsets,
            neighbors,
        }
    }

    fn neighbors(&self, k: usize) -> &[usize] {
        &self.neighbors[self.offsets[k]..self.offsets[k + 1]]
    }

    fn neighbor_mean(&self, k: usize, values: &[f64]) -> f64 {
        let nb = self.neighbors(k);
        nb.iter().map(|&n| values[n]).sum::<f64>() / nb.len() as f64
    }

    fn residual(&self, values: &[f64]) -> f64 {
        (0..self.cells.len())
            .map(|k| (values[self.cells[k]] - self.neighbor_mean(k, values)).abs())
            .fold(0.0, f64::max)
    }

    /// Every connected component of the region must reach a known pixel.
    fn check_anchored(&self, region: &[bool]) -> Result<()> {
        let n = self.cells.len();
        let mut slot = std::collections::HashMap::with_capacity(n);
        for (k, &c) in self.cells.iter().enumerate() {
            slot.insert(c, k);
        }
        let mut anchored = vec![false; n];
        let mut stack = Vec::new();
        for k in 0..n {
            if self.neighbors(k).iter().any(|&nb| !region[nb]) {
                anchored[k] = true;
                stack.push(k);
            }
        }
        while let Some(k) = stack.pop() {
            for &nb in self.neighbors(k) {
                if let Some(&j) = slot.get(&nb) {
                    if !anchored[j] {
                        anchored[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if anchored.iter().all(|&a| a) {
            Ok(())
        } else {
            Err(Error::NoBoundary)
        }
    }
}

/// Fills `region` in `values` with the discrete harmonic interpolant of the
/// surrounding known pixels. Only pixels inside `domain` (all pixels when
/// `None`) take part in the stencil; values outside `region` are returned
/// unchanged.
pub fn harmonic_fill(
    values: &[f64],
    width: usize,
    height: usize,
    region: &BinaryMask,
    domain: Option<&BinaryMask>,
    cfg: &SolverConfig,
) -> Result<HarmonicFill> {
    cfg.validate()?;
    if values.len() != width * height {
        return Err(Error::DataLength {
            width,
            height,
            len: values.len(),
        });
    }
    check_same((width, height), region.dims())?;
    if let Some(d) = domain {
        check_same((width, height), d.dims())?;
    }
    let region_bits = region.data();
    let stencil = Stencil::build(width, height, region_bits, domain.map(BinaryMask::data));
    let mut out = values.to_vec();
    if stencil.cells.is_empty() {
        return Ok(HarmonicFill {
            values: out,
            iterations: 0,
            residual: 0.0,
        });
    }
    stencil.check_anchored(region_bits)?;

    // Start from the mean of the Dirichlet ring.
    let mut ring = vec![false; values.len()];
    for k in 0..stencil.cells.len() {
        for &nb in stencil.neighbors(k) {
            if !region_bits[nb] {
                ring[nb] = true;
            }
        }
    }
    let (sum, count) = ring
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .fold((0.0, 0usize), |(s, c), (i, _)| (s + values[i], c + 1));
    let start = sum / count as f64;
    for &c in &stencil.cells {
        out[c] = start;
    }

    let order: Vec<usize> = match cfg.sweep {
        SweepOrder::Forward => (0..stencil.cells.len()).collect(),
        SweepOrder::Reverse => (0..stencil.cells.len()).rev().collect(),
    };
    let omega = cfg.relaxation;
    let mut residual = f64::INFINITY;
    for iteration in 1..=cfg.max_iterations {
        let mut max_update = 0.0f64;
        for &k in &order {
            let c = stencil.cells[k];
            let delta = stencil.neighbor_mean(k, &out) - out[c];
            max_update = max_update.max(delta.abs());
            out[c] += omega * delta;
        }
        // The in-sweep deltas are residuals at visit time; only pay for a
        // full residual pass once they are already small.
        if max_update <= cfg.tolerance {
            residual = stencil.residual(&out);
            if residual <= cfg.tolerance {
                return Ok(HarmonicFill {
                    values: out,
                    iterations: iteration,
                    residual,
                });
            }
        }
    }
    if residual.is_infinite() {
        residual = stencil.residual(&out);
    }
    Err(Error::NotConverged {
        iterations: cfg.max_iterations,
        residual,
    })
}

/// Replaces the pixels of `img` inside `region` with the harmonic fill of the
/// pixels around it. Pixels outside `region` are untouched.
pub fn inpaint_laplace(img: &GrayImage, region: &BinaryMask, cfg: &SolverConfig) -> Result<GrayImage> {
    let fill = harmonic_fill(img.data(), img.width(), img.height(), region, None, cfg)?;
    // Sub-tolerance SOR overshoot can leave values a hair outside [0, 1].
    let (out, _) = GrayImage::from_clamped(img.width(), img.height(), fill.values)?;
    Ok(out)
}

/// Max over `region` of `|pixel - mean(in-frame 4-neighbors)|`; 0 for an empty region.
pub fn residual(img: &GrayImage, region: &BinaryMask) -> Result<f64> {
    check_same(img.dims(), region.dims())?;
    let stencil = Stencil::build(img.width(), img.height(), region.data(), None);
    Ok(stencil.residual(img.data()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rect(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
        BinaryMask::from_fn(w, h, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1).unwrap()
    }

    #[test]
    fn constants_are_harmonic() {
        let img = GrayImage::filled(20, 15, 0.7).unwrap();
        let region = rect(20, 15, 4, 3, 13, 11);
        let out = inpaint_laplace(&img, &region, &SolverConfig::default()).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.7).abs() < 1e-12));
        assert_eq!(residual(&img, &region).unwrap(), 0.0);
    }

    #[test]
    fn linear_ramp_is_reproduced() {
        let (w, h) = (32, 24);
        let ramp = GrayImage::from_fn(w, h, |x, _| x as f64 / (w - 1) as f64).unwrap();
        let mut data = ramp.data().to_vec();
        let region = rect(w, h, 5, 4, 27, 20);
        for i in region.indices() {
            data[i] = 0.0;
        }
        let holed = GrayImage::new(w, h, data).unwrap();
        let cfg = SolverConfig {
            tolerance: 1e-9,
            ..SolverConfig::default()
        };
        let out = inpaint_laplace(&holed, &region, &cfg).unwrap();
        for i in region.indices() {
            assert!((out.data()[i] - ramp.data()[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn isolated_pixel_residual_equals_perturbation() {
        let delta = 0.125;
        let mut data = vec![0.4; 25];
        data[12] += delta;
        let img = GrayImage::new(5, 5, data).unwrap();
        let single = rect(5, 5, 2, 2, 3, 3);
        assert!((residual(&img, &single).unwrap() - delta).abs() < 1e-15);
        // Neighbors see a quarter of the bump, so the max stays at the center.
        let block = rect(5, 5, 1, 1, 4, 4);
        assert!((residual(&img, &block).unwrap() - delta).abs() < 1e-15);
        assert_eq!(residual(&img, &BinaryMask::empty(5, 5).unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn full_frame_region_is_unsolvable() {
        let img = GrayImage::filled(6, 6, 0.5).unwrap();
        let region = BinaryMask::full(6, 6).unwrap();
        assert!(matches!(
            inpaint_laplace(&img, &region, &SolverConfig::default()),
            Err(Error::NoBoundary)
        ));
    }

    #[test]
    fn non_convergence_reports_residual() {
        let img = GrayImage::from_fn(40, 40, |x, _| x as f64 / 39.0).unwrap();
        let region = rect(40, 40, 2, 2, 38, 38);
        let cfg = SolverConfig {
            max_iterations: 3,
            ..SolverConfig::default()
        };
        match inpaint_laplace(&img, &region, &cfg) {
            Err(Error::NotConverged { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > cfg.tolerance);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let img = GrayImage::filled(4, 4, 0.5).unwrap();
        let region = rect(4, 4, 1, 1, 2, 2);
        for cfg in [
            SolverConfig { relaxation: 2.0, ..Default::default() },
            SolverConfig { relaxation: 0.0, ..Default::default() },
            SolverConfig { tolerance: 0.0, ..Default::default() },
        ] {
            assert!(matches!(
                inpaint_laplace(&img, &region, &cfg),
                Err(Error::InvalidParameter { .. })
            ));
        }
    }

    #[test]
    fn domain_restriction_ignores_outside_pixels() {
        // Region column x = 1; domain excludes column x = 2, whose value 1.0
        // must not leak in.
        let (w, h) = (4, 3);
        let values: Vec<f64> = (0..w * h).map(|i| if i % w == 2 { 1.0 } else { 0.25 }).collect();
        let region = rect(w, h, 1, 0, 2, h);
        let domain = BinaryMask::from_fn(w, h, |x, _| x != 2).unwrap();
        let fill = harmonic_fill(&values, w, h, &region, Some(&domain), &SolverConfig::default()).unwrap();
        for y in 0..h {
            assert!((fill.values[y * w + 1] - 0.25).abs() < 1e-9);
        }
    }

    fn arb_region() -> impl Strategy<Value = BinaryMask> {
        (1usize..10, 1usize..10, 1usize..8, 1usize..8).prop_map(|(x0, y0, rw, rh)| {
            rect(20, 20, x0, y0, (x0 + rw).min(19), (y0 + rh).min(19))
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn maximum_principle_and_sweep_independence(
            region in arb_region(),
            vals in proptest::collection::vec(0.0f64..=1.0, 400),
        ) {
            let img = GrayImage::new(20, 20, vals).unwrap();
            let cfg = SolverConfig::default();
            let fwd = inpaint_laplace(&img, &region, &cfg).unwrap();
            let rev = inpaint_laplace(&img, &region, &SolverConfig { sweep: SweepOrder::Reverse, ..cfg }).unwrap();
            prop_assert!(residual(&fwd, &region).unwrap() <= cfg.tolerance);

            let ring: Vec<f64> = (0..400)
                .filter(|&i| !region.data()[i])
                .filter(|&i| {
                    let (x, y) = (i % 20, i / 20);
                    (x > 0 && region.data()[i - 1]) || (x < 19 && region.data()[i + 1])
                        || (y > 0 && region.data()[i - 20]) || (y < 19 && region.data()[i + 20])
                })
                .map(|i| img.data()[i])
                .collect();
            let lo = ring.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ring.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            for i in region.indices() {
                let v = fwd.data()[i];
                prop_assert!(v >= lo - cfg.tolerance && v <= hi + cfg.tolerance);
                prop_assert!((v - rev.data()[i]).abs() <= 10.0 * cfg.tolerance);
            }
            for i in (0..400).filter(|&i| !region.data()[i]) {
                prop_assert_eq!(fwd.data()[i], img.data()[i]);
            }
        }
    }

    #[test]
    fn three_by_three_matches_dense_solve() {
        let (w, h) = (5, 5);
        let values: Vec<f64> = (0..w * h).map(|i| ((i * 37 + 11) % 23) as f64 / 22.0).collect();
        let region = rect(w, h, 1, 1, 4, 4);
        let cfg = SolverConfig {
            tolerance: 1e-14,
            ..SolverConfig::default()
        };
        let fill = harmonic_fill(&values, w, h, &region, None, &cfg).unwrap();

        // 4 u_c - sum(unknown neighbors) = sum(known neighbors)
        let cells: Vec<usize> = region.indices().collect();
        let slot = |p: usize| cells.iter().position(|&c| c == p);
        let mut a = nalgebra::DMatrix::<f64>::zeros(9, 9);
        let mut b = nalgebra::DVector::<f64>::zeros(9);
        for (row, &c) in cells.iter().enumerate() {
            a[(row, row)] = 4.0;
            for nb in [c - 1, c + 1, c - w, c + w] {
                match slot(nb) {
                    Some(col) => a[(row, col)] = -1.0,
                    None => b[row] += values[nb],
                }
            }
        }
        let u = a.lu().solve(&b).unwrap();
        for (row, &c) in cells.iter().enumerate() {
            assert!((fill.values[c] - u[row]).abs() < 1e-10);
        }
    }
}
