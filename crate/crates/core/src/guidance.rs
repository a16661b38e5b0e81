//! Cross-view consistency of depth priors and the per-ray sampling ranges
//! derived from it.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{read_pfm, read_pgm_mask, write_pfm, write_pgm_mask};
use crate::geometry::{relative_pose, warp_depth, Camera, Intrinsics, Pose};
use crate::image::{ensure_same_size, DepthMap, Sized2d};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    #[serde(default = "default_k")]
    pub k_consistency: usize,
    #[serde(default = "default_alpha_low")]
    pub alpha_low: f64,
    #[serde(default = "default_alpha_high")]
    pub alpha_high: f64,
}

fn default_k() -> usize {
    4
}
fn default_alpha_low() -> f64 {
    0.05
}
fn default_alpha_high() -> f64 {
    0.15
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            k_consistency: default_k(),
            alpha_low: default_alpha_low(),
            alpha_high: default_alpha_high(),
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_consistency < 1 {
            return Err(Error::Config("k_consistency must be at least 1".into()));
        }
        if !(self.alpha_low > 0.0 && self.alpha_low <= self.alpha_high && self.alpha_high < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < alpha_low <= alpha_high < 1, got {} and {}",
                self.alpha_low, self.alpha_high
            )));
        }
        Ok(())
    }
}

/// Per-pixel relative consistency error. Invalid pixels carry `alpha_high`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl Sized2d for ErrorMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl ErrorMap {
    pub fn uniform(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }
}

/// Per-pixel sampling interval `[near, far]` in z-depth.
#[derive(Debug, Clone, PartialEq)]
pub struct RayBounds {
    pub width: usize,
    pub height: usize,
    pub near: Vec<f64>,
    pub far: Vec<f64>,
}

impl Sized2d for RayBounds {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
}

impl RayBounds {
    /// The same interval for every pixel.
    pub fn uniform(width: usize, height: usize, near: f64, far: f64) -> Result<Self> {
        if !(near > 0.0 && near <= far && far.is_finite()) {
            return Err(Error::InvalidInput(format!("invalid bounds [{near}, {far}]")));
        }
        Ok(Self {
            width,
            height,
            near: vec![near; width * height],
            far: vec![far; width * height],
        })
    }

    #[inline]
    pub fn get(&self, index: usize) -> (f64, f64) {
        (self.near[index], self.far[index])
    }
}

/// Relative error of view `i`'s depth against view `j`, per source pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct PairError {
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Warps `depth_i` into view `j` and compares against `depth_j` sampled at the
/// nearest pixel: `|D_j' - D_ij| / D_ij`.
pub fn pairwise_error(depth_i: &DepthMap, depth_j: &DepthMap, k: &Intrinsics, t_ij: &Pose) -> Result<PairError> {
    ensure_same_size(depth_i, depth_j, "pairwise error")?;
    let warp = warp_depth(k, t_ij, depth_i)?;
    let n = depth_i.len();
    let mut values = vec![0.0; n];
    let mut valid = vec![false; n];
    for p in 0..n {
        if !warp.valid[p] {
            continue;
        }
        let (u, v) = warp.coords[p];
        let (x, y) = (u.floor() as usize, v.floor() as usize);
        if let Some(dj) = depth_j.get(x, y) {
            let dij = warp.depth[p];
            values[p] = (dj - dij).abs() / dij;
            valid[p] = true;
        }
    }
    Ok(PairError { values, valid })
}

/// Mean of the `k` smallest values; `None` for an empty slice.
pub fn top_k_mean(errors: &mut [f64], k: usize) -> Option<f64> {
    if errors.is_empty() {
        return None;
    }
    let k = k.min(errors.len());
    if k < errors.len() {
        errors.select_nth_unstable_by(k - 1, f64::total_cmp);
    }
    let head = &mut errors[..k];
    head.sort_unstable_by(f64::total_cmp);
    Some(head.iter().sum::<f64>() / k as f64)
}

/// Error map of view `view` against every other view.
pub fn error_map(view: usize, priors: &[DepthMap], cameras: &[Camera], config: &GuidanceConfig) -> Result<ErrorMap> {
    config.validate()?;
    if priors.len() != cameras.len() {
        return Err(Error::SizeMismatch(format!(
            "{} priors for {} cameras",
            priors.len(),
            cameras.len()
        )));
    }
    if priors.len() < 2 {
        return Err(Error::InvalidInput("error maps need at least two views".into()));
    }
    let di = &priors[view];
    let n = di.len();
    let mut per_pixel: Vec<Vec<f64>> = vec![Vec::new(); n];
    for (j, dj) in priors.iter().enumerate() {
        if j == view {
            continue;
        }
        if cameras[j].intrinsics != cameras[view].intrinsics {
            return Err(Error::InvalidInput(format!(
                "views {view} and {j} have different intrinsics"
            )));
        }
        let t_ij = relative_pose(&cameras[view].pose, &cameras[j].pose);
        let pair = pairwise_error(di, dj, &cameras[view].intrinsics, &t_ij)?;
        for p in 0..n {
            if pair.valid[p] {
                per_pixel[p].push(pair.values[p]);
            }
        }
    }
    let mut values = vec![config.alpha_high; n];
    let mut valid = vec![false; n];
    for (p, errs) in per_pixel.iter_mut().enumerate() {
        if let Some(e) = top_k_mean(errs, config.k_consistency) {
            values[p] = e;
            valid[p] = true;
        }
    }
    Ok(ErrorMap {
        width: di.width,
        height: di.height,
        values,
        valid,
    })
}

/// Error maps for every view, computed in parallel.
pub fn error_maps(priors: &[DepthMap], cameras: &[Camera], config: &GuidanceConfig) -> Result<Vec<ErrorMap>> {
    (0..priors.len())
        .into_par_iter()
        .map(|i| error_map(i, priors, cameras, config))
        .collect()
}

/// `c = clamp(e, alpha_low, alpha_high)`, bounds `D(1 - c)` to `D(1 + c)`.
pub fn adaptive_range(prior: &DepthMap, error: &ErrorMap, config: &GuidanceConfig) -> Result<RayBounds> {
    config.validate()?;
    ensure_same_size(prior, error, "adaptive range")?;
    if !prior.is_dense() {
        return Err(Error::InvalidInput("adaptive ranges need a dense prior".into()));
    }
    let (near, far) = prior
        .values
        .iter()
        .zip(&error.values)
        .map(|(&d, &e)| {
            let c = if e.is_nan() { config.alpha_high } else { e.clamp(config.alpha_low, config.alpha_high) };
            (d * (1.0 - c), d * (1.0 + c))
        })
        .unzip();
    Ok(RayBounds {
        width: prior.width,
        height: prior.height,
        near,
        far,
    })
}

/// Index of the seen camera whose center is closest; ties go to the lowest index.
pub fn nearest_seen_view(novel: &Pose, seen: &[Pose]) -> Result<usize> {
    let c = novel.center();
    let mut best: Option<(usize, f64)> = None;
    for (i, p) in seen.iter().enumerate() {
        let d = (p.center() - c).norm_squared();
        if best.map_or(true, |(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::InvalidInput("no seen views to borrow guidance from".into()))
}

/// Error map as PFM plus its validity mask as PGM.
pub fn write_error_map(pfm: &Path, mask: &Path, map: &ErrorMap) -> Result<()> {
    let values: Vec<f32> = map.values.iter().map(|&v| v as f32).collect();
    write_pfm(pfm, map.width, map.height, &values)?;
    write_pgm_mask(mask, map.width, map.height, &map.valid)
}

pub fn read_error_map(pfm: &Path, mask: &Path) -> Result<ErrorMap> {
    let (width, height, values) = read_pfm(pfm)?;
    let (mw, mh, valid) = read_pgm_mask(mask)?;
    if (mw, mh) != (width, height) {
        return Err(Error::format(
            mask,
            format!("mask is {mw}x{mh} but {} is {width}x{height}", pfm.display()),
        ));
    }
    Ok(ErrorMap {
        width,
        height,
        values: values.into_iter().map(f64::from).collect(),
        valid,
    })
}

/// Near and far planes as two PFM files.
pub fn write_ray_bounds(near: &Path, far: &Path, bounds: &RayBounds) -> Result<()> {
    let to32 = |v: &[f64]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
    write_pfm(near, bounds.width, bounds.height, &to32(&bounds.near))?;
    write_pfm(far, bounds.width, bounds.height, &to32(&bounds.far))
}

pub fn read_ray_bounds(near: &Path, far: &Path) -> Result<RayBounds> {
    let (width, height, n) = read_pfm(near)?;
    let (fw, fh, f) = read_pfm(far)?;
    if (fw, fh) != (width, height) {
        return Err(Error::format(far, format!("size differs from {}", near.display())));
    }
    Ok(RayBounds {
        width,
        height,
        near: n.into_iter().map(f64::from).collect(),
        far: f.into_iter().map(f64::from).collect(),
    })
}
