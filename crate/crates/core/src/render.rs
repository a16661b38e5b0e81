//! Stratified sampling along rays, volume compositing of color and expected
//! depth, and full-image rendering.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FieldParams, FieldTape};
use crate::geometry::{Camera, Ray};
use crate::guidance::{adaptive_range, ErrorMap, GuidanceConfig, RayBounds};
use crate::image::{DepthMap, Image, Rgb};
use crate::nn::Real;
use crate::rng::{indexed, rng_from, Rng};

/// Length given to the last sample's interval so it absorbs what is left.
pub const LAST_DELTA: f64 = 1e10;

/// Pixels whose accumulated weight falls below this are flagged low-trust.
pub const LOW_TRUST_WEIGHT: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Density noise during training; rendering for inference uses none.
    #[serde(default = "default_noise")]
    pub noise_std: f64,
    /// Global `[near, far]` for unguided rays. Derived from the scene when absent.
    #[serde(default)]
    pub global_bounds: Option<[f64; 2]>,
}

fn default_samples() -> usize {
    64
}
fn default_noise() -> f64 {
    1.0
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples: default_samples(),
            noise_std: default_noise(),
            global_bounds: None,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 1 {
            return Err(Error::Config("samples per ray must be at least 1".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!("noise std {} must be >= 0", self.noise_std)));
        }
        if let Some([n, f]) = self.global_bounds {
            if !(n > 0.0 && n < f && f.is_finite()) {
                return Err(Error::Config(format!("global bounds [{n}, {f}] are invalid")));
            }
        }
        Ok(())
    }
}

/// One uniform draw per bin of the `m`-partition of `[near, far]`.
pub fn stratified_samples(near: f64, far: f64, m: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    let mut t = vec![0.0; m];
    stratified_into(near, far, rng, &mut t)?;
    Ok(t)
}

fn stratified_into(near: f64, far: f64, rng: &mut Rng, out: &mut [f64]) -> Result<()> {
    if !(near > 0.0 && near <= far && far.is_finite()) || out.is_empty() {
        return Err(Error::InvalidInput(format!(
            "sampling interval [{near}, {far}] with {} samples",
            out.len()
        )));
    }
    let m = out.len() as f64;
    let span = far - near;
    for (i, t) in out.iter_mut().enumerate() {
        let u: f64 = rng.gen();
        *t = (near + span * ((i as f64 + u) / m)).clamp(near, far);
    }
    Ok(())
}

/// Everything computed while compositing one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeTrace {
    pub t: Vec<f64>,
    /// Densities after noise and clamping at zero.
    pub sigma: Vec<f64>,
    pub colors: Vec<Rgb>,
    pub delta: Vec<f64>,
    /// `T_i`, transmittance reaching sample `i`.
    pub transmittance: Vec<f64>,
    pub weights: Vec<f64>,
    /// Transmittance left after the last sample.
    pub residual: f64,
    pub color: Rgb,
    pub depth: f64,
    /// `W = Σ w_i`.
    pub acc: f64,
}

/// Adds `N(0, noise_std²)` noise to raw densities, clamps at zero and composites.
pub fn composite(sigma_raw: &[f64], colors: &[Rgb], t: &[f64], noise_std: f64, rng: &mut Rng) -> CompositeTrace {
    let sigma = sigma_raw
        .iter()
        .map(|&s| {
            let eps = if noise_std > 0.0 {
                noise_std * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            (s + eps).max(0.0)
        })
        .collect();
    composite_densities(sigma, colors.to_vec(), t.to_vec())
}

/// Composites non-negative densities.
pub fn composite_densities(sigma: Vec<f64>, colors: Vec<Rgb>, t: Vec<f64>) -> CompositeTrace {
    let m = t.len();
    assert!(m >= 1 && sigma.len() == m && colors.len() == m, "composite inputs");
    let delta: Vec<f64> = (0..m)
        .map(|i| if i + 1 < m { t[i + 1] - t[i] } else { LAST_DELTA })
        .collect();
    let mut transmittance = Vec::with_capacity(m);
    let mut weights = Vec::with_capacity(m);
    let mut trans = 1.0;
    let (mut color, mut depth, mut acc) = ([0.0; 3], 0.0, 0.0);
    for i in 0..m {
        let x = sigma[i] * delta[i];
        let w = trans * -(-x).exp_m1();
        transmittance.push(trans);
        weights.push(w);
        for (c, ci) in color.iter_mut().zip(colors[i]) {
            *c += w * ci;
        }
        depth += w * t[i];
        acc += w;
        trans *= (-x).exp();
    }
    CompositeTrace {
        t,
        sigma,
        colors,
        delta,
        transmittance,
        weights,
        residual: trans,
        color,
        depth,
        acc,
    }
}

/// Gradients of a scalar loss with respect to the post-clamp densities and the
/// per-sample colors, given `∂L/∂C` and `∂L/∂D`.
pub fn composite_backward(trace: &CompositeTrace, d_color: Rgb, d_depth: f64) -> (Vec<f64>, Vec<Rgb>) {
    let m = trace.t.len();
    let g: Vec<f64> = (0..m)
        .map(|i| {
            let c = trace.colors[i];
            d_color[0] * c[0] + d_color[1] * c[1] + d_color[2] * c[2] + d_depth * trace.t[i]
        })
        .collect();
    let mut d_sigma = vec![0.0; m];
    // Σ_{j>i} w_j g_j, accumulated from the back.
    let mut tail = 0.0;
    for i in (0..m).rev() {
        let next_t = if i + 1 < m { trace.transmittance[i + 1] } else { trace.residual };
        d_sigma[i] = trace.delta[i] * (next_t * g[i] - tail);
        tail += trace.weights[i] * g[i];
    }
    let d_colors = trace
        .weights
        .iter()
        .map(|&w| d_color.map(|d| d * w))
        .collect();
    (d_sigma, d_colors)
}

/// A ray with its sampling interval and the seed of its private stream.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RayJob {
    pub ray: Ray,
    pub near: f64,
    pub far: f64,
    pub seed: u64,
}

/// Sample positions and field inputs for a set of rays, `m` samples each.
#[derive(Debug, Default)]
pub(crate) struct SampleBatch<T> {
    pub t: Vec<f64>,
    pub noise: Vec<f64>,
    pub positions: Vec<T>,
    pub directions: Vec<T>,
}

impl<T: Real> SampleBatch<T> {
    /// Draws stratified samples, then density noise, from each ray's stream.
    pub fn fill<F>(&mut self, field: &FieldParams<F>, jobs: &[RayJob], m: usize, noise_std: f64) -> Result<()> {
        let n = jobs.len() * m;
        self.t.resize(n, 0.0);
        self.noise.resize(n, 0.0);
        self.positions.clear();
        self.directions.clear();
        self.positions.reserve(n * 3);
        self.directions.reserve(n * 3);
        for (r, job) in jobs.iter().enumerate() {
            let mut rng = rng_from(job.seed);
            let ts = &mut self.t[r * m..(r + 1) * m];
            stratified_into(job.near, job.far, &mut rng, ts)?;
            for e in &mut self.noise[r * m..(r + 1) * m] {
                *e = if noise_std > 0.0 {
                    noise_std * rng.sample::<f64, _>(StandardNormal)
                } else {
                    0.0
                };
            }
            let d = job.ray.direction.normalize();
            let d = [T::of(d.x), T::of(d.y), T::of(d.z)];
            for &t in ts.iter() {
                let x = field.bounds.normalize(&job.ray.at(t));
                self.positions.extend(x.map(T::of));
                self.directions.extend(d);
            }
        }
        Ok(())
    }
}

/// Field outputs of sample range `r*m..(r+1)*m`, composited with the batch noise.
pub(crate) fn composite_from_tape<T: Real>(
    batch: &SampleBatch<T>,
    tape: &FieldTape<T>,
    r: usize,
    m: usize,
) -> std::result::Result<CompositeTrace, &'static str> {
    let raw = &tape.density_raw()[r * m..(r + 1) * m];
    let col = &tape.color()[r * m * 3..(r + 1) * m * 3];
    let mut sigma = Vec::with_capacity(m);
    let mut colors = Vec::with_capacity(m);
    for i in 0..m {
        let s = raw[i].f64();
        let c = [col[3 * i].f64(), col[3 * i + 1].f64(), col[3 * i + 2].f64()];
        if !s.is_finite() || c.iter().any(|v| !v.is_finite()) {
            return Err("field output is not finite");
        }
        sigma.push((s + batch.noise[r * m + i]).max(0.0));
        colors.push(c);
    }
    Ok(composite_densities(sigma, colors, batch.t[r * m..(r + 1) * m].to_vec()))
}

/// Renders one ray through the field with samples in `[near, far]`.
pub fn render_ray<T: Real>(
    field: &FieldParams<T>,
    ray: &Ray,
    (near, far): (f64, f64),
    config: &RenderConfig,
    seed: u64,
) -> Result<CompositeTrace> {
    config.validate()?;
    let job = RayJob { ray: *ray, near, far, seed };
    let mut batch = SampleBatch::<T>::default();
    batch.fill(field, &[job], config.samples, config.noise_std)?;
    let mut tape = FieldTape::default();
    field.forward_batch(&batch.positions, &batch.directions, &mut tape);
    composite_from_tape(&batch, &tape, 0, config.samples).map_err(|m| Error::numeric(m, Some(0)))
}

/// Color, depth and accumulated weight for every pixel of a view.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub image: Image,
    /// Expected depth; pixels with `W < 0.1` are flagged invalid but keep their value.
    pub depth: DepthMap,
    pub accumulation: Vec<f64>,
}

/// Renders a view without density noise. Pixel `p` draws its samples from
/// stream `indexed(seed, p)`, so the result does not depend on scheduling.
pub fn render_view_field<T: Real>(
    field: &FieldParams<T>,
    camera: &Camera,
    bounds: &RayBounds,
    config: &RenderConfig,
    seed: u64,
) -> Result<RenderedView> {
    config.validate()?;
    let (w, h) = (camera.intrinsics.width, camera.intrinsics.height);
    if (bounds.width, bounds.height) != (w, h) {
        return Err(Error::SizeMismatch(format!(
            "bounds {}x{} for a {w}x{h} camera",
            bounds.width, bounds.height
        )));
    }
    let m = config.samples;
    let rows: Vec<Vec<(Rgb, f64, f64)>> = (0..h)
        .into_par_iter()
        .map_init(
            || (SampleBatch::<T>::default(), FieldTape::<T>::default()),
            |(batch, tape), y| -> Result<Vec<(Rgb, f64, f64)>> {
                let jobs: Vec<RayJob> = (0..w)
                    .map(|x| {
                        let p = y * w + x;
                        let (near, far) = bounds.get(p);
                        RayJob {
                            ray: camera.pixel_ray(x, y),
                            near,
                            far,
                            seed: indexed(seed, p as u64),
                        }
                    })
                    .collect();
                batch.fill(field, &jobs, m, 0.0)?;
                field.forward_batch(&batch.positions, &batch.directions, tape);
                (0..w)
                    .map(|x| {
                        let tr = composite_from_tape(batch, tape, x, m)
                            .map_err(|msg| Error::numeric(format!("{msg} at pixel ({x}, {y})"), Some(y * w + x)))?;
                        Ok((tr.color.map(|c| c.clamp(0.0, 1.0)), tr.depth, tr.acc))
                    })
                    .collect()
            },
        )
        .collect::<Result<_>>()?;
    let mut pixels = Vec::with_capacity(w * h);
    let mut values = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    let mut accumulation = Vec::with_capacity(w * h);
    for (c, d, a) in rows.into_iter().flatten() {
        pixels.push(c);
        values.push(d);
        valid.push(a >= LOW_TRUST_WEIGHT && d > 0.0 && d.is_finite());
        accumulation.push(a);
    }
    Ok(RenderedView {
        image: Image::from_pixels(w, h, pixels)?,
        depth: DepthMap::with_mask(w, h, values, valid)?,
        accumulation,
    })
}

/// Depth of a view sampled inside the prior-guided ranges.
pub fn render_depth_image<T: Real>(
    field: &FieldParams<T>,
    camera: &Camera,
    prior: &DepthMap,
    error: &ErrorMap,
    guidance: &GuidanceConfig,
    config: &RenderConfig,
    seed: u64,
) -> Result<DepthMap> {
    let bounds = adaptive_range(prior, error, guidance)?;
    Ok(render_view_field(field, camera, &bounds, config, seed)?.depth)
}

/// Color of a view sampled inside the prior-guided ranges, clamped to `[0, 1]`.
pub fn render_rgb_image<T: Real>(
    field: &FieldParams<T>,
    camera: &Camera,
    prior: &DepthMap,
    error: &ErrorMap,
    guidance: &GuidanceConfig,
    config: &RenderConfig,
    seed: u64,
) -> Result<Image> {
    let bounds = adaptive_range(prior, error, guidance)?;
    Ok(render_view_field(field, camera, &bounds, config, seed)?.image)
}
