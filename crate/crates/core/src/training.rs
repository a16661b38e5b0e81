//! Photometric optimization of the radiance field over random ray batches.

use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{adam_step, lr_schedule, write_checkpoint, Aabb, AdamState, FieldArch, FieldParams, FieldTape};
use crate::geometry::{Camera, Ray, Vec3};
use crate::guidance::RayBounds;
use crate::image::{Image, Rgb};
use crate::nn::Real;
use crate::render::{composite_backward, composite_from_tape, RayJob, RenderConfig, SampleBatch};
use crate::rng::{indexed, rng_from, substream, Rng};

/// Rays per gradient chunk. Fixed so the reduction order never depends on
/// the number of threads.
const CHUNK_RAYS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// Per-pixel ranges around the depth priors.
    Guided,
    /// One global range for every ray.
    Unguided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_rays")]
    pub rays_per_batch: usize,
    #[serde(default = "default_lr_init")]
    pub lr_init: f64,
    #[serde(default = "default_lr_final")]
    pub lr_final: f64,
    #[serde(default = "default_mode")]
    pub mode: TrainMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    /// Iterations between checkpoints; none when absent.
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub arch: FieldArch,
}

fn default_iterations() -> usize {
    5000
}
fn default_rays() -> usize {
    1024
}
fn default_lr_init() -> f64 {
    5e-4
}
fn default_lr_final() -> f64 {
    5e-5
}
fn default_mode() -> TrainMode {
    TrainMode::Guided
}
fn default_log_every() -> usize {
    100
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
            rays_per_batch: default_rays(),
            lr_init: default_lr_init(),
            lr_final: default_lr_final(),
            mode: default_mode(),
            seed: 0,
            log_every: default_log_every(),
            checkpoint_every: None,
            arch: FieldArch::desk(),
        }
    }
}

impl TrainConfig {
    /// 200K iterations with the 8×256 field.
    pub fn full() -> Self {
        Self {
            iterations: 200_000,
            arch: FieldArch::full(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.rays_per_batch < 1 {
            return Err(Error::Config("rays per batch must be at least 1".into()));
        }
        if !(self.lr_init > 0.0 && self.lr_final > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.log_every < 1 || self.checkpoint_every == Some(0) {
            return Err(Error::Config("log and checkpoint cadence must be at least 1".into()));
        }
        self.arch.validate()
    }
}

/// A seen view with its per-pixel sampling ranges.
#[derive(Debug, Clone)]
pub struct TrainView {
    pub image: Image,
    pub camera: Camera,
    pub bounds: RayBounds,
}

/// One training ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySample {
    pub view: usize,
    pub pixel: usize,
    pub ray: Ray,
    pub near: f64,
    pub far: f64,
    pub target: Rgb,
    /// Seed of the ray's sampling and noise stream.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchMode {
    WithReplacement,
    /// Distinct pixels; a batch of every pixel visits each exactly once.
    WithoutReplacement,
}

/// Mean over rays of the squared RGB distance.
pub fn photometric_loss(rendered: &[Rgb], target: &[Rgb]) -> Result<f64> {
    if rendered.len() != target.len() {
        return Err(Error::SizeMismatch(format!(
            "{} rendered colors for {} targets",
            rendered.len(),
            target.len()
        )));
    }
    if rendered.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = rendered
        .iter()
        .zip(target)
        .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
        .sum();
    Ok(sum / rendered.len() as f64)
}

/// Draws rays uniformly over all pixels of all views.
pub fn sample_ray_batch(views: &[TrainView], batch: usize, mode: BatchMode, rng: &mut Rng) -> Result<Vec<RaySample>> {
    if views.is_empty() {
        return Err(Error::InvalidInput("no views to draw rays from".into()));
    }
    let mut offsets = Vec::with_capacity(views.len() + 1);
    offsets.push(0usize);
    for v in views {
        offsets.push(offsets.last().unwrap() + v.image.len());
    }
    let total = *offsets.last().unwrap();
    let indices: Vec<usize> = match mode {
        BatchMode::WithReplacement => (0..batch).map(|_| rng.gen_range(0..total)).collect(),
        BatchMode::WithoutReplacement => {
            if batch > total {
                return Err(Error::InvalidInput(format!("batch of {batch} from {total} pixels")));
            }
            rand::seq::index::sample(rng, total, batch).into_vec()
        }
    };
    Ok(indices
        .into_iter()
        .map(|g| {
            let view = offsets.partition_point(|&o| o <= g) - 1;
            let pixel = g - offsets[view];
            let v = &views[view];
            let w = v.image.width;
            let (near, far) = v.bounds.get(pixel);
            RaySample {
                view,
                pixel,
                ray: v.camera.pixel_ray(pixel % w, pixel / w),
                near,
                far,
                target: v.image.pixels[pixel],
                seed: rng.gen(),
            }
        })
        .collect())
}

/// Loss, gradient and sample bookkeeping for one batch.
#[derive(Debug, Clone)]
pub struct BatchGradient<T> {
    pub loss: f64,
    pub grad: Vec<T>,
    pub samples: u64,
    /// Samples that fell outside their ray's `[near, far]`.
    pub outside: u64,
}

/// Exact gradient of the batch photometric loss with respect to θ.
pub fn field_gradient<T: Real>(
    field: &FieldParams<T>,
    batch: &[RaySample],
    config: &RenderConfig,
) -> Result<BatchGradient<T>> {
    config.validate()?;
    let m = config.samples;
    let scale = 1.0 / batch.len().max(1) as f64;
    let chunks: Vec<(f64, Vec<T>, u64, u64)> = batch
        .par_chunks(CHUNK_RAYS)
        .enumerate()
        .map_init(
            || (SampleBatch::<T>::default(), FieldTape::<T>::default()),
            |(samples, tape), (ci, rays)| -> Result<(f64, Vec<T>, u64, u64)> {
                let jobs: Vec<RayJob> = rays
                    .iter()
                    .map(|r| RayJob {
                        ray: r.ray,
                        near: r.near,
                        far: r.far,
                        seed: r.seed,
                    })
                    .collect();
                samples.fill(field, &jobs, m, config.noise_std)?;
                let mut outside = 0u64;
                for (r, job) in jobs.iter().enumerate() {
                    outside += samples.t[r * m..(r + 1) * m]
                        .iter()
                        .filter(|&&t| !(t >= job.near && t <= job.far))
                        .count() as u64;
                }
                field.forward_batch(&samples.positions, &samples.directions, tape);
                let mut d_raw = vec![T::zero(); rays.len() * m];
                let mut d_col = vec![T::zero(); rays.len() * m * 3];
                let mut loss = 0.0;
                for (r, ray) in rays.iter().enumerate() {
                    let index = ci * CHUNK_RAYS + r;
                    let tr = composite_from_tape(samples, tape, r, m).map_err(|msg| Error::numeric(msg, Some(index)))?;
                    let diff: Rgb = std::array::from_fn(|c| tr.color[c] - ray.target[c]);
                    let l = diff.iter().map(|d| d * d).sum::<f64>();
                    if !l.is_finite() {
                        return Err(Error::numeric("photometric loss is not finite", Some(index)));
                    }
                    loss += l;
                    let (ds, dc) = composite_backward(&tr, diff.map(|d| 2.0 * scale * d), 0.0);
                    for i in 0..m {
                        if tr.sigma[i] > 0.0 {
                            d_raw[r * m + i] = T::of(ds[i]);
                        }
                        for c in 0..3 {
                            d_col[(r * m + i) * 3 + c] = T::of(dc[i][c]);
                        }
                    }
                }
                let mut grad = vec![T::zero(); field.param_count()];
                field.backward_batch(tape, &d_raw, &d_col, &mut grad);
                Ok((loss, grad, (rays.len() * m) as u64, outside))
            },
        )
        .collect::<Result<_>>()?;
    let mut out = BatchGradient {
        loss: 0.0,
        grad: vec![T::zero(); field.param_count()],
        samples: 0,
        outside: 0,
    };
    for (loss, grad, samples, outside) in chunks {
        out.loss += loss;
        for (a, b) in out.grad.iter_mut().zip(grad) {
            *a += b;
        }
        out.samples += samples;
        out.outside += outside;
    }
    out.loss *= scale;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
    pub abs_rel: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    /// Mean batch loss over the last tenth of training fell below the first tenth.
    pub converged: bool,
    pub samples_drawn: u64,
    pub samples_outside: u64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iteration,lr,loss,abs_rel\n");
        for r in &self.records {
            let abs_rel = r.abs_rel.map(|v| format!("{v:?}")).unwrap_or_default();
            s.push_str(&format!("{},{:?},{:?},{}\n", r.iteration, r.lr, r.loss, abs_rel));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Records from a CSV written by [`TrainLog::write_csv`].
    pub fn read_records(path: &Path) -> Result<Vec<LogRecord>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("iteration,lr,loss,abs_rel") {
            return Err(Error::format(path, "missing train log header"));
        }
        lines
            .enumerate()
            .map(|(n, line)| {
                let bad = || Error::format(path, format!("line {}: malformed record", n + 2));
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 4 {
                    return Err(bad());
                }
                Ok(LogRecord {
                    iteration: f[0].parse().map_err(|_| bad())?,
                    lr: f[1].parse().map_err(|_| bad())?,
                    loss: f[2].parse().map_err(|_| bad())?,
                    abs_rel: if f[3].is_empty() {
                        None
                    } else {
                        Some(f[3].parse().map_err(|_| bad())?)
                    },
                })
            })
            .collect()
    }
}

/// Optional side effects during training.
pub struct TrainHooks<'a, T> {
    /// Held-out depth AbsRel, evaluated at each log record.
    pub evaluate: Option<&'a (dyn Fn(&FieldParams<T>) -> Result<f64> + Sync)>,
    /// Written every `checkpoint_every` iterations and at the end.
    pub checkpoint: Option<&'a Path>,
}

impl<T> Default for TrainHooks<'_, T> {
    fn default() -> Self {
        Self {
            evaluate: None,
            checkpoint: None,
        }
    }
}

/// Box around every camera center and the corners of each view frustum at its
/// farthest sampling bound.
pub fn scene_bounds(views: &[TrainView]) -> Aabb {
    let mut points: Vec<Vec3> = Vec::new();
    for v in views {
        let far = v.bounds.far.iter().cloned().fold(0.0, f64::max);
        let k = &v.camera.intrinsics;
        points.push(v.camera.pose.center());
        for (x, y) in [(0, 0), (k.width - 1, 0), (0, k.height - 1), (k.width - 1, k.height - 1)] {
            points.push(v.camera.pixel_ray(x, y).at(far));
        }
    }
    Aabb::from_points(&points)
}

/// Initial field for a training run, seeded from the run seed.
pub fn init_field<T: Real>(views: &[TrainView], config: &TrainConfig) -> FieldParams<T> {
    let mut rng = rng_from(substream(config.seed, "field-init"));
    FieldParams::init(config.arch.clone(), scene_bounds(views), &mut rng)
}

/// Optimizes `field` against the views.
pub fn train<T: Real>(
    views: &[TrainView],
    mut field: FieldParams<T>,
    config: &TrainConfig,
    render: &RenderConfig,
    hooks: &TrainHooks<'_, T>,
) -> Result<(FieldParams<T>, TrainLog)> {
    config.validate()?;
    render.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidInput("training needs at least one view".into()));
    }
    for (i, v) in views.iter().enumerate() {
        let k = &v.camera.intrinsics;
        if (v.image.width, v.image.height) != (k.width, k.height)
            || (v.bounds.width, v.bounds.height) != (k.width, k.height)
        {
            return Err(Error::SizeMismatch(format!("view {i}: image, bounds and camera sizes differ")));
        }
    }
    let batch_seed = substream(config.seed, "batches");
    let mut adam = AdamState::new(field.param_count());
    let mut losses = Vec::with_capacity(config.iterations);
    let mut log = TrainLog {
        records: Vec::new(),
        converged: true,
        samples_drawn: 0,
        samples_outside: 0,
    };
    for it in 0..config.iterations {
        let lr = lr_schedule(it, config.iterations, config.lr_init, config.lr_final);
        let mut rng = rng_from(indexed(batch_seed, it as u64));
        let batch = sample_ray_batch(views, config.rays_per_batch, BatchMode::WithReplacement, &mut rng)?;
        let g = field_gradient(&field, &batch, render).map_err(|e| at_iteration(e, it))?;
        adam_step(&mut field.theta, &g.grad, &mut adam, lr).map_err(|e| at_iteration(e, it))?;
        losses.push(g.loss);
        log.samples_drawn += g.samples;
        log.samples_outside += g.outside;
        let last = it + 1 == config.iterations;
        if it % config.log_every == 0 || last {
            let abs_rel = hooks.evaluate.map(|f| f(&field)).transpose()?;
            log.records.push(LogRecord {
                iteration: it,
                lr,
                loss: g.loss,
                abs_rel,
            });
        }
        if let Some(path) = hooks.checkpoint {
            if config.checkpoint_every.map_or(false, |c| (it + 1) % c == 0) || last {
                write_checkpoint(path, &field)?;
            }
        }
        if it % 500 == 0 {
            log::debug!("iteration {it}: loss {:.5}, lr {lr:.3e}", g.loss);
        }
    }
    let tenth = (losses.len() / 10).max(1);
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    log.converged = mean(&losses[losses.len() - tenth..]) < mean(&losses[..tenth]);
    if !log.converged {
        log::warn!("training loss did not decrease");
    }
    Ok((field, log))
}

fn at_iteration(e: Error, it: usize) -> Error {
    match e {
        Error::NumericFailure { context, ray } => Error::NumericFailure {
            context: format!("iteration {it}: {context}"),
            ray,
        },
        other => other,
    }
}
