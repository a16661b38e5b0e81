//! Scene-specific depth priors fitted to sparse depth with a scale-invariant
//! log-depth loss.
//!
//! The predictor is a coordinate network per scene: encoded pixel position,
//! pixel color and a learned per-view embedding map to log-depth. Dense
//! outputs are rescaled per view to agree with that view's sparse depth.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{adam_step, encode_into, encoded_len, AdamState};
use crate::image::{ensure_same_size, DepthMap, Image};
use crate::nn::{Activation, Mlp, Tape};
use crate::rng::{rng_from, Rng};

/// Smoothing of `|x|` as `sqrt(x² + ε²)` for gradients.
pub const ABS_EPSILON: f64 = 1e-6;

/// Fewest sparse pixels a view needs for adaptation.
pub const MIN_SPARSE_PIXELS: usize = 10;

fn jointly_valid(dp: &DepthMap, ds: &DepthMap) -> Result<Vec<(f64, f64)>> {
    ensure_same_size(dp, ds, "depth maps")?;
    let pairs: Vec<(f64, f64)> = (0..dp.len())
        .filter(|&i| dp.valid[i] && ds.valid[i])
        .map(|i| (dp.values[i], ds.values[i]))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(pairs)
}

/// Mean of `log Dp - log Ds` over jointly valid pixels.
pub fn scale_alignment(dp: &DepthMap, ds: &DepthMap) -> Result<f64> {
    let pairs = jointly_valid(dp, ds)?;
    Ok(pairs.iter().map(|(p, s)| p.ln() - s.ln()).sum::<f64>() / pairs.len() as f64)
}

/// Mean of `|log Dp - log Ds - α|` with `α` from [`scale_alignment`].
pub fn scale_invariant_loss(dp: &DepthMap, ds: &DepthMap) -> Result<f64> {
    let pairs = jointly_valid(dp, ds)?;
    let r: Vec<f64> = pairs.iter().map(|(p, s)| p.ln() - s.ln()).collect();
    let alpha = r.iter().sum::<f64>() / r.len() as f64;
    Ok(r.iter().map(|x| (x - alpha).abs()).sum::<f64>() / r.len() as f64)
}

/// Rescales `prior` so its mean log-ratio to `sparse` is zero.
pub fn align_to_sparse(prior: &DepthMap, sparse: &DepthMap) -> Result<DepthMap> {
    let alpha = scale_alignment(prior, sparse)?;
    Ok(prior.scaled((-alpha).exp()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Passes over every sparse pixel.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Sparse pixels per step, all from one view.
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Weight of the total-variation term on log-depth.
    #[serde(default = "default_smoothness")]
    pub smoothness: f64,
    #[serde(default = "default_freqs")]
    pub freqs: usize,
    #[serde(default = "default_embedding")]
    pub embedding_dim: usize,
    #[serde(default = "default_layers")]
    pub hidden_layers: usize,
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_epochs() -> usize {
    15
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    1e-3
}
fn default_smoothness() -> f64 {
    0.05
}
fn default_freqs() -> usize {
    6
}
fn default_embedding() -> usize {
    8
}
fn default_layers() -> usize {
    4
}
fn default_width() -> usize {
    64
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            epochs: default_epochs(),
            batch_size: default_batch(),
            lr: default_lr(),
            smoothness: default_smoothness(),
            freqs: default_freqs(),
            embedding_dim: default_embedding(),
            hidden_layers: default_layers(),
            hidden_width: default_width(),
            seed: 0,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("prior adaptation needs at least one epoch".into()));
        }
        if self.batch_size < 2 || self.hidden_layers < 1 || self.hidden_width < 1 {
            return Err(Error::Config("prior batch size must be >= 2 and layers non-empty".into()));
        }
        if !(self.lr > 0.0) || !(self.smoothness >= 0.0) {
            return Err(Error::Config("prior lr must be positive and smoothness non-negative".into()));
        }
        Ok(())
    }
}

/// Coordinate network predicting log-depth, plus one embedding per view.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorModel {
    pub mlp: Mlp,
    pub freqs: usize,
    pub embedding_dim: usize,
    pub views: usize,
    /// Network parameters followed by `views × embedding_dim` embeddings.
    pub theta: Vec<f64>,
}

/// A pixel fed to the prior network.
#[derive(Debug, Clone, Copy)]
pub struct PriorSample {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
    pub color: [f64; 3],
}

impl PriorSample {
    pub fn of(image: &Image, x: usize, y: usize) -> Self {
        Self {
            x,
            y,
            width: image.width,
            height: image.height,
            color: image.get(x, y),
        }
    }
}

/// One optimization batch from a single view.
#[derive(Debug, Clone)]
pub struct PriorBatch {
    pub view: usize,
    /// Sparse pixels with their target depth.
    pub supervised: Vec<(PriorSample, f64)>,
    /// Neighboring pixel pairs for the smoothness term.
    pub pairs: Vec<(PriorSample, PriorSample)>,
}

fn smooth_abs(x: f64) -> (f64, f64) {
    let s = (x * x + ABS_EPSILON * ABS_EPSILON).sqrt();
    (s, x / s)
}

impl PriorModel {
    pub fn new(config: &PriorConfig, views: usize, rng: &mut Rng) -> Self {
        let input = encoded_len(2, config.freqs) + 3 + config.embedding_dim;
        let mut widths = vec![input];
        widths.extend(std::iter::repeat(config.hidden_width).take(config.hidden_layers));
        widths.push(1);
        let mlp = Mlp::new(widths, Activation::Softplus, Activation::Identity, None);
        let n = mlp.param_count();
        let mut theta = vec![0.0; n + views * config.embedding_dim];
        mlp.init(&mut theta[..n], rng);
        for e in &mut theta[n..] {
            *e = rng.gen_range(-0.1..0.1);
        }
        Self {
            mlp,
            freqs: config.freqs,
            embedding_dim: config.embedding_dim,
            views,
            theta,
        }
    }

    fn net_len(&self) -> usize {
        self.mlp.param_count()
    }

    /// Sets the output bias, i.e. the log-depth predicted before training.
    pub fn set_output_bias(&mut self, value: f64) {
        let n = self.net_len();
        self.theta[n - 1] = value;
    }

    fn embedding(&self, view: usize) -> &[f64] {
        let o = self.net_len() + view * self.embedding_dim;
        &self.theta[o..o + self.embedding_dim]
    }

    fn input_width(&self) -> usize {
        self.mlp.input_width()
    }

    fn push_input(&self, view: usize, s: &PriorSample, out: &mut Vec<f64>) {
        let u = 2.0 * (s.x as f64 + 0.5) / s.width as f64 - 1.0;
        let v = 2.0 * (s.y as f64 + 0.5) / s.height as f64 - 1.0;
        let start = out.len();
        out.resize(start + encoded_len(2, self.freqs), 0.0);
        encode_into(&[u, v], self.freqs, &mut out[start..]);
        out.extend(s.color.iter().map(|c| 2.0 * c - 1.0));
        out.extend_from_slice(self.embedding(view));
    }

    /// Log-depth for each sample of one view.
    pub fn predict_log(&self, view: usize, samples: &[PriorSample]) -> Vec<f64> {
        let mut input = Vec::with_capacity(samples.len() * self.input_width());
        for s in samples {
            self.push_input(view, s, &mut input);
        }
        let mut tape = Tape::default();
        self.mlp
            .forward(&self.theta[..self.net_len()], &input, samples.len(), &mut tape)
            .to_vec()
    }

    /// Dense depth for a view, before alignment to sparse depth.
    pub fn predict(&self, view: usize, image: &Image) -> Result<DepthMap> {
        let samples: Vec<PriorSample> = (0..image.height)
            .flat_map(|y| (0..image.width).map(move |x| (x, y)))
            .map(|(x, y)| PriorSample::of(image, x, y))
            .collect();
        let logd = self.predict_log(view, &samples);
        let values: Vec<f64> = logd.iter().map(|l| l.exp()).collect();
        if let Some(i) = values.iter().position(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::numeric(format!("prior depth at pixel {i} of view {view} is {}", values[i]), None));
        }
        DepthMap::from_values(image.width, image.height, values)
    }

    /// Smoothed objective of one batch and its gradient.
    pub fn batch_loss(&self, batch: &PriorBatch, smoothness: f64) -> (f64, Vec<f64>) {
        let n = batch.supervised.len();
        let m = batch.pairs.len();
        let rows = n + 2 * m;
        let iw = self.input_width();
        let mut input = Vec::with_capacity(rows * iw);
        for (s, _) in &batch.supervised {
            self.push_input(batch.view, s, &mut input);
        }
        for (p, _) in &batch.pairs {
            self.push_input(batch.view, p, &mut input);
        }
        for (_, q) in &batch.pairs {
            self.push_input(batch.view, q, &mut input);
        }
        let net = self.net_len();
        let mut tape = Tape::default();
        let y = self.mlp.forward(&self.theta[..net], &input, rows, &mut tape).to_vec();

        let mut dy = vec![0.0; rows];
        let mut loss = 0.0;
        if n > 0 {
            let r: Vec<f64> = batch
                .supervised
                .iter()
                .zip(&y)
                .map(|((_, d), yi)| yi - d.ln())
                .collect();
            let alpha = r.iter().sum::<f64>() / n as f64;
            let mut g = vec![0.0; n];
            for i in 0..n {
                let (a, da) = smooth_abs(r[i] - alpha);
                loss += a / n as f64;
                g[i] = da;
            }
            let gm = g.iter().sum::<f64>() / n as f64;
            for i in 0..n {
                dy[i] = (g[i] - gm) / n as f64;
            }
        }
        if m > 0 && smoothness > 0.0 {
            for k in 0..m {
                let (a, da) = smooth_abs(y[n + k] - y[n + m + k]);
                loss += smoothness * a / m as f64;
                dy[n + k] += smoothness * da / m as f64;
                dy[n + m + k] -= smoothness * da / m as f64;
            }
        }
        let mut grad = vec![0.0; self.theta.len()];
        let mut d_input = Vec::new();
        self.mlp
            .backward(&self.theta[..net], &mut tape, &dy, &mut grad[..net], Some(&mut d_input));
        let e0 = iw - self.embedding_dim;
        let go = net + batch.view * self.embedding_dim;
        for r in 0..rows {
            for k in 0..self.embedding_dim {
                grad[go + k] += d_input[r * iw + e0 + k];
            }
        }
        (loss, grad)
    }
}

/// Losses before and after adaptation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorReport {
    /// Mean over views of the exact scale-invariant loss on sparse pixels.
    pub initial_loss: f64,
    pub final_loss: f64,
    pub per_view_loss: Vec<f64>,
    pub steps: usize,
}

fn sparse_loss(model: &PriorModel, images: &[Image], sparse: &[DepthMap]) -> Result<Vec<f64>> {
    images
        .iter()
        .zip(sparse)
        .enumerate()
        .map(|(v, (img, sp))| scale_invariant_loss(&model.predict(v, img)?, sp))
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Fits a prior model to the sparse depth of every view and returns dense
/// priors aligned to each view's sparse depth.
pub fn adapt_priors(
    images: &[Image],
    sparse: &[DepthMap],
    config: &PriorConfig,
) -> Result<(PriorModel, Vec<DepthMap>, PriorReport)> {
    config.validate()?;
    if images.len() != sparse.len() || images.is_empty() {
        return Err(Error::SizeMismatch(format!(
            "{} images and {} sparse depth maps",
            images.len(),
            sparse.len()
        )));
    }
    let mut pixels: Vec<Vec<usize>> = Vec::with_capacity(images.len());
    for (v, (img, sp)) in images.iter().zip(sparse).enumerate() {
        ensure_same_size(img, sp, &format!("view {v}"))?;
        let idx: Vec<usize> = (0..sp.len()).filter(|&i| sp.valid[i]).collect();
        if idx.len() < MIN_SPARSE_PIXELS {
            return Err(Error::DegenerateSupervision {
                view: v,
                count: idx.len(),
                required: MIN_SPARSE_PIXELS,
            });
        }
        pixels.push(idx);
    }
    let mut rng = rng_from(config.seed);
    let mut model = PriorModel::new(config, images.len(), &mut rng);
    let all_logs: Vec<f64> = sparse.iter().flat_map(|s| s.valid_values().map(f64::ln)).collect();
    model.set_output_bias(mean(&all_logs));

    let initial = sparse_loss(&model, images, sparse)?;
    let mut adam = AdamState::new(model.theta.len());
    let mut steps = 0;
    for _ in 0..config.epochs {
        let mut plan: Vec<(usize, Vec<usize>)> = Vec::new();
        for (v, idx) in pixels.iter().enumerate() {
            let mut idx = idx.clone();
            idx.shuffle(&mut rng);
            for chunk in idx.chunks(config.batch_size) {
                plan.push((v, chunk.to_vec()));
            }
        }
        plan.shuffle(&mut rng);
        for (v, chunk) in plan {
            let img = &images[v];
            let (w, h) = (img.width, img.height);
            let supervised = chunk
                .iter()
                .map(|&i| (PriorSample::of(img, i % w, i / w), sparse[v].values[i]))
                .collect();
            let pairs = (0..config.batch_size)
                .filter_map(|_| {
                    let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h));
                    let (qx, qy) = if rng.gen::<bool>() { (x + 1, y) } else { (x, y + 1) };
                    (qx < w && qy < h).then(|| (PriorSample::of(img, x, y), PriorSample::of(img, qx, qy)))
                })
                .collect();
            let batch = PriorBatch {
                view: v,
                supervised,
                pairs,
            };
            let (loss, grad) = model.batch_loss(&batch, config.smoothness);
            if !loss.is_finite() {
                return Err(Error::numeric(format!("prior loss at step {steps} is not finite"), None));
            }
            adam_step(&mut model.theta, &grad, &mut adam, config.lr)?;
            steps += 1;
        }
    }
    let per_view = sparse_loss(&model, images, sparse)?;
    let report = PriorReport {
        initial_loss: mean(&initial),
        final_loss: mean(&per_view),
        per_view_loss: per_view,
        steps,
    };
    let priors = images
        .iter()
        .zip(sparse)
        .enumerate()
        .map(|(v, (img, sp))| align_to_sparse(&model.predict(v, img)?, sp))
        .collect::<Result<Vec<_>>>()?;
    Ok((model, priors, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn dm(values: Vec<f64>) -> DepthMap {
        let n = values.len();
        DepthMap::from_values(n, 1, values).unwrap()
    }

    #[test]
    fn alignment_cases() {
        let a = dm(vec![1.0, 2.0, 3.0]);
        assert_eq!(scale_alignment(&a, &a).unwrap(), 0.0);
        assert!((scale_alignment(&a.scaled(2.0), &a).unwrap() - 2f64.ln()).abs() < 1e-15);
        let e2 = 1f64.exp().powi(2);
        assert!((scale_alignment(&dm(vec![1.0, e2]), &dm(vec![1.0, 1.0])).unwrap() - 1.0).abs() < 1e-15);
        let empty = DepthMap::empty(3, 1);
        assert!(matches!(scale_alignment(&a, &empty), Err(Error::NoOverlap)));
    }

    #[test]
    fn loss_cases() {
        let ds = dm(vec![1.0, 1.0]);
        let e2 = 1f64.exp().powi(2);
        assert!((scale_invariant_loss(&dm(vec![1.0, e2]), &ds).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(scale_invariant_loss(&dm(vec![3.7]), &dm(vec![0.2])).unwrap(), 0.0);
        let a = dm(vec![0.5, 1.5, 4.0]);
        assert!(scale_invariant_loss(&a.scaled(3.0), &a).unwrap() < 1e-15);
    }

    #[test]
    fn scale_invariance_properties() {
        let mut rng = Rng::seed_from_u64(0);
        for _ in 0..50 {
            let dp = dm((0..30).map(|_| rng.gen_range(0.3..6.0)).collect());
            let ds = dm((0..30).map(|_| rng.gen_range(0.3..6.0)).collect());
            let base = scale_invariant_loss(&dp, &ds).unwrap();
            let a0 = scale_alignment(&dp, &ds).unwrap();
            for c in [0.1, 1.0, 7.0] {
                assert!((scale_invariant_loss(&dp.scaled(c), &ds).unwrap() - base).abs() < 1e-12);
                assert!((scale_invariant_loss(&dp, &ds.scaled(c)).unwrap() - base).abs() < 1e-12);
                assert!((scale_alignment(&dp.scaled(c), &ds).unwrap() - (a0 + c.ln())).abs() < 1e-12);
            }
        }
    }

    fn small_config() -> PriorConfig {
        PriorConfig {
            freqs: 2,
            embedding_dim: 3,
            hidden_layers: 2,
            hidden_width: 8,
            ..Default::default()
        }
    }

    fn random_image(rng: &mut Rng, w: usize, h: usize) -> Image {
        Image::from_pixels(w, h, (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = Rng::seed_from_u64(seed);
            let cfg = small_config();
            let model = PriorModel::new(&cfg, 3, &mut rng);
            let img = random_image(&mut rng, 7, 5);
            let batch = PriorBatch {
                view: 1,
                supervised: (0..9)
                    .map(|_| (PriorSample::of(&img, rng.gen_range(0..7), rng.gen_range(0..5)), rng.gen_range(0.5..4.0)))
                    .collect(),
                pairs: (0..6)
                    .map(|_| {
                        let (x, y) = (rng.gen_range(0..6), rng.gen_range(0..5));
                        (PriorSample::of(&img, x, y), PriorSample::of(&img, x + 1, y))
                    })
                    .collect(),
            };
            let (_, grad) = model.batch_loss(&batch, 0.3);
            let h = 1e-5;
            for _ in 0..20 {
                let i = rng.gen_range(0..model.theta.len());
                let (mut a, mut b) = (model.clone(), model.clone());
                a.theta[i] += h;
                b.theta[i] -= h;
                let fd = (a.batch_loss(&batch, 0.3).0 - b.batch_loss(&batch, 0.3).0) / (2.0 * h);
                let scale = fd.abs().max(grad[i].abs());
                if scale < 1e-9 {
                    continue;
                }
                assert!((fd - grad[i]).abs() / scale < 1e-4, "seed {seed} param {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    fn synthetic_views(rng: &mut Rng, n: usize) -> (Vec<Image>, Vec<DepthMap>) {
        let (w, h) = (12, 9);
        let mut images = Vec::new();
        let mut depths = Vec::new();
        for v in 0..n {
            images.push(random_image(rng, w, h));
            let values = (0..w * h)
                .map(|i| {
                    let (x, y) = ((i % w) as f64 / w as f64, (i / w) as f64 / h as f64);
                    1.5 + x + 0.5 * y + 0.2 * v as f64
                })
                .collect();
            depths.push(DepthMap::from_values(w, h, values).unwrap());
        }
        (images, depths)
    }

    #[test]
    fn fits_dense_noise_free_depth() {
        let mut rng = Rng::seed_from_u64(3);
        let (images, depths) = synthetic_views(&mut rng, 2);
        let cfg = PriorConfig {
            epochs: 150,
            batch_size: 32,
            smoothness: 0.0,
            lr: 3e-3,
            ..Default::default()
        };
        let (_, priors, report) = adapt_priors(&images, &depths, &cfg).unwrap();
        assert!(report.final_loss <= report.initial_loss);
        for (p, d) in priors.iter().zip(&depths) {
            assert!(p.is_dense());
            let l = scale_invariant_loss(p, d).unwrap();
            assert!(l < 0.02, "per-view loss {l}");
        }
    }

    #[test]
    fn scaled_sparse_depth_gives_scaled_priors() {
        let mut rng = Rng::seed_from_u64(4);
        let (images, depths) = synthetic_views(&mut rng, 2);
        let cfg = PriorConfig {
            epochs: 3,
            ..Default::default()
        };
        let (_, a, _) = adapt_priors(&images, &depths, &cfg).unwrap();
        let doubled: Vec<DepthMap> = depths.iter().map(|d| d.scaled(2.0)).collect();
        let (_, b, _) = adapt_priors(&images, &doubled, &cfg).unwrap();
        for (pa, pb) in a.iter().zip(&b) {
            for (x, y) in pa.values.iter().zip(&pb.values) {
                assert!((2.0 * x - y).abs() < 1e-9 * y);
            }
        }
    }

    #[test]
    fn rejects_thin_supervision_and_zero_epochs() {
        let mut rng = Rng::seed_from_u64(5);
        let (images, mut depths) = synthetic_views(&mut rng, 2);
        for i in 9..depths[1].len() {
            depths[1].valid[i] = false;
        }
        match adapt_priors(&images, &depths, &PriorConfig::default()) {
            Err(Error::DegenerateSupervision { view: 1, count: 9, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        let cfg = PriorConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(adapt_priors(&images, &depths, &cfg), Err(Error::Config(_))));
    }

    #[test]
    fn adaptation_is_deterministic() {
        let mut rng = Rng::seed_from_u64(6);
        let (images, depths) = synthetic_views(&mut rng, 2);
        let cfg = PriorConfig {
            epochs: 2,
            seed: 17,
            ..Default::default()
        };
        let a = adapt_priors(&images, &depths, &cfg).unwrap();
        let b = adapt_priors(&images, &depths, &cfg).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }
}
