//! The radiance field: encoded position and view direction in, raw density
//! and sigmoid color out.
//!
//! Positions are normalized into `[-1, 1]³` by an axis-aligned box stored
//! with the parameters. Density comes from the position branch only; color
//! sees the position features and the encoded unit view direction.

mod adam;
mod checkpoint;
mod encoding;

pub use adam::{adam_step, lr_schedule, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use encoding::{encode_into, encoded_len, positional_encoding};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::nn::{Activation, Mlp, Real, Tape};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldArch {
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub color_width: usize,
    /// Trunk layer that also receives the encoded position.
    pub skip: Option<usize>,
}

impl Default for FieldArch {
    fn default() -> Self {
        Self::desk()
    }
}

impl FieldArch {
    /// 4×64 trunk, CPU friendly.
    pub fn desk() -> Self {
        Self {
            pos_freqs: 10,
            dir_freqs: 4,
            hidden_layers: 4,
            hidden_width: 64,
            color_width: 32,
            skip: None,
        }
    }

    /// 8×256 trunk with the input re-injected at layer 5.
    pub fn full() -> Self {
        Self {
            pos_freqs: 10,
            dir_freqs: 4,
            hidden_layers: 8,
            hidden_width: 256,
            color_width: 128,
            skip: Some(5),
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.hidden_layers == 0 || self.hidden_width == 0 || self.color_width == 0 {
            return Err(crate::Error::Config("field layers and widths must be positive".into()));
        }
        if let Some(s) = self.skip {
            if s == 0 || s >= self.hidden_layers {
                return Err(crate::Error::Config(format!(
                    "skip layer {s} must lie in 1..{}",
                    self.hidden_layers
                )));
            }
        }
        Ok(())
    }

    pub fn pos_width(&self) -> usize {
        encoded_len(3, self.pos_freqs)
    }

    pub fn dir_width(&self) -> usize {
        encoded_len(3, self.dir_freqs)
    }

    fn trunk(&self) -> Mlp {
        let mut widths = vec![self.pos_width()];
        widths.extend(std::iter::repeat(self.hidden_width).take(self.hidden_layers));
        Mlp::new(widths, Activation::Relu, Activation::Relu, self.skip)
    }

    fn density_head(&self) -> Mlp {
        Mlp::new(vec![self.hidden_width, 1], Activation::Identity, Activation::Identity, None)
    }

    fn color_head(&self) -> Mlp {
        Mlp::new(
            vec![self.hidden_width + self.dir_width(), self.color_width, 3],
            Activation::Relu,
            Activation::Sigmoid,
            None,
        )
    }

    pub fn param_count(&self) -> usize {
        self.trunk().param_count() + self.density_head().param_count() + self.color_head().param_count()
    }
}

/// Axis-aligned box mapped onto `[-1, 1]³`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                min[a] = min[a].min(p[a]);
                max[a] = max[a].max(p[a]);
            }
        }
        Self { min, max }
    }

    #[inline]
    pub fn normalize(&self, p: &Vec3) -> [f64; 3] {
        std::array::from_fn(|a| {
            let span = (self.max[a] - self.min[a]).max(1e-9);
            2.0 * (p[a] - self.min[a]) / span - 1.0
        })
    }
}

/// Output of the field at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldOutput {
    pub color: [f64; 3],
    /// Pre-activation density; the renderer adds noise and clamps at zero.
    pub density_raw: f64,
}

/// Architecture, normalization box and flat parameter vector θ.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams<T> {
    pub arch: FieldArch,
    pub bounds: Aabb,
    pub theta: Vec<T>,
}

/// Buffers for a batched forward/backward pass.
#[derive(Debug, Default)]
pub struct FieldTape<T> {
    batch: usize,
    pos_enc: Vec<T>,
    dir_enc: Vec<T>,
    color_in: Vec<T>,
    trunk: Tape<T>,
    density: Tape<T>,
    color: Tape<T>,
    d_h: Vec<T>,
    d_color_in: Vec<T>,
}

impl<T: Real> FieldTape<T> {
    pub fn density_raw(&self) -> &[T] {
        self.density.output()
    }

    pub fn color(&self) -> &[T] {
        self.color.output()
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

struct Heads {
    trunk: Mlp,
    density: Mlp,
    color: Mlp,
    split: [usize; 2],
}

impl<T: Real> FieldParams<T> {
    /// Glorot-initialized parameters.
    pub fn init(arch: FieldArch, bounds: Aabb, rng: &mut impl Rng) -> Self {
        let heads = Self::heads_for(&arch);
        let mut theta = vec![T::zero(); arch.param_count()];
        let [a, b] = heads.split;
        heads.trunk.init(&mut theta[..a], rng);
        heads.density.init(&mut theta[a..b], rng);
        heads.color.init(&mut theta[b..], rng);
        Self { arch, bounds, theta }
    }

    pub fn zeros(arch: FieldArch, bounds: Aabb) -> Self {
        let theta = vec![T::zero(); arch.param_count()];
        Self { arch, bounds, theta }
    }

    fn heads_for(arch: &FieldArch) -> Heads {
        let trunk = arch.trunk();
        let density = arch.density_head();
        let color = arch.color_head();
        let a = trunk.param_count();
        let b = a + density.param_count();
        Heads {
            trunk,
            density,
            color,
            split: [a, b],
        }
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Parameter range of the density head (weights then bias).
    pub fn density_head_range(&self) -> std::ops::Range<usize> {
        let h = Self::heads_for(&self.arch);
        h.split[0]..h.split[1]
    }

    /// Parameter range of the color head.
    pub fn color_head_range(&self) -> std::ops::Range<usize> {
        let h = Self::heads_for(&self.arch);
        h.split[1]..self.theta.len()
    }

    /// Evaluates `n` samples given normalized positions and unit directions
    /// (`n × 3` each). Results are read from the tape.
    pub fn forward_batch(&self, positions: &[T], directions: &[T], tape: &mut FieldTape<T>) {
        let n = positions.len() / 3;
        assert_eq!(directions.len(), n * 3, "direction count");
        let heads = Self::heads_for(&self.arch);
        let [a, b] = heads.split;
        let (pw, dw, hw) = (self.arch.pos_width(), self.arch.dir_width(), self.arch.hidden_width);
        tape.batch = n;
        tape.pos_enc.resize(n * pw, T::zero());
        tape.dir_enc.resize(n * dw, T::zero());
        for i in 0..n {
            encode_into(&positions[i * 3..i * 3 + 3], self.arch.pos_freqs, &mut tape.pos_enc[i * pw..(i + 1) * pw]);
            let d = &directions[i * 3..i * 3 + 3];
            if i > 0 && d == &directions[i * 3 - 3..i * 3] {
                // Samples along one ray share their direction.
                tape.dir_enc.copy_within((i - 1) * dw..i * dw, i * dw);
            } else {
                encode_into(d, self.arch.dir_freqs, &mut tape.dir_enc[i * dw..(i + 1) * dw]);
            }
        }
        let h = heads.trunk.forward(&self.theta[..a], &tape.pos_enc, n, &mut tape.trunk);
        tape.color_in.clear();
        tape.color_in.reserve(n * (hw + dw));
        for i in 0..n {
            tape.color_in.extend_from_slice(&h[i * hw..(i + 1) * hw]);
            tape.color_in.extend_from_slice(&tape.dir_enc[i * dw..(i + 1) * dw]);
        }
        let h = tape.trunk.output();
        heads.density.forward(&self.theta[a..b], h, n, &mut tape.density);
        heads.color.forward(&self.theta[b..], &tape.color_in, n, &mut tape.color);
    }

    /// Accumulates `∂L/∂θ` into `grad` for the batch last evaluated on `tape`.
    pub fn backward_batch(&self, tape: &mut FieldTape<T>, d_density_raw: &[T], d_color: &[T], grad: &mut [T]) {
        let n = tape.batch;
        assert_eq!(d_density_raw.len(), n);
        assert_eq!(d_color.len(), n * 3);
        assert_eq!(grad.len(), self.theta.len());
        let heads = Self::heads_for(&self.arch);
        let [a, b] = heads.split;
        let (hw, dw) = (self.arch.hidden_width, self.arch.dir_width());
        let (g_trunk, rest) = grad.split_at_mut(a);
        let (g_density, g_color) = rest.split_at_mut(b - a);

        let mut d_color_in = std::mem::take(&mut tape.d_color_in);
        heads
            .color
            .backward(&self.theta[b..], &mut tape.color, d_color, g_color, Some(&mut d_color_in));
        let mut d_h = std::mem::take(&mut tape.d_h);
        heads
            .density
            .backward(&self.theta[a..b], &mut tape.density, d_density_raw, g_density, Some(&mut d_h));
        for i in 0..n {
            let src = &d_color_in[i * (hw + dw)..i * (hw + dw) + hw];
            for (d, &s) in d_h[i * hw..(i + 1) * hw].iter_mut().zip(src) {
                *d += s;
            }
        }
        heads.trunk.backward(&self.theta[..a], &mut tape.trunk, &d_h, g_trunk, None);
        tape.d_h = d_h;
        tape.d_color_in = d_color_in;
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Real>(&self) -> FieldParams<U> {
        FieldParams {
            arch: self.arch.clone(),
            bounds: self.bounds,
            theta: self.theta.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }
}

/// Evaluates the field at a single normalized position `x` and direction `d`
/// (normalized to unit length here).
pub fn field_forward<T: Real>(params: &FieldParams<T>, x: [f64; 3], d: [f64; 3]) -> FieldOutput {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let pos = x.map(T::of);
    let dir = d.map(|v| T::of(v / norm));
    let mut tape = FieldTape::default();
    params.forward_batch(&pos, &dir, &mut tape);
    let c = tape.color();
    FieldOutput {
        color: [c[0].f64(), c[1].f64(), c[2].f64()],
        density_raw: tape.density_raw()[0].f64(),
    }
}
