//! Dense multilayer perceptrons with batched forward passes and exact
//! reverse-mode gradients, generic over `f32`/`f64`.
//!
//! Activations are row-major `batch × features`. Each layer stores its weight
//! matrix (`out × in`, row-major) followed by its bias vector inside a flat
//! parameter slice.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Floating-point scalar usable by the networks and renderer.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + Sum + AddAssign + MulAssign + 'static
{
    /// Raw matrixmultiply-style kernel: `C = alpha * A * B + beta * C` with
    /// explicit row/column strides.
    ///
    /// # Safety
    /// Strides and sizes must describe memory inside the given buffers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    #[inline]
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable constant")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite conversion")
    }
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `C (m×n) = op(A) · op(B) + beta · C` on contiguous row-major buffers.
/// With `trans_a`, `a` holds the `k×m` matrix; with `trans_b`, `b` holds `n×k`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    trans_a: bool,
    b: &[T],
    trans_b: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm buffer sizes");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: sizes asserted above; strides describe dense row-major storage.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(T::zero()),
            Activation::Softplus => z.max(T::zero()) + (-z.abs()).exp().ln_1p(),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative at pre-activation `z` with output `a`.
    #[inline]
    pub fn derivative<T: Real>(self, z: T, a: T) -> T {
        match self {
            Activation::Identity => T::one(),
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => sigmoid(z),
            Activation::Sigmoid => a * (T::one() - a),
        }
    }
}

#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// `out[i] = act(z[i])`.
fn apply_into<T: Real>(act: Activation, z: &[T], out: &mut Vec<T>) {
    match act {
        Activation::Identity => out.extend_from_slice(z),
        Activation::Relu => out.extend(z.iter().map(|&v| v.max(T::zero()))),
        _ => out.extend(z.iter().map(|&v| act.apply(v))),
    }
}

/// `out[i] = d[i] · act'(z[i])` where `a[i] = act(z[i])`.
fn chain_into<T: Real>(act: Activation, d: &[T], z: &[T], a: &[T], out: &mut Vec<T>) {
    match act {
        Activation::Identity => out.extend_from_slice(d),
        Activation::Relu => out.extend(
            d.iter()
                .zip(z)
                .map(|(&g, &zv)| if zv > T::zero() { g } else { T::zero() }),
        ),
        _ => out.extend(d.iter().zip(z).zip(a).map(|((&g, &zv), &av)| g * act.derivative(zv, av))),
    }
}

/// Shape of a fully connected network.
///
/// `widths[0]` is the input width and `widths.last()` the output width. When
/// `skip` is `Some(l)`, layer `l` receives `[previous activations, network input]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mlp {
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
    pub skip: Option<usize>,
}

/// Intermediate values kept by [`Mlp::forward`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    batch: usize,
    /// Input to each layer (`batch × in_l`).
    inputs: Vec<Vec<T>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<T>>,
    /// Activations of the final layer.
    out: Vec<T>,
    /// Scratch for the backward pass.
    delta: Vec<T>,
    delta_prev: Vec<T>,
}

impl<T: Real> Tape<T> {
    pub fn output(&self) -> &[T] {
        &self.out
    }
}

impl Mlp {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation, skip: Option<usize>) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        if let Some(s) = skip {
            assert!(s > 0 && s < widths.len() - 1, "skip layer index out of range");
        }
        Self {
            widths,
            hidden,
            output,
            skip,
        }
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("non-empty widths")
    }

    fn fan_in(&self, l: usize) -> usize {
        self.widths[l] + if self.skip == Some(l) { self.widths[0] } else { 0 }
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.layers() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Offset of layer `l`'s weights inside the parameter slice.
    fn offset(&self, l: usize) -> usize {
        (0..l).map(|i| (self.fan_in(i) + 1) * self.widths[i + 1]).sum()
    }

    pub fn param_count(&self) -> usize {
        self.offset(self.layers())
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init<T: Real>(&self, params: &mut [T], rng: &mut impl Rng) {
        assert_eq!(params.len(), self.param_count());
        for l in 0..self.layers() {
            let (fin, fout) = (self.fan_in(l), self.widths[l + 1]);
            let a = (6.0 / (fin + fout) as f64).sqrt();
            let off = self.offset(l);
            for w in &mut params[off..off + fin * fout] {
                *w = T::of(rng.gen_range(-a..=a));
            }
            for b in &mut params[off + fin * fout..off + (fin + 1) * fout] {
                *b = T::zero();
            }
        }
    }

    /// Evaluates `batch` rows of `input`; the result is `tape.output()`.
    pub fn forward<'t, T: Real>(&self, params: &[T], input: &[T], batch: usize, tape: &'t mut Tape<T>) -> &'t [T] {
        debug_assert_eq!(params.len(), self.param_count());
        assert_eq!(input.len(), batch * self.widths[0], "mlp input size");
        let layers = self.layers();
        tape.batch = batch;
        tape.inputs.resize_with(layers, Vec::new);
        tape.pre.resize_with(layers, Vec::new);
        for l in 0..layers {
            let (fin, fout) = (self.fan_in(l), self.widths[l + 1]);
            // Assemble this layer's input.
            let mut layer_in = std::mem::take(&mut tape.inputs[l]);
            layer_in.clear();
            if l == 0 {
                layer_in.extend_from_slice(input);
            } else {
                let prev_w = self.widths[l];
                let prev_act = self.activation(l - 1);
                let prev_pre = &tape.pre[l - 1];
                let w0 = self.widths[0];
                layer_in.reserve(batch * fin);
                if self.skip == Some(l) {
                    for r in 0..batch {
                        apply_into(prev_act, &prev_pre[r * prev_w..(r + 1) * prev_w], &mut layer_in);
                        layer_in.extend_from_slice(&input[r * w0..(r + 1) * w0]);
                    }
                } else {
                    apply_into(prev_act, prev_pre, &mut layer_in);
                }
            }
            let off = self.offset(l);
            let w = &params[off..off + fin * fout];
            let b = &params[off + fin * fout..off + (fin + 1) * fout];
            let z = &mut tape.pre[l];
            z.clear();
            z.reserve(batch * fout);
            for _ in 0..batch {
                z.extend_from_slice(b);
            }
            gemm(batch, fin, fout, &layer_in, false, w, true, T::one(), z);
            tape.inputs[l] = layer_in;
        }
        let act = self.activation(layers - 1);
        let z = &tape.pre[layers - 1];
        tape.out.clear();
        apply_into(act, z, &mut tape.out);
        &tape.out
    }

    /// Accumulates `∂L/∂params` into `grad` given `d_out = ∂L/∂output` for the
    /// batch recorded in `tape`. Writes `∂L/∂input` into `d_input` if given.
    pub fn backward<T: Real>(
        &self,
        params: &[T],
        tape: &mut Tape<T>,
        d_out: &[T],
        grad: &mut [T],
        d_input: Option<&mut Vec<T>>,
    ) {
        let batch = tape.batch;
        let layers = self.layers();
        assert_eq!(d_out.len(), batch * self.output_width(), "mlp output gradient size");
        assert_eq!(grad.len(), self.param_count());
        let w0 = self.widths[0];
        let mut d_input = d_input;
        if let Some(di) = d_input.as_deref_mut() {
            di.clear();
            di.resize(batch * w0, T::zero());
        }

        // delta = dL/dz for the current layer.
        let mut delta = std::mem::take(&mut tape.delta);
        let mut delta_prev = std::mem::take(&mut tape.delta_prev);
        {
            let act = self.activation(layers - 1);
            let z = &tape.pre[layers - 1];
            delta.clear();
            chain_into(act, d_out, z, &tape.out, &mut delta);
        }
        for l in (0..layers).rev() {
            let (fin, fout) = (self.fan_in(l), self.widths[l + 1]);
            let off = self.offset(l);
            let layer_in = &tape.inputs[l];
            {
                let (gw, gb) = grad[off..off + (fin + 1) * fout].split_at_mut(fin * fout);
                // dW += deltaᵀ · input
                gemm(fout, batch, fin, &delta, true, layer_in, false, T::one(), gw);
                for row in delta.chunks_exact(fout) {
                    for (g, &d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
            }
            if l == 0 && d_input.is_none() {
                break;
            }
            // d(layer input) = delta · W
            let w = &params[off..off + fin * fout];
            // Fully overwritten: beta is zero.
            delta_prev.resize(batch * fin, T::zero());
            gemm(batch, fout, fin, &delta, false, w, false, T::zero(), &mut delta_prev);
            let concat = self.skip == Some(l);
            if l == 0 {
                if let Some(di) = d_input.as_deref_mut() {
                    for (d, &v) in di.iter_mut().zip(&delta_prev) {
                        *d += v;
                    }
                }
                break;
            }
            let prev_w = self.widths[l];
            if concat {
                if let Some(di) = d_input.as_deref_mut() {
                    for r in 0..batch {
                        let src = &delta_prev[r * fin + prev_w..(r + 1) * fin];
                        for (d, &v) in di[r * w0..(r + 1) * w0].iter_mut().zip(src) {
                            *d += v;
                        }
                    }
                }
            }
            // Chain through the previous layer's activation.
            let act = self.activation(l - 1);
            let z_prev = &tape.pre[l - 1];
            let a_prev = layer_in;
            delta.clear();
            delta.reserve(batch * prev_w);
            if concat {
                for r in 0..batch {
                    chain_into(
                        act,
                        &delta_prev[r * fin..r * fin + prev_w],
                        &z_prev[r * prev_w..(r + 1) * prev_w],
                        &a_prev[r * fin..r * fin + prev_w],
                        &mut delta,
                    );
                }
            } else {
                chain_into(act, &delta_prev, z_prev, a_prev, &mut delta);
            }
        }
        tape.delta = delta;
        tape.delta_prev = delta_prev;
    }
}
