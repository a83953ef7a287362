//! Dense feed-forward networks with exact reverse-mode derivatives.
//!
//! Weights are stored row-major (`[out × in]`). The hidden activation is
//! applied after every layer except the last, so a network with layer widths
//! `[a, b, c]` computes `W₂·σ(W₁·x + b₁) + b₂`.
//!
//! The hot path works on a caller-provided *tape*: a flat buffer holding the
//! network input followed by the pre-activations of every hidden layer. That
//! is all a vector-Jacobian product needs, and it lets the oscillator rollout
//! keep one contiguous buffer per time step instead of a tree of small
//! allocations. [`MlpParams::forward`] / [`MlpParams::vjp`] wrap the tape API
//! with owned, shape-checked values.

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Scalar;

/// Hidden-layer nonlinearity.
///
/// At the kink the derivative is fixed to `0` for ReLU and to `alpha` for
/// PReLU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Activation<T> {
    Relu,
    /// `max(0, x) + alpha·min(0, x)`; `alpha` is trainable and shared by all
    /// hidden layers of the network.
    Prelu { alpha: T },
}

impl<T: Scalar> Activation<T> {
    pub const DEFAULT_PRELU_ALPHA: f64 = 0.25;

    pub fn prelu_default() -> Self {
        Activation::Prelu {
            alpha: T::lit(Self::DEFAULT_PRELU_ALPHA),
        }
    }

    #[inline]
    pub fn apply(&self, x: T) -> T {
        match *self {
            Activation::Relu => x.max(T::zero()),
            Activation::Prelu { alpha } => x.max(T::zero()) + alpha * x.min(T::zero()),
        }
    }

    #[inline]
    pub fn derivative(&self, x: T) -> T {
        match *self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Prelu { alpha } => {
                if x > T::zero() {
                    T::one()
                } else {
                    alpha
                }
            }
        }
    }

    pub fn alpha(&self) -> Option<T> {
        match *self {
            Activation::Relu => None,
            Activation::Prelu { alpha } => Some(alpha),
        }
    }

    fn cast<U: Scalar>(&self) -> Activation<U> {
        match *self {
            Activation::Relu => Activation::Relu,
            Activation::Prelu { alpha } => Activation::Prelu {
                alpha: U::lit(alpha.as_f64()),
            },
        }
    }
}

/// One affine layer, `y = W·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub n_in: usize,
    pub n_out: usize,
    /// Row-major `[n_out × n_in]`.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            weight: vec![T::zero(); n_in * n_out],
            bias: vec![T::zero(); n_out],
        }
    }

    /// Builds a layer from nested rows. Every row must have the same length.
    pub fn from_rows(rows: &[Vec<T>], bias: Vec<T>) -> Result<Self> {
        let n_out = rows.len();
        let n_in = rows.first().map_or(0, Vec::len);
        if n_out == 0 || n_in == 0 {
            return Err(Error::invalid("layer must have at least one row and column"));
        }
        if let Some(bad) = rows.iter().position(|r| r.len() != n_in) {
            return Err(Error::dim(format!("weight row {bad}"), n_in, rows[bad].len()));
        }
        if bias.len() != n_out {
            return Err(Error::dim("bias", n_out, bias.len()));
        }
        Ok(Self {
            n_in,
            n_out,
            weight: rows.iter().flatten().copied().collect(),
            bias,
        })
    }

    #[inline]
    pub fn w(&self, row: usize, col: usize) -> T {
        self.weight[row * self.n_in + col]
    }

    /// Largest absolute weight entry, `|W|∞,∞`.
    pub fn max_abs_weight(&self) -> T {
        max_abs(&self.weight)
    }

    pub fn max_abs_bias(&self) -> T {
        max_abs(&self.bias)
    }

    #[inline]
    fn affine(&self, x: &[T], out: &mut [T]) {
        for (o, row) in self.weight.chunks_exact(self.n_in).enumerate() {
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            out[o] = acc;
        }
    }
}

pub(crate) fn max_abs<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Network parameters: an ordered list of dense layers and the hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T> {
    layers: Vec<DenseLayer<T>>,
    activation: Activation<T>,
}

/// Gradient with the same shape as the owning [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
    /// Present iff the network uses PReLU.
    pub alpha: Option<T>,
}

/// Activation record produced by [`MlpParams::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpCache<T> {
    tape: Vec<T>,
}

impl<T> MlpCache<T> {
    /// The stored tape: network input, then hidden pre-activations layer by layer.
    pub fn tape(&self) -> &[T] {
        &self.tape
    }
}

/// Lipschitz constants (L¹ norm) from realized weight magnitudes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzConstants<T> {
    /// `w_out · w_hidden^(h−1) · B^h` with `B` the largest `|W|∞,∞` over all
    /// layers and `w_hidden` the widest hidden layer.
    pub network: T,
    /// `max_k (out_k · |W_k|∞,∞)`: bounds every layer-to-layer map.
    pub per_layer: T,
}

impl<T: Scalar> MlpParams<T> {
    pub fn new(layers: Vec<DenseLayer<T>>, activation: Activation<T>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.weight.len() != layer.n_in * layer.n_out {
                return Err(Error::dim(
                    format!("layer {k} weight"),
                    layer.n_in * layer.n_out,
                    layer.weight.len(),
                ));
            }
            if layer.bias.len() != layer.n_out {
                return Err(Error::dim(format!("layer {k} bias"), layer.n_out, layer.bias.len()));
            }
            if k > 0 && layers[k - 1].n_out != layer.n_in {
                return Err(Error::dim(
                    format!("layer {k} input"),
                    layers[k - 1].n_out,
                    layer.n_in,
                ));
            }
            if !layer.weight.iter().chain(&layer.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite {
                    context: format!("layer {k} parameters"),
                });
            }
        }
        if let Some(a) = activation.alpha() {
            if !a.is_finite() {
                return Err(Error::NonFinite {
                    context: "PReLU slope".into(),
                });
            }
        }
        Ok(Self { layers, activation })
    }

    /// All-zero network with the given widths.
    pub fn zeros(layout: &[usize], activation: Activation<T>) -> Result<Self> {
        validate_layout(layout)?;
        let layers = layout
            .windows(2)
            .map(|w| DenseLayer::zeros(w[0], w[1]))
            .collect();
        Self::new(layers, activation)
    }

    /// Glorot-uniform weights, zero biases, PReLU slope reset to 0.25.
    ///
    /// Deterministic in `(seed, layout, activation kind)`.
    pub fn init(seed: u64, layout: &[usize], activation: Activation<T>) -> Result<Self> {
        validate_layout(layout)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layout
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                let weight = (0..n_in * n_out)
                    .map(|_| T::lit(limit * (2.0 * rng.gen::<f64>() - 1.0)))
                    .collect();
                DenseLayer {
                    n_in,
                    n_out,
                    weight,
                    bias: vec![T::zero(); n_out],
                }
            })
            .collect();
        let activation = match activation {
            Activation::Relu => Activation::Relu,
            Activation::Prelu { .. } => Activation::prelu_default(),
        };
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[DenseLayer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<T>] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation<T> {
        self.activation
    }

    pub fn set_activation(&mut self, activation: Activation<T>) {
        self.activation = activation;
    }

    /// Layer widths `[in, hidden..., out]`.
    pub fn layout(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].n_in)
            .chain(self.layers.iter().map(|l| l.n_out))
            .collect()
    }

    /// Number of weight layers (the network depth `h`).
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out
    }

    /// Widest hidden layer; the output width for a single-layer network.
    pub fn max_hidden_width(&self) -> usize {
        let hidden = &self.layers[..self.layers.len() - 1];
        hidden
            .iter()
            .map(|l| l.n_out)
            .max()
            .unwrap_or_else(|| self.output_dim())
    }

    pub fn max_width(&self) -> usize {
        self.layout().into_iter().max().unwrap_or(0)
    }

    pub fn max_abs_weight(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |m, l| m.max(l.max_abs_weight()))
    }

    pub fn max_abs_bias(&self) -> T {
        self.layers
            .iter()
            .fold(T::zero(), |m, l| m.max(l.max_abs_bias()))
    }

    /// Number of trainable scalars, PReLU slope included.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum::<usize>()
            + usize::from(self.activation.alpha().is_some())
    }

    /// Length of the activation tape written by [`Self::forward_tape`].
    pub fn tape_len(&self) -> usize {
        self.input_dim()
            + self.layers[..self.layers.len() - 1]
                .iter()
                .map(|l| l.n_out)
                .sum::<usize>()
    }

    /// Length of the scratch buffer taken by the `_with` tape functions.
    pub fn scratch_len(&self) -> usize {
        3 * self.max_width()
    }

    /// Forward pass into a caller-provided tape.
    ///
    /// Panics if the slice lengths do not match the network shape.
    pub fn forward_tape(&self, x: &[T], tape: &mut [T], y: &mut [T]) {
        let mut scratch = vec![T::zero(); self.scratch_len()];
        self.forward_tape_with(x, tape, y, &mut scratch);
    }

    /// [`Self::forward_tape`] with caller-owned scratch of at least
    /// [`Self::scratch_len`] elements.
    pub fn forward_tape_with(&self, x: &[T], tape: &mut [T], y: &mut [T], scratch: &mut [T]) {
        assert_eq!(x.len(), self.input_dim(), "network input width");
        assert_eq!(tape.len(), self.tape_len(), "tape length");
        assert_eq!(y.len(), self.output_dim(), "network output width");

        let width = self.max_width();
        let (cur, rest) = scratch.split_at_mut(width);
        let (mut cur, mut next) = (cur, &mut rest[..width]);
        cur[..x.len()].copy_from_slice(x);
        tape[..x.len()].copy_from_slice(x);
        let mut off = x.len();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            if k == last {
                layer.affine(&cur[..layer.n_in], y);
            } else {
                let pre = &mut tape[off..off + layer.n_out];
                layer.affine(&cur[..layer.n_in], pre);
                for (dst, &p) in next[..layer.n_out].iter_mut().zip(pre.iter()) {
                    *dst = self.activation.apply(p);
                }
                off += layer.n_out;
                std::mem::swap(&mut cur, &mut next);
            }
        }
    }

    /// Reverse pass over a tape produced by [`Self::forward_tape`].
    ///
    /// Writes `Jᵀ·y_bar` into `x_bar` and *accumulates* `∂(y_bar·y)/∂θ` into
    /// `grads`.
    pub fn vjp_tape(&self, tape: &[T], y_bar: &[T], x_bar: &mut [T], grads: &mut ParamGrads<T>) {
        let mut scratch = vec![T::zero(); self.scratch_len()];
        self.vjp_tape_with(tape, y_bar, x_bar, grads, &mut scratch);
    }

    /// [`Self::vjp_tape`] with caller-owned scratch.
    pub fn vjp_tape_with(&self, tape: &[T], y_bar: &[T], x_bar: &mut [T], grads: &mut ParamGrads<T>, scratch: &mut [T]) {
        assert_eq!(tape.len(), self.tape_len(), "tape length");
        assert_eq!(y_bar.len(), self.output_dim(), "cotangent width");
        assert_eq!(x_bar.len(), self.input_dim(), "input cotangent width");

        let width = self.max_width();
        let (cur, rest) = scratch.split_at_mut(width);
        let (next, rest) = rest.split_at_mut(width);
        let input = &mut rest[..width];
        cur[..y_bar.len()].copy_from_slice(y_bar);

        // End of the pre-activation block feeding layer k.
        let mut block_end = tape.len();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let pre = &tape[block_end - n_in..block_end];
            if k == 0 {
                input[..n_in].copy_from_slice(pre);
            } else {
                for (dst, &p) in input[..n_in].iter_mut().zip(pre) {
                    *dst = self.activation.apply(p);
                }
            }

            let gw = &mut grads.weights[k];
            let gb = &mut grads.biases[k];
            next[..n_in].iter_mut().for_each(|v| *v = T::zero());
            for o in 0..n_out {
                let c = cur[o];
                if c == T::zero() {
                    continue;
                }
                gb[o] += c;
                let row = &layer.weight[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += c * input[i];
                    next[i] += row[i] * c;
                }
            }

            if k == 0 {
                x_bar.copy_from_slice(&next[..n_in]);
            } else {
                let mut alpha_bar = T::zero();
                for i in 0..n_in {
                    let a_bar = next[i];
                    if pre[i] <= T::zero() {
                        alpha_bar += a_bar * pre[i];
                    }
                    cur[i] = a_bar * self.activation.derivative(pre[i]);
                }
                if let Some(g) = grads.alpha.as_mut() {
                    *g += alpha_bar;
                }
                block_end -= n_in;
            }
        }
    }

    /// Shape-checked forward pass returning the output and its activation record.
    pub fn forward(&self, x: &[T]) -> Result<(Vec<T>, MlpCache<T>)> {
        if x.len() != self.input_dim() {
            return Err(Error::dim("layer 0 input", self.input_dim(), x.len()));
        }
        let mut tape = vec![T::zero(); self.tape_len()];
        let mut y = vec![T::zero(); self.output_dim()];
        self.forward_tape(x, &mut tape, &mut y);
        Ok((y, MlpCache { tape }))
    }

    /// Evaluates the network without keeping an activation record.
    pub fn eval(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Vector-Jacobian product: returns `(Jᵀ·y_bar, ∂(y_bar·y)/∂θ)`.
    pub fn vjp(&self, cache: &MlpCache<T>, y_bar: &[T]) -> Result<(Vec<T>, ParamGrads<T>)> {
        if cache.tape.len() != self.tape_len() {
            return Err(Error::dim("activation record", self.tape_len(), cache.tape.len()));
        }
        let last = self.layers.len() - 1;
        if y_bar.len() != self.output_dim() {
            return Err(Error::dim(format!("layer {last} cotangent"), self.output_dim(), y_bar.len()));
        }
        if !y_bar.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "output cotangent".into(),
            });
        }
        let mut grads = ParamGrads::zeros_like(self);
        let mut x_bar = vec![T::zero(); self.input_dim()];
        self.vjp_tape(&cache.tape, y_bar, &mut x_bar, &mut grads);
        Ok((x_bar, grads))
    }

    /// `Σ_k (|W_k|₁,₁ + |b_k|₁)`; the PReLU slope is not included.
    pub fn l1_norm(&self) -> T {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(&l.bias))
            .fold(T::zero(), |acc, v| acc + v.abs())
    }

    /// Subgradient of [`Self::l1_norm`]: `sign(θ)`, zero at exactly-zero entries.
    pub fn l1_subgradient(&self) -> ParamGrads<T> {
        let sign = |v: &T| {
            if *v > T::zero() {
                T::one()
            } else if *v < T::zero() {
                -T::one()
            } else {
                T::zero()
            }
        };
        ParamGrads {
            weights: self.layers.iter().map(|l| l.weight.iter().map(sign).collect()).collect(),
            biases: self.layers.iter().map(|l| l.bias.iter().map(sign).collect()).collect(),
            alpha: self.activation.alpha().map(|_| T::zero()),
        }
    }

    /// Lipschitz constants from this network's own weight magnitudes.
    pub fn lipschitz(&self) -> LipschitzConstants<T> {
        let b = self.max_abs_weight();
        let depth = self.depth();
        let w_out = T::from_usize_lossy(self.output_dim());
        let w_hidden = T::from_usize_lossy(self.max_hidden_width());
        let network = w_out * w_hidden.powi(depth as i32 - 1) * b.powi(depth as i32);
        let per_layer = self
            .layers
            .iter()
            .map(|l| T::from_usize_lossy(l.n_out) * l.max_abs_weight())
            .fold(T::zero(), T::max);
        LipschitzConstants { network, per_layer }
    }

    /// Mutable views over every parameter block, in the same order as
    /// [`ParamGrads::blocks`]: per layer weight then bias, then the PReLU slope.
    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &mut self.layers {
            out.push(&mut l.weight[..]);
            out.push(&mut l.bias[..]);
        }
        if let Activation::Prelu { alpha } = &mut self.activation {
            out.push(std::slice::from_mut(alpha));
        }
        out
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(2 * self.layers.len() + 1);
        for l in &self.layers {
            out.push(&l.weight[..]);
            out.push(&l.bias[..]);
        }
        if let Activation::Prelu { alpha } = &self.activation {
            out.push(std::slice::from_ref(alpha));
        }
        out
    }

    /// Converts to another scalar type.
    pub fn cast<U: Scalar>(&self) -> MlpParams<U> {
        let conv = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect::<Vec<U>>();
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseLayer {
                    n_in: l.n_in,
                    n_out: l.n_out,
                    weight: conv(&l.weight),
                    bias: conv(&l.bias),
                })
                .collect(),
            activation: self.activation.cast(),
        }
    }

    /// Largest entry-wise difference to `other` over weights and biases
    /// (`max_k max(|ΔW_k|∞,∞, |Δb_k|∞)`).
    pub fn max_param_difference(&self, other: &Self) -> Result<T> {
        if self.layout() != other.layout() {
            return Err(Error::invalid(format!(
                "layout mismatch: {:?} vs {:?}",
                self.layout(),
                other.layout()
            )));
        }
        let diff = self
            .layers
            .iter()
            .zip(&other.layers)
            .flat_map(|(a, b)| {
                a.weight
                    .iter()
                    .zip(&b.weight)
                    .chain(a.bias.iter().zip(&b.bias))
            })
            .fold(T::zero(), |m, (x, y)| m.max((*x - *y).abs()));
        Ok(diff)
    }
}

fn validate_layout(layout: &[usize]) -> Result<()> {
    if layout.len() < 2 {
        return Err(Error::invalid(format!(
            "layout needs at least input and output widths, got {layout:?}"
        )));
    }
    if layout.contains(&0) {
        return Err(Error::invalid(format!("zero width in layout {layout:?}")));
    }
    Ok(())
}

impl<T: Scalar> ParamGrads<T> {
    pub fn zeros_like(params: &MlpParams<T>) -> Self {
        Self {
            weights: params.layers.iter().map(|l| vec![T::zero(); l.weight.len()]).collect(),
            biases: params.layers.iter().map(|l| vec![T::zero(); l.bias.len()]).collect(),
            alpha: params.activation.alpha().map(|_| T::zero()),
        }
    }

    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(2 * self.weights.len() + 1);
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(&w[..]);
            out.push(&b[..]);
        }
        if let Some(a) = &self.alpha {
            out.push(std::slice::from_ref(a));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(2 * self.weights.len() + 1);
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(&mut w[..]);
            out.push(&mut b[..]);
        }
        if let Some(a) = &mut self.alpha {
            out.push(std::slice::from_mut(a));
        }
        out
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b))
            .chain(self.alpha.iter())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.weights.len() == other.weights.len()
            && self.weights.iter().zip(&other.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.len() == b.len())
            && self.alpha.is_some() == other.alpha.is_some()
    }

    pub fn matches(&self, params: &MlpParams<T>) -> bool {
        self.same_shape(&ParamGrads::zeros_like(params))
    }

    /// Global L² norm over every entry.
    pub fn norm_l2(&self) -> T {
        self.iter().fold(T::zero(), |acc, g| acc + *g * *g).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn scale(&mut self, c: T) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|g| *g *= c);
        }
    }

    /// `self += c·other`.
    pub fn add_scaled(&mut self, other: &Self, c: T) {
        debug_assert!(self.same_shape(other));
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += c * *s;
            }
        }
    }
}

// --- checkpoint format -------------------------------------------------------

const MLP_MAGIC: &[u8; 4] = b"NOMP";
pub const MLP_FORMAT_VERSION: u32 = 1;

/// JSON header of a network checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub layout: Vec<usize>,
    pub activation: Activation<f64>,
    /// Seeds this network descends from (initialization first, then training).
    #[serde(default)]
    pub seed_lineage: Vec<u64>,
}

impl<T: Scalar> MlpParams<T> {
    /// Writes `"NOMP"`, the header length (u64 LE), the JSON header, then every
    /// weight (row-major) and bias as little-endian f64, layer by layer.
    pub fn write_checkpoint<W: Write>(&self, mut w: W, seed_lineage: &[u64]) -> Result<()> {
        let header = CheckpointHeader {
            format_version: MLP_FORMAT_VERSION,
            layout: self.layout(),
            activation: self.activation.cast(),
            seed_lineage: seed_lineage.to_vec(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MLP_MAGIC)?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for layer in &self.layers {
            for v in layer.weight.iter().chain(&layer.bias) {
                w.write_all(&v.as_f64().to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(Self, CheckpointHeader)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MLP_MAGIC {
            return Err(Error::Format("not a network checkpoint (bad magic)".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len))
            .map_err(|_| Error::Format("header length overflow".into()))?;
        if len > 1 << 24 {
            return Err(Error::Format(format!("implausible header length {len}")));
        }
        let mut json = vec![0u8; len];
        r.read_exact(&mut json)?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        if header.format_version != MLP_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported network format version {}",
                header.format_version
            )));
        }
        validate_layout(&header.layout)?;
        let mut layers = Vec::with_capacity(header.layout.len() - 1);
        for w in header.layout.windows(2) {
            let mut layer = DenseLayer::zeros(w[0], w[1]);
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = T::lit(read_f64(&mut r)?);
            }
            layers.push(layer);
        }
        let params = Self::new(layers, header.activation.cast())?;
        Ok((params, header))
    }
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net(layers: Vec<(Vec<Vec<f64>>, Vec<f64>)>, act: Activation<f64>) -> MlpParams<f64> {
        let layers = layers
            .into_iter()
            .map(|(w, b)| DenseLayer::from_rows(&w, b).unwrap())
            .collect();
        MlpParams::new(layers, act).unwrap()
    }

    #[test]
    fn affine_identity() {
        let p = net(vec![(vec![vec![2.0]], vec![1.0])], Activation::Relu);
        let (y, cache) = p.forward(&[3.0]).unwrap();
        assert_eq!(y, vec![7.0]);
        let (x_bar, g) = p.vjp(&cache, &[1.0]).unwrap();
        assert_eq!(x_bar, vec![2.0]);
        assert_eq!(g.weights[0], vec![3.0]);
        assert_eq!(g.biases[0], vec![1.0]);
    }

    #[test]
    fn relu_pair_computes_abs() {
        let p = net(
            vec![
                (vec![vec![1.0], vec![-1.0]], vec![0.0, 0.0]),
                (vec![vec![1.0, 1.0]], vec![0.0]),
            ],
            Activation::Relu,
        );
        assert_eq!(p.eval(&[-2.0]).unwrap(), vec![2.0]);
        assert_eq!(p.eval(&[5.0]).unwrap(), vec![5.0]);
    }

    #[test]
    fn prelu_negative_branch() {
        let p = net(
            vec![(vec![vec![1.0]], vec![0.0]), (vec![vec![1.0]], vec![0.0])],
            Activation::Prelu { alpha: 0.25 },
        );
        let (y, cache) = p.forward(&[-2.0]).unwrap();
        assert_eq!(cache.tape(), &[-2.0, -2.0]);
        assert_eq!(y, vec![-0.5]);
        let (_, g) = p.vjp(&cache, &[1.0]).unwrap();
        // d/dα of α·min(0, −2) = −2.
        assert_eq!(g.alpha, Some(-2.0));
    }

    #[test]
    fn kink_subgradient_convention() {
        let relu = Activation::<f64>::Relu;
        let prelu = Activation::Prelu { alpha: 0.3 };
        assert_eq!(relu.derivative(0.0), 0.0);
        assert_eq!(prelu.derivative(0.0), 0.3);
        assert_eq!(prelu.apply(-1.0), -0.3);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let p = MlpParams::<f64>::init(5, &[3, 6, 2], Activation::prelu_default()).unwrap();
        let (_, cache) = p.forward(&[0.3, -1.0, 2.0]).unwrap();
        let (x_bar, g) = p.vjp(&cache, &[0.0, 0.0]).unwrap();
        assert!(x_bar.iter().all(|v| *v == 0.0));
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn dimension_errors_name_the_layer() {
        let p = MlpParams::<f64>::init(1, &[3, 4, 2], Activation::Relu).unwrap();
        let err = p.forward(&[1.0, 2.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        let (_, cache) = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        let err = p.vjp(&cache, &[1.0]).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
        assert!(p.vjp(&cache, &[f64::NAN, 0.0]).is_err());

        let bad = vec![DenseLayer::<f64>::zeros(3, 4), DenseLayer::zeros(5, 2)];
        let err = MlpParams::new(bad, Activation::Relu).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn l1_norm_examples() {
        let p = net(vec![(vec![vec![1.0, -2.0]], vec![3.0])], Activation::Relu);
        assert_eq!(p.l1_norm(), 6.0);
        let z = MlpParams::<f64>::zeros(&[4, 3, 2], Activation::Relu).unwrap();
        assert_eq!(z.l1_norm(), 0.0);
        let p = net(
            vec![(vec![vec![0.5]], vec![-0.5]), (vec![vec![2.0]], vec![0.0])],
            Activation::Prelu { alpha: 7.0 },
        );
        assert_eq!(p.l1_norm(), 3.0);
        let s = p.l1_subgradient();
        assert_eq!(s.weights, vec![vec![1.0], vec![1.0]]);
        assert_eq!(s.biases, vec![vec![-1.0], vec![0.0]]);
        assert_eq!(s.alpha, Some(0.0));
    }

    #[test]
    fn lipschitz_substitution() {
        // in-40-10 with max |W| exactly 0.5 → 10·40·0.25.
        let mut p = MlpParams::<f64>::zeros(&[21, 40, 10], Activation::Relu).unwrap();
        p.layers_mut()[0].weight[7] = -0.5;
        p.layers_mut()[1].weight[3] = 0.25;
        assert_eq!(p.lipschitz().network, 100.0);
        assert_eq!(p.lipschitz().per_layer, 40.0 * 0.5);
        let z = MlpParams::<f64>::zeros(&[3, 5, 2], Activation::Relu).unwrap();
        assert_eq!(z.lipschitz().network, 0.0);
    }

    #[test]
    fn init_contract() {
        let a = MlpParams::<f64>::init(42, &[3, 5, 2], Activation::Relu).unwrap();
        let b = MlpParams::<f64>::init(42, &[3, 5, 2], Activation::Relu).unwrap();
        let c = MlpParams::<f64>::init(43, &[3, 5, 2], Activation::Relu).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let shapes: Vec<_> = a.layers().iter().map(|l| (l.n_out, l.n_in, l.bias.len())).collect();
        assert_eq!(shapes, vec![(5, 3, 5), (2, 5, 2)]);
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(a.layers()[0].weight.iter().all(|w| w.abs() <= limit));
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
        let p = MlpParams::<f64>::init(1, &[2, 2], Activation::Prelu { alpha: 0.9 }).unwrap();
        assert_eq!(p.activation().alpha(), Some(0.25));
        assert!(MlpParams::<f64>::init(1, &[3], Activation::Relu).is_err());
        assert!(MlpParams::<f64>::init(1, &[], Activation::Relu).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let p = MlpParams::<f64>::init(9, &[4, 7, 3, 2], Activation::Prelu { alpha: 0.0 }).unwrap();
        let mut buf = Vec::new();
        p.write_checkpoint(&mut buf, &[9, 11]).unwrap();
        let (q, header) = MlpParams::<f64>::read_checkpoint(&buf[..]).unwrap();
        assert_eq!(p, q);
        assert_eq!(header.seed_lineage, vec![9, 11]);
        assert_eq!(header.layout, vec![4, 7, 3, 2]);
        let mut corrupt = buf.clone();
        corrupt[0] = b'X';
        assert!(MlpParams::<f64>::read_checkpoint(&corrupt[..]).is_err());
        assert!(MlpParams::<f64>::read_checkpoint(&buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let p64 = MlpParams::<f64>::init(3, &[2, 8, 1], Activation::Relu).unwrap();
        let p32: MlpParams<f32> = p64.cast();
        let y64 = p64.eval(&[0.5, -0.25]).unwrap()[0];
        let y32 = p32.eval(&[0.5, -0.25]).unwrap()[0];
        assert!((y64 - f64::from(y32)).abs() < 1e-6);
    }
}
