//! Minimal dense feedforward networks with exact reverse-mode gradients.
//!
//! Everything is `f64` and deterministic. A network's weights and biases live
//! in one flat [`ParamVector`]; the same flat view is the unit of proximal
//! penalties, gradient steps, and target averaging, so the optimizer never
//! needs to know about layers.
//!
//! Flat layout, per layer: weights row-major `[out][in]`, then biases `[out]`.

use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};

/// Flat view of all weights and biases of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    /// Wraps an existing buffer. Rejects non-finite entries.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Value(format!("non-finite parameter entry {bad}")));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Serializes as a 32-bit little-endian length followed by the entries as
    /// little-endian 64-bit floats. This is the checkpoint wire format.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let len = u32::try_from(self.values.len())
            .map_err(|_| Error::Value("parameter vector too long for checkpoint format".into()))?;
        w.write_all(&len.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads back the format produced by [`ParamVector::write_to`].
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut len_bytes = [0u8; 4];
        r.read_exact(&mut len_bytes)?;
        let len = u32::from_le_bytes(len_bytes) as usize;
        let mut values = Vec::with_capacity(len);
        let mut buf = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut buf)?;
            values.push(f64::from_le_bytes(buf));
        }
        Self::from_vec(values)
    }
}

/// `τ·source + (1−τ)·target`, elementwise. The exponential averaging that
/// drags target parameters toward their fast counterparts.
pub fn polyak_update(target: &ParamVector, source: &ParamVector, tau: f64) -> Result<ParamVector> {
    if target.len() != source.len() {
        return Err(Error::Shape(format!(
            "polyak_update length mismatch: target {} vs source {}",
            target.len(),
            source.len()
        )));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::Argument(format!("tau must be in (0,1], got {tau}")));
    }
    let values = target
        .as_slice()
        .iter()
        .zip(source.as_slice())
        .map(|(t, s)| tau * s + (1.0 - tau) * t)
        .collect();
    Ok(ParamVector { values })
}

/// `dst + scale·src`, elementwise. The gradient-step primitive.
pub fn param_axpy(dst: &ParamVector, scale: f64, src: &ParamVector) -> Result<ParamVector> {
    if dst.len() != src.len() {
        return Err(Error::Shape(format!(
            "param_axpy length mismatch: dst {} vs src {}",
            dst.len(),
            src.len()
        )));
    }
    let values = dst
        .as_slice()
        .iter()
        .zip(src.as_slice())
        .map(|(d, s)| d + scale * s)
        .collect();
    Ok(ParamVector { values })
}

/// Activation applied to the final layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OutputActivation {
    /// Raw linear output (critic heads).
    Identity,
    /// `bound·tanh(z)`: saturating output confined to `[-bound, bound]`
    /// (policy heads, scaled by the environment action bound).
    ScaledTanh(f64),
}

/// Exact reverse-mode derivatives of `upstreamᵀ·forward(net, input)`.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub param_grad: ParamVector,
    pub input_grad: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    weights: usize,
    biases: usize,
}

/// Dense feedforward network: ReLU hidden layers, configurable output head,
/// parameters stored flat.
#[derive(Debug, Clone)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    output_activation: OutputActivation,
    params: ParamVector,
    offsets: Vec<LayerOffsets>,
}

/// Per-network activation storage reused across forward/backward passes.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `acts[0]` is the input, `acts[l]` the post-activation output of layer l.
    acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace always has at least the input row")
    }
}

/// Scratch buffers for backpropagation, reused across calls in hot loops.
#[derive(Debug, Clone, Default)]
pub struct BackpropScratch {
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Mlp {
    /// Builds a network with weights drawn uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` and zero biases, deterministically
    /// from `seed`. Draw order is layer by layer, weights row-major.
    pub fn init(layer_sizes: &[usize], output_activation: OutputActivation, seed: u64) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        if let OutputActivation::ScaledTanh(bound) = output_activation {
            if !(bound > 0.0 && bound.is_finite()) {
                return Err(Error::Argument(format!("tanh output bound must be positive, got {bound}")));
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(Self::param_count_for(layer_sizes));
        let mut offsets = Vec::with_capacity(layer_sizes.len() - 1);
        for l in 0..layer_sizes.len() - 1 {
            let fan_in = layer_sizes[l];
            let fan_out = layer_sizes[l + 1];
            let scale = 1.0 / (fan_in as f64).sqrt();
            let w_off = values.len();
            for _ in 0..fan_in * fan_out {
                values.push(rng.random_range(-scale..scale));
            }
            let b_off = values.len();
            values.extend(std::iter::repeat(0.0).take(fan_out));
            offsets.push(LayerOffsets { weights: w_off, biases: b_off });
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            output_activation,
            params: ParamVector { values },
            offsets,
        })
    }

    fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 {
            return Err(Error::Shape(format!(
                "need at least input and output layer sizes, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Shape(format!("layer sizes must be positive, got {layer_sizes:?}")));
        }
        Ok(())
    }

    /// Total parameter count implied by `layer_sizes`.
    pub fn param_count_for(layer_sizes: &[usize]) -> usize {
        layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output_activation
    }

    pub fn in_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    /// Replaces the parameters; the new vector must have the same length.
    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "set_params length mismatch: {} vs {}",
                params.len(),
                self.params.len()
            )));
        }
        self.params = params;
        Ok(())
    }

    /// A structural clone carrying `params` instead of this network's own.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        let mut net = self.clone();
        net.set_params(params)?;
        Ok(net)
    }

    pub fn make_trace(&self) -> Trace {
        Trace {
            acts: self.layer_sizes.iter().map(|&s| vec![0.0; s]).collect(),
        }
    }

    /// Pure forward pass.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.make_trace();
        self.forward_traced(input, &mut trace)?;
        Ok(trace.output().to_vec())
    }

    /// Forward pass that records every layer's post-activation in `trace`
    /// (which must come from [`Mlp::make_trace`] on a same-shaped network).
    pub fn forward_traced(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape(format!(
                "forward input dim {} but network expects {}",
                input.len(),
                self.in_dim()
            )));
        }
        trace.acts[0].copy_from_slice(input);
        let last = self.layer_sizes.len() - 2;
        for l in 0..=last {
            let in_dim = self.layer_sizes[l];
            let out_dim = self.layer_sizes[l + 1];
            let off = self.offsets[l];
            let p = self.params.as_slice();
            let (src, dst) = split_pair(&mut trace.acts, l);
            for o in 0..out_dim {
                let row = &p[off.weights + o * in_dim..off.weights + (o + 1) * in_dim];
                let z = p[off.biases + o] + dot(row, src);
                dst[o] = if l < last {
                    z.max(0.0)
                } else {
                    match self.output_activation {
                        OutputActivation::Identity => z,
                        OutputActivation::ScaledTanh(bound) => bound * z.tanh(),
                    }
                };
            }
        }
        Ok(())
    }

    /// Exact reverse-mode gradients of `upstream_gradᵀ·forward(self, input)`
    /// with respect to the parameters and the input. Fresh buffers per call.
    pub fn backward(&self, input: &[f64], upstream_grad: &[f64]) -> Result<GradientBundle> {
        if upstream_grad.len() != self.out_dim() {
            return Err(Error::Shape(format!(
                "upstream grad dim {} but network outputs {}",
                upstream_grad.len(),
                self.out_dim()
            )));
        }
        let mut trace = self.make_trace();
        self.forward_traced(input, &mut trace)?;
        let mut param_grad = ParamVector::zeros(self.params.len());
        let mut input_grad = vec![0.0; self.in_dim()];
        let mut scratch = BackpropScratch::default();
        self.backward_traced(
            &trace,
            upstream_grad,
            1.0,
            Some(&mut param_grad),
            Some(&mut input_grad),
            &mut scratch,
        );
        Ok(GradientBundle { param_grad, input_grad })
    }

    /// Backpropagates `scale·upstreamᵀ·output` through a recorded forward
    /// pass. Parameter gradients are *added* into `param_grad_acc`; the input
    /// gradient is *overwritten* into `input_grad`. Either output can be
    /// skipped, which also skips its share of the work.
    ///
    /// ReLU takes derivative 0 at exactly 0.
    pub fn backward_traced(
        &self,
        trace: &Trace,
        upstream: &[f64],
        scale: f64,
        mut param_grad_acc: Option<&mut ParamVector>,
        input_grad: Option<&mut [f64]>,
        scratch: &mut BackpropScratch,
    ) {
        debug_assert_eq!(upstream.len(), self.out_dim());
        let last = self.layer_sizes.len() - 2;
        let out_dim = self.out_dim();

        scratch.delta.clear();
        scratch.delta.reserve(out_dim);
        let output = trace.output();
        for o in 0..out_dim {
            let head = match self.output_activation {
                OutputActivation::Identity => 1.0,
                OutputActivation::ScaledTanh(bound) => {
                    let t = output[o] / bound;
                    bound * (1.0 - t * t)
                }
            };
            scratch.delta.push(scale * upstream[o] * head);
        }

        let p = self.params.as_slice();
        for l in (0..=last).rev() {
            let in_dim = self.layer_sizes[l];
            let layer_out = self.layer_sizes[l + 1];
            let off = self.offsets[l];
            let x = &trace.acts[l];

            if let Some(acc) = param_grad_acc.as_deref_mut() {
                let g = acc.as_mut_slice();
                for o in 0..layer_out {
                    let d = scratch.delta[o];
                    if d != 0.0 {
                        axpy(&mut g[off.weights + o * in_dim..off.weights + (o + 1) * in_dim], d, x);
                    }
                    g[off.biases + o] += d;
                }
            }

            let need_prev = l > 0 || input_grad.is_some();
            if !need_prev {
                break;
            }
            scratch.delta_prev.clear();
            scratch.delta_prev.resize(in_dim, 0.0);
            for o in 0..layer_out {
                let d = scratch.delta[o];
                if d != 0.0 {
                    let row = &p[off.weights + o * in_dim..off.weights + (o + 1) * in_dim];
                    axpy(&mut scratch.delta_prev, d, row);
                }
            }
            if l > 0 {
                // Through the ReLU of the previous layer.
                for (dp, &a) in scratch.delta_prev.iter_mut().zip(x.iter()) {
                    if a <= 0.0 {
                        *dp = 0.0;
                    }
                }
            }
            std::mem::swap(&mut scratch.delta, &mut scratch.delta_prev);
        }

        if let Some(out) = input_grad {
            out.copy_from_slice(&scratch.delta);
        }
    }

    /// Compares [`Mlp::backward`] against central finite differences of a
    /// fixed scalar projection of the output and returns the worst relative
    /// error over all parameters and input coordinates.
    ///
    /// Relative error of a pair (a, n) is `|a−n| / max(|a|, |n|, 1e-6)`; if
    /// both magnitudes are below 1e-12 the error is defined as 0.
    pub fn finite_difference_check(&self, input: &[f64], h: f64) -> Result<f64> {
        if !(h > 0.0) {
            return Err(Error::Argument(format!("finite difference step must be positive, got {h}")));
        }
        // Fixed projection weights 1/(k+1) keep every output coordinate in play.
        let projection: Vec<f64> = (0..self.out_dim()).map(|k| 1.0 / (k as f64 + 1.0)).collect();
        let analytic = self.backward(input, &projection)?;

        let project = |net: &Mlp, x: &[f64]| -> Result<f64> {
            let out = net.forward(x)?;
            Ok(out.iter().zip(&projection).map(|(o, p)| o * p).sum())
        };

        let mut worst = 0.0f64;
        let mut perturbed = self.clone();
        for i in 0..self.params.len() {
            let orig = self.params.as_slice()[i];
            perturbed.params.as_mut_slice()[i] = orig + h;
            let plus = project(&perturbed, input)?;
            perturbed.params.as_mut_slice()[i] = orig - h;
            let minus = project(&perturbed, input)?;
            perturbed.params.as_mut_slice()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.param_grad.as_slice()[i], numeric));
        }
        let mut x = input.to_vec();
        for i in 0..x.len() {
            let orig = x[i];
            x[i] = orig + h;
            let plus = project(self, &x)?;
            x[i] = orig - h;
            let minus = project(self, &x)?;
            x[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            worst = worst.max(relative_error(analytic.input_grad[i], numeric));
        }
        Ok(worst)
    }
}

/// See [`Mlp::finite_difference_check`] for the convention.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic.abs() < 1e-12 && numeric.abs() < 1e-12 {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

// `acts[l]` (read) and `acts[l+1]` (write) without aliasing.
fn split_pair(acts: &mut [Vec<f64>], l: usize) -> (&[f64], &mut [f64]) {
    let (head, tail) = acts.split_at_mut(l + 1);
    (&head[l], &mut tail[0])
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let chunks = a.len() / 4;
    let (mut s0, mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0, 0.0);
    for c in 0..chunks {
        let i = c * 4;
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    let mut rest = 0.0;
    for i in chunks * 4..a.len() {
        rest += a[i] * b[i];
    }
    (s0 + s1) + (s2 + s3) + rest
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi += a * xi;
    }
}
