//! Leaky integrate-and-fire layers with hand-written backpropagation through time.
//!
//! Membrane update per step, with `I(t) = (M ⊙ W) x(t)`:
//!
//! ```text
//! u(t)      = τ·u_post(t-1) + I(t)
//! a(t)      = Θ(u(t) - V_th)
//! u_post(t) = u(t)·(1 - a(t))
//! ```
//!
//! Hard mode emits binary spikes and uses a triangular surrogate for `dΘ/du`,
//! with the reset gate treated as a constant in backward. Soft mode replaces
//! `Θ` by a sigmoid and differentiates everything exactly; it exists so the
//! backward recurrence can be checked against finite differences.
//!
//! The output layer is a non-spiking leaky integrator, `O(t) = τ·O(t-1) + I(t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::SparseLayer;
use crate::tensor::{matmul_into, matmul_tn_into, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpikeMode {
    Hard,
    Soft,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams {
    /// Leak factor τ in `[0, 1)`.
    pub tau: f64,
    pub v_th: f64,
    /// Half-width of the triangular surrogate (hard mode) or sigmoid
    /// temperature (soft mode).
    pub surrogate_width: f64,
    pub mode: SpikeMode,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            tau: 0.5,
            v_th: 1.0,
            surrogate_width: 1.0,
            mode: SpikeMode::Hard,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::Argument(format!("tau must be in [0, 1), got {}", self.tau)));
        }
        if !(self.v_th > 0.0 && self.v_th.is_finite()) {
            return Err(Error::Argument(format!("v_th must be > 0, got {}", self.v_th)));
        }
        if !(self.surrogate_width > 0.0 && self.surrogate_width.is_finite()) {
            return Err(Error::Argument(format!(
                "surrogate_width must be > 0, got {}",
                self.surrogate_width
            )));
        }
        Ok(())
    }
}

/// Per-step state of one LIF layer over a batch, all `[T, batch, n]`.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Membrane potential before reset.
    pub pre_reset: Tensor,
    pub spikes: Tensor,
    /// Membrane potential after reset; carried into the next step.
    pub post_reset: Tensor,
    /// The layer input `x(t)`, kept for the weight gradient.
    pub input: Tensor,
}

impl LayerTrace {
    pub fn time_steps(&self) -> usize {
        self.spikes.shape()[0]
    }

    pub fn total_spikes(&self) -> f64 {
        self.spikes.data().iter().sum()
    }
}

/// Triangular surrogate `max(0, 1 - |u - V_th|/w) / w`.
pub fn surrogate_grad(u: f64, params: &LifParams) -> f64 {
    let w = params.surrogate_width;
    (1.0 - (u - params.v_th).abs() / w).max(0.0) / w
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dims3(t: &Tensor, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::dim(op, format!("expected [T, batch, n], got {:?}", s))),
    }
}

/// `I(t) = (M ⊙ W) x(t)` for every step at once, as `[T·batch, n_post]`.
fn input_current(input: &Tensor, layer: &SparseLayer, op: &'static str) -> Result<Vec<f64>> {
    let (t, b, n_pre) = dims3(input, op)?;
    if n_pre != layer.n_pre() {
        return Err(Error::dim(
            op,
            format!("input width {} vs layer fan-in {}", n_pre, layer.n_pre()),
        ));
    }
    let n_post = layer.n_post();
    let wt = layer.masked_weights_t();
    let mut current = vec![0.0; t * b * n_post];
    matmul_into(input.data(), &wt, &mut current, t * b, n_pre, n_post);
    Ok(current)
}

pub fn lif_forward(input: &Tensor, layer: &SparseLayer, params: &LifParams) -> Result<LayerTrace> {
    let (steps, batch, _) = dims3(input, "lif_forward")?;
    let n = layer.n_post();
    let current = input_current(input, layer, "lif_forward")?;
    let width = batch * n;
    let mut pre = vec![0.0; steps * width];
    let mut spk = vec![0.0; steps * width];
    let mut post = vec![0.0; steps * width];
    let mut u_prev = vec![0.0; width];
    for t in 0..steps {
        let off = t * width;
        for i in 0..width {
            let u = params.tau * u_prev[i] + current[off + i];
            let a = match params.mode {
                SpikeMode::Hard => {
                    if u >= params.v_th {
                        1.0
                    } else {
                        0.0
                    }
                }
                SpikeMode::Soft => sigmoid((u - params.v_th) / params.surrogate_width),
            };
            let u_post = u * (1.0 - a);
            pre[off + i] = u;
            spk[off + i] = a;
            post[off + i] = u_post;
            u_prev[i] = u_post;
        }
    }
    let shape = [steps, batch, n];
    Ok(LayerTrace {
        pre_reset: Tensor::from_vec(&shape, pre)?,
        spikes: Tensor::from_vec(&shape, spk)?,
        post_reset: Tensor::from_vec(&shape, post)?,
        input: input.clone(),
    })
}

/// Gradients of one layer: dense `[n_post, n_pre]` weight gradient and,
/// when requested, the gradient w.r.t. the layer input `[T, batch, n_pre]`.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weights: Tensor,
    pub input: Option<Tensor>,
}

/// Backward through time for a LIF layer. `upstream` is `∂L/∂a(t)`.
///
/// The weight gradient is dense: inactive connections get the gradient they
/// would receive if they were active.
pub fn lif_backward(
    trace: &LayerTrace,
    upstream: &Tensor,
    layer: &SparseLayer,
    params: &LifParams,
) -> Result<(Tensor, Tensor)> {
    let grads = lif_backward_with(trace, upstream, layer, params, true)?;
    Ok((grads.weights, grads.input.expect("input gradient requested")))
}

pub fn lif_backward_with(
    trace: &LayerTrace,
    upstream: &Tensor,
    layer: &SparseLayer,
    params: &LifParams,
    want_input: bool,
) -> Result<LayerGrads> {
    let (steps, batch, n) = dims3(&trace.spikes, "lif_backward")?;
    if upstream.shape() != trace.spikes.shape() {
        return Err(Error::dim(
            "lif_backward",
            format!("upstream {:?} vs trace {:?}", upstream.shape(), trace.spikes.shape()),
        ));
    }
    if n != layer.n_post() || trace.input.shape()[2] != layer.n_pre() {
        return Err(Error::dim("lif_backward", "trace does not match layer"));
    }
    let width = batch * n;
    let pre = trace.pre_reset.data();
    let spk = trace.spikes.data();
    let g_spk = upstream.data();
    let mut delta = vec![0.0; steps * width];
    // ∂L/∂u_post(t), fed back from step t+1 through the leak
    let mut g_post = vec![0.0; width];
    for t in (0..steps).rev() {
        let off = t * width;
        for i in 0..width {
            let u = pre[off + i];
            let a = spk[off + i];
            let d = match params.mode {
                SpikeMode::Hard => {
                    g_spk[off + i] * surrogate_grad(u, params) + g_post[i] * (1.0 - a)
                }
                SpikeMode::Soft => {
                    let da = a * (1.0 - a) / params.surrogate_width;
                    g_spk[off + i] * da + g_post[i] * ((1.0 - a) - u * da)
                }
            };
            delta[off + i] = d;
            g_post[i] = params.tau * d;
        }
    }
    finish_linear_backward(&delta, &trace.input, layer, steps, batch, want_input)
}

/// Shared tail of both layer kinds: given `∂L/∂I(t)`, form the weight and
/// input gradients of `I(t) = (M ⊙ W) x(t)`.
fn finish_linear_backward(
    delta: &[f64],
    input: &Tensor,
    layer: &SparseLayer,
    steps: usize,
    batch: usize,
    want_input: bool,
) -> Result<LayerGrads> {
    let (n_post, n_pre) = (layer.n_post(), layer.n_pre());
    let rows = steps * batch;
    let mut gw = vec![0.0; n_post * n_pre];
    matmul_tn_into(delta, input.data(), &mut gw, rows, n_post, n_pre);
    let input_grad = if want_input {
        let wm = layer.masked_weights();
        let mut gx = vec![0.0; rows * n_pre];
        matmul_into(delta, &wm, &mut gx, rows, n_post, n_pre);
        Some(Tensor::from_vec(&[steps, batch, n_pre], gx)?)
    } else {
        None
    };
    Ok(LayerGrads {
        weights: Tensor::from_vec(&[n_post, n_pre], gw)?,
        input: input_grad,
    })
}

/// Non-spiking leaky readout; returns per-step logits `[T, batch, n_post]`.
pub fn readout_forward(input: &Tensor, layer: &SparseLayer, params: &LifParams) -> Result<Tensor> {
    let (steps, batch, _) = dims3(input, "readout_forward")?;
    let n = layer.n_post();
    let mut out = input_current(input, layer, "readout_forward")?;
    let width = batch * n;
    for t in 1..steps {
        let (done, rest) = out.split_at_mut(t * width);
        let prev = &done[(t - 1) * width..];
        for (o, p) in rest[..width].iter_mut().zip(prev) {
            *o += params.tau * p;
        }
    }
    Tensor::from_vec(&[steps, batch, n], out)
}

/// Backward of [`readout_forward`]; `upstream` is `∂L/∂O(t)`.
pub fn readout_backward(
    input: &Tensor,
    upstream: &Tensor,
    layer: &SparseLayer,
    params: &LifParams,
    want_input: bool,
) -> Result<LayerGrads> {
    let (steps, batch, n_pre) = dims3(input, "readout_backward")?;
    let n = layer.n_post();
    if upstream.shape() != [steps, batch, n] || n_pre != layer.n_pre() {
        return Err(Error::dim(
            "readout_backward",
            format!("upstream {:?}, input {:?}", upstream.shape(), input.shape()),
        ));
    }
    let width = batch * n;
    let mut delta = upstream.data().to_vec();
    for t in (0..steps.saturating_sub(1)).rev() {
        let (head, tail) = delta.split_at_mut((t + 1) * width);
        for (d, next) in head[t * width..].iter_mut().zip(&tail[..width]) {
            *d += params.tau * next;
        }
    }
    finish_linear_backward(&delta, input, layer, steps, batch, want_input)
}
