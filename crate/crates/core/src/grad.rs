//! Exact reverse-mode gradients and the per-layer objects they decompose
//! into: backward vectors `delta_k`, input activations `a_{k-1}`, and region
//! Jacobians `J_{k-1}`.
//!
//! Backprop is hand-written for the fixed MLP architecture instead of going
//! through a general autodiff graph: the per-layer vectors are needed
//! explicitly downstream, and a closed-form engine keeps the sensitivity
//! computations exact within an activation region.
//!
//! Index convention: layers are numbered `k = 1..=L`. Layer `k` consumes
//! `a_{k-1}` (with `a_0 = x`), produces preactivation `z_k`, and
//! `delta_k = df_i/dz_k` for the selected output neuron `i`. The region
//! Jacobian `J_{k-1} = D_{k-1} W_{k-1} ... D_1 W_1` (with `J_0 = I`) maps the
//! input to `a_{k-1}` within the activation region of a biasless net; with
//! biases it is still the derivative `da_{k-1}/dx`.

use crate::error::{Error, Result};
use crate::network::{ActivationPattern, Network, NetworkLayout};
use crate::tensor::Matrix;

/// Flat gradient with respect to all parameters, aligned entry-for-entry
/// with the `ParamVector` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Everything a single `(x, out_idx)` evaluation decomposes into.
#[derive(Debug, Clone)]
pub struct LayerDecomposition {
    pub layout: NetworkLayout,
    pub out_idx: usize,
    /// `a_0 = x, a_1, ..., a_{L-1}`: the input of each layer.
    pub activations: Vec<Vec<f64>>,
    /// `delta_1, ..., delta_L` for the selected output neuron.
    pub deltas: Vec<Vec<f64>>,
    /// `J_0 = I, J_1, ..., J_{L-1}` (each `dims[k] x n_in`).
    pub jacobians: Vec<Matrix>,
    /// Activation pattern of the hidden layers at `x`.
    pub pattern: ActivationPattern,
}

impl LayerDecomposition {
    /// Reassembles the parameter gradient from the per-layer blocks
    /// (`delta_k a_{k-1}^T` for weights, `delta_k` for biases). Produces the
    /// same entries, in the same order, as [`param_gradient`].
    pub fn reassembled_gradient(&self) -> GradientVector {
        let depth = self.deltas.len();
        let mut g = Vec::with_capacity(self.layout.param_count());
        for k in 0..depth {
            let delta = &self.deltas[k];
            let a = &self.activations[k];
            for &d in delta {
                for &ai in a {
                    g.push(d * ai);
                }
            }
            if !self.layout.biasless {
                g.extend_from_slice(delta);
            }
        }
        GradientVector(g)
    }
}

struct ForwardTrace {
    /// `a_0..a_{L-1}`.
    activations: Vec<Vec<f64>>,
    /// Hidden-layer masks (strict positivity).
    pattern: ActivationPattern,
    outputs: Vec<f64>,
}

fn forward_trace(net: &Network, x: &[f64]) -> Result<ForwardTrace> {
    if x.len() != net.n_in() {
        return Err(Error::shape(format!(
            "input length {} != n_in {}",
            x.len(),
            net.n_in()
        )));
    }
    let depth = net.depth();
    let mut activations = Vec::with_capacity(depth);
    let mut pattern = Vec::with_capacity(depth.saturating_sub(1));
    let mut act = x.to_vec();
    for k in 0..depth {
        activations.push(act.clone());
        let mut z = net.weight(k).matvec(&act)?;
        if let Some(b) = net.bias(k) {
            for (zi, bi) in z.iter_mut().zip(b.iter()) {
                *zi += bi;
            }
        }
        if k + 1 < depth {
            let mask: Vec<bool> = z.iter().map(|&v| v > 0.0).collect();
            for (zi, &m) in z.iter_mut().zip(mask.iter()) {
                if !m {
                    *zi = 0.0;
                }
            }
            pattern.push(mask);
        }
        act = z;
    }
    Ok(ForwardTrace {
        activations,
        pattern: ActivationPattern { layers: pattern },
        outputs: act,
    })
}

/// Backward vectors `delta_1..delta_L` for an arbitrary output cotangent.
fn backward_deltas(net: &Network, trace: &ForwardTrace, cotangent: &[f64]) -> Result<Vec<Vec<f64>>> {
    let depth = net.depth();
    if cotangent.len() != net.n_out() {
        return Err(Error::shape("cotangent length != n_out"));
    }
    let mut deltas = vec![Vec::new(); depth];
    deltas[depth - 1] = cotangent.to_vec();
    for k in (0..depth - 1).rev() {
        // delta_k = D_k (W_{k+1}^T delta_{k+1}); layer k+1 has weight index k+1.
        let mut d = net.weight(k + 1).matvec_t(&deltas[k + 1])?;
        for (di, &m) in d.iter_mut().zip(trace.pattern.layers[k].iter()) {
            if !m {
                *di = 0.0;
            }
        }
        deltas[k] = d;
    }
    Ok(deltas)
}

fn assemble_gradient(net: &Network, activations: &[Vec<f64>], deltas: &[Vec<f64>]) -> GradientVector {
    let mut g = Vec::with_capacity(net.param_count());
    for k in 0..net.depth() {
        for &d in &deltas[k] {
            for &ai in &activations[k] {
                g.push(d * ai);
            }
        }
        if net.bias(k).is_some() {
            g.extend_from_slice(&deltas[k]);
        }
    }
    GradientVector(g)
}

/// Gradient of `<cotangent, f(theta, x)>` with respect to all parameters.
/// One backward pass regardless of output width; this is the training-loop
/// workhorse.
pub fn param_gradient_vjp(net: &Network, x: &[f64], cotangent: &[f64]) -> Result<GradientVector> {
    let trace = forward_trace(net, x)?;
    let deltas = backward_deltas(net, &trace, cotangent)?;
    Ok(assemble_gradient(net, &trace.activations, &deltas))
}

/// Gradient and outputs in one pass; saves the extra forward when the caller
/// also needs `f(theta, x)`.
pub fn param_gradient_vjp_with_outputs(
    net: &Network,
    x: &[f64],
    cotangent: &[f64],
) -> Result<(GradientVector, Vec<f64>)> {
    let trace = forward_trace(net, x)?;
    let deltas = backward_deltas(net, &trace, cotangent)?;
    let g = assemble_gradient(net, &trace.activations, &deltas);
    Ok((g, trace.outputs))
}

/// Exact reverse-mode gradient of the scalar output `f_i(theta, x)` with the
/// convention `ReLU'(0) = 0`.
pub fn param_gradient(net: &Network, x: &[f64], out_idx: usize) -> Result<GradientVector> {
    if out_idx >= net.n_out() {
        return Err(Error::invalid(format!(
            "output index {} out of range (n_out = {})",
            out_idx,
            net.n_out()
        )));
    }
    let mut cot = vec![0.0; net.n_out()];
    cot[out_idx] = 1.0;
    param_gradient_vjp(net, x, &cot)
}

/// Full per-layer decomposition including the region Jacobians.
pub fn layer_decomposition(net: &Network, x: &[f64], out_idx: usize) -> Result<LayerDecomposition> {
    if out_idx >= net.n_out() {
        return Err(Error::invalid(format!(
            "output index {} out of range (n_out = {})",
            out_idx,
            net.n_out()
        )));
    }
    let trace = forward_trace(net, x)?;
    let mut cot = vec![0.0; net.n_out()];
    cot[out_idx] = 1.0;
    let deltas = backward_deltas(net, &trace, &cot)?;

    let depth = net.depth();
    let mut jacobians = Vec::with_capacity(depth);
    jacobians.push(Matrix::identity(net.n_in()));
    for k in 0..depth - 1 {
        // J_{k+1} = D_{k+1} W_{k+1} J_k (0-based weight index k).
        let mut j = net.weight(k).matmul(&jacobians[k])?;
        j.mask_rows(&trace.pattern.layers[k]);
        jacobians.push(j);
    }

    Ok(LayerDecomposition {
        layout: net.layout(),
        out_idx,
        activations: trace.activations,
        deltas,
        jacobians,
        pattern: trace.pattern,
    })
}

/// Smallest hidden-preactivation magnitude at `x`; infinity when the network
/// has no hidden layer. Inputs with a small value sit close to an activation
/// boundary, where `grad_theta f` is discontinuous.
pub fn min_abs_preactivation(net: &Network, x: &[f64]) -> Result<f64> {
    if x.len() != net.n_in() {
        return Err(Error::shape("input length != n_in"));
    }
    let depth = net.depth();
    let mut act = x.to_vec();
    let mut min_abs = f64::INFINITY;
    for k in 0..depth {
        let mut z = net.weight(k).matvec(&act)?;
        if let Some(b) = net.bias(k) {
            for (zi, bi) in z.iter_mut().zip(b.iter()) {
                *zi += bi;
            }
        }
        if k + 1 < depth {
            for zi in &mut z {
                min_abs = min_abs.min(zi.abs());
                if *zi <= 0.0 {
                    *zi = 0.0;
                }
            }
        }
        act = z;
    }
    Ok(min_abs)
}

/// Gradient of the summed margin loss `sum_i loss_fn(f_i(x) - t_i)` over all
/// output neurons, together with the raw outputs. One forward and one
/// backward pass.
pub fn margin_loss_gradient(
    net: &Network,
    x: &[f64],
    targets: &[f64],
    loss: &dyn MarginLoss,
) -> Result<(GradientVector, Vec<f64>)> {
    if targets.len() != net.n_out() {
        return Err(Error::shape("target length != n_out"));
    }
    let trace = forward_trace(net, x)?;
    let cotangent: Vec<f64> = trace
        .outputs
        .iter()
        .zip(targets.iter())
        .map(|(&f, &t)| loss.derivative(f - t))
        .collect();
    let deltas = backward_deltas(net, &trace, &cotangent)?;
    let g = assemble_gradient(net, &trace.activations, &deltas);
    Ok((g, trace.outputs))
}

/// Loss of the form `l(f, y) = loss_fn(f - y)` as required by the bound's
/// Lipschitz assumption. Implementations provide the margin function, its
/// derivative, and the constants valid on a bounded margin range.
pub trait MarginLoss {
    /// `loss_fn(u)` at margin `u = f - y`.
    fn value(&self, u: f64) -> f64;
    /// `loss_fn'(u)`, i.e. `dl/df`.
    fn derivative(&self, u: f64) -> f64;
    /// Lipschitz constant of `loss_fn` on `|u| <= m`.
    fn lipschitz_on(&self, m: f64) -> f64;
    /// Upper bound of `loss_fn` on `|u| <= m`.
    fn upper_bound_on(&self, m: f64) -> f64;
    fn name(&self) -> &'static str;
}

/// `loss_fn(u) = u^2`: the squared loss used by all experiments.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquaredLoss;

impl MarginLoss for SquaredLoss {
    fn value(&self, u: f64) -> f64 {
        u * u
    }

    fn derivative(&self, u: f64) -> f64 {
        2.0 * u
    }

    fn lipschitz_on(&self, m: f64) -> f64 {
        2.0 * m
    }

    fn upper_bound_on(&self, m: f64) -> f64 {
        m * m
    }

    fn name(&self) -> &'static str {
        "squared"
    }
}

/// Squared loss value and `dl/df` for a `{-1, +1}` label.
pub fn loss_value_and_derivative(f_val: f64, y: f64) -> (f64, f64) {
    debug_assert!(y == 1.0 || y == -1.0, "labels must be +/-1");
    let u = f_val - y;
    (SquaredLoss.value(u), SquaredLoss.derivative(u))
}
