//! Feedforward ReLU MLPs: construction, forward evaluation with activation
//! pattern capture, parameter flattening, and bit-exact checkpoint files.
//!
//! A network with layer widths `dims = (n_in, h_1, ..., h_{L-1}, n_out)` has
//! `L = dims.len() - 1` weight matrices, `W_k` of shape `h_k x h_{k-1}`.
//! Hidden layers apply ReLU with the derivative convention `ReLU'(0) = 0`:
//! a unit counts as active only when its preactivation is strictly positive.
//! The output layer is linear.

use std::io::{Read as _, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngState};

/// Default initialization scale (He-style for ReLU): weight std is
/// `scale / sqrt(fan_in)`.
pub const HE_SCALE: f64 = std::f64::consts::SQRT_2;

/// Per-hidden-layer activity mask: `true` iff the preactivation is strictly
/// positive. Two inputs with equal patterns live in the same linear region.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivationPattern {
    pub layers: Vec<Vec<bool>>,
}

impl ActivationPattern {
    pub fn active_counts(&self) -> Vec<usize> {
        self.layers
            .iter()
            .map(|l| l.iter().filter(|&&b| b).count())
            .collect()
    }
}

/// Shape metadata needed to reinterpret a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkLayout {
    pub dims: Vec<usize>,
    pub biasless: bool,
}

impl NetworkLayout {
    /// Total parameter count `P`.
    pub fn param_count(&self) -> usize {
        let weights: usize = self.dims.windows(2).map(|w| w[0] * w[1]).sum();
        if self.biasless {
            weights
        } else {
            weights + self.dims[1..].iter().sum::<usize>()
        }
    }

    pub fn n_in(&self) -> usize {
        self.dims[0]
    }

    pub fn n_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Flat offset of the weight block of layer `k` (0-based).
    /// Layout is layer-major: for each layer, the row-major weight entries,
    /// then the layer's bias entries when biases are present.
    pub fn weight_offset(&self, k: usize) -> usize {
        let mut off = 0;
        for j in 0..k {
            off += self.dims[j + 1] * self.dims[j];
            if !self.biasless {
                off += self.dims[j + 1];
            }
        }
        off
    }

    /// Flat offset of the bias block of layer `k`; `None` for biasless nets.
    pub fn bias_offset(&self, k: usize) -> Option<usize> {
        if self.biasless {
            None
        } else {
            Some(self.weight_offset(k) + self.dims[k + 1] * self.dims[k])
        }
    }
}

/// Flat parameter vector in the layout documented on [`NetworkLayout`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
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

/// A feedforward ReLU network. Snapshots are value types: cloning is cheap
/// enough at desk scale and forward passes take `&self`, so a snapshot can be
/// read concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Option<Vec<Vec<f64>>>,
}

impl Network {
    /// Builds a network with i.i.d. Gaussian weights of std `scale / sqrt(fan_in)`
    /// and zero biases (or no bias parameters at all in biasless mode).
    pub fn init(dims: &[usize], biasless: bool, seed: u64, scale: f64) -> Result<Network> {
        validate_dims(dims)?;
        let mut rng = RngState::new(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = scale / (fan_in as f64).sqrt();
            weights.push(Matrix::new(
                fan_out,
                fan_in,
                rng.gaussian_vector(fan_out * fan_in, 0.0, std),
            ));
        }
        let biases = if biasless {
            None
        } else {
            Some(dims[1..].iter().map(|&h| vec![0.0; h]).collect())
        };
        Ok(Network {
            dims: dims.to_vec(),
            weights,
            biases,
        })
    }

    /// Builds a network from explicit weight matrices (and optional biases).
    pub fn from_parts(weights: Vec<Matrix>, biases: Option<Vec<Vec<f64>>>) -> Result<Network> {
        if weights.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        let mut dims = vec![weights[0].cols()];
        for w in &weights {
            if w.cols() != *dims.last().unwrap() {
                return Err(Error::shape("weight shapes are not chain-consistent"));
            }
            dims.push(w.rows());
        }
        validate_dims(&dims)?;
        if let Some(bs) = &biases {
            if bs.len() != weights.len() || bs.iter().zip(&dims[1..]).any(|(b, &h)| b.len() != h) {
                return Err(Error::shape("bias shapes do not match layer widths"));
            }
        }
        Ok(Network {
            dims,
            weights,
            biases,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_in(&self) -> usize {
        self.dims[0]
    }

    pub fn n_out(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Number of weight layers.
    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn is_biasless(&self) -> bool {
        self.biases.is_none()
    }

    pub fn weight(&self, k: usize) -> &Matrix {
        &self.weights[k]
    }

    pub fn bias(&self, k: usize) -> Option<&[f64]> {
        self.biases.as_ref().map(|b| b[k].as_slice())
    }

    pub fn layout(&self) -> NetworkLayout {
        NetworkLayout {
            dims: self.dims.clone(),
            biasless: self.is_biasless(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().param_count()
    }

    /// Forward pass. Returns the output vector and the activation pattern of
    /// the hidden layers (strict positivity, matching `ReLU'(0) = 0`).
    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, ActivationPattern)> {
        if x.len() != self.n_in() {
            return Err(Error::shape(format!(
                "forward: input length {} != n_in {}",
                x.len(),
                self.n_in()
            )));
        }
        let depth = self.depth();
        let mut act = x.to_vec();
        let mut pattern = Vec::with_capacity(depth.saturating_sub(1));
        for k in 0..depth {
            let mut z = self.weights[k].matvec(&act)?;
            if let Some(bs) = &self.biases {
                for (zi, bi) in z.iter_mut().zip(bs[k].iter()) {
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
        Ok((act, ActivationPattern { layers: pattern }))
    }

    /// Scalar output `f_i(x)` for one output neuron.
    pub fn forward_scalar(&self, x: &[f64], out_idx: usize) -> Result<f64> {
        if out_idx >= self.n_out() {
            return Err(Error::invalid(format!(
                "output index {} out of range (n_out = {})",
                out_idx,
                self.n_out()
            )));
        }
        Ok(self.forward(x)?.0[out_idx])
    }

    /// Flattens all parameters into the documented layer-major layout.
    pub fn flatten(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.param_count());
        for k in 0..self.depth() {
            v.extend_from_slice(self.weights[k].entries());
            if let Some(bs) = &self.biases {
                v.extend_from_slice(&bs[k]);
            }
        }
        ParamVector(v)
    }

    /// Rebuilds a network from a flat vector. Errors on length mismatch.
    pub fn unflatten(layout: &NetworkLayout, v: &ParamVector) -> Result<Network> {
        validate_dims(&layout.dims)?;
        if v.len() != layout.param_count() {
            return Err(Error::shape(format!(
                "unflatten: vector length {} != parameter count {}",
                v.len(),
                layout.param_count()
            )));
        }
        let mut weights = Vec::with_capacity(layout.dims.len() - 1);
        let mut biases = if layout.biasless {
            None
        } else {
            Some(Vec::with_capacity(layout.dims.len() - 1))
        };
        let mut off = 0;
        for w in layout.dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let nw = fan_out * fan_in;
            weights.push(Matrix::new(fan_out, fan_in, v.0[off..off + nw].to_vec()));
            off += nw;
            if let Some(bs) = biases.as_mut() {
                bs.push(v.0[off..off + fan_out].to_vec());
                off += fan_out;
            }
        }
        Ok(Network {
            dims: layout.dims.clone(),
            weights,
            biases,
        })
    }

    /// In-place parameter update `theta -= step` with `step` in flat layout.
    pub fn apply_step(&mut self, step: &[f64]) -> Result<()> {
        if step.len() != self.param_count() {
            return Err(Error::shape("apply_step: flat length mismatch"));
        }
        let mut off = 0;
        let depth = self.depth();
        for k in 0..depth {
            let w = &mut self.weights[k];
            let nw = w.rows() * w.cols();
            for (wi, si) in (0..nw).zip(step[off..off + nw].iter()) {
                let i = wi / w.cols();
                let j = wi % w.cols();
                w.set(i, j, w.get(i, j) - si);
            }
            off += nw;
            if let Some(bs) = &mut self.biases {
                let nb = bs[k].len();
                for (bi, si) in bs[k].iter_mut().zip(step[off..off + nb].iter()) {
                    *bi -= si;
                }
                off += nb;
            }
        }
        Ok(())
    }

    /// Writes a bit-exact checkpoint: magic, bias flag, dims, then the flat
    /// parameter vector as little-endian f64 bit patterns.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.push(if self.is_biasless() { 1 } else { 0 });
        buf.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &p in self.flatten().as_slice() {
            buf.extend_from_slice(&p.to_bits().to_le_bytes());
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Network> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(Error::format("checkpoint truncated"));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 8)? != CHECKPOINT_MAGIC {
            return Err(Error::format("bad checkpoint magic"));
        }
        let biasless = match take(&mut pos, 1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(Error::format("bad bias flag")),
        };
        let ndims = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        let layout = NetworkLayout { dims, biasless };
        let p = layout.param_count();
        let mut params = Vec::with_capacity(p);
        for _ in 0..p {
            let bits = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
            params.push(f64::from_bits(bits));
        }
        if pos != bytes.len() {
            return Err(Error::format("trailing bytes in checkpoint"));
        }
        Network::unflatten(&layout, &ParamVector(params))
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"TSCKPT01";

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::invalid("dims must list at least input and output"));
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("layer widths must be >= 1"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_scale_gives_zero_function() {
        let net = Network::init(&[2, 1], true, 9, 0.0).unwrap();
        assert!(net.flatten().as_slice().iter().all(|&v| v == 0.0));
        let (y, _) = net.forward(&[1.5, -2.0]).unwrap();
        assert_eq!(y, vec![0.0]);
    }

    #[test]
    fn param_count_matches_hand_arithmetic() {
        let layout = NetworkLayout {
            dims: vec![768, 3000, 3000, 3000, 10],
            biasless: true,
        };
        assert_eq!(layout.param_count(), 20_334_000);
        let small = NetworkLayout {
            dims: vec![2, 2, 1],
            biasless: true,
        };
        assert_eq!(small.param_count(), 6);
        let with_bias = NetworkLayout {
            dims: vec![2, 2, 1],
            biasless: false,
        };
        assert_eq!(with_bias.param_count(), 9);
    }

    #[test]
    fn init_is_deterministic() {
        let a = Network::init(&[3, 5, 2], true, 123, HE_SCALE).unwrap();
        let b = Network::init(&[3, 5, 2], true, 123, HE_SCALE).unwrap();
        assert_eq!(a.flatten(), b.flatten());
    }

    #[test]
    fn init_rejects_bad_dims() {
        assert!(Network::init(&[3], true, 0, 1.0).is_err());
        assert!(Network::init(&[3, 0, 1], true, 0, 1.0).is_err());
    }

    #[test]
    fn forward_depth_one_hand_case() {
        let net = Network::from_parts(
            vec![Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap()],
            None,
        )
        .unwrap();
        let (y, pattern) = net.forward(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(y, vec![6.0]);
        assert!(pattern.layers.is_empty());
    }

    #[test]
    fn forward_zero_input_biasless() {
        let net = Network::init(&[4, 6, 1], true, 5, HE_SCALE).unwrap();
        let (y, pattern) = net.forward(&[0.0; 4]).unwrap();
        assert_eq!(y, vec![0.0]);
        assert!(pattern.layers[0].iter().all(|&b| !b));
    }

    #[test]
    fn positive_homogeneity_biasless() {
        let net = Network::init(&[3, 8, 8, 2], true, 17, HE_SCALE).unwrap();
        let x = [0.3, -1.2, 0.7];
        let c = 2.5;
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        let (y, p) = net.forward(&x).unwrap();
        let (yc, pc) = net.forward(&cx).unwrap();
        assert_eq!(p, pc);
        for (a, b) in y.iter().zip(yc.iter()) {
            assert!((c * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = Network::init(&[3, 2], true, 0, 1.0).unwrap();
        assert!(net.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn flatten_unflatten_roundtrip() {
        for biasless in [true, false] {
            let net = Network::init(&[4, 7, 3], biasless, 99, HE_SCALE).unwrap();
            let v = net.flatten();
            assert_eq!(v.len(), net.param_count());
            let back = Network::unflatten(&net.layout(), &v).unwrap();
            assert_eq!(net, back);
        }
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let layout = NetworkLayout {
            dims: vec![2, 2, 1],
            biasless: true,
        };
        let v = ParamVector(vec![0.0; 5]);
        assert!(matches!(
            Network::unflatten(&layout, &v),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn output_layer_is_linear_in_top_weights() {
        let hidden = Matrix::from_rows(&[vec![1.0, -0.5], vec![0.25, 0.75]]).unwrap();
        let top_a = Matrix::from_rows(&[vec![0.2, -0.4]]).unwrap();
        let top_b = Matrix::from_rows(&[vec![-1.0, 0.3]]).unwrap();
        let mut top_sum = top_a.clone();
        top_sum.add_scaled(&top_b, 1.0).unwrap();
        let x = [0.9, 0.4];
        let f = |top: Matrix| {
            Network::from_parts(vec![hidden.clone(), top], None)
                .unwrap()
                .forward_scalar(&x, 0)
                .unwrap()
        };
        let (fa, fb, fs) = (f(top_a), f(top_b), f(top_sum));
        assert!((fa + fb - fs).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("tsens-ckpt-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        for biasless in [true, false] {
            let mut net = Network::init(&[5, 4, 2], biasless, 31, HE_SCALE).unwrap();
            // exercise non-trivial biases too
            if !biasless {
                net.apply_step(&vec![0.125; net.param_count()]).unwrap();
            }
            let path = dir.join(format!("net-{biasless}.ckpt"));
            net.save_checkpoint(&path).unwrap();
            let back = Network::load_checkpoint(&path).unwrap();
            let (a, b) = (net.flatten(), back.flatten());
            assert_eq!(a.len(), b.len());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn load_checkpoint_rejects_bad_magic() {
        let dir = std::env::temp_dir().join(format!("tsens-ckpt-bad-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.ckpt");
        std::fs::write(&path, b"NOTMAGIC rest").unwrap();
        assert!(matches!(
            Network::load_checkpoint(&path),
            Err(Error::Format(_))
        ));
        std::fs::remove_dir_all(&dir).ok();
    }
}
