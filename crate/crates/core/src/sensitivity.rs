//! The tangent sample sensitivity `S(theta, x)`: the `P x n_in` matrix of
//! mixed second derivatives `d(grad_theta f)/dx`, its Frobenius norm, dataset
//! aggregates, and a Gaussian input-perturbation estimate of the same
//! quantity.
//!
//! Within one activation region the parameter gradient is linear in the
//! input, so `S` is piecewise constant and assembles exactly from the layer
//! decomposition: the row of the weight entry `(k, i, j)` is
//! `delta_k[i] * J_{k-1}[j, :]`, and bias rows are identically zero. Three
//! norm routes are provided:
//!
//! - `exact`: build the matrix and take its Frobenius norm;
//! - `layerwise`: the closed form
//!   `sqrt(sum_k |delta_k|^2 * |J_{k-1}|_F^2)`;
//! - `probes`: a randomized estimator `sqrt(mean_v |S v|^2)` over
//!   `v ~ N(0, I)`, with `S v` evaluated as the exact directional derivative
//!   of the gradient inside the region (no finite differences).

use crate::error::{Error, Result};
use crate::grad::{layer_decomposition, param_gradient};
use crate::network::Network;
use crate::tensor::{euclidean_norm, sq_norm, sub, Matrix, RngState};

/// How to evaluate a sensitivity norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SensMethod {
    /// Assemble the full `P x n_in` matrix. Feasible while `P * n_in` stays
    /// small; see [`auto_method`].
    Exact,
    /// Layerwise closed form; exact for the norm, never builds the matrix.
    Layerwise,
    /// Randomized probe estimator with `m` draws from a seeded stream.
    Probes { m: usize, seed: u64 },
}

/// Entry budget under which [`auto_method`] picks the exact matrix.
pub const EXACT_ENTRY_BUDGET: usize = 10_000_000;

/// Default probe count for nets above the exact-entry budget.
pub const DEFAULT_PROBES: usize = 64;

/// Exact when the matrix fits the entry budget, probes otherwise.
pub fn auto_method(net: &Network, probe_m: usize, seed: u64) -> SensMethod {
    if net.param_count().saturating_mul(net.n_in()) <= EXACT_ENTRY_BUDGET {
        SensMethod::Exact
    } else {
        SensMethod::Probes { m: probe_m, seed }
    }
}

/// How a [`TangentSensitivity`] value was represented.
#[derive(Debug, Clone)]
pub enum SensRepr {
    /// The explicit `P x n_in` matrix.
    Exact(Matrix),
    /// Norm only, via the layerwise closed form.
    LayerwiseNorm,
    /// Norm estimate from `m` probes with the standard error of the
    /// square-root estimate.
    Probes { m: usize, stderr: f64 },
}

/// Sensitivity of one `(x, out_idx)` evaluation.
#[derive(Debug, Clone)]
pub struct TangentSensitivity {
    pub out_idx: usize,
    /// Frobenius norm of `S` (exact or estimated per `repr`).
    pub norm: f64,
    pub repr: SensRepr,
}

impl TangentSensitivity {
    pub fn matrix(&self) -> Option<&Matrix> {
        match &self.repr {
            SensRepr::Exact(m) => Some(m),
            _ => None,
        }
    }
}

/// Empirical Gaussian-perturbation estimate of the gradient response at `x`,
/// next to the sensitivity bound it should not exceed (modulo region
/// crossings).
#[derive(Debug, Clone)]
pub struct PerturbationEstimate {
    /// Variance of the isotropic perturbation.
    pub sigma: f64,
    pub m: usize,
    /// Mean of `|grad f(x) - grad f(x + d)|^2` over the draws.
    pub mean_sq_gap: f64,
    /// `sigma * |S(theta, x)|_F^2`.
    pub bound_value: f64,
    /// Fraction of draws that stayed in the activation region of `x`.
    pub region_preserved_fraction: f64,
}

/// Builds the exact sensitivity matrix.
pub fn tangent_sensitivity_exact(
    net: &Network,
    x: &[f64],
    out_idx: usize,
) -> Result<TangentSensitivity> {
    let d = layer_decomposition(net, x, out_idx)?;
    let p = d.layout.param_count();
    let n_in = d.layout.n_in();
    let mut s = Matrix::zeros(p, n_in);
    let mut row = 0usize;
    for k in 0..d.deltas.len() {
        let jac = &d.jacobians[k];
        for &dk in &d.deltas[k] {
            for j in 0..jac.rows() {
                if dk != 0.0 {
                    let out_row = s.row_mut(row);
                    for (o, &jv) in out_row.iter_mut().zip(jac.row(j).iter()) {
                        *o = dk * jv;
                    }
                }
                row += 1;
            }
        }
        if !d.layout.biasless {
            // bias rows stay zero: the gradient wrt biases is delta_k, which
            // is constant inside the region
            row += d.layout.dims[k + 1];
        }
    }
    debug_assert_eq!(row, p);
    let norm = s.frobenius_norm();
    Ok(TangentSensitivity {
        out_idx,
        norm,
        repr: SensRepr::Exact(s),
    })
}

/// Shared pattern-dependent half of the layerwise norm: squared Frobenius
/// norms of `J_0 .. J_{L-1}` at `x`.
fn jacobian_sq_norms(net: &Network, x: &[f64]) -> Result<Vec<f64>> {
    let depth = net.depth();
    let mut sq = Vec::with_capacity(depth);
    let mut jac = Matrix::identity(net.n_in());
    sq.push(net.n_in() as f64);
    let (_, pattern) = net.forward(x)?;
    for k in 0..depth - 1 {
        let mut next = net.weight(k).matmul(&jac)?;
        next.mask_rows(&pattern.layers[k]);
        sq.push(next.sq_frobenius_norm());
        jac = next;
    }
    Ok(sq)
}

/// Backward-vector squared norms per layer for each requested output neuron.
fn delta_sq_norms_multi(net: &Network, x: &[f64], out_idxs: &[usize]) -> Result<Vec<Vec<f64>>> {
    out_idxs
        .iter()
        .map(|&i| {
            let d = layer_decomposition_deltas_only(net, x, i)?;
            Ok(d.iter().map(|dk| sq_norm(dk)).collect())
        })
        .collect()
}

/// Deltas without the Jacobian products (cheap path for wide nets).
fn layer_decomposition_deltas_only(
    net: &Network,
    x: &[f64],
    out_idx: usize,
) -> Result<Vec<Vec<f64>>> {
    if out_idx >= net.n_out() {
        return Err(Error::invalid(format!(
            "output index {} out of range (n_out = {})",
            out_idx,
            net.n_out()
        )));
    }
    let (_, pattern) = net.forward(x)?;
    let depth = net.depth();
    let mut deltas = vec![Vec::new(); depth];
    let mut top = vec![0.0; net.n_out()];
    top[out_idx] = 1.0;
    deltas[depth - 1] = top;
    for k in (0..depth - 1).rev() {
        let mut d = net.weight(k + 1).matvec_t(&deltas[k + 1])?;
        for (di, &m) in d.iter_mut().zip(pattern.layers[k].iter()) {
            if !m {
                *di = 0.0;
            }
        }
        deltas[k] = d;
    }
    Ok(deltas)
}

/// A fixed set of Gaussian probe directions, reusable across samples and
/// checkpoints so that estimates share their randomness. Caches the
/// mask-independent first-layer product `W_1 V`; a bank is therefore tied to
/// one network snapshot.
pub struct ProbeBank {
    m: usize,
    /// `n_in x m` probe directions.
    v: Matrix,
    /// `W_1 V`, before any activation mask.
    first_unmasked: Option<Matrix>,
}

impl ProbeBank {
    pub fn new(net: &Network, m: usize, seed: u64) -> Result<ProbeBank> {
        if m < 1 {
            return Err(Error::invalid("probe count must be >= 1"));
        }
        let mut rng = RngState::new(seed);
        let n_in = net.n_in();
        let mut v = Matrix::zeros(n_in, m);
        for j in 0..m {
            let col = rng.gaussian_vector(n_in, 0.0, 1.0);
            for (i, &c) in col.iter().enumerate() {
                v.set(i, j, c);
            }
        }
        let first_unmasked = if net.depth() > 1 {
            Some(net.weight(0).matmul(&v)?)
        } else {
            None
        };
        Ok(ProbeBank {
            m,
            v,
            first_unmasked,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// For each requested output neuron: `(mean of |S v|^2, stderr of that
    /// mean)`. `|S v|^2 = sum_k |delta_k|^2 |J_{k-1} v|^2`, with the probe
    /// propagation shared across output neurons.
    pub fn sq_norm_estimates(
        &self,
        net: &Network,
        x: &[f64],
        out_idxs: &[usize],
    ) -> Result<Vec<(f64, f64)>> {
        let depth = net.depth();
        let (_, pattern) = net.forward(x)?;
        // per-level squared column norms of J_k V, k = 0..depth-1
        let mut level_sqcols: Vec<Vec<f64>> = Vec::with_capacity(depth);
        level_sqcols.push((0..self.m).map(|j| column_sq_norm(&self.v, j)).collect());
        if depth > 1 {
            let mut u = self.first_unmasked.clone().unwrap();
            u.mask_rows(&pattern.layers[0]);
            level_sqcols.push((0..self.m).map(|j| column_sq_norm(&u, j)).collect());
            for k in 1..depth - 1 {
                let mut next = net.weight(k).matmul(&u)?;
                next.mask_rows(&pattern.layers[k]);
                level_sqcols.push((0..self.m).map(|j| column_sq_norm(&next, j)).collect());
                u = next;
            }
        }
        let delta_sqs = delta_sq_norms_multi(net, x, out_idxs)?;
        Ok(delta_sqs
            .iter()
            .map(|dsq| {
                let q: Vec<f64> = (0..self.m)
                    .map(|j| {
                        (0..depth)
                            .map(|k| dsq[k] * level_sqcols[k][j])
                            .sum::<f64>()
                    })
                    .collect();
                mean_and_stderr(&q)
            })
            .collect())
    }
}

fn column_sq_norm(m: &Matrix, j: usize) -> f64 {
    (0..m.rows()).map(|i| m.get(i, j) * m.get(i, j)).sum()
}

fn mean_and_stderr(q: &[f64]) -> (f64, f64) {
    let n = q.len() as f64;
    let mean = q.iter().sum::<f64>() / n;
    if q.len() < 2 {
        return (mean, 0.0);
    }
    let var = q.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Frobenius norm of `S(theta, x)` for one output neuron via the requested
/// method. The probe estimate reports the norm (square root of the mean
/// squared probe response).
pub fn ts_frobenius_norm(
    net: &Network,
    x: &[f64],
    out_idx: usize,
    method: &SensMethod,
) -> Result<f64> {
    Ok(ts_norm_detailed(net, x, out_idx, method)?.norm)
}

/// Like [`ts_frobenius_norm`] but keeps the representation (matrix or
/// standard error) alongside the norm.
pub fn ts_norm_detailed(
    net: &Network,
    x: &[f64],
    out_idx: usize,
    method: &SensMethod,
) -> Result<TangentSensitivity> {
    match method {
        SensMethod::Exact => tangent_sensitivity_exact(net, x, out_idx),
        SensMethod::Layerwise => {
            let jsq = jacobian_sq_norms(net, x)?;
            let dsq = &delta_sq_norms_multi(net, x, &[out_idx])?[0];
            let norm = jsq
                .iter()
                .zip(dsq.iter())
                .map(|(j, d)| j * d)
                .sum::<f64>()
                .sqrt();
            Ok(TangentSensitivity {
                out_idx,
                norm,
                repr: SensRepr::LayerwiseNorm,
            })
        }
        SensMethod::Probes { m, seed } => {
            let bank = ProbeBank::new(net, *m, *seed)?;
            let (mean_q, se_q) = bank.sq_norm_estimates(net, x, &[out_idx])?[0];
            let norm = mean_q.max(0.0).sqrt();
            // delta method for the stderr of the square root
            let stderr = if norm > 0.0 { se_q / (2.0 * norm) } else { 0.0 };
            Ok(TangentSensitivity {
                out_idx,
                norm,
                repr: SensRepr::Probes { m: *m, stderr },
            })
        }
    }
}

/// Mean over the dataset of the per-sample sensitivity norm (the quantity
/// the correlation experiments track). This is the mean of norms; see
/// [`mean_sensitivity_norm`] for the norm of the mean matrix.
pub fn avg_ts_norm(
    net: &Network,
    inputs: &[Vec<f64>],
    out_idx: usize,
    method: &SensMethod,
) -> Result<f64> {
    Ok(avg_ts_norm_multi(net, inputs, &[out_idx], method)?[0])
}

/// [`avg_ts_norm`] for several output neurons at once, sharing the forward
/// and probe work. Probe methods reuse one probe bank across all samples
/// (common random directions; each per-sample estimate stays unbiased).
pub fn avg_ts_norm_multi(
    net: &Network,
    inputs: &[Vec<f64>],
    out_idxs: &[usize],
    method: &SensMethod,
) -> Result<Vec<f64>> {
    per_sample_norms_multi(net, inputs, out_idxs, method).map(|per_sample| {
        (0..out_idxs.len())
            .map(|c| per_sample.iter().map(|row| row[c]).sum::<f64>() / per_sample.len() as f64)
            .collect()
    })
}

/// Max over the dataset of the per-sample sensitivity norm (the running
/// supremum the trajectory bookkeeping tracks).
pub fn max_ts_norm_multi(
    net: &Network,
    inputs: &[Vec<f64>],
    out_idxs: &[usize],
    method: &SensMethod,
) -> Result<Vec<f64>> {
    per_sample_norms_multi(net, inputs, out_idxs, method).map(|per_sample| {
        (0..out_idxs.len())
            .map(|c| {
                per_sample
                    .iter()
                    .map(|row| row[c])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    })
}

fn per_sample_norms_multi(
    net: &Network,
    inputs: &[Vec<f64>],
    out_idxs: &[usize],
    method: &SensMethod,
) -> Result<Vec<Vec<f64>>> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    match method {
        SensMethod::Probes { m, seed } => {
            let bank = ProbeBank::new(net, *m, *seed)?;
            inputs
                .iter()
                .map(|x| {
                    let ests = bank.sq_norm_estimates(net, x, out_idxs)?;
                    Ok(ests.iter().map(|(q, _)| q.max(0.0).sqrt()).collect())
                })
                .collect()
        }
        _ => inputs
            .iter()
            .map(|x| {
                out_idxs
                    .iter()
                    .map(|&c| ts_frobenius_norm(net, x, c, method))
                    .collect()
            })
            .collect(),
    }
}

/// Frobenius norm of the averaged sensitivity matrix
/// `|(1/n) sum_x S(theta, x)|_F`. Builds exact matrices, so it is subject to
/// the same size limits as [`SensMethod::Exact`].
pub fn mean_sensitivity_norm(net: &Network, inputs: &[Vec<f64>], out_idx: usize) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut acc: Option<Matrix> = None;
    for x in inputs {
        let s = tangent_sensitivity_exact(net, x, out_idx)?;
        let m = match s.repr {
            SensRepr::Exact(m) => m,
            _ => unreachable!(),
        };
        match &mut acc {
            None => acc = Some(m),
            Some(a) => a.add_scaled(&m, 1.0)?,
        }
    }
    let mut mean = acc.unwrap();
    mean.scale(1.0 / inputs.len() as f64);
    Ok(mean.frobenius_norm())
}

/// Draws `m` perturbations `d ~ N(0, sigma I)`, measures the mean squared
/// gradient gap, and reports it next to `sigma |S|_F^2` and the fraction of
/// draws that kept the activation pattern of `x`.
pub fn gradient_perturbation_gap(
    net: &Network,
    x: &[f64],
    out_idx: usize,
    sigma: f64,
    m: usize,
    seed: u64,
) -> Result<PerturbationEstimate> {
    if sigma <= 0.0 {
        return Err(Error::invalid("sigma must be > 0"));
    }
    if m < 1 {
        return Err(Error::invalid("perturbation draw count must be >= 1"));
    }
    let base_grad = param_gradient(net, x, out_idx)?;
    let (_, base_pattern) = net.forward(x)?;
    let std = sigma.sqrt();
    let mut rng = RngState::new(seed);
    let mut sum_sq_gap = 0.0;
    let mut preserved = 0usize;
    for _ in 0..m {
        let noise = rng.gaussian_vector(x.len(), 0.0, std);
        let xp: Vec<f64> = x.iter().zip(noise.iter()).map(|(a, b)| a + b).collect();
        let g = param_gradient(net, &xp, out_idx)?;
        sum_sq_gap += sq_norm(&sub(g.as_slice(), base_grad.as_slice()));
        let (_, p) = net.forward(&xp)?;
        if p == base_pattern {
            preserved += 1;
        }
    }
    let sens_norm = ts_frobenius_norm(net, x, out_idx, &SensMethod::Layerwise)?;
    Ok(PerturbationEstimate {
        sigma,
        m,
        mean_sq_gap: sum_sq_gap / m as f64,
        bound_value: sigma * sens_norm * sens_norm,
        region_preserved_fraction: preserved as f64 / m as f64,
    })
}

/// Relative residual of the biasless-network identity
/// `grad_theta f = S(theta, x) x`:
/// `|grad - S x| / max(1, |grad|)`. Rejects networks with biases, where the
/// identity does not hold.
pub fn verify_lemma_relu(net: &Network, x: &[f64], out_idx: usize) -> Result<f64> {
    if !net.is_biasless() {
        return Err(Error::LemmaNotApplicable);
    }
    let grad = param_gradient(net, x, out_idx)?;
    let s = tangent_sensitivity_exact(net, x, out_idx)?;
    let sx = s.matrix().unwrap().matvec(x)?;
    let resid = euclidean_norm(&sub(grad.as_slice(), &sx));
    Ok(resid / euclidean_norm(grad.as_slice()).max(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::min_abs_preactivation;
    use crate::network::{Network, HE_SCALE};
    use crate::tensor::Matrix;

    fn boundary_safe_input(net: &Network, rng: &mut RngState, threshold: f64) -> Vec<f64> {
        loop {
            let x = rng.gaussian_vector(net.n_in(), 0.0, 1.0);
            if min_abs_preactivation(net, &x).unwrap() > threshold {
                return x;
            }
        }
    }

    fn linear_net() -> Network {
        Network::from_parts(
            vec![Matrix::from_rows(&[vec![0.7, -0.4, 1.3]]).unwrap()],
            None,
        )
        .unwrap()
    }

    #[test]
    fn linear_model_sensitivity_is_identity() {
        let net = linear_net();
        let s = tangent_sensitivity_exact(&net, &[0.1, 0.2, 0.3], 0).unwrap();
        assert_eq!(s.matrix().unwrap(), &Matrix::identity(3));
        let sqrt3 = 3.0_f64.sqrt();
        for method in [
            SensMethod::Exact,
            SensMethod::Layerwise,
            SensMethod::Probes { m: 4000, seed: 5 },
        ] {
            let n = ts_frobenius_norm(&net, &[0.1, 0.2, 0.3], 0, &method).unwrap();
            let tol = if matches!(method, SensMethod::Probes { .. }) {
                0.1
            } else {
                1e-12
            };
            assert!((n - sqrt3).abs() < tol, "{method:?}: {n} vs {sqrt3}");
        }
    }

    #[test]
    fn exact_matches_finite_difference_columns() {
        let net = Network::init(&[4, 6, 1], true, 2, HE_SCALE).unwrap();
        let mut rng = RngState::new(91);
        let x = boundary_safe_input(&net, &mut rng, 1e-2);
        let s = tangent_sensitivity_exact(&net, &x, 0).unwrap();
        let mat = s.matrix().unwrap();
        let h = 1e-5;
        for r in 0..4 {
            let mut xp = x.clone();
            xp[r] += h;
            let mut xm = x.clone();
            xm[r] -= h;
            let gp = param_gradient(&net, &xp, 0).unwrap();
            let gm = param_gradient(&net, &xm, 0).unwrap();
            for p in 0..mat.rows() {
                let fd = (gp.as_slice()[p] - gm.as_slice()[p]) / (2.0 * h);
                let exact = mat.get(p, r);
                let denom = exact.abs().max(fd.abs()).max(1e-6);
                assert!(
                    ((fd - exact) / denom).abs() < 1e-4,
                    "entry ({p},{r}): fd {fd} vs exact {exact}"
                );
            }
        }
    }

    #[test]
    fn sensitivity_is_constant_along_rays() {
        let net = Network::init(&[3, 5, 5, 1], true, 8, HE_SCALE).unwrap();
        let x = [0.5, -0.8, 0.2];
        let cx: Vec<f64> = x.iter().map(|v| 4.0 * v).collect();
        let s1 = tangent_sensitivity_exact(&net, &x, 0).unwrap();
        let s2 = tangent_sensitivity_exact(&net, &cx, 0).unwrap();
        assert_eq!(s1.matrix().unwrap(), s2.matrix().unwrap());
    }

    #[test]
    fn layerwise_equals_exact() {
        for seed in [1, 2, 3] {
            let net = Network::init(&[5, 8, 1], true, seed, HE_SCALE).unwrap();
            let mut rng = RngState::new(seed + 100);
            let x = rng.gaussian_vector(5, 0.0, 1.0);
            let exact = ts_frobenius_norm(&net, &x, 0, &SensMethod::Exact).unwrap();
            let layer = ts_frobenius_norm(&net, &x, 0, &SensMethod::Layerwise).unwrap();
            assert!(
                (exact - layer).abs() <= 1e-10 * exact.max(1e-300),
                "exact {exact} vs layerwise {layer}"
            );
        }
    }

    #[test]
    fn layerwise_equals_exact_with_biases() {
        let mut net = Network::init(&[4, 6, 3], false, 12, HE_SCALE).unwrap();
        let p = net.param_count();
        net.apply_step(&vec![-0.02; p]).unwrap();
        let x = [0.3, -0.1, 0.8, 0.4];
        for c in 0..3 {
            let exact = ts_frobenius_norm(&net, &x, c, &SensMethod::Exact).unwrap();
            let layer = ts_frobenius_norm(&net, &x, c, &SensMethod::Layerwise).unwrap();
            assert!((exact - layer).abs() <= 1e-10 * exact.max(1e-300));
        }
    }

    #[test]
    fn bias_rows_are_zero() {
        let mut net = Network::init(&[3, 4, 2], false, 6, HE_SCALE).unwrap();
        let p = net.param_count();
        net.apply_step(&vec![0.03; p]).unwrap();
        let s = tangent_sensitivity_exact(&net, &[0.5, 0.5, -0.25], 0).unwrap();
        let mat = s.matrix().unwrap();
        let layout = net.layout();
        for k in 0..net.depth() {
            let off = layout.bias_offset(k).unwrap();
            for row in off..off + layout.dims[k + 1] {
                assert!(mat.row(row).iter().all(|&v| v == 0.0), "bias row {row}");
            }
        }
    }

    #[test]
    fn probe_estimate_concentrates() {
        let net = Network::init(&[5, 8, 1], true, 21, HE_SCALE).unwrap();
        let mut rng = RngState::new(77);
        let x = rng.gaussian_vector(5, 0.0, 1.0);
        let exact = ts_frobenius_norm(&net, &x, 0, &SensMethod::Exact).unwrap();
        let probe =
            ts_frobenius_norm(&net, &x, 0, &SensMethod::Probes { m: 2000, seed: 3 }).unwrap();
        assert!(
            ((probe - exact) / exact).abs() < 0.05,
            "probe {probe} vs exact {exact}"
        );
    }

    #[test]
    fn avg_norm_basic_properties() {
        let net = Network::init(&[3, 6, 2], true, 14, HE_SCALE).unwrap();
        let mut rng = RngState::new(4);
        let a = rng.gaussian_vector(3, 0.0, 1.0);
        let b = rng.gaussian_vector(3, 0.0, 1.0);
        let single = avg_ts_norm(&net, &[a.clone()], 0, &SensMethod::Exact).unwrap();
        let norm_a = ts_frobenius_norm(&net, &a, 0, &SensMethod::Exact).unwrap();
        assert_eq!(single, norm_a);

        let norm_b = ts_frobenius_norm(&net, &b, 0, &SensMethod::Exact).unwrap();
        let two = avg_ts_norm(&net, &[a.clone(), b.clone()], 0, &SensMethod::Exact).unwrap();
        assert!((two - 0.5 * (norm_a + norm_b)).abs() < 1e-12);

        let dup = avg_ts_norm(
            &net,
            &[a.clone(), b.clone(), a.clone(), b.clone()],
            0,
            &SensMethod::Exact,
        )
        .unwrap();
        assert!((dup - two).abs() < 1e-12);
    }

    #[test]
    fn avg_norm_rejects_empty() {
        let net = linear_net();
        assert!(matches!(
            avg_ts_norm(&net, &[], 0, &SensMethod::Exact),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn mean_matrix_norm_single_sample_equals_exact() {
        let net = Network::init(&[3, 5, 1], true, 33, HE_SCALE).unwrap();
        let x = vec![0.4, 0.1, -0.9];
        let m = mean_sensitivity_norm(&net, &[x.clone()], 0).unwrap();
        let e = ts_frobenius_norm(&net, &x, 0, &SensMethod::Exact).unwrap();
        assert_eq!(m, e);
    }

    #[test]
    fn mean_matrix_cancellation_on_crafted_net() {
        // One input unit feeding u1 = relu(x) and u2 = relu(-x); both second
        // layer units see u1 + u2 = |x|, and the top layer takes their
        // difference. The two region sensitivities have norm 2 each, while
        // their average has norm 1 (hand arithmetic over the two regions).
        let w1 = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let w2 = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let w3 = Matrix::from_rows(&[vec![1.0, -1.0]]).unwrap();
        let net = Network::from_parts(vec![w1, w2, w3], None).unwrap();
        let inputs = vec![vec![1.0], vec![-1.0]];
        let avg = avg_ts_norm(&net, &inputs, 0, &SensMethod::Exact).unwrap();
        let mean = mean_sensitivity_norm(&net, &inputs, 0).unwrap();
        assert!((avg - 2.0).abs() < 1e-12, "avg of norms {avg}");
        assert!((mean - 1.0).abs() < 1e-12, "norm of mean {mean}");
    }

    #[test]
    fn mean_matrix_norm_three_sample_oracle() {
        let net = Network::init(&[4, 7, 2], true, 50, HE_SCALE).unwrap();
        let mut rng = RngState::new(51);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| rng.gaussian_vector(4, 0.0, 1.0)).collect();
        let got = mean_sensitivity_norm(&net, &xs, 1).unwrap();
        // independent oracle: explicit mean matrix
        let mats: Vec<Matrix> = xs
            .iter()
            .map(|x| {
                tangent_sensitivity_exact(&net, x, 1)
                    .unwrap()
                    .matrix()
                    .unwrap()
                    .clone()
            })
            .collect();
        let mut mean = Matrix::zeros(mats[0].rows(), mats[0].cols());
        for m in &mats {
            mean.add_scaled(m, 1.0 / 3.0).unwrap();
        }
        assert!((got - mean.frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn perturbation_gap_linear_model_closed_form() {
        let net = linear_net();
        let est = gradient_perturbation_gap(&net, &[0.3, 0.3, 0.3], 0, 0.01, 4000, 9).unwrap();
        // gap is |delta|^2 with delta ~ N(0, sigma I_3): expectation 3 sigma
        let expect = 3.0 * 0.01;
        assert!(
            (est.mean_sq_gap - expect).abs() < 0.15 * expect,
            "mean sq gap {} vs {}",
            est.mean_sq_gap,
            expect
        );
        assert_eq!(est.region_preserved_fraction, 1.0);
        assert!((est.bound_value - expect).abs() < 1e-12);
    }

    #[test]
    fn perturbation_sandwich_inside_region() {
        let mut rng = RngState::new(314);
        let mut checked = 0;
        for seed in 0..12u64 {
            let net = Network::init(&[5, 10, 1], true, 1000 + seed, HE_SCALE).unwrap();
            let x = boundary_safe_input(&net, &mut rng, 1e-2);
            let sigma = 1e-6 * sq_norm(&x);
            let est = gradient_perturbation_gap(&net, &x, 0, sigma, 500, 400 + seed).unwrap();
            if est.region_preserved_fraction >= 0.95 {
                checked += 1;
                assert!(
                    (est.mean_sq_gap - est.bound_value).abs() <= 0.1 * est.bound_value,
                    "seed {seed}: gap {} vs bound {}",
                    est.mean_sq_gap,
                    est.bound_value
                );
            }
        }
        assert!(checked >= 8, "too few region-preserving cases: {checked}");
    }

    #[test]
    fn lemma_identity_linear_model_exact() {
        let net = linear_net();
        let r = verify_lemma_relu(&net, &[0.2, -0.5, 0.9], 0).unwrap();
        assert_eq!(r, 0.0);
    }

    #[test]
    fn lemma_identity_deep_biasless() {
        let net = Network::init(&[6, 10, 10, 1], true, 1234, HE_SCALE).unwrap();
        let mut rng = RngState::new(17);
        for _ in 0..100 {
            let x = rng.gaussian_vector(6, 0.0, 1.0);
            let r = verify_lemma_relu(&net, &x, 0).unwrap();
            assert!(r <= 1e-9, "residual {r}");
        }
    }

    #[test]
    fn lemma_rejects_biased_networks() {
        let mut net = Network::init(&[3, 4, 1], false, 2, HE_SCALE).unwrap();
        let p = net.param_count();
        net.apply_step(&vec![-0.1; p]).unwrap();
        assert!(matches!(
            verify_lemma_relu(&net, &[1.0, 2.0, 3.0], 0),
            Err(Error::LemmaNotApplicable)
        ));
        // and the raw residual is generically nonzero on such a net
        let grad = param_gradient(&net, &[1.0, 2.0, 3.0], 0).unwrap();
        let s = tangent_sensitivity_exact(&net, &[1.0, 2.0, 3.0], 0).unwrap();
        let sx = s.matrix().unwrap().matvec(&[1.0, 2.0, 3.0]).unwrap();
        let resid = euclidean_norm(&sub(grad.as_slice(), &sx));
        assert!(resid > 1e-6, "biased residual unexpectedly small: {resid}");
    }

    #[test]
    fn probe_bank_multi_matches_single_calls() {
        let net = Network::init(&[4, 9, 3], true, 600, HE_SCALE).unwrap();
        let x = [0.2, -0.7, 0.5, 0.1];
        let bank = ProbeBank::new(&net, 64, 42).unwrap();
        let multi = bank.sq_norm_estimates(&net, &x, &[0, 2]).unwrap();
        for (pos, &c) in [0usize, 2].iter().enumerate() {
            let single =
                ts_norm_detailed(&net, &x, c, &SensMethod::Probes { m: 64, seed: 42 }).unwrap();
            assert!((multi[pos].0.sqrt() - single.norm).abs() < 1e-12);
        }
    }

    #[test]
    fn auto_method_switches_on_entry_budget() {
        let small = Network::init(&[4, 4, 1], true, 0, 1.0).unwrap();
        assert!(matches!(auto_method(&small, 64, 0), SensMethod::Exact));
        let large = Network::init(&[784, 3000, 3000, 3000, 10], true, 0, 0.0).unwrap();
        assert!(matches!(
            auto_method(&large, 64, 0),
            SensMethod::Probes { m: 64, .. }
        ));
    }
}
