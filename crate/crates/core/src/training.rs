//! Training with full trajectory bookkeeping.
//!
//! The theory this crate serves is stated for full-batch gradient descent
//! `theta_t = theta_{t-1} - eta(t) grad L(theta_{t-1})`; SGD and Adam are
//! provided for experiment parity and every record they produce carries an
//! out-of-theory flag. Along the run the recorder tracks:
//!
//! - the learning-rate weighted mean loss-derivative accumulators
//!   `sum_t eta(t) * (1/n) sum_i dl/df(theta_{t-1}, x_i)` (signed, and with
//!   absolute values per step, which dominates the signed sum and is the
//!   rigorous choice for bounding the accumulated displacement);
//! - distances `|theta_t - theta_0|` at every recorded checkpoint;
//! - the running supremum over the training set of the sensitivity norm per
//!   tracked output neuron;
//! - per-class train/test losses and residual ranges.
//!
//! For full-batch GD the update sum is accumulated separately from the
//! applied updates, so the displacement identity
//! `theta_T - theta_0 = -sum_t eta(t) grad L(theta_{t-1})` can be checked to
//! floating-point accumulation error, and the accumulated vector equals the
//! linear-classifier direction of the bound's proof. The sum runs over
//! `t = 1..=T`: that is the convention under which the identity is exact.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grad::{margin_loss_gradient, param_gradient, MarginLoss, SquaredLoss};
use crate::network::{Network, NetworkLayout, ParamVector};
use crate::sensitivity::{max_ts_norm_multi, SensMethod};
use crate::tensor::{axpy, dot, euclidean_norm, sub, RngState};

/// Per-step learning rates; `rate(t)` is the rate applied at step `t >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    rates: Vec<f64>,
}

impl Schedule {
    pub fn constant(eta: f64, steps: usize) -> Result<Schedule> {
        Schedule::from_rates(vec![eta; steps])
    }

    pub fn from_rates(rates: Vec<f64>) -> Result<Schedule> {
        if rates.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        Ok(Schedule { rates })
    }

    pub fn steps(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, t: usize) -> f64 {
        self.rates[t - 1]
    }

    pub fn scaled(&self, factor: f64) -> Result<Schedule> {
        Schedule::from_rates(self.rates.iter().map(|r| r * factor).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    /// Full-batch gradient descent (the in-theory optimizer).
    Gd,
    /// Seeded minibatch SGD; out of theory, experiment parity only.
    Sgd { batch: usize, seed: u64 },
    /// Full-batch Adam; out of theory, experiment parity only.
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam_default() -> Optimizer {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn is_full_batch_gd(&self) -> bool {
        matches!(self, Optimizer::Gd)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Gd => "gd",
            Optimizer::Sgd { .. } => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }
}

/// What to record during training.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Checkpoint stride in steps; the initial state and the final step are
    /// always recorded.
    pub record_every: usize,
    /// Output neurons whose losses, residuals, and sensitivity suprema are
    /// tracked.
    pub tracked_outputs: Vec<usize>,
    /// Method for the running sensitivity supremum over the training set;
    /// `None` skips that tracking.
    pub cts_method: Option<SensMethod>,
    /// Abort with a step-size diagnostic when full-batch GD increases the
    /// training loss (the descent property the bookkeeping relies on).
    pub abort_on_loss_increase: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            record_every: 1,
            tracked_outputs: vec![0],
            cts_method: Some(SensMethod::Layerwise),
            abort_on_loss_increase: true,
        }
    }
}

/// One recorded trajectory point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    /// `theta_t - theta_0` in flat layout.
    pub displacement: Vec<f64>,
    /// `|theta_t - theta_0|`.
    pub epsilon_distance: f64,
    /// Accumulator prefix values at this step.
    pub cgd_signed: f64,
    pub cgd_abs: f64,
    /// Per tracked output neuron.
    pub train_loss: Vec<f64>,
    /// Per tracked output neuron; empty when no test set was supplied.
    pub test_loss: Vec<f64>,
    /// Max over the training set of `|f_c - y_c|` per tracked neuron.
    pub max_abs_residual: Vec<f64>,
    /// Max over the training set of the sensitivity norm per tracked neuron;
    /// empty when tracking is off.
    pub running_cts: Vec<f64>,
}

/// Everything recorded over one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub layout: NetworkLayout,
    pub theta0: ParamVector,
    pub schedule: Schedule,
    pub optimizer: Optimizer,
    /// Set for any optimizer other than full-batch GD: bound-related
    /// quantities derived from this record are outside the theory's
    /// assumptions.
    pub out_of_theory: bool,
    pub tracked_outputs: Vec<usize>,
    pub checkpoints: Vec<Checkpoint>,
    /// Per-step `(cgd_signed, cgd_abs)` prefix series, index `t-1`.
    pub cgd_steps: Vec<(f64, f64)>,
    /// For full-batch GD: `sum_t eta(t) grad L(theta_{t-1})`, accumulated
    /// separately from the applied updates. Empty otherwise.
    pub update_sum: Vec<f64>,
}

impl TrajectoryRecord {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("at least theta0 recorded")
    }

    pub fn cgd_signed(&self) -> f64 {
        self.cgd_steps.last().map_or(0.0, |&(s, _)| s)
    }

    pub fn cgd_abs(&self) -> f64 {
        self.cgd_steps.last().map_or(0.0, |&(_, a)| a)
    }

    /// Network at a recorded checkpoint.
    pub fn network_at(&self, checkpoint_idx: usize) -> Result<Network> {
        let ck = self
            .checkpoints
            .get(checkpoint_idx)
            .ok_or_else(|| Error::invalid("checkpoint index out of range"))?;
        let theta: Vec<f64> = self
            .theta0
            .as_slice()
            .iter()
            .zip(ck.displacement.iter())
            .map(|(a, b)| a + b)
            .collect();
        Network::unflatten(&self.layout, &ParamVector(theta))
    }

    pub fn initial_network(&self) -> Result<Network> {
        Network::unflatten(&self.layout, &self.theta0)
    }

    pub fn final_network(&self) -> Result<Network> {
        self.network_at(self.checkpoints.len() - 1)
    }

    /// Largest sensitivity supremum seen over the recorded trajectory for
    /// one tracked output neuron.
    pub fn max_running_cts(&self, out_idx: usize) -> Result<f64> {
        let pos = self
            .tracked_outputs
            .iter()
            .position(|&c| c == out_idx)
            .ok_or_else(|| Error::invalid(format!("output {out_idx} was not tracked")))?;
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for ck in &self.checkpoints {
            if let Some(&v) = ck.running_cts.get(pos) {
                max = max.max(v);
                any = true;
            }
        }
        if !any {
            return Err(Error::invalid(
                "record has no sensitivity tracking (cts_method was None)",
            ));
        }
        Ok(max)
    }

    /// Deterministic CSV export: one row per checkpoint.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["t".to_string()];
        for &c in &self.tracked_outputs {
            header.push(format!("train_loss_c{c}"));
        }
        let has_test = self.checkpoints.iter().any(|ck| !ck.test_loss.is_empty());
        if has_test {
            for &c in &self.tracked_outputs {
                header.push(format!("test_loss_c{c}"));
            }
        }
        header.push("cgd_signed".to_string());
        header.push("cgd_abs".to_string());
        header.push("epsilon_distance".to_string());
        let has_cts = self.checkpoints.iter().any(|ck| !ck.running_cts.is_empty());
        if has_cts {
            for &c in &self.tracked_outputs {
                header.push(format!("running_cts_c{c}"));
            }
        }
        let mut out = header.join(",");
        out.push('\n');
        for ck in &self.checkpoints {
            let mut row = vec![ck.step.to_string()];
            for v in &ck.train_loss {
                row.push(format!("{v}"));
            }
            if has_test {
                for v in &ck.test_loss {
                    row.push(format!("{v}"));
                }
            }
            row.push(format!("{}", ck.cgd_signed));
            row.push(format!("{}", ck.cgd_abs));
            row.push(format!("{}", ck.epsilon_distance));
            if has_cts {
                for v in &ck.running_cts {
                    row.push(format!("{v}"));
                }
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<TrajectoryRecord> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }
}

/// First-order Taylor remainder of the network output around `theta_0`:
/// `h = f(theta_T, x) - f(theta_0, x) - <grad f(theta_0, x), theta_T - theta_0>`.
#[derive(Debug, Clone, Copy)]
pub struct TaylorResidual {
    pub h_value: f64,
    pub f_initial: f64,
    pub f_final: f64,
    pub linear_term: f64,
}

/// Result of checking the accumulator bound.
#[derive(Debug, Clone, Copy)]
pub struct CgdCheck {
    pub passes: bool,
    pub bound: f64,
    pub final_signed: f64,
    pub final_abs: f64,
    /// First step `t` whose prefix exceeds the bound, if any.
    pub first_violation_step: Option<usize>,
}

struct BatchEval {
    /// Gradient of the mean summed-output loss.
    grad: Vec<f64>,
    /// `(1/n) sum_j sum_i dl/df_i(theta, x_j)`.
    mean_dldf: f64,
    /// Mean summed-output loss.
    total_loss: f64,
}

fn eval_batch(
    net: &Network,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    idxs: &[usize],
    loss: &dyn MarginLoss,
) -> Result<BatchEval> {
    let n = idxs.len() as f64;
    let mut grad = vec![0.0; net.param_count()];
    let mut sum_dldf = 0.0;
    let mut sum_loss = 0.0;
    for &j in idxs {
        let (g, outputs) = margin_loss_gradient(net, &inputs[j], &targets[j], loss)?;
        axpy(&mut grad, 1.0, g.as_slice());
        for (f, t) in outputs.iter().zip(targets[j].iter()) {
            let u = f - t;
            sum_dldf += loss.derivative(u);
            sum_loss += loss.value(u);
        }
    }
    for g in &mut grad {
        *g /= n;
    }
    Ok(BatchEval {
        grad,
        mean_dldf: sum_dldf / n,
        total_loss: sum_loss / n,
    })
}

/// Mean loss of one output neuron against its `+/-1` view.
fn class_loss(
    net: &Network,
    data: &Dataset,
    targets: &[f64],
    out_idx: usize,
    loss: &dyn MarginLoss,
) -> Result<(f64, f64)> {
    let mut sum = 0.0;
    let mut max_resid = 0.0f64;
    for (x, &t) in data.inputs.iter().zip(targets.iter()) {
        let f = net.forward(x)?.0[out_idx];
        let u = f - t;
        sum += loss.value(u);
        max_resid = max_resid.max(u.abs());
    }
    Ok((sum / data.len() as f64, max_resid))
}

/// One full-batch gradient step on the mean squared loss.
pub fn gd_step(net: &Network, data: &Dataset, eta: f64) -> Result<Network> {
    if !(eta > 0.0) {
        return Err(Error::invalid("learning rate must be positive"));
    }
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let targets = data.targets_pm1(net.n_out())?;
    let idxs: Vec<usize> = (0..data.len()).collect();
    let eval = eval_batch(net, &data.inputs, &targets, &idxs, &SquaredLoss)?;
    let mut next = net.clone();
    let step: Vec<f64> = eval.grad.iter().map(|g| eta * g).collect();
    next.apply_step(&step)?;
    Ok(next)
}

/// Trains `net0` on `data` under `schedule` and `optimizer`, recording the
/// trajectory quantities described on [`TrajectoryRecord`]. The squared loss
/// is summed over output neurons, which reduces to the plain squared loss
/// for single-output networks.
pub fn train(
    net0: &Network,
    data: &Dataset,
    test_data: Option<&Dataset>,
    schedule: &Schedule,
    optimizer: &Optimizer,
    options: &TrainOptions,
) -> Result<TrajectoryRecord> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if options.record_every == 0 {
        return Err(Error::invalid("record_every must be >= 1"));
    }
    if let Some(&bad) = options
        .tracked_outputs
        .iter()
        .find(|&&c| c >= net0.n_out())
    {
        return Err(Error::invalid(format!(
            "tracked output {bad} out of range (n_out = {})",
            net0.n_out()
        )));
    }
    let loss = SquaredLoss;
    let targets = data.targets_pm1(net0.n_out())?;
    let test_targets = test_data
        .map(|td| td.targets_pm1(net0.n_out()))
        .transpose()?;
    let tracked_train: Vec<Vec<f64>> = options
        .tracked_outputs
        .iter()
        .map(|&c| targets.iter().map(|t| t[c]).collect())
        .collect();
    let tracked_test: Option<Vec<Vec<f64>>> = test_targets.as_ref().map(|tt| {
        options
            .tracked_outputs
            .iter()
            .map(|&c| tt.iter().map(|t| t[c]).collect())
            .collect()
    });

    let layout = net0.layout();
    let theta0 = net0.flatten();
    let mut net = net0.clone();
    let steps = schedule.steps();
    let full_gd = optimizer.is_full_batch_gd();

    let mut update_sum = if full_gd {
        vec![0.0; layout.param_count()]
    } else {
        Vec::new()
    };
    let mut cgd_signed = 0.0;
    let mut cgd_abs = 0.0;
    let mut cgd_steps: Vec<(f64, f64)> = Vec::with_capacity(steps);

    let record_checkpoint = |net_t: &Network,
                             step: usize,
                             cgd_signed: f64,
                             cgd_abs: f64|
     -> Result<Checkpoint> {
        let theta_t = net_t.flatten();
        let displacement = sub(theta_t.as_slice(), theta0.as_slice());
        let epsilon_distance = euclidean_norm(&displacement);
        let mut train_loss = Vec::with_capacity(options.tracked_outputs.len());
        let mut max_abs_residual = Vec::with_capacity(options.tracked_outputs.len());
        for (pos, &c) in options.tracked_outputs.iter().enumerate() {
            let (l, r) = class_loss(net_t, data, &tracked_train[pos], c, &loss)?;
            train_loss.push(l);
            max_abs_residual.push(r);
        }
        let mut test_loss = Vec::new();
        if let (Some(td), Some(tt)) = (test_data, tracked_test.as_ref()) {
            for (pos, &c) in options.tracked_outputs.iter().enumerate() {
                let (l, _) = class_loss(net_t, td, &tt[pos], c, &loss)?;
                test_loss.push(l);
            }
        }
        let running_cts = match &options.cts_method {
            Some(method) => {
                max_ts_norm_multi(net_t, &data.inputs, &options.tracked_outputs, method)?
            }
            None => Vec::new(),
        };
        Ok(Checkpoint {
            step,
            displacement,
            epsilon_distance,
            cgd_signed,
            cgd_abs,
            train_loss,
            test_loss,
            max_abs_residual,
            running_cts,
        })
    };

    let mut checkpoints = vec![record_checkpoint(&net, 0, 0.0, 0.0)?];

    // optimizer state
    let mut sgd_rng = match optimizer {
        Optimizer::Sgd { seed, .. } => Some(RngState::new(*seed)),
        _ => None,
    };
    let mut adam_m = vec![0.0; layout.param_count()];
    let mut adam_v = vec![0.0; layout.param_count()];
    let mut prev_full_loss: Option<f64> = None;
    let all_idxs: Vec<usize> = (0..data.len()).collect();

    for t in 1..=steps {
        let eta = schedule.rate(t);
        let (step_vec, mean_dldf) = match optimizer {
            Optimizer::Gd => {
                let eval = eval_batch(&net, &data.inputs, &targets, &all_idxs, &loss)?;
                if options.abort_on_loss_increase {
                    if let Some(prev) = prev_full_loss {
                        if eval.total_loss > prev * (1.0 + 1e-9) + 1e-12 {
                            return Err(Error::DivergingStep {
                                step: t - 1,
                                prev,
                                next: eval.total_loss,
                            });
                        }
                    }
                    prev_full_loss = Some(eval.total_loss);
                }
                axpy(&mut update_sum, eta, &eval.grad);
                let step_vec: Vec<f64> = eval.grad.iter().map(|g| eta * g).collect();
                (step_vec, eval.mean_dldf)
            }
            Optimizer::Sgd { batch, .. } => {
                let rng = sgd_rng.as_mut().unwrap();
                let b = (*batch).clamp(1, data.len());
                let mut idxs: Vec<usize> = (0..data.len()).collect();
                rng.shuffle(&mut idxs);
                idxs.truncate(b);
                let eval = eval_batch(&net, &data.inputs, &targets, &idxs, &loss)?;
                let step_vec: Vec<f64> = eval.grad.iter().map(|g| eta * g).collect();
                (step_vec, eval.mean_dldf)
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let eval = eval_batch(&net, &data.inputs, &targets, &all_idxs, &loss)?;
                let tf = t as f64;
                let bc1 = 1.0 - beta1.powf(tf);
                let bc2 = 1.0 - beta2.powf(tf);
                let mut step_vec = vec![0.0; eval.grad.len()];
                for (i, &g) in eval.grad.iter().enumerate() {
                    adam_m[i] = beta1 * adam_m[i] + (1.0 - beta1) * g;
                    adam_v[i] = beta2 * adam_v[i] + (1.0 - beta2) * g * g;
                    let m_hat = adam_m[i] / bc1;
                    let v_hat = adam_v[i] / bc2;
                    step_vec[i] = eta * m_hat / (v_hat.sqrt() + eps);
                }
                (step_vec, eval.mean_dldf)
            }
        };

        let term = eta * mean_dldf;
        cgd_signed += term;
        cgd_abs += term.abs();
        cgd_steps.push((cgd_signed, cgd_abs));

        net.apply_step(&step_vec)?;

        if t % options.record_every == 0 || t == steps {
            checkpoints.push(record_checkpoint(&net, t, cgd_signed, cgd_abs)?);
        }
    }

    // final descent check covers the last applied step
    if full_gd && options.abort_on_loss_increase && steps > 0 {
        let eval = eval_batch(&net, &data.inputs, &targets, &all_idxs, &loss)?;
        if let Some(prev) = prev_full_loss {
            if eval.total_loss > prev * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::DivergingStep {
                    step: steps,
                    prev,
                    next: eval.total_loss,
                });
            }
        }
    }

    Ok(TrajectoryRecord {
        layout,
        theta0,
        schedule: schedule.clone(),
        optimizer: *optimizer,
        out_of_theory: !full_gd,
        tracked_outputs: options.tracked_outputs.clone(),
        checkpoints,
        cgd_steps,
        update_sum,
    })
}

/// The accumulated gradient-descent direction
/// `sum_t eta(t) (1/n) sum_i dl/df grad f(theta_{t-1}, x_i)`. For full-batch
/// GD this equals `theta_0 - theta_T` up to floating-point accumulation
/// order; rejects records from other optimizers.
pub fn w_theta(record: &TrajectoryRecord) -> Result<Vec<f64>> {
    if !record.optimizer.is_full_batch_gd() {
        return Err(Error::invalid(
            "w_theta requires a record from full-batch gradient descent",
        ));
    }
    Ok(record.update_sum.clone())
}

/// First-order Taylor remainder of `f` at `x` between two parameter
/// snapshots sharing an architecture.
pub fn taylor_residual(
    net0: &Network,
    net_t: &Network,
    x: &[f64],
    out_idx: usize,
) -> Result<TaylorResidual> {
    if net0.layout() != net_t.layout() {
        return Err(Error::shape("taylor_residual: architecture mismatch"));
    }
    let f_initial = net0.forward_scalar(x, out_idx)?;
    let f_final = net_t.forward_scalar(x, out_idx)?;
    let grad0 = param_gradient(net0, x, out_idx)?;
    let disp = sub(net_t.flatten().as_slice(), net0.flatten().as_slice());
    let linear_term = dot(grad0.as_slice(), &disp);
    Ok(TaylorResidual {
        h_value: f_final - f_initial - linear_term,
        f_initial,
        f_final,
        linear_term,
    })
}

/// Checks both accumulators against a bound `C > 0`, reporting the first
/// step whose prefix violates it.
pub fn assert_cgd_bound(record: &TrajectoryRecord, c: f64) -> Result<CgdCheck> {
    if !(c > 0.0) {
        return Err(Error::invalid("cgd bound must be positive"));
    }
    let mut first_violation_step = None;
    for (i, &(signed, abs)) in record.cgd_steps.iter().enumerate() {
        if abs > c || signed > c {
            first_violation_step = Some(i + 1);
            break;
        }
    }
    Ok(CgdCheck {
        passes: first_violation_step.is_none(),
        bound: c,
        final_signed: record.cgd_signed(),
        final_abs: record.cgd_abs(),
        first_violation_step,
    })
}
