//! Data-side estimation of the generalization-bound ingredients and the
//! final assembly.
//!
//! The bound for a trained scalar classifier reads
//!
//! ```text
//! gap <= K_L * K_theta0  +  C1 / sqrt(N)  +  K_L * H  +  B * sqrt(2 log(4/delta) / N)
//! C1   = 2 K_L K_x K_grad0 C_TS C_GD
//! ```
//!
//! with the constants estimated as exact suprema over finite samples (and
//! labeled as such: they are sample suprema, not distribution suprema). The
//! `log` is the natural logarithm by default, with the base exposed as a
//! switch for sensitivity analysis. Rademacher complexities are estimated by
//! Monte Carlo over uniform sign vectors.

use std::io::Write as _;
use std::path::Path;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grad::{param_gradient, MarginLoss};
use crate::network::Network;
use crate::tensor::{axpy, euclidean_norm, sq_norm, Matrix, RngState};
use crate::training::{taylor_residual, TrajectoryRecord};

/// Where a constant's value came from.
pub const MEASURED_ON_SAMPLE: &str = "measured-on-sample";
pub const USER_SUPPLIED: &str = "user-supplied";

/// The estimated constants feeding the bound. All values are nonnegative;
/// measured values are exact maxima over the finite sample used.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantSet {
    /// Lipschitz constant of the margin loss on the observed range.
    pub k_l: f64,
    /// Upper bound of the loss on the observed range.
    pub b: f64,
    /// `sup |f(theta_0, x)|` over the sample.
    pub k_theta0: f64,
    /// `sup |grad_theta f(theta_0, x)|` over the sample.
    pub k_grad0: f64,
    /// `sup |x|` over the sample.
    pub k_x: f64,
    /// Supremum of the sensitivity norm along the recorded trajectory.
    pub c_ts: f64,
    /// Absolute learning-rate weighted loss-derivative accumulator (the
    /// rigorous default).
    pub c_gd: f64,
    /// Signed accumulator, shown alongside for comparison.
    pub c_gd_signed: f64,
    /// Margin range `M` the loss constants were evaluated on.
    pub residual_range: f64,
    /// Whether the trajectory came from an optimizer outside the theory.
    pub out_of_theory: bool,
    /// Per-constant origin notes, `(name, note)`.
    pub provenance: Vec<(String, String)>,
}

impl ConstantSet {
    /// Builds a set of hand-chosen constants (no measurement attached).
    pub fn user_supplied(
        k_l: f64,
        b: f64,
        k_theta0: f64,
        k_grad0: f64,
        k_x: f64,
        c_ts: f64,
        c_gd: f64,
    ) -> ConstantSet {
        let names = ["k_l", "b", "k_theta0", "k_grad0", "k_x", "c_ts", "c_gd"];
        ConstantSet {
            k_l,
            b,
            k_theta0,
            k_grad0,
            k_x,
            c_ts,
            c_gd,
            c_gd_signed: c_gd,
            residual_range: 0.0,
            out_of_theory: false,
            provenance: names
                .iter()
                .map(|n| (n.to_string(), USER_SUPPLIED.to_string()))
                .collect(),
        }
    }
}

/// Monte Carlo Rademacher complexity estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RademacherEstimate {
    /// Raw mean over sign draws of the per-draw supremum (can dip below zero
    /// for families not closed under negation).
    pub value: f64,
    pub stderr: f64,
    /// Number of sign-vector draws.
    pub draws: usize,
    pub family_size: usize,
    /// Sample length each family member is evaluated on.
    pub m: usize,
}

/// Monte Carlo estimate of the Rademacher complexity of a finite family of
/// real vectors (rows of `values`): the expectation over uniform `+/-1` sign
/// vectors of `sup_rows (1/m) sum_i sigma_i a_i`.
pub fn rademacher_mc(values: &Matrix, draws: usize, seed: u64) -> Result<RademacherEstimate> {
    let family_size = values.rows();
    let m = values.cols();
    if family_size == 0 || m == 0 {
        return Err(Error::invalid("rademacher_mc: empty family"));
    }
    if draws < 1 {
        return Err(Error::invalid("rademacher_mc: draws must be >= 1"));
    }
    let mut rng = RngState::new(seed);
    let mut sups = Vec::with_capacity(draws);
    let mut sigma = vec![0.0; m];
    for _ in 0..draws {
        for s in &mut sigma {
            *s = rng.rademacher_sign();
        }
        let sup = (0..family_size)
            .map(|r| {
                values
                    .row(r)
                    .iter()
                    .zip(sigma.iter())
                    .map(|(a, s)| a * s)
                    .sum::<f64>()
                    / m as f64
            })
            .fold(f64::NEG_INFINITY, f64::max);
        sups.push(sup);
    }
    let n = draws as f64;
    let value = sups.iter().sum::<f64>() / n;
    let stderr = if draws > 1 {
        let var = sups.iter().map(|v| (v - value) * (v - value)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        value,
        stderr,
        draws,
        family_size,
        m,
    })
}

/// Result of checking the linear-class Rademacher bound
/// `R <= cap * max_i |v_i| / sqrt(m)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearClassCheck {
    pub estimate: f64,
    pub bound: f64,
    pub passes: bool,
    pub margin: f64,
}

/// Estimates the Rademacher complexity of `{ sigma -> (1/m) sum_i sigma_i
/// <w, v_i> : |w| <= cap }` with the per-draw supremum taken exactly
/// (`w* = cap * sum_i sigma_i v_i / |...|`, by Cauchy-Schwarz), cross-checked
/// against a few random directions on the cap sphere, and verifies the
/// closed-form bound.
pub fn linear_class_bound_check(
    v_list: &[Vec<f64>],
    w_norm_cap: f64,
    draws: usize,
    seed: u64,
) -> Result<LinearClassCheck> {
    if v_list.is_empty() {
        return Err(Error::invalid("linear_class_bound_check: no vectors"));
    }
    if w_norm_cap < 0.0 {
        return Err(Error::invalid("norm cap must be >= 0"));
    }
    let m = v_list.len();
    let dim = v_list[0].len();
    if v_list.iter().any(|v| v.len() != dim) {
        return Err(Error::shape("vectors must share a dimension"));
    }
    let mut rng = RngState::new(seed);
    let mut acc = 0.0;
    for _ in 0..draws.max(1) {
        let signs: Vec<f64> = (0..m).map(|_| rng.rademacher_sign()).collect();
        let mut weighted = vec![0.0; dim];
        for (s, v) in signs.iter().zip(v_list.iter()) {
            axpy(&mut weighted, *s, v);
        }
        // exact supremum over the cap ball
        let mut sup = w_norm_cap * euclidean_norm(&weighted) / m as f64;
        // a few random directions can only fall below the exact supremum;
        // they guard the closed form against sign slips
        for _ in 0..4 {
            let mut w = rng.gaussian_vector(dim, 0.0, 1.0);
            let n = euclidean_norm(&w);
            if n > 0.0 {
                for wi in &mut w {
                    *wi *= w_norm_cap / n;
                }
                let val = w
                    .iter()
                    .zip(weighted.iter())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / m as f64;
                sup = sup.max(val);
            }
        }
        acc += sup;
    }
    let estimate = acc / draws.max(1) as f64;
    let max_norm = v_list
        .iter()
        .map(|v| euclidean_norm(v))
        .fold(0.0, f64::max);
    let bound = w_norm_cap * max_norm / (m as f64).sqrt();
    let margin = bound - estimate;
    Ok(LinearClassCheck {
        estimate,
        bound,
        passes: estimate <= bound * (1.0 + 1e-12) + 1e-15,
        margin,
    })
}

/// Rademacher estimate of the Taylor-remainder family plus its crude sup
/// bound.
#[derive(Debug, Clone)]
pub struct HEstimate {
    pub rademacher: RademacherEstimate,
    pub sup_abs_h: f64,
}

/// Estimates the remainder complexity over a finite family of trained models
/// sharing one initialization: builds the `family x N` matrix of Taylor
/// remainders `h(theta_T, z_j)` and runs the Monte Carlo estimator on it.
/// This is a finite-family stand-in for the full model class, so it reads as
/// a lower-bound-flavored estimate of the bound's remainder term.
pub fn estimate_h(
    model_family: &[(Network, Network)],
    sample: &Dataset,
    out_idx: usize,
    draws: usize,
    seed: u64,
) -> Result<HEstimate> {
    if model_family.is_empty() {
        return Err(Error::invalid("estimate_h: empty model family"));
    }
    if sample.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let theta0 = model_family[0].0.flatten();
    for (net0, net_t) in model_family {
        if net0.layout() != net_t.layout() {
            return Err(Error::shape("estimate_h: architecture mismatch in pair"));
        }
        if net0.flatten() != theta0 {
            return Err(Error::invalid(
                "estimate_h: all pairs must share the same initialization",
            ));
        }
    }
    let n = sample.len();
    let mut values = Matrix::zeros(model_family.len(), n);
    let mut sup_abs_h = 0.0f64;
    for (row, (net0, net_t)) in model_family.iter().enumerate() {
        for (col, x) in sample.inputs.iter().enumerate() {
            let h = taylor_residual(net0, net_t, x, out_idx)?.h_value;
            sup_abs_h = sup_abs_h.max(h.abs());
            values.set(row, col, h);
        }
    }
    let rademacher = rademacher_mc(&values, draws, seed)?;
    Ok(HEstimate {
        rademacher,
        sup_abs_h,
    })
}

/// Estimates every constant from the initialization, a sample, and a
/// recorded trajectory. `K_x`, `K_theta0`, and `K_grad0` are exact maxima
/// over the sample; `C_TS` and `C_GD` come from the record; the loss
/// constants are evaluated on the observed residual range times a safety
/// factor of 1.5.
pub fn estimate_constants(
    net0: &Network,
    sample: &Dataset,
    record: &TrajectoryRecord,
    loss: &dyn MarginLoss,
    out_idx: usize,
) -> Result<ConstantSet> {
    if sample.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if net0.flatten() != record.theta0 {
        return Err(Error::invalid(
            "estimate_constants: record comes from a different initialization",
        ));
    }
    let mut k_x = 0.0f64;
    let mut k_theta0 = 0.0f64;
    let mut k_grad0 = 0.0f64;
    for x in &sample.inputs {
        k_x = k_x.max(euclidean_norm(x));
        k_theta0 = k_theta0.max(net0.forward_scalar(x, out_idx)?.abs());
        k_grad0 = k_grad0.max(sq_norm(param_gradient(net0, x, out_idx)?.as_slice()));
    }
    let k_grad0 = k_grad0.sqrt();

    let c_ts = record.max_running_cts(out_idx)?;
    let c_gd = record.cgd_abs();
    let c_gd_signed = record.cgd_signed();

    // residual range: the train-side record already tracks max |f - y| per
    // checkpoint; extend it with the supplied sample at every checkpoint
    let tracked_pos = record
        .tracked_outputs
        .iter()
        .position(|&c| c == out_idx)
        .ok_or_else(|| Error::invalid(format!("output {out_idx} was not tracked")))?;
    let mut max_resid = record
        .checkpoints
        .iter()
        .filter_map(|ck| ck.max_abs_residual.get(tracked_pos))
        .fold(0.0f64, |a, &b| a.max(b));
    let sample_y = sample.binary_targets_for(out_idx)?;
    for (idx, _) in record.checkpoints.iter().enumerate() {
        let net_t = record.network_at(idx)?;
        for (x, &y) in sample.inputs.iter().zip(sample_y.iter()) {
            max_resid = max_resid.max((net_t.forward_scalar(x, out_idx)? - y).abs());
        }
    }
    let residual_range = 1.5 * max_resid;
    let k_l = loss.lipschitz_on(residual_range);
    let b = loss.upper_bound_on(residual_range);

    let sample_note = format!("{MEASURED_ON_SAMPLE} (n={})", sample.len());
    let record_note = format!(
        "{MEASURED_ON_SAMPLE} (trajectory, {} checkpoints)",
        record.checkpoints.len()
    );
    let loss_note = format!(
        "{} loss on residual range {residual_range} (observed max 1.5x)",
        loss.name()
    );
    Ok(ConstantSet {
        k_l,
        b,
        k_theta0,
        k_grad0,
        k_x,
        c_ts,
        c_gd,
        c_gd_signed,
        residual_range,
        out_of_theory: record.out_of_theory,
        provenance: vec![
            ("k_l".into(), loss_note.clone()),
            ("b".into(), loss_note),
            ("k_theta0".into(), sample_note.clone()),
            ("k_grad0".into(), sample_note.clone()),
            ("k_x".into(), sample_note),
            ("c_ts".into(), record_note.clone()),
            ("c_gd".into(), record_note),
        ],
    })
}

/// The assembled bound with every term kept separate.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub constants: ConstantSet,
    pub h_estimate: f64,
    pub h_stderr: f64,
    pub n: usize,
    pub delta: f64,
    /// Base of the `log` in the confidence term (`e` unless overridden).
    pub log_base: f64,
    pub c1: f64,
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub term4: f64,
    pub rhs: f64,
    pub observed_gap: Option<f64>,
    pub slack: Option<f64>,
    pub gap_bounded: Option<bool>,
    pub flags: Vec<String>,
}

/// Assembles the right-hand side with the natural logarithm.
pub fn assemble_bound(
    constants: &ConstantSet,
    h_estimate: f64,
    h_stderr: f64,
    n: usize,
    delta: f64,
) -> Result<BoundReport> {
    assemble_bound_with_log_base(constants, h_estimate, h_stderr, n, delta, std::f64::consts::E)
}

/// Assembles the right-hand side with an explicit logarithm base (sensitivity
/// switch; the default reading is natural).
pub fn assemble_bound_with_log_base(
    constants: &ConstantSet,
    h_estimate: f64,
    h_stderr: f64,
    n: usize,
    delta: f64,
    log_base: f64,
) -> Result<BoundReport> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid("delta must lie in (0, 1)"));
    }
    if n < 1 {
        return Err(Error::invalid("sample size must be >= 1"));
    }
    if !(log_base > 1.0) {
        return Err(Error::invalid("log base must exceed 1"));
    }
    let c = constants;
    let c1 = 2.0 * c.k_l * c.k_x * c.k_grad0 * c.c_ts * c.c_gd;
    let term1 = c.k_l * c.k_theta0;
    let term2 = c1 / (n as f64).sqrt();
    let term3 = c.k_l * h_estimate;
    let log_term = (4.0 / delta).ln() / log_base.ln();
    let term4 = c.b * (2.0 * log_term / n as f64).sqrt();
    let rhs = term1 + term2 + term3 + term4;
    let mut flags = Vec::new();
    if c.out_of_theory {
        flags.push("out-of-theory-optimizer".to_string());
    }
    if term1 >= term2 && term1 >= term3 && term1 >= term4 {
        flags.push("term1-dominant".to_string());
    }
    Ok(BoundReport {
        constants: constants.clone(),
        h_estimate,
        h_stderr,
        n,
        delta,
        log_base,
        c1,
        term1,
        term2,
        term3,
        term4,
        rhs,
        observed_gap: None,
        slack: None,
        gap_bounded: None,
        flags,
    })
}

/// Annotates a report with the observed empirical gap of `net` on one class:
/// mean test loss minus mean train loss of the `+/-1` view, and whether the
/// assembled right-hand side covers it.
pub fn bound_vs_gap(
    report: &mut BoundReport,
    net: &Network,
    train: &Dataset,
    test: &Dataset,
    out_idx: usize,
    loss: &dyn MarginLoss,
) -> Result<()> {
    let train_loss = class_mean_loss(net, train, out_idx, loss)?;
    let test_loss = class_mean_loss(net, test, out_idx, loss)?;
    let gap = test_loss - train_loss;
    report.observed_gap = Some(gap);
    report.slack = Some(report.rhs - gap);
    report.gap_bounded = Some(report.rhs >= gap);
    Ok(())
}

fn class_mean_loss(
    net: &Network,
    data: &Dataset,
    out_idx: usize,
    loss: &dyn MarginLoss,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let ys = data.binary_targets_for(out_idx)?;
    let mut sum = 0.0;
    for (x, &y) in data.inputs.iter().zip(ys.iter()) {
        sum += loss.value(net.forward_scalar(x, out_idx)? - y);
    }
    Ok(sum / data.len() as f64)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

impl BoundReport {
    /// Flat `key = value` text document; floats print in shortest
    /// round-trip form so a reload reproduces them bit-exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        kv("k_l", fmt(self.constants.k_l));
        kv("b", fmt(self.constants.b));
        kv("k_theta0", fmt(self.constants.k_theta0));
        kv("k_grad0", fmt(self.constants.k_grad0));
        kv("k_x", fmt(self.constants.k_x));
        kv("c_ts", fmt(self.constants.c_ts));
        kv("c_gd", fmt(self.constants.c_gd));
        kv("c_gd_signed", fmt(self.constants.c_gd_signed));
        kv("residual_range", fmt(self.constants.residual_range));
        kv(
            "out_of_theory",
            if self.constants.out_of_theory {
                "true".into()
            } else {
                "false".into()
            },
        );
        kv("h_estimate", fmt(self.h_estimate));
        kv("h_stderr", fmt(self.h_stderr));
        kv("n", self.n.to_string());
        kv("delta", fmt(self.delta));
        kv("log_base", fmt(self.log_base));
        kv("c1", fmt(self.c1));
        kv("term1", fmt(self.term1));
        kv("term2", fmt(self.term2));
        kv("term3", fmt(self.term3));
        kv("term4", fmt(self.term4));
        kv("rhs", fmt(self.rhs));
        if let Some(g) = self.observed_gap {
            kv("observed_gap", fmt(g));
        }
        if let Some(s) = self.slack {
            kv("slack", fmt(s));
        }
        if let Some(p) = self.gap_bounded {
            kv("gap_bounded", if p { "true".into() } else { "false".into() });
        }
        for f in &self.flags {
            kv("flag", f.clone());
        }
        for (name, note) in &self.constants.provenance {
            kv(&format!("provenance.{name}"), note.clone());
        }
        out
    }

    pub fn write_text(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    /// Parses the `key = value` document written by [`BoundReport::to_text`].
    pub fn from_text(text: &str) -> Result<BoundReport> {
        let mut map = std::collections::BTreeMap::new();
        let mut flags = Vec::new();
        let mut provenance = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::format(format!("bad report line: {line}")))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "flag" {
                flags.push(v.to_string());
            } else if let Some(name) = k.strip_prefix("provenance.") {
                provenance.push((name.to_string(), v.to_string()));
            } else {
                map.insert(k.to_string(), v.to_string());
            }
        }
        let get = |k: &str| -> Result<f64> {
            map.get(k)
                .ok_or_else(|| Error::format(format!("missing key {k}")))?
                .parse::<f64>()
                .map_err(|e| Error::format(format!("bad value for {k}: {e}")))
        };
        let get_opt = |k: &str| -> Result<Option<f64>> {
            map.get(k)
                .map(|v| {
                    v.parse::<f64>()
                        .map_err(|e| Error::format(format!("bad value for {k}: {e}")))
                })
                .transpose()
        };
        let constants = ConstantSet {
            k_l: get("k_l")?,
            b: get("b")?,
            k_theta0: get("k_theta0")?,
            k_grad0: get("k_grad0")?,
            k_x: get("k_x")?,
            c_ts: get("c_ts")?,
            c_gd: get("c_gd")?,
            c_gd_signed: get("c_gd_signed")?,
            residual_range: get("residual_range")?,
            out_of_theory: map.get("out_of_theory").map(|v| v == "true").unwrap_or(false),
            provenance,
        };
        Ok(BoundReport {
            constants,
            h_estimate: get("h_estimate")?,
            h_stderr: get("h_stderr")?,
            n: get("n")? as usize,
            delta: get("delta")?,
            log_base: get("log_base")?,
            c1: get("c1")?,
            term1: get("term1")?,
            term2: get("term2")?,
            term3: get("term3")?,
            term4: get("term4")?,
            rhs: get("rhs")?,
            observed_gap: get_opt("observed_gap")?,
            slack: get_opt("slack")?,
            gap_bounded: map.get("gap_bounded").map(|v| v == "true"),
            flags,
        })
    }

    pub fn read_text(path: &Path) -> Result<BoundReport> {
        BoundReport::from_text(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::grad::SquaredLoss;
    use crate::network::{Network, HE_SCALE};
    use crate::sensitivity::SensMethod;
    use crate::training::{train, Optimizer, Schedule, TrainOptions};

    fn ones() -> ConstantSet {
        ConstantSet::user_supplied(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    }

    #[test]
    fn assemble_reference_value() {
        // all constants 1, H = 0, N = 100, delta = 0.1:
        // rhs = 1 + 2/10 + 0 + sqrt(2 ln 40 / 100) = 1.47162...
        let report = assemble_bound(&ones(), 0.0, 0.0, 100, 0.1).unwrap();
        assert!((report.c1 - 2.0).abs() < 1e-15);
        assert!(
            (report.rhs - 1.47162).abs() < 1e-4,
            "rhs = {}",
            report.rhs
        );
        assert_eq!(
            report.rhs,
            report.term1 + report.term2 + report.term3 + report.term4
        );
    }

    #[test]
    fn zero_sensitivity_kills_term2() {
        let mut c = ones();
        c.c_ts = 0.0;
        let report = assemble_bound(&c, 0.0, 0.0, 100, 0.1).unwrap();
        assert_eq!(report.term2, 0.0);
    }

    #[test]
    fn quadrupling_n_halves_the_sqrt_terms() {
        let r1 = assemble_bound(&ones(), 0.5, 0.0, 100, 0.1).unwrap();
        let r4 = assemble_bound(&ones(), 0.5, 0.0, 400, 0.1).unwrap();
        assert!((r4.term2 - r1.term2 / 2.0).abs() < 1e-15);
        assert!((r4.term4 - r1.term4 / 2.0).abs() < 1e-15);
        assert_eq!(r4.term1, r1.term1);
        assert_eq!(r4.term3, r1.term3);
    }

    #[test]
    fn rhs_is_monotone_in_each_constant_and_antitone_in_n_delta() {
        let base = assemble_bound(&ones(), 0.5, 0.0, 100, 0.1).unwrap().rhs;
        let bump = 1.25;
        for field in 0..7 {
            let mut c = ones();
            match field {
                0 => c.k_l *= bump,
                1 => c.b *= bump,
                2 => c.k_theta0 *= bump,
                3 => c.k_grad0 *= bump,
                4 => c.k_x *= bump,
                5 => c.c_ts *= bump,
                _ => c.c_gd *= bump,
            }
            let rhs = assemble_bound(&c, 0.5, 0.0, 100, 0.1).unwrap().rhs;
            assert!(rhs >= base, "field {field}: {rhs} < {base}");
        }
        let h_up = assemble_bound(&ones(), 0.75, 0.0, 100, 0.1).unwrap().rhs;
        assert!(h_up >= base);
        let n_up = assemble_bound(&ones(), 0.5, 0.0, 200, 0.1).unwrap().rhs;
        assert!(n_up <= base);
        let delta_up = assemble_bound(&ones(), 0.5, 0.0, 100, 0.2).unwrap().rhs;
        assert!(delta_up <= base);
    }

    #[test]
    fn log_base_switch_changes_only_term4() {
        let natural = assemble_bound(&ones(), 0.0, 0.0, 100, 0.1).unwrap();
        let base10 =
            assemble_bound_with_log_base(&ones(), 0.0, 0.0, 100, 0.1, 10.0).unwrap();
        assert_eq!(natural.term1, base10.term1);
        assert_eq!(natural.term2, base10.term2);
        assert!(base10.term4 < natural.term4);
    }

    #[test]
    fn assemble_rejects_bad_delta() {
        assert!(assemble_bound(&ones(), 0.0, 0.0, 100, 0.0).is_err());
        assert!(assemble_bound(&ones(), 0.0, 0.0, 100, 1.0).is_err());
        assert!(assemble_bound(&ones(), 0.0, 0.0, 0, 0.5).is_err());
    }

    #[test]
    fn report_text_roundtrip_reproduces_rhs_bitwise() {
        let mut c = ones();
        c.k_l = 1.2345678901234567;
        c.c_ts = 987.6543210987654;
        let mut report = assemble_bound(&c, 1e-3, 1e-5, 537, 0.07).unwrap();
        report.observed_gap = Some(0.123456789);
        report.slack = Some(report.rhs - 0.123456789);
        report.gap_bounded = Some(true);
        let text = report.to_text();
        let back = BoundReport::from_text(&text).unwrap();
        assert_eq!(report, back);
        // re-assembling from the parsed constants reproduces rhs exactly
        let re = assemble_bound_with_log_base(
            &back.constants,
            back.h_estimate,
            back.h_stderr,
            back.n,
            back.delta,
            back.log_base,
        )
        .unwrap();
        assert_eq!(re.rhs.to_bits(), report.rhs.to_bits());
    }

    #[test]
    fn rademacher_singleton_family_centers_on_zero() {
        let mut rng = RngState::new(5);
        let row = rng.gaussian_vector(40, 0.0, 1.0);
        let values = Matrix::from_rows(&[row]).unwrap();
        let est = rademacher_mc(&values, 10_000, 11).unwrap();
        assert!(
            est.value.abs() <= 3.0 * est.stderr,
            "value {} stderr {}",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn rademacher_sign_pair_family_m1() {
        let values = Matrix::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let est = rademacher_mc(&values, 500, 3).unwrap();
        // sup picks the matching sign: always exactly 1
        assert_eq!(est.value, 1.0);
        assert_eq!(est.stderr, 0.0);
    }

    #[test]
    fn rademacher_duplicate_row_is_invariant() {
        let mut rng = RngState::new(8);
        let a = rng.gaussian_vector(25, 0.0, 1.0);
        let b = rng.gaussian_vector(25, 0.0, 1.0);
        let fam1 = Matrix::from_rows(&[a.clone(), b.clone()]).unwrap();
        let fam2 = Matrix::from_rows(&[a.clone(), b.clone(), a.clone()]).unwrap();
        let e1 = rademacher_mc(&fam1, 2000, 21).unwrap();
        let e2 = rademacher_mc(&fam2, 2000, 21).unwrap();
        assert_eq!(e1.value, e2.value);
    }

    #[test]
    fn rademacher_scales_linearly_under_shared_signs() {
        let mut rng = RngState::new(9);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| rng.gaussian_vector(30, 0.0, 1.0)).collect();
        let scaled: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|v| 3.0 * v).collect())
            .collect();
        let e1 = rademacher_mc(&Matrix::from_rows(&rows).unwrap(), 800, 77).unwrap();
        let e2 = rademacher_mc(&Matrix::from_rows(&scaled).unwrap(), 800, 77).unwrap();
        assert!((e2.value - 3.0 * e1.value).abs() < 1e-12);
    }

    #[test]
    fn rademacher_independent_replication_agrees() {
        let mut rng = RngState::new(10);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| rng.gaussian_vector(50, 0.0, 1.0)).collect();
        let values = Matrix::from_rows(&rows).unwrap();
        let e1 = rademacher_mc(&values, 20_000, 1).unwrap();
        let e2 = rademacher_mc(&values, 20_000, 2).unwrap();
        let joint = (e1.stderr * e1.stderr + e2.stderr * e2.stderr).sqrt();
        assert!(
            (e1.value - e2.value).abs() <= 3.0 * joint,
            "{} vs {} (joint stderr {joint})",
            e1.value,
            e2.value
        );
    }

    #[test]
    fn linear_class_degenerate_cases() {
        let zero = linear_class_bound_check(&vec![vec![0.0; 4]; 3], 1.0, 100, 5).unwrap();
        assert_eq!(zero.estimate, 0.0);
        assert_eq!(zero.bound, 0.0);
        assert!(zero.passes);

        // m = 1, unit vector, cap 1: Cauchy-Schwarz is tight
        let one = linear_class_bound_check(&[vec![1.0, 0.0]], 1.0, 64, 6).unwrap();
        assert!((one.estimate - 1.0).abs() < 1e-12);
        assert!((one.bound - 1.0).abs() < 1e-12);
        assert!(one.passes);
    }

    #[test]
    fn linear_class_random_instances_respect_bound() {
        let mut rng = RngState::new(12);
        for trial in 0..20 {
            let m = 2 + rng.index(60);
            let dim = 1 + rng.index(12);
            let vs: Vec<Vec<f64>> = (0..m).map(|_| rng.gaussian_vector(dim, 0.0, 1.0)).collect();
            let check = linear_class_bound_check(&vs, 2.0, 500, 1000 + trial).unwrap();
            assert!(
                check.passes,
                "trial {trial}: estimate {} > bound {}",
                check.estimate, check.bound
            );
        }
    }

    #[test]
    fn h_estimate_zero_for_untrained_singleton_and_linear_models() {
        let data = synth_blobs(10, 3, 2.0, 4).unwrap();
        let net0 = Network::init(&[3, 6, 1], true, 5, HE_SCALE).unwrap();
        let fam = vec![(net0.clone(), net0.clone())];
        let est = estimate_h(&fam, &data, 0, 2000, 7).unwrap();
        assert_eq!(est.rademacher.value, 0.0);
        assert_eq!(est.sup_abs_h, 0.0);

        // depth-1 models are linear in theta, so h vanishes identically
        let lin0 = Network::init(&[3, 1], true, 1, 1.0).unwrap();
        let mut lin1 = lin0.clone();
        lin1.apply_step(&vec![0.37; 3]).unwrap();
        let fam = vec![(lin0.clone(), lin1)];
        let est = estimate_h(&fam, &data, 0, 500, 9).unwrap();
        assert!(est.sup_abs_h < 1e-14, "sup |h| = {}", est.sup_abs_h);
    }

    #[test]
    fn h_estimate_rejects_mismatched_initializations() {
        let data = synth_blobs(5, 3, 2.0, 4).unwrap();
        let a = Network::init(&[3, 6, 1], true, 5, HE_SCALE).unwrap();
        let b = Network::init(&[3, 6, 1], true, 6, HE_SCALE).unwrap();
        assert!(estimate_h(&[(a.clone(), a.clone()), (b.clone(), b)], &data, 0, 10, 0).is_err());
    }

    #[test]
    fn estimate_constants_zero_net_and_kx() {
        let mut data = synth_blobs(6, 2, 2.0, 3).unwrap();
        // plant known max-norm inputs
        data.inputs[0] = vec![1.0, 0.0];
        data.inputs[1] = vec![0.0, 2.0];
        for x in data.inputs.iter_mut().skip(2) {
            for v in x.iter_mut() {
                *v = v.clamp(-0.5, 0.5);
            }
        }
        let net0 = Network::init(&[2, 4, 1], true, 0, 0.0).unwrap(); // zero weights
        let record = train(
            &net0,
            &data,
            None,
            &Schedule::constant(0.1, 0).unwrap(),
            &Optimizer::Gd,
            &TrainOptions::default(),
        )
        .unwrap();
        let consts = estimate_constants(&net0, &data, &record, &SquaredLoss, 0).unwrap();
        assert_eq!(consts.k_theta0, 0.0);
        assert_eq!(consts.k_grad0, 0.0);
        assert_eq!(consts.k_x, 2.0);
        // for the zero net f = 0 so |f - y| = 1 everywhere: M = 1.5, K_L = 3, B = 2.25
        assert!((consts.k_l - 3.0).abs() < 1e-12);
        assert!((consts.b - 2.25).abs() < 1e-12);
    }

    #[test]
    fn loss_constant_safety_factor_hand_case() {
        // squared loss with observed max |f - y| = 2:
        // K_L = 2 * (1.5 * 2) = 6, B = (1.5 * 2)^2 = 9
        let loss = SquaredLoss;
        let m = 1.5 * 2.0;
        assert_eq!(loss.lipschitz_on(m), 6.0);
        assert_eq!(loss.upper_bound_on(m), 9.0);
    }

    #[test]
    fn bound_vs_gap_annotates() {
        let data = synth_blobs(20, 3, 3.0, 8).unwrap();
        let net0 = Network::init(&[3, 8, 1], true, 3, HE_SCALE).unwrap();
        let record = train(
            &net0,
            &data,
            None,
            &Schedule::constant(0.02, 40).unwrap(),
            &Optimizer::Gd,
            &TrainOptions::default(),
        )
        .unwrap();
        let net_t = record.final_network().unwrap();
        let consts = estimate_constants(&net0, &data, &record, &SquaredLoss, 0).unwrap();
        let mut report = assemble_bound(&consts, 0.0, 0.0, data.len(), 0.1).unwrap();
        // identical train/test: gap is exactly zero and the bound holds
        bound_vs_gap(&mut report, &net_t, &data, &data, 0, &SquaredLoss).unwrap();
        assert_eq!(report.observed_gap, Some(0.0));
        assert_eq!(report.gap_bounded, Some(true));
        assert!(report.slack.unwrap() >= 0.0);
    }

    #[test]
    fn cts_tracking_feeds_constants() {
        let data = synth_blobs(10, 3, 2.0, 5).unwrap();
        let net0 = Network::init(&[3, 6, 1], true, 9, HE_SCALE).unwrap();
        let record = train(
            &net0,
            &data,
            None,
            &Schedule::constant(0.02, 10).unwrap(),
            &Optimizer::Gd,
            &TrainOptions {
                cts_method: Some(SensMethod::Layerwise),
                ..TrainOptions::default()
            },
        )
        .unwrap();
        let consts = estimate_constants(&net0, &data, &record, &SquaredLoss, 0).unwrap();
        assert!(consts.c_ts > 0.0);
        assert!(consts.c_gd > 0.0);
        assert!(consts.c_gd >= consts.c_gd_signed.abs());
    }
}
